//! Random-forest classifier over windowed feature vectors.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, ModelKind};
use crate::error::{Error, Result};
use crate::features::{feature_matrix, Directions, FeatureConfig, FeatureMatrix, TrainingRow};
use crate::model::{Class3, GazeClass, LabelSequence, NoneKind};
use crate::signal::VelocityTrace;

const K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    /// One random subset drawn per tree and used at every split of it.
    PerTree,
    /// A fresh subset at every split.
    PerSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Minimum training weight per leaf.
    pub min_leaf: f64,
    /// Defaults to `floor(sqrt(g))`.
    pub features_per_split: Option<usize>,
    pub subset: FeatureSubset,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 40,
            min_leaf: 15.0,
            features_per_split: None,
            subset: FeatureSubset::PerTree,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn resolved_features(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| ((dim as f64).sqrt().floor() as usize).max(1))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if !(self.min_leaf >= 1.0) {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        let f = self.resolved_features(dim);
        if f == 0 || f > dim {
            return Err(Error::invalid(format!("features_per_split {f} outside 1..={dim}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        dist: [f64; K],
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Samples go left when `x[feature] <= threshold`.
    pub fn leaf(&self, x: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                leaf => return leaf,
            }
        }
    }

    fn predict(&self, x: &[f64]) -> [f64; K] {
        match self.leaf(x) {
            Node::Leaf { dist, .. } => *dist,
            Node::Split { .. } => unreachable!("leaf() returns leaves"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub features: FeatureConfig,
    pub schema: u64,
}

struct Columns {
    n: usize,
    cols: Vec<Vec<f64>>,
    /// Row ids sorted ascending by each column, ties by row id.
    order: Vec<Vec<u32>>,
}

fn canonical_order(rows: &[TrainingRow]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        ra.features
            .iter()
            .zip(&rb.features)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ra.label.cmp(&rb.label))
            .then(ra.weight.total_cmp(&rb.weight))
    });
    idx
}

struct Grower<'a> {
    data: &'a Columns,
    y: &'a [u8],
    w: Vec<f64>,
    cfg: &'a ForestConfig,
    mtry: usize,
    /// Features this tree may split on; sorted arrays exist for each.
    usable: Vec<usize>,
    sorted: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    rng: ChaCha8Rng,
}

struct Best {
    slot: usize,
    pos: usize,
    threshold: f64,
    gain: f64,
}

fn gini_sum(c: &[f64; K], total: f64) -> f64 {
    // total weight times impurity
    if total <= 0.0 {
        return 0.0;
    }
    total - c.iter().map(|v| v * v).sum::<f64>() / total
}

impl Grower<'_> {
    fn counts(&self, ids: &[u32]) -> ([f64; K], f64) {
        let mut c = [0.0; K];
        for &i in ids {
            c[self.y[i as usize] as usize] += self.w[i as usize];
        }
        let t = c.iter().sum();
        (c, t)
    }

    fn best_split(&mut self, lo: usize, hi: usize, parent: &[f64; K], total: f64) -> Option<Best> {
        let candidates: Vec<usize> = match self.cfg.subset {
            FeatureSubset::PerTree => (0..self.usable.len()).collect(),
            FeatureSubset::PerSplit => {
                let mut v = sample_indices(&mut self.rng, self.usable.len(), self.mtry).into_vec();
                v.sort_unstable();
                v
            }
        };
        let parent_imp = gini_sum(parent, total);
        let mut best: Option<Best> = None;
        for slot in candidates {
            let col = &self.data.cols[self.usable[slot]];
            let ids = &self.sorted[slot][lo..hi];
            let mut left = [0.0; K];
            let mut wl = 0.0;
            for p in 0..ids.len() - 1 {
                let i = ids[p] as usize;
                left[self.y[i] as usize] += self.w[i];
                wl += self.w[i];
                let (a, b) = (col[i], col[ids[p + 1] as usize]);
                if a == b {
                    continue;
                }
                let wr = total - wl;
                if wl < self.cfg.min_leaf {
                    continue;
                }
                if wr < self.cfg.min_leaf {
                    break;
                }
                let right = [parent[0] - left[0], parent[1] - left[1], parent[2] - left[2]];
                let gain = parent_imp - gini_sum(&left, wl) - gini_sum(&right, wr);
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = 0.5 * (a + b);
                    best = Some(Best {
                        slot,
                        pos: p + 1,
                        threshold: if mid < b { mid } else { a },
                        gain,
                    });
                }
            }
        }
        best
    }

    fn partition(&mut self, lo: usize, hi: usize, best: &Best) {
        for &i in &self.sorted[best.slot][lo..lo + best.pos] {
            self.goes_left[i as usize] = true;
        }
        for &i in &self.sorted[best.slot][lo + best.pos..hi] {
            self.goes_left[i as usize] = false;
        }
        for arr in self.sorted.iter_mut() {
            self.scratch.clear();
            let mut k = lo;
            for j in lo..hi {
                let id = arr[j];
                if self.goes_left[id as usize] {
                    arr[k] = id;
                    k += 1;
                } else {
                    self.scratch.push(id);
                }
            }
            arr[k..hi].copy_from_slice(&self.scratch);
        }
    }

    fn grow(mut self) -> Tree {
        let n = self.sorted[0].len();
        let mut nodes: Vec<Node> = vec![Node::Leaf {
            dist: [0.0; K],
            weight: 0.0,
        }];
        let mut stack = vec![(0usize, 0usize, n)];
        while let Some((node, lo, hi)) = stack.pop() {
            let (c, total) = self.counts(&self.sorted[0][lo..hi]);
            let pure = c.iter().filter(|&&v| v > 0.0).count() <= 1;
            let split = if pure || total < 2.0 * self.cfg.min_leaf || hi - lo < 2 {
                None
            } else {
                self.best_split(lo, hi, &c, total)
            };
            match split {
                None => {
                    nodes[node] = Node::Leaf {
                        dist: c.map(|v| v / total),
                        weight: total,
                    };
                }
                Some(best) => {
                    self.partition(lo, hi, &best);
                    let l = nodes.len();
                    nodes.push(Node::Leaf { dist: [0.0; K], weight: 0.0 });
                    nodes.push(Node::Leaf { dist: [0.0; K], weight: 0.0 });
                    nodes[node] = Node::Split {
                        feature: self.usable[best.slot] as u32,
                        threshold: best.threshold,
                        left: l as u32,
                        right: (l + 1) as u32,
                    };
                    let mid = lo + best.pos;
                    stack.push((l + 1, mid, hi));
                    stack.push((l, lo, mid));
                }
            }
        }
        Tree { nodes }
    }
}

fn train_tree(data: &Columns, y: &[u8], base_w: &[f64], cfg: &ForestConfig, tree: usize) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(tree as u64);
    let n = data.n;
    let mut count = vec![0u32; n];
    if cfg.bootstrap {
        for _ in 0..n {
            count[rng.gen_range(0..n)] += 1;
        }
    } else {
        count.fill(1);
    }
    let w: Vec<f64> = base_w.iter().zip(&count).map(|(w, &c)| w * c as f64).collect();
    let dim = data.cols.len();
    let mtry = cfg.resolved_features(dim);
    let usable: Vec<usize> = match cfg.subset {
        FeatureSubset::PerTree => {
            let mut v = sample_indices(&mut rng, dim, mtry).into_vec();
            v.sort_unstable();
            v
        }
        FeatureSubset::PerSplit => (0..dim).collect(),
    };
    let sorted: Vec<Vec<u32>> = usable
        .iter()
        .map(|&f| data.order[f].iter().copied().filter(|&i| count[i as usize] > 0).collect())
        .collect();
    Grower {
        data,
        y,
        w,
        cfg,
        mtry,
        usable,
        sorted,
        goes_left: vec![false; n],
        scratch: Vec::new(),
        rng,
    }
    .grow()
}

/// Fit a forest on weighted rows. Rows are brought into a canonical order
/// first, so the result depends only on the multiset of rows and the seed.
pub fn train_forest(rows: &[TrainingRow], features: &FeatureConfig, cfg: &ForestConfig) -> Result<ForestModel> {
    if rows.is_empty() {
        return Err(Error::invalid("no training rows"));
    }
    let dim = features.dim();
    if let Some(r) = rows.iter().find(|r| r.features.len() != dim) {
        return Err(Error::LengthMismatch {
            what: "row features vs schema dimension",
            left: r.features.len(),
            right: dim,
        });
    }
    if rows.iter().any(|r| !(r.weight > 0.0) || r.features.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("row weights must be positive and features finite"));
    }
    if rows.iter().all(|r| r.label == rows[0].label) {
        return Err(Error::invalid("training data holds a single class"));
    }
    cfg.validate(dim)?;
    let order = canonical_order(rows);
    let n = rows.len();
    let y: Vec<u8> = order.iter().map(|&i| rows[i].label.index() as u8).collect();
    let w: Vec<f64> = order.iter().map(|&i| rows[i].weight).collect();
    let cols: Vec<Vec<f64>> = (0..dim).map(|f| order.iter().map(|&i| rows[i].features[f]).collect()).collect();
    let sorted: Vec<Vec<u32>> = cols
        .par_iter()
        .map(|c| {
            let mut ids: Vec<u32> = (0..n as u32).collect();
            ids.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
            ids
        })
        .collect();
    let data = Columns { n, cols, order: sorted };
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| train_tree(&data, &y, &w, cfg, t))
        .collect();
    Ok(ForestModel {
        trees,
        config: cfg.clone(),
        features: features.clone(),
        schema: features.schema_hash(),
    })
}

impl ForestModel {
    /// Mean of the tree leaf distributions.
    pub fn predict_proba(&self, x: &[f64]) -> [f64; K] {
        let mut acc = [0.0; K];
        for t in &self.trees {
            let d = t.predict(x);
            for k in 0..K {
                acc[k] += d[k];
            }
        }
        acc.map(|v| v / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &[f64]) -> Class3 {
        argmax(&self.predict_proba(x))
    }

    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<Class3>> {
        if m.schema != self.schema {
            return Err(Error::SchemaMismatch {
                expected: self.schema,
                got: m.schema,
            });
        }
        Ok((0..m.rows()).into_par_iter().map(|r| self.predict(m.row(r))).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(ModelKind::Forest, self.schema, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, model): (_, ForestModel) = container::decode(ModelKind::Forest, bytes)?;
        if header.schema != model.schema || model.features.schema_hash() != model.schema {
            return Err(Error::SchemaMismatch {
                expected: model.features.schema_hash(),
                got: header.schema,
            });
        }
        Ok(model)
    }

    /// Hex digest of the serialized model.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(container::fingerprint(&self.to_bytes()?))
    }
}

pub(crate) fn argmax(p: &[f64; K]) -> Class3 {
    let mut best = 0;
    for k in 1..K {
        if p[k] > p[best] {
            best = k;
        }
    }
    Class3::from_index(best).expect("index below 3")
}

/// Label every sample of a trace; samples flagged invalid stay None.
pub fn classify_rf(model: &ForestModel, trace: &VelocityTrace, dirs: &Directions) -> Result<LabelSequence> {
    let m = feature_matrix(trace, dirs, &model.features)?;
    let pred = model.predict_matrix(&m)?;
    let mut labels = Vec::with_capacity(pred.len());
    let mut kinds = Vec::with_capacity(pred.len());
    for (p, &valid) in pred.into_iter().zip(&trace.valid) {
        if valid {
            labels.push(p.to_gaze());
            kinds.push(NoneKind::Uncoded);
        } else {
            labels.push(GazeClass::None);
            kinds.push(NoneKind::LowConfidence);
        }
    }
    LabelSequence::with_none_kind(labels, kinds)
}
