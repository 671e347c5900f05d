//! GRU sequence classifiers over the six velocity channels.
//!
//! Architecture per time step: `fc_layers` fully connected ReLU layers, then
//! `gru_layers` stacked GRU layers (one or two directions; a bidirectional
//! layer emits the concatenation `[forward, backward]`), then a linear
//! projection to three classes and a softmax. Gates follow the common
//! reset/update/new convention:
//!
//! ```text
//! r = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! All parameters live in one flat vector; [`Layout`] gives the offsets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{self, ModelKind};
use crate::error::{Error, Result};
use crate::forest::argmax;
use crate::model::{Class3, GazeClass, LabelSequence, NoneKind};
use crate::signal::VelocityTrace;

pub const CHANNELS: usize = 6;
const K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnnConfig {
    pub fc_layers: usize,
    pub fc_width: usize,
    pub gru_layers: usize,
    /// Hidden units per direction.
    pub hidden: usize,
    pub bidirectional: bool,
    pub epochs: usize,
    pub lr0: f64,
    /// Final learning rate as a fraction of `lr0`.
    pub lr_final_ratio: f64,
    /// When set, the learning rate only steps down after this many epochs
    /// without a new best training loss.
    pub plateau_patience: Option<usize>,
    /// Channels fed to the network; disabled channels are zeroed after
    /// normalization.
    pub channel_mask: [bool; CHANNELS],
    /// Split sequences into chunks of this many samples for training.
    pub chunk_len: Option<usize>,
    /// Sequences (or chunks) per parameter update; `None` uses all of them.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            fc_layers: 3,
            fc_width: 24,
            gru_layers: 3,
            hidden: 24,
            bidirectional: true,
            epochs: 1000,
            lr0: 0.01,
            lr_final_ratio: 0.01,
            plateau_patience: None,
            channel_mask: [true; CHANNELS],
            chunk_len: None,
            batch_size: None,
            seed: 0,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fc_layers == 0 || self.gru_layers == 0 || self.hidden == 0 || self.fc_width == 0 {
            return Err(Error::invalid("layer counts and widths must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr_final_ratio > 0.0 && self.lr_final_ratio <= 1.0) {
            return Err(Error::invalid("learning rate schedule must be positive and non-increasing"));
        }
        if self.chunk_len == Some(0) || self.batch_size == Some(0) {
            return Err(Error::invalid("chunk_len and batch_size must be positive"));
        }
        Ok(())
    }

    fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Identifies architecture and input channels (not the weights).
    pub fn schema_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"headfree-gru-v1");
        for v in [self.fc_layers, self.fc_width, self.gru_layers, self.hidden, self.directions()] {
            h.update((v as u64).to_le_bytes());
        }
        for &c in &self.channel_mask {
            h.update([u8::from(c)]);
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruDir {
    pub wi: usize,
    pub wh: usize,
    pub bi: usize,
    pub bh: usize,
    pub input: usize,
    pub hidden: usize,
}

/// Offsets of every weight block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub fc: Vec<Dense>,
    pub gru: Vec<Vec<GruDir>>,
    pub out: Dense,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &RnnConfig) -> Layout {
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let mut fc = Vec::new();
        let mut input = CHANNELS;
        for _ in 0..cfg.fc_layers {
            let w = take(cfg.fc_width * input);
            let b = take(cfg.fc_width);
            fc.push(Dense { w, b, input, output: cfg.fc_width });
            input = cfg.fc_width;
        }
        let h = cfg.hidden;
        let mut gru = Vec::new();
        for _ in 0..cfg.gru_layers {
            let dirs = (0..cfg.directions())
                .map(|_| GruDir {
                    wi: take(3 * h * input),
                    wh: take(3 * h * h),
                    bi: take(3 * h),
                    bh: take(3 * h),
                    input,
                    hidden: h,
                })
                .collect();
            gru.push(dirs);
            input = h * cfg.directions();
        }
        let out = Dense {
            w: take(K * input),
            b: take(K),
            input,
            output: K,
        };
        Layout { fc, gru, out, total: off }
    }
}

/// `out += W x` for a row-major `rows × x.len()` matrix.
fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ g`.
fn matvec_t_add(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if *gi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += gi * a;
            }
        }
    }
}

/// `dW += g ⊗ x`.
fn outer_add(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (gi, row) in g.iter().zip(dw.chunks_exact_mut(cols)) {
        if *gi != 0.0 {
            for (d, xv) in row.iter_mut().zip(x) {
                *d += gi * xv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one direction of one GRU layer over a sequence, indexed by
/// time (`t * hidden + j`).
#[derive(Debug, Clone, Default)]
struct DirTape {
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct Tape {
    /// `acts[0]` is the normalized input; `acts[l+1]` the output of FC layer `l`.
    acts: Vec<Vec<f64>>,
    gru_in: Vec<Vec<f64>>,
    dirs: Vec<Vec<DirTape>>,
    top: Vec<f64>,
    probs: Vec<[f64; K]>,
}

/// One labelled sequence for training; samples with zero weight do not enter
/// the loss but still drive the recurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnSequence {
    pub x: Vec<[f64; CHANNELS]>,
    pub labels: Vec<Option<Class3>>,
    pub weights: Vec<f64>,
}

impl RnnSequence {
    pub fn new(x: Vec<[f64; CHANNELS]>, labels: Vec<Option<Class3>>, weights: Vec<f64>) -> Result<Self> {
        if x.len() != labels.len() || x.len() != weights.len() {
            return Err(Error::invalid("sequence inputs, labels and weights differ in length"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("sample weights must be non-negative"));
        }
        Ok(RnnSequence { x, labels, weights })
    }

    /// Inputs from a trace; weight is the confidence of valid labelled samples.
    pub fn from_trace(trace: &VelocityTrace, labels: &[Option<Class3>]) -> Result<Self> {
        if labels.len() != trace.len() {
            return Err(Error::LengthMismatch {
                what: "labels vs trace",
                left: labels.len(),
                right: trace.len(),
            });
        }
        let x = (0..trace.len()).map(|i| trace.sample(i)).collect();
        let weights = (0..trace.len())
            .map(|i| {
                if trace.valid[i] && labels[i].is_some() {
                    trace.confidence[i]
                } else {
                    0.0
                }
            })
            .collect();
        RnnSequence::new(x, labels.to_vec(), weights)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn total_weight(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| l.is_some())
            .map(|(w, _)| w)
            .sum()
    }

    fn chunks(&self, len: usize) -> Vec<RnnSequence> {
        (0..self.len())
            .step_by(len)
            .map(|s| {
                let e = (s + len).min(self.len());
                RnnSequence {
                    x: self.x[s..e].to_vec(),
                    labels: self.labels[s..e].to_vec(),
                    weights: self.weights[s..e].to_vec(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub config: RnnConfig,
    pub params: Vec<f64>,
    pub norm_mean: [f64; CHANNELS],
    pub norm_std: [f64; CHANNELS],
}

impl RnnModel {
    /// Random initialization, uniform in ±sqrt(1/fan_in) per block.
    pub fn init(cfg: &RnnConfig) -> Result<RnnModel> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |start: usize, len: usize, fan_in: usize| {
            let a = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[start..start + len] {
                *p = rng.gen_range(-a..a);
            }
        };
        for d in &layout.fc {
            fill(d.w, d.input * d.output, d.input);
            fill(d.b, d.output, d.input);
        }
        for layer in &layout.gru {
            for g in layer {
                fill(g.wi, 3 * g.hidden * g.input, g.input);
                fill(g.wh, 3 * g.hidden * g.hidden, g.hidden);
                fill(g.bi, 3 * g.hidden, g.input);
                fill(g.bh, 3 * g.hidden, g.hidden);
            }
        }
        let o = layout.out;
        fill(o.w, o.input * o.output, o.input);
        fill(o.b, o.output, o.input);
        Ok(RnnModel {
            config: cfg.clone(),
            params,
            norm_mean: [0.0; CHANNELS],
            norm_std: [1.0; CHANNELS],
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    fn normalize(&self, x: &[[f64; CHANNELS]]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len() * CHANNELS);
        for row in x {
            for c in 0..CHANNELS {
                out.push(if self.config.channel_mask[c] {
                    (row[c] - self.norm_mean[c]) / self.norm_std[c]
                } else {
                    0.0
                });
            }
        }
        out
    }

    fn run(&self, layout: &Layout, p: &[f64], x: &[[f64; CHANNELS]]) -> Tape {
        let t_len = x.len();
        let mut tape = Tape::default();
        tape.acts.push(self.normalize(x));
        for d in &layout.fc {
            let prev = tape.acts.last().expect("input present");
            let mut a = vec![0.0; t_len * d.output];
            for t in 0..t_len {
                let out = &mut a[t * d.output..(t + 1) * d.output];
                out.copy_from_slice(&p[d.b..d.b + d.output]);
                matvec_add(&p[d.w..d.w + d.input * d.output], &prev[t * d.input..(t + 1) * d.input], out);
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            tape.acts.push(a);
        }
        let mut input = tape.acts.last().expect("fc output").clone();
        for layer in &layout.gru {
            let h = layer[0].hidden;
            let nd = layer.len();
            let mut output = vec![0.0; t_len * h * nd];
            let mut dir_tapes = Vec::with_capacity(nd);
            for (di, g) in layer.iter().enumerate() {
                let dt = gru_forward(g, p, &input, t_len, di == 1);
                for t in 0..t_len {
                    output[t * h * nd + di * h..t * h * nd + (di + 1) * h].copy_from_slice(&dt.h[t * h..(t + 1) * h]);
                }
                dir_tapes.push(dt);
            }
            tape.gru_in.push(std::mem::replace(&mut input, output));
            tape.dirs.push(dir_tapes);
        }
        let o = layout.out;
        tape.probs = (0..t_len)
            .map(|t| {
                let mut y = [0.0; K];
                y.copy_from_slice(&p[o.b..o.b + K]);
                matvec_add(&p[o.w..o.w + K * o.input], &input[t * o.input..(t + 1) * o.input], &mut y);
                softmax(y)
            })
            .collect();
        tape.top = input;
        tape
    }

    /// Class probabilities for every step of one sequence.
    pub fn forward(&self, x: &[[f64; CHANNELS]]) -> Vec<[f64; K]> {
        if x.is_empty() {
            return Vec::new();
        }
        self.run(&self.layout(), &self.params, x).probs
    }

    /// As [`Self::forward`] for rows of arbitrary width, which must be six.
    pub fn forward_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<[f64; K]>> {
        let x = rows
            .iter()
            .map(|r| {
                <[f64; CHANNELS]>::try_from(r.as_slice())
                    .map_err(|_| Error::invalid(format!("expected {CHANNELS} input channels, got {}", r.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.forward(&x))
    }

    /// Forward pass over a zero-padded batch. `mask[b][t]` is true on real
    /// samples, which must form a prefix; padded steps get no output.
    pub fn forward_padded(&self, batch: &[Vec<[f64; CHANNELS]>], mask: &[Vec<bool>]) -> Result<Vec<Vec<[f64; K]>>> {
        if batch.len() != mask.len() {
            return Err(Error::invalid("batch and mask sizes differ"));
        }
        batch
            .iter()
            .zip(mask)
            .map(|(x, m)| {
                if x.len() != m.len() {
                    return Err(Error::invalid("sequence and mask lengths differ"));
                }
                let len = m.iter().take_while(|&&v| v).count();
                if m[len..].iter().any(|&v| v) {
                    return Err(Error::invalid("padding mask must mark a prefix"));
                }
                Ok(self.forward(&x[..len]))
            })
            .collect()
    }

    /// Mean confidence-weighted cross-entropy over the batch and its gradient.
    pub fn loss_and_gradient(&self, batch: &[RnnSequence]) -> Result<(f64, Vec<f64>)> {
        self.loss_grad_with(&self.params, batch)
    }

    pub fn loss(&self, batch: &[RnnSequence]) -> Result<f64> {
        let total: f64 = batch.iter().map(RnnSequence::total_weight).sum();
        if !(total > 0.0) {
            return Err(Error::invalid("batch has no weighted labelled samples"));
        }
        let layout = self.layout();
        let sum: f64 = batch
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| {
                let tape = self.run(&layout, &self.params, &s.x);
                seq_loss(&tape, s)
            })
            .sum();
        Ok(sum / total)
    }

    fn loss_grad_with(&self, params: &[f64], batch: &[RnnSequence]) -> Result<(f64, Vec<f64>)> {
        let total: f64 = batch.iter().map(RnnSequence::total_weight).sum();
        if !(total > 0.0) {
            return Err(Error::invalid("batch has no weighted labelled samples"));
        }
        let layout = self.layout();
        let parts: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .filter(|s| !s.is_empty() && s.total_weight() > 0.0)
            .map(|s| {
                let tape = self.run(&layout, params, &s.x);
                let loss = seq_loss(&tape, s);
                let mut g = vec![0.0; layout.total];
                backward(&layout, params, &tape, s, 1.0 / total, &mut g);
                (loss, g)
            })
            .collect();
        // reduce in batch order so results do not depend on scheduling
        let mut grad = vec![0.0; layout.total];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss / total, grad))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(ModelKind::Rnn, self.config.schema_hash(), self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, model): (_, RnnModel) = container::decode(ModelKind::Rnn, bytes)?;
        if header.schema != model.config.schema_hash() || model.params.len() != Layout::new(&model.config).total {
            return Err(Error::SchemaMismatch {
                expected: model.config.schema_hash(),
                got: header.schema,
            });
        }
        Ok(model)
    }
}

fn softmax(y: [f64; K]) -> [f64; K] {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = y.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn seq_loss(tape: &Tape, s: &RnnSequence) -> f64 {
    tape.probs
        .iter()
        .zip(&s.labels)
        .zip(&s.weights)
        .filter_map(|((p, l), w)| l.map(|c| -w * p[c.index()].max(1e-300).ln()))
        .sum()
}

fn gru_forward(g: &GruDir, p: &[f64], input: &[f64], t_len: usize, reverse: bool) -> DirTape {
    let h = g.hidden;
    let mut tape = DirTape {
        h: vec![0.0; t_len * h],
        r: vec![0.0; t_len * h],
        z: vec![0.0; t_len * h],
        n: vec![0.0; t_len * h],
        hn: vec![0.0; t_len * h],
    };
    let wi = &p[g.wi..g.wi + 3 * h * g.input];
    let wh = &p[g.wh..g.wh + 3 * h * h];
    let bi = &p[g.bi..g.bi + 3 * h];
    let bh = &p[g.bh..g.bh + 3 * h];
    let mut gi = vec![0.0; 3 * h];
    let mut gh = vec![0.0; 3 * h];
    let mut prev = vec![0.0; h];
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        gi.copy_from_slice(bi);
        matvec_add(wi, &input[t * g.input..(t + 1) * g.input], &mut gi);
        gh.copy_from_slice(bh);
        matvec_add(wh, &prev, &mut gh);
        let base = t * h;
        for j in 0..h {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[h + j] + gh[h + j]);
            let hn = gh[2 * h + j];
            let n = (gi[2 * h + j] + r * hn).tanh();
            let hv = (1.0 - z) * n + z * prev[j];
            tape.r[base + j] = r;
            tape.z[base + j] = z;
            tape.n[base + j] = n;
            tape.hn[base + j] = hn;
            tape.h[base + j] = hv;
        }
        prev.copy_from_slice(&tape.h[base..base + h]);
    }
    tape
}

fn backward(layout: &Layout, p: &[f64], tape: &Tape, s: &RnnSequence, scale: f64, grad: &mut [f64]) {
    let t_len = s.len();
    let o = layout.out;
    // gradient w.r.t. the top GRU output
    let mut d_top = vec![0.0; t_len * o.input];
    for t in 0..t_len {
        let Some(c) = s.labels[t] else { continue };
        let w = s.weights[t] * scale;
        if w == 0.0 {
            continue;
        }
        let mut dy = tape.probs[t].map(|v| v * w);
        dy[c.index()] -= w;
        let x = &tape.top[t * o.input..(t + 1) * o.input];
        outer_add(&mut grad[o.w..o.w + K * o.input], &dy, x);
        for k in 0..K {
            grad[o.b + k] += dy[k];
        }
        matvec_t_add(&p[o.w..o.w + K * o.input], &dy, &mut d_top[t * o.input..(t + 1) * o.input]);
    }

    let mut d_out = d_top;
    for (li, layer) in layout.gru.iter().enumerate().rev() {
        let input = &tape.gru_in[li];
        let in_dim = layer[0].input;
        let h = layer[0].hidden;
        let nd = layer.len();
        let mut d_in = vec![0.0; t_len * in_dim];
        for (di, g) in layer.iter().enumerate() {
            let dt = &tape.dirs[li][di];
            let d_h: Vec<f64> = (0..t_len)
                .flat_map(|t| d_out[t * h * nd + di * h..t * h * nd + (di + 1) * h].iter().copied())
                .collect();
            gru_backward(g, p, input, dt, &d_h, t_len, di == 1, grad, &mut d_in);
        }
        d_out = d_in;
    }

    for (li, d) in layout.fc.iter().enumerate().rev() {
        let a_in = &tape.acts[li];
        let a_out = &tape.acts[li + 1];
        let mut d_prev = vec![0.0; t_len * d.input];
        let mut dpre = vec![0.0; d.output];
        for t in 0..t_len {
            for j in 0..d.output {
                let idx = t * d.output + j;
                dpre[j] = if a_out[idx] > 0.0 { d_out[idx] } else { 0.0 };
            }
            let x = &a_in[t * d.input..(t + 1) * d.input];
            outer_add(&mut grad[d.w..d.w + d.input * d.output], &dpre, x);
            for j in 0..d.output {
                grad[d.b + j] += dpre[j];
            }
            if li > 0 {
                matvec_t_add(&p[d.w..d.w + d.input * d.output], &dpre, &mut d_prev[t * d.input..(t + 1) * d.input]);
            }
        }
        d_out = d_prev;
    }
}

#[allow(clippy::too_many_arguments)]
fn gru_backward(
    g: &GruDir,
    p: &[f64],
    input: &[f64],
    tape: &DirTape,
    d_h: &[f64],
    t_len: usize,
    reverse: bool,
    grad: &mut [f64],
    d_in: &mut [f64],
) {
    let h = g.hidden;
    let wi = &p[g.wi..g.wi + 3 * h * g.input];
    let wh = &p[g.wh..g.wh + 3 * h * h];
    let zeros = vec![0.0; h];
    let mut carry = vec![0.0; h];
    let mut da_i = vec![0.0; 3 * h];
    let mut da_h = vec![0.0; 3 * h];
    // processing order is reversed for backprop
    for step in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - step } else { step };
        let prev: &[f64] = if step == 0 {
            &zeros
        } else {
            let tp = if reverse { t + 1 } else { t - 1 };
            &tape.h[tp * h..(tp + 1) * h]
        };
        let base = t * h;
        let mut d_prev = vec![0.0; h];
        for j in 0..h {
            let dh = d_h[base + j] + carry[j];
            let (r, z, n, hn) = (tape.r[base + j], tape.z[base + j], tape.n[base + j], tape.hn[base + j]);
            let dn = dh * (1.0 - z);
            let dz = dh * (prev[j] - n);
            d_prev[j] = dh * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * hn;
            let dar = dr * r * (1.0 - r);
            let daz = dz * z * (1.0 - z);
            da_i[j] = dar;
            da_i[h + j] = daz;
            da_i[2 * h + j] = dan;
            da_h[j] = dar;
            da_h[h + j] = daz;
            da_h[2 * h + j] = dan * r;
        }
        let x = &input[t * g.input..(t + 1) * g.input];
        outer_add(&mut grad[g.wi..g.wi + 3 * h * g.input], &da_i, x);
        outer_add(&mut grad[g.wh..g.wh + 3 * h * h], &da_h, prev);
        for k in 0..3 * h {
            grad[g.bi + k] += da_i[k];
            grad[g.bh + k] += da_h[k];
        }
        matvec_t_add(wi, &da_i, &mut d_in[t * g.input..(t + 1) * g.input]);
        matvec_t_add(wh, &da_h, &mut d_prev);
        carry = d_prev;
    }
}

/// Per-channel mean and standard deviation over every sample of the corpus.
fn channel_stats(corpus: &[RnnSequence]) -> ([f64; CHANNELS], [f64; CHANNELS]) {
    let mut sum = [0.0; CHANNELS];
    let mut sq = [0.0; CHANNELS];
    let mut n = 0.0f64;
    for s in corpus {
        for row in &s.x {
            for c in 0..CHANNELS {
                sum[c] += row[c];
                sq[c] += row[c] * row[c];
            }
            n += 1.0;
        }
    }
    let mean = sum.map(|v| v / n.max(1.0));
    let mut std = [1.0; CHANNELS];
    for c in 0..CHANNELS {
        let var = sq[c] / n.max(1.0) - mean[c] * mean[c];
        if var > 1e-12 {
            std[c] = var.sqrt();
        }
    }
    (mean, std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch (over its mini-batches).
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Train with Adam. The learning rate falls linearly from `lr0` to
/// `lr0 * lr_final_ratio` over the epochs (or over plateau steps when
/// `plateau_patience` is set).
pub fn train_rnn(corpus: &[RnnSequence], cfg: &RnnConfig) -> Result<(RnnModel, TrainReport)> {
    cfg.validate()?;
    if corpus.iter().all(|s| s.total_weight() <= 0.0) {
        return Err(Error::invalid("corpus holds no labelled samples"));
    }
    let mut model = RnnModel::init(cfg)?;
    let (mean, std) = channel_stats(corpus);
    model.norm_mean = mean;
    model.norm_std = std;

    let mut units: Vec<RnnSequence> = match cfg.chunk_len {
        Some(len) => corpus.iter().flat_map(|s| s.chunks(len)).collect(),
        None => corpus.to_vec(),
    };
    units.retain(|u| u.total_weight() > 0.0);
    let batch = cfg.batch_size.unwrap_or(units.len()).min(units.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut adam = Adam::new(model.params.len());
    let lr_end = cfg.lr0 * cfg.lr_final_ratio;
    let steps = cfg.epochs.saturating_sub(1).max(1) as f64;
    let mut level = 0usize;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut report = TrainReport {
        losses: Vec::with_capacity(cfg.epochs),
        learning_rates: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let progress = match cfg.plateau_patience {
            None => epoch as f64,
            Some(_) => level as f64,
        };
        let lr = cfg.lr0 + (lr_end - cfg.lr0) * (progress / steps).min(1.0);
        if batch < units.len() {
            units.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in units.chunks(batch) {
            let (loss, grad) = model.loss_grad_with(&model.params, chunk)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            adam.step(&mut model.params, &grad, lr);
            epoch_loss += loss;
            batches += 1.0;
        }
        let epoch_loss = epoch_loss / batches;
        report.losses.push(epoch_loss);
        report.learning_rates.push(lr);
        if let Some(patience) = cfg.plateau_patience {
            if epoch_loss < best {
                best = epoch_loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    level += 1;
                    since_best = 0;
                }
            }
        }
    }
    Ok((model, report))
}

/// Label a trace sample-by-sample; invalid samples become None.
pub fn classify_rnn(model: &RnnModel, trace: &VelocityTrace) -> Result<LabelSequence> {
    let x: Vec<[f64; CHANNELS]> = (0..trace.len()).map(|i| trace.sample(i)).collect();
    let probs = model.forward(&x);
    let mut labels = Vec::with_capacity(x.len());
    let mut kinds = Vec::with_capacity(x.len());
    for (p, &valid) in probs.iter().zip(&trace.valid) {
        if valid {
            labels.push(argmax(p).to_gaze());
            kinds.push(NoneKind::Uncoded);
        } else {
            labels.push(GazeClass::None);
            kinds.push(NoneKind::LowConfidence);
        }
    }
    LabelSequence::with_none_kind(labels, kinds)
}
