//! Event-linked comparison of two labellings.
//!
//! Transition points of the reference are linked to nearby transition points
//! of the test labelling. Linked pairs are moved to their common midpoint in
//! both sequences, after which event agreement is read off the corrected
//! sequences and the remaining sample disagreements are reported as residual
//! runs.

use serde::{Deserialize, Serialize};

use super::{check_pair, Confusion, Stat};
use crate::error::{Error, Result};
use crate::model::{runs, Run, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElcConfig {
    /// Half-width of the search window when either side of the reference
    /// transition is a gaze shift.
    pub window_saccade_s: f64,
    pub window_other_s: f64,
    /// Count detached events on the diagonal instead of leaving them out.
    pub count_detached_as_match: bool,
}

impl Default for ElcConfig {
    fn default() -> Self {
        ElcConfig {
            window_saccade_s: 0.025,
            window_other_s: 0.035,
            count_detached_as_match: false,
        }
    }
}

impl ElcConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.window_saccade_s) || !ok(self.window_other_s) {
            return Err(Error::invalid("ELC windows must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Matched,
    Unmatched,
    /// Not linked at both ends, yet lying inside a same-category test event
    /// once boundaries are corrected.
    Detached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElcEvent {
    pub class: usize,
    pub name: String,
    pub start: usize,
    pub end: usize,
    pub corrected_start: usize,
    pub corrected_end: usize,
    pub status: EventStatus,
    /// Test transition linked to the onset, and to the offset.
    pub onset_match: Option<usize>,
    pub offset_match: Option<usize>,
    /// Euclidean onset/offset distance in milliseconds (matched events).
    pub l2_ms: Option<f64>,
    /// Intersection-over-union with same-category test samples inside the
    /// linked span (matched events).
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Residual {
    pub start: usize,
    pub end: usize,
    /// `"<reference>-<test>"` category names, `N` for unlabelled.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElcReport {
    pub classes: Vec<String>,
    pub events: Vec<ElcEvent>,
    /// `(reference, test)` transition positions moved to their midpoint.
    pub corrections: Vec<(usize, usize)>,
    pub confusion: Confusion,
    pub kappa: Option<f64>,
    pub class_kappa: Vec<Option<f64>>,
    pub class_f1: Vec<Option<f64>>,
    pub matched: usize,
    pub unmatched: usize,
    pub detached: usize,
    pub l2_ms: Option<Stat>,
    pub overlap: Option<Stat>,
    pub corrected_reference: Vec<Option<usize>>,
    pub corrected_test: Vec<Option<usize>>,
    pub residuals: Vec<Residual>,
}

impl ElcReport {
    /// Residual run counts per label, sorted by label.
    pub fn residual_counts(&self) -> Vec<(String, usize)> {
        let mut m = std::collections::BTreeMap::<&str, usize>::new();
        for r in &self.residuals {
            *m.entry(&r.label).or_default() += 1;
        }
        m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricElcReport {
    pub forward: ElcReport,
    pub backward: ElcReport,
    /// Mean of both directions.
    pub kappa: Option<f64>,
    /// `|κ_forward − κ_backward|`.
    pub asymmetry: Option<f64>,
}

/// A transition point. `None` on a side means outside the sequence.
#[derive(Debug, Clone, Copy)]
struct Point {
    idx: usize,
    left: Option<Option<usize>>,
    right: Option<Option<usize>>,
}

fn points(rs: &[Run<Option<usize>>], n: usize) -> Vec<Point> {
    (0..=rs.len())
        .map(|i| Point {
            idx: rs.get(i).map_or(n, |r| r.start),
            left: i.checked_sub(1).map(|j| rs[j].value),
            right: rs.get(i).map(|r| r.value),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
struct Link {
    onset: Option<usize>,
    offset: Option<usize>,
    pair: Option<usize>,
}

fn link(rp: &[Point], tp: &[Point], tax: &Taxonomy, rate: f64, cfg: &ElcConfig) -> Vec<Link> {
    let shift = |s: Option<Option<usize>>| matches!(s, Some(Some(c)) if tax.gaze_shift[c]);
    let mut claimed = vec![false; tp.len()];
    rp.iter()
        .map(|p| {
            let w = if shift(p.left) || shift(p.right) {
                cfg.window_saccade_s
            } else {
                cfg.window_other_s
            };
            let cand: Vec<usize> = (0..tp.len())
                .filter(|&j| !claimed[j] && (tp[j].idx.abs_diff(p.idx) as f64) / rate <= w + 1e-9)
                .collect();
            let offset = match p.left {
                Some(Some(l)) => cand.iter().copied().find(|&j| tp[j].left == Some(Some(l))),
                _ => None,
            };
            let onset = match p.right {
                Some(Some(r)) => cand.iter().copied().find(|&j| tp[j].right == Some(Some(r))),
                _ => None,
            };
            let mut pair: Option<usize> = None;
            for j in onset.into_iter().chain(offset) {
                claimed[j] = true;
                let d = tp[j].idx.abs_diff(p.idx);
                let better = match pair {
                    None => true,
                    Some(b) => {
                        let db = tp[b].idx.abs_diff(p.idx);
                        d < db || (d == db && tp[j].idx < tp[b].idx)
                    }
                };
                if better {
                    pair = Some(j);
                }
            }
            Link { onset, offset, pair }
        })
        .collect()
}

/// Re-tiles `orig` with moved boundaries. Samples that would turn unlabelled
/// keep their original category.
fn rebuild(rs: &[Run<Option<usize>>], pos: &[usize], orig: &[Option<usize>]) -> (Vec<Option<usize>>, Vec<usize>) {
    let n = orig.len();
    let mut b = pos.to_vec();
    b[0] = 0;
    *b.last_mut().unwrap() = n;
    for i in 1..b.len() {
        b[i] = b[i].clamp(b[i - 1], n);
    }
    let mut out = vec![None; n];
    for (i, r) in rs.iter().enumerate() {
        for v in &mut out[b[i]..b[i + 1]] {
            *v = r.value;
        }
    }
    for (o, &x) in out.iter_mut().zip(orig) {
        if o.is_none() {
            *o = x;
        }
    }
    (out, b)
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Event-linked comparison with `reference` as the reference labelling.
pub fn elc_match(
    reference: &[Option<usize>],
    test: &[Option<usize>],
    tax: &Taxonomy,
    rate_hz: f64,
    cfg: &ElcConfig,
) -> Result<ElcReport> {
    check_pair(reference, test, tax)?;
    cfg.validate()?;
    if reference.is_empty() {
        return Err(Error::invalid("empty label sequences"));
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(Error::invalid("sampling rate must be positive"));
    }
    let n = reference.len();
    let ms = 1000.0 / rate_hz;
    let rr = runs(reference);
    let tr = runs(test);
    let rp = points(&rr, n);
    let tp = points(&tr, n);
    let links = link(&rp, &tp, tax, rate_hz, cfg);

    let mut rpos: Vec<usize> = rp.iter().map(|p| p.idx).collect();
    let mut tpos: Vec<usize> = tp.iter().map(|p| p.idx).collect();
    let mut corrections = Vec::new();
    for (i, l) in links.iter().enumerate() {
        if let Some(j) = l.pair {
            let m = (rp[i].idx + tp[j].idx) / 2;
            if rp[i].idx != tp[j].idx {
                corrections.push((rp[i].idx, tp[j].idx));
            }
            rpos[i] = m;
            tpos[j] = m;
        }
    }
    let (cref, rb) = rebuild(&rr, &rpos, reference);
    let (ctest, _) = rebuild(&tr, &tpos, test);

    let test_runs: Vec<(usize, usize, usize)> = runs(&ctest)
        .into_iter()
        .filter_map(|r| r.value.map(|c| (c, r.start, r.end)))
        .collect();

    let mut events = Vec::new();
    for (i, r) in rr.iter().enumerate() {
        let Some(c) = r.value else { continue };
        let onset_match = links[i].onset;
        let offset_match = links[i + 1].offset;
        let (cs, ce) = (rb[i], rb[i + 1]);
        let (status, l2_ms, ov) = match (onset_match, offset_match) {
            (Some(a), Some(b)) => {
                let (qs, qe) = (tp[a].idx, tp[b].idx);
                let ds = qs as f64 - r.start as f64;
                let de = qe as f64 - r.end as f64;
                let lo = qs.min(qe);
                let hi = qs.max(qe);
                let test_in = test[lo..hi].iter().filter(|&&t| t == Some(c)).count();
                let inter = (r.start.max(lo)..r.end.min(hi)).filter(|&k| test[k] == Some(c)).count();
                let union = (r.end - r.start) + test_in - inter;
                let ov = if union > 0 { inter as f64 / union as f64 } else { 0.0 };
                (EventStatus::Matched, Some((ds * ds + de * de).sqrt() * ms), Some(ov))
            }
            _ => {
                let inside = ce > cs && ctest[cs..ce].iter().all(|&t| t == Some(c));
                let st = if inside {
                    EventStatus::Detached
                } else {
                    EventStatus::Unmatched
                };
                (st, None, None)
            }
        };
        events.push(ElcEvent {
            class: c,
            name: tax.names[c].clone(),
            start: r.start,
            end: r.end,
            corrected_start: cs,
            corrected_end: ce,
            status,
            onset_match: onset_match.map(|j| tp[j].idx),
            offset_match: offset_match.map(|j| tp[j].idx),
            l2_ms,
            overlap: ov,
        });
    }

    let mut conf = Confusion::new(tax.len());
    let mut used = vec![false; test_runs.len()];
    for e in &events {
        let span = (e.corrected_start, e.corrected_end);
        let counted = match e.status {
            EventStatus::Matched => true,
            EventStatus::Detached => cfg.count_detached_as_match,
            EventStatus::Unmatched => false,
        };
        if counted {
            conf.add(Some(e.class), Some(e.class));
            for (t, u) in test_runs.iter().zip(used.iter_mut()) {
                if t.0 == e.class && overlap(span, (t.1, t.2)) > 0 {
                    *u = true;
                }
            }
        }
    }
    for e in events.iter().filter(|e| e.status == EventStatus::Unmatched) {
        let span = (e.corrected_start, e.corrected_end);
        let mut best: Option<(usize, usize)> = None;
        for (j, t) in test_runs.iter().enumerate() {
            let o = overlap(span, (t.1, t.2));
            if !used[j] && t.0 != e.class && o > 0 && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        match best {
            Some((j, _)) => {
                used[j] = true;
                conf.add(Some(e.class), Some(test_runs[j].0));
            }
            None => conf.add(Some(e.class), None),
        }
    }
    for (t, _) in test_runs.iter().zip(&used).filter(|(_, u)| !**u) {
        let mut best: Option<(usize, usize)> = None;
        for (k, e) in events.iter().enumerate() {
            let o = overlap((e.corrected_start, e.corrected_end), (t.1, t.2));
            if o > 0 && best.is_none_or(|(_, b)| o > b) {
                best = Some((k, o));
            }
        }
        match best {
            Some((k, _)) if events[k].class == t.0 => {}
            Some((k, _)) => conf.add(Some(events[k].class), Some(t.0)),
            None => conf.add(None, Some(t.0)),
        }
    }

    let pairs: Vec<(Option<usize>, Option<usize>)> = cref.iter().copied().zip(ctest.iter().copied()).collect();
    let residuals = runs(&pairs)
        .into_iter()
        .filter(|r| {
            let (a, b) = r.value;
            a != b
        })
        .map(|r| Residual {
            start: r.start,
            end: r.end,
            label: format!("{}-{}", tax.name(r.value.0), tax.name(r.value.1)),
        })
        .collect();

    let count = |s: EventStatus| events.iter().filter(|e| e.status == s).count();
    let l2: Vec<f64> = events.iter().filter_map(|e| e.l2_ms).collect();
    let ov: Vec<f64> = events.iter().filter_map(|e| e.overlap).collect();
    Ok(ElcReport {
        classes: tax.names.clone(),
        matched: count(EventStatus::Matched),
        unmatched: count(EventStatus::Unmatched),
        detached: count(EventStatus::Detached),
        l2_ms: Stat::of(&l2),
        overlap: Stat::of(&ov),
        kappa: conf.kappa(),
        class_kappa: (0..tax.len()).map(|c| conf.class_kappa(c)).collect(),
        class_f1: (0..tax.len()).map(|c| conf.f1(c)).collect(),
        confusion: conf,
        events,
        corrections,
        corrected_reference: cref,
        corrected_test: ctest,
        residuals,
    })
}

/// Runs the comparison in both directions and averages the kappas.
pub fn elc_symmetric(
    a: &[Option<usize>],
    b: &[Option<usize>],
    tax: &Taxonomy,
    rate_hz: f64,
    cfg: &ElcConfig,
) -> Result<SymmetricElcReport> {
    let forward = elc_match(a, b, tax, rate_hz, cfg)?;
    let backward = elc_match(b, a, tax, rate_hz, cfg)?;
    let (kappa, asymmetry) = match (forward.kappa, backward.kappa) {
        (Some(f), Some(r)) => (Some((f + r) / 2.0), Some((f - r).abs())),
        (f, r) => (f.or(r), None),
    };
    Ok(SymmetricElcReport {
        forward,
        backward,
        kappa,
        asymmetry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::event_kappa_largest;
    use crate::model::View;
    use proptest::prelude::*;

    const F: Option<usize> = Some(0);
    const P: Option<usize> = Some(1);
    const S: Option<usize> = Some(2);
    const B: Option<usize> = Some(3);

    fn seq(parts: &[(Option<usize>, usize, usize)]) -> Vec<Option<usize>> {
        let mut out = Vec::new();
        for &(c, s, e) in parts {
            assert_eq!(out.len(), s);
            out.extend(std::iter::repeat_n(c, e - s));
        }
        out
    }

    fn linked_pair() -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        let a = seq(&[(F, 0, 60), (S, 60, 75), (F, 75, 180), (B, 180, 200), (S, 200, 215), (F, 215, 300)]);
        let b = seq(&[
            (F, 0, 62),
            (S, 62, 66),
            (P, 66, 77),
            (F, 77, 120),
            (S, 120, 126),
            (F, 126, 182),
            (B, 182, 213),
            (F, 213, 300),
        ]);
        (a, b)
    }

    fn statuses(r: &ElcReport) -> Vec<(String, EventStatus)> {
        r.events.iter().map(|e| (e.name.clone(), e.status)).collect()
    }

    #[test]
    fn linked_pair_forward() {
        let (a, b) = linked_pair();
        let tax = View::CollapsedWithBlink.taxonomy();
        let r = elc_match(&a, &b, &tax, 300.0, &ElcConfig::default()).unwrap();
        use EventStatus::*;
        let want = [("F", Matched), ("S", Unmatched), ("F", Matched), ("B", Detached), ("S", Unmatched), ("F", Matched)];
        let want: Vec<_> = want.iter().map(|(n, s)| (n.to_string(), *s)).collect();
        assert_eq!(statuses(&r), want);
        assert_eq!(r.corrections, vec![(60, 62), (75, 77), (180, 182), (215, 213)]);
        let f2 = &r.events[2];
        assert_eq!((f2.onset_match, f2.offset_match), (Some(77), Some(182)));
        assert!((f2.overlap.unwrap() - 97.0 / 107.0).abs() < 1e-12);
        assert!((f2.l2_ms.unwrap() - 8f64.sqrt() * 1000.0 / 300.0).abs() < 1e-9);
        let res: Vec<_> = r.residuals.iter().map(|x| (x.label.as_str(), x.start, x.end)).collect();
        assert_eq!(res, vec![("S-P", 66, 76), ("F-S", 120, 126), ("S-B", 200, 214)]);
        let c = &r.confusion.counts;
        assert_eq!((c[0][0], c[0][2], c[2][1], c[2][3]), (3, 1, 1, 1));
        assert_eq!(r.confusion.total(), 6);
    }

    #[test]
    fn linked_pair_backward() {
        let (a, b) = linked_pair();
        let tax = View::CollapsedWithBlink.taxonomy();
        let r = elc_match(&b, &a, &tax, 300.0, &ElcConfig::default()).unwrap();
        let matched: Vec<usize> = r
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.status == EventStatus::Matched)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(matched, vec![0, 7]);
        let sym = elc_symmetric(&a, &b, &tax, 300.0, &ElcConfig::default()).unwrap();
        assert!(sym.asymmetry.unwrap() >= 0.0);
    }

    #[test]
    fn largest_overlap_pairs_across_the_short_saccade() {
        let (a, b) = linked_pair();
        let tax = View::CollapsedWithBlink.taxonomy();
        let k = event_kappa_largest(&a, &b, &tax).unwrap();
        assert_eq!(k.matches[2].test, Some((0, 126, 182)));
    }

    #[test]
    fn detached_can_count_as_match() {
        let (a, b) = linked_pair();
        let tax = View::CollapsedWithBlink.taxonomy();
        let cfg = ElcConfig {
            count_detached_as_match: true,
            ..ElcConfig::default()
        };
        let r = elc_match(&a, &b, &tax, 300.0, &cfg).unwrap();
        assert_eq!(r.confusion.counts[3][3], 1);
        // the blink run is consumed by the detached blink, so S2 has no partner
        assert_eq!(r.confusion.counts[2][3], 0);
        assert_eq!(r.confusion.counts[2][4], 1);
    }

    #[test]
    fn shifted_copy_is_fully_linked() {
        let tax = View::Collapsed.taxonomy();
        let a = seq(&[(F, 0, 100), (S, 100, 115), (F, 115, 200), (P, 200, 260), (F, 260, 300)]);
        let b = seq(&[(F, 0, 103), (S, 103, 118), (F, 118, 203), (P, 203, 263), (F, 263, 300)]);
        let r = elc_match(&a, &b, &tax, 300.0, &ElcConfig::default()).unwrap();
        assert_eq!(r.matched, 5);
        assert_eq!(r.kappa, Some(1.0));
        assert!(r.residuals.is_empty());
        assert_eq!(r.corrected_reference, r.corrected_test);
        let s = r.events[1].l2_ms.unwrap();
        assert!((s - 18f64.sqrt() * 1000.0 / 300.0).abs() < 1e-9);
        assert!((s - 14.142).abs() < 1e-3);
    }

    #[test]
    fn unlabelled_never_grows() {
        let tax = View::Collapsed.taxonomy();
        let a = seq(&[(F, 0, 50), (None, 50, 60), (F, 60, 100)]);
        let b = seq(&[(F, 0, 54), (None, 54, 60), (F, 60, 100)]);
        let r = elc_match(&a, &b, &tax, 300.0, &ElcConfig::default()).unwrap();
        // the reference gap boundary moves to 52 but test stays labelled to 54
        assert!(r.corrected_test[..54].iter().all(|&c| c == F));
        assert_eq!(r.corrected_reference.iter().filter(|c| c.is_none()).count(), 8);
    }

    #[test]
    fn rejects_bad_input() {
        let tax = View::Collapsed.taxonomy();
        let cfg = ElcConfig::default();
        assert!(elc_match(&[], &[], &tax, 300.0, &cfg).is_err());
        assert!(elc_match(&[F], &[F, F], &tax, 300.0, &cfg).is_err());
        assert!(elc_match(&[F], &[F], &tax, 0.0, &cfg).is_err());
        let bad = ElcConfig {
            window_other_s: -1.0,
            ..cfg
        };
        assert!(elc_match(&[F], &[F], &tax, 300.0, &bad).is_err());
    }

    fn arb_seq() -> impl Strategy<Value = Vec<Option<usize>>> {
        prop::collection::vec((prop::option::weighted(0.9, 0usize..3), 1usize..40), 1..15)
            .prop_map(|parts| parts.into_iter().flat_map(|(c, n)| std::iter::repeat_n(c, n)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn self_comparison_is_perfect(a in arb_seq()) {
            let tax = View::Collapsed.taxonomy();
            let r = elc_match(&a, &a, &tax, 300.0, &ElcConfig::default()).unwrap();
            prop_assert_eq!(r.unmatched + r.detached, 0);
            prop_assert!(r.residuals.is_empty());
            prop_assert!(r.corrections.is_empty());
            if r.matched > 0 {
                prop_assert_eq!(r.kappa, Some(1.0));
            }
        }

        #[test]
        fn zero_window_links_only_coincident_transitions(a in arb_seq(), b in arb_seq()) {
            let n = a.len().min(b.len());
            let tax = View::Collapsed.taxonomy();
            let cfg = ElcConfig { window_saccade_s: 0.0, window_other_s: 0.0, ..ElcConfig::default() };
            let r = elc_match(&a[..n], &b[..n], &tax, 300.0, &cfg).unwrap();
            prop_assert!(r.corrections.is_empty());
            prop_assert_eq!(&r.corrected_reference[..], &a[..n]);
            prop_assert_eq!(&r.corrected_test[..], &b[..n]);
        }

        #[test]
        fn outputs_are_consistent(a in arb_seq(), b in arb_seq()) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            let tax = View::Collapsed.taxonomy();
            let r = elc_match(a, b, &tax, 300.0, &ElcConfig::default()).unwrap();
            prop_assert_eq!(r.matched + r.unmatched + r.detached, r.events.len());
            let rows: u64 = r.confusion.counts[..3].iter().flatten().sum();
            prop_assert!(rows as usize >= r.matched + r.unmatched);
            for (i, (&x, &y)) in a.iter().zip(&r.corrected_reference).enumerate() {
                prop_assert!(x.is_none() || y.is_some(), "sample {} lost its label", i);
            }
            for e in &r.events {
                if let Some(o) = e.overlap {
                    prop_assert!((0.0..=1.0).contains(&o));
                }
            }
        }
    }
}
