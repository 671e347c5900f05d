//! Synthetic labelled eye and head recordings.
//!
//! A recording is a schedule of gaze-holding segments (stationary fixation,
//! fixation during head rotation, fixation on a translating target, pursuit)
//! joined by saccades or blinks. Kinematics are simulated in the world frame
//! and the eye-in-head direction is derived from the head pose, so labels are
//! exact by construction.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GazeClass, GazeSample, LabelSequence, NoneKind, Recording};

/// Relative frequency of each gaze-holding segment type, by count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventMix {
    pub fixation: f64,
    pub vor: f64,
    pub translation: f64,
    pub pursuit: f64,
}

impl Default for EventMix {
    fn default() -> Self {
        EventMix {
            fixation: 0.3,
            vor: 0.3,
            translation: 0.15,
            pursuit: 0.25,
        }
    }
}

/// How a pursuit is split between eye and head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PursuitMode {
    /// Head still, the eye tracks alone.
    Eye,
    /// The head tracks, the eye stays put in the head.
    Head,
    /// Head carries a fixed fraction of the target speed.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PursuitModes {
    pub eye: f64,
    pub head: f64,
    pub shared: f64,
}

impl Default for PursuitModes {
    fn default() -> Self {
        PursuitModes {
            eye: 1.0 / 3.0,
            head: 1.0 / 3.0,
            shared: 1.0 / 3.0,
        }
    }
}

/// Ranges are `[min, max]` and drawn uniformly. Durations in seconds,
/// speeds in °/s, angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    pub rate_hz: f64,
    pub seed: u64,
    pub mix: EventMix,
    pub fixation_s: [f64; 2],
    pub pursuit_s: [f64; 2],
    pub saccade_s: [f64; 2],
    pub saccade_peak_deg_s: [f64; 2],
    pub vor_gain: f64,
    /// Per-segment gain is drawn from `vor_gain ± vor_gain_jitter`.
    pub vor_gain_jitter: f64,
    pub vor_head_deg_s: [f64; 2],
    pub pursuit_deg_s: [f64; 2],
    /// Target speed is modulated by `1 + m·sin(2πft + φ)` with this depth `m`.
    pub pursuit_modulation: f64,
    pub pursuit_modulation_hz: [f64; 2],
    pub pursuit_modes: PursuitModes,
    pub shared_head_fraction: f64,
    /// Mean catch-up saccades per second of pursuit.
    pub catch_up_rate_hz: f64,
    pub catch_up_deg: [f64; 2],
    pub translation_deg_s: [f64; 2],
    /// Fraction of segment joins that are blinks instead of saccades.
    pub blink_prob: f64,
    pub blink_s: [f64; 2],
    pub blink_confidence: f64,
    /// Speed of the additive gaze tremor.
    pub tremor_deg_s: f64,
    /// Correlation time of the tremor direction.
    pub tremor_tau_s: f64,
    pub confidence: [f64; 2],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            duration_s: 60.0,
            rate_hz: 300.0,
            seed: 0,
            mix: EventMix::default(),
            fixation_s: [0.2, 0.6],
            pursuit_s: [0.3, 0.8],
            saccade_s: [0.04, 0.08],
            saccade_peak_deg_s: [150.0, 500.0],
            vor_gain: 1.0,
            vor_gain_jitter: 0.1,
            vor_head_deg_s: [5.0, 30.0],
            pursuit_deg_s: [4.0, 25.0],
            pursuit_modulation: 0.8,
            pursuit_modulation_hz: [0.5, 1.5],
            pursuit_modes: PursuitModes::default(),
            shared_head_fraction: 0.5,
            catch_up_rate_hz: 0.5,
            catch_up_deg: [1.0, 3.0],
            translation_deg_s: [0.5, 3.0],
            blink_prob: 0.05,
            blink_s: [0.1, 0.2],
            blink_confidence: 0.05,
            tremor_deg_s: 0.55,
            tremor_tau_s: 0.02,
            confidence: [0.9, 1.0],
        }
    }
}

const MAX_HUMAN_DEG_S: f64 = 900.0;
const MIN_PURSUIT_PIECE_S: f64 = 0.06;
const MIN_CATCH_UP_S: f64 = 0.02;

fn check_range(name: &str, r: [f64; 2], lo: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= lo && r[0] <= r[1]) {
        return Err(Error::invalid(format!("{name} range {r:?} is invalid")));
    }
    Ok(())
}

fn check_proportions(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x.is_finite() && x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("{name} proportions must be non-negative and sum to 1")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::invalid("rate_hz must be positive"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::invalid("duration_s must be positive"));
        }
        check_proportions("event mix", &self.mix_weights())?;
        let m = &self.pursuit_modes;
        check_proportions("pursuit mode", &[m.eye, m.head, m.shared])?;
        for (name, r) in [
            ("fixation_s", self.fixation_s),
            ("pursuit_s", self.pursuit_s),
            ("saccade_s", self.saccade_s),
            ("saccade_peak_deg_s", self.saccade_peak_deg_s),
            ("vor_head_deg_s", self.vor_head_deg_s),
            ("pursuit_deg_s", self.pursuit_deg_s),
            ("pursuit_modulation_hz", self.pursuit_modulation_hz),
            ("catch_up_deg", self.catch_up_deg),
            ("translation_deg_s", self.translation_deg_s),
            ("blink_s", self.blink_s),
            ("confidence", self.confidence),
        ] {
            check_range(name, r, 0.0)?;
        }
        if self.saccade_peak_deg_s[1] > MAX_HUMAN_DEG_S {
            return Err(Error::invalid(format!("saccade peaks above {MAX_HUMAN_DEG_S} °/s")));
        }
        let one = 1.0 / self.rate_hz;
        if self.saccade_s[0] < one || (self.blink_prob > 0.0 && self.blink_s[0] < one) {
            return Err(Error::invalid("saccades and blinks must last at least one sample"));
        }
        let holds = [
            (self.mix.fixation + self.mix.vor + self.mix.translation, self.fixation_s[0]),
            (self.mix.pursuit, self.pursuit_s[0]),
        ];
        if holds.iter().any(|&(p, d)| p > 0.0 && d < one) {
            return Err(Error::invalid("gaze-holding segments must last at least one sample"));
        }
        if self.confidence[1] > 1.0 || !(0.0..=1.0).contains(&self.blink_confidence) {
            return Err(Error::invalid("confidence values must lie in [0, 1]"));
        }
        if !(self.vor_gain_jitter >= 0.0 && self.vor_gain - self.vor_gain_jitter > 0.0) {
            return Err(Error::invalid("VOR gains must stay positive"));
        }
        if [self.shared_head_fraction, self.blink_prob, self.pursuit_modulation]
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(Error::invalid("fractions must lie in [0, 1]"));
        }
        if !(self.catch_up_rate_hz >= 0.0 && self.tremor_deg_s >= 0.0 && self.tremor_tau_s > 0.0) {
            return Err(Error::invalid("tremor and catch-up parameters must be non-negative"));
        }
        Ok(())
    }

    fn mix_weights(&self) -> [f64; 4] {
        [self.mix.fixation, self.mix.vor, self.mix.translation, self.mix.pursuit]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Fixation,
    Vor,
    Translation,
    Pursuit(PursuitMode),
    Saccade,
    CatchUp,
    Blink,
}

impl SegmentKind {
    pub fn label(self) -> GazeClass {
        match self {
            SegmentKind::Fixation | SegmentKind::Vor => GazeClass::FixationStationary,
            SegmentKind::Translation => GazeClass::FixationTranslation,
            SegmentKind::Pursuit(_) => GazeClass::Pursuit,
            SegmentKind::Saccade | SegmentKind::CatchUp => GazeClass::Saccade,
            SegmentKind::Blink => GazeClass::None,
        }
    }
}

/// Ground truth for one scheduled segment over samples `[start, end)`.
/// `speed_deg_s` is the saccade peak, pursuit target speed, head speed (VOR)
/// or drift speed; zero otherwise. `gain` is the VOR gain of VOR segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
    pub speed_deg_s: f64,
    pub amplitude_deg: f64,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub recording: Recording,
    pub labels: LabelSequence,
    pub segments: Vec<Segment>,
}

/// Picks among weighted options while holding each option's count within one
/// of its share.
struct Quota<const N: usize> {
    weights: [f64; N],
    counts: [usize; N],
}

impl<const N: usize> Quota<N> {
    fn new(weights: [f64; N]) -> Self {
        Quota { weights, counts: [0; N] }
    }

    fn draw(&mut self, rng: &mut impl Rng) -> usize {
        let k = self.counts.iter().sum::<usize>() as f64 + 1.0;
        let eligible: Vec<usize> = (0..N)
            .filter(|&i| self.weights[i] > 0.0 && (self.counts[i] as f64) < self.weights[i] * k)
            .collect();
        let pool = if eligible.is_empty() {
            (0..N).filter(|&i| self.weights[i] > 0.0).collect()
        } else {
            eligible
        };
        let total: f64 = pool.iter().map(|&i| self.weights[i]).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = pool[pool.len() - 1];
        for &i in &pool {
            if u < self.weights[i] {
                pick = i;
                break;
            }
            u -= self.weights[i];
        }
        self.counts[pick] += 1;
        pick
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

fn samples(s: f64, fs: f64) -> usize {
    ((s * fs).round() as usize).max(1)
}

fn schedule(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let fs = cfg.rate_hz;
    let total = samples(cfg.duration_s, fs);
    let min_hold = samples(cfg.fixation_s[0].min(cfg.pursuit_s[0]).max(0.05), fs);
    let mut kinds = Quota::new(cfg.mix_weights());
    let m = cfg.pursuit_modes;
    let mut modes = Quota::new([m.eye, m.head, m.shared]);
    let blink_phase: f64 = rng.gen();
    let mut joins = 0usize;
    let mut out: Vec<Segment> = Vec::new();
    let mut pos = 0usize;
    let seg = |kind, start, len: usize, speed, amplitude| Segment {
        kind,
        start,
        end: start + len,
        speed_deg_s: speed,
        amplitude_deg: amplitude,
        gain: 0.0,
    };

    let mut hold = |rng: &mut ChaCha8Rng, pos: usize| -> Vec<Segment> {
        match kinds.draw(rng) {
            3 => {
                let mode = [PursuitMode::Eye, PursuitMode::Head, PursuitMode::Shared][modes.draw(rng)];
                let speed = uniform(rng, cfg.pursuit_deg_s);
                let len = samples(uniform(rng, cfg.pursuit_s), fs);
                pursuit_pieces(cfg, rng, pos, len, mode, speed)
            }
            k => {
                let kind = [SegmentKind::Fixation, SegmentKind::Vor, SegmentKind::Translation][k];
                let speed = match kind {
                    SegmentKind::Vor => uniform(rng, cfg.vor_head_deg_s),
                    SegmentKind::Translation => uniform(rng, cfg.translation_deg_s),
                    _ => 0.0,
                };
                let mut s = seg(kind, pos, samples(uniform(rng, cfg.fixation_s), fs), speed, 0.0);
                if kind == SegmentKind::Vor {
                    s.gain = cfg.vor_gain + uniform(rng, [-cfg.vor_gain_jitter, cfg.vor_gain_jitter]);
                }
                vec![s]
            }
        }
    };

    loop {
        let mut next = if out.is_empty() {
            hold(rng, pos)
        } else {
            let blink = ((joins + 1) as f64 * cfg.blink_prob + blink_phase).floor()
                > (joins as f64 * cfg.blink_prob + blink_phase).floor();
            joins += 1;
            let join = if blink {
                seg(SegmentKind::Blink, pos, samples(uniform(rng, cfg.blink_s), fs), 0.0, 0.0)
            } else {
                let n = samples(uniform(rng, cfg.saccade_s), fs);
                let peak = uniform(rng, cfg.saccade_peak_deg_s);
                seg(SegmentKind::Saccade, pos, n, peak, peak * n as f64 / fs / 2.0)
            };
            let mut v = vec![join];
            v.extend(hold(rng, join.end));
            v
        };
        let end = next.last().map_or(pos, |s| s.end);
        if end + min_hold > total {
            // close with a stationary fixation over what is left
            let join_end = next[0].end;
            if !out.is_empty() && join_end + min_hold <= total {
                next.truncate(1);
                next.push(seg(SegmentKind::Fixation, join_end, total - join_end, 0.0, 0.0));
                out.extend(next);
            } else if let Some(last) = out.last_mut() {
                last.end = total;
            } else {
                out.push(seg(SegmentKind::Fixation, 0, total, 0.0, 0.0));
            }
            break;
        }
        pos = end;
        out.extend(next);
    }
    out
}

fn pursuit_pieces(
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
    start: usize,
    len: usize,
    mode: PursuitMode,
    speed: f64,
) -> Vec<Segment> {
    let fs = cfg.rate_hz;
    let piece_min = samples(MIN_PURSUIT_PIECE_S, fs);
    let wanted = (cfg.catch_up_rate_hz * len as f64 / fs + rng.gen::<f64>()).floor() as usize;
    let mut catch = Vec::new();
    for _ in 0..wanted {
        let amp = uniform(rng, cfg.catch_up_deg);
        let peak = uniform(rng, cfg.saccade_peak_deg_s);
        let n = samples((2.0 * amp / peak).max(MIN_CATCH_UP_S), fs);
        let used: usize = catch.iter().map(|c: &(usize, f64)| c.0).sum::<usize>() + n;
        if len < used + (catch.len() + 2) * piece_min {
            break;
        }
        catch.push((n, amp));
    }
    let slack = len - catch.iter().map(|c| c.0).sum::<usize>() - (catch.len() + 1) * piece_min;
    let mut cuts: Vec<usize> = (0..catch.len()).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut out = Vec::new();
    let mut pos = start;
    let mut prev_cut = 0;
    for (i, &(n, amp)) in catch.iter().enumerate() {
        let piece = piece_min + cuts[i] - prev_cut;
        prev_cut = cuts[i];
        out.push(Segment {
            kind: SegmentKind::Pursuit(mode),
            start: pos,
            end: pos + piece,
            speed_deg_s: speed,
            amplitude_deg: 0.0,
            gain: 0.0,
        });
        pos += piece;
        out.push(Segment {
            kind: SegmentKind::CatchUp,
            start: pos,
            end: pos + n,
            speed_deg_s: 2.0 * amp * fs / n as f64,
            amplitude_deg: amp,
            gain: 0.0,
        });
        pos += n;
    }
    out.push(Segment {
        kind: SegmentKind::Pursuit(mode),
        start: pos,
        end: start + len,
        speed_deg_s: speed,
        amplitude_deg: 0.0,
        gain: 0.0,
    });
    out
}

/// Cumulative fraction of a raised-cosine velocity pulse, `τ ∈ [0, 1]`.
fn pulse_progress(tau: f64) -> f64 {
    tau - (2.0 * std::f64::consts::PI * tau).sin() / (2.0 * std::f64::consts::PI)
}

fn tangent(v: &Vector3<f64>, w: &Vector3<f64>) -> Option<Vector3<f64>> {
    let t = w - v * v.dot(w);
    (t.norm() > 1e-12).then(|| t.normalize())
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    rng: ChaCha8Rng,
    head: UnitQuaternion<f64>,
    gaze: Vector3<f64>,
    /// World-frame rotation axis of the current pursuit.
    pursuit_axis: Vector3<f64>,
    pursuit_hz: f64,
    pursuit_phase: f64,
}

impl Sim<'_> {
    fn eye(&self) -> Vector3<f64> {
        (self.head.inverse() * self.gaze).normalize()
    }

    fn random_tangent(&mut self, at: &Vector3<f64>) -> Vector3<f64> {
        loop {
            let r = Vector3::new(
                self.rng.sample::<f64, _>(StandardNormal),
                self.rng.sample::<f64, _>(StandardNormal),
                self.rng.sample::<f64, _>(StandardNormal),
            );
            if let Some(t) = tangent(at, &r) {
                return t;
            }
        }
    }

    /// World axis rotating the gaze along a random head-frame direction,
    /// pulled toward straight ahead as the eye becomes eccentric.
    fn eye_centred_axis(&mut self) -> Vector3<f64> {
        let e = self.eye();
        let ecc = e.z.clamp(-1.0, 1.0).acos().to_degrees();
        let mut d = self.random_tangent(&e);
        if let Some(c) = tangent(&e, &Vector3::z()) {
            d = (d + c * (ecc / 12.0).powi(2)).normalize();
        }
        (self.head * e.cross(&d)).normalize()
    }

    /// Mostly horizontal world axis pulling the gaze back toward the horizon.
    fn horizon_axis(&mut self) -> Vector3<f64> {
        let g = self.gaze;
        let elev = g.y.clamp(-1.0, 1.0).asin().to_degrees();
        let horiz = tangent(&g, &Vector3::y().cross(&g)).unwrap_or_else(|| self.random_tangent(&g));
        let sign = if self.rng.gen::<bool>() { 1.0 } else { -1.0 };
        let mut d = horiz * sign + self.random_tangent(&g) * 0.3;
        if let Some(up) = tangent(&g, &Vector3::y()) {
            d -= up * (elev / 10.0);
        }
        g.cross(&d.normalize()).normalize()
    }
}

fn rotate(axis: &Vector3<f64>, angle_deg: f64) -> UnitQuaternion<f64> {
    if angle_deg == 0.0 || axis.norm() < 1e-12 {
        return UnitQuaternion::identity();
    }
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle_deg.to_radians())
}

/// Generates one recording with exact labels. Deterministic in `cfg.seed`.
pub fn generate(cfg: &ScenarioConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let fs = cfg.rate_hz;
    let dt = 1.0 / fs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let segments = schedule(cfg, &mut rng);
    let total = segments.last().map_or(0, |s| s.end);

    let mut sim = Sim {
        cfg,
        rng,
        head: UnitQuaternion::identity(),
        gaze: Vector3::z(),
        pursuit_axis: Vector3::x(),
        pursuit_hz: 0.0,
        pursuit_phase: 0.0,
    };
    // tremor drifts at constant speed along a heading that diffuses with
    // correlation time tremor_tau_s
    let heading_step = (2.0 * dt / cfg.tremor_tau_s).sqrt();
    let mut heading: f64 = sim.rng.gen_range(0.0..std::f64::consts::TAU);
    let mut tremor = UnitQuaternion::identity();

    let mut out = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut kinds = Vec::with_capacity(total);
    for s in &segments {
        let n = s.end - s.start;
        let (gaze_axis, head_axis, gaze_speed, head_speed) = match s.kind {
            SegmentKind::Fixation | SegmentKind::Blink => (Vector3::zeros(), Vector3::zeros(), 0.0, 0.0),
            SegmentKind::Vor => {
                let ax = -sim.eye_centred_axis();
                (ax, ax, (1.0 - s.gain) * s.speed_deg_s, s.speed_deg_s)
            }
            SegmentKind::Translation => (sim.eye_centred_axis(), Vector3::zeros(), s.speed_deg_s, 0.0),
            SegmentKind::Pursuit(mode) => {
                if kinds.last() != Some(&SegmentKind::CatchUp) {
                    sim.pursuit_hz = uniform(&mut sim.rng, cfg.pursuit_modulation_hz);
                    sim.pursuit_phase = sim.rng.gen_range(0.0..std::f64::consts::TAU);
                    sim.pursuit_axis = match mode {
                        PursuitMode::Head => sim.horizon_axis(),
                        _ => sim.eye_centred_axis(),
                    };
                }
                let head = match mode {
                    PursuitMode::Eye => 0.0,
                    PursuitMode::Head => s.speed_deg_s,
                    PursuitMode::Shared => s.speed_deg_s * sim.cfg.shared_head_fraction,
                };
                (sim.pursuit_axis, sim.pursuit_axis, s.speed_deg_s, head)
            }
            SegmentKind::Saccade => (sim.eye_centred_axis(), Vector3::zeros(), 0.0, 0.0),
            SegmentKind::CatchUp => (sim.pursuit_axis, sim.pursuit_axis, 0.0, 0.0),
        };
        // catch-up saccades ride on the ongoing pursuit
        let (ride_gaze, ride_head) = match (s.kind, segments.iter().find(|p| p.end == s.start)) {
            (SegmentKind::CatchUp, Some(p)) => match p.kind {
                SegmentKind::Pursuit(mode) => {
                    let h = match mode {
                        PursuitMode::Eye => 0.0,
                        PursuitMode::Head => p.speed_deg_s,
                        PursuitMode::Shared => p.speed_deg_s * sim.cfg.shared_head_fraction,
                    };
                    (p.speed_deg_s, h)
                }
                _ => (0.0, 0.0),
            },
            _ => (0.0, 0.0),
        };
        let label = s.kind.label();
        for j in 0..n {
            let g = (tremor * sim.gaze).normalize();
            let eye = (sim.head.inverse() * g).normalize();
            let confidence = if s.kind == SegmentKind::Blink {
                cfg.blink_confidence
            } else {
                uniform(&mut sim.rng, cfg.confidence)
            };
            out.push(GazeSample {
                t: out.len() as f64 * dt,
                eye_dir: eye,
                head_rot: sim.head,
                confidence,
            });
            labels.push(label);
            kinds.push(s.kind);

            let pulse = match s.kind {
                SegmentKind::Saccade | SegmentKind::CatchUp => {
                    s.amplitude_deg * (pulse_progress((j + 1) as f64 / n as f64) - pulse_progress(j as f64 / n as f64))
                }
                _ => 0.0,
            };
            let m = match s.kind {
                SegmentKind::Pursuit(_) | SegmentKind::CatchUp => {
                    let t = (s.start + j) as f64 * dt;
                    1.0 + cfg.pursuit_modulation * (std::f64::consts::TAU * sim.pursuit_hz * t + sim.pursuit_phase).sin()
                }
                _ => 1.0,
            };
            let dg = (gaze_speed + ride_gaze) * m * dt + pulse;
            let dh = (head_speed + ride_head) * m * dt;
            sim.gaze = (rotate(&gaze_axis, dg) * sim.gaze).normalize();
            sim.head = UnitQuaternion::new_normalize(*(rotate(&head_axis, dh) * sim.head).quaternion());

            heading += heading_step * sim.rng.sample::<f64, _>(StandardNormal);
            let g = tremor * sim.gaze;
            let b1 = tangent(&g, &Vector3::x()).unwrap_or_else(Vector3::y);
            let b2 = g.cross(&b1);
            let axis = b1 * heading.cos() + b2 * heading.sin();
            tremor = rotate(&axis, cfg.tremor_deg_s * dt) * tremor;
        }
    }

    let none_kind = labels
        .iter()
        .zip(&kinds)
        .map(|(l, k)| match (l, k) {
            (GazeClass::None, SegmentKind::Blink) => NoneKind::Blink,
            _ => NoneKind::Uncoded,
        })
        .collect();
    let recording = Recording::new(out, fs)?;
    let labels = LabelSequence::with_none_kind(labels, none_kind)?;
    Ok(Synthetic {
        recording,
        labels,
        segments,
    })
}

/// One recording per subject, seeded `cfg.seed + i`, generated in parallel.
pub fn generate_subjects(cfg: &ScenarioConfig, n: usize) -> Result<Vec<Synthetic>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i);
            generate(&c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cleaning::{clean_labels, CleaningConfig};
    use crate::geometry::{gaze_series, RigAlignment};
    use crate::signal::{make_velocity_trace, two_point_velocity, FilterConfig};

    fn short(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            duration_s: 20.0,
            seed,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn deterministic_and_exact_length() {
        let a = generate(&short(3)).unwrap();
        let b = generate(&short(3)).unwrap();
        assert_eq!(a.recording, b.recording);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.recording.len(), 6000);
        assert_eq!(a.labels.len(), 6000);
        let c = generate(&short(4)).unwrap();
        assert_ne!(a.labels, c.labels);
        for w in a.segments.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn pursuit_free_config() {
        let cfg = ScenarioConfig {
            mix: EventMix {
                fixation: 0.5,
                vor: 0.3,
                translation: 0.2,
                pursuit: 0.0,
            },
            ..short(1)
        };
        let s = generate(&cfg).unwrap();
        assert!(!s.labels.labels.contains(&GazeClass::Pursuit));
    }

    #[test]
    fn rejects_infeasible_configs() {
        let bad = [
            ScenarioConfig {
                saccade_s: [0.0, 0.0],
                ..ScenarioConfig::default()
            },
            ScenarioConfig {
                mix: EventMix {
                    fixation: 0.5,
                    ..EventMix::default()
                },
                ..ScenarioConfig::default()
            },
            ScenarioConfig {
                rate_hz: 0.0,
                ..ScenarioConfig::default()
            },
            ScenarioConfig {
                saccade_peak_deg_s: [100.0, 1000.0],
                ..ScenarioConfig::default()
            },
            ScenarioConfig {
                pursuit_s: [0.0, 0.0],
                ..ScenarioConfig::default()
            },
        ];
        for c in &bad {
            assert!(generate(c).is_err(), "{c:?}");
        }
    }

    #[test]
    fn unity_gain_vor_holds_gaze_in_world() {
        let cfg = ScenarioConfig {
            duration_s: 10.0,
            mix: EventMix {
                fixation: 0.0,
                vor: 1.0,
                translation: 0.0,
                pursuit: 0.0,
            },
            blink_prob: 0.0,
            vor_gain_jitter: 0.0,
            seed: 11,
            ..ScenarioConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let rec = &s.recording;
        let dirs = rec.eye_dirs();
        let rots: Vec<_> = rec.samples().iter().map(|x| x.head_rot).collect();
        let giw = gaze_series(&dirs, &rots, &RigAlignment::default()).unwrap();
        let v = two_point_velocity(&giw, rec.rate_hz()).unwrap();
        let head = two_point_velocity(&rec.head_dirs(), rec.rate_hz()).unwrap();
        let mut checked = 0;
        for seg in s.segments.iter().filter(|x| x.kind == SegmentKind::Vor) {
            for i in seg.start + 1..seg.end - 1 {
                assert!(v[i] < 3.0 * cfg.tremor_deg_s, "sample {i}: {} °/s", v[i]);
                checked += 1;
            }
            assert!(head[(seg.start + seg.end) / 2] > 4.0);
        }
        assert!(checked > 1000);
    }

    #[test]
    fn schedule_matches_request() {
        let cfg = ScenarioConfig {
            seed: 5,
            ..ScenarioConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let mean = |r: [f64; 2]| (r[0] + r[1]) / 2.0;
        let mix = cfg.mix_weights();
        let hold = mix[..3].iter().sum::<f64>() * mean(cfg.fixation_s) + mix[3] * mean(cfg.pursuit_s);
        let join = (1.0 - cfg.blink_prob) * mean(cfg.saccade_s) + cfg.blink_prob * mean(cfg.blink_s);
        let holds = cfg.duration_s / (hold + join);
        let expected = holds * (1.0 - cfg.blink_prob) + holds * mix[3] * cfg.catch_up_rate_hz * mean(cfg.pursuit_s);

        let saccades = crate::model::runs(&s.labels.labels)
            .iter()
            .filter(|r| r.value == GazeClass::Saccade)
            .count();
        assert!(((saccades as f64) / expected - 1.0).abs() < 0.1, "{saccades} vs {expected}");

        let durs: Vec<f64> = s
            .segments
            .iter()
            .filter(|x| x.kind == SegmentKind::Saccade)
            .map(|x| (x.end - x.start) as f64 / cfg.rate_hz)
            .collect();
        let m = durs.iter().sum::<f64>() / durs.len() as f64;
        assert!((m / mean(cfg.saccade_s) - 1.0).abs() < 0.1);

        let holds_seen: Vec<SegmentKind> = s
            .segments
            .iter()
            .filter(|x| !matches!(x.kind, SegmentKind::Saccade | SegmentKind::CatchUp | SegmentKind::Blink))
            .map(|x| x.kind)
            .collect();
        let n_vor = holds_seen.iter().filter(|k| **k == SegmentKind::Vor).count() as f64;
        let n_fix = holds_seen.iter().filter(|k| **k == SegmentKind::Fixation).count() as f64;
        assert!((n_vor / n_fix - 1.0).abs() < 0.1);
    }

    #[test]
    fn labels_survive_cleaning() {
        for seed in 0..3 {
            let s = generate(&short(seed)).unwrap();
            let cleaned = clean_labels(
                &s.labels,
                &s.recording.eye_dirs(),
                s.recording.rate_hz(),
                &CleaningConfig::default(),
            )
            .unwrap();
            assert_eq!(cleaned.labels, s.labels.labels, "seed {seed}");
        }
    }

    #[test]
    fn pipeline_recovers_peaks_and_gain() {
        let cfg = ScenarioConfig {
            vor_gain: 0.8,
            vor_gain_jitter: 0.0,
            ..short(7)
        };
        let s = generate(&cfg).unwrap();
        let trace = make_velocity_trace(&s.recording, &FilterConfig::default()).unwrap();
        let mut n = 0;
        for seg in s.segments.iter().filter(|x| x.kind == SegmentKind::Saccade) {
            let peak = trace.eye_abs[seg.start..seg.end].iter().cloned().fold(0.0, f64::max);
            assert!((peak / seg.speed_deg_s - 1.0).abs() < 0.05, "{peak} vs {}", seg.speed_deg_s);
            n += 1;
        }
        assert!(n > 10);
        let mut ratios = Vec::new();
        for seg in s.segments.iter().filter(|x| x.kind == SegmentKind::Vor) {
            for i in seg.start + 15..seg.end.saturating_sub(15) {
                ratios.push(trace.eye_abs[i] / trace.head_abs[i]);
            }
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios[ratios.len() / 2];
        assert!((median - 0.8).abs() < 0.05, "gain {median}");
    }

    #[test]
    fn blinks_are_low_confidence_none() {
        let s = generate(&short(2)).unwrap();
        let blinks: Vec<_> = s.segments.iter().filter(|x| x.kind == SegmentKind::Blink).collect();
        assert!(!blinks.is_empty());
        for b in blinks {
            for i in b.start..b.end {
                assert_eq!(s.labels.labels[i], GazeClass::None);
                assert_eq!(s.labels.none_kind_at(i), Some(NoneKind::Blink));
                assert!(s.recording.samples()[i].confidence < 0.1);
            }
        }
    }
}
