//! JSON/HTTP service over a directory of recordings and their label sets.
//!
//! | route | |
//! |---|---|
//! | `GET /api/recordings` | list recordings |
//! | `GET /api/recordings/{id}/trace?start&end&points` | min/max-decimated velocity channels |
//! | `GET /api/recordings/{id}/gaze?start&end&points` | world-frame gaze directions |
//! | `GET /api/recordings/{id}/labels` | label rows with their version |
//! | `PUT /api/recordings/{id}/labels` | replace labels if `version` is current |
//! | `GET /api/recordings/{id}/labels/export` | label file bytes |
//!
//! `start`/`end` are in seconds from the first sample.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{label_rows, labels_from_rows, read_labels, read_recording, write_labels, LabelRow};
use crate::model::{GazeClass, LabelSequence, Recording};
use crate::signal::{make_velocity_trace, FilterConfig, VelocityTrace, CHANNEL_NAMES};

pub const DEFAULT_POINTS: usize = 1000;
pub const MAX_POINTS: usize = 20_000;

struct Versioned {
    version: u64,
    labels: LabelSequence,
}

struct Entry {
    recording: Recording,
    trace: VelocityTrace,
    gaze: Vec<Vector3<f64>>,
    labels: RwLock<Versioned>,
}

/// Recordings keyed by id. Label sets are replaced by compare-and-swap on
/// their version number.
pub struct Store {
    entries: BTreeMap<String, Entry>,
    data_dir: Option<PathBuf>,
}

impl Store {
    pub fn new() -> Store {
        Store {
            entries: BTreeMap::new(),
            data_dir: None,
        }
    }

    pub fn insert(&mut self, id: &str, recording: Recording, labels: Option<LabelSequence>, filter: &FilterConfig) -> Result<()> {
        let labels = match labels {
            Some(l) if l.len() != recording.len() => {
                return Err(Error::LengthMismatch {
                    what: "labels vs recording",
                    left: l.len(),
                    right: recording.len(),
                })
            }
            Some(l) => l,
            None => LabelSequence::new(vec![GazeClass::None; recording.len()]),
        };
        let trace = make_velocity_trace(&recording, filter)?;
        let gaze = recording.samples().iter().map(|s| s.head_rot * s.eye_dir).collect();
        self.entries.insert(
            id.to_string(),
            Entry {
                recording,
                trace,
                gaze,
                labels: RwLock::new(Versioned { version: 0, labels }),
            },
        );
        Ok(())
    }

    /// Loads every `<id>.csv` recording in `dir` with its optional
    /// `<id>.labels.csv`. Accepted label updates are written back there.
    pub fn load_dir(dir: &Path, filter: &FilterConfig) -> Result<Store> {
        let mut store = Store::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.ends_with(".csv") && !name.ends_with(".labels.csv") && !name.ends_with(".trace.csv")
            })
            .collect();
        paths.sort();
        for p in paths {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let rec = read_recording(&std::fs::read_to_string(&p)?, None)
                .map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?;
            let lp = dir.join(format!("{id}.labels.csv"));
            let labels = if lp.exists() {
                Some(read_labels(&std::fs::read_to_string(&lp)?, Some(rec.len()))?)
            } else {
                None
            };
            store.insert(&id, rec, labels, filter)?;
        }
        store.data_dir = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Default for Store {
    fn default() -> Self {
        Store::new()
    }
}

pub fn router(store: Store) -> Router {
    Router::new()
        .route("/api/recordings", get(list))
        .route("/api/recordings/{id}/trace", get(trace))
        .route("/api/recordings/{id}/gaze", get(gaze))
        .route("/api/recordings/{id}/labels", get(get_labels).put(put_labels))
        .route("/api/recordings/{id}/labels/export", get(export_labels))
        .with_state(Arc::new(store))
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(store: Store, addr: std::net::SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await?;
    Ok(())
}

type Shared = State<Arc<Store>>;

fn failure(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": kind, "message": message.into() }))).into_response()
}

fn entry<'a>(store: &'a Store, id: &str) -> std::result::Result<&'a Entry, Response> {
    store
        .entries
        .get(id)
        .ok_or_else(|| failure(StatusCode::NOT_FOUND, "not_found", format!("no recording `{id}`")))
}

#[derive(Serialize)]
struct Summary {
    id: String,
    samples: usize,
    rate_hz: f64,
    duration_s: f64,
    label_version: u64,
}

async fn list(State(store): Shared) -> Json<Vec<Summary>> {
    Json(
        store
            .entries
            .iter()
            .map(|(id, e)| Summary {
                id: id.clone(),
                samples: e.recording.len(),
                rate_hz: e.recording.rate_hz(),
                duration_s: e.recording.len() as f64 / e.recording.rate_hz(),
                label_version: e.labels.read().expect("label lock").version,
            })
            .collect(),
    )
}

#[derive(Deserialize)]
struct Window {
    start: Option<f64>,
    end: Option<f64>,
    points: Option<usize>,
}

/// Sample range covered by the query and the requested point count.
fn window(e: &Entry, w: &Window) -> std::result::Result<(usize, usize, usize), Response> {
    let t = &e.trace.t;
    let t0 = t.first().copied().unwrap_or(0.0);
    let start = w.start.unwrap_or(0.0);
    let end = w.end.unwrap_or(f64::INFINITY);
    let points = w.points.unwrap_or(DEFAULT_POINTS);
    if !(start >= 0.0 && end > start) || start.is_nan() {
        return Err(failure(StatusCode::BAD_REQUEST, "bad_query", "need 0 <= start < end"));
    }
    if !(2..=MAX_POINTS).contains(&points) {
        return Err(failure(StatusCode::BAD_REQUEST, "bad_query", format!("points must lie in [2, {MAX_POINTS}]")));
    }
    let lo = t.partition_point(|&x| x - t0 < start);
    let hi = t.partition_point(|&x| x - t0 <= end);
    if hi <= lo {
        return Err(failure(StatusCode::BAD_REQUEST, "bad_query", "range holds no samples"));
    }
    Ok((lo, hi, points))
}

/// Output sample indices: every sample when the range is small enough,
/// otherwise `points / 2` equal buckets each giving its min and max sample of
/// `key`, in time order.
fn minmax_indices(lo: usize, hi: usize, points: usize, key: &[f64]) -> Vec<usize> {
    let n = hi - lo;
    if n <= points {
        return (lo..hi).collect();
    }
    let buckets = points / 2;
    let mut out = Vec::with_capacity(points);
    for b in 0..buckets {
        let s = lo + b * n / buckets;
        let e = lo + (b + 1) * n / buckets;
        let (mut imin, mut imax) = (s, s);
        for i in s..e {
            if key[i] < key[imin] {
                imin = i;
            }
            if key[i] > key[imax] {
                imax = i;
            }
        }
        out.push(imin.min(imax));
        out.push(imin.max(imax));
    }
    if points % 2 == 1 {
        out.push(hi - 1);
    }
    out
}

#[derive(Serialize)]
struct TraceWindow {
    start_idx: usize,
    end_idx: usize,
    decimated: bool,
    /// Per channel: sample times and values, both `points` long.
    channels: BTreeMap<&'static str, ChannelSeries>,
    confidence: ChannelSeries,
}

#[derive(Serialize)]
struct ChannelSeries {
    t: Vec<f64>,
    v: Vec<f64>,
}

async fn trace(State(store): Shared, UrlPath(id): UrlPath<String>, Query(w): Query<Window>) -> Response {
    let e = match entry(&store, &id) {
        Ok(e) => e,
        Err(r) => return r,
    };
    let (lo, hi, points) = match window(e, &w) {
        Ok(x) => x,
        Err(r) => return r,
    };
    let series = |values: &[f64]| {
        let idx = minmax_indices(lo, hi, points, values);
        ChannelSeries {
            t: idx.iter().map(|&i| e.trace.t[i]).collect(),
            v: idx.iter().map(|&i| values[i]).collect(),
        }
    };
    let channels = CHANNEL_NAMES
        .iter()
        .zip(e.trace.channels())
        .map(|(&name, values)| (name, series(values)))
        .collect();
    Json(TraceWindow {
        start_idx: lo,
        end_idx: hi,
        decimated: hi - lo > points,
        channels,
        confidence: series(&e.trace.confidence),
    })
    .into_response()
}

#[derive(Serialize)]
struct GazeWindow {
    t: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

async fn gaze(State(store): Shared, UrlPath(id): UrlPath<String>, Query(w): Query<Window>) -> Response {
    let e = match entry(&store, &id) {
        Ok(e) => e,
        Err(r) => return r,
    };
    let (lo, hi, points) = match window(e, &w) {
        Ok(x) => x,
        Err(r) => return r,
    };
    let stride = (hi - lo).div_ceil(points);
    let idx: Vec<usize> = (lo..hi).step_by(stride).collect();
    Json(GazeWindow {
        t: idx.iter().map(|&i| e.trace.t[i]).collect(),
        x: idx.iter().map(|&i| e.gaze[i].x).collect(),
        y: idx.iter().map(|&i| e.gaze[i].y).collect(),
        z: idx.iter().map(|&i| e.gaze[i].z).collect(),
    })
    .into_response()
}

#[derive(Serialize, Deserialize)]
pub struct LabelSet {
    pub version: u64,
    pub labels: Vec<LabelRow>,
}

async fn get_labels(State(store): Shared, UrlPath(id): UrlPath<String>) -> Response {
    match entry(&store, &id) {
        Ok(e) => {
            let v = e.labels.read().expect("label lock");
            Json(LabelSet {
                version: v.version,
                labels: label_rows(&v.labels),
            })
            .into_response()
        }
        Err(r) => r,
    }
}

async fn put_labels(
    State(store): Shared,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<LabelSet>, JsonRejection>,
) -> Response {
    let e = match entry(&store, &id) {
        Ok(e) => e,
        Err(r) => return r,
    };
    let Json(set) = match body {
        Ok(b) => b,
        Err(rej) => return failure(StatusCode::BAD_REQUEST, "schema", rej.body_text()),
    };
    let labels = match labels_from_rows(set.labels.iter().enumerate().map(|(i, r)| (i + 1, r)), Some(e.recording.len())) {
        Ok(l) => l,
        Err(err) => return failure(StatusCode::BAD_REQUEST, "schema", err.to_string()),
    };
    let mut current = e.labels.write().expect("label lock");
    if set.version != current.version {
        return (
            StatusCode::CONFLICT,
            Json(json!({
                "error": "conflict",
                "message": format!("label set is at version {}, not {}", current.version, set.version),
                "current_version": current.version,
            })),
        )
            .into_response();
    }
    if let Some(dir) = &store.data_dir {
        if let Err(err) = std::fs::write(dir.join(format!("{id}.labels.csv")), write_labels(&labels)) {
            return failure(StatusCode::INTERNAL_SERVER_ERROR, "io", err.to_string());
        }
    }
    current.version += 1;
    current.labels = labels;
    Json(json!({ "version": current.version })).into_response()
}

async fn export_labels(State(store): Shared, UrlPath(id): UrlPath<String>) -> Response {
    match entry(&store, &id) {
        Ok(e) => {
            let text = write_labels(&e.labels.read().expect("label lock").labels);
            ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], text).into_response()
        }
        Err(r) => r,
    }
}
