//! Command-line front end. Errors go to stderr as one JSON object; the exit
//! status is 2 for malformed input files and 1 for every other failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde_json::json;

use headfree::cleaning::clean_labels;
use headfree::container::{read_header, ModelKind};
use headfree::error::{Error, Result};
use headfree::features::{dedup_training_set, feature_matrix, training_rows, Directions};
use headfree::forest::{classify_rf, train_forest, ForestModel};
use headfree::io::{self, Config};
use headfree::metrics::{
    elc_match, elc_symmetric, event_error_rate, event_f1_earliest, event_kappa_largest, majority_vote_events,
    sample_scores, Confusion,
};
use headfree::model::{LabelSequence, Recording, View};
use headfree::rnn::{classify_rnn, train_rnn, RnnModel, RnnSequence};
use headfree::service::{self, Store};
use headfree::signal::{make_velocity_trace, VelocityTrace};
use headfree::synth::generate;

#[derive(Parser)]
#[command(name = "headfree", version, about = "Head-free gaze event detection and evaluation")]
struct Cli {
    /// TOML configuration; every table and key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Condition a recording into a velocity trace file.
    Filter {
        recording: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate a synthetic recording with ground-truth labels.
    Synth {
        /// Configuration whose `[scenario]` table describes the recording.
        scenario: Option<PathBuf>,
        /// Writes `<out>.csv` and `<out>.labels.csv`.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Write the per-sample feature matrix as CSV.
    Features {
        recording: PathBuf,
        /// Adds a `label` column.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train a random forest on labelled recordings.
    TrainRf(TrainArgs),
    /// Train a recurrent network on labelled recordings.
    TrainRnn(TrainArgs),
    /// Label a recording with a trained model.
    Classify {
        recording: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Precomputed trace from `filter`; recomputed from the recording when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Merge and prune events of a label file.
    Clean {
        labels: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare a test labelling against a reference labelling.
    Evaluate {
        reference: PathBuf,
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Sample)]
        metric: Metric,
        /// Run the ELC comparison in both directions.
        #[arg(long)]
        symmetric: bool,
        #[arg(long, value_enum, default_value_t = ViewArg::Collapsed)]
        view: ViewArg,
        /// Label sampling rate for millisecond windows and statistics.
        #[arg(long, default_value_t = 300.0)]
        rate: f64,
        /// Also write the JSON report here; `-` prints it instead of the table.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve the recordings of a directory over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Recordings, or directories whose labelled recordings are all used.
    /// Labels are read from the sibling `<id>.labels.csv`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Recording id (file stem) to hold out.
    #[arg(long)]
    leave_out: Option<String>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Sample,
    Majority,
    Eventf1,
    Eventkappa,
    Eer,
    Elc,
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewArg {
    Collapsed,
    CollapsedWithBlink,
    Full,
}

impl From<ViewArg> for View {
    fn from(v: ViewArg) -> View {
        match v {
            ViewArg::Collapsed => View::Collapsed,
            ViewArg::CollapsedWithBlink => View::CollapsedWithBlink,
            ViewArg::Full => View::Full,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Prefixes parse errors with the file they came from.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        e => e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn load_recording(path: &Path) -> Result<Recording> {
    in_file(path, io::read_recording(&read_text(path)?, None))
}

fn load_labels(path: &Path, expected_len: Option<usize>) -> Result<LabelSequence> {
    in_file(path, io::read_labels(&read_text(path)?, expected_len))
}

fn labels_path(recording: &Path) -> PathBuf {
    let stem = recording.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    recording.with_file_name(format!("{stem}.labels.csv"))
}

fn world_gaze(rec: &Recording) -> Vec<Vector3<f64>> {
    rec.samples().iter().map(|s| s.head_rot * s.eye_dir).collect()
}

struct Labelled {
    id: String,
    trace: VelocityTrace,
    eye: Vec<Vector3<f64>>,
    head: Vec<Vector3<f64>>,
    labels: LabelSequence,
}

fn ids(data: &[Labelled]) -> Vec<&str> {
    data.iter().map(|d| d.id.as_str()).collect()
}

fn training_inputs(args: &TrainArgs, cfg: &Config) -> Result<Vec<Labelled>> {
    let mut paths = Vec::new();
    for p in &args.inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    name.ends_with(".csv") && !name.ends_with(".labels.csv") && !name.ends_with(".trace.csv")
                })
                .collect();
            found.sort();
            paths.extend(found.into_iter().filter(|f| labels_path(f).exists()));
        } else {
            paths.push(p.clone());
        }
    }
    let mut out = Vec::new();
    let mut held_out = false;
    for p in paths {
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if args.leave_out.as_deref() == Some(id.as_str()) {
            held_out = true;
            continue;
        }
        let rec = load_recording(&p)?;
        let labels = load_labels(&labels_path(&p), Some(rec.len()))?;
        let trace = make_velocity_trace(&rec, &cfg.filter)?;
        if trace.len() != rec.len() {
            return Err(Error::InvalidInput("training needs traces at the recording rate (unset filter.resample_hz)".into()));
        }
        out.push(Labelled {
            id,
            trace,
            eye: rec.eye_dirs(),
            head: rec.head_dirs(),
            labels,
        });
    }
    if let Some(id) = &args.leave_out {
        if !held_out {
            return Err(Error::InvalidInput(format!("no recording `{id}` to leave out")));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no training recordings".into()));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Filter { recording, out } => {
            let trace = make_velocity_trace(&load_recording(&recording)?, &cfg.filter)?;
            write_text(&out, io::write_trace(&trace))
        }
        Command::Synth {
            scenario,
            out,
            seed,
            duration,
        } => {
            let mut sc = match scenario {
                Some(p) => Config::load(&p)?.scenario,
                None => cfg.scenario.clone(),
            };
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Some(d) = duration {
                sc.duration_s = d;
            }
            let s = generate(&sc)?;
            let name = out.file_name().and_then(|n| n.to_str()).unwrap_or("synth").to_string();
            write_text(&out.with_file_name(format!("{name}.csv")), io::write_recording(&s.recording))?;
            write_text(&out.with_file_name(format!("{name}.labels.csv")), io::write_labels(&s.labels))
        }
        Command::Features { recording, labels, out } => {
            let rec = load_recording(&recording)?;
            let trace = make_velocity_trace(&rec, &cfg.filter)?;
            let (eye, head) = (rec.eye_dirs(), rec.head_dirs());
            let m = feature_matrix(&trace, &Directions { eye: &eye, head: &head }, &cfg.features)?;
            let labels = match labels {
                Some(p) => Some(load_labels(&p, Some(rec.len()))?),
                None => None,
            };
            let mut text = String::from("sample");
            for j in 0..m.dim {
                write!(text, ",f{j}").expect("writing to a String");
            }
            text.push_str(if labels.is_some() { ",label\n" } else { "\n" });
            for r in 0..m.rows() {
                write!(text, "{}", m.index[r]).expect("writing to a String");
                for v in m.row(r) {
                    write!(text, ",{}", io::fmt9(*v)).expect("writing to a String");
                }
                if let Some(l) = &labels {
                    write!(text, ",{}", l.labels[m.index[r]].name()).expect("writing to a String");
                }
                text.push('\n');
            }
            write_text(&out, &text)
        }
        Command::TrainRf(args) => {
            let data = training_inputs(&args, &cfg)?;
            let mut rows = Vec::new();
            for d in &data {
                let dirs = Directions {
                    eye: &d.eye,
                    head: &d.head,
                };
                rows.extend(training_rows(&d.trace, &dirs, &d.labels.collapsed(), &cfg.features)?);
            }
            let model = train_forest(&dedup_training_set(rows), &cfg.features, &cfg.forest)?;
            write_text(&args.out, model.to_bytes()?)?;
            println!("{}", json!({ "model": "random_forest", "recordings": ids(&data), "fingerprint": model.fingerprint()? }));
            Ok(())
        }
        Command::TrainRnn(args) => {
            let data = training_inputs(&args, &cfg)?;
            let corpus = data
                .iter()
                .map(|d| RnnSequence::from_trace(&d.trace, &d.labels.collapsed()))
                .collect::<Result<Vec<_>>>()?;
            let (model, report) = train_rnn(&corpus, &cfg.rnn)?;
            write_text(&args.out, model.to_bytes()?)?;
            println!(
                "{}",
                json!({ "model": "rnn", "recordings": ids(&data), "final_loss": report.losses.last() })
            );
            Ok(())
        }
        Command::Classify {
            recording,
            model,
            trace,
            out,
        } => {
            let rec = load_recording(&recording)?;
            let trace = match trace {
                Some(p) => in_file(&p, io::read_trace(&read_text(&p)?, rec.rate_hz()))?,
                None => make_velocity_trace(&rec, &cfg.filter)?,
            };
            let bytes = std::fs::read(&model).map_err(io_err(&model))?;
            let labels = match read_header(&bytes)?.kind {
                ModelKind::Forest => {
                    let (eye, head) = (rec.eye_dirs(), rec.head_dirs());
                    classify_rf(&ForestModel::from_bytes(&bytes)?, &trace, &Directions { eye: &eye, head: &head })?
                }
                ModelKind::Rnn => classify_rnn(&RnnModel::from_bytes(&bytes)?, &trace)?,
            };
            write_text(&out, io::write_labels(&labels))
        }
        Command::Clean { labels, recording, out } => {
            let rec = load_recording(&recording)?;
            let seq = load_labels(&labels, Some(rec.len()))?;
            let cleaned = clean_labels(&seq, &world_gaze(&rec), rec.rate_hz(), &cfg.cleaning)?;
            write_text(&out, io::write_labels(&cleaned))
        }
        Command::Evaluate {
            reference,
            test,
            metric,
            symmetric,
            view,
            rate,
            json,
        } => {
            let view = View::from(view);
            let a = load_labels(&reference, None)?;
            let b = load_labels(&test, Some(a.len()))?;
            let (report, table) = evaluate(&a, &b, metric, symmetric, view, rate, &cfg)?;
            match json.as_deref() {
                Some(p) if p == Path::new("-") => println!("{}", serde_json::to_string_pretty(&report).expect("report")),
                Some(p) => {
                    write_text(p, serde_json::to_string_pretty(&report).expect("report"))?;
                    print!("{table}");
                }
                None => print!("{table}"),
            }
            Ok(())
        }
        Command::Serve { port, data, host } => {
            let store = Store::load_dir(&data, &cfg.filter)?;
            eprintln!("serving {} recordings on http://{host}:{port}", store.len());
            tokio::runtime::Runtime::new()?.block_on(service::serve(store, (host, port).into()))
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn confusion_table(names: &[String], c: &Confusion, out: &mut String) {
    let mut header = vec!["ref\\test".to_string()];
    header.extend(names.iter().cloned());
    header.push("NONE".into());
    writeln!(out, "{}", header.iter().map(|h| format!("{h:>9}")).collect::<String>()).expect("writing to a String");
    for (i, row) in c.counts.iter().enumerate() {
        let name = names.get(i).map(String::as_str).unwrap_or("NONE");
        write!(out, "{name:>9}").expect("writing to a String");
        for v in row {
            write!(out, "{v:>9}").expect("writing to a String");
        }
        out.push('\n');
    }
}

fn evaluate(
    a: &LabelSequence,
    b: &LabelSequence,
    metric: Metric,
    symmetric: bool,
    view: View,
    rate: f64,
    cfg: &Config,
) -> Result<(serde_json::Value, String)> {
    if symmetric && !matches!(metric, Metric::Elc) {
        return Err(Error::InvalidInput("--symmetric applies to --metric elc only".into()));
    }
    let tax = view.taxonomy();
    let (ra, rb) = (a.categories(view), b.categories(view));
    let mut t = String::new();
    let result = match metric {
        Metric::Sample => {
            let s = sample_scores(&ra, &rb, &tax)?;
            writeln!(t, "samples {}  accuracy {:.4}  kappa {:.4}  macro-F1 {:.4}", s.evaluated, s.accuracy, s.kappa, s.macro_f1)
                .expect("writing to a String");
            for (name, c) in s.classes.iter().zip(&s.per_class) {
                writeln!(t, "{name:>4}  kappa {}  F1 {}  support {}", opt(c.kappa), opt(c.f1), c.support).expect("writing to a String");
            }
            confusion_table(&s.classes, &s.confusion, &mut t);
            serde_json::to_value(s)
        }
        Metric::Majority => {
            let c = majority_vote_events(&ra, &rb, &tax)?;
            writeln!(t, "event kappa {}", opt(c.kappa())).expect("writing to a String");
            confusion_table(&tax.names, &c, &mut t);
            serde_json::to_value(json!({ "kappa": c.kappa(), "confusion": c }))
        }
        Metric::Eventf1 => {
            let rows = event_f1_earliest(&ra, &rb, &tax, rate)?;
            for r in &rows {
                writeln!(
                    t,
                    "{:>4}  F1 {}  hits {}  misses {}  false alarms {}  onset {} ms  offset {} ms",
                    r.class,
                    opt(r.f1),
                    r.hits,
                    r.misses,
                    r.false_alarms,
                    opt(r.onset_ms.map(|s| s.mean)),
                    opt(r.offset_ms.map(|s| s.mean)),
                )
                .expect("writing to a String");
            }
            serde_json::to_value(rows)
        }
        Metric::Eventkappa => {
            let k = event_kappa_largest(&ra, &rb, &tax)?;
            writeln!(t, "event kappa {}", opt(k.kappa)).expect("writing to a String");
            confusion_table(&tax.names, &k.confusion, &mut t);
            serde_json::to_value(k)
        }
        Metric::Eer => {
            let e = event_error_rate(&ra, &rb)?;
            writeln!(t, "event error rate {e:.4}").expect("writing to a String");
            serde_json::to_value(json!({ "eer": e }))
        }
        Metric::Elc if symmetric => {
            let r = elc_symmetric(&ra, &rb, &tax, rate, &cfg.elc)?;
            writeln!(t, "symmetric ELC kappa {}  asymmetry {}", opt(r.kappa), opt(r.asymmetry)).expect("writing to a String");
            writeln!(t, "forward kappa {}  backward kappa {}", opt(r.forward.kappa), opt(r.backward.kappa)).expect("writing to a String");
            serde_json::to_value(r)
        }
        Metric::Elc => {
            let r = elc_match(&ra, &rb, &tax, rate, &cfg.elc)?;
            writeln!(
                t,
                "ELC kappa {}  matched {}  unmatched {}  detached {}",
                opt(r.kappa),
                r.matched,
                r.unmatched,
                r.detached
            )
            .expect("writing to a String");
            if let (Some(l2), Some(o)) = (r.l2_ms, r.overlap) {
                writeln!(t, "l2 {:.2} ± {:.2} ms  overlap {:.3} ± {:.3}", l2.mean, l2.std, o.mean, o.std).expect("writing to a String");
            }
            for (i, name) in r.classes.iter().enumerate() {
                writeln!(t, "{name:>4}  kappa {}  F1 {}", opt(r.class_kappa[i]), opt(r.class_f1[i])).expect("writing to a String");
            }
            for (label, n) in r.residual_counts() {
                writeln!(t, "residual {label}: {n}").expect("writing to a String");
            }
            confusion_table(&r.classes, &r.confusion, &mut t);
            serde_json::to_value(r)
        }
    }
    .expect("report serializes");
    let name = match metric {
        Metric::Sample => "sample",
        Metric::Majority => "majority",
        Metric::Eventf1 => "eventf1",
        Metric::Eventkappa => "eventkappa",
        Metric::Eer => "eer",
        Metric::Elc => "elc",
    };
    let report = json!({
        "metric": name,
        "symmetric": symmetric,
        "view": view,
        "rate_hz": rate,
        "result": result,
    });
    Ok((report, t))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut body = json!({ "error": e.kind(), "message": e.to_string() });
            if let Error::Parse { line, .. } = &e {
                body["line"] = json!(line);
            }
            eprintln!("{body}");
            ExitCode::from(if matches!(e, Error::Parse { .. }) { 2 } else { 1 })
        }
    }
}
