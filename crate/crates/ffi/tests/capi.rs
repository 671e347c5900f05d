use std::ffi::{CStr, CString};
use std::ptr;

use headfree::io::write_recording;
use headfree::synth::{generate, ScenarioConfig};
use headfree_ffi::*;

fn last_error() -> String {
    let p = hf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn codes(labels: &headfree::model::LabelSequence) -> Vec<i32> {
    labels
        .categories(headfree::model::View::Collapsed)
        .into_iter()
        .map(|c| c.map_or(-1, |c| c as i32))
        .collect()
}

#[test]
fn recording_and_trace_handles() {
    let s = generate(&ScenarioConfig {
        duration_s: 4.0,
        seed: 3,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let csv = CString::new(write_recording(&s.recording)).unwrap();
    unsafe {
        let mut rec = ptr::null_mut();
        assert_eq!(hf_recording_parse(csv.as_ptr(), 0.0, &mut rec), HfStatus::Ok);
        assert_eq!(hf_recording_len(rec), 1200);
        let mut trace = ptr::null_mut();
        assert_eq!(hf_trace_compute(rec, ptr::null(), &mut trace), HfStatus::Ok);
        let n = hf_trace_len(trace);
        let mut buf = vec![0.0; n];
        assert_eq!(hf_trace_channel(trace, 0, buf.as_mut_ptr(), n), HfStatus::Ok);
        let parsed = headfree::io::read_recording(csv.to_str().unwrap(), None).unwrap();
        let expected = headfree::signal::make_velocity_trace(&parsed, &Default::default()).unwrap();
        assert_eq!(buf, expected.eye_abs);
        assert_eq!(hf_trace_channel(trace, 6, buf.as_mut_ptr(), n), HfStatus::InvalidInput);
        assert_eq!(hf_trace_channel(trace, 0, buf.as_mut_ptr(), n - 1), HfStatus::LengthMismatch);
        hf_trace_free(trace);
        hf_recording_free(rec);
    }
}

#[test]
fn parse_errors_report_the_line() {
    let csv = CString::new("t_s,eye_x,eye_y,eye_z,head_qw,head_qx,head_qy,head_qz,confidence\n0,0,0,1,1,0,0,0,oops\n").unwrap();
    let mut rec = ptr::null_mut();
    let st = unsafe { hf_recording_parse(csv.as_ptr(), 300.0, &mut rec) };
    assert_eq!(st, HfStatus::Parse);
    assert!(rec.is_null());
    assert!(last_error().contains("line 2"), "{}", last_error());
    assert_eq!(unsafe { hf_recording_parse(ptr::null(), 300.0, &mut rec) }, HfStatus::NullPointer);
}

#[test]
fn metrics_match_the_library() {
    let a = generate(&ScenarioConfig {
        duration_s: 6.0,
        seed: 1,
        ..ScenarioConfig::default()
    })
    .unwrap()
    .labels;
    // the same recording with every sample shifted by three
    let mut b = a.clone();
    b.labels.rotate_right(3);
    let (ca, cb) = (codes(&a), codes(&b));
    let tax = headfree::model::View::Collapsed.taxonomy();
    let (ra, rb) = (
        a.categories(headfree::model::View::Collapsed),
        b.categories(headfree::model::View::Collapsed),
    );
    unsafe {
        let mut k = 0.0;
        assert_eq!(hf_sample_kappa(ca.as_ptr(), cb.as_ptr(), ca.len(), HfView::Collapsed, &mut k), HfStatus::Ok);
        assert_eq!(k, headfree::metrics::sample_scores(&ra, &rb, &tax).unwrap().kappa);

        let mut eer = 0.0;
        assert_eq!(hf_event_error_rate(ca.as_ptr(), cb.as_ptr(), ca.len(), &mut eer), HfStatus::Ok);
        assert_eq!(eer, headfree::metrics::event_error_rate(&ra, &rb).unwrap());

        let mut json = ptr::null_mut();
        let st = hf_elc(ca.as_ptr(), cb.as_ptr(), ca.len(), HfView::Collapsed, 300.0, false, &mut k, &mut json);
        assert_eq!(st, HfStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        hf_string_free(json);
        let direct = headfree::metrics::elc_match(&ra, &rb, &tax, 300.0, &Default::default()).unwrap();
        assert_eq!(Some(k), direct.kappa);
        assert_eq!(report["matched"], direct.matched);

        let st = hf_elc(ca.as_ptr(), ca.as_ptr(), ca.len(), HfView::Collapsed, 300.0, true, &mut k, ptr::null_mut());
        assert_eq!(st, HfStatus::Ok);
        assert_eq!(k, 1.0);

        let bad = vec![-2; ca.len()];
        assert_eq!(
            hf_sample_kappa(ca.as_ptr(), bad.as_ptr(), ca.len(), HfView::Collapsed, &mut k),
            HfStatus::InvalidInput
        );
    }
}

#[test]
fn model_round_trip_classifies_like_the_library() {
    use headfree::features::{dedup_training_set, training_rows, Directions, FeatureConfig};
    use headfree::forest::{classify_rf, train_forest, ForestConfig};
    let s = generate(&ScenarioConfig {
        duration_s: 8.0,
        seed: 5,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let trace = headfree::signal::make_velocity_trace(&s.recording, &Default::default()).unwrap();
    let (eye, head) = (s.recording.eye_dirs(), s.recording.head_dirs());
    let dirs = Directions { eye: &eye, head: &head };
    let fc = FeatureConfig::default();
    let rows = training_rows(&trace, &dirs, &s.labels.collapsed(), &fc).unwrap();
    let forest_cfg = ForestConfig {
        n_trees: 4,
        ..ForestConfig::default()
    };
    let model = train_forest(&dedup_training_set(rows), &fc, &forest_cfg).unwrap();
    let bytes = model.to_bytes().unwrap();

    let csv = CString::new(write_recording(&s.recording)).unwrap();
    let parsed = headfree::io::read_recording(csv.to_str().unwrap(), None).unwrap();
    let parsed_trace = headfree::signal::make_velocity_trace(&parsed, &Default::default()).unwrap();
    let (eye, head) = (parsed.eye_dirs(), parsed.head_dirs());
    let expected = codes(&classify_rf(&model, &parsed_trace, &Directions { eye: &eye, head: &head }).unwrap());
    unsafe {
        let (mut m, mut rec, mut tr) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(hf_model_load(bytes.as_ptr(), bytes.len(), &mut m), HfStatus::Ok);
        assert_eq!(hf_recording_parse(csv.as_ptr(), 0.0, &mut rec), HfStatus::Ok);
        assert_eq!(hf_trace_compute(rec, ptr::null(), &mut tr), HfStatus::Ok);
        let mut out = vec![0; hf_trace_len(tr)];
        assert_eq!(hf_model_classify(m, rec, tr, out.as_mut_ptr(), out.len()), HfStatus::Ok);
        assert_eq!(out, expected);
        hf_trace_free(tr);
        hf_recording_free(rec);
        hf_model_free(m);

        let mut m2 = ptr::null_mut();
        assert_eq!(hf_model_load(bytes.as_ptr(), 16, &mut m2), HfStatus::Format);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/headfree.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ HfRecording *r = 0; hf_recording_free(r); return HF_STATUS_OK; }}\n"
        ),
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror"])
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
