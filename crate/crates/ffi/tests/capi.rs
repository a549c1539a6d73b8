use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use sste_core::evaluation::{fit_interval_model, ExperimentConfig};
use sste_core::kalman::{IntervalPredictor, KalmanState};
use sste_core::synthgen::{generate_arma_stream, generate_social_dataset, GeneratorConfig};
use sste_ffi::*;

fn last_error() -> String {
    let p = sste_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(sste_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn filter_matches_core() {
    let x = generate_arma_stream(&[0.6], &[0.3], 1.0, 400, 5, &[]).unwrap();
    let (train, test) = x.split_at(300);

    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { sste_model_fit(train.as_ptr(), train.len(), 3, 3, &mut model) },
        SsteStatus::Ok
    );
    let mut filter = ptr::null_mut();
    let status =
        unsafe { sste_filter_new(model, train.as_ptr(), train.len(), 0.0, 60.0, &mut filter) };
    assert_eq!(status, SsteStatus::Ok);

    let fitted = fit_interval_model(train, 3, 3).unwrap();
    let mut reference =
        KalmanState::init(&fitted, train, &ExperimentConfig::default().kalman).unwrap();
    let (mut p, mut q, mut d) = (0, 0, 0);
    assert_eq!(
        unsafe { sste_model_orders(model, &mut p, &mut q, &mut d) },
        SsteStatus::Ok
    );
    assert_eq!(
        (p, q, d),
        (fitted.orders.p, fitted.orders.q, fitted.orders.d)
    );

    for &v in test {
        let mut got = 0.0;
        assert_eq!(
            unsafe { sste_filter_predict_interval(filter, &mut got) },
            SsteStatus::Ok
        );
        assert_eq!(got, reference.predict_interval());
        assert_eq!(unsafe { sste_filter_learn(filter, v) }, SsteStatus::Ok);
        reference.learn_by_kf(v).unwrap();
    }

    let mut len = 0;
    assert_eq!(
        unsafe { sste_filter_phi(filter, ptr::null_mut(), 0, &mut len) },
        SsteStatus::Ok
    );
    let mut phi = vec![0.0; len];
    assert_eq!(
        unsafe { sste_filter_phi(filter, phi.as_mut_ptr(), len, &mut len) },
        SsteStatus::Ok
    );
    assert_eq!(phi, reference.phi_hat());

    let mut tp = SsteTimePrediction {
        interval_hat: 0.0,
        event_time_hat: 0,
        clamped: false,
    };
    assert_eq!(
        unsafe { sste_filter_predict_time(filter, 1_000_000, 500.0, &mut tp) },
        SsteStatus::Ok
    );
    let expected = reference.predict_time(1_000_000, 500.0).unwrap();
    assert_eq!(tp.interval_hat, expected.interval_hat);
    assert_eq!(tp.event_time_hat, expected.event_time_hat);
    assert_eq!(tp.clamped, expected.clamped);

    unsafe {
        sste_filter_free(filter);
        sste_model_free(model);
    }
}

#[test]
fn snapshot_round_trip() {
    let x = generate_arma_stream(&[0.5], &[], 1.0, 200, 8, &[]).unwrap();
    let mut model = ptr::null_mut();
    let mut filter = ptr::null_mut();
    let mut restored = ptr::null_mut();
    let mut json = ptr::null_mut();
    let user = CString::new("u1").unwrap();
    unsafe {
        assert_eq!(
            sste_model_fit_orders(x.as_ptr(), x.len(), 1, 0, 0, &mut model),
            SsteStatus::Ok
        );
        assert_eq!(
            sste_filter_new(model, x.as_ptr(), x.len(), 1e-6, 60.0, &mut filter),
            SsteStatus::Ok
        );
        assert_eq!(sste_filter_learn(filter, 0.7), SsteStatus::Ok);
        assert_eq!(
            sste_filter_to_json(filter, user.as_ptr(), &mut json),
            SsteStatus::Ok
        );
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        assert!(text.contains("\"user\":\"u1\""), "{text}");
        assert_eq!(sste_filter_from_json(json, &mut restored), SsteStatus::Ok);
        sste_string_free(json);

        for v in [0.1, -0.4, 1.3] {
            let (mut a, mut b) = (0.0, 0.0);
            sste_filter_predict_interval(filter, &mut a);
            sste_filter_predict_interval(restored, &mut b);
            assert_eq!(a, b);
            sste_filter_learn(filter, v);
            sste_filter_learn(restored, v);
        }
        sste_filter_free(restored);
        sste_filter_free(filter);
        sste_model_free(model);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut model = ptr::null_mut();
    let status = unsafe { sste_model_fit(ptr::null(), 3, 2, 2, &mut model) };
    assert_eq!(status, SsteStatus::NullPointer);
    assert!(last_error().contains("values"));
    assert!(model.is_null());

    let status = unsafe { sste_model_fit([1.0, 2.0].as_ptr(), 2, 2, 2, ptr::null_mut()) };
    assert_eq!(status, SsteStatus::NullPointer);

    let x = [1.0, 2.0, 1.5, 2.5, 1.0, 2.0];
    let status = unsafe { sste_model_fit_orders(x.as_ptr(), x.len(), 3, 3, 0, &mut model) };
    assert_eq!(status, SsteStatus::InsufficientHistory);
    assert!(last_error().contains("insufficient history"));

    assert_eq!(
        unsafe { sste_model_fit(x.as_ptr(), x.len(), 1, 1, &mut model) },
        SsteStatus::Ok
    );
    let mut filter = ptr::null_mut();
    let status = unsafe { sste_filter_new(model, x.as_ptr(), x.len(), -1.0, 60.0, &mut filter) };
    assert_eq!(status, SsteStatus::InvalidArgument);
    assert!(last_error().contains("process_noise"));
    assert_eq!(
        unsafe { sste_filter_new(model, x.as_ptr(), x.len(), 0.0, 60.0, &mut filter) },
        SsteStatus::Ok
    );
    assert_eq!(
        unsafe { sste_filter_learn(filter, f64::NAN) },
        SsteStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { sste_filter_learn(ptr::null_mut(), 1.0) },
        SsteStatus::NullPointer
    );

    let missing = CString::new("/nonexistent/checkins.csv").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { sste_dataset_load(missing.as_ptr(), missing.as_ptr(), &mut ds) },
        SsteStatus::Io
    );
    assert!(last_error().contains("/nonexistent/checkins.csv"));

    unsafe {
        sste_filter_free(filter);
        sste_model_free(model);
        // freeing NULL is a no-op
        sste_model_free(ptr::null_mut());
        sste_filter_free(ptr::null_mut());
        sste_string_free(ptr::null_mut());
        assert_eq!(sste_events_len(ptr::null()), 0);
        assert_eq!(sste_dataset_checkin_count(ptr::null()), 0);
    }
}

#[test]
fn pipeline_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GeneratorConfig {
        n_users: 12,
        weeks: 30,
        ..GeneratorConfig::default()
    };
    let data = generate_social_dataset(&cfg).unwrap();
    data.write(dir.path()).unwrap();

    let checkins = cstr(&dir.path().join("checkins.csv"));
    let friends = cstr(&dir.path().join("friends.csv"));
    let sites = cstr(&dir.path().join("sites.csv"));
    let events_path = cstr(&dir.path().join("events.jsonl"));
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(
            sste_dataset_load(checkins.as_ptr(), friends.as_ptr(), &mut ds),
            SsteStatus::Ok
        );
        assert_eq!(sste_dataset_checkin_count(ds), data.checkins.len());

        let mut events = ptr::null_mut();
        assert_eq!(sste_detect(ds, 3600, 200.0, 2, &mut events), SsteStatus::Ok);
        let n_events = sste_events_len(events);
        assert!(
            n_events >= data.events.len() * 9 / 10,
            "{n_events} of {}",
            data.events.len()
        );

        assert_eq!(
            sste_detect(ds, 0, 200.0, 2, &mut ptr::null_mut()),
            SsteStatus::InvalidArgument
        );

        assert_eq!(
            sste_events_write(events, events_path.as_ptr()),
            SsteStatus::Ok
        );
        let mut reread = ptr::null_mut();
        assert_eq!(
            sste_events_read(events_path.as_ptr(), &mut reread),
            SsteStatus::Ok
        );
        assert_eq!(sste_events_len(reread), n_events);

        let mut regions = ptr::null_mut();
        assert_eq!(
            sste_regions_load(sites.as_ptr(), &mut regions),
            SsteStatus::Ok
        );
        let site = data.sites.sites()[3];
        let mut id = u32::MAX;
        assert_eq!(
            sste_regions_assign(regions, site.coords.lat, site.coords.lon, &mut id),
            SsteStatus::Ok
        );
        assert_eq!(id, site.id);
        assert_eq!(
            sste_regions_assign(regions, 95.0, 0.0, &mut id),
            SsteStatus::InvalidArgument
        );

        let mut json = ptr::null_mut();
        assert_eq!(
            sste_predict_jsonl(ds, reread, regions, 1.0, 3, &mut json),
            SsteStatus::Ok
        );
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        sste_string_free(json);
        let lines: Vec<serde_json::Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), cfg.n_users);
        for line in &lines {
            let preds = line["predictions"].as_array().unwrap();
            assert!(!preds.is_empty() && preds.len() <= 3);
            for p in preds {
                assert_eq!(p["g"], p["g_temporal"]);
            }
        }

        sste_regions_free(regions);
        sste_events_free(reread);
        sste_events_free(events);
        sste_dataset_free(ds);
    }
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sste.h"))
            .unwrap();
    let source =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from sste.h"
        );
    }
    for ty in [
        "SsteModel",
        "SsteFilter",
        "SsteDataset",
        "SsteEvents",
        "SsteRegions",
    ] {
        assert!(
            header.contains(&format!("typedef struct {ty} {ty};")),
            "{ty} is not opaque"
        );
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sste.h");
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
