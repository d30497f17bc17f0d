use super::*;
use crate::error::Error;
use crate::output::Format;
use proptest::prelude::*;
use std::path::PathBuf;

fn layer(text: &str) -> ConfigLayer {
    ConfigLayer::from_toml(text).unwrap()
}

#[test]
fn kerr_drive_is_filled_in() {
    let cfg = RunConfig::resolve(layer(
        "experiment = \"kerr\"\nkappa_a = 1.0\nkappa_b = 4.0\nchi = 0.1\n",
    ))
    .unwrap();
    assert_eq!(cfg.beta, Some(4.0));
    assert!((cfg.kerr().unwrap().delta_beta() - 0.1).abs() < 1e-15);
}

#[test]
fn defaults_follow_the_cavity_rate() {
    let cfg = RunConfig::resolve(layer("kappa = 2.0")).unwrap();
    assert_eq!(cfg.gamma, 2.0);
    assert_eq!(cfg.dim_a, 3);
    assert_eq!(cfg.dt, 5e-4);
    assert_eq!(cfg.t_end, 6.0);
    assert_eq!(cfg.experiment, Experiment::SingleMode);
    assert_eq!(cfg.series, ALL_SERIES.to_vec());
}

#[test]
fn non_positive_step_is_rejected() {
    for dt in ["0.0", "-1e-3"] {
        let e = RunConfig::resolve(layer(&format!("dt = {dt}"))).unwrap_err();
        assert!(
            matches!(&e, Error::Validation { field, .. } if field == "dt"),
            "{e}"
        );
        assert_eq!(e.exit_code(), 2);
    }
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "seed = 3\nn_traj = 5\n").unwrap();
    let flags = ConfigLayer {
        master_seed: Some(7),
        ..Default::default()
    };
    let cfg = parse_config(Some(&path), flags).unwrap();
    assert_eq!(cfg.master_seed, 7);
    assert_eq!(cfg.n_traj, 5);
}

#[test]
fn unknown_keys_list_the_valid_ones() {
    let e = ConfigLayer::from_toml("kapa = 1.0")
        .unwrap_err()
        .to_string();
    assert!(
        e.contains("kapa") && e.contains("kappa_a") && e.contains("n_traj"),
        "{e}"
    );
}

#[test]
fn invalid_combinations() {
    let e =
        RunConfig::resolve(layer("experiment = \"kerr\"\nrepresentation = \"sse\"")).unwrap_err();
    assert!(matches!(e, Error::Unsupported(_)));
    let e = RunConfig::resolve(layer("chi = 0.1")).unwrap_err();
    assert!(matches!(&e, Error::Validation { field, .. } if field == "chi"));
    let e =
        RunConfig::resolve(layer("experiment = \"me_only\"\nscheme = \"homodyne\"")).unwrap_err();
    assert!(matches!(&e, Error::Validation { field, .. } if field == "scheme"));
    assert!(RunConfig::resolve(layer("n_traj = 0")).is_err());
    assert!(RunConfig::resolve(layer("kappa_a = -1.0")).is_err());
}

#[test]
fn hash_ignores_output_settings() {
    let a = RunConfig::resolve(layer("kappa = 1.0")).unwrap();
    let b = RunConfig::resolve(layer(
        "kappa = 1.0\noutput_dir = \"elsewhere\"\nformat = \"json\"\nworkers = 3",
    ))
    .unwrap();
    let c = RunConfig::resolve(layer("kappa = 1.0\nseed = 1")).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
    assert_eq!(a.content_hash().len(), 64);
}

fn out_dir(d: &tempfile::TempDir, name: &str) -> PathBuf {
    d.path().join(name)
}

#[test]
fn me_only_peak() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::resolve(layer("experiment = \"me_only\"")).unwrap();
    cfg.output_dir = out_dir(&d, "me");
    let r = run_ensemble(&cfg).unwrap();
    let paths = write_outputs(&r, &cfg).unwrap();
    let csv = paths.iter().find(|p| p.ends_with("n11.csv")).unwrap();
    let mut rdr = csv::Reader::from_path(csv).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header, vec!["t", "n11", "closed_form"]);
    let rows: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect();
    let (t, n) = rows
        .iter()
        .copied()
        .fold((0.0, 0.0), |b, x| if x.1 > b.1 { x } else { b });
    assert!((n - 0.54134).abs() < 1e-4);
    assert!((t - 2.0).abs() <= 0.01);
    let summary = read_summary(&cfg.output_dir.join("summary.json")).unwrap();
    assert!((summary["peak_n11"]["value"].as_f64().unwrap() - n).abs() < 1e-8);
    let meta = read_summary(&cfg.output_dir.join("metadata.json")).unwrap();
    assert_eq!(meta["config_hash"].as_str().unwrap(), cfg.content_hash());
}

fn short_cfg(extra: &str) -> RunConfig {
    let base = layer("t_end = 3.0\nn_traj = 12\nseed = 5\nsaved_trajectories = 2");
    RunConfig::resolve(base.overlay(layer(extra))).unwrap()
}

#[test]
fn result_does_not_depend_on_worker_count() {
    for scheme in ["photodetect", "homodyne"] {
        let mut cfg = short_cfg(&format!("scheme = \"{scheme}\""));
        cfg.workers = 1;
        let a = serde_json::to_string(&run_ensemble(&cfg).unwrap()).unwrap();
        cfg.workers = 3;
        let b = serde_json::to_string(&run_ensemble(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn sse_ensemble_matches_sme_ensemble() {
    let sme = run_ensemble(&short_cfg("")).unwrap();
    let sse = run_ensemble(&short_cfg("representation = \"sse\"")).unwrap();
    assert_eq!(sme.counts, sse.counts);
    for (x, y) in sme.mean[0].iter().zip(&sse.mean[0]) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn counts_and_saved_outputs() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = short_cfg("t_end = 12.0");
    cfg.output_dir = out_dir(&d, "pd");
    let r = run_ensemble(&cfg).unwrap();
    let c = r.counts.unwrap();
    assert_eq!(c.zero + c.one + c.two_or_more, 12);
    assert_eq!(c.two_or_more, 0);
    assert_eq!(r.successes + r.failures.len(), r.n_traj);
    assert_eq!(r.saved.len(), 2);
    assert!(r.stderr[0].iter().all(|&s| s >= 0.0));
    write_outputs(&r, &cfg).unwrap();
    for f in [
        "mean.csv",
        "trajectory_0.csv",
        "jumps_1.csv",
        "rates_0.csv",
        "summary.json",
        "metadata.json",
    ] {
        assert!(cfg.output_dir.join(f).exists(), "{f}");
    }
    let head = std::fs::read_to_string(cfg.output_dir.join("trajectory_0.csv")).unwrap();
    assert!(head.starts_with("t,n11,nu\n"));
}

#[test]
fn homodyne_record_file() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = short_cfg("scheme = \"homodyne\"\nn_traj = 1\nseries = [\"records\"]");
    cfg.output_dir = out_dir(&d, "hd");
    let r = run_ensemble(&cfg).unwrap();
    write_outputs(&r, &cfg).unwrap();
    let text = std::fs::read_to_string(cfg.output_dir.join("record_0.csv")).unwrap();
    assert!(text.starts_with("t,dY\n"));
    assert_eq!(text.lines().count(), 3001);
    assert!(!cfg.output_dir.join("mean.csv").exists());
}

#[test]
fn json_carries_the_csv_numbers() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = short_cfg("n_traj = 3");
    let r = run_ensemble(&cfg).unwrap();
    cfg.output_dir = out_dir(&d, "csv");
    write_outputs(&r, &cfg).unwrap();
    cfg.output_dir = out_dir(&d, "json");
    cfg.format = Format::Json;
    write_outputs(&r, &cfg).unwrap();
    let mut rdr = csv::Reader::from_path(d.path().join("csv/mean.csv")).unwrap();
    let cols: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("json/mean.json")).unwrap())
            .unwrap();
    for (k, c) in cols.iter().enumerate() {
        let arr = json[c].as_array().unwrap();
        assert_eq!(arr.len(), rows.len());
        for (row, v) in rows.iter().zip(arr) {
            assert_eq!(row[k], v.as_f64().unwrap());
        }
    }
}

#[test]
fn kerr_run_reports_shifts() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::resolve(layer(
        "experiment = \"kerr\"\nkappa_b = 4.0\nchi = 0.1\nn_traj = 100\nt_end = 4.0\ndt = 4e-3\nstop_after_jump = true\nsaved_trajectories = 1",
    ))
    .unwrap();
    cfg.output_dir = out_dir(&d, "kerr");
    let r = run_ensemble(&cfg).unwrap();
    assert!(r.mean.is_empty());
    let s = r.shifts.as_ref().unwrap();
    assert_eq!(s.values.len(), 100);
    assert!(s.histogram.is_some());
    write_outputs(&r, &cfg).unwrap();
    let hist = std::fs::read_to_string(cfg.output_dir.join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_left,bin_right,count\n"));
    assert_eq!(hist.lines().count(), 41);
    let traj = std::fs::read_to_string(cfg.output_dir.join("trajectory_0.csv")).unwrap();
    assert!(traj.starts_with("t,n_a,X_b,P_b,nu\n"));
    let meta = read_summary(&cfg.output_dir.join("metadata.json")).unwrap();
    assert_eq!(meta["frame"], "displaced");
    assert!(meta["shift_definition"]
        .as_str()
        .unwrap()
        .contains("Re<b>_11"));
    let summary = read_summary(&cfg.output_dir.join("summary.json")).unwrap();
    assert!(summary["shifts"]["median"].as_f64().unwrap() > 0.0);
}

#[test]
fn ensemble_aborts_on_systematic_failure() {
    // ν dt far beyond the per-step jump cap
    let cfg = RunConfig::resolve(layer("dt = 0.4\nn_traj = 4\nt_end = 4.0")).unwrap();
    let e = run_ensemble(&cfg).unwrap_err();
    assert!(
        matches!(
            e,
            Error::EnsembleAborted {
                failed: 4,
                total: 4,
                ..
            }
        ),
        "{e}"
    );
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let file = d.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let mut cfg = RunConfig::resolve(layer("experiment = \"me_only\"\nt_end = 0.1")).unwrap();
    cfg.output_dir = file.join("sub");
    let r = run_ensemble(&cfg).unwrap();
    let e = write_outputs(&r, &cfg).unwrap_err();
    assert_eq!(e.exit_code(), 4);
}

proptest! {
    #[test]
    fn fixed_sums_merge_exactly(v in prop::collection::vec(-50.0f64..50.0, 1..200), cut in 0usize..200) {
        let cut = cut.min(v.len());
        let mut whole = FixedSum::default();
        v.iter().for_each(|&x| whole.add(x));
        let (mut a, mut b) = (FixedSum::default(), FixedSum::default());
        v[..cut].iter().for_each(|&x| a.add(x));
        v[cut..].iter().rev().for_each(|&x| b.add(x));
        b.merge(a);
        prop_assert_eq!(whole, b);
        let naive: f64 = v.iter().sum();
        prop_assert!((whole.value() - naive).abs() < 1e-9);
    }
}
