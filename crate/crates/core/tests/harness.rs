use std::path::Path;
use std::process::Command;

use ec3::adapter::TrainConfig;
use ec3::harness::{cmd_evaluate, cmd_sweep, cmd_synth_gen, cmd_train, cmd_verify_bounds, ExperimentConfig, RunReport};
use ec3::metrics::{EvalOptions, MeanStd};
use ec3::synth::{Distortion, SynthConfig};

fn quick(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        synth: Some(SynthConfig { n: 3000, ..Default::default() }),
        n_conformal_splits: 4,
        eval: EvalOptions { wsc_directions: 20, ..Default::default() },
        out: out.to_path_buf(),
        seed: 3,
        ..Default::default()
    }
}

fn write_csv(path: &Path, rows: impl Iterator<Item = String>) {
    std::fs::write(path, rows.collect::<Vec<_>>().join("\n") + "\n").unwrap();
}

#[test]
fn evaluate_on_calibrated_data_hits_target_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        synth: Some(SynthConfig { n: 10_000, distortion: Distortion::None, ..Default::default() }),
        n_conformal_splits: 20,
        ..quick(tmp.path())
    };
    let r = cmd_evaluate(&cfg).unwrap();
    let agg = r.aggregate.unwrap();
    assert!((agg.coverage.mean - 0.9).abs() < 0.01, "{}", agg.coverage.mean);
    assert!(agg.coverage.std.is_some());
    assert_eq!(r.splits.len(), 20);
}

#[test]
fn aggregates_match_split_records() {
    let tmp = tempfile::tempdir().unwrap();
    let r = cmd_evaluate(&quick(tmp.path())).unwrap();
    let agg = r.aggregate.unwrap();
    let eff: Vec<f64> = r.splits.iter().map(|s| s.report.efficiency).collect();
    let cov: Vec<f64> = r.splits.iter().map(|s| s.report.coverage).collect();
    assert_eq!(agg.efficiency, MeanStd::of(&eff));
    assert_eq!(agg.coverage, MeanStd::of(&cov));
    for (i, s) in r.splits.iter().enumerate() {
        assert_eq!(s.seed, 3 + i as u64);
    }
}

#[test]
fn single_split_has_no_std() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { n_conformal_splits: 1, ..quick(tmp.path()) };
    let agg = cmd_evaluate(&cfg).unwrap().aggregate.unwrap();
    assert_eq!(agg.coverage.std, None);
    assert_eq!(agg.efficiency.std, None);
}

#[test]
fn uniform_predictions_give_near_full_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let n = 2000;
    let probs = tmp.path().join("probs.csv");
    let labels = tmp.path().join("labels.csv");
    write_csv(&probs, (0..n).map(|_| ["0.1"; 10].join(",")));
    write_csv(&labels, (0..n).map(|i| ((i * 7) % 10).to_string()));
    let cfg = ExperimentConfig {
        probs: Some(probs),
        labels: Some(labels),
        synth: None,
        ..quick(&tmp.path().join("out"))
    };
    let eff = cmd_evaluate(&cfg).unwrap().aggregate.unwrap().efficiency.mean;
    assert!((eff - 9.0).abs() <= 1.0, "{eff}");
}

#[test]
fn unit_temperature_sweep_matches_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { n_conformal_splits: 1, grid: Some(vec![1.0]), ..quick(tmp.path()) };
    let eval = cmd_evaluate(&cfg).unwrap();
    let sweep = cmd_sweep(&cfg).unwrap();
    assert_eq!(sweep.sweep.len(), 1);
    let p = &sweep.sweep[0];
    let s = &eval.splits[0].report;
    assert_eq!(p.coverage, s.coverage);
    assert_eq!(p.efficiency, s.efficiency);
    assert_eq!(p.mean_entropy, s.mean_entropy);
}

#[test]
fn sweep_csv_has_one_row_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = vec![0.5, 1.0, 2.0, 4.0, 8.0];
    let cfg = ExperimentConfig { grid: Some(grid.clone()), entropy_threshold: Some(0.0), ..quick(tmp.path()) };
    let r = cmd_sweep(&cfg).unwrap();
    assert!(r.selection.is_none());
    assert_eq!(r.warnings.len(), 1);
    r.write(tmp.path()).unwrap();
    let mut rd = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap();
    let temps: Vec<f64> = rd.records().map(|rec| rec.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(temps, grid);
}

#[test]
fn bounds_without_oracle_warn_but_fuzz() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let gen = ExperimentConfig { out: data.clone(), ..quick(tmp.path()) };
    cmd_synth_gen(&gen).unwrap();
    let cfg = ExperimentConfig {
        synth: None,
        probs: Some(data.join("probs.csv")),
        labels: Some(data.join("labels.csv")),
        bounds: ec3::harness::BoundsConfig { fuzz_samples: 500, fuzz_ks: vec![2, 7], trials: 3, ..Default::default() },
        ..quick(&tmp.path().join("out"))
    };
    let r = cmd_verify_bounds(&cfg).unwrap();
    assert!(r.warnings.iter().any(|w| w.contains("oracle")));
    assert!(r.bounds.iter().all(|b| b.passed));
    // the one-hot K=2 tightness case reports zero slack
    assert!(r.bounds.iter().flat_map(|b| &b.details).any(|d| d.slack == 0.0 && d.lhs == 1.0));

    let with_oracle = ExperimentConfig { oracle: Some(data.join("oracle.csv")), ..cfg };
    let r = cmd_verify_bounds(&with_oracle).unwrap();
    assert!(r.warnings.is_empty());
    assert!(r.bounds.iter().any(|b| b.trials == 3));
}

#[test]
fn train_with_plain_cross_entropy_writes_adapter_only_to_out() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    cmd_synth_gen(&ExperimentConfig { out: data.clone(), ..quick(tmp.path()) }).unwrap();
    let before = std::fs::read(data.join("probs.csv")).unwrap();
    let out = tmp.path().join("out");
    let cfg = ExperimentConfig {
        synth: None,
        probs: Some(data.join("probs.csv")),
        labels: Some(data.join("labels.csv")),
        train: TrainConfig { beta: 0.0, gamma: 0.0, epochs: 3, hidden: vec![24], ..Default::default() },
        repeats: 2,
        ..quick(&out)
    };
    let r = cmd_train(&cfg).unwrap();
    assert_eq!(r.training.len(), 2);
    assert_eq!(r.training[1].seed, 4);
    for t in &r.training {
        assert!(t.adapter_path.starts_with(&out));
        assert!(t.adapter_path.exists());
        assert!(t.history.iter().all(|h| h.loss.ineff == 0.0 && h.loss.cond == 0.0));
        // gamma 0 and beta 0: the total is the cross-entropy
        assert!(t.history.iter().all(|h| h.loss.total == h.loss.focal));
    }
    assert_eq!(r.splits.len(), 8);
    assert_eq!(r.baseline_splits.len(), 4);
    assert_eq!(std::fs::read(data.join("probs.csv")).unwrap(), before);

    // the trained adapter can be fed back into evaluate
    let eval = ExperimentConfig { adapter: Some(r.training[0].adapter_path.clone()), ..cfg };
    let e = cmd_evaluate(&eval).unwrap();
    assert_eq!(e.splits, r.splits[..4]);
}

#[test]
fn embedded_config_reproduces_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let r = cmd_evaluate(&quick(tmp.path())).unwrap();
    r.write(tmp.path()).unwrap();
    let text = std::fs::read_to_string(tmp.path().join("report.json")).unwrap();
    let back: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.provenance.config_hash, back.config.hash());
    let again = cmd_evaluate(&back.config).unwrap();
    assert_eq!(again.splits, r.splits);
}

fn ec3(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ec3")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn cli_exit_codes_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "n_conformal_splits = 2\nseed = 5\n\n[synth]\nn = 2000\n\n[eval]\nwsc_directions = 10\n",
    )
    .unwrap();
    let cfg = config.to_str().unwrap();

    let (code, _, err) = ec3(&["evaluate", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    let (code, _, _) = ec3(&["evaluate", "--config", cfg, "--alpha", "2"]);
    assert_eq!(code, 2);

    let out = tmp.path().join("o");
    let (code, stdout, err) =
        ec3(&["evaluate", "--config", cfg, "--alpha", "0.2", "--score", "raps", "--seed", "9", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("coverage"));
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.config.alpha, 0.2);
    assert_eq!(report.config.seed, 9);
    assert_eq!(report.config.score.kind, ec3::scores::ScoreKind::Raps);
    assert!(out.join("splits.csv").exists());

    std::fs::write(tmp.path().join("bad.toml"), "alpha = 0.1\nnot_a_key = 3\n").unwrap();
    let (code, _, _) = ec3(&["evaluate", "--config", tmp.path().join("bad.toml").to_str().unwrap()]);
    assert_eq!(code, 2);
}
