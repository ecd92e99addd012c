mod common;

use std::fs;

use glap_harness::experiment::{checkpoint_path, eigenspectrum_path, run_stage, samples_path, RunOptions, Stage};
use glap_harness::{run_experiment, ResultsRecord};

fn strip_times(mut r: ResultsRecord) -> ResultsRecord {
    r.provenance.started_at = 0;
    r.provenance.finished_at = 0;
    r
}

#[test]
fn sine_map_fits_and_artifacts_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::with_output(common::SINE, dir.path());
    let rec = run_experiment(&cfg).unwrap();
    let keys: Vec<&str> = rec.metrics.keys().map(String::as_str).collect();
    let mut want: Vec<&str> = cfg.eval.metrics.iter().map(String::as_str).collect();
    want.sort();
    assert_eq!(keys, want);
    for m in &rec.per_seed {
        assert!(m["map_train_rmse"] < 0.1, "{m:?}");
    }
    for &s in &cfg.seeds {
        assert!(checkpoint_path(dir.path(), s).exists());
        assert!(samples_path(dir.path(), s).exists());
        assert!(eigenspectrum_path(dir.path(), s).exists());
    }
    let on_disk = ResultsRecord::from_json(&fs::read(dir.path().join("results.json")).unwrap()).unwrap();
    assert_eq!(on_disk, rec);
    let csv = fs::read_to_string(dir.path().join("results_metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + cfg.seeds.len() + 2);
}

#[test]
fn reruns_are_identical_up_to_timestamps() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&common::with_output(common::SINE, a.path())).unwrap();
    let rb = run_experiment(&common::with_output(common::SINE, b.path())).unwrap();
    assert_eq!(strip_times(ra), strip_times(rb));
    for name in [
        "checkpoint_seed0.bin",
        "samples_seed1.bin",
        "eigenspectrum_seed0.csv",
        "results_metrics.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn sequential_and_parallel_agree() {
    let mut cfg = common::parse(common::SINE);
    let dry = RunOptions {
        reuse_checkpoints: false,
        dry: true,
    };
    cfg.execution = glap_core::Execution::Sequential;
    let (seq, _) = run_stage(&cfg, Stage::Evaluate, dry).unwrap();
    cfg.execution = glap_core::Execution::Parallel;
    let (par, _) = run_stage(&cfg, Stage::Evaluate, dry).unwrap();
    assert_eq!(seq.per_seed, par.per_seed);
}

#[test]
fn checkpoints_are_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::with_output(common::SINE, dir.path());
    let (first, _) = run_stage(&cfg, Stage::Train, RunOptions::default()).unwrap();
    let reuse = RunOptions {
        reuse_checkpoints: true,
        dry: false,
    };
    let (_, replicas) = run_stage(&cfg, Stage::Sample, reuse).unwrap();
    assert!(replicas.iter().all(|r| r.train.loss_trace.is_empty()));
    assert!(first.per_seed.iter().all(|m| m["final_objective"].is_finite()));
}

#[test]
fn mixture_draws_center_on_the_map() {
    let cfg = common::parse(common::MIXTURE);
    let dry = RunOptions {
        reuse_checkpoints: false,
        dry: true,
    };
    let (rec, replicas) = run_stage(&cfg, Stage::Evaluate, dry).unwrap();
    let r = &replicas[0];
    let s = r.samples.draws.len() as f64;
    for j in 0..r.samples.w_hat.len() {
        let xs: Vec<f64> = r.samples.draws.iter().map(|d| d[j]).collect();
        let mean = xs.iter().sum::<f64>() / s;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s - 1.0);
        // CLT: 5 standard errors
        assert!(
            (mean - r.samples.w_hat[j]).abs() < 5.0 * (var / s).sqrt(),
            "coordinate {j}"
        );
        // prior variance bounds every marginal
        assert!(var < 1.1 / cfg.sampler.alpha, "coordinate {j}: {var}");
    }
    assert!(rec.per_seed[0]["map_test_accuracy"] > 0.8, "{:?}", rec.per_seed[0]);
}

#[test]
fn sampled_laplace_marginals_match_the_low_rank_covariance() {
    let mut cfg = common::parse(common::SINE);
    cfg.seeds = vec![2];
    cfg.sampler.samples = 20_000;
    let dry = RunOptions {
        reuse_checkpoints: false,
        dry: true,
    };
    let (_, replicas) = run_stage(&cfg, Stage::Sample, dry).unwrap();
    let r = &replicas[0];
    let (u, alpha) = (&r.eigen.basis, cfg.sampler.alpha);
    let s = r.samples.draws.len() as f64;
    for j in 0..u.nrows() {
        // diag of U (L + a)^-1 U^T + (I - U U^T) / a
        let mut want = 1.0 / alpha;
        for (i, &l) in r.eigen.lambdas.iter().enumerate() {
            want += u[(j, i)].powi(2) * (1.0 / (l + alpha) - 1.0 / alpha);
        }
        let got = r
            .samples
            .draws
            .iter()
            .map(|d| (d[j] - r.samples.w_hat[j]).powi(2))
            .sum::<f64>()
            / s;
        // the sample variance has relative sd sqrt(2 / S), about 1%
        assert!((got / want - 1.0).abs() < 0.05, "coordinate {j}: {got} vs {want}");
    }
}
