//! End-to-end behavior of the `jiio` binary: exit codes, configuration
//! errors, checkpoint reuse and benchmark edge cases.

use std::path::Path;
use std::process::{Command, Output};

use jiio_cli::bench::{bench_efficiency, efficiency_jiio, evals_to_reach, latent_suite};
use jiio_core::baselines::{sequential_input_opt, SequentialConfig};
use jiio_core::layer::LayerKind;

fn jiio(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_jiio"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("run.toml");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn successful_run_exits_zero_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = jiio(&["bench-solvers"], Some("[bench]\ninstances = 1\n"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("out/solvers.csv")).unwrap();
    assert!(table.starts_with("problem,solver,iterations"));
    assert!(dir.path().join("out/trace_affine_naive.csv").exists());
}

#[test]
fn configuration_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = jiio(&["latent"], Some("[solver]\nbogus = 1\n"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"));

    let o = jiio(&["gradcheck"], Some("[gradcheck]\nh = abc\n"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("abc"));

    let o = jiio(&["latent"], Some("no section here\n"), dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_files_and_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = jiio(&["latent", "--config", "/nonexistent/run.toml"], None, dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = jiio(&["invprob"], None, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--mode"));
}

#[test]
fn numerical_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = jiio(&["latent"], Some("[solver]\ntol = -1\n"), dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"XXXX").unwrap();
    let config = format!("[model]\ncheckpoint = {}\n", ckpt.display());
    let o = jiio(&["latent"], Some(&config), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("magic"));
}

#[test]
fn trained_checkpoint_is_reused_by_latent_fitting() {
    let dir = tempfile::tempdir().unwrap();
    let train = "[train]\nsteps = 3\nbatch = 2\n[data]\ncount = 8\ntest_count = 2\n";
    let o = jiio(&["fit-gen", "--seed", "4"], Some(train), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = dir.path().join("out/model.ckpt");
    assert!(ckpt.exists());

    let fit_dir = tempfile::tempdir().unwrap();
    let config = format!(
        "[model]\ncheckpoint = {}\n[data]\ncount = 4\ntest_count = 1\n[solver]\nmax_iter = 10\n",
        ckpt.display()
    );
    let o = jiio(&["latent", "--seed", "4"], Some(&config), fit_dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(fit_dir.path().join("out/latents.csv").exists());

    let wrong = format!("[model]\ncheckpoint = {}\n", ckpt.display());
    let o = jiio(&["meta"], Some(&wrong), fit_dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn zero_step_baseline_leaves_ratios_undefined() {
    let suite = latent_suite(LayerKind::Tanh, 6, 3, 6, 2, 1).unwrap();
    let report = bench_efficiency(&suite, &efficiency_jiio(50), &SequentialConfig::adam(0, 0.1)).unwrap();
    assert!(report.rows.iter().all(|r| r.ratio.is_none() && r.target.is_none()));
    assert_eq!(report.fraction_within(0.5), 0.0);
    let csv = report.table(false).to_csv();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(4) == Some("NA")), "{csv}");
}

#[test]
fn baseline_reaches_its_own_final_cost_with_its_full_budget_or_less() {
    let suite = latent_suite(LayerKind::Tanh, 6, 3, 6, 3, 2).unwrap();
    let cfg = SequentialConfig::adam(15, 0.1);
    for p in &suite {
        let base = sequential_input_opt(p, &vec![0.0; p.var_dim], &cfg).unwrap();
        let target = base.rows.last().unwrap().cost;
        let evals = evals_to_reach(&base.rows, &base.costs(), target).unwrap();
        assert!(evals <= base.counters().total());
    }
    let report = bench_efficiency(&suite, &efficiency_jiio(200), &cfg).unwrap();
    for r in &report.rows {
        assert!(r.baseline_evals.unwrap() <= r.baseline_total);
    }
    let csv = report.table(false).to_csv();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0,0")), "wall times must be zeroed: {csv}");
}
