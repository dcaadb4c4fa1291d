//! Subcommand runners. Each reads its settings from a [`RunConfig`], writes
//! CSV files (and checkpoints) into the output directory and returns a short
//! summary.

use std::path::{Path, PathBuf};

use jiio_core::baselines::pgd_attack;
use jiio_core::jiio::{Damping, JiioConfig, DEFAULT_SELECTION};
use jiio_core::layer::LayerKind;
use jiio_core::linalg::norm2;
use jiio_core::loss::MeasurementOperator;
use jiio_core::rng::SeededRng;
use jiio_core::solver::{SolverConfig, SolverKind};
use jiio_core::tasks::{
    adv_train, attack, blobs, classify, fit_diag_gaussian, fit_latent, jiio_attack, linreal_tasks, meta_train, one_hot,
    psnr, robust_eval, sample_posthoc, solve_inverse_unsup, spirals, train_generative, train_inverse_sup, Adversary,
    ClassifierConfig, Dataset, MetaConfig, Model, TaskFamily, TrainConfig, TrainOutcome,
};

use crate::bench::{bench_efficiency, bench_solvers, efficiency_jiio, gradcheck_instance, latent_suite, solver_table, SolverBench};
use crate::checkpoint::{load_checkpoint, model_from_tensors, model_tensors, save_checkpoint};
use crate::config::{Command, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{emit_trace_csv, metrics_table, trace_csv, write_file, Cell, Table};

/// Inverse-problem variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InverseMode {
    /// Denoising with a trained generative model.
    Unsup,
    /// Training through a masking operator.
    Sup,
}

/// Attack algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMethod {
    Jiio,
    Pgd,
}

/// Everything a run needs besides the configuration.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    /// Write measured wall times instead of zeros.
    pub wall_clock: bool,
    pub mode: Option<InverseMode>,
    pub method: Option<AttackMethod>,
}

/// Runs the configured subcommand; returns human-readable summary lines.
pub fn run(opts: &RunOptions) -> Result<Vec<String>> {
    std::fs::create_dir_all(&opts.out).map_err(|e| CliError::io(&opts.out, e))?;
    match opts.config.command() {
        Command::FitGen => fit_gen(opts),
        Command::Latent => latent(opts),
        Command::Invprob => match opts.mode {
            Some(InverseMode::Unsup) => invprob_unsup(opts),
            Some(InverseMode::Sup) => invprob_sup(opts),
            None => Err(CliError::Usage("invprob needs --mode unsup|sup".into())),
        },
        Command::Attack => attack_cmd(opts),
        Command::Advtrain => advtrain(opts),
        Command::Meta => meta(opts),
        Command::BenchSolvers => solvers(opts),
        Command::BenchEfficiency => efficiency(opts),
        Command::Gradcheck => gradcheck(opts),
    }
}

fn path(opts: &RunOptions, name: &str) -> PathBuf {
    opts.out.join(name)
}

fn layer_kind(cfg: &RunConfig) -> Result<LayerKind> {
    match cfg.require("model", "kind")? {
        "tanh" => Ok(LayerKind::Tanh),
        "linear" => Ok(LayerKind::Linear),
        _ => Err(cfg.bad("model", "kind", "expected `tanh` or `linear`")),
    }
}

fn solver_config(cfg: &RunConfig) -> Result<SolverConfig> {
    let (max_iter, tol, memory) = (cfg.usize("solver", "max_iter")?, cfg.f64("solver", "tol")?, cfg.usize("solver", "memory")?);
    let kind = match cfg.require("solver", "kind")? {
        "anderson" => SolverKind::Anderson,
        "naive" => SolverKind::Naive,
        "broyden" => SolverKind::Broyden,
        _ => return Err(cfg.bad("solver", "kind", "expected `anderson`, `naive` or `broyden`")),
    };
    let s = SolverConfig {
        kind,
        max_iter,
        tol,
        memory,
        ..SolverConfig::default()
    };
    s.validate()?;
    Ok(s)
}

fn damping(cfg: &RunConfig) -> Result<Damping> {
    let mut d = Damping::new(
        cfg.f64("damping", "alpha_z")?,
        cfg.f64("damping", "alpha_mu")?,
        cfg.f64("damping", "alpha_x")?,
    );
    let after = cfg.usize("damping", "reduce_after")?;
    if after > 0 {
        d = d.with_reduction(after, cfg.f64("damping", "alpha_x_reduced")?);
    }
    d.validate()?;
    Ok(d)
}

fn jiio_config(cfg: &RunConfig) -> Result<JiioConfig> {
    Ok(JiioConfig {
        damping: damping(cfg)?,
        solver: solver_config(cfg)?,
        selection: DEFAULT_SELECTION,
    })
}

fn train_config(cfg: &RunConfig, seed: u64) -> Result<TrainConfig> {
    Ok(TrainConfig {
        steps: cfg.usize("train", "steps")?,
        batch: cfg.usize("train", "batch")?,
        lr: cfg.f64("train", "lr")?,
        lambda: cfg.f64("train", "lambda")?,
        hutchinson_samples: cfg.usize("train", "hutchinson_samples")?,
        contraction: cfg.f64("train", "contraction")?,
        seed,
    })
}

#[derive(Clone, Copy)]
enum Corpus {
    Blobs,
    Spirals,
}

/// Training and held-out splits.
fn datasets(cfg: &RunConfig, corpus: Corpus, seed: u64) -> Result<(Dataset, Dataset)> {
    let (count, test) = (cfg.usize("data", "count")?, cfg.usize("data", "test_count")?);
    let all = match cfg.require("data", "source")? {
        "synthetic" => match corpus {
            Corpus::Blobs => blobs(count + test, seed),
            Corpus::Spirals => spirals(count + test, seed),
        },
        "idx" => {
            let images = PathBuf::from(cfg.require("data", "idx_images")?);
            let mut d = match corpus {
                Corpus::Blobs => crate::idx::load_idx(&images)?,
                Corpus::Spirals => {
                    crate::idx::load_idx_labeled(&images, Path::new(cfg.require("data", "idx_labels")?))?
                }
            };
            if d.len() < count + test {
                return Err(cfg.bad("data", "count", &format!("the IDX file holds only {} items", d.len())));
            }
            d.items.truncate(count + test);
            if let Some(l) = d.labels.as_mut() {
                l.truncate(count + test);
            }
            d
        }
        _ => return Err(cfg.bad("data", "source", "expected `synthetic` or `idx`")),
    };
    if count == 0 {
        return Err(cfg.bad("data", "count", "need at least one training item"));
    }
    Ok(all.split_tail(test))
}

/// The checkpointed model if configured, else a random one.
fn model(cfg: &RunConfig, input_dim: usize, output_dim: usize, seed: u64) -> Result<Model> {
    if let Some(p) = cfg.raw("model", "checkpoint") {
        let p = Path::new(p);
        let m = model_from_tensors(&load_checkpoint(p)?, p)?;
        if m.input_dim() != input_dim || m.output_dim() != output_dim {
            return Err(cfg.bad(
                "model",
                "checkpoint",
                &format!("model maps {} → {}, task needs {input_dim} → {output_dim}", m.input_dim(), m.output_dim()),
            ));
        }
        return Ok(m);
    }
    Ok(Model::random(
        layer_kind(cfg)?,
        cfg.usize("model", "state_dim")?,
        input_dim,
        output_dim,
        cfg.f64("model", "gamma")?,
        seed,
    )?)
}

fn write_training(opts: &RunOptions, out: &TrainOutcome, steps: usize) -> Result<()> {
    metrics_table(&out.rows).write(&path(opts, "metrics.csv"))?;
    save_checkpoint(&model_tensors(&out.model, steps, opts.config.hash()), &path(opts, "model.ckpt"))
}

fn last_loss(out: &TrainOutcome) -> String {
    out.rows
        .last()
        .map_or("no training steps".to_string(), |r| format!("final training loss {:.6e}", r.loss))
}

fn fit_gen(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let (train, test) = datasets(cfg, Corpus::Blobs, opts.seed)?;
    let m = model(cfg, cfg.usize("model", "input_dim")?, train.dim(), opts.seed.wrapping_add(1))?;
    let jiio = jiio_config(cfg)?;
    let tc = train_config(cfg, opts.seed)?;
    let out = train_generative(&train, m, &jiio, &tc)?;
    write_training(opts, &out, tc.steps)?;

    use rayon::prelude::*;
    let fits = train
        .items
        .par_iter()
        .map(|y| fit_latent(&out.model, y, &jiio))
        .collect::<jiio_core::Result<Vec<_>>>()?;
    let latents: Vec<Vec<f64>> = fits.iter().map(|f| f.x.clone()).collect();
    let mut summary = vec![last_loss(&out)];
    let count = cfg.usize("output", "samples")?;
    if latents.len() >= 2 && count > 0 {
        let mut rng = SeededRng::new(opts.seed.wrapping_add(2));
        let (mean, _) = fit_diag_gaussian(&latents)?;
        let samples = sample_posthoc(&out.model, &latents, count, &mut rng, &jiio.solver)?;
        let mut t = Table::new(&["sample", "pixel", "value"]);
        for (i, s) in samples.iter().enumerate() {
            for (j, v) in s.iter().enumerate() {
                t.push(vec![i.into(), j.into(), (*v).into()]);
            }
        }
        t.write(&path(opts, "samples.csv"))?;
        summary.push(format!("latent mean norm {:.4e}", norm2(&mean)));
    }
    let mut t = Table::new(&["item", "mse"]);
    for (i, y) in test.items.iter().enumerate() {
        let f = fit_latent(&out.model, y, &jiio)?;
        t.push(vec![i.into(), (f.cost / y.len() as f64).into()]);
    }
    t.write(&path(opts, "heldout.csv"))?;
    Ok(summary)
}

fn latent(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let (data, _) = datasets(cfg, Corpus::Blobs, opts.seed)?;
    let d = cfg.usize("model", "input_dim")?;
    let m = model(cfg, d, data.dim(), opts.seed.wrapping_add(1))?;
    let jiio = jiio_config(cfg)?;
    let mut header = vec!["item".to_string(), "cost".into(), "kkt_norm".into(), "f_evals".into(), "vjp_evals".into()];
    header.extend((0..d).map(|j| format!("x{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&header);
    let mut total_cost = 0.0;
    for (i, y) in data.items.iter().enumerate() {
        let f = fit_latent(&m, y, &jiio)?;
        if i == 0 {
            emit_trace_csv(&f.solution.trace, &path(opts, "trace.csv"), opts.wall_clock)?;
        }
        let c = f.solution.counters();
        let mut row: Vec<Cell> = vec![
            i.into(),
            f.cost.into(),
            f.solution.kkt_norm().into(),
            c.f_evals.into(),
            c.vjp_evals.into(),
        ];
        row.extend(f.x.iter().map(|v| Cell::from(*v)));
        t.push(row);
        total_cost += f.cost;
    }
    t.write(&path(opts, "latents.csv"))?;
    Ok(vec![format!(
        "fitted {} items, mean cost {:.6e}",
        data.len(),
        total_cost / data.len() as f64
    )])
}

fn eval_jiio(cfg: &RunConfig) -> Result<JiioConfig> {
    let mut j = jiio_config(cfg)?;
    j.solver.max_iter = cfg.usize("inverse", "eval_iter")?;
    Ok(j)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn invprob_unsup(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let (train, test) = datasets(cfg, Corpus::Blobs, opts.seed)?;
    let m = model(cfg, cfg.usize("model", "input_dim")?, train.dim(), opts.seed.wrapping_add(1))?;
    let tc = train_config(cfg, opts.seed)?;
    let out = train_generative(&train, m, &jiio_config(cfg)?, &tc)?;
    write_training(opts, &out, tc.steps)?;
    let op = MeasurementOperator::NoisyIdentity {
        sigma: cfg.f64("inverse", "sigma")?,
    };
    let eval = eval_jiio(cfg)?;
    let mut rng = SeededRng::new(opts.seed.wrapping_add(3));
    let mut t = Table::new(&["item", "psnr_corrupted", "psnr_recovered"]);
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for (i, y) in test.items.iter().enumerate() {
        let observed = op.corrupt(y, &mut rng)?;
        let fit = solve_inverse_unsup(&out.model, &observed, &op, &eval)?;
        let (b, a) = (psnr(y, &observed)?, psnr(y, &fit.reconstruction)?);
        t.push(vec![i.into(), b.into(), a.into()]);
        before.push(b);
        after.push(a);
    }
    t.write(&path(opts, "inverse.csv"))?;
    Ok(vec![format!(
        "median PSNR corrupted {:.3} dB, recovered {:.3} dB",
        median(before),
        median(after)
    )])
}

/// The mask operator for 8×8 images.
fn mask_op(cfg: &RunConfig, dim: usize) -> Result<MeasurementOperator> {
    let side = (dim as f64).sqrt().round() as usize;
    if side * side != dim {
        return Err(CliError::Usage(format!("masking needs square images, got dimension {dim}")));
    }
    Ok(MeasurementOperator::Mask {
        height: side,
        width: side,
        row: cfg.usize("inverse", "mask_row")?,
        col: cfg.usize("inverse", "mask_col")?,
        size: cfg.usize("inverse", "mask_size")?,
    })
}

/// Mean squared error over the masked-out pixels.
pub fn masked_mse(op: &MeasurementOperator, y: &[f64], estimate: &[f64]) -> jiio_core::Result<f64> {
    let diag = op.diagonal(y.len())?;
    let (mut sum, mut count) = (0.0, 0usize);
    for ((a, b), w) in y.iter().zip(estimate).zip(&diag) {
        if *w == 0.0 {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok(sum / count.max(1) as f64)
}

fn invprob_sup(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let (train, test) = datasets(cfg, Corpus::Blobs, opts.seed)?;
    let op = mask_op(cfg, train.dim())?;
    let untrained = model(cfg, cfg.usize("model", "input_dim")?, train.dim(), opts.seed.wrapping_add(1))?;
    let tc = train_config(cfg, opts.seed)?;
    let out = train_inverse_sup(&train, &op, untrained.clone(), &jiio_config(cfg)?, &tc)?;
    write_training(opts, &out, tc.steps)?;
    let eval = eval_jiio(cfg)?;
    let mut t = Table::new(&["item", "masked_mse_untrained", "masked_mse_trained"]);
    let mut improved = 0;
    for (i, y) in test.items.iter().enumerate() {
        let observed = op.apply(y)?;
        let a = solve_inverse_unsup(&untrained, &observed, &op, &eval)?;
        let b = solve_inverse_unsup(&out.model, &observed, &op, &eval)?;
        let (ma, mb) = (masked_mse(&op, y, &a.reconstruction)?, masked_mse(&op, y, &b.reconstruction)?);
        improved += usize::from(mb < ma);
        t.push(vec![i.into(), ma.into(), mb.into()]);
    }
    t.write(&path(opts, "inverse.csv"))?;
    Ok(vec![format!("masked-region error reduced on {improved}/{} items", test.len())])
}

fn adversaries(cfg: &RunConfig) -> Result<(Adversary, Adversary)> {
    let jiio = Adversary::Jiio(jiio_config(cfg)?);
    let pgd = Adversary::Pgd {
        steps: cfg.usize("attack", "pgd_steps")?,
        step_size: cfg.f64("attack", "pgd_step_size")?,
    };
    Ok((jiio, pgd))
}

fn classifier_data(opts: &RunOptions) -> Result<(Dataset, Dataset, Model)> {
    let cfg = &opts.config;
    let (train, test) = datasets(cfg, Corpus::Spirals, opts.seed)?;
    let classes = train.num_classes().max(test.num_classes()).max(2);
    let m = model(cfg, train.dim(), classes, opts.seed.wrapping_add(1))?;
    Ok((train, test, m))
}

fn attack_cmd(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let method = opts
        .method
        .ok_or_else(|| CliError::Usage("attack needs --method jiio|pgd".into()))?;
    let (train, test, m) = classifier_data(opts)?;
    let cc = ClassifierConfig::default();
    let tc = train_config(cfg, opts.seed)?;
    let clean = adv_train(&train, 0.0, m, &tc, None, &cc)?;
    write_training(opts, &clean, tc.steps)?;
    let model = &clean.model;
    let eps = cfg.f64("attack", "eps")?;
    let (jiio, pgd) = adversaries(cfg)?;
    let adversary = match method {
        AttackMethod::Jiio => &jiio,
        AttackMethod::Pgd => &pgd,
    };
    let labels = test.labels.clone().unwrap_or_default();
    let classes = model.output_dim();
    let mut t = Table::new(&["item", "label", "clean_loss", "adv_loss", "delta_norm", "clean_correct", "adv_correct"]);
    let (mut loss_sum, mut robust) = (0.0, 0usize);
    for (i, (x, &l)) in test.items.iter().zip(&labels).enumerate() {
        let label = one_hot(l, classes);
        if i == 0 {
            let rows = match adversary {
                Adversary::Jiio(c) => jiio_attack(model, x, &label, eps, c)?.1.trace.rows,
                Adversary::Pgd { steps, step_size } => {
                    pgd_attack(&model.layer, &model.head, x, &label, eps, *steps, *step_size, &cc.forward)?.1.rows
                }
            };
            write_file(&path(opts, "trace.csv"), &trace_csv(&rows, opts.wall_clock))?;
        }
        let delta = attack(model, x, &label, eps, adversary, &cc)?;
        let input: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let (cl, cok) = classify(model, x, l, &cc)?;
        let (al, aok) = classify(model, &input, l, &cc)?;
        loss_sum += al;
        robust += usize::from(aok);
        t.push(vec![
            i.into(),
            l.into(),
            cl.into(),
            al.into(),
            norm2(&delta).into(),
            usize::from(cok).into(),
            usize::from(aok).into(),
        ]);
    }
    t.write(&path(opts, "attack.csv"))?;
    let n = labels.len().max(1) as f64;
    Ok(vec![format!(
        "mean adversarial loss {:.6e}, robust accuracy {:.4}",
        loss_sum / n,
        robust as f64 / n
    )])
}

fn advtrain(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let (train, test, m) = classifier_data(opts)?;
    let cc = ClassifierConfig::default();
    let tc = train_config(cfg, opts.seed)?;
    let eps = cfg.f64("attack", "eps")?;
    let (jiio, pgd) = adversaries(cfg)?;
    let adversary = match cfg.require("attack", "adversary")? {
        "jiio" => &jiio,
        "pgd" => &pgd,
        _ => return Err(cfg.bad("attack", "adversary", "expected `jiio` or `pgd`")),
    };
    let out = adv_train(&train, eps, m, &tc, Some(adversary), &cc)?;
    write_training(opts, &out, tc.steps)?;
    let mut t = Table::new(&["attack", "mean_loss", "accuracy"]);
    let mut summary = Vec::new();
    for (name, adv, e) in [("clean", &jiio, 0.0), ("jiio", &jiio, eps), ("pgd", &pgd, eps)] {
        let (loss, acc) = robust_eval(&out.model, &test, e, adv, &cc)?;
        t.push(vec![name.into(), loss.into(), acc.into()]);
        summary.push(format!("{name}: accuracy {acc:.4}"));
    }
    t.write(&path(opts, "robust.csv"))?;
    Ok(summary)
}

fn meta(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let family = TaskFamily {
        feature_dim: cfg.usize("meta", "features")?,
        task_dim: cfg.usize("meta", "task_dim")?,
        target_dim: cfg.usize("meta", "targets")?,
        support: cfg.usize("meta", "support")?,
        query: cfg.usize("meta", "query")?,
    };
    let tasks = linreal_tasks(family, cfg.usize("meta", "tasks")?, opts.seed)?;
    let m = model(
        cfg,
        family.feature_dim + family.task_dim,
        family.target_dim,
        opts.seed.wrapping_add(1),
    )?;
    let mc = MetaConfig {
        inner: jiio_config(cfg)?,
        ..MetaConfig::default()
    };
    let tc = train_config(cfg, opts.seed)?;
    let out = meta_train(&tasks, m, &mc, &tc)?;
    write_training(opts, &out, tc.steps)?;
    Ok(vec![last_loss(&out)])
}

fn solvers(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let b = SolverBench {
        dim: cfg.usize("bench", "dim")?,
        spectral_radius: cfg.f64("bench", "spectral_radius")?,
        tol: cfg.f64("bench", "tol")?,
        max_iter: cfg.usize("bench", "max_iter")?,
        memory: cfg.usize("bench", "memory")?,
        instances: cfg.usize("bench", "instances")?,
        state_dim: cfg.usize("bench", "state_dim")?,
        input_dim: cfg.usize("bench", "input_dim")?,
    };
    let runs = bench_solvers(&b, opts.seed)?;
    solver_table(&runs).write(&path(opts, "solvers.csv"))?;
    let mut summary = Vec::new();
    for r in runs.iter().filter(|r| r.problem == "affine") {
        emit_trace_csv(&r.trace, &path(opts, &format!("trace_affine_{}.csv", r.solver)), opts.wall_clock)?;
        summary.push(format!("affine {}: {} iterations", r.solver, r.trace.len().saturating_sub(1)));
    }
    Ok(summary)
}

fn efficiency(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let suite = latent_suite(
        layer_kind(cfg)?,
        cfg.usize("model", "state_dim")?,
        cfg.usize("model", "input_dim")?,
        cfg.usize("model", "output_dim")?,
        cfg.usize("bench", "instances")?,
        opts.seed,
    )?;
    if suite.is_empty() {
        return Err(cfg.bad("bench", "instances", "the suite must be nonempty"));
    }
    let mut jiio = efficiency_jiio(cfg.usize("solver", "max_iter")?);
    jiio.damping = damping(cfg)?;
    jiio.solver = solver_config(cfg)?;
    let baseline = jiio_core::baselines::SequentialConfig::adam(cfg.usize("bench", "adam_steps")?, cfg.f64("bench", "adam_lr")?);
    let report = bench_efficiency(&suite, &jiio, &baseline)?;
    report.table(opts.wall_clock).write(&path(opts, "efficiency.csv"))?;
    Ok(vec![
        format!(
            "ratio ≤ 0.5 on {:.0}% of {} instances",
            100.0 * report.fraction_within(0.5),
            report.rows.len()
        ),
        format!(
            "total evaluations: baseline {}, joint {}",
            report.total_baseline_evals(),
            report.total_jiio_evals()
        ),
    ])
}

fn gradcheck(opts: &RunOptions) -> Result<Vec<String>> {
    let cfg = &opts.config;
    let (n, d, p) = (
        cfg.usize("model", "state_dim")?,
        cfg.usize("model", "input_dim")?,
        cfg.usize("model", "output_dim")?,
    );
    let (count, h) = (cfg.usize("gradcheck", "instances")?, cfg.f64("gradcheck", "h")?);
    let mut t = Table::new(&[
        "instance",
        "kind",
        "kkt_norm",
        "min_hessian_eig",
        "reuse_vs_general",
        "reuse_vs_fd",
        "general_vs_fd",
        "negation_exact",
    ]);
    let mut worst: f64 = 0.0;
    for kind in [LayerKind::Linear, LayerKind::Tanh] {
        for i in 0..count as u64 {
            let r = gradcheck_instance(kind, n, d, p, opts.seed.wrapping_add(i), h)?;
            worst = worst.max(r.reuse_vs_fd).max(r.general_vs_fd).max(r.reuse_vs_general);
            t.push(vec![
                r.instance.into(),
                (if kind == LayerKind::Linear { "linear" } else { "tanh" }).into(),
                r.kkt_norm.into(),
                r.min_hessian_eig.into(),
                r.reuse_vs_general.into(),
                r.reuse_vs_fd.into(),
                r.general_vs_fd.into(),
                usize::from(r.negation_exact).into(),
            ]);
        }
    }
    t.write(&path(opts, "gradcheck.csv"))?;
    Ok(vec![format!("worst relative discrepancy {worst:.3e}")])
}
