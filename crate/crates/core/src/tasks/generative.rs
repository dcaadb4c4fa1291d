//! Generative modelling with optimized latents and the inverse problems
//! built on it.

use crate::error::{Error, Result};
use crate::jiio::{jiio_solve, AugmentedState, Init, JiioConfig, JiioSolution};
use crate::loss::{InnerLoss, MeasurementOperator};
use crate::outer::{grad_theta_general, grad_theta_reuse, hutchinson_reg, OuterLoss};
use crate::rng::SeededRng;
use crate::solver::SolverConfig;

use super::data::Dataset;
use super::model::{train_loop, ItemGrad, Model, TrainConfig, TrainOutcome};

/// Result of fitting a single target.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub x: Vec<f64>,
    /// `h(z*)` at the selected iterate.
    pub reconstruction: Vec<f64>,
    pub cost: f64,
    pub solution: JiioSolution,
}

fn fit(model: &Model, loss: InnerLoss, cfg: &JiioConfig, init: &Init) -> Result<FitResult> {
    let problem = model.latent_problem(loss)?;
    let solution = jiio_solve(&problem, init, cfg)?;
    Ok(FitResult {
        x: solution.state.x.clone(),
        reconstruction: model.head.apply(&solution.state.z)?,
        cost: solution.cost(),
        solution,
    })
}

/// Latent `x*` minimizing `‖y − h(z*(x))‖²`, from a zero start.
pub fn fit_latent(model: &Model, y: &[f64], cfg: &JiioConfig) -> Result<FitResult> {
    fit(model, InnerLoss::squared(y.to_vec()), cfg, &Init::Zeros)
}

/// [`fit_latent`] from a given augmented state.
pub fn fit_latent_warm(model: &Model, y: &[f64], cfg: &JiioConfig, warm: &AugmentedState) -> Result<FitResult> {
    fit(model, InnerLoss::squared(y.to_vec()), cfg, &Init::Warm(warm.clone()))
}

/// Reconstruction from a corrupted observation: minimizes
/// `‖A ŷ − A h(z*(x))‖²` and returns the full `h(z*)`.
pub fn solve_inverse_unsup(
    model: &Model,
    observed: &[f64],
    op: &MeasurementOperator,
    cfg: &JiioConfig,
) -> Result<FitResult> {
    fit(model, InnerLoss::with_operator(observed.to_vec(), op.clone()), cfg, &Init::Zeros)
}

/// Hutchinson penalty at a uniformly drawn trace iterate of `solution`,
/// scaled by `lambda`; returns `(estimate, scaled layer gradient)`.
fn regularizer(
    model: &Model,
    solution: &JiioSolution,
    lambda: f64,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<(f64, crate::layer::LayerGrad)> {
    let trace = &solution.trace;
    let k = rng.below(trace.iterates.len());
    let v = AugmentedState::from_slice(&trace.iterates[k], model.state_dim())?;
    let (est, mut grad) = hutchinson_reg(&model.layer, &v.z, &v.x, rng, samples)?;
    grad.scale(lambda);
    Ok((est, grad))
}

/// Trains the model so that every item is well fit by some latent: per item,
/// a joint solve from zero, the dual-reuse gradient of the reconstruction
/// loss, plus `λ` times the Hutchinson penalty at a random trace iterate.
/// The reported loss is the per-pixel mean squared error.
pub fn train_generative(dataset: &Dataset, model: Model, jiio: &JiioConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_dims(dataset, &model)?;
    train_loop(dataset.len(), model, cfg, |model, idx, rng| {
        let y = &dataset.items[idx];
        let problem = model.latent_problem(InnerLoss::squared(y.clone()))?;
        let solution = jiio_solve(&problem, &Init::Zeros, jiio)?;
        let mut grad = grad_theta_reuse(&problem, &solution.state, &OuterLoss::SameAsInner)?;
        let (reg, reg_grad) = regularizer(model, &solution, cfg.lambda, cfg.hutchinson_samples, rng)?;
        grad.layer.add_assign(&reg_grad);
        Ok(ItemGrad {
            loss: solution.cost() / y.len() as f64,
            reg,
            grad,
            counters: solution.counters(),
        })
    })
}

/// Supervised inverse-problem training: the inner solve sees only the
/// corrupted observation through `op`, the outer loss scores the clean item,
/// and the gradient comes from the general implicit backward.
pub fn train_inverse_sup(
    dataset: &Dataset,
    op: &MeasurementOperator,
    model: Model,
    jiio: &JiioConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_dims(dataset, &model)?;
    train_loop(dataset.len(), model, cfg, |model, idx, rng| {
        let y = &dataset.items[idx];
        let observed = op.corrupt(y, rng)?;
        let problem = model.latent_problem(InnerLoss::with_operator(observed, op.clone()))?;
        let solution = jiio_solve(&problem, &Init::Zeros, jiio)?;
        let outer = InnerLoss::squared(y.clone());
        let mut grad = grad_theta_general(&problem, &solution.state, &OuterLoss::Custom(outer.clone()))?;
        let (reg, reg_grad) = regularizer(model, &solution, cfg.lambda, cfg.hutchinson_samples, rng)?;
        grad.layer.add_assign(&reg_grad);
        let loss = crate::loss::loss_eval(&outer, &model.head, &solution.state.z)? / y.len() as f64;
        Ok(ItemGrad {
            loss,
            reg,
            grad,
            counters: solution.counters(),
        })
    })
}

fn check_dims(dataset: &Dataset, model: &Model) -> Result<()> {
    if dataset.dim() != model.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset items have dimension {} but the model outputs {}",
            dataset.dim(),
            model.output_dim()
        )));
    }
    Ok(())
}

/// Smallest per-coordinate variance kept by [`fit_diag_gaussian`].
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Diagonal Gaussian `(mean, variance)` fit to `latents`; variances below
/// [`VARIANCE_FLOOR`] are floored with a warning.
pub fn fit_diag_gaussian(latents: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if latents.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "a density fit needs at least 2 latents, got {}",
            latents.len()
        )));
    }
    let d = latents[0].len();
    for l in latents {
        crate::error::check_len("latent", l.len(), d)?;
    }
    let count = latents.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| latents.iter().map(|l| l[j]).sum::<f64>() / count).collect();
    let mut var: Vec<f64> = (0..d)
        .map(|j| latents.iter().map(|l| (l[j] - mean[j]).powi(2)).sum::<f64>() / count)
        .collect();
    let floored = var.iter().filter(|v| **v < VARIANCE_FLOOR).count();
    if floored > 0 {
        log::warn!("{floored} latent coordinates have variance below {VARIANCE_FLOOR:e}; flooring");
        var.iter_mut().for_each(|v| *v = v.max(VARIANCE_FLOOR));
    }
    Ok((mean, var))
}

/// Fits a diagonal Gaussian to `latents`, draws `count` latents from it and
/// decodes each through a forward solve and the head.
pub fn sample_posthoc(
    model: &Model,
    latents: &[Vec<f64>],
    count: usize,
    rng: &mut SeededRng,
    forward: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let (mean, var) = fit_diag_gaussian(latents)?;
    (0..count)
        .map(|_| {
            let x: Vec<f64> = mean
                .iter()
                .zip(&var)
                .map(|(m, v)| {
                    let e = rng.normal();
                    // Floored coordinates collapse exactly onto the mean.
                    if *v <= VARIANCE_FLOOR {
                        *m
                    } else {
                        m + v.sqrt() * e
                    }
                })
                .collect();
            model.decode(&x, forward)
        })
        .collect()
}
