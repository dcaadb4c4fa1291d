//! A DEQ model (layer plus linear head), its parameter optimizer, and the
//! shared minibatch training loop.

use rayon::prelude::*;

use crate::baselines::{forward_solve, OptimizerKind, OptimizerState};
use crate::error::{check_len, Error, Result};
use crate::jiio::InputOptProblem;
use crate::layer::{contraction_rescale, EquilibriumLayer, LayerKind, LayerParams};
use crate::linalg::spectral_norm;
use crate::loss::{InnerLoss, OutputHead};
use crate::outer::ThetaGradient;
use crate::rng::SeededRng;
use crate::solver::{EvalCounters, SolverConfig};

/// Equilibrium layer `z = f(z, x)` read out through `h(z) = Cz + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layer: EquilibriumLayer,
    pub head: OutputHead,
}

impl Model {
    /// Random model whose layer has spectral norm `gamma` in `z`.
    pub fn random(kind: LayerKind, n: usize, d: usize, p: usize, gamma: f64, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let params = LayerParams::random(n, d, gamma, 1.0, &mut rng)?;
        Ok(Self {
            layer: EquilibriumLayer::new(kind, params),
            head: OutputHead::random(p, n, &mut rng),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.layer.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.layer.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layer.params.num_params() + self.head.num_params()
    }

    /// Parameters as `W, U, b, C, d`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.layer.params.to_flat();
        v.extend(self.head.to_flat());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat model parameters", flat.len(), self.num_params())?;
        let nl = self.layer.params.num_params();
        self.layer.params = self.layer.params.from_flat(&flat[..nl])?;
        self.head = self.head.from_flat(&flat[nl..])?;
        Ok(())
    }

    /// Input-optimization problem over the whole layer input.
    pub fn latent_problem(&self, loss: InnerLoss) -> Result<InputOptProblem> {
        InputOptProblem::latent(self.layer.clone(), self.head.clone(), loss)
    }

    /// `h(z*(input))` by a forward solve.
    pub fn decode(&self, input: &[f64], forward: &SolverConfig) -> Result<Vec<f64>> {
        let (z, _) = forward_solve(&self.layer, input, None, forward)?;
        self.head.apply(&z)
    }

    /// Rescales `W` back to spectral norm `gamma` when a parameter update has
    /// pushed it above. Returns whether a rescale happened.
    pub fn enforce_contraction(&mut self, gamma: f64) -> Result<bool> {
        let w = &self.layer.params.w;
        if w.frobenius() == 0.0 {
            return Ok(false);
        }
        let sigma = spectral_norm(w, 100_000, 1e-12, &mut SeededRng::new(0x5eed))?;
        if sigma > gamma {
            self.layer.params = contraction_rescale(&self.layer.params, gamma)?;
            return Ok(true);
        }
        Ok(false)
    }
}

/// Peak signal-to-noise ratio for `[0, 1]` signals, capped at 99 dB.
pub fn psnr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_len("estimate", estimate.len(), reference.len())?;
    if reference.is_empty() {
        return Err(Error::InvalidArgument("psnr of an empty signal".into()));
    }
    let mse = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse < 1e-10 {
        return Ok(99.0);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Settings shared by the training programs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Weight of the Hutchinson Jacobian penalty.
    pub lambda: f64,
    pub hutchinson_samples: usize,
    /// Spectral-norm cap on `W` enforced after every update.
    pub contraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            batch: 8,
            lr: 1e-2,
            lambda: 0.1,
            hutchinson_samples: 2,
            contraction: 0.9,
            seed: 0,
        }
    }
}

/// Per-step training metrics; losses are batch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRow {
    pub step: usize,
    pub loss: f64,
    pub reg: f64,
    pub f_evals: u64,
    pub vjp_evals: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub rows: Vec<TrainRow>,
    /// Flat parameters after every step.
    pub trajectory: Vec<Vec<f64>>,
}

/// What one item contributes to a training step.
pub struct ItemGrad {
    pub loss: f64,
    pub reg: f64,
    pub grad: ThetaGradient,
    pub counters: EvalCounters,
}

/// Adam over the flat parameter vector with the contraction cap.
pub struct ParamOptimizer {
    state: OptimizerState,
    contraction: f64,
}

impl ParamOptimizer {
    pub fn new(model: &Model, lr: f64, contraction: f64) -> Result<Self> {
        if !(contraction > 0.0 && contraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "contraction cap must lie in (0, 1), got {contraction}"
            )));
        }
        Ok(Self {
            state: OptimizerState::new(OptimizerKind::adam(lr), model.num_params())?,
            contraction,
        })
    }

    pub fn step(&mut self, model: &mut Model, grad: &ThetaGradient) -> Result<()> {
        let g = grad.to_flat();
        if !crate::linalg::all_finite(&g) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        let mut theta = model.to_flat();
        self.state.update(&mut theta, &g)?;
        model.set_flat(&theta)?;
        model.enforce_contraction(self.contraction)?;
        Ok(())
    }
}

/// Minibatch loop: each step draws `batch` item indices, evaluates
/// `item_grad` on them in parallel (each with its own forked RNG), averages
/// in index order and takes one optimizer step.
pub fn train_loop<F>(num_items: usize, model: Model, cfg: &TrainConfig, item_grad: F) -> Result<TrainOutcome>
where
    F: Fn(&Model, usize, &mut SeededRng) -> Result<ItemGrad> + Sync,
{
    if num_items == 0 {
        return Err(Error::InvalidArgument("training needs a nonempty dataset".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut model = model;
    let mut opt = ParamOptimizer::new(&model, cfg.lr, cfg.contraction)?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut trajectory = Vec::with_capacity(cfg.steps);
    let mut counters = EvalCounters::default();
    for step in 0..cfg.steps {
        let jobs: Vec<(usize, SeededRng)> = (0..cfg.batch).map(|_| (rng.below(num_items), rng.fork())).collect();
        let results: Vec<Result<ItemGrad>> = jobs
            .into_par_iter()
            .map(|(idx, mut item_rng)| item_grad(&model, idx, &mut item_rng))
            .collect();
        let mut total = ThetaGradient::zeros(model.state_dim(), model.input_dim(), model.output_dim());
        let (mut loss, mut reg) = (0.0, 0.0);
        for r in results {
            let r = r?;
            total.add_assign(&r.grad);
            loss += r.loss;
            reg += r.reg;
            counters.add(r.counters);
        }
        let scale = 1.0 / cfg.batch as f64;
        total.scale(scale);
        opt.step(&mut model, &total)?;
        rows.push(TrainRow {
            step,
            loss: loss * scale,
            reg: reg * scale,
            f_evals: counters.f_evals,
            vjp_evals: counters.vjp_evals,
        });
        log::debug!("step {step}: loss {:.6e}", loss * scale);
        trajectory.push(model.to_flat());
    }
    Ok(TrainOutcome {
        model,
        rows,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let y = vec![0.5; 4];
        assert_eq!(psnr(&y, &y).unwrap(), 99.0);
        let e: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&y, &e).unwrap() - 20.0).abs() < 1e-9);
        let e: Vec<f64> = y.iter().map(|v| v - 0.5).collect();
        assert!((psnr(&y, &e).unwrap() - 6.020599913279624).abs() < 1e-9);
        let up: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
        let down: Vec<f64> = y.iter().map(|v| v - 0.25).collect();
        assert_eq!(psnr(&y, &up).unwrap(), psnr(&y, &down).unwrap());
        assert!(psnr(&y, &[0.0]).is_err());
    }

    #[test]
    fn flat_round_trip_and_contraction() {
        let mut m = Model::random(LayerKind::Tanh, 5, 3, 2, 0.8, 1).unwrap();
        let flat = m.to_flat();
        assert_eq!(flat.len(), m.num_params());
        let mut other = m.clone();
        other.set_flat(&flat).unwrap();
        assert_eq!(other, m);
        assert!(!m.enforce_contraction(0.9).unwrap());
        m.layer.params.w.scale_mut(2.0);
        assert!(m.enforce_contraction(0.9).unwrap());
        let s = spectral_norm(&m.layer.params.w, 100_000, 1e-12, &mut SeededRng::new(2)).unwrap();
        assert!((s - 0.9).abs() < 1e-8);
    }
}
