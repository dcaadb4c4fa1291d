//! Joint inference and input optimization: the damped augmented DEQ over
//! `(z, μ, x)`, its KKT residual, and the accelerated solve.

mod problem;
mod system;

pub use problem::{project, AugmentedState, ConstraintSet, Damping, InputOptProblem};
pub(crate) use problem::layer_input;
pub use system::{AugmentedMap, AugmentedSystem, ExampleTerm, KktResidual};

use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, norm2, sub};
use crate::loss::loss_grad_z;
use crate::solver::{select_iterate, solve_fixed_point, EvalCounters, SolverConfig, SolverTrace};

/// Iterate-selection factor: rows within this multiple of the smallest KKT
/// norm compete on cost.
pub const DEFAULT_SELECTION: f64 = 10.0;

impl InputOptProblem {
    pub fn system(&self) -> AugmentedSystem<'_> {
        AugmentedSystem {
            layer: &self.layer,
            head: &self.head,
            constraint: &self.constraint,
            var_offset: self.var_offset,
            var_dim: self.var_dim,
            examples: vec![ExampleTerm {
                base_input: &self.base_input,
                loss: &self.inner_loss,
            }],
        }
    }
}

/// Starting point of the joint solve.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `z = 0`, `μ = 0`, `x = 0` (projected onto the constraint set).
    Zeros,
    /// `z = 0`, `μ = 0` with the given `x`.
    Input(Vec<f64>),
    Warm(AugmentedState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JiioConfig {
    pub damping: Damping,
    pub solver: SolverConfig,
    pub selection: f64,
}

impl JiioConfig {
    /// Anderson with memory 20 and the latent damping, `budget` iterations.
    pub fn latent(budget: usize) -> Self {
        Self {
            damping: Damping::latent(),
            solver: SolverConfig::anderson(budget, 1e-10, 20),
            selection: DEFAULT_SELECTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JiioSolution {
    /// The selected iterate.
    pub state: AugmentedState,
    pub selected: usize,
    pub trace: SolverTrace,
}

impl JiioSolution {
    pub fn cost(&self) -> f64 {
        self.trace.rows[self.selected].cost
    }

    pub fn kkt_norm(&self) -> f64 {
        self.trace.rows[self.selected].kkt_norm
    }

    pub fn counters(&self) -> EvalCounters {
        self.trace.counters()
    }
}

/// One damped augmented update; charges one `f` and two VJP evaluations.
pub fn augmented_step(
    problem: &InputOptProblem,
    v: &AugmentedState,
    damping: &Damping,
    counters: &mut EvalCounters,
) -> Result<AugmentedState> {
    let sys = problem.system();
    let next = sys.step(&v.to_vec(), damping, 0, counters)?;
    if !crate::linalg::all_finite(&next) {
        return Err(Error::NonFinite("augmented step".into()));
    }
    AugmentedState::from_slice(&next, problem.state_dim())
}

pub fn kkt_residual(problem: &InputOptProblem, v: &AugmentedState) -> Result<KktResidual> {
    problem.system().kkt_residual(&v.to_vec())
}

/// Runs the selected solver on the augmented map from `v0` and returns the
/// selected iterate as a flat vector with its trace.
pub fn solve_system(
    system: AugmentedSystem<'_>,
    v0: Vec<f64>,
    cfg: &JiioConfig,
) -> Result<(Vec<f64>, usize, SolverTrace)> {
    cfg.damping.validate()?;
    if !(cfg.selection >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "selection factor must be at least 1, got {}",
            cfg.selection
        )));
    }
    check_len("initial augmented state", v0.len(), system.dim())?;
    let mut map = AugmentedMap::new(system, cfg.damping.clone());
    let mut v0 = v0;
    crate::solver::VectorMap::project(&map, &mut v0);
    let trace = solve_fixed_point(&mut map, &v0, &cfg.solver)?;
    let idx = select_iterate(&trace.costs(), &trace.kkt_norms(), cfg.selection);
    Ok((trace.iterates[idx].clone(), idx, trace))
}

/// Solves the joint inference and input optimization problem.
///
/// Running out of budget is not an error; inspect `trace.status`. Non-finite
/// iterates are flagged in the trace and the selection skips them.
pub fn jiio_solve(problem: &InputOptProblem, init: &Init, cfg: &JiioConfig) -> Result<JiioSolution> {
    problem.validate()?;
    let (n, dx) = (problem.state_dim(), problem.var_dim);
    let v0 = match init {
        Init::Zeros => AugmentedState::zeros(n, dx),
        Init::Input(x) => {
            check_len("initial input", x.len(), dx)?;
            AugmentedState {
                x: x.clone(),
                ..AugmentedState::zeros(n, dx)
            }
        }
        Init::Warm(v) => v.clone(),
    };
    let (v, selected, trace) = solve_system(problem.system(), v0.to_vec(), cfg)?;
    Ok(JiioSolution {
        state: AugmentedState::from_slice(&v, n)?,
        selected,
        trace,
    })
}

/// Richardson iteration `μ ← (∂f/∂z)ᵀμ + (∂ℓ/∂z)ᵀ` from `μ = 0` at fixed
/// `(z, x)`, where `x` is the optimization variable.
pub fn richardson_mu(problem: &InputOptProblem, z: &[f64], x: &[f64], max_iter: usize, tol: f64) -> Result<Vec<f64>> {
    richardson_mu_counted(problem, z, x, max_iter, tol, &mut EvalCounters::default())
}

/// [`richardson_mu`] charging one VJP per iteration to `counters`.
pub fn richardson_mu_counted(
    problem: &InputOptProblem,
    z: &[f64],
    x: &[f64],
    max_iter: usize,
    tol: f64,
    counters: &mut EvalCounters,
) -> Result<Vec<f64>> {
    check_len("variable x", x.len(), problem.var_dim)?;
    let input = problem.layer_input(x);
    let grad = loss_grad_z(&problem.inner_loss, &problem.head, z)?;
    adjoint_richardson(&problem.layer, z, &input, &grad, max_iter, tol, counters)
}

/// Solves `μ = (∂f/∂z)ᵀμ + g` by Richardson iteration at full layer input.
pub fn adjoint_richardson(
    layer: &crate::layer::EquilibriumLayer,
    z: &[f64],
    input: &[f64],
    g: &[f64],
    max_iter: usize,
    tol: f64,
    counters: &mut EvalCounters,
) -> Result<Vec<f64>> {
    let mut mu = vec![0.0; layer.state_dim()];
    let act = layer.activation(z, input)?;
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        // (∂f/∂z)ᵀμ = Wᵀ(D μ); the slope D is fixed because (z, x) are.
        let scaled: Vec<f64> = mu.iter().zip(&act.slope).map(|(m, d)| m * d).collect();
        let mut next = layer.params.w.matvec_t(&scaled);
        counters.vjp_evals += 1;
        axpy(1.0, g, &mut next);
        last_change = norm2(&sub(&next, &mu));
        if !last_change.is_finite() {
            return Err(Error::NonFinite("Richardson adjoint iteration".into()));
        }
        mu = next;
        if last_change <= tol {
            return Ok(mu);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        last_change,
    })
}

#[cfg(test)]
mod tests;
