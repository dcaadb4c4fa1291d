//! The sequential approach: a full forward fixed-point solve and an implicit
//! adjoint solve per input-gradient step, driven by GD, Adam or projected
//! gradient steps.

use crate::error::{check_len, Error, Result};
use crate::jiio::{adjoint_richardson, ConstraintSet, InputOptProblem};
use crate::layer::EquilibriumLayer;
use crate::linalg::{norm2, sub};
use crate::loss::{loss_grad_head, loss_value_grad_z, InnerLoss, OutputHead};
use crate::outer::ThetaGradient;
use crate::solver::{solve_fixed_point, EvalCounters, MapEval, SolverConfig, SolverTrace, TraceRow, VectorMap};

/// Plain DEQ forward map `z ↦ f(z, x)` at a fixed input.
pub struct ForwardMap<'a> {
    layer: &'a EquilibriumLayer,
    input: &'a [f64],
}

impl<'a> ForwardMap<'a> {
    pub fn new(layer: &'a EquilibriumLayer, input: &'a [f64]) -> Self {
        Self { layer, input }
    }
}

impl VectorMap for ForwardMap<'_> {
    fn dim(&self) -> usize {
        self.layer.state_dim()
    }

    fn eval(&mut self, z: &[f64], counters: &mut EvalCounters) -> Result<MapEval> {
        counters.f_evals += 1;
        Ok(MapEval::plain(self.layer.eval(z, self.input)?))
    }
}

/// Forward fixed point of `layer` at full input `input`, starting from `z0`
/// (zeros when `None`). Returns the last evaluated point and the trace.
pub fn forward_solve(
    layer: &EquilibriumLayer,
    input: &[f64],
    z0: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolverTrace)> {
    check_len("layer input", input.len(), layer.input_dim())?;
    let zeros = vec![0.0; layer.state_dim()];
    let start = z0.unwrap_or(&zeros);
    let mut map = ForwardMap::new(layer, input);
    let trace = solve_fixed_point(&mut map, start, cfg)?;
    let z = trace.last_iterate().to_vec();
    Ok((z, trace))
}

/// Budgets of the adjoint Richardson solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for AdjointConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

/// `∂ℓ(z*(x))/∂x` on the variable slice, from a solved `z*`: one Richardson
/// adjoint solve plus one input VJP, all charged to `counters`.
pub fn implicit_input_grad(
    problem: &InputOptProblem,
    x: &[f64],
    z: &[f64],
    adjoint: &AdjointConfig,
    counters: &mut EvalCounters,
) -> Result<Vec<f64>> {
    check_len("variable x", x.len(), problem.var_dim)?;
    let input = problem.layer_input(x);
    let (_, g) = loss_value_grad_z(&problem.inner_loss, &problem.head, z)?;
    let mu = adjoint_richardson(&problem.layer, z, &input, &g, adjoint.max_iter, adjoint.tol, counters)?;
    let vx = problem.layer.vjp_x(z, &input, &mu)?;
    counters.vjp_evals += 1;
    Ok(vx[problem.var_offset..problem.var_offset + problem.var_dim].to_vec())
}

/// First-order update rule for the input variable.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerKind {
    Gd { step: f64 },
    Adam { step: f64, beta1: f64, beta2: f64, eps: f64 },
    /// Normalized projected step `x ← Π(x − step·g/‖g‖)`.
    Pgd { step: f64, constraint: ConstraintSet },
}

impl OptimizerKind {
    /// Adam with `(β₁, β₂, ε̂) = (0.9, 0.999, 1e-8)`.
    pub fn adam(step: f64) -> Self {
        OptimizerKind::Adam {
            step,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step_size(&self) -> f64 {
        match self {
            OptimizerKind::Gd { step } | OptimizerKind::Adam { step, .. } | OptimizerKind::Pgd { step, .. } => *step,
        }
    }
}

/// Optimizer with its moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    /// A zero step is allowed and leaves `x` unchanged.
    pub fn new(kind: OptimizerKind, dim: usize) -> Result<Self> {
        let step = kind.step_size();
        if !(step >= 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be nonnegative, got {step}")));
        }
        if let OptimizerKind::Pgd { constraint, .. } = &kind {
            constraint.validate(dim)?;
        }
        Ok(Self {
            kind,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        })
    }

    /// One descent step on `x` with gradient `grad`.
    pub fn update(&mut self, x: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("gradient", grad.len(), x.len())?;
        check_len("optimizer state", self.m.len(), x.len())?;
        self.t += 1;
        match &self.kind {
            OptimizerKind::Gd { step } => {
                for (xi, gi) in x.iter_mut().zip(grad) {
                    *xi -= step * gi;
                }
            }
            OptimizerKind::Adam {
                step,
                beta1,
                beta2,
                eps,
            } => {
                let (b1, b2) = (*beta1, *beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for i in 0..x.len() {
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    x[i] -= step * mhat / (vhat.sqrt() + eps);
                }
            }
            OptimizerKind::Pgd { step, constraint } => {
                let gn = norm2(grad);
                if gn > 0.0 {
                    for (xi, gi) in x.iter_mut().zip(grad) {
                        *xi -= step * gi / gn;
                    }
                }
                constraint.project_in_place(x);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialConfig {
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub forward: SolverConfig,
    pub adjoint: AdjointConfig,
}

impl SequentialConfig {
    /// Adam with Anderson forward solves, forward and adjoint tolerance 1e-8.
    pub fn adam(steps: usize, step: f64) -> Self {
        Self {
            steps,
            optimizer: OptimizerKind::adam(step),
            forward: SolverConfig::anderson(200, 1e-8, 20),
            adjoint: AdjointConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequentialResult {
    /// Least-cost evaluated iterate.
    pub x_best: Vec<f64>,
    pub best_cost: f64,
    /// Iterate after the last update.
    pub x_final: Vec<f64>,
    /// `xs[t]` is the input evaluated at step `t`.
    pub xs: Vec<Vec<f64>>,
    /// One row per step: cumulative counters, forward residual, input-gradient
    /// norm (in the KKT column) and cost.
    pub rows: Vec<TraceRow>,
    pub forward_solves: usize,
    pub adjoint_solves: usize,
}

impl SequentialResult {
    pub fn counters(&self) -> EvalCounters {
        self.rows.last().map_or(EvalCounters::default(), |r| EvalCounters {
            f_evals: r.f_evals,
            vjp_evals: r.vjp_evals,
        })
    }

    pub fn costs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cost).collect()
    }
}

/// Gradient-based input optimization with a forward and an adjoint solve per
/// step. Forward solves are warm-started from the previous fixed point.
pub fn sequential_input_opt(problem: &InputOptProblem, x0: &[f64], cfg: &SequentialConfig) -> Result<SequentialResult> {
    problem.validate()?;
    check_len("initial input", x0.len(), problem.var_dim)?;
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("sequential optimization needs at least one step".into()));
    }
    let mut opt = OptimizerState::new(cfg.optimizer.clone(), problem.var_dim)?;
    let mut x = x0.to_vec();
    if let OptimizerKind::Pgd { constraint, .. } = &cfg.optimizer {
        constraint.project_in_place(&mut x);
    }
    let mut counters = EvalCounters::default();
    let mut z_prev: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut xs = Vec::with_capacity(cfg.steps);
    let (mut x_best, mut best_cost) = (x.clone(), f64::INFINITY);
    let start = std::time::Instant::now();
    for t in 0..cfg.steps {
        let input = problem.layer_input(&x);
        let (z, trace) = forward_solve(&problem.layer, &input, z_prev.as_deref(), &cfg.forward)?;
        counters.add(trace.counters());
        let (cost, _) = loss_value_grad_z(&problem.inner_loss, &problem.head, &z)?;
        let grad = implicit_input_grad(problem, &x, &z, &cfg.adjoint, &mut counters)?;
        if !cost.is_finite() || !crate::linalg::all_finite(&grad) {
            return Err(Error::NonFinite(format!("sequential optimization at step {t}")));
        }
        rows.push(TraceRow {
            iter: t,
            f_evals: counters.f_evals,
            vjp_evals: counters.vjp_evals,
            residual: trace.final_residual(),
            kkt_norm: norm2(&grad),
            cost,
            wall_ns: start.elapsed().as_nanos() as u64,
        });
        xs.push(x.clone());
        if cost < best_cost {
            best_cost = cost;
            x_best = x.clone();
        }
        opt.update(&mut x, &grad)?;
        z_prev = Some(z);
    }
    Ok(SequentialResult {
        x_best,
        best_cost,
        x_final: x,
        xs,
        rows,
        forward_solves: cfg.steps,
        adjoint_solves: cfg.steps,
    })
}

/// Projected-gradient L2 attack: maximizes the cross-entropy of the
/// classifier at `x + δ` over `‖δ‖₂ ≤ eps`, starting from `δ = 0`. Returns the
/// final perturbation.
#[allow(clippy::too_many_arguments)]
pub fn pgd_attack(
    layer: &EquilibriumLayer,
    head: &OutputHead,
    x: &[f64],
    label: &[f64],
    eps: f64,
    steps: usize,
    step_size: f64,
    forward: &SolverConfig,
) -> Result<(Vec<f64>, SequentialResult)> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("attack radius must be nonnegative, got {eps}")));
    }
    let problem = InputOptProblem::perturbation(
        layer.clone(),
        head.clone(),
        InnerLoss::cross_entropy(label.to_vec()).negated(),
        x.to_vec(),
        ConstraintSet::l2_ball(x.len(), eps),
    )?;
    let cfg = SequentialConfig {
        steps,
        optimizer: OptimizerKind::Pgd {
            step: step_size,
            constraint: problem.constraint.clone(),
        },
        forward: forward.clone(),
        adjoint: AdjointConfig::default(),
    };
    let result = sequential_input_opt(&problem, &vec![0.0; x.len()], &cfg)?;
    Ok((result.x_final.clone(), result))
}

/// Loss and `θ`-gradient of `ℓ(h(z*(input)))` by standard DEQ implicit
/// differentiation: forward solve, Richardson adjoint, `μᵀ∂f/∂θ` plus the
/// direct head term. Returns `(loss, gradient, z*)`.
pub fn deq_loss_grad(
    layer: &EquilibriumLayer,
    head: &OutputHead,
    loss: &InnerLoss,
    input: &[f64],
    forward: &SolverConfig,
    adjoint: &AdjointConfig,
    counters: &mut EvalCounters,
) -> Result<(f64, ThetaGradient, Vec<f64>)> {
    let (z, trace) = forward_solve(layer, input, None, forward)?;
    counters.add(trace.counters());
    let (value, g) = loss_value_grad_z(loss, head, &z)?;
    let mu = adjoint_richardson(layer, &z, input, &g, adjoint.max_iter, adjoint.tol, counters)?;
    let grad = ThetaGradient {
        layer: layer.vjp_theta(&z, input, &mu)?,
        head: loss_grad_head(loss, head, &z)?,
    };
    counters.vjp_evals += 1;
    Ok((value, grad, z))
}

/// Residual of a forward fixed point, `‖f(z, x) − z‖`.
pub fn forward_residual(layer: &EquilibriumLayer, z: &[f64], input: &[f64]) -> Result<f64> {
    Ok(norm2(&sub(&layer.eval(z, input)?, z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jiio::{jiio_solve, Damping, Init, JiioConfig};
    use crate::layer::{contraction_rescale, LayerKind, LayerParams};
    use crate::linalg::{solve_dense, Matrix};
    use crate::rng::SeededRng;

    fn scalar_problem() -> InputOptProblem {
        let params =
            LayerParams::new(Matrix::from_rows(&[vec![0.5]]), Matrix::from_rows(&[vec![1.0]]), vec![0.0]).unwrap();
        InputOptProblem::latent(
            EquilibriumLayer::new(LayerKind::Linear, params),
            OutputHead::identity(1),
            InnerLoss::squared(vec![1.0]),
        )
        .unwrap()
    }

    fn random_layer(kind: LayerKind, n: usize, d: usize, seed: u64) -> EquilibriumLayer {
        let mut rng = SeededRng::new(seed);
        let raw = LayerParams::random(n, d, 0.9, 1.0, &mut rng).unwrap();
        EquilibriumLayer::new(kind, contraction_rescale(&raw, 0.6).unwrap())
    }

    #[test]
    fn forward_linear_matches_dense_solve() {
        let layer = random_layer(LayerKind::Linear, 6, 3, 1);
        let x = [0.3, -0.2, 0.9];
        let (z, trace) = forward_solve(&layer, &x, None, &SolverConfig::anderson(100, 1e-12, 10)).unwrap();
        assert!(trace.converged());
        let mut rhs = layer.params.u.matvec(&x);
        crate::linalg::axpy(1.0, &layer.params.b, &mut rhs);
        let oracle = solve_dense(&Matrix::identity(6).sub(&layer.params.w), &rhs).unwrap();
        assert!(norm2(&sub(&z, &oracle)) < 1e-10);
    }

    #[test]
    fn forward_memoryless_and_zero() {
        let mut layer = random_layer(LayerKind::Tanh, 4, 2, 2);
        layer.params.w = Matrix::zeros(4, 4);
        let x = [0.5, -1.0];
        let (z, _) = forward_solve(&layer, &x, None, &SolverConfig::naive(10, 1e-14)).unwrap();
        assert_eq!(z, layer.eval(&[0.0; 4], &x).unwrap());

        let mut layer = random_layer(LayerKind::Tanh, 4, 2, 3);
        layer.params.b = vec![0.0; 4];
        let (z, trace) = forward_solve(&layer, &[0.0, 0.0], None, &SolverConfig::anderson(10, 1e-12, 5)).unwrap();
        assert_eq!(z, vec![0.0; 4]);
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn implicit_gradient_scalar() {
        let p = scalar_problem();
        let mut c = EvalCounters::default();
        let g = implicit_input_grad(&p, &[0.5], &[1.0], &AdjointConfig::default(), &mut c).unwrap();
        assert_eq!(g, vec![0.0]);
        let g = implicit_input_grad(
            &p,
            &[0.0],
            &[0.0],
            &AdjointConfig {
                max_iter: 200,
                tol: 1e-14,
            },
            &mut c,
        )
        .unwrap();
        assert!((g[0] + 4.0).abs() < 1e-12, "gradient {}", g[0]);
    }

    #[test]
    fn implicit_gradient_matches_finite_differences() {
        let layer = random_layer(LayerKind::Linear, 5, 3, 4);
        let mut rng = SeededRng::new(5);
        let head = OutputHead::random(4, 5, &mut rng);
        let p = InputOptProblem::latent(layer, head, InnerLoss::squared(rng.normal_vec(4))).unwrap();
        let fwd = SolverConfig::anderson(200, 1e-14, 10);
        let tight = AdjointConfig {
            max_iter: 1000,
            tol: 1e-14,
        };
        let x = rng.normal_vec(3);
        let cost = |x: &[f64]| {
            let (z, _) = forward_solve(&p.layer, &p.layer_input(x), None, &fwd).unwrap();
            crate::loss::loss_eval(&p.inner_loss, &p.head, &z).unwrap()
        };
        let (z, _) = forward_solve(&p.layer, &x, None, &fwd).unwrap();
        let g = implicit_input_grad(&p, &x, &z, &tight, &mut EvalCounters::default()).unwrap();
        for i in 0..3 {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += 1e-6;
            down[i] -= 1e-6;
            let fd = (cost(&up) - cost(&down)) / 2e-6;
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn gradient_descent_converges_on_scalar() {
        let cfg = SequentialConfig {
            steps: 200,
            optimizer: OptimizerKind::Gd { step: 0.05 },
            forward: SolverConfig::anderson(100, 1e-12, 5),
            adjoint: AdjointConfig::default(),
        };
        let r = sequential_input_opt(&scalar_problem(), &[0.0], &cfg).unwrap();
        assert!((r.x_final[0] - 0.5).abs() < 1e-4);
        assert_eq!((r.forward_solves, r.adjoint_solves, r.rows.len()), (200, 200, 200));
    }

    #[test]
    fn zero_step_is_null() {
        for kind in [OptimizerKind::Gd { step: 0.0 }, OptimizerKind::adam(0.0)] {
            let cfg = SequentialConfig {
                steps: 5,
                optimizer: kind,
                forward: SolverConfig::anderson(100, 1e-12, 5),
                adjoint: AdjointConfig::default(),
            };
            let r = sequential_input_opt(&scalar_problem(), &[0.2], &cfg).unwrap();
            assert!(r.xs.iter().all(|x| x == &vec![0.2]));
        }
    }

    #[test]
    fn counters_sum_per_step_solves() {
        let p = scalar_problem();
        let cfg = SequentialConfig::adam(4, 0.1);
        let r = sequential_input_opt(&p, &[0.0], &cfg).unwrap();
        // Re-run each step by hand and add its counters.
        let mut expected = EvalCounters::default();
        let mut z_prev: Option<Vec<f64>> = None;
        for x in &r.xs {
            let (z, tr) = forward_solve(&p.layer, &p.layer_input(x), z_prev.as_deref(), &cfg.forward).unwrap();
            expected.add(tr.counters());
            implicit_input_grad(&p, x, &z, &cfg.adjoint, &mut expected).unwrap();
            z_prev = Some(z);
        }
        assert_eq!(r.counters(), expected);
    }

    #[test]
    fn pgd_stays_feasible_and_zero_radius_is_null() {
        let layer = random_layer(LayerKind::Tanh, 6, 4, 6);
        let mut rng = SeededRng::new(7);
        let head = OutputHead::random(3, 6, &mut rng);
        let x = rng.normal_vec(4);
        let label = vec![0.0, 1.0, 0.0];
        let fwd = SolverConfig::anderson(100, 1e-10, 10);
        let (delta, r) = pgd_attack(&layer, &head, &x, &label, 0.5, 20, 0.1, &fwd).unwrap();
        assert!(norm2(&delta) <= 0.5 + 1e-12);
        assert!(r.xs.iter().all(|d| norm2(d) <= 0.5));
        let (delta, _) = pgd_attack(&layer, &head, &x, &label, 0.0, 5, 0.1, &fwd).unwrap();
        assert_eq!(delta, vec![0.0; 4]);
    }

    #[test]
    fn sequential_and_joint_agree_on_linear_quadratic() {
        let layer = random_layer(LayerKind::Linear, 6, 3, 8);
        let mut rng = SeededRng::new(9);
        let head = OutputHead::random(6, 6, &mut rng);
        let p = InputOptProblem::latent(layer, head, InnerLoss::squared(rng.normal_vec(6))).unwrap();
        let cfg = SequentialConfig {
            steps: 3000,
            optimizer: OptimizerKind::adam(0.02),
            forward: SolverConfig::anderson(100, 1e-12, 10),
            adjoint: AdjointConfig {
                max_iter: 500,
                tol: 1e-12,
            },
        };
        let seq = sequential_input_opt(&p, &[0.0; 3], &cfg).unwrap();
        let joint = jiio_solve(
            &p,
            &Init::Zeros,
            &JiioConfig {
                damping: Damping::new(0.8, 0.6, 0.2),
                solver: SolverConfig::anderson(300, 1e-12, 20),
                selection: 1.0,
            },
        )
        .unwrap();
        let rel = norm2(&sub(&seq.x_best, &joint.state.x)) / norm2(&joint.state.x);
        assert!(rel <= 1e-4, "relative gap {rel}");
    }
}
