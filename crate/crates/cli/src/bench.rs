//! Benchmarks and checks run by the harness: joint solve versus the
//! sequential baseline, solver comparisons and gradient checks.

use jiio_core::baselines::{forward_solve, sequential_input_opt, SequentialConfig};
use jiio_core::jiio::{jiio_solve, AugmentedState, Damping, Init, InputOptProblem, JiioConfig, JiioSolution};
use jiio_core::layer::{contraction_rescale, EquilibriumLayer, LayerKind, LayerParams};
use jiio_core::linalg::{axpy, norm_inf, random_orthogonal, sub, symmetric_eigenvalues, Matrix};
use jiio_core::loss::{loss_eval, InnerLoss, OutputHead};
use jiio_core::outer::{
    fd_gradient, fd_relative_error, grad_theta_general, grad_theta_reuse, theta_flat, with_theta, OuterLoss, Stencil,
};
use jiio_core::rng::SeededRng;
use jiio_core::solver::{solve_fixed_point, AndersonType, FnMap, SolverConfig, SolverTrace, TraceRow};

use crate::error::Result;
use crate::output::{Cell, Table};

/// Latent-fitting instance: random layer rescaled to spectral norm 0.6 in
/// `z`, random head, target drawn from `N(0, 0.25 I)`.
pub fn latent_instance(kind: LayerKind, n: usize, d: usize, p: usize, seed: u64) -> Result<InputOptProblem> {
    let mut rng = SeededRng::new(seed);
    let raw = LayerParams::random(n, d, 0.9, 1.0, &mut rng)?;
    let layer = EquilibriumLayer::new(kind, contraction_rescale(&raw, 0.6)?);
    let head = OutputHead::random(p, n, &mut rng);
    let target = rng.normal_vec(p).iter().map(|v| 0.5 * v).collect();
    Ok(InputOptProblem::latent(layer, head, InnerLoss::squared(target))?)
}

/// `count` latent instances with seeds `seed, seed + 1, …`.
pub fn latent_suite(kind: LayerKind, n: usize, d: usize, p: usize, count: usize, seed: u64) -> Result<Vec<InputOptProblem>> {
    (0..count as u64).map(|i| latent_instance(kind, n, d, p, seed + i)).collect()
}

/// Inner cost at `x` with `z` at its forward fixed point. Used only to judge
/// progress; not charged to either method.
pub fn true_cost(problem: &InputOptProblem, x: &[f64]) -> Result<f64> {
    let input = problem.layer_input(x);
    let (z, _) = forward_solve(&problem.layer, &input, None, &SolverConfig::anderson(500, 1e-12, 10))?;
    Ok(loss_eval(&problem.inner_loss, &problem.head, &z)?)
}

/// Cumulative layer evaluations at the first row whose cost is at or below
/// `target`.
pub fn evals_to_reach(rows: &[TraceRow], costs: &[f64], target: f64) -> Option<u64> {
    rows.iter()
        .zip(costs)
        .find(|(_, c)| **c <= target)
        .map(|(r, _)| r.f_evals + r.vjp_evals)
}

/// Per-instance comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub instance: usize,
    /// The baseline's final cost; `None` when the baseline ran no steps.
    pub target: Option<f64>,
    pub baseline_evals: Option<u64>,
    /// `None` when the joint solve never reached the target.
    pub jiio_evals: Option<u64>,
    pub ratio: Option<f64>,
    pub baseline_total: u64,
    pub jiio_total: u64,
    pub jiio_final_cost: f64,
    pub baseline_wall_ns: u64,
    pub jiio_wall_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    pub rows: Vec<EfficiencyRow>,
}

impl EfficiencyReport {
    /// Fraction of instances whose ratio is defined and at most `bound`.
    pub fn fraction_within(&self, bound: f64) -> f64 {
        let hits = self.rows.iter().filter(|r| r.ratio.is_some_and(|q| q <= bound)).count();
        hits as f64 / self.rows.len().max(1) as f64
    }

    pub fn total_baseline_evals(&self) -> u64 {
        self.rows.iter().map(|r| r.baseline_total).sum()
    }

    pub fn total_jiio_evals(&self) -> u64 {
        self.rows.iter().map(|r| r.jiio_total).sum()
    }

    /// CSV table; wall times are zeroed unless `wall_clock`.
    pub fn table(&self, wall_clock: bool) -> Table {
        let mut t = Table::new(&[
            "instance",
            "target_cost",
            "baseline_evals",
            "jiio_evals",
            "ratio",
            "baseline_total",
            "jiio_total",
            "jiio_final_cost",
            "baseline_wall_ns",
            "jiio_wall_ns",
        ]);
        let opt_int = |v: Option<u64>| v.map_or(Cell::Na, Cell::Int);
        let wall = |v: u64| Cell::Int(if wall_clock { v } else { 0 });
        for r in &self.rows {
            t.push(vec![
                r.instance.into(),
                r.target.into(),
                opt_int(r.baseline_evals),
                opt_int(r.jiio_evals),
                r.ratio.into(),
                r.baseline_total.into(),
                r.jiio_total.into(),
                r.jiio_final_cost.into(),
                wall(r.baseline_wall_ns),
                wall(r.jiio_wall_ns),
            ]);
        }
        t
    }
}

/// Runs the baseline and the joint solve on every instance (from `x = 0`)
/// and counts the layer evaluations each needs to first reach the
/// baseline's final cost. Joint-solve progress is judged on the true cost
/// of each iterate's `x`. A zero-step baseline leaves every ratio undefined.
pub fn bench_efficiency(
    suite: &[InputOptProblem],
    jiio: &JiioConfig,
    baseline: &SequentialConfig,
) -> Result<EfficiencyReport> {
    use rayon::prelude::*;
    let rows = suite
        .par_iter()
        .enumerate()
        .map(|(i, problem)| efficiency_instance(i, problem, jiio, baseline))
        .collect::<Result<Vec<_>>>()?;
    Ok(EfficiencyReport { rows })
}

fn efficiency_instance(
    instance: usize,
    problem: &InputOptProblem,
    jiio: &JiioConfig,
    baseline: &SequentialConfig,
) -> Result<EfficiencyRow> {
    let sol = jiio_solve(problem, &Init::Zeros, jiio)?;
    let jiio_total = sol.counters().total();
    let jiio_wall_ns = sol.trace.rows.last().map_or(0, |r| r.wall_ns);
    let jiio_final_cost = true_cost(problem, &sol.state.x)?;
    if baseline.steps == 0 {
        return Ok(EfficiencyRow {
            instance,
            target: None,
            baseline_evals: None,
            jiio_evals: None,
            ratio: None,
            baseline_total: 0,
            jiio_total,
            jiio_final_cost,
            baseline_wall_ns: 0,
            jiio_wall_ns,
        });
    }
    let base = sequential_input_opt(problem, &vec![0.0; problem.var_dim], baseline)?;
    let target = base.rows.last().map(|r| r.cost).unwrap_or(f64::INFINITY);
    let baseline_evals = evals_to_reach(&base.rows, &base.costs(), target);
    let jiio_evals = first_reach(problem, &sol, target)?;
    let ratio = match (jiio_evals, baseline_evals) {
        (Some(j), Some(b)) if b > 0 => Some(j as f64 / b as f64),
        _ => None,
    };
    Ok(EfficiencyRow {
        instance,
        target: Some(target),
        baseline_evals,
        jiio_evals,
        ratio,
        baseline_total: base.counters().total(),
        jiio_total,
        jiio_final_cost,
        baseline_wall_ns: base.rows.last().map_or(0, |r| r.wall_ns),
        jiio_wall_ns,
    })
}

fn first_reach(problem: &InputOptProblem, sol: &JiioSolution, target: f64) -> Result<Option<u64>> {
    let n = problem.state_dim();
    for (row, v) in sol.trace.rows.iter().zip(&sol.trace.iterates) {
        let x = AugmentedState::from_slice(v, n)?.x;
        if true_cost(problem, &x)? <= target {
            return Ok(Some(row.f_evals + row.vjp_evals));
        }
    }
    Ok(None)
}

/// Default joint-solve settings for the efficiency suite.
pub fn efficiency_jiio(max_iter: usize) -> JiioConfig {
    JiioConfig {
        damping: Damping::new(0.8, 0.6, 0.2),
        solver: SolverConfig::anderson(max_iter, 1e-10, 20),
        selection: jiio_core::jiio::DEFAULT_SELECTION,
    }
}

/// Settings for [`bench_solvers`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolverBench {
    pub dim: usize,
    pub spectral_radius: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
    /// Random Tanh DEQ forward problems solved in addition to the affine map.
    pub instances: usize,
    pub state_dim: usize,
    pub input_dim: usize,
}

/// Result of one solver on one problem.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub problem: String,
    pub solver: &'static str,
    pub trace: SolverTrace,
    /// Max-norm distance of the final iterate from the naive solution.
    pub diff_from_naive: f64,
}

fn solver_configs(b: &SolverBench) -> Vec<(&'static str, SolverConfig)> {
    vec![
        ("naive", SolverConfig::naive(b.max_iter, b.tol)),
        (
            "anderson-i",
            SolverConfig {
                anderson_type: AndersonType::I,
                ..SolverConfig::anderson(b.max_iter, b.tol, b.memory)
            },
        ),
        ("anderson-ii", SolverConfig::anderson(b.max_iter, b.tol, b.memory)),
        ("broyden", SolverConfig::broyden(b.max_iter, b.tol, 2 * b.max_iter)),
    ]
}

type BoxedMap = Box<dyn Fn(&[f64]) -> Vec<f64>>;

/// Runs naive iteration, Anderson I/II and Broyden on `z ↦ ρQz + c` (`Q`
/// random orthogonal, `‖c‖ = 1`) and on random Tanh DEQ forward problems.
pub fn bench_solvers(b: &SolverBench, seed: u64) -> Result<Vec<SolverRun>> {
    let mut rng = SeededRng::new(seed);
    let a = random_orthogonal(b.dim, &mut rng).scale(b.spectral_radius);
    let c = rng.normal_vec(b.dim);
    let nc = jiio_core::linalg::norm2(&c);
    let c: Vec<f64> = c.iter().map(|v| v / nc).collect();
    let mut problems: Vec<(String, BoxedMap)> = vec![(
        "affine".to_string(),
        Box::new(move |v: &[f64]| {
            let mut out = a.matvec(v);
            axpy(1.0, &c, &mut out);
            out
        }),
    )];
    for i in 0..b.instances {
        let raw = LayerParams::random(b.state_dim, b.input_dim, 0.9, 1.0, &mut rng)?;
        let layer = EquilibriumLayer::new(LayerKind::Tanh, contraction_rescale(&raw, 0.9)?);
        let x = rng.normal_vec(b.input_dim);
        problems.push((
            format!("deq-{i}"),
            Box::new(move |z: &[f64]| layer.eval(z, &x).expect("dimensions fixed at construction")),
        ));
    }
    let mut runs = Vec::new();
    for (name, f) in &problems {
        let dim = if name == "affine" { b.dim } else { b.state_dim };
        let z0 = vec![0.0; dim];
        let mut naive_final: Option<Vec<f64>> = None;
        for (solver, cfg) in solver_configs(b) {
            let trace = solve_fixed_point(&mut FnMap::new(dim, |v: &[f64]| f(v)), &z0, &cfg)?;
            let last = trace.last_iterate().to_vec();
            let reference = naive_final.get_or_insert_with(|| last.clone());
            let diff_from_naive = norm_inf(&sub(&last, reference));
            runs.push(SolverRun {
                problem: name.clone(),
                solver,
                trace,
                diff_from_naive,
            });
        }
    }
    Ok(runs)
}

pub fn solver_table(runs: &[SolverRun]) -> Table {
    let mut t = Table::new(&["problem", "solver", "iterations", "f_evals", "final_residual", "converged", "diff_from_naive"]);
    for r in runs {
        t.push(vec![
            r.problem.as_str().into(),
            r.solver.into(),
            (r.trace.len().saturating_sub(1)).into(),
            r.trace.counters().f_evals.into(),
            r.trace.final_residual().into(),
            (if r.trace.converged() { "yes" } else { "no" }).into(),
            r.diff_from_naive.into(),
        ]);
    }
    t
}

/// Agreement of the two outer-gradient modes with each other and with
/// finite differences through full re-solves.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub instance: usize,
    pub kind: LayerKind,
    pub kkt_norm: f64,
    /// Smallest eigenvalue of the finite-difference Hessian of the reduced
    /// cost at the solution; positive at a strict local minimum.
    pub min_hessian_eig: f64,
    pub reuse_vs_general: f64,
    pub reuse_vs_fd: f64,
    pub general_vs_fd: f64,
    /// The negated-loss gradient is exactly the negation.
    pub negation_exact: bool,
}

/// Relative 2-norm difference `‖a − b‖ / max(‖b‖, 1e-12)`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num = jiio_core::linalg::norm2(&sub(a, b));
    num / jiio_core::linalg::norm2(b).max(1e-12)
}

fn tight_config() -> JiioConfig {
    JiioConfig {
        damping: Damping::new(0.8, 0.6, 0.2),
        solver: SolverConfig::anderson(3000, 1e-13, 20),
        selection: 1.0,
    }
}

/// Iterates the forward map at the problem input for `x` until `z` stops
/// changing.
fn polish_forward(problem: &InputOptProblem, z: &[f64], x: &[f64]) -> jiio_core::Result<Vec<f64>> {
    let input = problem.layer_input(x);
    let mut z = z.to_vec();
    for _ in 0..2000 {
        let next = problem.layer.eval(&z, &input)?;
        if next == z {
            break;
        }
        z = next;
    }
    Ok(z)
}

/// Smallest eigenvalue of the central-difference Hessian (step `h`) of the
/// reduced cost `x ↦ ℓ(h(z*(x)))` at `x`.
pub fn reduced_hessian_min_eig(problem: &InputOptProblem, x: &[f64], h: f64) -> Result<f64> {
    let d = x.len();
    let at = |steps: &[(usize, f64)]| -> Result<f64> {
        let mut xp = x.to_vec();
        for &(i, s) in steps {
            xp[i] += s;
        }
        true_cost(problem, &xp)
    };
    let c0 = at(&[])?;
    let mut hess = Matrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = (at(&[(i, h)])? - 2.0 * c0 + at(&[(i, -h)])?) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)])? - at(&[(i, h), (j, -h)])? - at(&[(i, -h), (j, h)])? + at(&[(i, -h), (j, -h)])?)
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let eig = symmetric_eigenvalues(&hess)?;
    Ok(eig.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Runs the gradient check on one latent instance with an `n`-state,
/// `d`-input, `p`-output model, using a five-point stencil of step `h`.
pub fn gradcheck_instance(kind: LayerKind, n: usize, d: usize, p: usize, seed: u64, h: f64) -> Result<GradcheckRow> {
    let problem = latent_instance(kind, n, d, p, seed)?;
    let sol = jiio_solve(&problem, &Init::Zeros, &tight_config())?;
    let v = &sol.state;
    let reuse = grad_theta_reuse(&problem, v, &OuterLoss::SameAsInner)?.to_flat();
    let general = grad_theta_general(&problem, v, &OuterLoss::SameAsInner)?.to_flat();
    let neg = grad_theta_reuse(&problem, v, &OuterLoss::NegOfInner)?.to_flat();
    let resolved = |theta: &[f64]| -> jiio_core::Result<f64> {
        let p = with_theta(&problem, theta)?;
        let s = jiio_solve(&p, &Init::Warm(v.clone()), &tight_config())?;
        let z = polish_forward(&p, &s.state.z, &s.state.x)?;
        loss_eval(&p.inner_loss, &p.head, &z)
    };
    let fd = fd_gradient(resolved, &theta_flat(&problem), h, Stencil::FivePoint)?;
    Ok(GradcheckRow {
        instance: seed as usize,
        kind,
        kkt_norm: sol.kkt_norm(),
        min_hessian_eig: reduced_hessian_min_eig(&problem, &v.x, 1e-3)?,
        reuse_vs_general: rel_diff(&reuse, &general),
        reuse_vs_fd: fd_relative_error(&reuse, &fd),
        general_vs_fd: fd_relative_error(&general, &fd),
        negation_exact: neg.iter().zip(&reuse).all(|(a, b)| *a == -*b),
    })
}
