//! Fixed-point and root-finding engines.
//!
//! All solvers drive a [`VectorMap`] and record a [`SolverTrace`] with one
//! row per map evaluation. The same engines run the plain forward DEQ map and
//! the augmented JIIO map; the latter reports inner cost and KKT norm through
//! [`MapEval`] so no extra layer evaluations are spent on diagnostics.

mod anderson;
mod broyden;
mod naive;
mod select;

pub use anderson::anderson;
pub use broyden::broyden;
pub use naive::iterate_naive;
pub use select::select_iterate;

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, sub};

/// Layer-evaluation bookkeeping: forward evaluations of `f` and
/// vector-Jacobian products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounters {
    pub f_evals: u64,
    pub vjp_evals: u64,
}

impl EvalCounters {
    pub fn total(&self) -> u64 {
        self.f_evals + self.vjp_evals
    }

    pub fn add(&mut self, other: EvalCounters) {
        self.f_evals += other.f_evals;
        self.vjp_evals += other.vjp_evals;
    }
}

/// Result of one map evaluation.
#[derive(Debug, Clone)]
pub struct MapEval {
    pub value: Vec<f64>,
    /// Inner cost at the evaluated point, NaN when the map has no notion of it.
    pub cost: f64,
    /// KKT norm at the evaluated point, NaN when unavailable.
    pub kkt_norm: f64,
}

impl MapEval {
    pub fn plain(value: Vec<f64>) -> Self {
        Self {
            value,
            cost: f64::NAN,
            kkt_norm: f64::NAN,
        }
    }
}

/// A map `ℝᵏ → ℝᵏ`: a self-map for the fixed-point solvers, a root map for
/// Broyden.
pub trait VectorMap {
    fn dim(&self) -> usize;

    fn eval(&mut self, v: &[f64], counters: &mut EvalCounters) -> Result<MapEval>;

    /// Restores feasibility after an extrapolated step. Identity by default.
    fn project(&self, _v: &mut [f64]) {}
}

/// Wraps a closure as a [`VectorMap`], charging one `f` evaluation per call.
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F> FnMap<F>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorMap for FnMap<F>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&mut self, v: &[f64], counters: &mut EvalCounters) -> Result<MapEval> {
        counters.f_evals += 1;
        Ok(MapEval::plain((self.f)(v)))
    }
}

/// Root map `g(v) = F(v) − v` of a fixed-point map.
pub struct FixedPointResidual<'a, M: ?Sized>(pub &'a mut M);

impl<M: VectorMap + ?Sized> VectorMap for FixedPointResidual<'_, M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&mut self, v: &[f64], counters: &mut EvalCounters) -> Result<MapEval> {
        let out = self.0.eval(v, counters)?;
        Ok(MapEval {
            value: sub(&out.value, v),
            ..out
        })
    }

    fn project(&self, v: &mut [f64]) {
        self.0.project(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AndersonType {
    /// Oblique coefficient system `(ΔVᵀΔG + λI)γ = ΔVᵀg`.
    I,
    /// Least squares `min ‖g − ΔGγ‖² + λ‖γ‖²`.
    II,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Naive,
    Anderson,
    Broyden,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Map evaluations for the fixed-point solvers; Broyden updates for
    /// Broyden (which spends one extra initial evaluation).
    pub max_iter: usize,
    /// Stop once the residual norm is at or below this value.
    pub tol: f64,
    /// Anderson window / Broyden rank-one pair budget.
    pub memory: usize,
    /// Anderson mixing coefficient.
    pub beta: f64,
    /// Ridge for the Anderson coefficient solve; `None` scales it to the
    /// current window, `1e-8·‖ΔG‖²_F` (Type-II) or `1e-8·‖ΔV‖_F‖ΔG‖_F`
    /// (Type-I).
    pub ridge: Option<f64>,
    pub anderson_type: AndersonType,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::Anderson,
            max_iter: 100,
            tol: 1e-8,
            memory: 20,
            beta: 1.0,
            ridge: None,
            anderson_type: AndersonType::II,
        }
    }
}

impl SolverConfig {
    pub fn naive(max_iter: usize, tol: f64) -> Self {
        Self {
            kind: SolverKind::Naive,
            max_iter,
            tol,
            memory: 0,
            ..Self::default()
        }
    }

    pub fn anderson(max_iter: usize, tol: f64, memory: usize) -> Self {
        Self {
            kind: SolverKind::Anderson,
            max_iter,
            tol,
            memory,
            ..Self::default()
        }
    }

    pub fn broyden(max_iter: usize, tol: f64, memory: usize) -> Self {
        Self {
            kind: SolverKind::Broyden,
            max_iter,
            tol,
            memory,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0) {
                return Err(Error::InvalidArgument(format!("ridge must be nonnegative, got {r}")));
            }
        }
        Ok(())
    }
}

/// Runs the solver selected by `cfg.kind`. For Broyden, the fixed-point map
/// is turned into its residual root map.
pub fn solve_fixed_point<M: VectorMap + ?Sized>(map: &mut M, v0: &[f64], cfg: &SolverConfig) -> Result<SolverTrace> {
    match cfg.kind {
        SolverKind::Naive => iterate_naive(map, v0, cfg),
        SolverKind::Anderson => anderson(map, v0, cfg),
        SolverKind::Broyden => broyden(&mut FixedPointResidual(map), v0, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIter,
    NonFinite,
}

/// One row per map evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub f_evals: u64,
    pub vjp_evals: u64,
    /// `‖F(v) − v‖` for fixed-point solvers, `‖g(v)‖` for Broyden.
    pub residual: f64,
    pub kkt_norm: f64,
    pub cost: f64,
    pub wall_ns: u64,
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
    /// `iterates[k]` is the point evaluated for `rows[k]`.
    pub iterates: Vec<Vec<f64>>,
    pub status: SolverStatus,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last_iterate(&self) -> &[f64] {
        self.iterates.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_residual(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.residual)
    }

    pub fn counters(&self) -> EvalCounters {
        self.rows.last().map_or(EvalCounters::default(), |r| EvalCounters {
            f_evals: r.f_evals,
            vjp_evals: r.vjp_evals,
        })
    }

    pub fn costs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cost).collect()
    }

    pub fn kkt_norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.kkt_norm).collect()
    }

    pub fn converged(&self) -> bool {
        self.status == SolverStatus::Converged
    }
}

/// Shared row bookkeeping for the three solvers.
pub(crate) struct Recorder {
    start: Instant,
    counters: EvalCounters,
    trace: SolverTrace,
}

impl Recorder {
    pub(crate) fn new() -> Self {
        Self {
            start: Instant::now(),
            counters: EvalCounters::default(),
            trace: SolverTrace {
                rows: Vec::new(),
                iterates: Vec::new(),
                status: SolverStatus::MaxIter,
            },
        }
    }

    pub(crate) fn eval<M: VectorMap + ?Sized>(&mut self, map: &mut M, v: &[f64]) -> Result<MapEval> {
        map.eval(v, &mut self.counters)
    }

    /// Appends a row; returns false (and marks the trace) when the point or
    /// its image is not finite.
    pub(crate) fn record(&mut self, v: &[f64], out: &MapEval, residual: f64) -> bool {
        let iter = self.trace.rows.len();
        self.trace.rows.push(TraceRow {
            iter,
            f_evals: self.counters.f_evals,
            vjp_evals: self.counters.vjp_evals,
            residual,
            kkt_norm: out.kkt_norm,
            cost: out.cost,
            wall_ns: self.start.elapsed().as_nanos() as u64,
        });
        self.trace.iterates.push(v.to_vec());
        if !(all_finite(v) && all_finite(&out.value) && residual.is_finite()) {
            self.trace.status = SolverStatus::NonFinite;
            return false;
        }
        true
    }

    pub(crate) fn finish(mut self, status: SolverStatus) -> SolverTrace {
        if self.trace.status != SolverStatus::NonFinite {
            self.trace.status = status;
        }
        self.trace
    }
}

pub(crate) fn check_start<M: VectorMap + ?Sized>(map: &M, v0: &[f64], cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    crate::error::check_len("initial iterate", v0.len(), map.dim())
}
