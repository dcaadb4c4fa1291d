//! The augmented fixed-point map over `(z₁..z_K, μ₁..μ_K, x)`.
//!
//! `K` examples share one input variable `x` (K = 1 for ordinary input
//! optimization, K = support size for meta-learning). Per example `j`:
//!
//! ```text
//! z_j⁺ = (1 − α_z) z_j + α_z f(z_j, x_j)
//! μ_j⁺ = (1 − α_μ) μ_j + α_μ ((∂f/∂z)ᵀ μ_j + (∂ℓ_j/∂z)ᵀ)
//! x⁺   = Π_C(x − α_x Σ_j (∂f/∂x)ᵀ μ_j)
//! ```
//!
//! where `x_j` is the example's base input with `x` added on the variable
//! slice. Fixed points are exactly the KKT points of
//! `min Σ_j ℓ_j(h(z_j))  s.t.  z_j = f(z_j, x_j), x ∈ C`.

use super::problem::{layer_input, ConstraintSet, Damping};
use crate::error::{check_len, Result};
use crate::layer::EquilibriumLayer;
use crate::linalg::{axpy, dot};
use crate::loss::{loss_value_grad_z, InnerLoss, OutputHead};
use crate::solver::{EvalCounters, MapEval, VectorMap};

/// One summand of the joint objective.
#[derive(Debug, Clone, Copy)]
pub struct ExampleTerm<'a> {
    pub base_input: &'a [f64],
    pub loss: &'a InnerLoss,
}

#[derive(Debug, Clone)]
pub struct AugmentedSystem<'a> {
    pub layer: &'a EquilibriumLayer,
    pub head: &'a OutputHead,
    pub constraint: &'a ConstraintSet,
    pub var_offset: usize,
    pub var_dim: usize,
    pub examples: Vec<ExampleTerm<'a>>,
}

/// Everything one evaluation of the system produces.
#[derive(Debug, Clone)]
pub(crate) struct Blocks {
    /// `f(z_j, x_j)`, stacked.
    pub f: Vec<f64>,
    /// `(∂f/∂z)ᵀ μ_j + (∂ℓ_j/∂z)ᵀ`, stacked.
    pub mu_target: Vec<f64>,
    /// `Σ_j (∂f/∂x)ᵀ μ_j` restricted to the variable slice.
    pub r_x: Vec<f64>,
    pub cost: f64,
}

/// KKT residual blocks; `r_x` is the projected-gradient residual
/// `x − Π(x − r_x)` for constrained problems.
#[derive(Debug, Clone, PartialEq)]
pub struct KktResidual {
    pub r_z: Vec<f64>,
    pub r_mu: Vec<f64>,
    pub r_x: Vec<f64>,
    pub norm: f64,
}

impl<'a> AugmentedSystem<'a> {
    pub fn state_dim(&self) -> usize {
        self.layer.state_dim()
    }

    pub fn num_examples(&self) -> usize {
        self.examples.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.num_examples() * self.state_dim() + self.var_dim
    }

    /// Splits `v` into stacked `z`, stacked `μ` and `x`.
    pub fn split<'v>(&self, v: &'v [f64]) -> (&'v [f64], &'v [f64], &'v [f64]) {
        let kn = self.num_examples() * self.state_dim();
        (&v[..kn], &v[kn..2 * kn], &v[2 * kn..])
    }

    pub(crate) fn blocks(&self, v: &[f64], counters: &mut EvalCounters) -> Result<Blocks> {
        check_len("augmented state", v.len(), self.dim())?;
        let n = self.state_dim();
        let (zs, mus, x) = self.split(v);
        let k = self.num_examples();
        let mut f = Vec::with_capacity(k * n);
        let mut mu_target = Vec::with_capacity(k * n);
        let mut r_x = vec![0.0; self.var_dim];
        let mut cost = 0.0;
        for (j, ex) in self.examples.iter().enumerate() {
            let z = &zs[j * n..(j + 1) * n];
            let mu = &mus[j * n..(j + 1) * n];
            let input = layer_input(ex.base_input, self.var_offset, x);
            let (fz, vz, vx) = self.layer.eval_with_vjps(z, &input, mu)?;
            counters.f_evals += 1;
            counters.vjp_evals += 2;
            let (value, grad) = loss_value_grad_z(ex.loss, self.head, z)?;
            cost += value;
            f.extend_from_slice(&fz);
            let mut target = vz;
            axpy(1.0, &grad, &mut target);
            mu_target.extend_from_slice(&target);
            axpy(1.0, &vx[self.var_offset..self.var_offset + self.var_dim], &mut r_x);
        }
        Ok(Blocks {
            f,
            mu_target,
            r_x,
            cost,
        })
    }

    pub(crate) fn kkt_from_blocks(&self, v: &[f64], b: &Blocks) -> KktResidual {
        let (zs, mus, x) = self.split(v);
        let r_z: Vec<f64> = b.f.iter().zip(zs).map(|(f, z)| f - z).collect();
        let r_mu: Vec<f64> = b.mu_target.iter().zip(mus).map(|(t, m)| t - m).collect();
        let r_x = if self.constraint.is_unconstrained() {
            b.r_x.clone()
        } else {
            let mut stepped: Vec<f64> = x.iter().zip(&b.r_x).map(|(xi, ri)| xi - ri).collect();
            self.constraint.project_in_place(&mut stepped);
            x.iter().zip(&stepped).map(|(xi, pi)| xi - pi).collect()
        };
        let norm = (dot(&r_z, &r_z) + dot(&r_mu, &r_mu) + dot(&r_x, &r_x)).sqrt();
        KktResidual { r_z, r_mu, r_x, norm }
    }

    pub fn kkt_residual(&self, v: &[f64]) -> Result<KktResidual> {
        let b = self.blocks(v, &mut EvalCounters::default())?;
        Ok(self.kkt_from_blocks(v, &b))
    }

    pub(crate) fn step_from_blocks(&self, v: &[f64], b: &Blocks, damping: &Damping, iter: usize) -> Vec<f64> {
        let (zs, mus, x) = self.split(v);
        let (az, am) = (damping.alpha_z, damping.alpha_mu);
        let ax = damping.alpha_x_at(iter);
        let mut out = Vec::with_capacity(v.len());
        out.extend(zs.iter().zip(&b.f).map(|(z, f)| (1.0 - az) * z + az * f));
        out.extend(mus.iter().zip(&b.mu_target).map(|(m, t)| (1.0 - am) * m + am * t));
        let start = out.len();
        out.extend(x.iter().zip(&b.r_x).map(|(xi, ri)| xi - ax * ri));
        self.constraint.project_in_place(&mut out[start..]);
        out
    }

    /// One damped augmented update at (0-based) iteration `iter`.
    pub fn step(&self, v: &[f64], damping: &Damping, iter: usize, counters: &mut EvalCounters) -> Result<Vec<f64>> {
        let b = self.blocks(v, counters)?;
        Ok(self.step_from_blocks(v, &b, damping, iter))
    }

    /// Sum of the inner losses at the `z` blocks of `v`.
    pub fn cost(&self, v: &[f64]) -> Result<f64> {
        let n = self.state_dim();
        let (zs, _, _) = self.split(v);
        let mut total = 0.0;
        for (j, ex) in self.examples.iter().enumerate() {
            total += crate::loss::loss_eval(ex.loss, self.head, &zs[j * n..(j + 1) * n])?;
        }
        Ok(total)
    }
}

/// [`AugmentedSystem`] as a solver map; tracks its own iteration count for the
/// damping schedule and reports cost and KKT norm of each evaluated point.
pub struct AugmentedMap<'a> {
    system: AugmentedSystem<'a>,
    damping: Damping,
    iter: usize,
}

impl<'a> AugmentedMap<'a> {
    pub fn new(system: AugmentedSystem<'a>, damping: Damping) -> Self {
        Self {
            system,
            damping,
            iter: 0,
        }
    }

    pub fn system(&self) -> &AugmentedSystem<'a> {
        &self.system
    }
}

impl VectorMap for AugmentedMap<'_> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn eval(&mut self, v: &[f64], counters: &mut EvalCounters) -> Result<MapEval> {
        let b = self.system.blocks(v, counters)?;
        let kkt = self.system.kkt_from_blocks(v, &b);
        let value = self.system.step_from_blocks(v, &b, &self.damping, self.iter);
        self.iter += 1;
        Ok(MapEval {
            value,
            cost: b.cost,
            kkt_norm: kkt.norm,
        })
    }

    fn project(&self, v: &mut [f64]) {
        let start = v.len() - self.system.var_dim;
        self.system.constraint.project_in_place(&mut v[start..]);
    }
}
