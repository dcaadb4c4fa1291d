//! Gradients of an outer objective with respect to the model parameters
//! `θ = (W, U, b, C, d)` at a solved augmented state.
//!
//! Two backward modes are provided: reusing the converged dual `μ*` (exact
//! when the outer loss is the inner loss or its negation), and the general
//! implicit backward through the dense KKT Jacobian. The Hutchinson Jacobian
//! regularizer and a central-difference checker live here as well.

use crate::error::{check_len, Error, Result};
use crate::jiio::{AugmentedState, AugmentedSystem, InputOptProblem};
use crate::layer::{EquilibriumLayer, LayerGrad};
use crate::linalg::{solve_dense, symmetric_eigenvalues, Matrix};
use crate::loss::{loss_grad_head, loss_grad_z, loss_grad_z_head_contraction, loss_hess_z, HeadGrad, InnerLoss};
use crate::rng::SeededRng;

/// Largest augmented dimension for which the dense KKT Jacobian is built.
pub const DENSE_KKT_LIMIT: usize = 600;

/// Objective differentiated with respect to `θ` at the solution.
#[derive(Debug, Clone, PartialEq)]
pub enum OuterLoss {
    SameAsInner,
    NegOfInner,
    /// A different loss on the same head, e.g. a supervised target.
    Custom(InnerLoss),
}

impl OuterLoss {
    /// The concrete loss this outer objective evaluates for `problem`.
    pub fn resolve(&self, inner: &InnerLoss) -> InnerLoss {
        match self {
            OuterLoss::SameAsInner => inner.clone(),
            OuterLoss::NegOfInner => inner.negated(),
            OuterLoss::Custom(loss) => loss.clone(),
        }
    }
}

/// Gradient over layer and head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGradient {
    pub layer: LayerGrad,
    pub head: HeadGrad,
}

impl ThetaGradient {
    pub fn zeros(n: usize, d: usize, p: usize) -> Self {
        Self {
            layer: LayerGrad::zeros(n, d),
            head: HeadGrad::zeros(p, n),
        }
    }

    /// Zero gradient shaped like `problem`'s parameters.
    pub fn zeros_like(problem: &InputOptProblem) -> Self {
        Self::zeros(problem.state_dim(), problem.layer.input_dim(), problem.head.output_dim())
    }

    pub fn add_assign(&mut self, other: &ThetaGradient) {
        self.layer.add_assign(&other.layer);
        self.head.add_assign(&other.head);
    }

    pub fn scale(&mut self, s: f64) {
        self.layer.scale(s);
        self.head.scale(s);
    }

    /// Flattened in the order `W, U, b, C, d`, matching [`theta_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.layer.to_flat();
        v.extend(self.head.to_flat());
        v
    }
}

/// Parameters of `problem` flattened as `W, U, b, C, d`.
pub fn theta_flat(problem: &InputOptProblem) -> Vec<f64> {
    let mut v = problem.layer.params.to_flat();
    v.extend(problem.head.to_flat());
    v
}

/// `problem` with its parameters replaced by the flat vector `theta`.
pub fn with_theta(problem: &InputOptProblem, theta: &[f64]) -> Result<InputOptProblem> {
    let nl = problem.layer.params.num_params();
    check_len("parameter vector", theta.len(), nl + problem.head.num_params())?;
    let mut out = problem.clone();
    out.layer.params = problem.layer.params.from_flat(&theta[..nl])?;
    out.head = problem.head.from_flat(&theta[nl..])?;
    Ok(out)
}

/// `θ`-gradient from the converged dual: `μ*ᵀ ∂f/∂θ` for the layer plus the
/// direct head term `∂ℓ/∂(C, d)`. Exact at a KKT point; its quality degrades
/// with the KKT residual.
pub fn grad_theta_reuse(problem: &InputOptProblem, v: &AugmentedState, outer: &OuterLoss) -> Result<ThetaGradient> {
    let sign = match outer {
        OuterLoss::SameAsInner => 1.0,
        OuterLoss::NegOfInner => -1.0,
        OuterLoss::Custom(_) => {
            return Err(Error::InvalidArgument(
                "the dual-reuse gradient needs the outer loss to be the inner loss or its negation".into(),
            ))
        }
    };
    check_state(problem, v)?;
    let input = problem.layer_input(&v.x);
    let mut grad = ThetaGradient {
        layer: problem.layer.vjp_theta(&v.z, &input, &v.mu)?,
        head: loss_grad_head(&problem.inner_loss, &problem.head, &v.z)?,
    };
    if sign < 0.0 {
        grad.scale(-1.0);
    }
    Ok(grad)
}

fn check_state(problem: &InputOptProblem, v: &AugmentedState) -> Result<()> {
    check_len("state z", v.z.len(), problem.state_dim())?;
    check_len("dual mu", v.mu.len(), problem.state_dim())?;
    check_len("variable x", v.x.len(), problem.var_dim)
}

/// Dense Jacobian of the (unprojected) KKT residual with respect to
/// `(z, μ, x)`; row blocks `(r_z, r_μ, r_x)`, column blocks `(z, μ, x)`.
pub fn assemble_kkt_jacobian(problem: &InputOptProblem, v: &AugmentedState) -> Result<Matrix> {
    check_state(problem, v)?;
    system_kkt_jacobian(&problem.system(), &v.to_vec())
}

/// [`assemble_kkt_jacobian`] for a system with several examples sharing `x`.
pub fn system_kkt_jacobian(system: &AugmentedSystem<'_>, v: &[f64]) -> Result<Matrix> {
    let dim = system.dim();
    if dim > DENSE_KKT_LIMIT {
        return Err(Error::DimensionTooLarge {
            size: dim,
            limit: DENSE_KKT_LIMIT,
        });
    }
    check_len("augmented state", v.len(), dim)?;
    let (n, k, dx, off) = (system.state_dim(), system.num_examples(), system.var_dim, system.var_offset);
    let (zs, mus, x) = system.split(v);
    let xs = 2 * k * n;
    let mut jac = Matrix::zeros(dim, dim);
    let eye = Matrix::identity(n);
    for (j, ex) in system.examples.iter().enumerate() {
        let z = &zs[j * n..(j + 1) * n];
        let mu = &mus[j * n..(j + 1) * n];
        let input = crate::jiio::layer_input(ex.base_input, off, x);
        let jz = system.layer.jac_z_dense(z, &input)?;
        let jx_full = system.layer.jac_x_dense(z, &input)?;
        let jx = Matrix::from_fn(n, dx, |r, c| jx_full[(r, off + c)]);
        let s = system.layer.second_vjp(z, &input, mu)?;
        let hess = loss_hess_z(ex.loss, system.head, z)?;
        let (zr, mr) = (j * n, k * n + j * n);

        jac.set_block(zr, zr, &jz.sub(&eye));
        jac.set_block(zr, xs, &jx);
        jac.set_block(mr, zr, &hess.add(&s.zz));
        jac.set_block(mr, mr, &jz.transpose().sub(&eye));
        jac.set_block(mr, xs, &Matrix::from_fn(n, dx, |r, c| s.zx[(r, off + c)]));
        jac.set_block(xs, zr, &Matrix::from_fn(dx, n, |r, c| s.xz[(off + r, c)]));
        jac.set_block(xs, mr, &jx.transpose());
        for r in 0..dx {
            for c in 0..dx {
                jac[(xs + r, xs + c)] += s.xx[(off + r, off + c)];
            }
        }
    }
    Ok(jac)
}

/// Implicit backward through the KKT conditions: solves `J_Kᵀ u = −g_v` and
/// returns `uᵀ ∂K/∂θ`, where `g_v` is the outer gradient with respect to the
/// augmented state. Direct `θ`-dependence of the outer loss is not included.
pub fn system_backward(system: &AugmentedSystem<'_>, v: &[f64], grad_v: &[f64]) -> Result<ThetaGradient> {
    let jac = system_kkt_jacobian(system, v)?;
    check_len("outer gradient", grad_v.len(), system.dim())?;
    let neg: Vec<f64> = grad_v.iter().map(|g| -g).collect();
    let u = solve_dense(&jac.transpose(), &neg)?;

    let layer = system.layer;
    let (n, k, off) = (system.state_dim(), system.num_examples(), system.var_offset);
    let (zs, mus, x) = system.split(v);
    let (uz, umu, ux) = system.split(&u);
    let mut ux_full = vec![0.0; layer.input_dim()];
    ux_full[off..off + system.var_dim].copy_from_slice(ux);

    let mut grad = ThetaGradient::zeros(n, layer.input_dim(), system.head.output_dim());
    for (j, ex) in system.examples.iter().enumerate().take(k) {
        let z = &zs[j * n..(j + 1) * n];
        let mu = &mus[j * n..(j + 1) * n];
        let u_z = &uz[j * n..(j + 1) * n];
        let u_mu = &umu[j * n..(j + 1) * n];
        let input = crate::jiio::layer_input(ex.base_input, off, x);

        // u_zᵀ f(z, x)
        grad.layer.add_assign(&layer.vjp_theta(z, &input, u_z)?);

        // u_μᵀ Wᵀ(D∘μ) + ũ_xᵀ Uᵀ(D∘μ) = cᵀ(D∘μ), c = W u_μ + U ũ_x
        let act = layer.activation(z, &input)?;
        let mut c = layer.params.w.matvec(u_mu);
        crate::linalg::axpy(1.0, &layer.params.u.matvec(&ux_full), &mut c);
        let dmu: Vec<f64> = act.slope.iter().zip(mu).map(|(d, m)| d * m).collect();
        grad.layer.w.add_outer(1.0, &dmu, u_mu);
        grad.layer.u.add_outer(1.0, &dmu, &ux_full);
        let g: Vec<f64> = c
            .iter()
            .zip(mu)
            .zip(&act.curvature)
            .map(|((ci, mi), dd)| ci * mi * dd)
            .collect();
        grad.layer.add_preact_grad(&g, z, &input);

        // u_μᵀ (∂ℓ/∂z)ᵀ through the head
        grad.head
            .add_assign(&loss_grad_z_head_contraction(ex.loss, system.head, z, u_mu)?);
    }
    Ok(grad)
}

/// `θ`-gradient of an arbitrary outer loss on the head output, by the
/// implicit backward through the dense KKT system.
pub fn grad_theta_general(problem: &InputOptProblem, v: &AugmentedState, outer: &OuterLoss) -> Result<ThetaGradient> {
    check_state(problem, v)?;
    let loss = outer.resolve(&problem.inner_loss);
    let n = problem.state_dim();
    let mut grad_v = vec![0.0; problem.augmented_dim()];
    grad_v[..n].copy_from_slice(&loss_grad_z(&loss, &problem.head, &v.z)?);
    let mut grad = system_backward(&problem.system(), &v.to_vec(), &grad_v)?;
    grad.head.add_assign(&loss_grad_head(&loss, &problem.head, &v.z)?);
    Ok(grad)
}

/// Hutchinson estimate of `‖∂f/∂z‖_F²` at `(z, x)` with `samples` Gaussian
/// probes, and its analytic gradient over the layer parameters (at fixed
/// `z`, `x`).
pub fn hutchinson_reg(
    layer: &EquilibriumLayer,
    z: &[f64],
    x: &[f64],
    rng: &mut SeededRng,
    samples: usize,
) -> Result<(f64, LayerGrad)> {
    if samples == 0 {
        return Err(Error::InvalidArgument("Hutchinson estimator needs at least one sample".into()));
    }
    let probes: Vec<Vec<f64>> = (0..samples).map(|_| rng.normal_vec(layer.state_dim())).collect();
    hutchinson_with_probes(layer, z, x, &probes)
}

/// [`hutchinson_reg`] with explicit probe vectors.
pub fn hutchinson_with_probes(
    layer: &EquilibriumLayer,
    z: &[f64],
    x: &[f64],
    probes: &[Vec<f64>],
) -> Result<(f64, LayerGrad)> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("Hutchinson estimator needs at least one probe".into()));
    }
    let act = layer.activation(z, x)?;
    let mut grad = LayerGrad::zeros(layer.state_dim(), layer.input_dim());
    let mut estimate = 0.0;
    for eps in probes {
        check_len("probe", eps.len(), layer.state_dim())?;
        // p = D∘(Wε); ∂‖p‖²/∂W = 2(D∘p)εᵀ through Wε and g zᵀ through D.
        let q = layer.params.w.matvec(eps);
        let p: Vec<f64> = q.iter().zip(&act.slope).map(|(qi, d)| qi * d).collect();
        estimate += crate::linalg::dot(&p, &p);
        let dp: Vec<f64> = p.iter().zip(&act.slope).map(|(pi, d)| 2.0 * pi * d).collect();
        grad.w.add_outer(1.0, &dp, eps);
        let g: Vec<f64> = p
            .iter()
            .zip(&q)
            .zip(&act.curvature)
            .map(|((pi, qi), dd)| 2.0 * pi * qi * dd)
            .collect();
        grad.add_preact_grad(&g, z, x);
    }
    let s = 1.0 / probes.len() as f64;
    grad.scale(s);
    Ok((estimate * s, grad))
}

/// Finite-difference stencil for [`fd_gradcheck_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(θ+h) − f(θ−h)) / 2h`, error `O(h²)`.
    Central,
    /// Five-point stencil, error `O(h⁴)`; allows a larger `h` when the
    /// function is only known to a few ulps.
    FivePoint,
}

/// Largest relative discrepancy between `analytic` and central differences
/// of `f` at `theta` with step `h`; the denominator is
/// `max(|analytic|, |fd|, 1e-8)`.
pub fn fd_gradcheck<F>(f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    fd_gradcheck_with(f, theta, analytic, h, Stencil::Central)
}

pub fn fd_gradcheck_with<F>(f: F, theta: &[f64], analytic: &[f64], h: f64, stencil: Stencil) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_len("analytic gradient", analytic.len(), theta.len())?;
    let fd = fd_gradient(f, theta, h, stencil)?;
    Ok(fd_relative_error(analytic, &fd))
}

/// Finite-difference gradient of `f` at `theta`.
pub fn fd_gradient<F>(mut f: F, theta: &[f64], h: f64, stencil: Stencil) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = theta.to_vec();
    let mut at = |probe: &mut Vec<f64>, i: usize, offset: f64| -> Result<f64> {
        probe[i] = theta[i] + offset;
        let value = f(probe);
        probe[i] = theta[i];
        value
    };
    (0..theta.len())
        .map(|i| {
            Ok(match stencil {
                Stencil::Central => (at(&mut probe, i, h)? - at(&mut probe, i, -h)?) / (2.0 * h),
                Stencil::FivePoint => {
                    let near = at(&mut probe, i, h)? - at(&mut probe, i, -h)?;
                    let far = at(&mut probe, i, 2.0 * h)? - at(&mut probe, i, -2.0 * h)?;
                    (8.0 * near - far) / (12.0 * h)
                }
            })
        })
        .collect()
}

/// Largest entrywise `|a − fd| / max(|a|, |fd|, 1e-8)`.
pub fn fd_relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(a, d)| (a - d).abs() / a.abs().max(d.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Local monotonicity and Lipschitz constants `(m, L)` of the joint operator
/// `G(v) = v − F(v)` (undamped) at `v`: `m` is the smallest eigenvalue of
/// the symmetric part of `∂G/∂v = −J_K` and `L = ‖∂G/∂v‖₂`.
///
/// The `x`–`x` block of `∂G/∂v` vanishes for a Linear layer, so `m ≤ 0`
/// there: the joint operator is never strongly monotone in the Euclidean
/// norm, and the step-size bound `α < m/L²` is vacuous on such instances.
pub fn joint_operator_constants(problem: &InputOptProblem, v: &AugmentedState) -> Result<(f64, f64)> {
    let g = assemble_kkt_jacobian(problem, v)?.scale(-1.0);
    let m = symmetric_eigenvalues(&g)?[0];
    let gtg = g.t_matmul(&g);
    let top = *symmetric_eigenvalues(&gtg)?.last().unwrap_or(&0.0);
    Ok((m, top.max(0.0).sqrt()))
}
