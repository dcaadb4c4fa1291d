use crate::error::{check_len, Error, Result};
use crate::layer::EquilibriumLayer;
use crate::linalg::{norm2, sub};
use crate::loss::{InnerLoss, OutputHead};

/// Feasible set for the optimized input.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Unconstrained,
    L2Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ConstraintSet {
    /// Ball of radius `radius` around the origin.
    pub fn l2_ball(dim: usize, radius: f64) -> Self {
        ConstraintSet::L2Ball {
            center: vec![0.0; dim],
            radius,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ConstraintSet::Unconstrained => Ok(()),
            ConstraintSet::L2Ball { center, radius } => {
                check_len("ball center", center.len(), dim)?;
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidArgument(format!("ball radius must be nonnegative, got {radius}")));
                }
                Ok(())
            }
            ConstraintSet::Box { lo, hi } => {
                check_len("box lower bound", lo.len(), dim)?;
                check_len("box upper bound", hi.len(), dim)?;
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err(Error::InvalidArgument("box bounds must satisfy lo <= hi".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_unconstrained(&self) -> bool {
        matches!(self, ConstraintSet::Unconstrained)
    }

    /// Euclidean projection in place. Points already inside are left
    /// bit-identical.
    pub fn project_in_place(&self, x: &mut [f64]) {
        match self {
            ConstraintSet::Unconstrained => {}
            ConstraintSet::L2Ball { center, radius } => {
                let dist = norm2(&sub(x, center));
                if dist > *radius {
                    let s = if dist > 0.0 { radius / dist } else { 0.0 };
                    for (xi, ci) in x.iter_mut().zip(center) {
                        *xi = ci + s * (*xi - ci);
                    }
                    // Rounding can leave the result a few ulps outside; pull
                    // it in so membership holds exactly.
                    let mut d = norm2(&sub(x, center));
                    while d > *radius {
                        let shrink = 1.0 - 2.0 * f64::EPSILON;
                        for (xi, ci) in x.iter_mut().zip(center) {
                            *xi = ci + shrink * (*xi - ci);
                        }
                        d = norm2(&sub(x, center));
                    }
                }
            }
            ConstraintSet::Box { lo, hi } => {
                for ((xi, l), h) in x.iter_mut().zip(lo).zip(hi) {
                    *xi = xi.clamp(*l, *h);
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        match self {
            ConstraintSet::Unconstrained => true,
            ConstraintSet::L2Ball { center, radius } => norm2(&sub(x, center)) <= radius + slack,
            ConstraintSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(xi, (l, h))| *xi >= l - slack && *xi <= h + slack),
        }
    }
}

/// Euclidean projection onto `constraint`.
pub fn project(constraint: &ConstraintSet, x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    constraint.project_in_place(&mut out);
    out
}

/// Step sizes of the damped augmented update, with an optional schedule of
/// `(iteration, α_x)` reductions.
#[derive(Debug, Clone, PartialEq)]
pub struct Damping {
    pub alpha_z: f64,
    pub alpha_mu: f64,
    pub alpha_x: f64,
    pub schedule: Vec<(usize, f64)>,
}

impl Damping {
    pub fn new(alpha_z: f64, alpha_mu: f64, alpha_x: f64) -> Self {
        Self {
            alpha_z,
            alpha_mu,
            alpha_x,
            schedule: Vec::new(),
        }
    }

    /// `(0.8, 0.6, 0.01)`, used for latent fitting and inverse problems.
    pub fn latent() -> Self {
        Self::new(0.8, 0.6, 0.01)
    }

    /// Latent defaults with `α_x` dropped to 0.003 after 65 iterations.
    pub fn latent_eval() -> Self {
        Self::latent().with_reduction(65, 0.003)
    }

    /// `(0.8, 0.6, 0.6)` with `α_δ` reduced to 0.2 after 65 iterations.
    pub fn adversarial() -> Self {
        Self::new(0.8, 0.6, 0.6).with_reduction(65, 0.2)
    }

    /// `(0.8, 0.6, 0.04)` with `α_x` reduced to 0.01 after 65 iterations.
    pub fn meta() -> Self {
        Self::new(0.8, 0.6, 0.04).with_reduction(65, 0.01)
    }

    pub fn uniform(alpha: f64) -> Self {
        Self::new(alpha, alpha, alpha)
    }

    pub fn with_reduction(mut self, after: usize, alpha_x: f64) -> Self {
        self.schedule.push((after, alpha_x));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| (0.0..=1.0).contains(&a);
        if !(self.alpha_z > 0.0 && self.alpha_z <= 1.0 && self.alpha_mu > 0.0 && self.alpha_mu <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha_z and alpha_mu must lie in (0, 1], got {} and {}",
                self.alpha_z, self.alpha_mu
            )));
        }
        // α_x = 0 is allowed: it freezes the input and decouples the blocks
        if !ok(self.alpha_x) || self.schedule.iter().any(|&(_, a)| !ok(a)) {
            return Err(Error::InvalidArgument("alpha_x must lie in [0, 1]".into()));
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidArgument("damping schedule thresholds must increase".into()));
        }
        Ok(())
    }

    /// `α_x` in effect at (0-based) iteration `iter`: the last schedule entry
    /// whose threshold has been reached.
    pub fn alpha_x_at(&self, iter: usize) -> f64 {
        self.schedule
            .iter()
            .rev()
            .find(|(after, _)| iter >= *after)
            .map_or(self.alpha_x, |&(_, a)| a)
    }
}

/// `minimize_x ℓ(h(z), y)  s.t.  z = f(z, input(x)),  x ∈ C`.
///
/// The layer input is `base_input` with `x` added to the slice
/// `[var_offset, var_offset + var_dim)`: zeros with the full slice for latent
/// problems, the clean example for perturbation problems.
#[derive(Debug, Clone, PartialEq)]
pub struct InputOptProblem {
    pub layer: EquilibriumLayer,
    pub head: OutputHead,
    pub inner_loss: InnerLoss,
    pub constraint: ConstraintSet,
    pub base_input: Vec<f64>,
    pub var_offset: usize,
    pub var_dim: usize,
}

impl InputOptProblem {
    /// The whole layer input is the optimization variable.
    pub fn latent(layer: EquilibriumLayer, head: OutputHead, inner_loss: InnerLoss) -> Result<Self> {
        let d = layer.input_dim();
        let p = Self {
            layer,
            head,
            inner_loss,
            constraint: ConstraintSet::Unconstrained,
            base_input: vec![0.0; d],
            var_offset: 0,
            var_dim: d,
        };
        p.validate()?;
        Ok(p)
    }

    /// Optimizes a perturbation `δ` of `x0` over `constraint`.
    pub fn perturbation(
        layer: EquilibriumLayer,
        head: OutputHead,
        inner_loss: InnerLoss,
        x0: Vec<f64>,
        constraint: ConstraintSet,
    ) -> Result<Self> {
        let d = layer.input_dim();
        let p = Self {
            layer,
            head,
            inner_loss,
            constraint,
            base_input: x0,
            var_offset: 0,
            var_dim: d,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_constraint(mut self, constraint: ConstraintSet) -> Result<Self> {
        self.constraint = constraint;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.layer.state_dim(), self.layer.input_dim());
        check_len("head state dimension", self.head.state_dim(), n)?;
        check_len("loss target", self.inner_loss.target.len(), self.head.output_dim())?;
        check_len("base input", self.base_input.len(), d)?;
        if self.var_offset + self.var_dim > d {
            return Err(Error::DimensionMismatch(format!(
                "variable slice {}..{} exceeds input dimension {d}",
                self.var_offset,
                self.var_offset + self.var_dim
            )));
        }
        self.inner_loss.operator.diagonal(self.inner_loss.target.len())?;
        self.constraint.validate(self.var_dim)
    }

    pub fn state_dim(&self) -> usize {
        self.layer.state_dim()
    }

    /// Length of the augmented state `(z, μ, x)`.
    pub fn augmented_dim(&self) -> usize {
        2 * self.state_dim() + self.var_dim
    }

    /// Full layer input for variable value `x`.
    pub fn layer_input(&self, x: &[f64]) -> Vec<f64> {
        layer_input(&self.base_input, self.var_offset, x)
    }
}

pub(crate) fn layer_input(base: &[f64], offset: usize, x: &[f64]) -> Vec<f64> {
    let mut input = base.to_vec();
    for (slot, xi) in input[offset..offset + x.len()].iter_mut().zip(x) {
        *slot += xi;
    }
    input
}

/// The joint iterate `v = (z, μ, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub x: Vec<f64>,
}

impl AugmentedState {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            z: vec![0.0; n],
            mu: vec![0.0; n],
            x: vec![0.0; d],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.z.len() + self.x.len());
        v.extend_from_slice(&self.z);
        v.extend_from_slice(&self.mu);
        v.extend_from_slice(&self.x);
        v
    }

    pub fn from_slice(v: &[f64], n: usize) -> Result<Self> {
        if v.len() < 2 * n {
            return Err(Error::DimensionMismatch(format!(
                "augmented state of length {} cannot hold two blocks of {n}",
                v.len()
            )));
        }
        Ok(Self {
            z: v[..n].to_vec(),
            mu: v[n..2 * n].to_vec(),
            x: v[2 * n..].to_vec(),
        })
    }
}
