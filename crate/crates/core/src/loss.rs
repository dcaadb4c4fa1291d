//! Output heads `h(z) = Cz + d` and the inner losses `ℓ(h(z), y)`.
//!
//! Losses are written in terms of the head output `a = h(z)`; gradients and
//! Hessians in `z` follow from the chain rule `Cᵀ s` and `Cᵀ H C`.

use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::rng::SeededRng;

/// Affine readout `h(z) = Cz + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    pub c: Matrix,
    pub d: Vec<f64>,
}

impl OutputHead {
    pub fn new(c: Matrix, d: Vec<f64>) -> Result<Self> {
        check_len("head bias", d.len(), c.rows())?;
        Ok(Self { c, d })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            c: Matrix::identity(n),
            d: vec![0.0; n],
        }
    }

    pub fn random(p: usize, n: usize, rng: &mut SeededRng) -> Self {
        Self {
            c: Matrix::random_normal(p, n, 1.0 / (n as f64).sqrt(), rng),
            d: vec![0.0; p],
        }
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.c.cols()
    }

    pub fn num_params(&self) -> usize {
        self.c.rows() * self.c.cols() + self.d.len()
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("head input", z.len(), self.state_dim())?;
        let mut a = self.c.matvec(z);
        axpy(1.0, &self.d, &mut a);
        Ok(a)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.c.as_slice().to_vec();
        out.extend_from_slice(&self.d);
        out
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        check_len("flat head params", flat.len(), self.num_params())?;
        let (c, d) = flat.split_at(self.c.rows() * self.c.cols());
        Self::new(Matrix::from_vec(self.c.rows(), self.c.cols(), c.to_vec())?, d.to_vec())
    }
}

/// Gradient over `(C, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub c: Matrix,
    pub d: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros(p: usize, n: usize) -> Self {
        Self {
            c: Matrix::zeros(p, n),
            d: vec![0.0; p],
        }
    }

    pub fn add_assign(&mut self, other: &HeadGrad) {
        axpy(1.0, other.c.as_slice(), self.c.as_mut_slice());
        axpy(1.0, &other.d, &mut self.d);
    }

    pub fn scale(&mut self, s: f64) {
        self.c.scale_mut(s);
        self.d.iter_mut().for_each(|v| *v *= s);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.c.as_slice().to_vec();
        out.extend_from_slice(&self.d);
        out
    }
}

/// Corruption operator `A` applied to both the observation and the model
/// output in the inverse-problem loss `‖A y − A h(z)‖²`.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementOperator {
    Identity,
    /// Zeroes a `size × size` window of a `height × width` image whose top-left
    /// pixel is `(row, col)`.
    Mask {
        height: usize,
        width: usize,
        row: usize,
        col: usize,
        size: usize,
    },
    /// Identity operator; `sigma` is only used when generating observations.
    NoisyIdentity { sigma: f64 },
}

impl MeasurementOperator {
    /// Diagonal of the operator matrix for a `dim`-sized signal.
    pub fn diagonal(&self, dim: usize) -> Result<Vec<f64>> {
        match *self {
            MeasurementOperator::Identity | MeasurementOperator::NoisyIdentity { .. } => Ok(vec![1.0; dim]),
            MeasurementOperator::Mask {
                height,
                width,
                row,
                col,
                size,
            } => {
                check_len("masked image", dim, height * width)?;
                if row + size > height || col + size > width {
                    return Err(Error::InvalidArgument(format!(
                        "mask window ({row},{col})+{size} exceeds {height}x{width}"
                    )));
                }
                let mut diag = vec![1.0; dim];
                for r in row..row + size {
                    for c in col..col + size {
                        diag[r * width + c] = 0.0;
                    }
                }
                Ok(diag)
            }
        }
    }

    pub fn as_matrix(&self, dim: usize) -> Result<Matrix> {
        Ok(Matrix::from_diag(&self.diagonal(dim)?))
    }

    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        let diag = self.diagonal(y.len())?;
        Ok(y.iter().zip(&diag).map(|(a, b)| a * b).collect())
    }

    /// Produces a corrupted observation: masked for `Mask`, Gaussian noise
    /// (clamped to `[0, 1]`) for `NoisyIdentity`.
    pub fn corrupt(&self, y: &[f64], rng: &mut SeededRng) -> Result<Vec<f64>> {
        match *self {
            MeasurementOperator::NoisyIdentity { sigma } => Ok(y
                .iter()
                .map(|v| (v + sigma * rng.normal()).clamp(0.0, 1.0))
                .collect()),
            _ => self.apply(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SquaredError,
    NegSquaredError,
    CrossEntropy,
    NegCrossEntropy,
}

impl LossKind {
    pub fn is_negated(self) -> bool {
        matches!(self, LossKind::NegSquaredError | LossKind::NegCrossEntropy)
    }

    pub fn base(self) -> LossKind {
        match self {
            LossKind::NegSquaredError => LossKind::SquaredError,
            LossKind::NegCrossEntropy => LossKind::CrossEntropy,
            k => k,
        }
    }

    pub fn negated(self) -> LossKind {
        match self {
            LossKind::SquaredError => LossKind::NegSquaredError,
            LossKind::NegSquaredError => LossKind::SquaredError,
            LossKind::CrossEntropy => LossKind::NegCrossEntropy,
            LossKind::NegCrossEntropy => LossKind::CrossEntropy,
        }
    }
}

/// `ℓ(h(z), y)`. Cross-entropy targets are probability vectors (one-hot for
/// hard labels); the operator only affects the squared-error kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerLoss {
    pub kind: LossKind,
    pub target: Vec<f64>,
    pub operator: MeasurementOperator,
}

impl InnerLoss {
    pub fn squared(target: Vec<f64>) -> Self {
        Self {
            kind: LossKind::SquaredError,
            target,
            operator: MeasurementOperator::Identity,
        }
    }

    pub fn with_operator(target: Vec<f64>, operator: MeasurementOperator) -> Self {
        Self {
            kind: LossKind::SquaredError,
            target,
            operator,
        }
    }

    pub fn cross_entropy(target: Vec<f64>) -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            target,
            operator: MeasurementOperator::Identity,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            kind: self.kind.negated(),
            ..self.clone()
        }
    }

    fn sign(&self) -> f64 {
        if self.kind.is_negated() {
            -1.0
        } else {
            1.0
        }
    }

    fn weights(&self) -> Result<Vec<f64>> {
        self.operator
            .diagonal(self.target.len())
            .map(|d| d.into_iter().map(|m| m * m).collect())
    }

    /// Loss and `s = ∂ℓ/∂a` at head output `a`.
    pub fn value_and_grad_output(&self, a: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("loss input", a.len(), self.target.len())?;
        let sign = self.sign();
        let (value, grad) = match self.kind.base() {
            LossKind::SquaredError => {
                let m = self.weights()?;
                let r: Vec<f64> = self.target.iter().zip(a).map(|(y, ai)| y - ai).collect();
                let value = r.iter().zip(&m).map(|(ri, mi)| mi * ri * ri).sum::<f64>();
                let grad: Vec<f64> = r.iter().zip(&m).map(|(ri, mi)| -2.0 * mi * ri).collect();
                (value, grad)
            }
            _ => {
                let (lse, p) = log_softmax_parts(a);
                let mass: f64 = self.target.iter().sum();
                let value = mass * lse - dot(&self.target, a);
                let grad: Vec<f64> = p.iter().zip(&self.target).map(|(pi, yi)| mass * pi - yi).collect();
                (value, grad)
            }
        };
        Ok((sign * value, grad.into_iter().map(|g| sign * g).collect()))
    }

    /// `∂²ℓ/∂a²`
    pub fn hess_output(&self, a: &[f64]) -> Result<Matrix> {
        check_len("loss input", a.len(), self.target.len())?;
        let mut h = match self.kind.base() {
            LossKind::SquaredError => Matrix::from_diag(&self.weights()?.iter().map(|m| 2.0 * m).collect::<Vec<_>>()),
            _ => {
                let (_, p) = log_softmax_parts(a);
                let mass: f64 = self.target.iter().sum();
                Matrix::from_fn(p.len(), p.len(), |i, j| {
                    let diag = if i == j { p[i] } else { 0.0 };
                    mass * (diag - p[i] * p[j])
                })
            }
        };
        if self.kind.is_negated() {
            h.scale_mut(-1.0);
        }
        Ok(h)
    }
}

/// `(logsumexp(a), softmax(a))`, computed with the max shift.
fn log_softmax_parts(a: &[f64]) -> (f64, Vec<f64>) {
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

pub fn softmax(a: &[f64]) -> Vec<f64> {
    log_softmax_parts(a).1
}

/// `ℓ(h(z), y)`
pub fn loss_eval(loss: &InnerLoss, head: &OutputHead, z: &[f64]) -> Result<f64> {
    Ok(loss.value_and_grad_output(&head.apply(z)?)?.0)
}

/// `(∂ℓ/∂z)ᵀ = Cᵀ s`
pub fn loss_grad_z(loss: &InnerLoss, head: &OutputHead, z: &[f64]) -> Result<Vec<f64>> {
    let (_, s) = loss.value_and_grad_output(&head.apply(z)?)?;
    Ok(head.c.matvec_t(&s))
}

pub fn loss_value_grad_z(loss: &InnerLoss, head: &OutputHead, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (v, s) = loss.value_and_grad_output(&head.apply(z)?)?;
    Ok((v, head.c.matvec_t(&s)))
}

/// `∂²ℓ/∂z² = Cᵀ H C`
pub fn loss_hess_z(loss: &InnerLoss, head: &OutputHead, z: &[f64]) -> Result<Matrix> {
    let h = loss.hess_output(&head.apply(z)?)?;
    Ok(head.c.t_matmul(&h.matmul(&head.c)))
}

/// Direct gradient of `ℓ(h(z), y)` over the head parameters at fixed `z`.
pub fn loss_grad_head(loss: &InnerLoss, head: &OutputHead, z: &[f64]) -> Result<HeadGrad> {
    let (_, s) = loss.value_and_grad_output(&head.apply(z)?)?;
    let mut g = HeadGrad::zeros(head.output_dim(), head.state_dim());
    g.c.add_outer(1.0, &s, z);
    g.d = s;
    Ok(g)
}

/// Gradient over `(C, d)` of `wᵀ (∂ℓ/∂z)ᵀ = (C w)ᵀ s(Cz + d)` at fixed `z`, `w`.
pub fn loss_grad_z_head_contraction(loss: &InnerLoss, head: &OutputHead, z: &[f64], w: &[f64]) -> Result<HeadGrad> {
    check_len("contraction vector", w.len(), head.state_dim())?;
    let a = head.apply(z)?;
    let (_, s) = loss.value_and_grad_output(&a)?;
    let h = loss.hess_output(&a)?;
    let hcw = h.matvec(&head.c.matvec(w));
    let mut g = HeadGrad::zeros(head.output_dim(), head.state_dim());
    g.c.add_outer(1.0, &s, w);
    g.c.add_outer(1.0, &hcw, z);
    g.d = hcw;
    Ok(g)
}
