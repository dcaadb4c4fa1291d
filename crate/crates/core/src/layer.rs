//! Input-injected equilibrium layers `f(z, x) = σ(Wz + Ux + b)`.
//!
//! Two activations are supported: identity (`Linear`) and `tanh`. For both
//! the first-order products (VJPs in `z`, `x` and the parameters, JVP in `z`)
//! and the second-order contractions needed by the KKT Jacobian are closed
//! form. With `a = Wz + Ux + b` and `t = tanh(a)`:
//!
//! * `D  = diag(1 − t²)` is the activation derivative,
//! * `D' = diag(−2t(1 − t²))` is its derivative in `a`.
//!
//! `Linear` is the `D = I`, `D' = 0` specialization.

use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Tanh,
}

/// Weights of one layer: `W` (n×n), `U` (n×d), `b` (n).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl LayerParams {
    pub fn new(w: Matrix, u: Matrix, b: Vec<f64>) -> Result<Self> {
        let n = w.rows();
        if !w.is_square() || u.rows() != n || b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "layer params W {:?}, U {:?}, b {}",
                w.shape(),
                u.shape(),
                b.len()
            )));
        }
        Ok(Self { w, u, b })
    }

    /// Gaussian init with `W` rescaled to spectral norm `gamma`.
    pub fn random(n: usize, d: usize, gamma: f64, input_scale: f64, rng: &mut SeededRng) -> Result<Self> {
        let w = Matrix::random_normal(n, n, 1.0, rng);
        let u = Matrix::random_normal(n, d, input_scale / (d.max(1) as f64).sqrt(), rng);
        let b = rng.normal_vec(n).into_iter().map(|v| 0.1 * v).collect();
        contraction_rescale(&Self::new(w, u, b)?, gamma)
    }

    pub fn state_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn num_params(&self) -> usize {
        let n = self.state_dim();
        n * n + n * self.input_dim() + n
    }

    /// Flattened as `W`, `U`, `b`, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(self.u.as_slice());
        out.extend_from_slice(&self.b);
        out
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        check_len("flat layer params", flat.len(), self.num_params())?;
        let (n, d) = (self.state_dim(), self.input_dim());
        let (w, rest) = flat.split_at(n * n);
        let (u, b) = rest.split_at(n * d);
        Self::new(
            Matrix::from_vec(n, n, w.to_vec())?,
            Matrix::from_vec(n, d, u.to_vec())?,
            b.to_vec(),
        )
    }
}

/// Gradient with respect to `(W, U, b)`; same shapes as [`LayerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            w: Matrix::zeros(n, n),
            u: Matrix::zeros(n, d),
            b: vec![0.0; n],
        }
    }

    pub fn add_assign(&mut self, other: &LayerGrad) {
        axpy(1.0, other.w.as_slice(), self.w.as_mut_slice());
        axpy(1.0, other.u.as_slice(), self.u.as_mut_slice());
        axpy(1.0, &other.b, &mut self.b);
    }

    pub fn scale(&mut self, s: f64) {
        self.w.scale_mut(s);
        self.u.scale_mut(s);
        self.b.iter_mut().for_each(|v| *v *= s);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.w.as_slice().to_vec();
        out.extend_from_slice(self.u.as_slice());
        out.extend_from_slice(&self.b);
        out
    }

    /// Gradient of `⟨g, a⟩` where `a = Wz + Ux + b`, i.e. `(g zᵀ, g xᵀ, g)`.
    pub fn from_preact_grad(g: &[f64], z: &[f64], x: &[f64]) -> Self {
        let mut grad = LayerGrad::zeros(g.len(), x.len());
        grad.add_preact_grad(g, z, x);
        grad
    }

    pub fn add_preact_grad(&mut self, g: &[f64], z: &[f64], x: &[f64]) {
        self.w.add_outer(1.0, g, z);
        self.u.add_outer(1.0, g, x);
        axpy(1.0, g, &mut self.b);
    }
}

/// The four second-order contraction blocks of `L = μᵀf(z, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderBlocks {
    /// `∂/∂z [(∂f/∂z)ᵀμ]`, n×n.
    pub zz: Matrix,
    /// `∂/∂x [(∂f/∂z)ᵀμ]`, n×d.
    pub zx: Matrix,
    /// `∂/∂z [(∂f/∂x)ᵀμ]`, d×n.
    pub xz: Matrix,
    /// `∂/∂x [(∂f/∂x)ᵀμ]`, d×d.
    pub xx: Matrix,
}

/// Activation values at one `(z, x)`.
#[derive(Debug, Clone)]
pub struct Activation {
    /// `f(z, x)`
    pub out: Vec<f64>,
    /// diagonal of `D`
    pub slope: Vec<f64>,
    /// diagonal of `D'`
    pub curvature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumLayer {
    pub kind: LayerKind,
    pub params: LayerParams,
}

impl EquilibriumLayer {
    pub fn new(kind: LayerKind, params: LayerParams) -> Self {
        Self { kind, params }
    }

    pub fn state_dim(&self) -> usize {
        self.params.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    fn check(&self, z: &[f64], x: &[f64]) -> Result<()> {
        check_len("layer state z", z.len(), self.state_dim())?;
        check_len("layer input x", x.len(), self.input_dim())
    }

    /// `Wz + Ux + b`
    pub fn preactivation(&self, z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check(z, x)?;
        let p = &self.params;
        let mut a = p.w.matvec(z);
        axpy(1.0, &p.u.matvec(x), &mut a);
        axpy(1.0, &p.b, &mut a);
        Ok(a)
    }

    pub fn activation(&self, z: &[f64], x: &[f64]) -> Result<Activation> {
        let a = self.preactivation(z, x)?;
        Ok(match self.kind {
            LayerKind::Linear => Activation {
                slope: vec![1.0; a.len()],
                curvature: vec![0.0; a.len()],
                out: a,
            },
            LayerKind::Tanh => {
                let out: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
                let slope: Vec<f64> = out.iter().map(|t| 1.0 - t * t).collect();
                let curvature = out.iter().zip(&slope).map(|(t, s)| -2.0 * t * s).collect();
                Activation {
                    out,
                    slope,
                    curvature,
                }
            }
        })
    }

    /// `f(z, x)`
    pub fn eval(&self, z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activation(z, x)?.out)
    }

    fn scaled_cotangent(&self, act: &Activation, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&act.slope).map(|(wi, di)| wi * di).collect()
    }

    /// `(∂f/∂z)ᵀ w = Wᵀ(D w)`
    pub fn vjp_z(&self, z: &[f64], x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len("cotangent", w.len(), self.state_dim())?;
        let act = self.activation(z, x)?;
        Ok(self.params.w.matvec_t(&self.scaled_cotangent(&act, w)))
    }

    /// `(∂f/∂x)ᵀ w = Uᵀ(D w)`
    pub fn vjp_x(&self, z: &[f64], x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len("cotangent", w.len(), self.state_dim())?;
        let act = self.activation(z, x)?;
        Ok(self.params.u.matvec_t(&self.scaled_cotangent(&act, w)))
    }

    /// Gradient of `wᵀ f(z, x)` over `(W, U, b)`.
    pub fn vjp_theta(&self, z: &[f64], x: &[f64], w: &[f64]) -> Result<LayerGrad> {
        check_len("cotangent", w.len(), self.state_dim())?;
        let act = self.activation(z, x)?;
        let g = self.scaled_cotangent(&act, w);
        Ok(LayerGrad::from_preact_grad(&g, z, x))
    }

    /// `(∂f/∂z) v = D(W v)`
    pub fn jvp_z(&self, z: &[f64], x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len("tangent", v.len(), self.state_dim())?;
        let act = self.activation(z, x)?;
        let wv = self.params.w.matvec(v);
        Ok(wv.iter().zip(&act.slope).map(|(a, d)| a * d).collect())
    }

    /// `f(z, x)`, `(∂f/∂z)ᵀμ` and `(∂f/∂x)ᵀμ` from a single preactivation.
    pub fn eval_with_vjps(&self, z: &[f64], x: &[f64], mu: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        check_len("dual mu", mu.len(), self.state_dim())?;
        let act = self.activation(z, x)?;
        let g = self.scaled_cotangent(&act, mu);
        let vz = self.params.w.matvec_t(&g);
        let vx = self.params.u.matvec_t(&g);
        Ok((act.out, vz, vx))
    }

    /// Dense `∂f/∂z = D W`.
    pub fn jac_z_dense(&self, z: &[f64], x: &[f64]) -> Result<Matrix> {
        let act = self.activation(z, x)?;
        let w = &self.params.w;
        Ok(Matrix::from_fn(w.rows(), w.cols(), |i, j| act.slope[i] * w[(i, j)]))
    }

    /// Dense `∂f/∂x = D U`.
    pub fn jac_x_dense(&self, z: &[f64], x: &[f64]) -> Result<Matrix> {
        let act = self.activation(z, x)?;
        let u = &self.params.u;
        Ok(Matrix::from_fn(u.rows(), u.cols(), |i, j| act.slope[i] * u[(i, j)]))
    }

    /// Second derivatives of `μᵀ f(z, x)`. With `S = diag(μ ∘ D')` the blocks
    /// are `WᵀSW`, `WᵀSU`, `UᵀSW` and `UᵀSU`; all zero for `Linear`.
    pub fn second_vjp(&self, z: &[f64], x: &[f64], mu: &[f64]) -> Result<SecondOrderBlocks> {
        check_len("dual mu", mu.len(), self.state_dim())?;
        let act = self.activation(z, x)?;
        let (n, d) = (self.state_dim(), self.input_dim());
        if self.kind == LayerKind::Linear {
            return Ok(SecondOrderBlocks {
                zz: Matrix::zeros(n, n),
                zx: Matrix::zeros(n, d),
                xz: Matrix::zeros(d, n),
                xx: Matrix::zeros(d, d),
            });
        }
        let s: Vec<f64> = mu.iter().zip(&act.curvature).map(|(m, c)| m * c).collect();
        let p = &self.params;
        let sw = Matrix::from_fn(n, n, |i, j| s[i] * p.w[(i, j)]);
        let su = Matrix::from_fn(n, d, |i, j| s[i] * p.u[(i, j)]);
        Ok(SecondOrderBlocks {
            zz: p.w.t_matmul(&sw),
            zx: p.w.t_matmul(&su),
            xz: p.u.t_matmul(&sw),
            xx: p.u.t_matmul(&su),
        })
    }
}

/// Rescales `W` to spectral norm `gamma`; `U` and `b` are untouched.
pub fn contraction_rescale(params: &LayerParams, gamma: f64) -> Result<LayerParams> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "contraction target must lie in (0, 1), got {gamma}"
        )));
    }
    let mut rng = SeededRng::new(0x5eed);
    let sigma = crate::linalg::spectral_norm(&params.w, 200_000, 1e-13, &mut rng)?;
    let mut out = params.clone();
    out.w.scale_mut(gamma / sigma);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, norm2, sub};
    use approx::assert_abs_diff_eq;

    fn scalar_linear() -> EquilibriumLayer {
        let p = LayerParams::new(
            Matrix::from_rows(&[vec![0.5]]),
            Matrix::from_rows(&[vec![1.0]]),
            vec![0.0],
        )
        .unwrap();
        EquilibriumLayer::new(LayerKind::Linear, p)
    }

    fn random_layer(kind: LayerKind, n: usize, d: usize, seed: u64) -> (EquilibriumLayer, Vec<f64>, Vec<f64>) {
        let mut rng = SeededRng::new(seed);
        let p = LayerParams::random(n, d, 0.8, 1.0, &mut rng).unwrap();
        let z = rng.normal_vec(n);
        let x = rng.normal_vec(d);
        (EquilibriumLayer::new(kind, p), z, x)
    }

    #[test]
    fn zero_tanh_map() {
        let p = LayerParams::new(Matrix::zeros(3, 3), Matrix::zeros(3, 2), vec![0.0; 3]).unwrap();
        let layer = EquilibriumLayer::new(LayerKind::Tanh, p);
        assert_eq!(layer.eval(&[1.0, -2.0, 3.0], &[0.5, 0.1]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn scalar_linear_eval_and_vjp() {
        let layer = scalar_linear();
        assert_eq!(layer.eval(&[1.0], &[0.5]).unwrap(), vec![1.0]);
        assert_eq!(layer.vjp_z(&[1.0], &[0.5], &[1.0]).unwrap(), vec![0.5]);
        assert_eq!(layer.jvp_z(&[1.0], &[0.5], &[2.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn tanh_matches_scalar_loop() {
        let (layer, z, x) = random_layer(LayerKind::Tanh, 5, 3, 7);
        let got = layer.eval(&z, &x).unwrap();
        let p = &layer.params;
        for (i, g) in got.iter().enumerate() {
            let mut a = p.b[i];
            for (j, zj) in z.iter().enumerate() {
                a += p.w[(i, j)] * zj;
            }
            for (j, xj) in x.iter().enumerate() {
                a += p.u[(i, j)] * xj;
            }
            assert_abs_diff_eq!(*g, a.tanh(), epsilon = 1e-15);
        }
    }

    #[test]
    fn tanh_at_zero_preactivation() {
        let mut rng = SeededRng::new(2);
        let w = Matrix::random_normal(3, 3, 0.3, &mut rng);
        let p = LayerParams::new(w.clone(), Matrix::zeros(3, 1), vec![0.0; 3]).unwrap();
        let layer = EquilibriumLayer::new(LayerKind::Tanh, p);
        let (z, x, mu) = (vec![0.0; 3], vec![0.0], vec![1.0, -2.0, 0.5]);
        assert_eq!(layer.vjp_z(&z, &x, &mu).unwrap(), w.matvec_t(&mu));
        let blocks = layer.second_vjp(&z, &x, &mu).unwrap();
        assert_eq!(blocks.zz.frobenius(), 0.0);
        assert_eq!(blocks.xx.frobenius(), 0.0);
    }

    #[test]
    fn linear_has_no_curvature() {
        let (layer, z, x) = random_layer(LayerKind::Linear, 4, 2, 3);
        let b = layer.second_vjp(&z, &x, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for m in [&b.zz, &b.zx, &b.xz, &b.xx] {
            assert_eq!(m.frobenius(), 0.0);
        }
        let v = vec![0.3, -0.1, 0.7, 1.0];
        assert_eq!(layer.jvp_z(&z, &x, &v).unwrap(), layer.params.w.matvec(&v));
        assert_eq!(layer.jvp_z(&z, &x, &[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn jvp_vjp_adjoint() {
        for kind in [LayerKind::Linear, LayerKind::Tanh] {
            let (layer, z, x) = random_layer(kind, 6, 3, 19);
            let mut rng = SeededRng::new(20);
            let (w, v) = (rng.normal_vec(6), rng.normal_vec(6));
            let lhs = dot(&w, &layer.jvp_z(&z, &x, &v).unwrap());
            let rhs = dot(&layer.vjp_z(&z, &x, &w).unwrap(), &v);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn rescale_examples() {
        let p = LayerParams::new(Matrix::identity(3).scale(2.0), Matrix::zeros(3, 1), vec![0.0; 3]).unwrap();
        let q = contraction_rescale(&p, 0.8).unwrap();
        assert!(q.w.max_abs_diff(&Matrix::identity(3).scale(0.8)) < 1e-12);
        let r = contraction_rescale(&q, 0.8).unwrap();
        assert!(r.w.max_abs_diff(&q.w) < 1e-6);
        let zero = LayerParams::new(Matrix::zeros(2, 2), Matrix::zeros(2, 1), vec![0.0; 2]).unwrap();
        assert_eq!(contraction_rescale(&zero, 0.5), Err(Error::ZeroWeight));
        assert!(contraction_rescale(&p, 1.0).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let layer = scalar_linear();
        assert!(matches!(layer.eval(&[1.0, 2.0], &[0.0]), Err(Error::DimensionMismatch(_))));
        assert!(matches!(layer.vjp_x(&[1.0], &[0.0], &[1.0, 1.0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn flat_roundtrip() {
        let (layer, _, _) = random_layer(LayerKind::Tanh, 3, 2, 1);
        let flat = layer.params.to_flat();
        assert_eq!(layer.params.from_flat(&flat).unwrap(), layer.params);
    }

    #[test]
    fn contraction_holds_on_pairs() {
        let (layer, _, x) = random_layer(LayerKind::Tanh, 8, 3, 5);
        let mut rng = SeededRng::new(6);
        for _ in 0..1000 {
            let z1 = rng.normal_vec(8);
            let z2 = rng.normal_vec(8);
            let lhs = norm2(&sub(&layer.eval(&z1, &x).unwrap(), &layer.eval(&z2, &x).unwrap()));
            assert!(lhs <= 0.8 * norm2(&sub(&z1, &z2)) + 1e-12);
        }
    }
}
