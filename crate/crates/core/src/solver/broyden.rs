use std::collections::VecDeque;

use super::{check_start, Recorder, SolverConfig, SolverStatus, SolverTrace, VectorMap};
use crate::error::Result;
use crate::linalg::{axpy, dot, norm2, sub};

/// Inverse-Jacobian estimate `H = −I + Σ uᵢ vᵢᵀ`.
struct LowRankInverse {
    us: VecDeque<Vec<f64>>,
    vs: VecDeque<Vec<f64>>,
    memory: usize,
}

impl LowRankInverse {
    fn apply(&self, w: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = w.iter().map(|x| -x).collect();
        for (u, v) in self.us.iter().zip(&self.vs) {
            axpy(dot(v, w), u, &mut out);
        }
        out
    }

    fn apply_t(&self, w: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = w.iter().map(|x| -x).collect();
        for (u, v) in self.us.iter().zip(&self.vs) {
            axpy(dot(u, w), v, &mut out);
        }
        out
    }

    /// Good-Broyden secant update `H⁺ = H + (s − Hy) sᵀH / (sᵀHy)`.
    fn update(&mut self, s: &[f64], y: &[f64]) {
        if self.memory == 0 {
            return;
        }
        let hy = self.apply(y);
        let denom = dot(s, &hy);
        if !denom.is_finite() || denom.abs() <= 1e-30 * norm2(s) * norm2(&hy) || denom == 0.0 {
            return;
        }
        let u: Vec<f64> = s.iter().zip(&hy).map(|(si, hi)| (si - hi) / denom).collect();
        let v = self.apply_t(s);
        if self.us.len() == self.memory {
            self.us.pop_front();
            self.vs.pop_front();
        }
        self.us.push_back(u);
        self.vs.push_back(v);
    }
}

/// Limited-memory good Broyden for `g(v) = 0` with unit line step.
///
/// `H₀ = −I`, so for the residual of a fixed-point map the first step is a
/// plain Picard step.
pub fn broyden<M: VectorMap + ?Sized>(map: &mut M, v0: &[f64], cfg: &SolverConfig) -> Result<SolverTrace> {
    check_start(map, v0, cfg)?;
    let mut rec = Recorder::new();
    let mut h = LowRankInverse {
        us: VecDeque::new(),
        vs: VecDeque::new(),
        memory: cfg.memory,
    };
    let mut v = v0.to_vec();
    let out = rec.eval(map, &v)?;
    let mut g = out.value.clone();
    if !rec.record(&v, &out, norm2(&g)) {
        return Ok(rec.finish(SolverStatus::NonFinite));
    }
    if norm2(&g) <= cfg.tol {
        return Ok(rec.finish(SolverStatus::Converged));
    }
    for _ in 0..cfg.max_iter {
        let step = h.apply(&g);
        let mut next = v.clone();
        axpy(-1.0, &step, &mut next);
        map.project(&mut next);
        let out = rec.eval(map, &next)?;
        let residual = norm2(&out.value);
        if !rec.record(&next, &out, residual) {
            break;
        }
        if residual <= cfg.tol {
            return Ok(rec.finish(SolverStatus::Converged));
        }
        let s = sub(&next, &v);
        let y = sub(&out.value, &g);
        h.update(&s, &y);
        v = next;
        g = out.value;
    }
    Ok(rec.finish(SolverStatus::MaxIter))
}
