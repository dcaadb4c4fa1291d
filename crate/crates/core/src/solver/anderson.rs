use std::collections::VecDeque;

use super::{check_start, AndersonType, Recorder, SolverConfig, SolverStatus, SolverTrace, VectorMap};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, lstsq_ridge, norm2, solve_dense, sub, Matrix};

/// Anderson acceleration with a sliding window of `cfg.memory` differences.
///
/// With `g = F(v) − v` and windows `ΔV`, `ΔG` of iterate and residual
/// differences, the next iterate is `v + βg − (ΔV + βΔG)γ`. An empty window
/// with `β = 1` returns `F(v)` untouched, so `memory = 0` reproduces
/// [`super::iterate_naive`] bit for bit.
pub fn anderson<M: VectorMap + ?Sized>(map: &mut M, v0: &[f64], cfg: &SolverConfig) -> Result<SolverTrace> {
    check_start(map, v0, cfg)?;
    let mut rec = Recorder::new();
    let mut dv: VecDeque<Vec<f64>> = VecDeque::with_capacity(cfg.memory);
    let mut dg: VecDeque<Vec<f64>> = VecDeque::with_capacity(cfg.memory);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let beta = cfg.beta;

    let mut v = v0.to_vec();
    for k in 0..cfg.max_iter {
        let out = rec.eval(map, &v)?;
        let g = sub(&out.value, &v);
        let residual = norm2(&g);
        if !rec.record(&v, &out, residual) {
            break;
        }
        if residual <= cfg.tol {
            return Ok(rec.finish(SolverStatus::Converged));
        }
        if k + 1 == cfg.max_iter {
            break;
        }
        if cfg.memory > 0 {
            if let Some((vp, gp)) = prev.take() {
                if dv.len() == cfg.memory {
                    dv.pop_front();
                    dg.pop_front();
                }
                dv.push_back(sub(&v, &vp));
                dg.push_back(sub(&g, &gp));
            }
            prev = Some((v.clone(), g.clone()));
        }

        let gamma = if dv.is_empty() {
            None
        } else {
            match coefficients(&dv, &dg, &g, cfg.ridge, cfg.anderson_type) {
                Ok(gamma) => Some(gamma),
                Err(Error::SingularMatrix { .. }) => {
                    // Type-I can hit an exactly singular oblique system; drop
                    // the history and take a plain mixing step.
                    dv.clear();
                    dg.clear();
                    None
                }
                Err(e) => return Err(e),
            }
        };

        let mut next = match gamma {
            None if beta == 1.0 => out.value,
            None => {
                let mut next = v.clone();
                axpy(beta, &g, &mut next);
                next
            }
            Some(gamma) => {
                let mut next = v.clone();
                axpy(beta, &g, &mut next);
                for ((dvi, dgi), &c) in dv.iter().zip(&dg).zip(&gamma) {
                    axpy(-c, dvi, &mut next);
                    axpy(-c * beta, dgi, &mut next);
                }
                next
            }
        };
        map.project(&mut next);
        v = next;
    }
    Ok(rec.finish(SolverStatus::MaxIter))
}

/// Relative ridge used when the config leaves it unset.
const RELATIVE_RIDGE: f64 = 1e-8;

fn coefficients(
    dv: &VecDeque<Vec<f64>>,
    dg: &VecDeque<Vec<f64>>,
    g: &[f64],
    ridge: Option<f64>,
    kind: AndersonType,
) -> Result<Vec<f64>> {
    let cols = dg.len();
    let rows = g.len();
    let sq = |w: &VecDeque<Vec<f64>>| w.iter().map(|c| dot(c, c)).sum::<f64>();
    match kind {
        AndersonType::II => {
            let lambda = ridge.unwrap_or_else(|| RELATIVE_RIDGE * sq(dg));
            let mut a = Matrix::zeros(rows, cols);
            for (j, col) in dg.iter().enumerate() {
                a.set_column(j, col);
            }
            lstsq_ridge(&a, g, lambda)
        }
        AndersonType::I => {
            let lambda = ridge.unwrap_or_else(|| RELATIVE_RIDGE * (sq(dv) * sq(dg)).sqrt());
            let mut m = Matrix::from_fn(cols, cols, |i, j| dot(&dv[i], &dg[j]));
            for i in 0..cols {
                m[(i, i)] += lambda;
            }
            let rhs: Vec<f64> = dv.iter().map(|col| dot(col, g)).collect();
            solve_dense(&m, &rhs)
        }
    }
}
