use super::{check_start, Recorder, SolverConfig, SolverStatus, SolverTrace, VectorMap};
use crate::error::Result;
use crate::linalg::{norm2, sub};

/// Plain Picard iteration `v ← F(v)`.
pub fn iterate_naive<M: VectorMap + ?Sized>(map: &mut M, v0: &[f64], cfg: &SolverConfig) -> Result<SolverTrace> {
    check_start(map, v0, cfg)?;
    let mut rec = Recorder::new();
    let mut v = v0.to_vec();
    for k in 0..cfg.max_iter {
        let out = rec.eval(map, &v)?;
        let residual = norm2(&sub(&out.value, &v));
        if !rec.record(&v, &out, residual) {
            break;
        }
        if residual <= cfg.tol {
            return Ok(rec.finish(SolverStatus::Converged));
        }
        if k + 1 == cfg.max_iter {
            break;
        }
        v = out.value;
        map.project(&mut v);
    }
    Ok(rec.finish(SolverStatus::MaxIter))
}
