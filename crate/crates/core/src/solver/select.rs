/// Picks the returned iterate: among rows whose KKT norm is within a factor
/// `feasibility` of the smallest one, the lowest cost wins; ties go to the
/// earliest row.
///
/// Rows with NaN cost are never chosen unless every cost is NaN, in which
/// case the last row is returned. NaN KKT norms (not tracked) admit the row.
pub fn select_iterate(costs: &[f64], kkt_norms: &[f64], feasibility: f64) -> usize {
    assert!(!costs.is_empty(), "select_iterate needs a nonempty trace");
    let min_kkt = kkt_norms
        .iter()
        .filter(|k| k.is_finite())
        .fold(f64::INFINITY, |m, &k| m.min(k));
    let admissible = |i: usize| -> bool {
        let k = kkt_norms.get(i).copied().unwrap_or(f64::NAN);
        if feasibility.is_infinite() || !k.is_finite() || !min_kkt.is_finite() {
            return true;
        }
        k <= feasibility * min_kkt
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, &c) in costs.iter().enumerate() {
        if c.is_nan() || !admissible(i) {
            continue;
        }
        if best.is_none_or(|(_, bc)| c < bc) {
            best = Some((i, c));
        }
    }
    best.map_or(costs.len() - 1, |(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_argmin() {
        assert_eq!(select_iterate(&[5.0, 4.0, 2.0, 1.0], &[1.0; 4], f64::INFINITY), 3);
        assert_eq!(select_iterate(&[5.0, 1.0, 1.0], &[1.0; 3], f64::INFINITY), 1);
    }

    #[test]
    fn infeasible_iterate_skipped() {
        assert_eq!(select_iterate(&[5.0, 1.0, 3.0], &[1.0, 100.0, 1.0], 2.0), 2);
    }

    #[test]
    fn single_row() {
        assert_eq!(select_iterate(&[7.0], &[0.0], 10.0), 0);
    }

    #[test]
    fn missing_diagnostics() {
        assert_eq!(select_iterate(&[f64::NAN, f64::NAN], &[f64::NAN; 2], 10.0), 1);
        assert_eq!(select_iterate(&[3.0, 2.0], &[f64::NAN; 2], 10.0), 1);
        // zero minimum KKT norm with a finite factor keeps only exact zeros
        assert_eq!(select_iterate(&[1.0, 2.0], &[1e-3, 0.0], 10.0), 1);
    }
}
