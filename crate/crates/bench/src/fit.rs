//! Convergence-slope and dof-for-error fitting rules.
//!
//! Slopes: with points sorted by cell count, the local slope between
//! neighbors `i, i+1` is `-ln(e_{i+1}/e_i) / ln(n_{i+1}/n_i)`. The
//! pre-saturation range starts at the first local slope of at least
//! [`STAGNATION_SLOPE`] and extends while each further local slope stays at
//! or above it and each error stays at or above [`SATURATION_FLOOR`]. The
//! fitted slope is the ordinary least-squares slope of `ln e` against
//! `ln n` over that range, negated. The peak slope is the largest local
//! slope in the range and the fine slope is its last local slope.

/// Errors below this are treated as round-off saturated.
pub const SATURATION_FLOOR: f64 = 1e-11;
/// Local slopes below this count as stagnation (pre-asymptotic or saturated).
pub const STAGNATION_SLOPE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub fitted: f64,
    pub peak: f64,
    pub fine: f64,
    /// Inclusive point range used.
    pub first: usize,
    pub last: usize,
    /// All local slopes, `len = points - 1`.
    pub local: Vec<f64>,
}

pub fn local_slopes(cells: &[f64], errors: &[f64]) -> Vec<f64> {
    cells
        .windows(2)
        .zip(errors.windows(2))
        .map(|(n, e)| -(e[1] / e[0]).ln() / (n[1] / n[0]).ln())
        .collect()
}

/// Least-squares slope of `y` against `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Applies the slope rule to points sorted by increasing cell count.
/// Returns `None` when fewer than two points fall in the range or any
/// error is not a positive finite number.
pub fn fit_convergence(cells: &[f64], errors: &[f64]) -> Option<SlopeFit> {
    if cells.len() != errors.len() || errors.len() < 2 || errors.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return None;
    }
    let local = local_slopes(cells, errors);
    let first = local
        .iter()
        .zip(&errors[1..])
        .position(|(s, e)| *s >= STAGNATION_SLOPE && *e >= SATURATION_FLOOR)?;
    let mut last = first + 1;
    while last < local.len() && local[last] >= STAGNATION_SLOPE && errors[last + 1] >= SATURATION_FLOOR {
        last += 1;
    }
    let x: Vec<f64> = cells[first..=last].iter().map(|n| n.ln()).collect();
    let y: Vec<f64> = errors[first..=last].iter().map(|e| e.ln()).collect();
    let range = &local[first..last];
    Some(SlopeFit {
        fitted: -least_squares_slope(&x, &y),
        peak: range.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        fine: *range.last()?,
        first,
        last,
        local,
    })
}

/// Dof at which the error curve crosses `target`, by log-log interpolation
/// between the first bracketing pair of neighbors. `None` when the target
/// lies outside the measured range.
pub fn dof_for_error(dofs: &[f64], errors: &[f64], target: f64) -> Option<f64> {
    dofs.windows(2).zip(errors.windows(2)).find_map(|(d, e)| {
        if !(e[0] >= target && e[1] < target) {
            return None;
        }
        let t = (target.ln() - e[0].ln()) / (e[1].ln() - e[0].ln());
        Some((d[0].ln() + t * (d[1].ln() - d[0].ln())).exp())
    })
}

/// The constant `c` in `dof = c (1/error)^(1/order)`.
pub fn kreiss_oliger_c(dof: f64, error: f64, order: usize) -> f64 {
    dof * error.powf(1.0 / order as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let cells = [4.0, 8.0, 16.0, 32.0];
        let errors: Vec<f64> = cells.iter().map(|n: &f64| 3.0 * n.powi(-5)).collect();
        let f = fit_convergence(&cells, &errors).unwrap();
        assert!((f.fitted - 5.0).abs() < 1e-12);
        assert!((f.peak - 5.0).abs() < 1e-12);
        assert_eq!((f.first, f.last), (0, 3));
    }

    #[test]
    fn range_skips_stagnant_head_and_saturated_tail() {
        let cells = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let errors = [0.5, 0.45, 0.45 / 64.0, 0.45 / 4096.0, 3e-12, 2.9e-12];
        let f = fit_convergence(&cells, &errors).unwrap();
        assert_eq!((f.first, f.last), (1, 3));
        assert!((f.fitted - 6.0).abs() < 1e-12);
        assert!((f.fine - 6.0).abs() < 1e-12);
    }

    #[test]
    fn fine_slope_follows_order_reduction() {
        let cells = [8.0, 16.0, 32.0, 64.0];
        let errors = [1e-2, 1e-2 / 64.0, 1e-2 / 64.0 / 8.0, 1e-2 / 64.0 / 64.0];
        let f = fit_convergence(&cells, &errors).unwrap();
        assert!((f.peak - 6.0).abs() < 1e-12);
        assert!((f.fine - 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_errors_give_no_fit() {
        assert!(fit_convergence(&[1.0, 2.0], &[1.0, f64::NAN]).is_none());
        assert!(fit_convergence(&[1.0, 2.0], &[1.0, 1.0]).is_none());
        assert!(fit_convergence(&[], &[]).is_none());
    }

    #[test]
    fn dof_interpolation() {
        // e = 100 / dof^2 crosses 1e-2 at dof = 100.
        let dofs = [10.0, 50.0, 200.0, 1000.0];
        let errs: Vec<f64> = dofs.iter().map(|d: &f64| 100.0 / (d * d)).collect();
        let d = dof_for_error(&dofs, &errs, 1e-2).unwrap();
        assert!((d - 100.0).abs() < 1e-9);
        assert!(dof_for_error(&dofs, &errs, 1e-9).is_none());
        assert!(dof_for_error(&dofs, &errs, 10.0).is_none());
        assert!((kreiss_oliger_c(100.0, 1e-2, 2) - 10.0).abs() < 1e-12);
    }
}
