//! Shared inputs for the benchmarks.

use lorentzlab::metric::catalog::{self, MatchedProfile};
use lorentzlab::MetricField;
use nalgebra::DMatrix;

/// Schwarzschild (M = 1) timelike start at r = 10 with angular momentum.
pub fn schwarzschild_start() -> (MetricField, [f64; 4], [f64; 4]) {
    (catalog::schwarzschild(1.0), [0.0, 10.0, std::f64::consts::FRAC_PI_2, 0.0], [1.2, 0.0, 0.0, 0.03])
}

pub fn matched() -> MetricField {
    catalog::matched_c11(1.0, MatchedProfile::Linear)
}

/// `diag(c, −C, …, −C)`.
pub fn window_matrix(d: usize, c: f64, big_c: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| match (i == j, i) {
        (true, 0) => c,
        (true, _) => -big_c,
        _ => 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_well_formed() {
        let (m, x, v) = schwarzschild_start();
        assert!(m.inner(&x, &v.to_vec().into(), &v.to_vec().into()) < 0.0);
        assert_eq!(window_matrix(3, 1.0, 2.0).trace(), -3.0);
        assert_eq!(matched().dim(), 2);
    }
}
