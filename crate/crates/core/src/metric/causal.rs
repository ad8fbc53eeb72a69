use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{MetricError, MetricField, Region, Result};
use crate::linalg;

/// Relative threshold on `|g(v,v)| / ‖v‖²_h` below which `v` is null.
pub const DEFAULT_NULL_TOL: f64 = 1e-10;
/// Causal vectors sampled per point in cone comparisons.
pub const CONE_FAN: usize = 360;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CausalClass {
    Timelike,
    Null,
    Spacelike,
}

impl CausalClass {
    pub fn is_causal(self) -> bool {
        !matches!(self, CausalClass::Spacelike)
    }
}

fn classify_raw(g: &DMatrix<f64>, h: &DMatrix<f64>, v: &DVector<f64>, tol: f64) -> Result<CausalClass> {
    if v.iter().all(|c| *c == 0.0) {
        return Err(MetricError::ZeroVector);
    }
    let q = linalg::inner(g, v, v);
    let hn = linalg::inner(h, v, v);
    Ok(if q < -tol * hn {
        CausalClass::Timelike
    } else if q > tol * hn {
        CausalClass::Spacelike
    } else {
        CausalClass::Null
    })
}

pub fn classify_vector(metric: &MetricField, x: &[f64], v: &DVector<f64>) -> Result<CausalClass> {
    classify_vector_with_tol(metric, x, v, DEFAULT_NULL_TOL)
}

pub fn classify_vector_with_tol(metric: &MetricField, x: &[f64], v: &DVector<f64>, tol: f64) -> Result<CausalClass> {
    if v.len() != metric.dim() {
        return Err(MetricError::DimensionMismatch {
            expected: metric.dim(),
            got: v.len(),
        });
    }
    classify_raw(&metric.g(x), &metric.background(), v, tol)
}

fn check_region(metrics: &[&MetricField], region: &Region, n_samples: usize) -> Result<()> {
    if region.is_empty() || n_samples == 0 {
        return Err(MetricError::EmptyRegion);
    }
    for m in metrics {
        if m.dim() != region.dim() {
            return Err(MetricError::DimensionMismatch {
                expected: m.dim(),
                got: region.dim(),
            });
        }
    }
    Ok(())
}

/// Sampled `sup_x sup_{|X|_h=|Y|_h=1} |g1(X,Y) − g2(X,Y)|`, using `h` of `g1`.
/// For each point the inner supremum is the spectral radius of the
/// difference in an `h`-orthonormal basis, which is taken exactly.
pub fn dh_distance(g1: &MetricField, g2: &MetricField, region: &Region, n_samples: usize, seed: u64) -> Result<f64> {
    check_region(&[g1, g2], region, n_samples)?;
    let h = g1.background();
    let l_inv = h
        .clone()
        .cholesky()
        .ok_or(MetricError::DegenerateMetric { coords: region.centre() })?
        .l()
        .try_inverse()
        .ok_or(MetricError::DegenerateMetric { coords: region.centre() })?;
    let mut sup = 0.0f64;
    for x in region.sample(n_samples, seed) {
        g1.check_point(&x)?;
        g2.check_point(&x)?;
        let d = g1.g(&x) - g2.g(&x);
        let m = &l_inv * d * l_inv.transpose();
        let ev = linalg::sym_eigenvalues(&m);
        let r = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !r.is_finite() {
            return Err(MetricError::NonFinite { coords: x });
        }
        sup = sup.max(r);
    }
    Ok(sup)
}

/// Future-directed `g`-causal fan `e0 + r·ω` with `ω` unit in the spatial frame.
fn causal_fan(basis: &[DVector<f64>], fan: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = basis.len();
    let mut out = Vec::with_capacity(fan);
    if n == 2 {
        for k in 0..fan {
            let a = -1.0 + 2.0 * k as f64 / (fan - 1).max(1) as f64;
            out.push(&basis[0] + &basis[1] * a);
        }
        return out;
    }
    out.push(basis[0].clone());
    for i in 1..n {
        out.push(&basis[0] + &basis[i]);
        out.push(&basis[0] - &basis[i]);
    }
    let radii = [1.0, 0.5];
    let unit_sphere = |rng: &mut ChaCha8Rng, k: usize| loop {
        let v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break v.into_iter().map(|a| a / norm).collect::<Vec<f64>>();
        }
    };
    while out.len() < fan {
        let w = unit_sphere(rng, n - 1);
        let r = radii[out.len() % radii.len()];
        let mut v = basis[0].clone();
        for i in 1..n {
            v += &basis[i] * (r * w[i - 1]);
        }
        out.push(v);
    }
    out
}

/// First sampled `g1`-causal vector that fails to be `g2`-timelike.
pub fn cone_compare_witness(
    g1: &MetricField,
    g2: &MetricField,
    region: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<Option<(Vec<f64>, DVector<f64>)>> {
    check_region(&[g1, g2], region, n_samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let h2 = g2.background();
    for x in region.sample(n_samples, seed) {
        g1.check_point(&x)?;
        g2.check_point(&x)?;
        let basis = g1.orthonormal_basis(&x)?;
        let g2x = g2.g(&x);
        for v in causal_fan(&basis, CONE_FAN, &mut rng) {
            if classify_raw(&g2x, &h2, &v, DEFAULT_NULL_TOL)? != CausalClass::Timelike {
                return Ok(Some((x, v)));
            }
        }
    }
    Ok(None)
}

/// True iff every sampled `g1`-causal vector is `g2`-timelike (`g1 ≺ g2`).
pub fn cone_compare(g1: &MetricField, g2: &MetricField, region: &Region, n_samples: usize, seed: u64) -> Result<bool> {
    Ok(cone_compare_witness(g1, g2, region, n_samples, seed)?.is_none())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::catalog;
    use crate::metric::Chart;
    use proptest::prelude::*;
    use rand::Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn shifted(base: &MetricField, eps: f64) -> MetricField {
        let b = base.clone();
        MetricField::from_fn("shifted", base.chart().clone(), move |x| b.g(x) + DMatrix::identity(x.len(), x.len()) * eps)
    }

    fn narrowed_time(n: usize, eps: f64) -> MetricField {
        MetricField::from_fn("wide", Chart::unbounded("c", n), move |_| {
            let mut g = DMatrix::identity(n, n);
            g[(0, 0)] = -(1.0 + eps) * (1.0 + eps);
            g
        })
    }

    #[test]
    fn minkowski_classes() {
        let m = catalog::minkowski(4);
        let x = [0.0; 4];
        assert_eq!(classify_vector(&m, &x, &dv(&[1.0, 0.0, 0.0, 0.0])).unwrap(), CausalClass::Timelike);
        assert_eq!(classify_vector(&m, &x, &dv(&[1.0, 1.0, 0.0, 0.0])).unwrap(), CausalClass::Null);
        assert_eq!(classify_vector(&m, &x, &dv(&[1.0, 2.0, 0.0, 0.0])).unwrap(), CausalClass::Spacelike);
        assert_eq!(classify_vector(&m, &x, &dv(&[0.0; 4])), Err(MetricError::ZeroVector));
    }

    #[test]
    fn dh_of_identical_metrics_is_zero() {
        let m = catalog::schwarzschild(1.0);
        let r = Region::new(vec![0.0, 5.0, 1.0, 0.0], vec![1.0, 8.0, 2.0, 1.0]);
        assert_eq!(dh_distance(&m, &m, &r, 50, 1).unwrap(), 0.0);
        assert_eq!(dh_distance(&m, &m, &Region::new(vec![1.0; 4], vec![0.0; 4]), 5, 1), Err(MetricError::EmptyRegion));
    }

    #[test]
    fn dh_of_identity_shift_matches_brute_force() {
        let m = catalog::minkowski(3);
        let eps = 0.01;
        let s = shifted(&m, eps);
        let r = Region::new(vec![-1.0; 3], vec![1.0; 3]);
        let d = dh_distance(&m, &s, &r, 20, 3).unwrap();
        assert!((d - eps).abs() < 1e-15);
        // brute force over sampled h-unit pairs never exceeds the exact sup and gets close
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut best = 0.0f64;
        for _ in 0..2000 {
            let x: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (x, y) = (dv(&x).normalize(), dv(&y).normalize());
            let p = [0.0; 3];
            let diff = linalg::inner(&s.g(&p), &x, &y) - linalg::inner(&m.g(&p), &x, &y);
            best = best.max(diff.abs());
        }
        assert!(best <= d + 1e-15 && best > 0.95 * d);
    }

    #[test]
    fn wider_cones_contain_narrow_causal_fan() {
        let m = catalog::minkowski(4);
        let r = Region::new(vec![-1.0; 4], vec![1.0; 4]);
        assert!(cone_compare(&m, &narrowed_time(4, 0.01), &r, 10, 5).unwrap());
        assert!(!cone_compare(&m, &m, &r, 10, 5).unwrap());
        let m2 = catalog::minkowski(2);
        let r2 = Region::new(vec![-1.0; 2], vec![1.0; 2]);
        assert!(cone_compare(&m2, &narrowed_time(2, 0.01), &r2, 4, 5).unwrap());
        assert!(!cone_compare(&narrowed_time(2, 0.01), &m2, &r2, 4, 5).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn classification_is_scale_invariant(v in proptest::collection::vec(-5.0f64..5.0, 4), s in 1e-3f64..1e3) {
            prop_assume!(v.iter().any(|c| c.abs() > 1e-6));
            let m = catalog::schwarzschild(1.0);
            let x = [0.0, 6.0, 1.0, 0.0];
            let v = dv(&v);
            prop_assert_eq!(classify_vector(&m, &x, &v).unwrap(), classify_vector(&m, &x, &(&v * s)).unwrap());
        }

        #[test]
        fn dh_is_a_pseudometric(e1 in 0.0f64..0.1, e2 in 0.0f64..0.1, seed in 0u64..1000) {
            let base = catalog::space_form(3, -1.0);
            let (a, b) = (shifted(&base, e1), shifted(&base, -e2));
            let r = Region::new(vec![-0.5; 3], vec![0.5; 3]);
            let dab = dh_distance(&a, &b, &r, 30, seed).unwrap();
            let dba = dh_distance(&b, &a, &r, 30, seed).unwrap();
            prop_assert!((dab - dba).abs() < 1e-14);
            let d_a0 = dh_distance(&a, &base, &r, 30, seed).unwrap();
            let d_0b = dh_distance(&base, &b, &r, 30, seed).unwrap();
            prop_assert!(dab <= d_a0 + d_0b + 1e-14);
        }
    }
}
