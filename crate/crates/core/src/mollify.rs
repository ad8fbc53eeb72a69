//! Component-wise mollification of metrics and scalar fields, with the
//! diagnostics used to check convergence of the smoothed objects.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::metric::{self, Branch, MetricError, MetricField, MetricSource, Region, Regularity};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MollifyError {
    #[error("region padded by {eps} leaves chart `{chart}`")]
    PaddingViolation { chart: String, eps: f64 },
    #[error("smoothed metric lost Lorentzian signature at {coords:?}")]
    SignatureLost { coords: Vec<f64> },
    #[error("epsilon ladder must be strictly decreasing and positive")]
    BadLadder,
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T> = std::result::Result<T, MollifyError>;

pub const DEFAULT_NODES: usize = 16;
pub const DEFAULT_LADDER: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

/// Unnormalised bump `exp(-1/(1-|s|²))` on the unit ball.
pub fn bump(s: &[f64]) -> f64 {
    let r2: f64 = s.iter().map(|v| v * v).sum();
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

fn bump_gradient(s: &[f64]) -> Vec<f64> {
    let r2: f64 = s.iter().map(|v| v * v).sum();
    if r2 >= 1.0 {
        return vec![0.0; s.len()];
    }
    let q = 1.0 - r2;
    let b = (-1.0 / q).exp();
    s.iter().map(|v| -2.0 * v * b / (q * q)).collect()
}

/// Standard mollifier `ρ_ε(y) = ρ(y/ε)/εⁿ` on the coordinate axes `axes`,
/// discretised by a tensor Gauss–Legendre rule on `[-1,1]^k`.
///
/// Weights are rescaled so the discrete mass is exactly one.
#[derive(Debug, Clone)]
pub struct MollifierKernel {
    epsilon: f64,
    dim: usize,
    axes: Vec<usize>,
    nodes: Vec<Vec<f64>>,
    /// `w_k ρ(s_k)`, summing to one
    weights: Vec<f64>,
    /// `w_k ∂_a ρ(s_k)` with the same normalisation
    grad_weights: Vec<Vec<f64>>,
    raw_mass: f64,
}

impl MollifierKernel {
    /// Kernel acting on every coordinate of an `dim`-dimensional chart.
    pub fn standard(dim: usize, epsilon: f64) -> Result<Self> {
        Self::on_axes(dim, (0..dim).collect(), epsilon, DEFAULT_NODES)
    }

    pub fn on_axes(dim: usize, axes: Vec<usize>, epsilon: f64, nodes_per_axis: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(MollifyError::BadEpsilon(epsilon));
        }
        assert!(!axes.is_empty() && axes.iter().all(|&a| a < dim), "kernel axes out of range");
        let (x, w) = gauss_legendre(nodes_per_axis);
        let k = axes.len();
        let total = nodes_per_axis.pow(k as u32);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut grad_weights = Vec::new();
        for mut idx in 0..total {
            let mut s = Vec::with_capacity(k);
            let mut wt = 1.0;
            for _ in 0..k {
                let i = idx % nodes_per_axis;
                idx /= nodes_per_axis;
                s.push(x[i]);
                wt *= w[i];
            }
            let rho = bump(&s);
            if rho == 0.0 {
                continue;
            }
            grad_weights.push(bump_gradient(&s).into_iter().map(|g| g * wt).collect::<Vec<_>>());
            weights.push(wt * rho);
            nodes.push(s);
        }
        let raw_mass: f64 = weights.iter().sum();
        for v in &mut weights {
            *v /= raw_mass;
        }
        // Discrete integration by parts, -∫ s_a ∂_a ρ = ∫ ρ = 1, so that
        // derivatives of mollified affine data are exact.
        for j in 0..k {
            let m: f64 = -nodes.iter().zip(&grad_weights).map(|(s, g)| s[j] * g[j]).sum::<f64>();
            for g in &mut grad_weights {
                g[j] /= m;
            }
        }
        Ok(Self {
            epsilon,
            dim,
            axes,
            nodes,
            weights,
            grad_weights,
            raw_mass,
        })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(MollifyError::BadEpsilon(epsilon));
        }
        let mut k = self.clone();
        k.epsilon = epsilon;
        Ok(k)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn support_radius(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Quadrature estimate of `∫ρ` before normalisation.
    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest first moment over the kernel axes (zero for an even rule).
    pub fn odd_moment_max(&self) -> f64 {
        (0..self.axes.len())
            .map(|a| self.nodes.iter().zip(&self.weights).map(|(s, w)| w * s[a]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// `∫ s_a² ρ(s) ds` on the unit kernel.
    pub fn second_moment(&self, a: usize) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(s, w)| w * s[a] * s[a]).sum()
    }

    /// `max_a ∫ |s_a| |∂_a ρ(s)| ds`, the constant in
    /// `|∂²(f*ρ_ε)| ≤ Lip(f′) · C` for `C^{1,1}` data.
    pub fn kernel_constant(&self) -> f64 {
        (0..self.axes.len())
            .map(|a| self.nodes.iter().zip(&self.grad_weights).map(|(s, g)| (s[a] * g[a]).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn shifted(&self, x: &[f64], k: usize, out: &mut [f64]) {
        out.copy_from_slice(x);
        for (j, &a) in self.axes.iter().enumerate() {
            out[a] = x[a] - self.epsilon * self.nodes[k][j];
        }
    }

    /// `(f * ρ_ε)(x)`.
    pub fn convolve<F: Fn(&[f64]) -> f64>(&self, f: F, x: &[f64]) -> f64 {
        let mut y = x.to_vec();
        let mut s = 0.0;
        for k in 0..self.nodes.len() {
            self.shifted(x, k, &mut y);
            s += self.weights[k] * f(&y);
        }
        s
    }

    /// `∂_a (f * ρ_ε)(x) = ε⁻¹ ∫ f(x − εs) ∂_a ρ(s) ds` for a kernel axis `a`.
    pub fn convolve_gradient<F: Fn(&[f64]) -> f64>(&self, f: F, x: &[f64], axis: usize) -> f64 {
        let Some(j) = self.axes.iter().position(|&a| a == axis) else {
            return 0.0;
        };
        let mut y = x.to_vec();
        let mut s = 0.0;
        for k in 0..self.nodes.len() {
            self.shifted(x, k, &mut y);
            s += self.grad_weights[k][j] * f(&y);
        }
        s / self.epsilon
    }

    fn convolve_matrices<F: Fn(&[f64]) -> DMatrix<f64>>(&self, f: F, x: &[f64], weights: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let mut y = x.to_vec();
        let mut acc: Option<DMatrix<f64>> = None;
        for k in 0..self.nodes.len() {
            self.shifted(x, k, &mut y);
            let term = f(&y) * weights(k);
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
        acc.unwrap_or_else(|| DMatrix::zeros(self.dim, self.dim))
    }
}

/// `g * ρ_ε` evaluated by quadrature at every call.
struct Mollified {
    base: MetricField,
    kernel: MollifierKernel,
}

impl Mollified {
    fn base_derivatives(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        crate::metric::metric_derivatives(&self.base, y, Branch::Auto)
    }

    /// `∂_d ∂_c g_ε` via one derivative on the data and one on the kernel.
    fn second_derivatives(&self, x: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        let n = self.base.dim();
        let mut out = vec![vec![DMatrix::zeros(n, n); n]; n];
        let mut y = x.to_vec();
        for k in 0..self.kernel.nodes.len() {
            self.kernel.shifted(x, k, &mut y);
            let dg = self.base_derivatives(&y);
            for (j, &d) in self.kernel.axes.iter().enumerate() {
                let w = self.kernel.grad_weights[k][j] / self.kernel.epsilon;
                for c in 0..n {
                    out[d][c] += &dg[c] * w;
                }
            }
        }
        out
    }
}

impl MetricSource for Mollified {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn components(&self, x: &[f64], _b: Branch) -> DMatrix<f64> {
        self.kernel.convolve_matrices(|y| self.base.g(y), x, |k| self.kernel.weights[k])
    }

    fn derivatives(&self, x: &[f64], _b: Branch) -> Option<Vec<DMatrix<f64>>> {
        let n = self.base.dim();
        let mut out = vec![DMatrix::zeros(n, n); n];
        let mut y = x.to_vec();
        for k in 0..self.kernel.nodes.len() {
            self.kernel.shifted(x, k, &mut y);
            let w = self.kernel.weights[k];
            for (c, d) in self.base_derivatives(&y).into_iter().enumerate() {
                out[c] += d * w;
            }
        }
        Some(out)
    }
}

/// Smoothed metric `g_ε = g * ρ_ε`, valid on `region`.
pub fn smooth_metric(metric: &MetricField, kernel: &MollifierKernel, region: &Region) -> Result<MetricField> {
    let eps = kernel.epsilon();
    if !metric.chart().contains_padded(region, eps) {
        return Err(MollifyError::PaddingViolation {
            chart: metric.chart().id.clone(),
            eps,
        });
    }
    assert_eq!(kernel.dim(), metric.dim(), "kernel and metric dimensions differ");
    let mut chart = metric.chart().clone();
    for i in 0..chart.dim() {
        if chart.periods[i].is_none() {
            chart.lower[i] = chart.lower[i].max(region.lower[i]);
            chart.upper[i] = chart.upper[i].min(region.upper[i]);
        }
    }
    let src = Mollified {
        base: metric.clone(),
        kernel: kernel.clone(),
    };
    let mut out = MetricField::new(format!("{}*rho[{eps}]", metric.name()), chart, Regularity::Smooth, Arc::new(src));
    if metric.has_background() {
        out = out.with_background(metric.background());
    }
    for p in region.grid(5) {
        match out.check_signature(&p) {
            Ok(()) => {}
            Err(MetricError::SignatureViolation { coords, .. }) | Err(MetricError::DegenerateMetric { coords }) => {
                return Err(MollifyError::SignatureLost { coords })
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeShift {
    /// `g_00 → (1 + kε) g_00`: strictly wider cones.
    Widen,
    /// `g_00 → (1 − kε) g_00`: strictly narrower cones.
    Narrow,
}

/// Time–time component of `metric` scaled by `1 ± amount`.
pub fn cone_adjusted(metric: &MetricField, amount: f64, shift: ConeShift) -> MetricField {
    let factor = match shift {
        ConeShift::Widen => 1.0 + amount,
        ConeShift::Narrow => 1.0 - amount,
    };
    let base = metric.clone();
    let base_d = metric.clone();
    let has_d = metric.has_derivatives();
    let tag = if shift == ConeShift::Widen { "wide" } else { "narrow" };
    let g = move |x: &[f64]| {
        let mut g = base.g(x);
        g[(0, 0)] *= factor;
        g
    };
    let mut out = if has_d {
        MetricField::from_fn_with_derivatives(format!("{}[{tag}]", metric.name()), metric.chart().clone(), g, move |x| {
            let mut d = crate::metric::metric_derivatives(&base_d, x, Branch::Auto);
            for m in &mut d {
                m[(0, 0)] *= factor;
            }
            d
        })
    } else {
        MetricField::from_fn(format!("{}[{tag}]", metric.name()), metric.chart().clone(), g)
    };
    if metric.has_background() {
        out = out.with_background(metric.background());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothingRow {
    pub eps: f64,
    pub c0_error: f64,
    pub c1_error: f64,
    pub d2_bound: f64,
    pub dh_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothingReport {
    pub rows: Vec<SmoothingRow>,
    /// Kernel constant `C` in `|∂²g_ε| ≤ Lip(∂g)·C`.
    pub kernel_constant: f64,
}

impl SmoothingReport {
    pub fn eps_list(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eps).collect()
    }
}

pub fn check_ladder(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(MollifyError::BadLadder);
    }
    Ok(())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Convergence diagnostics of `g * ρ_ε` over a ladder of `ε`, on a
/// `probe_per_axis`-point tensor grid of `region`.
pub fn smoothing_report(
    metric: &MetricField,
    eps_list: &[f64],
    region: &Region,
    probe_per_axis: usize,
    dh_samples: usize,
    seed: u64,
) -> Result<SmoothingReport> {
    check_ladder(eps_list)?;
    if region.is_empty() {
        return Err(MetricError::EmptyRegion.into());
    }
    let base_kernel = MollifierKernel::standard(metric.dim(), eps_list[0])?;
    let probes = region.grid(probe_per_axis);
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let kernel = base_kernel.with_epsilon(eps)?;
        let smooth = smooth_metric(metric, &kernel, region)?;
        let src = Mollified {
            base: metric.clone(),
            kernel: kernel.clone(),
        };
        let per_point: Vec<(f64, f64, f64)> = probes
            .par_iter()
            .map(|x| {
                let c0 = max_abs(&(smooth.g(x) - metric.g(x)));
                let de = src.derivatives(x, Branch::Auto).expect("mollified derivatives");
                let d0 = crate::metric::metric_derivatives(metric, x, Branch::Auto);
                let c1 = de.iter().zip(&d0).map(|(a, b)| max_abs(&(a - b))).fold(0.0, f64::max);
                let d2 = src
                    .second_derivatives(x)
                    .iter()
                    .flat_map(|row| row.iter().map(max_abs))
                    .fold(0.0, f64::max);
                (c0, c1, d2)
            })
            .collect();
        let (mut c0, mut c1, mut d2) = (0.0f64, 0.0f64, 0.0f64);
        for (a, b, c) in per_point {
            c0 = c0.max(a);
            c1 = c1.max(b);
            d2 = d2.max(c);
        }
        let dh = metric::dh_distance(&smooth, metric, region, dh_samples, seed)?;
        rows.push(SmoothingRow {
            eps,
            c0_error: c0,
            c1_error: c1,
            d2_bound: d2,
            dh_value: dh,
        });
    }
    Ok(SmoothingReport {
        rows,
        kernel_constant: base_kernel.kernel_constant(),
    })
}

/// Scalar field on a chart.
pub type ScalarField<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);
/// `ε`-indexed family of scalar fields.
pub type ScalarFamily<'a> = &'a (dyn Fn(f64, &[f64]) -> f64 + Sync);

/// `sup_x |(a f b)*ρ_ε − (a*ρ_ε)(f*ρ_ε) b_ε|` over the probe grid, per `ε`.
#[allow(clippy::too_many_arguments)]
pub fn friedrichs_residual(
    a: ScalarField<'_>,
    f: ScalarField<'_>,
    b_family: ScalarFamily<'_>,
    b_limit: ScalarField<'_>,
    eps_list: &[f64],
    domain: &Region,
    region: &Region,
    probe_per_axis: usize,
) -> Result<Vec<f64>> {
    check_ladder(eps_list)?;
    let n = region.dim();
    let base = MollifierKernel::standard(n, eps_list[0])?;
    let probes = region.grid(probe_per_axis);
    eps_list
        .iter()
        .map(|&eps| {
            check_padding(domain, region, eps)?;
            let k = base.with_epsilon(eps)?;
            let vals: Vec<f64> = probes
                .par_iter()
                .map(|x| {
                    let triple = k.convolve(|y| a(y) * f(y) * b_limit(y), x);
                    let split = k.convolve(a, x) * k.convolve(f, x) * b_family(eps, x);
                    (triple - split).abs()
                })
                .collect();
            Ok(vals.into_iter().fold(0.0, f64::max))
        })
        .collect()
}

/// `min_x (a*ρ_ε)(f*ρ_ε) b_ε` over the probe grid.
pub fn smoothed_triple_min(
    a: ScalarField<'_>,
    f: ScalarField<'_>,
    b_family: ScalarFamily<'_>,
    eps: f64,
    domain: &Region,
    region: &Region,
    probe_per_axis: usize,
) -> Result<f64> {
    check_padding(domain, region, eps)?;
    let k = MollifierKernel::standard(region.dim(), eps)?;
    Ok(region
        .grid(probe_per_axis)
        .iter()
        .map(|x| k.convolve(a, x) * k.convolve(f, x) * b_family(eps, x))
        .fold(f64::INFINITY, f64::min))
}

fn check_padding(domain: &Region, region: &Region, eps: f64) -> Result<()> {
    let padded = region.padded(eps);
    let inside = (0..region.dim()).all(|i| padded.lower[i] >= domain.lower[i] - 1e-12 && padded.upper[i] <= domain.upper[i] + 1e-12);
    if inside {
        Ok(())
    } else {
        Err(MollifyError::PaddingViolation {
            chart: "scalar-domain".into(),
            eps,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RicciCheck {
    pub passed: bool,
    pub worst_value: f64,
    pub worst_point: Vec<f64>,
    pub worst_vector: DVector<f64>,
    pub samples: usize,
}

/// Samples `Ric(X,X)` over `g(X,X) ≤ κ`, `‖X‖_h ≤ C` and reports whether
/// every sample exceeds `−δ`.
pub fn ricci_lowerbound_check(
    metric: &MetricField,
    region: &Region,
    kappa: f64,
    c_norm: f64,
    delta: f64,
    probe_per_axis: usize,
) -> Result<RicciCheck> {
    assert!(kappa < 0.0, "kappa must be negative");
    if region.is_empty() {
        return Err(MetricError::EmptyRegion.into());
    }
    let h = metric.background();
    let n = metric.dim();
    let lam_min = (-kappa).sqrt();
    let results: Vec<std::result::Result<(f64, Vec<f64>, DVector<f64>, usize), MetricError>> = region
        .grid(probe_per_axis)
        .par_iter()
        .map(|x| {
            let c = metric::curvature(metric, x)?;
            let basis = metric.orthonormal_basis(x)?;
            let mut dirs: Vec<DVector<f64>> = Vec::new();
            for i in 1..n {
                dirs.push(basis[i].clone());
                dirs.push(-&basis[i]);
            }
            let mut best = (f64::INFINITY, DVector::zeros(n));
            let mut count = 0;
            for li in 0..4 {
                let lam = lam_min * (1.0 + li as f64);
                for ci in 0..9 {
                    let chi = 2.0 * ci as f64 / 8.0;
                    for w in &dirs {
                        let v = (&basis[0] * chi.cosh() + w * chi.sinh()) * lam;
                        if linalg::inner(&h, &v, &v).sqrt() > c_norm {
                            continue;
                        }
                        count += 1;
                        let r = c.ricci_of(&v);
                        if r < best.0 {
                            best = (r, v);
                        }
                    }
                }
            }
            Ok((best.0, x.clone(), best.1, count))
        })
        .collect();
    let mut worst = (f64::INFINITY, region.centre(), DVector::zeros(n));
    let mut samples = 0;
    for r in results {
        let (v, x, w, k) = r?;
        samples += k;
        if v < worst.0 {
            worst = (v, x, w);
        }
    }
    Ok(RicciCheck {
        passed: worst.0 > -delta,
        worst_value: worst.0,
        worst_point: worst.1,
        worst_vector: worst.2,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::catalog::{self, MatchedProfile};
    use crate::metric::Chart;
    use crate::quadrature;
    use proptest::prelude::*;

    #[test]
    fn kernel_is_normalised_even_and_nonnegative() {
        for dim in [1, 2] {
            let k = MollifierKernel::standard(dim, 0.1).unwrap();
            assert!((k.mass() - 1.0).abs() < 1e-12);
            assert!(k.odd_moment_max() < 1e-12);
            assert!(k.weights.iter().all(|w| *w >= 0.0));
            assert_eq!(k.support_radius(), 0.1);
            assert!(k.nodes.iter().all(|s| s.iter().map(|v| v * v).sum::<f64>() < 1.0));
        }
        // raw 1D mass against an adaptive reference
        let exact = quadrature::adaptive(|s| bump(&[s]), -1.0, 1.0, 1e-14);
        let k = MollifierKernel::standard(1, 1.0).unwrap();
        assert!((k.raw_mass() - exact).abs() < 1e-4 * exact);
    }

    #[test]
    fn convolution_of_constant_metric_is_identity() {
        let m = catalog::minkowski(2).with_chart(Chart::unbounded("c", 2).with_bounds(0, -2.0, 2.0).with_bounds(1, -2.0, 2.0));
        let r = Region::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let k = MollifierKernel::standard(2, 0.2).unwrap();
        let s = smooth_metric(&m, &k, &r).unwrap();
        assert!(max_abs(&(s.g(&[0.3, -0.4]) - m.g(&[0.3, -0.4]))) < 1e-14);
        let rep = smoothing_report(&m, &[0.2, 0.1], &r, 5, 20, 1).unwrap();
        for row in rep.rows {
            assert!(row.c0_error < 1e-14 && row.c1_error < 1e-14 && row.d2_bound < 1e-12 && row.dh_value < 1e-14);
        }
    }

    #[test]
    fn affine_metric_is_reproduced() {
        let chart = Chart::unbounded("c", 2).with_bounds(0, -2.0, 2.0).with_bounds(1, -2.0, 2.0);
        let m = MetricField::from_fn("affine", chart, |x| DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0 - 0.1 * x[0], 1.0 + 0.2 * x[1]])));
        let r = Region::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let s = smooth_metric(&m, &MollifierKernel::standard(2, 0.3).unwrap(), &r).unwrap();
        for p in r.grid(4) {
            assert!(max_abs(&(s.g(&p) - m.g(&p))) < 1e-13);
        }
    }

    #[test]
    fn padding_and_signature_errors() {
        let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
        let k = MollifierKernel::standard(2, 0.2).unwrap();
        let r = Region::new(vec![-1.0, -0.8], vec![1.0, 0.8]);
        assert!(matches!(smooth_metric(&m, &k, &r), Err(MollifyError::PaddingViolation { .. })));
        let bad = MetricField::from_fn("flip", Chart::unbounded("c", 2), |x| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, if x[1] > 0.5 { -1.0 } else { 1.0 }]))
        });
        let r = Region::new(vec![0.0, 0.3], vec![0.0, 1.0]);
        assert!(matches!(smooth_metric(&bad, &k, &r), Err(MollifyError::SignatureLost { .. })));
        assert!(matches!(check_ladder(&[0.1, 0.2]), Err(MollifyError::BadLadder)));
    }

    /// Direct 1D convolution of `x|x|` against the normalised bump by
    /// adaptive quadrature, used as an independent reference.
    fn reference_xabsx(x: f64, eps: f64) -> f64 {
        let mass = quadrature::adaptive(|s| bump(&[s]), -1.0, 1.0, 1e-15);
        let f = |s: f64| {
            let y = x - eps * s;
            y * y.abs() * bump(&[s]) / mass
        };
        let z = x / eps;
        if z.abs() < 1.0 {
            quadrature::adaptive(f, -1.0, z, 1e-15) + quadrature::adaptive(f, z, 1.0, 1e-15)
        } else {
            quadrature::adaptive(f, -1.0, 1.0, 1e-15)
        }
    }

    #[test]
    fn one_dimensional_convolution_matches_reference() {
        let k = MollifierKernel::on_axes(1, vec![0], 0.1, DEFAULT_NODES).unwrap();
        for x in [-0.3, -0.05, 0.0, 0.02, 0.09, 0.4] {
            let v = k.convolve(|y| y[0] * y[0].abs(), &[x]);
            assert!((v - reference_xabsx(x, 0.1)).abs() < 2e-5, "x={x}");
        }
    }

    #[test]
    fn c0_error_is_second_order_and_d2_bounded() {
        let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
        let r = Region::new(vec![-0.5, -0.5], vec![0.5, 0.5]);
        let rep = smoothing_report(&m, &[0.2, 0.1, 0.05], &r, 21, 50, 3).unwrap();
        for w in rep.rows.windows(2) {
            let ratio = w[1].c0_error / w[0].c0_error;
            assert!((0.2..=0.35).contains(&ratio), "{ratio}");
            assert!(w[1].c1_error < w[0].c1_error);
            assert!(w[1].d2_bound <= 2.0 * rep.kernel_constant * (1.0 + 1e-12));
        }
        // g_xx − (g_xx * ρ) = −∫s_x² ρ · ε² away from the kink, β = 1
        let mu2 = MollifierKernel::standard(2, 1.0).unwrap().second_moment(1);
        assert!((rep.rows[0].c0_error - mu2 * 0.04).abs() < 1e-12);
        assert!(rep.rows.iter().all(|row| row.dh_value < row.eps));
    }

    #[test]
    fn friedrichs_constant_fields_vanish_and_sign_cos_decreases() {
        let dom = Region::new(vec![-1.5], vec![1.5]);
        let reg = Region::new(vec![-1.0], vec![1.0]);
        let c = |_: &[f64]| 2.0;
        let res = friedrichs_residual(&c, &c, &|_, _| 2.0, &c, &DEFAULT_LADDER, &dom, &reg, 41).unwrap();
        assert!(res.iter().all(|r| *r < 1e-10));
        let sign = |x: &[f64]| x[0].signum();
        let cos = |x: &[f64]| x[0].cos();
        let id = |x: &[f64]| x[0];
        let res = friedrichs_residual(&sign, &cos, &|_, x| x[0], &id, &DEFAULT_LADDER, &dom, &reg, 401).unwrap();
        assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
        assert!(friedrichs_residual(&sign, &cos, &|_, x| x[0], &id, &[0.2], &reg, &reg, 11).is_err());
    }

    #[test]
    fn smoothed_triple_product_stays_above_lowered_bound() {
        let dom = Region::new(vec![-1.5], vec![1.5]);
        let reg = Region::new(vec![-1.0], vec![1.0]);
        let a = |x: &[f64]| 1.5 + 0.5 * x[0].signum();
        let f = |x: &[f64]| x[0].cos();
        let b = |_: f64, _: &[f64]| 1.0;
        for eps in [0.1, 0.05] {
            assert!(smoothed_triple_min(&a, &f, &b, eps, &dom, &reg, 201).unwrap() > 0.45);
        }
    }

    #[test]
    fn ricci_check_detects_violation_and_accepts_flat() {
        let r = Region::new(vec![-0.3, -0.3], vec![0.3, 0.3]);
        let flat = catalog::minkowski(2);
        assert!(ricci_lowerbound_check(&flat, &r, -1.0, 5.0, 1e-9, 3).unwrap().passed);
        // convex scale factor: Ric(∂t,∂t) = −ä/a < 0
        let convex = catalog::frw_toy(2, 1.0, 0.0, 1.0);
        let chk = ricci_lowerbound_check(&convex, &r, -1.0, 5.0, 1e-2, 3).unwrap();
        assert!(!chk.passed && chk.worst_value < -0.5);
        let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
        let sm = smooth_metric(&m, &MollifierKernel::standard(2, 0.05).unwrap(), &r).unwrap();
        assert!(ricci_lowerbound_check(&sm, &r, -1.0, 5.0, 1e-2, 3).unwrap().passed);
    }

    #[test]
    fn cone_adjustment_orders_cones() {
        let m = catalog::matched_c11(0.25, MatchedProfile::Squared);
        let r = Region::new(vec![-0.5, -0.5], vec![0.5, 0.5]);
        let sm = smooth_metric(&m, &MollifierKernel::standard(2, 0.05).unwrap(), &r).unwrap();
        let wide = cone_adjusted(&sm, 0.05 * 0.05, ConeShift::Widen);
        let narrow = cone_adjusted(&sm, 0.05 * 0.05, ConeShift::Narrow);
        assert!(metric::cone_compare(&m, &wide, &r, 30, 4).unwrap());
        assert!(metric::cone_compare(&narrow, &m, &r, 30, 4).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn convolution_is_linear_and_shifts_constants(a in -2.0f64..2.0, b in -2.0f64..2.0, x in -0.5f64..0.5, eps in 0.01f64..0.3) {
            let k = MollifierKernel::standard(1, eps).unwrap();
            let f = |y: &[f64]| y[0] * y[0].abs();
            let g = |y: &[f64]| y[0].sin();
            let lhs = k.convolve(|y| a * f(y) + b * g(y) + 3.0, &[x]);
            let rhs = a * k.convolve(f, &[x]) + b * k.convolve(g, &[x]) + 3.0;
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
