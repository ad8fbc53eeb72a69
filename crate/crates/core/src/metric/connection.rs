use nalgebra::{DMatrix, DVector};

use super::{Branch, MetricError, MetricField, Result, Side};
use crate::linalg;

/// Relative coordinate step for first derivatives of `g`.
pub const CHRISTOFFEL_REL_STEP: f64 = 1e-5;
/// Relative coordinate step for derivatives of `Γ`.
pub const CURVATURE_REL_STEP: f64 = 1e-4;
/// Default orthonormality tolerance for tidal frames.
pub const FRAME_TOL: f64 = 1e-6;

/// How a point near the interface is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Refuse stencils that straddle `Φ = 0`.
    TwoSided,
    /// Evaluate the smooth extension of one side's formula.
    OneSided(Side),
}

/// `Γ^a_{bc}` stored densely, symmetric in `b, c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.n + b) * self.n + c]
    }

    #[inline]
    fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        self.data[(a * self.n + b) * self.n + c] = v;
    }

    /// `Γ^a_{bc} u^b v^c`.
    pub fn contract(&self, u: &[f64], v: &[f64]) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |a, _| {
            let mut s = 0.0;
            for b in 0..n {
                if u[b] == 0.0 {
                    continue;
                }
                for c in 0..n {
                    s += self.get(a, b, c) * u[b] * v[c];
                }
            }
            s
        })
    }

    /// Matrix `M^a_c = Γ^a_{bc} u^b`, so that `∇_u V = V̇ + M V`.
    pub fn contract_first(&self, u: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |a, c| (0..n).map(|b| self.get(a, b, c) * u[b]).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Christoffel) -> Christoffel {
        Christoffel {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// `R^a_{bcd}` with `R(X,Y)Z = R^a_{bcd} Z^b X^c Y^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Riemann {
    n: usize,
    data: Vec<f64>,
}

impl Riemann {
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[((a * self.n + b) * self.n + c) * self.n + d]
    }

    /// `R(X,Y)Z`.
    pub fn apply(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |a, _| {
            let mut s = 0.0;
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        s += self.get(a, b, c, d) * z[b] * x[c] * y[d];
                    }
                }
            }
            s
        })
    }

    /// Fully covariant `R_{abcd} = g_{ae} R^e_{bcd}`, flattened.
    pub fn lowered(&self, g: &DMatrix<f64>) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        out[((a * n + b) * n + c) * n + d] = (0..n).map(|e| g[(a, e)] * self.get(e, b, c, d)).sum();
                    }
                }
            }
        }
        out
    }

    /// `max |R^a_{bcd} + R^a_{cdb} + R^a_{dbc}|`.
    pub fn bianchi_residual(&self) -> f64 {
        let n = self.n;
        let mut m = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        m = m.max((self.get(a, b, c, d) + self.get(a, c, d, b) + self.get(a, d, b, c)).abs());
                    }
                }
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureSample {
    pub riemann: Riemann,
    /// `Ric_{bd} = R^a_{bad}`.
    pub ricci: DMatrix<f64>,
    /// False when the probe point lies on the interface.
    pub defined: bool,
}

impl CurvatureSample {
    pub fn ricci_of(&self, u: &DVector<f64>) -> f64 {
        linalg::inner(&self.ricci, u, u)
    }
}

fn rel_step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

fn check_inverse(g: &DMatrix<f64>, x: &[f64]) -> Result<DMatrix<f64>> {
    let degenerate = || MetricError::DegenerateMetric { coords: x.to_vec() };
    if g.iter().any(|v| !v.is_finite()) {
        return Err(degenerate());
    }
    let inv = g.clone().try_inverse().ok_or_else(degenerate)?;
    let cond = linalg::frobenius(g) * linalg::frobenius(&inv);
    if !cond.is_finite() || cond > 1e13 {
        return Err(degenerate());
    }
    Ok(inv)
}

/// `∂_c g_ab`, analytic when the source provides it.
pub(crate) fn metric_derivatives(metric: &MetricField, x: &[f64], branch: Branch) -> Vec<DMatrix<f64>> {
    if let Some(d) = metric.source().derivatives(x, branch) {
        return d;
    }
    let n = metric.dim();
    let mut xp = x.to_vec();
    (0..n)
        .map(|c| {
            let h = rel_step(x[c], CHRISTOFFEL_REL_STEP);
            xp[c] = x[c] + h;
            let gp = metric.g_branch(&xp, branch);
            xp[c] = x[c] - h;
            let gm = metric.g_branch(&xp, branch);
            xp[c] = x[c];
            (gp - gm) / (2.0 * h)
        })
        .collect()
}

/// Resolves the branch for an evaluation whose stencil reaches `reach[c]`
/// along each axis, or fails if it straddles the interface.
fn resolve_branch(metric: &MetricField, x: &[f64], mode: EvalMode, reach: &[f64]) -> Result<Branch> {
    match mode {
        EvalMode::OneSided(s) => Ok(Branch::Fixed(s)),
        EvalMode::TwoSided => {
            let Some(phi) = metric.interface_value(x) else {
                return Ok(Branch::Auto);
            };
            let too_close = || MetricError::InterfaceTooClose { coords: x.to_vec() };
            if phi.abs() < metric.interface_tol() {
                return Err(too_close());
            }
            let side = Side::of(phi);
            let mut xp = x.to_vec();
            for (c, &r) in reach.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                for s in [-1.0, 1.0] {
                    xp[c] = x[c] + s * r;
                    if let Some(q) = metric.interface_value(&xp) {
                        if Side::of(q) != side || q.abs() < metric.interface_tol() {
                            return Err(too_close());
                        }
                    }
                }
                xp[c] = x[c];
            }
            Ok(Branch::Fixed(side))
        }
    }
}

fn christoffel_reach(metric: &MetricField, x: &[f64]) -> Vec<f64> {
    if metric.has_derivatives() {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|v| rel_step(*v, CHRISTOFFEL_REL_STEP)).collect()
    }
}

pub(crate) fn christoffel_on_branch(metric: &MetricField, x: &[f64], branch: Branch) -> Result<Christoffel> {
    let n = metric.dim();
    let g = metric.g_branch(x, branch);
    let ginv = check_inverse(&g, x)?;
    let dg = metric_derivatives(metric, x, branch);
    // lowered Γ_{dbc} = ½(∂_b g_dc + ∂_c g_db − ∂_d g_bc)
    let mut low = vec![0.0; n * n * n];
    for d in 0..n {
        for b in 0..n {
            for c in b..n {
                let v = 0.5 * (dg[b][(d, c)] + dg[c][(d, b)] - dg[d][(b, c)]);
                low[(d * n + b) * n + c] = v;
                low[(d * n + c) * n + b] = v;
            }
        }
    }
    let mut out = Christoffel::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for c in b..n {
                let v: f64 = (0..n).map(|d| ginv[(a, d)] * low[(d * n + b) * n + c]).sum();
                out.set(a, b, c, v);
                out.set(a, c, b, v);
            }
        }
    }
    Ok(out)
}

pub fn christoffel(metric: &MetricField, x: &[f64]) -> Result<Christoffel> {
    christoffel_with(metric, x, EvalMode::TwoSided)
}

pub fn christoffel_with(metric: &MetricField, x: &[f64], mode: EvalMode) -> Result<Christoffel> {
    metric.check_point(x)?;
    let reach = christoffel_reach(metric, x);
    let branch = resolve_branch(metric, x, mode, &reach)?;
    christoffel_on_branch(metric, x, branch)
}

pub fn curvature(metric: &MetricField, x: &[f64]) -> Result<CurvatureSample> {
    curvature_with(metric, x, EvalMode::TwoSided)
}

pub fn curvature_with(metric: &MetricField, x: &[f64], mode: EvalMode) -> Result<CurvatureSample> {
    metric.check_point(x)?;
    let n = metric.dim();
    let inner = christoffel_reach(metric, x);
    let steps: Vec<f64> = x.iter().map(|v| rel_step(*v, CURVATURE_REL_STEP)).collect();
    let reach: Vec<f64> = steps.iter().zip(&inner).map(|(h, r)| 2.0 * h + r).collect();
    let branch = resolve_branch(metric, x, mode, &reach)?;
    let defined = !metric.is_on_interface(x);

    let gamma = christoffel_on_branch(metric, x, branch)?;
    // dgamma[d] = ∂_d Γ, five-point central differences
    let mut dgamma: Vec<Christoffel> = Vec::with_capacity(n);
    let mut xp = x.to_vec();
    for d in 0..n {
        let h = steps[d];
        let mut at = |s: f64| -> Result<Christoffel> {
            xp[d] = x[d] + s * h;
            let r = christoffel_on_branch(metric, &xp, branch);
            xp[d] = x[d];
            r
        };
        let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
        let mut out = Christoffel::zeros(n);
        for i in 0..out.data.len() {
            out.data[i] = (-p2.data[i] + 8.0 * p1.data[i] - 8.0 * m1.data[i] + m2.data[i]) / (12.0 * h);
        }
        dgamma.push(out);
    }

    let mut data = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut v = dgamma[c].get(a, d, b) - dgamma[d].get(a, c, b);
                    for e in 0..n {
                        v += gamma.get(a, c, e) * gamma.get(e, d, b) - gamma.get(a, d, e) * gamma.get(e, c, b);
                    }
                    data[((a * n + b) * n + c) * n + d] = v;
                }
            }
        }
    }
    let riemann = Riemann { n, data };
    let ricci = DMatrix::from_fn(n, n, |b, d| (0..n).map(|a| riemann.get(a, b, a, d)).sum());
    Ok(CurvatureSample { riemann, ricci, defined })
}

/// `⟨R(E_i,u)u, E_j⟩` from a precomputed sample.
pub fn tidal_from_sample(
    sample: &CurvatureSample,
    g: &DMatrix<f64>,
    u: &DVector<f64>,
    frame: &[DVector<f64>],
    tol: f64,
) -> Result<DMatrix<f64>> {
    let d = frame.len();
    let unorm = u.norm().max(1e-300);
    let mut residual = 0.0f64;
    for i in 0..d {
        residual = residual.max((linalg::inner(g, &frame[i], u) / unorm).abs());
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            residual = residual.max((linalg::inner(g, &frame[i], &frame[j]) - target).abs());
        }
    }
    if !(residual <= tol) {
        return Err(MetricError::BadFrame { residual });
    }
    let images: Vec<DVector<f64>> = frame.iter().map(|e| sample.riemann.apply(e, u, u)).collect();
    Ok(DMatrix::from_fn(d, d, |i, j| linalg::inner(g, &images[i], &frame[j])))
}

pub fn tidal_operator(metric: &MetricField, x: &[f64], u: &DVector<f64>, frame: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    tidal_operator_with(metric, x, u, frame, EvalMode::TwoSided, FRAME_TOL)
}

pub fn tidal_operator_with(
    metric: &MetricField,
    x: &[f64],
    u: &DVector<f64>,
    frame: &[DVector<f64>],
    mode: EvalMode,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let sample = curvature_with(metric, x, mode)?;
    let g = match mode {
        EvalMode::OneSided(s) => metric.g_branch(x, Branch::Fixed(s)),
        EvalMode::TwoSided => metric.g(x),
    };
    tidal_from_sample(&sample, &g, u, frame, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::catalog::{self, MatchedProfile};
    use crate::metric::Chart;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn minkowski_connection_vanishes() {
        let m = catalog::minkowski(4);
        let x = [0.3, -1.0, 2.0, 5.0];
        assert_eq!(christoffel(&m, &x).unwrap().max_abs(), 0.0);
        let c = curvature(&m, &x).unwrap();
        assert_eq!(c.riemann.max_abs(), 0.0);
        assert_eq!(linalg::frobenius(&c.ricci), 0.0);
    }

    #[test]
    fn finite_difference_christoffel_matches_hand_derivative() {
        let m = MetricField::from_fn("warped", Chart::unbounded("c", 2), |x| {
            let q = 1.0 + x[1] * x[1];
            DMatrix::from_diagonal(&dv(&[-1.0, q * q]))
        });
        for x in [1.0, 0.3, -2.0] {
            let gam = christoffel(&m, &[0.0, x]).unwrap();
            let exact = 2.0 * x / (1.0 + x * x);
            assert!((gam.get(1, 1, 1) - exact).abs() < 1e-8, "x={x}");
            assert!(gam.get(0, 1, 1).abs() < 1e-12);
        }
    }

    #[test]
    fn interface_needs_one_sided_mode() {
        let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
        let p = [0.0, 0.0];
        assert!(matches!(christoffel(&m, &p), Err(MetricError::InterfaceTooClose { .. })));
        assert!(matches!(curvature(&m, &p), Err(MetricError::InterfaceTooClose { .. })));
        // Γ^x_xx = βsx/(1+βsx²): continuous at 0, derivative jumps from -1 to +1.
        let h = 1e-4;
        let slope = |side: Side| {
            let mode = EvalMode::OneSided(side);
            let g0 = christoffel_with(&m, &p, mode).unwrap().get(1, 1, 1);
            let g1 = christoffel_with(&m, &[0.0, side.sign() * h], mode).unwrap().get(1, 1, 1);
            assert_eq!(g0, 0.0);
            (g1 - g0) / (side.sign() * h)
        };
        assert!((slope(Side::Plus) - 1.0).abs() < 1e-6);
        assert!((slope(Side::Minus) + 1.0).abs() < 1e-6);
        let c = curvature_with(&m, &p, EvalMode::OneSided(Side::Plus)).unwrap();
        assert!(!c.defined);
        assert!(curvature(&m, &[0.0, 0.3]).unwrap().defined);
    }

    #[test]
    fn stencil_straddling_is_detected_without_analytic_derivatives() {
        let m = MetricField::new(
            "fd-matched",
            Chart::unbounded("m", 2),
            crate::metric::Regularity::C11,
            std::sync::Arc::new(FdOnly(catalog::matched_c11(1.0, MatchedProfile::Linear))),
        );
        assert!(matches!(christoffel(&m, &[0.0, 5e-6]), Err(MetricError::InterfaceTooClose { .. })));
        assert!(christoffel(&m, &[0.0, 5e-5]).is_ok());
        assert!(matches!(curvature(&m, &[0.0, 5e-5]), Err(MetricError::InterfaceTooClose { .. })));
    }

    struct FdOnly(MetricField);

    impl crate::metric::MetricSource for FdOnly {
        fn dim(&self) -> usize {
            2
        }
        fn components(&self, x: &[f64], b: Branch) -> DMatrix<f64> {
            self.0.g_branch(x, b)
        }
        fn interface(&self, x: &[f64]) -> Option<f64> {
            Some(x[1])
        }
    }

    #[test]
    fn degenerate_metric_is_reported() {
        let m = MetricField::from_fn("flat-degenerate", Chart::unbounded("c", 2), |_| {
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0])
        });
        assert!(matches!(christoffel(&m, &[0.0, 0.0]), Err(MetricError::DegenerateMetric { .. })));
    }

    fn space_form_residual(k: f64, x: &[f64]) -> (f64, f64) {
        let m = catalog::space_form(4, k);
        let c = curvature(&m, x).unwrap();
        let g = m.g(x);
        let low = c.riemann.lowered(&g);
        let n = 4;
        let mut r_err = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for cc in 0..n {
                    for d in 0..n {
                        let exact = k * (g[(a, cc)] * g[(b, d)] - g[(a, d)] * g[(b, cc)]);
                        r_err = r_err.max((low[((a * n + b) * n + cc) * n + d] - exact).abs());
                    }
                }
            }
        }
        let ric_err = linalg::frobenius(&(&c.ricci - &g * (k * 3.0)));
        (r_err, ric_err)
    }

    #[test]
    fn space_form_matches_closed_form() {
        // R_abcd = K(g_ac g_bd − g_ad g_bc), Ric = K(n−1)g under the convention
        // R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z.
        for k in [1.0, -1.0, 0.5] {
            let (r, ric) = space_form_residual(k, &[0.1, 0.2, -0.3, 0.15]);
            assert!(r < 1e-8 && ric < 1e-8, "K={k}: {r:e} {ric:e}");
        }
    }

    #[test]
    fn space_form_tidal_operator_is_minus_k() {
        for k in [1.0, -1.0] {
            let m = catalog::space_form(4, k);
            let x = [0.2, -0.1, 0.05, 0.3];
            let basis = m.orthonormal_basis(&x).unwrap();
            let t = tidal_operator(&m, &x, &basis[0], &basis[1..]).unwrap();
            let expect = DMatrix::<f64>::identity(3, 3) * (-k);
            assert!(linalg::frobenius(&(t - expect)) < 1e-8);
        }
    }

    #[test]
    fn schwarzschild_is_vacuum() {
        let m = catalog::schwarzschild(1.0);
        let x = [0.0, 10.0, 1.1, 0.4];
        let c = curvature(&m, &x).unwrap();
        assert!(c.ricci.abs().max() < 1e-7, "{}", c.ricci);
        assert!(c.riemann.bianchi_residual() < 1e-8);
        assert!(c.riemann.max_abs() > 1e-4);
    }

    /// Static orthonormal frame (e_t, e_r, e_θ, e_φ) at `x`.
    fn static_frame(x: &[f64]) -> Vec<DVector<f64>> {
        let (r, th) = (x[1], x[2]);
        let f: f64 = 1.0 - 2.0 / r;
        vec![
            dv(&[1.0 / f.sqrt(), 0.0, 0.0, 0.0]),
            dv(&[0.0, f.sqrt(), 0.0, 0.0]),
            dv(&[0.0, 0.0, 1.0 / r, 0.0]),
            dv(&[0.0, 0.0, 0.0, 1.0 / (r * th.sin())]),
        ]
    }

    #[test]
    fn schwarzschild_null_tidal_operators() {
        let m = catalog::schwarzschild(1.0);
        let x = [0.0, 10.0, std::f64::consts::FRAC_PI_2, 0.0];
        let e = static_frame(&x);
        // Radial null direction is principal: the transverse tidal operator vanishes.
        let radial = &e[0] + &e[1];
        let t = tidal_operator(&m, &x, &radial, &[e[2].clone(), e[3].clone()]).unwrap();
        assert!(t.abs().max() < 1e-8, "{t}");
        // Non-radial null: trace-free with eigenvalues ±3ML²/r⁵ in units with E = 1.
        let a: f64 = 0.6;
        let u = &e[0] + &e[1] * a.cos() + &e[3] * a.sin();
        let w = -&e[1] * a.sin() + &e[3] * a.cos();
        let t = tidal_operator(&m, &x, &u, &[e[2].clone(), w]).unwrap();
        let ev = linalg::sym_eigenvalues(&t);
        assert!(t.trace().abs() < 1e-8);
        let expected = 3.0 * a.sin().powi(2) / 10f64.powi(3);
        assert!((ev[1] - expected).abs() < 1e-7 && (ev[0] + expected).abs() < 1e-7, "{ev:?}");
    }

    #[test]
    fn bad_frame_rejected() {
        let m = catalog::minkowski(3);
        let x = [0.0; 3];
        let u = dv(&[1.0, 0.0, 0.0]);
        let frame = [dv(&[0.0, 1.0, 0.0]), dv(&[0.0, 1.0, 1.0])];
        assert!(matches!(tidal_operator(&m, &x, &u, &frame), Err(MetricError::BadFrame { .. })));
    }

    #[test]
    fn metric_compatibility() {
        for m in [catalog::schwarzschild(1.0), catalog::space_form(4, -1.0), catalog::frw_toy(3, 1.0, -0.5, 0.3)] {
            let x = if m.dim() == 4 && m.name().starts_with("schw") { vec![1.0, 7.0, 0.9, 0.1] } else { vec![0.1, 0.2, -0.3, 0.1][..m.dim()].to_vec() };
            let gam = christoffel(&m, &x).unwrap();
            let n = m.dim();
            let g = m.g(&x);
            let mut xp = x.clone();
            for c in 0..n {
                let h = 1e-5;
                xp[c] = x[c] + h;
                let gp = m.g(&xp);
                xp[c] = x[c] - h;
                let gm = m.g(&xp);
                xp[c] = x[c];
                let dg = (gp - gm) / (2.0 * h);
                for a in 0..n {
                    for b in 0..n {
                        let cov: f64 = dg[(a, b)]
                            - (0..n).map(|d| gam.get(d, c, a) * g[(d, b)] + gam.get(d, c, b) * g[(a, d)]).sum::<f64>();
                        assert!(cov.abs() < 1e-7, "{} ∇_{c} g_{a}{b} = {cov:e}", m.name());
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn riemann_symmetries_on_schwarzschild(r in 3.0f64..30.0, th in 0.3f64..2.8, t in -5.0f64..5.0) {
            let m = catalog::schwarzschild(1.0);
            let x = [t, r, th, 0.7];
            let gam = christoffel(&m, &x).unwrap();
            for a in 0..4 { for b in 0..4 { for c in 0..4 {
                prop_assert_eq!(gam.get(a, b, c), gam.get(a, c, b));
            }}}
            let s = curvature(&m, &x).unwrap();
            let low = s.riemann.lowered(&m.g(&x));
            let idx = |a: usize, b: usize, c: usize, d: usize| ((a * 4 + b) * 4 + c) * 4 + d;
            let scale = s.riemann.max_abs().max(1e-3);
            for a in 0..4 { for b in 0..4 { for c in 0..4 { for d in 0..4 {
                let v = low[idx(a, b, c, d)];
                prop_assert!((v + low[idx(b, a, c, d)]).abs() < 1e-6 * scale * r * r);
                prop_assert!((v + low[idx(a, b, d, c)]).abs() < 1e-6 * scale * r * r);
                prop_assert!((v - low[idx(c, d, a, b)]).abs() < 1e-6 * scale * r * r);
            }}}}
            prop_assert!(s.riemann.bianchi_residual() < 1e-7);
            prop_assert!(linalg::frobenius(&linalg::antisymmetric_part(&s.ricci)) < 1e-7);
        }
    }
}
