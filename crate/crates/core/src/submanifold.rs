//! Spacelike submanifold patches: second fundamental form, mean curvature
//! and convergence, the energy index form along normal geodesics, focal
//! points, and the genericity and trapped-point conditions.
//!
//! Sign conventions: `II(V,W) = nor(∇_V W)`, `H = (1/(n−m)) Σ II(e_i,e_i)`
//! and `k(v) = g(H, v)`. A round sphere in a Minkowski slice then has
//! `k = +1/ρ` for the ingoing future null normal normalised by
//! `g(ν, ∂_t) = −1`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::congruence::{integrate_jacobi, CongruenceError, TidalSource};
use crate::geodesic::{integrate_geodesic, null_companion, normal_frame, GeodesicError, GeodesicOptions, NormalFrame};
use crate::linalg;
use crate::metric::{
    christoffel, christoffel_with, classify_vector, tidal_operator_with, Branch, CausalClass, EvalMode, MetricError,
    MetricField, FRAME_TOL,
};
use crate::ode::{self, OdeOptions};
use crate::quadrature;

/// Sampled tidal values must exceed this before they count as positive;
/// it sits above the finite-difference noise of the curvature.
pub const GENERICITY_FLOOR: f64 = 1e-8;
/// Safety factor between the sampled minimum and the reported `c`.
pub const GENERICITY_SAFETY: f64 = 0.9;
/// Convergence of a slice must exceed this to count as positive.
pub const TRAPPED_TOL: f64 = 1e-6;
/// Neighbouring geodesics per transverse dimension in slice construction.
pub const SLICE_NEIGHBOURS: usize = 8;
/// Angular offset between neighbouring slice geodesics.
pub const SLICE_STEP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubmanifoldError {
    #[error("vector is not tangent to the patch (residual {residual:e})")]
    NotTangent { residual: f64 },
    #[error("vector is not normal to the patch (residual {residual:e})")]
    NotNormal { residual: f64 },
    #[error("induced metric is not positive definite at {params:?}")]
    NotSpacelike { params: Vec<f64> },
    #[error("parametrization is not an immersion at {params:?}")]
    NotImmersion { params: Vec<f64> },
    #[error("parameters {params:?} outside the patch box")]
    OutsideParameterBox { params: Vec<f64> },
    #[error("convergence k = {k} is not positive")]
    NotTrappedDirection { k: f64 },
    #[error("field does not vanish at t = b (|V(b)| = {value:e})")]
    BoundaryViolated { value: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("slice degenerates (det A = {det:e}) at t = {t} before a witness")]
    ConjugateBeforeSlice { t: f64, det: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Congruence(#[from] CongruenceError),
}

pub type Result<T> = std::result::Result<T, SubmanifoldError>;

/// Position and parameter derivatives of a patch map at one point.
#[derive(Debug, Clone)]
pub struct PatchJet {
    pub x: Vec<f64>,
    /// `n × k`, column `a` is `∂_a φ`.
    pub d1: DMatrix<f64>,
    /// `d2[a]` is `n × k` with column `b` equal to `∂_a ∂_b φ`.
    pub d2: Vec<DMatrix<f64>>,
}

pub trait PatchMap: Send + Sync {
    fn param_dim(&self) -> usize;
    fn ambient_dim(&self) -> usize;
    fn jet(&self, s: &[f64]) -> PatchJet;
}

#[derive(Clone)]
pub struct SubmanifoldPatch {
    name: String,
    metric: MetricField,
    map: Arc<dyn PatchMap>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl std::fmt::Debug for SubmanifoldPatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubmanifoldPatch")
            .field("name", &self.name)
            .field("metric", &self.metric.name())
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish()
    }
}

struct FlatSlice {
    n: usize,
    t0: f64,
}

impl PatchMap for FlatSlice {
    fn param_dim(&self) -> usize {
        self.n - 1
    }

    fn ambient_dim(&self) -> usize {
        self.n
    }

    fn jet(&self, s: &[f64]) -> PatchJet {
        let (n, k) = (self.n, self.n - 1);
        let mut x = vec![self.t0];
        x.extend_from_slice(s);
        let d1 = DMatrix::from_fn(n, k, |i, a| if i == a + 1 { 1.0 } else { 0.0 });
        PatchJet { x, d1, d2: vec![DMatrix::zeros(n, k); k] }
    }
}

#[derive(Clone, Copy)]
enum Factor {
    One,
    Sin,
    Cos,
}

impl Factor {
    fn eval(self, a: f64, order: usize) -> f64 {
        match (self, order % 4) {
            (Factor::One, 0) => 1.0,
            (Factor::One, _) => 0.0,
            (Factor::Sin, 0) => a.sin(),
            (Factor::Sin, 1) => a.cos(),
            (Factor::Sin, 2) => -a.sin(),
            (Factor::Sin, _) => -a.cos(),
            (Factor::Cos, 0) => a.cos(),
            (Factor::Cos, 1) => -a.sin(),
            (Factor::Cos, 2) => -a.cos(),
            (Factor::Cos, _) => a.sin(),
        }
    }
}

/// Round `(n−2)`-sphere of radius `ρ` in the slice `x⁰ = t0`, in
/// hyperspherical angles.
struct SliceSphere {
    n: usize,
    rho: f64,
    t0: f64,
}

impl SliceSphere {
    fn factor(&self, j: usize, i: usize) -> Factor {
        let k = self.n - 2;
        if i < j {
            Factor::Sin
        } else if i == j && j < k {
            Factor::Cos
        } else {
            Factor::One
        }
    }
}

impl PatchMap for SliceSphere {
    fn param_dim(&self) -> usize {
        self.n - 2
    }

    fn ambient_dim(&self) -> usize {
        self.n
    }

    fn jet(&self, s: &[f64]) -> PatchJet {
        let (n, k) = (self.n, self.n - 2);
        let term = |j: usize, orders: &[usize]| -> f64 {
            (0..k).map(|i| self.factor(j, i).eval(s[i], orders[i])).product::<f64>() * self.rho
        };
        let mut x = vec![0.0; n];
        x[0] = self.t0;
        let mut d1 = DMatrix::zeros(n, k);
        let mut d2 = vec![DMatrix::zeros(n, k); k];
        for j in 0..=k {
            let mut ord = vec![0usize; k];
            x[j + 1] = term(j, &ord);
            for a in 0..k {
                ord[a] += 1;
                d1[(j + 1, a)] = term(j, &ord);
                for b in 0..k {
                    ord[b] += 1;
                    d2[a][(j + 1, b)] = term(j, &ord);
                    ord[b] -= 1;
                }
                ord[a] -= 1;
            }
        }
        PatchJet { x, d1, d2 }
    }
}

/// Cylinder `x¹² + x²² = ρ²` in the slice `x⁰ = t0` of a 4-dimensional
/// chart, parametrised by `(φ, x³)`.
struct SliceCylinder {
    rho: f64,
    t0: f64,
}

impl PatchMap for SliceCylinder {
    fn param_dim(&self) -> usize {
        2
    }

    fn ambient_dim(&self) -> usize {
        4
    }

    fn jet(&self, s: &[f64]) -> PatchJet {
        let (c, sn) = (s[0].cos(), s[0].sin());
        let r = self.rho;
        let x = vec![self.t0, r * c, r * sn, s[1]];
        let d1 = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, -r * sn, 0.0, r * c, 0.0, 0.0, 1.0]);
        let mut d2 = vec![DMatrix::zeros(4, 2); 2];
        d2[0][(1, 0)] = -r * c;
        d2[0][(2, 0)] = -r * sn;
        PatchJet { x, d1, d2 }
    }
}

#[allow(clippy::type_complexity)]
struct FnMap {
    k: usize,
    n: usize,
    f: Box<dyn Fn(&[f64]) -> PatchJet + Send + Sync>,
}

impl PatchMap for FnMap {
    fn param_dim(&self) -> usize {
        self.k
    }

    fn ambient_dim(&self) -> usize {
        self.n
    }

    fn jet(&self, s: &[f64]) -> PatchJet {
        (self.f)(s)
    }
}

impl SubmanifoldPatch {
    pub fn new(name: impl Into<String>, metric: MetricField, map: Arc<dyn PatchMap>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = metric.dim();
        let k = map.param_dim();
        if map.ambient_dim() != n {
            return Err(SubmanifoldError::DimensionMismatch { expected: n, got: map.ambient_dim() });
        }
        if k == 0 || k >= n || lower.len() != k || upper.len() != k {
            return Err(SubmanifoldError::DimensionMismatch { expected: k, got: lower.len() });
        }
        Ok(Self { name: name.into(), metric, map, lower, upper })
    }

    /// Patch from a jet function with `k` parameters.
    pub fn from_fn(
        name: impl Into<String>,
        metric: MetricField,
        k: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        jet: impl Fn(&[f64]) -> PatchJet + Send + Sync + 'static,
    ) -> Result<Self> {
        let n = metric.dim();
        Self::new(name, metric, Arc::new(FnMap { k, n, f: Box::new(jet) }), lower, upper)
    }

    /// The slice `x⁰ = t0`, parametrised by the remaining coordinates.
    pub fn flat_slice(metric: MetricField, t0: f64, half_width: f64) -> Result<Self> {
        let n = metric.dim();
        Self::new(
            format!("slice(t={t0})"),
            metric,
            Arc::new(FlatSlice { n, t0 }),
            vec![-half_width; n - 1],
            vec![half_width; n - 1],
        )
    }

    /// Round sphere of radius `rho` centred at the spatial origin of `x⁰ = t0`.
    pub fn slice_sphere(metric: MetricField, rho: f64, t0: f64) -> Result<Self> {
        let n = metric.dim();
        if n < 3 || !(rho > 0.0) {
            return Err(SubmanifoldError::HypothesisViolated("sphere needs n >= 3 and rho > 0".into()));
        }
        let k = n - 2;
        let mut lower = vec![1e-6; k];
        let mut upper = vec![PI - 1e-6; k];
        lower[k - 1] = -PI;
        upper[k - 1] = PI;
        Self::new(format!("sphere(rho={rho},t={t0})"), metric, Arc::new(SliceSphere { n, rho, t0 }), lower, upper)
    }

    pub fn slice_cylinder(metric: MetricField, rho: f64, t0: f64) -> Result<Self> {
        if metric.dim() != 4 || !(rho > 0.0) {
            return Err(SubmanifoldError::HypothesisViolated("cylinder needs n = 4 and rho > 0".into()));
        }
        Self::new(
            format!("cylinder(rho={rho},t={t0})"),
            metric,
            Arc::new(SliceCylinder { rho, t0 }),
            vec![-PI, -1e6],
            vec![PI, 1e6],
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    /// Dimension `n − m` of the patch.
    pub fn dim(&self) -> usize {
        self.map.param_dim()
    }

    pub fn codim(&self) -> usize {
        self.metric.dim() - self.dim()
    }

    /// Checked jet: inside the box, an immersion, spacelike.
    pub fn jet(&self, s: &[f64]) -> Result<PatchJet> {
        let k = self.dim();
        if s.len() != k {
            return Err(SubmanifoldError::DimensionMismatch { expected: k, got: s.len() });
        }
        if s.iter().zip(self.lower.iter().zip(&self.upper)).any(|(v, (lo, hi))| !(*v >= *lo && *v <= *hi)) {
            return Err(SubmanifoldError::OutsideParameterBox { params: s.to_vec() });
        }
        let jet = self.map.jet(s);
        self.metric.check_point(&jet.x)?;
        let sv = jet.d1.clone().singular_values();
        if sv.min() <= 1e-12 * sv.max().max(1e-300) {
            return Err(SubmanifoldError::NotImmersion { params: s.to_vec() });
        }
        let h = self.induced(&jet);
        if linalg::sym_min_eigenvalue(&h) <= 0.0 {
            return Err(SubmanifoldError::NotSpacelike { params: s.to_vec() });
        }
        Ok(jet)
    }

    fn induced(&self, jet: &PatchJet) -> DMatrix<f64> {
        let g = self.metric.g(&jet.x);
        jet.d1.transpose() * g * &jet.d1
    }

    pub fn point(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jet(s)?.x)
    }

    pub fn induced_metric(&self, s: &[f64]) -> Result<DMatrix<f64>> {
        let jet = self.jet(s)?;
        Ok(self.induced(&jet))
    }

    /// g-orthonormal basis of the tangent space.
    pub fn tangent_basis(&self, s: &[f64]) -> Result<Vec<DVector<f64>>> {
        let jet = self.jet(s)?;
        let g = self.metric.g(&jet.x);
        let cols: Vec<DVector<f64>> = (0..self.dim()).map(|a| jet.d1.column(a).into_owned()).collect();
        linalg::gram_schmidt(&g, &cols).ok_or_else(|| SubmanifoldError::NotImmersion { params: s.to_vec() })
    }

    /// Parameter components of a tangent vector.
    fn tangent_coords(&self, jet: &PatchJet, g: &DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let h = jet.d1.transpose() * g * &jet.d1;
        let rhs = jet.d1.transpose() * g * u;
        let alpha = h.lu().solve(&rhs).ok_or(SubmanifoldError::NotTangent { residual: f64::INFINITY })?;
        let residual = (&jet.d1 * &alpha - u).norm();
        if residual > 1e-8 * u.norm().max(1e-300) {
            return Err(SubmanifoldError::NotTangent { residual });
        }
        Ok(alpha)
    }

    fn normal_projection(&self, jet: &PatchJet, g: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
        let h = jet.d1.transpose() * g * &jet.d1;
        let coef = h.lu().solve(&(jet.d1.transpose() * g * x)).expect("induced metric is definite");
        x - &jet.d1 * coef
    }

    /// `nor(∇_u W)` for tangent coordinate vectors `u`, `w`.
    pub fn second_fundamental_form(&self, s: &[f64], u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let jet = self.jet(s)?;
        let g = self.metric.g(&jet.x);
        let alpha = self.tangent_coords(&jet, &g, u)?;
        let beta = self.tangent_coords(&jet, &g, w)?;
        let gamma = christoffel(&self.metric, &jet.x)?;
        let k = self.dim();
        let n = self.metric.dim();
        let mut acc = DVector::zeros(n);
        for a in 0..k {
            for b in 0..k {
                let c = alpha[a] * beta[b];
                if c == 0.0 {
                    continue;
                }
                let da = jet.d1.column(a).into_owned();
                let db = jet.d1.column(b).into_owned();
                acc += (jet.d2[a].column(b) + gamma.contract(da.as_slice(), db.as_slice())) * c;
            }
        }
        Ok(self.normal_projection(&jet, &g, &acc))
    }

    /// `H = (1/(n−m)) Σ II(e_i, e_i)`.
    pub fn mean_curvature(&self, s: &[f64]) -> Result<DVector<f64>> {
        let e = self.tangent_basis(s)?;
        let mut h = DVector::zeros(self.metric.dim());
        for ei in &e {
            h += self.second_fundamental_form(s, ei, ei)?;
        }
        Ok(h / e.len() as f64)
    }

    /// `k_S(v) = g(H, v)`.
    pub fn convergence(&self, s: &[f64], v: &DVector<f64>) -> Result<f64> {
        let x = self.point(s)?;
        let h = self.mean_curvature(s)?;
        Ok(self.metric.inner(&x, &h, v))
    }

    /// Future null normals `τ ± σ_i` with `τ` the future unit timelike
    /// normal, ordered by decreasing convergence.
    pub fn future_null_normals(&self, s: &[f64]) -> Result<Vec<DVector<f64>>> {
        let jet = self.jet(s)?;
        let g = self.metric.g(&jet.x);
        let n = self.metric.dim();
        let mut normals: Vec<DVector<f64>> = Vec::new();
        let hint = self.metric.future_hint();
        let mut cands: Vec<DVector<f64>> = vec![hint.clone()];
        cands.extend((0..n).map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })));
        for c in cands {
            let p = self.normal_projection(&jet, &g, &c);
            let mut trial = normals.clone();
            trial.push(p);
            if let Some(ortho) = linalg::gram_schmidt(&g, &trial) {
                normals = ortho;
            }
            if normals.len() == self.codim() {
                break;
            }
        }
        let tau_idx = normals
            .iter()
            .position(|v| linalg::inner(&g, v, v) < 0.0)
            .ok_or_else(|| SubmanifoldError::NotSpacelike { params: s.to_vec() })?;
        let mut tau = normals[tau_idx].clone();
        if linalg::inner(&g, &tau, &hint) > 0.0 {
            tau = -tau;
        }
        let mut out = Vec::new();
        for (i, sig) in normals.iter().enumerate() {
            if i != tau_idx {
                out.push(&tau + sig);
                out.push(&tau - sig);
            }
        }
        let mut keyed: Vec<(f64, DVector<f64>)> =
            out.into_iter().map(|v| Ok((self.convergence(s, &v)?, v))).collect::<Result<_>>()?;
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(keyed.into_iter().map(|p| p.1).collect())
    }
}

/// Field along a geodesic given by its coefficients in the parallel frame
/// and their derivatives, `t ↦ (v(t), v̇(t))`.
#[derive(Clone)]
pub struct FrameField {
    #[allow(clippy::type_complexity)]
    f: Arc<dyn Fn(f64) -> (DVector<f64>, DVector<f64>) + Send + Sync>,
}

impl FrameField {
    pub fn new(f: impl Fn(f64) -> (DVector<f64>, DVector<f64>) + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    pub fn zero(d: usize) -> Self {
        Self::new(move |_| (DVector::zeros(d), DVector::zeros(d)))
    }

    /// `(1 − t/b) E_i`.
    pub fn linear_decay(i: usize, d: usize, b: f64) -> Self {
        Self::new(move |t| {
            let mut v = DVector::zeros(d);
            let mut dv = DVector::zeros(d);
            v[i] = 1.0 - t / b;
            dv[i] = -1.0 / b;
            (v, dv)
        })
    }

    pub fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        (self.f)(t)
    }
}

/// Data for the focal problem of a patch along one normal geodesic: the
/// tidal source in a parallel frame whose first `tangent_dim` vectors start
/// tangent to the patch, and `⟨ẋ(0), II(e_i, e_j)⟩` in that frame.
#[derive(Debug, Clone)]
pub struct FocalSetup {
    source: TidalSource,
    second_form: DMatrix<f64>,
    tangent_dim: usize,
}

impl FocalSetup {
    /// Direct construction, e.g. with a synthetic source.
    pub fn synthetic(source: TidalSource, tangent_dim: usize, second_form: DMatrix<f64>) -> Result<Self> {
        let d = source.dim();
        if second_form.nrows() != d || second_form.ncols() != d || tangent_dim == 0 || tangent_dim > d {
            return Err(SubmanifoldError::DimensionMismatch { expected: d, got: second_form.nrows() });
        }
        Ok(Self { source, second_form, tangent_dim })
    }

    pub fn source(&self) -> &TidalSource {
        &self.source
    }

    pub fn tangent_dim(&self) -> usize {
        self.tangent_dim
    }

    /// `⟨ẋ(0), II(E_i, E_j)⟩` (zero outside the tangent block).
    pub fn second_form(&self) -> &DMatrix<f64> {
        &self.second_form
    }

    /// Shape operator `S_ν = ∇ν` in the frame, `−⟨ν, II⟩`.
    pub fn shape_operator(&self) -> DMatrix<f64> {
        -&self.second_form
    }

    /// `Σ ⟨ν, II(e_i, e_i)⟩ = (n−m) k_S(ν)`.
    pub fn trace_unnormalized(&self) -> f64 {
        self.second_form.trace()
    }

    /// `k_S(ν)` with the `1/(n−m)` normalisation.
    pub fn convergence(&self) -> f64 {
        self.trace_unnormalized() / self.tangent_dim as f64
    }
}

/// Build the focal setup for the geodesic leaving `φ(s)` with velocity `nu`,
/// integrated over `[0, t_end]`.
pub fn focal_setup(patch: &SubmanifoldPatch, s: &[f64], nu: &DVector<f64>, t_end: f64, tol: f64) -> Result<FocalSetup> {
    let metric = patch.metric();
    let jet = patch.jet(s)?;
    let x = jet.x.clone();
    let g = metric.g(&x);
    let n = metric.dim();
    let e = patch.tangent_basis(s)?;
    let nn = nu.norm().max(1e-300);
    let normal_res = e.iter().map(|ei| linalg::inner(&g, ei, nu).abs() / nn).fold(0.0, f64::max);
    if normal_res > 1e-9 {
        return Err(SubmanifoldError::NotNormal { residual: normal_res });
    }
    let class = classify_vector(metric, &x, nu)?;
    if class == CausalClass::Spacelike || !metric.is_future_directed(&x, nu) {
        return Err(SubmanifoldError::HypothesisViolated("normal must be future causal".into()));
    }
    let null = class == CausalClass::Null;
    let q = if null { n - 2 } else { n - 1 };
    let k = e.len();
    let project: Box<dyn Fn(&DVector<f64>) -> DVector<f64>> = if null {
        let basis = metric.orthonormal_basis(&x)?;
        let comp = null_companion(&g, nu, &basis[0]).ok_or(SubmanifoldError::NotNormal { residual: f64::NAN })?;
        let g2 = g.clone();
        let nu2 = nu.clone();
        Box::new(move |v| v + &nu2 * linalg::inner(&g2, v, &comp) + &comp * linalg::inner(&g2, v, &nu2))
    } else {
        let g2 = g.clone();
        let nu2 = nu.clone();
        let uu = linalg::inner(&g, nu, nu);
        Box::new(move |v| v - &nu2 * (linalg::inner(&g2, v, &nu2) / uu))
    };
    let mut seeds: Vec<DVector<f64>> = e.iter().map(|v| project(v)).collect();
    for i in 0..n {
        if seeds.len() == q {
            break;
        }
        let c = project(&DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 }));
        let mut trial = seeds.clone();
        trial.push(c);
        if let Some(ortho) = linalg::gram_schmidt(&g, &trial) {
            if linalg::inner(&g, &ortho[ortho.len() - 1], &ortho[ortho.len() - 1]) > 0.0 {
                seeds.push(ortho[ortho.len() - 1].clone());
            }
        }
    }
    if seeds.len() != q {
        return Err(SubmanifoldError::HypothesisViolated("could not complete the normal frame".into()));
    }
    let mut ii = DMatrix::zeros(q, q);
    for i in 0..k {
        for j in 0..k {
            ii[(i, j)] = linalg::inner(&g, nu, &patch.second_fundamental_form(s, &e[i], &e[j])?);
        }
    }
    let path = integrate_geodesic(metric, &x, nu.as_slice(), (0.0, t_end), &GeodesicOptions::with_tol(tol))?;
    let frame = normal_frame(&path, &seeds)?;
    Ok(FocalSetup { source: TidalSource::geometric(frame), second_form: linalg::symmetric_part(&ii), tangent_dim: k })
}

/// `I(V,W) = ∫₀ᵇ [⟨V̇,Ẇ⟩ − ⟨R(V,ẋ)ẋ, W⟩] dt − ⟨ẋ(0), II(V(0), W(0))⟩`.
pub fn index_form(setup: &FocalSetup, v: &FrameField, w: &FrameField, b: f64, tol: f64) -> Result<f64> {
    let d = setup.source.dim();
    let (lo, hi) = setup.source.domain();
    if !(b > 0.0) || lo > 0.0 || hi < b {
        return Err(SubmanifoldError::HypothesisViolated(format!("b = {b} outside the geodesic range")));
    }
    for f in [v, w] {
        let (vb, _) = f.eval(b);
        let (v0, _) = f.eval(0.0);
        if vb.len() != d || v0.len() != d {
            return Err(SubmanifoldError::DimensionMismatch { expected: d, got: vb.len() });
        }
        if vb.norm() > 1e-10 {
            return Err(SubmanifoldError::BoundaryViolated { value: vb.norm() });
        }
        if v0.rows(setup.tangent_dim, d - setup.tangent_dim).norm() > 1e-10 {
            return Err(SubmanifoldError::HypothesisViolated("field must start tangent to the patch".into()));
        }
    }
    let mut cuts = vec![0.0];
    cuts.extend(setup.source.breakpoints().iter().copied().filter(|&t| t > 0.0 && t < b));
    cuts.push(b);
    let mut err: Option<SubmanifoldError> = None;
    let mut total = 0.0;
    for win in cuts.windows(2) {
        let (a, c) = (win[0], win[1]);
        let pad = 1e-13 * (c - a);
        total += quadrature::adaptive(
            |t| {
                let (vv, dv) = v.eval(t);
                let (ww, dw) = w.eval(t);
                match setup.source.eval(t.clamp(a + pad, c - pad)) {
                    Ok(r) => dv.dot(&dw) - (vv.transpose() * r * ww)[(0, 0)],
                    Err(e) => {
                        err.get_or_insert(e.into());
                        0.0
                    }
                }
            },
            a,
            c,
            tol,
        );
    }
    if let Some(e) = err {
        return Err(e);
    }
    let (v0, _) = v.eval(0.0);
    let (w0, _) = w.eval(0.0);
    Ok(total - (v0.transpose() * &setup.second_form * w0)[(0, 0)])
}

#[derive(Debug, Clone, Serialize)]
pub struct FocalSumReport {
    pub convergence: f64,
    pub trace_unnormalized: f64,
    pub b: f64,
    pub delta: f64,
    pub sum_value: f64,
    pub threshold: f64,
    pub focal_predicted: bool,
}

/// `Σ I(X_i, X_i)` for `X_i = (1 − t/b) E_i` against `(n−m)(1/b − c) + bδ/3`.
pub fn focal_sum_test(setup: &FocalSetup, b: f64, delta: f64, tol: f64) -> Result<FocalSumReport> {
    let c = setup.convergence();
    if !(c > 0.0) {
        return Err(SubmanifoldError::NotTrappedDirection { k: c });
    }
    if !(b > 1.0 / c) {
        return Err(SubmanifoldError::HypothesisViolated(format!("need b > 1/k = {}, got {b}", 1.0 / c)));
    }
    let d = setup.source.dim();
    let k = setup.tangent_dim;
    let mut sum = 0.0;
    for i in 0..k {
        let x = FrameField::linear_decay(i, d, b);
        sum += index_form(setup, &x, &x, b, tol)?;
    }
    let threshold = k as f64 * (1.0 / b - c) + b * delta / 3.0;
    Ok(FocalSumReport {
        convergence: c,
        trace_unnormalized: setup.trace_unnormalized(),
        b,
        delta,
        sum_value: sum,
        threshold,
        focal_predicted: sum < 0.0,
    })
}

/// First focal parameter in `(t_range.0, t_range.1]`: Jacobi data
/// `A(0) = id`, `Ȧ(0) = S_ν` on the tangent block and `A(0) = 0`,
/// `Ȧ(0) = id` on the remaining normal directions.
pub fn detect_focal(setup: &FocalSetup, t_range: (f64, f64), tol: f64) -> Result<Option<f64>> {
    let d = setup.source.dim();
    let k = setup.tangent_dim;
    let a0 = DMatrix::from_fn(d, d, |i, j| if i == j && i < k { 1.0 } else { 0.0 });
    let mut adot0 = setup.shape_operator();
    for i in k..d {
        adot0[(i, i)] = 1.0;
    }
    let traj = integrate_jacobi(&setup.source, &a0, &adot0, t_range, tol)?;
    Ok(traj.first_conjugate())
}

/// One probe of a tube around a point of a geodesic.
#[derive(Debug, Clone, Serialize)]
pub struct TubeSample {
    pub point: Vec<f64>,
    pub x: Vec<f64>,
    pub frame: Vec<Vec<f64>>,
    pub tidal: Vec<Vec<f64>>,
}

impl TubeSample {
    pub fn tidal_entry(&self, i: usize, j: usize) -> f64 {
        self.tidal[i][j]
    }
}

/// Transport `vectors` from `from` to `to` along the straight coordinate
/// segment.
fn transport_segment(metric: &MetricField, from: &[f64], to: &[f64], vectors: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let n = from.len();
    let delta: Vec<f64> = to.iter().zip(from).map(|(b, a)| b - a).collect();
    if delta.iter().all(|d| *d == 0.0) {
        return Ok(vectors.to_vec());
    }
    let y0: Vec<f64> = vectors.iter().flat_map(|v| v.iter().copied()).collect();
    let mut rhs = |s: f64, y: &[f64], out: &mut [f64]| -> std::result::Result<(), MetricError> {
        let x: Vec<f64> = from.iter().zip(&delta).map(|(a, d)| a + s * d).collect();
        let gam = christoffel(metric, &x)?;
        let m = gam.contract_first(&delta);
        for (k, chunk) in y.chunks(n).enumerate() {
            let v = DVector::from_row_slice(chunk);
            let dv = -(&m * v);
            out[k * n..(k + 1) * n].copy_from_slice(dv.as_slice());
        }
        Ok(())
    };
    let (out, _) = ode::integrate(&mut rhs, 0.0, &y0, 1.0, &OdeOptions::with_tol(1e-12), None::<&mut fn(f64, &[f64]) -> f64>)
        .map_err(|e| match e {
            ode::OdeError::Rhs(e) => SubmanifoldError::Metric(e),
            other => SubmanifoldError::HypothesisViolated(other.to_string()),
        })?;
    let y = out.final_state();
    Ok(y.chunks(n).map(DVector::from_row_slice).collect())
}

fn probe_points(centre: &[f64], radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = centre.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = vec![centre.to_vec()];
    while pts.len() < count.max(1) {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let r = radius * rng.random_range(0.0f64..1.0).powf(1.0 / n as f64);
        pts.push(centre.iter().zip(&dir).map(|(c, d)| c + r * d / norm).collect());
    }
    pts
}

/// Tidal operators at `n_probes` seeded points of the coordinate ball of
/// radius `tube_radius` around `centre`, with `x` and `frame` transported
/// radially. Probes too close to an interface or outside the chart are
/// skipped.
pub fn tube_samples(
    metric: &MetricField,
    centre: &[f64],
    x: &DVector<f64>,
    frame: &[DVector<f64>],
    tube_radius: f64,
    n_probes: usize,
    seed: u64,
) -> Vec<TubeSample> {
    let mut carried = vec![x.clone()];
    carried.extend(frame.iter().cloned());
    probe_points(centre, tube_radius, n_probes, seed)
        .into_par_iter()
        .filter_map(|p| {
            if metric.check_point(&p).is_err() {
                return None;
            }
            let moved = transport_segment(metric, centre, &p, &carried).ok()?;
            let (xv, fr) = moved.split_first()?;
            let r = tidal_operator_with(metric, &p, xv, fr, EvalMode::TwoSided, FRAME_TOL).ok()?;
            Some(TubeSample {
                point: p,
                x: xv.iter().copied().collect(),
                frame: fr.iter().map(|v| v.iter().copied().collect()).collect(),
                tidal: (0..r.nrows()).map(|i| r.row(i).iter().copied().collect()).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GenericityWitness {
    pub t0: f64,
    pub c: f64,
    pub direction_index: usize,
    pub tube_radius: f64,
    pub n_probes: usize,
    pub sampled_min: f64,
    pub revalidated_min: f64,
    pub revalidation_probes: usize,
    /// Probes with the transported `V = E_j` and `X`.
    pub samples: Vec<TubeSample>,
}

impl GenericityWitness {
    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "t0={}\nc={}\ndirection_index={}\ntube_radius={}\nn_probes={}\n",
            self.t0, self.c, self.direction_index, self.tube_radius, self.n_probes
        )
    }
}

fn diag_min(samples: &[TubeSample], j: usize) -> f64 {
    samples.iter().map(|s| s.tidal_entry(j, j)).fold(f64::INFINITY, f64::min)
}

/// Scan `n_grid` parameters of `window` for a frame direction `E_j` with
/// `⟨R(V,X)X,V⟩` bounded below by a positive constant on a tube. A hit is
/// re-checked on twice as many probes before it is returned.
pub fn genericity_scan(
    frame: &NormalFrame,
    window: (f64, f64),
    tube_radius: f64,
    n_probes: usize,
    n_grid: usize,
    seed: u64,
) -> Result<Option<GenericityWitness>> {
    let path = frame.path();
    let metric = path.metric();
    let (lo, hi) = (window.0.max(path.t_min()), window.1.min(path.t_max()));
    if !(hi >= lo) {
        return Err(SubmanifoldError::HypothesisViolated("window outside the geodesic".into()));
    }
    let m = n_grid.max(1);
    for i in 0..m {
        let t0 = if m == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (m - 1) as f64 };
        let (x, v) = path.state(t0);
        let e = frame.vectors_at(t0);
        let samples = tube_samples(metric, &x, &v, &e, tube_radius, n_probes, seed);
        if samples.is_empty() {
            continue;
        }
        for j in 0..frame.d() {
            let lowest = diag_min(&samples, j);
            if !(lowest > GENERICITY_FLOOR) {
                continue;
            }
            let c = GENERICITY_SAFETY * lowest;
            let fine = tube_samples(metric, &x, &v, &e, tube_radius, 2 * n_probes, seed);
            let again = diag_min(&fine, j);
            if again > c {
                return Ok(Some(GenericityWitness {
                    t0,
                    c,
                    direction_index: j,
                    tube_radius,
                    n_probes,
                    sampled_min: lowest,
                    revalidated_min: again,
                    revalidation_probes: 2 * n_probes,
                    samples,
                }));
            }
        }
    }
    Ok(None)
}

/// Re-sample a witness with `factor` times as many probes; returns the new
/// minimum and whether it still exceeds `c`.
pub fn revalidate_witness(frame: &NormalFrame, w: &GenericityWitness, factor: usize, seed: u64) -> (bool, f64) {
    let path = frame.path();
    let (x, v) = path.state(w.t0);
    let e = frame.vectors_at(w.t0);
    let s = tube_samples(path.metric(), &x, &v, &e, w.tube_radius, factor * w.n_probes, seed);
    let m = diag_min(&s, w.direction_index);
    (m > w.c, m)
}

/// Minimum over a tube of `Σ_{i<count} ⟨R(E_i,X)X,E_i⟩` at parameter `t0`.
pub fn curvature_sum_scan(frame: &NormalFrame, t0: f64, count: usize, tube_radius: f64, n_probes: usize, seed: u64) -> f64 {
    let path = frame.path();
    let (x, v) = path.state(t0);
    let e = frame.vectors_at(t0);
    tube_samples(path.metric(), &x, &v, &e, tube_radius, n_probes, seed)
        .iter()
        .map(|s| (0..count.min(e.len())).map(|i| s.tidal_entry(i, i)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// `[R](t) − diag(c, −C, …, −C)` positive definite at `samples` points of
/// `window`.
pub fn tidal_frame_bound(source: &TidalSource, c: f64, big_c: f64, window: (f64, f64), samples: usize) -> Result<bool> {
    let d = source.dim();
    let target = DMatrix::from_fn(d, d, |i, j| match (i == j, i) {
        (true, 0) => c,
        (true, _) => -big_c,
        _ => 0.0,
    });
    let k = samples.max(2);
    for i in 0..k {
        let t = window.0 + (window.1 - window.0) * i as f64 / (k - 1) as f64;
        let r = source.eval(t)?;
        if !(linalg::sym_min_eigenvalue(&(r - &target)) > 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionWitness {
    pub index: usize,
    pub direction: Vec<f64>,
    pub witness_t: Option<f64>,
    pub max_k: f64,
    /// `(t, k_{S_t}(ẋ(t)))`.
    pub k_samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrappedReport {
    pub trapped: bool,
    pub directions: Vec<DirectionWitness>,
}

/// Spatial unit directions in an orthonormal frame of dimension `m`.
fn direction_fan(m: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match m {
        1 => vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
        2 => (0..count.max(1))
            .map(|k| {
                let a = 2.0 * PI * k as f64 / count.max(1) as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            let c = count.max(2);
            (0..c)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / c as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    DVector::from_vec(vec![z, r * a.cos(), r * a.sin()])
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count.max(1))
                .map(|_| {
                    let v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let nrm = v.norm();
                    v / nrm
                })
                .collect()
        }
    }
}

/// Orthonormal complement of the unit vector `s` in Euclidean `R^m`.
fn complement(s: &DVector<f64>) -> Vec<DVector<f64>> {
    let m = s.len();
    let mut out: Vec<DVector<f64>> = vec![s.clone()];
    for i in 0..m {
        let mut c = DVector::from_fn(m, |j, _| if i == j { 1.0 } else { 0.0 });
        for o in &out {
            c -= o * o.dot(&c);
        }
        if c.norm() > 1e-6 {
            let nrm = c.norm();
            out.push(c / nrm);
        }
        if out.len() == m {
            break;
        }
    }
    out.remove(0);
    out
}

/// 8th-order central difference weights for offsets `±1..±4`.
const CD8: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

/// Trapped-point check at `p`: for each future null direction `v` of a fan
/// (normalised by `g(T, v) = −1` against the future unit timelike `T`),
/// the slices `exp_p(t Ṽ)` are built from neighbouring null geodesics and
/// `k_{S_t}(ẋ(t)) = −tr S` is sampled at `n_t` parameters of `t_range`.
pub fn trapped_point_check(
    metric: &MetricField,
    p: &[f64],
    n_directions: usize,
    t_range: (f64, f64),
    n_t: usize,
    tol: f64,
) -> Result<TrappedReport> {
    let n = metric.dim();
    if n < 3 {
        return Err(SubmanifoldError::HypothesisViolated("trapped points need n >= 3".into()));
    }
    if !(t_range.0 > 0.0 && t_range.1 > t_range.0) {
        return Err(SubmanifoldError::HypothesisViolated("need 0 < t_lo < t_hi".into()));
    }
    let basis = metric.orthonormal_basis(p)?;
    let fan = direction_fan(n - 1, n_directions, 0x7a11);
    let directions: Vec<Result<DirectionWitness>> = fan
        .par_iter()
        .enumerate()
        .map(|(idx, s)| slice_direction(metric, p, &basis, idx, s, t_range, n_t, tol))
        .collect();
    let directions: Vec<DirectionWitness> = directions.into_iter().collect::<Result<_>>()?;
    let trapped = directions.iter().all(|d| d.witness_t.is_some());
    Ok(TrappedReport { trapped, directions })
}

fn lift(basis: &[DVector<f64>], spatial: &DVector<f64>) -> DVector<f64> {
    let mut v = basis[0].clone();
    for (i, c) in spatial.iter().enumerate() {
        v += &basis[i + 1] * *c;
    }
    v
}

#[allow(clippy::too_many_arguments)]
fn slice_direction(
    metric: &MetricField,
    p: &[f64],
    basis: &[DVector<f64>],
    index: usize,
    s: &DVector<f64>,
    t_range: (f64, f64),
    n_t: usize,
    tol: f64,
) -> Result<DirectionWitness> {
    let n = metric.dim();
    let d = n - 2;
    let opts = GeodesicOptions::with_tol(tol);
    let v = lift(basis, s);
    let span = (0.0, t_range.1);
    let centre = integrate_geodesic(metric, p, v.as_slice(), span, &opts)?;
    let transverse = complement(s);
    let seeds: Vec<DVector<f64>> = transverse.iter().map(|f| lift(basis, f) - &basis[0]).collect();
    let frame = normal_frame(&centre, &seeds)?;
    let h = SLICE_STEP;
    // neighbours[i][k] = (path at +(k+1)h, path at −(k+1)h) along f_i
    let mut neighbours = Vec::with_capacity(d);
    for f in &transverse {
        let mut row = Vec::with_capacity(SLICE_NEIGHBOURS / 2);
        for k in 1..=SLICE_NEIGHBOURS / 2 {
            let a = k as f64 * h;
            let pair = [a, -a].map(|alpha| {
                let sp = (s + f * alpha) / (1.0 + alpha * alpha).sqrt();
                integrate_geodesic(metric, p, lift(basis, &sp).as_slice(), span, &opts)
            });
            let [plus, minus] = pair;
            row.push((plus?, minus?));
        }
        neighbours.push(row);
    }
    let m = n_t.max(2);
    let mut k_samples = Vec::with_capacity(m);
    let mut witness = None;
    for j in 0..m {
        let t = t_range.0 + (t_range.1 - t_range.0) * j as f64 / (m - 1) as f64;
        let (x, u) = centre.state(t);
        let g = centre.metric_at(t);
        let mode = match centre.branch_at(t) {
            Branch::Fixed(sd) => EvalMode::OneSided(sd),
            Branch::Auto => EvalMode::TwoSided,
        };
        let gam = christoffel_with(metric, &x, mode)?;
        let e = frame.vectors_at(t);
        let mut a = DMatrix::zeros(d, d);
        let mut ad = DMatrix::zeros(d, d);
        for (i, row) in neighbours.iter().enumerate() {
            let mut jx = DVector::zeros(n);
            let mut jv = DVector::zeros(n);
            for (k, (plus, minus)) in row.iter().enumerate() {
                let (xp, vp) = plus.state(t);
                let (xm, vm) = minus.state(t);
                let w = CD8[k] / h;
                jx += (DVector::from_vec(xp) - DVector::from_vec(xm)) * w;
                jv += (vp - vm) * w;
            }
            let djx = &jv + gam.contract(u.as_slice(), jx.as_slice());
            for r in 0..d {
                a[(r, i)] = linalg::inner(&g, &jx, &e[r]);
                ad[(r, i)] = linalg::inner(&g, &djx, &e[r]);
            }
        }
        let det = a.determinant();
        if !(det > 0.0) {
            if witness.is_none() {
                return Err(SubmanifoldError::ConjugateBeforeSlice { t, det });
            }
            break;
        }
        let shape = a.transpose().lu().solve(&ad.transpose()).map(|x| x.transpose());
        let Some(shape) = shape else { break };
        let k = -shape.trace();
        k_samples.push((t, k));
        if witness.is_none() && k > TRAPPED_TOL {
            witness = Some(t);
        }
    }
    let max_k = k_samples.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(DirectionWitness { index, direction: v.iter().copied().collect(), witness_t: witness, max_k, k_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congruence::RiccatiTrajectory;
    use crate::geodesic::integrate_geodesic;
    use crate::metric::catalog;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn unit_sphere() -> SubmanifoldPatch {
        SubmanifoldPatch::slice_sphere(catalog::minkowski(4), 1.0, 0.0).unwrap()
    }

    /// Point at polar angle `a`, azimuth `b` and its radial unit vector.
    fn radial(a: f64, b: f64) -> DVector<f64> {
        dv(&[0.0, a.cos(), a.sin() * b.cos(), a.sin() * b.sin()])
    }

    #[test]
    fn hyperplane_has_no_extrinsic_curvature() {
        let p = SubmanifoldPatch::flat_slice(catalog::minkowski(4), 0.0, 10.0).unwrap();
        let s = [0.3, -0.2, 1.0];
        let e = p.tangent_basis(&s).unwrap();
        for a in &e {
            for b in &e {
                assert!(p.second_fundamental_form(&s, a, b).unwrap().norm() < 1e-14);
            }
        }
        assert!(p.mean_curvature(&s).unwrap().norm() < 1e-14);
        assert_eq!(p.codim(), 1);
        assert!(matches!(
            p.second_fundamental_form(&s, &dv(&[1.0, 0.0, 0.0, 0.0]), &e[0]),
            Err(SubmanifoldError::NotTangent { .. })
        ));
    }

    #[test]
    fn sphere_second_fundamental_form_is_radial() {
        for rho in [0.5, 1.0, 3.0] {
            let p = SubmanifoldPatch::slice_sphere(catalog::minkowski(4), rho, 0.0).unwrap();
            let s = [0.9, 0.4];
            let e = p.tangent_basis(&s).unwrap();
            let r = radial(s[0], s[1]);
            for ei in &e {
                let ii = p.second_fundamental_form(&s, ei, ei).unwrap();
                assert!((ii.norm() - 1.0 / rho).abs() < 1e-12);
                assert!((ii + &r / rho).norm() < 1e-12);
            }
            assert!(p.second_fundamental_form(&s, &e[0], &e[1]).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn sphere_ii_matches_transport_oracle() {
        // ∇_e W for W = e extended along the great circle, via a
        // finite-difference of the coordinate velocity (flat connection).
        let p = unit_sphere();
        let s = [1.1, 0.3];
        let h = 1e-5;
        let x = |a: f64| p.point(&[a, s[1]]).unwrap();
        let xp = x(s[0] + h);
        let xm = x(s[0] - h);
        let x0 = x(s[0]);
        let acc = DVector::from_fn(4, |i, _| (xp[i] - 2.0 * x0[i] + xm[i]) / (h * h));
        let e = p.tangent_basis(&s).unwrap();
        let ii = p.second_fundamental_form(&s, &e[0], &e[0]).unwrap();
        assert!((ii - acc).norm() < 1e-5);
    }

    #[test]
    fn cylinder_second_fundamental_form() {
        let rho = 2.0;
        let p = SubmanifoldPatch::slice_cylinder(catalog::minkowski(4), rho, 0.0).unwrap();
        let s = [0.7f64, 1.5];
        let axial = dv(&[0.0, 0.0, 0.0, 1.0]);
        let circ = dv(&[0.0, -s[0].sin(), s[0].cos(), 0.0]);
        assert!(p.second_fundamental_form(&s, &axial, &axial).unwrap().norm() < 1e-14);
        let ii = p.second_fundamental_form(&s, &circ, &circ).unwrap();
        assert!((ii.norm() - 1.0 / rho).abs() < 1e-12);
        assert!((ii + dv(&[0.0, s[0].cos(), s[0].sin(), 0.0]) / rho).norm() < 1e-12);
    }

    #[test]
    fn sphere_convergence_signs() {
        let p = unit_sphere();
        let s = [0.8, -1.2];
        let r = radial(s[0], s[1]);
        let t = dv(&[1.0, 0.0, 0.0, 0.0]);
        let ingoing = &t - &r;
        let outgoing = &t + &r;
        assert!((p.convergence(&s, &ingoing).unwrap() - 1.0).abs() < 1e-12);
        assert!((p.convergence(&s, &outgoing).unwrap() + 1.0).abs() < 1e-12);
        let nn = p.future_null_normals(&s).unwrap();
        assert_eq!(nn.len(), 2);
        assert!((&nn[0] - &ingoing).norm() < 1e-10);
    }

    #[test]
    fn focal_pipeline_on_flat_sphere() {
        let p = unit_sphere();
        let s = [1.0, 0.5];
        let nu = dv(&[1.0, 0.0, 0.0, 0.0]) - radial(s[0], s[1]);
        let setup = focal_setup(&p, &s, &nu, 3.0, 1e-10).unwrap();
        assert!((setup.convergence() - 1.0).abs() < 1e-8);
        assert!((setup.trace_unnormalized() - 2.0).abs() < 1e-8);
        let rep = focal_sum_test(&setup, 2.0, 0.0, 1e-12).unwrap();
        assert!((rep.threshold + 1.0).abs() < 1e-12);
        assert!((rep.sum_value + 1.0).abs() < 1e-8);
        assert!(rep.focal_predicted);
        let t = detect_focal(&setup, (0.0, 2.5), 1e-10).unwrap().unwrap();
        assert!((t - 1.0).abs() < 1e-6);
        assert!(t <= rep.b);
        assert!(matches!(focal_sum_test(&setup, 0.5, 0.0, 1e-12), Err(SubmanifoldError::HypothesisViolated(_))));

        let out = dv(&[1.0, 0.0, 0.0, 0.0]) + radial(s[0], s[1]);
        let setup_out = focal_setup(&p, &s, &out, 3.0, 1e-10).unwrap();
        assert!(matches!(focal_sum_test(&setup_out, 2.0, 0.0, 1e-12), Err(SubmanifoldError::NotTrappedDirection { .. })));
        assert_eq!(detect_focal(&setup_out, (0.0, 3.0), 1e-10).unwrap(), None);
    }

    #[test]
    fn zero_threshold_delta_does_not_zero_the_sum() {
        // With δ = 3(c − 1/b)(n−m)/b the threshold vanishes, but in flat
        // space the sum itself stays at (n−m)(1/b − c).
        let p = unit_sphere();
        let s = [1.0, 0.5];
        let nu = dv(&[1.0, 0.0, 0.0, 0.0]) - radial(s[0], s[1]);
        let setup = focal_setup(&p, &s, &nu, 3.0, 1e-10).unwrap();
        let (b, c) = (2.0, 1.0);
        let delta = 3.0 * (c - 1.0 / b) * 2.0 / b;
        let rep = focal_sum_test(&setup, b, delta, 1e-12).unwrap();
        assert!(rep.threshold.abs() < 1e-12);
        assert!((rep.sum_value + 1.0).abs() < 1e-8);
    }

    #[test]
    fn hyperplane_has_no_focal_point() {
        let p = SubmanifoldPatch::flat_slice(catalog::minkowski(4), 0.0, 10.0).unwrap();
        let setup = focal_setup(&p, &[0.0, 0.0, 0.0], &dv(&[1.0, 0.0, 0.0, 0.0]), 5.0, 1e-10).unwrap();
        assert_eq!(setup.source().dim(), 3);
        assert_eq!(detect_focal(&setup, (0.0, 5.0), 1e-10).unwrap(), None);
        assert!(setup.convergence().abs() < 1e-14);
    }

    #[test]
    fn index_form_elementary_values() {
        let p = SubmanifoldPatch::flat_slice(catalog::minkowski(4), 0.0, 10.0).unwrap();
        let setup = focal_setup(&p, &[0.0, 0.0, 0.0], &dv(&[1.0, 0.0, 0.0, 0.0]), 5.0, 1e-10).unwrap();
        let z = FrameField::zero(3);
        assert_eq!(index_form(&setup, &z, &z, 2.0, 1e-12).unwrap(), 0.0);
        let b = 2.0;
        let x = FrameField::linear_decay(0, 3, b);
        assert!((index_form(&setup, &x, &x, b, 1e-12).unwrap() - 1.0 / b).abs() < 1e-12);
        let bad = FrameField::linear_decay(0, 3, 3.0);
        assert!(matches!(index_form(&setup, &bad, &bad, b, 1e-12), Err(SubmanifoldError::BoundaryViolated { .. })));
    }

    #[test]
    fn index_form_closed_form_with_constant_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let b: f64 = rng.random_range(0.5..3.0);
            let c: f64 = rng.random_range(0.1..2.0);
            let m = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let r = linalg::symmetric_part(&m);
            let setup = FocalSetup::synthetic(TidalSource::constant(r.clone()).unwrap(), 2, DMatrix::identity(2, 2) * c).unwrap();
            let sum: f64 = (0..2)
                .map(|i| {
                    let x = FrameField::linear_decay(i, 2, b);
                    index_form(&setup, &x, &x, b, 1e-13).unwrap()
                })
                .sum();
            let closed = 2.0 * (1.0 / b - c) - b / 3.0 * r.trace();
            assert!((sum - closed).abs() < 1e-8, "{sum} vs {closed}");
        }
    }

    #[test]
    fn tidal_frame_bound_examples() {
        let c = 0.5;
        let src = TidalSource::constant(DMatrix::from_diagonal(&dv(&[2.0 * c, 0.0, 0.0]))).unwrap();
        assert!(tidal_frame_bound(&src, c, 1.0, (-1.0, 1.0), 11).unwrap());
        assert!(!tidal_frame_bound(&TidalSource::scalar(3, 0.0), c, 1.0, (-1.0, 1.0), 11).unwrap());
    }

    fn timelike_frame(metric: &MetricField, x0: &[f64], v0: &[f64], t1: f64) -> NormalFrame {
        let path = integrate_geodesic(metric, x0, v0, (0.0, t1), &GeodesicOptions::default()).unwrap();
        let n = metric.dim();
        let seeds: Vec<DVector<f64>> =
            (1..n).map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
        normal_frame(&path, &seeds).unwrap()
    }

    #[test]
    fn genericity_in_flat_and_curved_spaces() {
        let flat = catalog::minkowski(4);
        let fr = timelike_frame(&flat, &[0.0; 4], &[1.0, 0.0, 0.0, 0.0], 1.0);
        assert!(genericity_scan(&fr, (0.0, 1.0), 0.1, 16, 3, 1).unwrap().is_none());

        let hyp = catalog::space_form(4, -1.0);
        let fr = timelike_frame(&hyp, &[0.0; 4], &[1.0, 0.0, 0.0, 0.0], 0.3);
        let w = genericity_scan(&fr, (0.0, 0.3), 0.05, 16, 2, 1).unwrap().unwrap();
        assert!(w.c > 0.8 && w.c < 0.95, "{}", w.c);
        assert!(revalidate_witness(&fr, &w, 2, 1).0);
        assert!(w.to_key_values().contains("direction_index=0"));
    }

    #[test]
    fn schwarzschild_radial_null_transverse_tidal_vanishes() {
        let m = catalog::schwarzschild(1.0);
        let r0 = 10.0;
        let f = 1.0 - 2.0 / r0;
        let path = integrate_geodesic(&m, &[0.0, r0, PI / 2.0, 0.0], &[1.0, -f, 0.0, 0.0], (0.0, 4.0), &GeodesicOptions::default())
            .unwrap();
        let seeds = [dv(&[0.0, 0.0, 1.0, 0.0]), dv(&[0.0, 0.0, 0.0, 1.0])];
        let fr = normal_frame(&path, &seeds).unwrap();
        let (x, v) = path.state(1.0);
        let s = tube_samples(&m, &x, &v, &fr.vectors_at(1.0), 0.0, 1, 0);
        assert!(s[0].tidal_entry(0, 0).abs() < 1e-7 && s[0].tidal_entry(1, 1).abs() < 1e-7);
    }

    #[test]
    fn minkowski_origin_is_not_trapped() {
        let rep = trapped_point_check(&catalog::minkowski(3), &[0.0; 3], 6, (0.2, 2.0), 10, 1e-11).unwrap();
        assert!(!rep.trapped);
        for d in &rep.directions {
            for &(t, k) in &d.k_samples {
                assert!((k + 1.0 / t).abs() < 1e-6, "{k} at {t}");
            }
        }
        let rep = trapped_point_check(&catalog::minkowski(4), &[0.0; 4], 6, (0.5, 2.0), 4, 1e-11).unwrap();
        for d in &rep.directions {
            for &(t, k) in &d.k_samples {
                assert!((k + 2.0 / t).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn contracting_frw_traps_after_finite_time() {
        // a = 1 − t: along each null ray k = (1 − 1/η)/a² with η = −ln(1 − t)
        // and affine λ = (1 − a²)/2, so k turns positive once t > 1 − 1/e.
        let m = catalog::frw_toy(3, 1.0, -1.0, 0.0);
        let rep = trapped_point_check(&m, &[0.0; 3], 4, (0.1, 0.49), 40, 1e-11).unwrap();
        assert!(rep.trapped);
        let lam_star = 0.5 * (1.0 - (-2.0f64).exp());
        for d in &rep.directions {
            for &(lam, k) in &d.k_samples {
                let a = (1.0 - 2.0 * lam).sqrt();
                let eta = -a.ln();
                let want = (1.0 - 1.0 / eta) / (a * a);
                assert!((k - want).abs() < 1e-5 * want.abs().max(1.0), "{k} vs {want} at {lam}");
            }
            let w = d.witness_t.unwrap();
            assert!(w > lam_star && w < lam_star + 0.02);
        }
        // ȧ = 0: the cone expands everywhere.
        let still = catalog::frw_toy(3, 1.0, 0.0, 0.0);
        assert!(!trapped_point_check(&still, &[0.0; 3], 4, (0.1, 1.0), 10, 1e-11).unwrap().trapped);
    }

    #[test]
    fn slice_convergence_matches_jacobi_expansion() {
        let m = catalog::schwarzschild(1.0);
        let p = [0.0, 8.0, PI / 2.0, 0.0];
        let rep = trapped_point_check(&m, &p, 3, (0.5, 3.0), 6, 1e-11).unwrap();
        let basis = m.orthonormal_basis(&p).unwrap();
        for d in &rep.directions {
            let path = integrate_geodesic(&m, &p, &d.direction, (0.0, 3.0), &GeodesicOptions::with_tol(1e-11)).unwrap();
            let s = DVector::from_fn(3, |i, _| linalg::inner(&m.g(&p), &dv(&d.direction), &basis[i + 1]));
            let seeds: Vec<DVector<f64>> = complement(&s).iter().map(|f| lift(&basis, f) - &basis[0]).collect();
            let fr = normal_frame(&path, &seeds).unwrap();
            let tr: RiccatiTrajectory =
                integrate_jacobi(&TidalSource::geometric(fr), &DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), (0.0, 3.0), 1e-11)
                    .unwrap();
            for &(t, k) in &d.k_samples {
                let theta = tr.theta(t).unwrap();
                assert!((k + theta).abs() < 1e-5, "{k} vs {}", -theta);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn ii_is_symmetric(a in 0.3f64..2.8, b in -3.0f64..3.0, u in proptest::collection::vec(-1.0f64..1.0, 2), w in proptest::collection::vec(-1.0f64..1.0, 2)) {
            let p = SubmanifoldPatch::slice_sphere(catalog::space_form(4, 0.5), 0.7, 0.1).unwrap();
            let s = [a, b];
            let jet = p.jet(&s).unwrap();
            let uu = &jet.d1 * dv(&u);
            let ww = &jet.d1 * dv(&w);
            let d = p.second_fundamental_form(&s, &uu, &ww).unwrap() - p.second_fundamental_form(&s, &ww, &uu).unwrap();
            prop_assert!(d.norm() < 1e-10);
        }

        #[test]
        fn convergence_is_linear(alpha in -2.0f64..2.0, v in proptest::collection::vec(-1.0f64..1.0, 4), w in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let p = unit_sphere();
            let s = [0.9, 0.2];
            let (v, w) = (dv(&v), dv(&w));
            let lhs = p.convergence(&s, &(&v * alpha + &w)).unwrap();
            let rhs = alpha * p.convergence(&s, &v).unwrap() + p.convergence(&s, &w).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn index_form_is_symmetric_and_bilinear(r in proptest::collection::vec(-1.0f64..1.0, 3), q in proptest::collection::vec(-1.0f64..1.0, 4), lam in -2.0f64..2.0) {
            let b = 1.5;
            let rm = DMatrix::from_row_slice(2, 2, &[r[0], r[1], r[1], r[2]]);
            let setup = FocalSetup::synthetic(TidalSource::constant(rm).unwrap(), 2, DMatrix::identity(2, 2) * 0.4).unwrap();
            let field = |c0: f64, c1: f64| FrameField::new(move |t| {
                let f = (1.0 - t / b) * (1.0 + t);
                let df = -(1.0 + t) / b + (1.0 - t / b);
                (dv(&[c0 * f, c1 * f]), dv(&[c0 * df, c1 * df]))
            });
            let v = field(q[0], q[1]);
            let w = field(q[2], q[3]);
            let vw = index_form(&setup, &v, &w, b, 1e-13).unwrap();
            let wv = index_form(&setup, &w, &v, b, 1e-13).unwrap();
            prop_assert!((vw - wv).abs() < 1e-10);
            let comb = field(lam * q[0] + q[2], lam * q[1] + q[3]);
            let lin = index_form(&setup, &comb, &v, b, 1e-13).unwrap();
            let want = lam * index_form(&setup, &v, &v, b, 1e-13).unwrap() + wv;
            prop_assert!((lin - want).abs() < 1e-10);
        }
    }
}
