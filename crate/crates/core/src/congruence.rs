//! Jacobi and matrix Riccati flows along a congruence: expansion, shear,
//! vorticity, conjugate points and the comparison estimates built on them.
//!
//! Matrices act on the quotient `[ẋ]^⊥` in a parallel orthonormal frame, so
//! everything here is plain `d × d` linear algebra once the tidal operator
//! is known. The Jacobi form `Ä + R A = 0` is integrated so that the flow
//! passes through conjugate points; `B = Ȧ A⁻¹` is derived from it.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesic::{GeodesicError, NormalFrame};
use crate::linalg;
use crate::metric::{tidal_operator_with, Branch, EvalMode, MetricError, FRAME_TOL};
use crate::ode::{self, DenseOutput, OdeError, OdeOptions, Termination};

/// Asymmetry allowed in synthetic sources, relative to `max(1, |R|)`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// `B` is reported only where `|det A| > DET_FLOOR · max |det A|`.
pub const DET_FLOOR: f64 = 1e-10;
/// Tolerance for matrix order checks on symmetric parts.
pub const ORDER_TOL: f64 = 1e-10;
/// Strict margin added to the worst-case source on the inner window.
pub const WINDOW_MARGIN: f64 = 1e-6;
/// Lagrangian-angle value below which a touching zero counts as conjugate.
pub const TANGENCY_TOL: f64 = 1e-6;
/// Riccati flows stop once `‖B‖_F` exceeds this.
pub const BLOW_UP_NORM: f64 = 1e4;
/// Step of the finite-difference expansion derivative.
pub const RAYCHAUDHURI_STEP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CongruenceError {
    #[error("initial data has rank {rank} < {d}")]
    RankDeficientData { rank: usize, d: usize },
    #[error("source not symmetric at t = {t} (asymmetry {asymmetry:e})")]
    NotSymmetric { t: f64, asymmetry: f64 },
    #[error("expected a {expected}x{expected} matrix, got {rows}x{cols}")]
    DimensionMismatch { expected: usize, rows: usize, cols: usize },
    #[error("{kind:?} branch undefined at argument {arg}")]
    BranchViolation { kind: ComparisonKind, arg: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("Riccati flow blew up at t = {t}; minimum margin before it {margin:e}")]
    BlowUp { t: f64, margin: f64 },
    #[error("conjugate point at t = {t} inside the window")]
    ConjugateInWindow { t: f64 },
    #[error("bad parameter range [{t0}, {t1}]")]
    BadRange { t0: f64, t1: f64 },
    #[error("integration failed: {0}")]
    Integration(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
}

pub type Result<T> = std::result::Result<T, CongruenceError>;

type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
enum SourceKind {
    Synthetic(MatrixFn),
    Geometric(Box<NormalFrame>),
}

/// `t ↦ [R](t)`, either from curvature along a framed geodesic or given
/// explicitly.
#[derive(Clone)]
pub struct TidalSource {
    d: usize,
    kind: SourceKind,
    breaks: Vec<f64>,
}

impl fmt::Debug for TidalSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            SourceKind::Synthetic(_) => "synthetic",
            SourceKind::Geometric(_) => "geometric",
        };
        f.debug_struct("TidalSource")
            .field("d", &self.d)
            .field("kind", &kind)
            .field("breaks", &self.breaks)
            .finish()
    }
}

fn check_square(m: &DMatrix<f64>, d: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(CongruenceError::DimensionMismatch { expected: d, rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    linalg::antisymmetric_part(m).amax()
}

fn check_symmetric(m: &DMatrix<f64>, t: f64, rel: f64) -> Result<()> {
    let a = asymmetry(m);
    if !(a <= rel * m.amax().max(1.0)) {
        return Err(CongruenceError::NotSymmetric { t, asymmetry: a });
    }
    Ok(())
}

impl TidalSource {
    pub fn synthetic(d: usize, f: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self { d, kind: SourceKind::Synthetic(Arc::new(f)), breaks: Vec::new() }
    }

    pub fn constant(m: DMatrix<f64>) -> Result<Self> {
        let d = m.nrows();
        check_square(&m, d)?;
        check_symmetric(&m, 0.0, SYMMETRY_TOL)?;
        Ok(Self::synthetic(d, move |_| m.clone()))
    }

    /// `c · id`.
    pub fn scalar(d: usize, c: f64) -> Self {
        Self::synthetic(d, move |_| DMatrix::identity(d, d) * c)
    }

    /// Piecewise constant: `pieces[k]` on `[breaks[k-1], breaks[k])`.
    pub fn piecewise(breaks: Vec<f64>, pieces: Vec<DMatrix<f64>>) -> Result<Self> {
        if pieces.len() != breaks.len() + 1 || breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CongruenceError::HypothesisViolated("piecewise source needs sorted breaks and one more piece".into()));
        }
        let d = pieces[0].nrows();
        for (k, p) in pieces.iter().enumerate() {
            check_square(p, d)?;
            check_symmetric(p, breaks.get(k).copied().unwrap_or(0.0), SYMMETRY_TOL)?;
        }
        let b = breaks.clone();
        let src = Self::synthetic(d, move |t| pieces[b.partition_point(|&x| x <= t)].clone());
        Ok(src.with_breakpoints(breaks))
    }

    /// Parameters where the source may jump; integration restarts there.
    pub fn with_breakpoints(mut self, mut breaks: Vec<f64>) -> Self {
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        self.breaks = breaks;
        self
    }

    /// Tidal operator along the frame's geodesic. Interface crossings of a
    /// C^{1,1} metric become breakpoints and curvature is taken one-sided.
    pub fn geometric(frame: NormalFrame) -> Self {
        let breaks = frame.path().events().to_vec();
        Self { d: frame.d(), kind: SourceKind::Geometric(Box::new(frame)), breaks }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    /// Parameter range on which the source is defined.
    pub fn domain(&self) -> (f64, f64) {
        match &self.kind {
            SourceKind::Synthetic(_) => (f64::NEG_INFINITY, f64::INFINITY),
            SourceKind::Geometric(fr) => (fr.path().t_min(), fr.path().t_max()),
        }
    }

    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        let m = match &self.kind {
            SourceKind::Synthetic(f) => {
                let m = f(t);
                check_square(&m, self.d)?;
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(CongruenceError::Integration(format!("non-finite source at t = {t}")));
                }
                check_symmetric(&m, t, SYMMETRY_TOL)?;
                m
            }
            SourceKind::Geometric(frame) => {
                let path = frame.path();
                let (x, v) = path.state(t);
                let e = frame.vectors_at(t);
                let mode = match path.branch_at(t) {
                    Branch::Fixed(s) => EvalMode::OneSided(s),
                    Branch::Auto => EvalMode::TwoSided,
                };
                let m = tidal_operator_with(path.metric(), &x, &v, &e, mode, FRAME_TOL)?;
                check_symmetric(&m, t, FRAME_TOL)?;
                m
            }
        };
        Ok(linalg::symmetric_part(&m))
    }

    /// `tr [R](t)`, which is `Ric(ẋ, ẋ)` for geometric sources.
    pub fn trace(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.trace())
    }

    /// Sub-intervals of `[t0, t1]` between breakpoints.
    fn segments(&self, t0: f64, t1: f64) -> Vec<(f64, f64)> {
        let gap = 1e-12 * (t1 - t0).max(1.0);
        let mut cuts = vec![t0];
        for &b in &self.breaks {
            if b > t0 + gap && b < t1 - gap {
                cuts.push(b);
            }
        }
        cuts.push(t1);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Evaluation point pulled strictly inside a segment so piecewise sources
/// use the piece that owns the segment.
fn inside(t: f64, lo: f64, hi: f64) -> f64 {
    let pad = 1e-13 * (hi - lo);
    t.clamp(lo + pad, hi - pad)
}

fn map_ode(e: OdeError<CongruenceError>) -> CongruenceError {
    match e {
        OdeError::Rhs(e) => e,
        other => CongruenceError::Integration(other.to_string()),
    }
}

fn check_range(source: &TidalSource, t0: f64, t1: f64) -> Result<()> {
    let (lo, hi) = source.domain();
    let slack = 1e-12 * t0.abs().max(t1.abs()).max(1.0);
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() || t0 < lo - slack || t1 > hi + slack {
        return Err(CongruenceError::BadRange { t0, t1 });
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Piecewise {
    bounds: Vec<(f64, f64)>,
    parts: Vec<DenseOutput>,
}

impl Piecewise {
    fn eval(&self, t: f64) -> Vec<f64> {
        let i = self.bounds.partition_point(|b| b.1 < t).min(self.bounds.len() - 1);
        let (lo, hi) = self.bounds[i];
        self.parts[i].eval(t.clamp(lo, hi))
    }

    fn start(&self) -> f64 {
        self.bounds[0].0
    }

    fn end(&self) -> f64 {
        self.bounds[self.bounds.len() - 1].1
    }

    /// Step boundaries, each step split into `sub` pieces.
    fn grid(&self, sub: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.parts {
            let nodes = p.nodes();
            for w in nodes.windows(2) {
                for k in 0..sub {
                    out.push(w[0] + (w[1] - w[0]) * k as f64 / sub as f64);
                }
            }
        }
        out.push(self.end());
        out.dedup();
        out
    }
}

/// Kind of a zero of `A`: a sign change of `det A`, or a touching zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConjugateKind {
    Crossing,
    Tangency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConjugatePoint {
    pub t: f64,
    pub kind: ConjugateKind,
}

/// Solution of `Ä + R A = 0` with its derived congruence scalars.
#[derive(Debug, Clone)]
pub struct RiccatiTrajectory {
    source: TidalSource,
    d: usize,
    tol: f64,
    flow: Piecewise,
    right: DMatrix<f64>,
    times: Vec<f64>,
    det_scale: f64,
    conjugates: Vec<ConjugatePoint>,
}

impl RiccatiTrajectory {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn t_start(&self) -> f64 {
        self.flow.start()
    }

    pub fn t_end(&self) -> f64 {
        self.flow.end()
    }

    /// Sample parameters: integrator nodes with each step split in four.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn raw(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let y = self.flow.eval(t);
        let dd = self.d * self.d;
        (DMatrix::from_column_slice(self.d, self.d, &y[..dd]), DMatrix::from_column_slice(self.d, self.d, &y[dd..]))
    }

    /// `(A(t), Ȧ(t))`.
    pub fn state(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (a, ad) = self.raw(t);
        (a * &self.right, ad * &self.right)
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        self.state(t).0
    }

    pub fn adot(&self, t: f64) -> DMatrix<f64> {
        self.state(t).1
    }

    pub fn det(&self, t: f64) -> f64 {
        self.a(t).determinant()
    }

    /// Absolute floor below which `B` is not reported.
    pub fn det_floor(&self) -> f64 {
        DET_FLOOR * self.det_scale * self.right.determinant().abs()
    }

    /// `B = Ȧ A⁻¹` where `A` is safely invertible.
    pub fn b(&self, t: f64) -> Option<DMatrix<f64>> {
        let (a, ad) = self.state(t);
        if !(a.determinant().abs() > self.det_floor()) {
            return None;
        }
        let x = a.transpose().lu().solve(&ad.transpose())?;
        Some(x.transpose())
    }

    pub fn theta(&self, t: f64) -> Option<f64> {
        self.b(t).map(|b| b.trace())
    }

    pub fn sigma(&self, t: f64) -> Option<DMatrix<f64>> {
        self.b(t).map(|b| shear_of(&b))
    }

    pub fn sigma_norm(&self, t: f64) -> Option<f64> {
        self.sigma(t).map(|s| s.norm())
    }

    pub fn omega_norm(&self, t: f64) -> Option<f64> {
        self.b(t).map(|b| linalg::antisymmetric_part(&b).norm())
    }

    /// `ȦᵀA − AᵀȦ`, constant along any solution.
    pub fn wronskian(&self, t: f64) -> DMatrix<f64> {
        let (a, ad) = self.state(t);
        ad.transpose() * &a - a.transpose() * ad
    }

    pub fn conjugate_points(&self) -> &[ConjugatePoint] {
        &self.conjugates
    }

    pub fn conjugate_times(&self) -> Vec<f64> {
        self.conjugates.iter().map(|c| c.t).collect()
    }

    pub fn first_conjugate(&self) -> Option<f64> {
        self.conjugates.first().map(|c| c.t)
    }

    /// Replace `A` by `A · m` (still a Jacobi tensor, same `B`).
    pub fn right_multiply(&mut self, m: &DMatrix<f64>) {
        self.right = &self.right * m;
    }

    /// `B` at `base + o` for each offset, each from one full-order step off
    /// the node preceding `base`, so the values vary smoothly with `o`.
    /// `None` if an offset leaves the segment or meets a singular `A`.
    pub fn b_near(&self, base: f64, offsets: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let bounds = &self.flow.bounds;
        let i = bounds.partition_point(|b| b.1 < base).min(bounds.len() - 1);
        let (lo, hi) = bounds[i];
        if offsets.iter().any(|o| base + o < lo || base + o > hi) {
            return None;
        }
        let part = &self.flow.parts[i];
        let step = &part.steps()[part.locate(base)];
        let mut rhs = jacobi_rhs(&self.source, lo, hi);
        let (d, dd) = (self.d, self.d * self.d);
        let floor = DET_FLOOR * self.det_scale;
        offsets
            .iter()
            .map(|o| {
                let y = ode::single_step(&mut rhs, step.t0, step.start(), base + o - step.t0).ok()?.end();
                let a = DMatrix::from_column_slice(d, d, &y[..dd]);
                let ad = DMatrix::from_column_slice(d, d, &y[dd..]);
                if !(a.determinant().abs() > floor) {
                    return None;
                }
                Some(a.transpose().lu().solve(&ad.transpose())?.transpose())
            })
            .collect()
    }

    /// `inf_w |A w| / |(A w, Ȧ w)|`: zero exactly where `A` is singular,
    /// and insensitive to the overall growth of the solution.
    pub fn lagrangian_angle(&self, t: f64) -> f64 {
        let (a, ad) = self.raw(t);
        let d = self.d;
        let mut m = DMatrix::zeros(2 * d, d);
        m.view_mut((0, 0), (d, d)).copy_from(&a);
        m.view_mut((d, 0), (d, d)).copy_from(&ad);
        let q = m.qr().q();
        let top = q.view((0, 0), (d, d)).clone_owned();
        top.singular_values().min()
    }

    /// Rows `t, det, theta, sigma_norm, omega_norm` on an even grid
    /// (undefined entries are NaN).
    pub fn table(&self, k: usize) -> Vec<[f64; 5]> {
        let (t0, t1) = (self.t_start(), self.t_end());
        (0..k)
            .map(|i| {
                let t = if k > 1 { t0 + (t1 - t0) * i as f64 / (k - 1) as f64 } else { t0 };
                let b = self.b(t);
                let (th, s, w) = match &b {
                    Some(b) => (b.trace(), shear_of(b).norm(), linalg::antisymmetric_part(b).norm()),
                    None => (f64::NAN, f64::NAN, f64::NAN),
                };
                [t, self.det(t), th, s, w]
            })
            .collect()
    }
}

/// Trace-free symmetric part of `B`.
pub fn shear_of(b: &DMatrix<f64>) -> DMatrix<f64> {
    let d = b.nrows();
    linalg::symmetric_part(b) - DMatrix::identity(d, d) * (b.trace() / d as f64)
}

fn stacked_rank(a0: &DMatrix<f64>, adot0: &DMatrix<f64>) -> usize {
    let d = a0.nrows();
    let mut m = DMatrix::zeros(2 * d, d);
    m.view_mut((0, 0), (d, d)).copy_from(a0);
    m.view_mut((d, 0), (d, d)).copy_from(adot0);
    let sv = m.singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-12 * top).count()
}

fn jacobi_rhs(source: &TidalSource, lo: f64, hi: f64) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + '_ {
    let d = source.dim();
    let dd = d * d;
    move |t, s, out| {
        let r = source.eval(inside(t, lo, hi))?;
        let a = DMatrix::from_column_slice(d, d, &s[..dd]);
        out[..dd].copy_from_slice(&s[dd..]);
        let ra = -(r * a);
        out[dd..].copy_from_slice(ra.as_slice());
        Ok(())
    }
}

/// Integrate `Ä + R A = 0` from `(A0, Ȧ0)` over `t_range`.
pub fn integrate_jacobi(
    source: &TidalSource,
    a0: &DMatrix<f64>,
    adot0: &DMatrix<f64>,
    t_range: (f64, f64),
    tol: f64,
) -> Result<RiccatiTrajectory> {
    let d = source.dim();
    check_square(a0, d)?;
    check_square(adot0, d)?;
    let (t0, t1) = t_range;
    check_range(source, t0, t1)?;
    let rank = stacked_rank(a0, adot0);
    if rank < d {
        return Err(CongruenceError::RankDeficientData { rank, d });
    }
    let mut y: Vec<f64> = a0.iter().chain(adot0.iter()).copied().collect();
    let opts = OdeOptions::with_tol(tol);
    let mut bounds = Vec::new();
    let mut parts = Vec::new();
    for (lo, hi) in source.segments(t0, t1) {
        let mut rhs = jacobi_rhs(source, lo, hi);
        let (out, _) = ode::integrate(&mut rhs, lo, &y, hi, &opts, None::<&mut fn(f64, &[f64]) -> f64>)
            .map_err(map_ode)?;
        y = out.final_state();
        bounds.push((lo, hi));
        parts.push(out);
    }
    let flow = Piecewise { bounds, parts };
    let times = flow.grid(4);
    let mut traj = RiccatiTrajectory {
        source: source.clone(),
        d,
        tol,
        flow,
        right: DMatrix::identity(d, d),
        times,
        det_scale: 0.0,
        conjugates: Vec::new(),
    };
    traj.det_scale = traj.times.iter().map(|&t| traj.det(t).abs()).fold(0.0, f64::max);
    traj.conjugates = detect_conjugate(&traj);
    Ok(traj)
}

fn bisect_sign(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * mid.abs().max(1.0) {
            break;
        }
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut e = a + r * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    for _ in 0..200 {
        if b - a <= 1e-14 * a.abs().max(b.abs()).max(1.0) {
            break;
        }
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + r * (b - a);
            fe = f(e);
        }
    }
    if fc < fe {
        (c, fc)
    } else {
        (e, fe)
    }
}

/// Zeros of `det A` after the start of the trajectory: sign changes
/// localised by bisection, touching zeros by minimising the Lagrangian
/// angle. Sorted by parameter.
pub fn detect_conjugate(traj: &RiccatiTrajectory) -> Vec<ConjugatePoint> {
    let ts = traj.times();
    if ts.len() < 2 {
        return Vec::new();
    }
    let det = |t: f64| traj.raw(t).0.determinant();
    let mu: Vec<f64> = ts.iter().map(|&t| traj.lagrangian_angle(t)).collect();
    let dets: Vec<f64> = ts.iter().map(|&t| det(t)).collect();
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(1.0);
    let mut out: Vec<ConjugatePoint> = Vec::new();
    for i in 0..ts.len() - 1 {
        if dets[i] * dets[i + 1] < 0.0 {
            out.push(ConjugatePoint { t: bisect_sign(det, ts[i], ts[i + 1]), kind: ConjugateKind::Crossing });
        }
    }
    for i in 1..ts.len() - 1 {
        if mu[i] <= mu[i - 1] && mu[i] <= mu[i + 1] {
            let (t, v) = golden_min(|t| traj.lagrangian_angle(t), ts[i - 1], ts[i + 1]);
            if v < TANGENCY_TOL && !out.iter().any(|c| same(c.t, t)) {
                out.push(ConjugatePoint { t, kind: ConjugateKind::Tangency });
            }
        }
    }
    let last = ts.len() - 1;
    if mu[last] < TANGENCY_TOL && mu[last] <= mu[last - 1] && !out.iter().any(|c| same(c.t, ts[last])) {
        out.push(ConjugatePoint { t: ts[last], kind: ConjugateKind::Tangency });
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    out
}

/// `sup |θ̇ + Ric + tr σ² + θ²/d|` over `samples` evenly spaced parameters
/// in `range`, with `θ̇` from a five-point difference. Points whose stencil
/// meets a breakpoint or a singular `A` are skipped.
pub fn raychaudhuri_residual(
    traj: &RiccatiTrajectory,
    ricci: impl Fn(f64) -> f64,
    range: (f64, f64),
    samples: usize,
) -> f64 {
    let h = RAYCHAUDHURI_STEP;
    let lo = range.0.max(traj.t_start() + 2.0 * h);
    let hi = range.1.min(traj.t_end() - 2.0 * h);
    if !(hi >= lo) {
        return f64::NAN;
    }
    let d = traj.dim() as f64;
    let n = samples.max(2);
    let mut worst = 0.0f64;
    for k in 0..n {
        let t = lo + (hi - lo) * k as f64 / (n - 1) as f64;
        let Some(bs) = traj.b_near(t, &[-2.0 * h, -h, 0.0, h, 2.0 * h]) else { continue };
        let th: Vec<f64> = bs.iter().map(|b| b.trace()).collect();
        let dtheta = (th[0] - 8.0 * th[1] + 8.0 * th[3] - th[4]) / (12.0 * h);
        let theta = th[2];
        let sigma = shear_of(&bs[2]);
        let r = (dtheta + ricci(t) + sigma.norm_squared() + theta * theta / d).abs();
        worst = worst.max(r);
    }
    worst
}

/// Direct solution of `Ḃ + B² + R = 0`.
#[derive(Debug, Clone)]
pub struct RiccatiFlow {
    d: usize,
    flow: Piecewise,
    blow_up: Option<f64>,
}

impl RiccatiFlow {
    pub fn b(&self, t: f64) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d, self.d, &self.flow.eval(t))
    }

    pub fn t_start(&self) -> f64 {
        self.flow.start()
    }

    /// End of the computed range (the blow-up time if there was one).
    pub fn t_end(&self) -> f64 {
        self.flow.end()
    }

    /// Where `‖B‖_F` reached [`BLOW_UP_NORM`], if it did.
    pub fn blow_up(&self) -> Option<f64> {
        self.blow_up
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.flow.grid(1)
    }
}

pub fn integrate_riccati(source: &TidalSource, b0: &DMatrix<f64>, t_range: (f64, f64), tol: f64) -> Result<RiccatiFlow> {
    let d = source.dim();
    check_square(b0, d)?;
    check_symmetric(b0, t_range.0, ORDER_TOL)?;
    let (t0, t1) = t_range;
    check_range(source, t0, t1)?;
    let opts = OdeOptions::with_tol(tol);
    let mut y: Vec<f64> = b0.iter().copied().collect();
    let mut bounds = Vec::new();
    let mut parts = Vec::new();
    let mut blow_up = None;
    for (lo, hi) in source.segments(t0, t1) {
        let mut rhs = |t: f64, s: &[f64], out: &mut [f64]| -> Result<()> {
            let r = source.eval(inside(t, lo, hi))?;
            let b = DMatrix::from_column_slice(d, d, s);
            let db = -(&b * &b) - r;
            out.copy_from_slice(db.as_slice());
            Ok(())
        };
        let mut stop = |_: f64, s: &[f64]| BLOW_UP_NORM - s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (out, term) = ode::integrate(&mut rhs, lo, &y, hi, &opts, Some(&mut stop)).map_err(map_ode)?;
        y = out.final_state();
        if let Termination::Event { t } = term {
            bounds.push((lo, t));
            parts.push(out);
            blow_up = Some(t);
            break;
        }
        bounds.push((lo, hi));
        parts.push(out);
    }
    Ok(RiccatiFlow { d, flow: Piecewise { bounds, parts }, blow_up })
}

/// Outcome of a Riccati comparison that reached `t_end`.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub holds: bool,
    pub min_margin: f64,
    /// `(t, λ_min(B₂ − B₁))` samples.
    pub margins: Vec<(f64, f64)>,
}

fn margin_samples(f1: &RiccatiFlow, f2: &RiccatiFlow, t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let mut ts: Vec<f64> = (0..=400).map(|k| t0 + (t1 - t0) * k as f64 / 400.0).collect();
    ts.extend(f1.nodes().into_iter().chain(f2.nodes()).filter(|&t| t >= t0 && t <= t1));
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter().map(|t| (t, linalg::sym_min_eigenvalue(&(f2.b(t) - f1.b(t))))).collect()
}

/// Integrate the Riccati flows of `source1 ≥ source2` from a common
/// self-adjoint `B(t1)` and check `B₁ ≤ B₂` on `[t1, t_end]`.
pub fn riccati_compare(
    source1: &TidalSource,
    source2: &TidalSource,
    b_init: &DMatrix<f64>,
    t1: f64,
    t_end: f64,
    tol: f64,
) -> Result<ComparisonReport> {
    if source1.dim() != source2.dim() {
        return Err(CongruenceError::DimensionMismatch { expected: source1.dim(), rows: source2.dim(), cols: source2.dim() });
    }
    if !(t_end > t1) {
        return Err(CongruenceError::BadRange { t0: t1, t1: t_end });
    }
    let mut probe: Vec<f64> = (0..=200).map(|k| t1 + (t_end - t1) * k as f64 / 200.0).collect();
    for &b in source1.breakpoints().iter().chain(source2.breakpoints()) {
        if b > t1 && b < t_end {
            probe.extend([b - 1e-9 * (t_end - t1), b + 1e-9 * (t_end - t1)]);
        }
    }
    for t in probe {
        let gap = linalg::sym_min_eigenvalue(&(source1.eval(t)? - source2.eval(t)?));
        if gap < -ORDER_TOL {
            return Err(CongruenceError::HypothesisViolated(format!("source ordering fails at t = {t} (gap {gap:e})")));
        }
    }
    let f1 = integrate_riccati(source1, b_init, (t1, t_end), tol)?;
    let f2 = integrate_riccati(source2, b_init, (t1, t_end), tol)?;
    let stop = f1.t_end().min(f2.t_end());
    let margins = margin_samples(&f1, &f2, t1, stop);
    let min_margin = margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let blow = [f1.blow_up(), f2.blow_up()].into_iter().flatten().fold(f64::INFINITY, f64::min);
    if blow.is_finite() {
        return Err(CongruenceError::BlowUp { t: blow, margin: min_margin });
    }
    Ok(ComparisonReport { holds: min_margin >= -10.0 * tol, min_margin, margins })
}

/// Closed-form scalar comparison solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonKind {
    /// `d√c cot(√c(t−t1) + arccot(f/√c))`.
    Cot,
    /// `d√C tanh(√C(t−t1) + artanh(f/√C))`.
    Tanh,
    /// `d√|κ| coth(√|κ|(t−t1) + arcoth(f/(d√|κ|)))`; here `f` is the value
    /// at `t1` itself, not `f/d`.
    Coth,
}

fn arccot(x: f64) -> f64 {
    0.5 * PI - x.atan()
}

fn arcoth(x: f64) -> f64 {
    0.5 * ((x + 1.0) / (x - 1.0)).ln()
}

/// Evaluate a comparison solution. `strength` is `c`, `C` or `|κ|`.
pub fn comparison_solution(kind: ComparisonKind, strength: f64, f: f64, t1: f64, t: f64, d: usize) -> Result<f64> {
    if !(strength > 0.0) || d == 0 {
        return Err(CongruenceError::HypothesisViolated("comparison strength must be positive".into()));
    }
    let s = strength.sqrt();
    let df = d as f64;
    match kind {
        ComparisonKind::Cot => {
            let arg = s * (t - t1) + arccot(f / s);
            if !(arg > 0.0 && arg < PI) {
                return Err(CongruenceError::BranchViolation { kind, arg });
            }
            Ok(df * s / arg.tan())
        }
        ComparisonKind::Tanh => {
            let q = f / s;
            if !(q.abs() < 1.0) {
                return Err(CongruenceError::BranchViolation { kind, arg: q });
            }
            Ok(df * s * (s * (t - t1) + q.atanh()).tanh())
        }
        ComparisonKind::Coth => {
            let q = f / (df * s);
            if !(q.abs() > 1.0) {
                return Err(CongruenceError::BranchViolation { kind, arg: q });
            }
            let k = arcoth(q);
            let arg = s * (t - t1) + k;
            if !(arg * k > 0.0) {
                return Err(CongruenceError::BranchViolation { kind, arg });
            }
            Ok(df * s / arg.tanh())
        }
    }
}

/// Pole of the coth solution started at `t1 = 0`: `−arcoth(f/(d√|κ|))/√|κ|`.
pub fn coth_blow_up(kappa_abs: f64, f: f64, d: usize) -> f64 {
    let s = kappa_abs.sqrt();
    -arcoth(f / (d as f64 * s)) / s
}

/// `(1/d) diag(H_{c,f}, H_{−C,f}, …)`, the comparison tensor for the
/// source `diag(c, −C, …, −C)` with `B̃(t1) = f · id`.
pub fn comparison_tensor(c: f64, big_c: f64, f: f64, t1: f64, t: f64, d: usize) -> Result<DMatrix<f64>> {
    let h1 = comparison_solution(ComparisonKind::Cot, c, f, t1, t, d)?;
    let h2 = if d > 1 { comparison_solution(ComparisonKind::Tanh, big_c, f, t1, t, d)? } else { 0.0 };
    let df = d as f64;
    Ok(DMatrix::from_fn(d, d, |i, j| match (i == j, i) {
        (true, 0) => h1 / df,
        (true, _) => h2 / df,
        _ => 0.0,
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaBoundReport {
    pub d: usize,
    pub big_t: f64,
    pub r: f64,
    pub sup_theta_abs: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Expansion of the congruence with `[A](−T) = 0`, `[A](0) = id`, compared
/// with `4d/T` on `[−r, r]`.
pub fn theta_bound_experiment(source: &TidalSource, delta: f64, big_t: f64, r: f64, tol: f64) -> Result<ThetaBoundReport> {
    if !(r > 0.0 && r < 0.5 * big_t) {
        return Err(CongruenceError::HypothesisViolated(format!("need 0 < r < T/2, got r = {r}, T = {big_t}")));
    }
    let mut probe: Vec<f64> = (0..=400).map(|k| -big_t + 2.0 * big_t * k as f64 / 400.0).collect();
    probe.extend(source.breakpoints().iter().filter(|b| b.abs() < big_t));
    for t in probe {
        let tr = source.trace(t)?;
        if tr < -delta - ORDER_TOL {
            return Err(CongruenceError::HypothesisViolated(format!("tr R = {tr} < -delta at t = {t}")));
        }
    }
    let d = source.dim();
    let id = DMatrix::identity(d, d);
    let mut traj = integrate_jacobi(source, &DMatrix::zeros(d, d), &id, (-big_t, big_t), tol)?;
    if let Some(t) = traj.first_conjugate() {
        return Err(CongruenceError::ConjugateInWindow { t });
    }
    let a_mid = traj.a(0.0);
    let inv = a_mid.clone().try_inverse().ok_or(CongruenceError::ConjugateInWindow { t: 0.0 })?;
    traj.right_multiply(&inv);
    let mut ts: Vec<f64> = (0..=400).map(|k| -r + 2.0 * r * k as f64 / 400.0).collect();
    ts.extend(traj.times().iter().filter(|t| t.abs() <= r));
    let mut sup = 0.0f64;
    for t in ts {
        let th = traj.theta(t).ok_or(CongruenceError::ConjugateInWindow { t })?;
        sup = sup.max(th.abs());
    }
    let bound = 4.0 * d as f64 / big_t;
    Ok(ThetaBoundReport { d, big_t, r, sup_theta_abs: sup, bound, margin: bound - sup, pass: sup <= bound })
}

/// `diag(c+η, −C+η, …)` on `[−r, r]` and `(−δ/d)·id` outside.
pub fn worst_case_source(c: f64, big_c: f64, r: f64, d: usize, delta: f64) -> TidalSource {
    let outer = DMatrix::identity(d, d) * (-delta / d as f64);
    let inner = DMatrix::from_fn(d, d, |i, j| match (i == j, i) {
        (true, 0) => c + WINDOW_MARGIN,
        (true, _) => -big_c + WINDOW_MARGIN,
        _ => 0.0,
    });
    TidalSource::piecewise(vec![-r, r], vec![outer.clone(), inner, outer]).expect("diagonal pieces are symmetric")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRow {
    pub delta: f64,
    #[serde(rename = "T")]
    pub big_t: f64,
    pub conj1: Option<f64>,
    pub conj2: Option<f64>,
    pub status: String,
}

/// For each `(δ, T)`, start the worst-case congruence at `−T` with
/// `A(−T) = 0` and record whether a second conjugate point follows in
/// `(−T, T]`.
pub fn conjugate_window_experiment(
    c: f64,
    big_c: f64,
    r: f64,
    d: usize,
    deltas: &[f64],
    ts: &[f64],
    tol: f64,
) -> Result<Vec<WindowRow>> {
    if !(c > 0.0 && big_c > 0.0 && d > 0) {
        return Err(CongruenceError::HypothesisViolated("need c > 0, C > 0, d > 0".into()));
    }
    let limit = PI / (4.0 * c.sqrt());
    if !(r > 0.0 && r < limit) {
        return Err(CongruenceError::HypothesisViolated(format!("need 0 < r < pi/(4 sqrt c) = {limit}, got {r}")));
    }
    let grid: Vec<(f64, f64)> = deltas.iter().flat_map(|&dl| ts.iter().map(move |&t| (dl, t))).collect();
    grid.par_iter()
        .map(|&(delta, big_t)| {
            let src = worst_case_source(c, big_c, r, d, delta);
            let id = DMatrix::identity(d, d);
            let traj = integrate_jacobi(&src, &DMatrix::zeros(d, d), &id, (-big_t, big_t), tol)?;
            let conj = traj.first_conjugate();
            Ok(WindowRow {
                delta,
                big_t,
                conj1: conj.map(|_| -big_t),
                conj2: conj,
                status: if conj.is_some() { "pair" } else { "none" }.to_string(),
            })
        })
        .collect()
}

/// Smallest `T` with a conjugate pair among rows for `delta`.
pub fn smallest_pair_window(rows: &[WindowRow], delta: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.delta == delta && r.conj2.is_some())
        .map(|r| r.big_t)
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.min(t))))
}
