//! Causal structure of 1+1-dimensional charts, computed by integrating null
//! and timelike geodesics.
//!
//! The coordinate `x⁰` must be a time function (`g^{00} < 0`), so causal
//! curves are graphs over `x⁰` and `J⁺(p)` at time `t` is the interval
//! between the two null boundary curves. A periodic space axis is handled
//! on the universal cover, lifting targets by up to `MAX_WINDING` periods.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geodesic::{integrate_geodesic, GeodesicError, GeodesicOptions, GeodesicPath, StopReason};
use crate::metric::{MetricError, MetricField, Region};
use crate::mollify::{self, cone_adjusted, smooth_metric, ConeShift, MollifierKernel, MollifyError};
use crate::quadrature;

/// Points closer than this to a boundary curve count as null-related.
pub const RELATE_TOL: f64 = 1e-8;
/// Bisection stops once the launch-angle bracket is this narrow.
pub const ANGLE_RESOLUTION: f64 = 1e-10;
/// Launch angles sampled before bracketing.
pub const SHOOTING_GRID: usize = 65;
/// Lifts `q + kP` with `|k|` up to this are tried on periodic charts.
pub const MAX_WINDING: i32 = 3;
/// Relative slack on the sampled cone-narrowing amount.
pub const NARROWING_SLACK: f64 = 0.5;

const CUT_GRID: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CausalError {
    #[error("causal2d needs a 2-dimensional metric, got {0}")]
    NotTwoDimensional(usize),
    #[error("x0 is not a time function at {coords:?}")]
    NotTimeOriented { coords: Vec<f64> },
    #[error("boundary stops at t = {reached} before the target time {needed}")]
    Unreachable { needed: f64, reached: f64 },
    #[error("no geodesic from {p:?} hits {q:?} within the angle resolution")]
    ShootingFailed { p: Vec<f64>, q: Vec<f64> },
    #[error("vector is not future timelike")]
    NotTimelike,
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Mollify(#[from] MollifyError),
}

pub type Result<T> = std::result::Result<T, CausalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundarySide {
    Left,
    Right,
}

/// `∂J⁺(p)` in a 1+1 chart: the two future null geodesics from `p`,
/// parametrised so that `ẋ⁰(0) = 1`.
#[derive(Debug, Clone)]
pub struct ConeBoundary {
    base: Vec<f64>,
    left: GeodesicPath,
    right: GeodesicPath,
    t_max: f64,
}

impl ConeBoundary {
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn path(&self, side: BoundarySide) -> &GeodesicPath {
        match side {
            BoundarySide::Left => &self.left,
            BoundarySide::Right => &self.right,
        }
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Coordinate time up to which `side` is defined.
    pub fn reach(&self, side: BoundarySide) -> f64 {
        let p = self.path(side);
        p.position(p.t_max())[0]
    }

    /// Spatial coordinate of `side` at coordinate time `t`.
    pub fn x_at(&self, side: BoundarySide, t: f64) -> Option<f64> {
        x_at_time(self.path(side), t)
    }

    /// Largest `|g(ẋ, ẋ)|` over `k` samples of both curves.
    pub fn null_defect(&self, k: usize) -> f64 {
        [&self.left, &self.right]
            .iter()
            .flat_map(|p| p.sample_times(k).into_iter().map(move |t| p.norm_drift(t).abs()))
            .fold(0.0, f64::max)
    }
}

fn x_at_time(path: &GeodesicPath, t: f64) -> Option<f64> {
    let (mut lo, mut hi) = (path.t_min(), path.t_max());
    let t0 = path.position(lo)[0];
    let t1 = path.position(hi)[0];
    let tol = 1e-14 * t.abs().max(1.0);
    if t < t0 - tol || t > t1 + tol {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if path.position(mid)[0] < t {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    Some(path.position(0.5 * (lo + hi))[1])
}

fn check_2d(metric: &MetricField) -> Result<()> {
    if metric.dim() != 2 {
        return Err(CausalError::NotTwoDimensional(metric.dim()));
    }
    Ok(())
}

fn check_time_function(metric: &MetricField, x: &[f64]) -> Result<()> {
    metric.check_point(x)?;
    let inv = metric.g(x).try_inverse().ok_or(MetricError::DegenerateMetric { coords: x.to_vec() })?;
    if !(inv[(0, 0)] < 0.0) {
        return Err(CausalError::NotTimeOriented { coords: x.to_vec() });
    }
    Ok(())
}

/// Distance to the bounded chart walls, shrunk by a small pad.
fn chart_room(metric: &MetricField) -> impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static {
    let chart = metric.chart().clone();
    let pad = 1e-9 * chart.scale();
    move |x: &[f64], _v: &[f64]| {
        let mut m = f64::INFINITY;
        for i in 0..chart.dim() {
            if chart.periods[i].is_none() {
                m = m.min(x[i] - chart.lower[i]).min(chart.upper[i] - x[i]);
            }
        }
        m - pad
    }
}

/// Geodesic from `x0` stopped at coordinate time `t_stop` or just inside
/// the chart walls, whichever comes first.
fn until_time(metric: &MetricField, x0: &[f64], v0: &[f64], t_stop: f64, lambda_max: f64, tol: f64) -> Result<GeodesicPath> {
    let room = chart_room(metric);
    let opts = GeodesicOptions::with_tol(tol).stop_when(move |x, v| room(x, v).min(t_stop - x[0]));
    Ok(integrate_geodesic(metric, x0, v0, (0.0, lambda_max), &opts)?)
}

/// Coordinate slopes `dx¹/dx⁰` of the two null directions, left first.
fn null_slopes(g: &DMatrix<f64>) -> Option<(f64, f64)> {
    let (a, b, c) = (g[(1, 1)], g[(0, 1)], g[(0, 0)]);
    if !(a > 0.0) {
        return None;
    }
    let disc = b * b - a * c;
    if !(disc > 0.0) {
        return None;
    }
    let r = disc.sqrt();
    Some(((-b - r) / a, (-b + r) / a))
}

fn lambda_budget(dt: f64) -> f64 {
    1e3 * dt.abs().max(1.0)
}

pub fn future_boundary(metric: &MetricField, p: &[f64], t_max: f64, tol: f64) -> Result<ConeBoundary> {
    check_2d(metric)?;
    check_time_function(metric, p)?;
    if !(t_max > 0.0) {
        return Err(CausalError::HypothesisViolated("t_max must be positive".into()));
    }
    let (sl, sr) = null_slopes(&metric.g(p)).ok_or(CausalError::NotTimeOriented { coords: p.to_vec() })?;
    let stop = p[0] + t_max;
    let left = until_time(metric, p, &[1.0, sl], stop, lambda_budget(t_max), tol)?;
    let right = until_time(metric, p, &[1.0, sr], stop, lambda_budget(t_max), tol)?;
    Ok(ConeBoundary { base: p.to_vec(), left, right, t_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    None,
    Causal,
    Chronological,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WitnessCurve {
    /// `q = p`.
    Constant,
    /// Along the null boundary curve on this side.
    Null(BoundarySide),
    /// Strictly inside the cone.
    Timelike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    pub winding: i32,
    pub curve: WitnessCurve,
    /// Smaller distance of the lifted target to the two boundary curves.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CausalVerdict {
    pub relation: Relation,
    pub witness: Option<Witness>,
}

impl CausalVerdict {
    pub fn is_chronological(&self) -> bool {
        self.relation == Relation::Chronological
    }

    /// `≤`, implied by `≪`.
    pub fn is_causal(&self) -> bool {
        self.relation >= Relation::Causal
    }
}

fn lifts(metric: &MetricField, q: &[f64]) -> Vec<(i32, f64)> {
    match metric.chart().periods[1] {
        Some(period) => (-MAX_WINDING..=MAX_WINDING).map(|k| (k, q[1] + k as f64 * period)).collect(),
        None => vec![(0, q[1])],
    }
}

/// Relations of `q` to `p` for every lift of `q`.
fn relate_lifts(metric: &MetricField, p: &[f64], q: &[f64], tol: f64) -> Result<Vec<(i32, f64, CausalVerdict)>> {
    check_2d(metric)?;
    check_time_function(metric, p)?;
    check_time_function(metric, q)?;
    let dt = q[0] - p[0];
    let all = lifts(metric, q);
    if dt.abs() <= RELATE_TOL {
        return Ok(all
            .into_iter()
            .map(|(k, x)| {
                let same = (x - p[1]).abs() <= RELATE_TOL;
                let v = if same {
                    CausalVerdict { relation: Relation::Causal, witness: Some(Witness { winding: k, curve: WitnessCurve::Constant, margin: 0.0 }) }
                } else {
                    CausalVerdict { relation: Relation::None, witness: None }
                };
                (k, x, v)
            })
            .collect());
    }
    if dt < 0.0 {
        return Ok(all.into_iter().map(|(k, x)| (k, x, CausalVerdict { relation: Relation::None, witness: None })).collect());
    }
    let cone = future_boundary(metric, p, dt, tol)?;
    let lower = metric.chart().lower[1];
    let upper = metric.chart().upper[1];
    let edge = |side: BoundarySide, wall: f64| -> Result<f64> {
        match cone.x_at(side, q[0]) {
            Some(x) => Ok(x),
            None => {
                let path = cone.path(side);
                let end = path.position(path.t_max());
                if chart_room(metric)(&end, &[]) < 1e-6 * metric.chart().scale() {
                    Ok(wall)
                } else {
                    Err(CausalError::Unreachable { needed: q[0], reached: end[0] })
                }
            }
        }
    };
    let xl = edge(BoundarySide::Left, lower)?;
    let xr = edge(BoundarySide::Right, upper)?;
    Ok(all
        .into_iter()
        .map(|(k, x)| {
            let (gl, gr) = (x - xl, xr - x);
            let margin = gl.min(gr);
            let v = if margin > RELATE_TOL {
                CausalVerdict { relation: Relation::Chronological, witness: Some(Witness { winding: k, curve: WitnessCurve::Timelike, margin }) }
            } else if margin >= -RELATE_TOL {
                let side = if gl <= gr { BoundarySide::Left } else { BoundarySide::Right };
                CausalVerdict { relation: Relation::Causal, witness: Some(Witness { winding: k, curve: WitnessCurve::Null(side), margin }) }
            } else {
                CausalVerdict { relation: Relation::None, witness: None }
            };
            (k, x, v)
        })
        .collect())
}

/// Position of `q` relative to `∂J⁺(p)`; on periodic charts the strongest
/// relation over the lifts of `q`.
pub fn relate(metric: &MetricField, p: &[f64], q: &[f64]) -> Result<CausalVerdict> {
    relate_with_tol(metric, p, q, 1e-12)
}

/// `relate` with an explicit geodesic tolerance.
pub fn relate_with_tol(metric: &MetricField, p: &[f64], q: &[f64], tol: f64) -> Result<CausalVerdict> {
    let all = relate_lifts(metric, p, q, tol)?;
    Ok(all
        .into_iter()
        .map(|t| t.2)
        .max_by(|a, b| {
            a.relation
                .cmp(&b.relation)
                .then_with(|| {
                    let ma = a.witness.map_or(f64::NEG_INFINITY, |w| w.margin);
                    let mb = b.witness.map_or(f64::NEG_INFINITY, |w| w.margin);
                    ma.total_cmp(&mb)
                })
        })
        .unwrap_or(CausalVerdict { relation: Relation::None, witness: None }))
}

/// Unit timelike launch at angle `a ∈ (−π/4, π/4)` in the orthonormal frame.
fn launch(basis: &[DVector<f64>], a: f64) -> DVector<f64> {
    let s = a.tan();
    (&basis[0] + &basis[1] * s) / (1.0 - s * s).sqrt()
}

/// `(x¹, τ)` where the geodesic launched at `a` reaches `x⁰ = t_q`.
fn shoot(metric: &MetricField, p: &[f64], basis: &[DVector<f64>], a: f64, t_q: f64, tol: f64) -> Option<(f64, f64)> {
    let v = launch(basis, a);
    let path = until_time(metric, p, v.as_slice(), t_q, lambda_budget(t_q - p[0]), tol).ok()?;
    if !matches!(path.stop_reason(), StopReason::Stopped { .. }) {
        return None;
    }
    let end = path.position(path.t_max());
    if (end[0] - t_q).abs() > 1e-9 * t_q.abs().max(1.0) {
        return None;
    }
    Some((end[1], path.t_max()))
}

/// Lorentzian distance `d(p, q)`: the largest proper time of a timelike
/// geodesic from `p` to (a lift of) `q`, and `0` unless `p ≪ q`.
pub fn time_separation(metric: &MetricField, p: &[f64], q: &[f64], tol: f64) -> Result<f64> {
    let related = relate_lifts(metric, p, q, tol)?;
    let targets: Vec<f64> = related.iter().filter(|r| r.2.is_chronological()).map(|r| r.1).collect();
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut basis = metric.orthonormal_basis(p)?;
    if basis[1][1] < 0.0 {
        basis[1] = -&basis[1];
    }
    let edge = std::f64::consts::FRAC_PI_4 * (1.0 - 1e-7);
    let angles: Vec<f64> = (0..SHOOTING_GRID).map(|i| edge * (2.0 * i as f64 / (SHOOTING_GRID - 1) as f64 - 1.0)).collect();
    let shots: Vec<Option<(f64, f64)>> = angles.par_iter().map(|&a| shoot(metric, p, &basis, a, q[0], tol)).collect();
    let mut best: Option<f64> = None;
    for &target in &targets {
        for i in 0..angles.len() {
            let Some((x0, tau0)) = shots[i] else { continue };
            if x0 == target {
                best = Some(best.map_or(tau0, |b| b.max(tau0)));
                continue;
            }
            let Some(Some((x1, _))) = shots.get(i + 1) else { continue };
            if (x0 - target).signum() == (x1 - target).signum() || *x1 == target {
                continue;
            }
            let (mut lo, mut hi) = (angles[i], angles[i + 1]);
            let mut f_lo = x0 - target;
            let mut tau = tau0;
            while hi - lo > ANGLE_RESOLUTION {
                let mid = 0.5 * (lo + hi);
                let Some((xm, tm)) = shoot(metric, p, &basis, mid, q[0], tol) else { break };
                tau = tm;
                let fm = xm - target;
                if fm == 0.0 {
                    break;
                }
                if fm.signum() == f_lo.signum() {
                    lo = mid;
                    f_lo = fm;
                } else {
                    hi = mid;
                }
            }
            best = Some(best.map_or(tau, |b| b.max(tau)));
        }
    }
    best.ok_or_else(|| CausalError::ShootingFailed { p: p.to_vec(), q: q.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CutValue {
    At(f64),
    /// No cut up to the searched parameter.
    AtLeast(f64),
}

impl CutValue {
    pub fn value(self) -> Option<f64> {
        match self {
            CutValue::At(s) => Some(s),
            CutValue::AtLeast(_) => None,
        }
    }
}

/// Timelike cut function `s(v) = sup{t : L(γ_v|[0,t]) = d(γ(0), γ(t))}`,
/// searched over affine parameters up to `t_max`. Equality is tested with
/// absolute tolerance `tol`.
pub fn cut_function(metric: &MetricField, p: &[f64], v: &[f64], t_max: f64, tol: f64) -> Result<CutValue> {
    check_2d(metric)?;
    check_time_function(metric, p)?;
    let vv = DVector::from_row_slice(v);
    if !(metric.inner(p, &vv, &vv) < 0.0) || !metric.is_future_directed(p, &vv) {
        return Err(CausalError::NotTimelike);
    }
    let room = chart_room(metric);
    let opts = GeodesicOptions::with_tol(1e-12).stop_when(room);
    let path = integrate_geodesic(metric, p, v, (0.0, t_max), &opts)?;
    let reach = path.t_max();
    let length = |t: f64| {
        quadrature::adaptive(
            |s| {
                let (x, u) = path.state(s);
                (-metric.inner(&x, &u, &u)).max(0.0).sqrt()
            },
            0.0,
            t,
            1e-13,
        )
    };
    let gap = |t: f64| -> Result<f64> {
        let q = path.position(t);
        Ok(time_separation(metric, p, &q, 1e-12)? - length(t))
    };
    let grid: Vec<f64> = (1..=CUT_GRID).map(|j| reach * j as f64 / CUT_GRID as f64).collect();
    let mut prev = 0.0;
    for &t in &grid {
        if gap(t)? > tol {
            let (mut lo, mut hi) = (prev, t);
            while hi - lo > 1e-3 * tol.max(1e-12) * reach.max(1.0) && hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                if gap(mid)? > tol {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(CutValue::At(0.5 * (lo + hi)));
        }
        prev = t;
    }
    Ok(CutValue::AtLeast(reach))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DconvRow {
    pub eps: f64,
    pub d_eps: f64,
    pub d_exact: f64,
    pub gap: f64,
    /// Amount by which `g_00` of the mollified metric was scaled down.
    pub narrowing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DconvReport {
    pub rows: Vec<DconvRow>,
    /// `d_ε ≤ d + tol` for every row.
    pub below_exact: bool,
    /// `|d_ε − d|` nonincreasing down the ladder.
    pub monotone: bool,
}

/// Smallest `a` with the cone of `e` (time–time entry scaled by `1 − a`)
/// inside the cone of `g`.
fn narrowing_needed(g: &DMatrix<f64>, e: &DMatrix<f64>) -> Option<f64> {
    let (gl, gr) = null_slopes(g)?;
    let inside = |a: f64| {
        let mut m = e.clone();
        m[(0, 0)] *= 1.0 - a;
        null_slopes(&m).is_some_and(|(l, r)| l >= gl && r <= gr)
    };
    if inside(0.0) {
        return Some(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0 - 1e-12);
    if !inside(hi) {
        return None;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Cone-narrowing amount making `smooth ≺ metric` on a grid of `region`.
pub fn narrowing_amount(metric: &MetricField, smooth: &MetricField, region: &Region, per_axis: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in region.grid(per_axis) {
        let a = narrowing_needed(&metric.g(&x), &smooth.g(&x)).ok_or(CausalError::NotTimeOriented { coords: x.clone() })?;
        worst = worst.max(a);
    }
    Ok(worst * (1.0 + NARROWING_SLACK))
}

/// `d_ε(p, q)` for the cone-narrowed mollified metric `ǧ_ε` across a ladder
/// of `ε`, against the exact `d(p, q)`. The kernel acts on `kernel_axes`;
/// pass both axes unless the metric is independent of one of them.
pub fn dconv_experiment(
    metric: &MetricField,
    p: &[f64],
    q: &[f64],
    eps_ladder: &[f64],
    kernel_axes: &[usize],
    tol: f64,
) -> Result<DconvReport> {
    mollify::check_ladder(eps_ladder)?;
    if !relate_with_tol(metric, p, q, tol)?.is_chronological() {
        return Err(CausalError::HypothesisViolated("dconv needs p << q".into()));
    }
    let d = time_separation(metric, p, q, tol)?;
    let margin = 0.05 * (q[0] - p[0]).abs().max(1e-3);
    let region = Region::new(
        vec![p[0].min(q[0]) - margin, p[1].min(q[1]) - margin],
        vec![p[0].max(q[0]) + margin, p[1].max(q[1]) + margin],
    );
    let base = MollifierKernel::on_axes(2, kernel_axes.to_vec(), eps_ladder[0], mollify::DEFAULT_NODES)?;
    let rows: Vec<Result<DconvRow>> = eps_ladder
        .par_iter()
        .map(|&eps| {
            let kernel = base.with_epsilon(eps)?;
            let smooth = smooth_metric(metric, &kernel, &region)?;
            let a = narrowing_amount(metric, &smooth, &region, 41)?;
            let narrowed = cone_adjusted(&smooth, a, ConeShift::Narrow);
            let d_eps = time_separation(&narrowed, p, q, tol)?;
            Ok(DconvRow { eps, d_eps, d_exact: d, gap: (d_eps - d).abs(), narrowing: a })
        })
        .collect();
    let rows: Vec<DconvRow> = rows.into_iter().collect::<Result<_>>()?;
    let below_exact = rows.iter().all(|r| r.d_eps <= r.d_exact + tol.max(1e-9));
    let monotone = rows.windows(2).all(|w| w[1].gap <= w[0].gap + 1e-12);
    Ok(DconvReport { rows, below_exact, monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushUpReport {
    pub tested: usize,
    pub held: usize,
    /// Triples `(p, q, r)` with `p ≤ q ≪ r` but not `p ≪ r`.
    pub failures: Vec<[Vec<f64>; 3]>,
}

impl PushUpReport {
    pub fn all_hold(&self) -> bool {
        self.held == self.tested
    }
}

/// Draw `q` in `J⁺(p)` (on the null boundary half of the time) and `r` in
/// `I⁺(q)`, then test `p ≪ r`.
pub fn push_up_check(metric: &MetricField, p_region: &Region, step: f64, n: usize, seed: u64) -> Result<PushUpReport> {
    check_2d(metric)?;
    let outcomes: Vec<Result<Option<[Vec<f64>; 3]>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let p = p_region.sample(2, rng.random())[1].clone();
            let dt = step * rng.random_range(0.1..1.0);
            let cone = future_boundary(metric, &p, dt, 1e-12)?;
            let t = p[0] + dt;
            let side = if rng.random_bool(0.5) { BoundarySide::Left } else { BoundarySide::Right };
            let xl = cone.x_at(BoundarySide::Left, t).ok_or(CausalError::Unreachable { needed: t, reached: cone.reach(BoundarySide::Left) })?;
            let xr = cone.x_at(BoundarySide::Right, t).ok_or(CausalError::Unreachable { needed: t, reached: cone.reach(BoundarySide::Right) })?;
            let qx = if rng.random_bool(0.5) {
                if side == BoundarySide::Left { xl } else { xr }
            } else {
                xl + (xr - xl) * rng.random_range(0.0..1.0)
            };
            let q = vec![t, qx];
            let dt2 = step * rng.random_range(0.1..1.0);
            let cone2 = future_boundary(metric, &q, dt2, 1e-12)?;
            let t2 = q[0] + dt2;
            let (yl, yr) = (cone2.x_at(BoundarySide::Left, t2), cone2.x_at(BoundarySide::Right, t2));
            let (Some(yl), Some(yr)) = (yl, yr) else {
                return Err(CausalError::Unreachable { needed: t2, reached: cone2.reach(BoundarySide::Left) });
            };
            let r = vec![t2, yl + (yr - yl) * rng.random_range(0.05..0.95)];
            if !relate(metric, &q, &r)?.is_chronological() {
                return Ok(None);
            }
            if relate(metric, &p, &r)?.is_chronological() {
                Ok(None)
            } else {
                Ok(Some([p, q, r]))
            }
        })
        .collect();
    let mut failures = Vec::new();
    for o in outcomes {
        if let Some(f) = o? {
            failures.push(f);
        }
    }
    Ok(PushUpReport { tested: n, held: n - failures.len(), failures })
}

/// `true` if two sampled points of the boundary are chronologically related.
pub fn boundary_has_timelike_pair(metric: &MetricField, cone: &ConeBoundary, pairs: usize, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs)
        .map(|_| {
            let pick = |rng: &mut ChaCha8Rng| {
                let side = if rng.random_bool(0.5) { BoundarySide::Left } else { BoundarySide::Right };
                let path = cone.path(side);
                path.position(path.t_min() + (path.t_max() - path.t_min()) * rng.random_range(0.0..1.0))
            };
            let a = pick(&mut rng);
            let b = pick(&mut rng);
            if a[0] <= b[0] { (a, b) } else { (b, a) }
        })
        .collect();
    let hits: Vec<Result<bool>> = draws.par_iter().map(|(a, b)| Ok(relate(metric, a, b)?.is_chronological())).collect();
    for h in hits {
        if h? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Proper distance `∫ √g_xx dx` along a static slice, used by tests and by
/// the dconv oracle for metrics `−dt² + g_xx(x) dx²`.
pub fn static_spatial_length(metric: &MetricField, t: f64, x0: f64, x1: f64) -> f64 {
    let (a, b) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
    let mut cuts = vec![a];
    if metric.interface_value(&[t, 0.0]).is_some() && a < 0.0 && b > 0.0 {
        cuts.push(0.0);
    }
    cuts.push(b);
    cuts.windows(2)
        .map(|w| quadrature::adaptive(|x| metric.g(&[t, x])[(1, 1)].sqrt(), w[0], w[1], 1e-14))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::catalog::{self, MatchedProfile};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use std::f64::consts::PI;

    fn mink() -> MetricField {
        catalog::minkowski(2)
    }

    #[test]
    fn minkowski_boundary_is_the_light_cone() {
        let cone = future_boundary(&mink(), &[0.0, 0.0], 3.0, 1e-12).unwrap();
        let mut dev = 0.0f64;
        for side in [BoundarySide::Left, BoundarySide::Right] {
            let p = cone.path(side);
            for t in p.sample_times(50) {
                let x = p.position(t);
                dev = dev.max((x[0] - x[1].abs()).abs());
            }
        }
        assert!(dev < 1e-9);
        assert!((cone.reach(BoundarySide::Right) - 3.0).abs() < 1e-9);
        assert!(cone.null_defect(20) < 1e-12);
    }

    #[test]
    fn einstein_cylinder_boundaries_meet_at_pi() {
        let cone = future_boundary(&catalog::einstein_cylinder(), &[0.0, 0.0], 4.0, 1e-12).unwrap();
        let l = cone.x_at(BoundarySide::Left, PI).unwrap();
        let r = cone.x_at(BoundarySide::Right, PI).unwrap();
        assert!((r - l - 2.0 * PI).abs() < 1e-9);
        let l1 = cone.x_at(BoundarySide::Left, 1.0).unwrap();
        let r1 = cone.x_at(BoundarySide::Right, 1.0).unwrap();
        assert!(r1 - l1 < 2.0 * PI);
    }

    #[test]
    fn matched_boundary_crosses_interface_with_continuous_velocity() {
        let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
        let cone = future_boundary(&m, &[0.0, -0.3], 0.6, 1e-12).unwrap();
        let right = cone.path(BoundarySide::Right);
        assert_eq!(right.events().len(), 1);
        let te = right.events()[0];
        let jump = (right.velocity(te - 1e-9) - right.velocity(te + 1e-9)).norm();
        assert!(jump < 1e-6);
        // dx/dt = 1/√g_xx: elapsed time equals ∫ √g_xx dx.
        let x_end = cone.x_at(BoundarySide::Right, 0.6).unwrap();
        assert!((static_spatial_length(&m, 0.0, -0.3, x_end) - 0.6).abs() < 1e-9);
    }

    #[test]
    fn minkowski_relations() {
        let m = mink();
        assert_eq!(relate(&m, &[0.0, 0.0], &[2.0, 1.0]).unwrap().relation, Relation::Chronological);
        let v = relate(&m, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(v.relation, Relation::Causal);
        assert_eq!(v.witness.unwrap().curve, WitnessCurve::Null(BoundarySide::Right));
        assert_eq!(relate(&m, &[0.0, 0.0], &[1.0, 2.0]).unwrap().relation, Relation::None);
        assert_eq!(relate(&m, &[0.0, 0.0], &[-1.0, 0.0]).unwrap().relation, Relation::None);
        assert_eq!(relate(&m, &[0.5, 0.5], &[0.5, 0.5]).unwrap().relation, Relation::Causal);
        assert!(matches!(relate(&catalog::minkowski(3), &[0.0; 3], &[1.0; 3]), Err(CausalError::NotTwoDimensional(3))));
    }

    #[test]
    fn minkowski_time_separation() {
        let m = mink();
        assert!((time_separation(&m, &[0.0, 0.0], &[2.0, 0.0], 1e-12).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(time_separation(&m, &[0.0, 0.0], &[1.0, 2.0], 1e-12).unwrap(), 0.0);
        let d = time_separation(&m, &[0.0, 0.0], &[2.0, 1.3], 1e-12).unwrap();
        assert!((d - (4.0f64 - 1.69).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn einstein_cylinder_wrap_is_null() {
        let m = catalog::einstein_cylinder();
        let v = relate(&m, &[0.0, 0.0], &[PI, PI]).unwrap();
        assert_eq!(v.relation, Relation::Causal);
        assert_eq!(time_separation(&m, &[0.0, 0.0], &[PI, PI], 1e-12).unwrap(), 0.0);
        // Past t = π every point is reached by some winding.
        let v = relate(&m, &[0.0, 0.0], &[3.5, PI]).unwrap();
        assert!(v.is_chronological());
        let d = time_separation(&m, &[0.0, 0.0], &[7.0, 1.0], 1e-12).unwrap();
        assert!((d - (49.0f64 - 1.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn push_up_holds_on_sampled_triples() {
        let region = Region::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let rep = push_up_check(&mink(), &region, 1.0, 200, 11).unwrap();
        assert!(rep.all_hold(), "{:?}", rep.failures);
        let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
        let region = Region::new(vec![0.0, -0.3], vec![0.2, 0.3]);
        let rep = push_up_check(&m, &region, 0.2, 60, 3).unwrap();
        assert!(rep.all_hold());
    }

    #[test]
    fn boundary_is_achronal() {
        let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
        let cone = future_boundary(&m, &[0.0, 0.0], 0.6, 1e-12).unwrap();
        assert!(!boundary_has_timelike_pair(&m, &cone, 200, 5).unwrap());
        let cone = future_boundary(&mink(), &[0.0, 0.0], 2.0, 1e-12).unwrap();
        assert!(!boundary_has_timelike_pair(&mink(), &cone, 200, 6).unwrap());
    }

    #[test]
    fn matched_time_separation_matches_proper_distance_oracle() {
        // −dt² + h(x)dx² is flat: d = √(Δt² − L²) with L = ∫√h dx.
        let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
        let (p, q) = ([0.0, -0.4], [1.5, 0.5]);
        let l = static_spatial_length(&m, 0.0, p[1], q[1]);
        let d = time_separation(&m, &p, &q, 1e-12).unwrap();
        assert!((d - (1.5f64 * 1.5 - l * l).sqrt()).abs() < 1e-8, "{d}");
    }

    #[test]
    fn cut_function_on_minkowski_and_cylinder() {
        let s = cut_function(&mink(), &[0.0, 0.0], &[1.2, 0.3], 5.0, 1e-8).unwrap();
        assert_eq!(s, CutValue::AtLeast(5.0));
        let cyl = catalog::einstein_cylinder();
        let s = cut_function(&cyl, &[0.0, 0.0], &[1.0, 0.0], 8.0, 1e-8).unwrap();
        assert!(s.value().is_none());
    }

    #[test]
    fn boosted_cylinder_observer_is_cut_after_half_a_wrap() {
        // γ(s) = s(cosh χ, sinh χ): the winding −1 lift beats the axis once
        // x = π, i.e. at s = π / sinh χ.
        let cyl = catalog::einstein_cylinder();
        let chi: f64 = 0.8;
        let v = [chi.cosh(), chi.sinh()];
        let s = cut_function(&cyl, &[0.0, 0.0], &v, 8.0, 1e-9).unwrap().value().unwrap();
        assert!((s - PI / chi.sinh()).abs() < 1e-4, "{s}");
        let lam = 2.0;
        let v2 = [lam * v[0], lam * v[1]];
        let s2 = cut_function(&cyl, &[0.0, 0.0], &v2, 4.0, 1e-9).unwrap().value().unwrap();
        assert!((s2 - s / lam).abs() < 1e-4);
        assert!(matches!(cut_function(&cyl, &[0.0, 0.0], &[1.0, 1.0], 1.0, 1e-9), Err(CausalError::NotTimelike)));
    }

    #[test]
    fn dconv_constant_metric_is_exact() {
        let rep = dconv_experiment(&mink(), &[0.0, 0.0], &[1.0, 0.3], &[0.2, 0.1], &[0, 1], 1e-12).unwrap();
        for r in &rep.rows {
            assert_eq!(r.narrowing, 0.0);
            assert!(r.gap < 1e-9);
        }
        assert!(rep.below_exact);
    }

    #[test]
    fn dconv_matched_pair_converges() {
        let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
        let (p, q) = ([0.0, -0.3], [1.0, 0.3]);
        let rep = dconv_experiment(&m, &p, &q, &mollify::DEFAULT_LADDER, &[1], 1e-12).unwrap();
        assert!(rep.below_exact, "{:?}", rep.rows);
        assert!(rep.monotone, "{:?}", rep.rows);
        assert!(rep.rows.last().unwrap().gap < 1e-3);
        // the narrowed mollified metric is again flat in 1+1
        let l = static_spatial_length(&m, 0.0, p[1], q[1]);
        assert!((rep.rows[0].d_exact - (1.0 - l * l).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn narrowing_is_exact_for_identical_cones() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert_eq!(narrowing_needed(&g, &g), Some(0.0));
        let wide = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.81]);
        let a = narrowing_needed(&g, &wide).unwrap();
        assert!((a - 0.19).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn reverse_triangle_on_chains(t1 in 0.2f64..1.0, t2 in 0.2f64..1.0, a in -0.9f64..0.9, b in -0.9f64..0.9) {
            let m = catalog::matched_c11(1.0, MatchedProfile::Linear);
            let p = [0.0, -0.2];
            let q = [t1, p[1] + 0.4 * a * t1];
            let r = [t1 + t2, q[1] + 0.4 * b * t2];
            let d = |x: &[f64], y: &[f64]| time_separation(&m, x, y, 1e-12).unwrap();
            prop_assert!(d(&p, &r) >= d(&p, &q) + d(&q, &r) - 1e-9);
        }

        #[test]
        fn unrelated_points_have_zero_separation(t in -1.0f64..1.0, x in -3.0f64..3.0) {
            let m = mink();
            let q = [t, x];
            if relate(&m, &[0.0, 0.0], &q).unwrap().relation == Relation::None {
                prop_assert!(time_separation(&m, &[0.0, 0.0], &q, 1e-12).unwrap() == 0.0);
            }
        }
    }
}
