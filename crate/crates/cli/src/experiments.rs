//! Binding table from experiment ids to library operations. Each experiment
//! reads its own typed parameter block and returns a table plus named checks.

use std::fmt::Display;

use lorentzlab::causal2d::{self, BoundarySide, CutValue};
use lorentzlab::congruence::{self, CongruenceError, TidalSource};
use lorentzlab::geodesic::{integrate_geodesic, normal_frame, GeodesicOptions};
use lorentzlab::metric::catalog;
use lorentzlab::mollify::{self, DEFAULT_LADDER};
use lorentzlab::submanifold::{self, SubmanifoldPatch};
use lorentzlab::{MetricField, Region};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Scenario;
use crate::table::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentId {
    Geodesic,
    Smoothing,
    Friedrichs,
    ThetaBound,
    ConjugateWindow,
    RiccatiCompare,
    Focal,
    Genericity,
    TrappedPoint,
    Cone,
    Dconv,
    Cut,
    Jacobi,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 13] = [
        ExperimentId::Geodesic,
        ExperimentId::Smoothing,
        ExperimentId::Friedrichs,
        ExperimentId::ThetaBound,
        ExperimentId::ConjugateWindow,
        ExperimentId::RiccatiCompare,
        ExperimentId::Focal,
        ExperimentId::Genericity,
        ExperimentId::TrappedPoint,
        ExperimentId::Cone,
        ExperimentId::Dconv,
        ExperimentId::Cut,
        ExperimentId::Jacobi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Geodesic => "geodesic",
            ExperimentId::Smoothing => "smoothing",
            ExperimentId::Friedrichs => "friedrichs",
            ExperimentId::ThetaBound => "theta_bound",
            ExperimentId::ConjugateWindow => "conjugate_window",
            ExperimentId::RiccatiCompare => "riccati_compare",
            ExperimentId::Focal => "focal",
            ExperimentId::Genericity => "genericity",
            ExperimentId::TrappedPoint => "trapped_point",
            ExperimentId::Cone => "cone",
            ExperimentId::Dconv => "dconv",
            ExperimentId::Cut => "cut",
            ExperimentId::Jacobi => "jacobi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s)
    }

    /// Library operation the id is bound to.
    pub fn operation(self) -> &'static str {
        match self {
            ExperimentId::Geodesic => "geodesic::integrate_geodesic",
            ExperimentId::Smoothing => "mollify::smoothing_report",
            ExperimentId::Friedrichs => "mollify::friedrichs_residual",
            ExperimentId::ThetaBound => "congruence::theta_bound_experiment",
            ExperimentId::ConjugateWindow => "congruence::conjugate_window_experiment",
            ExperimentId::RiccatiCompare => "congruence::riccati_compare",
            ExperimentId::Focal => "submanifold::focal_sum_test",
            ExperimentId::Genericity => "submanifold::genericity_scan",
            ExperimentId::TrappedPoint => "submanifold::trapped_point_check",
            ExperimentId::Cone => "causal2d::future_boundary",
            ExperimentId::Dconv => "causal2d::dconv_experiment",
            ExperimentId::Cut => "causal2d::cut_function",
            ExperimentId::Jacobi => "congruence::integrate_jacobi",
        }
    }

    pub fn needs_metric(self) -> bool {
        !matches!(
            self,
            ExperimentId::Friedrichs
                | ExperimentId::ThetaBound
                | ExperimentId::ConjugateWindow
                | ExperimentId::RiccatiCompare
                | ExperimentId::Jacobi
        )
    }

    pub fn summary(self) -> &'static str {
        match self {
            ExperimentId::Geodesic => "integrate a geodesic and tabulate position, velocity and norm drift",
            ExperimentId::Smoothing => "C0/C1 errors and second-derivative bound of the mollified metric over an eps ladder",
            ExperimentId::Friedrichs => "commutator residual of mollification against a product a f b",
            ExperimentId::ThetaBound => "sup |theta| on [-r, r] against 4d/T for uniform negative sources",
            ExperimentId::ConjugateWindow => "worst-case source sweep: conjugate pairs inside [-T, T] and the smallest T",
            ExperimentId::RiccatiCompare => "seeded random ordered constant sources: Riccati comparison margins",
            ExperimentId::Focal => "convergence, focal sum test and first focal point of a slice surface",
            ExperimentId::Genericity => "search a geodesic for a tube where <R(V,X)X,V> > c > 0",
            ExperimentId::TrappedPoint => "convergence of the null slices through a point, per direction",
            ExperimentId::Cone => "future causal boundary of a point in 1+1 dimensions, push-up and time separation",
            ExperimentId::Dconv => "time separation of the narrowed mollified metric against the exact one",
            ExperimentId::Cut => "timelike cut function along a geodesic",
            ExperimentId::Jacobi => "conjugate points of a Jacobi tensor for a given tidal source",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    /// Bad parameters or metric spec; exit code 2.
    #[error("config: {0}")]
    Config(String),
    /// The library refused or failed; exit code 1.
    #[error("{0}")]
    Failed(String),
}

fn failed(e: impl Display) -> ExperimentError {
    ExperimentError::Failed(e.to_string())
}

fn config(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub checks: Vec<Check>,
    pub summary: Value,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn run(scn: &Scenario) -> Result<Outcome> {
    let metric = match (&scn.metric, scn.experiment.needs_metric()) {
        (Some(spec), _) => Some(catalog::build(spec).map_err(|e| config(format!("key `metric`: {e}")))?),
        (None, true) => return Err(config(format!("key `metric`: required by experiment `{}`", scn.experiment.as_str()))),
        (None, false) => None,
    };
    let m = || metric.as_ref().expect("checked above");
    match scn.experiment {
        ExperimentId::Geodesic => geodesic(m(), &params(scn)?),
        ExperimentId::Smoothing => smoothing(m(), &params(scn)?, scn.seed),
        ExperimentId::Friedrichs => friedrichs(&params(scn)?),
        ExperimentId::ThetaBound => theta_bound(&params(scn)?),
        ExperimentId::ConjugateWindow => conjugate_window(&params(scn)?),
        ExperimentId::RiccatiCompare => riccati(&params(scn)?, scn.seed),
        ExperimentId::Focal => focal(m(), &params(scn)?),
        ExperimentId::Genericity => genericity(m(), &params(scn)?, scn.seed),
        ExperimentId::TrappedPoint => trapped(m(), &params(scn)?),
        ExperimentId::Cone => cone(m(), &params(scn)?, scn.seed),
        ExperimentId::Dconv => dconv(m(), &params(scn)?),
        ExperimentId::Cut => cut(m(), &params(scn)?),
        ExperimentId::Jacobi => jacobi(&params(scn)?),
    }
}

fn params<T: serde::de::DeserializeOwned>(scn: &Scenario) -> Result<T> {
    scn.params().map_err(|e| config(e.to_string()))
}

fn need_len(key: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(config(format!("key `params.{key}`: expected {n} components, got {}", v.len())))
    }
}

fn need_2d(metric: &MetricField) -> Result<()> {
    if metric.dim() == 2 {
        Ok(())
    } else {
        Err(config(format!("key `metric`: a 1+1 metric is required, got dimension {}", metric.dim())))
    }
}

fn need_ladder(key: &str, eps: &[f64]) -> Result<()> {
    mollify::check_ladder(eps).map_err(|_| config(format!("key `params.{key}`: need a strictly decreasing list of positive values")))
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| crate::table::format_f64(*x)).collect::<Vec<_>>().join(";")
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Check {
    let err = (got - want).abs();
    Check::new(name, err <= tol, format!("got {got}, expected {want}, |diff| = {err:e}, tol {tol:e}"))
}

fn default_tol() -> f64 {
    1e-10
}

fn default_ladder() -> Vec<f64> {
    DEFAULT_LADDER.to_vec()
}

fn default_true() -> bool {
    true
}

/// Tidal source description shared by the congruence experiments.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// `c·id`.
    Scalar { c: f64 },
    Diagonal { values: Vec<f64> },
    Matrix { rows: Vec<Vec<f64>> },
}

impl SourceSpec {
    fn build(&self, d: usize) -> Result<TidalSource> {
        let m = match self {
            SourceSpec::Scalar { c } => return Ok(TidalSource::scalar(d, *c)),
            SourceSpec::Diagonal { values } => {
                need_len("source.values", values, d)?;
                DMatrix::from_diagonal(&dv(values))
            }
            SourceSpec::Matrix { rows } => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(config(format!("key `params.source.rows`: expected a {d}x{d} matrix")));
                }
                DMatrix::from_fn(d, d, |i, j| rows[i][j])
            }
        };
        TidalSource::constant(m).map_err(|e| config(format!("key `params.source`: {e}")))
    }
}

// geodesic

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicParams {
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub t_range: [f64; 2],
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Largest allowed `|g(v,v) − g(v0,v0)|` over the samples.
    #[serde(default = "default_drift")]
    pub max_drift: f64,
}

fn default_samples() -> usize {
    101
}

fn default_drift() -> f64 {
    1e-6
}

fn geodesic(metric: &MetricField, p: &GeodesicParams) -> Result<Outcome> {
    need_len("x0", &p.x0, metric.dim())?;
    need_len("v0", &p.v0, metric.dim())?;
    let opts = GeodesicOptions::with_tol(p.tol);
    let path = integrate_geodesic(metric, &p.x0, &p.v0, (p.t_range[0], p.t_range[1]), &opts).map_err(failed)?;
    let header = path.csv_header();
    let mut table = Table { columns: header, rows: Vec::new() };
    for row in path.table(p.samples.max(2)) {
        table.push(row.into_iter().map(Cell::from).collect());
    }
    let drift = path.sample_times(p.samples.max(2)).iter().map(|&t| path.norm_drift(t).abs()).fold(0.0, f64::max);
    let checks = vec![Check::new("norm_drift", drift <= p.max_drift, format!("max drift {drift:e}, allowed {:e}", p.max_drift))];
    let summary = json!({
        "causal_class": format!("{:?}", path.causal_class()),
        "stop_reason": format!("{:?}", path.stop_reason()),
        "events": path.events(),
        "max_norm_drift": drift,
    });
    Ok(Outcome { table, checks, summary })
}

// smoothing

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingParams {
    #[serde(default = "default_ladder")]
    pub eps: Vec<f64>,
    pub region_lower: Vec<f64>,
    pub region_upper: Vec<f64>,
    #[serde(default = "default_probes")]
    pub probes_per_axis: usize,
    #[serde(default = "default_dh_samples")]
    pub dh_samples: usize,
    /// Allowed range of `c0_error(ε/2) / c0_error(ε)`.
    #[serde(default)]
    pub c0_ratio: Option<[f64; 2]>,
    #[serde(default = "default_true")]
    pub c1_decreasing: bool,
    /// `d2_bound ≤ factor · kernel constant` on every row.
    #[serde(default)]
    pub d2_factor: Option<f64>,
}

fn default_probes() -> usize {
    21
}

fn default_dh_samples() -> usize {
    50
}

fn smoothing(metric: &MetricField, p: &SmoothingParams, seed: u64) -> Result<Outcome> {
    need_ladder("eps", &p.eps)?;
    need_len("region_lower", &p.region_lower, metric.dim())?;
    need_len("region_upper", &p.region_upper, metric.dim())?;
    let region = Region::new(p.region_lower.clone(), p.region_upper.clone());
    let rep = mollify::smoothing_report(metric, &p.eps, &region, p.probes_per_axis, p.dh_samples, seed).map_err(failed)?;
    let mut table = Table::new(&["eps", "c0_error", "c1_error", "d2_bound", "dh_value", "c0_ratio"]);
    let mut checks = Vec::new();
    for (i, r) in rep.rows.iter().enumerate() {
        let ratio = if i == 0 { None } else { Some(r.c0_error / rep.rows[i - 1].c0_error) };
        table.push(vec![r.eps.into(), r.c0_error.into(), r.c1_error.into(), r.d2_bound.into(), r.dh_value.into(), ratio.into()]);
        if let (Some(ratio), Some([lo, hi])) = (ratio, p.c0_ratio) {
            checks.push(Check::new("c0_ratio", ratio >= lo && ratio <= hi, format!("eps {}: ratio {ratio} in [{lo}, {hi}]", r.eps)));
        }
        if i > 0 && p.c1_decreasing {
            let prev = rep.rows[i - 1].c1_error;
            checks.push(Check::new("c1_decreasing", r.c1_error < prev, format!("eps {}: {} < {prev}", r.eps, r.c1_error)));
        }
        if let Some(f) = p.d2_factor {
            // The bound is attained with equality for x|x| data; allow rounding.
            let cap = f * rep.kernel_constant * (1.0 + 1e-12);
            checks.push(Check::new("d2_bound", r.d2_bound <= cap, format!("eps {}: {} <= {cap}", r.eps, r.d2_bound)));
        }
    }
    Ok(Outcome { table, checks, summary: json!({ "kernel_constant": rep.kernel_constant }) })
}

// friedrichs

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarName {
    Sign,
    Heaviside,
    Abs,
    Id,
    One,
    Cos,
    Sin,
}

impl ScalarName {
    fn eval(self, x: &[f64]) -> f64 {
        let s = x[0];
        match self {
            ScalarName::Sign => s.signum(),
            ScalarName::Heaviside => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ScalarName::Abs => s.abs(),
            ScalarName::Id => s,
            ScalarName::One => 1.0,
            ScalarName::Cos => s.cos(),
            ScalarName::Sin => s.sin(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FriedrichsParams {
    pub a: ScalarName,
    pub f: ScalarName,
    pub b: ScalarName,
    #[serde(default = "default_ladder")]
    pub eps: Vec<f64>,
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    #[serde(default = "default_region")]
    pub region: [f64; 2],
    #[serde(default = "default_fr_probes")]
    pub probes: usize,
    /// Require `final < ratio · initial`.
    #[serde(default)]
    pub final_ratio: Option<f64>,
}

fn default_domain() -> [f64; 2] {
    [-1.5, 1.5]
}

fn default_region() -> [f64; 2] {
    [-1.0, 1.0]
}

fn default_fr_probes() -> usize {
    401
}

fn friedrichs(p: &FriedrichsParams) -> Result<Outcome> {
    need_ladder("eps", &p.eps)?;
    let (a, f, b) = (p.a, p.f, p.b);
    let domain = Region::new(vec![p.domain[0]], vec![p.domain[1]]);
    let region = Region::new(vec![p.region[0]], vec![p.region[1]]);
    let res = mollify::friedrichs_residual(
        &|x: &[f64]| a.eval(x),
        &|x: &[f64]| f.eval(x),
        &|_, x: &[f64]| b.eval(x),
        &|x: &[f64]| b.eval(x),
        &p.eps,
        &domain,
        &region,
        p.probes,
    )
    .map_err(failed)?;
    let mut table = Table::new(&["eps", "residual", "ratio_to_first"]);
    for (e, r) in p.eps.iter().zip(&res) {
        table.push(vec![(*e).into(), (*r).into(), (r / res[0]).into()]);
    }
    let mut checks: Vec<Check> = res
        .windows(2)
        .zip(&p.eps[1..])
        .map(|(w, e)| Check::new("strictly_decreasing", w[1] < w[0], format!("eps {e}: {} < {}", w[1], w[0])))
        .collect();
    if let Some(q) = p.final_ratio {
        let ratio = res[res.len() - 1] / res[0];
        checks.push(Check::new("final_ratio", ratio < q, format!("final/initial = {ratio}, required < {q}")));
    }
    Ok(Outcome { table, checks, summary: json!({ "residuals": res }) })
}

// theta_bound

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaBoundParams {
    pub deltas: Vec<f64>,
    pub dims: Vec<usize>,
    pub big_ts: Vec<f64>,
    #[serde(default = "default_r_over_t")]
    pub r_over_t: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_r_over_t() -> f64 {
    0.25
}

fn theta_bound(p: &ThetaBoundParams) -> Result<Outcome> {
    if p.dims.contains(&0) {
        return Err(config("key `params.dims`: dimensions must be positive"));
    }
    let grid: Vec<(f64, usize, f64)> = p
        .deltas
        .iter()
        .flat_map(|&dl| p.dims.iter().flat_map(move |&d| p.big_ts.iter().map(move |&t| (dl, d, t))))
        .collect();
    let reports: Vec<_> = grid
        .par_iter()
        .map(|&(delta, d, big_t)| {
            let src = TidalSource::scalar(d, -delta / d as f64);
            congruence::theta_bound_experiment(&src, delta, big_t, p.r_over_t * big_t, p.tol)
        })
        .collect();
    let mut table = Table::new(&["delta", "d", "T", "r", "sup_theta", "bound", "margin", "pass"]);
    let mut checks = Vec::new();
    for (&(delta, d, big_t), rep) in grid.iter().zip(reports) {
        let rep = rep.map_err(failed)?;
        table.push(vec![
            delta.into(),
            d.into(),
            big_t.into(),
            rep.r.into(),
            rep.sup_theta_abs.into(),
            rep.bound.into(),
            rep.margin.into(),
            rep.pass.into(),
        ]);
        checks.push(Check::new(
            "theta_bound",
            rep.pass,
            format!("delta {delta}, d {d}, T {big_t}: sup {} <= {} (margin {})", rep.sup_theta_abs, rep.bound, rep.margin),
        ));
    }
    Ok(Outcome { table, checks, summary: json!({ "cases": grid.len() }) })
}

// conjugate_window

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowParams {
    pub c: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub r: f64,
    pub d: usize,
    pub deltas: Vec<f64>,
    pub ts: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Every δ must have a finite smallest window.
    #[serde(default = "default_true")]
    pub require_pair: bool,
}

fn conjugate_window(p: &WindowParams) -> Result<Outcome> {
    let rows = congruence::conjugate_window_experiment(p.c, p.big_c, p.r, p.d, &p.deltas, &p.ts, p.tol).map_err(failed)?;
    let mut table = Table::new(&["kind", "delta", "T", "conj1", "conj2", "status"]);
    for r in &rows {
        table.push(vec!["window".into(), r.delta.into(), r.big_t.into(), r.conj1.into(), r.conj2.into(), r.status.clone().into()]);
    }
    let mut checks = Vec::new();
    let mut stars = serde_json::Map::new();
    for &delta in &p.deltas {
        let star = congruence::smallest_pair_window(&rows, delta);
        table.push(vec![
            "t_star".into(),
            delta.into(),
            star.into(),
            Cell::Empty,
            Cell::Empty,
            if star.is_some() { "pair" } else { "none" }.into(),
        ]);
        stars.insert(crate::table::format_f64(delta), json!(star));
        if p.require_pair {
            checks.push(Check::new("t_star_finite", star.is_some(), format!("delta {delta}: T* = {star:?}")));
        }
    }
    Ok(Outcome { table, checks, summary: json!({ "t_star": stars }) })
}

// riccati_compare

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiParams {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    pub d: usize,
    #[serde(default = "default_one")]
    pub scale: f64,
    pub t_end: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_margin_floor")]
    pub margin_floor: f64,
}

fn default_pairs() -> usize {
    20
}

fn default_one() -> f64 {
    1.0
}

fn default_margin_floor() -> f64 {
    -1e-8
}

fn random_symmetric(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    (&m + m.transpose()) * (0.5 * scale)
}

/// Seeded ordered pair `S1 = S2 + M Mᵀ` and a symmetric initial `B`.
pub fn ordered_pair(seed: u64, index: usize, d: usize, scale: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(index as u64));
    let s2 = random_symmetric(&mut rng, d, scale);
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let s1 = &s2 + &m * m.transpose() * scale;
    let b = random_symmetric(&mut rng, d, 1.0);
    (s1, s2, b)
}

fn riccati(p: &RiccatiParams, seed: u64) -> Result<Outcome> {
    if p.d == 0 || !(p.t_end > 0.0) {
        return Err(config("key `params`: need d > 0 and t_end > 0"));
    }
    let results: Vec<_> = (0..p.pairs)
        .into_par_iter()
        .map(|i| {
            let (s1, s2, b) = ordered_pair(seed, i, p.d, p.scale);
            let src1 = TidalSource::constant(s1)?;
            let src2 = TidalSource::constant(s2)?;
            match congruence::riccati_compare(&src1, &src2, &b, 0.0, p.t_end, p.tol) {
                Ok(rep) => Ok((rep.min_margin, None)),
                Err(CongruenceError::BlowUp { t, margin }) => Ok((margin, Some(t))),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut table = Table::new(&["pair", "min_margin", "blow_up_t", "pass"]);
    let mut checks = Vec::new();
    let mut held = 0;
    for (i, r) in results.into_iter().enumerate() {
        let (margin, blow) = r.map_err(failed)?;
        let pass = margin >= p.margin_floor;
        held += pass as usize;
        table.push(vec![i.into(), margin.into(), blow.into(), pass.into()]);
        checks.push(Check::new("ordering", pass, format!("pair {i}: margin {margin:e} (floor {:e}), blow-up {blow:?}", p.margin_floor)));
    }
    Ok(Outcome { table, checks, summary: json!({ "pairs": p.pairs, "held": held }) })
}

// focal

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Sphere,
    Cylinder,
    Hyperplane,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NormalChoice {
    /// Future null normal with the largest convergence.
    Ingoing,
    Outgoing,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalParams {
    pub surface: Surface,
    #[serde(default = "default_one")]
    pub rho: f64,
    #[serde(default)]
    pub t0: f64,
    /// Patch parameters of the base point.
    pub s: Vec<f64>,
    pub normal: NormalChoice,
    pub b: f64,
    #[serde(default)]
    pub delta: f64,
    pub t_end: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub expect_convergence: Option<f64>,
    #[serde(default)]
    pub expect_focal_t: Option<f64>,
}

fn focal(metric: &MetricField, p: &FocalParams) -> Result<Outcome> {
    let patch = match p.surface {
        Surface::Sphere => SubmanifoldPatch::slice_sphere(metric.clone(), p.rho, p.t0),
        Surface::Cylinder => SubmanifoldPatch::slice_cylinder(metric.clone(), p.rho, p.t0),
        Surface::Hyperplane => SubmanifoldPatch::flat_slice(metric.clone(), p.t0, 10.0 * p.rho),
    }
    .map_err(|e| config(format!("key `params.surface`: {e}")))?;
    need_len("s", &p.s, patch.dim())?;
    let normals = patch.future_null_normals(&p.s).map_err(failed)?;
    let mut scored = Vec::new();
    for nu in normals {
        let k = patch.convergence(&p.s, &nu).map_err(failed)?;
        scored.push((k, nu));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (_, nu) = match p.normal {
        NormalChoice::Ingoing => scored.pop(),
        NormalChoice::Outgoing => scored.into_iter().next(),
    }
    .ok_or_else(|| failed("no future null normal"))?;
    let setup = submanifold::focal_setup(&patch, &p.s, &nu, p.t_end, p.tol).map_err(failed)?;
    let k = setup.convergence();
    let sum = if k > 0.0 { Some(submanifold::focal_sum_test(&setup, p.b, p.delta, p.tol).map_err(failed)?) } else { None };
    let focal_t = submanifold::detect_focal(&setup, (0.0, p.t_end), p.tol).map_err(failed)?;
    let mut table = Table::new(&[
        "convergence",
        "trace_unnormalized",
        "b",
        "delta",
        "sum_value",
        "threshold",
        "focal_predicted",
        "focal_t",
    ]);
    table.push(vec![
        k.into(),
        setup.trace_unnormalized().into(),
        p.b.into(),
        p.delta.into(),
        sum.as_ref().map(|s| s.sum_value).into(),
        sum.as_ref().map(|s| s.threshold).into(),
        sum.as_ref().map_or(Cell::Empty, |s| s.focal_predicted.into()),
        focal_t.into(),
    ]);
    let mut checks = Vec::new();
    if let Some(want) = p.expect_convergence {
        checks.push(within("convergence", k, want, 1e-8));
    }
    if let Some(want) = p.expect_focal_t {
        checks.push(match focal_t {
            Some(t) => within("focal_t", t, want, 1e-6),
            None => Check::new("focal_t", false, format!("no focal point in [0, {}]", p.t_end)),
        });
    }
    if let Some(s) = &sum {
        if s.focal_predicted {
            let ok = focal_t.is_some_and(|t| t <= p.b + 1e-9);
            checks.push(Check::new("focal_before_b", ok, format!("predicted by the sum test; first focal point {focal_t:?}, b = {}", p.b)));
        }
    }
    Ok(Outcome { table, checks, summary: json!({ "normal": join(nu.as_slice()), "sum_test": sum }) })
}

// genericity

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GenericityExpect {
    None,
    Witness,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericityParams {
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_tube")]
    pub tube_radius: f64,
    #[serde(default = "default_gen_probes")]
    pub n_probes: usize,
    #[serde(default = "default_gen_grid")]
    pub n_grid: usize,
    /// Frame seeds; defaults to coordinate axes.
    #[serde(default)]
    pub seeds: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_revalidate")]
    pub revalidate_factor: usize,
    #[serde(default)]
    pub expect: Option<GenericityExpect>,
}

fn default_tube() -> f64 {
    0.05
}

fn default_gen_probes() -> usize {
    16
}

fn default_gen_grid() -> usize {
    3
}

fn default_revalidate() -> usize {
    2
}

/// Spatial coordinate axes; for a null `v` the axis most aligned with it
/// is dropped.
pub fn default_seeds(n: usize, v: &[f64], null: bool) -> Vec<DVector<f64>> {
    let drop = if null {
        (1..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
    } else {
        None
    };
    (1..n)
        .filter(|&i| Some(i) != drop)
        .map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect()
}

fn genericity(metric: &MetricField, p: &GenericityParams, seed: u64) -> Result<Outcome> {
    let n = metric.dim();
    need_len("x0", &p.x0, n)?;
    need_len("v0", &p.v0, n)?;
    let path = integrate_geodesic(metric, &p.x0, &p.v0, (0.0, p.t_end), &GeodesicOptions::default()).map_err(failed)?;
    let null = path.causal_class() == lorentzlab::CausalClass::Null;
    let seeds = match &p.seeds {
        Some(s) => {
            for v in s {
                need_len("seeds[]", v, n)?;
            }
            s.iter().map(|v| dv(v)).collect()
        }
        None => default_seeds(n, &p.v0, null),
    };
    let frame = normal_frame(&path, &seeds).map_err(failed)?;
    let window = p.window.unwrap_or([0.0, p.t_end]);
    let w = submanifold::genericity_scan(&frame, (window[0], window[1]), p.tube_radius, p.n_probes, p.n_grid, seed).map_err(failed)?;
    let mut table = Table::new(&[
        "found",
        "t0",
        "c",
        "direction_index",
        "tube_radius",
        "n_probes",
        "sampled_min",
        "revalidated_min",
        "revalidation_probes",
    ]);
    let mut checks = Vec::new();
    match &w {
        Some(w) => {
            let (ok, fine_min) = submanifold::revalidate_witness(&frame, w, p.revalidate_factor, seed);
            table.push(vec![
                true.into(),
                w.t0.into(),
                w.c.into(),
                w.direction_index.into(),
                w.tube_radius.into(),
                w.n_probes.into(),
                w.sampled_min.into(),
                fine_min.into(),
                (p.revalidate_factor * w.n_probes).into(),
            ]);
            checks.push(Check::new("revalidated", ok, format!("min {fine_min} on {}x probes vs c = {}", p.revalidate_factor, w.c)));
        }
        None => table.push(vec![
            false.into(),
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            p.tube_radius.into(),
            p.n_probes.into(),
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
        ]),
    }
    if let Some(e) = p.expect {
        let got = if w.is_some() { GenericityExpect::Witness } else { GenericityExpect::None };
        checks.push(Check::new("expectation", got == e, format!("expected {e:?}, found {got:?}")));
    }
    let summary = json!({ "null": null, "witness": w.as_ref().map(|w| w.to_key_values()) });
    Ok(Outcome { table, checks, summary })
}

// trapped_point

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrappedParams {
    pub p: Vec<f64>,
    #[serde(default = "default_directions")]
    pub n_directions: usize,
    pub t_range: [f64; 2],
    #[serde(default = "default_n_t")]
    pub n_t: usize,
    #[serde(default = "default_trapped_tol")]
    pub tol: f64,
    #[serde(default)]
    pub expect_trapped: Option<bool>,
}

fn default_directions() -> usize {
    6
}

fn default_n_t() -> usize {
    10
}

fn default_trapped_tol() -> f64 {
    1e-11
}

fn trapped(metric: &MetricField, p: &TrappedParams) -> Result<Outcome> {
    need_len("p", &p.p, metric.dim())?;
    let rep = submanifold::trapped_point_check(metric, &p.p, p.n_directions, (p.t_range[0], p.t_range[1]), p.n_t, p.tol)
        .map_err(failed)?;
    let mut table = Table::new(&["index", "direction", "witness_t", "max_k"]);
    for d in &rep.directions {
        table.push(vec![d.index.into(), join(&d.direction).into(), d.witness_t.into(), d.max_k.into()]);
    }
    let mut checks = Vec::new();
    if let Some(e) = p.expect_trapped {
        checks.push(Check::new("expectation", rep.trapped == e, format!("expected trapped = {e}, found {}", rep.trapped)));
    }
    Ok(Outcome { table, checks, summary: json!({ "trapped": rep.trapped }) })
}

// cone

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushUpParams {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub step: f64,
    pub n: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationParams {
    pub p: [f64; 2],
    pub q: [f64; 2],
    #[serde(default)]
    pub expect: Option<f64>,
    #[serde(default = "default_sep_tol")]
    pub expect_tol: f64,
}

fn default_sep_tol() -> f64 {
    1e-9
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeParams {
    pub p: [f64; 2],
    pub t_max: f64,
    #[serde(default = "default_cone_tol")]
    pub tol: f64,
    #[serde(default = "default_cone_samples")]
    pub samples: usize,
    /// Compare the boundary with `|x − x_p| = t − t_p`.
    #[serde(default)]
    pub minkowski_oracle: Option<f64>,
    #[serde(default)]
    pub push_up: Option<PushUpParams>,
    #[serde(default)]
    pub separations: Vec<SeparationParams>,
}

fn default_cone_tol() -> f64 {
    1e-12
}

fn default_cone_samples() -> usize {
    41
}

fn cone(metric: &MetricField, p: &ConeParams, seed: u64) -> Result<Outcome> {
    need_2d(metric)?;
    let cb = causal2d::future_boundary(metric, &p.p, p.t_max, p.tol).map_err(failed)?;
    let mut table = Table::new(&["t", "x_left", "x_right"]);
    let k = p.samples.max(2);
    let mut worst = 0.0f64;
    for i in 0..k {
        let t = p.p[0] + p.t_max * i as f64 / (k - 1) as f64;
        let l = cb.x_at(BoundarySide::Left, t);
        let r = cb.x_at(BoundarySide::Right, t);
        if p.minkowski_oracle.is_some() {
            let dt = t - p.p[0];
            for (x, s) in [(l, -1.0), (r, 1.0)] {
                worst = worst.max(x.map_or(f64::INFINITY, |x| (x - p.p[1] - s * dt).abs()));
            }
        }
        table.push(vec![t.into(), l.into(), r.into()]);
    }
    let mut checks = Vec::new();
    let defect = cb.null_defect(k);
    checks.push(Check::new("null_defect", defect < 1e-8, format!("max |g(v,v)| on the boundary {defect:e}")));
    if let Some(tol) = p.minkowski_oracle {
        checks.push(Check::new("minkowski_oracle", worst < tol, format!("max deviation from |x| = t: {worst:e}")));
    }
    let mut summary = serde_json::Map::new();
    if let Some(pu) = &p.push_up {
        let region = Region::new(pu.lower.to_vec(), pu.upper.to_vec());
        let rep = causal2d::push_up_check(metric, &region, pu.step, pu.n, seed).map_err(failed)?;
        checks.push(Check::new("push_up", rep.all_hold(), format!("{} of {} triples", rep.held, rep.tested)));
        summary.insert("push_up_held".into(), json!(rep.held));
    }
    let mut seps = Vec::new();
    for s in &p.separations {
        let d = causal2d::time_separation(metric, &s.p, &s.q, p.tol).map_err(failed)?;
        if let Some(want) = s.expect {
            checks.push(within("time_separation", d, want, s.expect_tol));
        }
        seps.push(json!({ "p": s.p, "q": s.q, "d": d }));
    }
    summary.insert("separations".into(), Value::Array(seps));
    Ok(Outcome { table, checks, summary: Value::Object(summary) })
}

// dconv

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DconvParams {
    pub p: [f64; 2],
    pub q: [f64; 2],
    #[serde(default = "default_ladder")]
    pub eps: Vec<f64>,
    #[serde(default = "default_axes")]
    pub kernel_axes: Vec<usize>,
    #[serde(default = "default_cone_tol")]
    pub tol: f64,
    /// Required `|d_ε − d|` on the last rung.
    #[serde(default)]
    pub max_final_gap: Option<f64>,
}

fn default_axes() -> Vec<usize> {
    vec![0, 1]
}

fn dconv(metric: &MetricField, p: &DconvParams) -> Result<Outcome> {
    need_2d(metric)?;
    need_ladder("eps", &p.eps)?;
    if p.kernel_axes.is_empty() || p.kernel_axes.iter().any(|&a| a > 1) {
        return Err(config("key `params.kernel_axes`: axes must be a non-empty subset of [0, 1]"));
    }
    let rep = causal2d::dconv_experiment(metric, &p.p, &p.q, &p.eps, &p.kernel_axes, p.tol).map_err(failed)?;
    let mut table = Table::new(&["eps", "d_eps", "d_exact", "gap", "narrowing"]);
    for r in &rep.rows {
        table.push(vec![r.eps.into(), r.d_eps.into(), r.d_exact.into(), r.gap.into(), r.narrowing.into()]);
    }
    let mut checks = vec![Check::new("below_exact", rep.below_exact, "d_eps <= d on every rung")];
    if let Some(g) = p.max_final_gap {
        let last = rep.rows.last().map_or(f64::INFINITY, |r| r.gap);
        checks.push(Check::new("final_gap", last < g, format!("|d_eps - d| = {last:e} on the last rung, required < {g:e}")));
    }
    Ok(Outcome { table, checks, summary: json!({ "monotone": rep.monotone }) })
}

// cut

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutParams {
    pub p: [f64; 2],
    pub v: [f64; 2],
    pub t_max: f64,
    #[serde(default = "default_cut_tol")]
    pub tol: f64,
    #[serde(default)]
    pub expect: Option<f64>,
    #[serde(default = "default_cut_expect_tol")]
    pub expect_tol: f64,
}

fn default_cut_tol() -> f64 {
    1e-8
}

fn default_cut_expect_tol() -> f64 {
    1e-4
}

fn cut(metric: &MetricField, p: &CutParams) -> Result<Outcome> {
    need_2d(metric)?;
    let s = causal2d::cut_function(metric, &p.p, &p.v, p.t_max, p.tol).map_err(failed)?;
    let mut table = Table::new(&["kind", "value"]);
    let (kind, value) = match s {
        CutValue::At(v) => ("at", v),
        CutValue::AtLeast(v) => ("at_least", v),
    };
    table.push(vec![kind.into(), value.into()]);
    let mut checks = Vec::new();
    if let Some(want) = p.expect {
        checks.push(match s {
            CutValue::At(v) => within("cut_value", v, want, p.expect_tol),
            CutValue::AtLeast(v) => Check::new("cut_value", false, format!("no cut up to {v}, expected {want}")),
        });
    }
    Ok(Outcome { table, checks, summary: json!({ "cut": s }) })
}

// jacobi

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum JacobiData {
    /// `A = 0`, `Ȧ = id`.
    Lagrange,
    /// `A = id`, `Ȧ = 0`.
    Parallel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobiParams {
    pub source: SourceSpec,
    pub d: usize,
    #[serde(default = "default_data")]
    pub data: JacobiData,
    pub t_end: f64,
    #[serde(default = "default_jacobi_tol")]
    pub tol: f64,
    #[serde(default)]
    pub expect_first: Option<f64>,
    #[serde(default = "default_expect_first_tol")]
    pub expect_tol: f64,
}

fn default_data() -> JacobiData {
    JacobiData::Lagrange
}

fn default_jacobi_tol() -> f64 {
    1e-12
}

fn default_expect_first_tol() -> f64 {
    1e-8
}

fn jacobi(p: &JacobiParams) -> Result<Outcome> {
    if p.d == 0 || !(p.t_end > 0.0) {
        return Err(config("key `params`: need d > 0 and t_end > 0"));
    }
    let src = p.source.build(p.d)?;
    let id = DMatrix::identity(p.d, p.d);
    let zero = DMatrix::zeros(p.d, p.d);
    let (a0, adot0) = match p.data {
        JacobiData::Lagrange => (zero, id),
        JacobiData::Parallel => (id, zero),
    };
    let traj = congruence::integrate_jacobi(&src, &a0, &adot0, (0.0, p.t_end), p.tol).map_err(failed)?;
    let mut table = Table::new(&["index", "t", "kind"]);
    for (i, c) in traj.conjugate_points().iter().enumerate() {
        let kind = match c.kind {
            congruence::ConjugateKind::Crossing => "crossing",
            congruence::ConjugateKind::Tangency => "tangency",
        };
        table.push(vec![i.into(), c.t.into(), kind.into()]);
    }
    let first = traj.first_conjugate();
    let mut checks = Vec::new();
    if let Some(want) = p.expect_first {
        checks.push(match first {
            Some(t) => within("first_conjugate", t, want, p.expect_tol),
            None => Check::new("first_conjugate", false, format!("none in (0, {}]", p.t_end)),
        });
    }
    Ok(Outcome { table, checks, summary: json!({ "first_conjugate": first }) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn binding_table_is_exhaustive_and_injective() {
        let listed = [
            "geodesic",
            "smoothing",
            "friedrichs",
            "theta_bound",
            "conjugate_window",
            "riccati_compare",
            "focal",
            "genericity",
            "trapped_point",
            "cone",
            "dconv",
            "cut",
        ];
        for name in listed {
            assert!(ExperimentId::parse(name).is_some(), "{name} is not bound");
        }
        let names: BTreeSet<_> = ExperimentId::ALL.iter().map(|id| id.as_str()).collect();
        let ops: BTreeSet<_> = ExperimentId::ALL.iter().map(|id| id.operation()).collect();
        assert_eq!(names.len(), ExperimentId::ALL.len());
        assert_eq!(ops.len(), ExperimentId::ALL.len());
        for id in ExperimentId::ALL {
            assert_eq!(ExperimentId::parse(id.as_str()), Some(id));
        }
        assert_eq!(ExperimentId::parse("Geodesic"), None);
    }

    #[test]
    fn ordered_pairs_are_ordered_and_seeded() {
        let (s1, s2, b) = ordered_pair(3, 1, 3, 1.0);
        let gap = s1 - &s2;
        assert!(gap.symmetric_eigenvalues().min() >= -1e-12);
        assert!((&b - b.transpose()).norm() == 0.0);
        assert_eq!(ordered_pair(3, 1, 3, 1.0).1, s2);
        assert_ne!(ordered_pair(4, 1, 3, 1.0).1, s2);
    }

    #[test]
    fn null_seed_drops_the_aligned_axis() {
        let s = default_seeds(4, &[1.0, -0.8, 0.0, 0.0], true);
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|v| v[1] == 0.0));
        assert_eq!(default_seeds(4, &[1.0, 0.0, 0.0, 0.0], false).len(), 3);
    }
}
