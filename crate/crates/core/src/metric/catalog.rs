//! Built-in metrics addressed by name and numeric/text parameters.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Branch, Chart, MetricField, MetricSource, Regularity, Side};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("parameter `{name}`: {reason}")]
    BadParam { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

/// Catalog entry as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl MetricSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), ParamValue::Number(value));
        self
    }

    pub fn with_text(mut self, key: &str, value: &str) -> Self {
        self.params.insert(key.to_string(), ParamValue::Text(value.to_string()));
        self
    }

    fn num(&self, key: &str, default: f64) -> Result<f64, CatalogError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(ParamValue::Number(v)) if v.is_finite() => Ok(*v),
            Some(_) => Err(CatalogError::BadParam {
                name: key.to_string(),
                reason: "expected a finite number".into(),
            }),
        }
    }

    fn dim(&self, key: &str, default: usize) -> Result<usize, CatalogError> {
        let v = self.num(key, default as f64)?;
        if v.fract() != 0.0 || !(2.0..=8.0).contains(&v) {
            return Err(CatalogError::BadParam {
                name: key.to_string(),
                reason: "dimension must be an integer in 2..=8".into(),
            });
        }
        Ok(v as usize)
    }

    fn text<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str, CatalogError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(ParamValue::Text(s)) => Ok(s),
            Some(_) => Err(CatalogError::BadParam {
                name: key.to_string(),
                reason: "expected a string".into(),
            }),
        }
    }

    fn check_known(&self, keys: &[&str]) -> Result<(), CatalogError> {
        for k in self.params.keys() {
            if !keys.contains(&k.as_str()) {
                return Err(CatalogError::BadParam {
                    name: k.clone(),
                    reason: format!("not a parameter of `{}`", self.name),
                });
            }
        }
        Ok(())
    }
}

pub const NAMES: &[&str] = &["minkowski", "einstein_cylinder", "space_form", "schwarzschild", "matched_c11", "frw_toy"];

pub fn build(spec: &MetricSpec) -> Result<MetricField, CatalogError> {
    let bad = |name: &str, reason: &str| CatalogError::BadParam {
        name: name.into(),
        reason: reason.into(),
    };
    match spec.name.as_str() {
        "minkowski" => {
            spec.check_known(&["n"])?;
            Ok(minkowski(spec.dim("n", 4)?))
        }
        "einstein_cylinder" => {
            spec.check_known(&[])?;
            Ok(einstein_cylinder())
        }
        "space_form" => {
            spec.check_known(&["n", "K"])?;
            Ok(space_form(spec.dim("n", 4)?, spec.num("K", 1.0)?))
        }
        "schwarzschild" => {
            spec.check_known(&["M"])?;
            let m = spec.num("M", 1.0)?;
            if m <= 0.0 {
                return Err(bad("M", "mass must be positive"));
            }
            Ok(schwarzschild(m))
        }
        "matched_c11" => {
            spec.check_known(&["beta", "profile"])?;
            let beta = spec.num("beta", 0.25)?;
            if beta < 0.0 {
                return Err(bad("beta", "must be non-negative"));
            }
            let profile = match spec.text("profile", "squared")? {
                "squared" => MatchedProfile::Squared,
                "linear" => MatchedProfile::Linear,
                other => return Err(bad("profile", &format!("unknown profile `{other}`"))),
            };
            Ok(matched_c11(beta, profile))
        }
        "frw_toy" => {
            spec.check_known(&["n", "a0", "a1", "a2"])?;
            let a0 = spec.num("a0", 1.0)?;
            if a0 <= 0.0 {
                return Err(bad("a0", "scale factor must be positive at t = 0"));
            }
            Ok(frw_toy(spec.dim("n", 2)?, a0, spec.num("a1", 0.0)?, spec.num("a2", 0.0)?))
        }
        other => Err(CatalogError::UnknownMetric(other.to_string())),
    }
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(v))
}

struct Constant(DMatrix<f64>);

impl MetricSource for Constant {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn components(&self, _x: &[f64], _b: Branch) -> DMatrix<f64> {
        self.0.clone()
    }
    fn derivatives(&self, _x: &[f64], _b: Branch) -> Option<Vec<DMatrix<f64>>> {
        let n = self.dim();
        Some(vec![DMatrix::zeros(n, n); n])
    }
}

fn eta(n: usize) -> DMatrix<f64> {
    let mut d = vec![1.0; n];
    d[0] = -1.0;
    diag(&d)
}

/// `diag(-1, 1, …, 1)` on all of `R^n`.
pub fn minkowski(n: usize) -> MetricField {
    assert!(n >= 2);
    MetricField::new(format!("minkowski{n}"), Chart::unbounded("cartesian", n), Regularity::Smooth, Arc::new(Constant(eta(n))))
}

/// `-dt² + dθ²` with `θ` of period `2π`.
pub fn einstein_cylinder() -> MetricField {
    MetricField::new(
        "einstein_cylinder",
        Chart::unbounded("cylinder", 2).with_period(1, 2.0 * PI),
        Regularity::Smooth,
        Arc::new(Constant(eta(2))),
    )
}

struct SpaceForm {
    n: usize,
    k: f64,
}

impl SpaceForm {
    fn omega(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().enumerate().map(|(i, v)| if i == 0 { -v * v } else { v * v }).sum();
        1.0 + 0.25 * self.k * s
    }
}

impl MetricSource for SpaceForm {
    fn dim(&self) -> usize {
        self.n
    }
    fn components(&self, x: &[f64], _b: Branch) -> DMatrix<f64> {
        let w = self.omega(x);
        eta(self.n) / (w * w)
    }
    fn derivatives(&self, x: &[f64], _b: Branch) -> Option<Vec<DMatrix<f64>>> {
        let w = self.omega(x);
        let e = eta(self.n);
        Some(
            (0..self.n)
                .map(|c| {
                    let ds = 2.0 * e[(c, c)] * x[c];
                    &e * (-2.0 * 0.25 * self.k * ds / (w * w * w))
                })
                .collect(),
        )
    }
}

/// Constant sectional curvature `K`: `g = η / (1 + K η(x,x)/4)²`, so that
/// `R_abcd = K(g_ac g_bd − g_ad g_bc)`. The chart is the cube of half-width
/// `1/√|K|`, on which the conformal factor stays positive for `n ≤ 4`.
pub fn space_form(n: usize, k: f64) -> MetricField {
    assert!(n >= 2);
    let mut chart = Chart::unbounded("conformal", n);
    if k != 0.0 {
        let l = 1.0 / k.abs().sqrt();
        for i in 0..n {
            chart = chart.with_bounds(i, -l, l);
        }
    }
    MetricField::new(format!("space_form{n}(K={k})"), chart, Regularity::Smooth, Arc::new(SpaceForm { n, k }))
}

struct Schwarzschild {
    m: f64,
}

impl MetricSource for Schwarzschild {
    fn dim(&self) -> usize {
        4
    }
    fn components(&self, x: &[f64], _b: Branch) -> DMatrix<f64> {
        let (r, th) = (x[1], x[2]);
        let f = 1.0 - 2.0 * self.m / r;
        let s = th.sin();
        diag(&[-f, 1.0 / f, r * r, r * r * s * s])
    }
    fn derivatives(&self, x: &[f64], _b: Branch) -> Option<Vec<DMatrix<f64>>> {
        let (r, th) = (x[1], x[2]);
        let f = 1.0 - 2.0 * self.m / r;
        let fp = 2.0 * self.m / (r * r);
        let (s, c) = th.sin_cos();
        Some(vec![
            DMatrix::zeros(4, 4),
            diag(&[-fp, -fp / (f * f), 2.0 * r, 2.0 * r * s * s]),
            diag(&[0.0, 0.0, 0.0, 2.0 * r * r * s * c]),
            DMatrix::zeros(4, 4),
        ])
    }
}

/// Exterior Schwarzschild in `(t, r, θ, φ)`.
pub fn schwarzschild(m: f64) -> MetricField {
    let chart = Chart::unbounded("schwarzschild", 4)
        .with_bounds(1, 2.0 * m * (1.0 + 1e-9), 1e6)
        .with_bounds(2, 1e-6, PI - 1e-6)
        .with_period(3, 2.0 * PI);
    MetricField::new(format!("schwarzschild(M={m})"), chart, Regularity::Smooth, Arc::new(Schwarzschild { m }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchedProfile {
    /// `g_xx = (1 + β x|x|)²`.
    Squared,
    /// `g_xx = 1 + β x|x|`.
    Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct MatchedC11 {
    pub beta: f64,
    pub profile: MatchedProfile,
}

impl MatchedC11 {
    fn sign(x: f64, b: Branch) -> f64 {
        match b {
            Branch::Fixed(s) => s.sign(),
            Branch::Auto => Side::of(x).sign(),
        }
    }

    /// `(g_xx, ∂_x g_xx)` on the requested branch.
    pub fn gxx(&self, x: f64, b: Branch) -> (f64, f64) {
        let s = Self::sign(x, b);
        let inner = 1.0 + self.beta * s * x * x;
        let dinner = 2.0 * self.beta * s * x;
        match self.profile {
            MatchedProfile::Linear => (inner, dinner),
            MatchedProfile::Squared => (inner * inner, 2.0 * inner * dinner),
        }
    }

    /// Spatial half-width of the chart, keeping `g_xx` positive.
    pub fn half_width(&self) -> f64 {
        if self.beta > 0.0 {
            (0.9 / self.beta.sqrt()).min(1.0)
        } else {
            1.0
        }
    }
}

impl MetricSource for MatchedC11 {
    fn dim(&self) -> usize {
        2
    }
    fn components(&self, x: &[f64], b: Branch) -> DMatrix<f64> {
        diag(&[-1.0, self.gxx(x[1], b).0])
    }
    fn derivatives(&self, x: &[f64], b: Branch) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(2, 2), diag(&[0.0, self.gxx(x[1], b).1])])
    }
    fn interface(&self, x: &[f64]) -> Option<f64> {
        Some(x[1])
    }
}

/// `-dt² + g_xx(x) dx²` on `(t, x)`, `C^{1,1}` across `x = 0`.
pub fn matched_c11(beta: f64, profile: MatchedProfile) -> MetricField {
    let src = MatchedC11 { beta, profile };
    let w = src.half_width();
    let tag = match profile {
        MatchedProfile::Squared => "squared",
        MatchedProfile::Linear => "linear",
    };
    MetricField::new(
        format!("matched_c11(beta={beta},{tag})"),
        Chart::unbounded("matched", 2).with_bounds(1, -w, w),
        Regularity::C11,
        Arc::new(src),
    )
}

#[derive(Debug, Clone, Copy)]
pub struct FrwToy {
    pub n: usize,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl FrwToy {
    /// `(a, ȧ, ä)` at time `t`.
    pub fn scale(&self, t: f64) -> (f64, f64, f64) {
        (self.a0 + self.a1 * t + 0.5 * self.a2 * t * t, self.a1 + self.a2 * t, self.a2)
    }

    /// Largest interval around `t = 0` where `a ≥ a0/20`, capped at ±100.
    pub fn time_range(&self) -> (f64, f64) {
        let floor = 0.05 * self.a0;
        let scan = |dir: f64| {
            let mut t: f64 = 0.0;
            let dt = 1e-3;
            while t.abs() < 100.0 && self.scale(t + dir * dt).0 >= floor {
                t += dir * dt;
            }
            t
        };
        (scan(-1.0), scan(1.0))
    }
}

impl MetricSource for FrwToy {
    fn dim(&self) -> usize {
        self.n
    }
    fn components(&self, x: &[f64], _b: Branch) -> DMatrix<f64> {
        let a = self.scale(x[0]).0;
        let mut d = vec![a * a; self.n];
        d[0] = -1.0;
        diag(&d)
    }
    fn derivatives(&self, x: &[f64], _b: Branch) -> Option<Vec<DMatrix<f64>>> {
        let (a, ad, _) = self.scale(x[0]);
        let mut d = vec![2.0 * a * ad; self.n];
        d[0] = 0.0;
        let mut out = vec![DMatrix::zeros(self.n, self.n); self.n];
        out[0] = diag(&d);
        Some(out)
    }
}

/// `-dt² + a(t)² Σ dx_i²` with `a = a0 + a1 t + a2 t²/2`.
pub fn frw_toy(n: usize, a0: f64, a1: f64, a2: f64) -> MetricField {
    let src = FrwToy { n, a0, a1, a2 };
    let (lo, hi) = src.time_range();
    MetricField::new(
        format!("frw_toy{n}(a0={a0},a1={a1},a2={a2})"),
        Chart::unbounded("comoving", n).with_bounds(0, lo, hi),
        Regularity::Smooth,
        Arc::new(src),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_by_name() {
        let m = build(&MetricSpec::new("schwarzschild").with("M", 2.0)).unwrap();
        assert_eq!(m.dim(), 4);
        assert!(matches!(build(&MetricSpec::new("nope")), Err(CatalogError::UnknownMetric(_))));
        assert!(build(&MetricSpec::new("minkowski").with("q", 1.0)).is_err());
        let mc = build(&MetricSpec::new("matched_c11").with_text("profile", "linear").with("beta", 1.0)).unwrap();
        assert_eq!(mc.regularity(), Regularity::C11);
    }

    #[test]
    fn matched_metric_is_continuous_with_continuous_derivative() {
        for profile in [MatchedProfile::Squared, MatchedProfile::Linear] {
            let src = MatchedC11 { beta: 0.7, profile };
            let (gm, dm) = src.gxx(0.0, Branch::Fixed(Side::Minus));
            let (gp, dp) = src.gxx(0.0, Branch::Fixed(Side::Plus));
            assert_eq!(gm, gp);
            assert_eq!(dm, dp);
        }
    }

    #[test]
    fn scenario_spec_round_trips_through_json_shape() {
        let s = MetricSpec::new("matched_c11").with("beta", 0.5).with_text("profile", "linear");
        assert_eq!(s.num("beta", 0.0).unwrap(), 0.5);
        assert_eq!(s.text("profile", "squared").unwrap(), "linear");
    }

    #[test]
    fn frw_chart_stops_before_collapse() {
        let (lo, hi) = FrwToy { n: 3, a0: 1.0, a1: -1.0, a2: 0.0 }.time_range();
        assert!(hi < 0.951 && hi > 0.94);
        assert!(lo <= -99.0);
    }
}
