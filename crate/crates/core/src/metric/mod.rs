//! Chart-local Lorentzian metrics, smooth or `C^{1,1}` with a declared
//! interface, and pointwise connection/curvature evaluation.
//!
//! Sign conventions: signature `(-,+,…,+)`,
//! `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z` and
//! `Ric(X,Y) = Σ_i ⟨E_i,E_i⟩⟨R(E_i,X)Y,E_i⟩`, so the unit sphere has positive
//! Ricci curvature and the tidal operator of a unit timelike vector in a
//! space form of curvature `K` is `−K·id`.

pub mod catalog;
mod causal;
mod connection;
mod region;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use causal::{classify_vector, classify_vector_with_tol, cone_compare, cone_compare_witness, dh_distance, CausalClass, DEFAULT_NULL_TOL};
pub use connection::{
    christoffel, christoffel_with, curvature, curvature_with, tidal_from_sample, tidal_operator, tidal_operator_with,
    Christoffel, CurvatureSample, EvalMode, Riemann, CHRISTOFFEL_REL_STEP, CURVATURE_REL_STEP, FRAME_TOL,
};
pub use region::Region;
pub(crate) use connection::{christoffel_on_branch, metric_derivatives};

use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("finite-difference stencil at {coords:?} straddles the interface")]
    InterfaceTooClose { coords: Vec<f64> },
    #[error("metric is degenerate at {coords:?}")]
    DegenerateMetric { coords: Vec<f64> },
    #[error("metric at {coords:?} is not Lorentzian (inertia {negative} negative, {positive} positive)")]
    SignatureViolation { coords: Vec<f64>, negative: usize, positive: usize },
    #[error("zero vector cannot be classified")]
    ZeroVector,
    #[error("frame is not orthonormal (residual {residual:e})")]
    BadFrame { residual: f64 },
    #[error("sampling region is empty")]
    EmptyRegion,
    #[error("point {coords:?} lies outside chart `{chart}`")]
    OutsideChart { chart: String, coords: Vec<f64> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite coordinates {coords:?}")]
    NonFinite { coords: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Which side of the interface `Φ = 0` a one-sided evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Minus,
    Plus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Minus => -1.0,
            Side::Plus => 1.0,
        }
    }

    pub fn flip(self) -> Side {
        match self {
            Side::Minus => Side::Plus,
            Side::Plus => Side::Minus,
        }
    }

    pub fn of(value: f64) -> Side {
        if value < 0.0 {
            Side::Minus
        } else {
            Side::Plus
        }
    }
}

/// Branch selector for piecewise-smooth sources. `Auto` picks the side by
/// the sign of the interface function; a fixed side evaluates the smooth
/// extension of that side's formula, also slightly across the interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Auto,
    Fixed(Side),
}

impl From<Side> for Branch {
    fn from(s: Side) -> Self {
        Branch::Fixed(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Regularity {
    Smooth,
    C11,
}

/// Coordinate formulas behind a [`MetricField`].
pub trait MetricSource: Send + Sync {
    fn dim(&self) -> usize;
    fn components(&self, x: &[f64], branch: Branch) -> DMatrix<f64>;
    /// `∂_c g_ab` as one matrix per coordinate `c`, if known in closed form.
    fn derivatives(&self, _x: &[f64], _branch: Branch) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    /// Scalar whose zero set is the non-smoothness locus.
    fn interface(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// A coordinate chart: a box with optional periodic axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub id: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub periods: Vec<Option<f64>>,
}

impl Chart {
    pub fn unbounded(id: impl Into<String>, n: usize) -> Self {
        Self {
            id: id.into(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            periods: vec![None; n],
        }
    }

    pub fn with_bounds(mut self, axis: usize, lo: f64, hi: f64) -> Self {
        self.lower[axis] = lo;
        self.upper[axis] = hi;
        self
    }

    pub fn with_period(mut self, axis: usize, period: f64) -> Self {
        self.periods[axis] = Some(period);
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| {
            v.is_finite() && (self.periods[i].is_some() || (v >= self.lower[i] && v <= self.upper[i]))
        })
    }

    /// Length scale used for relative tolerances.
    pub fn scale(&self) -> f64 {
        let mut s: f64 = 1.0;
        for i in 0..self.dim() {
            let w = self.upper[i] - self.lower[i];
            if w.is_finite() {
                s = s.max(0.5 * w);
            }
        }
        s.min(1e3)
    }

    /// True if `region` padded by `pad` stays inside the chart.
    pub fn contains_padded(&self, region: &Region, pad: f64) -> bool {
        (0..self.dim()).all(|i| {
            self.periods[i].is_some()
                || (region.lower[i] - pad >= self.lower[i] && region.upper[i] + pad <= self.upper[i])
        })
    }
}

/// A point tagged with the chart it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimePoint {
    pub chart_id: String,
    pub coords: Vec<f64>,
}

impl SpacetimePoint {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Relative tolerance (times chart scale) for "on the interface".
pub const INTERFACE_TOL: f64 = 1e-9;

/// Immutable, cheaply clonable Lorentzian metric on a single chart.
#[derive(Clone)]
pub struct MetricField {
    name: String,
    source: Arc<dyn MetricSource>,
    regularity: Regularity,
    chart: Chart,
    background: Option<DMatrix<f64>>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("regularity", &self.regularity)
            .field("chart", &self.chart)
            .finish()
    }
}

impl MetricField {
    pub fn new(name: impl Into<String>, chart: Chart, regularity: Regularity, source: Arc<dyn MetricSource>) -> Self {
        assert_eq!(chart.dim(), source.dim(), "chart and source dimensions differ");
        Self {
            name: name.into(),
            source,
            regularity,
            chart,
            background: None,
        }
    }

    /// Metric from a component closure, optionally with analytic derivatives.
    pub fn from_fn<F>(name: impl Into<String>, chart: Chart, components: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        let n = chart.dim();
        Self::new(
            name,
            chart,
            Regularity::Smooth,
            Arc::new(FnSource {
                n,
                g: Box::new(components),
                dg: None,
            }),
        )
    }

    pub fn from_fn_with_derivatives<F, D>(name: impl Into<String>, chart: Chart, components: F, derivatives: D) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        D: Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        let n = chart.dim();
        Self::new(
            name,
            chart,
            Regularity::Smooth,
            Arc::new(FnSource {
                n,
                g: Box::new(components),
                dg: Some(Box::new(derivatives)),
            }),
        )
    }

    /// Constant background Riemannian metric `h` (Euclidean when unset).
    pub fn with_background(mut self, h: DMatrix<f64>) -> Self {
        self.background = Some(h);
        self
    }

    pub fn with_chart(mut self, chart: Chart) -> Self {
        self.chart = chart;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn regularity(&self) -> Regularity {
        self.regularity
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn source(&self) -> &Arc<dyn MetricSource> {
        &self.source
    }

    pub fn background(&self) -> DMatrix<f64> {
        self.background.clone().unwrap_or_else(|| DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn has_background(&self) -> bool {
        self.background.is_some()
    }

    pub fn has_derivatives(&self) -> bool {
        let probe = self.probe_point();
        self.source.derivatives(&probe, Branch::Auto).is_some()
    }

    fn probe_point(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let (lo, hi) = (self.chart.lower[i], self.chart.upper[i]);
                match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo + 1.0,
                    (false, true) => hi - 1.0,
                    _ => 0.0,
                }
            })
            .collect()
    }

    pub fn locate(&self, coords: &[f64]) -> Result<SpacetimePoint> {
        self.check_point(coords)?;
        Ok(SpacetimePoint {
            chart_id: self.chart.id.clone(),
            coords: coords.to_vec(),
        })
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(MetricError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite { coords: x.to_vec() });
        }
        if !self.chart.contains(x) {
            return Err(MetricError::OutsideChart {
                chart: self.chart.id.clone(),
                coords: x.to_vec(),
            });
        }
        Ok(())
    }

    pub fn g(&self, x: &[f64]) -> DMatrix<f64> {
        self.source.components(x, Branch::Auto)
    }

    pub fn g_branch(&self, x: &[f64], branch: Branch) -> DMatrix<f64> {
        self.source.components(x, branch)
    }

    pub fn inner(&self, x: &[f64], u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        linalg::inner(&self.g(x), u, v)
    }

    pub fn interface_value(&self, x: &[f64]) -> Option<f64> {
        match self.regularity {
            Regularity::C11 => self.source.interface(x),
            Regularity::Smooth => None,
        }
    }

    pub fn interface_tol(&self) -> f64 {
        INTERFACE_TOL * self.chart.scale()
    }

    /// Side of the interface, `None` for smooth metrics.
    pub fn side_of(&self, x: &[f64]) -> Option<Side> {
        self.interface_value(x).map(Side::of)
    }

    pub fn is_on_interface(&self, x: &[f64]) -> bool {
        self.interface_value(x).is_some_and(|phi| phi.abs() < self.interface_tol())
    }

    /// Gradient of the interface function by central differences.
    pub fn interface_gradient(&self, x: &[f64]) -> Option<DVector<f64>> {
        self.interface_value(x)?;
        let n = self.dim();
        let mut grad = DVector::zeros(n);
        let mut xp = x.to_vec();
        for c in 0..n {
            let h = 1e-6 * x[c].abs().max(1.0);
            xp[c] = x[c] + h;
            let fp = self.source.interface(&xp).unwrap_or(0.0);
            xp[c] = x[c] - h;
            let fm = self.source.interface(&xp).unwrap_or(0.0);
            xp[c] = x[c];
            grad[c] = (fp - fm) / (2.0 * h);
        }
        Some(grad)
    }

    /// Coordinate time direction `∂_0`, used as the time orientation.
    pub fn future_hint(&self) -> DVector<f64> {
        let mut t = DVector::zeros(self.dim());
        t[0] = 1.0;
        t
    }

    pub fn is_future_directed(&self, x: &[f64], v: &DVector<f64>) -> bool {
        self.inner(x, v, &self.future_hint()) < 0.0
    }

    /// Checks the Lorentzian signature `(1 negative, n-1 positive)` at `x`.
    pub fn check_signature(&self, x: &[f64]) -> Result<()> {
        let g = self.g(x);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::DegenerateMetric { coords: x.to_vec() });
        }
        let (neg, zero, pos) = linalg::inertia(&g, 1e-12);
        if zero > 0 {
            return Err(MetricError::DegenerateMetric { coords: x.to_vec() });
        }
        if neg != 1 || pos != self.dim() - 1 {
            return Err(MetricError::SignatureViolation {
                coords: x.to_vec(),
                negative: neg,
                positive: pos,
            });
        }
        Ok(())
    }

    /// Future-directed g-orthonormal basis at `x`, timelike vector first.
    pub fn orthonormal_basis(&self, x: &[f64]) -> Result<Vec<DVector<f64>>> {
        self.check_signature(x)?;
        linalg::orthonormal_basis(&self.g(x), Some(&self.future_hint()))
            .ok_or_else(|| MetricError::DegenerateMetric { coords: x.to_vec() })
    }
}

struct FnSource {
    n: usize,
    #[allow(clippy::type_complexity)]
    g: Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>,
    #[allow(clippy::type_complexity)]
    dg: Option<Box<dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync>>,
}

impl MetricSource for FnSource {
    fn dim(&self) -> usize {
        self.n
    }

    fn components(&self, x: &[f64], _branch: Branch) -> DMatrix<f64> {
        (self.g)(x)
    }

    fn derivatives(&self, x: &[f64], _branch: Branch) -> Option<Vec<DMatrix<f64>>> {
        self.dg.as_ref().map(|d| d(x))
    }
}
