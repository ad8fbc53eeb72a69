//! Numerical tools for Lorentzian metrics of low regularity.

pub mod causal2d;
pub mod congruence;
pub mod geodesic;
pub mod linalg;
pub mod metric;
pub mod mollify;
pub mod ode;
pub mod quadrature;
pub mod submanifold;

pub use metric::{
    catalog, christoffel, classify_vector, cone_compare, curvature, dh_distance, tidal_operator, Branch, CausalClass,
    Chart, CurvatureSample, EvalMode, MetricError, MetricField, Region, Regularity, Side, SpacetimePoint,
};
