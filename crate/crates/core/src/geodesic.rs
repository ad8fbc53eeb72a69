//! Geodesics, parallel transport and normal frames along a single path.
//!
//! For `C^{1,1}` metrics the integration is split exactly where the path
//! meets the interface and restarted with the formulas of the side it
//! enters, so every segment integrates a smooth right-hand side.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::metric::{self, Branch, CausalClass, MetricError, MetricField, Side};
use crate::ode::{self, DenseOutput, OdeError, OdeOptions, Termination};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesicError {
    #[error("path left chart `{chart}` at t = {t}")]
    LeftChart { chart: String, t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("more than {max} interface crossings")]
    EventLoop { max: usize },
    #[error("step budget exhausted")]
    TooManySteps,
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("initial velocity is zero")]
    ZeroVelocity,
    #[error("parameter range must be increasing, got [{0}, {1}]")]
    BadRange(f64, f64),
    #[error("seed vectors do not span a complement of the velocity")]
    BadSeed,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T> = std::result::Result<T, GeodesicError>;

/// Scalar stop function of `(x, v)`: integration ends where it turns negative.
pub type StopFn = std::sync::Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct GeodesicOptions {
    pub tol: f64,
    pub max_events: usize,
    pub h_max: f64,
    pub stop: Option<StopFn>,
}

impl std::fmt::Debug for GeodesicOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeodesicOptions")
            .field("tol", &self.tol)
            .field("max_events", &self.max_events)
            .field("h_max", &self.h_max)
            .field("stop", &self.stop.is_some())
            .finish()
    }
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_events: 64,
            h_max: f64::INFINITY,
            stop: None,
        }
    }
}

impl GeodesicOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn stop_when(mut self, f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.stop = Some(std::sync::Arc::new(f));
        self
    }

    pub fn h_max(mut self, h: f64) -> Self {
        self.h_max = h;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopReason {
    Reached,
    Stopped { t: f64 },
}

#[derive(Debug, Clone)]
struct Segment {
    output: DenseOutput,
    branch: Branch,
}

/// Dense-output geodesic, optionally carrying parallel-transported vectors.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    metric: MetricField,
    n: usize,
    transported: usize,
    segments: Vec<Segment>,
    events: Vec<f64>,
    t_min: f64,
    t_max: f64,
    reason: StopReason,
    class: CausalClass,
    norm0: f64,
    opts: GeodesicOptions,
    x0: Vec<f64>,
    v0: Vec<f64>,
}

impl GeodesicPath {
    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    /// End of the computed range (earlier than requested if stopped).
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn stop_reason(&self) -> StopReason {
        self.reason
    }

    pub fn causal_class(&self) -> CausalClass {
        self.class
    }

    pub fn events(&self) -> &[f64] {
        &self.events
    }

    pub fn tol(&self) -> f64 {
        self.opts.tol
    }

    pub fn options(&self) -> &GeodesicOptions {
        &self.opts
    }

    pub fn initial_position(&self) -> &[f64] {
        &self.x0
    }

    pub fn initial_velocity(&self) -> &[f64] {
        &self.v0
    }

    /// `g(ẋ, ẋ)` at the start.
    pub fn initial_norm(&self) -> f64 {
        self.norm0
    }

    fn segment(&self, t: f64) -> &Segment {
        let i = self.segments.partition_point(|s| s.output.t_end() < t);
        &self.segments[i.min(self.segments.len() - 1)]
    }

    fn raw(&self, t: f64) -> Vec<f64> {
        self.segment(t).output.eval(t.clamp(self.t_min, self.t_max))
    }

    /// Branch used for the segment containing `t`.
    pub fn branch_at(&self, t: f64) -> Branch {
        self.segment(t).branch
    }

    pub fn position(&self, t: f64) -> Vec<f64> {
        self.raw(t)[..self.n].to_vec()
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        DVector::from_row_slice(&self.raw(t)[self.n..2 * self.n])
    }

    pub fn state(&self, t: f64) -> (Vec<f64>, DVector<f64>) {
        let y = self.raw(t);
        (y[..self.n].to_vec(), DVector::from_row_slice(&y[self.n..2 * self.n]))
    }

    /// `i`-th transported vector at `t`.
    pub fn transported(&self, t: f64, i: usize) -> DVector<f64> {
        assert!(i < self.transported);
        let y = self.raw(t);
        let off = 2 * self.n + i * self.n;
        DVector::from_row_slice(&y[off..off + self.n])
    }

    pub fn transported_count(&self) -> usize {
        self.transported
    }

    fn raw_derivative(&self, t: f64) -> Vec<f64> {
        self.segment(t).output.eval_derivative(t.clamp(self.t_min, self.t_max))
    }

    /// Metric at `x(t)` on the branch of the segment containing `t`.
    pub fn metric_at(&self, t: f64) -> DMatrix<f64> {
        let x = self.position(t);
        self.metric.g_branch(&x, self.branch_at(t))
    }

    /// `g(ẋ,ẋ)(t) − g(ẋ,ẋ)(t_min)`.
    pub fn norm_drift(&self, t: f64) -> f64 {
        let (_, v) = self.state(t);
        linalg::inner(&self.metric_at(t), &v, &v) - self.norm0
    }

    /// `‖ẍ + Γ(ẋ,ẋ)‖∞` using the dense-output derivative.
    pub fn geodesic_residual(&self, t: f64) -> Result<f64> {
        let (x, v) = self.state(t);
        let dy = self.raw_derivative(t);
        let gam = metric::christoffel_on_branch(&self.metric, &x, self.branch_at(t))?;
        let acc = gam.contract(v.as_slice(), v.as_slice());
        Ok((0..self.n).map(|a| (dy[self.n + a] + acc[a]).abs()).fold(0.0, f64::max))
    }

    /// `‖∇_ẋ V_i‖∞` for a transported vector.
    pub fn transport_residual(&self, t: f64, i: usize) -> Result<f64> {
        let (x, v) = self.state(t);
        let dy = self.raw_derivative(t);
        let w = self.transported(t, i);
        let gam = metric::christoffel_on_branch(&self.metric, &x, self.branch_at(t))?;
        let acc = gam.contract(v.as_slice(), w.as_slice());
        let off = 2 * self.n + i * self.n;
        Ok((0..self.n).map(|a| (dy[off + a] + acc[a]).abs()).fold(0.0, f64::max))
    }

    /// Uniform parameter grid with `k ≥ 2` points over the computed range.
    pub fn sample_times(&self, k: usize) -> Vec<f64> {
        let k = k.max(2);
        (0..k).map(|i| self.t_min + (self.t_max - self.t_min) * i as f64 / (k - 1) as f64).collect()
    }

    /// Accepted step boundaries.
    pub fn nodes(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.segments {
            for t in s.output.nodes() {
                if out.last().is_none_or(|l: &f64| t > *l) {
                    out.push(t);
                }
            }
        }
        out
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..self.n).map(|i| format!("x{i}")));
        h.extend((0..self.n).map(|i| format!("v{i}")));
        h.push("ginv_norm_drift".into());
        h
    }

    /// Rows `t, x.., v.., norm drift` at `k` uniform parameters.
    pub fn table(&self, k: usize) -> Vec<Vec<f64>> {
        self.sample_times(k)
            .into_iter()
            .map(|t| {
                let (x, v) = self.state(t);
                let mut row = vec![t];
                row.extend(x);
                row.extend(v.iter());
                row.push(self.norm_drift(t));
                row
            })
            .collect()
    }
}

fn chart_margin(metric: &MetricField, x: &[f64]) -> f64 {
    let c = metric.chart();
    let mut m = f64::INFINITY;
    for i in 0..c.dim() {
        if c.periods[i].is_none() {
            m = m.min(x[i] - c.lower[i]).min(c.upper[i] - x[i]);
        }
    }
    m
}

fn map_ode(e: OdeError<MetricError>) -> GeodesicError {
    match e {
        OdeError::StepUnderflow { t } => GeodesicError::StepUnderflow { t },
        OdeError::TooManySteps(_) => GeodesicError::TooManySteps,
        OdeError::NonFinite { t } => GeodesicError::NonFinite { t },
        OdeError::BadInterval { t0, t1 } => GeodesicError::BadRange(t0, t1),
        OdeError::Rhs(MetricError::DegenerateMetric { .. }) | OdeError::Rhs(MetricError::NonFinite { .. }) => {
            GeodesicError::StepUnderflow { t: f64::NAN }
        }
        OdeError::Rhs(e) => GeodesicError::Metric(e),
    }
}

/// Side of the interface a path at `x` moving with `v` is entering.
fn entering_side(metric: &MetricField, x: &[f64], v: &[f64]) -> Side {
    let phi = metric.interface_value(x).unwrap_or(0.0);
    if phi.abs() >= metric.interface_tol() {
        return Side::of(phi);
    }
    let grad = metric.interface_gradient(x).unwrap_or_else(|| DVector::zeros(x.len()));
    let rate: f64 = grad.iter().zip(v).map(|(g, v)| g * v).sum();
    if rate != 0.0 {
        Side::of(rate)
    } else {
        Side::of(phi)
    }
}

pub fn integrate_geodesic(metric: &MetricField, x0: &[f64], v0: &[f64], t_range: (f64, f64), opts: &GeodesicOptions) -> Result<GeodesicPath> {
    integrate_with_transport(metric, x0, v0, &[], t_range, opts)
}

/// Geodesic integrated jointly with `∇_ẋ V_k = 0` for each `V_k` in `vectors`.
pub fn integrate_with_transport(
    metric: &MetricField,
    x0: &[f64],
    v0: &[f64],
    vectors: &[DVector<f64>],
    t_range: (f64, f64),
    opts: &GeodesicOptions,
) -> Result<GeodesicPath> {
    let n = metric.dim();
    metric.check_point(x0)?;
    if v0.len() != n {
        return Err(MetricError::DimensionMismatch { expected: n, got: v0.len() }.into());
    }
    if v0.iter().all(|c| *c == 0.0) {
        return Err(GeodesicError::ZeroVelocity);
    }
    let (t_min, t_end) = t_range;
    if !(t_end > t_min) {
        return Err(GeodesicError::BadRange(t_min, t_end));
    }
    let class = metric::classify_vector(metric, x0, &DVector::from_row_slice(v0))?;
    let k = vectors.len();
    let dim = 2 * n + k * n;
    let mut y = Vec::with_capacity(dim);
    y.extend_from_slice(x0);
    y.extend_from_slice(v0);
    for w in vectors {
        y.extend(w.iter());
    }
    let c11 = metric.interface_value(x0).is_some();
    let mut side = if c11 { Some(entering_side(metric, x0, v0)) } else { None };
    let norm0 = {
        let b = side.map_or(Branch::Auto, Branch::Fixed);
        let v = DVector::from_row_slice(v0);
        linalg::inner(&metric.g_branch(x0, b), &v, &v)
    };
    let ode_opts = OdeOptions {
        h_max: opts.h_max,
        ..OdeOptions::with_tol(opts.tol)
    };
    let mut segments = Vec::new();
    let mut events = Vec::new();
    let mut t = t_min;
    let reason;
    loop {
        let branch = side.map_or(Branch::Auto, Branch::Fixed);
        let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> std::result::Result<(), MetricError> {
            let (x, v) = (&y[..n], &y[n..2 * n]);
            let gam = metric::christoffel_on_branch(metric, x, branch)?;
            dy[..n].copy_from_slice(v);
            let acc = gam.contract(v, v);
            for a in 0..n {
                dy[n + a] = -acc[a];
            }
            for j in 0..k {
                let off = 2 * n + j * n;
                let acc = gam.contract(v, &y[off..off + n]);
                for a in 0..n {
                    dy[off + a] = -acc[a];
                }
            }
            Ok(())
        };
        let stop = opts.stop.clone();
        let mut event = |_t: f64, y: &[f64]| -> f64 {
            let x = &y[..n];
            let mut g = chart_margin(metric, x);
            if let (Some(s), Some(phi)) = (side, metric.interface_value(x)) {
                g = g.min(s.sign() * phi);
            }
            if let Some(f) = &stop {
                g = g.min(f(x, &y[n..2 * n]));
            }
            g
        };
        let (out, term) = ode::integrate(&mut rhs, t, &y, t_end, &ode_opts, Some(&mut event)).map_err(|e| {
            let mut e = map_ode(e);
            if let GeodesicError::StepUnderflow { t: tt } = &mut e {
                if tt.is_nan() {
                    *tt = t;
                }
            }
            e
        })?;
        let y_end = out.final_state();
        let t_stop = out.t_end();
        segments.push(Segment { output: out, branch });
        match term {
            Termination::Reached => {
                reason = StopReason::Reached;
                t = t_end;
                break;
            }
            Termination::Event { t: te } => {
                let x = &y_end[..n];
                let v = &y_end[n..2 * n];
                if chart_margin(metric, x) < 0.0 {
                    return Err(GeodesicError::LeftChart {
                        chart: metric.chart().id.clone(),
                        t: te,
                    });
                }
                if let Some(f) = &opts.stop {
                    // the polished root may sit just short of zero; attribute
                    // the event to whichever function is closer to it
                    let s = f(x, v);
                    let phi = match (side, metric.interface_value(x)) {
                        (Some(sd), Some(phi)) => (sd.sign() * phi).abs(),
                        _ => f64::INFINITY,
                    };
                    if s < 0.0 || s.abs() <= phi {
                        reason = StopReason::Stopped { t: te };
                        t = t_stop;
                        break;
                    }
                }
                // interface crossing
                events.push(te);
                if events.len() > opts.max_events {
                    return Err(GeodesicError::EventLoop { max: opts.max_events });
                }
                let prev = side.expect("crossing requires an interface");
                let mut next = entering_side(metric, x, v);
                if next == prev {
                    next = prev.flip();
                }
                side = Some(next);
                y = y_end;
                t = t_stop;
                if t >= t_end {
                    reason = StopReason::Reached;
                    break;
                }
            }
        }
    }
    Ok(GeodesicPath {
        metric: metric.clone(),
        n,
        transported: k,
        segments,
        events,
        t_min,
        t_max: t,
        reason,
        class,
        norm0,
        opts: opts.clone(),
        x0: x0.to_vec(),
        v0: v0.to_vec(),
    })
}

/// Re-integrates `path` jointly with the given vectors and returns them
/// at each requested parameter.
pub fn parallel_transport(path: &GeodesicPath, vectors: &[DVector<f64>], times: &[f64]) -> Result<Vec<Vec<DVector<f64>>>> {
    let joint = integrate_with_transport(&path.metric, &path.x0, &path.v0, vectors, (path.t_min, path.t_max), &path.opts)?;
    Ok(times
        .iter()
        .map(|&t| (0..vectors.len()).map(|i| joint.transported(t, i)).collect())
        .collect())
}

/// Parallel orthonormal frame of the quotient `[ẋ]^⊥` along a geodesic.
#[derive(Debug, Clone)]
pub struct NormalFrame {
    path: GeodesicPath,
    d: usize,
    null: bool,
}

impl NormalFrame {
    pub fn path(&self) -> &GeodesicPath {
        &self.path
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    pub fn vectors_at(&self, t: f64) -> Vec<DVector<f64>> {
        (0..self.d).map(|i| self.path.transported(t, i)).collect()
    }

    /// Transported null companion `N` with `⟨ẋ, N⟩ = −1` (null paths only).
    pub fn companion_at(&self, t: f64) -> Option<DVector<f64>> {
        self.null.then(|| self.path.transported(t, self.d))
    }

    /// `max |g(E_i,E_j) − δ_ij|`, `max |g(E_i, ẋ)|`, and `max ‖∇_ẋ E_i‖`.
    pub fn residuals(&self, t: f64) -> Result<(f64, f64, f64)> {
        let g = self.path.metric_at(t);
        let e = self.vectors_at(t);
        let v = self.path.velocity(t);
        let mut ortho = 0.0f64;
        let mut perp = 0.0f64;
        let mut par = 0.0f64;
        for i in 0..self.d {
            perp = perp.max(linalg::inner(&g, &e[i], &v).abs());
            par = par.max(self.path.transport_residual(t, i)?);
            for j in 0..self.d {
                let target = if i == j { 1.0 } else { 0.0 };
                ortho = ortho.max((linalg::inner(&g, &e[i], &e[j]) - target).abs());
            }
        }
        Ok((ortho, perp, par))
    }
}

/// Null companion `N = T/α − u/(2α²)` with `α = −⟨u,T⟩`.
pub fn null_companion(g: &DMatrix<f64>, u: &DVector<f64>, timelike: &DVector<f64>) -> Option<DVector<f64>> {
    let alpha = -linalg::inner(g, u, timelike);
    if alpha.abs() < 1e-300 {
        return None;
    }
    Some(timelike / alpha - u / (2.0 * alpha * alpha))
}

/// Gram–Schmidt of the seeds in `[ẋ(t0)]^⊥`, then parallel transport.
pub fn normal_frame(path: &GeodesicPath, seed: &[DVector<f64>]) -> Result<NormalFrame> {
    let metric = &path.metric;
    let x0 = path.x0.clone();
    let u = DVector::from_row_slice(&path.v0);
    let g = metric.g_branch(&x0, path.branch_at(path.t_min));
    let n = metric.dim();
    let null = path.class == CausalClass::Null;
    let d = if null { n - 2 } else { n - 1 };
    if seed.len() != d || path.class == CausalClass::Spacelike {
        return Err(GeodesicError::BadSeed);
    }
    let uu = linalg::inner(&g, &u, &u);
    let companion = if null {
        let basis = metric.orthonormal_basis(&x0)?;
        Some(null_companion(&g, &u, &basis[0]).ok_or(GeodesicError::BadSeed)?)
    } else {
        None
    };
    let projected: Vec<DVector<f64>> = seed
        .iter()
        .map(|s| match &companion {
            Some(nv) => s + &u * linalg::inner(&g, s, nv) + nv * linalg::inner(&g, s, &u),
            None => s - &u * (linalg::inner(&g, s, &u) / uu),
        })
        .collect();
    let frame = linalg::gram_schmidt(&g, &projected).ok_or(GeodesicError::BadSeed)?;
    if frame.iter().any(|e| linalg::inner(&g, e, e) <= 0.0) {
        return Err(GeodesicError::BadSeed);
    }
    let mut carried = frame;
    if let Some(nv) = companion {
        carried.push(nv);
    }
    let joint = integrate_with_transport(metric, &x0, &path.v0, &carried, (path.t_min, path.t_max), &path.opts)?;
    Ok(NormalFrame { path: joint, d, null })
}
