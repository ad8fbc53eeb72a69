//! Adaptive Dormand–Prince 5(4) integrator with continuous output and
//! terminal event localisation.
//!
//! The solver is forward-only (`t1 > t0`). Right-hand sides are fallible so
//! that chart exits and degenerate metrics surface as typed errors from the
//! layer that owns them.

use thiserror::Error;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension (Hairer, Nørsett & Wanner, dopri5).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError<E> {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("exceeded {0} steps")]
    TooManySteps(usize),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid interval [{t0}, {t1}]")]
    BadInterval { t0: f64, t1: f64 },
    #[error(transparent)]
    Rhs(E),
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self::with_tol(1e-10)
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 2_000_000,
        }
    }

    pub fn h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }
}

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    /// y0, y1 - y0, and three correction rows, each `dim` long.
    coeffs: Vec<f64>,
}

impl DenseStep {
    fn dim(&self) -> usize {
        self.coeffs.len() / 5
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> &[f64] {
        &self.coeffs[..self.dim()]
    }

    pub fn end(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.coeffs[i] + self.coeffs[n + i]).collect()
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.dim();
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let c = &self.coeffs;
        for i in 0..n {
            out[i] = c[i]
                + th * (c[n + i]
                    + th1 * (c[2 * n + i] + th * (c[3 * n + i] + th1 * c[4 * n + i])));
        }
    }

    /// Time derivative of the interpolant.
    pub fn eval_derivative_into(&self, t: f64, out: &mut [f64]) {
        let n = self.dim();
        let th = (t - self.t0) / self.h;
        let c = &self.coeffs;
        for i in 0..n {
            let (r2, r3, r4, r5) = (c[n + i], c[2 * n + i], c[3 * n + i], c[4 * n + i]);
            // d/dθ of θ(r2 + (1-θ)(r3 + θ(r4 + (1-θ) r5)))
            let inner = r4 + (1.0 - th) * r5;
            let d_inner = -r5;
            let mid = r3 + th * inner;
            let d_mid = inner + th * d_inner;
            let outer = r2 + (1.0 - th) * mid;
            let d_outer = -mid + (1.0 - th) * d_mid;
            out[i] = (outer + th * d_outer) / self.h;
        }
    }
}

/// Piecewise continuous solution over the accepted steps.
#[derive(Debug, Clone)]
pub struct DenseOutput {
    dim: usize,
    steps: Vec<DenseStep>,
}

impl DenseOutput {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> &[DenseStep] {
        &self.steps
    }

    pub fn t_start(&self) -> f64 {
        self.steps.first().map_or(f64::NAN, |s| s.t0)
    }

    pub fn t_end(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.t1())
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Index of the step containing `t` (clamped to the covered range).
    pub fn locate(&self, t: f64) -> usize {
        let idx = self.steps.partition_point(|s| s.t1() < t);
        idx.min(self.steps.len().saturating_sub(1))
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        self.steps[self.locate(t)].eval_into(t, out);
    }

    pub fn eval_derivative(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.steps[self.locate(t)].eval_derivative_into(t, &mut out);
        out
    }

    pub fn final_state(&self) -> Vec<f64> {
        self.steps.last().map(|s| s.end()).unwrap_or_default()
    }

    /// Step boundaries including both ends.
    pub fn nodes(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        if let Some(last) = self.steps.last() {
            ts.push(last.t1());
        }
        ts
    }
}

/// How an integration finished.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Reached,
    /// The event function turned negative; `t` is the localised root.
    Event { t: f64 },
}

struct Workspace {
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    y1: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            y1: vec![0.0; n],
        }
    }
}

/// Dormand–Prince stepping. `k[0]` must hold f(t, y) on entry; on success
/// `y1` holds the 5th-order solution and `k[6]` holds f(t + h, y1).
fn dp_step<E, F>(f: &mut F, t: f64, y: &[f64], h: f64, ws: &mut Workspace) -> Result<(), E>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    let n = y.len();
    let Workspace { k, ytmp, y1 } = ws;
    macro_rules! stage {
        ($dst:expr, $c:expr, $($a:expr => $ki:expr),+) => {{
            for i in 0..n {
                ytmp[i] = y[i] + h * (0.0 $(+ $a * k[$ki][i])+);
            }
            let (head, tail) = k.split_at_mut($dst);
            let _ = head;
            f(t + $c * h, ytmp, &mut tail[0])?;
        }};
    }
    stage!(1, C2, A21 => 0);
    stage!(2, C3, A31 => 0, A32 => 1);
    stage!(3, C4, A41 => 0, A42 => 1, A43 => 2);
    stage!(4, C5, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
    stage!(5, 1.0, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
    for i in 0..n {
        y1[i] = y[i]
            + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    let (head, tail) = k.split_at_mut(6);
    let _ = head;
    f(t + h, y1, &mut tail[0])?;
    Ok(())
}

fn error_norm(y0: &[f64], ws: &Workspace, h: f64, opts: &OdeOptions) -> f64 {
    let n = y0.len();
    let k = &ws.k;
    let mut acc = 0.0;
    for i in 0..n {
        let e = h
            * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                + E7 * k[6][i]);
        let sc = opts.atol + opts.rtol * y0[i].abs().max(ws.y1[i].abs());
        acc += (e / sc).powi(2);
    }
    (acc / n.max(1) as f64).sqrt()
}

fn dense_from(t0: f64, h: f64, y0: &[f64], ws: &Workspace) -> DenseStep {
    let n = y0.len();
    let k = &ws.k;
    let mut coeffs = vec![0.0; 5 * n];
    for i in 0..n {
        let ydiff = ws.y1[i] - y0[i];
        let bspl = h * k[0][i] - ydiff;
        coeffs[i] = y0[i];
        coeffs[n + i] = ydiff;
        coeffs[2 * n + i] = bspl;
        coeffs[3 * n + i] = ydiff - h * k[6][i] - bspl;
        coeffs[4 * n + i] = h
            * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i]
                + D7 * k[6][i]);
    }
    DenseStep { t0, h, coeffs }
}

/// A single unadapted step of size `h` from `(t, y)`; used to evaluate the
/// solution at an arbitrary point inside an accepted step with full order.
pub fn single_step<E, F>(f: &mut F, t: f64, y: &[f64], h: f64) -> Result<DenseStep, E>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    let mut ws = Workspace::new(y.len());
    f(t, y, &mut ws.k[0])?;
    if h == 0.0 {
        ws.y1.copy_from_slice(y);
        let k0 = ws.k[0].clone();
        ws.k[6].copy_from_slice(&k0);
        return Ok(dense_from(t, f64::MIN_POSITIVE, y, &ws));
    }
    dp_step(f, t, y, h, &mut ws)?;
    Ok(dense_from(t, h, y, &ws))
}

fn initial_step<E, F>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    span: f64,
    opts: &OdeOptions,
) -> Result<f64, E>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    let n = y0.len();
    let sc: Vec<f64> = y0.iter().map(|y| opts.atol + opts.rtol * y.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span).min(opts.h_max);
    let y1: Vec<f64> = (0..n).map(|i| y0[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    f(t0 + h0, &y1, &mut f1)?;
    let diff: Vec<f64> = (0..n).map(|i| (f1[i] - f0[i]) / h0).collect();
    let d2 = rms(&diff);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1).min(span).min(opts.h_max))
}

/// Integrate `y' = f(t, y)` from `t0` to `t1`.
///
/// When `event` is given the integration stops at the first point where it
/// becomes negative (it is assumed non-negative at `t0`); the root is found
/// by bisection on the interpolant and polished with exact sub-steps.
pub fn integrate<E, F, G>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    opts: &OdeOptions,
    mut event: Option<&mut G>,
) -> Result<(DenseOutput, Termination), OdeError<E>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    G: FnMut(f64, &[f64]) -> f64,
{
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(OdeError::BadInterval { t0, t1 });
    }
    let n = y0.len();
    let mut ws = Workspace::new(n);
    let mut y = y0.to_vec();
    let mut t = t0;
    f(t, &y, &mut ws.k[0]).map_err(OdeError::Rhs)?;
    let span = t1 - t0;
    let mut h = match opts.h_init {
        Some(h) => h.min(span),
        None => {
            let f0 = ws.k[0].clone();
            initial_step(f, t0, &y, &f0, span, opts).map_err(OdeError::Rhs)?
        }
    };
    let mut steps = Vec::new();
    let mut n_steps = 0usize;
    let mut last_rhs_err: Option<E> = None;
    loop {
        if n_steps >= opts.max_steps {
            return Err(OdeError::TooManySteps(opts.max_steps));
        }
        let remaining = t1 - t;
        let h_min = 1e-14 * t.abs().max(span).max(1e-300);
        if h < h_min {
            return Err(match last_rhs_err.take() {
                Some(e) => OdeError::Rhs(e),
                None => OdeError::StepUnderflow { t },
            });
        }
        let last = h >= remaining * (1.0 - 1e-12);
        let h_try = if last { remaining } else { h.min(opts.h_max) };
        let k0 = ws.k[0].clone();
        match dp_step(f, t, &y, h_try, &mut ws) {
            Err(e) => {
                // A trial stage left the domain: shrink and retry.
                ws.k[0] = k0;
                last_rhs_err = Some(e);
                h = h_try * 0.25;
                continue;
            }
            Ok(()) => {}
        }
        let err = error_norm(&y, &ws, h_try, opts);
        if !err.is_finite() {
            ws.k[0] = k0;
            h = h_try * 0.25;
            continue;
        }
        if err > 1.0 {
            ws.k[0] = k0;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h = h_try * fac;
            continue;
        }
        last_rhs_err = None;
        n_steps += 1;
        if ws.y1.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { t: t + h_try });
        }
        let dense = dense_from(t, h_try, &y, &ws);
        if let Some(ev) = event.as_deref_mut() {
            let g1 = ev(t + h_try, &ws.y1);
            if g1 < 0.0 {
                let (te, step) = localise(f, ev, &dense, &y).map_err(OdeError::Rhs)?;
                steps.push(step);
                return Ok((DenseOutput { dim: n, steps }, Termination::Event { t: te }));
            }
        }
        steps.push(dense);
        t += h_try;
        y.copy_from_slice(&ws.y1);
        let k6 = ws.k[6].clone();
        ws.k[0].copy_from_slice(&k6);
        if last {
            return Ok((DenseOutput { dim: n, steps }, Termination::Reached));
        }
        let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        h = (h_try * fac).min(opts.h_max);
    }
}

fn localise<E, F, G>(
    f: &mut F,
    ev: &mut G,
    dense: &DenseStep,
    y0: &[f64],
) -> Result<(f64, DenseStep), E>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    G: FnMut(f64, &[f64]) -> f64,
{
    let n = y0.len();
    let mut buf = vec![0.0; n];
    let (mut lo, mut hi) = (dense.t0, dense.t1());
    let scale = hi.abs().max(1.0);
    while hi - lo > 1e-14 * scale {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        dense.eval_into(mid, &mut buf);
        if ev(mid, &buf) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Secant polish on exact sub-steps from the start of the accepted step.
    let t0 = dense.t0;
    let mut g_of = |s: f64, f: &mut F| -> Result<(f64, DenseStep), E> {
        let st = single_step(f, t0, y0, s - t0)?;
        let end = st.end();
        Ok((ev(s, &end), st))
    };
    let mut a = lo;
    let mut b = hi;
    let (mut ga, _) = g_of(a, f)?;
    let (mut gb, mut sb) = g_of(b, f)?;
    for _ in 0..8 {
        if gb == ga || (b - a).abs() < 1e-15 * scale {
            break;
        }
        let c = b - gb * (b - a) / (gb - ga);
        if !c.is_finite() || c <= t0 {
            break;
        }
        let (gc, sc) = g_of(c, f)?;
        a = b;
        ga = gb;
        b = c;
        gb = gc;
        sb = sc;
        if gc.abs() < 1e-15 {
            break;
        }
    }
    // Keep the stop on the far side so callers see the sign change.
    if gb > 0.0 && hi > b {
        let (_, sh) = g_of(hi, f)?;
        return Ok((hi, sh));
    }
    Ok((b, sb))
}
