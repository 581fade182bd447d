//! Deterministic numerical kernels: explicit Runge–Kutta integration and
//! central finite differences.
//!
//! Both integrators accept anything implementing [`OdeSystem`]. Plain closures
//! `Fn(t, x, dx)` implement it with a no-op projection; the closed-loop
//! simulator implements it directly so estimates can be re-clamped onto their
//! parameter box after every accepted step.

use thiserror::Error;

/// Right-hand side of `ẋ = F(t, x)` plus an optional post-step projection.
pub trait OdeSystem {
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]);

    /// Applied to the state after every accepted step.
    fn project(&self, _x: &mut [f64]) {}
}

impl<F> OdeSystem for F
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        self(t, x, dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Classic fixed-step fourth-order Runge–Kutta.
    Rk4 { step: f64 },
    /// Dormand–Prince 5(4) with proportional step control.
    Rk45 {
        rel_tol: f64,
        abs_tol: f64,
        min_step: f64,
        max_step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSpec {
    pub method: Method,
    /// Integration horizon `T` in seconds, measured from `t0`.
    pub horizon: f64,
}

impl IntegratorSpec {
    pub fn rk4(step: f64, horizon: f64) -> Self {
        Self {
            method: Method::Rk4 { step },
            horizon,
        }
    }

    pub fn rk45(rel_tol: f64, abs_tol: f64, min_step: f64, max_step: f64, horizon: f64) -> Self {
        Self {
            method: Method::Rk45 {
                rel_tol,
                abs_tol,
                min_step,
                max_step,
            },
            horizon,
        }
    }

    pub fn validate(&self) -> Result<(), NumError> {
        let bad = |key: &'static str, msg: &str| {
            Err(NumError::InvalidSpec {
                key,
                message: msg.to_string(),
            })
        };
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon", "must be positive and finite");
        }
        match self.method {
            Method::Rk4 { step } => {
                if !(step > 0.0 && step.is_finite()) {
                    return bad("step", "must be positive and finite");
                }
            }
            Method::Rk45 {
                rel_tol,
                abs_tol,
                min_step,
                max_step,
            } => {
                if !(rel_tol > 0.0 && rel_tol.is_finite()) {
                    return bad("rel_tol", "must be positive");
                }
                if !(abs_tol > 0.0 && abs_tol.is_finite()) {
                    return bad("abs_tol", "must be positive");
                }
                if !(min_step > 0.0 && min_step <= max_step && max_step.is_finite()) {
                    return bad("min_step", "require 0 < min_step <= max_step");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum NumError {
    #[error("invalid {key}: {message}")]
    InvalidSpec { key: &'static str, message: String },
    #[error("wrong integrator: {0}")]
    WrongMethod(&'static str),
    #[error("integration diverged after t = {t}")]
    Diverged { t: f64, partial: Box<Trajectory> },
    #[error("step size underflow ({step:e} below min_step) at t = {t}")]
    StepUnderflow {
        t: f64,
        step: f64,
        partial: Box<Trajectory>,
    },
    #[error("output grid point {0} lies outside the integration interval")]
    GridOutOfRange(f64),
    #[error("field evaluation is not finite in component {component}")]
    NonFiniteField { component: usize },
}

impl NumError {
    /// Partial trajectory recorded before a divergence or underflow.
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            NumError::Diverged { partial, .. } | NumError::StepUnderflow { partial, .. } => {
                Some(partial)
            }
            _ => None,
        }
    }

    pub fn into_partial(self) -> Option<Trajectory> {
        match self {
            NumError::Diverged { partial, .. } | NumError::StepUnderflow { partial, .. } => {
                Some(*partial)
            }
            _ => None,
        }
    }
}

/// Sampled trajectory stored row-major: one state vector per sample time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
}

impl Trajectory {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.times.push(t);
        self.states.extend_from_slice(x);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.times
            .iter()
            .copied()
            .zip(self.states.chunks_exact(self.dim.max(1)))
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|a| a.is_finite())
}

/// Scratch buffers for one RK4 step.
struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// One classic RK4 step in place. Returns `false` if any stage is non-finite.
fn rk4_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, x: &mut [f64], h: f64, w: &mut Rk4Work) -> bool {
    let n = x.len();
    sys.rhs(t, x, &mut w.k1);
    if !all_finite(&w.k1) {
        return false;
    }
    for i in 0..n {
        w.tmp[i] = x[i] + 0.5 * h * w.k1[i];
    }
    sys.rhs(t + 0.5 * h, &w.tmp, &mut w.k2);
    if !all_finite(&w.k2) {
        return false;
    }
    for i in 0..n {
        w.tmp[i] = x[i] + 0.5 * h * w.k2[i];
    }
    sys.rhs(t + 0.5 * h, &w.tmp, &mut w.k3);
    if !all_finite(&w.k3) {
        return false;
    }
    for i in 0..n {
        w.tmp[i] = x[i] + h * w.k3[i];
    }
    sys.rhs(t + h, &w.tmp, &mut w.k4);
    if !all_finite(&w.k4) {
        return false;
    }
    for i in 0..n {
        x[i] += h / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
    }
    all_finite(x)
}

/// Fixed-step RK4, recording every step.
pub fn integrate_fixed<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    spec: &IntegratorSpec,
) -> Result<Trajectory, NumError> {
    integrate_fixed_strided(sys, t0, x0, spec, 1)
}

/// Fixed-step RK4 recording every `stride`-th step (the final state is always
/// recorded). Sample times are `t0 + k·step`; when the horizon is not a whole
/// number of steps the last step is shortened to land on `t0 + T`.
pub fn integrate_fixed_strided<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    spec: &IntegratorSpec,
    stride: usize,
) -> Result<Trajectory, NumError> {
    spec.validate()?;
    let Method::Rk4 { step } = spec.method else {
        return Err(NumError::WrongMethod("integrate_fixed requires Rk4"));
    };
    let stride = stride.max(1);
    let n = x0.len();
    let steps = ((spec.horizon / step) - 1e-9).ceil().max(1.0) as usize;
    let mut traj = Trajectory::new(n);
    let mut x = x0.to_vec();
    sys.project(&mut x);
    traj.push(t0, &x);
    let mut work = Rk4Work::new(n);
    let t_end = t0 + spec.horizon;
    for k in 0..steps {
        let t = t0 + k as f64 * step;
        let last = k + 1 == steps;
        let h = if last { t_end - t } else { step };
        if !rk4_step(sys, t, &mut x, h, &mut work) {
            return Err(NumError::Diverged {
                t,
                partial: Box::new(traj),
            });
        }
        sys.project(&mut x);
        if last || (k + 1) % stride == 0 {
            let t_next = if last { t_end } else { t0 + (k + 1) as f64 * step };
            traj.push(t_next, &x);
        }
    }
    Ok(traj)
}

/// Step statistics reported by the adaptive integrator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdaptiveStats {
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Cubic Hermite interpolation on `[t0, t1]` from endpoint values and slopes.
pub fn hermite(t0: f64, y0: &[f64], f0: &[f64], t1: f64, y1: &[f64], f1: &[f64], t: f64, out: &mut [f64]) {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for i in 0..out.len() {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
}

/// Embedded RK45 with dense output on a caller-given grid.
///
/// The step sequence does not depend on `grid`; grid values are obtained by
/// Hermite interpolation between accepted steps, so refining the grid never
/// changes values at shared grid points.
pub fn integrate_adaptive<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    spec: &IntegratorSpec,
    grid: &[f64],
) -> Result<(Trajectory, AdaptiveStats), NumError> {
    spec.validate()?;
    let Method::Rk45 {
        rel_tol,
        abs_tol,
        min_step,
        max_step,
    } = spec.method
    else {
        return Err(NumError::WrongMethod("integrate_adaptive requires Rk45"));
    };
    let t_end = t0 + spec.horizon;
    if let Some(&bad) = grid
        .iter()
        .find(|&&g| g < t0 - 1e-12 || g > t_end + 1e-12 || !g.is_finite())
    {
        return Err(NumError::GridOutOfRange(bad));
    }
    let n = x0.len();
    let mut traj = Trajectory::new(n);
    let mut stats = AdaptiveStats::default();

    let mut y = x0.to_vec();
    sys.project(&mut y);
    let mut f0 = vec![0.0; n];
    sys.rhs(t0, &y, &mut f0);
    if !all_finite(&f0) {
        return Err(NumError::Diverged {
            t: t0,
            partial: Box::new(traj),
        });
    }

    let mut gi = 0;
    while gi < grid.len() && grid[gi] <= t0 {
        traj.push(grid[gi], &y);
        gi += 1;
    }

    // Initial step from the ratio of scaled state and slope norms.
    let scaled_norm = |v: &[f64], base: &[f64]| -> f64 {
        let s: f64 = v
            .iter()
            .zip(base)
            .map(|(a, b)| {
                let sc = abs_tol + rel_tol * b.abs();
                (a / sc).powi(2)
            })
            .sum();
        (s / n.max(1) as f64).sqrt()
    };
    let d0 = scaled_norm(&y, &y);
    let d1 = scaled_norm(&f0, &y);
    let mut h = if d0 > 1e-5 && d1 > 1e-5 { 0.01 * d0 / d1 } else { 1e-6 };
    h = h.clamp(min_step, max_step);

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut dense = vec![0.0; n];
    let mut t = t0;

    while t < t_end {
        let remaining = t_end - t;
        let last = h >= remaining;
        let h_try = if last { remaining } else { h };

        k[0].copy_from_slice(&f0);
        let mut finite = true;
        for stage in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(stage) {
                    acc += h_try * A[stage][j] * kj[i];
                }
                tmp[i] = acc;
            }
            sys.rhs(t + C[stage] * h_try, &tmp, &mut k[stage]);
            if !all_finite(&k[stage]) {
                finite = false;
                break;
            }
        }
        if !finite {
            return Err(NumError::Diverged {
                t,
                partial: Box::new(traj),
            });
        }
        // Stage 7 is evaluated at the fifth-order solution (FSAL).
        y_new.copy_from_slice(&tmp);
        let mut err_acc = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            e *= h_try;
            let sc = abs_tol + rel_tol * y[i].abs().max(y_new[i].abs());
            err_acc += (e / sc).powi(2);
        }
        let err = (err_acc / n.max(1) as f64).sqrt();

        if err <= 1.0 {
            stats.accepted += 1;
            let t_new = if last { t_end } else { t + h_try };
            sys.project(&mut y_new);
            sys.rhs(t_new, &y_new, &mut f1);
            if !all_finite(&f1) {
                return Err(NumError::Diverged {
                    t,
                    partial: Box::new(traj),
                });
            }
            while gi < grid.len() && grid[gi] <= t_new + 1e-12 {
                let g = grid[gi].min(t_new);
                hermite(t, &y, &f0, t_new, &y_new, &f1, g, &mut dense);
                traj.push(grid[gi], &dense);
                gi += 1;
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut f0, &mut f1);
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h_try * factor).min(max_step);
            if last {
                break;
            }
        } else {
            stats.rejected += 1;
            let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h = h_try * factor;
            if !err.is_finite() {
                h = h_try * 0.2;
            }
        }
        if h < min_step {
            return Err(NumError::StepUnderflow {
                t,
                step: h,
                partial: Box::new(traj),
            });
        }
    }
    Ok((traj, stats))
}

/// Central-difference gradient of a scalar field, `O(h²)` accurate for smooth
/// fields.
pub fn finite_diff_gradient<F>(field: F, point: &[f64], h: f64) -> Result<Vec<f64>, NumError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(NumError::InvalidSpec {
            key: "h",
            message: "perturbation must be positive".into(),
        });
    }
    let mut p = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = p[i];
        p[i] = orig + h;
        let fp = field(&p);
        p[i] = orig - h;
        let fm = field(&p);
        p[i] = orig;
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(NumError::NonFiniteField { component: i });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, x: &[f64], dx: &mut [f64]) {
        dx[0] = -x[0];
    }

    fn oscillator(_t: f64, x: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -x[0];
    }

    #[test]
    fn constant_solution_is_preserved() {
        let zero = |_t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = 0.0;
        let tr = integrate_fixed(&zero, 0.0, &[2.0], &IntegratorSpec::rk4(0.1, 1.0)).unwrap();
        assert_eq!(tr.last_state().unwrap(), &[2.0]);
        assert!((tr.times().last().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let tr = integrate_fixed(&decay, 0.0, &[1.0], &IntegratorSpec::rk4(1e-3, 1.0)).unwrap();
        assert_eq!(tr.len(), 1001);
        let x1 = tr.last_state().unwrap()[0];
        assert!((x1 - (-1.0f64).exp()).abs() <= 1e-9, "{x1}");
    }

    #[test]
    fn rk4_oscillator_conserves_energy() {
        let tr = integrate_fixed(&oscillator, 0.0, &[1.0, 0.0], &IntegratorSpec::rk4(1e-3, 10.0)).unwrap();
        let drift = tr
            .iter()
            .map(|(_, x)| (x[0] * x[0] + x[1] * x[1] - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-6, "{drift}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |h: f64| {
            let tr = integrate_fixed(&decay, 0.0, &[1.0], &IntegratorSpec::rk4(h, 1.0)).unwrap();
            (tr.last_state().unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let e = [err(1e-2), err(5e-3), err(2.5e-3)];
        assert!(e[0] / e[1] >= 8.0, "{e:?}");
        assert!(e[1] / e[2] >= 8.0, "{e:?}");
    }

    #[test]
    fn strided_output_keeps_endpoint() {
        let tr = integrate_fixed_strided(&decay, 0.0, &[1.0], &IntegratorSpec::rk4(1e-3, 1.0), 10).unwrap();
        assert_eq!(tr.len(), 101);
        assert!((tr.time(50) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_last_step_lands_on_horizon() {
        let tr = integrate_fixed(&decay, 0.0, &[1.0], &IntegratorSpec::rk4(0.3, 1.0)).unwrap();
        assert_eq!(tr.len(), 5);
        assert_eq!(*tr.times().last().unwrap(), 1.0);
    }

    #[test]
    fn fixed_reports_divergence_with_partial_trace() {
        let blow = |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = x[0] * x[0];
        let err = integrate_fixed(&blow, 0.0, &[1.0], &IntegratorSpec::rk4(1e-2, 2.0)).unwrap_err();
        match &err {
            NumError::Diverged { t, partial } => {
                assert!(*t <= 1.1, "{t}");
                assert!(!partial.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(IntegratorSpec::rk4(0.0, 1.0).validate().is_err());
        assert!(IntegratorSpec::rk4(0.1, -1.0).validate().is_err());
        assert!(IntegratorSpec::rk45(0.0, 1e-9, 1e-6, 1.0, 1.0).validate().is_err());
        assert!(IntegratorSpec::rk45(1e-6, 1e-9, 1.0, 0.1, 1.0).validate().is_err());
        let spec = IntegratorSpec::rk45(1e-6, 1e-9, 1e-6, 0.1, 1.0);
        assert!(matches!(
            integrate_fixed(&decay, 0.0, &[1.0], &spec),
            Err(NumError::WrongMethod(_))
        ));
    }

    fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| t_end * k as f64 / n as f64).collect()
    }

    #[test]
    fn adaptive_matches_exponential_decay() {
        let spec = IntegratorSpec::rk45(1e-8, 1e-12, 1e-10, 0.5, 1.0);
        let (tr, stats) = integrate_adaptive(&decay, 0.0, &[1.0], &spec, &uniform_grid(1.0, 10)).unwrap();
        assert_eq!(tr.len(), 11);
        let x1 = tr.last_state().unwrap()[0];
        assert!((x1 - (-1.0f64).exp()).abs() <= 1e-7, "{x1}");
        assert!(stats.accepted > 0);
    }

    #[test]
    fn adaptive_zero_field_never_rejects() {
        let zero = |_t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = 0.0;
        let spec = IntegratorSpec::rk45(1e-8, 1e-10, 1e-9, 0.25, 3.0);
        let (tr, stats) = integrate_adaptive(&zero, 0.0, &[4.0], &spec, &uniform_grid(3.0, 30)).unwrap();
        assert_eq!(stats.rejected, 0);
        assert!(tr.iter().all(|(_, x)| x[0] == 4.0));
    }

    #[test]
    fn adaptive_detects_finite_escape() {
        let blow = |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = x[0] * x[0];
        let spec = IntegratorSpec::rk45(1e-8, 1e-10, 1e-10, 0.1, 2.0);
        let err = integrate_adaptive(&blow, 0.0, &[1.0], &spec, &uniform_grid(2.0, 20)).unwrap_err();
        let t = match err {
            NumError::Diverged { t, .. } | NumError::StepUnderflow { t, .. } => t,
            other => panic!("unexpected {other:?}"),
        };
        assert!(t <= 1.0, "{t}");
    }

    #[test]
    fn adaptive_output_is_grid_independent() {
        let spec = IntegratorSpec::rk45(1e-8, 1e-10, 1e-10, 0.5, 10.0);
        let (coarse, _) = integrate_adaptive(&oscillator, 0.0, &[1.0, 0.0], &spec, &uniform_grid(10.0, 10)).unwrap();
        let (fine, _) = integrate_adaptive(&oscillator, 0.0, &[1.0, 0.0], &spec, &uniform_grid(10.0, 1000)).unwrap();
        for i in 0..=10 {
            let a = coarse.state(i);
            let b = fine.state(100 * i);
            for d in 0..2 {
                assert!((a[d] - b[d]).abs() <= 10.0 * 1e-8);
            }
        }
    }

    #[test]
    fn adaptive_rejects_grid_outside_interval() {
        let spec = IntegratorSpec::rk45(1e-8, 1e-10, 1e-10, 0.5, 1.0);
        assert!(matches!(
            integrate_adaptive(&decay, 0.0, &[1.0], &spec, &[0.0, 2.0]),
            Err(NumError::GridOutOfRange(_))
        ));
    }

    #[test]
    fn hermite_reproduces_cubics() {
        // y = t³ on [1, 2]
        let mut out = [0.0];
        hermite(1.0, &[1.0], &[3.0], 2.0, &[8.0], &[12.0], 1.5, &mut out);
        assert!((out[0] - 3.375).abs() < 1e-14);
    }

    #[test]
    fn finite_difference_of_square() {
        let g = finite_diff_gradient(|p| p[0] * p[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() <= 1e-8);
    }

    #[test]
    fn finite_difference_of_constant_is_zero() {
        let g = finite_diff_gradient(|_| 7.5, &[1.0, -2.0, 0.3], 1e-4).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn finite_difference_propagates_non_finite() {
        let r = finite_diff_gradient(|p| if p[1] > 0.0 { f64::NAN } else { 0.0 }, &[0.0, 0.0], 1e-3);
        assert!(matches!(r, Err(NumError::NonFiniteField { component: 1 })));
        assert!(finite_diff_gradient(|_| 0.0, &[0.0], 0.0).is_err());
    }
}
