//! Closed-loop orchestration: the augmented ODE over `(x, θ̂, φ̂, ρ)`,
//! scenario runs, Lyapunov monitors, gain-rate audits, and summary metrics.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::adapt::{self, AdaptConfig, AdaptError, GainFunction, GainLaw, PredictionFilter};
use crate::numkit::{self, IntegratorSpec, Method, NumError, OdeSystem, Trajectory};
use crate::plant::{self, BuiltinModel, ModelId, ParamBox, PlantError, SystemModel, TrueParams};
use crate::uclf::{self, Uclf, UclfConstants, UclfError, UclfId};

#[derive(Debug, Error)]
pub enum SimError {
    /// Invalid setting; `key` names the offending setting.
    #[error("invalid {key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Uclf(#[from] UclfError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Numeric(NumError),
    #[error("integration diverged at t = {t}")]
    Diverged { t: f64, partial: Box<Trace> },
}

impl SimError {
    pub fn invalid(key: &'static str, message: impl Into<String>) -> Self {
        SimError::Invalid {
            key,
            message: message.into(),
        }
    }

    /// Trace recorded up to a divergence.
    pub fn partial_trace(&self) -> Option<&Trace> {
        match self {
            SimError::Diverged { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// Relative slack of the per-step Lyapunov monotonicity check.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// Absolute slack of the gain-rate audit.
pub const RATE_AUDIT_SLACK: f64 = 1e-9;
/// Default settling tolerance on `‖x‖`.
pub const SETTLING_TOL: f64 = 1e-2;

/// A complete closed-loop experiment. `ρ(0) = 0` is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: ModelId,
    pub uclf: UclfId,
    pub constants: UclfConstants,
    pub adapt: AdaptConfig,
    pub integrator: IntegratorSpec,
    /// Spacing of the recorded grid; a whole multiple of the RK4 step.
    pub output_step: f64,
    pub x0: DVector<f64>,
    pub theta_hat0: DVector<f64>,
    pub phi_hat0: DVector<f64>,
    pub truth: TrueParams,
    pub theta_box: ParamBox,
    pub phi_box: ParamBox,
    /// `‖x‖` above which the run is reported as diverged.
    pub divergence_bound: f64,
    /// Start the prediction filter so that `ε = W_fᵀθ̃` holds from `t = 0`.
    pub exact_filter_init: bool,
}

impl Scenario {
    /// Built-in defaults for `model` under `law`: RK4 with step `1e-3`,
    /// horizon 50, and the model's default initial state and estimates.
    pub fn defaults(model: ModelId, law: GainLaw) -> Self {
        let m = BuiltinModel::new(model);
        let theta_box = m.default_theta_box();
        let phi_box = m.default_phi_box();
        let d = m.dims();
        let (theta_hat0, phi_hat0) = m.default_estimates();
        Self {
            name: format!("{model}-{law}"),
            model,
            uclf: UclfId::for_model(model),
            constants: UclfConstants::default(),
            adapt: AdaptConfig::defaults(law, &theta_box, d.q),
            integrator: IntegratorSpec::rk4(1e-3, 50.0),
            output_step: 1e-2,
            x0: m.default_x0(),
            theta_hat0,
            phi_hat0,
            truth: m.default_truth(),
            theta_box,
            phi_box,
            divergence_bound: 1e6,
            exact_filter_init: true,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.integrator.horizon
    }

    fn rk4_stride(&self) -> Result<Option<usize>, SimError> {
        match self.integrator.method {
            Method::Rk4 { step } => {
                let ratio = self.output_step / step;
                let k = ratio.round();
                if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
                    return Err(SimError::invalid(
                        "output_step",
                        format!(
                            "{} must be a whole multiple of the integration step {step}",
                            self.output_step
                        ),
                    ));
                }
                Ok(Some(k as usize))
            }
            Method::Rk45 { .. } => Ok(None),
        }
    }

    /// Checks every invariant that can be checked before integrating.
    pub fn validate(&self) -> Result<(), SimError> {
        let model = BuiltinModel::new(self.model);
        let d = model.dims();
        let len = |key: &'static str, want: usize, got: usize| {
            if want == got {
                Ok(())
            } else {
                Err(SimError::invalid(key, format!("has length {got}, expected {want}")))
            }
        };
        len("x0", d.n, self.x0.len())?;
        len("theta_hat0", d.p, self.theta_hat0.len())?;
        len("phi_hat0", d.q, self.phi_hat0.len())?;
        len("theta_box", d.p, self.theta_box.dim())?;
        len("phi_box", d.q, self.phi_box.dim())?;
        len("theta_true", d.p, self.truth.theta.len())?;
        len("phi_true", d.q, self.truth.phi.len())?;
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(SimError::invalid("x0", "must be finite"));
        }
        let member = |key: &'static str, b: &ParamBox, v: &DVector<f64>| {
            b.check_member(v).map_err(|e| SimError::invalid(key, e.to_string()))
        };
        member("theta_true", &self.theta_box, &self.truth.theta)?;
        member("phi_true", &self.phi_box, &self.truth.phi)?;
        member("theta_hat0", &self.theta_box, &self.theta_hat0)?;
        member("phi_hat0", &self.phi_box, &self.phi_hat0)?;
        uclf::build_family(self.uclf, self.constants, self.model, &self.theta_box)?;
        self.adapt.validate(&self.theta_box, d.q)?;
        if self.adapt.law == GainLaw::Remark5 && self.adapt.log_offset < 1.0 {
            return Err(SimError::invalid(
                "log_offset",
                format!(
                    "the log-form law needs c >= 1 to respect the gain-rate bound, got {}",
                    self.adapt.log_offset
                ),
            ));
        }
        self.integrator.validate().map_err(SimError::Numeric)?;
        if !(self.output_step > 0.0 && self.output_step <= self.horizon()) {
            return Err(SimError::invalid(
                "output_step",
                format!("{} must lie in (0, horizon]", self.output_step),
            ));
        }
        self.rk4_stride()?;
        if !(self.divergence_bound > 0.0) {
            return Err(SimError::invalid("divergence_bound", "must be positive"));
        }
        Ok(())
    }
}

/// Offsets of the blocks of the augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    n: usize,
    m: usize,
    p: usize,
    q: usize,
    r: usize,
    filter: usize,
    acc: usize,
}

impl Layout {
    fn theta(&self) -> usize {
        self.n
    }
    fn phi(&self) -> usize {
        self.n + self.p
    }
    fn rho(&self) -> usize {
        self.phi() + self.q
    }
    fn filter_off(&self) -> usize {
        self.rho() + self.r
    }
    fn acc_off(&self) -> usize {
        self.filter_off() + self.filter
    }
    fn len(&self) -> usize {
        self.acc_off() + self.acc
    }
}

/// One recorded sample of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub rho: Vec<f64>,
    pub gamma: Vec<f64>,
    pub v: f64,
    pub q: f64,
    pub vc: f64,
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    /// Realized `γ̇`; not exported.
    #[serde(skip)]
    pub gamma_rate: Vec<f64>,
    /// Leakage law: part of `γ̇` driven by `w`; not exported.
    #[serde(skip)]
    pub gamma_rate_input: Vec<f64>,
    /// `Vc` without the forward-looking leakage integral; not exported.
    #[serde(skip)]
    pub vc_algebraic: f64,
}

/// Dimensions of a trace's vector columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub dims: TraceDims,
    pub law: String,
    pub nominal_gains: Vec<f64>,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// Closed-loop vector field over the augmented state.
pub struct ClosedLoop {
    model: BuiltinModel,
    family: Box<dyn Uclf>,
    cfg: AdaptConfig,
    theta_box: ParamBox,
    phi_box: ParamBox,
    truth: TrueParams,
    layout: Layout,
    filter: Option<PredictionFilter>,
    matched_gain_inv: Option<DMatrix<f64>>,
    divergence_bound: f64,
}

impl std::fmt::Debug for ClosedLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosedLoop").field("layout", &self.layout).finish()
    }
}

struct Eval {
    row: TraceRow,
    dstate: Vec<f64>,
}

impl ClosedLoop {
    pub fn new(s: &Scenario) -> Result<Self, SimError> {
        s.validate()?;
        let model = BuiltinModel::new(s.model);
        let d = model.dims();
        let family = uclf::build_family(s.uclf, s.constants, s.model, &s.theta_box)?;
        let filter = s
            .adapt
            .composite
            .then(|| PredictionFilter::new(s.adapt.filter_pole, d.p, d.n));
        let layout = Layout {
            n: d.n,
            m: d.m,
            p: d.p,
            q: d.q,
            r: s.adapt.rho_dim(),
            filter: filter.map_or(0, |f| f.state_len()),
            acc: if s.adapt.law == GainLaw::Leakage { d.p } else { 0 },
        };
        let matched_gain_inv = if s.adapt.matched {
            s.adapt.matched_gain.clone().try_inverse()
        } else {
            None
        };
        Ok(Self {
            model,
            family,
            cfg: s.adapt.clone(),
            theta_box: s.theta_box.clone(),
            phi_box: s.phi_box.clone(),
            truth: s.truth.clone(),
            layout,
            filter,
            matched_gain_inv,
            divergence_bound: s.divergence_bound,
        })
    }

    pub fn state_len(&self) -> usize {
        self.layout.len()
    }

    pub fn initial_state(&self, s: &Scenario) -> Vec<f64> {
        let l = self.layout;
        let mut z = vec![0.0; l.len()];
        z[..l.n].copy_from_slice(s.x0.as_slice());
        z[l.theta()..l.theta() + l.p].copy_from_slice(s.theta_hat0.as_slice());
        z[l.phi()..l.phi() + l.q].copy_from_slice(s.phi_hat0.as_slice());
        if let Some(f) = &self.filter {
            let init = f.initial_state(s.x0.as_slice(), s.exact_filter_init);
            z[l.filter_off()..l.filter_off() + l.filter].copy_from_slice(&init);
        }
        z
    }

    fn frozen(&self) -> bool {
        self.cfg.is_frozen()
    }

    fn evaluate(&self, t: f64, z: &[f64]) -> Result<Eval, SimError> {
        let l = self.layout;
        let cfg = &self.cfg;
        let x = DVector::from_column_slice(&z[..l.n]);
        let mut theta_hat = DVector::from_column_slice(&z[l.theta()..l.theta() + l.p]);
        let mut phi_hat = DVector::from_column_slice(&z[l.phi()..l.phi() + l.q]);
        self.theta_box.clamp_slice(theta_hat.as_mut_slice());
        self.phi_box.clamp_slice(phi_hat.as_mut_slice());
        let rho = z[l.rho()..l.rho() + l.r].to_vec();

        let v = self.family.value(&x, &theta_hat, t);
        let q_diss = self.family.dissipation(&x, &theta_hat);
        let grad_x = self.family.grad_x(&x, &theta_hat, t);
        let grad_th = self.family.grad_theta(&x, &theta_hat, t);
        let delta = plant::regressor_unmatched(&self.model, &x, t)?;
        let b = self.model.input_matrix(&x, t);
        let psi = self.model.matched_regressor(&x, t);

        let mut u = self.family.control(&x, &theta_hat, t);
        if let Some(psi) = &psi {
            u += psi.transpose() * &phi_hat;
        }
        let dx = plant::eval_dynamics(&self.model, &x, &u, &self.truth.theta, &self.truth.phi, t)?;

        let r = &delta * &grad_x;
        let w: Vec<f64> = (0..l.p).map(|i| grad_th[i] * r[i]).collect();
        let nominal = cfg.nominal_gains();

        let mut gamma = vec![0.0; l.p];
        let mut gamma_rate = vec![0.0; l.p];
        let mut gamma_rate_input = vec![0.0; l.p];
        let mut rho_rate = vec![0.0; l.r];
        let mut filter_rate = vec![0.0; l.filter];
        let mut acc_rate = vec![0.0; l.acc];

        let theta_rate = if self.frozen() {
            DVector::zeros(l.p)
        } else if cfg.law == GainLaw::Monolithic {
            let ups = cfg.upsilon();
            let (u_val, _) = ups.eval(rho[0])?;
            let gm = DMatrix::from_diagonal(&DVector::from_vec(nominal.clone()));
            let mut rate = -u_val * (&gm * &r);
            if cfg.projection {
                rate = adapt::project_unchecked(&self.theta_box, &theta_hat, &rate);
            }
            rho_rate[0] = adapt::monolithic_rho_dot(&ups, rho[0], grad_th.dot(&rate), v, cfg.log_offset)?;
            let (_, slope) = ups.eval(rho[0])?;
            for i in 0..l.p {
                gamma[i] = u_val * nominal[i];
                gamma_rate[i] = slope * rho_rate[0] * nominal[i];
            }
            rate
        } else {
            for i in 0..l.p {
                gamma[i] = cfg.gains[i].eval(rho[i])?.0;
            }
            let mut rate = if let Some(f) = &self.filter {
                let fs = &z[l.filter_off()..l.filter_off() + l.filter];
                let (wf, eps) = f.outputs(fs, x.as_slice(), &theta_hat);
                adapt::composite_theta_dot(&gamma, &delta, &grad_x, cfg.composite_weight, &wf, &eps)?
            } else {
                adapt::theta_dot_unmatched(&gamma, &delta, &grad_x)
            };
            if cfg.projection {
                rate = adapt::project_unchecked(&self.theta_box, &theta_hat, &rate);
            }
            rate
        };

        let s: Vec<f64> = (0..l.p).map(|i| grad_th[i] * theta_rate[i]).collect();

        if !self.frozen() && cfg.law != GainLaw::Monolithic {
            let max_err = self.theta_box.max_errors();
            for i in 0..l.p {
                let g: &GainFunction = &cfg.gains[i];
                let gbar = g.nominal;
                let floor = g.floor();
                let eta = cfg.eta[i];
                let (rate_i, drho) = match cfg.law {
                    GainLaw::Leakage => {
                        let drho = adapt::leakage_rho_dot(g, rho[i], w[i], cfg.lambda[i], gbar, eta, max_err[i])?;
                        let (gm, slope) = g.eval(rho[i])?;
                        let k = gbar / (eta - max_err[i] * max_err[i]);
                        gamma_rate_input[i] = if w[i] < 0.0 { 2.0 * gm * gm * k * w[i] } else { 0.0 };
                        acc_rate[i] = rho[i].abs();
                        (slope * drho, drho)
                    }
                    law => {
                        let rate_i = match law {
                            GainLaw::Theorem1 => {
                                let err = theta_hat[i] - self.truth.theta[i];
                                adapt::theorem1_update(gbar, eta, err, gamma[i], s[i])?
                            }
                            GainLaw::Corollary1 => {
                                adapt::corollary1_update(gbar, floor, eta, max_err[i], gamma[i], s[i])?
                            }
                            GainLaw::Remark5 => adapt::remark5_update(
                                gbar,
                                floor,
                                eta,
                                max_err[i],
                                gamma[i],
                                s[i],
                                v,
                                cfg.log_offset,
                            )?,
                            GainLaw::Inverted => {
                                adapt::inverted_update(gbar, floor, eta, max_err[i], gamma[i], s[i])?
                            }
                            GainLaw::Leakage | GainLaw::Monolithic => unreachable!(),
                        };
                        (rate_i, adapt::rho_dot_from_gain_rate(g, rho[i], rate_i)?)
                    }
                };
                gamma_rate[i] = rate_i;
                rho_rate[i] = drho;
            }
        }

        let mut phi_rate = DVector::zeros(l.q);
        if cfg.matched {
            if let Some(psi) = &psi {
                phi_rate = adapt::matched_phi_dot(&cfg.matched_gain, &b, psi, &grad_x)?;
                if cfg.projection {
                    phi_rate = adapt::project_unchecked(&self.phi_box, &phi_hat, &phi_rate);
                }
            }
        }

        if let Some(f) = &self.filter {
            let fs = &z[l.filter_off()..l.filter_off() + l.filter];
            let drive = self.model.drift(&x, t) + &b * &u;
            f.derivative(fs, x.as_slice(), &delta, &drive, &mut filter_rate);
        }

        let vc = self.lyapunov_value(v, &theta_hat, &phi_hat, &gamma, &rho);

        let mut dz = Vec::with_capacity(l.len());
        dz.extend_from_slice(dx.as_slice());
        dz.extend_from_slice(theta_rate.as_slice());
        dz.extend_from_slice(phi_rate.as_slice());
        dz.extend_from_slice(&rho_rate);
        dz.extend_from_slice(&filter_rate);
        dz.extend_from_slice(&acc_rate);

        Ok(Eval {
            row: TraceRow {
                t,
                x: x.as_slice().to_vec(),
                u: u.as_slice().to_vec(),
                theta_hat: theta_hat.as_slice().to_vec(),
                phi_hat: phi_hat.as_slice().to_vec(),
                rho,
                gamma,
                v,
                q: q_diss,
                vc,
                s,
                w,
                gamma_rate,
                gamma_rate_input,
                vc_algebraic: vc,
            },
            dstate: dz,
        })
    }

    /// Oracle Lyapunov value for the active law (leakage: algebraic part).
    fn lyapunov_value(&self, v: f64, theta_hat: &DVector<f64>, phi_hat: &DVector<f64>, gamma: &[f64], rho: &[f64]) -> f64 {
        let cfg = &self.cfg;
        let err = theta_hat - &self.truth.theta;
        let mut vc = if self.frozen() {
            v
        } else if cfg.law == GainLaw::Monolithic {
            let ups = cfg.upsilon().eval(rho[0]).map_or(f64::NAN, |(u, _)| u);
            let quad: f64 = err
                .iter()
                .zip(&cfg.gains)
                .map(|(e, g)| e * e / g.nominal)
                .sum();
            ups * (v + cfg.log_offset) + 0.5 * quad
        } else {
            v + 0.5
                * err
                    .iter()
                    .zip(gamma)
                    .zip(cfg.eta.iter())
                    .map(|((e, g), eta)| (e * e - eta) / g)
                    .sum::<f64>()
        };
        if let Some(inv) = &self.matched_gain_inv {
            let pe = phi_hat - &self.truth.phi;
            vc += 0.5 * pe.dot(&(inv * &pe));
        }
        vc
    }

    fn trace_from(&self, traj: &Trajectory) -> Result<Trace, SimError> {
        let l = self.layout;
        let mut rows = Vec::with_capacity(traj.len());
        for (t, z) in traj.iter() {
            rows.push(self.evaluate(t, z)?.row);
        }
        if l.acc > 0 && !rows.is_empty() {
            // Vc = algebraic part + Σ η_i λ_i ∫_t^T |ρ_i|, from the integrated accumulators.
            let last = traj.state(traj.len() - 1)[l.acc_off()..].to_vec();
            for (k, row) in rows.iter_mut().enumerate() {
                let acc = &traj.state(k)[l.acc_off()..];
                let tail: f64 = (0..l.p)
                    .map(|i| self.cfg.eta[i] * self.cfg.lambda[i] * (last[i] - acc[i]))
                    .sum();
                row.vc = row.vc_algebraic + tail;
            }
        }
        Ok(Trace {
            dims: TraceDims {
                n: l.n,
                m: l.m,
                p: l.p,
                q: l.q,
                r: l.r,
            },
            law: self.cfg.law.as_str().to_string(),
            nominal_gains: self.cfg.nominal_gains(),
            rows,
        })
    }
}

impl OdeSystem for ClosedLoop {
    fn rhs(&self, t: f64, z: &[f64], dz: &mut [f64]) {
        let x_norm = z[..self.layout.n].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(x_norm <= self.divergence_bound) {
            dz.fill(f64::NAN);
            return;
        }
        match self.evaluate(t, z) {
            Ok(e) => dz.copy_from_slice(&e.dstate),
            Err(_) => dz.fill(f64::NAN),
        }
    }

    fn project(&self, z: &mut [f64]) {
        let l = self.layout;
        if self.cfg.projection {
            self.theta_box.clamp_slice(&mut z[l.theta()..l.theta() + l.p]);
            self.phi_box.clamp_slice(&mut z[l.phi()..l.phi() + l.q]);
        }
        if self.cfg.law.caps_at_nominal() {
            for r in &mut z[l.rho()..l.rho() + l.r] {
                *r = r.min(0.0);
            }
        }
    }
}

/// Lyapunov monotonicity summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub max_increase: f64,
    pub worst_time: Option<f64>,
    pub violations: usize,
    pub passed: bool,
}

/// Oracle `Vc` series of a trace.
pub fn lyapunov_series(trace: &Trace) -> Vec<f64> {
    trace.rows.iter().map(|r| r.vc).collect()
}

/// Per-step check `Vc[k+1] − Vc[k] ≤ 1e-8·(1 + |Vc[k]|)`.
pub fn lyapunov_monitor(trace: &Trace) -> MonotonicityReport {
    let mut rep = MonotonicityReport {
        max_increase: f64::NEG_INFINITY,
        worst_time: None,
        violations: 0,
        passed: true,
    };
    for pair in trace.rows.windows(2) {
        let inc = pair[1].vc - pair[0].vc;
        if inc > rep.max_increase || inc.is_nan() {
            rep.max_increase = inc;
            rep.worst_time = Some(pair[1].t);
        }
        if !(inc <= MONOTONE_SLACK * (1.0 + pair[0].vc.abs())) {
            rep.violations += 1;
        }
    }
    if trace.rows.len() < 2 {
        rep.max_increase = 0.0;
    }
    rep.passed = rep.violations == 0;
    rep
}

/// Per-sample audit of realized gain rates against the oracle bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainRateAudit {
    pub samples: usize,
    /// Samples where the realized `γ̇` exceeds the bound.
    pub violations: usize,
    pub worst_excess: f64,
    /// Leakage law: samples where the `w`-driven part exceeds the bound.
    pub input_violations: usize,
    /// Leakage law: largest mismatch between `γ̇ − input part` and `−2γ²λρ`.
    pub leakage_residual: f64,
}

impl GainRateAudit {
    /// Pass criterion for the law that produced the trace: the full rate for
    /// capped laws, the input-driven part for leakage (whose recovery term is
    /// positive by design).
    pub fn passed_for(&self, law: GainLaw) -> bool {
        match law {
            GainLaw::Leakage => self.input_violations == 0 && self.leakage_residual <= 1e-9,
            _ => self.violations == 0,
        }
    }
}

pub fn audit_gain_rates(trace: &Trace, scenario: &Scenario) -> GainRateAudit {
    let cfg = &scenario.adapt;
    let mut audit = GainRateAudit {
        samples: 0,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
        input_violations: 0,
        leakage_residual: 0.0,
    };
    if cfg.is_frozen() {
        audit.worst_excess = 0.0;
        return audit;
    }
    for row in &trace.rows {
        audit.samples += 1;
        for i in 0..trace.dims.p {
            let err = row.theta_hat[i] - scenario.truth.theta[i];
            let Ok(bound) = adapt::gain_rate_bound(row.gamma[i], cfg.eta[i], err, row.s[i]) else {
                audit.violations += 1;
                continue;
            };
            let excess = row.gamma_rate[i] - bound;
            audit.worst_excess = audit.worst_excess.max(excess);
            if !(excess <= RATE_AUDIT_SLACK) {
                audit.violations += 1;
            }
            if cfg.law == GainLaw::Leakage {
                if !(row.gamma_rate_input[i] - bound <= RATE_AUDIT_SLACK) {
                    audit.input_violations += 1;
                }
                let g = row.gamma[i];
                let leak = -2.0 * g * g * cfg.lambda[i] * row.rho[i];
                let resid = (row.gamma_rate[i] - row.gamma_rate_input[i] - leak).abs();
                audit.leakage_residual = audit.leakage_residual.max(resid / (1.0 + leak.abs()));
            }
        }
    }
    audit
}

/// Summary statistics of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// First time after which `‖x‖ ≤ tol` holds for the rest of the trace.
    pub settling_time: Option<f64>,
    pub final_norm: f64,
    pub max_norm: f64,
    /// `(γ̄_i − min_t γ_i)/γ̄_i`, zero for frozen channels.
    pub gain_reduction: Vec<f64>,
    /// `|γ_i(T) − γ̄_i|`.
    pub final_gain_error: Vec<f64>,
    /// Largest per-step increase of `Vc`.
    pub vc_max_increase: f64,
}

pub fn compute_metrics(trace: &Trace, settling_tol: f64) -> Metrics {
    let norm = |r: &TraceRow| r.x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut settling_time = None;
    for r in trace.rows.iter().rev() {
        if norm(r) <= settling_tol {
            settling_time = Some(r.t);
        } else {
            break;
        }
    }
    let p = trace.dims.p;
    let mut gain_reduction = vec![0.0; p];
    let mut final_gain_error = vec![0.0; p];
    for i in 0..p {
        let nominal = trace.nominal_gains[i];
        if nominal > 0.0 {
            let min = trace.rows.iter().map(|r| r.gamma[i]).fold(f64::INFINITY, f64::min);
            gain_reduction[i] = ((nominal - min) / nominal).max(0.0);
        }
        if let Some(last) = trace.rows.last() {
            final_gain_error[i] = (last.gamma[i] - nominal).abs();
        }
    }
    Metrics {
        settling_time,
        final_norm: trace.rows.last().map_or(f64::NAN, norm),
        max_norm: trace.rows.iter().map(norm).fold(0.0, f64::max),
        gain_reduction,
        final_gain_error,
        vc_max_increase: lyapunov_monitor(trace).max_increase,
    }
}

/// Integrates a scenario and returns its trace and metrics. On divergence the
/// error carries the trace recorded so far.
pub fn run_scenario(s: &Scenario) -> Result<(Trace, Metrics), SimError> {
    let sys = ClosedLoop::new(s)?;
    let z0 = sys.initial_state(s);
    let traj = match s.rk4_stride()? {
        Some(stride) => numkit::integrate_fixed_strided(&sys, 0.0, &z0, &s.integrator, stride),
        None => {
            let count = (s.horizon() / s.output_step).round() as usize;
            let mut grid: Vec<f64> = (0..=count)
                .map(|k| (k as f64 * s.output_step).min(s.horizon()))
                .collect();
            if *grid.last().unwrap_or(&0.0) < s.horizon() {
                grid.push(s.horizon());
            }
            numkit::integrate_adaptive(&sys, 0.0, &z0, &s.integrator, &grid).map(|(t, _)| t)
        }
    };
    let traj = match traj {
        Ok(t) => t,
        Err(e) => {
            let t = match &e {
                NumError::Diverged { t, .. } | NumError::StepUnderflow { t, .. } => *t,
                _ => return Err(SimError::Numeric(e)),
            };
            let partial = e.into_partial().unwrap_or_else(|| Trajectory::new(z0.len()));
            let trace = sys.trace_from(&partial)?;
            return Err(SimError::Diverged {
                t,
                partial: Box::new(trace),
            });
        }
    };
    let trace = sys.trace_from(&traj)?;
    let metrics = compute_metrics(&trace, SETTLING_TOL);
    Ok((trace, metrics))
}

/// Exogenous signal driving the leakage harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SignalSpec {
    Zero,
    /// `amplitude` on `[0, duration)`, zero afterwards.
    Pulse { amplitude: f64, duration: f64 },
    /// `amplitude·e^{−rate·t}`.
    Decay { amplitude: f64, rate: f64 },
    /// `amplitude·sin(2π·frequency·t)`.
    Sine { amplitude: f64, frequency: f64 },
}

impl SignalSpec {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            SignalSpec::Zero => 0.0,
            SignalSpec::Pulse { amplitude, duration } => {
                if t < duration {
                    amplitude
                } else {
                    0.0
                }
            }
            SignalSpec::Decay { amplitude, rate } => amplitude * (-rate * t).exp(),
            SignalSpec::Sine { amplitude, frequency } => amplitude * (std::f64::consts::TAU * frequency * t).sin(),
        }
    }

    /// Whether the signal tends to zero.
    pub fn vanishes(&self) -> bool {
        !matches!(self, SignalSpec::Sine { .. })
    }

    /// Parses `zero`, `pulse:A:D`, `decay:A:R` or `sine:A:F`.
    pub fn parse(spec: &str) -> Result<Self, SimError> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || {
            SimError::invalid(
                "signal",
                format!("bad spec `{spec}`; expected zero | pulse:A:D | decay:A:R | sine:A:F"),
            )
        };
        let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
        let sig = match parts.as_slice() {
            ["zero"] => SignalSpec::Zero,
            ["pulse", a, d] => SignalSpec::Pulse {
                amplitude: num(a)?,
                duration: num(d)?,
            },
            ["decay", a, r] => SignalSpec::Decay {
                amplitude: num(a)?,
                rate: num(r)?,
            },
            ["sine", a, f] => SignalSpec::Sine {
                amplitude: num(a)?,
                frequency: num(f)?,
            },
            _ => return Err(bad()),
        };
        match sig {
            SignalSpec::Pulse { duration, .. } if duration <= 0.0 => Err(bad()),
            SignalSpec::Decay { rate, .. } if rate <= 0.0 => Err(bad()),
            SignalSpec::Sine { frequency, .. } if frequency <= 0.0 => Err(bad()),
            s => Ok(s),
        }
    }
}

/// Standalone leakage dynamics `ρ̇ = 2γ²/γ′·[−λρ + K·w(t)]` (input active for
/// `w < 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Spec {
    pub gain: GainFunction,
    pub lambda: f64,
    pub k: f64,
    pub signal: SignalSpec,
    pub horizon: f64,
    pub step: f64,
}

impl Lemma1Spec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.gain.family == adapt::GainFamily::Rational {
            return Err(SimError::invalid(
                "gain",
                "the rational family has zero slope at rho = 0, so the leakage dynamics are singular there",
            ));
        }
        if !(self.gain.nominal > 0.0) || !(self.lambda > 0.0) || !(self.k >= 0.0) {
            return Err(SimError::invalid("lemma1", "need gamma_bar > 0, lambda > 0, K >= 0"));
        }
        IntegratorSpec::rk4(self.step, self.horizon)
            .validate()
            .map_err(SimError::Numeric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Report {
    pub sup_abs_rho: f64,
    pub final_abs_rho: f64,
    pub bounded: bool,
    /// `ρ* = K·w̄/λ` for a pulse.
    pub rest_point: Option<f64>,
    /// `ρ` just before the pulse ends.
    pub plateau: Option<f64>,
    /// Post-pulse decay respects `|ρ(t)| ≤ |ρ(t₀)|·e^{−λ·a_min·(t−t₀)}` with
    /// `a_min = min 2γ²/γ′` over the visited range.
    pub comparison_bound_holds: Option<bool>,
    /// Whether the signal vanishes, so recovery is expected.
    pub recovery_expected: bool,
}

pub fn lemma1_harness(spec: &Lemma1Spec) -> Result<(Trajectory, Lemma1Report), SimError> {
    spec.validate()?;
    let g = spec.gain;
    let field = |t: f64, rho: &[f64], d: &mut [f64]| {
        d[0] = adapt::leakage_with_gain(&g, rho[0], spec.signal.eval(t), spec.lambda, spec.k).unwrap_or(f64::NAN);
    };
    let isp = IntegratorSpec::rk4(spec.step, spec.horizon);
    let traj = match numkit::integrate_fixed(&field, 0.0, &[0.0], &isp) {
        Ok(t) => t,
        Err(e) => return Err(SimError::Numeric(e)),
    };
    let sup = traj.iter().map(|(_, r)| r[0].abs()).fold(0.0, f64::max);
    let final_abs = traj.last_state().map_or(f64::NAN, |r| r[0].abs());
    let mut report = Lemma1Report {
        sup_abs_rho: sup,
        final_abs_rho: final_abs,
        bounded: sup.is_finite(),
        rest_point: None,
        plateau: None,
        comparison_bound_holds: None,
        recovery_expected: spec.signal.vanishes(),
    };
    if let SignalSpec::Pulse { amplitude, duration } = spec.signal {
        let input = if amplitude < 0.0 { spec.k * amplitude } else { 0.0 };
        report.rest_point = Some(input / spec.lambda);
        let before: Vec<usize> = (0..traj.len()).filter(|&k| traj.time(k) < duration - 1e-12).collect();
        if let Some(&k0) = before.last() {
            let rho0 = traj.state(k0)[0];
            report.plateau = Some(rho0);
            let start = k0 + 1;
            if start < traj.len() {
                let r0 = traj.state(start)[0];
                let t0 = traj.time(start);
                let a_min = (0..=1000)
                    .map(|j| r0 * j as f64 / 1000.0)
                    .map(|r| {
                        let (gm, slope) = g.eval(r).expect("finite argument");
                        2.0 * gm * gm / slope
                    })
                    .fold(f64::INFINITY, f64::min);
                let holds = (start..traj.len()).all(|k| {
                    let bound = r0.abs() * (-spec.lambda * a_min * (traj.time(k) - t0)).exp();
                    traj.state(k)[0].abs() <= bound * (1.0 + 1e-9) + 1e-15
                });
                report.comparison_bound_holds = Some(holds);
            }
        }
    }
    Ok((traj, report))
}
