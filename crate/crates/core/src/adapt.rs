//! Adaptation machinery: admissible dynamic gains, the unmatched, matched and
//! composite parameter update laws, the gain-rate bound and its implementable
//! realizations, the leakage law, box projection, and the single-gain
//! baseline.
//!
//! Gains are parameterized by a scalar argument `ρ` with `γ(0) = γ̄`. Laws
//! that prescribe `γ̇` are converted to `ρ̇ = γ̇ / γ′(ρ)` before integration.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::plant::ParamBox;

#[derive(Debug, Error, PartialEq)]
pub enum AdaptError {
    #[error("gain argument ρ = {rho} outside the admissible domain of the {family} family")]
    Domain { family: &'static str, rho: f64 },
    #[error("gain slope vanishes at ρ = {rho}; rate conversion is undefined")]
    FlatGain { rho: f64 },
    /// Invalid setting; `key` names the offending setting.
    #[error("invalid {key}: {message}")]
    Config { key: &'static str, message: String },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl AdaptError {
    pub fn config(key: &'static str, message: impl Into<String>) -> Self {
        AdaptError::Config {
            key,
            message: message.into(),
        }
    }
}

/// Relative tolerance of the `γ = γ̄` test in the capped laws.
pub const GAIN_CAP_TOL: f64 = 1e-12;

/// Floor fraction: `c = 0.1·γ̄` for the shipped families.
pub const FLOOR_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainFamily {
    /// `γ̄(0.9·e^{ρ/τ} + 0.1)`
    Exponential { tau: f64 },
    /// `γ̄(0.9/(ρ² + 1) + 0.1)`, admissible for `ρ ≤ 0` only.
    Rational,
}

impl GainFamily {
    pub fn name(&self) -> &'static str {
        match self {
            GainFamily::Exponential { .. } => "exponential",
            GainFamily::Rational => "rational",
        }
    }
}

/// Admissible dynamic adaptation gain `γ(ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainFunction {
    pub family: GainFamily,
    /// Nominal gain `γ̄ = γ(0)`. Zero denotes a frozen (non-adapting) channel.
    pub nominal: f64,
}

impl GainFunction {
    pub fn exponential(nominal: f64, tau: f64) -> Self {
        Self {
            family: GainFamily::Exponential { tau },
            nominal,
        }
    }

    pub fn rational(nominal: f64) -> Self {
        Self {
            family: GainFamily::Rational,
            nominal,
        }
    }

    /// Lower limit `c = lim_{ρ→−∞} γ(ρ)`.
    pub fn floor(&self) -> f64 {
        FLOOR_FRACTION * self.nominal
    }

    /// `(γ(ρ), γ′(ρ))`.
    pub fn eval(&self, rho: f64) -> Result<(f64, f64), AdaptError> {
        if !rho.is_finite() {
            return Err(AdaptError::Domain {
                family: self.family.name(),
                rho,
            });
        }
        let g = self.nominal;
        match self.family {
            GainFamily::Exponential { tau } => {
                let e = (rho / tau).exp();
                Ok((g * (0.9 * e + 0.1), g * 0.9 * e / tau))
            }
            GainFamily::Rational => {
                if rho > 0.0 {
                    return Err(AdaptError::Domain {
                        family: "rational",
                        rho,
                    });
                }
                let d = rho * rho + 1.0;
                Ok((g * (0.9 / d + 0.1), -g * 1.8 * rho / (d * d)))
            }
        }
    }

    fn validate(&self) -> Result<(), AdaptError> {
        if !(self.nominal >= 0.0 && self.nominal.is_finite()) {
            return Err(AdaptError::config(
                "gamma_bar",
                format!("nominal gain must be finite and nonnegative, got {}", self.nominal),
            ));
        }
        if let GainFamily::Exponential { tau } = self.family {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(AdaptError::config("tau", format!("tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }
}

/// Gain update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GainLaw {
    /// The rate bound itself at equality, using the true estimation error
    /// (simulation-only oracle law), capped at `γ̄`.
    Theorem1,
    /// Three-case implementable law using the worst-case error `ϑ̃`.
    Corollary1,
    /// Corollary-1 with the stabilizing branch in log form,
    /// `γ̇ = −(2c²/η)·s/(V + c_log)`.
    Remark5,
    /// First-order leakage dynamics on `ρ` that return gains to nominal.
    Leakage,
    /// Single shared gain `υ(ρ)` for all parameters.
    Monolithic,
    /// Negative control: the destabilizing branch raises the gain instead of
    /// lowering it, violating the rate bound.
    Inverted,
}

impl GainLaw {
    pub const ALL: [GainLaw; 6] = [
        GainLaw::Theorem1,
        GainLaw::Corollary1,
        GainLaw::Remark5,
        GainLaw::Leakage,
        GainLaw::Monolithic,
        GainLaw::Inverted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GainLaw::Theorem1 => "theorem1",
            GainLaw::Corollary1 => "corollary1",
            GainLaw::Remark5 => "remark5",
            GainLaw::Leakage => "leakage",
            GainLaw::Monolithic => "monolithic",
            GainLaw::Inverted => "inverted",
        }
    }

    /// Laws whose `ρ` is clamped to `ρ ≤ 0` after each step (`γ ≤ γ̄`).
    pub fn caps_at_nominal(self) -> bool {
        matches!(self, GainLaw::Theorem1 | GainLaw::Corollary1 | GainLaw::Remark5)
    }
}

impl fmt::Display for GainLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GainLaw {
    type Err = AdaptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GainLaw::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| AdaptError::config("variant", format!("unknown adaptation variant `{s}`")))
    }
}

/// Everything that parameterizes the adaptation laws.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub law: GainLaw,
    /// One gain per unmatched parameter. For the monolithic law the nominal
    /// values form `Γ = diag(γ̄)` and the family defines `υ` with `υ(0) = 1`.
    pub gains: Vec<GainFunction>,
    pub eta: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Composite weight `β`.
    pub composite_weight: f64,
    /// Pole `a` of the prediction-error filter.
    pub filter_pole: f64,
    /// Matched gain `Γ` (`q×q`, symmetric positive definite).
    pub matched_gain: DMatrix<f64>,
    pub matched: bool,
    pub composite: bool,
    pub projection: bool,
    /// Offset `c > 0` in `V + c` (log-form and monolithic laws).
    pub log_offset: f64,
}

impl AdaptConfig {
    /// Defaults: `γ̄ = 1`, `τ = 1`, `η = 10 + ϑ̃²`, `λ = 1`, `β = 1`, `a = 10`,
    /// `Γ = I`, projection on, matched adaptation on iff `q > 0`.
    pub fn defaults(law: GainLaw, theta_box: &ParamBox, q: usize) -> Self {
        let p = theta_box.dim();
        let widths = theta_box.max_errors();
        Self {
            law,
            gains: vec![GainFunction::exponential(1.0, 1.0); p],
            eta: widths.map(|w| 10.0 + w * w),
            lambda: DVector::from_element(p, 1.0),
            composite_weight: 1.0,
            filter_pole: 10.0,
            matched_gain: DMatrix::identity(q, q),
            matched: q > 0,
            composite: false,
            projection: true,
            log_offset: 1.0,
        }
    }

    pub fn nominal_gains(&self) -> Vec<f64> {
        self.gains.iter().map(|g| g.nominal).collect()
    }

    /// All nominal gains zero: the no-adaptation ablation.
    pub fn is_frozen(&self) -> bool {
        self.gains.iter().all(|g| g.nominal == 0.0)
    }

    /// Length of the `ρ` block in the augmented state.
    pub fn rho_dim(&self) -> usize {
        match self.law {
            GainLaw::Monolithic => 1,
            _ => self.gains.len(),
        }
    }

    /// The shared gain function `υ` of the monolithic law.
    pub fn upsilon(&self) -> GainFunction {
        GainFunction {
            family: self.gains[0].family,
            nominal: 1.0,
        }
    }

    pub fn validate(&self, theta_box: &ParamBox, q: usize) -> Result<(), AdaptError> {
        let p = theta_box.dim();
        let cfg = |key: &'static str, msg: String| Err(AdaptError::config(key, msg));
        for (key, len) in [("gamma_bar", self.gains.len()), ("eta", self.eta.len()), ("lambda", self.lambda.len())] {
            if len != p {
                return cfg(key, format!("expected {p} per-parameter entries, got {len}"));
            }
        }
        for g in &self.gains {
            g.validate()?;
        }
        let frozen = self.is_frozen();
        if !frozen && self.gains.iter().any(|g| g.nominal == 0.0) {
            return cfg("gamma_bar", "entries must be all zero (ablation) or all positive".into());
        }
        if !frozen && self.gains.iter().any(|g| g.family == GainFamily::Rational) {
            return cfg(
                "gain",
                "the rational family has zero slope at rho = 0, so the rho-rate conversion is \
                 undefined at the required initial condition; use the exponential family"
                    .into(),
            );
        }
        let widths = theta_box.max_errors();
        for i in 0..p {
            let w2 = widths[i] * widths[i];
            if !(self.eta[i] > w2) {
                return cfg(
                    "eta",
                    format!(
                        "eta[{i}] = {} must exceed the squared max error {w2} of parameter {i}",
                        self.eta[i]
                    ),
                );
            }
            if !(self.lambda[i] > 0.0 && self.lambda[i].is_finite()) {
                return cfg("lambda", format!("lambda[{i}] = {} must be positive", self.lambda[i]));
            }
        }
        if !(self.composite_weight >= 0.0 && self.composite_weight.is_finite()) {
            return cfg("beta", format!("{} must be nonnegative", self.composite_weight));
        }
        if !(self.filter_pole > 0.0 && self.filter_pole.is_finite()) {
            return cfg("filter_pole", format!("{} must be positive", self.filter_pole));
        }
        if !(self.log_offset > 0.0 && self.log_offset.is_finite()) {
            return cfg("log_offset", format!("{} must be positive", self.log_offset));
        }
        if self.matched_gain.nrows() != q || self.matched_gain.ncols() != q {
            return cfg("matched_gain", format!("must be {q}x{q}"));
        }
        if q > 0 {
            let g = &self.matched_gain;
            if (g - g.transpose()).abs().max() > 1e-12 {
                return cfg("matched_gain", "must be symmetric".into());
            }
            if g.clone().cholesky().is_none() {
                return cfg("matched_gain", "must be positive definite".into());
            }
            if self.projection && (0..q).any(|i| (0..q).any(|j| i != j && g[(i, j)] != 0.0)) {
                return cfg("matched_gain", "box projection of matched estimates requires a diagonal gain".into());
            }
        }
        if self.matched && q == 0 {
            return cfg("matched", "requested but the model has no matched parameters".into());
        }
        if self.composite && q > 0 {
            return cfg("composite", "only supported for models without matched parameters".into());
        }
        if self.law == GainLaw::Monolithic && (self.composite || q > 0) {
            return cfg("variant", "the monolithic law supports plain unmatched adaptation only".into());
        }
        Ok(())
    }
}

/// `θ̂̇ = −diag(γ)·Δ·∂V/∂x`.
pub fn theta_dot_unmatched(gammas: &[f64], delta: &DMatrix<f64>, grad_x: &DVector<f64>) -> DVector<f64> {
    let r = delta * grad_x;
    DVector::from_iterator(r.len(), r.iter().zip(gammas).map(|(ri, g)| -g * ri))
}

fn check_eta(eta: f64, err: f64) -> Result<f64, AdaptError> {
    let d = eta - err * err;
    if d > 0.0 {
        Ok(d)
    } else {
        Err(AdaptError::config(
            "eta",
            format!("{eta} must exceed the squared error {}", err * err),
        ))
    }
}

/// Largest admissible `γ̇_i`: `−2γ_i²·s_i/(η_i − θ̃_i²)` with
/// `s_i = ∂V/∂θ̂_i·θ̂̇_i`.
pub fn gain_rate_bound(gamma: f64, eta: f64, theta_err: f64, s: f64) -> Result<f64, AdaptError> {
    let d = check_eta(eta, theta_err)?;
    Ok(-2.0 * gamma * gamma * s / d)
}

fn at_cap(gamma: f64, gamma_bar: f64) -> bool {
    gamma >= gamma_bar * (1.0 - GAIN_CAP_TOL)
}

/// Three-case implementable gain law.
pub fn corollary1_update(
    gamma_bar: f64,
    floor: f64,
    eta: f64,
    max_err: f64,
    gamma: f64,
    s: f64,
) -> Result<f64, AdaptError> {
    let d = check_eta(eta, max_err)?;
    Ok(if s > 0.0 {
        -2.0 * gamma_bar * gamma_bar * s / d
    } else if !at_cap(gamma, gamma_bar) {
        -2.0 * floor * floor * s / eta
    } else {
        0.0
    })
}

/// Rate bound at equality using the true error, with the same cap at `γ̄`.
pub fn theorem1_update(gamma_bar: f64, eta: f64, theta_err: f64, gamma: f64, s: f64) -> Result<f64, AdaptError> {
    let bound = gain_rate_bound(gamma, eta, theta_err, s)?;
    Ok(if s <= 0.0 && at_cap(gamma, gamma_bar) { 0.0 } else { bound })
}

/// `∂/∂θ̂ log(h·(V + c)) = (∂V/∂θ̂)/(V + c)`, independent of the scale `h`.
pub fn log_energy_gradient(grad_theta: &DVector<f64>, v: f64, offset: f64) -> DVector<f64> {
    grad_theta / (v + offset)
}

/// Corollary-1 with the stabilizing branch written through the log-energy
/// gradient.
#[allow(clippy::too_many_arguments)]
pub fn remark5_update(
    gamma_bar: f64,
    floor: f64,
    eta: f64,
    max_err: f64,
    gamma: f64,
    s: f64,
    v: f64,
    offset: f64,
) -> Result<f64, AdaptError> {
    if s > 0.0 {
        return corollary1_update(gamma_bar, floor, eta, max_err, gamma, s);
    }
    check_eta(eta, max_err)?;
    Ok(if at_cap(gamma, gamma_bar) {
        0.0
    } else {
        -2.0 * floor * floor / eta * s / (v + offset)
    })
}

/// Negative control: flips the sign of Corollary-1's destabilizing branch.
pub fn inverted_update(
    gamma_bar: f64,
    floor: f64,
    eta: f64,
    max_err: f64,
    gamma: f64,
    s: f64,
) -> Result<f64, AdaptError> {
    let r = corollary1_update(gamma_bar, floor, eta, max_err, gamma, s)?;
    Ok(if s > 0.0 { -r } else { r })
}

/// Chain rule: `ρ̇ = γ̇ / γ′(ρ)`.
pub fn rho_dot_from_gain_rate(g: &GainFunction, rho: f64, gamma_rate: f64) -> Result<f64, AdaptError> {
    let (_, slope) = g.eval(rho)?;
    if slope <= 0.0 {
        return Err(AdaptError::FlatGain { rho });
    }
    Ok(gamma_rate / slope)
}

/// Leakage dynamics `ρ̇ = 2γ²/γ′·[−λρ + K·w]` with `K = γ̄/(η − ϑ̃²)` when
/// `w < 0` and `K = 0` otherwise.
pub fn leakage_rho_dot(
    g: &GainFunction,
    rho: f64,
    w: f64,
    lambda: f64,
    gamma_bar: f64,
    eta: f64,
    max_err: f64,
) -> Result<f64, AdaptError> {
    let d = check_eta(eta, max_err)?;
    let k = if w < 0.0 { gamma_bar / d } else { 0.0 };
    leakage_with_gain(g, rho, w, lambda, k)
}

/// Leakage dynamics with an explicit input gain `K` (applied only when `w < 0`).
pub fn leakage_with_gain(g: &GainFunction, rho: f64, w: f64, lambda: f64, k: f64) -> Result<f64, AdaptError> {
    let (gamma, slope) = g.eval(rho)?;
    if slope <= 0.0 {
        return Err(AdaptError::FlatGain { rho });
    }
    let input = if w < 0.0 { k * w } else { 0.0 };
    Ok(2.0 * gamma * gamma / slope * (-lambda * rho + input))
}

/// Matched update `φ̂̇ = −Γ·Ψ·(Bᵀ ∂V/∂x)` with `Ψ ∈ R^{q×m}`.
pub fn matched_phi_dot(
    gamma: &DMatrix<f64>,
    b: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    grad_x: &DVector<f64>,
) -> Result<DVector<f64>, AdaptError> {
    let (n, m) = b.shape();
    let q = psi.nrows();
    if grad_x.len() != n || psi.ncols() != m || gamma.shape() != (q, q) {
        return Err(AdaptError::Contract(format!(
            "matched update shapes: B {n}x{m}, Psi {}x{}, Gamma {}x{}, dV/dx {}",
            psi.nrows(),
            psi.ncols(),
            gamma.nrows(),
            gamma.ncols(),
            grad_x.len()
        )));
    }
    Ok(-(gamma * (psi * (b.transpose() * grad_x))))
}

/// Composite update `θ̂̇ = −diag(γ)·(Δ ∂V/∂x + β W ε)`.
pub fn composite_theta_dot(
    gammas: &[f64],
    delta: &DMatrix<f64>,
    grad_x: &DVector<f64>,
    beta: f64,
    w: &DMatrix<f64>,
    eps: &DVector<f64>,
) -> Result<DVector<f64>, AdaptError> {
    if w.nrows() != delta.nrows() || w.ncols() != eps.len() {
        return Err(AdaptError::Contract(format!(
            "composite shapes: W {}x{}, eps {}, p = {}",
            w.nrows(),
            w.ncols(),
            eps.len(),
            delta.nrows()
        )));
    }
    let r = delta * grad_x + beta * (w * eps);
    Ok(DVector::from_iterator(r.len(), r.iter().zip(gammas).map(|(ri, g)| -g * ri)))
}

/// First-order filter producing the prediction error `ε = W_fᵀθ̃`.
///
/// Both sides of `ẋ = f + Bu − Δᵀθ` are passed through `1/(s + a)`:
/// `Ẇ_f = −aW_f + Δ`, `ġ_f = −a g_f + (f + Bu)`, `χ̇ = −aχ + x`. The filtered
/// derivative is `x − aχ`, so `y_f = g_f − (x − aχ) = W_fᵀθ` and
/// `ε = W_fᵀθ̂ − y_f`. Starting from `χ(0) = x(0)/a` the identity is exact;
/// from `χ(0) = 0` it holds up to a transient `e^{−at}·x(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionFilter {
    pub pole: f64,
    p: usize,
    n: usize,
}

impl PredictionFilter {
    pub fn new(pole: f64, p: usize, n: usize) -> Self {
        Self { pole, p, n }
    }

    pub fn state_len(&self) -> usize {
        self.p * self.n + 2 * self.n
    }

    /// Filter state at `t = 0`; `exact` selects `χ(0) = x(0)/a`.
    pub fn initial_state(&self, x0: &[f64], exact: bool) -> Vec<f64> {
        let mut s = vec![0.0; self.state_len()];
        if exact {
            let off = self.p * self.n + self.n;
            for (dst, &xi) in s[off..].iter_mut().zip(x0) {
                *dst = xi / self.pole;
            }
        }
        s
    }

    /// Filter state derivative given `x`, `Δ(x)` and `f(x) + B(x)u`.
    pub fn derivative(&self, state: &[f64], x: &[f64], delta: &DMatrix<f64>, drive: &DVector<f64>, out: &mut [f64]) {
        let a = self.pole;
        let (p, n) = (self.p, self.n);
        for i in 0..p {
            for j in 0..n {
                let k = i * n + j;
                out[k] = -a * state[k] + delta[(i, j)];
            }
        }
        let g_off = p * n;
        for j in 0..n {
            out[g_off + j] = -a * state[g_off + j] + drive[j];
        }
        let c_off = g_off + n;
        for j in 0..n {
            out[c_off + j] = -a * state[c_off + j] + x[j];
        }
    }

    /// `(W_f, ε)` for the current estimate.
    pub fn outputs(&self, state: &[f64], x: &[f64], theta_hat: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (p, n) = (self.p, self.n);
        let w = DMatrix::from_row_slice(p, n, &state[..p * n]);
        let g_off = p * n;
        let c_off = g_off + n;
        let y = DVector::from_iterator(
            n,
            (0..n).map(|j| state[g_off + j] - (x[j] - self.pole * state[c_off + j])),
        );
        let eps = w.transpose() * theta_hat - y;
        (w, eps)
    }
}

/// Single-gain baseline:
/// `θ̂̇ = −υ(ρ)·Γ·Δ·∂V/∂x`,
/// `ρ̇ = −(υ/υ′)·(∂V/∂θ̂ᵀθ̂̇)/(V + c)`.
#[allow(clippy::too_many_arguments)]
pub fn monolithic_update(
    upsilon: &GainFunction,
    gamma: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    grad_x: &DVector<f64>,
    grad_theta: &DVector<f64>,
    v: f64,
    offset: f64,
    rho: f64,
) -> Result<(DVector<f64>, f64), AdaptError> {
    let (u, slope) = upsilon.eval(rho)?;
    if slope <= 0.0 {
        return Err(AdaptError::FlatGain { rho });
    }
    let theta_rate = -u * (gamma * (delta * grad_x));
    let rho_rate = monolithic_rho_dot(upsilon, rho, grad_theta.dot(&theta_rate), v, offset)?;
    Ok((theta_rate, rho_rate))
}

/// `ρ̇` of the baseline for a given transient `∂V/∂θ̂ᵀθ̂̇`.
pub fn monolithic_rho_dot(upsilon: &GainFunction, rho: f64, transient: f64, v: f64, offset: f64) -> Result<f64, AdaptError> {
    let (u, slope) = upsilon.eval(rho)?;
    if slope <= 0.0 {
        return Err(AdaptError::FlatGain { rho });
    }
    Ok(-(u / slope) * transient / (v + offset))
}

/// Box projection of an estimate rate: outward components on a face are
/// zeroed, everything else passes through.
pub fn project(theta_box: &ParamBox, theta_hat: &DVector<f64>, rate: &DVector<f64>) -> Result<DVector<f64>, AdaptError> {
    if theta_hat.len() != theta_box.dim() || rate.len() != theta_box.dim() {
        return Err(AdaptError::Contract("projection dimension mismatch".into()));
    }
    if !theta_box.contains(theta_hat) {
        return Err(AdaptError::Contract("estimate outside its parameter box".into()));
    }
    Ok(project_unchecked(theta_box, theta_hat, rate))
}

pub(crate) fn project_unchecked(theta_box: &ParamBox, theta_hat: &DVector<f64>, rate: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        rate.len(),
        rate.iter().enumerate().map(|(i, &r)| {
            let iv = theta_box.interval(i);
            if (theta_hat[i] >= iv.hi && r > 0.0) || (theta_hat[i] <= iv.lo && r < 0.0) {
                0.0
            } else {
                r
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(a: &[f64]) -> DVector<f64> {
        DVector::from_vec(a.to_vec())
    }

    #[test]
    fn exponential_gain_values() {
        let g = GainFunction::exponential(1.0, 1.0);
        let (gamma, slope) = g.eval(0.0).unwrap();
        assert_eq!(gamma, 1.0);
        assert!((slope - 0.9).abs() < 1e-15);
        let (low, _) = g.eval(-50.0).unwrap();
        assert!((low - 0.1).abs() <= 1e-12);
    }

    #[test]
    fn rational_gain_values_and_domain() {
        let g = GainFunction::rational(2.0);
        let (gamma, slope) = g.eval(-3.0).unwrap();
        assert!((gamma - 0.38).abs() < 1e-15);
        assert!(slope > 0.0);
        assert!(matches!(g.eval(0.5), Err(AdaptError::Domain { .. })));
    }

    #[test]
    fn unmatched_rate() {
        let delta = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        let r = theta_dot_unmatched(&[0.5], &delta, &v(&[3.0, 1.0]));
        assert_eq!(r[0], -3.0);
        let zero = theta_dot_unmatched(&[0.5], &delta, &v(&[0.0, 0.0]));
        assert_eq!(zero[0], 0.0);
    }

    #[test]
    fn rate_bound_values() {
        assert_eq!(gain_rate_bound(1.0, 10.0, 1.0, 0.0).unwrap(), 0.0);
        assert!((gain_rate_bound(1.0, 10.0, 1.0, 0.9).unwrap() + 0.2).abs() < 1e-15);
        assert!(gain_rate_bound(0.3, 10.0, 1.0, 0.01).unwrap() < 0.0);
        assert!(gain_rate_bound(1.0, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn corollary1_cases() {
        assert!((corollary1_update(1.0, 0.1, 10.0, 1.0, 1.0, 0.45).unwrap() + 0.1).abs() < 1e-15);
        assert!((corollary1_update(1.0, 0.1, 10.0, 1.0, 0.5, -0.5).unwrap() - 0.001).abs() < 1e-15);
        assert_eq!(corollary1_update(1.0, 0.1, 10.0, 1.0, 1.0, -0.5).unwrap(), 0.0);
        assert!(corollary1_update(1.0, 0.1, 1.0, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn chain_rule_conversion() {
        let g = GainFunction::exponential(1.0, 1.0);
        assert_eq!(rho_dot_from_gain_rate(&g, 0.0, 0.0).unwrap(), 0.0);
        assert!((rho_dot_from_gain_rate(&g, 0.0, -0.09).unwrap() + 0.1).abs() < 1e-15);
        assert!(matches!(
            rho_dot_from_gain_rate(&GainFunction::rational(1.0), 0.0, -0.1),
            Err(AdaptError::FlatGain { .. })
        ));
    }

    #[test]
    fn leakage_values() {
        let g = GainFunction::exponential(1.0, 1.0);
        assert_eq!(leakage_rho_dot(&g, 0.0, 0.0, 1.0, 1.0, 10.0, 1.0).unwrap(), 0.0);
        let r = leakage_rho_dot(&g, 0.0, -0.9, 1.0, 1.0, 10.0, 1.0).unwrap();
        assert!((r + 2.0 / 9.0).abs() < 1e-14, "{r}");
        let rec = leakage_rho_dot(&g, -1.0, 0.0, 1.0, 1.0, 10.0, 1.0).unwrap();
        let (gamma, slope) = g.eval(-1.0).unwrap();
        assert!((rec - 2.0 * gamma * gamma / slope).abs() < 1e-14);
        // stabilizing input is ignored
        assert_eq!(leakage_rho_dot(&g, 0.0, 5.0, 1.0, 1.0, 10.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn matched_rate_example() {
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let psi = DMatrix::from_column_slice(2, 1, &[3.0, 1.0]);
        let r = matched_phi_dot(&DMatrix::identity(2, 2), &b, &psi, &v(&[0.4, -1.0, 2.0])).unwrap();
        assert_eq!(r, v(&[-6.0, -2.0]));
        let z = matched_phi_dot(&DMatrix::identity(2, 2), &b, &psi, &v(&[0.0; 3])).unwrap();
        assert!(z.iter().all(|&a| a == 0.0));
        assert!(matched_phi_dot(&DMatrix::identity(3, 3), &b, &psi, &v(&[0.0; 3])).is_err());
    }

    #[test]
    fn composite_example_and_reduction() {
        let delta = DMatrix::from_row_slice(1, 1, &[1.0]);
        let w = DMatrix::from_row_slice(1, 1, &[2.0]);
        let eps = &w.transpose() * v(&[0.5]);
        let r = composite_theta_dot(&[1.0], &delta, &v(&[1.0]), 1.0, &w, &eps).unwrap();
        assert_eq!(r[0], -3.0);
        let delta = DMatrix::from_row_slice(2, 3, &[0.3, -1.0, 2.0, 0.1, 0.0, -0.7]);
        let gx = v(&[0.2, 1.5, -0.4]);
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let reduced = composite_theta_dot(&[0.7, 1.3], &delta, &gx, 0.0, &w, &v(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(reduced, theta_dot_unmatched(&[0.7, 1.3], &delta, &gx));
    }

    #[test]
    fn monolithic_values() {
        let ups = GainFunction::exponential(1.0, 1.0);
        assert_eq!(monolithic_rho_dot(&ups, 0.0, 0.0, 1.0, 1.0).unwrap(), 0.0);
        let r = monolithic_rho_dot(&ups, 0.0, 0.9, 1.0, 1.0).unwrap();
        assert!((r + 0.5).abs() < 1e-15, "{r}");
    }

    #[test]
    fn log_gradient_ignores_scale() {
        // d/dθ log(h(V+c)) by central differences for two scales
        let energy = |th: f64| 0.5 * (1.0 - th).powi(2) + 0.3;
        let c = 1.0;
        let fd = |h: f64| {
            let f = |th: f64| (h * (energy(th) + c)).ln();
            (f(0.2 + 1e-6) - f(0.2 - 1e-6)) / 2e-6
        };
        let analytic = log_energy_gradient(&v(&[-(1.0 - 0.2)]), energy(0.2), c)[0];
        assert!((fd(1.0) - analytic).abs() < 1e-8);
        assert!((fd(37.0) - analytic).abs() < 1e-8);
    }

    #[test]
    fn projection_cases() {
        let b = ParamBox::new(&[(-2.1, 1.5), (-3.0, 1.5)]).unwrap();
        let inside = v(&[0.0, 0.0]);
        assert_eq!(project(&b, &inside, &v(&[-1.0, 4.0])).unwrap(), v(&[-1.0, 4.0]));
        let edge = v(&[-2.1, 0.0]);
        assert_eq!(project(&b, &edge, &v(&[-1.0, 1.0])).unwrap(), v(&[0.0, 1.0]));
        assert_eq!(project(&b, &edge, &v(&[1.0, 1.0])).unwrap(), v(&[1.0, 1.0]));
        assert!(project(&b, &v(&[-3.0, 0.0]), &v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn validation_catches_bad_eta_and_gain() {
        let b = ParamBox::new(&[(-2.1, 1.5)]).unwrap();
        let mut c = AdaptConfig::defaults(GainLaw::Corollary1, &b, 0);
        c.validate(&b, 0).unwrap();
        c.eta[0] = 1.0;
        assert!(matches!(c.validate(&b, 0), Err(AdaptError::Config { key: "eta", .. })));
        let mut c = AdaptConfig::defaults(GainLaw::Corollary1, &b, 0);
        c.gains[0] = GainFunction::rational(1.0);
        assert!(c.validate(&b, 0).is_err());
        let mut c = AdaptConfig::defaults(GainLaw::Corollary1, &b, 0);
        c.lambda[0] = 0.0;
        assert!(c.validate(&b, 0).is_err());
        let mut c = AdaptConfig::defaults(GainLaw::Corollary1, &b, 0);
        c.matched = true;
        assert!(c.validate(&b, 0).is_err());
    }

    #[test]
    fn validation_checks_matched_gain() {
        let b = ParamBox::new(&[(-2.1, 1.5)]).unwrap();
        let mut c = AdaptConfig::defaults(GainLaw::Corollary1, &b, 2);
        c.validate(&b, 2).unwrap();
        c.matched_gain = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        c.projection = false;
        assert!(c.validate(&b, 2).is_err());
    }

    #[test]
    fn prediction_filter_exact_identity_on_constant_window() {
        // x held constant, input chosen so the plant would be at rest
        let a = 10.0;
        let f = PredictionFilter::new(a, 1, 2);
        let x = [0.8, -0.4];
        let delta = DMatrix::from_row_slice(1, 2, &[x[0], 0.0]);
        let theta = 1.3;
        let drive = &delta.transpose() * v(&[theta]);
        let th_hat = v(&[theta + 0.5]);
        for exact in [true, false] {
            let mut s = f.initial_state(&x, exact);
            let mut d = vec![0.0; f.state_len()];
            let h = 1e-4;
            let mut t = 0.0;
            while t < 5.0 / a - 1e-12 {
                f.derivative(&s, &x, &delta, &drive, &mut d);
                for (si, di) in s.iter_mut().zip(&d) {
                    *si += h * di;
                }
                t += h;
                let (w, eps) = f.outputs(&s, &x, &th_hat);
                let ideal = w.transpose() * v(&[0.5]);
                let gap = (&eps - &ideal).norm();
                if exact {
                    assert!(gap < 1e-12, "{gap}");
                } else {
                    let norm = (x[0] * x[0] + x[1] * x[1]).sqrt();
                    assert!(gap <= (-a * t).exp() * norm * (1.0 + 1e-9) + 1e-12);
                }
            }
        }
    }
}
