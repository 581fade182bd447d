//! Unmatched control Lyapunov function families `V_θ̂`, their gradients,
//! dissipation rates `Q_θ̂`, certainty-equivalence controllers and a sampling
//! certifier.
//!
//! All shipped families are backstepping constructions with the equilibrium at
//! the origin. The certifier evaluates, on a grid over a state region times a
//! parameter grid,
//!
//! ```text
//! margin(x, θ̂) = −[∂V/∂t + ∂V/∂xᵀ (f − Δᵀθ̂ + B u_θ̂)] − Q(x, θ̂)
//! ```
//!
//! and additionally checks that `V` and `Q` are positive away from the
//! equilibrium and vanish on it.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use thiserror::Error;

use crate::plant::{eval_dynamics, ModelId, ParamBox, PlantError, SystemModel};

#[derive(Debug, Error, PartialEq)]
pub enum UclfError {
    #[error("unknown uclf id `{0}`")]
    UnknownFamily(String),
    #[error("uclf `{family}` is not defined for model `{model}`")]
    IncompatibleModel { family: &'static str, model: ModelId },
    #[error("uclf constant {name} must be positive, got {value}")]
    InvalidConstant { name: &'static str, value: f64 },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// A parameterized Lyapunov family `V_θ̂(x, t)` with its controller.
pub trait Uclf: fmt::Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>, theta: &DVector<f64>, t: f64) -> f64;
    fn grad_x(&self, x: &DVector<f64>, theta: &DVector<f64>, t: f64) -> DVector<f64>;
    fn grad_theta(&self, x: &DVector<f64>, theta: &DVector<f64>, t: f64) -> DVector<f64>;

    fn grad_t(&self, _x: &DVector<f64>, _theta: &DVector<f64>, _t: f64) -> f64 {
        0.0
    }

    fn dissipation(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64;

    /// Certainty-equivalence control `u_θ̂`.
    fn control(&self, x: &DVector<f64>, theta: &DVector<f64>, t: f64) -> DVector<f64>;

    fn equilibrium(&self) -> DVector<f64> {
        DVector::zeros(self.state_dim())
    }
}

/// Design constants shared by the built-in families. Unused constants are
/// ignored by families that do not need them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UclfConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub beta: f64,
}

impl Default for UclfConstants {
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 1.0,
            k3: 5.0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UclfId {
    Eq7Backstep,
    Chain3Backstep,
    Min2Backstep,
}

impl UclfId {
    pub const ALL: [UclfId; 3] = [UclfId::Eq7Backstep, UclfId::Chain3Backstep, UclfId::Min2Backstep];

    pub fn as_str(self) -> &'static str {
        match self {
            UclfId::Eq7Backstep => "eq7-backstep",
            UclfId::Chain3Backstep => "chain3-backstep",
            UclfId::Min2Backstep => "min2-backstep",
        }
    }

    /// Family matching a built-in model.
    pub fn for_model(model: ModelId) -> Self {
        match model {
            ModelId::Eq7 | ModelId::Eq7Split => UclfId::Eq7Backstep,
            ModelId::Chain3 => UclfId::Chain3Backstep,
            ModelId::Min2 => UclfId::Min2Backstep,
        }
    }
}

impl fmt::Display for UclfId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UclfId {
    type Err = UclfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UclfId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| UclfError::UnknownFamily(s.to_string()))
    }
}

/// Builds the family `id` for `model`, reading box-dependent constants from
/// `theta_box`.
pub fn build_family(
    id: UclfId,
    constants: UclfConstants,
    model: ModelId,
    theta_box: &ParamBox,
) -> Result<Box<dyn Uclf>, UclfError> {
    if UclfId::for_model(model) != id {
        return Err(UclfError::IncompatibleModel {
            family: id.as_str(),
            model,
        });
    }
    let positive = |name: &'static str, value: f64| {
        if value > 0.0 && value.is_finite() {
            Ok(())
        } else {
            Err(UclfError::InvalidConstant { name, value })
        }
    };
    positive("k1", constants.k1)?;
    positive("k2", constants.k2)?;
    Ok(match id {
        UclfId::Eq7Backstep => {
            positive("k3", constants.k3)?;
            positive("beta", constants.beta)?;
            Box::new(Eq7Backstep {
                k1: constants.k1,
                k2: constants.k2,
                k3: constants.k3,
                beta: constants.beta,
                theta2_max: theta_box.max_abs(1),
                matched_split: model == ModelId::Eq7Split,
            })
        }
        UclfId::Chain3Backstep => {
            positive("k3", constants.k3)?;
            Box::new(Chain3Backstep {
                k1: constants.k1,
                k2: constants.k2,
                k3: constants.k3,
            })
        }
        UclfId::Min2Backstep => Box::new(Min2Backstep {
            k1: constants.k1,
            k2: constants.k2,
        }),
    })
}

/// Backstepping family for the three-state benchmark:
/// `V = ½x₁² + (β/2)x₂² + ½z²`, `z = x₃ − α(x₁)`,
/// `α = θ̂₁x₁ − k₁x₁ − k₃x₁³`.
///
/// The cross term `−βθ̂₂x₂x₁²` is absorbed by Young's inequality, which costs
/// `(β/2)θ₂,max²` of the quartic gain; `Q` is positive definite only when
/// `k₃ > (β/2)θ₂,max²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eq7Backstep {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub beta: f64,
    pub theta2_max: f64,
    /// `θ₃, θ₄` handled as matched parameters; `θ̂` then has two entries and
    /// the controller leaves their cancellation to `Ψᵀφ̂`.
    pub matched_split: bool,
}

impl Eq7Backstep {
    fn alpha(&self, x1: f64, th1: f64) -> (f64, f64) {
        let a = (th1 - self.k1) * x1 - self.k3 * x1.powi(3);
        let da = th1 - self.k1 - 3.0 * self.k3 * x1 * x1;
        (a, da)
    }

    fn z(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        x[2] - self.alpha(x[0], theta[0]).0
    }

    /// Quartic coefficient of `Q`.
    pub fn quartic_budget(&self) -> f64 {
        self.k3 - 0.5 * self.beta * self.theta2_max * self.theta2_max
    }

    pub fn q_is_positive_definite(&self) -> bool {
        self.quartic_budget() > 0.0
    }
}

impl Uclf for Eq7Backstep {
    fn state_dim(&self) -> usize {
        3
    }

    fn param_dim(&self) -> usize {
        if self.matched_split {
            2
        } else {
            4
        }
    }

    fn value(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> f64 {
        let z = self.z(x, theta);
        0.5 * x[0] * x[0] + 0.5 * self.beta * x[1] * x[1] + 0.5 * z * z
    }

    fn grad_x(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> DVector<f64> {
        let (a, da) = self.alpha(x[0], theta[0]);
        let z = x[2] - a;
        DVector::from_vec(vec![x[0] - z * da, self.beta * x[1], z])
    }

    fn grad_theta(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> DVector<f64> {
        let mut g = DVector::zeros(self.param_dim());
        g[0] = -x[0] * self.z(x, theta);
        g
    }

    fn dissipation(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let z = self.z(x, theta);
        let x1sq = x[0] * x[0];
        self.k1 * x1sq + self.quartic_budget() * x1sq * x1sq + 0.5 * self.beta * x[1] * x[1] + self.k2 * z * z
    }

    fn control(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> DVector<f64> {
        let (a, da) = self.alpha(x[0], theta[0]);
        let z = x[2] - a;
        let mut u = -x[1].tanh() + da * (x[2] - theta[0] * x[0]) - x[0] - self.k2 * z;
        if !self.matched_split {
            u += theta[2] * x[2] + theta[3] * x[0] * x[0];
        }
        DVector::from_element(1, u)
    }
}

/// Coordinates of the three-state chain backstepping design.
struct ChainCoords {
    a: f64,
    c1: f64,
    c2: f64,
    z: [f64; 3],
}

/// Backstepping family for `ẋ₁=x₂−θ₁x₁, ẋ₂=x₃−θ₂x₂, ẋ₃=u` with
/// `V = ½(z₁² + z₂² + z₃²)` and `Q = k₁z₁² + k₂z₂² + k₃z₃²` (tight).
#[derive(Debug, Clone, PartialEq)]
pub struct Chain3Backstep {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Chain3Backstep {
    fn coords(&self, x: &DVector<f64>, theta: &DVector<f64>) -> ChainCoords {
        let a = theta[0] - self.k1;
        // α₂ = c₂x₂ + c₁x₁ is linear in the state.
        let c1 = -a * theta[0] - 1.0 + self.k2 * a;
        let c2 = theta[1] + a - self.k2;
        let z1 = x[0];
        let z2 = x[1] - a * x[0];
        let z3 = x[2] - c2 * x[1] - c1 * x[0];
        ChainCoords {
            a,
            c1,
            c2,
            z: [z1, z2, z3],
        }
    }
}

impl Uclf for Chain3Backstep {
    fn state_dim(&self) -> usize {
        3
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn value(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> f64 {
        let [z1, z2, z3] = self.coords(x, theta).z;
        0.5 * (z1 * z1 + z2 * z2 + z3 * z3)
    }

    fn grad_x(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> DVector<f64> {
        let c = self.coords(x, theta);
        let [z1, z2, z3] = c.z;
        DVector::from_vec(vec![z1 - c.a * z2 - c.c1 * z3, z2 - c.c2 * z3, z3])
    }

    fn grad_theta(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> DVector<f64> {
        let c = self.coords(x, theta);
        let [_, z2, z3] = c.z;
        let dalpha2_dth1 = x[1] + (self.k1 + self.k2 - 2.0 * theta[0]) * x[0];
        DVector::from_vec(vec![-z2 * x[0] - z3 * dalpha2_dth1, -z3 * x[1]])
    }

    fn dissipation(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let [z1, z2, z3] = self.coords(x, theta).z;
        self.k1 * z1 * z1 + self.k2 * z2 * z2 + self.k3 * z3 * z3
    }

    fn control(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> DVector<f64> {
        let c = self.coords(x, theta);
        let [_, z2, z3] = c.z;
        let u = c.c1 * (x[1] - theta[0] * x[0]) + c.c2 * (x[2] - theta[1] * x[1]) - z2 - self.k3 * z3;
        DVector::from_element(1, u)
    }
}

/// Two-state backstepping family, `V = ½(z₁² + z₂²)`, `z₂ = x₂ − (θ̂₁ − k₁)x₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct Min2Backstep {
    pub k1: f64,
    pub k2: f64,
}

impl Min2Backstep {
    fn coords(&self, x: &DVector<f64>, theta: &DVector<f64>) -> (f64, f64, f64) {
        let a = theta[0] - self.k1;
        (a, x[0], x[1] - a * x[0])
    }
}

impl Uclf for Min2Backstep {
    fn state_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn value(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> f64 {
        let (_, z1, z2) = self.coords(x, theta);
        0.5 * (z1 * z1 + z2 * z2)
    }

    fn grad_x(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> DVector<f64> {
        let (a, z1, z2) = self.coords(x, theta);
        DVector::from_vec(vec![z1 - a * z2, z2])
    }

    fn grad_theta(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> DVector<f64> {
        let (_, _, z2) = self.coords(x, theta);
        DVector::from_element(1, -z2 * x[0])
    }

    fn dissipation(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let (_, z1, z2) = self.coords(x, theta);
        self.k1 * z1 * z1 + self.k2 * z2 * z2
    }

    fn control(&self, x: &DVector<f64>, theta: &DVector<f64>, _t: f64) -> DVector<f64> {
        let (a, z1, z2) = self.coords(x, theta);
        DVector::from_element(1, a * (x[1] - theta[0] * x[0]) - z1 - self.k2 * z2)
    }
}

/// Grid used by [`verify_uclf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSpec {
    /// States are sampled on `[−half_width, half_width]ⁿ`.
    pub half_width: f64,
    pub x_points: usize,
    pub theta_points: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            half_width: 3.0,
            x_points: 9,
            theta_points: 5,
        }
    }
}

/// Tolerance on the sampled decrease margin.
pub const MARGIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Decrease condition fails: `margin < −tol`.
    Margin,
    /// `Q ≤ 0` at a state away from the equilibrium.
    DissipationNotPositive,
    /// `V ≤ 0` at a state away from the equilibrium.
    EnergyNotPositive,
    /// `V` or `Q` nonzero at the equilibrium.
    NonzeroAtEquilibrium,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub kind: ViolationKind,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub margin: f64,
    pub v: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub samples: usize,
    pub min_margin: f64,
    /// Sample attaining `min_margin`.
    pub worst_margin_at: (Vec<f64>, Vec<f64>),
    /// Smallest `Q` over samples away from the equilibrium.
    pub min_dissipation: f64,
    pub violations: usize,
    /// Worst violating samples, most severe first (at most 5).
    pub witnesses: Vec<Witness>,
    pub passed: bool,
}

/// Margin `−V̇ − Q` at `(x, θ̂)` for the certainty-equivalence closed loop
/// with `θ = θ̂`.
pub fn decrease_margin(
    family: &dyn Uclf,
    model: &dyn SystemModel,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    t: f64,
) -> Result<f64, UclfError> {
    let q_dim = model.dims().q;
    let u = family.control(x, theta, t);
    let dx = eval_dynamics(model, x, &u, theta, &DVector::zeros(q_dim), t)?;
    let vdot = family.grad_t(x, theta, t) + family.grad_x(x, theta, t).dot(&dx);
    Ok(-vdot - family.dissipation(x, theta))
}

/// Samples the uclf conditions on `[−w, w]ⁿ × grid(Θ)`.
pub fn verify_uclf(
    family: &dyn Uclf,
    model: &dyn SystemModel,
    theta_box: &ParamBox,
    sampler: &SamplerSpec,
) -> Result<CertificateReport, UclfError> {
    let n = family.state_dim();
    let p = family.param_dim();
    if model.dims().n != n {
        return Err(PlantError::DimensionMismatch {
            what: "uclf state",
            expected: model.dims().n,
            got: n,
        }
        .into());
    }
    if theta_box.dim() != p {
        return Err(PlantError::DimensionMismatch {
            what: "uclf parameters",
            expected: theta_box.dim(),
            got: p,
        }
        .into());
    }
    let x_axis: Vec<f64> = if sampler.x_points <= 1 {
        vec![0.0]
    } else {
        (0..sampler.x_points)
            .map(|k| -sampler.half_width + 2.0 * sampler.half_width * k as f64 / (sampler.x_points - 1) as f64)
            .collect()
    };
    let theta_axes: Vec<Vec<f64>> = (0..p).map(|i| theta_box.axis_grid(i, sampler.theta_points)).collect();
    let x_eq = family.equilibrium();

    let mut report = CertificateReport {
        samples: 0,
        min_margin: f64::INFINITY,
        worst_margin_at: (vec![], vec![]),
        min_dissipation: f64::INFINITY,
        violations: 0,
        witnesses: Vec::new(),
        passed: true,
    };
    let mut witnesses: Vec<(f64, Witness)> = Vec::new();

    for theta_idx in MultiIndex::new(&theta_axes.iter().map(Vec::len).collect::<Vec<_>>()) {
        let theta = DVector::from_iterator(p, theta_idx.iter().enumerate().map(|(i, &k)| theta_axes[i][k]));
        for x_idx in MultiIndex::new(&vec![x_axis.len(); n]) {
            let x = DVector::from_iterator(n, x_idx.iter().map(|&k| x_axis[k]));
            report.samples += 1;
            let margin = decrease_margin(family, model, &x, &theta, 0.0)?;
            let v = family.value(&x, &theta, 0.0);
            let q = family.dissipation(&x, &theta);
            let at_eq = (&x - &x_eq).norm() == 0.0;
            if margin < report.min_margin {
                report.min_margin = margin;
                report.worst_margin_at = (x.as_slice().to_vec(), theta.as_slice().to_vec());
            }
            if !at_eq {
                report.min_dissipation = report.min_dissipation.min(q);
            }
            let mut record = |kind: ViolationKind, severity: f64| {
                witnesses.push((
                    severity,
                    Witness {
                        kind,
                        x: x.as_slice().to_vec(),
                        theta: theta.as_slice().to_vec(),
                        margin,
                        v,
                        q,
                    },
                ));
            };
            if margin < -MARGIN_TOLERANCE {
                record(ViolationKind::Margin, -margin);
            }
            if at_eq {
                if v.abs() > MARGIN_TOLERANCE || q.abs() > MARGIN_TOLERANCE {
                    record(ViolationKind::NonzeroAtEquilibrium, v.abs().max(q.abs()));
                }
            } else {
                if q <= 0.0 {
                    record(ViolationKind::DissipationNotPositive, -q);
                }
                if v <= 0.0 {
                    record(ViolationKind::EnergyNotPositive, -v);
                }
            }
        }
    }
    report.violations = witnesses.len();
    report.passed = witnesses.is_empty();
    witnesses.sort_by(|a, b| b.0.total_cmp(&a.0));
    report.witnesses = witnesses.into_iter().take(5).map(|(_, w)| w).collect();
    Ok(report)
}

/// Odometer over a rectangular index set.
struct MultiIndex {
    sizes: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl MultiIndex {
    fn new(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
            current: vec![0; sizes.len()],
            done: sizes.contains(&0),
        }
    }
}

impl Iterator for MultiIndex {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let mut i = 0;
        loop {
            if i == self.sizes.len() {
                self.done = true;
                break;
            }
            self.current[i] += 1;
            if self.current[i] < self.sizes[i] {
                break;
            }
            self.current[i] = 0;
            i += 1;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::BuiltinModel;

    fn eq7_family(k3: f64) -> Eq7Backstep {
        Eq7Backstep {
            k1: 1.0,
            k2: 1.0,
            k3,
            beta: 1.0,
            theta2_max: 3.0,
            matched_split: false,
        }
    }

    fn v(a: &[f64]) -> DVector<f64> {
        DVector::from_vec(a.to_vec())
    }

    #[test]
    fn value_on_zero_backstepping_error() {
        let f = eq7_family(5.0);
        let th = v(&[0.3, -1.0, 0.5, 0.2]);
        let x = v(&[1.0, 1.0, f.alpha(1.0, 0.3).0]);
        assert!((f.value(&x, &th, 0.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn everything_vanishes_at_equilibrium() {
        let model = BuiltinModel::new(ModelId::Eq7);
        let f = eq7_family(5.0);
        let th = v(&[0.3, -1.0, 0.5, 0.2]);
        let x = DVector::zeros(3);
        assert_eq!(f.value(&x, &th, 0.0), 0.0);
        assert_eq!(f.dissipation(&x, &th), 0.0);
        assert!(f.grad_x(&x, &th, 0.0).iter().all(|&a| a == 0.0));
        // closed loop with θ = θ̂ keeps the origin at rest
        let u = f.control(&x, &th, 0.0);
        let dx = eval_dynamics(&model, &x, &u, &th, &DVector::zeros(0), 0.0).unwrap();
        assert!(dx.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn eq7_parameter_gradient_is_sparse() {
        let f = eq7_family(5.0);
        let th = v(&[0.3, -1.0, 0.5, 0.2]);
        let x = v(&[0.7, -0.2, 1.1]);
        let g = f.grad_theta(&x, &th, 0.0);
        assert!((g[0] + x[0] * f.z(&x, &th)).abs() < 1e-15);
        assert_eq!(&g.as_slice()[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn eq7_decrease_identity() {
        // V̇ = −k₁x₁² − k₃x₁⁴ − βx₂² − βθ̂₂x₂x₁² − k₂z² along the CE loop
        let model = BuiltinModel::new(ModelId::Eq7);
        let f = eq7_family(5.0);
        let th = v(&[0.4, -2.0, 1.0, -1.0]);
        let x = v(&[0.9, -1.3, 0.4]);
        let u = f.control(&x, &th, 0.0);
        let dx = eval_dynamics(&model, &x, &u, &th, &DVector::zeros(0), 0.0).unwrap();
        let vdot = f.grad_x(&x, &th, 0.0).dot(&dx);
        let z = f.z(&x, &th);
        let expected = -x[0].powi(2) - 5.0 * x[0].powi(4) - x[1].powi(2) - th[1] * x[1] * x[0].powi(2) - z * z;
        assert!((vdot - expected).abs() < 1e-12, "{vdot} vs {expected}");
    }

    #[test]
    fn chain_decrease_is_tight() {
        let model = BuiltinModel::new(ModelId::Chain3);
        let f = Chain3Backstep { k1: 1.0, k2: 2.0, k3: 0.5 };
        let th = v(&[1.2, -0.7]);
        let x = v(&[0.9, -1.3, 0.4]);
        let m = decrease_margin(&f, &model, &x, &th, 0.0).unwrap();
        assert!(m.abs() < 1e-12, "{m}");
    }

    #[test]
    fn certificate_passes_for_default_eq7() {
        let model = BuiltinModel::new(ModelId::Eq7);
        let b = model.default_theta_box();
        let f = build_family(UclfId::Eq7Backstep, UclfConstants::default(), ModelId::Eq7, &b).unwrap();
        let small = SamplerSpec {
            half_width: 3.0,
            x_points: 5,
            theta_points: 3,
        };
        let r = verify_uclf(f.as_ref(), &model, &b, &small).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.samples, 125 * 81);
        assert!(r.min_margin >= -MARGIN_TOLERANCE);
        // the origin is sampled, where the margin is exactly zero
        assert!(r.min_margin <= 0.0);
    }

    #[test]
    fn certificate_fails_when_young_budget_is_violated() {
        let model = BuiltinModel::new(ModelId::Eq7);
        let b = model.default_theta_box();
        let consts = UclfConstants {
            k3: 1.0,
            ..UclfConstants::default()
        };
        let f = build_family(UclfId::Eq7Backstep, consts, ModelId::Eq7, &b).unwrap();
        let small = SamplerSpec {
            half_width: 3.0,
            x_points: 5,
            theta_points: 2,
        };
        let r = verify_uclf(f.as_ref(), &model, &b, &small).unwrap();
        assert!(!r.passed);
        let w = &r.witnesses[0];
        assert_eq!(w.kind, ViolationKind::DissipationNotPositive);
        assert!(w.q < 0.0 && w.x[0].abs() >= 1.5, "{w:?}");
        assert!(r.witnesses.iter().all(|w| w.kind != ViolationKind::Margin));
    }

    #[test]
    fn incompatible_family_rejected() {
        let b = BuiltinModel::new(ModelId::Min2).default_theta_box();
        assert!(matches!(
            build_family(UclfId::Eq7Backstep, UclfConstants::default(), ModelId::Min2, &b),
            Err(UclfError::IncompatibleModel { .. })
        ));
        let bad = UclfConstants {
            k1: 0.0,
            ..UclfConstants::default()
        };
        assert!(build_family(UclfId::Min2Backstep, bad, ModelId::Min2, &b).is_err());
    }

    #[test]
    fn multi_index_enumerates_all() {
        let all: Vec<_> = MultiIndex::new(&[2, 3]).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[5], vec![1, 2]);
        assert_eq!(MultiIndex::new(&[]).count(), 1);
    }
}
