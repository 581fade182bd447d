//! Uncertain plant models `ẋ = f(x,t) − Δ(x,t)ᵀθ + B(x,t)[u − Ψ(x,t)ᵀφ]`,
//! parameter boxes and the built-in benchmark systems.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid parameter box: {0}")]
    InvalidBox(String),
    #[error("true parameter {index} = {value} lies outside [{lo}, {hi}]")]
    TruthOutsideBox {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("unknown model id `{0}`")]
    UnknownModel(String),
}

/// State, input, unmatched-parameter and matched-parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
}

/// Evaluatable uncertain dynamics split into `(f, Δ, B, Ψ)`.
///
/// `Δ` is `p×n`, `B` is `n×m` and `Ψ` is `q×m`, so that `Ψᵀφ ∈ Rᵐ` can be
/// subtracted from the input.
pub trait SystemModel: fmt::Debug + Send + Sync {
    fn dims(&self) -> Dims;
    fn drift(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    fn regressor(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn input_matrix(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;
    /// `None` when the model has no matched parameters.
    fn matched_regressor(&self, x: &DVector<f64>, t: f64) -> Option<DMatrix<f64>>;
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), PlantError> {
    if expected == got {
        Ok(())
    } else {
        Err(PlantError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

/// State derivative `f − Δᵀθ + B(u − Ψᵀφ)`; the `Ψ` term is absent when `q = 0`.
pub fn eval_dynamics(
    model: &dyn SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>, PlantError> {
    let d = model.dims();
    check_len("state", d.n, x.len())?;
    check_len("input", d.m, u.len())?;
    check_len("theta", d.p, theta.len())?;
    check_len("phi", d.q, phi.len())?;
    let mut dx = model.drift(x, t);
    if d.p > 0 {
        dx -= model.regressor(x, t).transpose() * theta;
    }
    let mut input = u.clone();
    if let Some(psi) = model.matched_regressor(x, t) {
        input -= psi.transpose() * phi;
    }
    dx += model.input_matrix(x, t) * input;
    Ok(dx)
}

/// `Δ(x,t)`, checked against the declared dimensions.
pub fn regressor_unmatched(model: &dyn SystemModel, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>, PlantError> {
    let d = model.dims();
    check_len("state", d.n, x.len())?;
    let delta = model.regressor(x, t);
    check_len("regressor rows", d.p, delta.nrows())?;
    check_len("regressor columns", d.n, delta.ncols())?;
    Ok(delta)
}

/// `Ψ(x,t)`; errors for models without matched parameters.
pub fn regressor_matched(model: &dyn SystemModel, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>, PlantError> {
    let d = model.dims();
    check_len("state", d.n, x.len())?;
    model
        .matched_regressor(x, t)
        .ok_or_else(|| PlantError::Unsupported("model has no matched parameters (q = 0)".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Compact box `Θ = Π [lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    intervals: Vec<Interval>,
}

impl ParamBox {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self, PlantError> {
        let mut intervals = Vec::with_capacity(bounds.len());
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(PlantError::InvalidBox(format!("interval {i} is unbounded")));
            }
            if lo > hi {
                return Err(PlantError::InvalidBox(format!("interval {i}: lo {lo} > hi {hi}")));
            }
            intervals.push(Interval { lo, hi });
        }
        Ok(Self { intervals })
    }

    pub fn empty() -> Self {
        Self { intervals: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn interval(&self, i: usize) -> Interval {
        self.intervals[i]
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        v.len() == self.dim()
            && self
                .intervals
                .iter()
                .zip(v.iter())
                .all(|(iv, &a)| iv.lo <= a && a <= iv.hi)
    }

    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            v.len(),
            v.iter()
                .zip(&self.intervals)
                .map(|(&a, iv)| a.clamp(iv.lo, iv.hi)),
        )
    }

    pub fn clamp_slice(&self, v: &mut [f64]) {
        for (a, iv) in v.iter_mut().zip(&self.intervals) {
            *a = a.clamp(iv.lo, iv.hi);
        }
    }

    /// Worst-case estimation errors `ϑ̃_i = hi_i − lo_i`.
    pub fn max_errors(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.intervals.iter().map(|iv| iv.hi - iv.lo))
    }

    /// Largest `|θ_i|` over the box.
    pub fn max_abs(&self, i: usize) -> f64 {
        let iv = self.intervals[i];
        iv.lo.abs().max(iv.hi.abs())
    }

    /// `points` evenly spaced values per axis, endpoints included.
    pub fn axis_grid(&self, i: usize, points: usize) -> Vec<f64> {
        let iv = self.intervals[i];
        if points <= 1 || iv.lo == iv.hi {
            return vec![0.5 * (iv.lo + iv.hi)];
        }
        (0..points)
            .map(|k| iv.lo + (iv.hi - iv.lo) * k as f64 / (points - 1) as f64)
            .collect()
    }

    pub fn check_member(&self, v: &DVector<f64>) -> Result<(), PlantError> {
        check_len("box dimension", self.dim(), v.len())?;
        for (index, (iv, &value)) in self.intervals.iter().zip(v.iter()).enumerate() {
            if !(iv.lo <= value && value <= iv.hi) {
                return Err(PlantError::TruthOutsideBox {
                    index,
                    value,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        Ok(())
    }
}

/// Simulation ground truth, hidden from the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParams {
    pub theta: DVector<f64>,
    pub phi: DVector<f64>,
}

impl TrueParams {
    pub fn validate(&self, theta_box: &ParamBox, phi_box: &ParamBox) -> Result<(), PlantError> {
        theta_box.check_member(&self.theta)?;
        phi_box.check_member(&self.phi)
    }
}

/// Identifiers of the built-in systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    /// Three-state benchmark with four parameters entering through `Δ`.
    Eq7,
    /// Same plant with `θ₃, θ₄` moved into the matched channel (`φ`).
    Eq7Split,
    /// Strict-feedback chain `ẋ₁=x₂−θ₁x₁, ẋ₂=x₃−θ₂x₂, ẋ₃=u`.
    Chain3,
    /// Minimal `ẋ₁=x₂−θ₁x₁, ẋ₂=u`.
    Min2,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Eq7, ModelId::Eq7Split, ModelId::Chain3, ModelId::Min2];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Eq7 => "eq7",
            ModelId::Eq7Split => "eq7-split",
            ModelId::Chain3 => "chain3",
            ModelId::Min2 => "min2",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = PlantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PlantError::UnknownModel(s.to_string()))
    }
}

const EQ7_BOX: [(f64, f64); 4] = [(-2.1, 1.5), (-3.0, 1.5), (-1.8, 2.25), (-5.25, 1.5)];
const EQ7_TRUTH: [f64; 4] = [-1.8, -2.4, -0.75, -2.25];

/// A built-in time-invariant benchmark model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinModel {
    id: ModelId,
}

impl BuiltinModel {
    pub fn new(id: ModelId) -> Self {
        Self { id }
    }

    pub fn id(&self) -> ModelId {
        self.id
    }

    pub fn default_theta_box(&self) -> ParamBox {
        let b: Vec<(f64, f64)> = match self.id {
            ModelId::Eq7 => EQ7_BOX.to_vec(),
            ModelId::Eq7Split => EQ7_BOX[..2].to_vec(),
            ModelId::Chain3 => vec![(-2.0, 2.0), (-1.0, 3.0)],
            ModelId::Min2 => vec![(-2.0, 2.0)],
        };
        ParamBox::new(&b).expect("built-in box is valid")
    }

    pub fn default_phi_box(&self) -> ParamBox {
        match self.id {
            ModelId::Eq7Split => ParamBox::new(&EQ7_BOX[2..]).expect("built-in box is valid"),
            _ => ParamBox::empty(),
        }
    }

    pub fn default_truth(&self) -> TrueParams {
        let (theta, phi): (Vec<f64>, Vec<f64>) = match self.id {
            ModelId::Eq7 => (EQ7_TRUTH.to_vec(), vec![]),
            ModelId::Eq7Split => (EQ7_TRUTH[..2].to_vec(), EQ7_TRUTH[2..].to_vec()),
            ModelId::Chain3 => (vec![-0.7, 2.5], vec![]),
            ModelId::Min2 => (vec![-1.5], vec![]),
        };
        TrueParams {
            theta: DVector::from_vec(theta),
            phi: DVector::from_vec(phi),
        }
    }

    pub fn default_x0(&self) -> DVector<f64> {
        match self.id {
            ModelId::Eq7 | ModelId::Eq7Split => DVector::from_vec(vec![0.5, -0.5, 0.25]),
            ModelId::Chain3 => DVector::from_vec(vec![0.0, 0.5, 0.0]),
            ModelId::Min2 => DVector::from_vec(vec![0.5, 0.0]),
        }
    }

    /// Default initial estimates `(θ̂(0), φ̂(0))`. The chain starts with the
    /// second estimate exact, so only the first transient can destabilize.
    pub fn default_estimates(&self) -> (DVector<f64>, DVector<f64>) {
        let (theta, phi): (Vec<f64>, Vec<f64>) = match self.id {
            ModelId::Eq7 => (vec![-1.5, 0.0, -1.6, -4.0], vec![]),
            ModelId::Eq7Split => (vec![-1.5, 0.0], vec![-1.6, -4.0]),
            ModelId::Chain3 => (vec![0.75, 2.5], vec![]),
            ModelId::Min2 => (vec![0.0], vec![]),
        };
        (DVector::from_vec(theta), DVector::from_vec(phi))
    }
}

impl SystemModel for BuiltinModel {
    fn dims(&self) -> Dims {
        match self.id {
            ModelId::Eq7 => Dims { n: 3, m: 1, p: 4, q: 0 },
            ModelId::Eq7Split => Dims { n: 3, m: 1, p: 2, q: 2 },
            ModelId::Chain3 => Dims { n: 3, m: 1, p: 2, q: 0 },
            ModelId::Min2 => Dims { n: 2, m: 1, p: 1, q: 0 },
        }
    }

    fn drift(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        match self.id {
            ModelId::Eq7 | ModelId::Eq7Split => DVector::from_vec(vec![x[2], -x[1], x[1].tanh()]),
            ModelId::Chain3 => DVector::from_vec(vec![x[1], x[2], 0.0]),
            ModelId::Min2 => DVector::from_vec(vec![x[1], 0.0]),
        }
    }

    fn regressor(&self, x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        match self.id {
            ModelId::Eq7 => {
                let x1sq = x[0] * x[0];
                DMatrix::from_row_slice(
                    4,
                    3,
                    &[
                        x[0], 0.0, 0.0, //
                        0.0, x1sq, 0.0, //
                        0.0, 0.0, x[2], //
                        0.0, 0.0, x1sq,
                    ],
                )
            }
            ModelId::Eq7Split => DMatrix::from_row_slice(
                2,
                3,
                &[
                    x[0], 0.0, 0.0, //
                    0.0, x[0] * x[0], 0.0,
                ],
            ),
            ModelId::Chain3 => DMatrix::from_row_slice(
                2,
                3,
                &[
                    x[0], 0.0, 0.0, //
                    0.0, x[1], 0.0,
                ],
            ),
            ModelId::Min2 => DMatrix::from_row_slice(1, 2, &[x[0], 0.0]),
        }
    }

    fn input_matrix(&self, _x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        match self.id {
            ModelId::Eq7 | ModelId::Eq7Split | ModelId::Chain3 => DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
            ModelId::Min2 => DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        }
    }

    fn matched_regressor(&self, x: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        match self.id {
            ModelId::Eq7Split => Some(DMatrix::from_column_slice(2, 1, &[x[2], x[0] * x[0]])),
            _ => None,
        }
    }
}
