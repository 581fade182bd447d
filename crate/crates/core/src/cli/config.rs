//! TOML run configuration and its translation into a validated [`Scenario`].
//!
//! Every key is optional except `[model] id`; omitted keys take the
//! built-in defaults of the selected model and law.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::adapt::{AdaptConfig, AdaptError, GainFunction, GainLaw};
use crate::numkit::{IntegratorSpec, NumError};
use crate::plant::{BuiltinModel, ModelId, ParamBox, PlantError, SystemModel};
use crate::simloop::{Scenario, SimError};
use crate::uclf::{UclfConstants, UclfError};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelTable,
    #[serde(default)]
    pub uclf: UclfTable,
    #[serde(default)]
    pub adapt: AdaptTable,
    #[serde(default)]
    pub integrator: IntegratorTable,
    #[serde(default)]
    pub scenario: ScenarioTable,
    #[serde(default)]
    pub output: OutputTable,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelTable {
    pub id: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UclfTable {
    pub id: Option<String>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    pub beta: Option<f64>,
}

/// A scalar applied to every parameter, or one value per parameter.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PerParam {
    All(f64),
    Each(Vec<f64>),
}

impl PerParam {
    fn expand(&self, p: usize) -> Vec<f64> {
        match self {
            PerParam::All(v) => vec![*v; p],
            PerParam::Each(v) => v.clone(),
        }
    }
}

/// `Γ` as a multiple of the identity, a diagonal, or a full matrix.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scaled(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptTable {
    pub variant: Option<String>,
    pub gain: Option<String>,
    pub gamma_bar: Option<PerParam>,
    pub tau: Option<PerParam>,
    pub eta: Option<PerParam>,
    pub lambda: Option<PerParam>,
    pub beta: Option<f64>,
    pub filter_pole: Option<f64>,
    pub projection: Option<bool>,
    pub matched: Option<bool>,
    pub composite: Option<bool>,
    pub matched_gain: Option<MatrixSpec>,
    pub log_offset: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorTable {
    pub method: Option<String>,
    pub step: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub min_step: Option<f64>,
    pub max_step: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTable {
    pub name: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub theta_hat0: Option<Vec<f64>>,
    pub phi_hat0: Option<Vec<f64>>,
    pub theta_true: Option<Vec<f64>>,
    pub phi_true: Option<Vec<f64>>,
    pub theta_box: Option<Vec<(f64, f64)>>,
    pub phi_box: Option<Vec<(f64, f64)>>,
    pub horizon: Option<f64>,
    pub output_step: Option<f64>,
    pub divergence_bound: Option<f64>,
    pub exact_filter_init: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputTable {
    pub format: Option<String>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Json,
}

impl FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "json" => Ok(TraceFormat::Json),
            other => Err(format!("unknown trace format `{other}`; expected csv or json")),
        }
    }
}

/// A parsed configuration, its validated scenario and output settings.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub scenario: Scenario,
    pub format: TraceFormat,
    pub out_dir: Option<PathBuf>,
}

/// Diagnostic pointing at the offending key of a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    /// Dotted key path, e.g. `adapt.eta`.
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, ": {key}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let origin = path.display().to_string();
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
        origin: origin.clone(),
        line: None,
        key: None,
        message: format!("cannot read: {e}"),
    })?;
    parse_str(&src, &origin)
}

pub fn parse_str(src: &str, origin: &str) -> Result<Loaded, ConfigError> {
    let config: RunConfig = toml::from_str(src).map_err(|e| ConfigError {
        origin: origin.to_string(),
        line: e.span().map(|r| line_of_offset(src, r.start)),
        key: None,
        message: e.message().trim().to_string(),
    })?;
    let located = |(table, key): (&str, &str), message: String| ConfigError {
        origin: origin.to_string(),
        line: find_key_line(src, table, key),
        key: Some(format!("{table}.{key}")),
        message,
    };
    let scenario = build_scenario(&config).map_err(|(at, msg)| located(at, msg))?;
    let format = match &config.output.format {
        Some(f) => f.parse().map_err(|m| located(("output", "format"), m))?,
        None => TraceFormat::Csv,
    };
    Ok(Loaded {
        out_dir: config.output.path.clone(),
        config,
        scenario,
        format,
    })
}

type Located = ((&'static str, &'static str), String);

fn build_scenario(c: &RunConfig) -> Result<Scenario, Located> {
    let model: ModelId = c.model.id.parse().map_err(|e: PlantError| (("model", "id"), e.to_string()))?;
    let law: GainLaw = match &c.adapt.variant {
        Some(v) => v.parse().map_err(|e: AdaptError| (("adapt", "variant"), e.to_string()))?,
        None => GainLaw::Corollary1,
    };
    let mut s = Scenario::defaults(model, law);
    let dims = BuiltinModel::new(model).dims();
    let sc = &c.scenario;

    if let Some(name) = &sc.name {
        s.name = name.clone();
    }
    if let Some(b) = &sc.theta_box {
        s.theta_box = ParamBox::new(b).map_err(|e| (("scenario", "theta_box"), e.to_string()))?;
    }
    if let Some(b) = &sc.phi_box {
        s.phi_box = ParamBox::new(b).map_err(|e| (("scenario", "phi_box"), e.to_string()))?;
    }
    let vec = |v: &Option<Vec<f64>>, target: &mut DVector<f64>| {
        if let Some(v) = v {
            *target = DVector::from_vec(v.clone());
        }
    };
    vec(&sc.x0, &mut s.x0);
    vec(&sc.theta_hat0, &mut s.theta_hat0);
    vec(&sc.phi_hat0, &mut s.phi_hat0);
    vec(&sc.theta_true, &mut s.truth.theta);
    vec(&sc.phi_true, &mut s.truth.phi);
    if let Some(v) = sc.output_step {
        s.output_step = v;
    }
    if let Some(v) = sc.divergence_bound {
        s.divergence_bound = v;
    }
    if let Some(v) = sc.exact_filter_init {
        s.exact_filter_init = v;
    }

    let u = &c.uclf;
    if let Some(id) = &u.id {
        s.uclf = id.parse().map_err(|e: UclfError| (("uclf", "id"), e.to_string()))?;
    }
    let d = UclfConstants::default();
    s.constants = UclfConstants {
        k1: u.k1.unwrap_or(d.k1),
        k2: u.k2.unwrap_or(d.k2),
        k3: u.k3.unwrap_or(d.k3),
        beta: u.beta.unwrap_or(d.beta),
    };

    s.adapt = build_adapt(&c.adapt, law, &s.theta_box, dims.q)?;
    s.integrator = build_integrator(&c.integrator, sc.horizon.unwrap_or(s.horizon()))?;

    s.validate().map_err(locate_sim_error)?;
    Ok(s)
}

fn build_adapt(a: &AdaptTable, law: GainLaw, theta_box: &ParamBox, q: usize) -> Result<AdaptConfig, Located> {
    let p = theta_box.dim();
    let mut cfg = AdaptConfig::defaults(law, theta_box, q);
    let per_param = |key: &'static str, v: &PerParam| {
        let out = v.expand(p);
        if out.len() == p {
            Ok(out)
        } else {
            Err((("adapt", key), format!("expected {p} per-parameter entries, got {}", out.len())))
        }
    };
    let family = a.gain.as_deref().unwrap_or("exponential");
    let gamma_bar = match &a.gamma_bar {
        Some(v) => per_param("gamma_bar", v)?,
        None => vec![1.0; p],
    };
    let tau = match &a.tau {
        Some(v) => per_param("tau", v)?,
        None => vec![1.0; p],
    };
    cfg.gains = match family {
        "exponential" => gamma_bar
            .iter()
            .zip(&tau)
            .map(|(&g, &t)| GainFunction::exponential(g, t))
            .collect(),
        "rational" => {
            if a.tau.is_some() {
                return Err((("adapt", "tau"), "the rational family takes no time constant".into()));
            }
            gamma_bar.iter().map(|&g| GainFunction::rational(g)).collect()
        }
        other => {
            return Err((
                ("adapt", "gain"),
                format!("unknown gain family `{other}`; expected exponential or rational"),
            ))
        }
    };
    if let Some(v) = &a.eta {
        cfg.eta = DVector::from_vec(v.expand(p));
    }
    if let Some(v) = &a.lambda {
        cfg.lambda = DVector::from_vec(v.expand(p));
    }
    if let Some(v) = a.beta {
        cfg.composite_weight = v;
    }
    if let Some(v) = a.filter_pole {
        cfg.filter_pole = v;
    }
    if let Some(v) = a.projection {
        cfg.projection = v;
    }
    if let Some(v) = a.matched {
        cfg.matched = v;
    }
    if let Some(v) = a.composite {
        cfg.composite = v;
    }
    if let Some(v) = a.log_offset {
        cfg.log_offset = v;
    }
    if let Some(g) = &a.matched_gain {
        cfg.matched_gain = match g {
            MatrixSpec::Scaled(v) => DMatrix::identity(q, q) * *v,
            MatrixSpec::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_vec(d.clone())),
            MatrixSpec::Full(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != cols) {
                    return Err((("adapt", "matched_gain"), "rows have unequal lengths".into()));
                }
                DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
            }
        };
    }
    Ok(cfg)
}

fn build_integrator(t: &IntegratorTable, horizon: f64) -> Result<IntegratorSpec, Located> {
    match t.method.as_deref().unwrap_or("rk4") {
        "rk4" => {
            for (key, set) in [
                ("rel_tol", t.rel_tol.is_some()),
                ("abs_tol", t.abs_tol.is_some()),
                ("min_step", t.min_step.is_some()),
                ("max_step", t.max_step.is_some()),
            ] {
                if set {
                    return Err((("integrator", key), "only used by method = \"rk45\"".into()));
                }
            }
            Ok(IntegratorSpec::rk4(t.step.unwrap_or(1e-3), horizon))
        }
        "rk45" => {
            if t.step.is_some() {
                return Err((("integrator", "step"), "only used by method = \"rk4\"".into()));
            }
            Ok(IntegratorSpec::rk45(
                t.rel_tol.unwrap_or(1e-9),
                t.abs_tol.unwrap_or(1e-12),
                t.min_step.unwrap_or(1e-10),
                t.max_step.unwrap_or(1e-2),
                horizon,
            ))
        }
        other => Err((
            ("integrator", "method"),
            format!("unknown method `{other}`; expected rk4 or rk45"),
        )),
    }
}

const SCENARIO_KEYS: [&str; 12] = [
    "name",
    "x0",
    "theta_hat0",
    "phi_hat0",
    "theta_true",
    "phi_true",
    "theta_box",
    "phi_box",
    "horizon",
    "output_step",
    "divergence_bound",
    "exact_filter_init",
];

fn locate_sim_error(e: SimError) -> Located {
    let msg = e.to_string();
    let at: (&'static str, &'static str) = match &e {
        SimError::Invalid { key, .. } if SCENARIO_KEYS.contains(key) => ("scenario", key),
        SimError::Invalid { key, .. } => ("adapt", key),
        SimError::Adapt(AdaptError::Config { key, .. }) => ("adapt", key),
        SimError::Adapt(_) => ("adapt", "gain"),
        SimError::Uclf(UclfError::InvalidConstant { name, .. }) => ("uclf", name),
        SimError::Uclf(_) => ("uclf", "id"),
        SimError::Numeric(NumError::InvalidSpec { key: "horizon", .. }) => ("scenario", "horizon"),
        SimError::Numeric(NumError::InvalidSpec { key, .. }) => ("integrator", key),
        _ => ("model", "id"),
    };
    (at, msg)
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// 1-based line of `key` inside `[table]`, falling back to the table header
/// when the key is absent (the invalid value is then a default).
pub fn find_key_line(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            if let Some(end) = rest.find(']') {
                current = rest[..end].trim().to_string();
                if current == table {
                    header = Some(i + 1);
                }
                continue;
            }
        }
        if current != table {
            continue;
        }
        let Some(after) = line.strip_prefix(key) else {
            continue;
        };
        if after.trim_start().starts_with('=') {
            return Some(i + 1);
        }
    }
    header
}
