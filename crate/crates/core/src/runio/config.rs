//! Scenario configuration.
//!
//! Configs are TOML. Top-level keys:
//!
//! ```toml
//! name = "odometry_1d"
//! seed = 42              # mandatory
//! steps = 40
//! backend = "all"        # kf | sc | dskf | all
//! output = "out.csv"     # optional, relative to the config file
//! units = "m"            # optional metadata
//!
//! [model]
//! preset = "random_walk_1d"   # or "pv_2d"; presets accept q and dt
//! q = 1.0
//! # Literal form instead of a preset:
//! # phi = [[1.0]]
//! # b = [[0.0]]
//! # g = [[1.0]]
//! # q_cov = [[1.0]]
//! control = [0.0]             # applied every step, defaults to zeros
//!
//! [initial]
//! mean = [0.0]
//! cov = [[1.0]]
//! exact = false               # true starts the truth at `mean`
//!
//! [measurement]
//! kind = "odometry"           # or "literal" with h_prior / h_current
//! position = [0, 1]           # state slice start, end (exclusive)
//! r = [[1.0]]
//! schedule = [[0, 3], [3, 7]] # (anchor epoch j, measurement epoch k)
//! ```
//!
//! Optional `state_dim` and `meas_dim` keys are checked against the derived
//! dimensions. Schedule pairs need `j < k <= steps` and must not overlap,
//! since a single anchor is held at a time.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::ConfigError;
use crate::matcore::{is_spd, Matrix};
use crate::models::{odometry_measurement, Belief, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Kf,
    Sc,
    Dskf,
    All,
}

impl Backend {
    /// Filters to run, in column order.
    pub fn expand(self) -> Vec<Backend> {
        match self {
            Backend::All => vec![Backend::Kf, Backend::Sc, Backend::Dskf],
            single => vec![single],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Backend::Kf => "kf",
            Backend::Sc => "sc",
            Backend::Dskf => "dskf",
            Backend::All => "all",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kf" => Ok(Backend::Kf),
            "sc" => Ok(Backend::Sc),
            "dskf" => Ok(Backend::Dskf),
            "all" => Ok(Backend::All),
            other => Err(ConfigError::field(
                "backend",
                format!("{other:?} is not one of kf, sc, dskf, all"),
            )),
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub steps: usize,
    pub backend: Backend,
    pub output: Option<PathBuf>,
    pub units: Option<String>,
    pub model: SystemModel,
    pub control: Vec<f64>,
    pub initial: Belief,
    pub exact_init: bool,
    pub h_prior: Matrix,
    pub h_current: Matrix,
    pub r_cov: Matrix,
    pub schedule: Vec<(usize, usize)>,
}

impl ScenarioConfig {
    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn meas_dim(&self) -> usize {
        self.r_cov.rows()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    seed: Option<u64>,
    steps: usize,
    backend: Option<String>,
    output: Option<PathBuf>,
    units: Option<String>,
    state_dim: Option<usize>,
    meas_dim: Option<usize>,
    model: RawModel,
    initial: RawInitial,
    measurement: RawMeasurement,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    preset: Option<String>,
    q: Option<f64>,
    dt: Option<f64>,
    phi: Option<Vec<Vec<f64>>>,
    b: Option<Vec<Vec<f64>>>,
    g: Option<Vec<Vec<f64>>>,
    q_cov: Option<Vec<Vec<f64>>>,
    control: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    #[serde(default)]
    exact: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurement {
    kind: Option<String>,
    position: Option<[usize; 2]>,
    h_prior: Option<Vec<Vec<f64>>>,
    h_current: Option<Vec<Vec<f64>>>,
    r: Vec<Vec<f64>>,
    schedule: Vec<[usize; 2]>,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|err| ConfigError::Parse {
        line: err.span().map(|span| line_of(text, span.start)),
        message: err.message().to_string(),
    })?;
    validate(raw)
}

fn line_of(text: &str, offset: usize) -> usize {
    let end = offset.min(text.len());
    text.as_bytes()[..end]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        + 1
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<Matrix, ConfigError> {
    if rows.is_empty() {
        return Err(ConfigError::field(field, "matrix has no rows"));
    }
    Matrix::from_rows(rows).map_err(|e| ConfigError::field(field, e.to_string()))
}

fn required(field: &str, value: &Option<Vec<Vec<f64>>>) -> Result<Matrix, ConfigError> {
    match value {
        Some(rows) => matrix(field, rows),
        None => Err(ConfigError::field(field, "required for a literal model")),
    }
}

fn preset_model(name: &str, q: f64, dt: f64) -> Result<SystemModel, ConfigError> {
    if !(q.is_finite() && q >= 0.0) {
        return Err(ConfigError::field(
            "model.q",
            "must be finite and non-negative",
        ));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ConfigError::field(
            "model.dt",
            "must be finite and positive",
        ));
    }
    let build = |phi: Vec<Vec<f64>>, b: Vec<Vec<f64>>, q_cov: Matrix| {
        let b = Matrix::from_rows(&b).expect("preset shape");
        SystemModel::new(
            Matrix::from_rows(&phi).expect("preset shape"),
            b.clone(),
            b,
            q_cov,
        )
        .map_err(|e| ConfigError::field("model", e.to_string()))
    };
    match name {
        "random_walk_1d" => build(
            vec![vec![1.0]],
            vec![vec![dt]],
            Matrix::diag(&[q]).expect("finite"),
        ),
        // [px, py, vx, vy] driven by a 2-D acceleration.
        "pv_2d" => {
            let h = 0.5 * dt * dt;
            build(
                vec![
                    vec![1.0, 0.0, dt, 0.0],
                    vec![0.0, 1.0, 0.0, dt],
                    vec![0.0, 0.0, 1.0, 0.0],
                    vec![0.0, 0.0, 0.0, 1.0],
                ],
                vec![vec![h, 0.0], vec![0.0, h], vec![dt, 0.0], vec![0.0, dt]],
                Matrix::diag(&[q, q]).expect("finite"),
            )
        }
        other => Err(ConfigError::field(
            "model.preset",
            format!("unknown preset {other:?} (expected random_walk_1d or pv_2d)"),
        )),
    }
}

fn build_model(raw: &RawModel) -> Result<SystemModel, ConfigError> {
    let literal = [&raw.phi, &raw.b, &raw.g, &raw.q_cov]
        .iter()
        .any(|m| m.is_some());
    match (&raw.preset, literal) {
        (Some(_), true) => Err(ConfigError::field(
            "model.preset",
            "give either a preset or literal matrices, not both",
        )),
        (Some(name), false) => preset_model(name, raw.q.unwrap_or(1.0), raw.dt.unwrap_or(1.0)),
        (None, _) => {
            if raw.q.is_some() || raw.dt.is_some() {
                return Err(ConfigError::field(
                    "model.q",
                    "q and dt only apply to presets",
                ));
            }
            SystemModel::new(
                required("model.phi", &raw.phi)?,
                required("model.b", &raw.b)?,
                required("model.g", &raw.g)?,
                required("model.q_cov", &raw.q_cov)?,
            )
            .map_err(|e| ConfigError::field("model", e.to_string()))
        }
    }
}

fn validate(raw: RawConfig) -> Result<ScenarioConfig, ConfigError> {
    let seed = raw.seed.ok_or_else(|| {
        ConfigError::field("seed", "missing; a seed is mandatory for reproducibility")
    })?;
    if raw.steps == 0 {
        return Err(ConfigError::field("steps", "must be at least 1"));
    }
    let backend: Backend = raw.backend.as_deref().unwrap_or("all").parse()?;

    let model = build_model(&raw.model)?;
    let n = model.state_dim();
    if let Some(declared) = raw.state_dim {
        if declared != n {
            return Err(ConfigError::field(
                "state_dim",
                format!("declared {declared}, model has {n}"),
            ));
        }
    }
    let control = raw
        .model
        .control
        .clone()
        .unwrap_or_else(|| vec![0.0; model.control_dim()]);
    if control.len() != model.control_dim() {
        return Err(ConfigError::field(
            "model.control",
            format!(
                "expected {} entries, got {}",
                model.control_dim(),
                control.len()
            ),
        ));
    }
    if control.iter().any(|v| !v.is_finite()) {
        return Err(ConfigError::field(
            "model.control",
            "entries must be finite",
        ));
    }

    let cov = matrix("initial.cov", &raw.initial.cov)?;
    if raw.initial.mean.len() != n || cov.shape() != (n, n) {
        return Err(ConfigError::field(
            "initial",
            format!("mean and cov must have dimension {n}"),
        ));
    }
    let initial = Belief::new(raw.initial.mean.clone(), cov)
        .map_err(|e| ConfigError::field("initial.cov", e.to_string()))?;

    let meas = &raw.measurement;
    let r_cov = matrix("measurement.r", &meas.r)?;
    if !r_cov.is_square() || !is_spd(&r_cov, 1e-10) {
        return Err(ConfigError::field(
            "measurement.r",
            "must be a symmetric PSD square matrix",
        ));
    }
    let (h_prior, h_current) = match meas.kind.as_deref().unwrap_or("odometry") {
        "odometry" => {
            if meas.h_prior.is_some() || meas.h_current.is_some() {
                return Err(ConfigError::field(
                    "measurement.kind",
                    "odometry takes `position`, not literal H",
                ));
            }
            let [start, end] = meas.position.unwrap_or([0, r_cov.rows()]);
            let odo = odometry_measurement(
                &vec![0.0; end.saturating_sub(start)],
                r_cov.clone(),
                n,
                start..end,
            )
            .map_err(|e| ConfigError::field("measurement.position", e.to_string()))?;
            (odo.h_prior().clone(), odo.h_current().clone())
        }
        "literal" => (
            matrix(
                "measurement.h_prior",
                meas.h_prior
                    .as_ref()
                    .ok_or_else(|| ConfigError::field("measurement.h_prior", "required"))?,
            )?,
            matrix(
                "measurement.h_current",
                meas.h_current
                    .as_ref()
                    .ok_or_else(|| ConfigError::field("measurement.h_current", "required"))?,
            )?,
        ),
        other => {
            return Err(ConfigError::field(
                "measurement.kind",
                format!("{other:?} is not odometry or literal"),
            ))
        }
    };
    let m = r_cov.rows();
    if h_prior.shape() != (m, n) || h_current.shape() != (m, n) {
        return Err(ConfigError::field(
            "measurement",
            format!("H matrices must be {m}x{n} to match r and the model"),
        ));
    }
    if let Some(declared) = raw.meas_dim {
        if declared != m {
            return Err(ConfigError::field(
                "meas_dim",
                format!("declared {declared}, measurement has {m}"),
            ));
        }
    }

    let mut last_k = 0;
    for (idx, &[j, k]) in meas.schedule.iter().enumerate() {
        if j >= k {
            return Err(ConfigError::field(
                "schedule",
                format!("pair {idx} ({j}, {k}) needs j < k"),
            ));
        }
        if k > raw.steps {
            return Err(ConfigError::field(
                "schedule",
                format!("pair {idx} epoch {k} exceeds steps = {}", raw.steps),
            ));
        }
        if j < last_k {
            return Err(ConfigError::field(
                "schedule",
                format!("pair {idx} anchors at {j} before the previous measurement epoch {last_k}"),
            ));
        }
        last_k = k;
    }

    Ok(ScenarioConfig {
        name: raw.name.unwrap_or_else(|| "scenario".to_string()),
        seed,
        steps: raw.steps,
        backend,
        output: raw.output,
        units: raw.units,
        model,
        control,
        initial,
        exact_init: raw.initial.exact,
        h_prior,
        h_current,
        r_cov,
        schedule: meas.schedule.iter().map(|&[j, k]| (j, k)).collect(),
    })
}
