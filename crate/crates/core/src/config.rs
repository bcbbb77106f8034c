//! Experiment configuration: a strict TOML schema with matrices written as
//! arrays of rows, plus `section.key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::estimator::{WeightFamily, WeightFunction, DEFAULT_GAMMA_REG};
use crate::linalg::Mat;
use crate::model::{validate_model, GameModel};
use crate::sim::{EstimatorSettings, SimConfig, StrategySettings};
use crate::strategy::DEFAULT_T0;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub sim: SimBlock,
    #[serde(default)]
    pub estimator: EstimatorBlock,
    #[serde(default)]
    pub strategy: StrategyBlock,
    #[serde(default)]
    pub diagnostics: DiagnosticsBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub a: Rows,
    pub b1: Rows,
    pub b2: Rows,
    pub d: Rows,
    pub q: Rows,
    pub r1: Rows,
    pub r2: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub horizon: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    /// TOML integers are signed, so seeds above `i64::MAX` cannot be
    /// written here (the command line accepts any `u64`).
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Rows>,
    pub cov0_scale: f64,
    pub weight: WeightFamily,
    pub delta: f64,
    pub gamma_reg: f64,
}

impl Default for EstimatorBlock {
    fn default() -> Self {
        Self {
            theta0: None,
            cov0_scale: 1.0,
            weight: WeightFamily::LogPower,
            delta: 1.0,
            gamma_reg: DEFAULT_GAMMA_REG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyBlock {
    pub t0: f64,
    pub dither: bool,
    /// Lower bound on the dither amplitude; zero keeps the plain schedule.
    pub gamma_floor: f64,
}

impl Default for StrategyBlock {
    fn default() -> Self {
        Self {
            t0: DEFAULT_T0,
            dither: true,
            gamma_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsBlock {
    pub n_seeds: usize,
    /// Worker threads for ensembles; 0 uses every available core.
    pub threads: usize,
    /// Ratio bound between the stability statistic at `T` and at `T/2`.
    pub stability_growth: f64,
    pub checkpoints: Vec<u64>,
    /// Final median estimate error allowed, as a fraction of `‖θ‖_F`.
    pub consistency_fraction: f64,
    pub nash_value_horizon: f64,
    pub nash_value_tolerance: f64,
    /// Absolute bound on the payoff when the value of the game is zero.
    pub zero_value_tolerance: f64,
    pub nash_gap_horizon: f64,
    pub deviations: Vec<f64>,
    pub slack_fraction: f64,
    pub slack_iqr_factor: f64,
    pub dither_epochs: u64,
    pub dither_band: f64,
}

impl Default for DiagnosticsBlock {
    fn default() -> Self {
        Self {
            n_seeds: 20,
            threads: 0,
            stability_growth: 2.0,
            checkpoints: vec![200, 1000, 5000],
            consistency_fraction: 0.2,
            nash_value_horizon: 5000.0,
            nash_value_tolerance: 0.15,
            zero_value_tolerance: 1e-3,
            nash_gap_horizon: 5000.0,
            deviations: vec![0.3, -0.3],
            slack_fraction: 0.05,
            slack_iqr_factor: 2.0,
            dither_epochs: 200,
            dither_band: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub directory: String,
    pub plot_script: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: "output".into(),
            plot_script: false,
        }
    }
}

fn default_h() -> f64 {
    0.005
}

fn default_stride() -> usize {
    20
}

/// Everything needed to run one configured experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: GameModel,
    pub sim: SimConfig,
    pub estimator: EstimatorSettings,
    pub strategy: StrategySettings,
    pub diagnostics: DiagnosticsBlock,
}

pub fn rows_to_mat(name: &str, rows: &Rows) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(GameError::Config(format!(
            "{name}: row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ModelBlock {
    pub fn to_model(&self) -> Result<GameModel> {
        let model = GameModel {
            a: rows_to_mat("model.a", &self.a)?,
            b1: rows_to_mat("model.b1", &self.b1)?,
            b2: rows_to_mat("model.b2", &self.b2)?,
            d: rows_to_mat("model.d", &self.d)?,
            q: rows_to_mat("model.q", &self.q)?,
            r1: rows_to_mat("model.r1", &self.r1)?,
            r2: rows_to_mat("model.r2", &self.r2)?,
        };
        // a player without inputs is written `b = []`; give the matrix n rows
        let n = model.a.nrows();
        let fix = |m: Mat| if m.nrows() == 0 { Mat::zeros(n, 0) } else { m };
        let model = GameModel {
            b1: fix(model.b1),
            b2: fix(model.b2),
            d: fix(model.d),
            ..model
        };
        let issues = validate_model(&model);
        if !issues.is_empty() {
            let text: Vec<String> = issues.iter().map(|i| format!("model: {i}")).collect();
            return Err(GameError::Config(text.join("; ")));
        }
        Ok(model)
    }

    pub fn from_model(m: &GameModel) -> Self {
        Self {
            a: mat_to_rows(&m.a),
            b1: mat_to_rows(&m.b1),
            b2: mat_to_rows(&m.b2),
            d: mat_to_rows(&m.d),
            q: mat_to_rows(&m.q),
            r1: mat_to_rows(&m.r1),
            r2: mat_to_rows(&m.r2),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GameError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GameError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            GameError::Config(msg) => GameError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses `text` and applies `section.key=value` overrides before the
    /// schema check, so an override naming an unknown key is rejected the
    /// same way as a misspelled key in the file.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| GameError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let text = toml::to_string(&doc).map_err(|e| GameError::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GameError::Config(e.to_string()))
    }

    pub fn experiment(&self) -> Result<Experiment> {
        let model = self.model.to_model()?;
        let dims = model.dims();
        let sim = SimConfig {
            horizon: self.sim.horizon,
            h: self.sim.h,
            seed: self.sim.seed,
            x0: self.sim.x0.clone().unwrap_or_else(|| vec![0.0; dims.n]),
            dither_enabled: self.strategy.dither,
            gamma_floor: self.strategy.gamma_floor,
            record_stride: self.sim.record_stride,
        };
        sim.validate(dims.n).map_err(|e| GameError::Config(format!("sim: {e}")))?;
        let theta0 = match &self.estimator.theta0 {
            Some(rows) => {
                let m = rows_to_mat("estimator.theta0", rows)?;
                if m.shape() != (dims.regressor_len(), dims.n) {
                    return Err(GameError::Config(format!(
                        "estimator.theta0 must be {}x{}, found {}x{}",
                        dims.regressor_len(),
                        dims.n,
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Some(m)
            }
            None => None,
        };
        let weight = WeightFunction::new(self.estimator.weight, self.estimator.delta)
            .map_err(|e| GameError::Config(format!("estimator: {e}")))?;
        if !(self.estimator.cov0_scale > 0.0) {
            return Err(GameError::Config("estimator.cov0_scale must be positive".into()));
        }
        if !(self.strategy.t0 > 0.0) {
            return Err(GameError::Config("strategy.t0 must be positive".into()));
        }
        if !(self.strategy.gamma_floor >= 0.0) {
            return Err(GameError::Config("strategy.gamma_floor must be nonnegative".into()));
        }
        Ok(Experiment {
            model,
            sim,
            estimator: EstimatorSettings {
                theta0,
                cov0_scale: self.estimator.cov0_scale,
                weight,
                gamma_reg: self.estimator.gamma_reg,
            },
            strategy: StrategySettings { t0: self.strategy.t0 },
            diagnostics: self.diagnostics.clone(),
        })
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML value
/// (`0.01`, `true`, `[1, 2]`, ...) and falls back to a plain string.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| GameError::Config(format!("override `{spec}` is not of the form KEY=VALUE")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(GameError::Config(format!("override `{spec}` has an empty key")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = doc;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| GameError::Config(format!("override `{spec}`: `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}
