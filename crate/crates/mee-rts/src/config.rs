//! Experiment configuration (TOML) and the deterministic CSV/JSON result
//! emitters used by the `mee-rts` binary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    find_scenario, Algorithm, MeasurementNoise, RunResult, ScenarioSpec, SweepParameter,
};
use crate::model::MeeConfig;
use crate::noise::NoiseSpec;

/// Output format for result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<OutputFormat> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::Config(format!("unknown format {s:?}; expected csv or json"))),
        }
    }
}

/// Optional MEE tuning overrides; unset fields fall back to the scenario's
/// defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeeOverrides {
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub max_iter: Option<usize>,
    pub jitter: Option<f64>,
    pub forgetting: Option<f64>,
}

/// Optional scenario overrides for quick experiments without editing the
/// catalog.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub horizon: Option<usize>,
    pub mc_runs: Option<usize>,
    pub nominal_q: Option<f64>,
    pub nominal_r: Option<Vec<f64>>,
    pub mcc_sigma: Option<f64>,
    pub measurement_noise: Option<NoiseSpec>,
    pub process_noise: Option<NoiseSpec>,
}

/// Sweep block: which parameter to vary and over which values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// Output block: directory and table format.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

/// Top-level experiment configuration, parsed from TOML.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Catalog scenario name (see `mee-rts list-scenarios`).
    pub scenario: String,
    /// Algorithm names; defaults to all applicable algorithms when empty.
    #[serde(default)]
    pub algorithms: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mee: MeeOverrides,
    #[serde(default)]
    pub overrides: ScenarioOverrides,
    #[serde(default)]
    pub output: OutputBlock,
    pub sweep: Option<SweepBlock>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        ExperimentConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario.is_empty() {
            return Err(Error::Config("field `scenario` must name a scenario".into()));
        }
        for name in &self.algorithms {
            Algorithm::parse(name)?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("field `sweep.values` must be non-empty".into()));
            }
        }
        Ok(())
    }

    /// Resolves the config against the catalog: scenario with overrides
    /// applied, algorithm list, and the effective MEE parameters.
    pub fn resolve(&self) -> Result<(ScenarioSpec, Vec<Algorithm>, MeeConfig)> {
        let mut spec = find_scenario(&self.scenario)?;
        let o = &self.overrides;
        if let Some(v) = o.horizon {
            spec.horizon = v;
        }
        if let Some(v) = o.mc_runs {
            spec.mc_runs = v;
        }
        if let Some(v) = o.nominal_q {
            spec.nominal_q = v;
        }
        if let Some(v) = &o.nominal_r {
            spec.nominal_r = v.clone();
        }
        if let Some(v) = o.mcc_sigma {
            spec.mcc_sigma = v;
        }
        if let Some(v) = &o.measurement_noise {
            spec.measurement_noise = MeasurementNoise::Iid(v.clone());
        }
        if let Some(v) = &o.process_noise {
            spec.process_noise = v.clone();
        }
        let mut mee = MeeConfig { sigma: spec.sigma, ..MeeConfig::default() };
        if let Some(v) = self.mee.sigma {
            mee.sigma = v;
            spec.sigma = v;
        }
        if let Some(v) = self.mee.tau {
            mee.tau = v;
        }
        if let Some(v) = self.mee.max_iter {
            mee.max_iter = v;
        }
        if let Some(v) = self.mee.jitter {
            mee.jitter = v;
        }
        if let Some(v) = self.mee.forgetting {
            mee.forgetting = v;
        }
        mee.validate()?;
        spec.validate()?;
        let algorithms = if self.algorithms.is_empty() {
            vec![
                Algorithm::Kf,
                Algorithm::Rts,
                Algorithm::Mckf,
                Algorithm::McRts,
                Algorithm::MeeKf,
                Algorithm::MeeRts,
            ]
        } else {
            self.algorithms
                .iter()
                .map(|s| Algorithm::parse(s))
                .collect::<Result<Vec<_>>>()?
        };
        Ok((spec, algorithms, mee))
    }
}

fn fmt_db(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes `msd_curves.csv`: step, algorithm, component, msd_db. Component is
/// `total` for the full-state curve or `x1`..`xn` for per-state curves; the
/// curves are averages of per-step dB values across runs.
pub fn write_msd_curves_csv(path: &Path, result: &RunResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "algorithm", "component", "msd_db"])
        .map_err(csv_err)?;
    for alg in &result.algorithms {
        for (t, v) in alg.msd_curve_db.iter().enumerate() {
            w.write_record([
                (t + 1).to_string(),
                alg.algorithm.name().to_string(),
                "total".to_string(),
                fmt_db(*v),
            ])
            .map_err(csv_err)?;
        }
        for (c, curve) in alg.component_curves_db.iter().enumerate() {
            let comp = format!("x{}", c + 1);
            for (t, v) in curve.iter().enumerate() {
                w.write_record([
                    (t + 1).to_string(),
                    alg.algorithm.name().to_string(),
                    comp.clone(),
                    fmt_db(*v),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv`: algorithm, component, steady_state_msd_db,
/// mean_fpi_count, wallclock_sec. Steady-state values are dB of the mean
/// squared error over the final 20% of steps.
pub fn write_summary_csv(path: &Path, result: &RunResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "component", "steady_state_msd_db", "mean_fpi_count", "wallclock_sec"])
        .map_err(csv_err)?;
    for alg in &result.algorithms {
        let mut rows = vec![("total".to_string(), alg.steady_state_total_db)];
        for (c, v) in alg.steady_state_msd_db.iter().enumerate() {
            rows.push((format!("x{}", c + 1), *v));
        }
        for (comp, v) in rows {
            w.write_record([
                alg.algorithm.name().to_string(),
                comp,
                fmt_db(v),
                format!("{:.4}", alg.mean_fpi_count),
                format!("{:.4}", alg.wallclock_sec),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("csv write failed: {e}"))
}

#[derive(Serialize)]
struct JsonAlgorithm<'a> {
    algorithm: &'a str,
    steady_state_total_db: f64,
    steady_state_msd_db: &'a [f64],
    mean_fpi_count: f64,
    mean_fpi_forward: f64,
    mean_fpi_backward: f64,
    wallclock_sec: f64,
    msd_curve_db: &'a [f64],
    component_curves_db: &'a [Vec<f64>],
}

/// Writes the full result as JSON (`results.json`).
pub fn write_results_json(path: &Path, result: &RunResult) -> Result<()> {
    #[derive(Serialize)]
    struct JsonResult<'a> {
        scenario: &'a str,
        horizon: usize,
        completed_runs: usize,
        dropped_runs: usize,
        algorithms: Vec<JsonAlgorithm<'a>>,
    }
    let doc = JsonResult {
        scenario: &result.scenario,
        horizon: result.horizon,
        completed_runs: result.completed_runs,
        dropped_runs: result.dropped_runs,
        algorithms: result
            .algorithms
            .iter()
            .map(|a| JsonAlgorithm {
                algorithm: a.algorithm.name(),
                steady_state_total_db: a.steady_state_total_db,
                steady_state_msd_db: &a.steady_state_msd_db,
                mean_fpi_count: a.mean_fpi_count,
                mean_fpi_forward: a.mean_fpi_forward,
                mean_fpi_backward: a.mean_fpi_backward,
                wallclock_sec: a.wallclock_sec,
                msd_curve_db: &a.msd_curve_db,
                component_curves_db: &a.component_curves_db,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Numerical(format!("json encode failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes the reproduction manifest: the resolved configuration and seed.
/// Re-running from this manifest reproduces the experiment's numerics
/// byte for byte (wall-clock columns excepted).
pub fn write_manifest(path: &Path, config: &ExperimentConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Numerical(format!("json encode failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Loads a config from either a TOML file or a JSON manifest emitted by
/// [`write_manifest`] (detected by extension).
pub fn load_config_or_manifest(path: &Path) -> Result<ExperimentConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid manifest: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    } else {
        ExperimentConfig::load(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_toml_str("scenario = \"ca-scenario-2\"").unwrap();
        let (spec, algorithms, mee) = cfg.resolve().unwrap();
        assert_eq!(spec.name, "ca-scenario-2");
        assert_eq!(algorithms.len(), 6);
        assert!((mee.sigma - 0.9).abs() < 1e-12);
    }

    #[test]
    fn missing_scenario_is_config_error() {
        let err = ExperimentConfig::from_toml_str("seed = 1").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
