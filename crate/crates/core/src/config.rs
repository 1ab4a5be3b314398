//! Experiment configuration: a TOML file with one table per solver, dotted
//! command-line overrides, and a flat rendering for run manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSection {
    /// Number of banks.
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// One of `ps`, `psa`, `psb`, `mfsta`.
    pub variant: String,
    /// `point` (all banks at `x0`) or `stationary` (drawn from the stationary law).
    pub init: String,
    /// Histogram times; empty means the horizon only.
    pub snapshot_times: Vec<f64>,
    pub bin_width: f64,
    pub hist_max: f64,
    pub record_every: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            n: 10_000,
            dt: 0.01,
            t_end: 100.0,
            seed: 1,
            variant: "ps".into(),
            init: "point".into(),
            snapshot_times: Vec::new(),
            bin_width: 0.1,
            hist_max: 10.0,
            record_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointSection {
    pub t_end: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// `point` or `stationary`.
    pub initial: String,
}

impl Default for FixedPointSection {
    fn default() -> Self {
        FixedPointSection {
            t_end: 1.0,
            n_paths: 10_000,
            dt: 1e-3,
            max_iter: 25,
            tol: 1e-3,
            seed: 1,
            initial: "stationary".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationarySection {
    pub x_max: f64,
    pub points: usize,
    pub tol: f64,
    /// Axes of the rate surface.
    pub a_values: Vec<f64>,
    pub x0_values: Vec<f64>,
}

impl Default for StationarySection {
    fn default() -> Self {
        StationarySection {
            x_max: 10.0,
            points: 1001,
            tol: 1e-14,
            a_values: vec![0.01125, 0.05, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0],
            x0_values: vec![1.0, 1.5, 2.0, 2.5, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpSection {
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    pub rate_ceiling: f64,
    pub mass_loss_limit: f64,
    pub store_every: usize,
    /// `stationary`, `triangular` or `gaussian`.
    pub initial: String,
    /// Half-width of the triangular density; defaults to `x0 / (2a)`.
    pub c: Option<f64>,
    /// Width of the Gaussian initial density, centred at `x0`.
    pub std: f64,
}

impl Default for FpSection {
    fn default() -> Self {
        FpSection {
            h: 0.01,
            dt: 1e-3,
            t_end: 10.0,
            rate_ceiling: 1e3,
            mass_loss_limit: 0.01,
            store_every: 100,
            initial: "stationary".into(),
            c: None,
            std: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlowupSection {
    /// `triangular`, `stationary` or `gaussian`.
    pub initial: String,
    pub c: Option<f64>,
    pub std: f64,
    pub mu: Option<f64>,
    pub scan_points: usize,
}

impl Default for BlowupSection {
    fn default() -> Self {
        BlowupSection { initial: "triangular".into(), c: None, std: 0.5, mu: None, scan_points: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfgSection {
    pub l: f64,
    pub t_end: f64,
    pub n_space: usize,
    pub n_time: usize,
    pub outer_tol: f64,
    pub outer_max: usize,
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Centre of the initial Gaussian; defaults to `x0`.
    pub m0_center: Option<f64>,
    pub m0_std: f64,
    /// `zero` or `lq`.
    pub exit_cost: String,
}

impl Default for MfgSection {
    fn default() -> Self {
        MfgSection {
            l: 10.0,
            t_end: 10.0,
            n_space: 200,
            n_time: 100,
            outer_tol: 1e-6,
            outer_max: 200,
            newton_tol: 1e-10,
            newton_max: 50,
            m0_center: None,
            m0_std: 0.5,
            exit_cost: "zero".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqSection {
    pub x_max: f64,
    pub points: usize,
}

impl Default for LqSection {
    fn default() -> Self {
        LqSection { x_max: 10.0, points: 1001 }
    }
}

/// Full configuration; every table is optional and falls back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Figure tag the run reproduces, if any.
    pub experiment: Option<String>,
    pub model: ModelParams,
    pub simulation: SimulationSection,
    pub fixed_point: FixedPointSection,
    pub stationary: StationarySection,
    pub fp: FpSection,
    pub blowup: BlowupSection,
    pub mfg: MfgSection,
    pub lq: LqSection,
}

/// Parses an override value as a TOML scalar or array, falling back to a bare
/// string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `section.key=value` to a TOML tree.
pub fn apply_override(tree: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let mut table = tree;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{spec}`: `{k}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Builds a configuration from TOML text and overrides. Every unknown key
    /// is reported, not only the first.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let mut unknown = Vec::new();
        let cfg: ExperimentConfig = serde_ignored::deserialize(toml::Value::Table(tree), |path| {
            unknown.push(path.to_string())
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    /// Dotted `section.key` to rendered value, sorted.
    pub fn flatten(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        if let Ok(toml::Value::Table(t)) = toml::Value::try_from(self) {
            flatten_into("", &toml::Value::Table(t), &mut out);
        }
        out
    }
}

fn flatten_into(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        toml::Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}
