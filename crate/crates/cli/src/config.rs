//! Run configuration.
//!
//! A configuration is resolved in layers: built-in defaults (including the
//! chosen scenario preset), then an optional parameter profile, then the
//! JSON file, then command-line flags. Every field of the file is optional.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::path::Path;

use robvio_core::ba::{SolverMode, SolverParams};
use robvio_core::backend::BackendParams;
use robvio_core::eval::AlignmentKind;
use robvio_core::sim::scenario::PRESETS;
use robvio_core::sim::{DynamicLevel, Scenario};

pub const PROFILES: [&str; 2] = ["viode_like", "handheld_like"];

/// Parameter overrides of a named profile.
pub fn profile_overrides(name: &str) -> Option<Value> {
    match name {
        "viode_like" => Some(json!({ "solver": { "lambda_w": 1.0, "lambda_m": 0.2 } })),
        "handheld_like" => Some(json!({
            "solver": { "lambda_w": 1.0, "lambda_m": 1.0 },
            "backend": { "lambda_l": 1.0 }
        })),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub levels: Vec<DynamicLevel>,
    pub modes: Vec<SolverMode>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            levels: DynamicLevel::ALL.to_vec(),
            modes: vec![SolverMode::BaselineHuber, SolverMode::RobustWeights],
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub profile: Option<String>,
    /// Scenario preset the `scenario` section is applied on top of.
    pub preset: String,
    pub scenario: Scenario,
    pub solver: SolverParams,
    pub backend: BackendParams,
    /// Skip the loop backend; the odometry trajectory is final.
    pub no_loops: bool,
    pub alignment: AlignmentKind,
    /// Parallel sweep cells; 0 uses every core.
    pub workers: usize,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: None,
            preset: "static".into(),
            scenario: Scenario::preset("static").expect("static preset exists"),
            solver: SolverParams::default(),
            backend: BackendParams::default(),
            no_loops: false,
            alignment: AlignmentKind::Se3,
            workers: 0,
            sweep: SweepConfig::default(),
        }
    }
}

/// Command-line values applied after the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<String>,
    pub preset: Option<String>,
    pub mode: Option<SolverMode>,
    pub seed: Option<u64>,
    pub level: Option<DynamicLevel>,
    pub no_loops: bool,
    pub workers: Option<usize>,
}

/// Recursively overlay `top` onto `base`; objects merge, anything else
/// replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Rejects keys of `file` that do not exist in `known`, so typos are not
/// silently ignored.
fn check_keys(known: &Map<String, Value>, file: &Map<String, Value>, path: &str) -> Result<()> {
    for (k, v) in file {
        let here = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match known.get(k) {
            None => bail!("unknown config field `{here}`"),
            Some(Value::Object(inner)) => {
                if let Value::Object(sub) = v {
                    check_keys(inner, sub, &here)?;
                }
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn string_field(file: Option<&Map<String, Value>>, key: &str) -> Result<Option<String>> {
    match file.and_then(|f| f.get(key)) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => bail!("config field `{key}` must be a string, got {other}"),
    }
}

/// Parses config text, reporting syntax errors with line and column.
pub fn parse_file_text(text: &str, origin: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text).with_context(|| format!("{origin}: invalid JSON"))? {
        Value::Object(m) => Ok(m),
        _ => bail!("{origin}: top level must be a JSON object"),
    }
}

/// Resolve the configuration from an optional JSON object and flags.
pub fn resolve(file: Option<Map<String, Value>>, o: &Overrides) -> Result<RunConfig> {
    let profile = match &o.profile {
        Some(p) => Some(p.clone()),
        None => string_field(file.as_ref(), "profile")?,
    };
    let preset = match &o.preset {
        Some(p) => p.clone(),
        None => string_field(file.as_ref(), "preset")?.unwrap_or_else(|| "static".into()),
    };
    let scenario = Scenario::preset(&preset)
        .ok_or_else(|| anyhow!("unknown preset `{preset}` (expected one of {})", PRESETS.join(", ")))?;
    let base = RunConfig {
        profile: profile.clone(),
        preset: preset.clone(),
        scenario,
        ..RunConfig::default()
    };
    let mut merged = serde_json::to_value(&base)?;
    if let Some(p) = &profile {
        let top = profile_overrides(p)
            .ok_or_else(|| anyhow!("unknown profile `{p}` (expected one of {})", PROFILES.join(", ")))?;
        merge(&mut merged, top);
    }
    if let Some(f) = file {
        check_keys(merged.as_object().expect("config serializes to an object"), &f, "")?;
        merge(&mut merged, Value::Object(f));
    }
    let mut cfg: RunConfig =
        serde_path_to_error::deserialize(merged).map_err(|e| anyhow!("config field `{}`: {}", e.path(), e.inner()))?;
    cfg.profile = profile;
    cfg.preset = preset;
    if let Some(m) = o.mode {
        cfg.solver.mode = m;
    }
    if let Some(s) = o.seed {
        cfg.scenario.seed = s;
    }
    if let Some(l) = o.level {
        cfg.scenario.level = Some(l);
    }
    if o.no_loops {
        cfg.no_loops = true;
    }
    if let Some(w) = o.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Read `path` (if given) and resolve it with `o`.
pub fn load(path: Option<&Path>, o: &Overrides) -> Result<RunConfig> {
    let file = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Some(parse_file_text(&text, &p.display().to_string())?)
        }
        None => None,
    };
    resolve(file, o)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().context("scenario")?;
        self.solver.validate().context("solver")?;
        self.backend.validate().context("backend")?;
        let s = &self.sweep;
        if s.levels.is_empty() || s.modes.is_empty() || s.seeds.is_empty() {
            bail!("sweep levels, modes and seeds must be non-empty");
        }
        Ok(())
    }
}
