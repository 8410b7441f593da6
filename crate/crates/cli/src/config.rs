//! Run configuration: a TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ridesim_core::agent::AgentConfig;
use ridesim_core::distributions::DemandScaler;
use ridesim_core::ingest::{DemandShape, DemoOptions, RegionBox, SyntheticPolicySpec};
use ridesim_core::ridegen::GridSpec;
use ridesim_core::sim::{PlatformParams, FEATURES};
use ridesim_core::training::{BcConfig, RlConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: SynthSection,
    pub ingest: IngestSection,
    pub grid: GridSpec,
    pub demand: DemandSection,
    pub platform: PlatformParams,
    pub sim: SimSection,
    pub agent: AgentConfig,
    pub bc: BcConfig,
    pub rl: RlConfig,
    pub generate: GenerateSection,
    pub evaluate: EvaluateSection,
    pub sweep: SweepSection,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Trip log read by `ingest`; the output of `synth` when unset.
    pub log: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { log: None, out: PathBuf::from("out") }
    }
}

/// Ground-truth policy and demand of the synthetic log. Grid, speed and the
/// first-week goal default come from the shared sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub weights: [f64; FEATURES],
    pub bias: f64,
    pub driver_count: usize,
    pub days: u32,
    pub start_date: NaiveDate,
    pub weekly_target_multiplier: f64,
    pub demand: DemandShape,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SyntheticPolicySpec::default();
        Self {
            weights: s.weights,
            bias: s.bias,
            driver_count: s.driver_count,
            days: s.days,
            start_date: s.start_date,
            weekly_target_multiplier: s.weekly_target_multiplier,
            demand: s.demand,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    /// Whole weeks used for fitting and cloning; the next week is held out.
    pub train_weeks: u32,
    /// Defaults to the grid's bounding box.
    pub region: Option<RegionBox>,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { train_weeks: 3, region: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandSection {
    /// Raw trips per simulated ride. The synthetic log is already at
    /// simulation scale, so 1 here; full-size logs want about 35.
    pub scale_factor: f64,
}

impl Default for DemandSection {
    fn default() -> Self {
        Self { scale_factor: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub drivers: usize,
    pub weeks: u32,
    pub max_offers: usize,
    pub speed_kmh: f64,
    pub default_last_week_trips: u32,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { drivers: 50, weeks: 1, max_offers: 5, speed_kmh: 30.0, default_last_week_trips: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub days: u32,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { days: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentChoice {
    Bc,
    Rl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub replications: usize,
    pub agent: AgentChoice,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { replications: 20, agent: AgentChoice::Rl }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Dotted config key, e.g. `platform.peak_fare_multiplier`.
    pub key: String,
    pub values: Vec<Value>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            key: "platform.peak_fare_multiplier".into(),
            values: vec![Value::Float(2.0), Value::Float(3.0)],
        }
    }
}

fn validation(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

impl RunConfig {
    /// Reads `path` (defaults only when `None`), applies overrides in order
    /// and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| validation(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>().map_err(|e| validation(format!("config {}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for raw in overrides {
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| validation(format!("override `{raw}` is not key=value")))?;
            set_key(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_table(mut table: Table) -> Result<Self, CliError> {
        let template = Value::try_from(Self::template()).map_err(validation)?;
        let mut root = Value::Table(std::mem::take(&mut table));
        coerce(&mut root, &template, "");
        root.try_into::<Self>().map_err(|e| validation(format!("config: {e}")))
    }

    /// Default config with every optional filled, used to learn field types.
    fn template() -> Self {
        let d = Self::default();
        Self {
            seed: Some(0),
            paths: Paths { log: Some(PathBuf::from("log.csv")), ..d.paths.clone() },
            ingest: IngestSection { region: Some(RegionBox::from_grid(&d.grid)), ..d.ingest.clone() },
            ..d
        }
    }

    /// A copy with one dotted key replaced, as used by sweeps.
    pub fn with_value(&self, key: &str, value: &Value) -> Result<Self, CliError> {
        let mut table = Table::try_from(self).map_err(validation)?;
        set_key(&mut table, key, value.clone())?;
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |r: ridesim_core::Result<()>| r.map_err(validation);
        if self.seed.is_none() {
            return Err(validation("seed is required (set `seed = <n>` or pass seed=<n>)"));
        }
        v(self.grid.validate())?;
        v(self.platform.validate())?;
        v(self.agent.validate())?;
        v(self.bc.validate())?;
        v(self.rl.validate())?;
        v(self.synthetic_spec().validate())?;
        DemandScaler::new(self.demand.scale_factor).map_err(validation)?;
        if self.sim.drivers == 0 || self.sim.weeks == 0 || self.sim.max_offers == 0 {
            return Err(validation("sim.drivers, sim.weeks and sim.max_offers must be >= 1"));
        }
        if !(self.sim.speed_kmh.is_finite() && self.sim.speed_kmh > 0.0) {
            return Err(validation("sim.speed_kmh must be > 0"));
        }
        if self.ingest.train_weeks == 0 {
            return Err(validation("ingest.train_weeks must be >= 1"));
        }
        if self.generate.days == 0 {
            return Err(validation("generate.days must be >= 1"));
        }
        if self.evaluate.replications == 0 {
            return Err(validation("evaluate.replications must be >= 1"));
        }
        if self.sweep.key.is_empty() || self.sweep.values.is_empty() {
            return Err(validation("sweep needs a key and at least one value"));
        }
        if self.sweep.key.starts_with("sweep.") || self.sweep.key == "seed" || self.sweep.key.starts_with("paths.") {
            return Err(validation(format!("cannot sweep over `{}`", self.sweep.key)));
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticPolicySpec {
        let s = &self.synth;
        SyntheticPolicySpec {
            weights: s.weights,
            bias: s.bias,
            driver_count: s.driver_count,
            days: s.days,
            start_date: s.start_date,
            demand: s.demand.clone(),
            grid: self.grid.clone(),
            speed_kmh: self.sim.speed_kmh,
            default_last_week_trips: self.sim.default_last_week_trips,
            weekly_target_multiplier: s.weekly_target_multiplier,
            ..SyntheticPolicySpec::default()
        }
    }

    pub fn demo_options(&self) -> DemoOptions {
        DemoOptions {
            grid: self.grid.clone(),
            speed_kmh: self.sim.speed_kmh,
            default_last_week_trips: self.sim.default_last_week_trips,
        }
    }

    pub fn scaler(&self) -> DemandScaler {
        DemandScaler::new(self.demand.scale_factor).expect("validated scale factor")
    }

    pub fn region(&self) -> RegionBox {
        self.ingest.region.unwrap_or_else(|| RegionBox::from_grid(&self.grid))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// TOML literal when it parses as one, bare string otherwise.
pub fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_key(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(validation(format!("bad key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| validation(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Integers written where the template holds floats become floats, so
/// `fare_per_km = 40` is accepted. Unknown keys are left for serde to
/// reject by name.
fn coerce(value: &mut Value, template: &Value, path: &str) {
    match (value, template) {
        (v @ Value::Integer(_), Value::Float(_)) => {
            let i = v.as_integer().expect("matched integer");
            *v = Value::Float(i as f64);
        }
        (Value::Table(t), Value::Table(tt)) => {
            for (k, v) in t.iter_mut() {
                if let Some(tv) = tt.get(k) {
                    let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    if child != "sweep.values" {
                        coerce(v, tv, &child);
                    }
                }
            }
        }
        (Value::Array(a), Value::Array(ta)) => {
            if let Some(first) = ta.first() {
                for v in a.iter_mut() {
                    coerce(v, first, path);
                }
            }
        }
        _ => {}
    }
}
