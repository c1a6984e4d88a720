//! Simulation configuration: a single JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::batch_adapt::{BatchRange, IterationRule};
use crate::deadline::DeadlineParams;
use crate::domain::{GnsSchedule, LearningParams, ModelId};
use crate::error::{config, Error, Result};
use crate::selection::SelectorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub seed: u64,
    /// Hard limit on simulated rounds.
    pub rounds_cap: u32,
    /// Keep training finished models until `rounds_cap` (final-accuracy studies).
    pub run_to_cap: bool,
    /// Per-round Bernoulli availability of each client.
    pub availability_rate: f64,
    pub scenario: ScenarioConfig,
    pub models: Vec<ModelSpec>,
    pub selection: SelectionConfig,
    pub batch: BatchSettings,
    pub deadline: DeadlineParams,
    pub learning: LearningConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub clients: u32,
    pub device_mix: DeviceMix,
    /// Probability that a client holds data for a given model.
    pub data_presence: f64,
    /// Gamma shape of the per-client data share; smaller is more skewed.
    pub data_concentration: f64,
    /// Log-space spread of the per-pair loss multiplier.
    pub heterogeneity_spread: f64,
    /// Log-space spread of the per-client throughput multiplier.
    pub speed_spread: f64,
    /// Device profile JSON; generated from `ModelSpec::compute_cost` when absent.
    pub profiles: Option<PathBuf>,
    /// Client roster JSON; generated from the seed when absent.
    pub roster: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            clients: 200,
            device_mix: DeviceMix::default(),
            data_presence: 0.9,
            data_concentration: 2.0,
            heterogeneity_spread: 0.3,
            speed_spread: 0.25,
            profiles: None,
            roster: None,
        }
    }
}

/// Relative frequency of each device type in a generated roster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DeviceMix {
    pub gpu: f64,
    pub cpu: f64,
    pub mobile: f64,
}

impl Default for DeviceMix {
    fn default() -> Self {
        Self {
            gpu: 1.0,
            cpu: 1.0,
            mobile: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: ModelId,
    pub target_accuracy: f64,
    /// Samples spread over the clients that hold data for this model.
    pub total_samples: u32,
    /// Per-sample compute relative to the lightest model; only used to generate profiles.
    #[serde(default = "default_cost")]
    pub compute_cost: f64,
    pub gns: GnsSchedule,
    pub learning: LearningParams,
}

fn default_cost() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub selector: SelectorKind,
    /// Participants per active model; the round asks for this times the active model count.
    pub per_model_clients: usize,
    /// Weight of the staleness bonus.
    pub alpha: f64,
    /// Allow a client to train several models in one round.
    pub multi_model: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            selector: SelectorKind::Flammable,
            per_model_clients: 10,
            alpha: 1.0,
            multi_model: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSettings {
    pub initial_batch: u32,
    pub initial_iterations: u32,
    pub range: BatchRange,
    pub adaptation: bool,
    pub iteration_rule: IterationRule,
}

impl Default for BatchSettings {
    fn default() -> Self {
        Self {
            initial_batch: 10,
            initial_iterations: 20,
            range: BatchRange::default(),
            adaptation: true,
            iteration_rule: IterationRule::ProgressMatching,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    /// Log-space spread of synthetic per-sample losses.
    pub loss_dispersion: f64,
    /// Progress a client can contribute per local sample before its data is
    /// exhausted; `null` makes contributions unbounded.
    pub capacity_per_sample: Option<f64>,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            loss_dispersion: 0.2,
            capacity_per_sample: Some(DEFAULT_CAPACITY_PER_SAMPLE),
        }
    }
}

pub const DEFAULT_CAPACITY_PER_SAMPLE: f64 = 25.0;

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            rounds_cap: 2000,
            run_to_cap: false,
            availability_rate: 1.0,
            scenario: ScenarioConfig::default(),
            models: default_models(),
            selection: SelectionConfig::default(),
            batch: BatchSettings::default(),
            deadline: DeadlineParams::default(),
            learning: LearningConfig::default(),
        }
    }
}

/// Three models of increasing per-sample cost, loosely shaped after a small CNN,
/// a residual network and a mobile speech network.
pub fn default_models() -> Vec<ModelSpec> {
    let model = |id: &str, cost: f64, gns0: f64, a_max: f64, rate: f64, loss0: f64, target: f64| {
        ModelSpec {
            id: ModelId::new(id),
            target_accuracy: target,
            total_samples: 60_000,
            compute_cost: cost,
            gns: GnsSchedule {
                initial: gns0,
                growth: 10.0,
                ramp_rounds: 300,
            },
            learning: LearningParams {
                max_accuracy: a_max,
                rate,
                initial_loss: loss0,
                bias_penalty: 0.3,
            },
        }
    };
    vec![
        model("cnn", 1.0, 40.0, 0.92, 1.0e-5, 2.3, 0.80),
        model("resnet", 4.0, 20.0, 0.82, 0.6e-5, 2.3, 0.70),
        model("mobilenet", 2.5, 30.0, 0.70, 0.8e-5, 3.5, 0.60),
    ]
}

impl SimulationConfig {
    /// Reads and validates a config file. Relative scenario paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: SimulationConfig = serde_json::from_str(&text).map_err(|err| Error::Json {
            path: path.to_path_buf(),
            err,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.scenario.profiles, &mut cfg.scenario.roster]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(config("models: at least one model is required"));
        }
        for (k, m) in self.models.iter().enumerate() {
            if self.models[..k].iter().any(|o| o.id == m.id) {
                return Err(config(format!("models[{k}].id: duplicate id '{}'", m.id)));
            }
            if !(0.0..=1.0).contains(&m.target_accuracy) {
                return Err(config(format!(
                    "models[{k}].target_accuracy must lie in [0, 1]"
                )));
            }
            if !(m.compute_cost > 0.0 && m.compute_cost.is_finite()) {
                return Err(config(format!("models[{k}].compute_cost must be positive")));
            }
            m.gns
                .validate()
                .map_err(|e| config(format!("models[{k}]: {e}")))?;
            m.learning
                .validate()
                .map_err(|e| config(format!("models[{k}]: {e}")))?;
        }
        if self.scenario.clients == 0 && self.scenario.roster.is_none() {
            return Err(config("scenario.clients must be >= 1"));
        }
        let mix = self.scenario.device_mix;
        if [mix.gpu, mix.cpu, mix.mobile]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
            || mix.gpu + mix.cpu + mix.mobile <= 0.0
        {
            return Err(config(
                "scenario.device_mix weights must be >= 0 with a positive sum",
            ));
        }
        if !(0.0..=1.0).contains(&self.scenario.data_presence) {
            return Err(config("scenario.data_presence must lie in [0, 1]"));
        }
        if !(self.scenario.data_concentration > 0.0) {
            return Err(config("scenario.data_concentration must be positive"));
        }
        if !(self.scenario.heterogeneity_spread >= 0.0) {
            return Err(config("scenario.heterogeneity_spread must be >= 0"));
        }
        if !(self.scenario.speed_spread >= 0.0 && self.scenario.speed_spread.is_finite()) {
            return Err(config("scenario.speed_spread must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.availability_rate) {
            return Err(config("availability_rate must lie in [0, 1]"));
        }
        if self.selection.per_model_clients == 0 {
            return Err(config("selection.per_model_clients must be >= 1"));
        }
        if !(self.selection.alpha >= 0.0 && self.selection.alpha.is_finite()) {
            return Err(config("selection.alpha must be >= 0"));
        }
        if self.batch.initial_batch == 0 || self.batch.initial_iterations == 0 {
            return Err(config(
                "batch.initial_batch and batch.initial_iterations must be >= 1",
            ));
        }
        self.batch.range.validate()?;
        self.deadline.validate()?;
        if !(self.learning.loss_dispersion >= 0.0) {
            return Err(config("learning.loss_dispersion must be >= 0"));
        }
        if let Some(c) = self.learning.capacity_per_sample {
            if !(c > 0.0 && c.is_finite()) {
                return Err(config(
                    "learning.capacity_per_sample must be positive or null",
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// JSON schema of the config document.
pub fn config_schema() -> String {
    let schema = schemars::schema_for!(SimulationConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes")
}
