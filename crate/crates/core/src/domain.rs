//! Core data types shared across the scheduler and the simulator.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Gpu,
    Cpu,
    Mobile,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 3] = [DeviceKind::Gpu, DeviceKind::Cpu, DeviceKind::Mobile];

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Gpu => "gpu",
            DeviceKind::Cpu => "cpu",
            DeviceKind::Mobile => "mobile",
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(transparent)]
pub struct ModelId(pub String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Self {
        ModelId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Profiled throughput (samples/sec) at increasing batch sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputCurve {
    points: Vec<(u32, f64)>,
}

impl ThroughputCurve {
    pub fn new(points: Vec<(u32, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(config("throughput curve needs at least two points"));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(config(format!(
                    "batch sizes must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(b, t)) = points
            .iter()
            .find(|(b, t)| *b == 0 || !(t.is_finite() && *t > 0.0))
        {
            return Err(config(format!("invalid profile point ({b}, {t})")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(u32, f64)] {
        &self.points
    }

    /// Piecewise-linear interpolation, clamped to the endpoint values outside the profiled range.
    pub fn at(&self, batch: u32) -> f64 {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if batch <= first.0 {
            return first.1;
        }
        if batch >= last.0 {
            return last.1;
        }
        // first index whose batch size is >= `batch`; guaranteed in 1..len
        let hi = self.points.partition_point(|(b, _)| *b < batch);
        let (b0, t0) = self.points[hi - 1];
        let (b1, t1) = self.points[hi];
        if b1 == batch {
            return t1;
        }
        let frac = f64::from(batch - b0) / f64::from(b1 - b0);
        t0 + frac * (t1 - t0)
    }
}

/// Throughput curves of one device type, one per model.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub device_kind: DeviceKind,
    curves: BTreeMap<ModelId, ThroughputCurve>,
}

impl DeviceProfile {
    pub fn new(device_kind: DeviceKind) -> Self {
        Self {
            device_kind,
            curves: BTreeMap::new(),
        }
    }

    pub fn with_curve(mut self, model: ModelId, curve: ThroughputCurve) -> Self {
        self.curves.insert(model, curve);
        self
    }

    pub fn insert(&mut self, model: ModelId, curve: ThroughputCurve) -> Option<ThroughputCurve> {
        self.curves.insert(model, curve)
    }

    pub fn curve(&self, model: &ModelId) -> Result<&ThroughputCurve> {
        self.curves.get(model).ok_or_else(|| {
            config(format!(
                "no throughput profile for model '{model}' on device '{}'",
                self.device_kind
            ))
        })
    }

    pub fn curves(&self) -> impl Iterator<Item = (&ModelId, &ThroughputCurve)> {
        self.curves.iter()
    }

    /// Samples per second at batch size `batch`.
    pub fn throughput(&self, model: &ModelId, batch: u32) -> Result<f64> {
        if batch == 0 {
            return Err(domain("batch size must be >= 1"));
        }
        Ok(self.curve(model)?.at(batch))
    }
}

/// Selection score of a (client, model) pair. `NeverSelected` ranks above every finite value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    NeverSelected,
    Finite(f64),
}

impl Score {
    pub fn finite(self) -> Option<f64> {
        match self {
            Score::Finite(v) => Some(v),
            Score::NeverSelected => None,
        }
    }

    pub fn is_never_selected(self) -> bool {
        matches!(self, Score::NeverSelected)
    }

    /// Total order: finite values by `total_cmp`, `NeverSelected` above all of them.
    pub fn total_cmp(&self, other: &Score) -> Ordering {
        match (self, other) {
            (Score::NeverSelected, Score::NeverSelected) => Ordering::Equal,
            (Score::NeverSelected, Score::Finite(_)) => Ordering::Greater,
            (Score::Finite(_), Score::NeverSelected) => Ordering::Less,
            (Score::Finite(a), Score::Finite(b)) => a.total_cmp(b),
        }
    }
}

/// Two-phase selection objective: never-selected pairs first, finite score second.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub fresh_pairs: u32,
    pub value: f64,
}

impl Objective {
    pub const ZERO: Objective = Objective {
        fresh_pairs: 0,
        value: 0.0,
    };

    pub fn of(score: Score) -> Self {
        match score {
            Score::NeverSelected => Objective {
                fresh_pairs: 1,
                value: 0.0,
            },
            Score::Finite(v) => Objective {
                fresh_pairs: 0,
                value: v,
            },
        }
    }
}

impl std::ops::Add for Objective {
    type Output = Objective;

    fn add(self, other: Objective) -> Objective {
        Objective {
            fresh_pairs: self.fresh_pairs + other.fresh_pairs,
            value: self.value + other.value,
        }
    }
}

impl Eq for Objective {}

impl PartialOrd for Objective {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Objective {
    fn cmp(&self, other: &Self) -> Ordering {
        self.fresh_pairs
            .cmp(&other.fresh_pairs)
            .then_with(|| self.value.total_cmp(&other.value))
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.fresh_pairs, self.value)
    }
}

/// Batch size and local iteration count used by a (client, model) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub batch: u32,
    pub iterations: u32,
}

/// Per-(client, model) scheduling state.
#[derive(Debug, Clone, PartialEq)]
pub struct PairState {
    pub plan: BatchConfig,
    pub selected_rounds: u32,
    /// Raw data utility from the last participated round; `None` until first selected.
    pub reported_utility: Option<f64>,
    pub report_round: Option<u32>,
    pub heterogeneity: f64,
    pub dataset_size: u32,
    /// Effective progress this client has contributed to the model so far.
    pub contribution: f64,
}

impl PairState {
    pub fn new(plan: BatchConfig, dataset_size: u32, heterogeneity: f64) -> Self {
        Self {
            plan,
            selected_rounds: 0,
            reported_utility: None,
            report_round: None,
            heterogeneity,
            dataset_size,
            contribution: 0.0,
        }
    }

    /// Eligibility flag: a client without data for the model is never considered.
    pub fn eligible(&self) -> bool {
        self.dataset_size > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: ClientId,
    pub device: DeviceKind,
    /// Throughput multiplier applied to the device profile.
    pub speed: f64,
    /// Indexed like the simulation's model list.
    pub pairs: Vec<PairState>,
}

/// Deterministic gradient noise scale schedule: geometric growth from `initial`
/// to `initial * growth` over `ramp_rounds` rounds, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GnsSchedule {
    pub initial: f64,
    pub growth: f64,
    pub ramp_rounds: u32,
}

impl GnsSchedule {
    pub fn at(&self, round: u32) -> f64 {
        if self.ramp_rounds == 0 {
            return self.initial * self.growth;
        }
        let frac = (f64::from(round) / f64::from(self.ramp_rounds)).min(1.0);
        self.initial * self.growth.powf(frac)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(config("gns.initial must be positive"));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(config("gns.growth must be >= 1"));
        }
        Ok(())
    }
}

/// Parameters of the synthetic accuracy curve `a = a_max * (1 - exp(-rate * P))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LearningParams {
    pub max_accuracy: f64,
    pub rate: f64,
    /// Loss at zero accuracy; loss falls linearly to 0 at `max_accuracy`.
    pub initial_loss: f64,
    /// Weight of the per-round progress imbalance penalty, in [0, 1).
    pub bias_penalty: f64,
}

impl LearningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_accuracy > 0.0 && self.max_accuracy <= 1.0) {
            return Err(config("learning.max_accuracy must lie in (0, 1]"));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(config("learning.rate must be positive"));
        }
        if !(self.initial_loss > 0.0 && self.initial_loss.is_finite()) {
            return Err(config("learning.initial_loss must be positive"));
        }
        if !(0.0..1.0).contains(&self.bias_penalty) {
            return Err(config("learning.bias_penalty must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub id: ModelId,
    pub target_accuracy: f64,
    pub accuracy: f64,
    pub cumulative_progress: f64,
    pub gns: f64,
    pub gns_schedule: GnsSchedule,
    pub learning: LearningParams,
    pub active: bool,
}

impl ModelState {
    pub fn new(
        id: ModelId,
        target_accuracy: f64,
        gns_schedule: GnsSchedule,
        learning: LearningParams,
    ) -> Self {
        Self {
            id,
            target_accuracy,
            accuracy: 0.0,
            cumulative_progress: 0.0,
            gns: gns_schedule.at(0),
            gns_schedule,
            learning,
            active: target_accuracy > 0.0,
        }
    }

    pub fn target_reached(&self) -> bool {
        self.accuracy >= self.target_accuracy
    }

    /// Current average test loss of the synthetic model.
    pub fn loss(&self) -> f64 {
        let l = &self.learning;
        (l.initial_loss * (1.0 - self.accuracy / l.max_accuracy)).max(0.0)
    }
}

/// One round's client-to-model allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    /// `x[i][j]`: client `i` trains model `j` this round.
    pub x: Vec<Vec<bool>>,
    pub times: Vec<Vec<f64>>,
    pub deadline: f64,
    pub objective: Objective,
    /// Fewer than the requested number of clients could participate.
    pub relaxed: bool,
}

impl AssignmentMatrix {
    pub fn is_assigned(&self, client: usize, model: usize) -> bool {
        self.x[client][model]
    }

    pub fn participates(&self, client: usize) -> bool {
        self.x[client].iter().any(|&b| b)
    }

    pub fn participants(&self) -> usize {
        (0..self.x.len()).filter(|&i| self.participates(i)).count()
    }

    pub fn participants_per_model(&self) -> Vec<usize> {
        let models = self.x.first().map_or(0, Vec::len);
        (0..models)
            .map(|j| self.x.iter().filter(|row| row[j]).count())
            .collect()
    }

    /// Sum of execution times of the models assigned to `client`.
    pub fn busy_time(&self, client: usize) -> f64 {
        self.x[client]
            .iter()
            .zip(&self.times[client])
            .filter(|(&x, _)| x)
            .map(|(_, t)| t)
            .sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.x.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(move |(j, _)| (i, j))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientActivity {
    pub client: ClientId,
    pub busy: f64,
    pub idle: f64,
}

impl ClientActivity {
    pub fn idle_fraction(&self) -> f64 {
        let span = self.busy + self.idle;
        if span > 0.0 {
            self.idle / span
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairPlan {
    pub client: ClientId,
    pub model: ModelId,
    pub batch: u32,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRoundStats {
    pub model: ModelId,
    pub active: bool,
    pub accuracy: f64,
    pub participants: usize,
    pub mean_batch: f64,
}

/// Everything observable about one simulated round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u32,
    pub skipped: bool,
    pub elapsed: f64,
    pub cumulative_time: f64,
    pub deadline: f64,
    pub percentile: f64,
    pub active_models: usize,
    pub objective: Objective,
    pub relaxed: bool,
    pub models: Vec<ModelRoundStats>,
    pub clients: Vec<ClientActivity>,
    pub plans: Vec<PairPlan>,
}

impl RoundRecord {
    pub fn participants(&self) -> usize {
        self.clients.len()
    }

    /// Mean idle fraction over the selected clients (0 for an empty round).
    pub fn mean_idle_fraction(&self) -> f64 {
        if self.clients.is_empty() {
            return 0.0;
        }
        self.clients
            .iter()
            .map(ClientActivity::idle_fraction)
            .sum::<f64>()
            / self.clients.len() as f64
    }
}
