//! Round-based simulation of multi-model training over a shared client pool.
//!
//! Local training is not executed. A pair's contribution is its statistical
//! progress `m * k * eff(m)`; a model's accuracy follows a saturating curve of
//! the progress it has accumulated. Each client's share of that progress
//! saturates with the size of its local dataset, so leaning on the same clients
//! round after round yields less than spreading work over the pool.

use std::collections::BTreeMap;

use log::debug;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::batch_adapt::{execution_time, optimize_batch, progress};
use crate::config::SimulationConfig;
use crate::deadline::DeadlineController;
use crate::domain::{
    BatchConfig, ClientActivity, ClientState, DeviceKind, ModelId, ModelRoundStats, ModelState,
    Objective, PairPlan, PairState, RoundRecord, Score,
};
use crate::error::{config, Result};
use crate::numeric::coefficient_of_variation;
use crate::rng::{stream, Stream};
use crate::scenario::{ProfileSet, Scenario};
use crate::selection::{select, SelectionInstance};
use crate::utility::{data_utility, synthetic_losses, ModelColumn, UtilityTable};

/// Per-sample losses drawn per report. The data utility scales the sampled
/// root-mean-square loss up to the real sample count.
const LOSS_DRAWS: u64 = 64;

/// Gain in accumulated progress when a client's contribution grows from
/// `before` to `after`, with the client's useful progress capped at `cap`.
pub fn saturating_gain(before: f64, after: f64, cap: Option<f64>) -> f64 {
    match cap {
        None => after - before,
        Some(c) if c > 0.0 => c * ((-before / c).exp() - (-after / c).exp()),
        Some(_) => 0.0,
    }
}

/// Accuracy reached after `progress` units: `a_max * (1 - exp(-rate * P))`.
pub fn accuracy_curve(max_accuracy: f64, rate: f64, progress: f64) -> f64 {
    max_accuracy * (1.0 - (-rate * progress).exp())
}

/// Penalty factor for uneven progress across the round's participants.
pub fn imbalance_factor(bias_penalty: f64, progresses: &[f64]) -> f64 {
    (1.0 - bias_penalty * coefficient_of_variation(progresses)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelOutcome {
    pub model: ModelId,
    pub target_accuracy: f64,
    pub time_to_accuracy: Option<f64>,
    pub rounds_to_accuracy: Option<u32>,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationOutcome {
    pub seed: u64,
    pub rounds: u32,
    pub total_time: f64,
    /// Mean over rounds with at least two active models (all rounds if none).
    pub mean_idle_fraction: f64,
    pub models: Vec<ModelOutcome>,
    #[serde(skip)]
    pub records: Vec<RoundRecord>,
}

impl SimulationOutcome {
    pub fn model(&self, id: &str) -> Option<&ModelOutcome> {
        self.models.iter().find(|m| m.model.as_str() == id)
    }
}

pub struct Simulation {
    cfg: SimulationConfig,
    profiles: ProfileSet,
    clients: Vec<ClientState>,
    models: Vec<ModelState>,
    controller: DeadlineController,
    availability_rng: ChaCha8Rng,
    loss_rng: ChaCha8Rng,
    selection_rng: ChaCha8Rng,
    round: u32,
    clock: f64,
    tta: Vec<Option<(f64, u32)>>,
    records: Vec<RoundRecord>,
}

impl Simulation {
    pub fn from_config(cfg: SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let scenario = Scenario::from_config(&cfg)?;
        Self::new(cfg, scenario)
    }

    pub fn new(cfg: SimulationConfig, scenario: Scenario) -> Result<Self> {
        cfg.validate()?;
        let initial = BatchConfig {
            batch: cfg.batch.initial_batch,
            iterations: cfg.batch.initial_iterations,
        };
        let clients = scenario
            .roster
            .iter()
            .map(|e| ClientState {
                id: e.client_id,
                device: e.device_kind,
                speed: e.speed,
                pairs: cfg
                    .models
                    .iter()
                    .map(|m| {
                        let size = e.datasets.get(&m.id).copied().unwrap_or(0);
                        let h = e.heterogeneity.get(&m.id).copied().unwrap_or(1.0);
                        PairState::new(initial, size, h)
                    })
                    .collect(),
            })
            .collect();
        let models: Vec<ModelState> = cfg
            .models
            .iter()
            .map(|m| ModelState::new(m.id.clone(), m.target_accuracy, m.gns, m.learning))
            .collect();
        let tta = models
            .iter()
            .map(|m| (m.target_accuracy <= 0.0).then_some((0.0, 0)))
            .collect();
        Ok(Self {
            controller: DeadlineController::new(cfg.deadline)?,
            availability_rng: stream(cfg.seed, Stream::Availability),
            loss_rng: stream(cfg.seed, Stream::Losses),
            selection_rng: stream(cfg.seed, Stream::Selection),
            profiles: scenario.profiles,
            clients,
            models,
            round: 0,
            clock: 0.0,
            tta,
            records: Vec::new(),
            cfg,
        })
    }

    pub fn models(&self) -> &[ModelState] {
        &self.models
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn controller(&self) -> &DeadlineController {
        &self.controller
    }

    pub fn finished(&self) -> bool {
        self.round >= self.cfg.rounds_cap || !self.models.iter().any(|m| m.active)
    }

    /// Batch plans for the current noise scales, one per (device kind, model) key.
    fn adapted_plans(
        &self,
        keys: impl IntoIterator<Item = (DeviceKind, usize)>,
    ) -> Result<BTreeMap<(DeviceKind, usize), BatchConfig>> {
        let b = &self.cfg.batch;
        let mut plans = BTreeMap::new();
        for (device, j) in keys {
            if plans.contains_key(&(device, j)) {
                continue;
            }
            let m = &self.models[j];
            let plan = optimize_batch(
                m.gns,
                b.initial_batch,
                b.initial_iterations,
                self.profiles.get(device)?,
                &m.id,
                b.range,
                b.iteration_rule,
            )?;
            plans.insert(
                (device, j),
                BatchConfig {
                    batch: plan.batch,
                    iterations: plan.iterations,
                },
            );
        }
        Ok(plans)
    }

    fn pair_time(&self, client: usize, model: usize) -> Result<f64> {
        let c = &self.clients[client];
        let plan = c.pairs[model].plan;
        let theta = self
            .profiles
            .get(c.device)?
            .throughput(&self.models[model].id, plan.batch)?;
        Ok(execution_time(plan.batch, plan.iterations, theta * c.speed))
    }

    pub fn run_round(&mut self) -> Result<&RoundRecord> {
        if self.finished() {
            return Err(config("simulation already finished"));
        }
        self.round += 1;
        let round = self.round;
        let active: Vec<usize> = (0..self.models.len())
            .filter(|&j| self.models[j].active)
            .collect();

        for m in &mut self.models {
            m.gns = m.gns_schedule.at(round - 1);
        }
        let percentile = self
            .controller
            .update_percentile(self.controller.history().len());

        let rate = self.cfg.availability_rate;
        let available: Vec<bool> = (0..self.clients.len())
            .map(|_| self.availability_rng.random_bool(rate))
            .collect();

        // execution times of every candidate pair, by active-model column
        let n = self.clients.len();
        let mut times = vec![vec![None; active.len()]; n];
        let mut population = Vec::new();
        for i in (0..n).filter(|&i| available[i]) {
            for (col, &j) in active.iter().enumerate() {
                if self.clients[i].pairs[j].eligible() {
                    let t = self.pair_time(i, j)?;
                    times[i][col] = Some(t);
                    population.push(t);
                }
            }
        }
        if population.is_empty() {
            debug!("round {round}: no candidate pairs, skipped");
            let record = self.skipped_record(round, percentile, &active);
            self.records.push(record);
            return Ok(self.records.last().expect("just pushed"));
        }
        let deadline = self.controller.deadline(&population)?;

        let columns: Vec<ModelColumn> = active
            .iter()
            .enumerate()
            .map(|(col, &j)| ModelColumn {
                times: times.iter().map(|row| row[col]).collect(),
                reported: self
                    .clients
                    .iter()
                    .map(|c| c.pairs[j].reported_utility)
                    .collect(),
                selected: self
                    .clients
                    .iter()
                    .map(|c| c.pairs[j].selected_rounds)
                    .collect(),
            })
            .collect();
        let table = UtilityTable::build(deadline, self.cfg.selection.alpha, round, &columns)?;

        let instance = SelectionInstance {
            scores: (0..n)
                .map(|i| {
                    (0..active.len())
                        .map(|col| table.score(i, col).unwrap_or(Score::Finite(0.0)))
                        .collect()
                })
                .collect(),
            times: times
                .iter()
                .map(|row| row.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect())
                .collect(),
            eligible: times
                .iter()
                .map(|row| row.iter().map(Option::is_some).collect())
                .collect(),
            deadline,
            required: self.cfg.selection.per_model_clients * active.len(),
            max_models_per_client: (!self.cfg.selection.multi_model).then_some(1),
        };
        let assignment = select(
            self.cfg.selection.selector,
            &instance,
            &mut self.selection_rng,
        )?;

        // plans for the next round, adapted after training
        let next_plans = if self.cfg.batch.adaptation {
            let keys: Vec<(DeviceKind, usize)> = assignment
                .pairs()
                .map(|(i, col)| (self.clients[i].device, active[col]))
                .collect();
            Some(self.adapted_plans(keys)?)
        } else {
            None
        };

        // local training: reports and progress per model
        let m0 = self.cfg.batch.initial_batch;
        let mut progresses: Vec<Vec<(usize, f64)>> = vec![Vec::new(); active.len()];
        let mut plans = Vec::new();
        for (i, col) in assignment.pairs() {
            let j = active[col];
            let model = &self.models[j];
            let pair = &self.clients[i].pairs[j];
            let plan = pair.plan;
            let sigma = progress(model.gns, m0, plan.batch, plan.iterations)?;
            let samples = (u64::from(plan.batch) * u64::from(plan.iterations))
                .min(u64::from(pair.dataset_size));
            let draws = synthetic_losses(
                model,
                pair.heterogeneity,
                pair.dataset_size,
                samples.min(LOSS_DRAWS),
                self.cfg.learning.loss_dispersion,
                &mut self.loss_rng,
            );
            let sampled = data_utility(&draws)?;
            let reported = sampled / draws.len() as f64 * samples as f64;

            let device = self.clients[i].device;
            let pair = &mut self.clients[i].pairs[j];
            pair.selected_rounds += 1;
            pair.reported_utility = Some(reported);
            pair.report_round = Some(round);
            if let Some(plans) = &next_plans {
                pair.plan = plans[&(device, j)];
            }
            progresses[col].push((i, sigma));
            plans.push(PairPlan {
                client: self.clients[i].id,
                model: self.models[j].id.clone(),
                batch: plan.batch,
                iterations: plan.iterations,
            });
        }

        let busy: Vec<(usize, f64)> = (0..n)
            .filter(|&i| assignment.participates(i))
            .map(|i| (i, assignment.busy_time(i)))
            .collect();
        let elapsed = busy.iter().map(|&(_, b)| b).fold(0.0, f64::max);
        self.clock += elapsed;

        let per_sample = self.cfg.learning.capacity_per_sample;
        for (col, &j) in active.iter().enumerate() {
            let sigmas: Vec<f64> = progresses[col].iter().map(|&(_, s)| s).collect();
            let factor = imbalance_factor(self.models[j].learning.bias_penalty, &sigmas);
            let mut gained = 0.0;
            for &(i, sigma) in &progresses[col] {
                let pair = &mut self.clients[i].pairs[j];
                let cap = per_sample.map(|k| k * f64::from(pair.dataset_size));
                let before = pair.contribution;
                pair.contribution += sigma;
                gained += saturating_gain(before, pair.contribution, cap);
            }
            let model = &mut self.models[j];
            model.cumulative_progress += factor * gained;
            let l = model.learning;
            let acc = accuracy_curve(l.max_accuracy, l.rate, model.cumulative_progress);
            model.accuracy = model.accuracy.max(acc);
            if model.target_reached() && self.tta[j].is_none() {
                self.tta[j] = Some((self.clock, round));
                debug!(
                    "round {round}: {} reached {:.3} at t={:.1}",
                    model.id, model.accuracy, self.clock
                );
                if !self.cfg.run_to_cap {
                    model.active = false;
                }
            }
        }

        let test_loss =
            active.iter().map(|&j| self.models[j].loss()).sum::<f64>() / active.len() as f64;
        self.controller.record_signal(test_loss, deadline)?;

        let per_model = assignment.participants_per_model();
        let models = active
            .iter()
            .enumerate()
            .map(|(col, &j)| {
                let batches: Vec<f64> = plans
                    .iter()
                    .filter(|p| p.model == self.models[j].id)
                    .map(|p| f64::from(p.batch))
                    .collect();
                ModelRoundStats {
                    model: self.models[j].id.clone(),
                    active: true,
                    accuracy: self.models[j].accuracy,
                    participants: per_model[col],
                    mean_batch: if batches.is_empty() {
                        0.0
                    } else {
                        batches.iter().sum::<f64>() / batches.len() as f64
                    },
                }
            })
            .collect();
        let record = RoundRecord {
            round,
            skipped: false,
            elapsed,
            cumulative_time: self.clock,
            deadline,
            percentile,
            active_models: active.len(),
            objective: assignment.objective,
            relaxed: assignment.relaxed,
            models: self.with_inactive(models, &active),
            clients: busy
                .iter()
                .map(|&(i, b)| ClientActivity {
                    client: self.clients[i].id,
                    busy: b,
                    idle: elapsed - b,
                })
                .collect(),
            plans,
        };
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Fills in stats rows for models that were not active this round, in model order.
    fn with_inactive(
        &self,
        active_rows: Vec<ModelRoundStats>,
        active: &[usize],
    ) -> Vec<ModelRoundStats> {
        let mut rows = active_rows.into_iter();
        (0..self.models.len())
            .map(|j| {
                if active.contains(&j) {
                    rows.next().expect("one row per active model")
                } else {
                    ModelRoundStats {
                        model: self.models[j].id.clone(),
                        active: false,
                        accuracy: self.models[j].accuracy,
                        participants: 0,
                        mean_batch: 0.0,
                    }
                }
            })
            .collect()
    }

    fn skipped_record(&self, round: u32, percentile: f64, active: &[usize]) -> RoundRecord {
        let models = active
            .iter()
            .map(|&j| ModelRoundStats {
                model: self.models[j].id.clone(),
                active: true,
                accuracy: self.models[j].accuracy,
                participants: 0,
                mean_batch: 0.0,
            })
            .collect();
        RoundRecord {
            round,
            skipped: true,
            elapsed: 0.0,
            cumulative_time: self.clock,
            deadline: 0.0,
            percentile,
            active_models: active.len(),
            objective: Objective::ZERO,
            relaxed: true,
            models: self.with_inactive(models, active),
            clients: Vec::new(),
            plans: Vec::new(),
        }
    }

    pub fn outcome(&self) -> SimulationOutcome {
        let played: Vec<&RoundRecord> = self.records.iter().filter(|r| !r.skipped).collect();
        let multi: Vec<&RoundRecord> = played
            .iter()
            .copied()
            .filter(|r| r.active_models >= 2)
            .collect();
        let basis = if multi.is_empty() { &played } else { &multi };
        let mean_idle_fraction = if basis.is_empty() {
            0.0
        } else {
            basis.iter().map(|r| r.mean_idle_fraction()).sum::<f64>() / basis.len() as f64
        };
        SimulationOutcome {
            seed: self.cfg.seed,
            rounds: self.round,
            total_time: self.clock,
            mean_idle_fraction,
            models: self
                .models
                .iter()
                .zip(&self.tta)
                .map(|(m, tta)| ModelOutcome {
                    model: m.id.clone(),
                    target_accuracy: m.target_accuracy,
                    time_to_accuracy: tta.map(|(t, _)| t),
                    rounds_to_accuracy: tta.map(|(_, r)| r),
                    final_accuracy: m.accuracy,
                })
                .collect(),
            records: self.records.clone(),
        }
    }

    pub fn run(mut self) -> Result<SimulationOutcome> {
        while !self.finished() {
            self.run_round()?;
        }
        Ok(self.outcome())
    }
}

pub fn run_simulation(cfg: SimulationConfig) -> Result<SimulationOutcome> {
    Simulation::from_config(cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::SelectorKind;

    fn small() -> SimulationConfig {
        let mut cfg = SimulationConfig::default();
        cfg.scenario.clients = 40;
        cfg.selection.per_model_clients = 4;
        cfg.rounds_cap = 60;
        cfg
    }

    #[test]
    fn gain_without_cap_is_linear() {
        assert_eq!(saturating_gain(3.0, 10.0, None), 7.0);
        let g = saturating_gain(0.0, 10.0, Some(100.0));
        assert!(g < 10.0 && g > 9.5);
        // the total gain from one client never exceeds its cap
        assert!(saturating_gain(0.0, 1e9, Some(100.0)) <= 100.0);
        assert_eq!(saturating_gain(0.0, 5.0, Some(0.0)), 0.0);
    }

    #[test]
    fn imbalance_factor_examples() {
        assert_eq!(imbalance_factor(0.3, &[5.0, 5.0, 5.0]), 1.0);
        assert_eq!(imbalance_factor(0.3, &[5.0]), 1.0);
        // CV of [1, 3] is 0.5
        assert!((imbalance_factor(0.3, &[1.0, 3.0]) - 0.85).abs() < 1e-12);
        assert_eq!(imbalance_factor(0.9, &[0.0, 0.0, 100.0]), 0.0);
    }

    #[test]
    fn accuracy_curve_is_saturating() {
        assert_eq!(accuracy_curve(0.9, 1.0, 0.0), 0.0);
        assert!(accuracy_curve(0.9, 1.0, 100.0) <= 0.9);
    }

    #[test]
    fn zero_targets_finish_immediately() {
        let mut cfg = small();
        for m in &mut cfg.models {
            m.target_accuracy = 0.0;
        }
        let out = run_simulation(cfg).unwrap();
        assert_eq!(out.rounds, 0);
        assert_eq!(out.total_time, 0.0);
        assert!(out.models.iter().all(|m| m.time_to_accuracy == Some(0.0)));
    }

    #[test]
    fn accuracy_never_decreases_and_clock_advances() {
        let out = run_simulation(small()).unwrap();
        let mut last = [0.0; 3];
        let mut clock = 0.0;
        for r in &out.records {
            for (k, m) in r.models.iter().enumerate() {
                assert!(m.accuracy >= last[k]);
                last[k] = m.accuracy;
            }
            assert!(r.cumulative_time >= clock);
            clock = r.cumulative_time;
            for c in &r.clients {
                assert!(c.busy <= r.deadline * (1.0 + 1e-12));
                assert!(c.idle >= 0.0);
            }
        }
    }

    #[test]
    fn same_seed_same_outcome() {
        let a = run_simulation(small()).unwrap();
        let b = run_simulation(small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 9;
        assert_ne!(run_simulation(other).unwrap().records, a.records);
    }

    #[test]
    fn single_model_arm_assigns_one_model_per_client() {
        let mut cfg = small();
        cfg.selection.multi_model = false;
        cfg.rounds_cap = 10;
        let out = run_simulation(cfg).unwrap();
        for r in &out.records {
            let mut seen = std::collections::BTreeSet::new();
            for p in &r.plans {
                assert!(seen.insert(p.client));
            }
        }
    }

    #[test]
    fn unavailable_pool_skips_rounds() {
        let mut cfg = small();
        cfg.availability_rate = 0.0;
        cfg.rounds_cap = 3;
        let out = run_simulation(cfg).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.records.iter().all(|r| r.skipped && r.elapsed == 0.0));
    }

    #[test]
    fn baselines_run() {
        for kind in [
            SelectorKind::Random,
            SelectorKind::RoundRobin,
            SelectorKind::Greedy,
        ] {
            let mut cfg = small();
            cfg.selection.selector = kind;
            cfg.rounds_cap = 10;
            let out = run_simulation(cfg).unwrap();
            assert_eq!(out.records.len(), 10);
            for r in &out.records {
                let mut seen = std::collections::BTreeSet::new();
                assert!(r.plans.iter().all(|p| seen.insert(p.client)));
            }
        }
    }
}
