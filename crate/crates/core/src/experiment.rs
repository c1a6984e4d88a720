//! Multi-arm experiments: arm comparisons, the alpha sweep, the fairness
//! scenario and selector validation against the exhaustive oracle.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ModelSpec, SimulationConfig};
use crate::domain::ModelId;
use crate::error::{config, Result};
use crate::numeric::lower_median;
use crate::scenario::Scenario;
use crate::selection::{solve_brute_force, solve_exact, SelectionInstance, SelectorKind};
use crate::sim::{run_simulation, Simulation, SimulationOutcome};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MMFL_SIM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Flammable,
    Random,
    RoundRobin,
    Greedy,
    NoBatchAdapt,
    SingleModel,
}

impl Arm {
    pub const ALL: [Arm; 6] = [
        Arm::Flammable,
        Arm::Random,
        Arm::RoundRobin,
        Arm::Greedy,
        Arm::NoBatchAdapt,
        Arm::SingleModel,
    ];

    pub const BASELINES: [Arm; 3] = [Arm::Random, Arm::RoundRobin, Arm::Greedy];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Flammable => "flammable",
            Arm::Random => "random",
            Arm::RoundRobin => "round_robin",
            Arm::Greedy => "greedy",
            Arm::NoBatchAdapt => "no_batch_adapt",
            Arm::SingleModel => "single_model",
        }
    }

    /// The arm's variant of `base`. Baselines run one model per client with
    /// the initial batch plan and a fixed deadline at the slowest candidate.
    pub fn configure(self, base: &SimulationConfig) -> SimulationConfig {
        let mut cfg = base.clone();
        let baseline = |cfg: &mut SimulationConfig, kind| {
            cfg.selection.selector = kind;
            cfg.batch.adaptation = false;
            cfg.deadline.adaptive = false;
            cfg.deadline.p_init = 100.0;
        };
        match self {
            Arm::Flammable => cfg.selection.selector = SelectorKind::Flammable,
            Arm::Random => baseline(&mut cfg, SelectorKind::Random),
            Arm::RoundRobin => baseline(&mut cfg, SelectorKind::RoundRobin),
            Arm::Greedy => baseline(&mut cfg, SelectorKind::Greedy),
            Arm::NoBatchAdapt => {
                cfg.selection.selector = SelectorKind::Flammable;
                cfg.batch.adaptation = false;
            }
            Arm::SingleModel => {
                cfg.selection.selector = SelectorKind::Flammable;
                cfg.selection.multi_model = false;
            }
        }
        cfg
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| config(format!("unknown arm '{s}' (expected one of flammable, random, round_robin, greedy, no_batch_adapt, single_model)")))
    }
}

/// Parses a comma-separated arm list; duplicates are rejected.
pub fn parse_arms(list: &str) -> Result<Vec<Arm>> {
    let mut arms = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let arm: Arm = name.parse()?;
        if arms.contains(&arm) {
            return Err(config(format!("arm '{arm}' listed twice")));
        }
        arms.push(arm);
    }
    if arms.is_empty() {
        return Err(config("no arms given"));
    }
    Ok(arms)
}

/// Runs `f` on a pool capped by `MMFL_SIM_THREADS` when set.
fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                config(format!(
                    "{THREADS_ENV} must be a positive integer, got '{v}'"
                ))
            })?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmRuns {
    pub arm: Arm,
    /// One outcome per seed, in seed order.
    pub outcomes: Vec<SimulationOutcome>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub models: Vec<ModelId>,
    pub arms: Vec<ArmRuns>,
}

/// Runs every arm on every seed. Results do not depend on the thread count.
pub fn compare(base: &SimulationConfig, arms: &[Arm], seeds: &[u64]) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(config("at least one seed is required"));
    }
    base.validate()?;
    let jobs: Vec<(Arm, u64)> = arms
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<Result<SimulationOutcome>> = with_pool(|| {
        jobs.par_iter()
            .map(|&(arm, seed)| {
                let mut cfg = arm.configure(base);
                cfg.seed = seed;
                run_simulation(cfg)
            })
            .collect()
    })?;
    let mut results = results.into_iter();
    let mut runs = Vec::with_capacity(arms.len());
    for &arm in arms {
        let outcomes = results
            .by_ref()
            .take(seeds.len())
            .collect::<Result<Vec<_>>>()?;
        runs.push(ArmRuns { arm, outcomes });
    }
    Ok(Comparison {
        seeds: seeds.to_vec(),
        models: base.models.iter().map(|m| m.id.clone()).collect(),
        arms: runs,
    })
}

/// `baseline / reference` time-to-accuracy. Infinite when only the reference
/// reached the target, `None` when the reference did not.
pub fn speedup(baseline: Option<f64>, reference: Option<f64>) -> Option<f64> {
    match (baseline, reference) {
        (_, None) => None,
        (None, Some(_)) => Some(f64::INFINITY),
        (Some(b), Some(r)) if r > 0.0 => Some(b / r),
        (Some(b), Some(_)) => Some(if b > 0.0 { f64::INFINITY } else { 1.0 }),
    }
}

impl Comparison {
    pub fn runs(&self, arm: Arm) -> Option<&ArmRuns> {
        self.arms.iter().find(|r| r.arm == arm)
    }

    fn tta(&self, arm: Arm, model: usize) -> Option<Vec<Option<f64>>> {
        self.runs(arm).map(|r| {
            r.outcomes
                .iter()
                .map(|o| o.models[model].time_to_accuracy)
                .collect()
        })
    }

    /// Per-seed speedups of the flammable arm over `arm` for model index `model`.
    pub fn speedups(&self, arm: Arm, model: usize) -> Option<Vec<Option<f64>>> {
        let base = self.tta(arm, model)?;
        let reference = self.tta(Arm::Flammable, model)?;
        Some(
            base.into_iter()
                .zip(reference)
                .map(|(b, r)| speedup(b, r))
                .collect(),
        )
    }

    /// Lower median over seeds; `None` if any seed lacks a defined speedup.
    pub fn median_speedup(&self, arm: Arm, model: usize) -> Option<f64> {
        let values: Option<Vec<f64>> = self.speedups(arm, model)?.into_iter().collect();
        lower_median(&values?)
    }

    /// Lower median time-to-accuracy over seeds; unreached targets count as infinite.
    pub fn median_tta(&self, arm: Arm, model: usize) -> Option<f64> {
        let values: Vec<f64> = self
            .tta(arm, model)?
            .into_iter()
            .map(|t| t.unwrap_or(f64::INFINITY))
            .collect();
        lower_median(&values)
    }

    pub fn median_idle(&self, arm: Arm) -> Option<f64> {
        let values: Vec<f64> = self
            .runs(arm)?
            .outcomes
            .iter()
            .map(|o| o.mean_idle_fraction)
            .collect();
        lower_median(&values)
    }
}

/// One (alpha, seed, model) cell of the alpha sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub seed: u64,
    pub model: ModelId,
    pub time_to_accuracy: Option<f64>,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSweep {
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rows: Vec<AlphaRow>,
}

pub const SWEEP_ALPHAS: [f64; 3] = [0.1, 1.0, 10.0];

/// Rounds per sweep run. Models keep training after reaching their target so
/// final accuracies are compared at equal round counts.
pub const SWEEP_ROUNDS: u32 = 200;

/// Flammable arm at each alpha, run to a fixed round cap.
pub fn sweep_alpha(base: &SimulationConfig, alphas: &[f64], seeds: &[u64]) -> Result<AlphaSweep> {
    if seeds.is_empty() || alphas.is_empty() {
        return Err(config("alpha sweep needs at least one alpha and one seed"));
    }
    let jobs: Vec<(f64, u64)> = alphas
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let outcomes: Vec<Result<SimulationOutcome>> = with_pool(|| {
        jobs.par_iter()
            .map(|&(alpha, seed)| {
                let mut cfg = Arm::Flammable.configure(base);
                cfg.selection.alpha = alpha;
                cfg.seed = seed;
                cfg.run_to_cap = true;
                cfg.rounds_cap = cfg.rounds_cap.min(SWEEP_ROUNDS);
                run_simulation(cfg)
            })
            .collect()
    })?;
    let mut rows = Vec::new();
    for (&(alpha, seed), out) in jobs.iter().zip(outcomes) {
        for m in out?.models {
            rows.push(AlphaRow {
                alpha,
                seed,
                model: m.model,
                time_to_accuracy: m.time_to_accuracy,
                final_accuracy: m.final_accuracy,
            });
        }
    }
    Ok(AlphaSweep {
        alphas: alphas.to_vec(),
        seeds: seeds.to_vec(),
        rows,
    })
}

impl AlphaSweep {
    fn cells<'a>(&'a self, alpha: f64, model: &'a ModelId) -> impl Iterator<Item = &'a AlphaRow> {
        self.rows
            .iter()
            .filter(move |r| r.alpha == alpha && &r.model == model)
    }

    /// Lower median time-to-accuracy over seeds (unreached counts as infinite).
    pub fn median_tta(&self, alpha: f64, model: &ModelId) -> Option<f64> {
        let v: Vec<f64> = self
            .cells(alpha, model)
            .map(|r| r.time_to_accuracy.unwrap_or(f64::INFINITY))
            .collect();
        lower_median(&v)
    }

    pub fn median_final_accuracy(&self, alpha: f64, model: &ModelId) -> Option<f64> {
        let v: Vec<f64> = self.cells(alpha, model).map(|r| r.final_accuracy).collect();
        lower_median(&v)
    }
}

/// Two copies of the first model in `base` under different ids, trained side by
/// side for `rounds` rounds.
pub fn fairness_config(base: &SimulationConfig, rounds: u32) -> SimulationConfig {
    let mut cfg = base.clone();
    let template: ModelSpec = base.models[0].clone();
    cfg.models = ["twin_a", "twin_b"]
        .into_iter()
        .map(|id| ModelSpec {
            id: ModelId::new(id),
            ..template.clone()
        })
        .collect();
    cfg.run_to_cap = true;
    cfg.rounds_cap = rounds;
    cfg
}

/// Runs the twin-model scenario. Unless a roster file is configured, both twins
/// see the same per-client datasets, so the models are identical in every
/// respect but their name.
pub fn run_fairness(base: &SimulationConfig, rounds: u32) -> Result<SimulationOutcome> {
    let cfg = fairness_config(base, rounds);
    cfg.validate()?;
    let mut scenario = Scenario::from_config(&cfg)?;
    if cfg.scenario.roster.is_none() {
        let (a, b) = (cfg.models[0].id.clone(), cfg.models[1].id.clone());
        for entry in &mut scenario.roster {
            if let Some(&size) = entry.datasets.get(&a) {
                entry.datasets.insert(b.clone(), size);
            }
            if let Some(&h) = entry.heterogeneity.get(&a) {
                entry.heterogeneity.insert(b.clone(), h);
            }
        }
    }
    Simulation::new(cfg, scenario)?.run()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    /// Mean over played rounds of |participants(a) - participants(b)|.
    pub mean_participant_gap: f64,
    pub time_to_accuracy: [Option<f64>; 2],
}

impl FairnessReport {
    pub fn from_outcome(out: &SimulationOutcome) -> Result<Self> {
        if out.models.len() != 2 {
            return Err(config("fairness needs exactly two models"));
        }
        let played: Vec<_> = out.records.iter().filter(|r| !r.skipped).collect();
        let gap = if played.is_empty() {
            0.0
        } else {
            played
                .iter()
                .map(|r| r.models[0].participants.abs_diff(r.models[1].participants) as f64)
                .sum::<f64>()
                / played.len() as f64
        };
        Ok(Self {
            mean_participant_gap: gap,
            time_to_accuracy: [
                out.models[0].time_to_accuracy,
                out.models[1].time_to_accuracy,
            ],
        })
    }

    /// Relative TTA difference `|a - b| / min(a, b)`; `None` if either is unreached.
    pub fn tta_relative_gap(&self) -> Option<f64> {
        let [a, b] = self.time_to_accuracy;
        let (a, b) = (a?, b?);
        let lo = a.min(b);
        Some(if lo > 0.0 {
            (a - b).abs() / lo
        } else if a == b {
            0.0
        } else {
            f64::INFINITY
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub instance_id: usize,
    pub clients: usize,
    pub models: usize,
    pub objective_exact: String,
    pub objective_oracle: String,
    pub equal: bool,
}

/// Random instance for selector validation. Scores and times sit on a dyadic
/// grid so objective sums are exact; some scores are `NeverSelected` and some
/// instances forbid multi-model engagement.
pub fn random_instance<R: rand::Rng>(
    rng: &mut R,
    max_clients: usize,
    max_models: usize,
) -> SelectionInstance {
    use crate::domain::Score;
    let n = rng.random_range(1..=max_clients.max(1));
    let m = rng.random_range(1..=max_models.max(1));
    let scores = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    if rng.random_bool(0.15) {
                        Score::NeverSelected
                    } else {
                        Score::Finite(f64::from(rng.random_range(0..64u32)) / 8.0)
                    }
                })
                .collect()
        })
        .collect();
    let times = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| f64::from(rng.random_range(1..=32u32)) / 4.0)
                .collect()
        })
        .collect();
    let eligible = (0..n)
        .map(|_| (0..m).map(|_| rng.random_bool(0.85)).collect())
        .collect();
    SelectionInstance {
        scores,
        times,
        eligible,
        deadline: f64::from(rng.random_range(2..=48u32)) / 4.0,
        required: rng.random_range(1..=n),
        max_models_per_client: rng.random_bool(0.2).then_some(1),
    }
}

/// Compares the exact solver with the exhaustive oracle on seeded random instances.
pub fn validate_selector(
    instances: usize,
    max_clients: usize,
    max_models: usize,
    seed: u64,
) -> Result<Vec<OracleRow>> {
    if max_clients == 0 || max_models == 0 {
        return Err(config("max-clients and max-models must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(instances);
    for instance_id in 0..instances {
        let inst = random_instance(&mut rng, max_clients, max_models);
        let exact = solve_exact(&inst)?;
        let oracle = solve_brute_force(&inst)?;
        rows.push(OracleRow {
            instance_id,
            clients: inst.clients(),
            models: inst.models(),
            objective_exact: exact.objective.to_string(),
            objective_oracle: oracle.objective.to_string(),
            equal: exact.objective == oracle.objective,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimulationConfig {
        let mut cfg = SimulationConfig::default();
        cfg.scenario.clients = 30;
        cfg.selection.per_model_clients = 3;
        cfg.rounds_cap = 40;
        cfg
    }

    #[test]
    fn arm_names_round_trip() {
        for arm in Arm::ALL {
            assert_eq!(arm.as_str().parse::<Arm>().unwrap(), arm);
        }
        assert!("fedavg".parse::<Arm>().is_err());
        assert_eq!(
            parse_arms("flammable, greedy").unwrap(),
            vec![Arm::Flammable, Arm::Greedy]
        );
        assert!(parse_arms("greedy,greedy").is_err());
        assert!(parse_arms("").is_err());
    }

    #[test]
    fn arm_configuration() {
        let base = SimulationConfig::default();
        let g = Arm::Greedy.configure(&base);
        assert_eq!(g.selection.selector, SelectorKind::Greedy);
        assert!(!g.batch.adaptation && !g.deadline.adaptive);
        let s = Arm::SingleModel.configure(&base);
        assert!(!s.selection.multi_model && s.batch.adaptation);
        let n = Arm::NoBatchAdapt.configure(&base);
        assert!(n.selection.multi_model && !n.batch.adaptation);
    }

    #[test]
    fn speedup_cases() {
        assert_eq!(speedup(Some(30.0), Some(10.0)), Some(3.0));
        assert_eq!(speedup(None, Some(10.0)), Some(f64::INFINITY));
        assert_eq!(speedup(Some(10.0), None), None);
        assert_eq!(speedup(Some(0.0), Some(0.0)), Some(1.0));
    }

    #[test]
    fn compare_is_ordered_and_deterministic() {
        let cfg = small();
        let a = compare(&cfg, &[Arm::Flammable, Arm::Random], &[1, 2]).unwrap();
        let b = compare(&cfg, &[Arm::Flammable, Arm::Random], &[1, 2]).unwrap();
        assert_eq!(a.arms.len(), 2);
        assert_eq!(a.arms[1].arm, Arm::Random);
        assert_eq!(a.arms[1].outcomes[1].seed, 2);
        for (x, y) in a.arms.iter().zip(&b.arms) {
            assert_eq!(x.outcomes, y.outcomes);
        }
        assert!(compare(&cfg, &[Arm::Flammable], &[]).is_err());
    }

    #[test]
    fn fairness_twins_are_identical() {
        let cfg = fairness_config(&SimulationConfig::default(), 100);
        assert_eq!(cfg.models.len(), 2);
        assert_eq!(cfg.models[0].learning, cfg.models[1].learning);
        assert_ne!(cfg.models[0].id, cfg.models[1].id);
        cfg.validate().unwrap();
    }

    #[test]
    fn oracle_validation_agrees() {
        let rows = validate_selector(200, 4, 3, 11).unwrap();
        assert_eq!(rows.len(), 200);
        assert!(rows.iter().all(|r| r.equal));
        assert_eq!(rows, validate_selector(200, 4, 3, 11).unwrap());
    }

    #[test]
    fn sweep_rows_cover_grid() {
        let mut cfg = small();
        cfg.rounds_cap = 15;
        let s = sweep_alpha(&cfg, &[0.1, 10.0], &[3]).unwrap();
        assert_eq!(s.rows.len(), 2 * 3);
        assert!(s.median_final_accuracy(0.1, &ModelId::new("cnn")).is_some());
    }
}
