//! Client utilities: data quality, system speed, their normalized product and
//! the staleness bonus used for selection.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::{ModelState, Score};
use crate::error::{domain, Result};

/// `|B| * sqrt(mean(L^2))` over the per-sample losses of the batch data used.
pub fn data_utility(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(domain("data utility needs at least one sample loss"));
    }
    if let Some(l) = losses.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(domain(format!(
            "sample loss must be finite and >= 0, got {l}"
        )));
    }
    let n = losses.len() as f64;
    let mean_sq = losses.iter().map(|l| l * l).sum::<f64>() / n;
    Ok(n * mean_sq.sqrt())
}

/// `D / t`: how many times the pair's work fits into the round deadline.
pub fn system_utility(deadline: f64, exec_time: f64) -> Result<f64> {
    if !(exec_time > 0.0 && exec_time.is_finite()) {
        return Err(domain(format!(
            "execution time must be positive, got {exec_time}"
        )));
    }
    if !(deadline > 0.0 && deadline.is_finite()) {
        return Err(domain(format!("deadline must be positive, got {deadline}")));
    }
    Ok(deadline / exec_time)
}

fn max_finite(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, f64::max)
}

fn normalize(v: f64, max: f64) -> f64 {
    if max > 0.0 {
        v / max
    } else {
        0.0
    }
}

/// Max-normalizes both vectors and multiplies them componentwise.
///
/// `NeverSelected` data entries stay `NeverSelected`. A vector whose finite
/// entries are all zero normalizes to zeros.
pub fn combined_utilities(system: &[f64], data: &[Score]) -> Result<Vec<Score>> {
    if system.len() != data.len() {
        return Err(domain(format!(
            "utility vectors differ in length ({} vs {})",
            system.len(),
            data.len()
        )));
    }
    let sys_max = max_finite(system.iter().copied().filter(|v| v.is_finite()));
    let data_max = max_finite(data.iter().filter_map(|s| s.finite()));
    Ok(system
        .iter()
        .zip(data)
        .map(|(&s, &d)| match d {
            Score::NeverSelected => Score::NeverSelected,
            Score::Finite(d) => Score::Finite(normalize(s, sys_max) * normalize(d, data_max)),
        })
        .collect())
}

/// Adds the exploration bonus `alpha * sqrt(round / selected)`.
/// A pair never selected before scores `NeverSelected`.
pub fn boosted_score(utility: Score, alpha: f64, round: u32, selected: u32) -> Score {
    match utility {
        _ if selected == 0 => Score::NeverSelected,
        Score::NeverSelected => Score::NeverSelected,
        Score::Finite(u) => {
            Score::Finite(u + alpha * (f64::from(round.max(1)) / f64::from(selected)).sqrt())
        }
    }
}

/// Per-sample losses for a client that just trained `model`: log-normal with
/// median `model.loss() * heterogeneity` and log-space spread `dispersion`.
pub fn synthetic_losses<R: Rng + ?Sized>(
    model: &ModelState,
    heterogeneity: f64,
    dataset_size: u32,
    samples_used: u64,
    dispersion: f64,
    rng: &mut R,
) -> Vec<f64> {
    let count = samples_used.min(u64::from(dataset_size)) as usize;
    let median = model.loss() * heterogeneity;
    (0..count)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            median * (dispersion * z).exp()
        })
        .collect()
}

/// Utilities of one model's candidate clients.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityEntry {
    pub data: Score,
    pub system: f64,
    pub combined: Score,
    pub boosted: Score,
}

/// Inputs for one model column; `None` marks clients not eligible for the model.
#[derive(Debug, Clone, Default)]
pub struct ModelColumn {
    pub times: Vec<Option<f64>>,
    pub reported: Vec<Option<f64>>,
    pub selected: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelUtilities {
    pub entries: Vec<Option<UtilityEntry>>,
    pub max_system: f64,
    pub max_data: f64,
}

/// Per-model utility vectors for one round, normalized over the eligible clients.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTable {
    pub round: u32,
    pub alpha: f64,
    pub models: Vec<ModelUtilities>,
}

impl UtilityTable {
    pub fn build(deadline: f64, alpha: f64, round: u32, columns: &[ModelColumn]) -> Result<Self> {
        let mut models = Vec::with_capacity(columns.len());
        for col in columns {
            let idx: Vec<usize> = (0..col.times.len())
                .filter(|&i| col.times[i].is_some())
                .collect();
            let system = idx
                .iter()
                .map(|&i| system_utility(deadline, col.times[i].unwrap()))
                .collect::<Result<Vec<_>>>()?;
            let data: Vec<Score> = idx
                .iter()
                .map(|&i| col.reported[i].map_or(Score::NeverSelected, Score::Finite))
                .collect();
            let combined = combined_utilities(&system, &data)?;

            let mut entries = vec![None; col.times.len()];
            for (k, &i) in idx.iter().enumerate() {
                entries[i] = Some(UtilityEntry {
                    data: data[k],
                    system: system[k],
                    combined: combined[k],
                    boosted: boosted_score(combined[k], alpha, round, col.selected[i]),
                });
            }
            models.push(ModelUtilities {
                entries,
                max_system: max_finite(system.iter().copied()),
                max_data: max_finite(data.iter().filter_map(|s| s.finite())),
            });
        }
        Ok(Self {
            round,
            alpha,
            models,
        })
    }

    /// Boosted score of `(client, model)`, `None` when the client is not eligible.
    pub fn score(&self, client: usize, model: usize) -> Option<Score> {
        self.models[model].entries[client]
            .as_ref()
            .map(|e| e.boosted)
    }
}
