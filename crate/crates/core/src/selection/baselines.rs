//! Single-model-per-client baseline selectors.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::domain::AssignmentMatrix;
use crate::error::Result;

use super::SelectionInstance;

fn empty(inst: &SelectionInstance) -> Vec<Vec<bool>> {
    vec![vec![false; inst.models()]; inst.clients()]
}

/// Uniformly samples `required` clients that can run some model, then gives each
/// one uniformly chosen model it can finish within the deadline.
pub fn select_random<R: Rng + ?Sized>(
    inst: &SelectionInstance,
    rng: &mut R,
) -> Result<AssignmentMatrix> {
    inst.validate()?;
    let candidates = inst.feasible_clients();
    let relaxed = candidates.len() < inst.required;
    let mut chosen: Vec<usize> = candidates
        .choose_multiple(rng, inst.required.min(candidates.len()))
        .copied()
        .collect();
    chosen.sort_unstable();

    let mut x = empty(inst);
    for i in chosen {
        let options: Vec<usize> = (0..inst.models())
            .filter(|&j| inst.feasible(i, j))
            .collect();
        let j = *options.choose(rng).expect("candidate has a feasible model");
        x[i][j] = true;
    }
    Ok(inst.assignment(x, relaxed))
}

/// Shuffles the feasible clients, keeps the first `required`, splits them into one
/// contiguous group per model (sizes differ by at most one) and sends group `g`
/// to model `g`. A client that cannot run its group's model falls back to its
/// first feasible model.
pub fn select_round_robin<R: Rng + ?Sized>(
    inst: &SelectionInstance,
    rng: &mut R,
) -> Result<AssignmentMatrix> {
    inst.validate()?;
    let mut candidates = inst.feasible_clients();
    let relaxed = candidates.len() < inst.required;
    candidates.shuffle(rng);
    candidates.truncate(inst.required);

    let m = inst.models();
    let (base, extra) = (candidates.len() / m, candidates.len() % m);
    let mut x = empty(inst);
    let mut pos = 0;
    for g in 0..m {
        let size = base + usize::from(g < extra);
        for &i in &candidates[pos..pos + size] {
            let j = if inst.feasible(i, g) {
                g
            } else {
                (0..m)
                    .find(|&j| inst.feasible(i, j))
                    .expect("candidate has a feasible model")
            };
            x[i][j] = true;
        }
        pos += size;
    }
    Ok(inst.assignment(x, relaxed))
}

/// Visits models round-robin; each visit takes the best-scoring unassigned client
/// that can run that model (ties to the lower index). One model per client.
#[allow(clippy::needless_range_loop)] // j indexes both the scores and the assignment
pub fn select_greedy_per_model(inst: &SelectionInstance) -> Result<AssignmentMatrix> {
    inst.validate()?;
    let (n, m) = (inst.clients(), inst.models());
    let target = inst.required.min(inst.feasible_clients().len());
    let mut taken = vec![false; n];
    let mut x = empty(inst);
    let mut used = 0;
    while used < target {
        let mut progressed = false;
        for j in 0..m {
            if used == target {
                break;
            }
            let pick = (0..n)
                .filter(|&i| !taken[i] && inst.feasible(i, j))
                .max_by(|&a, &b| {
                    inst.scores[a][j]
                        .total_cmp(&inst.scores[b][j])
                        .then(b.cmp(&a))
                });
            if let Some(i) = pick {
                taken[i] = true;
                x[i][j] = true;
                used += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(inst.assignment(x, target < inst.required))
}
