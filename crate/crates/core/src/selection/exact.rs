//! Exact solver.
//!
//! Clients only interact through the participant count, so the problem splits
//! into one small knapsack per client (best nonempty model subset under the
//! deadline) followed by picking the `required` clients with the best subset
//! values. Each knapsack is a depth-first branch and bound over the models with
//! a fractional relaxation bound.

use std::cmp::Ordering;

use crate::domain::{AssignmentMatrix, Objective};
use crate::error::Result;

use super::SelectionInstance;

struct Item {
    fresh: bool,
    value: f64,
    time: f64,
    usable: bool,
}

struct ClientKnapsack<'a> {
    items: &'a [Item],
    /// finite items sorted by value/time, for the fractional bound
    by_ratio: Vec<usize>,
    limit: usize,
    best: Option<(Objective, u64)>,
}

impl ClientKnapsack<'_> {
    /// Upper bound on the objective reachable from `depth` onward.
    fn bound(&self, depth: usize, capacity: f64, used: usize, cur: Objective) -> Objective {
        let slots = self.limit - used;
        let fresh_left = self.items[depth..]
            .iter()
            .filter(|it| it.usable && it.fresh && it.time <= capacity)
            .count()
            .min(slots);

        // fractional knapsack over the remaining finite items
        let mut cap = capacity;
        let mut frac = 0.0;
        let mut taken = 0;
        let mut values = Vec::new();
        for &k in &self.by_ratio {
            let it = &self.items[k];
            if k < depth || !it.usable || it.fresh || it.time > capacity || it.value <= 0.0 {
                continue;
            }
            values.push(it.value);
            if cap <= 0.0 || taken >= slots {
                continue;
            }
            if it.time <= cap {
                frac += it.value;
                cap -= it.time;
                taken += 1;
            } else {
                frac += it.value * cap / it.time;
                cap = 0.0;
                taken += 1;
            }
        }
        // cardinality relaxation: best `slots` values ignoring time
        values.sort_by(|a, b| b.total_cmp(a));
        let card: f64 = values.iter().take(slots).sum();

        Objective {
            fresh_pairs: cur.fresh_pairs + fresh_left as u32,
            value: cur.value + frac.min(card),
        }
    }

    fn prune(&self, bound: Objective) -> bool {
        let Some((best, _)) = self.best else {
            return false;
        };
        match bound.fresh_pairs.cmp(&best.fresh_pairs) {
            Ordering::Less => true,
            Ordering::Greater => false,
            // later solutions are lexicographically larger, so a bound equal to the
            // incumbent cannot help; the slack guards against rounding in the bound
            Ordering::Equal => bound.value + 1e-9 * (1.0 + best.value.abs()) <= best.value,
        }
    }

    fn search(&mut self, depth: usize, capacity: f64, used: usize, mask: u64, cur: Objective) {
        if depth == self.items.len() {
            if used > 0 && self.best.is_none_or(|(b, _)| cur > b) {
                self.best = Some((cur, mask));
            }
            return;
        }
        if used > 0 && self.prune(self.bound(depth, capacity, used, cur)) {
            return;
        }
        // zero branch first: solutions are visited in increasing lexicographic order
        self.search(depth + 1, capacity, used, mask, cur);
        let it = &self.items[depth];
        if it.usable && it.time <= capacity && used < self.limit {
            let gain = if it.fresh {
                Objective {
                    fresh_pairs: 1,
                    value: 0.0,
                }
            } else {
                Objective {
                    fresh_pairs: 0,
                    value: it.value,
                }
            };
            let bit = 1u64 << (self.items.len() - 1 - depth);
            self.search(
                depth + 1,
                capacity - it.time,
                used + 1,
                mask | bit,
                cur + gain,
            );
        }
    }
}

/// Best nonempty model subset for one client, as (objective, mask with model 0 in the highest bit).
fn best_subset(inst: &SelectionInstance, client: usize) -> Option<(Objective, u64)> {
    let m = inst.models();
    let items: Vec<Item> = (0..m)
        .map(|j| {
            let score = inst.scores[client][j];
            Item {
                fresh: score.is_never_selected(),
                value: score.finite().unwrap_or(0.0),
                time: inst.times[client][j],
                usable: inst.feasible(client, j),
            }
        })
        .collect();
    if !items.iter().any(|it| it.usable) {
        return None;
    }
    let mut by_ratio: Vec<usize> = (0..m)
        .filter(|&k| items[k].usable && !items[k].fresh)
        .collect();
    by_ratio.sort_by(|&a, &b| {
        let ra = items[a].value / items[a].time;
        let rb = items[b].value / items[b].time;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut ks = ClientKnapsack {
        items: &items,
        by_ratio,
        limit: inst.max_models_per_client.unwrap_or(m).min(m),
        best: None,
    };
    ks.search(0, inst.deadline, 0, 0, Objective::ZERO);
    ks.best
}

/// Exact optimum of the assignment problem.
///
/// When fewer than `required` clients can run any model, every such client
/// participates and the result is flagged `relaxed`.
pub fn solve_exact(inst: &SelectionInstance) -> Result<AssignmentMatrix> {
    inst.validate()?;
    let (n, m) = (inst.clients(), inst.models());

    let mut candidates: Vec<(usize, Objective, u64)> = (0..n)
        .filter_map(|i| best_subset(inst, i).map(|(obj, mask)| (i, obj, mask)))
        .collect();
    // best value first; among equals prefer later clients so early rows stay empty
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.cmp(&a.0)));

    let relaxed = candidates.len() < inst.required;
    let mut x = vec![vec![false; m]; n];
    for &(i, _, mask) in candidates.iter().take(inst.required) {
        for (j, cell) in x[i].iter_mut().enumerate() {
            *cell = mask & (1u64 << (m - 1 - j)) != 0;
        }
    }
    Ok(inst.assignment(x, relaxed))
}
