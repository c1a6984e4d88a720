use crate::domain::{AssignmentMatrix, Objective};
use crate::error::{Error, Result};

use super::SelectionInstance;

/// Largest number of binary variables the exhaustive search accepts.
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Exhaustive search over every 0/1 matrix. Used as the oracle for [`super::solve_exact`].
///
/// Matrices are enumerated as integers with cell (0, 0) as the most significant
/// bit, i.e. in increasing lexicographic order, and only strict improvements
/// replace the incumbent.
pub fn solve_brute_force(inst: &SelectionInstance) -> Result<AssignmentMatrix> {
    inst.validate()?;
    let (n, m) = (inst.clients(), inst.models());
    let vars = n * m;
    if vars > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            vars,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let limit = inst.max_models_per_client.unwrap_or(m);
    let bit = |i: usize, j: usize| 1u32 << (vars - 1 - (i * m + j));

    // (participants, objective, code)
    let mut best: Option<(usize, Objective, u32)> = None;
    'codes: for code in 0u32..(1u32 << vars) {
        let mut participants = 0;
        let mut obj = Objective::ZERO;
        for i in 0..n {
            let mut busy = 0.0;
            let mut count = 0;
            for j in 0..m {
                if code & bit(i, j) == 0 {
                    continue;
                }
                if !inst.eligible[i][j] {
                    continue 'codes;
                }
                busy += inst.times[i][j];
                count += 1;
                obj = obj + Objective::of(inst.scores[i][j]);
            }
            if busy > inst.deadline || count > limit {
                continue 'codes;
            }
            if count > 0 {
                participants += 1;
            }
        }
        if participants > inst.required {
            continue;
        }
        let better = match best {
            None => true,
            Some((p, o, _)) => participants > p || (participants == p && obj > o),
        };
        if better {
            best = Some((participants, obj, code));
        }
    }

    let (participants, _, code) = best.expect("the empty matrix is always feasible");
    let x = (0..n)
        .map(|i| (0..m).map(|j| code & bit(i, j) != 0).collect())
        .collect();
    Ok(inst.assignment(x, participants < inst.required))
}
