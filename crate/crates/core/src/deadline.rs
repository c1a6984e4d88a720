//! Percentile-based round deadline with loss-over-deadline feedback.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::numeric::ceil_snapped;

/// Which way the percentile moves when the earlier window's signal exceeds the recent one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AdjustDirection {
    /// Earlier > recent means training is stable: tighten the deadline.
    #[default]
    StableDecrease,
    /// Mirror image, kept for comparison runs.
    StableIncrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct DeadlineParams {
    /// Adjust the percentile each round; when false the deadline stays at `p_init`.
    pub adaptive: bool,
    pub p_init: f64,
    pub p_min: f64,
    pub epsilon: f64,
    pub window: usize,
    pub direction: AdjustDirection,
}

impl Default for DeadlineParams {
    fn default() -> Self {
        Self {
            adaptive: true,
            p_init: 100.0,
            p_min: 10.0,
            epsilon: 5.0,
            window: 5,
            direction: AdjustDirection::StableDecrease,
        }
    }
}

impl DeadlineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_min > 0.0 && self.p_min <= 100.0) {
            return Err(config("deadline.p_min must lie in (0, 100]"));
        }
        if !(self.p_init >= self.p_min && self.p_init <= 100.0) {
            return Err(config("deadline.p_init must lie in [p_min, 100]"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(config("deadline.epsilon must be positive"));
        }
        if self.window == 0 {
            return Err(config("deadline.window must be >= 1"));
        }
        Ok(())
    }
}

/// Nearest-rank percentile of the execution times: `sorted[ceil(p/100 * n) - 1]`.
pub fn compute_deadline(times: &[f64], percentile: f64) -> Result<f64> {
    if times.is_empty() {
        return Err(domain("cannot take a percentile of no execution times"));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(domain(format!(
            "execution times must be finite and positive, got {t}"
        )));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ceil_snapped(percentile.clamp(0.0, 100.0) * n as f64 / 100.0) as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadlineController {
    percentile: f64,
    params: DeadlineParams,
    history: Vec<f64>,
}

impl DeadlineController {
    pub fn new(params: DeadlineParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            percentile: params.p_init,
            params,
            history: Vec::new(),
        })
    }

    pub fn percentile(&self) -> f64 {
        self.percentile
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn params(&self) -> &DeadlineParams {
        &self.params
    }

    pub fn deadline(&self, times: &[f64]) -> Result<f64> {
        compute_deadline(times, self.percentile)
    }

    /// Appends `loss / deadline` to the history and returns it.
    pub fn record_signal(&mut self, test_loss: f64, deadline: f64) -> Result<f64> {
        if !(deadline > 0.0) {
            return Err(domain("deadline must be positive"));
        }
        if !(test_loss >= 0.0 && test_loss.is_finite()) {
            return Err(domain("test loss must be finite and >= 0"));
        }
        let g = test_loss / deadline;
        self.history.push(g);
        Ok(g)
    }

    /// Compares the two most recent windows of the history and moves the
    /// percentile by epsilon. A no-op while fewer than `2 * window` signals exist
    /// or when adaptation is off.
    pub fn update_percentile(&mut self, round: usize) -> f64 {
        let w = self.params.window;
        let round = round.min(self.history.len());
        if !self.params.adaptive || round < 2 * w {
            return self.percentile;
        }
        let earlier: f64 = self.history[round - 2 * w..round - w].iter().sum();
        let recent: f64 = self.history[round - w..round].iter().sum();
        let stable = earlier > recent;
        let tighten = match self.params.direction {
            AdjustDirection::StableDecrease => stable,
            AdjustDirection::StableIncrease => !stable,
        };
        let step = if tighten {
            -self.params.epsilon
        } else {
            self.params.epsilon
        };
        self.percentile = (self.percentile + step).clamp(self.params.p_min, 100.0);
        self.percentile
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_to_hundred() -> Vec<f64> {
        (1..=100).map(f64::from).collect()
    }

    fn controller(window: usize, epsilon: f64, p_init: f64) -> DeadlineController {
        DeadlineController::new(DeadlineParams {
            window,
            epsilon,
            p_init,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(compute_deadline(&one_to_hundred(), 100.0).unwrap(), 100.0);
        assert_eq!(compute_deadline(&one_to_hundred(), 50.0).unwrap(), 50.0);
        assert_eq!(compute_deadline(&one_to_hundred(), 55.0).unwrap(), 55.0);
        assert_eq!(compute_deadline(&[7.0], 10.0).unwrap(), 7.0);
        assert_eq!(compute_deadline(&[7.0], 100.0).unwrap(), 7.0);
        assert!(compute_deadline(&[], 50.0).is_err());
        assert!(compute_deadline(&[1.0, 0.0], 50.0).is_err());
    }

    #[test]
    fn unsorted_input() {
        assert_eq!(compute_deadline(&[5.0, 1.0, 3.0, 2.0], 50.0).unwrap(), 2.0);
        assert_eq!(compute_deadline(&[5.0, 1.0, 3.0, 2.0], 51.0).unwrap(), 3.0);
    }

    #[test]
    fn signal_examples() {
        let mut c = controller(2, 5.0, 100.0);
        assert_eq!(c.record_signal(2.0, 4.0).unwrap(), 0.5);
        assert_eq!(c.record_signal(0.0, 4.0).unwrap(), 0.0);
        assert_eq!(c.history(), &[0.5, 0.0]);
        assert!(c.record_signal(1.0, 0.0).is_err());
    }

    #[test]
    fn decreasing_signal_tightens() {
        let mut c = controller(2, 5.0, 100.0);
        for g in [4.0, 3.0, 2.0, 1.0] {
            c.history.push(g);
        }
        assert_eq!(c.update_percentile(4), 95.0);
    }

    #[test]
    fn increasing_signal_loosens_and_clamps() {
        let mut c = controller(2, 5.0, 90.0);
        for g in [1.0, 2.0, 3.0, 4.0] {
            c.history.push(g);
        }
        assert_eq!(c.update_percentile(4), 95.0);
        c.history.push(5.0);
        assert_eq!(c.update_percentile(5), 100.0);
        c.history.push(6.0);
        assert_eq!(c.update_percentile(6), 100.0);
    }

    #[test]
    fn warm_up_is_noop() {
        let mut c = controller(2, 5.0, 100.0);
        for g in [4.0, 3.0, 2.0] {
            c.history.push(g);
        }
        assert_eq!(c.update_percentile(3), 100.0);
    }

    #[test]
    fn mirrored_direction() {
        let mut c = DeadlineController::new(DeadlineParams {
            window: 1,
            p_init: 50.0,
            direction: AdjustDirection::StableIncrease,
            ..Default::default()
        })
        .unwrap();
        c.history.extend([2.0, 1.0]);
        assert_eq!(c.update_percentile(2), 55.0);
    }

    #[test]
    fn frozen_when_not_adaptive() {
        let mut c = DeadlineController::new(DeadlineParams {
            adaptive: false,
            ..Default::default()
        })
        .unwrap();
        c.history.extend((0..20).rev().map(f64::from));
        assert_eq!(c.update_percentile(20), 100.0);
    }

    #[test]
    fn invalid_params() {
        assert!(DeadlineController::new(DeadlineParams {
            p_min: 0.0,
            ..Default::default()
        })
        .is_err());
        assert!(DeadlineController::new(DeadlineParams {
            window: 0,
            ..Default::default()
        })
        .is_err());
        assert!(DeadlineController::new(DeadlineParams {
            p_init: 5.0,
            ..Default::default()
        })
        .is_err());
        assert!(DeadlineController::new(DeadlineParams {
            epsilon: 0.0,
            ..Default::default()
        })
        .is_err());
    }

    proptest! {
        #[test]
        fn percentile_stays_in_range(signals in proptest::collection::vec(0.0f64..10.0, 1..200), w in 1usize..6) {
            let mut c = controller(w, 5.0, 100.0);
            for (r, g) in signals.iter().enumerate() {
                c.record_signal(*g, 1.0).unwrap();
                let p = c.update_percentile(r + 1);
                prop_assert!((10.0..=100.0).contains(&p));
            }
        }

        #[test]
        fn deadline_monotone_in_percentile(
            times in proptest::collection::vec(0.01f64..100.0, 1..60), p in 0.0f64..100.0, dp in 0.0f64..50.0,
        ) {
            let a = compute_deadline(&times, p).unwrap();
            let b = compute_deadline(&times, (p + dp).min(100.0)).unwrap();
            prop_assert!(a <= b);
        }
    }
}
