//! Piecewise-constant grid-voltage profile in the global DQ frame.

use crate::frames::Vec2;
use crate::sim::config::GridConfig;

/// A validated grid profile: step times strictly increasing, first step at
/// `t = 0`. The voltage at time `t` is the value of the last step whose
/// time does not exceed `t`.
#[derive(Debug, Clone)]
pub struct GridProfile {
    times: Vec<f64>,
    values: Vec<Vec2>,
}

impl GridProfile {
    pub fn from_config(cfg: &GridConfig) -> Self {
        GridProfile {
            times: cfg.steps.iter().map(|s| s.t).collect(),
            values: cfg.steps.iter().map(|s| Vec2::new(s.v_d, s.v_q)).collect(),
        }
    }

    /// Grid voltage in the global frame at time `t`. Times before the
    /// first step return the first value.
    pub fn voltage_global(&self, t: f64) -> Vec2 {
        let idx = self.times.partition_point(|&s| s <= t);
        self.values[idx.saturating_sub(1)]
    }

    /// Step times strictly inside `(0, t_end)`, i.e. the instants where
    /// the right-hand side is discontinuous.
    pub fn interior_switch_times(&self, t_end: f64) -> Vec<f64> {
        self.times
            .iter()
            .copied()
            .filter(|&s| s > 0.0 && s < t_end)
            .collect()
    }

    /// Maximal constant-voltage segments covering `[0, t_end]`, as
    /// `(start, end)` pairs.
    pub fn segments(&self, t_end: f64) -> Vec<(f64, f64)> {
        let mut bounds = vec![0.0];
        bounds.extend(self.interior_switch_times(t_end));
        bounds.push(t_end);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Largest voltage magnitude over all steps (the disturbance bound
    /// used by the decay-envelope check).
    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Whether the profile changes value at least once.
    pub fn has_disturbance(&self) -> bool {
        self.values.windows(2).any(|w| w[0] != w[1])
    }
}
