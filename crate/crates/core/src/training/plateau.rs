//! Reduce-on-plateau learning-rate decay driven by MAE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauMonitor {
    /// Counting MAE on the held-out validation set (default).
    Validation,
    /// Counting MAE on the training pool.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    /// Epochs without improvement before the rate is reduced.
    pub patience: usize,
    /// Multiplier applied on reduction, in (0, 1).
    pub factor: f64,
    /// Floor the learning rate never drops below.
    pub min_lr: f64,
    pub monitor: PlateauMonitor,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 10,
            factor: 0.5,
            min_lr: 1e-6,
            monitor: PlateauMonitor::Validation,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::parameter("plateau.factor", "must be in (0, 1)"));
        }
        if self.patience == 0 {
            return Err(Error::parameter("plateau.patience", "must be >= 1"));
        }
        if self.min_lr < 0.0 {
            return Err(Error::parameter("plateau.min_lr", "must be >= 0"));
        }
        Ok(())
    }
}

/// Tracks the monitored metric and lowers the rate after `patience` epochs
/// without strict improvement.
#[derive(Debug, Clone)]
pub struct PlateauState {
    config: PlateauConfig,
    lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauState {
    pub fn new(config: PlateauConfig, initial_lr: f64) -> Self {
        PlateauState {
            config,
            lr: initial_lr,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's metric; returns the learning rate in effect after
    /// the decision.
    pub fn observe(&mut self, metric: f64) -> f64 {
        match self.best {
            None => self.best = Some(metric),
            Some(best) if metric < best => {
                self.best = Some(metric);
                self.bad_epochs = 0;
            }
            _ => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.config.patience {
                    self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                    self.bad_epochs = 0;
                }
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_mae_halves_lr_after_patience() {
        let config = PlateauConfig {
            patience: 2,
            factor: 0.5,
            min_lr: 1e-6,
            monitor: PlateauMonitor::Validation,
        };
        let mut state = PlateauState::new(config, 1e-2);
        assert_eq!(state.observe(10.0), 1e-2); // epoch 1: sets the best
        assert_eq!(state.observe(10.0), 1e-2); // epoch 2: 1 bad epoch
        assert_eq!(state.observe(10.0), 5e-3); // epoch 3: patience reached
    }

    #[test]
    fn improvement_resets_the_counter() {
        let config = PlateauConfig {
            patience: 2,
            ..PlateauConfig::default()
        };
        let mut state = PlateauState::new(config, 1e-2);
        state.observe(10.0);
        state.observe(10.0);
        state.observe(9.0); // improvement
        state.observe(9.5);
        assert_eq!(state.lr(), 1e-2);
        state.observe(9.5);
        assert_eq!(state.lr(), 5e-3);
    }

    #[test]
    fn lr_never_drops_below_floor() {
        let config = PlateauConfig {
            patience: 1,
            factor: 0.1,
            min_lr: 1e-4,
            monitor: PlateauMonitor::Validation,
        };
        let mut state = PlateauState::new(config, 1e-2);
        for _ in 0..10 {
            state.observe(1.0);
        }
        assert_eq!(state.lr(), 1e-4);
    }
}
