//! Pacing functions: map a training step to the size of the score-sorted
//! prefix that batches may be drawn from.
//!
//! All six shapes share the canonical form
//!
//! ```text
//! g(t) = clamp(ceil(N*b + N*(1-b)*phi(u)), ceil(N*b), N),   u = min(t / (a*T), 1)
//! ```
//!
//! where `N` is the dataset size, `b` the starting fraction, `a` the ramp
//! fraction of total steps `T`, and `phi` the shape function. Every shape
//! starts at `ceil(b*N)` and exposes the full dataset from `t = a*T` on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacingShape {
    Linear,
    Quadratic,
    Root,
    Exponential,
    Log,
    Step,
}

impl PacingShape {
    pub const ALL: [PacingShape; 6] = [
        PacingShape::Linear,
        PacingShape::Quadratic,
        PacingShape::Root,
        PacingShape::Exponential,
        PacingShape::Log,
        PacingShape::Step,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PacingShape::Linear => "linear",
            PacingShape::Quadratic => "quadratic",
            PacingShape::Root => "root",
            PacingShape::Exponential => "exponential",
            PacingShape::Log => "log",
            PacingShape::Step => "step",
        }
    }
}

impl std::str::FromStr for PacingShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(PacingShape::Linear),
            "quadratic" => Ok(PacingShape::Quadratic),
            "root" => Ok(PacingShape::Root),
            "exponential" => Ok(PacingShape::Exponential),
            "log" => Ok(PacingShape::Log),
            "step" => Ok(PacingShape::Step),
            other => Err(Error::parameter("shape", format!("unknown shape '{other}'"))),
        }
    }
}

/// Parameters of a pacing schedule. Field/symbol mapping: `dataset_size` is
/// N, `start_fraction` is b, `ramp_fraction` is a, `total_steps` is T, and
/// `step_jumps` is the staircase count K of the step shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacingConfig {
    pub shape: PacingShape,
    pub dataset_size: usize,
    pub start_fraction: f64,
    pub ramp_fraction: f64,
    pub total_steps: usize,
    pub step_jumps: u32,
    pub batch_size: usize,
}

impl PacingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 {
            return Err(Error::parameter("dataset_size", "must be >= 1"));
        }
        if !(self.start_fraction > 0.0 && self.start_fraction <= 1.0) {
            return Err(Error::parameter("start_fraction", "must be in (0, 1]"));
        }
        if !(self.ramp_fraction > 0.0 && self.ramp_fraction <= 1.0) {
            return Err(Error::parameter("ramp_fraction", "must be in (0, 1]"));
        }
        if self.total_steps == 0 {
            return Err(Error::parameter("total_steps", "must be >= 1"));
        }
        if self.step_jumps == 0 {
            return Err(Error::parameter("step_jumps", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::parameter("batch_size", "must be >= 1"));
        }
        if self.start_size() < self.batch_size {
            return Err(Error::parameter(
                "start_fraction",
                format!(
                    "first exposed subset ({}) smaller than batch size ({})",
                    self.start_size(),
                    self.batch_size
                ),
            ));
        }
        Ok(())
    }

    /// Size of the first exposed subset, `ceil(b*N)`.
    pub fn start_size(&self) -> usize {
        ceil_exact(self.dataset_size as f64 * self.start_fraction)
    }
}

/// Ceiling with real-number semantics: a value within 1e-9 relative of an
/// integer is treated as that integer first, so e.g. 400 * 0.2 yields 80
/// rather than 81 despite the binary representation of 0.2.
fn ceil_exact(x: f64) -> usize {
    let nearest = x.round();
    let snapped = if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    snapped.max(0.0) as usize
}

fn shape_value(shape: PacingShape, u: f64, step_jumps: u32) -> f64 {
    match shape {
        PacingShape::Linear => u,
        PacingShape::Quadratic => u * u,
        PacingShape::Root => u.sqrt(),
        PacingShape::Exponential => ((10.0 * u).exp() - 1.0) / (10.0f64.exp() - 1.0),
        PacingShape::Log => (1.0 + 0.1 * (u + (-10.0f64).exp()).ln()).clamp(0.0, 1.0),
        PacingShape::Step => {
            let k = step_jumps as f64;
            (u * k).floor() / k
        }
    }
}

/// Evaluates the pacing function: the number of easiest samples exposed at
/// step `t` (1-based, `1 <= t <= total_steps`).
pub fn pace(config: &PacingConfig, t: usize) -> Result<usize> {
    if t == 0 || t > config.total_steps {
        return Err(Error::parameter(
            "t",
            format!("step {t} outside [1, {}]", config.total_steps),
        ));
    }
    let n = config.dataset_size as f64;
    let ramp_steps = config.ramp_fraction * config.total_steps as f64;
    let u = (t as f64 / ramp_steps).min(1.0);
    let phi = shape_value(config.shape, u, config.step_jumps);
    let raw = n * config.start_fraction + n * (1.0 - config.start_fraction) * phi;
    Ok(ceil_exact(raw).clamp(config.start_size(), config.dataset_size))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2_config(shape: PacingShape) -> PacingConfig {
        PacingConfig {
            shape,
            dataset_size: 400,
            start_fraction: 0.2,
            ramp_fraction: 0.4,
            total_steps: 1000,
            step_jumps: 4,
            batch_size: 8,
        }
    }

    #[test]
    fn start_size_is_ceil_of_fraction() {
        assert_eq!(fig2_config(PacingShape::Linear).start_size(), 80);
        let odd = PacingConfig {
            dataset_size: 7,
            start_fraction: 0.3,
            ..fig2_config(PacingShape::Linear)
        };
        assert_eq!(odd.start_size(), 3); // ceil(2.1)
    }

    #[test]
    fn linear_reaches_full_dataset_at_ramp_end() {
        let c = fig2_config(PacingShape::Linear);
        assert_eq!(pace(&c, 400).unwrap(), 400);
        assert_eq!(pace(&c, 1000).unwrap(), 400);
    }

    #[test]
    fn mid_ramp_values_match_closed_forms() {
        assert_eq!(pace(&fig2_config(PacingShape::Linear), 200).unwrap(), 240);
        assert_eq!(pace(&fig2_config(PacingShape::Quadratic), 200).unwrap(), 160);
        assert_eq!(pace(&fig2_config(PacingShape::Exponential), 200).unwrap(), 83);
        assert_eq!(pace(&fig2_config(PacingShape::Log), 200).unwrap(), 378);
    }

    #[test]
    fn root_and_step_are_bounded_and_monotone() {
        for shape in [PacingShape::Root, PacingShape::Step] {
            let c = fig2_config(shape);
            let mut prev = 0;
            for t in 1..=c.total_steps {
                let g = pace(&c, t).unwrap();
                assert!(g >= 80 && g <= 400, "{shape:?} t={t} g={g}");
                assert!(g >= prev, "{shape:?} shrank at t={t}");
                prev = g;
            }
            assert_eq!(prev, 400);
        }
    }

    #[test]
    fn step_shape_has_staircase_jumps() {
        let c = fig2_config(PacingShape::Step);
        // K = 4 equal jumps over the ramp [1, 400].
        assert_eq!(pace(&c, 1).unwrap(), 80);
        assert_eq!(pace(&c, 99).unwrap(), 80);
        assert_eq!(pace(&c, 100).unwrap(), 160);
        assert_eq!(pace(&c, 199).unwrap(), 160);
        assert_eq!(pace(&c, 200).unwrap(), 240);
        assert_eq!(pace(&c, 300).unwrap(), 320);
        assert_eq!(pace(&c, 400).unwrap(), 400);
    }

    #[test]
    fn out_of_range_step_is_an_error() {
        let c = fig2_config(PacingShape::Linear);
        assert!(pace(&c, 0).is_err());
        assert!(pace(&c, 1001).is_err());
    }

    #[test]
    fn tiny_start_fraction_rejected_when_batch_does_not_fit() {
        let c = PacingConfig {
            start_fraction: 0.01, // ceil(4) = 4 < 8
            ..fig2_config(PacingShape::Linear)
        };
        assert!(c.validate().is_err());
    }
}
