//! The batch scheduler: sorts data by score, grows the exposed prefix with
//! the pacing function, and uniformly samples each mini-batch from it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pacing::{pace, PacingConfig};
use super::scoring::ScoredDataset;
use crate::error::{Error, Result};
use crate::util::{read_json, write_json};

/// A fully materialized training schedule: one batch of sample ids per
/// step, plus the exposed-prefix size `g(i)` that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub config: PacingConfig,
    pub seed: u64,
    #[serde(rename = "g")]
    pub exposed_sizes: Vec<usize>,
    pub batches: Vec<Vec<String>>,
}

impl CurriculumPlan {
    pub fn steps(&self) -> usize {
        self.batches.len()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Audits the prefix-membership invariant: every batch member must lie
    /// within the first `g(i)` entries of `scored`.
    pub fn verify_prefix_membership(&self, scored: &ScoredDataset) -> Result<()> {
        for (i, (batch, &size)) in self.batches.iter().zip(&self.exposed_sizes).enumerate() {
            let prefix: std::collections::BTreeSet<&str> =
                scored.prefix(size).iter().map(|s| s.as_str()).collect();
            for id in batch {
                if !prefix.contains(id.as_str()) {
                    return Err(Error::Internal(format!(
                        "batch {} contains '{id}' outside the exposed prefix of size {size}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Draws `amount` distinct indices uniformly from `0..size` (Floyd's
/// algorithm). Hand-rolled so emitted plans are stable across library
/// versions and platforms.
fn sample_distinct(rng: &mut ChaCha8Rng, size: usize, amount: usize) -> Vec<usize> {
    debug_assert!(amount <= size);
    let mut picked: Vec<usize> = Vec::with_capacity(amount);
    for j in (size - amount)..size {
        let candidate = rng.random_range(0..=j);
        if picked.contains(&candidate) {
            picked.push(j);
        } else {
            picked.push(candidate);
        }
    }
    picked
}

/// Builds the schedule for `scored` data under `config`: for each step
/// `i in 1..=T`, expose the first `g(i)` entries and sample one batch of
/// `batch_size` ids uniformly without replacement from them. Deterministic
/// for a fixed seed.
pub fn build_plan(
    scored: &ScoredDataset,
    config: &PacingConfig,
    seed: u64,
) -> Result<CurriculumPlan> {
    config.validate()?;
    scored.validate()?;
    if config.dataset_size != scored.len() {
        return Err(Error::Config(format!(
            "pacing dataset_size ({}) does not match scored dataset ({})",
            config.dataset_size,
            scored.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exposed_sizes = Vec::with_capacity(config.total_steps);
    let mut batches = Vec::with_capacity(config.total_steps);
    for t in 1..=config.total_steps {
        let size = pace(config, t)?;
        if size < config.batch_size {
            return Err(Error::Internal(format!(
                "exposed size {size} at step {t} smaller than batch {}",
                config.batch_size
            )));
        }
        let batch = sample_distinct(&mut rng, size, config.batch_size)
            .into_iter()
            .map(|idx| scored.sample_ids[idx].clone())
            .collect();
        exposed_sizes.push(size);
        batches.push(batch);
    }

    Ok(CurriculumPlan {
        config: config.clone(),
        seed,
        exposed_sizes,
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::pacing::PacingShape;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    fn scored(n: usize) -> ScoredDataset {
        ScoredDataset::from_scores(
            ids(n).into_iter().enumerate().map(|(i, id)| (id, i as f64)).collect(),
            false,
        )
        .unwrap()
    }

    fn config(n: usize, batch: usize, b: f64, t: usize) -> PacingConfig {
        PacingConfig {
            shape: PacingShape::Linear,
            dataset_size: n,
            start_fraction: b,
            ramp_fraction: 0.4,
            total_steps: t,
            step_jumps: 4,
            batch_size: batch,
        }
    }

    #[test]
    fn full_exposure_samples_whole_dataset() {
        let s = scored(16);
        let plan = build_plan(&s, &config(16, 4, 1.0, 40), 3).unwrap();
        assert!(plan.exposed_sizes.iter().all(|&g| g == 16));
        // Every id appears somewhere over 40 uniform batches of 4 from 16.
        let seen: std::collections::BTreeSet<&String> =
            plan.batches.iter().flatten().collect();
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn first_batch_drawn_from_easiest_prefix() {
        // Step shape stays flat until the first jump, so g(1) = ceil(b*N) = 8.
        let cfg = PacingConfig {
            shape: PacingShape::Step,
            ..config(16, 4, 0.5, 100)
        };
        let s = scored(16);
        let plan = build_plan(&s, &cfg, 7).unwrap();
        assert_eq!(plan.exposed_sizes[0], 8);
        let easiest: Vec<&String> = s.sample_ids.iter().take(8).collect();
        for id in &plan.batches[0] {
            assert!(easiest.contains(&id), "{id} not among the 8 easiest");
        }
    }

    #[test]
    fn prefix_membership_holds_exhaustively() {
        let s = scored(400);
        let plan = build_plan(&s, &config(400, 8, 0.2, 1000), 3).unwrap();
        plan.verify_prefix_membership(&s).unwrap();
    }

    #[test]
    fn plans_are_bit_identical_for_equal_seeds() {
        let s = scored(50);
        let cfg = config(50, 5, 0.2, 200);
        let a = build_plan(&s, &cfg, 42).unwrap();
        let b = build_plan(&s, &cfg, 42).unwrap();
        assert_eq!(a, b);
        let a_json = serde_json::to_vec(&a).unwrap();
        let b_json = serde_json::to_vec(&b).unwrap();
        assert_eq!(a_json, b_json);
        let c = build_plan(&s, &cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batches_have_distinct_members() {
        let s = scored(30);
        let plan = build_plan(&s, &config(30, 8, 0.3, 150), 9).unwrap();
        for batch in &plan.batches {
            let set: std::collections::BTreeSet<&String> = batch.iter().collect();
            assert_eq!(set.len(), batch.len());
        }
    }

    #[test]
    fn size_mismatch_is_a_config_error() {
        let s = scored(10);
        let err = build_plan(&s, &config(12, 2, 0.5, 10), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn export_round_trips_through_json() {
        let s = scored(20);
        let plan = build_plan(&s, &config(20, 4, 0.25, 60), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        plan.write(&path).unwrap();
        let back = CurriculumPlan::read(&path).unwrap();
        assert_eq!(plan, back);
        // The export carries the documented "g" key.
        let raw: serde_json::Value = crate::util::read_json(&path).unwrap();
        assert!(raw.get("g").is_some());
        assert!(raw.get("batches").is_some());
        assert!(raw.get("config").is_some());
        assert!(raw.get("seed").is_some());
    }
}
