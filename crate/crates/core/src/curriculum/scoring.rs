//! Difficulty scoring: assigns each training sample a scalar difficulty and
//! fixes the sort order batches are drawn from.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::dataset::{generate_density_map, DatasetManifest};
use crate::error::{Error, Result};
use crate::models::{DensityPredictor, ModelCheckpoint, ModelSpec};
use crate::training::{train, TrainConfig, TrainMode};
use crate::util::write_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOrder {
    /// Ascending difficulty (easy first).
    Curriculum,
    /// Descending difficulty (hard first).
    AntiCurriculum,
    /// Seeded shuffle; the degenerate order standard training uses.
    Random,
}

/// Samples with difficulty scores in a fixed presentation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDataset {
    pub sample_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub order: SampleOrder,
}

impl ScoredDataset {
    /// Sorts `(id, score)` pairs into curriculum order: ascending score,
    /// ties broken by lexicographic id.
    pub fn from_scores(mut pairs: Vec<(String, f64)>, anti: bool) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::parameter("scores", "empty dataset"));
        }
        for (id, s) in &pairs {
            if !s.is_finite() {
                return Err(Error::parameter("scores", format!("non-finite score for {id}")));
            }
        }
        pairs.sort_by(|(ida, sa), (idb, sb)| {
            sa.partial_cmp(sb).unwrap().then_with(|| ida.cmp(idb))
        });
        let scored = ScoredDataset {
            sample_ids: pairs.iter().map(|(id, _)| id.clone()).collect(),
            scores: pairs.iter().map(|(_, s)| *s).collect(),
            order: SampleOrder::Curriculum,
        };
        Ok(if anti { scored.reversed() } else { scored })
    }

    /// A seeded shuffle with all-zero scores.
    pub fn random(mut ids: Vec<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let scores = vec![0.0; ids.len()];
        ScoredDataset {
            sample_ids: ids,
            scores,
            order: SampleOrder::Random,
        }
    }

    /// The exact reversal of this order (curriculum <-> anti-curriculum).
    pub fn reversed(&self) -> ScoredDataset {
        let order = match self.order {
            SampleOrder::Curriculum => SampleOrder::AntiCurriculum,
            SampleOrder::AntiCurriculum => SampleOrder::Curriculum,
            SampleOrder::Random => SampleOrder::Random,
        };
        ScoredDataset {
            sample_ids: self.sample_ids.iter().rev().cloned().collect(),
            scores: self.scores.iter().rev().copied().collect(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// The `size` easiest entries under the current order.
    pub fn prefix(&self, size: usize) -> &[String] {
        &self.sample_ids[..size.min(self.sample_ids.len())]
    }

    /// Keeps only ids in `keep`, preserving order and scores.
    pub fn restricted_to(&self, keep: &std::collections::BTreeSet<String>) -> ScoredDataset {
        let mut ids = Vec::new();
        let mut scores = Vec::new();
        for (id, s) in self.sample_ids.iter().zip(&self.scores) {
            if keep.contains(id) {
                ids.push(id.clone());
                scores.push(*s);
            }
        }
        ScoredDataset {
            sample_ids: ids,
            scores,
            order: self.order,
        }
    }

    /// Checks length agreement and score monotonicity for the order.
    pub fn validate(&self) -> Result<()> {
        if self.sample_ids.len() != self.scores.len() {
            return Err(Error::Internal("ids/scores length mismatch".into()));
        }
        let ok = match self.order {
            SampleOrder::Curriculum => self.scores.windows(2).all(|w| w[0] <= w[1]),
            SampleOrder::AntiCurriculum => self.scores.windows(2).all(|w| w[0] >= w[1]),
            SampleOrder::Random => true,
        };
        if !ok {
            return Err(Error::Internal(format!(
                "scores not sorted for {:?} order",
                self.order
            )));
        }
        Ok(())
    }

    /// Writes the export format: a JSON list of `{id, score}` objects.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Entry<'a> {
            id: &'a str,
            score: f64,
        }
        let entries: Vec<Entry> = self
            .sample_ids
            .iter()
            .zip(&self.scores)
            .map(|(id, &score)| Entry { id, score })
            .collect();
        write_json(path, &entries)
    }
}

/// Scorer selection, recorded verbatim in every result artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    /// Difficulty = head count. The default proxy: denser scenes are harder.
    CountHeuristic,
    /// Difficulty = per-sample loss of a briefly uniformly-trained model.
    SelfTaught { pretrain_epochs: usize },
    /// Difficulty = per-sample loss of a separately pretrained model.
    Transfer { checkpoint: PathBuf },
    /// Zero scores in seeded-shuffle order (degenerate / standard training).
    Random,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec::CountHeuristic
    }
}

/// Scores every sample by its head count; ascending order, id tie-break.
pub fn score_by_count(manifest: &DatasetManifest) -> Result<ScoredDataset> {
    if manifest.is_empty() {
        return Err(Error::parameter("manifest", "empty dataset"));
    }
    let pairs = manifest
        .samples
        .iter()
        .map(|s| (s.id.clone(), s.head_count() as f64))
        .collect();
    ScoredDataset::from_scores(pairs, false)
}

/// Scores every sample by the per-sample density loss (sum of squared
/// per-pixel errors) of `predictor` against ground-truth maps rendered at
/// the predictor's output stride.
pub fn score_with_predictor(
    manifest: &DatasetManifest,
    predictor: &dyn DensityPredictor,
    sigma: f64,
) -> Result<ScoredDataset> {
    if manifest.is_empty() {
        return Err(Error::parameter("manifest", "empty dataset"));
    }
    let stride = predictor.output_stride();
    let mut pairs = Vec::with_capacity(manifest.len());
    for sample in &manifest.samples {
        let truth = generate_density_map(sample, sigma, stride)?;
        let pred = predictor.predict_density(sample)?;
        if pred.shape() != truth.values.shape() {
            return Err(Error::ShapeMismatch(format!(
                "prediction {:?} vs target {:?} for sample {}",
                pred.shape(),
                truth.values.shape(),
                sample.id
            )));
        }
        let loss: f64 = pred
            .iter()
            .zip(truth.values.iter())
            .map(|(&p, &t)| {
                let d = p as f64 - t as f64;
                d * d
            })
            .sum();
        if !loss.is_finite() {
            return Err(Error::ScoringDiverged { step: 0 });
        }
        pairs.push((sample.id.clone(), loss));
    }
    ScoredDataset::from_scores(pairs, false)
}

/// Scores with a pretrained checkpoint (transfer scoring).
pub fn score_transfer(
    manifest: &DatasetManifest,
    checkpoint: &ModelCheckpoint,
    sigma: f64,
) -> Result<ScoredDataset> {
    let model = checkpoint.to_model()?;
    score_with_predictor(manifest, &model, sigma)
}

/// Self-taught scoring: trains a fresh model on uniformly sampled batches
/// for `pretrain_epochs`, then scores every sample by its loss under that
/// model. Deterministic for a fixed seed.
pub fn score_self_taught(
    manifest: &DatasetManifest,
    model_spec: &ModelSpec,
    pretrain_epochs: usize,
    sigma: f64,
    seed: u64,
) -> Result<ScoredDataset> {
    if pretrain_epochs == 0 {
        return Err(Error::parameter("pretrain_epochs", "must be >= 1"));
    }
    let config = TrainConfig {
        mode: TrainMode::Standard,
        epochs: pretrain_epochs,
        batch_size: manifest.len().min(8),
        seed,
        sigma,
        ..TrainConfig::default()
    };
    let out = train(manifest, model_spec, &config).map_err(|e| match e {
        Error::NonFiniteLoss { step } => Error::ScoringDiverged { step },
        other => other,
    })?;
    score_transfer(manifest, &out.checkpoint, sigma)
}

/// Dispatches on a [`ScorerSpec`]. `seed` feeds the self-taught pretraining
/// and the random order; count and transfer scoring ignore it.
pub fn score_dataset(
    manifest: &DatasetManifest,
    scorer: &ScorerSpec,
    model_spec: &ModelSpec,
    sigma: f64,
    seed: u64,
) -> Result<ScoredDataset> {
    match scorer {
        ScorerSpec::CountHeuristic => score_by_count(manifest),
        ScorerSpec::SelfTaught { pretrain_epochs } => {
            score_self_taught(manifest, model_spec, *pretrain_epochs, sigma, seed)
        }
        ScorerSpec::Transfer { checkpoint } => {
            let ckpt = ModelCheckpoint::load(checkpoint)?;
            score_transfer(manifest, &ckpt, sigma)
        }
        ScorerSpec::Random => Ok(ScoredDataset::random(
            manifest.sample_ids(),
            crate::util::derive_seed(seed, "order"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize_dataset;
    use crate::dataset::{AnnotatedSample, SampleSource, Split};
    use ndarray::Array3;

    fn manifest_with_counts(counts: &[usize]) -> DatasetManifest {
        let samples = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| AnnotatedSample {
                id: format!("s{i}"),
                image: Array3::zeros((3, 8, 8)),
                heads: (0..c).map(|k| (k as f64 % 7.0, k as f64 % 7.0)).collect(),
                source: SampleSource::Synthetic,
            })
            .collect();
        DatasetManifest {
            name: "counts".into(),
            split: Split::Train,
            samples,
        }
    }

    #[test]
    fn count_scoring_sorts_ascending() {
        let m = manifest_with_counts(&[5, 50, 20]);
        let scored = score_by_count(&m).unwrap();
        assert_eq!(scored.sample_ids, vec!["s0", "s2", "s1"]);
        assert_eq!(scored.scores, vec![5.0, 20.0, 50.0]);
        scored.validate().unwrap();
    }

    #[test]
    fn equal_counts_tie_break_lexicographically() {
        let m = manifest_with_counts(&[3, 3, 3]);
        let scored = score_by_count(&m).unwrap();
        assert_eq!(scored.sample_ids, vec!["s0", "s1", "s2"]);
    }

    #[test]
    fn anti_curriculum_is_exact_reversal() {
        let m = manifest_with_counts(&[5, 50, 20]);
        let scored = score_by_count(&m).unwrap();
        let anti = scored.reversed();
        assert_eq!(anti.sample_ids, vec!["s1", "s2", "s0"]);
        assert_eq!(anti.order, SampleOrder::AntiCurriculum);
        anti.validate().unwrap();
        assert_eq!(anti.reversed(), scored);
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let m = manifest_with_counts(&[]);
        assert!(score_by_count(&m).is_err());
    }

    #[test]
    fn random_order_is_seeded() {
        let ids: Vec<String> = (0..20).map(|i| format!("s{i:02}")).collect();
        let a = ScoredDataset::random(ids.clone(), 3);
        let b = ScoredDataset::random(ids.clone(), 3);
        let c = ScoredDataset::random(ids, 4);
        assert_eq!(a, b);
        assert_ne!(a.sample_ids, c.sample_ids);
    }

    #[test]
    fn oracle_predictor_scores_zero() {
        use crate::dataset::DensityMap;

        struct Oracle {
            sigma: f64,
            stride: u32,
        }
        impl DensityPredictor for Oracle {
            fn output_stride(&self) -> u32 {
                self.stride
            }
            fn predict_density(
                &self,
                sample: &AnnotatedSample,
            ) -> crate::error::Result<ndarray::Array2<f32>> {
                let DensityMap { values, .. } =
                    generate_density_map(sample, self.sigma, self.stride)?;
                Ok(values)
            }
        }

        let m = synthesize_dataset(6, (0, 10), (32, 32), 5).unwrap();
        let scored =
            score_with_predictor(&m, &Oracle { sigma: 4.0, stride: 4 }, 4.0).unwrap();
        assert!(scored.scores.iter().all(|&s| s == 0.0));
        // All-tie scores fall back to lexicographic id order.
        let mut ids = scored.sample_ids.clone();
        ids.sort();
        assert_eq!(scored.sample_ids, ids);
    }
}
