//! Counting metrics: MAE, MSE (root-mean-square, the crowd-counting
//! convention), and GAME over a test split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_density_map, DatasetManifest, DensityMap};
use crate::error::{Error, Result};
use crate::models::{DensityPredictor, ModelCheckpoint};
use crate::util::{write_file, write_json};

/// Mean absolute counting error: `(1/N) * sum |e_n - g_n|`.
pub fn mae(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(estimates, truths)?;
    let n = estimates.len() as f64;
    Ok(estimates
        .iter()
        .zip(truths)
        .map(|(e, g)| (e - g).abs())
        .sum::<f64>()
        / n)
}

/// Root-mean-squared counting error: `sqrt((1/N) * sum (e_n - g_n)^2)`.
pub fn mse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(estimates, truths)?;
    let n = estimates.len() as f64;
    Ok((estimates
        .iter()
        .zip(truths)
        .map(|(e, g)| (e - g) * (e - g))
        .sum::<f64>()
        / n)
        .sqrt())
}

fn check_lengths(estimates: &[f64], truths: &[f64]) -> Result<()> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::parameter(
            "estimates",
            format!(
                "need equal non-zero lengths, got {} and {}",
                estimates.len(),
                truths.len()
            ),
        ));
    }
    Ok(())
}

/// Grid average mean error at `level`: the maps are partitioned into
/// `4^level` near-equal regions (a `2^level` by `2^level` grid with integer
/// boundaries) and the absolute regional count differences are summed.
/// Level 0 collapses to the absolute count difference.
pub fn game(pred: &DensityMap, truth: &DensityMap, level: u32) -> Result<f64> {
    if pred.values.shape() != truth.values.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs truth {:?}",
            pred.values.shape(),
            truth.values.shape()
        )));
    }
    if level > 3 {
        return Err(Error::parameter("level", "must be in 0..=3"));
    }
    let (h, w) = (pred.height(), pred.width());
    let regions = 1usize << level;
    let mut total = 0.0f64;
    for ry in 0..regions {
        let y0 = ry * h / regions;
        let y1 = (ry + 1) * h / regions;
        for rx in 0..regions {
            let x0 = rx * w / regions;
            let x1 = (rx + 1) * w / regions;
            let mut diff = 0.0f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    diff += pred.values[(y, x)] as f64 - truth.values[(y, x)] as f64;
                }
            }
            total += diff.abs();
        }
    }
    Ok(total)
}

pub const GAME_LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: String,
    /// True head count of the sample.
    pub true_count: f64,
    /// Sum of the predicted density map.
    pub estimated_count: f64,
    pub game: [f64; GAME_LEVELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<SampleEval>,
    pub mae: f64,
    pub mse: f64,
    pub game: [f64; GAME_LEVELS],
}

impl EvaluationReport {
    /// Recomputes the aggregates from the per-sample rows.
    pub fn recompute_aggregates(&self) -> Result<(f64, f64, [f64; GAME_LEVELS])> {
        let estimates: Vec<f64> = self.rows.iter().map(|r| r.estimated_count).collect();
        let truths: Vec<f64> = self.rows.iter().map(|r| r.true_count).collect();
        let n = self.rows.len() as f64;
        let mut game = [0.0; GAME_LEVELS];
        for level in 0..GAME_LEVELS {
            game[level] = self.rows.iter().map(|r| r.game[level]).sum::<f64>() / n;
        }
        Ok((mae(&estimates, &truths)?, mse(&estimates, &truths)?, game))
    }

    /// Persists `report.csv` (per-sample rows) and `report.json`
    /// (aggregates) under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut csv = String::from("id,true_count,estimated_count,game0,game1,game2,game3\n");
        for r in &self.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.id, r.true_count, r.estimated_count, r.game[0], r.game[1], r.game[2], r.game[3]
            ));
        }
        write_file(&dir.join("report.csv"), csv.as_bytes())?;

        #[derive(Serialize)]
        struct Aggregates<'a> {
            mae: f64,
            mse: f64,
            game: &'a [f64; GAME_LEVELS],
            samples: usize,
        }
        write_json(
            &dir.join("report.json"),
            &Aggregates {
                mae: self.mae,
                mse: self.mse,
                game: &self.game,
                samples: self.rows.len(),
            },
        )
    }
}

/// Evaluates a checkpoint over a test manifest: per-sample true/estimated
/// counts, GAME at levels 0..=3, and the aggregate MAE/MSE/GAME.
pub fn evaluate(
    checkpoint: &ModelCheckpoint,
    test: &DatasetManifest,
    sigma: f64,
) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::parameter("test", "empty test split"));
    }
    let model = checkpoint.to_model()?;
    evaluate_predictor(&model, test, sigma)
}

/// Evaluation against any density predictor (the plug-in surface external
/// models use).
pub fn evaluate_predictor(
    predictor: &dyn DensityPredictor,
    test: &DatasetManifest,
    sigma: f64,
) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::parameter("test", "empty test split"));
    }
    let stride = predictor.output_stride();
    let mut rows = Vec::with_capacity(test.len());
    for sample in &test.samples {
        let truth = generate_density_map(sample, sigma, stride)?;
        let values = predictor.predict_density(sample)?;
        let pred = DensityMap {
            values,
            downsample_factor: stride,
        };
        let mut game_levels = [0.0; GAME_LEVELS];
        for (level, slot) in game_levels.iter_mut().enumerate() {
            *slot = game(&pred, &truth, level as u32)?;
        }
        rows.push(SampleEval {
            id: sample.id.clone(),
            true_count: sample.head_count() as f64,
            estimated_count: pred.sum(),
            game: game_levels,
        });
    }

    let estimates: Vec<f64> = rows.iter().map(|r| r.estimated_count).collect();
    let truths: Vec<f64> = rows.iter().map(|r| r.true_count).collect();
    let n = rows.len() as f64;
    let mut game_agg = [0.0; GAME_LEVELS];
    for level in 0..GAME_LEVELS {
        game_agg[level] = rows.iter().map(|r| r.game[level]).sum::<f64>() / n;
    }

    Ok(EvaluationReport {
        mae: mae(&estimates, &truths)?,
        mse: mse(&estimates, &truths)?,
        game: game_agg,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn map_of(vals: Array2<f32>) -> DensityMap {
        DensityMap {
            values: vals,
            downsample_factor: 1,
        }
    }

    #[test]
    fn mae_hand_examples() {
        assert_eq!(mae(&[12.0, 18.0], &[10.0, 20.0]).unwrap(), 2.0);
        assert_eq!(mae(&[5.0, 6.0], &[5.0, 6.0]).unwrap(), 0.0);
        assert_eq!(mae(&[26.4], &[0.0]).unwrap(), 26.4);
    }

    #[test]
    fn mse_hand_examples() {
        assert_eq!(mse(&[12.0, 18.0], &[10.0, 20.0]).unwrap(), 2.0);
        assert_eq!(mse(&[5.0, 6.0], &[5.0, 6.0]).unwrap(), 0.0);
        assert_eq!(mse(&[13.0, 7.0], &[10.0, 10.0]).unwrap(), 3.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn game_level0_is_absolute_count_difference() {
        let pred = map_of(Array2::from_elem((8, 8), 0.25));
        let truth = map_of(Array2::from_elem((8, 8), 0.125));
        let g0 = game(&pred, &truth, 0).unwrap();
        assert!((g0 - 8.0).abs() < 1e-9); // 64 cells * 0.125
    }

    #[test]
    fn game_identity_is_zero_at_all_levels() {
        let m = map_of(Array2::from_shape_fn((16, 16), |(y, x)| (y * x) as f32 * 0.01));
        for level in 0..4 {
            assert_eq!(game(&m, &m, level).unwrap(), 0.0);
        }
    }

    #[test]
    fn game_separates_displaced_mass() {
        // 5.0 in the top-left quadrant vs 5.0 in the bottom-right.
        let mut p = Array2::<f32>::zeros((8, 8));
        p[(1, 1)] = 5.0;
        let mut t = Array2::<f32>::zeros((8, 8));
        t[(6, 6)] = 5.0;
        let pred = map_of(p);
        let truth = map_of(t);
        assert!((game(&pred, &truth, 0).unwrap() - 0.0).abs() < 1e-9);
        assert!((game(&pred, &truth, 1).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn game_is_monotone_in_level() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let pred = map_of(Array2::from_shape_fn((12, 12), |_| rng.random::<f32>()));
            let truth = map_of(Array2::from_shape_fn((12, 12), |_| rng.random::<f32>()));
            let mut prev = game(&pred, &truth, 0).unwrap();
            for level in 1..4 {
                let cur = game(&pred, &truth, level).unwrap();
                assert!(cur >= prev - 1e-9, "level {level}: {cur} < {prev}");
                prev = cur;
            }
        }
    }

    #[test]
    fn game_rejects_shape_mismatch_and_bad_level() {
        let a = map_of(Array2::zeros((4, 4)));
        let b = map_of(Array2::zeros((4, 8)));
        assert!(game(&a, &b, 0).is_err());
        assert!(game(&a, &a, 4).is_err());
    }

    #[test]
    fn constant_zero_predictor_scores_mean_count() {
        use crate::dataset::{synthesize_dataset, AnnotatedSample};
        use crate::error::Result;

        struct Zero;
        impl DensityPredictor for Zero {
            fn output_stride(&self) -> u32 {
                4
            }
            fn predict_density(&self, s: &AnnotatedSample) -> Result<Array2<f32>> {
                Ok(Array2::zeros((s.height().div_ceil(4), s.width().div_ceil(4))))
            }
        }

        let test = synthesize_dataset(20, (0, 10), (32, 32), 17).unwrap();
        let mean_count =
            test.samples.iter().map(|s| s.head_count() as f64).sum::<f64>() / test.len() as f64;
        let report = evaluate_predictor(&Zero, &test, 4.0).unwrap();
        assert!((report.mae - mean_count).abs() < 1e-12);
        assert!(report.mse >= report.mae);
    }

    #[test]
    fn oracle_predictor_scores_zero() {
        use crate::dataset::{synthesize_dataset, AnnotatedSample};
        use crate::error::Result;

        struct Oracle;
        impl DensityPredictor for Oracle {
            fn output_stride(&self) -> u32 {
                4
            }
            fn predict_density(&self, s: &AnnotatedSample) -> Result<Array2<f32>> {
                Ok(generate_density_map(s, 4.0, 4)?.values)
            }
        }

        let test = synthesize_dataset(10, (0, 8), (32, 32), 19).unwrap();
        let report = evaluate_predictor(&Oracle, &test, 4.0).unwrap();
        // Estimated = map mass = count within the conservation tolerance.
        assert!(report.mae <= 1e-3);
        assert!(report.mse <= 1e-3);
        assert!(report.game.iter().all(|&g| g == 0.0));
        // GAME(0) equals MAE up to the same tolerance.
        assert!((report.game[0] - report.mae).abs() <= 1e-3);
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        use crate::dataset::{synthesize_dataset, AnnotatedSample};
        use crate::error::Result;

        struct Half;
        impl DensityPredictor for Half {
            fn output_stride(&self) -> u32 {
                4
            }
            fn predict_density(&self, s: &AnnotatedSample) -> Result<Array2<f32>> {
                Ok(generate_density_map(s, 4.0, 4)?.values.mapv(|v| v * 0.5))
            }
        }

        let test = synthesize_dataset(15, (0, 12), (32, 32), 23).unwrap();
        let report = evaluate_predictor(&Half, &test, 4.0).unwrap();
        let (m, s, g) = report.recompute_aggregates().unwrap();
        assert!((m - report.mae).abs() < 1e-12);
        assert!((s - report.mse).abs() < 1e-12);
        for level in 0..GAME_LEVELS {
            assert!((g[level] - report.game[level]).abs() < 1e-12);
        }
        assert!(report.mse >= report.mae);
    }

    #[test]
    fn report_files_are_written() {
        let report = EvaluationReport {
            rows: vec![SampleEval {
                id: "a".into(),
                true_count: 3.0,
                estimated_count: 4.0,
                game: [1.0, 1.0, 1.0, 1.0],
            }],
            mae: 1.0,
            mse: 1.0,
            game: [1.0, 1.0, 1.0, 1.0],
        };
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        assert!(dir.path().join("report.csv").exists());
        let json: serde_json::Value =
            crate::util::read_json(&dir.path().join("report.json")).unwrap();
        assert_eq!(json["mae"], 1.0);
        assert_eq!(json["samples"], 1);
    }
}
