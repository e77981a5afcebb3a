//! The experiment runner: enumerates (dataset x model x arm x seed) cells,
//! executes them resumably, and persists self-describing run directories.

mod curves;
mod table;

pub use curves::{plot_series_png, render_convergence, CurveSeries};
pub use table::{reference_table, render_table, MetricCell, ResultsTable, TableRow};

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::curriculum::{PacingShape, ScorerSpec};
use crate::dataset::{load_dataset, synthesize_dataset, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::models::ModelSpec;
use crate::training::{train_to_dir, EpochUnit, PlateauConfig, TrainConfig, TrainMode};
use crate::util::{sha256_hex, write_file, write_json};

/// Where a cell's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Deterministic synthetic blobs; the test split uses `seed + 1`.
    Synthetic {
        name: String,
        n_train: usize,
        n_test: usize,
        count_range: (u32, u32),
        image_size: (usize, usize),
        seed: u64,
    },
    /// An ingested dataset root with train/test manifest files.
    Directory {
        name: String,
        root: PathBuf,
        train_manifest: String,
        test_manifest: String,
    },
}

impl DatasetSpec {
    pub fn name(&self) -> &str {
        match self {
            DatasetSpec::Synthetic { name, .. } => name,
            DatasetSpec::Directory { name, .. } => name,
        }
    }

    /// Materializes (train, test) manifests.
    pub fn load(&self) -> Result<(DatasetManifest, DatasetManifest)> {
        match self {
            DatasetSpec::Synthetic {
                n_train,
                n_test,
                count_range,
                image_size,
                seed,
                ..
            } => {
                let train = synthesize_dataset(*n_train, *count_range, *image_size, *seed)?;
                let mut test = synthesize_dataset(*n_test, *count_range, *image_size, seed + 1)?;
                test.split = Split::Test;
                test.name = format!("{}-test", test.name);
                Ok((train, test))
            }
            DatasetSpec::Directory {
                root,
                train_manifest,
                test_manifest,
                ..
            } => {
                let (train, _) = load_dataset(root, train_manifest)?;
                let (test, _) = load_dataset(root, test_manifest)?;
                Ok((train, test))
            }
        }
    }
}

fn default_step_jumps() -> u32 {
    4
}

/// One experiment arm: standard training or a pacing-function variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Arm {
    Standard,
    Curriculum {
        shape: PacingShape,
        start_fraction: f64,
        ramp_fraction: f64,
        #[serde(default = "default_step_jumps")]
        step_jumps: u32,
    },
    AntiCurriculum {
        shape: PacingShape,
        start_fraction: f64,
        ramp_fraction: f64,
        #[serde(default = "default_step_jumps")]
        step_jumps: u32,
    },
}

impl Arm {
    /// Column label in results tables.
    pub fn column_name(&self) -> String {
        match self {
            Arm::Standard => "standard".into(),
            Arm::Curriculum { shape, .. } => shape.name().into(),
            Arm::AntiCurriculum { shape, .. } => format!("anti_{}", shape.name()),
        }
    }

    /// The 7-arm set the comparison tables use: standard plus all six
    /// pacing shapes with the given parameters.
    pub fn standard_plus_all_shapes(start_fraction: f64, ramp_fraction: f64) -> Vec<Arm> {
        let mut arms = vec![Arm::Standard];
        for shape in PacingShape::ALL {
            arms.push(Arm::Curriculum {
                shape,
                start_fraction,
                ramp_fraction,
                step_jumps: default_step_jumps(),
            });
        }
        arms
    }
}

/// Training defaults shared by every cell of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainDefaults {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub plateau: PlateauConfig,
    pub sigma: f64,
    pub val_percent: u32,
    pub epoch_unit: EpochUnit,
    pub scorer: ScorerSpec,
}

impl Default for TrainDefaults {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainDefaults {
            epochs: base.epochs,
            batch_size: base.batch_size,
            lr_initial: base.lr_initial,
            plateau: base.plateau,
            sigma: base.sigma,
            val_percent: base.val_percent,
            epoch_unit: base.epoch_unit,
            scorer: base.scorer,
        }
    }
}

/// The full experiment grid: every (dataset, model, arm, seed) combination
/// is one run cell with a deterministic id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    pub name: String,
    pub datasets: Vec<DatasetSpec>,
    pub models: Vec<ModelSpec>,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub defaults: TrainDefaults,
}

impl ExperimentMatrix {
    pub fn cell_count(&self) -> usize {
        self.datasets.len() * self.models.len() * self.arms.len() * self.seeds.len()
    }

    /// Enumerates all cells with their deterministic run ids.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::with_capacity(self.cell_count());
        for dataset in &self.datasets {
            for model in &self.models {
                for arm in &self.arms {
                    for &seed in &self.seeds {
                        cells.push(Cell::new(self, dataset, model, arm, seed));
                    }
                }
            }
        }
        cells
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut matrix: ExperimentMatrix = crate::util::read_json(path)?;
        for model in matrix.models.iter_mut() {
            model.resolve();
        }
        Ok(matrix)
    }
}

/// One run cell of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub run_id: String,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub arm: Arm,
    pub seed: u64,
    pub defaults: TrainDefaults,
}

impl Cell {
    fn new(
        matrix: &ExperimentMatrix,
        dataset: &DatasetSpec,
        model: &ModelSpec,
        arm: &Arm,
        seed: u64,
    ) -> Self {
        // The id hashes everything that determines the run's outcome.
        let key = serde_json::to_vec(&(dataset, model, arm, seed, &matrix.defaults))
            .expect("cell config serializes");
        let hash = sha256_hex(&key);
        let run_id = format!(
            "{}-{}-{}-s{}-{}",
            sanitize(dataset.name()),
            sanitize(&model.display_label()),
            sanitize(&arm.column_name()),
            seed,
            &hash[..8]
        );
        Cell {
            run_id,
            dataset: dataset.clone(),
            model: model.clone(),
            arm: arm.clone(),
            seed,
            defaults: matrix.defaults.clone(),
        }
    }

    /// Builds the concrete training config for this cell, materializing the
    /// pacing parameters against the train manifest.
    pub fn train_config(&self, train: &DatasetManifest) -> Result<TrainConfig> {
        let d = &self.defaults;
        let mut config = TrainConfig {
            mode: TrainMode::Standard,
            pacing: None,
            scorer: d.scorer.clone(),
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr_initial: d.lr_initial,
            plateau: d.plateau.clone(),
            sigma: d.sigma,
            val_percent: d.val_percent,
            seed: self.seed,
        };
        match &self.arm {
            Arm::Standard => {}
            Arm::Curriculum {
                shape,
                start_fraction,
                ramp_fraction,
                step_jumps,
            } => {
                config.mode = TrainMode::Curriculum;
                config.pacing = Some(config.curriculum_pacing(
                    train,
                    *shape,
                    *start_fraction,
                    *ramp_fraction,
                    *step_jumps,
                )?);
            }
            Arm::AntiCurriculum {
                shape,
                start_fraction,
                ramp_fraction,
                step_jumps,
            } => {
                config.mode = TrainMode::AntiCurriculum;
                config.pacing = Some(config.curriculum_pacing(
                    train,
                    *shape,
                    *start_fraction,
                    *ramp_fraction,
                    *step_jumps,
                )?);
            }
        }
        Ok(config)
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '-' })
        .collect()
}

/// Fully resolved cell config as persisted into each run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedRunConfig {
    pub run_id: String,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub arm: Arm,
    pub seed: u64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub completed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl MatrixSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failed.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Executes one prepared cell into `dir`: train, evaluate, persist
/// checkpoint/trace/plan/report, then mark DONE.
pub fn execute_cell(
    cell: &Cell,
    train_manifest: &DatasetManifest,
    test_manifest: &DatasetManifest,
    dir: &Path,
) -> Result<()> {
    let config = cell.train_config(train_manifest)?;
    let resolved = ResolvedRunConfig {
        run_id: cell.run_id.clone(),
        dataset: cell.dataset.clone(),
        model: cell.model.clone(),
        arm: cell.arm.clone(),
        seed: cell.seed,
        train: config.clone(),
    };
    write_json(&dir.join("resolved_config.json"), &resolved)?;

    let output = train_to_dir(train_manifest, &cell.model, &config, dir)?;
    output.checkpoint.save(&dir.join("checkpoint.bin"))?;
    output.plan.write(&dir.join("plan.json"))?;
    output.scored.write_json(&dir.join("scores.json"))?;

    let report = evaluate(&output.checkpoint, test_manifest, config.sigma)?;
    report.write(dir)?;

    #[derive(Serialize)]
    struct RunMeta {
        wall_time_secs: f64,
        best_epoch: usize,
        steps: usize,
        samples_seen: usize,
    }
    write_json(
        &dir.join("run.json"),
        &RunMeta {
            wall_time_secs: output.trace.wall_time_secs,
            best_epoch: output.checkpoint.training_meta.epoch,
            steps: output.trace.steps.len(),
            samples_seen: output
                .trace
                .steps
                .last()
                .map(|s| s.samples_seen)
                .unwrap_or(0),
        },
    )?;

    write_file(&dir.join("DONE"), cell.run_id.as_bytes())?;
    Ok(())
}

/// Runs every cell of the matrix under `out_dir`, skipping completed run
/// directories (a `DONE` marker). Up to `parallelism` cells run at once;
/// failures are recorded and do not stop the rest of the matrix.
pub fn run_matrix(
    matrix: &ExperimentMatrix,
    out_dir: &Path,
    parallelism: usize,
) -> Result<MatrixSummary> {
    let cells = matrix.cells();
    {
        let mut ids: Vec<&str> = cells.iter().map(|c| c.run_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != cells.len() {
            return Err(Error::Internal("duplicate run ids in matrix".into()));
        }
    }

    // Materialize datasets once; cells share them read-only.
    let mut data = Vec::new();
    for spec in &matrix.datasets {
        data.push(spec.load()?);
    }
    let manifest_for = |cell: &Cell| -> &(DatasetManifest, DatasetManifest) {
        let idx = matrix
            .datasets
            .iter()
            .position(|d| d == &cell.dataset)
            .expect("cell dataset comes from this matrix");
        &data[idx]
    };

    let queue: Mutex<VecDeque<Cell>> = Mutex::new(cells.into());
    let summary = Mutex::new(MatrixSummary::default());
    let workers = parallelism.max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let cell = match queue.lock().unwrap().pop_front() {
                    Some(c) => c,
                    None => break,
                };
                let dir = out_dir.join(&cell.run_id);
                if dir.join("DONE").exists() {
                    summary.lock().unwrap().skipped.push(cell.run_id.clone());
                    continue;
                }
                let (train_manifest, test_manifest) = manifest_for(&cell);
                log::info!("running cell {}", cell.run_id);
                match execute_cell(&cell, train_manifest, test_manifest, &dir) {
                    Ok(()) => summary.lock().unwrap().completed.push(cell.run_id.clone()),
                    Err(e) => {
                        log::warn!("cell {} failed: {e}", cell.run_id);
                        summary
                            .lock()
                            .unwrap()
                            .failed
                            .push((cell.run_id.clone(), e.to_string()));
                    }
                }
            });
        }
    });

    let mut summary = summary.into_inner().unwrap();
    summary.completed.sort();
    summary.skipped.sort();
    summary.failed.sort();
    write_json(&out_dir.join("matrix_summary.json"), &summary)?;
    Ok(summary)
}

/// The paper-scale reference matrix (8 models x 7 arms x 2 datasets),
/// shipped for users with the benchmark data and hardware. Not executed by
/// the test suite.
pub fn reference_matrix() -> Result<ExperimentMatrix> {
    let raw = include_str!("../../data/reference_matrix.json");
    let mut matrix: ExperimentMatrix = serde_json::from_str(raw)
        .map_err(|e| Error::json(Path::new("data/reference_matrix.json"), e))?;
    for model in matrix.models.iter_mut() {
        model.resolve();
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelFamily;

    fn toy_matrix(n_models: usize, n_arms: usize) -> ExperimentMatrix {
        let arms = Arm::standard_plus_all_shapes(0.2, 0.4)
            .into_iter()
            .take(n_arms)
            .collect();
        let models = [
            ModelSpec::new(ModelFamily::MultiColumn, 1),
            ModelSpec::new(ModelFamily::DilatedSingleColumn, 1),
        ]
        .into_iter()
        .take(n_models)
        .collect();
        ExperimentMatrix {
            name: "toy".into(),
            datasets: vec![DatasetSpec::Synthetic {
                name: "blobs".into(),
                n_train: 24,
                n_test: 8,
                count_range: (0, 6),
                image_size: (16, 16),
                seed: 3,
            }],
            models,
            arms,
            seeds: vec![0],
            defaults: TrainDefaults {
                epochs: 1,
                batch_size: 4,
                val_percent: 0,
                ..TrainDefaults::default()
            },
        }
    }

    #[test]
    fn seven_arms_give_seven_unique_runs() {
        let matrix = toy_matrix(1, 7);
        assert_eq!(matrix.cell_count(), 7);
        let cells = matrix.cells();
        let ids: std::collections::BTreeSet<&str> =
            cells.iter().map(|c| c.run_id.as_str()).collect();
        assert_eq!(ids.len(), 7);
    }

    #[test]
    fn two_models_give_fourteen_unique_runs() {
        let matrix = toy_matrix(2, 7);
        let cells = matrix.cells();
        assert_eq!(cells.len(), 14);
        let ids: std::collections::BTreeSet<&str> =
            cells.iter().map(|c| c.run_id.as_str()).collect();
        assert_eq!(ids.len(), 14);
    }

    #[test]
    fn matrix_runs_and_resumes_idempotently() {
        let matrix = toy_matrix(1, 2);
        let dir = tempfile::tempdir().unwrap();

        let first = run_matrix(&matrix, dir.path(), 1).unwrap();
        assert_eq!(first.completed.len(), 2);
        assert!(first.failed.is_empty());
        for id in &first.completed {
            let run = dir.path().join(id);
            for artifact in [
                "DONE",
                "resolved_config.json",
                "steps.csv",
                "epochs.csv",
                "checkpoint.bin",
                "plan.json",
                "report.json",
                "report.csv",
            ] {
                assert!(run.join(artifact).exists(), "{id} missing {artifact}");
            }
        }

        let second = run_matrix(&matrix, dir.path(), 1).unwrap();
        assert!(second.completed.is_empty());
        assert_eq!(second.skipped.len(), 2);
        assert_eq!(second.exit_code(), 0);
    }

    #[test]
    fn reference_matrix_enumerates_112_cells() {
        let matrix = reference_matrix().unwrap();
        assert_eq!(matrix.datasets.len(), 2);
        assert_eq!(matrix.models.len(), 8);
        assert_eq!(matrix.arms.len(), 7);
        assert_eq!(matrix.cell_count(), 112);
        let cells = matrix.cells();
        let ids: std::collections::BTreeSet<&str> =
            cells.iter().map(|c| c.run_id.as_str()).collect();
        assert_eq!(ids.len(), 112);
    }
}
