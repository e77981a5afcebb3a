//! Standard and curriculum training with samples-seen-indexed traces.

mod optim;
mod plateau;

pub use optim::Adam;
pub use plateau::{PlateauConfig, PlateauMonitor, PlateauState};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curriculum::{
    build_plan, pace, score_dataset, CurriculumPlan, PacingConfig, PacingShape, ScoredDataset,
    ScorerSpec,
};
use crate::dataset::{generate_density_map, DatasetManifest};
use crate::error::{Error, Result};
use crate::models::{
    build_net, density_loss, sample_to_input, FeatureMap, ModelCheckpoint, ModelSpec, Net,
    NetGrads, TrainingMeta,
};
use crate::util::{derive_seed, fnv1a64, read_to_string, sha256_hex, write_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Standard,
    Curriculum,
    AntiCurriculum,
}

/// What one epoch covers in curriculum modes. Standard training is
/// unaffected (the exposed set is always the full pool).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochUnit {
    /// `ceil(N / batch)` steps per epoch: both arms consume the same
    /// number of samples, so convergence comparisons are budget-matched.
    FullData,
    /// One pass over the currently exposed prefix (`ceil(g / batch)`
    /// steps): early curriculum epochs are shorter and the run consumes
    /// fewer samples in total.
    Exposed,
}

/// Training configuration. Loss is fixed: mean per-pixel squared error on
/// density maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Full pacing parameters; required for curriculum modes. `dataset_size`
    /// must equal the post-holdout training pool and `total_steps` must be
    /// `epochs * ceil(pool / batch_size)`; see [`TrainConfig::curriculum_pacing`].
    pub pacing: Option<PacingConfig>,
    pub scorer: ScorerSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub plateau: PlateauConfig,
    /// Gaussian sigma (full-resolution pixels) of the density targets.
    pub sigma: f64,
    /// Percentage of train samples held out for validation, selected
    /// deterministically by id hash. 0 disables the holdout (plateau then
    /// monitors the training pool).
    pub val_percent: u32,
    pub epoch_unit: EpochUnit,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Standard,
            pacing: None,
            scorer: ScorerSpec::CountHeuristic,
            epochs: 30,
            batch_size: 8,
            lr_initial: 1e-2,
            plateau: PlateauConfig::default(),
            sigma: 4.0,
            val_percent: 10,
            epoch_unit: EpochUnit::FullData,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::parameter("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::parameter("batch_size", "must be >= 1"));
        }
        if !(self.lr_initial > 0.0) {
            return Err(Error::parameter("lr_initial", "must be > 0"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::parameter("sigma", "must be > 0"));
        }
        if self.val_percent >= 100 {
            return Err(Error::parameter("val_percent", "must be < 100"));
        }
        self.plateau.validate()?;
        if matches!(self.mode, TrainMode::Curriculum | TrainMode::AntiCurriculum)
            && self.pacing.is_none()
        {
            return Err(Error::Config(
                "curriculum modes require a pacing config".into(),
            ));
        }
        Ok(())
    }

    /// Materializes a pacing config consistent with this training config
    /// for `manifest`: N is the post-holdout pool size and T is
    /// `epochs * ceil(N / batch_size)`.
    pub fn curriculum_pacing(
        &self,
        manifest: &DatasetManifest,
        shape: PacingShape,
        start_fraction: f64,
        ramp_fraction: f64,
        step_jumps: u32,
    ) -> Result<PacingConfig> {
        let (pool, _) = validation_split(manifest, self.val_percent);
        let n = pool.len();
        if n == 0 {
            return Err(Error::Config("empty training pool after holdout".into()));
        }
        let pacing = PacingConfig {
            shape,
            dataset_size: n,
            start_fraction,
            ramp_fraction,
            total_steps: self.epochs * n.div_ceil(self.batch_size),
            step_jumps,
            batch_size: self.batch_size,
        };
        pacing.validate()?;
        Ok(pacing)
    }
}

/// Splits manifest ids into (training pool, validation holdout) by stable
/// id hash: a sample goes to validation when `fnv1a64(id) % 100` falls
/// below `val_percent`.
pub fn validation_split(
    manifest: &DatasetManifest,
    val_percent: u32,
) -> (Vec<String>, Vec<String>) {
    let mut pool = Vec::new();
    let mut val = Vec::new();
    for s in &manifest.samples {
        if (fnv1a64(s.id.as_bytes()) % 100) < val_percent as u64 {
            val.push(s.id.clone());
        } else {
            pool.push(s.id.clone());
        }
    }
    (pool, val)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub samples_seen: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_mae: f64,
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub wall_time_secs: f64,
}

impl TrainTrace {
    /// Equality of the reproducible parts (wall time excluded).
    pub fn deterministic_eq(&self, other: &TrainTrace) -> bool {
        self.steps == other.steps && self.epochs == other.epochs
    }

    /// Writes `steps.csv` (step,samples_seen,loss) and `epochs.csv`
    /// (epoch,val_mae,val_mse,lr) under `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let mut steps = String::from("step,samples_seen,loss\n");
        for r in &self.steps {
            steps.push_str(&format!("{},{},{}\n", r.step, r.samples_seen, r.loss));
        }
        write_file(&dir.join("steps.csv"), steps.as_bytes())?;

        let mut epochs = String::from("epoch,val_mae,val_mse,lr\n");
        for r in &self.epochs {
            epochs.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.val_mae, r.val_mse, r.lr
            ));
        }
        write_file(&dir.join("epochs.csv"), epochs.as_bytes())
    }

    /// Reads a trace written by [`TrainTrace::write_csv`]; wall time is not
    /// part of the CSVs and comes back as zero.
    pub fn read_csv(dir: &Path) -> Result<TrainTrace> {
        let parse = |path: &Path, cols: usize| -> Result<Vec<Vec<f64>>> {
            let body = read_to_string(path)?;
            let mut rows = Vec::new();
            for (i, line) in body.lines().enumerate().skip(1) {
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<f64> = line
                    .split(',')
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| {
                        Error::Config(format!("bad row {} in {}: {e}", i + 1, path.display()))
                    })?;
                if fields.len() != cols {
                    return Err(Error::Config(format!(
                        "row {} in {} has {} fields, expected {cols}",
                        i + 1,
                        path.display(),
                        fields.len()
                    )));
                }
                rows.push(fields);
            }
            Ok(rows)
        };

        let steps = parse(&dir.join("steps.csv"), 3)?
            .into_iter()
            .map(|f| StepRecord {
                step: f[0] as usize,
                samples_seen: f[1] as usize,
                loss: f[2],
            })
            .collect();
        let epochs = parse(&dir.join("epochs.csv"), 4)?
            .into_iter()
            .map(|f| EpochRecord {
                epoch: f[0] as usize,
                val_mae: f[1],
                val_mse: f[2],
                lr: f[3],
            })
            .collect();
        Ok(TrainTrace {
            steps,
            epochs,
            wall_time_secs: 0.0,
        })
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: ModelCheckpoint,
    pub trace: TrainTrace,
    pub plan: CurriculumPlan,
    pub scored: ScoredDataset,
}

fn counting_metrics(
    net: &Net<f32>,
    inputs: &[FeatureMap<f32>],
    true_counts: &[f64],
) -> (f64, f64) {
    let mut abs = 0.0f64;
    let mut sq = 0.0f64;
    for (input, &truth) in inputs.iter().zip(true_counts) {
        let estimate = net.forward(input.clone()).output().sum_f64();
        let err = estimate - truth;
        abs += err.abs();
        sq += err * err;
    }
    let n = inputs.len().max(1) as f64;
    (abs / n, (sq / n).sqrt())
}

/// Trains a model on `manifest` per `config`. See [`train_to_dir`] for the
/// variant that flushes the trace to disk after every epoch.
pub fn train(
    manifest: &DatasetManifest,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    train_impl(manifest, spec, config, None)
}

/// Like [`train`], but rewrites `steps.csv`/`epochs.csv` under `dir` after
/// each epoch so partial runs stay inspectable (including aborts on
/// non-finite loss).
pub fn train_to_dir(
    manifest: &DatasetManifest,
    spec: &ModelSpec,
    config: &TrainConfig,
    dir: &Path,
) -> Result<TrainOutput> {
    train_impl(manifest, spec, config, Some(dir))
}

fn train_impl(
    manifest: &DatasetManifest,
    spec: &ModelSpec,
    config: &TrainConfig,
    flush_dir: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    manifest.validate()?;
    let started = Instant::now();

    let (pool_ids, val_ids) = validation_split(manifest, config.val_percent);
    if pool_ids.is_empty() {
        return Err(Error::Config("empty training pool after holdout".into()));
    }
    let pool_set: BTreeSet<String> = pool_ids.iter().cloned().collect();
    let pool = manifest.restricted_to(&pool_set);
    let n = pool.len();
    if config.batch_size > n {
        return Err(Error::Config(format!(
            "batch size {} exceeds training pool of {n}",
            config.batch_size
        )));
    }

    let scored = match config.mode {
        TrainMode::Standard => ScoredDataset::random(
            pool.sample_ids(),
            derive_seed(config.seed, "order"),
        ),
        TrainMode::Curriculum => {
            score_dataset(&pool, &config.scorer, spec, config.sigma, config.seed)?
        }
        TrainMode::AntiCurriculum => {
            score_dataset(&pool, &config.scorer, spec, config.sigma, config.seed)?.reversed()
        }
    };

    let pacing = match config.mode {
        TrainMode::Standard => PacingConfig {
            shape: PacingShape::Linear,
            dataset_size: n,
            start_fraction: 1.0,
            ramp_fraction: 1.0,
            total_steps: config.epochs * n.div_ceil(config.batch_size),
            step_jumps: 4,
            batch_size: config.batch_size,
        },
        _ => {
            let pacing = config.pacing.clone().expect("validated above");
            if pacing.dataset_size != n {
                return Err(Error::Config(format!(
                    "pacing/manifest size mismatch: pacing covers {} samples but the \
                     post-holdout training pool has {n}",
                    pacing.dataset_size
                )));
            }
            if pacing.batch_size != config.batch_size {
                return Err(Error::Config(format!(
                    "pacing batch size {} differs from training batch size {}",
                    pacing.batch_size, config.batch_size
                )));
            }
            let expected = config.epochs * n.div_ceil(config.batch_size);
            if pacing.total_steps != expected {
                return Err(Error::Config(format!(
                    "pacing total_steps {} inconsistent with epochs*ceil(N/batch) = {expected}",
                    pacing.total_steps
                )));
            }
            pacing
        }
    };
    pacing.validate()?;

    let plan = build_plan(&scored, &pacing, derive_seed(config.seed, "plan"))?;

    let mut net = build_net::<f32>(spec, derive_seed(config.seed, "init"))?;
    let stride = net.stride;
    let mut adam = Adam::new(&net);
    let mut plateau = PlateauState::new(config.plateau.clone(), config.lr_initial);

    // Precompute inputs and density targets once; both are reused every epoch.
    let mut index_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut inputs = Vec::with_capacity(n);
    let mut targets: Vec<Vec<f32>> = Vec::with_capacity(n);
    let mut pool_counts = Vec::with_capacity(n);
    for (i, sample) in pool.samples.iter().enumerate() {
        index_of.insert(sample.id.as_str(), i);
        inputs.push(sample_to_input(sample, stride)?);
        let map = generate_density_map(sample, config.sigma, stride)?;
        targets.push(map.values.iter().copied().collect());
        pool_counts.push(sample.head_count() as f64);
    }
    let val_set: BTreeSet<String> = val_ids.iter().cloned().collect();
    let val = manifest.restricted_to(&val_set);
    let mut val_inputs = Vec::with_capacity(val.len());
    let mut val_counts = Vec::with_capacity(val.len());
    for sample in &val.samples {
        val_inputs.push(sample_to_input(sample, stride)?);
        val_counts.push(sample.head_count() as f64);
    }

    let config_hash = {
        let blob = serde_json::to_vec(&(config, spec, &manifest.name, n))
            .map_err(|e| Error::json(Path::new("<train config>"), e))?;
        sha256_hex(&blob)
    };

    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, usize, Vec<(String, Vec<f32>)>)> = None;
    let total_steps = pacing.total_steps;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        if step >= total_steps {
            break;
        }
        let epoch_span = match config.epoch_unit {
            EpochUnit::FullData => n,
            // One pass over the currently exposed subset; standard mode
            // degenerates to full-data epochs (g == N throughout).
            EpochUnit::Exposed => pace(&pacing, step + 1)?,
        };
        let epoch_steps = epoch_span
            .div_ceil(config.batch_size)
            .min(total_steps - step);

        for _ in 0..epoch_steps {
            let batch = &plan.batches[step];
            let mut acc: Option<NetGrads<f32>> = None;
            let mut batch_loss = 0.0f64;
            for id in batch {
                let idx = index_of[id.as_str()];
                let cache = net.forward(inputs[idx].clone());
                let (loss, g_out) = density_loss(cache.output(), &targets[idx]);
                batch_loss += loss;
                let grads = net.backward(&cache, &g_out);
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => a.accumulate(&grads),
                }
            }
            let mut grads = acc.expect("batch is never empty");
            grads.scale(1.0 / batch.len() as f32);
            batch_loss /= batch.len() as f64;

            step += 1;
            trace.steps.push(StepRecord {
                step,
                samples_seen: step * config.batch_size,
                loss: batch_loss,
            });
            if !batch_loss.is_finite() {
                trace.wall_time_secs = started.elapsed().as_secs_f64();
                if let Some(dir) = flush_dir {
                    trace.write_csv(dir)?;
                }
                return Err(Error::NonFiniteLoss { step });
            }
            adam.step(&mut net, &grads, plateau.lr());
        }

        let (val_mae, val_mse) = if val_inputs.is_empty() {
            counting_metrics(&net, &inputs, &pool_counts)
        } else {
            counting_metrics(&net, &val_inputs, &val_counts)
        };
        let monitored = match config.plateau.monitor {
            PlateauMonitor::Validation => val_mae,
            PlateauMonitor::Train => {
                if val_inputs.is_empty() {
                    val_mae
                } else {
                    counting_metrics(&net, &inputs, &pool_counts).0
                }
            }
        };
        let lr_after = plateau.observe(monitored);
        trace.epochs.push(EpochRecord {
            epoch,
            val_mae,
            val_mse,
            lr: lr_after,
        });

        if best.as_ref().map(|(mae, _, _)| val_mae < *mae).unwrap_or(true) {
            best = Some((val_mae, epoch, net.named_tensors()));
        }

        if let Some(dir) = flush_dir {
            trace.write_csv(dir)?;
        }
    }

    trace.wall_time_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = flush_dir {
        trace.write_csv(dir)?;
    }

    let (_, best_epoch, tensors) = best.expect("at least one epoch ran");
    let mut resolved_spec = spec.clone();
    resolved_spec.resolve();
    let checkpoint = ModelCheckpoint {
        spec: resolved_spec,
        training_meta: TrainingMeta {
            config_hash,
            seed: config.seed,
            epoch: best_epoch,
        },
        tensors,
    };

    Ok(TrainOutput {
        checkpoint,
        trace,
        plan,
        scored,
    })
}
