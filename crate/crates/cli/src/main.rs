//! `crowdcl` — curriculum-learning experiments for crowd counting.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 run failure(s).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crowdcl::curriculum::{build_plan, score_dataset, PacingShape, ScorerSpec};
use crowdcl::dataset::{
    load_dataset, save_dataset, scan_dataset_root, synthesize_dataset, Split,
};
use crowdcl::evaluation::evaluate;
use crowdcl::models::{ModelCheckpoint, ModelFamily, ModelSpec};
use crowdcl::runner::{
    reference_matrix, reference_table, render_convergence, render_table, run_matrix,
    ExperimentMatrix,
};
use crowdcl::training::{validation_split, PlateauMonitor, TrainConfig, TrainMode};
use crowdcl::Error;

#[derive(Parser)]
#[command(
    name = "crowdcl",
    version,
    about = "Curriculum-learning experiments for crowd counting by density estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train + test splits) on disk.
    Synth(SynthArgs),
    /// Scan a dataset root (images/ + annotations/) into a manifest file.
    Ingest(IngestArgs),
    /// Score a dataset's difficulty and export {id, score} JSON.
    Score(ScoreArgs),
    /// Build and export a curriculum plan (pacing schedule + batches).
    Plan(PlanArgs),
    /// Train one model and persist checkpoint, trace, and plan.
    Train(TrainArgs),
    /// Evaluate a checkpoint over a test manifest (MAE/MSE/GAME).
    Eval(EvalArgs),
    /// Run a full experiment matrix from a JSON config (resumable).
    Matrix(MatrixArgs),
    /// Render a results table from finished runs or the bundled reference data.
    Table(TableArgs),
    /// Export convergence curves (loss vs samples seen) for a run pair.
    Curves(CurvesArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Linear,
    Quadratic,
    Root,
    Exponential,
    Log,
    Step,
}

impl From<ShapeArg> for PacingShape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Linear => PacingShape::Linear,
            ShapeArg::Quadratic => PacingShape::Quadratic,
            ShapeArg::Root => PacingShape::Root,
            ShapeArg::Exponential => PacingShape::Exponential,
            ShapeArg::Log => PacingShape::Log,
            ShapeArg::Step => PacingShape::Step,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    MultiColumn,
    DilatedSingleColumn,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Count,
    SelfTaught,
    Transfer,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Curriculum,
    AntiCurriculum,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset root.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    #[arg(long, default_value_t = 50)]
    n_test: usize,
    #[arg(long, default_value_t = 5)]
    count_min: u32,
    #[arg(long, default_value_t = 50)]
    count_max: u32,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset root containing images/ and annotations/.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "dataset")]
    name: String,
    /// Split label for the manifest (train or test).
    #[arg(long, default_value = "train")]
    split: String,
    /// Convert head-point CSV files (one "x,y" pair per line) from this
    /// directory into JSON annotations before scanning.
    #[arg(long)]
    points_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "train.json")]
    manifest: String,
    #[arg(long, value_enum, default_value_t = ScorerArg::Count)]
    scorer: ScorerArg,
    /// Checkpoint path (transfer scoring).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Pretraining epochs (self-taught scoring).
    #[arg(long, default_value_t = 5)]
    pretrain_epochs: usize,
    #[arg(long, value_enum, default_value_t = FamilyArg::MultiColumn)]
    model: FamilyArg,
    #[arg(long, default_value_t = 5)]
    channels: u32,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "train.json")]
    manifest: String,
    #[arg(long, value_enum, default_value_t = ScorerArg::Count)]
    scorer: ScorerArg,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pretrain_epochs: usize,
    #[arg(long, value_enum, default_value_t = FamilyArg::MultiColumn)]
    model: FamilyArg,
    #[arg(long, default_value_t = 5)]
    channels: u32,
    #[arg(long, value_enum)]
    shape: ShapeArg,
    /// Starting fraction b of the data exposed at step 1.
    #[arg(long, default_value_t = 0.2)]
    start_fraction: f64,
    /// Ramp fraction a: the full dataset is exposed from step a*T on.
    #[arg(long, default_value_t = 0.4)]
    ramp_fraction: f64,
    #[arg(long, default_value_t = 4)]
    step_jumps: u32,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Total steps T; defaults to epochs * ceil(N / batch_size).
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "train.json")]
    manifest: String,
    #[arg(long, value_enum, default_value_t = FamilyArg::MultiColumn)]
    model: FamilyArg,
    #[arg(long, default_value_t = 5)]
    channels: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Standard)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ScorerArg::Count)]
    scorer: ScorerArg,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pretrain_epochs: usize,
    #[arg(long, value_enum, default_value_t = ShapeArg::Linear)]
    shape: ShapeArg,
    #[arg(long, default_value_t = 0.2)]
    start_fraction: f64,
    #[arg(long, default_value_t = 0.4)]
    ramp_fraction: f64,
    #[arg(long, default_value_t = 4)]
    step_jumps: u32,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0.5)]
    factor: f64,
    #[arg(long, default_value_t = 1e-6)]
    min_lr: f64,
    /// Plateau monitor: validation or train MAE.
    #[arg(long, default_value = "validation")]
    monitor: String,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    /// Percent of train samples held out for validation (0 disables).
    #[arg(long, default_value_t = 10)]
    val_percent: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory for checkpoint, trace, plan, and resolved config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "test.json")]
    manifest: String,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    /// Directory for report.csv / report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatrixArgs {
    /// JSON experiment file; "reference" loads the bundled full-scale
    /// 8x7x2 matrix config.
    #[arg(long)]
    config: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Print the enumerated cells without running anything.
    #[arg(long, default_value_t = false)]
    dry_run: bool,
}

#[derive(Args)]
struct TableArgs {
    /// Directory of finished runs.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Render bundled published numbers instead: part_a or part_b.
    #[arg(long)]
    reference: Option<String>,
    /// Output format: text, markdown, or json.
    #[arg(long, default_value = "text")]
    format: String,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurvesArgs {
    #[arg(long)]
    runs: PathBuf,
    /// Run id of the standard arm.
    #[arg(long)]
    standard: String,
    /// Run id of the curriculum arm.
    #[arg(long)]
    curriculum: String,
    /// Output prefix; writes <prefix>.csv and <prefix>.png.
    #[arg(long)]
    out: PathBuf,
}

fn scorer_spec(
    scorer: ScorerArg,
    checkpoint: &Option<PathBuf>,
    pretrain_epochs: usize,
) -> anyhow::Result<ScorerSpec> {
    Ok(match scorer {
        ScorerArg::Count => ScorerSpec::CountHeuristic,
        ScorerArg::SelfTaught => ScorerSpec::SelfTaught { pretrain_epochs },
        ScorerArg::Random => ScorerSpec::Random,
        ScorerArg::Transfer => ScorerSpec::Transfer {
            checkpoint: checkpoint
                .clone()
                .ok_or_else(|| anyhow::anyhow!("--checkpoint is required for transfer scoring"))?,
        },
    })
}

fn model_spec(family: FamilyArg, channels: u32) -> ModelSpec {
    match family {
        FamilyArg::MultiColumn => ModelSpec::new(ModelFamily::MultiColumn, channels),
        FamilyArg::DilatedSingleColumn => {
            ModelSpec::new(ModelFamily::DilatedSingleColumn, channels)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Synth(args) => {
            let train = synthesize_dataset(
                args.n_train,
                (args.count_min, args.count_max),
                (args.height, args.width),
                args.seed,
            )?;
            let mut test = synthesize_dataset(
                args.n_test,
                (args.count_min, args.count_max),
                (args.height, args.width),
                args.seed + 1,
            )?;
            test.split = Split::Test;
            let train_path = save_dataset(&train, &args.out)?;
            let test_path = save_dataset(&test, &args.out)?;
            println!(
                "wrote {} train / {} test samples under {} ({} , {})",
                train.len(),
                test.len(),
                args.out.display(),
                train_path.display(),
                test_path.display()
            );
        }
        Command::Ingest(args) => {
            if let Some(csv_dir) = &args.points_csv {
                let converted = convert_points_csv(csv_dir, &args.root)?;
                println!("converted {converted} point-CSV files to JSON annotations");
            }
            let split = match args.split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => anyhow::bail!("unknown split '{other}' (use train or test)"),
            };
            let manifest_path = scan_dataset_root(&args.root, &args.name, split)?;
            let (manifest, report) = load_dataset(
                &args.root,
                manifest_path.file_name().unwrap().to_str().unwrap(),
            )?;
            println!(
                "ingested {} samples into {} ({} clamped head points)",
                manifest.len(),
                manifest_path.display(),
                report.clamped_heads
            );
        }
        Command::Score(args) => {
            let (manifest, _) = load_dataset(&args.root, &args.manifest)?;
            let spec = model_spec(args.model, args.channels);
            let scorer = scorer_spec(args.scorer, &args.checkpoint, args.pretrain_epochs)?;
            let scored = score_dataset(&manifest, &scorer, &spec, args.sigma, args.seed)?;
            scored.write_json(&args.out)?;
            println!("scored {} samples -> {}", scored.len(), args.out.display());
        }
        Command::Plan(args) => {
            let (manifest, _) = load_dataset(&args.root, &args.manifest)?;
            let spec = model_spec(args.model, args.channels);
            let scorer = scorer_spec(args.scorer, &args.checkpoint, args.pretrain_epochs)?;
            let scored = score_dataset(&manifest, &scorer, &spec, args.sigma, args.seed)?;
            let n = scored.len();
            let total_steps = args
                .total_steps
                .unwrap_or(args.epochs * n.div_ceil(args.batch_size));
            let pacing = crowdcl::curriculum::PacingConfig {
                shape: args.shape.into(),
                dataset_size: n,
                start_fraction: args.start_fraction,
                ramp_fraction: args.ramp_fraction,
                total_steps,
                step_jumps: args.step_jumps,
                batch_size: args.batch_size,
            };
            let plan = build_plan(&scored, &pacing, args.seed)?;
            plan.write(&args.out)?;
            println!(
                "plan with {} batches (g: {} -> {}) -> {}",
                plan.steps(),
                plan.exposed_sizes.first().unwrap(),
                plan.exposed_sizes.last().unwrap(),
                args.out.display()
            );
        }
        Command::Train(args) => {
            let (manifest, _) = load_dataset(&args.root, &args.manifest)?;
            let spec = model_spec(args.model, args.channels);
            let monitor = match args.monitor.as_str() {
                "validation" => PlateauMonitor::Validation,
                "train" => PlateauMonitor::Train,
                other => anyhow::bail!("unknown monitor '{other}' (use validation or train)"),
            };
            let mut config = TrainConfig {
                mode: match args.mode {
                    ModeArg::Standard => TrainMode::Standard,
                    ModeArg::Curriculum => TrainMode::Curriculum,
                    ModeArg::AntiCurriculum => TrainMode::AntiCurriculum,
                },
                pacing: None,
                scorer: scorer_spec(args.scorer, &args.checkpoint, args.pretrain_epochs)?,
                epochs: args.epochs,
                batch_size: args.batch_size,
                lr_initial: args.lr,
                plateau: crowdcl::training::PlateauConfig {
                    patience: args.patience,
                    factor: args.factor,
                    min_lr: args.min_lr,
                    monitor,
                },
                sigma: args.sigma,
                val_percent: args.val_percent,
                seed: args.seed,
            };
            if !matches!(args.mode, ModeArg::Standard) {
                config.pacing = Some(config.curriculum_pacing(
                    &manifest,
                    args.shape.into(),
                    args.start_fraction,
                    args.ramp_fraction,
                    args.step_jumps,
                )?);
            }

            // The train subcommand is a single-cell run with the same
            // directory layout the matrix runner produces.
            let (pool, val) = validation_split(&manifest, config.val_percent);
            log::info!("training pool {} / validation {}", pool.len(), val.len());
            let output = crowdcl::training::train_to_dir(&manifest, &spec, &config, &args.out)?;
            output.checkpoint.save(&args.out.join("checkpoint.bin"))?;
            output.plan.write(&args.out.join("plan.json"))?;
            output.scored.write_json(&args.out.join("scores.json"))?;
            crowdcl::util::write_json(
                &args.out.join("resolved_config.json"),
                &serde_json::json!({
                    "dataset": {"root": args.root, "manifest": args.manifest},
                    "model": spec,
                    "train": config,
                }),
            )?;
            let last = output.trace.steps.last();
            println!(
                "trained {} steps ({} samples seen), best epoch {} -> {}",
                output.trace.steps.len(),
                last.map(|s| s.samples_seen).unwrap_or(0),
                output.checkpoint.training_meta.epoch,
                args.out.display()
            );
        }
        Command::Eval(args) => {
            let checkpoint = ModelCheckpoint::load(&args.checkpoint)?;
            let (manifest, _) = load_dataset(&args.root, &args.manifest)?;
            let report = evaluate(&checkpoint, &manifest, args.sigma)?;
            report.write(&args.out)?;
            println!(
                "evaluated {} samples: MAE {:.3}, MSE {:.3}, GAME {:?} -> {}",
                report.rows.len(),
                report.mae,
                report.mse,
                report.game,
                args.out.display()
            );
        }
        Command::Matrix(args) => {
            let matrix: ExperimentMatrix = if args.config == "reference" {
                reference_matrix()?
            } else {
                ExperimentMatrix::read(Path::new(&args.config))?
            };
            if args.dry_run {
                for cell in matrix.cells() {
                    println!("{}", cell.run_id);
                }
                println!("{} cells total", matrix.cell_count());
                return Ok(0);
            }
            let summary = run_matrix(&matrix, &args.out, args.parallelism)?;
            println!(
                "matrix '{}': {} completed, {} skipped, {} failed",
                matrix.name,
                summary.completed.len(),
                summary.skipped.len(),
                summary.failed.len()
            );
            for (id, err) in &summary.failed {
                eprintln!("  failed {id}: {err}");
            }
            return Ok(summary.exit_code());
        }
        Command::Table(args) => {
            let table = match (&args.runs, &args.reference) {
                (Some(runs), None) => render_table(runs)?,
                (None, Some(part)) => reference_table(part)?,
                _ => anyhow::bail!("pass exactly one of --runs or --reference"),
            };
            let body = match args.format.as_str() {
                "text" => table.to_text(),
                "markdown" => table.to_markdown(),
                "json" => serde_json::to_string_pretty(&table)?,
                other => anyhow::bail!("unknown format '{other}'"),
            };
            match &args.out {
                Some(path) => crowdcl::util::write_file(path, body.as_bytes())?,
                None => print!("{body}"),
            }
        }
        Command::Curves(args) => {
            let (csv, png) =
                render_convergence(&args.runs, &args.standard, &args.curriculum, &args.out)?;
            println!("wrote {} and {}", csv.display(), png.display());
        }
    }
    Ok(0)
}

/// Converts `<stem>.csv` head-point files ("x,y" per line) into the JSON
/// annotation format under `root/annotations/`.
fn convert_points_csv(csv_dir: &Path, root: &Path) -> anyhow::Result<usize> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(csv_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|s| s.to_str()) == Some("csv"))
        .collect();
    files.sort();

    let mut converted = 0;
    for csv_path in files {
        let stem = csv_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let body = std::fs::read_to_string(&csv_path)?;
        let mut heads = Vec::new();
        for (i, line) in body.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 2 {
                anyhow::bail!("{}: line {} is not 'x,y'", csv_path.display(), i + 1);
            }
            let x: f64 = parts[0].trim().parse()?;
            let y: f64 = parts[1].trim().parse()?;
            heads.push([x, y]);
        }
        // Pair with an image of the same stem; try common extensions.
        let image_name = ["png", "jpg", "jpeg"]
            .iter()
            .map(|ext| format!("{stem}.{ext}"))
            .find(|name| root.join("images").join(name).exists())
            .ok_or_else(|| anyhow::anyhow!("no image found for {stem}"))?;
        let ann = crowdcl::dataset::Annotation {
            image: image_name,
            heads,
        };
        crowdcl::util::write_json(&root.join("annotations").join(format!("{stem}.json")), &ann)?;
        converted += 1;
    }
    Ok(converted)
}

fn classify_error(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<Error>() {
        match e {
            Error::Parameter { .. }
            | Error::Config(_)
            | Error::UnknownFamily(_)
            | Error::Json { .. }
            | Error::AnnotationParse { .. }
            | Error::NoSamples { .. }
            | Error::MissingAnnotation { .. }
            | Error::NotFound(_) => 1,
            _ => 2,
        }
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; everything else is a
            // usage error (exit 1).
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_error(&err) as u8)
        }
    }
}
