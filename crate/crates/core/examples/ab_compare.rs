//! Standard vs linear-curriculum A/B on a synthetic dataset, reporting
//! convergence in terms of samples seen.
//!
//! Usage: ab_compare [seed] [epochs] [width]

use crowdcl::curriculum::PacingShape;
use crowdcl::dataset::synthesize_dataset;
use crowdcl::evaluation::evaluate;
use crowdcl::models::{ModelFamily, ModelSpec};
use crowdcl::training::{train, TrainConfig, TrainMode};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let width: u32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);

    let train_set = synthesize_dataset(200, (5, 50), (64, 64), 7).unwrap();
    let mut test_set = synthesize_dataset(50, (5, 50), (64, 64), 8).unwrap();
    test_set.split = crowdcl::dataset::Split::Test;

    let spec = ModelSpec::new(ModelFamily::MultiColumn, width);
    println!(
        "model: {} ({} params, stride {})",
        spec.display_label(),
        spec.param_count,
        spec.downsample_factor
    );

    let base = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };

    let t0 = std::time::Instant::now();
    let standard = train(&train_set, &spec, &base).unwrap();
    let t_std = t0.elapsed().as_secs_f64();

    if std::env::var("AB_VERBOSE").is_ok() {
        for e in &standard.trace.epochs {
            println!(
                "  std epoch {:2}: val MAE {:8.3}  MSE {:8.3}  lr {:.5}",
                e.epoch, e.val_mae, e.val_mse, e.lr
            );
        }
    }

    let mut cur_cfg = base.clone();
    cur_cfg.mode = TrainMode::Curriculum;
    cur_cfg.pacing = Some(
        base.curriculum_pacing(&train_set, PacingShape::Linear, 0.2, 0.4, 4)
            .unwrap(),
    );
    let t1 = std::time::Instant::now();
    let curriculum = train(&train_set, &spec, &cur_cfg).unwrap();
    let t_cur = t1.elapsed().as_secs_f64();

    // Final training loss of the standard arm = mean loss over its last epoch.
    let epoch_mean = |trace: &crowdcl::training::TrainTrace, lo: usize, hi: usize| -> f64 {
        trace.steps[lo..hi].iter().map(|s| s.loss).sum::<f64>() / (hi - lo) as f64
    };
    let std_steps = standard.trace.steps.len();
    let steps_per_epoch = std_steps / epochs;
    let std_final = epoch_mean(&standard.trace, std_steps - steps_per_epoch, std_steps);

    // Walk curriculum epochs; find the first whose mean loss reaches std_final.
    let mut reach_samples: Option<usize> = None;
    let cur_steps = &curriculum.trace.steps;
    let n_epochs = curriculum.trace.epochs.len();
    let mut bounds = Vec::new();
    {
        // Mirror the trainer's epoch-span rule.
        let plan = &curriculum.plan;
        let batch = cur_cfg.batch_size;
        let mut step = 0usize;
        for _ in 0..n_epochs {
            if step >= cur_steps.len() {
                break;
            }
            let span = match cur_cfg.epoch_unit {
                crowdcl::training::EpochUnit::FullData => plan.config.dataset_size,
                crowdcl::training::EpochUnit::Exposed => plan.exposed_sizes[step],
            };
            let steps_this = span.div_ceil(batch).min(cur_steps.len() - step);
            bounds.push((step, step + steps_this));
            step += steps_this;
        }
    }
    for &(b_lo, b_hi) in &bounds {
        let mean = epoch_mean(&curriculum.trace, b_lo, b_hi);
        if mean <= std_final {
            reach_samples = Some(cur_steps[b_hi - 1].samples_seen);
            break;
        }
    }

    let std_total = standard.trace.steps.last().unwrap().samples_seen;
    let cur_total = cur_steps.last().unwrap().samples_seen;
    println!("standard:   {std_steps} steps, {std_total} samples, final epoch loss {std_final:.6}, {t_std:.1}s");
    println!(
        "curriculum: {} steps, {cur_total} samples, {t_cur:.1}s",
        cur_steps.len()
    );
    match reach_samples {
        Some(s) => println!(
            "curriculum reached the standard final loss after {s} samples ({}x)",
            s as f64 / std_total as f64
        ),
        None => println!("curriculum did NOT reach the standard final loss"),
    }

    let report = evaluate(&standard.checkpoint, &test_set, 4.0).unwrap();
    println!("standard   test MAE {:.2} MSE {:.2}", report.mae, report.mse);
    let report = evaluate(&curriculum.checkpoint, &test_set, 4.0).unwrap();
    println!("curriculum test MAE {:.2} MSE {:.2}", report.mae, report.mse);
}
