//! Multi-seed evaluation with mean ± standard-error reporting.
//!
//! Repeats a short train/evaluate cycle across three data-split seeds on
//! the bundled aqueous CSV and prints the table row used in run reports,
//! plus each run against its mean-predictor baseline.
//!
//! ```text
//! cargo run --release -p molgrad --example seed_suite
//! ```

use std::path::Path;

use molgrad::data::{load_csv, CsvSchema, SplitMode, SplitSpec};
use molgrad::encoder::ModelConfig;
use molgrad::training::{run_suite, SuiteMode, TrainConfig};

const DATASET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/aqueous_desk.csv");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = load_csv(Path::new(DATASET), &CsvSchema::aqueous())?;
    println!("{} records", report.records.len());

    let mut train_config = TrainConfig::aqueous();
    train_config.epochs = 6;
    train_config.max_steps = Some(90);

    let outcome = run_suite(
        &ModelConfig::desk(0),
        &train_config,
        &report.records,
        &SplitSpec::new(SplitMode::Random, 0),
        &[0, 1, 2],
        SuiteMode::Data,
    )?;

    println!("model  MAE  RMSE");
    println!("{}", outcome.table_row("from-scratch (3 data seeds)")?);
    for run in &outcome.runs {
        println!(
            "  seed {}: MAE {:.3}, RMSE {:.3}, baseline RMSE {:.3}",
            run.seed, run.mae, run.rmse, run.baseline_rmse
        );
    }
    Ok(())
}
