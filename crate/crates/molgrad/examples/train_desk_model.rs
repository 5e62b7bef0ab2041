//! Train the desk-scale model on the bundled aqueous solubility CSV.
//!
//! Loads ~530 molecules, makes a seeded 80/10/10 random split, trains a
//! short run (capped step count so the example finishes in well under a
//! minute), and reports test MAE/RMSE against the mean-predictor baseline.
//! The checkpoint lands in `target/example-artifacts/train_desk_model/`.
//!
//! ```text
//! cargo run --release -p molgrad --example train_desk_model
//! ```

use std::fs;
use std::path::Path;

use molgrad::data::{load_csv, split, CsvSchema, SplitMode, SplitSpec};
use molgrad::encoder::{save_checkpoint, ModelConfig};
use molgrad::training::{evaluate, train, TrainConfig};

const DATASET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/aqueous_desk.csv");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = load_csv(Path::new(DATASET), &CsvSchema::aqueous())?;
    println!("loaded {} records ({} rows skipped)", report.records.len(), report.skipped);

    let splits = split(&report.records, &SplitSpec::new(SplitMode::Random, 0))?;
    println!(
        "split: {} train / {} val / {} test",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );

    let model_config = ModelConfig::desk(0); // vocab size is filled from the splits
    let mut train_config = TrainConfig::aqueous();
    train_config.epochs = 10;
    train_config.max_steps = Some(120);

    let outcome = train(&model_config, &train_config, &splits)?;
    for log in &outcome.log {
        println!(
            "epoch {:>2}  train {:.4}  val {:.4}  val MAE {:.3}",
            log.epoch, log.train_loss, log.val_loss, log.val_mae
        );
    }
    println!("best epoch {} (val loss {:.4})", outcome.best_epoch, outcome.best_val_loss);

    let eval = evaluate(&outcome.model, &splits.test)?;
    let mean = eval.targets.iter().sum::<f64>() / eval.targets.len() as f64;
    let baseline = (eval.targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>()
        / eval.targets.len() as f64)
        .sqrt();
    println!("test MAE {:.3}, RMSE {:.3} (mean-predictor RMSE {:.3})", eval.mae, eval.rmse, baseline);

    let out_dir = Path::new("target/example-artifacts/train_desk_model");
    fs::create_dir_all(out_dir)?;
    let checkpoint = out_dir.join("checkpoint.bin");
    save_checkpoint(&outcome.model, &checkpoint)?;
    println!("checkpoint written to {}", checkpoint.display());
    Ok(())
}
