//! End-to-end attribution: train briefly, then explain a molecule pair.
//!
//! Trains a quick model on the bundled aqueous CSV, explains glycolic acid
//! dissolved in ethanol, and writes every artifact the pipeline produces:
//! the relevance JSON, highlighted molecule depictions for solute and
//! solvent, per-layer attention heatmaps next to the rollout matrix, and a
//! token strip. Artifacts land in `target/example-artifacts/explain_molecule/`.
//!
//! ```text
//! cargo run --release -p molgrad --example explain_molecule
//! ```

use std::fs;
use std::path::Path;

use molgrad::data::{load_csv, split, CsvSchema, SplitMode, SplitSpec};
use molgrad::encoder::ModelConfig;
use molgrad::relevance::{explain, layer_averages};
use molgrad::render::{attention_figure_svg, layout, molecule_svg, token_strip_svg};
use molgrad::training::{train, TrainConfig};

const DATASET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/aqueous_desk.csv");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A short training run is enough for a demonstration model.
    let report = load_csv(Path::new(DATASET), &CsvSchema::aqueous())?;
    let splits = split(&report.records, &SplitSpec::new(SplitMode::Random, 0))?;
    let mut train_config = TrainConfig::aqueous();
    train_config.epochs = 6;
    train_config.max_steps = Some(90);
    let outcome = train(&ModelConfig::desk(0), &train_config, &splits)?;
    println!("trained to val loss {:.4} (epoch {})", outcome.best_val_loss, outcome.best_epoch);

    let explanation = explain(&outcome.model, "OCC(O)=O", Some("CCO"), None)?;
    println!("sequence: {}", explanation.sequence.texts().join(" "));
    println!("prediction: {:.4} (label units)", explanation.report.prediction);
    println!("solute atoms (scaled relevance):");
    for atom in &explanation.solute.relevance.atoms {
        println!("  {:>2} {:<2} {:.3}", atom.atom_index, atom.element, atom.scaled);
    }

    let out_dir = Path::new("target/example-artifacts/explain_molecule");
    fs::create_dir_all(out_dir)?;

    fs::write(
        out_dir.join("relevance.json"),
        serde_json::to_string_pretty(&explanation.report)?,
    )?;

    let solute_svg =
        molecule_svg(&layout(&explanation.solute.graph)?, &explanation.solute.relevance, true)?;
    fs::write(out_dir.join("molecule_solute.svg"), solute_svg)?;
    if let Some(solvent) = &explanation.solvent {
        let svg = molecule_svg(&layout(&solvent.graph)?, &solvent.relevance, true)?;
        fs::write(out_dir.join("molecule_solvent.svg"), svg)?;
    }

    let labels: Vec<String> =
        explanation.sequence.texts().iter().map(|t| t.to_string()).collect();
    let attention = attention_figure_svg(
        &layer_averages(&explanation.record)?,
        &explanation.relevance,
        &labels,
    )?;
    fs::write(out_dir.join("attention.svg"), attention)?;
    fs::write(out_dir.join("tokens.svg"), token_strip_svg(&explanation.report.tokens)?)?;

    println!("artifacts in {}", out_dir.display());
    Ok(())
}
