//! The four subcommand implementations.
//!
//! Each command computes its complete result in memory, writes the run
//! manifest, then lands every artifact with an atomic rename — a failed run
//! leaves no partial files behind.

use std::io::Write;
use std::path::Path;

use serde_json::json;

use crate::data::{self, DataError};
use crate::encoder::{load_checkpoint, save_checkpoint};
use crate::relevance::{self, MoleculeAttribution};
use crate::render;
use crate::smiles::{parse, tokenize, BondOrder};
use crate::training::{self, SuiteMode, TrainError};

use super::config::load_config;
use super::{sha256_file, write_json, write_text, CliError, InputDigest, RunManifest};

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(CliError::runtime)
}

/// `tokenize <SMILES>`: print the token texts, space separated.
pub fn cmd_tokenize(smiles: &str, out: &mut dyn Write) -> Result<(), CliError> {
    if smiles.trim().is_empty() {
        return Err(CliError::Usage("empty SMILES string".into()));
    }
    let seq = tokenize(smiles).map_err(CliError::runtime)?;
    emit(out, format_args!("{}", seq.texts().join(" ")))
}

fn order_name(order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single => "single",
        BondOrder::Double => "double",
        BondOrder::Triple => "triple",
        BondOrder::Aromatic => "aromatic",
    }
}

/// `parse <SMILES>`: print a molecular graph summary.
pub fn cmd_parse(smiles: &str, out: &mut dyn Write) -> Result<(), CliError> {
    if smiles.trim().is_empty() {
        return Err(CliError::Usage("empty SMILES string".into()));
    }
    let seq = tokenize(smiles).map_err(CliError::runtime)?;
    let graph = parse(&seq).map_err(CliError::runtime)?;
    emit(
        out,
        format_args!(
            "atoms: {}, bonds: {}, rings: {}",
            graph.atom_count(),
            graph.bond_count(),
            graph.ring_count()
        ),
    )?;
    for (i, atom) in graph.atoms.iter().enumerate() {
        let mut traits = Vec::new();
        if atom.aromatic {
            traits.push("aromatic".to_string());
        }
        if atom.charge != 0 {
            traits.push(format!("charge {:+}", atom.charge));
        }
        let notes = if traits.is_empty() { String::new() } else { format!(" [{}]", traits.join(", ")) };
        emit(
            out,
            format_args!("atom {i}: {}{notes} (token {})", atom.element, graph.atom_token_map[i]),
        )?;
    }
    for (i, bond) in graph.bonds.iter().enumerate() {
        emit(out, format_args!("bond {i}: {}-{} {}", bond.a, bond.b, order_name(bond.order)))?;
    }
    Ok(())
}

/// Config mistakes are usage errors; everything else failed at runtime.
fn classify_train(err: TrainError) -> CliError {
    match err {
        TrainError::InvalidConfig(_) => CliError::Usage(err.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// `train <CONFIG> [--suite N] [--suite-mode data|model]`.
pub fn cmd_train(
    config_path: &Path,
    suite: Option<usize>,
    suite_mode: SuiteMode,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let dataset = &config.data.dataset;
    if !dataset.exists() {
        return Err(CliError::Usage(format!("data.dataset not found: {}", dataset.display())));
    }
    let dataset_sha = sha256_file(dataset)?;
    let loaded = data::load_csv(dataset, &config.data.schema.csv_schema()).map_err(|e| match e {
        DataError::MissingColumn { .. } => CliError::Usage(e.to_string()),
        other => CliError::runtime(other),
    })?;
    if loaded.skipped > 0 {
        eprintln!("warning: skipped {} unusable row(s) in {}", loaded.skipped, dataset.display());
    }
    let spec = config.data.split_spec();
    let model_config = config.model.model_config(config.data.schema);
    let train_config = config.train.train_config(config.data.seed);
    let out_dir = config.train.output_dir.clone();
    let config_json = serde_json::to_value(&config).map_err(CliError::runtime)?;
    let input = InputDigest { path: dataset.display().to_string(), sha256: dataset_sha };

    if let Some(n) = suite {
        if n < 2 {
            return Err(CliError::Usage("--suite needs at least 2 seeds".into()));
        }
        let base = match suite_mode {
            SuiteMode::Data => config.data.seed,
            SuiteMode::Model => config.train.seed,
        };
        let seeds: Vec<u64> = (0..n as u64).map(|i| base + i).collect();
        let outcome =
            training::run_suite(&model_config, &train_config, &loaded.records, &spec, &seeds, suite_mode)
                .map_err(classify_train)?;

        let mode_name = match suite_mode {
            SuiteMode::Data => "data seeds",
            SuiteMode::Model => "model seeds",
        };
        let mut manifest = RunManifest::new(
            "train",
            config_json,
            json!({
                "model": train_config.model_seed,
                "data": config.data.seed,
                "suite": seeds,
                "suite_mode": suite_mode,
            }),
        );
        manifest.inputs.push(input);
        manifest.outputs = vec!["suite_metrics.json".to_string()];
        write_json(&out_dir.join("run_manifest.json"), &manifest)?;
        write_json(
            &out_dir.join("suite_metrics.json"),
            &json!({ "schema_version": 1, "suite_mode": suite_mode, "runs": outcome.runs }),
        )?;

        emit(out, format_args!("model  MAE  RMSE"))?;
        let label = format!("from-scratch ({} {mode_name})", seeds.len());
        emit(out, format_args!("{}", outcome.table_row(&label).map_err(CliError::runtime)?))?;
        for run in &outcome.runs {
            emit(
                out,
                format_args!(
                    "seed {}: MAE {:.4}, RMSE {:.4}, baseline RMSE {:.4}",
                    run.seed, run.mae, run.rmse, run.baseline_rmse
                ),
            )?;
        }
        emit(out, format_args!("artifacts: {}", out_dir.display()))?;
        return Ok(());
    }

    let splits = data::split(&loaded.records, &spec).map_err(CliError::runtime)?;
    let outcome = training::train(&model_config, &train_config, &splits).map_err(classify_train)?;
    let eval = training::evaluate(&outcome.model, &splits.test).map_err(classify_train)?;
    let baseline_rmse = population_std(&eval.targets);
    let parity_svg =
        render::parity_plot_svg(&eval.predictions, &eval.targets).map_err(CliError::runtime)?;

    let mut log_csv = String::from("epoch,train_loss,val_loss,val_mae\n");
    for entry in &outcome.log {
        log_csv.push_str(&format!(
            "{},{},{},{}\n",
            entry.epoch, entry.train_loss, entry.val_loss, entry.val_mae
        ));
    }
    let metrics = json!({
        "schema_version": 1,
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "diverged": outcome.diverged,
        "test_mae": eval.mae,
        "test_rmse": eval.rmse,
        "baseline_rmse": baseline_rmse,
        "test_records": eval.targets.len(),
    });
    let split_manifest = json!({ "schema_version": 1, "splits": splits.manifest() });

    let mut manifest = RunManifest::new(
        "train",
        config_json,
        json!({ "model": train_config.model_seed, "data": config.data.seed }),
    );
    manifest.inputs.push(input);
    manifest.outputs = ["checkpoint.bin", "training_log.csv", "split_manifest.json", "metrics.json", "parity.svg"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    write_json(&out_dir.join("run_manifest.json"), &manifest)?;
    save_checkpoint(&outcome.model, &out_dir.join("checkpoint.bin")).map_err(CliError::runtime)?;
    write_text(&out_dir.join("training_log.csv"), &log_csv)?;
    write_json(&out_dir.join("split_manifest.json"), &split_manifest)?;
    write_json(&out_dir.join("metrics.json"), &metrics)?;
    write_text(&out_dir.join("parity.svg"), &parity_svg)?;

    emit(
        out,
        format_args!(
            "records: {} train / {} val / {} test",
            splits.train.len(),
            splits.val.len(),
            splits.test.len()
        ),
    )?;
    for entry in &outcome.log {
        emit(
            out,
            format_args!(
                "epoch {}: train loss {:.6}, val loss {:.6}, val MAE {:.4}",
                entry.epoch, entry.train_loss, entry.val_loss, entry.val_mae
            ),
        )?;
    }
    let divergence_note = if outcome.diverged { " (diverged; kept best checkpoint)" } else { "" };
    emit(
        out,
        format_args!(
            "best epoch {} with val loss {:.6}{divergence_note}",
            outcome.best_epoch, outcome.best_val_loss
        ),
    )?;
    emit(
        out,
        format_args!(
            "test: MAE {:.4}, RMSE {:.4}, baseline RMSE {:.4} over {} records",
            eval.mae,
            eval.rmse,
            baseline_rmse,
            eval.targets.len()
        ),
    )?;
    emit(out, format_args!("artifacts: {}", out_dir.display()))
}

fn molecule_figure(attribution: &MoleculeAttribution, colorbar: bool) -> Result<String, CliError> {
    let depiction = render::layout(&attribution.graph).map_err(CliError::runtime)?;
    render::molecule_svg(&depiction, &attribution.relevance, colorbar).map_err(CliError::runtime)
}

/// `explain <CHECKPOINT> <SMILES> [--solvent S] [--temp K] [--out DIR]`.
pub fn cmd_explain(
    checkpoint: &Path,
    smiles: &str,
    solvent: Option<&str>,
    temp: Option<f64>,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let model = load_checkpoint(checkpoint)
        .map_err(|e| CliError::Runtime(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let temperature = if model.config().use_temperature_feature {
        if temp.is_none() {
            return Err(CliError::Usage(
                "this checkpoint uses a temperature feature; pass --temp <kelvin>".into(),
            ));
        }
        temp
    } else {
        if temp.is_some() {
            eprintln!("warning: checkpoint has no temperature feature; --temp ignored");
        }
        None
    };

    // Everything below is computed before anything is written.
    let explanation =
        relevance::explain(&model, smiles, solvent, temperature).map_err(CliError::runtime)?;
    let (_, unknown) = model.vocab().encode(&explanation.sequence);
    if !unknown.is_empty() {
        let tokens: Vec<&str> = unknown
            .iter()
            .map(|&p| explanation.sequence.tokens()[p].text.as_str())
            .collect();
        eprintln!(
            "warning: {} token(s) outside the checkpoint vocabulary map to <UNK>: {}",
            unknown.len(),
            tokens.join(" ")
        );
    }

    let solute_svg = molecule_figure(&explanation.solute, true)?;
    let solvent_svg = match &explanation.solvent {
        Some(attribution) => Some(molecule_figure(attribution, true)?),
        None => None,
    };
    let averages = relevance::layer_averages(&explanation.record).map_err(CliError::runtime)?;
    let labels: Vec<String> =
        explanation.sequence.texts().iter().map(|t| t.to_string()).collect();
    let attention_svg = render::attention_figure_svg(&averages, &explanation.relevance, &labels)
        .map_err(CliError::runtime)?;
    let tokens_svg =
        render::token_strip_svg(&explanation.report.tokens).map_err(CliError::runtime)?;
    let report_json = json!({ "schema_version": 1, "report": explanation.report });

    let mut outputs = vec![
        "relevance.json".to_string(),
        "molecule_solute.svg".to_string(),
        "attention.svg".to_string(),
        "tokens.svg".to_string(),
    ];
    if solvent_svg.is_some() {
        outputs.insert(2, "molecule_solvent.svg".to_string());
    }
    let mut manifest = RunManifest::new(
        "explain",
        json!({
            "checkpoint": checkpoint.display().to_string(),
            "smiles": smiles,
            "solvent": solvent,
            "temperature": temperature,
            "out": out_dir.display().to_string(),
        }),
        json!({}),
    );
    manifest.inputs.push(InputDigest {
        path: checkpoint.display().to_string(),
        sha256: sha256_file(checkpoint)?,
    });
    manifest.outputs = outputs;

    write_json(&out_dir.join("run_manifest.json"), &manifest)?;
    write_json(&out_dir.join("relevance.json"), &report_json)?;
    write_text(&out_dir.join("molecule_solute.svg"), &solute_svg)?;
    if let Some(svg) = &solvent_svg {
        write_text(&out_dir.join("molecule_solvent.svg"), svg)?;
    }
    write_text(&out_dir.join("attention.svg"), &attention_svg)?;
    write_text(&out_dir.join("tokens.svg"), &tokens_svg)?;

    emit(out, format_args!("prediction: {:.4}", explanation.report.prediction))?;
    emit(out, format_args!("sequence: {}", explanation.sequence.texts().join(" ")))?;
    let atom_summary: Vec<String> = explanation
        .solute
        .relevance
        .atoms
        .iter()
        .map(|a| format!("{}:{:.2}", a.element, a.scaled))
        .collect();
    emit(out, format_args!("solute atoms: {}", atom_summary.join(" ")))?;
    emit(out, format_args!("artifacts: {}", out_dir.display()))
}
