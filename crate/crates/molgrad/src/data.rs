//! Solubility dataset ingestion, splits, label scaling, and metrics.
//!
//! Loads CSV files with a configurable column schema into [`SoluRecord`]s,
//! builds the three split modes (`random`, `accurate`, `t298`), min-max
//! scales labels over the training portion, and computes MAE/RMSE with a
//! mean ± standard-error summary across runs.
//!
//! Splitting is always by unique solute SMILES, never by row, so a solute
//! measured in many solvents can never leak between partitions.

use std::collections::{BTreeSet, HashMap};
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from loading, splitting, scaling, or metric computation.
#[derive(Debug, Error)]
pub enum DataError {
    /// Filesystem failure.
    #[error("dataset io: {0}")]
    Io(#[from] io::Error),
    /// Malformed CSV.
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    /// The schema names a column the file does not have.
    #[error("column '{column}' not found; available columns: {}", available.join(", "))]
    MissingColumn {
        /// The missing column.
        column: String,
        /// Every header the file actually has.
        available: Vec<String>,
    },
    /// The records cannot support the requested split mode.
    #[error("split mode unsupported for these records: {0}")]
    UnsupportedMode(String),
    /// All labels equal; a min-max scale would divide by zero.
    #[error("labels are constant; cannot min-max scale")]
    DegenerateLabels,
    /// An operation received an empty set it cannot work with.
    #[error("empty {0}")]
    Empty(&'static str),
    /// Prediction and target vectors of different lengths.
    #[error("length mismatch: {predictions} predictions vs {targets} targets")]
    LengthMismatch {
        /// Number of predictions.
        predictions: usize,
        /// Number of targets.
        targets: usize,
    },
    /// A summary needs at least two runs.
    #[error("need at least 2 runs to summarize, got {0}")]
    NotEnoughRuns(usize),
}

/// One solubility measurement row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoluRecord {
    /// Solute SMILES.
    pub solute: String,
    /// log10 solubility in mol/L.
    pub log_s: f64,
    /// Solvent SMILES, for solute-in-solvent datasets.
    pub solvent: Option<String>,
    /// Measurement temperature in kelvin.
    pub temperature: Option<f64>,
    /// Number of source measurements behind this row.
    pub measurement_count: Option<f64>,
    /// Standard deviation across those measurements.
    pub measurement_std: Option<f64>,
}

/// Column names mapping a CSV file onto [`SoluRecord`] fields.
///
/// `solute` and `label` are required; the rest are read only when named.
/// When `density` is named, rows whose density cell is missing or
/// non-numeric are skipped (the value itself is never stored — density is
/// not a feature), matching how rows missing temperature or label are
/// treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Solute SMILES column.
    pub solute: String,
    /// Label (log10 solubility) column.
    pub label: String,
    /// Optional solvent SMILES column.
    pub solvent: Option<String>,
    /// Optional temperature column (kelvin).
    pub temperature: Option<String>,
    /// Optional solvent density column — validated, never stored.
    pub density: Option<String>,
    /// Optional measurement-count column.
    pub count: Option<String>,
    /// Optional measurement-std column.
    pub std: Option<String>,
}

impl CsvSchema {
    /// Schema of the bundled aqueous dataset:
    /// `smiles,logS,n_measurements,logS_std`.
    pub fn aqueous() -> Self {
        Self {
            solute: "smiles".into(),
            label: "logS".into(),
            solvent: None,
            temperature: None,
            density: None,
            count: Some("n_measurements".into()),
            std: Some("logS_std".into()),
        }
    }

    /// Schema of the bundled solute-in-solvent dataset:
    /// `solute_smiles,solvent_smiles,temperature,solvent_density,experimental_logS`.
    pub fn combisolu() -> Self {
        Self {
            solute: "solute_smiles".into(),
            label: "experimental_logS".into(),
            solvent: Some("solvent_smiles".into()),
            temperature: Some("temperature".into()),
            density: Some("solvent_density".into()),
            count: None,
            std: None,
        }
    }
}

/// A loaded dataset plus how many malformed rows were dropped.
#[derive(Debug, Clone)]
pub struct LoadReport {
    /// The usable records.
    pub records: Vec<SoluRecord>,
    /// Rows skipped for missing or non-finite required fields.
    pub skipped: usize,
}

/// Reads a CSV file through `schema`.
///
/// Rows missing any schema-named field (empty cell, unparseable number,
/// non-finite label, non-positive temperature) are skipped and counted, not
/// errors; a schema column absent from the header is an error that lists
/// the available headers.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LoadReport, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize, DataError> {
        headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn {
            column: name.to_string(),
            available: headers.clone(),
        })
    };
    let col_solute = find(&schema.solute)?;
    let col_label = find(&schema.label)?;
    let col_solvent = schema.solvent.as_deref().map(find).transpose()?;
    let col_temp = schema.temperature.as_deref().map(find).transpose()?;
    let col_density = schema.density.as_deref().map(find).transpose()?;
    let col_count = schema.count.as_deref().map(find).transpose()?;
    let col_std = schema.std.as_deref().map(find).transpose()?;

    let cell = |row: &csv::StringRecord, col: usize| -> Option<String> {
        row.get(col).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
    };
    let number = |row: &csv::StringRecord, col: usize| -> Option<f64> {
        cell(row, col).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite())
    };

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for row in reader.records() {
        let row = row?;
        let solute = cell(&row, col_solute);
        let log_s = number(&row, col_label);
        let solvent = col_solvent.map(|c| cell(&row, c));
        let temperature = col_temp.map(|c| number(&row, c).filter(|t| *t > 0.0));
        let density_ok = col_density.is_none_or(|c| number(&row, c).is_some());

        // A named optional column must parse on every kept row: this is the
        // "rows which contain missing temperature, solvent density or
        // experimental log(S) are excluded" rule.
        let complete = solute.is_some()
            && log_s.is_some()
            && solvent.as_ref().is_none_or(Option::is_some)
            && temperature.as_ref().is_none_or(Option::is_some)
            && density_ok;
        if !complete {
            skipped += 1;
            continue;
        }
        records.push(SoluRecord {
            solute: solute.expect("checked"),
            log_s: log_s.expect("checked"),
            solvent: solvent.flatten(),
            temperature: temperature.flatten(),
            measurement_count: col_count.and_then(|c| number(&row, c)),
            measurement_std: col_std.and_then(|c| number(&row, c)),
        });
    }
    Ok(LoadReport { records, skipped })
}

/// How the test partition is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Random 10% of unique solutes as test, 10% of the remainder as val.
    Random,
    /// Test = curated subset (multiple measurements, std <= 0.2, the
    /// log(S) = 6.4 outlier removed); the seed splits only train/val.
    Accurate,
    /// Keep only rows whose temperature rounds to 298 K
    /// (297.5 <= T < 298.5), then split like `Random`.
    T298,
}

/// Split parameters: mode, seed, and partition fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Shuffle seed.
    pub seed: u64,
    /// Mode; see [`SplitMode`].
    pub mode: SplitMode,
    /// Fraction of unique solutes held out as test (`Random`/`T298`).
    pub test_fraction: f64,
    /// Fraction of the post-test remainder held out as validation.
    pub val_fraction: f64,
}

impl SplitSpec {
    /// The standard 10% / 10% split for a mode and seed.
    pub fn new(mode: SplitMode, seed: u64) -> Self {
        Self { seed, mode, test_fraction: 0.10, val_fraction: 0.10 }
    }
}

/// The three disjoint, exhaustive partitions plus the spec that made them.
#[derive(Debug, Clone)]
pub struct Splits {
    /// Training rows.
    pub train: Vec<SoluRecord>,
    /// Validation rows.
    pub val: Vec<SoluRecord>,
    /// Test rows.
    pub test: Vec<SoluRecord>,
    /// The spec used.
    pub spec: SplitSpec,
    /// Rows dropped before partitioning (only in `t298` mode).
    pub filtered_out: usize,
}

/// JSON manifest of a split: seed, mode, and per-partition solute lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    /// Shuffle seed.
    pub seed: u64,
    /// Split mode.
    pub mode: SplitMode,
    /// Unique train solutes, in partition order.
    pub train: Vec<String>,
    /// Unique validation solutes.
    pub val: Vec<String>,
    /// Unique test solutes.
    pub test: Vec<String>,
}

impl Splits {
    /// The reproducibility manifest for this split.
    pub fn manifest(&self) -> SplitManifest {
        let uniques = |rows: &[SoluRecord]| {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for r in rows {
                if seen.insert(r.solute.clone()) {
                    out.push(r.solute.clone());
                }
            }
            out
        };
        SplitManifest {
            seed: self.spec.seed,
            mode: self.spec.mode,
            train: uniques(&self.train),
            val: uniques(&self.val),
            test: uniques(&self.test),
        }
    }
}

/// Partitions `records` according to `spec`. Deterministic in
/// (records, seed): the same inputs always produce the same partitions.
pub fn split(records: &[SoluRecord], spec: &SplitSpec) -> Result<Splits, DataError> {
    if records.is_empty() {
        return Err(DataError::Empty("record set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.mode {
        SplitMode::Random => {
            let (test, rest) = carve(records, spec.test_fraction, &mut rng);
            let (val, train) = carve(&rest, spec.val_fraction, &mut rng);
            Ok(Splits { train, val, test, spec: *spec, filtered_out: 0 })
        }
        SplitMode::T298 => {
            let kept: Vec<SoluRecord> = records
                .iter()
                .filter(|r| r.temperature.is_some_and(|t| (297.5..298.5).contains(&t)))
                .cloned()
                .collect();
            let filtered_out = records.len() - kept.len();
            if kept.is_empty() {
                return Err(DataError::Empty("t298 subset"));
            }
            let (test, rest) = carve(&kept, spec.test_fraction, &mut rng);
            let (val, train) = carve(&rest, spec.val_fraction, &mut rng);
            Ok(Splits { train, val, test, spec: *spec, filtered_out })
        }
        SplitMode::Accurate => {
            let test = accurate_subset(records)?;
            let test_solutes: BTreeSet<&str> = test.iter().map(|r| r.solute.as_str()).collect();
            let rest: Vec<SoluRecord> = records
                .iter()
                .filter(|r| !test_solutes.contains(r.solute.as_str()))
                .cloned()
                .collect();
            // Only this division sees the seed.
            let (val, train) = carve(&rest, spec.val_fraction, &mut rng);
            Ok(Splits { train, val, test, spec: *spec, filtered_out: 0 })
        }
    }
}

/// Shuffles the unique solutes of `records` and carves off `fraction` of
/// them (rounded, capped so the remainder keeps at least one solute);
/// returns (carved rows, remaining rows).
fn carve(
    records: &[SoluRecord],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<SoluRecord>, Vec<SoluRecord>) {
    // BTreeSet gives a record-order-independent starting arrangement so the
    // shuffle depends only on the solute set and the seed.
    let mut solutes: Vec<&str> = records
        .iter()
        .map(|r| r.solute.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    solutes.shuffle(rng);
    let mut take = (solutes.len() as f64 * fraction).round() as usize;
    if take >= solutes.len() {
        take = solutes.len().saturating_sub(1);
    }
    let carved: BTreeSet<&str> = solutes[..take].iter().copied().collect();
    let (a, b): (Vec<SoluRecord>, Vec<SoluRecord>) = records
        .iter()
        .cloned()
        .partition(|r| carved.contains(r.solute.as_str()));
    (a, b)
}

/// The curated high-accuracy test set: records with more than one source
/// measurement and a standard deviation of at most 0.2, with the single
/// log(S) = 6.4 outlier removed.
///
/// Records with a measurement count above 1 must carry a std; otherwise the
/// metadata cannot support the rule and the mode is unsupported.
pub fn accurate_subset(records: &[SoluRecord]) -> Result<Vec<SoluRecord>, DataError> {
    let mut out = Vec::new();
    for r in records {
        let count = r.measurement_count.ok_or_else(|| {
            DataError::UnsupportedMode(format!(
                "record '{}' has no measurement count",
                r.solute
            ))
        })?;
        if count <= 1.0 {
            continue;
        }
        let std = r.measurement_std.ok_or_else(|| {
            DataError::UnsupportedMode(format!(
                "record '{}' has {count} measurements but no std",
                r.solute
            ))
        })?;
        if std <= 0.2 && r.log_s != 6.4 {
            out.push(r.clone());
        }
    }
    Ok(out)
}

/// Affine min-max map of labels onto `[0, 1]`, fitted on training labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    /// Smallest training label (maps to 0).
    pub min: f64,
    /// Largest training label (maps to 1).
    pub max: f64,
}

impl LabelScaler {
    /// Fits on an iterator of labels; errors when fewer than two distinct
    /// values are present.
    pub fn fit(labels: impl IntoIterator<Item = f64>) -> Result<Self, DataError> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for l in labels {
            any = true;
            min = min.min(l);
            max = max.max(l);
        }
        if !any {
            return Err(DataError::Empty("label set"));
        }
        if min == max {
            return Err(DataError::DegenerateLabels);
        }
        Ok(Self { min, max })
    }

    /// Label units -> scaled `[0, 1]` units.
    pub fn apply(&self, label: f64) -> f64 {
        (label - self.min) / (self.max - self.min)
    }

    /// Scaled units -> label units.
    pub fn inverse(&self, scaled: f64) -> f64 {
        self.min + scaled * (self.max - self.min)
    }
}

/// Mean absolute error and root mean squared error of paired vectors.
pub fn metrics(predictions: &[f64], targets: &[f64]) -> Result<(f64, f64), DataError> {
    if predictions.len() != targets.len() {
        return Err(DataError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(DataError::Empty("prediction set"));
    }
    let n = predictions.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        let d = p - t;
        abs += d.abs();
        sq += d * d;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

/// Mean and standard error of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Arithmetic mean across runs.
    pub mean: f64,
    /// Standard error: sample standard deviation (n-1) over sqrt(n).
    pub se: f64,
    /// Number of runs.
    pub runs: usize,
}

impl Summary {
    /// `"0.600 (0.0032)"` — mean to three decimals, SE to four.
    pub fn table_cell(&self) -> String {
        format!("{:.3} ({:.4})", self.mean, self.se)
    }
}

/// Summarizes one metric over at least two runs.
pub fn summarize(runs: &[f64]) -> Result<Summary, DataError> {
    if runs.len() < 2 {
        return Err(DataError::NotEnoughRuns(runs.len()));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    let var = runs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    Ok(Summary { mean, se: (var / n).sqrt(), runs: runs.len() })
}

/// Per-run MAE and RMSE pairs with Table-style summaries.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `(mae, rmse)` per run, in run order.
    pub runs: Vec<(f64, f64)>,
}

impl RunMetrics {
    /// Appends one run's metrics.
    pub fn push(&mut self, mae: f64, rmse: f64) {
        self.runs.push((mae, rmse));
    }

    /// Mean ± SE of the MAE column.
    pub fn mae(&self) -> Result<Summary, DataError> {
        let col: Vec<f64> = self.runs.iter().map(|r| r.0).collect();
        summarize(&col)
    }

    /// Mean ± SE of the RMSE column.
    pub fn rmse(&self) -> Result<Summary, DataError> {
        let col: Vec<f64> = self.runs.iter().map(|r| r.1).collect();
        summarize(&col)
    }

    /// One table row: `label  MAE mean (SE)  RMSE mean (SE)`.
    pub fn table_row(&self, label: &str) -> Result<String, DataError> {
        Ok(format!("{label}  {}  {}", self.mae()?.table_cell(), self.rmse()?.table_cell()))
    }
}

/// Convenience: group records by unique solute, preserving first-seen order.
pub fn by_solute(records: &[SoluRecord]) -> Vec<(String, Vec<&SoluRecord>)> {
    let mut order = Vec::new();
    let mut map: HashMap<&str, Vec<&SoluRecord>> = HashMap::new();
    for r in records {
        let e = map.entry(r.solute.as_str()).or_default();
        if e.is_empty() {
            order.push(r.solute.clone());
        }
        e.push(r);
    }
    order
        .into_iter()
        .map(|s| {
            let rows = map.remove(s.as_str()).expect("grouped above");
            (s, rows)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn record(solute: &str, log_s: f64) -> SoluRecord {
        SoluRecord {
            solute: solute.into(),
            log_s,
            solvent: None,
            temperature: None,
            measurement_count: None,
            measurement_std: None,
        }
    }

    #[test]
    fn well_formed_rows_all_load() {
        let f = write_csv("smiles,logS,n_measurements,logS_std\nCCO,-0.1,2,0.05\nCC,-1.4,1,\nc1ccccc1,-2.2,3,0.1\n");
        let report = load_csv(f.path(), &CsvSchema::aqueous()).unwrap();
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.skipped, 0);
        assert_eq!(report.records[0].solute, "CCO");
        assert_eq!(report.records[1].measurement_std, None);
        assert_eq!(report.records[2].measurement_count, Some(3.0));
    }

    #[test]
    fn rows_with_missing_required_fields_are_skipped_and_counted() {
        let f = write_csv("smiles,logS,n_measurements,logS_std\nCCO,,1,\n,-1.0,1,\nCC,abc,1,\nCCC,-0.5,1,\n");
        let report = load_csv(f.path(), &CsvSchema::aqueous()).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.skipped, 3);
    }

    #[test]
    fn missing_schema_column_lists_available_headers() {
        let f = write_csv("structure,solubility\nCCO,-0.1\n");
        let err = load_csv(f.path(), &CsvSchema::aqueous()).unwrap_err();
        match err {
            DataError::MissingColumn { column, available } => {
                assert_eq!(column, "smiles");
                assert_eq!(available, ["structure", "solubility"]);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn combisolu_rows_missing_temperature_or_density_are_excluded() {
        let header = "solute_smiles,solvent_smiles,temperature,solvent_density,experimental_logS";
        let f = write_csv(&format!(
            "{header}\nCCO,O,298.15,0.997,-0.3\nCCO,O,,0.997,-0.3\nCCO,O,298.15,,-0.3\nCCO,O,298.15,n/a,-0.3\nCCO,O,-5,0.997,-0.3\n"
        ));
        let report = load_csv(f.path(), &CsvSchema::combisolu()).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.skipped, 4);
        // Density is validated but never stored anywhere on the record.
        assert_eq!(report.records[0].temperature, Some(298.15));
    }

    #[test]
    fn accurate_subset_applies_count_std_and_outlier_rules() {
        let mk = |solute: &str, log_s: f64, count: f64, std: Option<f64>| SoluRecord {
            solute: solute.into(),
            log_s,
            solvent: None,
            temperature: None,
            measurement_count: Some(count),
            measurement_std: std,
        };
        let records = vec![
            mk("single", -1.0, 1.0, None),        // one measurement: out
            mk("good", -2.0, 3.0, Some(0.15)),    // in
            mk("edge", -3.0, 2.0, Some(0.2)),     // std == 0.2: in
            mk("noisy", -4.0, 5.0, Some(0.25)),   // std too large: out
            mk("outlier", 6.4, 3.0, Some(0.1)),   // the log(S)=6.4 outlier: out
        ];
        let subset = accurate_subset(&records).unwrap();
        let names: Vec<&str> = subset.iter().map(|r| r.solute.as_str()).collect();
        assert_eq!(names, ["good", "edge"]);
    }

    #[test]
    fn accurate_subset_needs_metadata() {
        let no_count = vec![record("CCO", -1.0)];
        assert!(matches!(
            accurate_subset(&no_count),
            Err(DataError::UnsupportedMode(_))
        ));
        let mut no_std = record("CCO", -1.0);
        no_std.measurement_count = Some(3.0);
        assert!(matches!(
            accurate_subset(&[no_std]),
            Err(DataError::UnsupportedMode(_))
        ));
    }

    #[test]
    fn scaler_maps_min_max_and_inverts() {
        let s = LabelScaler::fit([-2.0, 0.0, 2.0]).unwrap();
        assert_eq!(s.apply(-2.0), 0.0);
        assert_eq!(s.apply(0.0), 0.5);
        assert_eq!(s.apply(2.0), 1.0);
        for x in [-2.0, -0.3, 0.0, 1.7, 2.0, 5.0] {
            assert!((s.inverse(s.apply(x)) - x).abs() < 1e-12);
        }
        assert!(matches!(
            LabelScaler::fit([1.5, 1.5, 1.5]),
            Err(DataError::DegenerateLabels)
        ));
        assert!(matches!(LabelScaler::fit([]), Err(DataError::Empty(_))));
    }

    #[test]
    fn metrics_in_scaled_space_invert_to_raw_metrics() {
        let targets = [-3.0, -1.5, 0.2, 1.9];
        let preds = [-2.7, -1.8, 0.1, 2.4];
        let (mae_raw, rmse_raw) = metrics(&preds, &targets).unwrap();
        let s = LabelScaler::fit(targets).unwrap();
        let back_p: Vec<f64> = preds.iter().map(|p| s.inverse(s.apply(*p))).collect();
        let back_t: Vec<f64> = targets.iter().map(|t| s.inverse(s.apply(*t))).collect();
        let (mae_back, rmse_back) = metrics(&back_p, &back_t).unwrap();
        assert!((mae_raw - mae_back).abs() < 1e-9);
        assert!((rmse_raw - rmse_back).abs() < 1e-9);
    }

    #[test]
    fn metric_hand_values() {
        let (mae, rmse) = metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((mae, rmse), (0.0, 0.0));
        let (mae, rmse) = metrics(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!((mae, rmse), (1.0, 1.0));
        assert!(matches!(
            metrics(&[1.0], &[1.0, 2.0]),
            Err(DataError::LengthMismatch { predictions: 1, targets: 2 })
        ));
    }

    #[test]
    fn rmse_never_beats_mae() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..50 {
            let n = rng.random_range(1..=20);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (mae, rmse) = metrics(&p, &t).unwrap();
            assert!(rmse >= mae - 1e-12, "rmse {rmse} < mae {mae}");
        }
    }

    #[test]
    fn summary_matches_hand_arithmetic() {
        let s = summarize(&[0.6, 0.61, 0.59, 0.60, 0.60]).unwrap();
        assert!((s.mean - 0.600).abs() < 1e-12);
        // sample std = sqrt(2e-4 / 4) = sqrt(5e-5); SE = sqrt(5e-5 / 5).
        assert!((s.se - 0.0031622776601683794).abs() < 1e-9);
        assert_eq!(s.table_cell(), "0.600 (0.0032)");
        assert!(matches!(summarize(&[0.5]), Err(DataError::NotEnoughRuns(1))));
    }

    fn corpus(n: usize) -> Vec<SoluRecord> {
        (0..n)
            .map(|i| record(&format!("{}O", "C".repeat(i + 1)), -(i as f64) / 3.0))
            .collect()
    }

    #[test]
    fn random_split_is_deterministic_and_partitions() {
        let records = corpus(30);
        let spec = SplitSpec::new(SplitMode::Random, 17);
        let a = split(&records, &spec).unwrap();
        let b = split(&records, &spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);

        assert_eq!(a.train.len() + a.val.len() + a.test.len(), records.len());
        let names = |rows: &[SoluRecord]| -> BTreeSet<String> {
            rows.iter().map(|r| r.solute.clone()).collect()
        };
        let (tr, va, te) = (names(&a.train), names(&a.val), names(&a.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(a.test.len(), 3); // 10% of 30 unique solutes
        assert_eq!(a.val.len(), 3); // 10% of the remaining 27, rounded

        let other = split(&records, &SplitSpec::new(SplitMode::Random, 18)).unwrap();
        assert_ne!(names(&other.test), te, "different seeds should move the test set");
    }

    #[test]
    fn splits_never_separate_rows_of_one_solute() {
        // One solute measured in three solvents must stay together.
        let mut records = corpus(20);
        for solvent in ["O", "CCO", "CS(=O)C"] {
            let mut r = record("c1ccccc1", -2.0);
            r.solvent = Some(solvent.into());
            records.push(r);
        }
        let splits = split(&records, &SplitSpec::new(SplitMode::Random, 5)).unwrap();
        let homes = [&splits.train, &splits.val, &splits.test]
            .iter()
            .filter(|rows| rows.iter().any(|r| r.solute == "c1ccccc1"))
            .count();
        assert_eq!(homes, 1, "benzene rows landed in {homes} partitions");
    }

    #[test]
    fn accurate_mode_pins_test_regardless_of_seed() {
        let mut records = corpus(25);
        for r in records.iter_mut() {
            r.measurement_count = Some(1.0);
        }
        // Give five molecules accurate metadata.
        for r in records.iter_mut().take(5) {
            r.measurement_count = Some(3.0);
            r.measurement_std = Some(0.1);
        }
        let a = split(&records, &SplitSpec::new(SplitMode::Accurate, 1)).unwrap();
        let b = split(&records, &SplitSpec::new(SplitMode::Accurate, 2)).unwrap();
        assert_eq!(a.test, b.test, "seed must not touch the accurate test set");
        assert_eq!(a.test.len(), 5);
        assert_ne!(a.val, b.val, "seed should reshuffle train/val");
    }

    #[test]
    fn t298_keeps_only_room_temperature_rows() {
        let mut records = corpus(12);
        let temps = [298.15, 297.5, 298.49, 298.5, 310.0, 297.49];
        for (r, t) in records.iter_mut().zip(temps.iter().cycle()) {
            r.temperature = Some(*t);
        }
        let splits = split(&records, &SplitSpec::new(SplitMode::T298, 9)).unwrap();
        let kept = splits.train.len() + splits.val.len() + splits.test.len();
        assert_eq!(kept, 6); // two full cycles: 298.15, 297.5, 298.49 kept
        assert_eq!(splits.filtered_out, 6);
        for r in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            let t = r.temperature.unwrap();
            assert!((297.5..298.5).contains(&t));
        }
    }

    #[test]
    fn manifest_lists_unique_solutes_per_partition() {
        let records = corpus(15);
        let splits = split(&records, &SplitSpec::new(SplitMode::Random, 4)).unwrap();
        let manifest = splits.manifest();
        assert_eq!(manifest.seed, 4);
        assert_eq!(manifest.mode, SplitMode::Random);
        assert_eq!(
            manifest.train.len() + manifest.val.len() + manifest.test.len(),
            15
        );
        let json = serde_json::to_string(&manifest).unwrap();
        assert!(json.contains("\"mode\":\"random\""));
        let back: SplitManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.train, manifest.train);
    }

    #[test]
    fn grouping_by_solute_preserves_first_seen_order() {
        let rows = vec![record("B", -1.0), record("A", -2.0), record("B", -3.0)];
        let grouped = by_solute(&rows);
        assert_eq!(grouped[0].0, "B");
        assert_eq!(grouped[0].1.len(), 2);
        assert_eq!(grouped[1].0, "A");
    }
}
