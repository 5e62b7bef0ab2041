//! Seeded training: Huber loss, AdamW, fixed epochs, best-validation
//! checkpointing, and multi-seed evaluation suites.
//!
//! The loop is deterministic given `(model_seed, data_seed)`: parameter
//! init, batch order, and every arithmetic step are seeded and
//! single-threaded, so two runs with the same seeds agree to the last bit.
//! Labels are min-max scaled (fitted on the training split only); the
//! scaler rides along on the model so predictions can always be mapped back
//! to label units.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, LabelScaler, RunMetrics, SoluRecord, SplitSpec, Splits};
use crate::encoder::{self, EncoderError, Model, ModelConfig};
use crate::smiles::{prepare_input, tokenize, SmilesError, TokenSequence, Vocabulary};
use crate::tensor::{Tensor, TensorError};

/// Errors from training or evaluation.
#[derive(Debug, Error)]
pub enum TrainError {
    /// Dataset failure (scaling, metrics).
    #[error(transparent)]
    Data(#[from] DataError),
    /// Model failure.
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    /// A record's SMILES failed to tokenize.
    #[error("record '{solute}': {source}")]
    BadRecord {
        /// The offending solute SMILES.
        solute: String,
        /// The tokenizer error.
        source: SmilesError,
    },
    /// The model wants a temperature feature and a record has none.
    #[error("record '{0}' has no temperature but the model uses a temperature feature")]
    MissingTemperature(String),
    /// Nonsensical training configuration.
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    /// A split that must be non-empty is empty.
    #[error("empty {0} split")]
    EmptySplit(&'static str),
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Full passes over the training split.
    pub epochs: usize,
    /// Samples per optimizer step.
    pub batch_size: usize,
    /// Peak learning rate (after warmup).
    pub learning_rate: f64,
    /// AdamW first-moment decay.
    pub beta1: f64,
    /// AdamW second-moment decay.
    pub beta2: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Huber loss transition point.
    pub huber_delta: f64,
    /// Fraction of total steps spent ramping the learning rate linearly
    /// from zero.
    pub warmup_fraction: f64,
    /// Seed for parameter initialization.
    pub model_seed: u64,
    /// Seed for batch shuffling.
    pub data_seed: u64,
    /// Update only `head.*` parameters, leaving the encoder frozen.
    pub freeze_encoder: bool,
    /// Optional hard cap on optimizer steps (stops mid-epoch).
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    /// Defaults for the aqueous dataset: 50 epochs, batch 32, lr 1e-3.
    pub fn aqueous() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            huber_delta: 1.0,
            warmup_fraction: 0.05,
            model_seed: 0,
            data_seed: 0,
            freeze_encoder: false,
            max_steps: None,
        }
    }

    /// Defaults for the solute-in-solvent dataset: 40 epochs.
    pub fn combisolu() -> Self {
        Self { epochs: 40, ..Self::aqueous() }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate < 0.0
            || self.huber_delta.is_nan()
            || self.huber_delta <= 0.0
        {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be >= 0 and huber_delta > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if !(0.0..=0.5).contains(&self.warmup_fraction) {
            return Err(TrainError::InvalidConfig("warmup_fraction must lie in [0, 0.5]".into()));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay.
///
/// Update order per parameter (PyTorch convention): decay `p *= 1 - lr*wd`
/// first, then the bias-corrected Adam step
/// `p -= lr * mhat / (sqrt(vhat) + eps)`.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    /// Epsilon inside the denominator.
    pub const EPS: f64 = 1e-8;

    /// Fresh optimizer state (zero moments) for `shapes`.
    pub fn new(shapes: &[Vec<usize>], beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: Self::EPS,
            weight_decay,
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            step: 0,
        }
    }

    /// One update with learning rate `lr`. `trainable[i] == false` skips
    /// parameter `i` entirely (no moment update either).
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        lr: f64,
        trainable: &[bool],
    ) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different model");
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), trainable.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            let p = params[i].data_mut();
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                p[j] *= 1.0 - lr * self.weight_decay;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Linear warmup to 1.0 over the first `warmup` of `total` steps.
fn lr_scale(step: usize, total: usize, warmup_fraction: f64) -> f64 {
    let warmup = ((total as f64) * warmup_fraction).ceil() as usize;
    if warmup == 0 || step >= warmup {
        1.0
    } else {
        (step + 1) as f64 / warmup as f64
    }
}

/// One pre-tokenized training or evaluation sample.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Prepared `<REG> ...` sequence.
    pub sequence: TokenSequence,
    /// Temperature in kelvin, when the model uses the feature.
    pub temperature: Option<f64>,
    /// Training target: the scaled label when a scaler is given, else raw.
    pub target: f64,
    /// The raw label in label units.
    pub label: f64,
    /// Solute SMILES, for reporting.
    pub solute: String,
}

/// Tokenizes records into [`Sample`]s.
///
/// With `scaler`, targets are scaled; `needs_temperature` makes a missing
/// temperature an error instead of `None`.
pub fn prepare_samples(
    records: &[SoluRecord],
    scaler: Option<&LabelScaler>,
    needs_temperature: bool,
) -> Result<Vec<Sample>, TrainError> {
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        let bad = |source: SmilesError| TrainError::BadRecord { solute: r.solute.clone(), source };
        let solute_tokens = tokenize(&r.solute).map_err(bad)?;
        let solvent_tokens = match &r.solvent {
            Some(s) => Some(tokenize(s).map_err(bad)?),
            None => None,
        };
        let sequence = prepare_input(&solute_tokens, solvent_tokens.as_ref()).map_err(bad)?;
        let temperature = if needs_temperature {
            Some(r.temperature.ok_or_else(|| TrainError::MissingTemperature(r.solute.clone()))?)
        } else {
            None
        };
        samples.push(Sample {
            sequence,
            temperature,
            target: scaler.map_or(r.log_s, |s| s.apply(r.log_s)),
            label: r.log_s,
            solute: r.solute.clone(),
        });
    }
    Ok(samples)
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean Huber loss over the epoch's training batches (scaled units).
    pub train_loss: f64,
    /// Mean Huber loss over the validation split (scaled units).
    pub val_loss: f64,
    /// Validation MAE in label units.
    pub val_mae: f64,
}

/// Everything a training run produces.
#[derive(Debug)]
pub struct TrainOutcome {
    /// The best-validation model, label scaler attached.
    pub model: Model,
    /// One entry per completed epoch.
    pub log: Vec<EpochLog>,
    /// 1-based epoch of the retained checkpoint.
    pub best_epoch: usize,
    /// Validation loss of the retained checkpoint.
    pub best_val_loss: f64,
    /// True when a non-finite loss aborted the run; the returned model is
    /// the last good (best-validation) checkpoint.
    pub diverged: bool,
}

/// Builds a vocabulary covering every molecule in the splits. Tokenization
/// is structural, not learned, so covering val/test adds no label leakage
/// and avoids spurious `<UNK>`s during evaluation.
pub fn vocabulary_for(splits: &Splits) -> Result<Vocabulary, TrainError> {
    let mut sequences = Vec::new();
    for r in splits.train.iter().chain(&splits.val).chain(&splits.test) {
        let bad = |source: SmilesError| TrainError::BadRecord { solute: r.solute.clone(), source };
        sequences.push(tokenize(&r.solute).map_err(bad)?);
        if let Some(s) = &r.solvent {
            sequences.push(tokenize(s).map_err(bad)?);
        }
    }
    Ok(Vocabulary::from_sequences(sequences.iter()))
}

/// Trains a fresh model on `splits` per the two configs.
///
/// The vocabulary is built from the splits (so `model_config.vocab_size` is
/// overwritten), labels are scaled to `[0, 1]` on the training portion, and
/// the checkpoint with the lowest validation loss is returned. A non-finite
/// loss aborts the run and returns the best checkpoint so far with
/// `diverged` set.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    splits: &Splits,
) -> Result<TrainOutcome, TrainError> {
    train_config.validate()?;
    if splits.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if splits.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let vocab = vocabulary_for(splits)?;
    let mut config = model_config.clone();
    config.vocab_size = vocab.len();
    let scaler = LabelScaler::fit(splits.train.iter().map(|r| r.log_s))?;
    let mut model = Model::init(config.clone(), vocab, train_config.model_seed)?;
    model.set_label_scaler(scaler.min, scaler.max);

    let train_samples =
        prepare_samples(&splits.train, Some(&scaler), config.use_temperature_feature)?;
    let val_samples = prepare_samples(&splits.val, Some(&scaler), config.use_temperature_feature)?;

    let shapes: Vec<Vec<usize>> =
        model.named_parameters().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let trainable: Vec<bool> = model
        .named_parameters()
        .iter()
        .map(|(name, _)| !train_config.freeze_encoder || name.starts_with("head."))
        .collect();
    let mut opt = AdamW::new(
        &shapes,
        train_config.beta1,
        train_config.beta2,
        train_config.weight_decay,
    );

    let batches_per_epoch = train_samples.len().div_ceil(train_config.batch_size);
    let total_steps = train_config
        .max_steps
        .map_or(train_config.epochs * batches_per_epoch, |m| {
            m.min(train_config.epochs * batches_per_epoch)
        });

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_config.data_seed);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut best: Option<(Model, usize, f64)> = None;
    let mut log = Vec::with_capacity(train_config.epochs);
    let mut step = 0usize;
    let mut diverged = false;

    'epochs: for epoch in 1..=train_config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for batch in order.chunks(train_config.batch_size) {
            if step >= total_steps {
                break;
            }
            let mut grads: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let s = &train_samples[idx];
                let got = encoder::loss_and_gradients(
                    &model,
                    &s.sequence,
                    s.temperature,
                    s.target,
                    train_config.huber_delta,
                );
                let lg = match got {
                    Ok(lg) => lg,
                    Err(EncoderError::Tensor(TensorError::NonFinite { .. })) => {
                        diverged = true;
                        break 'epochs;
                    }
                    Err(e) => return Err(e.into()),
                };
                batch_loss += lg.loss;
                for (acc, g) in grads.iter_mut().zip(&lg.parameter_gradients) {
                    let acc = acc.data_mut();
                    for (a, b) in acc.iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            let lr = train_config.learning_rate
                * lr_scale(step, total_steps, train_config.warmup_fraction);
            let mut params = model.parameters_mut();
            opt.step(&mut params, &grads, lr, &trainable);
            epoch_loss += batch_loss * inv;
            epoch_batches += 1;
            step += 1;
        }
        if epoch_batches == 0 {
            break;
        }

        let (val_loss, val_mae) =
            match validation_numbers(&model, &val_samples, &scaler, train_config.huber_delta) {
                Ok(v) => v,
                Err(TrainError::Encoder(EncoderError::Tensor(TensorError::NonFinite { .. }))) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
        log.push(EpochLog { epoch, train_loss: epoch_loss / epoch_batches as f64, val_loss, val_mae });
        if best.as_ref().is_none_or(|(_, _, b)| val_loss < *b) {
            best = Some((model.clone(), epoch, val_loss));
        }
        if step >= total_steps {
            break;
        }
    }

    let (best_model, best_epoch, best_val_loss) = match best {
        Some(b) => b,
        // Divergence before the first epoch finished: fall back to the
        // untouched initialization? No — the first step already moved the
        // parameters. Re-initialize deterministically instead.
        None => {
            let vocab = model.vocab().clone();
            let mut fresh = Model::init(config, vocab, train_config.model_seed)?;
            fresh.set_label_scaler(scaler.min, scaler.max);
            (fresh, 0, f64::INFINITY)
        }
    };
    Ok(TrainOutcome { model: best_model, log, best_epoch, best_val_loss, diverged })
}

/// Mean Huber loss (scaled units) and MAE (label units) on samples.
fn validation_numbers(
    model: &Model,
    samples: &[Sample],
    scaler: &LabelScaler,
    delta: f64,
) -> Result<(f64, f64), TrainError> {
    let mut loss = 0.0;
    let mut abs = 0.0;
    for s in samples {
        let (y, _) = encoder::forward(model, &s.sequence, s.temperature)?;
        loss += huber(y - s.target, delta);
        abs += (scaler.inverse(y) - s.label).abs();
    }
    let n = samples.len() as f64;
    Ok((loss / n, abs / n))
}

fn huber(diff: f64, delta: f64) -> f64 {
    if diff.abs() <= delta {
        0.5 * diff * diff
    } else {
        delta * (diff.abs() - 0.5 * delta)
    }
}

/// Evaluation of one model on one record set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Mean absolute error in label units.
    pub mae: f64,
    /// Root mean squared error in label units.
    pub rmse: f64,
    /// Per-record predictions in label units, record order.
    pub predictions: Vec<f64>,
    /// Per-record labels.
    pub targets: Vec<f64>,
}

/// Runs the model over `records` and computes label-unit metrics.
///
/// Predictions are mapped through the model's label scaler when it has one;
/// otherwise the raw outputs are compared to the raw labels.
pub fn evaluate(model: &Model, records: &[SoluRecord]) -> Result<EvalReport, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let samples = prepare_samples(records, None, model.config().use_temperature_feature)?;
    let mut predictions = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in &samples {
        let (y, _) = encoder::forward(model, &s.sequence, s.temperature)?;
        let y = match model.label_scaler() {
            Some((min, max)) => min + y * (max - min),
            None => y,
        };
        predictions.push(y);
        targets.push(s.label);
    }
    let (mae, rmse) = data::metrics(&predictions, &targets)?;
    Ok(EvalReport { mae, rmse, predictions, targets })
}

/// What varies across the runs of a suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteMode {
    /// Fixed split; each run re-seeds parameter initialization.
    Model,
    /// Fixed model seed; each run re-seeds the split.
    Data,
}

/// One run of a seed suite.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SuiteRun {
    /// The varied seed.
    pub seed: u64,
    /// Test MAE, label units.
    pub mae: f64,
    /// Test RMSE, label units.
    pub rmse: f64,
    /// Population standard deviation of the test labels — the RMSE of
    /// predicting the test mean, the floor any useful model must beat.
    pub baseline_rmse: f64,
}

/// A completed suite: per-run numbers plus the Table-style accumulator.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    /// Per-run results, seed order.
    pub runs: Vec<SuiteRun>,
    /// MAE/RMSE accumulator for mean ± SE summaries.
    pub metrics: RunMetrics,
}

impl SuiteOutcome {
    /// `label  MAE mean (SE)  RMSE mean (SE)` over the runs.
    pub fn table_row(&self, label: &str) -> Result<String, DataError> {
        self.metrics.table_row(label)
    }
}

/// Trains and evaluates once per seed.
///
/// `Model` mode: one split from `split_spec`, seeds vary initialization.
/// `Data` mode: one model seed (from `train_config`), seeds vary the split.
pub fn run_suite(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    records: &[SoluRecord],
    split_spec: &SplitSpec,
    seeds: &[u64],
    mode: SuiteMode,
) -> Result<SuiteOutcome, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::InvalidConfig("suite needs at least one seed".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    let mut metrics = RunMetrics::default();
    for &seed in seeds {
        let (splits, tc) = match mode {
            SuiteMode::Model => {
                let mut tc = train_config.clone();
                tc.model_seed = seed;
                (data::split(records, split_spec)?, tc)
            }
            SuiteMode::Data => {
                let mut spec = *split_spec;
                spec.seed = seed;
                (data::split(records, &spec)?, train_config.clone())
            }
        };
        if splits.test.is_empty() {
            return Err(TrainError::EmptySplit("test"));
        }
        let outcome = train(model_config, &tc, &splits)?;
        let eval = evaluate(&outcome.model, &splits.test)?;
        let n = eval.targets.len() as f64;
        let mean = eval.targets.iter().sum::<f64>() / n;
        let baseline_rmse =
            (eval.targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n).sqrt();
        metrics.push(eval.mae, eval.rmse);
        runs.push(SuiteRun { seed, mae: eval.mae, rmse: eval.rmse, baseline_rmse });
    }
    Ok(SuiteOutcome { runs, metrics })
}
