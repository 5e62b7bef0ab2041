//! Self-attention encoder with a `<REG>`-token regression head.
//!
//! The model embeds a token sequence, adds sinusoidal position encodings,
//! and runs a stack of pre-norm residual blocks (multi-head self-attention,
//! then a ReLU feed-forward). Only the final hidden vector of the `<REG>`
//! token — position 0 of every input — feeds the regression head, a small
//! layer-normed MLP `model_dim(+1) -> 64 -> 64 -> 1`. The optional `+1` is a
//! scalar temperature feature appended after the norm.
//!
//! Every forward pass records the post-softmax attention probabilities of
//! every layer and head; [`predict_with_gradients`] additionally runs one
//! backward pass from the prediction `y` itself (not from a loss) so the
//! relevance rules downstream get `dy/dA` for each recorded matrix.

mod checkpoint;

pub(crate) use checkpoint::atomic_write;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{TokenSequence, Vocabulary};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Additive attention-mask value for padded keys.
///
/// Finite stand-in for minus infinity: after the softmax row-max shift,
/// `exp(MASK_SCORE - max)` underflows to exactly 0.0, so padded keys get
/// exactly zero probability and padded batches match unpadded ones bitwise,
/// while the everything-finite invariant of the tape still holds.
pub const MASK_SCORE: f64 = -1e9;

/// Kelvin scale for the temperature feature: the feature is `T / 298.15`,
/// dimensionless and near 1.0 across the datasets' range.
pub const TEMPERATURE_SCALE_K: f64 = 298.15;

/// Hidden width of the regression head (`model_dim-64-64-1`).
pub const HEAD_HIDDEN: usize = 64;

/// Errors from model construction or evaluation.
#[derive(Debug, Error)]
pub enum EncoderError {
    /// Propagated tensor/tape failure (shape mismatch, non-finite value).
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// A config whose dimensions don't make sense.
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    /// Input longer than `max_tokens`.
    #[error("input of {got} tokens exceeds max_tokens = {max}")]
    Overlength {
        /// Observed token count.
        got: usize,
        /// Configured maximum.
        max: usize,
    },
    /// Model inputs must begin with `<REG>`.
    #[error("model input must start with <REG> (use prepare_input)")]
    MissingReg,
    /// Empty token sequence.
    #[error("empty model input")]
    EmptyInput,
    /// The config wants a temperature feature and none was given.
    #[error("this model uses a temperature feature; a temperature is required")]
    TemperatureRequired,
    /// A temperature was given to a model that has no feature for it.
    #[error("this model has no temperature feature; do not pass a temperature")]
    TemperatureUnused,
    /// An attention override tensor with the wrong shape.
    #[error("attention override at layer {layer} must have shape {expected:?}")]
    OverrideShape {
        /// Layer index of the offending override.
        layer: usize,
        /// The required `[heads, t, t]` shape.
        expected: Vec<usize>,
    },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of transformer layers.
    pub num_layers: usize,
    /// Attention heads per layer.
    pub num_heads: usize,
    /// Dimensionality of each head; `model_dim = num_heads * head_dim`.
    pub head_dim: usize,
    /// Feed-forward inner width.
    pub ffn_dim: usize,
    /// Vocabulary size (embedding rows).
    pub vocab_size: usize,
    /// Longest accepted input.
    pub max_tokens: usize,
    /// Append a scalar temperature feature to the head input.
    pub use_temperature_feature: bool,
}

impl ModelConfig {
    /// The desk-scale default: 2 layers, 2 heads of 16, model_dim 32,
    /// feed-forward 64. Small enough to train from scratch in seconds.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            num_heads: 2,
            head_dim: 16,
            ffn_dim: 64,
            vocab_size,
            max_tokens: 128,
            use_temperature_feature: false,
        }
    }

    /// The full-scale shape (6 layers, 8 heads of 64, model_dim 512); used
    /// for shape and parameter-count tests, not trained here.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            num_layers: 6,
            num_heads: 8,
            head_dim: 64,
            ffn_dim: 2048,
            vocab_size,
            max_tokens: 512,
            use_temperature_feature: false,
        }
    }

    /// `num_heads * head_dim`.
    pub fn model_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// Width of the regression-head input row.
    fn head_input_dim(&self) -> usize {
        self.model_dim() + usize::from(self.use_temperature_feature)
    }

    fn validate(&self) -> Result<(), EncoderError> {
        let all_positive = self.num_layers >= 1
            && self.num_heads >= 1
            && self.head_dim >= 1
            && self.ffn_dim >= 1
            && self.max_tokens >= 1;
        if !all_positive {
            return Err(EncoderError::InvalidConfig(
                "num_layers, num_heads, head_dim, ffn_dim, max_tokens must all be >= 1".into(),
            ));
        }
        if self.vocab_size < 5 {
            return Err(EncoderError::InvalidConfig(
                "vocab_size must cover at least the five special tokens".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
    Embedding,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Canonical parameter order: embedding, each layer's norms/attention/FFN,
/// then the head. Everything that walks parameters (init, optimizer,
/// checkpoint, gradient checks) follows this one list.
fn parameter_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let dm = config.model_dim();
    let ffn = config.ffn_dim;
    let head_in = config.head_input_dim();
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        specs.push(ParamSpec { name, shape, init });
    };

    push("embedding".into(), vec![config.vocab_size, dm], Init::Embedding);
    for l in 0..config.num_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        push(p("ln1.gain"), vec![dm], Init::Ones);
        push(p("ln1.bias"), vec![dm], Init::Zeros);
        for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            push(p(w), vec![dm, dm], Init::Xavier { fan_in: dm, fan_out: dm });
            push(p(&w.replace('w', "b")), vec![dm], Init::Zeros);
        }
        push(p("ln2.gain"), vec![dm], Init::Ones);
        push(p("ln2.bias"), vec![dm], Init::Zeros);
        push(p("ffn.w1"), vec![dm, ffn], Init::Xavier { fan_in: dm, fan_out: ffn });
        push(p("ffn.b1"), vec![ffn], Init::Zeros);
        push(p("ffn.w2"), vec![ffn, dm], Init::Xavier { fan_in: ffn, fan_out: dm });
        push(p("ffn.b2"), vec![dm], Init::Zeros);
    }
    push("head.ln.gain".into(), vec![dm], Init::Ones);
    push("head.ln.bias".into(), vec![dm], Init::Zeros);
    push("head.w1".into(), vec![head_in, HEAD_HIDDEN], Init::Xavier { fan_in: head_in, fan_out: HEAD_HIDDEN });
    push("head.b1".into(), vec![HEAD_HIDDEN], Init::Zeros);
    push("head.w2".into(), vec![HEAD_HIDDEN, HEAD_HIDDEN], Init::Xavier { fan_in: HEAD_HIDDEN, fan_out: HEAD_HIDDEN });
    push("head.b2".into(), vec![HEAD_HIDDEN], Init::Zeros);
    push("head.w3".into(), vec![HEAD_HIDDEN, 1], Init::Xavier { fan_in: HEAD_HIDDEN, fan_out: 1 });
    push("head.b3".into(), vec![1], Init::Zeros);
    specs
}

/// The encoder, its vocabulary, and (after training) the label scaler.
///
/// Parameters are plain tensors; every forward pass copies them onto a fresh
/// tape, so concurrent inference on a shared `&Model` is safe and training
/// mutates them in place between passes.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    vocab: Vocabulary,
    /// Parameters in canonical order (see [`parameter_specs`]).
    params: Vec<Tensor>,
    /// `(min, max)` of the training labels, for mapping predictions back to
    /// label units. `None` until training sets it.
    label_scaler: Option<(f64, f64)>,
}

impl Model {
    /// Deterministic seeded initialization: Xavier-uniform dense weights,
    /// zero biases, unit/zero layer norms, scaled-uniform embeddings.
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(EncoderError::InvalidConfig(format!(
                "config.vocab_size = {} but vocabulary has {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dm = config.model_dim();
        let params = parameter_specs(&config)
            .into_iter()
            .map(|spec| match spec.init {
                Init::Xavier { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::uniform(spec.shape, limit, &mut rng)
                }
                Init::Zeros => Tensor::zeros(spec.shape),
                Init::Ones => Tensor::filled(spec.shape, 1.0),
                Init::Embedding => {
                    let limit = (3.0 / dm as f64).sqrt();
                    Tensor::uniform(spec.shape, limit, &mut rng)
                }
            })
            .collect();
        Ok(Self { config, vocab, params, label_scaler: None })
    }

    /// Rebuilds a model from named tensors (checkpoint load).
    pub(crate) fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        mut named: std::collections::HashMap<String, Tensor>,
        label_scaler: Option<(f64, f64)>,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(EncoderError::InvalidConfig(format!(
                "config.vocab_size = {} but vocabulary has {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let specs = parameter_specs(&config);
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            let t = named.remove(&spec.name).ok_or_else(|| {
                EncoderError::InvalidConfig(format!("missing parameter tensor '{}'", spec.name))
            })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(EncoderError::InvalidConfig(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            params.push(t);
        }
        if let Some(extra) = named.into_keys().next() {
            return Err(EncoderError::InvalidConfig(format!(
                "unexpected parameter tensor '{extra}'"
            )));
        }
        Ok(Self { config, vocab, params, label_scaler })
    }

    /// The architecture.
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// The vocabulary the model was built with.
    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// `(min, max)` of the training labels, when set by training.
    pub fn label_scaler(&self) -> Option<(f64, f64)> {
        self.label_scaler
    }

    /// Records the label range used to scale training targets.
    pub fn set_label_scaler(&mut self, min: f64, max: f64) {
        self.label_scaler = Some((min, max));
    }

    /// Parameters with their canonical names, in canonical order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        parameter_specs(&self.config)
            .into_iter()
            .map(|s| s.name)
            .zip(self.params.iter())
            .collect()
    }

    /// Mutable parameter references in canonical order (optimizer updates,
    /// finite-difference perturbation). Shapes cannot be changed through
    /// these references.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().collect()
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Scalar parameters in the regression head (layer norm included).
    pub fn head_parameter_count(&self) -> usize {
        self.named_parameters()
            .iter()
            .filter(|(n, _)| n.starts_with("head."))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Encodes a prepared sequence to ids, checking model-input invariants.
    ///
    /// Returns the ids and the positions of any out-of-vocabulary tokens
    /// (already mapped to `<UNK>`).
    pub fn encode_input(&self, seq: &TokenSequence) -> Result<(Vec<usize>, Vec<usize>), EncoderError> {
        if seq.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        if !seq.has_reg() || seq.tokens()[0].text != crate::smiles::REG {
            return Err(EncoderError::MissingReg);
        }
        if seq.len() > self.config.max_tokens {
            return Err(EncoderError::Overlength { got: seq.len(), max: self.config.max_tokens });
        }
        Ok(self.vocab.encode(seq))
    }
}

/// Post-softmax attention of one forward pass, with optional gradients.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    /// Per layer: `[heads, t, t]` attention probabilities.
    attention: Vec<Tensor>,
    /// Per layer: `[heads, t, t]` gradients `dy/dA`, once populated.
    gradients: Option<Vec<Tensor>>,
    token_count: usize,
    reg_position: usize,
}

impl AttentionRecord {
    /// Number of layers recorded.
    pub fn num_layers(&self) -> usize {
        self.attention.len()
    }

    /// Token count `t` of the recorded input.
    pub fn token_count(&self) -> usize {
        self.token_count
    }

    /// Position of `<REG>` in the recorded input (always 0 for inputs built
    /// by `prepare_input`).
    pub fn reg_position(&self) -> usize {
        self.reg_position
    }

    /// Attention probabilities of layer `l`, shape `[heads, t, t]`.
    pub fn attention(&self, l: usize) -> &Tensor {
        &self.attention[l]
    }

    /// Gradient `dy/dA` of layer `l`, if a backward pass populated it.
    pub fn gradient(&self, l: usize) -> Option<&Tensor> {
        self.gradients.as_ref().map(|g| &g[l])
    }

    /// True once gradients are populated.
    pub fn has_gradients(&self) -> bool {
        self.gradients.is_some()
    }
}

/// Everything one recorded forward pass exposes to the rest of the crate.
pub(crate) struct ForwardPass {
    pub tape: Tape,
    /// Scalar prediction node, shape `[1, 1]`.
    pub y: Var,
    /// Final encoder hidden states, `t x model_dim`, before the head.
    pub hidden: Var,
    /// `attention[l][h]` is the `t x t` softmax output of head `h` in layer `l`.
    pub attention: Vec<Vec<Var>>,
    /// Parameter nodes in canonical order.
    pub param_vars: Vec<Var>,
    pub token_count: usize,
    pub reg_position: usize,
}

impl ForwardPass {
    pub fn prediction(&self) -> f64 {
        self.tape.value(self.y).data()[0]
    }

    /// Assembles the `[heads, t, t]` record tensors from the tape.
    fn record(&self, with_gradients: bool) -> AttentionRecord {
        let t = self.token_count;
        let stack = |get: &dyn Fn(Var) -> Tensor| -> Vec<Tensor> {
            self.attention
                .iter()
                .map(|heads| {
                    let h = heads.len();
                    let mut out = Tensor::zeros(vec![h, t, t]);
                    for (hi, &v) in heads.iter().enumerate() {
                        let m = get(v);
                        for q in 0..t {
                            for k in 0..t {
                                out.set3(hi, q, k, m.at2(q, k));
                            }
                        }
                    }
                    out
                })
                .collect()
        };
        let attention = stack(&|v| self.tape.value(v).clone());
        let gradients = with_gradients.then(|| stack(&|v| self.tape.grad_or_zeros(v)));
        AttentionRecord {
            attention,
            gradients,
            token_count: t,
            reg_position: self.reg_position,
        }
    }
}

/// Sinusoidal position encodings for `t` positions of width `dm`.
pub(crate) fn position_encoding(t: usize, dm: usize) -> Tensor {
    let mut pe = Tensor::zeros(vec![t, dm]);
    for pos in 0..t {
        for i in 0..dm {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dm as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set2(pos, i, v);
        }
    }
    pe
}

/// Builds the full differentiable graph for one input.
///
/// `attention_override`, when given, replaces the first `len` layers'
/// post-softmax probabilities with fixed constants; any remaining layers
/// recompute their attention from the (possibly perturbed) hidden states.
/// This is the forward half of the finite-difference check on `dy/dA`:
/// freezing layers `0..=l` at their recorded values, bumping one entry of
/// layer `l`, and letting the rest of the network respond measures exactly
/// the gradient the backward pass records for layer `l`.
pub(crate) fn run(
    model: &Model,
    ids: &[usize],
    temperature: Option<f64>,
    attention_override: Option<&[Tensor]>,
) -> Result<ForwardPass, EncoderError> {
    let config = &model.config;
    let t = ids.len();
    if t == 0 {
        return Err(EncoderError::EmptyInput);
    }
    if t > config.max_tokens {
        return Err(EncoderError::Overlength { got: t, max: config.max_tokens });
    }
    if ids[0] != model.vocab.reg_id() {
        return Err(EncoderError::MissingReg);
    }
    match (config.use_temperature_feature, temperature.is_some()) {
        (true, false) => return Err(EncoderError::TemperatureRequired),
        (false, true) => return Err(EncoderError::TemperatureUnused),
        _ => {}
    }
    if let Some(ov) = attention_override {
        let expected = vec![config.num_heads, t, t];
        for (l, a) in ov.iter().enumerate() {
            if l >= config.num_layers || a.shape() != expected.as_slice() {
                return Err(EncoderError::OverrideShape { layer: l, expected });
            }
        }
    }

    let dm = config.model_dim();
    let d = config.head_dim;
    let mut tape = Tape::new();
    let param_vars: Vec<Var> = model.params.iter().map(|p| tape.param(p.clone())).collect();
    // Walk param_vars in canonical order as the graph consumes them.
    let mut param_iter = param_vars.clone().into_iter();
    let mut next = move || param_iter.next().expect("parameter list covers the whole graph");

    let embedding = next();
    let mut x = tape.embed_rows(embedding, ids)?;
    let pe = tape.leaf(position_encoding(t, dm));
    x = tape.add(x, pe)?;

    // Additive key mask: padded positions contribute MASK_SCORE to every
    // query's score against them.
    let pad = model.vocab.pad_id();
    let mask = if ids.contains(&pad) {
        let mut m = Tensor::zeros(vec![t, t]);
        for (k, &id) in ids.iter().enumerate() {
            if id == pad {
                for q in 0..t {
                    m.set2(q, k, MASK_SCORE);
                }
            }
        }
        Some(tape.leaf(m))
    } else {
        None
    };

    let mut attention: Vec<Vec<Var>> = Vec::with_capacity(config.num_layers);
    for layer_index in 0..config.num_layers {
        let ln1_gain = next();
        let ln1_bias = next();
        let wq = next();
        let bq = next();
        let wk = next();
        let bk = next();
        let wv = next();
        let bv = next();
        let wo = next();
        let bo = next();
        let ln2_gain = next();
        let ln2_bias = next();
        let w1 = next();
        let b1 = next();
        let w2 = next();
        let b2 = next();

        // Pre-norm attention block.
        let ln1 = tape.layer_norm_rows(x, ln1_gain, ln1_bias)?;
        let q_all = tape.matmul(ln1, wq)?;
        let q_all = tape.add_row(q_all, bq)?;
        let k_all = tape.matmul(ln1, wk)?;
        let k_all = tape.add_row(k_all, bk)?;
        let v_all = tape.matmul(ln1, wv)?;
        let v_all = tape.add_row(v_all, bv)?;

        let mut head_outs = Vec::with_capacity(config.num_heads);
        let mut head_attn = Vec::with_capacity(config.num_heads);
        for h in 0..config.num_heads {
            let q = tape.slice_cols(q_all, h * d, d)?;
            let k = tape.slice_cols(k_all, h * d, d)?;
            let v = tape.slice_cols(v_all, h * d, d)?;
            let a = match attention_override {
                Some(ov) if layer_index < ov.len() => {
                    let mut ah = Tensor::zeros(vec![t, t]);
                    for qi in 0..t {
                        for ki in 0..t {
                            ah.set2(qi, ki, ov[layer_index].at3(h, qi, ki));
                        }
                    }
                    tape.leaf(ah)
                }
                _ => {
                    let scores = tape.matmul_transpose_b(q, k)?;
                    let mut scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
                    if let Some(m) = mask {
                        scores = tape.add(scores, m)?;
                    }
                    tape.softmax_rows(scores)?
                }
            };
            head_attn.push(a);
            head_outs.push(tape.matmul(a, v)?);
        }
        attention.push(head_attn);

        let concat = tape.concat_cols(&head_outs)?;
        let proj = tape.matmul(concat, wo)?;
        let proj = tape.add_row(proj, bo)?;
        x = tape.add(x, proj)?;

        // Pre-norm feed-forward block.
        let ln2 = tape.layer_norm_rows(x, ln2_gain, ln2_bias)?;
        let f = tape.matmul(ln2, w1)?;
        let f = tape.add_row(f, b1)?;
        let f = tape.relu(f)?;
        let f = tape.matmul(f, w2)?;
        let f = tape.add_row(f, b2)?;
        x = tape.add(x, f)?;
    }
    let hidden = x;

    // Regression head on the <REG> row only.
    let ln_gain = next();
    let ln_bias = next();
    let w1 = next();
    let b1 = next();
    let w2 = next();
    let b2 = next();
    let w3 = next();
    let b3 = next();

    let reg_row = tape.select_row(x, 0)?;
    let mut hin = tape.layer_norm_rows(reg_row, ln_gain, ln_bias)?;
    if let Some(temp) = temperature {
        let scaled = temp / TEMPERATURE_SCALE_K;
        let tleaf = tape.leaf(Tensor::new(vec![1, 1], vec![scaled]).expect("1x1 tensor"));
        hin = tape.concat_cols(&[hin, tleaf])?;
    }
    let h1 = tape.matmul(hin, w1)?;
    let h1 = tape.add_row(h1, b1)?;
    let h1 = tape.relu(h1)?;
    let h2 = tape.matmul(h1, w2)?;
    let h2 = tape.add_row(h2, b2)?;
    let h2 = tape.relu(h2)?;
    let y = tape.matmul(h2, w3)?;
    let y = tape.add_row(y, b3)?;

    Ok(ForwardPass {
        tape,
        y,
        hidden,
        attention,
        param_vars,
        token_count: t,
        reg_position: 0,
    })
}

/// One forward pass: scalar prediction plus recorded attention.
pub fn forward(
    model: &Model,
    seq: &TokenSequence,
    temperature: Option<f64>,
) -> Result<(f64, AttentionRecord), EncoderError> {
    let (ids, _) = model.encode_input(seq)?;
    let pass = run(model, &ids, temperature, None)?;
    Ok((pass.prediction(), pass.record(false)))
}

/// Forward plus one backward pass from `y`, filling `dy/dA` for every layer.
///
/// Model parameters are untouched; the gradients live only in the returned
/// record.
pub fn predict_with_gradients(
    model: &Model,
    seq: &TokenSequence,
    temperature: Option<f64>,
) -> Result<(f64, AttentionRecord), EncoderError> {
    let (ids, _) = model.encode_input(seq)?;
    let mut pass = run(model, &ids, temperature, None)?;
    let y = pass.y;
    pass.tape.backward(y)?;
    Ok((pass.prediction(), pass.record(true)))
}

/// Forward pass with the first `attention.len()` layers' attention replaced
/// by fixed tensors (per layer `[heads, t, t]`); any later layers recompute
/// their attention normally. Returns the prediction.
///
/// This is the knob the finite-difference oracle turns to check `dy/dA`:
/// to probe layer `l`, pass the recorded attention for layers `0..=l` with
/// one entry of layer `l` bumped, and let layers past `l` respond. The
/// recorded gradient is the full derivative through every downstream path,
/// so the downstream layers must be free to move.
pub fn forward_with_attention_override(
    model: &Model,
    seq: &TokenSequence,
    temperature: Option<f64>,
    attention: &[Tensor],
) -> Result<f64, EncoderError> {
    let (ids, _) = model.encode_input(seq)?;
    let pass = run(model, &ids, temperature, Some(attention))?;
    Ok(pass.prediction())
}

/// Prediction, loss against a target, and the loss gradient of every
/// parameter (canonical order).
#[derive(Debug)]
pub struct LossGradients {
    /// Scalar prediction `y`.
    pub prediction: f64,
    /// Huber loss of `y` against the target.
    pub loss: f64,
    /// `d loss / d parameter` in canonical parameter order.
    pub parameter_gradients: Vec<Tensor>,
}

/// Runs forward + Huber loss + backward and returns every parameter
/// gradient. This is the training step's core, exposed for gradient checks.
pub fn loss_and_gradients(
    model: &Model,
    seq: &TokenSequence,
    temperature: Option<f64>,
    target: f64,
    delta: f64,
) -> Result<LossGradients, EncoderError> {
    let (ids, _) = model.encode_input(seq)?;
    let mut pass = run(model, &ids, temperature, None)?;
    let loss = pass.tape.huber(pass.y, target, delta)?;
    pass.tape.backward(loss)?;
    Ok(LossGradients {
        prediction: pass.prediction(),
        loss: pass.tape.value(loss).data()[0],
        parameter_gradients: pass
            .param_vars
            .iter()
            .map(|&v| pass.tape.grad_or_zeros(v))
            .collect(),
    })
}

/// The final hidden states (`t x model_dim`) of the encoder stack, before
/// the head. Exposed so tests can verify the head reads only `<REG>`.
pub fn final_hidden(
    model: &Model,
    seq: &TokenSequence,
    temperature: Option<f64>,
) -> Result<Tensor, EncoderError> {
    let (ids, _) = model.encode_input(seq)?;
    let pass = run(model, &ids, temperature, None)?;
    Ok(pass.tape.value(pass.hidden).clone())
}

/// Applies only the regression head to a `t x model_dim` hidden-state
/// matrix, reading row `reg_position`.
pub fn head_forward(
    model: &Model,
    hidden: &Tensor,
    reg_position: usize,
    temperature: Option<f64>,
) -> Result<f64, EncoderError> {
    let config = &model.config;
    match (config.use_temperature_feature, temperature.is_some()) {
        (true, false) => return Err(EncoderError::TemperatureRequired),
        (false, true) => return Err(EncoderError::TemperatureUnused),
        _ => {}
    }
    let mut tape = Tape::new();
    let x = tape.leaf(hidden.clone());
    let specs = parameter_specs(&model.config);
    let mut by_name = std::collections::HashMap::new();
    for (spec, tensor) in specs.iter().zip(&model.params) {
        by_name.insert(spec.name.as_str(), tensor);
    }
    let mut p = |name: &str| tape.leaf(by_name[name].clone());
    let ln_gain = p("head.ln.gain");
    let ln_bias = p("head.ln.bias");
    let w1 = p("head.w1");
    let b1 = p("head.b1");
    let w2 = p("head.w2");
    let b2 = p("head.b2");
    let w3 = p("head.w3");
    let b3 = p("head.b3");
    let reg_row = tape.select_row(x, reg_position)?;
    let mut hin = tape.layer_norm_rows(reg_row, ln_gain, ln_bias)?;
    if let Some(temp) = temperature {
        let scaled = temp / TEMPERATURE_SCALE_K;
        let tleaf = tape.leaf(Tensor::new(vec![1, 1], vec![scaled]).expect("1x1 tensor"));
        hin = tape.concat_cols(&[hin, tleaf])?;
    }
    let h1 = tape.matmul(hin, w1)?;
    let h1 = tape.add_row(h1, b1)?;
    let h1 = tape.relu(h1)?;
    let h2 = tape.matmul(h1, w2)?;
    let h2 = tape.add_row(h2, b2)?;
    let h2 = tape.relu(h2)?;
    let y = tape.matmul(h2, w3)?;
    let y = tape.add_row(y, b3)?;
    Ok(tape.value(y).data()[0])
}
