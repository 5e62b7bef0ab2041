//! Attention-gradient relevance propagation.
//!
//! Three rules turn a recorded forward/backward pass into per-atom
//! attributions:
//!
//! 1. [`head_average`]: for each layer, weight the attention probabilities
//!    by their gradients, clamp negatives to zero *per head*, then average
//!    over heads: `Ābar = mean_h(max(0, dy/dA ⊙ A))`. Clamping happens
//!    strictly before averaging, so one head's negative evidence can never
//!    cancel another's positive evidence.
//! 2. [`aggregate`]: starting from the identity, fold the layers in order:
//!    `R ← R + Ābar · R`. Algebraically `R = (I+Ābar_L)···(I+Ābar_1)`, which
//!    the tests use as an independent oracle. No row normalization anywhere.
//! 3. [`extract_reg`] / [`atom_relevance`]: read the `<REG>` slice of `R`
//!    and map it onto the atoms of the parsed molecule(s).
//!
//! # Axis convention
//!
//! Attention is stored as `A[query, key]`, so the `<REG>` **row** of `R`
//! says how much each key token fed the `<REG>` representation the head
//! reads. Extraction takes that row (`R[reg, k]` for every other position
//! `k`); the self-entry and any `<PAD>` positions are dropped, and `<SEP>`
//! is kept in the token list but flagged by its kind so it never reaches an
//! atom. The identity part of `R` is removed only when heatmaps are drawn,
//! never here — extraction skips the diagonal entry anyway.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{self, AttentionRecord, EncoderError, Model};
use crate::smiles::{
    parse, prepare_input, tokenize, MolecularGraph, SmilesError, TokenKind, TokenSequence,
    PAD,
};
use crate::tensor::{Tensor, TensorError};

/// Errors from the relevance rules.
#[derive(Debug, Error)]
pub enum RelevanceError {
    /// Propagated tensor failure.
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// Inputs whose shapes do not line up.
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch {
        /// The operation that rejected its inputs.
        op: &'static str,
        /// What was wrong.
        details: String,
    },
    /// The attention record has no gradients; use
    /// [`encoder::predict_with_gradients`].
    #[error("attention record carries no gradients; record one with predict_with_gradients")]
    MissingGradients,
    /// The token sequence does not start with `<REG>`.
    #[error("token sequence does not start with <REG>")]
    MissingReg,
    /// Relevance matrix and token sequence disagree on length.
    #[error("relevance matrix covers {matrix} tokens but the sequence has {tokens}")]
    LengthMismatch {
        /// Token count of the matrix.
        matrix: usize,
        /// Token count of the sequence.
        tokens: usize,
    },
    /// An atom whose mapped token is missing or not an atom token.
    #[error("atom {atom} maps to token position {position}, which {reason}")]
    MapInconsistency {
        /// Graph atom index.
        atom: usize,
        /// Token position the map points at.
        position: usize,
        /// Why the position is unusable.
        reason: String,
    },
}

/// Errors from the end-to-end [`explain`] pipeline.
#[derive(Debug, Error)]
pub enum ExplainError {
    /// Tokenization or parsing failed.
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    /// The model rejected the input or the pass failed.
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    /// The relevance rules rejected the recorded pass.
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
}

/// Head-averaged gradient-weighted positive attention for one layer.
///
/// `attention` and `gradient` are `[heads, t, t]`; the result is `t x t`
/// with every entry `mean_h(max(0, gradient ⊙ attention))` — the clamp is
/// applied per head, before the mean.
pub fn head_average(attention: &Tensor, gradient: &Tensor) -> Result<Tensor, RelevanceError> {
    let shape = attention.shape();
    if shape.len() != 3 || shape[1] != shape[2] || shape[0] == 0 {
        return Err(RelevanceError::ShapeMismatch {
            op: "head_average",
            details: format!("attention must be [heads, t, t], got {shape:?}"),
        });
    }
    if gradient.shape() != shape {
        return Err(RelevanceError::ShapeMismatch {
            op: "head_average",
            details: format!(
                "gradient shape {:?} != attention shape {shape:?}",
                gradient.shape()
            ),
        });
    }
    let (h, t) = (shape[0], shape[1]);
    let mut out = Tensor::zeros(vec![t, t]);
    for q in 0..t {
        for k in 0..t {
            let mut acc = 0.0;
            for head in 0..h {
                acc += (gradient.at3(head, q, k) * attention.at3(head, q, k)).max(0.0);
            }
            out.set2(q, k, acc / h as f64);
        }
    }
    Ok(out)
}

/// The aggregated token-to-token relevance matrix.
#[derive(Debug, Clone)]
pub struct RelevanceMatrix {
    matrix: Tensor,
    layers: usize,
    reg_position: usize,
}

impl RelevanceMatrix {
    /// The `t x t` matrix `R`.
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// Number of layers folded in.
    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Position of `<REG>` (0 for all inputs built by `prepare_input`).
    pub fn reg_position(&self) -> usize {
        self.reg_position
    }

    /// Token count `t`.
    pub fn token_count(&self) -> usize {
        self.matrix.rows()
    }

    /// `R - I`, the display form used by heatmaps ("identity removed").
    /// Extraction never uses this; it skips the self-entry regardless.
    pub fn minus_identity(&self) -> Tensor {
        let t = self.token_count();
        let mut out = self.matrix.clone();
        for i in 0..t {
            let v = out.at2(i, i) - 1.0;
            out.set2(i, i, v);
        }
        out
    }
}

/// Folds head-averaged layers into `R`, starting from the identity:
/// `R ← R + Ābar · R` in layer order. `t` is given explicitly so zero
/// layers legitimately produce `R = I`.
pub fn aggregate(layers: &[Tensor], t: usize) -> Result<RelevanceMatrix, RelevanceError> {
    aggregate_from(layers, t, 0)
}

fn aggregate_from(
    layers: &[Tensor],
    t: usize,
    reg_position: usize,
) -> Result<RelevanceMatrix, RelevanceError> {
    for (l, abar) in layers.iter().enumerate() {
        if abar.shape() != [t, t] {
            return Err(RelevanceError::ShapeMismatch {
                op: "aggregate",
                details: format!("layer {l} is {:?}, expected [{t}, {t}]", abar.shape()),
            });
        }
    }
    if reg_position >= t {
        return Err(RelevanceError::ShapeMismatch {
            op: "aggregate",
            details: format!("reg position {reg_position} outside 0..{t}"),
        });
    }
    let mut r = Tensor::eye(t);
    for abar in layers {
        let update = abar.matmul(&r)?;
        r = r.add(&update)?;
    }
    Ok(RelevanceMatrix { matrix: r, layers: layers.len(), reg_position })
}

/// [`head_average`] + [`aggregate`] over a recorded pass with gradients.
pub fn relevance_from_record(record: &AttentionRecord) -> Result<RelevanceMatrix, RelevanceError> {
    let layers = layer_averages(record)?;
    aggregate_from(&layers, record.token_count(), record.reg_position())
}

/// The per-layer clamped, head-averaged matrices of a recorded pass, in
/// layer order — the same matrices [`relevance_from_record`] folds into `R`,
/// exposed separately for heatmap figures.
pub fn layer_averages(record: &AttentionRecord) -> Result<Vec<Tensor>, RelevanceError> {
    if !record.has_gradients() {
        return Err(RelevanceError::MissingGradients);
    }
    let mut layers = Vec::with_capacity(record.num_layers());
    for l in 0..record.num_layers() {
        let grad = record.gradient(l).expect("has_gradients checked");
        layers.push(head_average(record.attention(l), grad)?);
    }
    Ok(layers)
}

/// Relevance of one token toward the `<REG>` prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRelevance {
    /// Position in the prepared sequence. Carried for atom mapping, not part
    /// of the export schema.
    #[serde(skip)]
    pub position: usize,
    /// Token text.
    pub text: String,
    /// Token kind; non-atom kinds (`<SEP>`, bonds, parentheses, digits) are
    /// reported but never mapped to atoms.
    pub kind: TokenKind,
    /// `R[reg, position]`, unscaled.
    pub raw_relevance: f64,
}

/// The `<REG>` slice of `R`, one entry per non-`<REG>`, non-`<PAD>` token.
///
/// Entries keep the sequence order. `<SEP>` is included (its `kind` flags it
/// as non-atom); the `<REG>` self-entry and `<PAD>` positions are dropped.
pub fn extract_reg(
    relevance: &RelevanceMatrix,
    tokens: &TokenSequence,
) -> Result<Vec<TokenRelevance>, RelevanceError> {
    let first_is_reg = tokens
        .tokens()
        .first()
        .is_some_and(|t| t.text == crate::smiles::REG);
    if !tokens.has_reg() || !first_is_reg {
        return Err(RelevanceError::MissingReg);
    }
    if relevance.token_count() != tokens.len() {
        return Err(RelevanceError::LengthMismatch {
            matrix: relevance.token_count(),
            tokens: tokens.len(),
        });
    }
    let reg = relevance.reg_position();
    let mut out = Vec::with_capacity(tokens.len().saturating_sub(1));
    for (position, token) in tokens.tokens().iter().enumerate() {
        if position == reg || token.text == PAD {
            continue;
        }
        out.push(TokenRelevance {
            position,
            text: token.text.clone(),
            kind: token.kind,
            raw_relevance: relevance.matrix().at2(reg, position),
        });
    }
    Ok(out)
}

/// One atom's attributed weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomWeight {
    /// Atom index within its molecule's graph.
    #[serde(rename = "index")]
    pub atom_index: usize,
    /// Element symbol (capitalized).
    pub element: String,
    /// Position of the atom's token in the prepared sequence.
    pub token_position: usize,
    /// Unscaled relevance, `>= 0`.
    pub raw: f64,
    /// Min-max scaled within the molecule: 0 at the molecule's minimum, 1 at
    /// its maximum, all 0.5 when every atom ties.
    pub scaled: f64,
}

/// Per-atom relevance of one molecule, scaled within that molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomRelevance {
    /// One entry per graph atom, in graph order.
    pub atoms: Vec<AtomWeight>,
}

/// Maps token relevance onto a molecule's atoms and min-max scales it.
///
/// `token_offset` is where the molecule's raw tokens start inside the
/// prepared sequence: 1 for the solute (right after `<REG>`), and
/// `sep_position + 1` for a solvent.
pub fn atom_relevance(
    token_relevance: &[TokenRelevance],
    graph: &MolecularGraph,
    token_offset: usize,
) -> Result<AtomRelevance, RelevanceError> {
    let by_position: HashMap<usize, &TokenRelevance> =
        token_relevance.iter().map(|t| (t.position, t)).collect();
    let mut atoms = Vec::with_capacity(graph.atom_count());
    for (atom_index, &raw_position) in graph.atom_token_map.iter().enumerate() {
        let position = raw_position + token_offset;
        let entry = by_position.get(&position).ok_or_else(|| {
            RelevanceError::MapInconsistency {
                atom: atom_index,
                position,
                reason: "has no extracted relevance entry".into(),
            }
        })?;
        if !entry.kind.is_atom() {
            return Err(RelevanceError::MapInconsistency {
                atom: atom_index,
                position,
                reason: format!("is a {:?} token, not an atom", entry.kind),
            });
        }
        atoms.push(AtomWeight {
            atom_index,
            element: graph.atoms[atom_index].element.clone(),
            token_position: position,
            raw: entry.raw_relevance,
            scaled: 0.0,
        });
    }
    let min = atoms.iter().map(|a| a.raw).fold(f64::INFINITY, f64::min);
    let max = atoms.iter().map(|a| a.raw).fold(f64::NEG_INFINITY, f64::max);
    for a in &mut atoms {
        a.scaled = if max == min { 0.5 } else { (a.raw - min) / (max - min) };
    }
    Ok(AtomRelevance { atoms })
}

/// The complete JSON export for one explained molecule (or solute/solvent
/// pair). Field names are stable:
///
/// ```json
/// { "smiles": ..., "solvent_smiles"?: ..., "prediction": ...,
///   "temperature"?: ...,
///   "tokens": [{ "text", "kind", "raw_relevance" }, ...],
///   "atoms":  [{ "index", "element", "token_position", "raw", "scaled" }, ...] }
/// ```
///
/// `atoms` lists solute atoms first, then solvent atoms; `index` restarts at
/// 0 for the solvent and `token_position` (always past the `<SEP>` for
/// solvent atoms) tells the two apart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelevanceReport {
    /// Solute SMILES as given.
    pub smiles: String,
    /// Solvent SMILES, when the input was a pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solvent_smiles: Option<String>,
    /// Model prediction, in label units when the model carries a label
    /// scaler, otherwise in the model's raw output units.
    pub prediction: f64,
    /// Temperature in kelvin, when one was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Per-token relevance in sequence order (no `<REG>`, no `<PAD>`).
    pub tokens: Vec<TokenRelevance>,
    /// Per-atom relevance, each molecule min-max scaled on its own.
    pub atoms: Vec<AtomWeight>,
}

/// One explained molecule: its graph plus atom weights, ready to render.
#[derive(Debug, Clone)]
pub struct MoleculeAttribution {
    /// The SMILES this molecule was parsed from.
    pub smiles: String,
    /// Parsed molecular graph.
    pub graph: MolecularGraph,
    /// Atom weights, min-max scaled within this molecule.
    pub relevance: AtomRelevance,
    /// Where this molecule's tokens start in the prepared sequence.
    pub token_offset: usize,
}

/// Everything [`explain`] produces: the JSON report plus the intermediate
/// structures the renderer needs (matrices, record, graphs).
#[derive(Debug, Clone)]
pub struct Explanation {
    /// The stable JSON export.
    pub report: RelevanceReport,
    /// Aggregated relevance matrix `R`.
    pub relevance: RelevanceMatrix,
    /// The recorded attention and its gradients.
    pub record: AttentionRecord,
    /// The prepared `<REG> ... (<SEP> ...)` token sequence.
    pub sequence: TokenSequence,
    /// The solute with its atom weights.
    pub solute: MoleculeAttribution,
    /// The solvent with its atom weights, when one was given.
    pub solvent: Option<MoleculeAttribution>,
}

/// Runs the whole pipeline for one molecule (optionally in a solvent, at a
/// temperature): tokenize, parse, forward + backward, Eq.-style averaging
/// and aggregation, extraction, atom mapping.
///
/// The reported prediction is mapped back to label units when the model
/// carries a label scaler.
pub fn explain(
    model: &Model,
    solute_smiles: &str,
    solvent_smiles: Option<&str>,
    temperature: Option<f64>,
) -> Result<Explanation, ExplainError> {
    let solute_tokens = tokenize(solute_smiles)?;
    let solute_graph = parse(&solute_tokens)?;
    let solvent_parsed = match solvent_smiles {
        Some(s) => {
            let tokens = tokenize(s)?;
            let graph = parse(&tokens)?;
            Some((tokens, graph))
        }
        None => None,
    };
    let sequence = prepare_input(&solute_tokens, solvent_parsed.as_ref().map(|(t, _)| t))?;

    let (raw_prediction, record) = encoder::predict_with_gradients(model, &sequence, temperature)?;
    let relevance = relevance_from_record(&record)?;
    let tokens = extract_reg(&relevance, &sequence)?;

    let solute_rel = atom_relevance(&tokens, &solute_graph, 1)?;
    let solute = MoleculeAttribution {
        smiles: solute_smiles.to_string(),
        graph: solute_graph,
        relevance: solute_rel,
        token_offset: 1,
    };
    let solvent = match (&solvent_parsed, sequence.sep_position()) {
        (Some((_, graph)), Some(sep)) => {
            let offset = sep + 1;
            let relevance = atom_relevance(&tokens, graph, offset)?;
            Some(MoleculeAttribution {
                smiles: solvent_smiles.expect("solvent present").to_string(),
                graph: graph.clone(),
                relevance,
                token_offset: offset,
            })
        }
        _ => None,
    };

    let prediction = match model.label_scaler() {
        Some((min, max)) => min + raw_prediction * (max - min),
        None => raw_prediction,
    };
    let mut atoms = solute.relevance.atoms.clone();
    if let Some(sv) = &solvent {
        atoms.extend(sv.relevance.atoms.iter().cloned());
    }
    let report = RelevanceReport {
        smiles: solute_smiles.to_string(),
        solvent_smiles: solvent_smiles.map(str::to_string),
        prediction,
        temperature,
        tokens,
        atoms,
    };
    Ok(Explanation { report, relevance, record, sequence, solute, solvent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;
    use crate::smiles::Vocabulary;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tensor3(h: usize, t: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![h, t, t], data).unwrap()
    }

    fn random_nonneg(t: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data: Vec<f64> = (0..t * t).map(|_| rng.random_range(0.0..0.3)).collect();
        Tensor::new(vec![t, t], data).unwrap()
    }

    #[test]
    fn zero_gradient_averages_to_zero() {
        let a = tensor3(2, 3, vec![1.0 / 3.0; 18]);
        let g = tensor3(2, 3, vec![0.0; 18]);
        let abar = head_average(&a, &g).unwrap();
        assert!(abar.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn clamp_kills_negative_products() {
        let a = tensor3(1, 2, vec![0.5, 0.5, 0.5, 0.5]);
        let g = tensor3(1, 2, vec![2.0, -2.0, -2.0, 2.0]);
        let abar = head_average(&a, &g).unwrap();
        assert_eq!(abar.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn clamp_is_applied_before_the_head_mean() {
        // Head 1 contributes +1, head 2 contributes -1 at the same entry.
        // Clamp-then-mean gives 0.5; mean-then-clamp would give 0.
        let a = tensor3(2, 1, vec![1.0, 1.0]);
        let g = tensor3(2, 1, vec![1.0, -1.0]);
        let abar = head_average(&a, &g).unwrap();
        assert_eq!(abar.data(), &[0.5]);
    }

    #[test]
    fn head_average_matches_raw_index_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let (h, t) = (3, 5);
        let a_data: Vec<f64> = (0..h * t * t).map(|_| rng.random_range(0.0..1.0)).collect();
        let g_data: Vec<f64> = (0..h * t * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let abar = head_average(
            &tensor3(h, t, a_data.clone()),
            &tensor3(h, t, g_data.clone()),
        )
        .unwrap();
        // Independent reference over the flat buffers.
        for q in 0..t {
            for k in 0..t {
                let mut acc = 0.0;
                for head in 0..h {
                    let idx = head * t * t + q * t + k;
                    let p = a_data[idx] * g_data[idx];
                    if p > 0.0 {
                        acc += p;
                    }
                }
                let expected = acc / h as f64;
                assert!((abar.at2(q, k) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_average_rejects_bad_shapes() {
        let a = tensor3(1, 2, vec![0.0; 4]);
        let g = tensor3(2, 2, vec![0.0; 8]);
        assert!(matches!(
            head_average(&a, &g),
            Err(RelevanceError::ShapeMismatch { .. })
        ));
        let flat = Tensor::zeros(vec![2, 2]);
        assert!(head_average(&flat, &flat).is_err());
    }

    #[test]
    fn aggregate_of_nothing_is_identity() {
        let r = aggregate(&[], 4).unwrap();
        assert_eq!(r.matrix().data(), Tensor::eye(4).data());
        assert_eq!(r.layers(), 0);
        let zeros = vec![Tensor::zeros(vec![4, 4]); 3];
        let r = aggregate(&zeros, 4).unwrap();
        assert_eq!(r.matrix().data(), Tensor::eye(4).data());
    }

    #[test]
    fn aggregate_single_layer_hand_example() {
        let abar = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let r = aggregate(std::slice::from_ref(&abar), 2).unwrap();
        assert_eq!(r.matrix().data(), &[1.5, 0.5, 0.5, 1.5]);
    }

    #[test]
    fn aggregate_matches_product_oracle() {
        // R^L must equal (I+Ā^L)···(I+Ā^1) computed by an independent
        // triple-loop multiply.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..25 {
            let t = rng.random_range(2..=8usize);
            let layer_count = rng.random_range(1..=4usize);
            let layers: Vec<Tensor> =
                (0..layer_count).map(|_| random_nonneg(t, &mut rng)).collect();
            let got = aggregate(&layers, t).unwrap();

            let mut expected = vec![0.0; t * t];
            for i in 0..t {
                expected[i * t + i] = 1.0;
            }
            for abar in &layers {
                // expected = (I + abar) * expected, hand-rolled
                let mut next = vec![0.0; t * t];
                for i in 0..t {
                    for j in 0..t {
                        let mut acc = expected[i * t + j]; // the I part
                        for k in 0..t {
                            acc += abar.at2(i, k) * expected[k * t + j];
                        }
                        next[i * t + j] = acc;
                    }
                }
                expected = next;
            }
            for i in 0..t {
                for j in 0..t {
                    let diff = (got.matrix().at2(i, j) - expected[i * t + j]).abs();
                    assert!(diff < 1e-12, "case {case} entry ({i},{j}) off by {diff}");
                }
            }
        }
    }

    #[test]
    fn aggregate_rejects_inconsistent_sizes() {
        let layers = vec![Tensor::zeros(vec![3, 3]), Tensor::zeros(vec![4, 4])];
        assert!(matches!(
            aggregate(&layers, 3),
            Err(RelevanceError::ShapeMismatch { .. })
        ));
    }

    proptest! {
        // Monotone growth and the structural invariants, over random stacks.
        #[test]
        fn relevance_grows_monotonically(
            seed in 0u64..1000,
            t in 2usize..=8,
            layer_count in 1usize..=4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layers: Vec<Tensor> =
                (0..layer_count).map(|_| random_nonneg(t, &mut rng)).collect();
            let mut previous = aggregate(&[], t).unwrap();
            for l in 1..=layer_count {
                let current = aggregate(&layers[..l], t).unwrap();
                for i in 0..t {
                    for j in 0..t {
                        let now = current.matrix().at2(i, j);
                        let before = previous.matrix().at2(i, j);
                        prop_assert!(now >= before, "entry ({i},{j}) shrank at layer {l}");
                        let identity = if i == j { 1.0 } else { 0.0 };
                        prop_assert!(now >= identity, "R - I negative at ({i},{j})");
                    }
                }
                previous = current;
            }
        }
    }

    fn prepared(smiles: &str) -> TokenSequence {
        prepare_input(&tokenize(smiles).unwrap(), None).unwrap()
    }

    #[test]
    fn identity_matrix_extracts_to_zeros() {
        let seq = prepared("CCO"); // <REG> C C O
        let r = aggregate(&[], seq.len()).unwrap();
        let tokens = extract_reg(&r, &seq).unwrap();
        assert_eq!(tokens.len(), 3);
        assert!(tokens.iter().all(|t| t.raw_relevance == 0.0));
        assert_eq!(
            tokens.iter().map(|t| t.position).collect::<Vec<_>>(),
            [1, 2, 3]
        );
    }

    #[test]
    fn uniform_single_layer_extracts_equal_relevance() {
        let seq = prepared("CCO");
        let t = seq.len();
        let uniform = Tensor::filled(vec![t, t], 1.0 / t as f64);
        let r = aggregate(std::slice::from_ref(&uniform), t).unwrap();
        let tokens = extract_reg(&r, &seq).unwrap();
        let first = tokens[0].raw_relevance;
        assert!(first > 0.0);
        assert!(tokens.iter().all(|tok| (tok.raw_relevance - first).abs() < 1e-15));
    }

    #[test]
    fn extract_reg_validates_inputs() {
        let bare = tokenize("CCO").unwrap();
        let r = aggregate(&[], bare.len()).unwrap();
        assert!(matches!(extract_reg(&r, &bare), Err(RelevanceError::MissingReg)));

        let seq = prepared("CCO");
        let wrong = aggregate(&[], seq.len() + 2).unwrap();
        assert!(matches!(
            extract_reg(&wrong, &seq),
            Err(RelevanceError::LengthMismatch { matrix: 6, tokens: 4 })
        ));
    }

    #[test]
    fn scaling_every_layer_preserves_single_layer_ranking() {
        let seq = prepared("OCC(O)=O");
        let t = seq.len();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..20 {
            let abar = random_nonneg(t, &mut rng);
            let scaled = abar.scale(3.7);
            let base = extract_reg(&aggregate(std::slice::from_ref(&abar), t).unwrap(), &seq).unwrap();
            let scaled =
                extract_reg(&aggregate(std::slice::from_ref(&scaled), t).unwrap(), &seq).unwrap();
            let rank = |v: &[TokenRelevance]| {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                idx.sort_by(|&a, &b| v[a].raw_relevance.total_cmp(&v[b].raw_relevance));
                idx
            };
            assert_eq!(rank(&base), rank(&scaled));
        }
    }

    #[test]
    fn atom_scaling_hits_zero_half_one() {
        let graph = parse(&tokenize("CCO").unwrap()).unwrap();
        let entries: Vec<TokenRelevance> = [2.0, 4.0, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &raw)| TokenRelevance {
                position: i + 1,
                text: if i == 2 { "O" } else { "C" }.into(),
                kind: TokenKind::Atom,
                raw_relevance: raw,
            })
            .collect();
        let rel = atom_relevance(&entries, &graph, 1).unwrap();
        let scaled: Vec<f64> = rel.atoms.iter().map(|a| a.scaled).collect();
        assert_eq!(scaled, [0.0, 0.5, 1.0]);
        assert_eq!(rel.atoms[2].element, "O");
        assert_eq!(rel.atoms[2].token_position, 3);
    }

    #[test]
    fn tied_atoms_all_scale_to_half() {
        let graph = parse(&tokenize("CCO").unwrap()).unwrap();
        let entries: Vec<TokenRelevance> = (0..3)
            .map(|i| TokenRelevance {
                position: i + 1,
                text: "C".into(),
                kind: TokenKind::Atom,
                raw_relevance: 0.25,
            })
            .collect();
        let rel = atom_relevance(&entries, &graph, 1).unwrap();
        assert!(rel.atoms.iter().all(|a| a.scaled == 0.5));
    }

    #[test]
    fn missing_or_non_atom_positions_are_inconsistencies() {
        let graph = parse(&tokenize("CCO").unwrap()).unwrap();
        let short = vec![TokenRelevance {
            position: 1,
            text: "C".into(),
            kind: TokenKind::Atom,
            raw_relevance: 0.1,
        }];
        assert!(matches!(
            atom_relevance(&short, &graph, 1),
            Err(RelevanceError::MapInconsistency { atom: 1, .. })
        ));

        let mislabeled: Vec<TokenRelevance> = (0..3)
            .map(|i| TokenRelevance {
                position: i + 1,
                text: "=".into(),
                kind: TokenKind::Bond,
                raw_relevance: 0.1,
            })
            .collect();
        assert!(matches!(
            atom_relevance(&mislabeled, &graph, 1),
            Err(RelevanceError::MapInconsistency { atom: 0, .. })
        ));
    }

    fn desk_model() -> Model {
        let vocab = Vocabulary::base();
        Model::init(ModelConfig::desk(vocab.len()), vocab, 33).unwrap()
    }

    #[test]
    fn record_without_gradients_is_rejected() {
        let model = desk_model();
        let seq = prepared("CCO");
        let (_, record) = encoder::forward(&model, &seq, None).unwrap();
        assert!(matches!(
            relevance_from_record(&record),
            Err(RelevanceError::MissingGradients)
        ));
    }

    #[test]
    fn glycolic_acid_in_ethanol_end_to_end() {
        let model = desk_model();
        let ex = explain(&model, "OCC(O)=O", Some("CCO"), None).unwrap();
        assert_eq!(ex.sequence.len(), 13);
        // 12 extracted tokens: everything but <REG>, including <SEP>.
        assert_eq!(ex.report.tokens.len(), 12);
        assert!(ex.report.tokens.iter().any(|t| t.text == crate::smiles::SEP));
        assert!(ex.report.tokens.iter().all(|t| t.raw_relevance >= 0.0));
        // 5 solute atoms + 3 solvent atoms.
        assert_eq!(ex.solute.relevance.atoms.len(), 5);
        assert_eq!(ex.solvent.as_ref().unwrap().relevance.atoms.len(), 3);
        assert_eq!(ex.report.atoms.len(), 8);
        assert!(ex.report.prediction.is_finite());
        // Scaled weights live in [0, 1] and hit the ends per molecule
        // (or tie at 0.5).
        for mol in [&ex.solute.relevance, &ex.solvent.as_ref().unwrap().relevance] {
            let lo = mol.atoms.iter().map(|a| a.scaled).fold(f64::INFINITY, f64::min);
            let hi = mol.atoms.iter().map(|a| a.scaled).fold(f64::NEG_INFINITY, f64::max);
            assert!((lo == 0.0 && hi == 1.0) || (lo == 0.5 && hi == 0.5));
        }
        // R - I display form zeroes the diagonal delta.
        let disp = ex.relevance.minus_identity();
        for i in 0..ex.relevance.token_count() {
            assert!((disp.at2(i, i) - (ex.relevance.matrix().at2(i, i) - 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn trained_style_extraction_is_nonuniform_for_untrained_models_too() {
        // Property check only (no pinned values): entries nonnegative and
        // not all equal for a real pass on "OCC(O)=O".
        let model = desk_model();
        let ex = explain(&model, "OCC(O)=O", None, None).unwrap();
        let raws: Vec<f64> = ex.report.tokens.iter().map(|t| t.raw_relevance).collect();
        assert!(raws.iter().all(|r| *r >= 0.0));
        let first = raws[0];
        assert!(raws.iter().any(|r| (r - first).abs() > 1e-12));
    }

    #[test]
    fn report_serializes_with_stable_field_names() {
        let model = desk_model();
        let ex = explain(&model, "OCC(O)=O", Some("CCO"), None).unwrap();
        let value: serde_json::Value = serde_json::to_value(&ex.report).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["atoms", "prediction", "smiles", "solvent_smiles", "tokens"]);
        let token = value["tokens"][0].as_object().unwrap();
        let mut tkeys: Vec<&str> = token.keys().map(String::as_str).collect();
        tkeys.sort_unstable();
        assert_eq!(tkeys, ["kind", "raw_relevance", "text"]);
        let atom = value["atoms"][0].as_object().unwrap();
        let mut akeys: Vec<&str> = atom.keys().map(String::as_str).collect();
        akeys.sort_unstable();
        assert_eq!(akeys, ["element", "index", "raw", "scaled", "token_position"]);
        // No temperature key when none was given.
        assert!(!obj.contains_key("temperature"));

        // Round-trips through JSON.
        let back: RelevanceReport = serde_json::from_value(value).unwrap();
        assert_eq!(back.atoms, ex.report.atoms);
    }
}
