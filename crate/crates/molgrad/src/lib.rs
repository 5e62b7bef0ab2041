//! Attention-gradient relevance attribution for small chemical language models.
//!
//! `molgrad` trains a compact self-attention encoder on SMILES strings to
//! predict solubility, then attributes each prediction back to individual
//! atoms by propagating gradient-weighted attention through the layer stack.
//! Everything numeric is built on a small reverse-mode autodiff tape over
//! 64-bit floats, so every quantity the attribution rules consume is exact
//! with respect to the forward pass that produced it.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] — dense row-major `f64` tensors and the autodiff [`tensor::Tape`].
//! * [`smiles`] — SMILES tokenizer, molecular-graph parser, and vocabulary.
//! * [`encoder`] — the transformer encoder, regression head, and checkpoint format.
//! * [`relevance`] — gradient-weighted attention aggregation and atom attribution.
//! * [`data`] — CSV loading, dataset splits, label scaling, and metrics.
//! * [`training`] — AdamW, Huber loss, the training loop, and seed suites.
//! * [`render`] — deterministic 2-D depiction and SVG emitters.
//! * [`cli`] — the `molgrad` command-line interface built on the library.
//!
//! Each major capability also has a runnable demo under `examples/`; start
//! with `cargo run --example explain_molecule` for the full pipeline.

pub mod cli;
pub mod data;
pub mod encoder;
pub mod relevance;
pub mod render;
pub mod training;
pub mod smiles;
pub mod tensor;
