//! Walk the relevance rollout by hand and compare it to the library.
//!
//! Runs forward + backward on a solute/solvent pair, averages the
//! gradient-weighted attention heads per layer, rolls the layers up as
//! `R <- R + A_bar * R` starting from the identity, and checks the result
//! against both the library's aggregation and the closed-form product
//! `(I + A_bar_L) ... (I + A_bar_1)`.
//!
//! ```text
//! cargo run -p molgrad --example relevance_rollout
//! ```

use molgrad::encoder::{predict_with_gradients, Model, ModelConfig};
use molgrad::relevance::{extract_reg, layer_averages, relevance_from_record};
use molgrad::smiles::{prepare_input, tokenize, Vocabulary};
use molgrad::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::base();
    let mut config = ModelConfig::desk(vocab.len());
    config.num_layers = 3;
    let model = Model::init(config, vocab, 7)?;

    let seq = prepare_input(&tokenize("OCC(O)=O")?, Some(&tokenize("CCO")?))?;
    let (prediction, record) = predict_with_gradients(&model, &seq, None)?;
    println!("prediction (raw units): {prediction:.6}");

    let averaged = layer_averages(&record)?;
    let t = record.token_count();

    // Manual rollout: R starts at I, each layer adds its averaged update.
    let mut rollout = Tensor::eye(t);
    for a_bar in &averaged {
        let update = a_bar.matmul(&rollout)?;
        rollout = rollout.add(&update)?;
    }

    // Closed form: the same thing as a product of (I + A_bar) factors.
    let mut product = Tensor::eye(t);
    for a_bar in &averaged {
        product = Tensor::eye(t).add(a_bar)?.matmul(&product)?;
    }

    let relevance = relevance_from_record(&record)?;
    let max_diff = |a: &Tensor, b: &Tensor| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0_f64, f64::max)
    };
    println!("max |library - manual rollout|  = {:.3e}", max_diff(relevance.matrix(), &rollout));
    println!("max |library - matrix product| = {:.3e}", max_diff(relevance.matrix(), &product));

    // The <REG> row, dropped specials, is the per-token attribution.
    let tokens = extract_reg(&relevance, &seq)?;
    let mut ranked: Vec<_> = tokens.iter().collect();
    ranked.sort_by(|a, b| b.raw_relevance.total_cmp(&a.raw_relevance));
    println!("tokens by relevance (top 5):");
    for tok in ranked.iter().take(5) {
        println!("  {:>4}  pos {:>2}  {:.6}", tok.text, tok.position, tok.raw_relevance);
    }
    Ok(())
}
