//! Check analytic gradients against central finite differences.
//!
//! Builds a small two-layer model, computes the Huber-loss gradient of
//! every parameter with the tape, then re-derives a sample of entries by
//! perturbing the parameter and re-running the forward pass. Also checks a
//! few entries of `dy/dA` via the attention-override forward.
//!
//! ```text
//! cargo run -p molgrad --example gradient_check
//! ```

use molgrad::encoder::{
    self, forward_with_attention_override, loss_and_gradients, Model, ModelConfig,
};
use molgrad::smiles::{prepare_input, tokenize, Vocabulary};

const STEP: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::base();
    let mut config = ModelConfig::desk(vocab.len());
    config.num_layers = 2;
    config.num_heads = 2;
    config.head_dim = 8;
    config.ffn_dim = 16;
    let model = Model::init(config, vocab, 42)?;

    let seq = prepare_input(&tokenize("OCC(O)=O")?, Some(&tokenize("CCO")?))?;
    let target = 0.3;
    let grads = loss_and_gradients(&model, &seq, None, target, 1.0)?;
    println!(
        "prediction {:.6}, loss {:.6}, {} parameter tensors",
        grads.prediction,
        grads.loss,
        grads.parameter_gradients.len()
    );

    // Sample a few entries from every parameter tensor and compare against
    // (loss(p + h) - loss(p - h)) / 2h.
    let mut worst = 0.0_f64;
    let names: Vec<String> =
        model.named_parameters().iter().map(|(n, _)| n.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        let numel = model.named_parameters()[pi].1.numel();
        let probes = [0, numel / 2, numel - 1];
        for &k in probes.iter().take(if numel == 1 { 1 } else { 3 }) {
            let mut plus = model.clone();
            plus.parameters_mut()[pi].data_mut()[k] += STEP;
            let mut minus = model.clone();
            minus.parameters_mut()[pi].data_mut()[k] -= STEP;
            let loss_plus = loss_and_gradients(&plus, &seq, None, target, 1.0)?.loss;
            let loss_minus = loss_and_gradients(&minus, &seq, None, target, 1.0)?.loss;
            let numeric = (loss_plus - loss_minus) / (2.0 * STEP);
            let analytic = grads.parameter_gradients[pi].data()[k];
            let err = relative_error(analytic, numeric);
            worst = worst.max(err);
            if err > 1e-3 {
                println!("  MISMATCH {name}[{k}]: analytic {analytic:.3e} vs fd {numeric:.3e}");
            }
        }
    }
    println!("parameter gradients: worst sampled relative error {worst:.3e}");

    // dy/dA: freeze layers up to l at their recorded values, bump one entry
    // of layer l, and let the layers past l respond — the recorded gradient
    // is the full derivative through every downstream path.
    let (_, record) = encoder::predict_with_gradients(&model, &seq, None)?;
    let t = record.token_count();
    let mut worst_a = 0.0_f64;
    for layer in 0..record.num_layers() {
        let grad = record.gradient(layer).expect("gradients recorded");
        for &(h, i, j) in &[(0, 0, 0), (1, t / 2, t - 1)] {
            let mut prefix: Vec<_> =
                (0..=layer).map(|l| record.attention(l).clone()).collect();
            let center = prefix[layer].at3(h, i, j);
            prefix[layer].set3(h, i, j, center + STEP);
            let y_plus = forward_with_attention_override(&model, &seq, None, &prefix)?;
            prefix[layer].set3(h, i, j, center - STEP);
            let y_minus = forward_with_attention_override(&model, &seq, None, &prefix)?;
            let numeric = (y_plus - y_minus) / (2.0 * STEP);
            worst_a = worst_a.max(relative_error(grad.at3(h, i, j), numeric));
        }
    }
    println!("attention gradients dy/dA: worst sampled relative error {worst_a:.3e}");

    assert!(worst < 1e-3 && worst_a < 1e-3, "finite differences disagree");
    println!("all sampled gradients agree within 1e-3");
    Ok(())
}
