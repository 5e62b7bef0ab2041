//! Parity plot and heatmap rendering without a trained model.
//!
//! Feeds synthetic predictions (targets plus structured noise) to the
//! parity-plot builder and renders a small labelled heatmap, showing the
//! deterministic SVG output used for run reports. Output lands in
//! `target/example-artifacts/render_parity/`.
//!
//! ```text
//! cargo run -p molgrad --example render_parity
//! ```

use std::fs;
use std::path::Path;

use molgrad::render::{heatmap_svg, least_squares_fit, parity_plot_svg, HeatmapSpec};
use molgrad::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = Path::new("target/example-artifacts/render_parity");
    fs::create_dir_all(out_dir)?;

    // Synthetic scatter: y = x + bounded deterministic noise.
    let targets: Vec<f64> = (0..60).map(|i| -6.0 + 0.12 * i as f64).collect();
    let predictions: Vec<f64> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| t + 0.45 * (i as f64 * 1.7).sin())
        .collect();

    let (slope, intercept) = least_squares_fit(&targets, &predictions)?;
    println!("fit: prediction = {slope:.3} * target + {intercept:.3}");

    let parity = parity_plot_svg(&predictions, &targets)?;
    fs::write(out_dir.join("parity.svg"), parity)?;

    // A labelled heatmap from raw numbers, light = large.
    let t = 5;
    let mut matrix = Tensor::zeros(vec![t, t]);
    for i in 0..t {
        for j in 0..t {
            matrix.set2(i, j, 1.0 / (1.0 + (i as f64 - j as f64).abs()));
        }
    }
    let labels: Vec<String> = ["<REG>", "O", "C", "C", "O"].iter().map(|s| s.to_string()).collect();
    let spec = HeatmapSpec::new(matrix, labels, "banded example");
    fs::write(out_dir.join("heatmap.svg"), heatmap_svg(&spec)?)?;

    println!("artifacts in {}", out_dir.display());
    Ok(())
}
