//! SVG 1.1 document builders.
//!
//! Every builder emits a complete standalone document (`<?xml ...?>` header,
//! `xmlns`, `viewBox`) from plain string formatting with fixed float
//! precision, so identical inputs always yield byte-identical output.

use std::fmt::Write as _;

use crate::relevance::{AtomRelevance, RelevanceMatrix, TokenRelevance};
use crate::tensor::Tensor;

use super::{Colormap, Depiction, RenderError};
use crate::smiles::BondOrder;

/// One heatmap panel: a square matrix with the same token labels on both
/// axes.
#[derive(Debug, Clone)]
pub struct HeatmapSpec {
    /// The matrix to draw; must be square and match `labels`.
    pub matrix: Tensor,
    /// One label per row/column.
    pub labels: Vec<String>,
    /// Panel title.
    pub title: String,
    /// Color mapping; heatmaps default to light = large.
    pub colormap: Colormap,
    /// Normalization range; `None` min-max normalizes this panel alone.
    /// Sharing one range across panels makes them comparable.
    pub range: Option<(f64, f64)>,
}

impl HeatmapSpec {
    /// A standalone panel with light-equals-large coloring and
    /// self-normalization.
    pub fn new(matrix: Tensor, labels: Vec<String>, title: impl Into<String>) -> Self {
        HeatmapSpec {
            matrix,
            labels,
            title: title.into(),
            colormap: Colormap::GreenReversed,
            range: None,
        }
    }
}

const CELL: f64 = 22.0;
const PANEL_LEFT: f64 = 64.0;
const PANEL_TOP: f64 = 88.0;
const PANEL_RIGHT: f64 = 16.0;
const PANEL_BOTTOM: f64 = 14.0;

/// Escape text for XML content and attribute values.
fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Fixed two-decimal coordinate formatting keeps documents deterministic.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n\
         {body}</svg>\n",
        w = px(width),
        h = px(height),
    )
}

// ---------------------------------------------------------------------------
// Molecule depictions
// ---------------------------------------------------------------------------

/// Render a molecule with one green relevance highlight behind every atom.
///
/// Highlight color and opacity both follow the atom's scaled relevance, so a
/// fully relevant atom gets the darkest, most opaque disc and an irrelevant
/// one fades to nothing (the element is still emitted — exactly one
/// `class="highlight"` circle per atom). `colorbar` appends the ramp with an
/// "a.u." caption. `relevance` must cover each depicted atom exactly once.
pub fn molecule_svg(
    depiction: &Depiction,
    relevance: &AtomRelevance,
    colorbar: bool,
) -> Result<String, RenderError> {
    let n = depiction.atom_count();
    let mut scaled = vec![None; n];
    for weight in &relevance.atoms {
        if weight.atom_index >= n || scaled[weight.atom_index].is_some() {
            return Err(RenderError::AtomCountMismatch { atoms: n, weights: relevance.atoms.len() });
        }
        scaled[weight.atom_index] = Some(weight.scaled.clamp(0.0, 1.0));
    }
    let scaled: Vec<f64> = match scaled.into_iter().collect::<Option<Vec<_>>>() {
        Some(s) => s,
        None => {
            return Err(RenderError::AtomCountMismatch { atoms: n, weights: relevance.atoms.len() })
        }
    };

    let plot = 360.0;
    let margin = 30.0;
    let width = plot + 2.0 * margin + if colorbar { 80.0 } else { 0.0 };
    let height = plot + 2.0 * margin;

    let min_x = depiction.coordinates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let max_x = depiction.coordinates.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = depiction.coordinates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let max_y = depiction.coordinates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);
    let scale = (plot / span_x).min(plot / span_y).min(70.0);
    let ox = margin + (plot - span_x * scale) / 2.0;
    let oy = margin + (plot - span_y * scale) / 2.0;
    let map = |&(x, y): &(f64, f64)| -> (f64, f64) {
        (ox + (x - min_x) * scale, oy + (max_y - y) * scale)
    };

    let highlight_r = (0.34 * scale).clamp(10.0, 40.0);
    let mut body = String::new();

    for (i, coord) in depiction.coordinates.iter().enumerate() {
        let (cx, cy) = map(coord);
        let _ = writeln!(
            body,
            "<circle class=\"highlight\" cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\" \
             fill-opacity=\"{:.4}\"/>",
            px(cx),
            px(cy),
            px(highlight_r),
            Colormap::Green.color(scaled[i]),
            scaled[i],
        );
    }

    let offset = (0.09 * scale).clamp(2.0, 6.0);
    for &(a, b, order) in &depiction.bonds {
        let pa = map(&depiction.coordinates[a]);
        let pb = map(&depiction.coordinates[b]);
        let dx = pb.0 - pa.0;
        let dy = pb.1 - pa.1;
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        let perp = (-dy / len, dx / len);
        let line = |shift: f64, dash: bool, body: &mut String| {
            let _ = writeln!(
                body,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" \
                 stroke-width=\"2\"{}/>",
                px(pa.0 + perp.0 * shift),
                px(pa.1 + perp.1 * shift),
                px(pb.0 + perp.0 * shift),
                px(pb.1 + perp.1 * shift),
                if dash { " stroke-dasharray=\"4 3\"" } else { "" },
            );
        };
        match order {
            BondOrder::Single => line(0.0, false, &mut body),
            BondOrder::Double => {
                line(-offset / 2.0, false, &mut body);
                line(offset / 2.0, false, &mut body);
            }
            BondOrder::Triple => {
                line(-offset, false, &mut body);
                line(0.0, false, &mut body);
                line(offset, false, &mut body);
            }
            BondOrder::Aromatic => {
                line(0.0, false, &mut body);
                line(offset, true, &mut body);
            }
        }
    }

    for (i, coord) in depiction.coordinates.iter().enumerate() {
        let (cx, cy) = map(coord);
        let _ = writeln!(
            body,
            "<circle cx=\"{}\" cy=\"{}\" r=\"9\" fill=\"#ffffff\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"12\" fill=\"#1a1a1a\">{}</text>",
            px(cx),
            px(cy),
            px(cx),
            px(cy + 4.0),
            escape(&depiction.labels[i]),
        );
    }

    if colorbar {
        body.push_str(&colorbar_fragment(
            width - 62.0,
            margin + 20.0,
            plot - 40.0,
            Colormap::Green,
        ));
    }

    Ok(document(width, height, &body))
}

/// Vertical ramp legend captioned in arbitrary units.
fn colorbar_fragment(x: f64, y: f64, height: f64, colormap: Colormap) -> String {
    let mut out = String::new();
    let steps = 64;
    let cell_h = height / steps as f64;
    // Painted as discrete slices rather than a gradient element so the ramp
    // math is exactly the one used for data colors.
    for i in 0..steps {
        // Top slice is the largest value.
        let v = 1.0 - (i as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            out,
            "<rect class=\"colorbar\" x=\"{}\" y=\"{}\" width=\"18\" height=\"{}\" \
             fill=\"{}\" stroke=\"none\"/>",
            px(x),
            px(y + i as f64 * cell_h),
            px(cell_h + 0.5),
            colormap.color(v),
        );
    }
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"18\" height=\"{}\" fill=\"none\" \
         stroke=\"#333333\" stroke-width=\"1\"/>",
        px(x),
        px(y),
        px(height),
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         fill=\"#1a1a1a\">1</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         fill=\"#1a1a1a\">0</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         fill=\"#1a1a1a\">a.u.</text>",
        px(x + 24.0),
        px(y + 10.0),
        px(x + 24.0),
        px(y + height),
        px(x - 4.0),
        px(y - 8.0),
    );
    out
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

fn heatmap_panel_size(t: usize) -> (f64, f64) {
    (
        PANEL_LEFT + t as f64 * CELL + PANEL_RIGHT,
        PANEL_TOP + t as f64 * CELL + PANEL_BOTTOM,
    )
}

/// Emit one heatmap panel with its top-left corner at the current origin.
fn heatmap_fragment(spec: &HeatmapSpec, out: &mut String) -> Result<(), RenderError> {
    let rows = spec.matrix.rows();
    let cols = spec.matrix.cols();
    if rows == 0 || cols == 0 {
        return Err(RenderError::Empty("heatmap matrix"));
    }
    if rows != cols || spec.labels.len() != rows {
        return Err(RenderError::LabelCountMismatch { rows, cols, labels: spec.labels.len() });
    }
    let t = rows;
    let (vmin, vmax) = match spec.range {
        Some(range) => range,
        None => {
            let lo = spec.matrix.data().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = spec.matrix.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    let span = vmax - vmin;
    let norm = |v: f64| if span.abs() < 1e-300 { 0.5 } else { ((v - vmin) / span).clamp(0.0, 1.0) };

    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"16\" font-family=\"sans-serif\" font-size=\"13\" \
         font-weight=\"bold\" fill=\"#1a1a1a\">{}</text>",
        px(PANEL_LEFT),
        escape(&spec.title),
    );
    for q in 0..t {
        for k in 0..t {
            let value = spec.matrix.at2(q, k);
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" \
                 fill=\"{}\" stroke=\"#ffffff\" stroke-width=\"0.5\">\
                 <title>{value:.6}</title></rect>",
                px(PANEL_LEFT + k as f64 * CELL),
                px(PANEL_TOP + q as f64 * CELL),
                px(CELL),
                px(CELL),
                spec.colormap.color(norm(value)),
            );
        }
    }
    for (i, label) in spec.labels.iter().enumerate() {
        let cx = PANEL_LEFT + (i as f64 + 0.5) * CELL;
        let cy = PANEL_TOP + (i as f64 + 0.5) * CELL;
        // Column labels above the grid, slanted; row labels on the left.
        let _ = writeln!(
            out,
            "<text x=\"0\" y=\"0\" transform=\"translate({},{}) rotate(-60)\" \
             text-anchor=\"start\" font-family=\"monospace\" font-size=\"11\" \
             fill=\"#1a1a1a\">{}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"monospace\" \
             font-size=\"11\" fill=\"#1a1a1a\">{}</text>",
            px(cx + 3.0),
            px(PANEL_TOP - 6.0),
            escape(label),
            px(PANEL_LEFT - 6.0),
            px(cy + 4.0),
            escape(label),
        );
    }
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#333333\" stroke-width=\"1\"/>",
        px(PANEL_LEFT),
        px(PANEL_TOP),
        px(t as f64 * CELL),
        px(t as f64 * CELL),
    );
    Ok(())
}

/// Render a single heatmap panel as a standalone document.
pub fn heatmap_svg(spec: &HeatmapSpec) -> Result<String, RenderError> {
    let t = spec.matrix.rows();
    let (w, h) = heatmap_panel_size(t);
    let mut body = String::new();
    heatmap_fragment(spec, &mut body)?;
    Ok(document(w, h, &body))
}

/// Render the full attribution figure: one panel per layer's clamped,
/// head-averaged attention, then the aggregated relevance as `R - I`, all
/// sharing one normalization with light = large.
///
/// `layer_averages` holds the per-layer `t x t` matrices (see
/// [`crate::relevance::layer_averages`]); `labels` names the `t` token
/// positions on both axes of every panel.
pub fn attention_figure_svg(
    layer_averages: &[Tensor],
    relevance: &RelevanceMatrix,
    labels: &[String],
) -> Result<String, RenderError> {
    let t = relevance.token_count();
    if labels.len() != t {
        return Err(RenderError::LabelCountMismatch { rows: t, cols: t, labels: labels.len() });
    }
    let minus_identity = relevance.minus_identity();
    let mut matrices: Vec<(&Tensor, String)> = layer_averages
        .iter()
        .enumerate()
        .map(|(l, m)| (m, format!("layer {} attention", l + 1)))
        .collect();
    matrices.push((&minus_identity, "relevance (R - I)".to_string()));

    let mut vmax = f64::NEG_INFINITY;
    for (matrix, _) in &matrices {
        if matrix.rows() != t || matrix.cols() != t {
            return Err(RenderError::LabelCountMismatch {
                rows: matrix.rows(),
                cols: matrix.cols(),
                labels: labels.len(),
            });
        }
        vmax = matrix.data().iter().copied().fold(vmax, f64::max);
    }
    if vmax <= 0.0 {
        vmax = 1.0;
    }

    let (panel_w, panel_h) = heatmap_panel_size(t);
    let per_row = matrices.len().min(3);
    let rows = matrices.len().div_ceil(per_row);
    let width = per_row as f64 * panel_w + 10.0;
    let height = rows as f64 * panel_h + 40.0;

    let mut body = String::new();
    for (i, (matrix, title)) in matrices.iter().enumerate() {
        let x = (i % per_row) as f64 * panel_w + 5.0;
        let y = (i / per_row) as f64 * panel_h + 5.0;
        let spec = HeatmapSpec {
            matrix: (*matrix).clone(),
            labels: labels.to_vec(),
            title: title.clone(),
            colormap: Colormap::GreenReversed,
            range: Some((0.0, vmax)),
        };
        let _ = writeln!(body, "<g class=\"panel\" transform=\"translate({},{})\">", px(x), px(y));
        heatmap_fragment(&spec, &mut body)?;
        body.push_str("</g>\n");
    }
    let _ = writeln!(
        body,
        "<text x=\"10\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         fill=\"#555555\">shared scale 0 to {vmax:.4}, light = large</text>",
        px(height - 12.0),
    );
    Ok(document(width, height, &body))
}

/// Render token relevance as a strip of colored boxes in sequence order.
///
/// Box color follows the green ramp over min-max-normalized raw relevance
/// (dark = most relevant; all 0.5 on an exact tie).
pub fn token_strip_svg(tokens: &[TokenRelevance]) -> Result<String, RenderError> {
    if tokens.is_empty() {
        return Err(RenderError::Empty("token relevance"));
    }
    let lo = tokens.iter().map(|t| t.raw_relevance).fold(f64::INFINITY, f64::min);
    let hi = tokens.iter().map(|t| t.raw_relevance).fold(f64::NEG_INFINITY, f64::max);
    let norm = |v: f64| if hi == lo { 0.5 } else { (v - lo) / (hi - lo) };

    let mut body = String::new();
    let mut x = 8.0;
    let (y, h) = (8.0, 34.0);
    for token in tokens {
        let w = 18.0 + 9.0 * token.text.chars().count() as f64;
        let scaled = norm(token.raw_relevance);
        let text_fill = if scaled > 0.55 { "#ffffff" } else { "#1a1a1a" };
        let _ = writeln!(
            body,
            "<rect class=\"token\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" rx=\"3\" \
             fill=\"{}\" stroke=\"#333333\" stroke-width=\"0.5\">\
             <title>{:.6}</title></rect>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"monospace\" \
             font-size=\"13\" fill=\"{}\">{}</text>",
            px(x),
            px(y),
            px(w),
            px(h),
            Colormap::Green.color(scaled),
            token.raw_relevance,
            px(x + w / 2.0),
            px(y + h / 2.0 + 4.0),
            text_fill,
            escape(&token.text),
        );
        x += w + 4.0;
    }
    Ok(document(x + 4.0, h + 16.0, &body))
}

// ---------------------------------------------------------------------------
// Parity plots
// ---------------------------------------------------------------------------

/// Least-squares line `y = slope * x + intercept`.
///
/// Zero variance in `xs` (including a single point) degenerates to a flat
/// line through the mean of `ys`.
pub fn least_squares_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), RenderError> {
    if xs.len() != ys.len() {
        return Err(RenderError::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.is_empty() {
        return Err(RenderError::Empty("fit data"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if var > 0.0 { cov / var } else { 0.0 };
    Ok((slope, my - slope * mx))
}

/// Scatter predictions against targets with a dashed identity line, a solid
/// least-squares fit, and a `slope = ..., n = ...` annotation.
///
/// Targets go on the x axis, predictions on y, both on one shared scale so
/// the identity line is the 45° diagonal.
pub fn parity_plot_svg(predictions: &[f64], targets: &[f64]) -> Result<String, RenderError> {
    if predictions.len() != targets.len() {
        return Err(RenderError::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(RenderError::Empty("parity data"));
    }
    let (slope, intercept) = least_squares_fit(targets, predictions)?;

    let (width, height) = (440.0, 440.0);
    let (left, top, plot) = (60.0, 20.0, 360.0);
    let all = predictions.iter().chain(targets);
    let lo0 = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi0 = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi0 > lo0 { 0.05 * (hi0 - lo0) } else { 1.0 };
    let (lo, hi) = (lo0 - pad, hi0 + pad);
    let to_x = |v: f64| left + (v - lo) / (hi - lo) * plot;
    let to_y = |v: f64| top + plot - (v - lo) / (hi - lo) * plot;

    let mut body = String::new();
    let _ = writeln!(
        body,
        "<defs><clipPath id=\"plot-area\"><rect x=\"{}\" y=\"{}\" width=\"{}\" \
         height=\"{}\"/></clipPath></defs>",
        px(left),
        px(top),
        px(plot),
        px(plot),
    );

    for i in 0..5 {
        let value = lo + (hi - lo) * i as f64 / 4.0;
        let (tx, ty) = (to_x(value), to_y(value));
        let _ = writeln!(
            body,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#cccccc\" stroke-width=\"1\"/>\n\
             <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#cccccc\" stroke-width=\"1\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\" fill=\"#1a1a1a\">{value:.1}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\" fill=\"#1a1a1a\">{value:.1}</text>",
            px(tx),
            px(top),
            px(tx),
            px(top + plot),
            px(left),
            px(ty),
            px(left + plot),
            px(ty),
            px(tx),
            px(top + plot + 16.0),
            px(left - 6.0),
            px(ty + 4.0),
        );
    }

    // Identity line across the shared range.
    let _ = writeln!(
        body,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888888\" stroke-width=\"1.5\" \
         stroke-dasharray=\"6 4\"/>",
        px(to_x(lo)),
        px(to_y(lo)),
        px(to_x(hi)),
        px(to_y(hi)),
    );
    // Fit line, clipped to the plot area.
    let _ = writeln!(
        body,
        "<line clip-path=\"url(#plot-area)\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" \
         stroke=\"#006d2c\" stroke-width=\"2\"/>",
        px(to_x(lo)),
        px(to_y(slope * lo + intercept)),
        px(to_x(hi)),
        px(to_y(slope * hi + intercept)),
    );

    for (&pred, &target) in predictions.iter().zip(targets) {
        let _ = writeln!(
            body,
            "<circle class=\"point\" cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"#41ab5d\" \
             fill-opacity=\"0.75\" stroke=\"#1a5c31\" stroke-width=\"0.75\"/>",
            px(to_x(target)),
            px(to_y(pred)),
        );
    }

    let _ = writeln!(
        body,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\" \
         stroke-width=\"1\"/>",
        px(left),
        px(top),
        px(plot),
        px(plot),
    );
    let _ = writeln!(
        body,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"#1a1a1a\">slope = {slope:.3}, n = {count}</text>",
        px(left + 10.0),
        px(top + 18.0),
        count = predictions.len(),
    );
    let _ = writeln!(
        body,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\" fill=\"#1a1a1a\">target</text>\n\
         <text x=\"0\" y=\"0\" transform=\"translate(14,{}) rotate(-90)\" \
         text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"#1a1a1a\">prediction</text>",
        px(left + plot / 2.0),
        px(top + plot + 34.0),
        px(top + plot / 2.0),
    );
    Ok(document(width, height, &body))
}
