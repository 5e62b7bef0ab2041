//! Paper-style figures as SVG 1.1 documents: molecule depictions with green
//! relevance highlights, attention/relevance heatmaps, token strips, and
//! parity plots.
//!
//! All rendering is deterministic — identical inputs produce byte-identical
//! documents — and every factory returns a plain `String` of XML.
//!
//! # Palette
//!
//! One 9-step light-green sequential ramp drives every figure, linearly
//! interpolated between these stops (light to dark):
//!
//! `#f7fcf5 #e5f5e0 #c7e9c0 #a1d99b #74c476 #41ab5d #238b45 #006d2c #00441b`
//!
//! Molecule highlights use it dark-end-high (more relevance, deeper green);
//! heatmaps use it reversed, light = large, so strong attention reads as
//! bright cells on a dark field.

mod layout;
mod svg;

pub use layout::{layout, Depiction};
pub use svg::{
    attention_figure_svg, heatmap_svg, least_squares_fit, molecule_svg, parity_plot_svg,
    token_strip_svg, HeatmapSpec,
};

use thiserror::Error;

/// The 9 ramp stops, light to dark.
pub const GREEN_RAMP: [&str; 9] = [
    "#f7fcf5", "#e5f5e0", "#c7e9c0", "#a1d99b", "#74c476", "#41ab5d", "#238b45", "#006d2c",
    "#00441b",
];

/// Errors from layout or figure generation.
#[derive(Debug, Error)]
pub enum RenderError {
    /// The molecular graph is not a single connected component.
    #[error("cannot lay out a disconnected graph (atom {unreached} unreachable from atom 0)")]
    Disconnected {
        /// An atom BFS could not reach.
        unreached: usize,
    },
    /// More atoms than the layout is rated for.
    #[error("graph has {0} atoms; layout handles at most 100")]
    TooManyAtoms(usize),
    /// Nothing to render.
    #[error("empty {0}")]
    Empty(&'static str),
    /// Relevance entries do not cover the depicted atoms.
    #[error("depiction has {atoms} atoms but relevance covers {weights}")]
    AtomCountMismatch {
        /// Atoms in the depiction.
        atoms: usize,
        /// Relevance entries supplied.
        weights: usize,
    },
    /// Axis labels do not match the matrix.
    #[error("matrix is {rows}x{cols} but {labels} labels were given")]
    LabelCountMismatch {
        /// Matrix rows.
        rows: usize,
        /// Matrix columns.
        cols: usize,
        /// Labels supplied.
        labels: usize,
    },
    /// Paired vectors of different lengths.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch {
        /// First vector length.
        left: usize,
        /// Second vector length.
        right: usize,
    },
}

/// Which end of the ramp is "large".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    /// Dark green = large (molecule highlights).
    Green,
    /// Light = large (heatmaps: bright cells on dark field).
    GreenReversed,
}

impl Colormap {
    /// Hex color for `x` in `[0, 1]` (clamped), linearly interpolated
    /// between the ramp stops.
    pub fn color(self, x: f64) -> String {
        let x = match self {
            Colormap::Green => x,
            Colormap::GreenReversed => 1.0 - x,
        };
        let x = x.clamp(0.0, 1.0);
        let scaled = x * (GREEN_RAMP.len() - 1) as f64;
        let i = (scaled.floor() as usize).min(GREEN_RAMP.len() - 2);
        let frac = scaled - i as f64;
        let (a, b) = (parse_hex(GREEN_RAMP[i]), parse_hex(GREEN_RAMP[i + 1]));
        let lerp = |lo: u8, hi: u8| -> u8 {
            (lo as f64 + (hi as f64 - lo as f64) * frac).round() as u8
        };
        format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
    }
}

fn parse_hex(hex: &str) -> (u8, u8, u8) {
    let h = hex.trim_start_matches('#');
    (
        u8::from_str_radix(&h[0..2], 16).expect("palette constant"),
        u8::from_str_radix(&h[2..4], 16).expect("palette constant"),
        u8::from_str_radix(&h[4..6], 16).expect("palette constant"),
    )
}
