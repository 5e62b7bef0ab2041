//! 2D molecule depictions with relevance highlights.
//!
//! Lays out several molecules (chains, fused rings, charged atoms) with the
//! ring-first coordinate generator and writes SVG depictions. Highlights
//! here are toy weights ramped along the atom order, so the files render
//! without any trained model. Output lands in
//! `target/example-artifacts/depict_molecule/`.
//!
//! ```text
//! cargo run -p molgrad --example depict_molecule
//! ```

use std::fs;
use std::path::Path;

use molgrad::relevance::{AtomRelevance, AtomWeight};
use molgrad::render::{layout, molecule_svg};
use molgrad::smiles::{parse, tokenize};

fn ramp_weights(graph: &molgrad::smiles::MolecularGraph) -> AtomRelevance {
    let n = graph.atom_count();
    let atoms = graph
        .atoms
        .iter()
        .enumerate()
        .map(|(i, atom)| {
            let scaled = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            AtomWeight {
                atom_index: i,
                element: atom.element.clone(),
                token_position: graph.atom_token_map[i] + 1,
                raw: scaled,
                scaled,
            }
        })
        .collect();
    AtomRelevance { atoms }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = Path::new("target/example-artifacts/depict_molecule");
    fs::create_dir_all(out_dir)?;

    let molecules = [
        ("glycolic_acid", "OCC(O)=O"),
        ("ethanol", "CCO"),
        ("bicyclic", "CC12CC(C)(NC(=O)N1)NC(=O)N2"),
        ("toluene", "Cc1ccccc1"),
        ("naphthalene", "c1ccc2ccccc2c1"),
        ("tetramethylammonium", "C[N+](C)(C)C"),
    ];
    for (name, smiles) in molecules {
        let graph = parse(&tokenize(smiles)?)?;
        let depiction = layout(&graph)?;
        let svg = molecule_svg(&depiction, &ramp_weights(&graph), true)?;
        let path = out_dir.join(format!("{name}.svg"));
        fs::write(&path, svg)?;
        println!("{smiles:>28}  ->  {}", path.display());
    }
    Ok(())
}
