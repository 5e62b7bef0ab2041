//! Tokenize and parse a handful of SMILES strings.
//!
//! Shows the regex-driven tokenizer (multi-character tokens like `Cl`,
//! bracket atoms, `%nn` ring labels), lossless round-tripping, and the
//! parsed graph's atom/bond/ring structure.
//!
//! ```text
//! cargo run -p molgrad --example tokenize_parse
//! ```

use molgrad::smiles::{parse, tokenize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let inputs = [
        "OCC(O)=O",                    // glycolic acid
        "CCO",                         // ethanol
        "CC12CC(C)(NC(=O)N1)NC(=O)N2", // fused bicyclic with shared ring labels
        "C[N+](C)(C)C",                // charged bracket atom
        "C%10CCCCC%10",                // two-digit ring label
        "Clc1ccc(Cl)cc1",              // aromatic ring, two-letter element
    ];

    for smiles in inputs {
        let seq = tokenize(smiles)?;
        println!("{smiles}");
        println!("  tokens ({}): {}", seq.len(), seq.texts().join(" "));
        assert_eq!(seq.to_smiles(), smiles, "tokenization must be lossless");

        let graph = parse(&seq)?;
        println!(
            "  atoms: {}, bonds: {}, rings: {}",
            graph.atom_count(),
            graph.bond_count(),
            graph.ring_count()
        );
        let elements: Vec<&str> = graph.atoms.iter().map(|a| a.element.as_str()).collect();
        println!("  elements: {}", elements.join(" "));
        println!();
    }

    // Errors carry positions: an unclosed ring label is reported, not ignored.
    let err = parse(&tokenize("C1CC")?).unwrap_err();
    println!("parse(\"C1CC\") fails as expected: {err}");
    Ok(())
}
