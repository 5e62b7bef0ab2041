//! Depth-first SMILES parsing into a molecular graph.
//!
//! The parser is a single pass over the token list with three pieces of
//! state: the most recent atom (the attachment point), a branch stack for
//! parentheses, and a ring-closure table pairing numbered closure sites.
//! Stereo bond tokens (`/`, `\`) and chirality markers parse as plain single
//! bonds and are otherwise ignored — there is no 3-D semantics here.
//!
//! The atom→token map built during parsing is what later lets relevance
//! scores land on the right atoms of a depiction.

use std::collections::BTreeMap;

use super::{SmilesError, Token, TokenKind, TokenSequence};

/// Bond multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    /// Single bond (also `/` and `\` stereo bonds).
    Single,
    /// Double bond (`=`).
    Double,
    /// Triple bond (`#`).
    Triple,
    /// Aromatic bond (`:` or implied between two aromatic atoms).
    Aromatic,
}

/// One atom of a parsed molecule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphAtom {
    /// Element symbol, capitalised (`"C"`, `"Cl"`, `"Se"`), even for
    /// aromatic lowercase input.
    pub element: String,
    /// True when written lowercase or bracketed lowercase.
    pub aromatic: bool,
    /// Formal charge from a bracket atom; 0 for bare atoms.
    pub charge: i32,
    /// Explicit hydrogen count from a bracket atom; 0 for bare atoms.
    pub explicit_h: u8,
}

/// One bond of a parsed molecule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphBond {
    /// First atom index (always the earlier-parsed atom).
    pub a: usize,
    /// Second atom index.
    pub b: usize,
    /// Bond multiplicity.
    pub order: BondOrder,
}

/// A parsed single-molecule SMILES.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolecularGraph {
    /// Atoms in parse order.
    pub atoms: Vec<GraphAtom>,
    /// Bonds in creation order (chain/branch bonds first at each site,
    /// ring-closure bonds when their second site appears).
    pub bonds: Vec<GraphBond>,
    /// `atom_token_map[i]` is the token position of atom `i` in the
    /// sequence that was parsed.
    pub atom_token_map: Vec<usize>,
    /// Indices into `bonds` of the bonds created by ring closures; each one
    /// closes one ring of the depiction.
    pub ring_closure_bonds: Vec<usize>,
}

impl MolecularGraph {
    /// Number of atoms.
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Number of bonds.
    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// Number of rings (equal to the number of ring-closure bonds for a
    /// connected graph).
    pub fn ring_count(&self) -> usize {
        self.ring_closure_bonds.len()
    }

    /// Indices of atoms bonded to `i`, with the connecting bond.
    pub fn neighbors(&self, i: usize) -> Vec<(usize, &GraphBond)> {
        self.bonds
            .iter()
            .filter_map(|b| {
                if b.a == i {
                    Some((b.b, b))
                } else if b.b == i {
                    Some((b.a, b))
                } else {
                    None
                }
            })
            .collect()
    }
}

fn bond_order(text: &str) -> BondOrder {
    match text {
        "=" => BondOrder::Double,
        "#" => BondOrder::Triple,
        ":" => BondOrder::Aromatic,
        // '-', '/' and '\' are all single bonds once stereo is dropped.
        _ => BondOrder::Single,
    }
}

/// Parses a tokenized single-molecule SMILES into a [`MolecularGraph`].
///
/// The sequence must be raw tokenizer output: specials are rejected, every
/// `(` needs its `)`, and every ring label must pair exactly twice. Errors
/// carry the token position they were detected at.
pub fn parse(seq: &TokenSequence) -> Result<MolecularGraph, SmilesError> {
    if seq.is_empty() {
        return Err(SmilesError::EmptySegment);
    }

    let mut atoms: Vec<GraphAtom> = Vec::new();
    let mut bonds: Vec<GraphBond> = Vec::new();
    let mut atom_token_map: Vec<usize> = Vec::new();
    let mut ring_closure_bonds: Vec<usize> = Vec::new();

    let mut last_atom: Option<usize> = None;
    // (attachment atom, token position of the '(')
    let mut branch_stack: Vec<(usize, usize)> = Vec::new();
    // (explicit bond order, token position of the bond token)
    let mut pending: Option<(BondOrder, usize)> = None;
    // label -> (atom index, explicit bond at the opening site, token position)
    let mut ring_table: BTreeMap<String, (usize, Option<BondOrder>, usize)> = BTreeMap::new();

    for token in seq.tokens() {
        let pos = token.position;
        match token.kind {
            TokenKind::Special => {
                return Err(SmilesError::UnexpectedSpecial {
                    text: token.text.clone(),
                    position: pos,
                });
            }
            TokenKind::Atom | TokenKind::BracketAtom => {
                let atom = if token.kind == TokenKind::BracketAtom {
                    parse_bracket(token)?
                } else {
                    plain_atom(&token.text)
                };
                atoms.push(atom);
                atom_token_map.push(pos);
                let idx = atoms.len() - 1;
                if let Some(prev) = last_atom {
                    let order = match pending.take() {
                        Some((o, _)) => o,
                        None => default_order(&atoms[prev], &atoms[idx]),
                    };
                    bonds.push(GraphBond { a: prev, b: idx, order });
                }
                last_atom = Some(idx);
            }
            TokenKind::Bond => {
                if last_atom.is_none() {
                    return Err(SmilesError::MissingPrecedingAtom { position: pos });
                }
                if pending.is_some() {
                    return Err(SmilesError::ConsecutiveBonds { position: pos });
                }
                pending = Some((bond_order(&token.text), pos));
            }
            TokenKind::BranchOpen => {
                let Some(attach) = last_atom else {
                    return Err(SmilesError::MissingPrecedingAtom { position: pos });
                };
                if let Some((_, bpos)) = pending {
                    return Err(SmilesError::DanglingBond { position: bpos });
                }
                branch_stack.push((attach, pos));
            }
            TokenKind::BranchClose => {
                if let Some((_, bpos)) = pending {
                    return Err(SmilesError::DanglingBond { position: bpos });
                }
                let Some((attach, _)) = branch_stack.pop() else {
                    return Err(SmilesError::UnmatchedBranchClose { position: pos });
                };
                last_atom = Some(attach);
            }
            TokenKind::RingClosure => {
                let Some(current) = last_atom else {
                    return Err(SmilesError::MissingPrecedingAtom { position: pos });
                };
                let label = token.text.trim_start_matches('%').to_string();
                let here = pending.take().map(|(o, _)| o);
                match ring_table.remove(&label) {
                    Some((other, there, _)) => {
                        if other == current {
                            return Err(SmilesError::RingSelfBond { label, position: pos });
                        }
                        let order = match (there, here) {
                            (None, None) => default_order(&atoms[other], &atoms[current]),
                            (Some(o), None) | (None, Some(o)) => o,
                            (Some(o1), Some(o2)) if o1 == o2 => o1,
                            _ => {
                                return Err(SmilesError::RingBondConflict { label, position: pos })
                            }
                        };
                        bonds.push(GraphBond { a: other, b: current, order });
                        ring_closure_bonds.push(bonds.len() - 1);
                    }
                    None => {
                        ring_table.insert(label, (current, here, pos));
                    }
                }
            }
        }
    }

    if let Some((_, bpos)) = pending {
        return Err(SmilesError::DanglingBond { position: bpos });
    }
    if let Some(&(_, opos)) = branch_stack.first() {
        return Err(SmilesError::UnmatchedBranchOpen { position: opos });
    }
    if let Some((label, (_, _, opos))) = ring_table.into_iter().next() {
        return Err(SmilesError::UnpairedRingClosure { label, position: opos });
    }
    if atoms.is_empty() {
        return Err(SmilesError::EmptySegment);
    }

    Ok(MolecularGraph { atoms, bonds, atom_token_map, ring_closure_bonds })
}

fn default_order(a: &GraphAtom, b: &GraphAtom) -> BondOrder {
    if a.aromatic && b.aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

fn plain_atom(text: &str) -> GraphAtom {
    let aromatic = text.len() == 1 && text.as_bytes()[0].is_ascii_lowercase();
    GraphAtom {
        element: capitalize(text),
        aromatic,
        charge: 0,
        explicit_h: 0,
    }
}

fn capitalize(symbol: &str) -> String {
    let mut chars = symbol.chars();
    match chars.next() {
        Some(c) => c.to_ascii_uppercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}

/// Parses the interior of a `[...]` token:
/// `[isotope? symbol chirality? Hcount? charge? (:class)?]`.
fn parse_bracket(token: &Token) -> Result<GraphAtom, SmilesError> {
    let fail = |reason: &str| SmilesError::MalformedBracket {
        text: token.text.clone(),
        position: token.position,
        reason: reason.to_string(),
    };
    let inner = &token.text[1..token.text.len() - 1];
    let bytes = inner.as_bytes();
    let mut i = 0;

    // Optional isotope: parsed for validity, not stored (no mass semantics
    // downstream).
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }

    // Element symbol: uppercase + optional lowercase, or a lowercase
    // aromatic symbol (se/as are the two-letter aromatics).
    let (element, aromatic) = if i < bytes.len() && bytes[i].is_ascii_uppercase() {
        let start = i;
        i += 1;
        if i < bytes.len() && bytes[i].is_ascii_lowercase() && bytes[i] != b'h' {
            // 'h' is never the second letter of an element that appears in
            // brackets before an H-count; treating it as one would eat [OH].
            // (No element symbol ends in 'h' among those valid in SMILES.)
            i += 1;
        }
        (inner[start..i].to_string(), false)
    } else if i < bytes.len() && bytes[i].is_ascii_lowercase() {
        let two = inner.get(i..i + 2);
        if two == Some("se") || two == Some("as") {
            i += 2;
            (capitalize(&inner[i - 2..i]), true)
        } else if matches!(bytes[i], b'b' | b'c' | b'n' | b'o' | b'p' | b's') {
            i += 1;
            (capitalize(&inner[i - 1..i]), true)
        } else {
            return Err(fail("invalid aromatic symbol"));
        }
    } else {
        return Err(fail("missing element symbol"));
    };

    // Optional chirality: @ or @@; extended @TH1-style classes are out of
    // scope and will fail the trailing-characters check below.
    if i < bytes.len() && bytes[i] == b'@' {
        i += 1;
        if i < bytes.len() && bytes[i] == b'@' {
            i += 1;
        }
    }

    // Optional explicit hydrogen count.
    let mut explicit_h: u8 = 0;
    if i < bytes.len() && bytes[i] == b'H' {
        i += 1;
        explicit_h = 1;
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i > start {
            explicit_h = inner[start..i].parse().map_err(|_| fail("H count out of range"))?;
        }
    }

    // Optional charge: +, -, ++, --, +2, -3 ...
    let mut charge: i32 = 0;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        let sign: i32 = if bytes[i] == b'+' { 1 } else { -1 };
        let symbol = bytes[i];
        let mut magnitude = 1;
        i += 1;
        while i < bytes.len() && bytes[i] == symbol {
            magnitude += 1;
            i += 1;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i > start {
            if magnitude != 1 {
                return Err(fail("mixed repeated-sign and numeric charge"));
            }
            magnitude = inner[start..i].parse().map_err(|_| fail("charge out of range"))?;
        }
        charge = sign * magnitude;
    }

    // Optional atom class, parsed and discarded.
    if i < bytes.len() && bytes[i] == b':' {
        i += 1;
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err(fail("atom class needs digits"));
        }
    }

    if i != bytes.len() {
        return Err(fail(&format!("unexpected character '{}'", &inner[i..i + 1])));
    }

    Ok(GraphAtom { element, aromatic, charge, explicit_h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::{prepare_input, tokenize};

    fn graph(s: &str) -> MolecularGraph {
        parse(&tokenize(s).unwrap()).unwrap()
    }

    #[test]
    fn glycolic_acid_graph() {
        let g = graph("OCC(O)=O");
        assert_eq!(g.atom_count(), 5);
        assert_eq!(g.bond_count(), 4);
        let doubles: Vec<_> = g.bonds.iter().filter(|b| b.order == BondOrder::Double).collect();
        assert_eq!(doubles.len(), 1);
        // The C=O double bond joins the carboxyl carbon (atom 2) and the
        // final oxygen (atom 4).
        assert_eq!((doubles[0].a, doubles[0].b), (2, 4));
        assert_eq!(g.atom_token_map, [0, 1, 2, 4, 7]);
        let elements: Vec<&str> = g.atoms.iter().map(|a| a.element.as_str()).collect();
        assert_eq!(elements, ["O", "C", "C", "O", "O"]);
    }

    #[test]
    fn bicyclic_paper_molecule_has_13_atoms_and_two_rings() {
        let g = graph("CC12CC(C)(NC(=O)N1)NC(=O)N2");
        assert_eq!(g.atom_count(), 13);
        assert_eq!(g.ring_count(), 2);
        let n = g.atoms.iter().filter(|a| a.element == "N").count();
        let o = g.atoms.iter().filter(|a| a.element == "O").count();
        let c = g.atoms.iter().filter(|a| a.element == "C").count();
        assert_eq!((c, n, o), (7, 4, 2));
        // Both ring-closure bonds attach to the quaternary ring-fusion carbon.
        for &bi in &g.ring_closure_bonds {
            assert_eq!(g.bonds[bi].a, 1);
        }
    }

    #[test]
    fn benzene_is_aromatic_hexagon() {
        let g = graph("c1ccccc1");
        assert_eq!(g.atom_count(), 6);
        assert_eq!(g.bond_count(), 6);
        assert!(g.atoms.iter().all(|a| a.aromatic && a.element == "C"));
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
        assert_eq!(g.ring_count(), 1);
    }

    #[test]
    fn unpaired_ring_closure_is_an_error() {
        let err = parse(&tokenize("C1CC").unwrap()).unwrap_err();
        assert_eq!(
            err,
            SmilesError::UnpairedRingClosure { label: "1".into(), position: 1 }
        );
    }

    #[test]
    fn unmatched_parentheses_are_errors() {
        let err = parse(&tokenize("CC(C").unwrap()).unwrap_err();
        assert_eq!(err, SmilesError::UnmatchedBranchOpen { position: 2 });
        let err = parse(&tokenize("CC)C").unwrap()).unwrap_err();
        assert_eq!(err, SmilesError::UnmatchedBranchClose { position: 2 });
    }

    #[test]
    fn dangling_and_leading_bonds_are_errors() {
        let err = parse(&tokenize("CC=").unwrap()).unwrap_err();
        assert_eq!(err, SmilesError::DanglingBond { position: 2 });
        let err = parse(&tokenize("=CC").unwrap()).unwrap_err();
        assert_eq!(err, SmilesError::MissingPrecedingAtom { position: 0 });
        let err = parse(&tokenize("C(=)C").unwrap()).unwrap_err();
        assert_eq!(err, SmilesError::DanglingBond { position: 2 });
        let err = parse(&tokenize("C==C").unwrap()).unwrap_err();
        assert_eq!(err, SmilesError::ConsecutiveBonds { position: 2 });
    }

    #[test]
    fn ring_bond_conflict_is_an_error() {
        let err = parse(&tokenize("C=1CCCC#1").unwrap()).unwrap_err();
        assert!(matches!(err, SmilesError::RingBondConflict { .. }));
        // Agreeing explicit orders are fine.
        let g = graph("C=1CCCC=1");
        assert_eq!(g.bonds.last().unwrap().order, BondOrder::Double);
    }

    #[test]
    fn ring_closure_bond_order_comes_from_either_site() {
        let g = graph("C=1CCCC1");
        assert_eq!(g.bonds.last().unwrap().order, BondOrder::Double);
        let g = graph("C1CCCC=1");
        assert_eq!(g.bonds.last().unwrap().order, BondOrder::Double);
    }

    #[test]
    fn ring_self_bond_is_an_error() {
        let err = parse(&tokenize("C11").unwrap()).unwrap_err();
        assert!(matches!(err, SmilesError::RingSelfBond { .. }));
    }

    #[test]
    fn bracket_atoms_parse_fields() {
        let g = graph("[13CH3][O-]");
        assert_eq!(g.atoms[0].element, "C");
        assert_eq!(g.atoms[0].explicit_h, 3);
        assert_eq!(g.atoms[0].charge, 0);
        assert!(!g.atoms[0].aromatic);
        assert_eq!(g.atoms[1].element, "O");
        assert_eq!(g.atoms[1].charge, -1);

        let g = graph("[NH4+]");
        assert_eq!(g.atoms[0].explicit_h, 4);
        assert_eq!(g.atoms[0].charge, 1);

        let g = graph("c1cc[nH]c1");
        assert_eq!(g.atoms[3].element, "N");
        assert!(g.atoms[3].aromatic);
        assert_eq!(g.atoms[3].explicit_h, 1);

        let g = graph("[C@@H](F)(Cl)Br");
        assert_eq!(g.atoms[0].element, "C");
        assert_eq!(g.atoms[0].explicit_h, 1);

        let g = graph("[Fe+2]");
        assert_eq!(g.atoms[0].element, "Fe");
        assert_eq!(g.atoms[0].charge, 2);

        let g = graph("[O--]");
        assert_eq!(g.atoms[0].charge, -2);
    }

    #[test]
    fn malformed_brackets_are_errors() {
        for bad in ["[]", "[++]", "[C+-]", "[Cxyz]"] {
            let err = parse(&tokenize(bad).unwrap()).unwrap_err();
            assert!(
                matches!(err, SmilesError::MalformedBracket { .. }),
                "expected malformed-bracket error for {bad}, got {err:?}"
            );
        }
    }

    #[test]
    fn stereo_bonds_parse_as_single() {
        let g = graph("C/C=C\\C");
        assert_eq!(g.bond_count(), 3);
        assert_eq!(g.bonds[0].order, BondOrder::Single);
        assert_eq!(g.bonds[1].order, BondOrder::Double);
        assert_eq!(g.bonds[2].order, BondOrder::Single);
    }

    #[test]
    fn branches_reattach_to_the_right_atom() {
        // Isobutane: central carbon (atom 1) has three neighbours.
        let g = graph("CC(C)C");
        assert_eq!(g.neighbors(1).len(), 3);
        assert_eq!(g.neighbors(0).len(), 1);
    }

    #[test]
    fn specials_are_rejected() {
        let seq = prepare_input(&tokenize("CCO").unwrap(), None).unwrap();
        let err = parse(&seq).unwrap_err();
        assert!(matches!(err, SmilesError::UnexpectedSpecial { .. }));
    }

    #[test]
    fn atom_count_matches_atom_token_count() {
        for s in ["OCC(O)=O", "c1ccccc1", "CC12CC(C)(NC(=O)N1)NC(=O)N2", "[NH4+]", "C/C=C\\C"] {
            let seq = tokenize(s).unwrap();
            let g = parse(&seq).unwrap();
            assert_eq!(
                g.atom_count(),
                crate::smiles::atom_token_indices(&seq).len(),
                "mismatch for {s}"
            );
            assert_eq!(g.atom_token_map.len(), g.atom_count());
        }
    }

    #[test]
    fn percent_ring_closures_pair() {
        let g = graph("C%10CCCC%10");
        assert_eq!(g.ring_count(), 1);
        assert_eq!(g.atom_count(), 5);
    }

    #[test]
    fn ring_labels_are_reusable_after_closing() {
        // Two separate rings both labelled 1.
        let g = graph("C1CC1CC1CC1");
        assert_eq!(g.ring_count(), 2);
        assert_eq!(g.atom_count(), 7);
    }
}
