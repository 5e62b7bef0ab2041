//! SMILES tokenization, parsing, and vocabulary.
//!
//! The tokenizer splits a SMILES string into the exact positional units the
//! model consumes — bracket atoms, two-letter halogens, single-letter atoms,
//! bonds, branch parentheses, ring closures — with a leftmost maximal-munch
//! regex, so `"CCl"` is `[C, Cl]`, never `[C, C, l]`. Token positions are the
//! bridge between model space and molecule space: [`parser::parse`] keeps an
//! atom→token map, and the relevance module walks it back the other way.
//!
//! Model inputs are built by [`prepare_input`], which prepends the `<REG>`
//! regression token and joins solute and solvent with `<SEP>`:
//! glycolic acid in ethanol becomes
//! `<REG>, O, C, C, (, O, ), =, O, <SEP>, C, C, O`.

pub mod parser;
mod vocab;

pub use parser::{parse, BondOrder, GraphAtom, GraphBond, MolecularGraph};
pub use vocab::Vocabulary;

use once_cell::sync::Lazy;
use regex::Regex;
use thiserror::Error;

/// Padding token (id 0 in every vocabulary).
pub const PAD: &str = "<PAD>";
/// Mask token, reserved for vocabulary compatibility; never emitted here.
pub const MASK: &str = "<MASK>";
/// Regression token prepended to every model input; the head reads only its
/// final hidden vector.
pub const REG: &str = "<REG>";
/// Separator between solute and solvent token runs.
pub const SEP: &str = "<SEP>";
/// Catch-all id for tokens outside the vocabulary.
pub const UNK: &str = "<UNK>";

/// Errors from tokenizing, sequence assembly, or graph parsing.
///
/// Positions are character offsets for tokenizer errors and token indices
/// for parser errors.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SmilesError {
    /// The input string was empty.
    #[error("empty SMILES input")]
    Empty,
    /// SMILES is an ASCII language; anything else is rejected up front.
    #[error("non-ASCII byte at position {position}")]
    NonAscii {
        /// Byte offset of the first non-ASCII byte.
        position: usize,
    },
    /// A character no tokenizer rule matches.
    #[error("unrecognised character '{ch}' at position {position}")]
    UnknownCharacter {
        /// The offending character.
        ch: char,
        /// Character offset in the input string.
        position: usize,
    },
    /// Dots denote disconnected fragments (salts, mixtures); splitting them
    /// silently would corrupt atom↔token maps, so they are rejected.
    #[error("dot-disconnected SMILES are not supported (position {position})")]
    Disconnected {
        /// Character offset of the dot.
        position: usize,
    },
    /// A special token appeared where a raw SMILES sequence was expected.
    #[error("special token '{text}' not allowed at token {position}")]
    UnexpectedSpecial {
        /// The special token text.
        text: String,
        /// Token index.
        position: usize,
    },
    /// A solute or solvent sequence with no tokens.
    #[error("empty solute or solvent token sequence")]
    EmptySegment,
    /// `(` without a matching `)`.
    #[error("unmatched '(' opened at token {position}")]
    UnmatchedBranchOpen {
        /// Token index of the unmatched opener.
        position: usize,
    },
    /// `)` without a matching `(`.
    #[error("unmatched ')' at token {position}")]
    UnmatchedBranchClose {
        /// Token index of the unmatched closer.
        position: usize,
    },
    /// A ring-closure label that was opened but never closed.
    #[error("unpaired ring closure '{label}' at token {position}")]
    UnpairedRingClosure {
        /// The ring label as written (`1`..`9` or `%nn`).
        label: String,
        /// Token index where the label was opened.
        position: usize,
    },
    /// Both closure sites carry explicit bond tokens that disagree.
    #[error("conflicting bond orders for ring closure '{label}' at token {position}")]
    RingBondConflict {
        /// The ring label.
        label: String,
        /// Token index of the second closure site.
        position: usize,
    },
    /// A ring closure that would bond an atom to itself.
    #[error("ring closure '{label}' at token {position} bonds an atom to itself")]
    RingSelfBond {
        /// The ring label.
        label: String,
        /// Token index of the second closure site.
        position: usize,
    },
    /// A bond token with no atom or ring closure after it.
    #[error("bond token at {position} has no following atom")]
    DanglingBond {
        /// Token index of the bond.
        position: usize,
    },
    /// A bond, branch, or ring token before any atom exists to attach to.
    #[error("token at {position} has no preceding atom")]
    MissingPrecedingAtom {
        /// Token index.
        position: usize,
    },
    /// Two bond tokens in a row.
    #[error("consecutive bond tokens at {position}")]
    ConsecutiveBonds {
        /// Token index of the second bond.
        position: usize,
    },
    /// A bracket atom whose interior does not follow
    /// `[isotope? symbol chirality? Hcount? charge? :class?]`.
    #[error("malformed bracket atom '{text}' at token {position}: {reason}")]
    MalformedBracket {
        /// The full bracket token text.
        text: String,
        /// Token index.
        position: usize,
        /// What went wrong inside the brackets.
        reason: String,
    },
}

/// Classification of a single token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    /// Organic-subset atom written bare: B, C, N, O, P, S, F, Cl, Br, I,
    /// or aromatic lowercase b, c, n, o, p, s.
    Atom,
    /// `[...]` atom with optional isotope, chirality, H count, and charge.
    BracketAtom,
    /// Explicit bond: `-`, `=`, `#`, `:`, `/`, `\`.
    Bond,
    /// `(`.
    BranchOpen,
    /// `)`.
    BranchClose,
    /// Ring-closure digit `1`-`9` or `%nn`.
    RingClosure,
    /// `<REG>`, `<SEP>`, `<PAD>`, `<MASK>`, `<UNK>`.
    Special,
}

impl TokenKind {
    /// True for tokens that carry an atom (bare or bracketed).
    pub fn is_atom(self) -> bool {
        matches!(self, TokenKind::Atom | TokenKind::BracketAtom)
    }
}

/// One tokenized unit of a SMILES string or model input sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// The exact text of the token.
    pub text: String,
    /// What the token is.
    pub kind: TokenKind,
    /// Index of the token within its sequence.
    pub position: usize,
}

/// An ordered token list, either a raw tokenized SMILES or an assembled
/// model input carrying `<REG>`/`<SEP>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<Token>,
    has_reg: bool,
    sep_position: Option<usize>,
}

impl TokenSequence {
    /// The tokens in order.
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Token count, including specials.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when the sequence holds no tokens.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when the sequence starts with `<REG>`.
    pub fn has_reg(&self) -> bool {
        self.has_reg
    }

    /// Position of `<SEP>`, when present.
    pub fn sep_position(&self) -> Option<usize> {
        self.sep_position
    }

    /// True if any token is a special.
    pub fn contains_specials(&self) -> bool {
        self.tokens.iter().any(|t| t.kind == TokenKind::Special)
    }

    /// Concatenation of all non-special token texts.
    ///
    /// For a sequence straight out of [`tokenize`] this reproduces the input
    /// string exactly (the round-trip invariant).
    pub fn to_smiles(&self) -> String {
        self.tokens
            .iter()
            .filter(|t| t.kind != TokenKind::Special)
            .map(|t| t.text.as_str())
            .collect()
    }

    /// Token texts in order, for display and assertions.
    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

static TOKEN_RE: Lazy<Regex> = Lazy::new(|| {
    // Alternation order is load-bearing: bracket atoms swallow their whole
    // interior first, then two-letter halogens beat single letters, then
    // %nn ring closures beat bare digits.
    Regex::new(r"\[[^\[\]]*\]|Cl|Br|%[0-9]{2}|[BCNOPSFI]|[bcnops]|[-=#:/\\]|[()]|[1-9]")
        .expect("token regex is valid")
});

fn classify(text: &str) -> TokenKind {
    match text {
        "(" => TokenKind::BranchOpen,
        ")" => TokenKind::BranchClose,
        "-" | "=" | "#" | ":" | "/" | "\\" => TokenKind::Bond,
        t if t.starts_with('[') => TokenKind::BracketAtom,
        t if t.starts_with('%') => TokenKind::RingClosure,
        t if t.len() == 1 && t.as_bytes()[0].is_ascii_digit() => TokenKind::RingClosure,
        _ => TokenKind::Atom,
    }
}

/// Splits a SMILES string into tokens.
///
/// Fails on the first character no rule matches, reporting its position;
/// dots get a dedicated error because disconnected fragments are out of
/// scope by design rather than by accident.
pub fn tokenize(smiles: &str) -> Result<TokenSequence, SmilesError> {
    if smiles.is_empty() {
        return Err(SmilesError::Empty);
    }
    if let Some(position) = smiles.bytes().position(|b| !b.is_ascii()) {
        return Err(SmilesError::NonAscii { position });
    }

    let mut tokens = Vec::new();
    let mut cursor = 0;
    for m in TOKEN_RE.find_iter(smiles) {
        if m.start() != cursor {
            return Err(unknown_at(smiles, cursor));
        }
        tokens.push(Token {
            text: m.as_str().to_string(),
            kind: classify(m.as_str()),
            position: tokens.len(),
        });
        cursor = m.end();
    }
    if cursor != smiles.len() {
        return Err(unknown_at(smiles, cursor));
    }

    Ok(TokenSequence { tokens, has_reg: false, sep_position: None })
}

fn unknown_at(smiles: &str, position: usize) -> SmilesError {
    let ch = smiles[position..].chars().next().unwrap_or('?');
    if ch == '.' {
        SmilesError::Disconnected { position }
    } else {
        SmilesError::UnknownCharacter { ch, position }
    }
}

/// Assembles a model input: `<REG>` + solute tokens, then `<SEP>` + solvent
/// tokens when a solvent is given.
///
/// Both inputs must be raw tokenized SMILES — sequences that already carry
/// specials are rejected so `<REG>` can never appear twice.
pub fn prepare_input(
    solute: &TokenSequence,
    solvent: Option<&TokenSequence>,
) -> Result<TokenSequence, SmilesError> {
    check_segment(solute)?;
    if let Some(sv) = solvent {
        check_segment(sv)?;
    }

    let mut tokens = Vec::with_capacity(
        1 + solute.len() + solvent.map_or(0, |s| 1 + s.len()),
    );
    tokens.push(Token { text: REG.to_string(), kind: TokenKind::Special, position: 0 });
    for t in solute.tokens() {
        tokens.push(Token { text: t.text.clone(), kind: t.kind, position: tokens.len() });
    }
    let mut sep_position = None;
    if let Some(sv) = solvent {
        sep_position = Some(tokens.len());
        tokens.push(Token { text: SEP.to_string(), kind: TokenKind::Special, position: tokens.len() });
        for t in sv.tokens() {
            tokens.push(Token { text: t.text.clone(), kind: t.kind, position: tokens.len() });
        }
    }

    Ok(TokenSequence { tokens, has_reg: true, sep_position })
}

fn check_segment(seq: &TokenSequence) -> Result<(), SmilesError> {
    if seq.is_empty() {
        return Err(SmilesError::EmptySegment);
    }
    if let Some(t) = seq.tokens().iter().find(|t| t.kind == TokenKind::Special) {
        return Err(SmilesError::UnexpectedSpecial {
            text: t.text.clone(),
            position: t.position,
        });
    }
    Ok(())
}

/// Positions of all Atom/BracketAtom tokens, in order.
///
/// This is the paper's attribution rule: relevance lands on atom tokens
/// only, disregarding bonds, branches, ring digits, and specials.
pub fn atom_token_indices(seq: &TokenSequence) -> Vec<usize> {
    seq.tokens()
        .iter()
        .filter(|t| t.kind.is_atom())
        .map(|t| t.position)
        .collect()
}
