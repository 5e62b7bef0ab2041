//! Token vocabulary with stable ids.
//!
//! The base vocabulary is fixed and corpus-independent: five specials, the
//! organic subset, aromatic lowercase atoms, bond symbols, parentheses, and
//! every ring-closure label (`1`-`9`, `%10`-`%99`). Bracket atoms are an
//! open class, so each distinct bracket string found in a training corpus
//! is appended in first-seen order. Tokens outside the vocabulary encode to
//! `<UNK>` and the caller is told where, so evaluation can flag those
//! molecules instead of silently mispredicting.

use std::collections::HashMap;

use super::{TokenKind, TokenSequence, MASK, PAD, REG, SEP, UNK};

/// Ordered token list with O(1) text→id lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// The fixed base vocabulary (no bracket atoms): 128 tokens.
    pub fn base() -> Self {
        let mut tokens: Vec<String> = Vec::with_capacity(128);
        for s in [PAD, MASK, REG, SEP, UNK] {
            tokens.push(s.to_string());
        }
        for s in ["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"] {
            tokens.push(s.to_string());
        }
        for s in ["b", "c", "n", "o", "p", "s"] {
            tokens.push(s.to_string());
        }
        for s in ["-", "=", "#", ":", "/", "\\", "(", ")"] {
            tokens.push(s.to_string());
        }
        for d in 1..=9 {
            tokens.push(d.to_string());
        }
        for n in 10..=99 {
            tokens.push(format!("%{n}"));
        }
        Self::from_token_list(tokens).expect("base vocabulary is well-formed")
    }

    /// Base vocabulary extended with every distinct bracket-atom token in
    /// `corpus`, in first-seen order (deterministic for a fixed corpus order).
    pub fn from_sequences<'a>(corpus: impl IntoIterator<Item = &'a TokenSequence>) -> Self {
        let mut vocab = Self::base();
        for seq in corpus {
            for t in seq.tokens() {
                if t.kind == TokenKind::BracketAtom && !vocab.index.contains_key(&t.text) {
                    vocab.index.insert(t.text.clone(), vocab.tokens.len());
                    vocab.tokens.push(t.text.clone());
                }
            }
        }
        vocab
    }

    /// Rebuilds a vocabulary from a serialized token list (checkpoint load).
    ///
    /// Returns `None` when the list does not start with the five specials in
    /// canonical order or contains duplicates.
    pub fn from_token_list(tokens: Vec<String>) -> Option<Self> {
        let specials = [PAD, MASK, REG, SEP, UNK];
        if tokens.len() < specials.len() {
            return None;
        }
        for (i, s) in specials.iter().enumerate() {
            if tokens[i] != *s {
                return None;
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return None;
            }
        }
        Some(Self { tokens, index })
    }

    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false — a vocabulary at least holds the specials.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `text`, if in the vocabulary.
    pub fn id(&self, text: &str) -> Option<usize> {
        self.index.get(text).copied()
    }

    /// Text of token `id`.
    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// The full ordered token list (serialization).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id of `<PAD>` (always 0).
    pub fn pad_id(&self) -> usize {
        0
    }

    /// Id of `<REG>` (always 2).
    pub fn reg_id(&self) -> usize {
        2
    }

    /// Id of `<SEP>` (always 3).
    pub fn sep_id(&self) -> usize {
        3
    }

    /// Id of `<UNK>` (always 4).
    pub fn unk_id(&self) -> usize {
        4
    }

    /// Encodes a sequence to ids, mapping out-of-vocabulary tokens to
    /// `<UNK>`; the second return lists the positions that were unknown.
    pub fn encode(&self, seq: &TokenSequence) -> (Vec<usize>, Vec<usize>) {
        let mut ids = Vec::with_capacity(seq.len());
        let mut unknown = Vec::new();
        for t in seq.tokens() {
            match self.id(&t.text) {
                Some(id) => ids.push(id),
                None => {
                    ids.push(self.unk_id());
                    unknown.push(t.position);
                }
            }
        }
        (ids, unknown)
    }
}
