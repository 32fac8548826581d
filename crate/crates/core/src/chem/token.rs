//! SMILES lexer.
//!
//! Splits a SMILES string into atoms, bonds, branches, ring-closure labels
//! and dots. Token texts are borrowed slices of the input and concatenate
//! back to it exactly. Bracket-atom contents are validated later by the
//! parser; the lexer only requires the closing `]`.

use super::ChemError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    OrganicAtom,
    BracketAtom,
    Bond,
    BranchOpen,
    BranchClose,
    RingClosure,
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmilesToken<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    /// 0-based character offset of the first character of `text`.
    pub position: usize,
}

impl SmilesToken<'_> {
    /// Numeric label of a ring-closure token (`1` for "1", `12` for "%12").
    pub fn ring_label(&self) -> Option<u16> {
        if self.kind != TokenKind::RingClosure {
            return None;
        }
        self.text.trim_start_matches('%').parse().ok()
    }
}

/// Atoms allowed outside brackets. Two-letter symbols come first so the
/// lexer matches greedily.
const ORGANIC_SUBSET: [&str; 16] = [
    "Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I", "b", "c", "n", "o", "p", "s",
];

pub fn tokenize(smiles: &str) -> Result<Vec<SmilesToken<'_>>, ChemError> {
    if smiles.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    let bytes = smiles.as_bytes();
    let mut tokens = Vec::with_capacity(smiles.len());
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        if !ch.is_ascii() {
            // every valid token is ASCII, so the char offset is the number of
            // chars before this byte
            let position = smiles[..i].chars().count();
            let ch = smiles[i..].chars().next().unwrap_or('\u{fffd}');
            return Err(ChemError::UnsupportedChar { ch, position });
        }
        let (kind, len) = match ch {
            b'(' => (TokenKind::BranchOpen, 1),
            b')' => (TokenKind::BranchClose, 1),
            b'.' => (TokenKind::Dot, 1),
            b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => (TokenKind::Bond, 1),
            b'0'..=b'9' => (TokenKind::RingClosure, 1),
            b'%' => {
                let two = bytes.get(i + 1..i + 3);
                match two {
                    Some(d) if d.iter().all(u8::is_ascii_digit) => (TokenKind::RingClosure, 3),
                    _ => return Err(ChemError::BadRingLabel { position: i }),
                }
            }
            b'[' => match smiles[i..].find(']') {
                Some(end) => (TokenKind::BracketAtom, end + 1),
                None => return Err(ChemError::UnclosedBracket { position: i }),
            },
            _ => {
                let rest = &smiles[i..];
                match ORGANIC_SUBSET.iter().find(|sym| rest.starts_with(*sym)) {
                    Some(sym) => (TokenKind::OrganicAtom, sym.len()),
                    None => {
                        return Err(ChemError::UnsupportedChar {
                            ch: ch as char,
                            position: i,
                        })
                    }
                }
            }
        };
        tokens.push(SmilesToken {
            kind,
            text: &smiles[i..i + len],
            position: i,
        });
        i += len;
    }
    Ok(tokens)
}

/// Concatenates token texts; the inverse of [`tokenize`].
pub fn reconstruct(tokens: &[SmilesToken<'_>]) -> String {
    tokens.iter().map(|t| t.text).collect()
}
