//! SMILES parsing and circular fingerprints.
//!
//! The accepted grammar is documented in `GRAMMAR.md` at the repository root.
//! Only syntax is checked; there is no valence validation.

mod fingerprint;
mod graph;
mod token;

pub use fingerprint::{
    fingerprint, Fingerprint, FingerprintParams, DEFAULT_NBITS, DEFAULT_RADIUS, HASH_SEED,
    MAX_NBITS, MAX_RADIUS, MIN_NBITS,
};
pub use graph::{parse, Atom, Bond, BondOrder, MolGraph, ParseWarning};
pub use token::{reconstruct, tokenize, SmilesToken, TokenKind};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("empty SMILES input")]
    EmptyInput,
    #[error("unsupported character {ch:?} at offset {position}")]
    UnsupportedChar { ch: char, position: usize },
    #[error("unclosed bracket atom starting at offset {position}")]
    UnclosedBracket { position: usize },
    #[error("invalid bracket atom at offset {position}")]
    InvalidBracketAtom { position: usize },
    #[error("malformed ring-closure label at offset {position}")]
    BadRingLabel { position: usize },
    #[error("unmatched ring-closure digit at offset {position}")]
    UnmatchedRingClosure { position: usize },
    #[error("ring closure with no preceding atom at offset {position}")]
    MisplacedRingClosure { position: usize },
    #[error("conflicting ring-closure bond orders at offset {position}")]
    ConflictingRingBond { position: usize },
    #[error("unclosed branch opened at offset {position}")]
    UnclosedBranch { position: usize },
    #[error("branch close without matching open at offset {position}")]
    UnmatchedBranchClose { position: usize },
    #[error("branch must follow an atom, offset {position}")]
    MisplacedBranch { position: usize },
    #[error("empty branch at offset {position}")]
    EmptyBranch { position: usize },
    #[error("bond at offset {position} is not between two atoms")]
    BondWithoutAtom { position: usize },
    #[error("empty dot-separated component at offset {position}")]
    EmptyComponent { position: usize },
    #[error("atom bonded to itself at offset {position}")]
    SelfBond { position: usize },
    #[error("second bond between the same atoms at offset {position}")]
    DuplicateBond { position: usize },
    #[error("cannot fingerprint an empty graph")]
    EmptyGraph,
    #[error("bad fingerprint parameters: {0}")]
    BadFingerprintParams(String),
}

impl ChemError {
    /// Character offset the error points at, if it is positional.
    pub fn position(&self) -> Option<usize> {
        use ChemError::*;
        match self {
            UnsupportedChar { position, .. }
            | UnclosedBracket { position }
            | InvalidBracketAtom { position }
            | BadRingLabel { position }
            | UnmatchedRingClosure { position }
            | MisplacedRingClosure { position }
            | ConflictingRingBond { position }
            | UnclosedBranch { position }
            | UnmatchedBranchClose { position }
            | MisplacedBranch { position }
            | EmptyBranch { position }
            | BondWithoutAtom { position }
            | EmptyComponent { position }
            | SelfBond { position }
            | DuplicateBond { position } => Some(*position),
            EmptyInput | EmptyGraph | BadFingerprintParams(_) => None,
        }
    }
}

pub fn parse_smiles(smiles: &str) -> Result<MolGraph, ChemError> {
    parse(&tokenize(smiles)?)
}

/// SMILES text straight to a fingerprint.
pub fn featurize(smiles: &str, params: &FingerprintParams) -> Result<Fingerprint, ChemError> {
    fingerprint(&parse_smiles(smiles)?, params)
}
