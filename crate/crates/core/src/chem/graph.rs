//! Molecular graph construction from SMILES tokens.

use super::token::{SmilesToken, TokenKind};
use super::ChemError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub(crate) fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: String,
    pub aromatic: bool,
    pub charge: i8,
    /// Hydrogens written inside a bracket atom. Implicit hydrogens of
    /// organic-subset atoms are not computed.
    pub explicit_h: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub adjacency: Vec<Vec<usize>>,
    /// Discarded stereochemistry markers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ParseWarning>,
}

impl MolGraph {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.bonds
            .iter()
            .find(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
    }

    /// Checks the structural invariants: valid distinct endpoints, no
    /// duplicate bonds, adjacency mirrors the bond list.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.atoms.len();
        if self.adjacency.len() != n {
            return Err(format!("adjacency has {} rows for {n} atoms", self.adjacency.len()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut expected = vec![Vec::new(); n];
        for bd in &self.bonds {
            if bd.a >= n || bd.b >= n || bd.a == bd.b {
                return Err(format!("bad bond endpoints {}-{}", bd.a, bd.b));
            }
            if !seen.insert((bd.a.min(bd.b), bd.a.max(bd.b))) {
                return Err(format!("duplicate bond {}-{}", bd.a, bd.b));
            }
            expected[bd.a].push(bd.b);
            expected[bd.b].push(bd.a);
        }
        for (i, (want, got)) in expected.iter_mut().zip(&self.adjacency).enumerate() {
            let mut got = got.clone();
            want.sort_unstable();
            got.sort_unstable();
            if *want != got {
                return Err(format!("adjacency of atom {i} disagrees with bonds"));
            }
        }
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.adjacency.push(Vec::new());
        self.atoms.len() - 1
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, position: usize) -> Result<(), ChemError> {
        if a == b {
            return Err(ChemError::SelfBond { position });
        }
        if self.bond_between(a, b).is_some() {
            return Err(ChemError::DuplicateBond { position });
        }
        self.bonds.push(Bond { a, b, order });
        self.adjacency[a].push(b);
        self.adjacency[b].push(a);
        Ok(())
    }
}

struct OpenRing {
    atom: usize,
    order: Option<BondOrder>,
    position: usize,
}

pub fn parse(tokens: &[SmilesToken<'_>]) -> Result<MolGraph, ChemError> {
    if tokens.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    let mut g = MolGraph::default();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondOrder, usize)> = None;
    let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
    let mut rings: BTreeMap<u16, OpenRing> = BTreeMap::new();
    let mut last_kind: Option<TokenKind> = None;

    for tok in tokens {
        let pos = tok.position;
        match tok.kind {
            TokenKind::OrganicAtom | TokenKind::BracketAtom => {
                let atom = if tok.kind == TokenKind::OrganicAtom {
                    organic_atom(tok.text)
                } else {
                    bracket_atom(tok.text, pos, &mut g.warnings)?
                };
                let idx = g.add_atom(atom);
                if let Some(p) = prev {
                    let order = pending
                        .map(|(o, _)| o)
                        .unwrap_or_else(|| implicit_order(&g, p, idx));
                    g.add_bond(p, idx, order, pos)?;
                }
                pending = None;
                prev = Some(idx);
            }
            TokenKind::Bond => {
                if pending.is_some() {
                    return Err(ChemError::BondWithoutAtom { position: pos });
                }
                if prev.is_none() {
                    return Err(ChemError::BondWithoutAtom { position: pos });
                }
                if matches!(tok.text, "/" | "\\") {
                    warn_stereo(&mut g.warnings, pos, tok.text);
                }
                pending = Some((bond_symbol(tok.text), pos));
            }
            TokenKind::BranchOpen => {
                if prev.is_none() || pending.is_some() {
                    return Err(ChemError::MisplacedBranch { position: pos });
                }
                branches.push((prev, pos));
            }
            TokenKind::BranchClose => {
                if let Some((_, bpos)) = pending {
                    return Err(ChemError::BondWithoutAtom { position: bpos });
                }
                if last_kind == Some(TokenKind::BranchOpen) {
                    return Err(ChemError::EmptyBranch { position: pos });
                }
                let (restore, _) = branches
                    .pop()
                    .ok_or(ChemError::UnmatchedBranchClose { position: pos })?;
                prev = restore;
            }
            TokenKind::RingClosure => {
                let atom = prev.ok_or(ChemError::MisplacedRingClosure { position: pos })?;
                let label = tok
                    .ring_label()
                    .ok_or(ChemError::BadRingLabel { position: pos })?;
                let here = pending.take().map(|(o, _)| o);
                match rings.remove(&label) {
                    Some(open) => {
                        let order = match (open.order, here) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(ChemError::ConflictingRingBond { position: pos })
                            }
                            (Some(a), _) | (None, Some(a)) => a,
                            (None, None) => implicit_order(&g, open.atom, atom),
                        };
                        g.add_bond(open.atom, atom, order, pos)?;
                    }
                    None => {
                        rings.insert(
                            label,
                            OpenRing {
                                atom,
                                order: here,
                                position: pos,
                            },
                        );
                    }
                }
            }
            TokenKind::Dot => {
                if let Some((_, bpos)) = pending {
                    return Err(ChemError::BondWithoutAtom { position: bpos });
                }
                if prev.is_none() {
                    return Err(ChemError::EmptyComponent { position: pos });
                }
                prev = None;
            }
        }
        last_kind = Some(tok.kind);
    }

    if let Some((_, bpos)) = pending {
        return Err(ChemError::BondWithoutAtom { position: bpos });
    }
    if last_kind == Some(TokenKind::Dot) {
        let pos = tokens.last().map(|t| t.position).unwrap_or(0);
        return Err(ChemError::EmptyComponent { position: pos });
    }
    if let Some((_, bpos)) = branches.first() {
        return Err(ChemError::UnclosedBranch { position: *bpos });
    }
    if let Some(open) = rings.values().min_by_key(|r| r.position) {
        return Err(ChemError::UnmatchedRingClosure {
            position: open.position,
        });
    }
    Ok(g)
}

fn implicit_order(g: &MolGraph, a: usize, b: usize) -> BondOrder {
    if g.atoms[a].aromatic && g.atoms[b].aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

fn bond_symbol(text: &str) -> BondOrder {
    match text {
        "=" => BondOrder::Double,
        "#" => BondOrder::Triple,
        ":" => BondOrder::Aromatic,
        _ => BondOrder::Single,
    }
}

fn warn_stereo(warnings: &mut Vec<ParseWarning>, position: usize, marker: &str) {
    log::warn!("stereo marker {marker:?} at {position} discarded");
    warnings.push(ParseWarning {
        position,
        message: format!("stereo marker {marker:?} discarded"),
    });
}

fn organic_atom(text: &str) -> Atom {
    let aromatic = text.chars().all(|c| c.is_ascii_lowercase());
    Atom {
        element: capitalize(text),
        aromatic,
        charge: 0,
        explicit_h: 0,
    }
}

fn capitalize(sym: &str) -> String {
    let mut out = String::with_capacity(sym.len());
    let mut chars = sym.chars();
    if let Some(first) = chars.next() {
        out.push(first.to_ascii_uppercase());
    }
    out.extend(chars);
    out
}

const ELEMENTS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

const AROMATIC_BRACKET: [&str; 8] = ["se", "as", "b", "c", "n", "o", "p", "s"];

/// `[` isotope? symbol chirality? hcount? charge? class? `]`
fn bracket_atom(text: &str, position: usize, warnings: &mut Vec<ParseWarning>) -> Result<Atom, ChemError> {
    let bad = || ChemError::InvalidBracketAtom { position };
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(bad)?;
    let b = inner.as_bytes();
    let mut i = 0;

    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }

    let rest = &inner[i..];
    let (element, aromatic, len) = if let Some(sym) = AROMATIC_BRACKET.iter().find(|s| rest.starts_with(*s)) {
        (capitalize(sym), true, sym.len())
    } else {
        let two = rest.get(..2).filter(|s| ELEMENTS.contains(s));
        let one = rest.get(..1).filter(|s| ELEMENTS.contains(s));
        match two.or(one) {
            Some(sym) => (sym.to_string(), false, sym.len()),
            None => return Err(bad()),
        }
    };
    i += len;

    if i < b.len() && b[i] == b'@' {
        let start = i;
        while i < b.len() && b[i] == b'@' {
            i += 1;
        }
        warn_stereo(warnings, position, &inner[start..i]);
    }

    let mut explicit_h = 0u8;
    if i < b.len() && b[i] == b'H' {
        i += 1;
        explicit_h = 1;
        if i < b.len() && b[i].is_ascii_digit() {
            explicit_h = b[i] - b'0';
            i += 1;
        }
    }

    let mut charge: i8 = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        let sign: i8 = if b[i] == b'+' { 1 } else { -1 };
        let sym = b[i];
        i += 1;
        let mut magnitude: i8 = 1;
        if i < b.len() && b[i].is_ascii_digit() {
            magnitude = (b[i] - b'0') as i8;
            i += 1;
        } else {
            while i < b.len() && b[i] == sym {
                magnitude += 1;
                i += 1;
            }
        }
        charge = sign * magnitude;
    }

    if i < b.len() && b[i] == b':' {
        i += 1;
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err(bad());
        }
    }

    if i != b.len() {
        return Err(bad());
    }
    Ok(Atom {
        element,
        aromatic,
        charge,
        explicit_h,
    })
}
