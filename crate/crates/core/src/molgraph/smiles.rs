use super::{AtomRecord, Bond, BondOrder, Element, MolGraph};
use thiserror::Error;

/// Errors from [`parse_smiles`]. Offsets are byte offsets into the input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("unmatched ring bond at byte {offset}")]
    UnmatchedRingBond { offset: usize },
    #[error("unknown atom symbol {symbol:?} at byte {offset}")]
    UnknownAtomSymbol { offset: usize, symbol: String },
    #[error("disconnected input at byte {offset}")]
    DisconnectedInput { offset: usize },
    #[error("bond symbol at byte {offset} is not followed by an atom or ring closure")]
    DanglingBond { offset: usize },
}

struct OpenRing {
    atom: usize,
    bond: Option<BondOrder>,
    offset: usize,
}

/// Parses the supported SMILES subset: organic atoms `B C N O P S F Cl Br I`,
/// aromatic `c n o s`, bonds `- = #`, branches and ring closures `1`-`9`.
pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    if text.is_empty() {
        return Err(SmilesError::Empty);
    }
    let bytes = text.as_bytes();
    let mut atoms: Vec<AtomRecord> = Vec::new();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut branch_stack: Vec<(usize, usize)> = Vec::new();
    let mut rings: [Option<OpenRing>; 10] = Default::default();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondOrder, usize)> = None;

    let implicit = |atoms: &[AtomRecord], a: usize, b: usize| {
        if atoms[a].aromatic && atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    };

    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'-' | b'=' | b'#' => {
                if let Some((_, off)) = pending {
                    return Err(SmilesError::DanglingBond { offset: off });
                }
                if prev.is_none() {
                    return Err(SmilesError::DanglingBond { offset: i });
                }
                let order = match c {
                    b'-' => BondOrder::Single,
                    b'=' => BondOrder::Double,
                    _ => BondOrder::Triple,
                };
                pending = Some((order, i));
                i += 1;
            }
            b'(' => {
                if let Some((_, off)) = pending {
                    return Err(SmilesError::DanglingBond { offset: off });
                }
                let Some(p) = prev else {
                    return Err(SmilesError::UnbalancedParenthesis { offset: i });
                };
                branch_stack.push((p, i));
                i += 1;
            }
            b')' => {
                if let Some((_, off)) = pending {
                    return Err(SmilesError::DanglingBond { offset: off });
                }
                let Some((p, open)) = branch_stack.pop() else {
                    return Err(SmilesError::UnbalancedParenthesis { offset: i });
                };
                // "C()" and friends: the branch must contain at least one atom
                if bytes[i - 1] == b'(' {
                    return Err(SmilesError::UnbalancedParenthesis { offset: open });
                }
                prev = Some(p);
                i += 1;
            }
            b'1'..=b'9' => {
                let Some(p) = prev else {
                    return Err(SmilesError::UnmatchedRingBond { offset: i });
                };
                let digit = (c - b'0') as usize;
                let bond = pending.take().map(|(o, _)| o);
                match rings[digit].take() {
                    None => {
                        rings[digit] = Some(OpenRing {
                            atom: p,
                            bond,
                            offset: i,
                        });
                    }
                    Some(open) => {
                        if open.atom == p
                            || bonds
                                .iter()
                                .any(|b| (b.a == open.atom && b.b == p) || (b.a == p && b.b == open.atom))
                        {
                            return Err(SmilesError::UnmatchedRingBond { offset: i });
                        }
                        let order = match (open.bond, bond) {
                            (Some(x), Some(y)) if x != y => {
                                return Err(SmilesError::UnmatchedRingBond { offset: i })
                            }
                            (Some(x), _) | (None, Some(x)) => x,
                            (None, None) => implicit(&atoms, open.atom, p),
                        };
                        bonds.push(Bond {
                            a: open.atom,
                            b: p,
                            order,
                        });
                    }
                }
                i += 1;
            }
            b'.' => return Err(SmilesError::DisconnectedInput { offset: i }),
            _ => {
                let (element, aromatic, len) = read_atom(bytes, i)?;
                let idx = atoms.len();
                atoms.push(AtomRecord {
                    element,
                    aromatic,
                    degree: 0,
                });
                if let Some(p) = prev {
                    let order = match pending.take() {
                        Some((o, _)) => o,
                        None => implicit(&atoms, p, idx),
                    };
                    bonds.push(Bond { a: p, b: idx, order });
                }
                prev = Some(idx);
                i += len;
            }
        }
    }

    if let Some((_, off)) = pending {
        return Err(SmilesError::DanglingBond { offset: off });
    }
    if let Some((_, open)) = branch_stack.first() {
        return Err(SmilesError::UnbalancedParenthesis { offset: *open });
    }
    if let Some(open) = rings.iter().flatten().min_by_key(|r| r.offset) {
        return Err(SmilesError::UnmatchedRingBond {
            offset: open.offset,
        });
    }
    Ok(MolGraph::from_parts(atoms, bonds))
}

fn read_atom(bytes: &[u8], i: usize) -> Result<(Element, bool, usize), SmilesError> {
    let next = bytes.get(i + 1).copied();
    let found = match bytes[i] {
        b'C' if next == Some(b'l') => Some((Element::Cl, false, 2)),
        b'B' if next == Some(b'r') => Some((Element::Br, false, 2)),
        b'B' => Some((Element::B, false, 1)),
        b'C' => Some((Element::C, false, 1)),
        b'N' => Some((Element::N, false, 1)),
        b'O' => Some((Element::O, false, 1)),
        b'P' => Some((Element::P, false, 1)),
        b'S' => Some((Element::S, false, 1)),
        b'F' => Some((Element::F, false, 1)),
        b'I' => Some((Element::I, false, 1)),
        b'c' => Some((Element::C, true, 1)),
        b'n' => Some((Element::N, true, 1)),
        b'o' => Some((Element::O, true, 1)),
        b's' => Some((Element::S, true, 1)),
        _ => None,
    };
    found.ok_or_else(|| {
        // report the whole UTF-8 character rather than a lone byte
        let rest = String::from_utf8_lossy(&bytes[i..]);
        let symbol = rest.chars().next().map(String::from).unwrap_or_default();
        SmilesError::UnknownAtomSymbol { offset: i, symbol }
    })
}
