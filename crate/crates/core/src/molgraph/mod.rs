//! Molecular graphs: SMILES ingestion, structural matrices, motif
//! fragmentation and the node serialization used by the graph-SSM projector.

mod motif;
mod serialize;
mod smiles;
mod structure;

pub use motif::{fragment_motifs, MotifKey, MotifSet, MotifVocabulary, VocabError, UNK_ID};
pub use serialize::{hop_gaps, serialize_nodes};
pub use smiles::{parse_smiles, SmilesError};
pub use structure::{bridges, ring_atoms, struct_matrices, StructMatrices};

use std::fmt;

/// Heavy-atom elements accepted by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    /// Dense index used by embedding tables.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Heteroatoms for the purpose of motif cleavage (halogens and boron excluded).
    pub fn is_cleavage_hetero(self) -> bool {
        matches!(self, Element::N | Element::O | Element::S | Element::P)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomRecord {
    pub element: Element,
    pub aromatic: bool,
    pub degree: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, v: usize) -> usize {
        if self.a == v {
            self.b
        } else {
            self.a
        }
    }
}

/// A connected heavy-atom graph. Implicit hydrogens are never materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    atoms: Vec<AtomRecord>,
    bonds: Vec<Bond>,
    neighbors: Vec<Vec<usize>>,
}

impl MolGraph {
    /// Builds a graph from atoms and bonds, recomputing degrees. Panics on
    /// invalid endpoints or duplicate bonds; the parser never produces them.
    pub fn from_parts(mut atoms: Vec<AtomRecord>, bonds: Vec<Bond>) -> Self {
        let n = atoms.len();
        let mut neighbors = vec![Vec::new(); n];
        for bond in &bonds {
            assert!(bond.a != bond.b && bond.a < n && bond.b < n, "bad bond {bond:?}");
            assert!(!neighbors[bond.a].contains(&bond.b), "duplicate bond {bond:?}");
            neighbors[bond.a].push(bond.b);
            neighbors[bond.b].push(bond.a);
        }
        for (atom, nb) in atoms.iter_mut().zip(&neighbors) {
            atom.degree = nb.len();
        }
        MolGraph {
            atoms,
            bonds,
            neighbors,
        }
    }

    pub fn atoms(&self) -> &[AtomRecord] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// Neighbor lists in bond insertion order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn adjacency_lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.bonds
            .iter()
            .find(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
    }

    /// Relabels atoms so that old atom `v` becomes new atom `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.num_atoms());
        let mut atoms = self.atoms.clone();
        for (v, atom) in self.atoms.iter().enumerate() {
            atoms[perm[v]] = atom.clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        MolGraph::from_parts(atoms, bonds)
    }

    /// True when the graph contains a six-membered cycle of aromatic carbons.
    pub fn has_benzene_ring(&self) -> bool {
        let is_ar_c = |v: usize| self.atoms[v].aromatic && self.atoms[v].element == Element::C;
        let mut path = Vec::with_capacity(6);
        for start in 0..self.num_atoms() {
            if !is_ar_c(start) {
                continue;
            }
            path.clear();
            path.push(start);
            if self.six_cycle_from(start, &mut path, &is_ar_c) {
                return true;
            }
        }
        false
    }

    fn six_cycle_from(&self, start: usize, path: &mut Vec<usize>, ok: &dyn Fn(usize) -> bool) -> bool {
        let last = *path.last().unwrap();
        if path.len() == 6 {
            return self.neighbors[last].contains(&start);
        }
        for &u in &self.neighbors[last] {
            // only extend through larger indices so each cycle is found from its minimum atom
            if u > start && ok(u) && !path.contains(&u) {
                path.push(u);
                if self.six_cycle_from(start, path, ok) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benzene_detection() {
        assert!(parse_smiles("c1ccccc1").unwrap().has_benzene_ring());
        assert!(parse_smiles("Cc1ccccc1O").unwrap().has_benzene_ring());
        assert!(parse_smiles("c1ccc2ccccc2c1").unwrap().has_benzene_ring());
        assert!(!parse_smiles("C1CCCCC1").unwrap().has_benzene_ring());
        assert!(!parse_smiles("c1ccncc1").unwrap().has_benzene_ring());
        assert!(!parse_smiles("c1ccoc1").unwrap().has_benzene_ring());
        assert!(!parse_smiles("CCO").unwrap().has_benzene_ring());
    }

    #[test]
    fn permutation_relabels_bonds() {
        let g = parse_smiles("CCO").unwrap();
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.atoms()[1].element, Element::O);
        assert!(p.bond_between(2, 0).is_some());
        assert!(p.bond_between(0, 1).is_some());
        assert!(p.bond_between(2, 1).is_none());
    }
}
