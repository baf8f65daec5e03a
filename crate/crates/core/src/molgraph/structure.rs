use super::MolGraph;
use std::collections::VecDeque;

/// Dense adjacency and hop-distance matrices, row-major `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructMatrices {
    n: usize,
    adjacency: Vec<u8>,
    distance: Vec<u32>,
}

impl StructMatrices {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j] == 1
    }

    pub fn distance(&self, i: usize, j: usize) -> u32 {
        self.distance[i * self.n + j]
    }

    pub fn adjacency_matrix(&self) -> &[u8] {
        &self.adjacency
    }

    pub fn distance_matrix(&self) -> &[u32] {
        &self.distance
    }
}

/// All-pairs hop distances by BFS from every atom.
pub fn struct_matrices(g: &MolGraph) -> StructMatrices {
    let n = g.num_atoms();
    let mut adjacency = vec![0u8; n * n];
    for b in g.bonds() {
        adjacency[b.a * n + b.b] = 1;
        adjacency[b.b * n + b.a] = 1;
    }
    let mut distance = vec![u32::MAX; n * n];
    let mut queue = VecDeque::with_capacity(n);
    for src in 0..n {
        let row = &mut distance[src * n..(src + 1) * n];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            let dv = row[v];
            for &u in g.neighbors(v) {
                if row[u] == u32::MAX {
                    row[u] = dv + 1;
                    queue.push_back(u);
                }
            }
        }
    }
    StructMatrices {
        n,
        adjacency,
        distance,
    }
}

/// Marks each bond index that is a bridge (lies on no cycle).
pub fn bridges(g: &MolGraph) -> Vec<bool> {
    let n = g.num_atoms();
    let mut is_bridge = vec![false; g.num_bonds()];
    // incident bond ids per atom, so parallel traversal can skip the parent edge by id
    let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (id, b) in g.bonds().iter().enumerate() {
        incident[b.a].push((b.b, id));
        incident[b.b].push((b.a, id));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    // iterative DFS: (vertex, parent edge id, next incident position)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        stack.push((root, usize::MAX, 0));
        while let Some(&mut (v, parent_edge, ref mut pos)) = stack.last_mut() {
            if *pos < incident[v].len() {
                let (u, id) = incident[v][*pos];
                *pos += 1;
                if id == parent_edge {
                    continue;
                }
                if disc[u] == usize::MAX {
                    disc[u] = timer;
                    low[u] = timer;
                    timer += 1;
                    stack.push((u, id, 0));
                } else {
                    low[v] = low[v].min(disc[u]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[v]);
                    if low[v] > disc[p] {
                        is_bridge[parent_edge] = true;
                    }
                }
            }
        }
    }
    is_bridge
}

/// Atoms incident to at least one non-bridge bond, i.e. members of some cycle.
pub fn ring_atoms(g: &MolGraph) -> Vec<bool> {
    let br = bridges(g);
    let mut in_ring = vec![false; g.num_atoms()];
    for (b, &is_br) in g.bonds().iter().zip(&br) {
        if !is_br {
            in_ring[b.a] = true;
            in_ring[b.b] = true;
        }
    }
    in_ring
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    #[test]
    fn path_distances() {
        let m = struct_matrices(&parse_smiles("CCO").unwrap());
        assert_eq!(m.distance(0, 2), 2);
        assert_eq!(m.distance(2, 0), 2);
        assert!(m.adjacent(0, 1) && !m.adjacent(0, 2));
    }

    #[test]
    fn benzene_antipodes() {
        let m = struct_matrices(&parse_smiles("c1ccccc1").unwrap());
        for i in 0..6 {
            assert_eq!(m.distance(i, (i + 3) % 6), 3);
        }
    }

    #[test]
    fn single_atom() {
        let m = struct_matrices(&parse_smiles("C").unwrap());
        assert_eq!(m.len(), 1);
        assert_eq!(m.distance_matrix(), &[0]);
        assert_eq!(m.adjacency_matrix(), &[0]);
    }

    #[test]
    fn ring_membership_toluene() {
        let g = parse_smiles("Cc1ccccc1").unwrap();
        let r = ring_atoms(&g);
        assert_eq!(r, vec![false, true, true, true, true, true, true]);
        let br = bridges(&g);
        assert_eq!(br.iter().filter(|&&b| b).count(), 1);
        assert!(br[0]);
    }

    #[test]
    fn fused_rings_have_no_bridges() {
        let g = parse_smiles("c1ccc2ccccc2c1").unwrap();
        assert!(bridges(&g).iter().all(|&b| !b));
    }

    #[test]
    fn biphenyl_link_is_bridge() {
        let g = parse_smiles("c1ccccc1-c1ccccc1").unwrap();
        let br = bridges(&g);
        let idx = g
            .bonds()
            .iter()
            .position(|b| (b.a, b.b) == (5, 6))
            .unwrap();
        assert!(br[idx]);
        assert_eq!(br.iter().filter(|&&b| b).count(), 1);
    }
}
