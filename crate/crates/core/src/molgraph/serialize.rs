use super::{MolGraph, MotifSet, StructMatrices};

/// Node order fed to the graph-SSM: fragments by size descending (ties to the
/// fragment holding the smaller atom index), atoms within a fragment by
/// intra-fragment degree descending then index ascending.
pub fn serialize_nodes(g: &MolGraph, m: &MotifSet) -> Vec<usize> {
    let mut degree: Vec<usize> = (0..g.num_atoms()).map(|v| g.degree(v)).collect();
    for &b in &m.cleaved {
        let bond = g.bonds()[b];
        degree[bond.a] -= 1;
        degree[bond.b] -= 1;
    }
    let mut frags: Vec<&Vec<usize>> = m.fragments.iter().collect();
    frags.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| a.iter().min().cmp(&b.iter().min()))
    });
    let mut order = Vec::with_capacity(g.num_atoms());
    for f in frags {
        let mut atoms = f.clone();
        atoms.sort_by(|&a, &b| degree[b].cmp(&degree[a]).then(a.cmp(&b)));
        order.extend(atoms);
    }
    order
}

/// Hop distance between consecutive serialized nodes (`order.len() - 1` entries).
pub fn hop_gaps(order: &[usize], sm: &StructMatrices) -> Vec<u32> {
    order.windows(2).map(|w| sm.distance(w[0], w[1])).collect()
}
