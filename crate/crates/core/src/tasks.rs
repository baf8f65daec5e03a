//! Prediction heads' losses and metrics, and exact graph-derived targets.

use crate::molgraph::{struct_matrices, Element, MolGraph};
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Regression,
    Binary,
    /// One logit per motif vocabulary entry, target = motif present.
    Multilabel,
}

impl TaskKind {
    /// Whether a larger validation metric is better.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, TaskKind::Regression)
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Regression => "mae",
            TaskKind::Binary | TaskKind::Multilabel => "accuracy",
        }
    }
}

impl FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "regression" => Ok(TaskKind::Regression),
            "binary" | "classification" => Ok(TaskKind::Binary),
            "multilabel" | "motif-multilabel" => Ok(TaskKind::Multilabel),
            _ => Err(format!("unknown task kind `{s}`")),
        }
    }
}

/// Training loss for one molecule: smooth-L1 (β = 1) summed over regression
/// targets, logistic cross-entropy for binary, summed over labels for multilabel.
pub fn task_loss(tape: &mut Tape, output: Var, target: &[f64], kind: TaskKind) -> Result<Var> {
    let width = tape.value(output).len();
    if width != target.len() {
        return Err(TensorError::ShapeMismatch {
            op: "task_loss",
            left: tape.value(output).shape().to_vec(),
            right: vec![target.len()],
        });
    }
    match kind {
        TaskKind::Regression => {
            let l = tape.smooth_l1(output, target, 1.0)?;
            Ok(tape.sum(l))
        }
        TaskKind::Binary | TaskKind::Multilabel => {
            let sp = tape.softplus(output);
            let y = tape.constant(Tensor::new(tape.value(output).shape().to_vec(), target.to_vec())?);
            let yz = tape.mul(y, output)?;
            let l = tape.sub(sp, yz)?;
            Ok(tape.sum(l))
        }
    }
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Fraction of logits whose sign agrees with the 0/1 target (logit 0 counts as negative).
pub fn accuracy(logits: &[f64], target: &[f64]) -> f64 {
    assert_eq!(logits.len(), target.len());
    if logits.is_empty() {
        return 0.0;
    }
    let hits = logits.iter().zip(target).filter(|(&z, &y)| (z > 0.0) == (y > 0.5)).count();
    hits as f64 / logits.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthTarget {
    RingCount,
    WienerIndex,
    HeavyAtomCount,
    HeteroFraction,
    HasBenzene,
}

impl SynthTarget {
    pub const ALL: [SynthTarget; 5] = [
        SynthTarget::RingCount,
        SynthTarget::WienerIndex,
        SynthTarget::HeavyAtomCount,
        SynthTarget::HeteroFraction,
        SynthTarget::HasBenzene,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthTarget::RingCount => "ring_count",
            SynthTarget::WienerIndex => "wiener_index",
            SynthTarget::HeavyAtomCount => "heavy_atom_count",
            SynthTarget::HeteroFraction => "hetero_fraction",
            SynthTarget::HasBenzene => "has_benzene",
        }
    }
}

impl fmt::Display for SynthTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthTarget {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        SynthTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown target `{s}`"))
    }
}

pub fn synth_target(g: &MolGraph, kind: SynthTarget) -> f64 {
    let n = g.num_atoms();
    match kind {
        SynthTarget::RingCount => (g.num_bonds() + 1).saturating_sub(n) as f64,
        SynthTarget::WienerIndex => {
            let sm = struct_matrices(g);
            let mut w = 0u64;
            for i in 0..n {
                for j in i + 1..n {
                    w += u64::from(sm.distance(i, j));
                }
            }
            w as f64
        }
        SynthTarget::HeavyAtomCount => n as f64,
        SynthTarget::HeteroFraction => {
            let hetero = g.atoms().iter().filter(|a| a.element != Element::C).count();
            if n == 0 {
                0.0
            } else {
                hetero as f64 / n as f64
            }
        }
        SynthTarget::HasBenzene => f64::from(u8::from(g.has_benzene_ring())),
    }
}

/// All targets in [`SynthTarget::ALL`] order.
pub fn synth_targets(g: &MolGraph) -> Vec<f64> {
    SynthTarget::ALL.iter().map(|&k| synth_target(g, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn targets(s: &str) -> Vec<f64> {
        synth_targets(&parse_smiles(s).unwrap())
    }

    fn brute_wiener(g: &MolGraph) -> f64 {
        // Floyd-Warshall, independent of the BFS used by struct_matrices
        let n = g.num_atoms();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for b in g.bonds() {
            d[b.a][b.b] = 1;
            d[b.b][b.a] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d[i][j] as f64).sum()
    }

    #[test]
    fn benzene_targets() {
        let t = targets("c1ccccc1");
        assert_eq!(t, vec![1.0, 27.0, 6.0, 0.0, 1.0]);
        assert_eq!(brute_wiener(&parse_smiles("c1ccccc1").unwrap()), 27.0);
    }

    #[test]
    fn ethanol_targets() {
        let t = targets("CCO");
        assert_eq!(t[1], 4.0);
        assert!((t[3] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t[4], 0.0);
    }

    #[test]
    fn methane_targets() {
        assert_eq!(targets("C"), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn wiener_matches_floyd_warshall() {
        for s in ["c1ccc2ccccc2c1", "CC(C)(C)CO", "C1CCC1CC(=O)N", "c1ccncc1-c1ccoc1"] {
            let g = parse_smiles(s).unwrap();
            assert_eq!(synth_target(&g, SynthTarget::WienerIndex), brute_wiener(&g), "{s}");
        }
    }

    #[test]
    fn mae_by_hand() {
        assert_eq!(mae(&[1.0, 2.0], &[0.0, 4.0]), 1.5);
    }

    #[test]
    fn losses_at_known_points() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::matrix(1, 2, vec![0.5, -2.0]).unwrap());
        let l = task_loss(&mut t, z, &[0.5, -2.0], TaskKind::Regression).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let z = t.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        let l = task_loss(&mut t, z, &[1.0], TaskKind::Binary).unwrap();
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);

        let z = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let l = task_loss(&mut t, z, &[1.0, 0.0], TaskKind::Multilabel).unwrap();
        assert!((t.value(l).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);

        assert!(task_loss(&mut t, z, &[1.0], TaskKind::Multilabel).is_err());
    }

    #[test]
    fn accuracy_threshold() {
        assert_eq!(accuracy(&[0.3, -0.1, 0.0, 2.0], &[1.0, 0.0, 1.0, 0.0]), 0.5);
    }
}
