//! Tab-separated molecule datasets and the seeded template generator.
//!
//! File format: one record per line, `SMILES[\ttarget1\ttarget2…]`. Lines
//! starting with `#` are ignored, except that a `# smiles\t<name>…` line names
//! the target columns.

use crate::error::{HsaError, HsaResult};
use crate::molgraph::{parse_smiles, MolGraph};
use crate::tasks::{synth_targets, SynthTarget};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Record {
    pub smiles: String,
    pub graph: MolGraph,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn target_width(&self) -> usize {
        self.records.first().map_or(self.columns.len(), |r| r.targets.len())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn parse(text: &str) -> HsaResult<Dataset> {
        let mut ds = Dataset::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let mut fields = rest.trim_start().split('\t');
                if fields.next() == Some("smiles") && ds.records.is_empty() {
                    ds.columns = fields.map(str::to_string).collect();
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let smiles = fields.next().unwrap_or_default().trim().to_string();
            let graph = parse_smiles(&smiles).map_err(|e| HsaError::Dataset {
                line: line_no,
                msg: e.to_string(),
            })?;
            let targets = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| HsaError::Dataset {
                        line: line_no,
                        msg: format!("bad target `{f}`"),
                    })
                })
                .collect::<HsaResult<Vec<f64>>>()?;
            if let Some(first) = ds.records.first() {
                if first.targets.len() != targets.len() {
                    return Err(HsaError::Dataset {
                        line: line_no,
                        msg: format!("expected {} targets, found {}", first.targets.len(), targets.len()),
                    });
                }
            }
            ds.records.push(Record { smiles, graph, targets });
        }
        if !ds.columns.is_empty() && ds.columns.len() != ds.target_width() {
            ds.columns.clear();
        }
        Ok(ds)
    }

    pub fn read(path: &Path) -> HsaResult<Dataset> {
        Dataset::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.columns.is_empty() {
            out.push_str("# smiles");
            for c in &self.columns {
                out.push('\t');
                out.push_str(c);
            }
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&r.smiles);
            for t in &r.targets {
                let _ = write!(out, "\t{t}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> HsaResult<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Seeded shuffle, then the first `train_fraction` of records for training.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        let cut = cut.min(self.len());
        let val = idx.split_off(cut);
        (idx, val)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub n: usize,
    pub seed: u64,
    pub min_atoms: usize,
    pub max_atoms: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 1000,
            seed: 7,
            min_atoms: 1,
            max_atoms: 40,
        }
    }
}

struct RingTemplate {
    smiles: &'static str,
    atoms: usize,
    aromatic: bool,
}

const RINGS: [RingTemplate; 8] = [
    RingTemplate { smiles: "c1ccccc1", atoms: 6, aromatic: true },
    RingTemplate { smiles: "C1CCCCC1", atoms: 6, aromatic: false },
    RingTemplate { smiles: "C1CCCC1", atoms: 5, aromatic: false },
    RingTemplate { smiles: "c1ccncc1", atoms: 6, aromatic: true },
    RingTemplate { smiles: "c1ccoc1", atoms: 5, aromatic: true },
    RingTemplate { smiles: "c1ccsc1", atoms: 5, aromatic: true },
    RingTemplate { smiles: "c1ccc2ccccc2c1", atoms: 10, aromatic: true },
    RingTemplate { smiles: "C1CCNCC1", atoms: 6, aromatic: false },
];

const SUBSTITUENTS: [(&str, usize); 7] = [
    ("C", 1),
    ("O", 1),
    ("N", 1),
    ("F", 1),
    ("Cl", 1),
    ("Br", 1),
    ("=O", 1),
];

const CHAIN_HETERO: [&str; 3] = ["O", "N", "S"];

/// Builds one SMILES string with exactly `target` heavy atoms from chain,
/// branch and ring units.
fn template_molecule<R: Rng>(rng: &mut R, target: usize) -> String {
    let mut s = String::new();
    let mut atoms = 0;
    let mut last_aromatic = false;
    let mut last_hetero = false;
    while atoms < target {
        let remaining = target - atoms;
        let fitting: Vec<&RingTemplate> = RINGS.iter().filter(|r| r.atoms <= remaining).collect();
        if !fitting.is_empty() && rng.gen_bool(0.4) {
            let ring = fitting[rng.gen_range(0..fitting.len())];
            if last_aromatic && ring.aromatic {
                s.push('-');
            }
            s.push_str(ring.smiles);
            atoms += ring.atoms;
            last_aromatic = ring.aromatic;
            last_hetero = false;
            continue;
        }
        let len = rng.gen_range(1..=remaining.min(6));
        let mut used = 0;
        for pos in 0..len {
            if used >= len {
                break;
            }
            let hetero = pos > 0 && !last_hetero && rng.gen_bool(0.15);
            if hetero {
                s.push_str(CHAIN_HETERO[rng.gen_range(0..CHAIN_HETERO.len())]);
                used += 1;
                last_hetero = true;
                continue;
            }
            s.push('C');
            used += 1;
            last_hetero = false;
            if used < len && rng.gen_bool(0.25) {
                let (sub, n) = SUBSTITUENTS[rng.gen_range(0..SUBSTITUENTS.len())];
                s.push('(');
                s.push_str(sub);
                s.push(')');
                used += n;
            }
        }
        atoms += used;
        last_aromatic = false;
    }
    s
}

/// Seeded dataset whose heavy-atom counts are drawn uniformly from
/// `min_atoms..=max_atoms`; every record carries all synthetic targets.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lo = cfg.min_atoms.max(1);
    let hi = cfg.max_atoms.max(lo);
    let mut records = Vec::with_capacity(cfg.n);
    while records.len() < cfg.n {
        let target = rng.gen_range(lo..=hi);
        let smiles = template_molecule(&mut rng, target);
        let graph = parse_smiles(&smiles).expect("template grammar emits valid SMILES");
        let targets = synth_targets(&graph);
        records.push(Record { smiles, graph, targets });
    }
    Dataset {
        columns: SynthTarget::ALL.iter().map(|t| t.name().to_string()).collect(),
        records,
    }
}

/// Atom-count histogram with half-open bins `[k·w, (k+1)·w)`; returns `(lo, count)` for non-empty bins.
pub fn atom_histogram(ds: &Dataset, bin_width: usize) -> Vec<(usize, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for r in &ds.records {
        let lo = r.graph.num_atoms() / bin_width * bin_width;
        *counts.entry(lo).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_parses() {
        let cfg = GeneratorConfig {
            n: 200,
            seed: 7,
            ..GeneratorConfig::default()
        };
        let a = generate_dataset(&cfg).to_text();
        let b = generate_dataset(&cfg).to_text();
        assert_eq!(a, b);
        let ds = Dataset::parse(&a).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.columns.len(), 5);
        for r in &ds.records {
            let n = r.graph.num_atoms();
            assert!((1..=40).contains(&n), "{} has {n} atoms", r.smiles);
            assert_eq!(r.targets[2], n as f64);
        }
    }

    #[test]
    fn atom_counts_hit_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for target in 1..60 {
            let s = template_molecule(&mut rng, target);
            assert_eq!(parse_smiles(&s).unwrap().num_atoms(), target, "{s}");
        }
    }

    #[test]
    fn both_classes_present() {
        let ds = generate_dataset(&GeneratorConfig {
            n: 300,
            ..GeneratorConfig::default()
        });
        let pos = ds.records.iter().filter(|r| r.targets[4] == 1.0).count();
        assert!(pos > 60 && pos < 240, "{pos}");
    }

    #[test]
    fn long_molecules_reach_max_bin() {
        let ds = generate_dataset(&GeneratorConfig {
            n: 300,
            seed: 1,
            min_atoms: 1,
            max_atoms: 120,
        });
        let hist = atom_histogram(&ds, 20);
        assert_eq!(hist.first().unwrap().0, 0);
        assert!(hist.iter().any(|&(lo, _)| lo == 100));
        assert!(hist.iter().all(|&(lo, _)| lo <= 120));
    }

    #[test]
    fn parse_comments_and_errors() {
        let ds = Dataset::parse("# a comment\nCCO\t1.5\n\n#x\nc1ccccc1\t2\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.columns.is_empty());
        assert_eq!(ds.records[1].targets, vec![2.0]);
        assert!(matches!(
            Dataset::parse("CCO\t1\nCC\n"),
            Err(HsaError::Dataset { line: 2, .. })
        ));
        assert!(matches!(Dataset::parse("C(C\n"), Err(HsaError::Dataset { line: 1, .. })));
    }

    #[test]
    fn split_is_seeded_partition() {
        let ds = generate_dataset(&GeneratorConfig {
            n: 50,
            ..GeneratorConfig::default()
        });
        let (tr, va) = ds.split(0.8, 7);
        assert_eq!((tr.len(), va.len()), (40, 10));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(ds.split(0.8, 7), (tr, va));
    }
}
