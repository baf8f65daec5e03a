use super::{bridges, ring_atoms, BondOrder, MolGraph};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

/// Vocabulary id reserved for unknown or rare motifs.
pub const UNK_ID: usize = 0;

/// Canonical fragment key: sorted element multiset, ring flag and sorted
/// intra-fragment degree sequence. Collisions between distinct fragments
/// sharing all three are accepted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MotifKey(String);

impl MotifKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_string(s: impl Into<String>) -> Self {
        MotifKey(s.into())
    }
}

impl fmt::Display for MotifKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Partition of a molecule's atoms into motif fragments.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifSet {
    /// Fragments in order of their smallest atom index; atoms ascending within each.
    pub fragments: Vec<Vec<usize>>,
    pub keys: Vec<MotifKey>,
    /// Bond indices that were cleaved.
    pub cleaved: Vec<usize>,
}

impl MotifSet {
    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    /// Fragment index of every atom.
    pub fn assignment(&self, num_atoms: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; num_atoms];
        for (f, atoms) in self.fragments.iter().enumerate() {
            for &v in atoms {
                out[v] = f;
            }
        }
        out
    }
}

/// Whether a bond is cut by the cleavage rules: acyclic single bonds with
/// (a) exactly one endpoint in a ring, or (b) one N/O/S/P endpoint and one carbon.
pub(crate) fn is_cleavable(g: &MolGraph, bond_idx: usize, is_bridge: &[bool], in_ring: &[bool]) -> bool {
    let b = g.bonds()[bond_idx];
    if !is_bridge[bond_idx] || b.order != BondOrder::Single {
        return false;
    }
    let rule_a = in_ring[b.a] != in_ring[b.b];
    let (ea, eb) = (g.atoms()[b.a].element, g.atoms()[b.b].element);
    use super::Element::C;
    let rule_b = (ea.is_cleavage_hetero() && eb == C) || (eb.is_cleavage_hetero() && ea == C);
    rule_a || rule_b
}

pub fn fragment_motifs(g: &MolGraph) -> MotifSet {
    let n = g.num_atoms();
    let is_bridge = bridges(g);
    let in_ring = ring_atoms(g);
    let cleaved: Vec<usize> = (0..g.num_bonds())
        .filter(|&i| is_cleavable(g, i, &is_bridge, &in_ring))
        .collect();
    let mut cut = vec![false; g.num_bonds()];
    for &i in &cleaved {
        cut[i] = true;
    }
    let mut kept: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, b) in g.bonds().iter().enumerate() {
        if !cut[i] {
            kept[b.a].push(b.b);
            kept[b.b].push(b.a);
        }
    }

    let mut comp = vec![usize::MAX; n];
    let mut fragments = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = fragments.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut head = 0;
        while head < members.len() {
            let v = members[head];
            head += 1;
            for &u in &kept[v] {
                if comp[u] == usize::MAX {
                    comp[u] = id;
                    members.push(u);
                }
            }
        }
        members.sort_unstable();
        fragments.push(members);
    }

    let keys = fragments
        .iter()
        .map(|f| fragment_key(g, f, &kept, &in_ring))
        .collect();
    MotifSet {
        fragments,
        keys,
        cleaved,
    }
}

fn fragment_key(g: &MolGraph, atoms: &[usize], kept: &[Vec<usize>], in_ring: &[bool]) -> MotifKey {
    let mut elements: Vec<_> = atoms.iter().map(|&v| g.atoms()[v].element).collect();
    elements.sort();
    let mut degrees: Vec<usize> = atoms.iter().map(|&v| kept[v].len()).collect();
    degrees.sort_unstable_by(|a, b| b.cmp(a));
    let ring = atoms.iter().any(|&v| in_ring[v]);

    let mut key = String::new();
    let mut i = 0;
    while i < elements.len() {
        let e = elements[i];
        let run = elements[i..].iter().take_while(|&&x| x == e).count();
        key.push_str(e.symbol());
        if run > 1 {
            key.push_str(&run.to_string());
        }
        i += run;
    }
    key.push('|');
    key.push(if ring { 'R' } else { 'A' });
    key.push('|');
    let deg: Vec<String> = degrees.iter().map(|d| d.to_string()).collect();
    key.push_str(&deg.join(","));
    MotifKey(key)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("motif vocabulary requires a non-empty corpus")]
    EmptyCorpus,
    #[error("malformed vocabulary line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Corpus-level motif vocabulary. Ids are dense, assigned in first-seen
/// order starting at 1; id 0 is UNK.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifVocabulary {
    entries: Vec<(MotifKey, usize)>,
    index: HashMap<MotifKey, usize>,
    min_freq: usize,
}

impl MotifVocabulary {
    pub fn build<'a, I>(corpus: I, min_freq: usize) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = &'a MolGraph>,
    {
        let mut vocab = MotifVocabulary {
            entries: Vec::new(),
            index: HashMap::new(),
            min_freq,
        };
        let mut seen = 0usize;
        for g in corpus {
            seen += 1;
            for key in fragment_motifs(g).keys {
                vocab.count(key);
            }
        }
        if seen == 0 {
            return Err(VocabError::EmptyCorpus);
        }
        Ok(vocab)
    }

    fn count(&mut self, key: MotifKey) {
        match self.index.get(&key) {
            Some(&id) => self.entries[id - 1].1 += 1,
            None => {
                self.entries.push((key.clone(), 1));
                self.index.insert(key, self.entries.len());
            }
        }
    }

    /// Id for lookup; rare or unseen keys resolve to [`UNK_ID`].
    pub fn lookup(&self, key: &MotifKey) -> usize {
        match self.index.get(key) {
            Some(&id) if self.entries[id - 1].1 >= self.min_freq => id,
            _ => UNK_ID,
        }
    }

    /// Raw id regardless of the frequency threshold.
    pub fn id_of(&self, key: &MotifKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn frequency(&self, key: &MotifKey) -> usize {
        self.index.get(key).map_or(0, |&id| self.entries[id - 1].1)
    }

    /// Number of ids including UNK; the size of an embedding table over this vocabulary.
    pub fn len(&self) -> usize {
        self.entries.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Keys in id order (id = position + 1).
    pub fn keys(&self) -> impl Iterator<Item = (&MotifKey, usize)> {
        self.entries.iter().map(|(k, f)| (k, *f))
    }

    /// Tab-separated `id\tkey\tfrequency` lines, preceded by a `#min_freq` header.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("#min_freq\t{}\n", self.min_freq);
        for (i, (k, f)) in self.entries.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", i + 1, k, f));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, VocabError> {
        let mut vocab = MotifVocabulary {
            entries: Vec::new(),
            index: HashMap::new(),
            min_freq: 1,
        };
        for (lineno, line) in text.lines().enumerate() {
            let bad = |reason: &str| VocabError::Malformed {
                line: lineno + 1,
                reason: reason.to_string(),
            };
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols[0] == "#min_freq" {
                vocab.min_freq = cols
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad min_freq"))?;
                continue;
            }
            if cols.len() != 3 {
                return Err(bad("expected 3 columns"));
            }
            let id: usize = cols[0].parse().map_err(|_| bad("bad id"))?;
            let freq: usize = cols[2].parse().map_err(|_| bad("bad frequency"))?;
            if id != vocab.entries.len() + 1 {
                return Err(bad("ids must be dense and ascending"));
            }
            let key = MotifKey(cols[1].to_string());
            vocab.entries.push((key.clone(), freq));
            vocab.index.insert(key, id);
        }
        Ok(vocab)
    }
}
