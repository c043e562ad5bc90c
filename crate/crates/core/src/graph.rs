//! Sparse symmetric count networks, edge-list I/O, degree accounting, and
//! holdout masks for link-prediction experiments.

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unordered node pair with `i <= j`. Diagonal dyads (`i == i`) are allowed.
pub type Dyad = (usize, usize);

/// Normalize a node pair into dyad order.
pub fn dyad(a: usize, b: usize) -> Dyad {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Undirected multigraph stored as sparse symmetric dyad counts.
///
/// Only strictly positive counts are stored; an absent dyad means zero links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    n: usize,
    counts: BTreeMap<Dyad, u64>,
    labels: Vec<String>,
}

/// Per-node degrees: `k_i` sums row `i` with the diagonal counted once,
/// `khat_i = k_i + A_ii` counts it twice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeVector {
    pub k: Vec<u64>,
    pub khat: Vec<u64>,
}

/// Set of dyads flagged unobserved, optionally carrying the held-out true
/// counts (aligned with `missing`) for evaluation holdouts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMask {
    missing: Vec<Dyad>,
    truth: Option<Vec<u64>>,
}

impl Network {
    /// Build a network from explicit counts. Zero counts are dropped.
    pub fn from_counts(
        n: usize,
        counts: BTreeMap<Dyad, u64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("network must have at least one node".into()));
        }
        let labels = match labels {
            Some(l) => {
                if l.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "{} labels for {} nodes",
                        l.len(),
                        n
                    )));
                }
                let mut seen = std::collections::BTreeSet::new();
                for lab in &l {
                    if !seen.insert(lab.clone()) {
                        return Err(Error::InvalidArgument(format!("duplicate label {lab:?}")));
                    }
                }
                l
            }
            None => (0..n).map(|i| i.to_string()).collect(),
        };
        let mut clean = BTreeMap::new();
        for (&(i, j), &c) in &counts {
            if i > j || j >= n {
                return Err(Error::DyadOutOfRange { i, j, n });
            }
            if c > 0 {
                clean.insert((i, j), c);
            }
        }
        Ok(Network { n, counts: clean, labels })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Count for an arbitrary node pair (orientation normalized).
    pub fn count(&self, a: usize, b: usize) -> u64 {
        self.counts.get(&dyad(a, b)).copied().unwrap_or(0)
    }

    /// Nonzero dyads in sorted order.
    pub fn dyads(&self) -> impl Iterator<Item = (Dyad, u64)> + '_ {
        self.counts.iter().map(|(&d, &c)| (d, c))
    }

    /// Total link count Σ_{i<=j} A_ij.
    pub fn total_count(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Number of off-diagonal dyads with at least one link.
    pub fn link_dyad_count(&self) -> usize {
        self.counts.keys().filter(|&&(i, j)| i != j).count()
    }

    /// Per-node degree sums.
    pub fn degrees(&self) -> DegreeVector {
        let mut k = vec![0u64; self.n];
        let mut khat = vec![0u64; self.n];
        for (&(i, j), &c) in &self.counts {
            if i == j {
                k[i] += c;
                khat[i] += 2 * c;
            } else {
                k[i] += c;
                k[j] += c;
                khat[i] += c;
                khat[j] += c;
            }
        }
        DegreeVector { k, khat }
    }

    /// Parse the line-oriented edge-list format.
    ///
    /// Each non-comment line is `u v` or `u v w` (w a positive integer,
    /// default 1); tokens are arbitrary strings mapped to indices in
    /// first-appearance order, and repeated or reversed dyads accumulate.
    /// `#`-prefixed lines are comments, except two header forms: `#nodes: n`
    /// pre-declares the node count (padding trailing isolates), and
    /// `#node: label` pre-registers one label in index order (what
    /// [`Network::to_edge_list_string`] emits so round trips keep isolates
    /// and indices intact). Headers must precede all edges.
    pub fn load_edge_list<R: BufRead>(reader: R) -> Result<Self> {
        let mut declared: Option<usize> = None;
        let mut labels: Vec<String> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut counts: BTreeMap<Dyad, u64> = BTreeMap::new();
        let mut seen_edges = false;

        let intern = |tok: &str, labels: &mut Vec<String>, index: &mut BTreeMap<String, usize>| {
            if let Some(&i) = index.get(tok) {
                i
            } else {
                let i = labels.len();
                labels.push(tok.to_string());
                index.insert(tok.to_string(), i);
                i
            }
        };

        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                let rest = rest.trim_start();
                if let Some(count) = rest.strip_prefix("nodes:") {
                    if seen_edges {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: "#nodes: header must precede all edges".into(),
                        });
                    }
                    declared = Some(count.trim().parse::<usize>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("invalid node count {:?}", count.trim()),
                    })?);
                } else if let Some(label) = rest.strip_prefix("node:") {
                    if seen_edges {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: "#node: header must precede all edges".into(),
                        });
                    }
                    let label = label.trim();
                    if index.contains_key(label) {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: format!("duplicate node label {label:?}"),
                        });
                    }
                    intern(label, &mut labels, &mut index);
                }
                continue;
            }

            let tokens: Vec<&str> = trimmed.split_whitespace().collect();
            let (u, v, w) = match tokens.len() {
                2 => (tokens[0], tokens[1], 1u64),
                3 => {
                    let w = tokens[2].parse::<u64>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("invalid weight {:?}", tokens[2]),
                    })?;
                    if w == 0 {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: "weight must be positive".into(),
                        });
                    }
                    (tokens[0], tokens[1], w)
                }
                k => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected 2 or 3 tokens, found {k}"),
                    })
                }
            };
            seen_edges = true;
            let i = intern(u, &mut labels, &mut index);
            let j = intern(v, &mut labels, &mut index);
            *counts.entry(dyad(i, j)).or_insert(0) += w;
        }

        if labels.is_empty() && declared.is_none() {
            return Err(Error::EmptyInput);
        }
        if let Some(n) = declared {
            if n == 0 {
                return Err(Error::InvalidArgument("declared node count must be positive".into()));
            }
            if labels.len() > n {
                return Err(Error::InvalidArgument(format!(
                    "{} distinct nodes exceed declared count {n}",
                    labels.len()
                )));
            }
            while labels.len() < n {
                let lab = labels.len().to_string();
                if index.contains_key(&lab) {
                    return Err(Error::InvalidArgument(format!(
                        "cannot synthesize isolate label {lab:?}: already in use"
                    )));
                }
                index.insert(lab.clone(), labels.len());
                labels.push(lab);
            }
        }
        let n = labels.len();
        Network::from_counts(n, counts, Some(labels))
    }

    /// Convenience wrapper over [`Network::load_edge_list`].
    pub fn from_edge_list_str(text: &str) -> Result<Self> {
        Self::load_edge_list(text.as_bytes())
    }

    /// Serialize to the edge-list format, with node headers so a reload
    /// reproduces the exact counts map, labels, and isolates.
    pub fn to_edge_list_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("#nodes: {}\n", self.n));
        for label in &self.labels {
            out.push_str(&format!("#node: {label}\n"));
        }
        for (&(i, j), &c) in &self.counts {
            out.push_str(&format!("{} {} {}\n", self.labels[i], self.labels[j], c));
        }
        out
    }

    /// Select a holdout of `ceil(link_fraction * #off-diagonal link dyads)`
    /// link dyads and an equal number of zero dyads, uniformly without
    /// replacement, recording true counts. Deterministic in `seed`.
    pub fn make_holdout(&self, link_fraction: f64, seed: u64) -> Result<ObservationMask> {
        if !(link_fraction > 0.0 && link_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "link_fraction {link_fraction} outside (0, 1)"
            )));
        }
        let links: Vec<Dyad> = self.counts.keys().filter(|&&(i, j)| i != j).copied().collect();
        if links.is_empty() {
            return Err(Error::InvalidArgument("network has no off-diagonal links".into()));
        }
        let n_links = (link_fraction * links.len() as f64).ceil() as usize;
        let off_diag_pairs = self.n * (self.n - 1) / 2;
        let zero_available = off_diag_pairs - links.len();
        if zero_available < n_links {
            return Err(Error::NotEnoughZeroDyads { needed: n_links, available: zero_available });
        }

        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut chosen_links = links.clone();
        chosen_links.shuffle(&mut rng);
        chosen_links.truncate(n_links);

        // Zero dyads are sampled by rejection rather than enumerated; links
        // are sparse relative to node pairs.
        let mut chosen_zeros: Vec<Dyad> = Vec::with_capacity(n_links);
        let mut taken = std::collections::BTreeSet::new();
        while chosen_zeros.len() < n_links {
            let a = rng.gen_range(0..self.n);
            let b = rng.gen_range(0..self.n);
            if a == b {
                continue;
            }
            let d = dyad(a, b);
            if self.counts.contains_key(&d) || taken.contains(&d) {
                continue;
            }
            taken.insert(d);
            chosen_zeros.push(d);
        }

        let mut missing: Vec<Dyad> = chosen_links.iter().chain(chosen_zeros.iter()).copied().collect();
        missing.sort_unstable();
        let truth = missing.iter().map(|&(i, j)| self.count(i, j)).collect();
        ObservationMask::new(self.n, missing, Some(truth))
    }

    /// Return a copy with every masked dyad set to `fill`.
    pub fn apply_mask(&self, mask: &ObservationMask, fill: u64) -> Result<Network> {
        let mut counts = self.counts.clone();
        for &(i, j) in mask.dyads() {
            if j >= self.n {
                return Err(Error::DyadOutOfRange { i, j, n: self.n });
            }
            if fill == 0 {
                counts.remove(&(i, j));
            } else {
                counts.insert((i, j), fill);
            }
        }
        Network::from_counts(self.n, counts, Some(self.labels.clone()))
    }
}

impl ObservationMask {
    /// Validate dyad ranges and truth alignment against an `n`-node network.
    pub fn new(n: usize, mut missing: Vec<Dyad>, truth: Option<Vec<u64>>) -> Result<Self> {
        for &(i, j) in &missing {
            if i > j || j >= n {
                return Err(Error::DyadOutOfRange { i, j, n });
            }
        }
        if let Some(t) = &truth {
            if t.len() != missing.len() {
                return Err(Error::InvalidArgument(format!(
                    "truth has {} entries for {} missing dyads",
                    t.len(),
                    missing.len()
                )));
            }
            // Keep truth aligned under the sort below.
            let mut paired: Vec<(Dyad, u64)> =
                missing.iter().copied().zip(t.iter().copied()).collect();
            paired.sort_unstable();
            paired.dedup();
            let (m, t): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
            return Ok(ObservationMask { missing: m, truth: Some(t) });
        }
        missing.sort_unstable();
        missing.dedup();
        Ok(ObservationMask { missing, truth: None })
    }

    pub fn empty() -> Self {
        ObservationMask { missing: Vec::new(), truth: None }
    }

    pub fn dyads(&self) -> &[Dyad] {
        &self.missing
    }

    pub fn len(&self) -> usize {
        self.missing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
    }

    /// Held-out true count for a masked dyad, if truth was recorded.
    pub fn truth_of(&self, d: Dyad) -> Option<u64> {
        let t = self.truth.as_ref()?;
        let idx = self.missing.binary_search(&d).ok()?;
        Some(t[idx])
    }

    pub fn truth(&self) -> Option<&[u64]> {
        self.truth.as_deref()
    }

    /// Merge another mask into this one (truth is kept only if both carry it).
    pub fn union(&self, other: &ObservationMask, n: usize) -> Result<ObservationMask> {
        let mut missing: Vec<Dyad> = Vec::new();
        let truth = match (&self.truth, &other.truth) {
            (Some(a), Some(b)) => {
                let mut paired: Vec<(Dyad, u64)> = self
                    .missing
                    .iter()
                    .copied()
                    .zip(a.iter().copied())
                    .chain(other.missing.iter().copied().zip(b.iter().copied()))
                    .collect();
                paired.sort_unstable();
                paired.dedup();
                let (m, t): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
                missing = m;
                Some(t)
            }
            _ => {
                missing.extend_from_slice(&self.missing);
                missing.extend_from_slice(&other.missing);
                missing.sort_unstable();
                missing.dedup();
                None
            }
        };
        ObservationMask::new(n, missing, truth)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mask serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Mask covering every diagonal dyad, used when a simple graph's self-links
/// should be treated as unobserved rather than zero.
pub fn diagonal_mask(n: usize) -> ObservationMask {
    ObservationMask { missing: (0..n).map(|i| (i, i)).collect(), truth: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_unit_edges() {
        let net = Network::from_edge_list_str("a b\nb c").unwrap();
        assert_eq!(net.node_count(), 3);
        assert_eq!(net.count(0, 1), 1);
        assert_eq!(net.count(1, 2), 1);
        assert_eq!(net.count(0, 2), 0);
        assert_eq!(net.labels(), &["a", "b", "c"]);
    }

    #[test]
    fn accumulates_symmetric_duplicates() {
        let net = Network::from_edge_list_str("a b 2\nb a 3").unwrap();
        assert_eq!(net.node_count(), 2);
        assert_eq!(net.count(0, 1), 5);
        assert_eq!(net.count(1, 0), 5);
    }

    #[test]
    fn self_loop_counts() {
        let net = Network::from_edge_list_str("x x 4").unwrap();
        assert_eq!(net.node_count(), 1);
        assert_eq!(net.count(0, 0), 4);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Network::from_edge_list_str("a b\na b c d").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = Network::from_edge_list_str("a b zero").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = Network::from_edge_list_str("a b 0").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = Network::from_edge_list_str("a b -2").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(matches!(Network::from_edge_list_str(""), Err(Error::EmptyInput)));
        assert!(matches!(Network::from_edge_list_str("# only comments\n"), Err(Error::EmptyInput)));
    }

    #[test]
    fn nodes_header_pads_isolates() {
        let net = Network::from_edge_list_str("#nodes: 4\na b").unwrap();
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.degrees().k, vec![1, 1, 0, 0]);
        let err = Network::from_edge_list_str("#nodes: 1\na b").unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let err = Network::from_edge_list_str("a b\n#nodes: 4").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn degree_examples() {
        let net = Network::from_edge_list_str("a b 2").unwrap();
        let d = net.degrees();
        assert_eq!(d.k, vec![2, 2]);
        assert_eq!(d.khat, vec![2, 2]);

        let net = Network::from_edge_list_str("#nodes: 2\na a 3").unwrap();
        let d = net.degrees();
        assert_eq!(d.k, vec![3, 0]);
        assert_eq!(d.khat, vec![6, 0]);

        let net = Network::from_edge_list_str("#nodes: 3\n#node: a\n#node: b\n#node: c").unwrap();
        let d = net.degrees();
        assert_eq!(d.k, vec![0, 0, 0]);
        assert_eq!(d.khat, vec![0, 0, 0]);
    }

    #[test]
    fn round_trip_preserves_counts_and_labels() {
        let net = Network::from_edge_list_str("n0 n5\nn1 n2 7\nn5 n5 2").unwrap();
        let back = Network::from_edge_list_str(&net.to_edge_list_string()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn holdout_masks_links_and_nonlinks() {
        // 40 links on a ring over 80 nodes plus 40 extra chords.
        let mut text = String::new();
        for i in 0..40 {
            text.push_str(&format!("v{} v{}\n", i, (i + 1) % 41));
        }
        let net = Network::from_edge_list_str(&text).unwrap();
        assert_eq!(net.link_dyad_count(), 40);
        let mask = net.make_holdout(0.05, 7).unwrap();
        assert_eq!(mask.len(), 4);
        let (links, zeros): (Vec<_>, Vec<_>) =
            mask.dyads().iter().partition(|&&d| mask.truth_of(d).unwrap() >= 1);
        assert_eq!(links.len(), 2);
        assert_eq!(zeros.len(), 2);
        assert!(zeros.iter().all(|&&d| mask.truth_of(d) == Some(0)));

        let again = net.make_holdout(0.05, 7).unwrap();
        assert_eq!(mask, again);
        let other = net.make_holdout(0.05, 8).unwrap();
        assert_ne!(mask, other);
    }

    #[test]
    fn holdout_rejects_complete_graph() {
        let net = Network::from_edge_list_str("a b\nb c\na c").unwrap();
        assert!(matches!(net.make_holdout(0.5, 1), Err(Error::NotEnoughZeroDyads { .. })));
    }

    #[test]
    fn apply_mask_fills() {
        let net = Network::from_edge_list_str("a b 5\nb c 1").unwrap();
        let mask = ObservationMask::new(3, vec![(0, 1)], None).unwrap();
        let filled = net.apply_mask(&mask, 0).unwrap();
        assert_eq!(filled.count(0, 1), 0);
        assert_eq!(filled.count(1, 2), 1);

        let identity = net.apply_mask(&ObservationMask::empty(), 0).unwrap();
        assert_eq!(identity, net);

        let diag = ObservationMask::new(3, vec![(1, 1)], None).unwrap();
        let filled = net.apply_mask(&diag, 2).unwrap();
        assert_eq!(filled.count(1, 1), 2);
    }

    #[test]
    fn mask_json_round_trip() {
        let mask = ObservationMask::new(5, vec![(0, 1), (2, 4)], Some(vec![3, 0])).unwrap();
        let json = mask.to_json();
        assert!(json.contains("\"missing\":[[0,1],[2,4]]"), "{json}");
        assert_eq!(ObservationMask::from_json(&json).unwrap(), mask);
    }
}
