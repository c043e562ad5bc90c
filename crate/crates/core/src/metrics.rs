//! Evaluation metrics: normalized mutual information between partitions,
//! Mann-Whitney AUC over scored dyads, group-count ratios, degree-dispersion
//! profiles, and posterior summaries of the degree-correction strength.

use crate::error::{Error, Result};
use crate::graph::{Dyad, Network};
use crate::math::{mean, population_std, standard_error};
use crate::model::Partition;
use crate::sampler::ChainTrace;

/// Snapshot window used for dispersion profiles when none is given.
pub const DEFAULT_DISPERSION_WINDOW: usize = 500;

/// A dyad with its predictive score and held-out label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDyad {
    pub dyad: Dyad,
    pub score: f64,
    pub is_link: bool,
}

/// Scored holdout set; AUC needs both labels present.
#[derive(Debug, Clone)]
pub struct ScoredDyads {
    entries: Vec<ScoredDyad>,
}

impl ScoredDyads {
    pub fn new(entries: Vec<ScoredDyad>) -> Result<Self> {
        for e in &entries {
            if !(0.0..=1.0).contains(&e.score) {
                return Err(Error::InvalidArgument(format!(
                    "score {} for dyad {:?} outside [0, 1]",
                    e.score, e.dyad
                )));
            }
        }
        Ok(ScoredDyads { entries })
    }

    pub fn entries(&self) -> &[ScoredDyad] {
        &self.entries
    }
}

/// Normalized mutual information 2 I(a;b) / (H(a) + H(b)) with natural logs.
///
/// The symmetric arithmetic-mean normalizer is used here; other conventions
/// divide by max(H(a), H(b)) or by sqrt(H(a) H(b)) instead. When both
/// partitions are the trivial single group (both entropies zero) the value
/// is defined as 1.
pub fn nmi(a: &Partition, b: &Partition) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::PartitionMismatch { expected: a.len(), got: b.len() });
    }
    if a.z() == b.z() {
        // Identical up to relabeling (labels are canonical): exactly 1, which
        // also covers the all-in-one-group case where both entropies vanish.
        return Ok(1.0);
    }
    let n = a.len() as f64;
    let (la, lb) = (a.num_groups(), b.num_groups());
    let mut joint = vec![0.0f64; la * lb];
    for i in 0..a.len() {
        joint[a.assignment(i) * lb + b.assignment(i)] += 1.0;
    }
    let ha: f64 = a
        .sizes()
        .iter()
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum();
    let hb: f64 = b
        .sizes()
        .iter()
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum();
    let mut info = 0.0;
    for x in 0..la {
        for y in 0..lb {
            let c = joint[x * lb + y];
            if c > 0.0 {
                let pxy = c / n;
                let px = a.sizes()[x] as f64 / n;
                let py = b.sizes()[y] as f64 / n;
                info += pxy * (pxy / (px * py)).ln();
            }
        }
    }
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * info / (ha + hb)).clamp(0.0, 1.0))
}

/// Mann-Whitney AUC: the fraction of (link, nonlink) pairs where the link
/// outscores the nonlink, ties counted half.
pub fn auc(scored: &ScoredDyads) -> Result<f64> {
    let links: Vec<f64> =
        scored.entries().iter().filter(|e| e.is_link).map(|e| e.score).collect();
    let nonlinks: Vec<f64> =
        scored.entries().iter().filter(|e| !e.is_link).map(|e| e.score).collect();
    if links.is_empty() || nonlinks.is_empty() {
        return Err(Error::InvalidArgument(
            "AUC needs at least one link and one nonlink".into(),
        ));
    }
    let mut concordant = 0.0;
    for &l in &links {
        for &z in &nonlinks {
            if l > z {
                concordant += 1.0;
            } else if l == z {
                concordant += 0.5;
            }
        }
    }
    Ok(concordant / (links.len() * nonlinks.len()) as f64)
}

/// Post-burn-in mean of (number of groups) / `l_true`.
pub fn l_ratio(trace: &ChainTrace, l_true: usize) -> Result<f64> {
    if l_true == 0 {
        return Err(Error::InvalidArgument("l_true must be positive".into()));
    }
    let rows = trace.post_burn_in();
    if rows.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(rows.iter().map(|r| r.num_groups as f64 / l_true as f64).sum::<f64>() / rows.len() as f64)
}

/// One point of the dispersion profile: groups of size `group_size` show an
/// average within-group degree standard deviation of `mean_std`, with the
/// standard error taken across restarts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionPoint {
    pub group_size: usize,
    pub mean_std: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct DegreeDispersionProfile {
    pub points: Vec<DispersionPoint>,
}

/// Within-group degree dispersion as a function of group size.
///
/// For each partition snapshot in the last `window` states of each chain and
/// each group, the population standard deviation of the member degrees `k_i`
/// is binned by exact group size and averaged; the error bar is the standard
/// error of the per-chain means. Set `log_bins` to pool sizes by powers of
/// two instead of exactly (the bin is labeled by its lower edge).
pub fn degree_dispersion_profile(
    traces: &[ChainTrace],
    net: &Network,
    window: usize,
    log_bins: bool,
) -> Result<DegreeDispersionProfile> {
    if traces.iter().all(|t| t.snapshots.is_empty()) {
        return Err(Error::InvalidArgument("no partition snapshots in traces".into()));
    }
    let degrees = net.degrees();
    let bin_of = |size: usize| -> usize {
        if log_bins {
            1usize << (usize::BITS - 1 - size.leading_zeros()) as usize
        } else {
            size
        }
    };

    // Per-chain mean dispersion per bin.
    let mut per_chain: Vec<std::collections::BTreeMap<usize, Vec<f64>>> = Vec::new();
    for trace in traces {
        let mut bins: std::collections::BTreeMap<usize, Vec<f64>> =
            std::collections::BTreeMap::new();
        for (_, part) in trace.last_snapshots(window) {
            for g in 0..part.num_groups() {
                let members = part.members(g);
                let ks: Vec<f64> = members.iter().map(|&i| degrees.k[i] as f64).collect();
                bins.entry(bin_of(members.len())).or_default().push(population_std(&ks));
            }
        }
        per_chain.push(bins);
    }

    let mut all_bins: Vec<usize> =
        per_chain.iter().flat_map(|m| m.keys().copied()).collect();
    all_bins.sort_unstable();
    all_bins.dedup();

    let points = all_bins
        .into_iter()
        .map(|bin| {
            let chain_means: Vec<f64> = per_chain
                .iter()
                .filter_map(|m| m.get(&bin).map(|v| mean(v)))
                .collect();
            DispersionPoint {
                group_size: bin,
                mean_std: mean(&chain_means),
                std_error: standard_error(&chain_means),
            }
        })
        .collect();
    Ok(DegreeDispersionProfile { points })
}

/// Box statistics of the per-chain posterior means of the degree-correction
/// concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSummary {
    pub per_chain_mean: Vec<f64>,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Per-chain post-burn-in mean of gamma plus box statistics across chains.
pub fn gamma_summary(traces: &[ChainTrace]) -> Result<GammaSummary> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces".into()));
    }
    let per_chain_mean: Vec<f64> =
        traces.iter().map(|t| t.mean_gamma()).collect::<Result<_>>()?;
    let mut sorted = per_chain_mean.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("gamma means are finite"));
    Ok(GammaSummary {
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        per_chain_mean,
    })
}

/// Linear-interpolation quantile of an already sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
