//! Chain-level behavior: ergodicity across initializations, the huge-gamma
//! equivalence with the plain variant, and planted-structure link scores.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use idcsbm::generator::{sample_counts_given, PlantedTruth};
use idcsbm::model::gibbs_conditional;
use idcsbm::sampler::{predictive_scores, run_chain, ChainConfig, SampleFlags};
use idcsbm::{Hyperparams, ModelKind, Network, ObservationMask, Partition};

fn fixed_hyper_cfg(seed: u64, iterations: usize, burn_in: usize) -> ChainConfig {
    ChainConfig {
        iterations,
        burn_in,
        mh_updates_per_sweep: 0,
        mh_step_sigma: 0.1,
        seed,
        kind: ModelKind::DegreeCorrected,
        sample_hypers: SampleFlags::none(),
        snapshot_stride: Some(1),
    }
}

fn partition_frequencies(net: &Network, seed: u64, sweeps: usize) -> HashMap<Vec<usize>, f64> {
    let burn_in = sweeps / 10;
    let cfg = fixed_hyper_cfg(seed, sweeps, burn_in);
    let trace = run_chain(net, &ObservationMask::empty(), &cfg).unwrap();
    let mut freq: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut total = 0.0;
    for (_, part) in trace.post_burn_in_snapshots() {
        *freq.entry(part.z().to_vec()).or_insert(0.0) += 1.0;
        total += 1.0;
    }
    for v in freq.values_mut() {
        *v /= total;
    }
    freq
}

fn total_variation(a: &HashMap<Vec<usize>, f64>, b: &HashMap<Vec<usize>, f64>) -> f64 {
    let mut keys: Vec<&Vec<usize>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

#[test]
fn chains_from_different_inits_agree() {
    let net = Network::from_edge_list_str("a b 3\nc d 3").unwrap();
    let sweeps = 100_000;
    let freqs: Vec<_> = (0..5).map(|s| partition_frequencies(&net, 1000 + s, sweeps)).collect();
    for i in 0..freqs.len() {
        for j in (i + 1)..freqs.len() {
            let tv = total_variation(&freqs[i], &freqs[j]);
            assert!(tv < 0.05, "chains {i} and {j} disagree: tv = {tv}");
        }
    }
}

#[test]
fn huge_gamma_conditionals_match_plain_variant() {
    let net = Network::from_edge_list_str("a b 2\nb c\nc d\nd e 2\ne a").unwrap();
    let hp_dc = Hyperparams::new(1.0, 1e8, 1.0, 1.0).unwrap();
    let hp_plain = Hyperparams::new(1.0, 1.0, 1.0, 1.0).unwrap();
    for rest_labels in [[0, 0, 0, 0], [0, 1, 0, 1], [0, 1, 2, 3], [0, 0, 1, 1]] {
        let rest = Partition::from_labels(&rest_labels);
        for node in 0..5 {
            let dc =
                gibbs_conditional(node, &net, &rest, &hp_dc, ModelKind::DegreeCorrected).unwrap();
            let plain =
                gibbs_conditional(node, &net, &rest, &hp_plain, ModelKind::Plain).unwrap();
            let max_dev = dc
                .iter()
                .zip(plain.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_dev < 1e-3, "node {node}, rest {rest_labels:?}: {max_dev}");
        }
    }
}

#[test]
fn planted_blocks_score_higher_than_cross_nonlinks() {
    // Two planted groups of 10 with dense within-block and sparse cross-block
    // rates; the imputation scores must separate held-out links from
    // held-out cross-block zeros.
    let n = 20;
    let part = Partition::from_labels(
        &(0..n).map(|i| if i < 10 { 0 } else { 1 }).collect::<Vec<_>>(),
    );
    let hp = Hyperparams::new(1.0, 1e6, 1.0, 1.0).unwrap();
    let truth = PlantedTruth {
        part: part.clone(),
        theta: vec![1.0; n],
        eta: vec![2.0, 0.05, 0.05, 2.0],
        hp,
    };
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(99);
    let net = sample_counts_given(&truth, &mut rng).unwrap();
    let mask = net.make_holdout(0.1, 4).unwrap();

    let cfg = ChainConfig {
        iterations: 400,
        burn_in: 200,
        mh_updates_per_sweep: 5,
        mh_step_sigma: 0.1,
        seed: 31,
        kind: ModelKind::DegreeCorrected,
        sample_hypers: SampleFlags::all(),
        snapshot_stride: Some(1),
    };
    let trace = run_chain(&net, &mask, &cfg).unwrap();
    let scores = predictive_scores(&trace, &mask).unwrap();

    let mut within_link = Vec::new();
    let mut cross_zero = Vec::new();
    for (&(i, j), &s) in &scores {
        let same_block = part.assignment(i) == part.assignment(j);
        let truth_count = mask.truth_of((i, j)).unwrap();
        if same_block && truth_count >= 1 {
            within_link.push(s);
        } else if !same_block && truth_count == 0 {
            cross_zero.push(s);
        }
    }
    assert!(!within_link.is_empty() && !cross_zero.is_empty());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&within_link) > mean(&cross_zero),
        "within {} vs cross {}",
        mean(&within_link),
        mean(&cross_zero)
    );
}
