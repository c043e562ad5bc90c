//! Brute-force references for tiny instances: exhaustive partition
//! enumeration, exact posteriors over partitions, and a Monte-Carlo check of
//! the analytic collapse of node weights and block rates.

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::math::{ln_factorial, log_sum_exp};
use crate::model::{log_crp, log_evidence, DirichletLaw, Hyperparams, ModelKind, Partition};

/// Exact posterior over all set partitions of the nodes.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub partitions: Vec<Partition>,
    pub probs: Vec<f64>,
}

impl ExactPosterior {
    /// Posterior probability of a canonical partition, 0 if absent.
    pub fn prob_of(&self, part: &Partition) -> f64 {
        self.partitions
            .iter()
            .position(|p| p == part)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }
}

/// Result of the Monte-Carlo collapse verification.
#[derive(Debug, Clone, Copy)]
pub struct CollapseCheck {
    /// Analytic collapsed value ln p(A | z, hyperparameters) (CRP excluded).
    pub analytic_log: f64,
    /// Monte-Carlo mean of p(A | theta, eta, z) under prior draws.
    pub mc_mean: f64,
    /// Standard error of the Monte-Carlo mean.
    pub mc_std_error: f64,
}

impl CollapseCheck {
    /// Agreement within `k` Monte-Carlo standard errors.
    pub fn agrees_within(&self, k: f64) -> bool {
        (self.analytic_log.exp() - self.mc_mean).abs() <= k * self.mc_std_error
    }
}

/// All set partitions of `n` nodes (1 <= n <= 10) in canonical labeling,
/// generated as restricted-growth strings.
pub fn enumerate_partitions(n: usize) -> Result<Vec<Partition>> {
    if n == 0 || n > 10 {
        return Err(Error::InvalidArgument(format!("partition enumeration supports 1..=10 nodes, got {n}")));
    }
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    rgs_recurse(&mut labels, 1, 1, &mut out);
    Ok(out)
}

fn rgs_recurse(labels: &mut Vec<usize>, pos: usize, max_used: usize, out: &mut Vec<Partition>) {
    if pos == labels.len() {
        out.push(Partition::from_labels(labels));
        return;
    }
    for v in 0..=max_used {
        labels[pos] = v;
        rgs_recurse(labels, pos + 1, max_used.max(v + 1), out);
    }
}

/// Normalize the collapsed evidence over every partition of a small network.
pub fn exact_posterior(net: &Network, hp: &Hyperparams, kind: ModelKind) -> Result<ExactPosterior> {
    let partitions = enumerate_partitions(net.node_count())?;
    let mut logs = Vec::with_capacity(partitions.len());
    for part in &partitions {
        logs.push(log_evidence(net, part, hp, kind)?);
    }
    let norm = log_sum_exp(&logs);
    if !norm.is_finite() {
        return Err(Error::NonFinite("exact_posterior normalizer".into()));
    }
    let probs = logs.iter().map(|&l| (l - norm).exp()).collect();
    Ok(ExactPosterior { partitions, probs })
}

/// Verify the analytic collapse by averaging the complete-data likelihood
/// p(A | theta, eta, z) over prior draws of the node weights and block rates.
///
/// The analytic side is the collapsed evidence with the CRP factor removed,
/// so both sides condition on the same fixed partition. Restricted to
/// n <= 3 nodes, where prior-sampling variance is manageable.
pub fn mc_collapse_check<R: Rng + ?Sized>(
    net: &Network,
    part: &Partition,
    hp: &Hyperparams,
    draws: usize,
    rng: &mut R,
) -> Result<CollapseCheck> {
    if net.node_count() > 3 {
        return Err(Error::InvalidArgument(format!(
            "collapse check supports at most 3 nodes, got {}",
            net.node_count()
        )));
    }
    if draws < 100_000 {
        return Err(Error::InvalidArgument(format!(
            "collapse check needs at least 1e5 draws, got {draws}"
        )));
    }
    let analytic_log =
        log_evidence(net, part, hp, ModelKind::DegreeCorrected)? - log_crp(part, hp.alpha);

    let n = net.node_count();
    let num_groups = part.num_groups();
    let eta_prior = GammaDist::new(hp.kappa, 1.0 / hp.lambda)
        .map_err(|e| Error::InvalidArgument(format!("gamma prior: {e}")))?;
    let phi_priors: Vec<DirichletLaw> = (0..num_groups)
        .map(|l| DirichletLaw { concentration: vec![hp.gamma; part.sizes()[l]] })
        .collect();
    let members: Vec<Vec<usize>> = (0..num_groups).map(|l| part.members(l)).collect();

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut theta = vec![0.0f64; n];
    for _ in 0..draws {
        // eta ~ Gamma(kappa, lambda) i.i.d. over unordered group pairs.
        let mut eta = vec![0.0f64; num_groups * num_groups];
        for l in 0..num_groups {
            for m in l..num_groups {
                let e = eta_prior.sample(rng);
                eta[l * num_groups + m] = e;
                eta[m * num_groups + l] = e;
            }
        }
        // theta_i = n_l * phi_i with phi ~ Dirichlet(gamma * 1) per group.
        for l in 0..num_groups {
            let phi = phi_priors[l].sample(rng);
            for (slot, &i) in members[l].iter().enumerate() {
                theta[i] = part.sizes()[l] as f64 * phi[slot];
            }
        }
        let w = complete_data_likelihood(net, part, &theta, &eta, num_groups).exp();
        sum += w;
        sum_sq += w * w;
    }
    let mc_mean = sum / draws as f64;
    let var = (sum_sq / draws as f64 - mc_mean * mc_mean).max(0.0);
    let mc_std_error = (var / draws as f64).sqrt();
    Ok(CollapseCheck { analytic_log, mc_mean, mc_std_error })
}

/// ln p(A | theta, eta, z): independent Poisson dyads with rate
/// theta_i eta theta_j off the diagonal and theta_i^2 eta / 2 on it.
fn complete_data_likelihood(
    net: &Network,
    part: &Partition,
    theta: &[f64],
    eta: &[f64],
    num_groups: usize,
) -> f64 {
    let n = net.node_count();
    let mut acc = 0.0;
    for i in 0..n {
        for j in i..n {
            let rate = if i == j {
                0.5 * theta[i] * theta[i] * eta[part.assignment(i) * num_groups + part.assignment(i)]
            } else {
                theta[i] * theta[j] * eta[part.assignment(i) * num_groups + part.assignment(j)]
            };
            let a = net.count(i, j);
            acc += if a == 0 {
                -rate
            } else {
                a as f64 * rate.ln() - rate - ln_factorial(a)
            };
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn bell_numbers() {
        assert_eq!(enumerate_partitions(1).unwrap().len(), 1);
        assert_eq!(enumerate_partitions(3).unwrap().len(), 5);
        assert_eq!(enumerate_partitions(4).unwrap().len(), 15);
        assert_eq!(enumerate_partitions(5).unwrap().len(), 52);
        assert!(enumerate_partitions(0).is_err());
        assert!(enumerate_partitions(11).is_err());
    }

    #[test]
    fn enumeration_is_canonical_and_distinct() {
        let parts = enumerate_partitions(4).unwrap();
        let mut seen = std::collections::HashSet::new();
        for p in &parts {
            assert_eq!(p, &Partition::from_labels(p.z()));
            assert!(seen.insert(p.z().to_vec()));
        }
    }

    #[test]
    fn dense_dyad_favors_joint_group() {
        // Dense-favoring hypers: a large rate-prior shape makes the shared
        // within-group rate the better explanation of a heavy dyad.
        let net = Network::from_edge_list_str("a b 20").unwrap();
        let hp = Hyperparams::new(1.0, 1.0, 100.0, 1.0).unwrap();
        let post = exact_posterior(&net, &hp, ModelKind::DegreeCorrected).unwrap();
        assert!((post.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let together = post.prob_of(&Partition::from_labels(&[0, 0]));
        let apart = post.prob_of(&Partition::from_labels(&[0, 1]));
        assert!(together > apart, "together={together} apart={apart}");
    }

    #[test]
    fn posterior_respects_node_symmetry() {
        // A path 0-1-2 is symmetric under swapping the endpoints.
        let net = Network::from_edge_list_str("a b\nb c").unwrap();
        let hp = Hyperparams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let post = exact_posterior(&net, &hp, ModelKind::DegreeCorrected).unwrap();
        let p01 = post.prob_of(&Partition::from_labels(&[0, 0, 1]));
        let p21 = post.prob_of(&Partition::from_labels(&[0, 1, 1]));
        assert!((p01 - p21).abs() < 1e-12);
    }

    #[test]
    fn collapse_check_single_empty_node() {
        // Closed form: E[exp(-eta/2)] = (lambda / (lambda + 1/2))^kappa = 2/3.
        let net = Network::from_edge_list_str("#nodes: 1").unwrap();
        let part = Partition::single_group(1);
        let hp = Hyperparams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let check = mc_collapse_check(&net, &part, &hp, 100_000, &mut rng).unwrap();
        assert!((check.analytic_log - (2.0_f64 / 3.0).ln()).abs() < 1e-12);
        assert!(check.agrees_within(3.0), "{check:?}");
    }

    #[test]
    fn collapse_check_rejects_degenerate_draws() {
        let net = Network::from_edge_list_str("#nodes: 1").unwrap();
        let part = Partition::single_group(1);
        let hp = Hyperparams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        assert!(mc_collapse_check(&net, &part, &hp, 0, &mut rng).is_err());
        let big = Network::from_edge_list_str("#nodes: 4").unwrap();
        assert!(mc_collapse_check(&big, &Partition::single_group(4), &hp, 100_000, &mut rng)
            .is_err());
    }

    #[test]
    fn crp_extension_identity_and_uniform_counterexample() {
        // CRP: summing the two 3-node extensions of {z1 = z2} recovers the
        // 2-node probability exactly.
        let alpha = 1.7;
        let two = log_crp(&Partition::from_labels(&[0, 0]), alpha);
        let ext = log_sum_exp(&[
            log_crp(&Partition::from_labels(&[0, 0, 0]), alpha),
            log_crp(&Partition::from_labels(&[0, 0, 1]), alpha),
        ]);
        assert!((two - ext).abs() < 1e-12);

        // The uniform prior over partitions is not projective: 1/2 vs 2/5.
        let bell2 = enumerate_partitions(2).unwrap().len() as f64;
        let extensions = enumerate_partitions(3)
            .unwrap()
            .iter()
            .filter(|p| p.assignment(0) == p.assignment(1))
            .count() as f64;
        let bell3 = enumerate_partitions(3).unwrap().len() as f64;
        assert_eq!(1.0 / bell2, 0.5);
        assert_eq!(extensions / bell3, 0.4);
    }
}
