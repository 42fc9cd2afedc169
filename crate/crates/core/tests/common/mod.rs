//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_candidate::dataset::{Dataset, VariableDecl};
use sparse_candidate::decompose::{weights_from_score, CandidateGraph, FamilyWeights};
use sparse_candidate::network::{random_network, BayesianNetwork, SynthConfig};
use sparse_candidate::scoring::{ScoreConfig, Scorer};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn entropy(probs: impl Iterator<Item = f64>) -> f64 {
    -probs
        .filter(|&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

/// H over a dense joint `p` indexed by `idx(assignment)` after summing out
/// everything except `keep`.
pub fn marginal_entropy(p: &[f64], cards: &[usize], keep: &[usize]) -> f64 {
    let mut acc = std::collections::HashMap::new();
    for (flat, &v) in p.iter().enumerate() {
        let mut rest = flat;
        let mut digits = vec![0; cards.len()];
        for a in (0..cards.len()).rev() {
            digits[a] = rest % cards[a];
            rest /= cards[a];
        }
        let key: Vec<usize> = keep.iter().map(|&a| digits[a]).collect();
        *acc.entry(key).or_insert(0.0) += v;
    }
    entropy(acc.into_values())
}

/// I(X;Y|Z) = H(XZ) + H(YZ) − H(XYZ) − H(Z) on a dense joint over axes.
pub fn cmi_by_entropies(p: &[f64], cards: &[usize], x: &[usize], y: &[usize], z: &[usize]) -> f64 {
    let cat = |a: &[usize], b: &[usize]| -> Vec<usize> { a.iter().chain(b).copied().collect() };
    let xz = cat(x, z);
    let yz = cat(y, z);
    let xyz = cat(&cat(x, y), z);
    marginal_entropy(p, cards, &xz) + marginal_entropy(p, cards, &yz)
        - marginal_entropy(p, cards, &xyz)
        - marginal_entropy(p, cards, z)
}

/// Maximum-weight acyclic selection by dynamic programming over vertex
/// subsets: the best graph over S puts some sink last, whose parents come
/// from the rest of S.
pub fn subset_dp_optimum(h: &CandidateGraph, w: &FamilyWeights) -> f64 {
    let n = h.n();
    assert!(n <= 16);
    let best_in = |v: usize, allowed: usize| -> f64 {
        let c = h.candidates(v);
        let mut best = f64::NEG_INFINITY;
        for m in 0..1usize << c.len() {
            let ok = (0..c.len()).all(|b| m >> b & 1 == 0 || allowed >> c[b] & 1 == 1);
            if ok {
                best = best.max(w.get(v, m));
            }
        }
        best
    };
    let mut f = vec![f64::NEG_INFINITY; 1 << n];
    f[0] = 0.0;
    for s in 1usize..1 << n {
        for v in (0..n).filter(|&v| s >> v & 1 == 1) {
            let rest = s & !(1 << v);
            let val = f[rest] + best_in(v, rest);
            if val > f[s] {
                f[s] = val;
            }
        }
    }
    f[(1 << n) - 1]
}

/// Random candidate sets of at most `k` members each.
pub fn random_candidates(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let size = rng.gen_range(0..=k.min(n - 1));
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            for t in 0..size {
                let s = rng.gen_range(t..others.len());
                others.swap(t, s);
            }
            others.truncate(size);
            others
        })
        .collect()
}

/// A synthetic dataset of `n` variables and `rows` instances.
pub fn synthetic(
    n: usize,
    max_parents: usize,
    rows: usize,
    seed: u64,
) -> (BayesianNetwork, Dataset) {
    let net = random_network(&SynthConfig {
        n_vars: n,
        max_parents,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let data = net.forward_sample(rows, seed.wrapping_add(1000)).unwrap();
    (net, data)
}

/// A random restricted-network instance whose weights are BDe family
/// scores on sampled data.
pub fn scored_instance(seed: u64, max_n: usize, k: usize) -> (CandidateGraph, FamilyWeights) {
    let mut r = rng(seed);
    let n = r.gen_range(2..=max_n);
    let (_, data) = synthetic(n, 2, 200, seed);
    let h = CandidateGraph::new(random_candidates(n, k, &mut r)).unwrap();
    let mut scorer = Scorer::new(&data, ScoreConfig::default()).unwrap();
    let w = weights_from_score(&h, &mut scorer).unwrap();
    (h, w)
}

pub fn binary(name: &str) -> VariableDecl {
    VariableDecl::with_cardinality(name, 2).unwrap()
}
