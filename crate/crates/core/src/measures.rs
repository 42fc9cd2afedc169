//! Pairwise relevance measures and candidate-parent selection.
//!
//! All information quantities are in bits and use 0·log 0 = 0.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;

use crate::dataset::{ContingencyTable, VariableDecl};
use crate::error::{Error, Result};
use crate::network::{BayesianNetwork, Dag, PairwiseJoints};
use crate::scoring::Scorer;

/// Sample size for Monte-Carlo estimates of the network's pairwise joints.
pub const DEFAULT_MC_SAMPLES: usize = 1000;

/// Networks whose joint has at most this many cells are queried exactly
/// when the discrepancy mode is `Auto`.
pub const AUTO_EXACT_CELLS: usize = 1 << 16;

/// Candidate parents per variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidateSets {
    sets: Vec<Vec<usize>>,
    k: usize,
}

impl CandidateSets {
    pub fn new(sets: Vec<Vec<usize>>, k: usize) -> Result<Self> {
        let n = sets.len();
        let mut sorted = Vec::with_capacity(n);
        for (i, mut c) in sets.into_iter().enumerate() {
            c.sort_unstable();
            c.dedup();
            if c.len() > k {
                return Err(Error::invalid(format!(
                    "candidate set of {i} exceeds k={k}"
                )));
            }
            if c.contains(&i) || c.iter().any(|&j| j >= n) {
                return Err(Error::invalid(format!("invalid candidate set for {i}")));
            }
            sorted.push(c);
        }
        Ok(Self { sets: sorted, k })
    }

    /// Every other variable is a candidate.
    pub fn complete(n: usize) -> Self {
        let sets = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        Self {
            sets,
            k: n.saturating_sub(1),
        }
    }

    pub fn n(&self) -> usize {
        self.sets.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    /// Whether every parent set of `dag` lies inside its candidate set.
    pub fn contains_parents_of(&self, dag: &Dag) -> bool {
        (0..dag.n()).all(|i| dag.parents(i).iter().all(|p| self.sets[i].contains(p)))
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.sets.hash(&mut h);
        h.finish()
    }
}

/// One `candidates <name> <name>*` line per variable.
pub fn write_candidates<W: Write>(
    sets: &CandidateSets,
    variables: &[VariableDecl],
    mut out: W,
) -> Result<()> {
    for (i, c) in sets.sets().iter().enumerate() {
        let mut line = format!("candidates {}", variables[i].name);
        for &j in c {
            line.push(' ');
            line.push_str(&variables[j].name);
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// I(X;Y) of a two-variable count table.
pub fn mutual_information(table: &ContingencyTable) -> Result<f64> {
    if table.scope().len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "mutual information needs a 2-variable table, got {}",
            table.scope().len()
        )));
    }
    let s = table.scope();
    information(table, &[s[0]], &[s[1]], &[])
}

/// I(X;Y|Z) for single variables `x`, `y` and conditioning set `z`.
pub fn conditional_mutual_information(
    table: &ContingencyTable,
    x: usize,
    y: usize,
    z: &[usize],
) -> Result<f64> {
    if z.contains(&x) || z.contains(&y) {
        return Err(Error::invalid(
            "conditioned variable inside the conditioning set",
        ));
    }
    information(table, &[x], &[y], z)
}

/// I(Xs;Ys|Zs) for disjoint variable sets drawn from the table scope;
/// variables of the table outside all three sets are summed out.
pub fn information(
    table: &ContingencyTable,
    xs: &[usize],
    ys: &[usize],
    zs: &[usize],
) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::invalid("information needs non-empty X and Y"));
    }
    let mut all: Vec<usize> = xs.iter().chain(ys).chain(zs).copied().collect();
    all.sort_unstable();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("X, Y and Z must be disjoint"));
    }
    if table.total() == 0 {
        return Err(Error::invalid("information of an empty table"));
    }
    let t = table.marginalize(&all)?;
    // role of each axis and its place-value inside that role's configuration
    let mut role = vec![0u8; all.len()];
    let mut place = vec![0usize; all.len()];
    let mut sizes = [1usize; 3];
    for (a, &v) in all.iter().enumerate().rev() {
        let r = if xs.contains(&v) {
            0
        } else if ys.contains(&v) {
            1
        } else {
            2
        };
        role[a] = r as u8;
        place[a] = sizes[r];
        sizes[r] *= t.cards()[a];
    }
    let [nx, ny, nz] = sizes;
    let mut n_xz = vec![0u64; nx * nz];
    let mut n_yz = vec![0u64; ny * nz];
    let mut n_z = vec![0u64; nz];
    let mut cells = Vec::with_capacity(t.len());
    let mut digits = vec![0usize; all.len()];
    for &c in t.counts() {
        let mut cfg = [0usize; 3];
        for a in 0..digits.len() {
            cfg[role[a] as usize] += digits[a] * place[a];
        }
        if c > 0 {
            n_xz[cfg[0] * nz + cfg[2]] += c;
            n_yz[cfg[1] * nz + cfg[2]] += c;
            n_z[cfg[2]] += c;
            cells.push((c, cfg));
        }
        for a in (0..digits.len()).rev() {
            digits[a] += 1;
            if digits[a] < t.cards()[a] {
                break;
            }
            digits[a] = 0;
        }
    }
    let total = t.total() as f64;
    let mut sum = 0.0;
    for (c, [x, y, z]) in cells {
        let c = c as f64;
        let ratio = c * n_z[z] as f64 / (n_xz[x * nz + z] as f64 * n_yz[y * nz + z] as f64);
        sum += c / total * ratio.log2();
    }
    Ok(sum.max(0.0))
}

/// D_KL(p ‖ q) in bits for two distributions of the same shape.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} entries",
            p.len(),
            q.len()
        )));
    }
    let mut sum = 0.0;
    for (k, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::SupportViolation(format!("q is zero at entry {k}")));
            }
            sum += a * (a / b).log2();
        }
    }
    Ok(sum.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Disc,
    Shield,
    Score,
}

/// How the network side of the discrepancy measure is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscMode {
    Exact,
    /// Frequencies of `samples` forward samples, with one pseudo-count
    /// spread uniformly over each pair table so no cell is zero.
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
    /// Exact up to [`AUTO_EXACT_CELLS`] joint cells, Monte-Carlo beyond.
    Auto {
        samples: usize,
        seed: u64,
    },
}

impl Default for DiscMode {
    fn default() -> Self {
        DiscMode::Auto {
            samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }
}

/// The network's pairwise joints as used by [`m_disc`].
pub fn disc_reference(b: &BayesianNetwork, mode: DiscMode) -> Result<PairwiseJoints> {
    let small = b
        .cardinalities()
        .iter()
        .try_fold(1usize, |acc, &c| acc.checked_mul(c))
        .is_some_and(|c| c <= AUTO_EXACT_CELLS);
    match mode {
        DiscMode::Exact => b.exact_pairwise_joints(),
        DiscMode::Auto { .. } if small => b.exact_pairwise_joints(),
        DiscMode::MonteCarlo { samples, seed } | DiscMode::Auto { samples, seed } => Ok(b
            .mc_pairwise_joints(samples, seed)?
            .with_pseudocount(1.0, samples)),
    }
}

/// Empirical P̂(X_i, X_j), laid out `[x_i][x_j]`.
fn empirical_pair(scorer: &mut Scorer<'_>, i: usize, j: usize) -> Result<Vec<f64>> {
    let t = scorer.counts(&[i, j])?;
    let total = t.total() as f64;
    let (ri, rj) = if i < j {
        (t.cards()[0], t.cards()[1])
    } else {
        (t.cards()[1], t.cards()[0])
    };
    let mut out = vec![0.0; ri * rj];
    for xi in 0..ri {
        for xj in 0..rj {
            let c = if i < j {
                t.count(&[xi, xj])
            } else {
                t.count(&[xj, xi])
            };
            out[xi * rj + xj] = c as f64 / total;
        }
    }
    Ok(out)
}

/// D_KL(P̂(X_i,X_j) ‖ P_B(X_i,X_j)) with P_B taken from `reference`.
pub fn m_disc(
    i: usize,
    j: usize,
    reference: &PairwiseJoints,
    scorer: &mut Scorer<'_>,
) -> Result<f64> {
    if i == j {
        return Err(Error::invalid("discrepancy of a variable with itself"));
    }
    let p = empirical_pair(scorer, i, j)?;
    kl_discrete(&p, &reference.get(i, j))
}

fn check_non_parent(i: usize, j: usize, dag: &Dag) -> Result<()> {
    if i == j || dag.parents(i).contains(&j) {
        return Err(Error::invalid(format!(
            "{j} is {i} itself or already its parent"
        )));
    }
    Ok(())
}

/// Comparative shielding measure I(X_i; X_j, Pa(X_i)).
pub fn m_shield(i: usize, j: usize, dag: &Dag, scorer: &mut Scorer<'_>) -> Result<f64> {
    check_non_parent(i, j, dag)?;
    let pa = dag.parents(i);
    let mut scope = pa.to_vec();
    scope.extend([i, j]);
    let t = scorer.counts(&scope)?;
    let mut ys = pa.to_vec();
    ys.push(j);
    information(&t, &[i], &ys, &[])
}

/// Conditional shielding measure I(X_i; X_j | Pa(X_i)). Ranks candidates
/// identically to [`m_shield`].
pub fn m_shield_conditional(i: usize, j: usize, dag: &Dag, scorer: &mut Scorer<'_>) -> Result<f64> {
    check_non_parent(i, j, dag)?;
    let pa = dag.parents(i);
    let mut scope = pa.to_vec();
    scope.extend([i, j]);
    let t = scorer.counts(&scope)?;
    information(&t, &[i], &[j], pa)
}

/// Family score of X_i with X_j added to its current parents.
pub fn m_score(i: usize, j: usize, dag: &Dag, scorer: &mut Scorer<'_>) -> Result<f64> {
    check_non_parent(i, j, dag)?;
    let mut parents = dag.parents(i).to_vec();
    parents.push(j);
    scorer.family_score(i, &parents)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictConfig {
    pub kind: MeasureKind,
    pub k: usize,
    pub disc_mode: DiscMode,
    /// Pairs whose plain mutual information is below this floor keep their
    /// previously computed measure instead of being re-evaluated.
    pub mi_floor: Option<f64>,
}

impl RestrictConfig {
    pub fn new(kind: MeasureKind, k: usize) -> Self {
        Self {
            kind,
            k,
            disc_mode: DiscMode::default(),
            mi_floor: None,
        }
    }
}

/// Stateful candidate selection across iterations; the state is only used
/// by the MI floor.
#[derive(Debug, Clone)]
pub struct Restrictor {
    cfg: RestrictConfig,
    // n×n matrices, row = child
    pair_mi: Option<Vec<f64>>,
    previous: Option<Vec<f64>>,
}

impl Restrictor {
    pub fn new(cfg: RestrictConfig) -> Self {
        Self {
            cfg,
            pair_mi: None,
            previous: None,
        }
    }

    pub fn config(&self) -> &RestrictConfig {
        &self.cfg
    }

    /// For each X_i: keep Pa(X_i) and add the k − |Pa(X_i)| highest-ranking
    /// non-parents, ties broken by lower index.
    pub fn restrict(
        &mut self,
        b: &BayesianNetwork,
        scorer: &mut Scorer<'_>,
    ) -> Result<CandidateSets> {
        let dag = b.dag();
        let n = dag.n();
        let k = self.cfg.k;
        if let Some(i) = (0..n).find(|&i| dag.parents(i).len() > k) {
            return Err(Error::invalid(format!(
                "variable {i} has {} parents, more than k={k}",
                dag.parents(i).len()
            )));
        }
        if self.cfg.mi_floor.is_some() && self.pair_mi.is_none() {
            let mut mi = vec![0.0; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    let v = mutual_information(&*scorer.counts(&[i, j])?)?;
                    mi[i * n + j] = v;
                    mi[j * n + i] = v;
                }
            }
            self.pair_mi = Some(mi);
        }
        let reference = match self.cfg.kind {
            MeasureKind::Disc => Some(disc_reference(b, self.cfg.disc_mode)?),
            _ => None,
        };
        let mut values = self
            .previous
            .clone()
            .unwrap_or_else(|| vec![f64::NAN; n * n]);
        let mut sets = Vec::with_capacity(n);
        for i in 0..n {
            let pa = dag.parents(i);
            let mut ranked = Vec::with_capacity(n);
            for j in (0..n).filter(|&j| j != i && !pa.contains(&j)) {
                let slot = i * n + j;
                let skip = match (self.cfg.mi_floor, &self.pair_mi) {
                    (Some(floor), Some(mi)) => mi[slot] < floor && !values[slot].is_nan(),
                    _ => false,
                };
                if !skip {
                    values[slot] = match self.cfg.kind {
                        MeasureKind::Disc => {
                            m_disc(i, j, reference.as_ref().expect("reference"), scorer)?
                        }
                        MeasureKind::Shield => m_shield(i, j, dag, scorer)?,
                        MeasureKind::Score => m_score(i, j, dag, scorer)?,
                    };
                }
                ranked.push((values[slot], j));
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut c = pa.to_vec();
            c.extend(ranked.iter().take(k - pa.len()).map(|&(_, j)| j));
            sets.push(c);
        }
        self.previous = Some(values);
        CandidateSets::new(sets, k)
    }
}

/// Stateless Restrict step.
pub fn restrict_step(
    b: &BayesianNetwork,
    scorer: &mut Scorer<'_>,
    cfg: RestrictConfig,
) -> Result<CandidateSets> {
    Restrictor::new(cfg).restrict(b, scorer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, StatsCache};
    use crate::scoring::ScoreConfig;

    fn table2(a: u64, b: u64, c: u64, d: u64) -> ContingencyTable {
        ContingencyTable::new(vec![0, 1], vec![2, 2], vec![a, b, c, d]).unwrap()
    }

    #[test]
    fn mi_closed_forms() {
        assert_eq!(mutual_information(&table2(25, 25, 25, 25)).unwrap(), 0.0);
        assert!((mutual_information(&table2(50, 0, 0, 50)).unwrap() - 1.0).abs() < 1e-15);
        let three = ContingencyTable::new(vec![0, 1, 2], vec![2, 2, 2], vec![1; 8]).unwrap();
        assert!(mutual_information(&three).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_discrete(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!((kl_discrete(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            kl_discrete(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::SupportViolation(_))
        ));
        assert!(kl_discrete(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn cmi_reductions() {
        let t = ContingencyTable::new(vec![0, 1, 2], vec![2, 2, 2], vec![4, 1, 2, 3, 1, 5, 6, 2])
            .unwrap();
        let mi = mutual_information(&t.marginalize(&[0, 1]).unwrap()).unwrap();
        let cmi = information(&t, &[0], &[1], &[]).unwrap();
        assert!((mi - cmi).abs() < 1e-15);
        assert!(conditional_mutual_information(&t, 0, 1, &[1]).is_err());

        // given Z, X and Y are independent copies: counts factorize per stratum
        let ci = ContingencyTable::new(
            vec![0, 1, 2],
            vec![2, 2, 2],
            // z=0: p(x)=(.25,.75), p(y)=(.5,.5) scaled 8 ; z=1: p(x)=(.5,.5), p(y)=(.25,.75) scaled 16
            // layout x,y,z with z fastest
            vec![1, 2, 1, 6, 3, 2, 3, 6],
        )
        .unwrap();
        assert!(
            conditional_mutual_information(&ci, 0, 1, &[2])
                .unwrap()
                .abs()
                < 1e-12
        );
    }

    fn chain_data() -> Dataset {
        // X0 -> X1 copy with noise, X2 = X1 copy
        let vars = (0..3)
            .map(|i| VariableDecl::with_cardinality(format!("V{i}"), 2).unwrap())
            .collect();
        let mut rows = Vec::new();
        for r in 0..40usize {
            let a = r % 2;
            let b = if r % 5 == 0 { 1 - a } else { a };
            rows.push(vec![a, b, b]);
        }
        Dataset::from_rows(vars, &rows).unwrap()
    }

    #[test]
    fn shield_with_empty_parents_is_mi() {
        let data = chain_data();
        let mut s = Scorer::new(&data, ScoreConfig::default()).unwrap();
        let dag = Dag::empty(3);
        let mi = mutual_information(&s.counts(&[0, 1]).unwrap()).unwrap();
        assert!((m_shield(0, 1, &dag, &mut s).unwrap() - mi).abs() < 1e-15);
        assert!((m_shield_conditional(0, 1, &dag, &mut s).unwrap() - mi).abs() < 1e-15);
    }

    #[test]
    fn redundant_copy_is_shielded() {
        let data = chain_data();
        let mut s = Scorer::new(&data, ScoreConfig::default()).unwrap();
        let dag = Dag::from_parent_sets(vec![vec![1], vec![], vec![]]).unwrap();
        assert!(m_shield_conditional(0, 2, &dag, &mut s).unwrap().abs() < 1e-12);
        assert!(m_shield(0, 1, &dag, &mut s).is_err());
    }

    #[test]
    fn disc_on_unsmoothed_empty_network_is_mi() {
        let data = chain_data();
        let mut s = Scorer::new(&data, ScoreConfig::default()).unwrap();
        let b = BayesianNetwork::fit(&Dag::empty(3), &mut StatsCache::new(&data), 0.0).unwrap();
        let reference = disc_reference(&b, DiscMode::Exact).unwrap();
        for (i, j) in [(0, 1), (1, 0), (0, 2), (2, 1)] {
            let mi = mutual_information(&s.counts(&[i, j]).unwrap()).unwrap();
            let d = m_disc(i, j, &reference, &mut s).unwrap();
            assert!((mi - d).abs() < 1e-9, "{i},{j}: {mi} vs {d}");
        }
    }

    #[test]
    fn restrict_keeps_parents() {
        let data = chain_data();
        let mut s = Scorer::new(&data, ScoreConfig::default()).unwrap();
        let dag = Dag::from_parent_sets(vec![vec![2], vec![], vec![]]).unwrap();
        let b = BayesianNetwork::fit(&dag, &mut StatsCache::new(&data), 1.0).unwrap();
        let c = restrict_step(&b, &mut s, RestrictConfig::new(MeasureKind::Score, 1)).unwrap();
        assert_eq!(c.get(0), &[2]);
        assert!(c.contains_parents_of(&dag));
        let too_small = Dag::from_parent_sets(vec![vec![1, 2], vec![], vec![]]).unwrap();
        let b2 = BayesianNetwork::fit(&too_small, &mut StatsCache::new(&data), 1.0).unwrap();
        assert!(restrict_step(&b2, &mut s, RestrictConfig::new(MeasureKind::Shield, 1)).is_err());
    }

    #[test]
    fn candidate_dump() {
        let vars: Vec<VariableDecl> = ["A", "B", "C"]
            .iter()
            .map(|n| VariableDecl::with_cardinality(*n, 2).unwrap())
            .collect();
        let c = CandidateSets::new(vec![vec![2, 1], vec![], vec![0]], 2).unwrap();
        let mut out = Vec::new();
        write_candidates(&c, &vars, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "candidates A B C\ncandidates B\ncandidates C A\n"
        );
    }
}
