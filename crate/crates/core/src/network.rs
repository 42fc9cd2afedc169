//! Bayesian networks over discrete variables: structure, parameters,
//! ancestral sampling, exact enumeration queries and the text file format.
//!
//! All randomness goes through [`Rng`], a ChaCha8 stream cipher generator
//! seeded from a `u64`. ChaCha8 output is fully specified, so a given seed
//! yields the same samples on every platform.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{check_unique_names, strides, Dataset, StatsCache, VariableDecl};
use crate::error::{Error, Result};

/// Seedable generator used for every stochastic step.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exact queries refuse networks whose full joint has more cells than this.
pub const ENUMERATION_LIMIT: usize = 1 << 22;

/// Tolerance on conditional distributions read from files.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Directed acyclic graph stored as sorted parent lists.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dag {
    parents: Vec<Vec<usize>>,
}

impl Dag {
    pub fn empty(n: usize) -> Self {
        Self {
            parents: vec![Vec::new(); n],
        }
    }

    pub fn from_parent_sets(parents: Vec<Vec<usize>>) -> Result<Self> {
        let n = parents.len();
        let mut sorted = Vec::with_capacity(n);
        for (i, mut pa) in parents.into_iter().enumerate() {
            pa.sort_unstable();
            if pa.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("duplicate parent of {i}")));
            }
            if pa.contains(&i) {
                return Err(Error::invalid(format!("self loop on {i}")));
            }
            if pa.iter().any(|&p| p >= n) {
                return Err(Error::invalid(format!("parent of {i} out of range")));
            }
            sorted.push(pa);
        }
        let dag = Self { parents: sorted };
        if !dag.is_acyclic() {
            return Err(Error::Cyclic);
        }
        Ok(dag)
    }

    pub fn n(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn parent_sets(&self) -> &[Vec<usize>] {
        &self.parents
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].binary_search(&from).is_ok()
    }

    /// Arcs as `(from, to)`, ordered by child then parent.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(to, pa)| pa.iter().map(move |&from| (from, to)))
    }

    pub fn n_edges(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.n()];
        for (from, to) in self.edges() {
            ch[from].push(to);
        }
        ch
    }

    /// Kahn's algorithm, always releasing the smallest ready index first.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.n();
        let children = self.children();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = indeg
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| std::cmp::Reverse(i))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(v)) = ready.pop() {
            order.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(std::cmp::Reverse(c));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Whether a directed path `from -> ... -> to` exists (length ≥ 0).
    pub fn has_path(&self, from: usize, to: usize) -> bool {
        self.has_path_avoiding(from, to, None)
    }

    /// Path search that ignores the arc `skip` when given.
    pub(crate) fn has_path_avoiding(
        &self,
        from: usize,
        to: usize,
        skip: Option<(usize, usize)>,
    ) -> bool {
        if from == to {
            return true;
        }
        // walk backwards from `to` through parent lists
        let mut seen = vec![false; self.n()];
        let mut stack = vec![to];
        seen[to] = true;
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if skip == Some((p, v)) || seen[p] {
                    continue;
                }
                if p == from {
                    return true;
                }
                seen[p] = true;
                stack.push(p);
            }
        }
        false
    }

    /// Adds `from -> to`, rejecting self loops, duplicates and cycles.
    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if from == to || from >= self.n() || to >= self.n() {
            return Err(Error::IllegalMove(format!("cannot add {from}->{to}")));
        }
        if self.has_edge(from, to) {
            return Err(Error::IllegalMove(format!("{from}->{to} already present")));
        }
        if self.has_path(to, from) {
            return Err(Error::Cyclic);
        }
        let pa = &mut self.parents[to];
        let pos = pa.binary_search(&from).unwrap_err();
        pa.insert(pos, from);
        Ok(())
    }

    pub fn remove_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if to >= self.n() {
            return Err(Error::IllegalMove(format!("no arc {from}->{to}")));
        }
        match self.parents[to].binary_search(&from) {
            Ok(pos) => {
                self.parents[to].remove(pos);
                Ok(())
            }
            Err(_) => Err(Error::IllegalMove(format!("no arc {from}->{to}"))),
        }
    }

    /// Replaces `from -> to` by `to -> from`.
    pub fn reverse_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if !self.has_edge(from, to) {
            return Err(Error::IllegalMove(format!("no arc {from}->{to}")));
        }
        if self.has_path_avoiding(from, to, Some((from, to))) {
            return Err(Error::Cyclic);
        }
        self.remove_edge(from, to)?;
        let pa = &mut self.parents[from];
        let pos = pa.binary_search(&to).unwrap_err();
        pa.insert(pos, to);
        Ok(())
    }

    /// Hash of the parent-set family; equal structures hash equally no matter
    /// how they were built.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.parents.hash(&mut h);
        h.finish()
    }

    /// True if every arc of `self` is an arc of `other`.
    pub fn is_subgraph_of(&self, other: &Dag) -> bool {
        self.n() == other.n() && self.edges().all(|(f, t)| other.has_edge(f, t))
    }
}

/// Conditional distributions of one variable, one row per parent
/// configuration (parents in the DAG's sorted order, last fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    cardinality: usize,
    probs: Vec<f64>,
}

impl Cpt {
    pub fn new(cardinality: usize, probs: Vec<f64>) -> Result<Self> {
        if cardinality == 0 || !probs.len().is_multiple_of(cardinality) {
            return Err(Error::ShapeMismatch(
                "cpt length not a multiple of cardinality".into(),
            ));
        }
        for (r, row) in probs.chunks_exact(cardinality).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!(
                    "cpt row {r} has an entry outside [0,1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("cpt row {r} sums to {s}")));
            }
        }
        Ok(Self { cardinality, probs })
    }

    pub fn n_rows(&self) -> usize {
        self.probs.len() / self.cardinality
    }

    pub fn row(&self, config: usize) -> &[f64] {
        &self.probs[config * self.cardinality..(config + 1) * self.cardinality]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// A structure plus parameters over named discrete variables.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesianNetwork {
    variables: Vec<VariableDecl>,
    dag: Dag,
    cpts: Vec<Cpt>,
    // per variable, strides of its parents in config index
    parent_strides: Vec<Vec<usize>>,
}

impl BayesianNetwork {
    pub fn new(variables: Vec<VariableDecl>, dag: Dag, cpts: Vec<Cpt>) -> Result<Self> {
        check_unique_names(&variables)?;
        if variables.len() != dag.n() || cpts.len() != dag.n() {
            return Err(Error::ShapeMismatch(
                "variables, structure and cpts disagree on size".into(),
            ));
        }
        let mut parent_strides = Vec::with_capacity(dag.n());
        for (i, cpt) in cpts.iter().enumerate() {
            let pcards: Vec<usize> = dag
                .parents(i)
                .iter()
                .map(|&p| variables[p].cardinality())
                .collect();
            let q: usize = pcards.iter().product();
            if cpt.cardinality != variables[i].cardinality() || cpt.n_rows() != q {
                return Err(Error::ShapeMismatch(format!(
                    "cpt of {} has the wrong shape",
                    variables[i].name
                )));
            }
            parent_strides.push(strides(&pcards));
        }
        Ok(Self {
            variables,
            dag,
            cpts,
            parent_strides,
        })
    }

    /// Network without arcs and with uniform marginals.
    pub fn uniform(variables: Vec<VariableDecl>) -> Result<Self> {
        let cpts = variables
            .iter()
            .map(|v| {
                let r = v.cardinality();
                Cpt::new(r, vec![1.0 / r as f64; r])
            })
            .collect::<Result<Vec<_>>>()?;
        let n = variables.len();
        Self::new(variables, Dag::empty(n), cpts)
    }

    pub fn n(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[VariableDecl] {
        &self.variables
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn cpt(&self, i: usize) -> &Cpt {
        &self.cpts[i]
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables
            .iter()
            .map(VariableDecl::cardinality)
            .collect()
    }

    /// Row of variable `i`'s table selected by a full assignment.
    pub fn parent_config<T: Copy + Into<usize>>(&self, i: usize, assignment: &[T]) -> usize {
        self.dag
            .parents(i)
            .iter()
            .zip(&self.parent_strides[i])
            .map(|(&p, &s)| assignment[p].into() * s)
            .sum()
    }

    /// P_B of a full assignment.
    pub fn joint_probability<T: Copy + Into<usize>>(&self, assignment: &[T]) -> f64 {
        (0..self.n())
            .map(|i| self.cpts[i].row(self.parent_config(i, assignment))[assignment[i].into()])
            .product()
    }

    /// log₂ P_B of a full assignment.
    pub fn log2_probability<T: Copy + Into<usize>>(&self, assignment: &[T]) -> f64 {
        (0..self.n())
            .map(|i| {
                self.cpts[i].row(self.parent_config(i, assignment))[assignment[i].into()].log2()
            })
            .sum()
    }

    /// Estimates parameters for `dag` from the cached counts.
    ///
    /// θ = (N_{x,pa} + α) / (N_pa + r·α) with α = smoothing / (r·q). A row
    /// with no data and no smoothing falls back to uniform.
    pub fn fit(dag: &Dag, stats: &mut StatsCache<'_>, smoothing: f64) -> Result<Self> {
        if !(smoothing >= 0.0) {
            return Err(Error::invalid("smoothing must be non-negative"));
        }
        let data = stats.data();
        let mut cpts = Vec::with_capacity(dag.n());
        for i in 0..dag.n() {
            let r = data.variable(i).cardinality();
            let mut scope = dag.parents(i).to_vec();
            scope.push(i);
            let table = stats.counts(&scope)?;
            let fam = family_counts(&table, i);
            let q = fam.len() / r;
            let alpha = smoothing / (r * q) as f64;
            let mut probs = Vec::with_capacity(fam.len());
            for row in fam.chunks_exact(r) {
                let n_pa: u64 = row.iter().sum();
                let denom = n_pa as f64 + r as f64 * alpha;
                if denom > 0.0 {
                    probs.extend(row.iter().map(|&c| (c as f64 + alpha) / denom));
                } else {
                    probs.extend(std::iter::repeat_n(1.0 / r as f64, r));
                }
            }
            cpts.push(Cpt::new(r, probs)?);
        }
        Self::new(data.variables().to_vec(), dag.clone(), cpts)
    }

    /// Draws `m` instances by ancestral sampling.
    pub fn forward_sample(&self, m: usize, seed: u64) -> Result<Dataset> {
        if m == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let order = self.dag.topological_order().ok_or(Error::Cyclic)?;
        let mut rng = rng_from_seed(seed);
        let n = self.n();
        let mut values = vec![0u16; m * n];
        for row in values.chunks_exact_mut(n) {
            self.sample_into(&order, &mut rng, row);
        }
        Dataset::from_values(self.variables.clone(), values)
    }

    fn sample_into(&self, order: &[usize], rng: &mut Rng, row: &mut [u16]) {
        for &i in order {
            let dist = self.cpts[i].row(self.parent_config(i, row));
            row[i] = sample_categorical(dist, rng.gen::<f64>()) as u16;
        }
    }

    fn joint_cells(&self) -> Option<usize> {
        self.variables
            .iter()
            .try_fold(1usize, |acc, v| acc.checked_mul(v.cardinality()))
    }

    /// Whether exact enumeration is within [`ENUMERATION_LIMIT`].
    pub fn enumerable(&self) -> bool {
        self.joint_cells().is_some_and(|c| c <= ENUMERATION_LIMIT)
    }

    fn check_enumerable(&self) -> Result<()> {
        if self.enumerable() {
            Ok(())
        } else {
            Err(Error::ResourceLimit(format!(
                "joint distribution exceeds {ENUMERATION_LIMIT} cells"
            )))
        }
    }

    /// Visits every full assignment with its probability.
    fn for_each_assignment(&self, mut f: impl FnMut(&[usize], f64)) {
        let cards = self.cardinalities();
        let mut assignment = vec![0usize; self.n()];
        loop {
            f(&assignment, self.joint_probability(&assignment));
            let mut a = self.n();
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                assignment[a] += 1;
                if assignment[a] < cards[a] {
                    break;
                }
                assignment[a] = 0;
            }
        }
    }

    /// Exact P_B(X_i, X_j) as an `r_i × r_j` row-major table.
    pub fn exact_pairwise_joint(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        if i == j || i >= self.n() || j >= self.n() {
            return Err(Error::invalid(
                "pairwise query needs two distinct variables",
            ));
        }
        self.check_enumerable()?;
        let rj = self.variables[j].cardinality();
        let mut table = vec![0.0; self.variables[i].cardinality() * rj];
        self.for_each_assignment(|a, p| table[a[i] * rj + a[j]] += p);
        Ok(table)
    }

    /// Exact pairwise joints for every pair in one enumeration.
    pub fn exact_pairwise_joints(&self) -> Result<PairwiseJoints> {
        self.check_enumerable()?;
        let mut joints = PairwiseJoints::zeros(self.cardinalities());
        self.for_each_assignment(|a, p| joints.accumulate(a, p));
        Ok(joints)
    }

    /// Empirical pairwise frequencies from one shared sample of size `m`.
    pub fn mc_pairwise_joints(&self, m: usize, seed: u64) -> Result<PairwiseJoints> {
        let sample = self.forward_sample(m, seed)?;
        let mut joints = PairwiseJoints::zeros(self.cardinalities());
        let mut buf = vec![0usize; self.n()];
        for row in sample.rows() {
            for (b, &v) in buf.iter_mut().zip(row) {
                *b = v as usize;
            }
            joints.accumulate(&buf, 1.0);
        }
        let m = m as f64;
        for t in &mut joints.tables {
            t.iter_mut().for_each(|c| *c /= m);
        }
        Ok(joints)
    }

    fn check_same_variables(&self, variables: &[VariableDecl]) -> Result<()> {
        if self.variables.len() != variables.len() {
            return Err(Error::VariableMismatch(
                "different number of variables".into(),
            ));
        }
        for (a, b) in self.variables.iter().zip(variables) {
            if a.name != b.name || a.cardinality() != b.cardinality() {
                return Err(Error::VariableMismatch(format!(
                    "{} / {} differ in name or cardinality",
                    a.name, b.name
                )));
            }
        }
        Ok(())
    }

    /// Σ over instances of log₂ P_B(instance).
    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        self.check_same_variables(data.variables())?;
        Ok(data.rows().map(|row| self.log2_probability(row)).sum())
    }

    /// KL(self ‖ q) in bits.
    pub fn kl_to_reference(&self, q: &BayesianNetwork, mode: KlMode) -> Result<KlEstimate> {
        self.check_same_variables(&q.variables)?;
        let exact = match mode {
            KlMode::Exact => {
                self.check_enumerable()?;
                true
            }
            KlMode::MonteCarlo { .. } => false,
            KlMode::Auto { .. } => self.enumerable(),
        };
        if exact {
            let mut kl = 0.0;
            let mut violation = None;
            self.for_each_assignment(|a, p| {
                if p > 0.0 {
                    let pq = q.joint_probability(a);
                    if pq <= 0.0 {
                        violation.get_or_insert_with(|| a.to_vec());
                    } else {
                        kl += p * (p / pq).log2();
                    }
                }
            });
            if let Some(a) = violation {
                return Err(Error::SupportViolation(format!(
                    "reference assigns zero probability to {a:?}"
                )));
            }
            return Ok(KlEstimate {
                value: kl.max(0.0),
                exact: true,
                samples: 0,
                seed: 0,
            });
        }
        let (samples, seed) = match mode {
            KlMode::MonteCarlo { samples, seed } | KlMode::Auto { samples, seed } => {
                (samples, seed)
            }
            KlMode::Exact => unreachable!(),
        };
        let data = self.forward_sample(samples, seed)?;
        let mut total = 0.0;
        for row in data.rows() {
            let lq = q.log2_probability(row);
            if lq == f64::NEG_INFINITY {
                return Err(Error::SupportViolation(format!(
                    "reference assigns zero probability to sampled {row:?}"
                )));
            }
            total += self.log2_probability(row) - lq;
        }
        Ok(KlEstimate {
            value: total / samples as f64,
            exact: false,
            samples,
            seed,
        })
    }
}

/// Counts of a family table rearranged as `[parent config][child state]`,
/// parents in ascending index order with the last varying fastest.
pub(crate) fn family_counts(table: &crate::dataset::ContingencyTable, child: usize) -> Vec<u64> {
    let axis = table.axis(child).expect("child in family table");
    let r = table.cards()[axis];
    let stride = table.strides()[axis];
    let mut out = vec![0u64; table.len()];
    for (idx, &c) in table.counts().iter().enumerate() {
        let x = (idx / stride) % r;
        let pa = (idx / (stride * r)) * stride + idx % stride;
        out[pa * r + x] = c;
    }
    out
}

fn sample_categorical(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (s, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_positive = s;
            acc += p;
            if u < acc {
                return s;
            }
        }
    }
    last_positive
}

/// How [`BayesianNetwork::kl_to_reference`] evaluates the divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlMode {
    Exact,
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
    /// Exact when the joint is enumerable, otherwise Monte-Carlo.
    Auto {
        samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub exact: bool,
    pub samples: usize,
    pub seed: u64,
}

/// Pairwise joint distributions for all unordered variable pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseJoints {
    cards: Vec<usize>,
    // tables[i * n + j] for i < j, laid out [x_i][x_j]
    tables: Vec<Vec<f64>>,
}

impl PairwiseJoints {
    fn zeros(cards: Vec<usize>) -> Self {
        let n = cards.len();
        let mut tables = vec![Vec::new(); n * n];
        for i in 0..n {
            for j in i + 1..n {
                tables[i * n + j] = vec![0.0; cards[i] * cards[j]];
            }
        }
        Self { cards, tables }
    }

    fn accumulate(&mut self, assignment: &[usize], w: f64) {
        let n = self.cards.len();
        for i in 0..n {
            for j in i + 1..n {
                self.tables[i * n + j][assignment[i] * self.cards[j] + assignment[j]] += w;
            }
        }
    }

    pub fn n(&self) -> usize {
        self.cards.len()
    }

    /// Treats each table as frequencies of `m` draws and adds `mass`
    /// pseudo-counts spread evenly over its cells.
    pub fn with_pseudocount(&self, mass: f64, m: usize) -> PairwiseJoints {
        let m = m as f64;
        let tables = self
            .tables
            .iter()
            .map(|t| {
                let cell = mass / t.len().max(1) as f64;
                t.iter().map(|p| (p * m + cell) / (m + mass)).collect()
            })
            .collect();
        PairwiseJoints {
            cards: self.cards.clone(),
            tables,
        }
    }

    /// P(X_i, X_j) as an `r_i × r_j` row-major table.
    pub fn get(&self, i: usize, j: usize) -> Vec<f64> {
        let n = self.n();
        assert!(i != j && i < n && j < n, "invalid pair ({i}, {j})");
        if i < j {
            self.tables[i * n + j].clone()
        } else {
            let (ri, rj) = (self.cards[i], self.cards[j]);
            let src = &self.tables[j * n + i];
            let mut out = vec![0.0; ri * rj];
            for xi in 0..ri {
                for xj in 0..rj {
                    out[xi * rj + xj] = src[xj * ri + xi];
                }
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// network file format

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(char::is_whitespace)
}

/// Writes `var`, then per variable a `parents` line followed by its `cpt` rows.
pub fn write_network<W: Write>(net: &BayesianNetwork, mut out: W) -> Result<()> {
    for v in &net.variables {
        if !is_token(&v.name) || !v.states.iter().all(|s| is_token(s)) {
            return Err(Error::invalid(format!(
                "variable {} has a name or state that is not a single token",
                v.name
            )));
        }
        writeln!(out, "var {} {}", v.name, v.states.join(" "))?;
    }
    for (i, v) in net.variables.iter().enumerate() {
        let mut line = format!("parents {}", v.name);
        for &p in net.dag.parents(i) {
            line.push(' ');
            line.push_str(&net.variables[p].name);
        }
        writeln!(out, "{line}")?;
        let cpt = &net.cpts[i];
        for c in 0..cpt.n_rows() {
            let row: Vec<String> = cpt.row(c).iter().map(|p| format!("{p}")).collect();
            writeln!(out, "cpt {} {}", v.name, row.join(" "))?;
        }
    }
    Ok(())
}

pub fn write_network_file(net: &BayesianNetwork, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_network(net, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Parses the network text format. Parents may be listed in any order; the
/// cpt rows enumerate configurations of the listed parents with the last one
/// varying fastest.
pub fn read_network<R: BufRead>(source: R) -> Result<BayesianNetwork> {
    let mut variables: Vec<VariableDecl> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut parent_lines: HashMap<usize, (usize, Vec<String>)> = HashMap::new();
    let mut cpt_rows: HashMap<usize, Vec<(usize, Vec<f64>)>> = HashMap::new();
    let mut pending: Vec<(usize, String, Vec<String>)> = Vec::new();

    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let keyword = tokens.next().unwrap_or_default();
        let name = tokens
            .next()
            .ok_or_else(|| Error::parse(line_no, format!("{keyword} line without a name")))?;
        let rest: Vec<String> = tokens.map(str::to_string).collect();
        match keyword {
            "var" => {
                if index.contains_key(name) {
                    return Err(Error::parse(line_no, format!("duplicate variable {name}")));
                }
                let decl = VariableDecl::new(name, rest)
                    .map_err(|e| Error::parse(line_no, e.to_string()))?;
                index.insert(name.to_string(), variables.len());
                variables.push(decl);
            }
            "parents" | "cpt" => pending.push((line_no, keyword.to_string(), {
                let mut v = vec![name.to_string()];
                v.extend(rest);
                v
            })),
            other => return Err(Error::parse(line_no, format!("unknown keyword {other}"))),
        }
    }

    for (line_no, keyword, tokens) in pending {
        let var = *index
            .get(&tokens[0])
            .ok_or_else(|| Error::parse(line_no, format!("unknown variable {}", tokens[0])))?;
        if keyword == "parents" {
            if parent_lines.contains_key(&var) {
                return Err(Error::parse(
                    line_no,
                    format!("second parents line for {}", tokens[0]),
                ));
            }
            parent_lines.insert(var, (line_no, tokens[1..].to_vec()));
        } else {
            let row = tokens[1..]
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("bad probability {t}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != variables[var].cardinality() {
                return Err(Error::parse(
                    line_no,
                    "cpt row length differs from cardinality",
                ));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::parse(line_no, "probability outside [0,1]"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::parse(line_no, format!("cpt row sums to {s}")));
            }
            cpt_rows.entry(var).or_default().push((line_no, row));
        }
    }

    let n = variables.len();
    if n == 0 {
        return Err(Error::parse(1, "no variables declared"));
    }
    let mut listed_parents = Vec::with_capacity(n);
    for (i, v) in variables.iter().enumerate() {
        let (line_no, names) = parent_lines
            .get(&i)
            .ok_or_else(|| Error::parse(1, format!("missing parents line for {}", v.name)))?;
        let mut pa = Vec::with_capacity(names.len());
        for name in names {
            let p = *index
                .get(name)
                .ok_or_else(|| Error::parse(*line_no, format!("unknown variable {name}")))?;
            pa.push(p);
        }
        listed_parents.push((*line_no, pa));
    }
    let dag = Dag::from_parent_sets(listed_parents.iter().map(|(_, pa)| pa.clone()).collect())
        .map_err(|e| Error::parse(listed_parents.first().map_or(1, |l| l.0), e.to_string()))?;

    let mut cpts = Vec::with_capacity(n);
    for (i, (line_no, listed)) in listed_parents.iter().enumerate() {
        let r = variables[i].cardinality();
        let rows = cpt_rows.get(&i).map(Vec::as_slice).unwrap_or_default();
        let listed_cards: Vec<usize> = listed.iter().map(|&p| variables[p].cardinality()).collect();
        let q: usize = listed_cards.iter().product();
        if rows.len() != q {
            let at = rows.last().map_or(*line_no, |r| r.0);
            return Err(Error::parse(
                at,
                format!(
                    "{} has {} cpt rows, expected {q}",
                    variables[i].name,
                    rows.len()
                ),
            ));
        }
        // permute listed-order configurations into sorted parent order
        let sorted = dag.parents(i);
        let listed_strides = strides(&listed_cards);
        let sorted_cards: Vec<usize> = sorted.iter().map(|&p| variables[p].cardinality()).collect();
        let mut probs = vec![0.0; q * r];
        let mut states = vec![0usize; sorted.len()];
        for c in 0..q {
            let mut listed_idx = 0;
            for (a, &p) in sorted.iter().enumerate() {
                let pos = listed
                    .iter()
                    .position(|&l| l == p)
                    .expect("same parent set");
                listed_idx += states[a] * listed_strides[pos];
            }
            probs[c * r..(c + 1) * r].copy_from_slice(&rows[listed_idx].1);
            for a in (0..states.len()).rev() {
                states[a] += 1;
                if states[a] < sorted_cards[a] {
                    break;
                }
                states[a] = 0;
            }
        }
        cpts.push(Cpt::new(r, probs).map_err(|e| Error::parse(*line_no, e.to_string()))?);
    }
    BayesianNetwork::new(variables, dag, cpts)
}

pub fn read_network_file(path: impl AsRef<Path>) -> Result<BayesianNetwork> {
    let file = std::fs::File::open(path)?;
    read_network(std::io::BufReader::new(file))
}

// ---------------------------------------------------------------------------
// synthetic ground-truth networks

/// Parameters for [`random_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_vars: usize,
    pub max_parents: usize,
    /// Cardinalities to draw from, paired with relative weights.
    pub cardinalities: Vec<(usize, u32)>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // roughly the mix of a 37-node medical alarm model
        Self {
            n_vars: 37,
            max_parents: 4,
            cardinalities: vec![(2, 13), (3, 22), (4, 2)],
            seed: 0,
        }
    }
}

/// Relative frequency of 0, 1, 2, ... parents before truncation.
const PARENT_COUNT_WEIGHTS: [u32; 5] = [20, 40, 25, 10, 5];

/// Generates a random network. Variable `i` draws its parents among the
/// eight preceding variables; rows of every table are peaked random
/// distributions with a 0.02 floor so that every state stays observable.
pub fn random_network(cfg: &SynthConfig) -> Result<BayesianNetwork> {
    if cfg.n_vars < 2 {
        return Err(Error::invalid("need at least two variables"));
    }
    if cfg.cardinalities.is_empty() || cfg.cardinalities.iter().any(|&(c, w)| c < 2 || w == 0) {
        return Err(Error::invalid(
            "cardinality choices must be ≥ 2 with positive weight",
        ));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let total_w: u32 = cfg.cardinalities.iter().map(|c| c.1).sum();
    let mut variables = Vec::with_capacity(cfg.n_vars);
    let width = (cfg.n_vars - 1).to_string().len();
    for i in 0..cfg.n_vars {
        let mut pick = rng.gen_range(0..total_w);
        let mut card = cfg.cardinalities[0].0;
        for &(c, w) in &cfg.cardinalities {
            if pick < w {
                card = c;
                break;
            }
            pick -= w;
        }
        variables.push(VariableDecl::with_cardinality(
            format!("X{i:0width$}"),
            card,
        )?);
    }

    const WINDOW: usize = 8;
    let mut parents = Vec::with_capacity(cfg.n_vars);
    for i in 0..cfg.n_vars {
        let pool: Vec<usize> = (i.saturating_sub(WINDOW)..i).collect();
        let limit = cfg.max_parents.min(pool.len());
        let weights = &PARENT_COUNT_WEIGHTS[..=limit.min(PARENT_COUNT_WEIGHTS.len() - 1)];
        let mut pick = rng.gen_range(0..weights.iter().sum::<u32>());
        let mut count = 0;
        for (c, &w) in weights.iter().enumerate() {
            if pick < w {
                count = c;
                break;
            }
            pick -= w;
        }
        let mut pool = pool;
        let mut chosen = Vec::with_capacity(count);
        for _ in 0..count {
            let k = rng.gen_range(0..pool.len());
            chosen.push(pool.swap_remove(k));
        }
        parents.push(chosen);
    }
    let dag = Dag::from_parent_sets(parents)?;

    let mut cpts = Vec::with_capacity(cfg.n_vars);
    for i in 0..cfg.n_vars {
        let r = variables[i].cardinality();
        let q: usize = dag
            .parents(i)
            .iter()
            .map(|&p| variables[p].cardinality())
            .product();
        let mut probs = Vec::with_capacity(q * r);
        for _ in 0..q {
            let raw: Vec<f64> = (0..r)
                .map(|_| {
                    let u: f64 = rng.gen();
                    u * u * u
                })
                .collect();
            let s: f64 = raw.iter().sum::<f64>().max(f64::MIN_POSITIVE);
            let floor = 0.02;
            let scale = 1.0 - floor * r as f64;
            probs.extend(raw.iter().map(|x| floor + scale * x / s));
        }
        cpts.push(Cpt::new(r, probs)?);
    }
    BayesianNetwork::new(variables, dag, cpts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(name: &str) -> VariableDecl {
        VariableDecl::with_cardinality(name, 2).unwrap()
    }

    /// X -> Y with P(X=1)=0.3, P(Y=1|X=0)=0.2, P(Y=1|X=1)=0.9.
    fn chain() -> BayesianNetwork {
        let dag = Dag::from_parent_sets(vec![vec![], vec![0]]).unwrap();
        BayesianNetwork::new(
            vec![binary("X"), binary("Y")],
            dag,
            vec![
                Cpt::new(2, vec![0.7, 0.3]).unwrap(),
                Cpt::new(2, vec![0.8, 0.2, 0.1, 0.9]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn dag_rejects_cycles() {
        let mut d = Dag::empty(3);
        d.add_edge(0, 1).unwrap();
        d.add_edge(1, 2).unwrap();
        assert!(matches!(d.add_edge(2, 0), Err(Error::Cyclic)));
        assert!(matches!(d.reverse_edge(0, 1), Ok(())));
        assert!(d.has_edge(1, 0));
        assert!(Dag::from_parent_sets(vec![vec![1], vec![0]]).is_err());
        assert!(Dag::from_parent_sets(vec![vec![0]]).is_err());
    }

    #[test]
    fn reverse_with_alternate_path_is_cyclic() {
        let mut d = Dag::from_parent_sets(vec![vec![], vec![0], vec![0, 1]]).unwrap();
        assert!(matches!(d.reverse_edge(0, 2), Err(Error::Cyclic)));
        assert!(d.has_edge(0, 2));
    }

    #[test]
    fn fingerprint_ignores_insertion_order() {
        let mut a = Dag::empty(3);
        a.add_edge(0, 2).unwrap();
        a.add_edge(1, 2).unwrap();
        let mut b = Dag::empty(3);
        b.add_edge(1, 2).unwrap();
        b.add_edge(0, 2).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn fit_mle_and_fallback() {
        let vars = vec![binary("A"), binary("B")];
        let data =
            Dataset::from_rows(vars, &[vec![1, 0], vec![1, 0], vec![1, 1], vec![0, 1]]).unwrap();
        let mut stats = StatsCache::new(&data);
        let empty = BayesianNetwork::fit(&Dag::empty(2), &mut stats, 0.0).unwrap();
        assert_eq!(empty.cpt(0).row(0), &[0.25, 0.75]);

        // A with parent C; C=2 never occurs, so its row falls back to uniform
        let data2 = Dataset::from_rows(
            vec![binary("A"), VariableDecl::with_cardinality("C", 3).unwrap()],
            &[vec![1, 0], vec![1, 0], vec![0, 1]],
        )
        .unwrap();
        let mut stats2 = StatsCache::new(&data2);
        let dag = Dag::from_parent_sets(vec![vec![1], vec![]]).unwrap();
        let net = BayesianNetwork::fit(&dag, &mut stats2, 0.0).unwrap();
        assert_eq!(net.cpt(0).row(0), &[0.0, 1.0]);
        assert_eq!(net.cpt(0).row(1), &[1.0, 0.0]);
        assert_eq!(net.cpt(0).row(2), &[0.5, 0.5]);
    }

    #[test]
    fn heavy_smoothing_tends_to_uniform() {
        let data =
            Dataset::from_rows(vec![binary("A"), binary("B")], &[vec![1, 0], vec![1, 1]]).unwrap();
        let mut stats = StatsCache::new(&data);
        let net = BayesianNetwork::fit(&Dag::empty(2), &mut stats, 1e9).unwrap();
        assert!((net.cpt(0).row(0)[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn deterministic_cpts_force_samples() {
        let dag = Dag::from_parent_sets(vec![vec![], vec![0]]).unwrap();
        let net = BayesianNetwork::new(
            vec![binary("X"), binary("Y")],
            dag,
            vec![
                Cpt::new(2, vec![0.0, 1.0]).unwrap(),
                Cpt::new(2, vec![1.0, 0.0, 1.0, 0.0]).unwrap(),
            ],
        )
        .unwrap();
        let data = net.forward_sample(50, 3).unwrap();
        assert!(data.rows().all(|r| r == [1, 0]));
        let mc = net.mc_pairwise_joints(100, 1).unwrap();
        assert_eq!(mc.get(0, 1), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(net.log_likelihood(&data).unwrap(), 0.0);
    }

    #[test]
    fn same_seed_same_sample() {
        let net = chain();
        assert_eq!(
            net.forward_sample(500, 9).unwrap(),
            net.forward_sample(500, 9).unwrap()
        );
        assert_ne!(
            net.forward_sample(500, 9).unwrap(),
            net.forward_sample(500, 10).unwrap()
        );
    }

    #[test]
    fn chain_joint_closed_form() {
        let net = chain();
        let j = net.exact_pairwise_joint(0, 1).unwrap();
        let expect = [0.7 * 0.8, 0.7 * 0.2, 0.3 * 0.1, 0.3 * 0.9];
        for (a, b) in j.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let t = net.exact_pairwise_joint(1, 0).unwrap();
        assert!((t[1] - 0.3 * 0.1).abs() < 1e-15);
        let all = net.exact_pairwise_joints().unwrap();
        assert_eq!(all.get(1, 0), t);
    }

    #[test]
    fn independent_joint_is_product() {
        let net = BayesianNetwork::new(
            vec![binary("A"), VariableDecl::with_cardinality("B", 3).unwrap()],
            Dag::empty(2),
            vec![
                Cpt::new(2, vec![0.4, 0.6]).unwrap(),
                Cpt::new(3, vec![0.2, 0.3, 0.5]).unwrap(),
            ],
        )
        .unwrap();
        let j = net.exact_pairwise_joint(0, 1).unwrap();
        for a in 0..2 {
            for b in 0..3 {
                let p = [0.4, 0.6][a] * [0.2, 0.3, 0.5][b];
                assert!((j[a * 3 + b] - p).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_log_likelihood() {
        let vars: Vec<_> = (0..3).map(|i| binary(&format!("V{i}"))).collect();
        let net = BayesianNetwork::uniform(vars.clone()).unwrap();
        let data = Dataset::from_rows(vars, &[vec![0, 1, 0], vec![1, 1, 1]]).unwrap();
        assert!((net.log_likelihood(&data).unwrap() + 6.0).abs() < 1e-12);
    }

    #[test]
    fn kl_identity_and_support() {
        let net = chain();
        let kl = net.kl_to_reference(&net, KlMode::Exact).unwrap();
        assert_eq!(kl.value, 0.0);
        assert!(kl.exact);
        let mut zero = chain();
        zero.cpts[0] = Cpt::new(2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            net.kl_to_reference(&zero, KlMode::Exact),
            Err(Error::SupportViolation(_))
        ));
        let mc = net
            .kl_to_reference(
                &net,
                KlMode::MonteCarlo {
                    samples: 100,
                    seed: 1,
                },
            )
            .unwrap();
        assert_eq!(mc.value, 0.0);
        assert!(!mc.exact);
    }

    #[test]
    fn enumeration_guard() {
        let vars: Vec<_> = (0..23).map(|i| binary(&format!("V{i}"))).collect();
        let net = BayesianNetwork::uniform(vars).unwrap();
        assert!(matches!(
            net.exact_pairwise_joint(0, 1),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn network_file_roundtrip_and_reorder() {
        let net = chain();
        let mut text = Vec::new();
        write_network(&net, &mut text).unwrap();
        let parsed = read_network(text.as_slice()).unwrap();
        assert_eq!(parsed, net);

        // parents listed out of index order: Z has parents Y then X
        let src = "var X a b\nvar Y a b c\nvar Z u v\nparents X\ncpt X 0.5 0.5\nparents Y\n\
                   cpt Y 0.2 0.3 0.5\nparents Z Y X\n\
                   cpt Z 0.1 0.9\ncpt Z 0.2 0.8\ncpt Z 0.3 0.7\ncpt Z 0.4 0.6\ncpt Z 0.5 0.5\ncpt Z 0.6 0.4\n";
        let net = read_network(src.as_bytes()).unwrap();
        assert_eq!(net.dag().parents(2), &[0, 1]);
        // listed config (Y=2, X=1) is row 5 -> 0.6; sorted config (X=1, Y=2) is row 5 as well
        assert_eq!(
            net.cpt(2).row(net.parent_config(2, &[1usize, 2, 0])),
            &[0.6, 0.4]
        );
        // listed (Y=0, X=1) is row 1 -> 0.2; sorted (X=1, Y=0) is row 3
        assert_eq!(net.cpt(2).row(3), &[0.2, 0.8]);
    }

    #[test]
    fn network_parse_errors() {
        let bad_sum = "var X a b\nparents X\ncpt X 0.5 0.6\n";
        assert!(matches!(
            read_network(bad_sum.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let unknown = "var X a b\nparents X Q\ncpt X 0.5 0.5\n";
        assert!(read_network(unknown.as_bytes()).is_err());
        let shape = "var X a b\nvar Y a b\nparents X\ncpt X 0.5 0.5\nparents Y X\ncpt Y 0.5 0.5\n";
        assert!(read_network(shape.as_bytes()).is_err());
        let ok_tol = "var X a b\nparents X\ncpt X 0.5 0.5000005\n";
        assert!(read_network(ok_tol.as_bytes()).is_ok());
    }

    #[test]
    fn synth_is_deterministic_and_valid() {
        let cfg = SynthConfig {
            seed: 5,
            ..SynthConfig::default()
        };
        let a = random_network(&cfg).unwrap();
        let b = random_network(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 37);
        assert!((0..a.n()).all(|i| a.dag().parents(i).len() <= 4));
        let tiny = random_network(&SynthConfig {
            n_vars: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(tiny.n(), 2);
    }
}
