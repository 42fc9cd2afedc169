//! Exact solvers for the maximal restricted network problem: choose, for
//! every vertex, a subset of its candidate parents so that the union is
//! acyclic and the summed family weights are maximal.
//!
//! The candidate digraph is first split into strongly connected components,
//! which can be solved independently. Components are solved by exhaustive
//! enumeration, by conditioning on orders of a small separator, or by
//! dynamic programming over a cluster tree.

mod brute;
mod cluster_tree;
mod scc;
mod separator;

use std::io::Write;

pub use brute::{brute_force_mrbn, brute_force_mrbn_with_limit, DEFAULT_BRUTE_LIMIT};
pub use cluster_tree::{
    build_cluster_tree, cluster_tree_dp, ClusterTree, DpStats, DEFAULT_CLUSTER_LIMIT,
};
pub use scc::scc_decompose;
pub use separator::{find_separator, respects_order, separator_solve, SeparatorSplit};

use crate::error::{Error, Result};
use crate::measures::CandidateSets;
use crate::network::Dag;
use crate::scoring::Scorer;

/// Candidate digraph: arc `j -> i` for every `j` in `C_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateGraph {
    candidates: Vec<Vec<usize>>,
}

impl CandidateGraph {
    pub fn new(candidates: Vec<Vec<usize>>) -> Result<Self> {
        let n = candidates.len();
        let mut sorted = Vec::with_capacity(n);
        for (i, mut c) in candidates.into_iter().enumerate() {
            c.sort_unstable();
            c.dedup();
            if c.contains(&i) || c.iter().any(|&j| j >= n) {
                return Err(Error::invalid(format!("invalid candidate list for {i}")));
            }
            if c.len() > 24 {
                return Err(Error::ResourceLimit(format!(
                    "vertex {i} has over 24 candidates"
                )));
            }
            sorted.push(c);
        }
        Ok(Self { candidates: sorted })
    }

    pub fn from_candidate_sets(sets: &CandidateSets) -> Self {
        Self {
            candidates: sets.sets().to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self, i: usize) -> &[usize] {
        &self.candidates[i]
    }

    /// Largest candidate set.
    pub fn k(&self) -> usize {
        self.candidates.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.candidates
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |&j| (j, i)))
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.n()];
        for (j, i) in self.arcs() {
            succ[j].push(i);
        }
        succ
    }

    /// Parent list of `i` selected by a bit mask over its candidates.
    pub fn parents_from_mask(&self, i: usize, mask: usize) -> Vec<usize> {
        self.candidates[i]
            .iter()
            .enumerate()
            .filter(|(b, _)| mask >> b & 1 == 1)
            .map(|(_, &j)| j)
            .collect()
    }

    /// Mask over `C_i` for a parent list; `None` if some parent is not a
    /// candidate.
    pub fn mask_of(&self, i: usize, parents: &[usize]) -> Option<usize> {
        parents.iter().try_fold(0usize, |m, p| {
            self.candidates[i]
                .iter()
                .position(|c| c == p)
                .map(|b| m | 1 << b)
        })
    }
}

/// Weight `w(X_i, Y)` for every vertex and every `Y ⊆ C_i`, indexed by the
/// bit mask of `Y` over the sorted candidate list. `-inf` forbids a family.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyWeights {
    weights: Vec<Vec<f64>>,
}

impl FamilyWeights {
    pub fn new(h: &CandidateGraph, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != h.n() {
            return Err(Error::ShapeMismatch(
                "one weight table per vertex expected".into(),
            ));
        }
        for (i, w) in weights.iter().enumerate() {
            if w.len() != 1 << h.candidates(i).len() {
                return Err(Error::ShapeMismatch(format!(
                    "vertex {i} needs {} weights",
                    1usize << h.candidates(i).len()
                )));
            }
            if w.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return Err(Error::invalid(format!(
                    "vertex {i} has a NaN or +inf weight"
                )));
            }
        }
        Ok(Self { weights })
    }

    pub fn get(&self, i: usize, mask: usize) -> f64 {
        self.weights[i][mask]
    }

    pub fn table(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    pub fn n_entries(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    /// W_H[G] for a structure whose parents are all candidates.
    pub fn total(&self, h: &CandidateGraph, dag: &Dag) -> Result<f64> {
        (0..h.n())
            .map(|i| {
                h.mask_of(i, dag.parents(i))
                    .map(|m| self.weights[i][m])
                    .ok_or_else(|| Error::invalid(format!("parent of {i} is not a candidate")))
            })
            .sum()
    }
}

/// w(X_i, Y) = family score of X_i with parents Y.
pub fn weights_from_score(h: &CandidateGraph, scorer: &mut Scorer<'_>) -> Result<FamilyWeights> {
    let mut weights = Vec::with_capacity(h.n());
    for i in 0..h.n() {
        let c = h.candidates(i);
        // one pass for the full family; every subset is then a marginal
        let mut scope = c.to_vec();
        scope.push(i);
        scorer.counts(&scope)?;
        let size = 1usize << c.len();
        let mut w = vec![0.0; size];
        let mut masks: Vec<usize> = (0..size).collect();
        masks.sort_by_key(|m| std::cmp::Reverse(m.count_ones()));
        for m in masks {
            w[m] = scorer.family_score(i, &h.parents_from_mask(i, m))?;
        }
        weights.push(w);
    }
    FamilyWeights::new(h, weights)
}

/// An acyclic subgraph of H with its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MrbnSolution {
    pub dag: Dag,
    pub weight: f64,
}

/// Parent masks for a subset of vertices plus their summed weight.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PartialChoice {
    pub masks: Vec<(usize, usize)>,
    pub weight: f64,
}

pub(crate) fn assemble(h: &CandidateGraph, masks: &[(usize, usize)]) -> Result<Dag> {
    let mut parents = vec![Vec::new(); h.n()];
    for &(v, m) in masks {
        parents[v] = h.parents_from_mask(v, m);
    }
    Dag::from_parent_sets(parents)
}

/// Best mask of `i` ignoring acyclicity; the first maximum in mask order.
pub(crate) fn best_unconstrained(w: &FamilyWeights, i: usize) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (m, &x) in w.table(i).iter().enumerate() {
        if x > best.1 {
            best = (m, x);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Brute,
    Separator,
    ClusterTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverLimits {
    /// Largest vertex set enumerated exhaustively.
    pub brute: usize,
    /// Largest cluster handled by the cluster-tree DP.
    pub cluster: usize,
    /// Largest separator tried.
    pub separator: usize,
}

impl Default for SolverLimits {
    fn default() -> Self {
        Self {
            brute: DEFAULT_BRUTE_LIMIT,
            cluster: DEFAULT_CLUSTER_LIMIT,
            separator: 3,
        }
    }
}

/// How one strongly connected component was handled.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentMethod {
    Singleton,
    Brute,
    Separator {
        separator: Vec<usize>,
        orders: usize,
    },
    ClusterTree {
        cluster_sizes: Vec<usize>,
        stats: DpStats,
    },
    /// Beyond the strategy's limits; left to the caller.
    Unsolved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentReport {
    pub vertices: Vec<usize>,
    pub method: ComponentMethod,
    pub weight: f64,
}

/// Per-component result of [`solve_components`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Parent list per vertex; `None` for vertices of unsolved components.
    pub parents: Vec<Option<Vec<usize>>>,
    pub components: Vec<ComponentReport>,
}

impl Decomposition {
    pub fn fully_solved(&self) -> bool {
        self.parents.iter().all(Option::is_some)
    }
}

fn solve_component(
    h: &CandidateGraph,
    w: &FamilyWeights,
    comp: &[usize],
    strategy: Strategy,
    limits: &SolverLimits,
) -> Result<Option<(PartialChoice, ComponentMethod)>> {
    if comp.len() == 1 {
        let (m, x) = best_unconstrained(w, comp[0]);
        if x == f64::NEG_INFINITY {
            return Err(Error::Infeasible(format!(
                "every family of {} is forbidden",
                comp[0]
            )));
        }
        return Ok(Some((
            PartialChoice {
                masks: vec![(comp[0], m)],
                weight: x,
            },
            ComponentMethod::Singleton,
        )));
    }
    match strategy {
        Strategy::Brute => {
            if comp.len() > limits.brute {
                return Ok(None);
            }
            let choice = brute::enumerate(h, w, comp, comp, None)?;
            Ok(Some((choice, ComponentMethod::Brute)))
        }
        Strategy::Separator => match find_separator(h, comp, limits.separator) {
            Some(split) if split.side_a.len().max(split.side_b.len()) <= limits.brute => {
                let (choice, orders) = separator::solve_split(h, w, comp, &split)?;
                Ok(Some((
                    choice,
                    ComponentMethod::Separator {
                        separator: split.separator.clone(),
                        orders,
                    },
                )))
            }
            _ if comp.len() <= limits.brute => {
                let choice = brute::enumerate(h, w, comp, comp, None)?;
                Ok(Some((choice, ComponentMethod::Brute)))
            }
            _ => Ok(None),
        },
        Strategy::ClusterTree => {
            let tree = build_cluster_tree(h, comp);
            if tree.max_cluster_size() > limits.cluster {
                return Ok(None);
            }
            let (choice, stats) = cluster_tree::dp(h, w, comp, &tree, limits.cluster)?;
            Ok(Some((
                choice,
                ComponentMethod::ClusterTree {
                    cluster_sizes: tree.clusters().iter().map(Vec::len).collect(),
                    stats,
                },
            )))
        }
    }
}

/// Solves every strongly connected component that fits the strategy's
/// limits and reports the ones that do not.
pub fn solve_components(
    h: &CandidateGraph,
    w: &FamilyWeights,
    strategy: Strategy,
    limits: &SolverLimits,
) -> Result<Decomposition> {
    let mut parents = vec![None; h.n()];
    let mut components = Vec::new();
    for comp in scc_decompose(h) {
        match solve_component(h, w, &comp, strategy, limits)? {
            Some((choice, method)) => {
                for &(v, m) in &choice.masks {
                    parents[v] = Some(h.parents_from_mask(v, m));
                }
                components.push(ComponentReport {
                    vertices: comp,
                    method,
                    weight: choice.weight,
                });
            }
            None => components.push(ComponentReport {
                vertices: comp,
                method: ComponentMethod::Unsolved,
                weight: f64::NAN,
            }),
        }
    }
    Ok(Decomposition {
        parents,
        components,
    })
}

/// Exact optimum: strongly connected components solved independently with
/// `strategy` and unioned.
pub fn solve_mrbn(
    h: &CandidateGraph,
    w: &FamilyWeights,
    strategy: Strategy,
    limits: &SolverLimits,
) -> Result<(MrbnSolution, Decomposition)> {
    let dec = solve_components(h, w, strategy, limits)?;
    if let Some(c) = dec
        .components
        .iter()
        .find(|c| c.method == ComponentMethod::Unsolved)
    {
        return Err(Error::ResourceLimit(format!(
            "component of {} vertices exceeds {strategy:?} limits",
            c.vertices.len()
        )));
    }
    let dag = Dag::from_parent_sets(
        dec.parents
            .iter()
            .map(|p| p.clone().unwrap_or_default())
            .collect(),
    )?;
    let weight = dec.components.iter().map(|c| c.weight).sum();
    Ok((MrbnSolution { dag, weight }, dec))
}

/// Tab-separated dump of the candidate arcs, component sizes and cluster
/// sizes.
pub fn write_decomposition<W: Write>(
    h: &CandidateGraph,
    dec: &Decomposition,
    mut out: W,
) -> Result<()> {
    writeln!(out, "kind\ta\tb\tc")?;
    for (j, i) in h.arcs() {
        writeln!(out, "arc\t{j}\t{i}\t")?;
    }
    for (idx, c) in dec.components.iter().enumerate() {
        let method = match &c.method {
            ComponentMethod::Singleton => "singleton",
            ComponentMethod::Brute => "brute",
            ComponentMethod::Separator { .. } => "separator",
            ComponentMethod::ClusterTree { .. } => "cluster_tree",
            ComponentMethod::Unsolved => "unsolved",
        };
        writeln!(out, "scc\t{idx}\t{}\t{method}", c.vertices.len())?;
        if let ComponentMethod::ClusterTree { cluster_sizes, .. } = &c.method {
            for (j, s) in cluster_sizes.iter().enumerate() {
                writeln!(out, "cluster\t{idx}\t{j}\t{s}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_roundtrip() {
        let h = CandidateGraph::new(vec![vec![2, 1], vec![], vec![0]]).unwrap();
        assert_eq!(h.candidates(0), &[1, 2]);
        assert_eq!(h.parents_from_mask(0, 0b10), vec![2]);
        assert_eq!(h.mask_of(0, &[2, 1]), Some(0b11));
        assert_eq!(h.mask_of(1, &[0]), None);
        assert_eq!(h.k(), 2);
    }

    #[test]
    fn no_arcs_takes_empty_families() {
        let h = CandidateGraph::new(vec![vec![]; 3]).unwrap();
        let w = FamilyWeights::new(&h, vec![vec![-1.0], vec![-2.0], vec![-3.0]]).unwrap();
        for s in [Strategy::Brute, Strategy::Separator, Strategy::ClusterTree] {
            let (sol, _) = solve_mrbn(&h, &w, s, &SolverLimits::default()).unwrap();
            assert_eq!(sol.weight, -6.0);
            assert_eq!(sol.dag.n_edges(), 0);
        }
    }

    #[test]
    fn acyclic_h_takes_per_vertex_best() {
        // 0 -> 1 -> 2, 0 -> 2
        let h = CandidateGraph::new(vec![vec![], vec![0], vec![0, 1]]).unwrap();
        let w = FamilyWeights::new(
            &h,
            vec![vec![0.0], vec![0.0, 1.0], vec![0.0, 0.5, 0.7, 2.0]],
        )
        .unwrap();
        let (sol, dec) = solve_mrbn(&h, &w, Strategy::Brute, &SolverLimits::default()).unwrap();
        assert_eq!(sol.weight, 3.0);
        assert_eq!(sol.dag.parents(2), &[0, 1]);
        assert!(dec
            .components
            .iter()
            .all(|c| c.method == ComponentMethod::Singleton));
        assert_eq!(w.total(&h, &sol.dag).unwrap(), 3.0);
    }

    #[test]
    fn weight_table_shape_checked() {
        let h = CandidateGraph::new(vec![vec![1], vec![]]).unwrap();
        assert!(FamilyWeights::new(&h, vec![vec![0.0], vec![0.0]]).is_err());
        assert!(FamilyWeights::new(&h, vec![vec![0.0, f64::NAN], vec![0.0]]).is_err());
    }

    #[test]
    fn decomposition_dump_lists_components() {
        let h = CandidateGraph::new(vec![vec![1], vec![0], vec![]]).unwrap();
        let w = FamilyWeights::new(&h, vec![vec![0.0, 1.0], vec![0.0, 2.0], vec![0.0]]).unwrap();
        let (_, dec) = solve_mrbn(&h, &w, Strategy::Brute, &SolverLimits::default()).unwrap();
        let mut out = Vec::new();
        write_decomposition(&h, &dec, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("scc\t0\t1\tsingleton") || text.contains("scc\t1\t1\tsingleton"));
        assert!(text.contains("\t2\tbrute"));
    }
}
