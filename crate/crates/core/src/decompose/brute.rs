//! Exhaustive enumeration of parent-set combinations, with incremental
//! cycle detection and a branch-and-bound on the remaining best weights.

use super::{assemble, CandidateGraph, FamilyWeights, MrbnSolution, PartialChoice};
use crate::error::{Error, Result};

/// Largest number of vertices [`brute_force_mrbn`] accepts.
pub const DEFAULT_BRUTE_LIMIT: usize = 8;

pub fn brute_force_mrbn(h: &CandidateGraph, w: &FamilyWeights) -> Result<MrbnSolution> {
    brute_force_mrbn_with_limit(h, w, DEFAULT_BRUTE_LIMIT)
}

pub fn brute_force_mrbn_with_limit(
    h: &CandidateGraph,
    w: &FamilyWeights,
    limit: usize,
) -> Result<MrbnSolution> {
    if h.n() > limit {
        return Err(Error::ResourceLimit(format!(
            "{} vertices exceed the exhaustive limit of {limit}",
            h.n()
        )));
    }
    let all: Vec<usize> = (0..h.n()).collect();
    let choice = enumerate(h, w, &all, &all, None)?;
    Ok(MrbnSolution {
        dag: assemble(h, &choice.masks)?,
        weight: choice.weight,
    })
}

struct Search<'a> {
    h: &'a CandidateGraph,
    assigned: &'a [usize],
    internal: Vec<bool>,
    /// Position in the imposed order, for vertices it covers.
    position: Vec<Option<usize>>,
    options: Vec<Vec<(usize, f64)>>,
    suffix_bound: Vec<f64>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    current: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
}

impl Search<'_> {
    fn reach(&self, start: &[usize], adj: &[Vec<usize>]) -> Vec<bool> {
        let mut seen = vec![false; adj.len()];
        let mut stack = start.to_vec();
        for &s in start {
            seen[s] = true;
        }
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Whether giving `v` the internal parents `ps` keeps the partial graph
    /// acyclic and consistent with the imposed order.
    fn admissible(&self, v: usize, ps: &[usize]) -> bool {
        if ps.is_empty() {
            return true;
        }
        let below = self.reach(&[v], &self.children);
        if ps.iter().any(|&p| below[p]) {
            return false;
        }
        if self.position.iter().all(Option::is_none) {
            return true;
        }
        let above = self.reach(ps, &self.parents);
        let first_below = (0..below.len())
            .filter(|&u| below[u])
            .filter_map(|u| self.position[u])
            .min();
        let last_above = (0..above.len())
            .filter(|&u| above[u])
            .filter_map(|u| self.position[u])
            .max();
        match (first_below, last_above) {
            (Some(a), Some(b)) => a > b,
            _ => true,
        }
    }

    fn run(&mut self, depth: usize, acc: f64) {
        if depth == self.assigned.len() {
            if self.best.as_ref().is_none_or(|(_, b)| acc > *b) {
                self.best = Some((self.current.clone(), acc));
            }
            return;
        }
        let v = self.assigned[depth];
        for t in 0..self.options[depth].len() {
            let (mask, x) = self.options[depth][t];
            let bound = acc + x + self.suffix_bound[depth + 1];
            if self.best.as_ref().is_some_and(|(_, b)| bound <= *b) {
                // options are sorted by weight, later ones cannot do better
                return;
            }
            let ps: Vec<usize> = self
                .h
                .parents_from_mask(v, mask)
                .into_iter()
                .filter(|&p| self.internal[p])
                .collect();
            if !self.admissible(v, &ps) {
                continue;
            }
            for &p in &ps {
                self.children[p].push(v);
            }
            self.parents[v] = ps.clone();
            self.current[depth] = mask;
            self.run(depth + 1, acc + x);
            for &p in &ps {
                self.children[p].pop();
            }
            self.parents[v].clear();
        }
    }
}

/// Best parent masks for `assigned`, treating arcs from vertices outside
/// `scope` as free and, when `order` is given, requiring every path among
/// its vertices to follow the order.
pub(crate) fn enumerate(
    h: &CandidateGraph,
    w: &FamilyWeights,
    assigned: &[usize],
    scope: &[usize],
    order: Option<&[usize]>,
) -> Result<PartialChoice> {
    let n = h.n();
    let mut internal = vec![false; n];
    for &v in scope {
        internal[v] = true;
    }
    let mut position = vec![None; n];
    if let Some(order) = order {
        for (p, &v) in order.iter().enumerate() {
            position[v] = Some(p);
        }
    }
    let mut options = Vec::with_capacity(assigned.len());
    for &v in assigned {
        let mut opts: Vec<(usize, f64)> = w
            .table(v)
            .iter()
            .enumerate()
            .filter(|(_, x)| **x > f64::NEG_INFINITY)
            .map(|(m, &x)| (m, x))
            .collect();
        if opts.is_empty() {
            return Err(Error::Infeasible(format!(
                "every family of {v} is forbidden"
            )));
        }
        opts.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        options.push(opts);
    }
    let mut suffix_bound = vec![0.0; assigned.len() + 1];
    for d in (0..assigned.len()).rev() {
        suffix_bound[d] = suffix_bound[d + 1] + options[d][0].1;
    }
    let mut search = Search {
        h,
        assigned,
        internal,
        position,
        options,
        suffix_bound,
        children: vec![Vec::new(); n],
        parents: vec![Vec::new(); n],
        current: vec![0; assigned.len()],
        best: None,
    };
    search.run(0, 0.0);
    let (masks, weight) = search
        .best
        .ok_or_else(|| Error::Infeasible("no acyclic selection of families".into()))?;
    Ok(PartialChoice {
        masks: assigned.iter().copied().zip(masks).collect(),
        weight,
    })
}
