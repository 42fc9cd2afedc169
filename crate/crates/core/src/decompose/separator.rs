//! Conditioning on the order of a small vertex separator.
//!
//! Once the relative order of the separator vertices is fixed, the two sides
//! can be optimised independently among structures consistent with that
//! order, and their union is guaranteed to be acyclic.

use super::brute::enumerate;
use super::{assemble, CandidateGraph, FamilyWeights, MrbnSolution, PartialChoice};
use crate::error::{Error, Result};
use crate::network::Dag;

/// A validated split of a vertex set by a separator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparatorSplit {
    pub separator: Vec<usize>,
    /// Non-separator vertices on each side.
    pub part_a: Vec<usize>,
    pub part_b: Vec<usize>,
    /// Vertices whose families are chosen on each side; together they cover
    /// the separator too.
    pub side_a: Vec<usize>,
    pub side_b: Vec<usize>,
}

/// True when every directed path between two vertices of `order` runs from
/// the earlier to the later one.
pub fn respects_order(dag: &Dag, order: &[usize]) -> bool {
    order.iter().enumerate().all(|(a, &early)| {
        order[a + 1..]
            .iter()
            .all(|&late| !dag.has_path(late, early))
    })
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut x = x;
    while parent[x] != r {
        let next = parent[x];
        parent[x] = r;
        x = next;
    }
    r
}

/// Checks that `separator` splits `vertices` into two sides such that every
/// family lies within one side plus the separator.
pub fn validate_separator(
    h: &CandidateGraph,
    vertices: &[usize],
    separator: &[usize],
) -> Result<SeparatorSplit> {
    let n = h.n();
    let mut in_scope = vec![false; n];
    for &v in vertices {
        in_scope[v] = true;
    }
    let mut in_sep = vec![false; n];
    for &s in separator {
        if !in_scope[s] {
            return Err(Error::NotASeparator(format!("{s} is not in the component")));
        }
        in_sep[s] = true;
    }
    let mut sep = separator.to_vec();
    sep.sort_unstable();
    sep.dedup();

    // weakly connected parts of the component without the separator
    let mut uf: Vec<usize> = (0..n).collect();
    for (j, i) in h.arcs() {
        if in_scope[j] && in_scope[i] && !in_sep[j] && !in_sep[i] {
            let (a, b) = (find(&mut uf, j), find(&mut uf, i));
            uf[a.max(b)] = a.min(b);
        }
    }
    let rest: Vec<usize> = vertices.iter().copied().filter(|&v| !in_sep[v]).collect();
    let mut roots: Vec<usize> = rest.iter().map(|&v| find(&mut uf, v)).collect();
    roots.sort_unstable();
    roots.dedup();
    if roots.len() < 2 {
        return Err(Error::NotASeparator(
            "removing the separator leaves fewer than two disconnected parts".into(),
        ));
    }

    // a separator vertex whose candidates reach several parts ties them together
    for &s in &sep {
        let touched: Vec<usize> = h
            .candidates(s)
            .iter()
            .filter(|&&c| in_scope[c] && !in_sep[c])
            .copied()
            .collect();
        for pair in touched.windows(2) {
            let (a, b) = (find(&mut uf, pair[0]), find(&mut uf, pair[1]));
            uf[a.max(b)] = a.min(b);
        }
    }
    let first = find(&mut uf, rest[0]);
    let (part_a, part_b): (Vec<usize>, Vec<usize>) =
        rest.iter().partition(|&&v| find(&mut uf, v) == first);
    if part_b.is_empty() {
        return Err(Error::NotASeparator(
            "some family spans both sides of the separator".into(),
        ));
    }

    let mut side_a = Vec::new();
    let mut side_b = Vec::new();
    for &v in vertices {
        let anchor = if in_sep[v] {
            h.candidates(v)
                .iter()
                .copied()
                .find(|&c| in_scope[c] && !in_sep[c])
        } else {
            Some(v)
        };
        match anchor {
            Some(a) if find(&mut uf, a) != first => side_b.push(v),
            _ => side_a.push(v),
        }
    }
    Ok(SeparatorSplit {
        separator: sep,
        part_a,
        part_b,
        side_a,
        side_b,
    })
}

fn next_permutation(xs: &mut [usize]) -> bool {
    let Some(i) = (1..xs.len()).rev().find(|&i| xs[i - 1] < xs[i]) else {
        return false;
    };
    let j = (i..xs.len())
        .rev()
        .find(|&j| xs[j] > xs[i - 1])
        .expect("successor exists");
    xs.swap(i - 1, j);
    xs[i..].reverse();
    true
}

/// Best choice over all separator orders; also returns the number of
/// orders tried.
pub(crate) fn solve_split(
    h: &CandidateGraph,
    w: &FamilyWeights,
    vertices: &[usize],
    split: &SeparatorSplit,
) -> Result<(PartialChoice, usize)> {
    let mut order = split.separator.clone();
    let mut best: Option<PartialChoice> = None;
    let mut tried = 0;
    loop {
        tried += 1;
        let a = enumerate(h, w, &split.side_a, vertices, Some(&order));
        let b = enumerate(h, w, &split.side_b, vertices, Some(&order));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let weight = a.weight + b.weight;
                let mut masks = a.masks;
                masks.extend(b.masks);
                // the two sides agree on the separator order, so no cycle
                // can close through it
                assemble(h, &masks).map_err(|_| {
                    Error::Infeasible(format!("sides joined under order {order:?} form a cycle"))
                })?;
                if best.as_ref().is_none_or(|c| weight > c.weight) {
                    best = Some(PartialChoice { masks, weight });
                }
            }
            (Err(Error::Infeasible(_)), _) | (_, Err(Error::Infeasible(_))) => {}
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
        if !next_permutation(&mut order) {
            break;
        }
    }
    let mut best =
        best.ok_or_else(|| Error::Infeasible("no separator order admits a solution".into()))?;
    best.masks.sort_unstable();
    Ok((best, tried))
}

/// Optimum over `vertices` (a strongly connected component or any vertex
/// subset) by conditioning on the orders of `separator`. Candidates outside
/// `vertices` are unconstrained.
pub fn separator_solve(
    h: &CandidateGraph,
    w: &FamilyWeights,
    vertices: &[usize],
    separator: &[usize],
) -> Result<MrbnSolution> {
    let split = validate_separator(h, vertices, separator)?;
    let (choice, _) = solve_split(h, w, vertices, &split)?;
    Ok(MrbnSolution {
        dag: assemble(h, &choice.masks)?,
        weight: choice.weight,
    })
}

fn combinations(items: &[usize], size: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(
        items: &[usize],
        size: usize,
        start: usize,
        cur: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if cur.len() == size {
            f(cur);
            return;
        }
        for t in start..items.len() {
            if items.len() - t < size - cur.len() {
                break;
            }
            cur.push(items[t]);
            rec(items, size, t + 1, cur, f);
            cur.pop();
        }
    }
    rec(items, size, 0, &mut Vec::new(), f);
}

/// Smallest valid separator of at most `max_size` vertices, preferring the
/// most balanced sides.
pub fn find_separator(
    h: &CandidateGraph,
    vertices: &[usize],
    max_size: usize,
) -> Option<SeparatorSplit> {
    for size in 0..=max_size.min(vertices.len().saturating_sub(2)) {
        let mut best: Option<SeparatorSplit> = None;
        combinations(vertices, size, &mut |sep| {
            if let Ok(split) = validate_separator(h, vertices, sep) {
                let cost = split.side_a.len().max(split.side_b.len());
                if best
                    .as_ref()
                    .is_none_or(|b| cost < b.side_a.len().max(b.side_b.len()))
                {
                    best = Some(split);
                }
            }
        });
        if best.is_some() {
            return best;
        }
    }
    None
}
