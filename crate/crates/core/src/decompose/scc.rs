//! Strongly connected components of the candidate digraph.

use super::CandidateGraph;

/// Components in topological order of the condensation, each sorted.
pub fn scc_decompose(h: &CandidateGraph) -> Vec<Vec<usize>> {
    let n = h.n();
    let succ = h.successors();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut components = Vec::new();
    let mut next = 0;

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        // (vertex, next successor to visit)
        let mut frames = vec![(root, 0usize)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut edge)) = frames.last_mut() {
            if *edge < succ[v].len() {
                let u = succ[v][*edge];
                *edge += 1;
                if index[u] == usize::MAX {
                    index[u] = next;
                    low[u] = next;
                    next += 1;
                    stack.push(u);
                    on_stack[u] = true;
                    frames.push((u, 0));
                } else if on_stack[u] {
                    low[v] = low[v].min(index[u]);
                }
                continue;
            }
            frames.pop();
            if let Some(&(p, _)) = frames.last() {
                low[p] = low[p].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let u = stack.pop().expect("vertex on stack");
                    on_stack[u] = false;
                    comp.push(u);
                    if u == v {
                        break;
                    }
                }
                comp.sort_unstable();
                components.push(comp);
            }
        }
    }
    // Tarjan emits sinks first
    components.reverse();
    components
}
