//! Greedy hill-climbing over single-arc changes with a TABU list of
//! recently visited structures.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use crate::dataset::VariableDecl;
use crate::error::{Error, Result};
use crate::measures::CandidateSets;
use crate::network::Dag;
use crate::scoring::Scorer;

/// Minimum gain over the best-seen score that counts as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-9;

/// Relative gap below which two move deltas count as equal, so that moves
/// between score-equivalent structures are ordered by the move itself
/// rather than by rounding.
pub const DELTA_TIE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MoveKind {
    Add,
    Delete,
    Reverse,
}

impl MoveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MoveKind::Add => "add",
            MoveKind::Delete => "delete",
            MoveKind::Reverse => "reverse",
        }
    }
}

/// A single-arc change. The derived ordering (kind, from, to) is the
/// tie-break among equally scoring moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Move {
    pub kind: MoveKind,
    pub from: usize,
    pub to: usize,
}

impl Move {
    pub fn add(from: usize, to: usize) -> Self {
        Self {
            kind: MoveKind::Add,
            from,
            to,
        }
    }

    pub fn delete(from: usize, to: usize) -> Self {
        Self {
            kind: MoveKind::Delete,
            from,
            to,
        }
    }

    pub fn reverse(from: usize, to: usize) -> Self {
        Self {
            kind: MoveKind::Reverse,
            from,
            to,
        }
    }

    /// Applies the move in place; fails if it does not apply or would
    /// create a cycle.
    pub fn apply_to(&self, dag: &mut Dag) -> Result<()> {
        if self.from == self.to {
            return Err(Error::IllegalMove("self loop".into()));
        }
        match self.kind {
            MoveKind::Add => dag.add_edge(self.from, self.to),
            MoveKind::Delete => dag.remove_edge(self.from, self.to),
            MoveKind::Reverse => dag.reverse_edge(self.from, self.to),
        }
    }

    /// Variables whose parent sets change.
    pub fn touched(&self) -> impl Iterator<Item = usize> {
        let second = (self.kind == MoveKind::Reverse).then_some(self.from);
        std::iter::once(self.to).chain(second)
    }
}

/// Returns a copy of `dag` with `mv` applied.
pub fn apply_move(dag: &Dag, mv: &Move) -> Result<Dag> {
    let mut out = dag.clone();
    mv.apply_to(&mut out)?;
    Ok(out)
}

/// Bounded FIFO of visited structures.
#[derive(Debug, Clone)]
pub struct TabuList {
    capacity: usize,
    entries: VecDeque<(u64, Dag)>,
}

impl TabuList {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, dag: &Dag) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((dag.fingerprint(), dag.clone()));
    }

    /// Exact membership: fingerprints are confirmed structurally.
    pub fn contains(&self, dag: &Dag) -> bool {
        let fp = dag.fingerprint();
        self.entries.iter().any(|(h, d)| *h == fp && d == dag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// TABU list capacity.
    pub tabu: usize,
    /// Non-improving steps tolerated before stopping.
    pub patience: usize,
    pub max_in_degree: Option<usize>,
    /// Restricts parents to these sets when present.
    pub candidates: Option<CandidateSets>,
    /// When present, only families of flagged variables may change.
    pub mutable: Option<Vec<bool>>,
    pub max_steps: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            tabu: 100,
            patience: 15,
            max_in_degree: None,
            candidates: None,
            mutable: None,
            max_steps: 100_000,
        }
    }
}

impl SearchConfig {
    pub fn constrained(candidates: CandidateSets) -> Self {
        Self {
            candidates: Some(candidates),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        Ok(())
    }

    fn allows_parent(&self, parent: usize, child: usize) -> bool {
        self.candidates
            .as_ref()
            .is_none_or(|c| c.get(child).contains(&parent))
    }

    fn room_for_parent(&self, dag: &Dag, child: usize) -> bool {
        self.max_in_degree
            .is_none_or(|d| dag.parents(child).len() < d)
    }

    fn is_mutable(&self, v: usize) -> bool {
        self.mutable.as_ref().is_none_or(|m| m[v])
    }

    /// Whether `dag` lies inside the constraints.
    pub fn admits(&self, dag: &Dag) -> bool {
        dag.edges().all(|(f, t)| self.allows_parent(f, t))
            && self
                .max_in_degree
                .is_none_or(|d| (0..dag.n()).all(|i| dag.parents(i).len() <= d))
    }
}

fn reachability(dag: &Dag, children: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = dag.n();
    let mut reach = vec![vec![false; n]; n];
    for (s, row) in reach.iter_mut().enumerate() {
        let mut stack = vec![s];
        row[s] = true;
        while let Some(v) = stack.pop() {
            for &c in &children[v] {
                if !row[c] {
                    row[c] = true;
                    stack.push(c);
                }
            }
        }
    }
    reach
}

/// All moves that keep the graph acyclic and inside the configured
/// constraints, ordered by (kind, from, to).
pub fn legal_moves(dag: &Dag, cfg: &SearchConfig) -> Vec<Move> {
    let n = dag.n();
    let children = dag.children();
    let reach = reachability(dag, &children);
    let mut moves = Vec::new();
    for from in 0..n {
        for to in 0..n {
            if from == to
                || dag.has_edge(from, to)
                || reach[to][from]
                || !cfg.is_mutable(to)
                || !cfg.allows_parent(from, to)
                || !cfg.room_for_parent(dag, to)
            {
                continue;
            }
            moves.push(Move::add(from, to));
        }
    }
    let mut edges: Vec<(usize, usize)> = dag.edges().collect();
    edges.sort_unstable();
    for &(from, to) in &edges {
        if cfg.is_mutable(to) {
            moves.push(Move::delete(from, to));
        }
    }
    for &(from, to) in &edges {
        if !cfg.is_mutable(to) || !cfg.is_mutable(from) {
            continue;
        }
        if !cfg.allows_parent(to, from) || !cfg.room_for_parent(dag, from) {
            continue;
        }
        let alternate = children[from].iter().any(|&c| c != to && reach[c][to]);
        if !alternate {
            moves.push(Move::reverse(from, to));
        }
    }
    moves
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub mv: Move,
    pub delta: f64,
    /// Network score after the move.
    pub score: f64,
    /// Cumulative fresh statistics after the move.
    pub stats: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    pub initial_score: f64,
    pub best_score: f64,
    /// Number of applied moves at which the best structure was reached.
    pub best_step: usize,
    pub steps: Vec<TraceStep>,
}

/// Greedy hill-climbing with TABU. Returns the best structure seen,
/// including `initial` itself.
pub fn greedy_hill_climb(
    initial: &Dag,
    cfg: &SearchConfig,
    scorer: &mut Scorer<'_>,
) -> Result<(Dag, SearchTrace)> {
    cfg.validate()?;
    if !initial.is_acyclic() {
        return Err(Error::Cyclic);
    }
    if !cfg.admits(initial) {
        return Err(Error::invalid(
            "initial structure violates the search constraints",
        ));
    }
    let mut current = initial.clone();
    let mut current_score = scorer.network_score(&current)?;
    let mut best = current.clone();
    let mut best_score = current_score;
    let mut trace = SearchTrace {
        initial_score: current_score,
        best_score,
        best_step: 0,
        steps: Vec::new(),
    };
    let mut tabu = TabuList::new(cfg.tabu);
    tabu.push(&current);
    let mut deltas: HashMap<Move, f64> = HashMap::new();
    let mut stale = 0;

    for step in 1..=cfg.max_steps {
        let moves = legal_moves(&current, cfg);
        let mut scored = Vec::with_capacity(moves.len());
        for mv in moves {
            let d = match deltas.get(&mv) {
                Some(&d) => d,
                None => {
                    let d = scorer.move_delta(&current, &mv)?;
                    deltas.insert(mv, d);
                    d
                }
            };
            scored.push((d, mv));
        }
        order_moves(&mut scored);
        let chosen = scored.into_iter().find_map(|(d, mv)| {
            let next = apply_move(&current, &mv).ok()?;
            (!tabu.contains(&next)).then_some((d, mv, next))
        });
        let Some((delta, mv, next)) = chosen else {
            break;
        };
        current = next;
        let touched: Vec<usize> = mv.touched().collect();
        deltas.retain(|m, _| !m.touched().any(|t| touched.contains(&t)));
        current_score = scorer.network_score(&current)?;
        tabu.push(&current);
        trace.steps.push(TraceStep {
            step,
            mv,
            delta,
            score: current_score,
            stats: scorer.cache_report().fresh_computations,
        });
        if current_score > best_score + IMPROVEMENT_EPS {
            best = current.clone();
            best_score = current_score;
            trace.best_step = step;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    trace.best_score = best_score;
    Ok((best, trace))
}

/// Sorts by delta, best first; deltas within [`DELTA_TIE_EPS`] of the next
/// better group are ordered by the move.
fn order_moves(scored: &mut [(f64, Move)]) {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut start = 0;
    while start < scored.len() {
        let head = scored[start].0;
        let tol = DELTA_TIE_EPS * (1.0 + head.abs());
        let end = start
            + scored[start..]
                .iter()
                .take_while(|(d, _)| head - d <= tol)
                .count();
        scored[start..end].sort_by_key(|a| a.1);
        start = end;
    }
}

/// Writes one tab-separated row per applied move.
pub fn write_trace<W: Write>(
    trace: &SearchTrace,
    variables: &[VariableDecl],
    n_rows: usize,
    mut out: W,
) -> Result<()> {
    writeln!(
        out,
        "step\tmove\tfrom\tto\tdelta\tscore_per_instance\tstats"
    )?;
    let n = n_rows.max(1) as f64;
    for s in &trace.steps {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            s.step,
            s.mv.kind.as_str(),
            variables[s.mv.from].name,
            variables[s.mv.to].name,
            s.delta,
            s.score / n,
            s.stats
        )?;
    }
    Ok(())
}
