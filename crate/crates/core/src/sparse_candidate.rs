//! The sparse candidate loop: alternately restrict every variable to a small
//! set of candidate parents and maximize the score inside those sets, until
//! the score or the candidate sets stop changing.

use std::io::Write;
use std::time::Instant;

use crate::dataset::{Dataset, StatsCache};
use crate::decompose::{
    solve_components, weights_from_score, CandidateGraph, SolverLimits, Strategy,
};
use crate::error::{Error, Result};
use crate::measures::{CandidateSets, DiscMode, MeasureKind, RestrictConfig, Restrictor};
use crate::network::{BayesianNetwork, Dag, KlMode};
use crate::scoring::{ScoreConfig, Scorer};
use crate::search::{greedy_hill_climb, SearchConfig};

/// Tolerance on score per instance for equality and monotonicity checks.
pub const SCORE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Maximizer {
    /// Hill-climbing restricted to candidate parents.
    Greedy,
    /// Exact solution of the restricted problem, with greedy fallback on
    /// components beyond the solver limits.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stopping {
    /// Stop when the score no longer changes.
    Score,
    /// Stop when the candidate sets no longer change.
    Candidate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub measure: MeasureKind,
    pub k: usize,
    pub score: ScoreConfig,
    pub maximizer: Maximizer,
    pub stopping: Stopping,
    pub max_iterations: usize,
    /// Consecutive non-improving iterations tolerated in candidate mode.
    pub no_improvement_limit: usize,
    /// Monte-Carlo setting for the discrepancy measure.
    pub disc_mode: DiscMode,
    pub mi_floor: Option<f64>,
    /// Tabu size, patience and in-degree bound for the greedy maximizer.
    pub search: SearchConfig,
    pub strategy: Strategy,
    pub limits: SolverLimits,
    /// Start each Maximize from the empty graph instead of the previous
    /// structure.
    pub restart_from_empty: bool,
    /// Dirichlet mass used when fitting parameters of intermediate networks.
    pub smoothing: f64,
    /// How KL to a reference network is evaluated, when one is given.
    pub kl_mode: KlMode,
}

impl RunConfig {
    pub fn new(measure: MeasureKind, k: usize) -> Self {
        Self {
            measure,
            k,
            score: ScoreConfig::default(),
            maximizer: Maximizer::Greedy,
            stopping: Stopping::Score,
            max_iterations: 20,
            no_improvement_limit: 3,
            disc_mode: DiscMode::default(),
            mi_floor: None,
            search: SearchConfig::default(),
            strategy: Strategy::ClusterTree,
            limits: SolverLimits::default(),
            restart_from_empty: false,
            smoothing: 1.0,
            kl_mode: KlMode::Auto {
                samples: 50_000,
                seed: 0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if self.stopping == Stopping::Candidate && self.no_improvement_limit == 0 {
            return Err(Error::invalid("no-improvement limit must be at least 1"));
        }
        if !(self.smoothing >= 0.0) {
            return Err(Error::invalid("smoothing must be non-negative"));
        }
        self.score.validate()?;
        self.search.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    /// Wall time since the run started.
    pub elapsed_s: f64,
    pub score_per_instance: f64,
    /// Fresh passes over the data so far.
    pub stats: u64,
    pub candidates: Option<CandidateSets>,
    pub kl: Option<f64>,
    /// Some components were beyond the exact solver and were searched
    /// greedily.
    pub mixed: bool,
}

impl IterationReport {
    pub fn candidates_fingerprint(&self) -> Option<u64> {
        self.candidates.as_ref().map(CandidateSets::fingerprint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ScoreUnchanged,
    CandidatesUnchanged,
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Continue,
    Stop(StopReason),
}

/// Decides whether the loop should stop after the last report in `history`.
pub fn check_convergence(history: &[IterationReport], cfg: &RunConfig) -> Convergence {
    let n = history.len();
    if n == 0 {
        return Convergence::Continue;
    }
    let flat = |t: usize| {
        t >= 1
            && history[t].score_per_instance <= history[t - 1].score_per_instance + SCORE_TOLERANCE
    };
    let decision = match cfg.stopping {
        Stopping::Score if n >= 2 && flat(n - 1) => Some(StopReason::ScoreUnchanged),
        Stopping::Candidate
            if n >= 2
                && history[n - 1].candidates.is_some()
                && history[n - 1].candidates == history[n - 2].candidates =>
        {
            Some(StopReason::CandidatesUnchanged)
        }
        Stopping::Candidate
            if n > cfg.no_improvement_limit && (n - cfg.no_improvement_limit..n).all(flat) =>
        {
            Some(StopReason::NoImprovement)
        }
        _ => None,
    };
    match decision {
        Some(r) => Convergence::Stop(r),
        None if n >= cfg.max_iterations => Convergence::Stop(StopReason::MaxIterations),
        None => Convergence::Continue,
    }
}

/// Result of a learning run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub network: BayesianNetwork,
    pub reports: Vec<IterationReport>,
    pub stop: StopReason,
}

fn maximize(
    cfg: &RunConfig,
    start: &Dag,
    candidates: &CandidateSets,
    scorer: &mut Scorer<'_>,
) -> Result<(Dag, bool)> {
    let greedy_cfg = SearchConfig {
        candidates: Some(candidates.clone()),
        ..cfg.search.clone()
    };
    match cfg.maximizer {
        Maximizer::Greedy => {
            let (dag, _) = greedy_hill_climb(start, &greedy_cfg, scorer)?;
            Ok((dag, false))
        }
        Maximizer::Exact => {
            let h = CandidateGraph::from_candidate_sets(candidates);
            let w = weights_from_score(&h, scorer)?;
            let dec = solve_components(&h, &w, cfg.strategy, &cfg.limits)?;
            let mixed = !dec.fully_solved();
            let parents: Vec<Vec<usize>> = dec
                .parents
                .iter()
                .enumerate()
                .map(|(i, p)| p.clone().unwrap_or_else(|| start.parents(i).to_vec()))
                .collect();
            let seeded = Dag::from_parent_sets(parents)?;
            if !mixed {
                return Ok((seeded, false));
            }
            let mutable = dec.parents.iter().map(Option::is_none).collect();
            let fallback = SearchConfig {
                mutable: Some(mutable),
                ..greedy_cfg
            };
            let (dag, _) = greedy_hill_climb(&seeded, &fallback, scorer)?;
            Ok((dag, true))
        }
    }
}

/// Runs the loop from `b0` (the empty network when `None`). When `reference`
/// is given, each report carries KL(reference ‖ learned network).
pub fn run_sparse_candidate(
    data: &Dataset,
    cfg: &RunConfig,
    b0: Option<&BayesianNetwork>,
    reference: Option<&BayesianNetwork>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let n_rows = data.n_rows() as f64;
    let mut scorer = Scorer::with_stats(StatsCache::new(data), cfg.score)?;
    let mut current = match b0 {
        Some(b) => {
            if b.n() != data.n_vars() {
                return Err(Error::VariableMismatch(
                    "initial network and data have different variables".into(),
                ));
            }
            b.clone()
        }
        None => BayesianNetwork::fit(&Dag::empty(data.n_vars()), scorer.stats(), cfg.smoothing)?,
    };
    let mut current_score = scorer.network_score(current.dag())?;
    let mut restrictor = Restrictor::new(RestrictConfig {
        kind: cfg.measure,
        k: cfg.k,
        disc_mode: cfg.disc_mode,
        mi_floor: cfg.mi_floor,
    });
    let mut reports: Vec<IterationReport> = Vec::new();

    let stop = loop {
        let candidates = restrictor.restrict(&current, &mut scorer)?;
        if !candidates.contains_parents_of(current.dag()) {
            return Err(Error::Internal(
                "candidate sets dropped a current parent".into(),
            ));
        }
        let start = if cfg.restart_from_empty {
            Dag::empty(data.n_vars())
        } else {
            current.dag().clone()
        };
        let (mut dag, mixed) = maximize(cfg, &start, &candidates, &mut scorer)?;
        let mut score = scorer.network_score(&dag)?;
        if score / n_rows < current_score / n_rows - SCORE_TOLERANCE {
            if !cfg.restart_from_empty {
                return Err(Error::Internal(format!(
                    "score decreased from {current_score} to {score}"
                )));
            }
            dag = current.dag().clone();
            score = current_score;
        }
        if dag.edges().any(|(f, t)| !candidates.get(t).contains(&f)) {
            return Err(Error::Internal(
                "structure leaves the candidate graph".into(),
            ));
        }
        current = BayesianNetwork::fit(&dag, scorer.stats(), cfg.smoothing)?;
        current_score = score;
        let kl = reference
            .map(|r| r.kl_to_reference(&current, cfg.kl_mode).map(|e| e.value))
            .transpose()?;
        reports.push(IterationReport {
            iteration: reports.len() + 1,
            elapsed_s: started.elapsed().as_secs_f64(),
            score_per_instance: score / n_rows,
            stats: scorer.cache_report().fresh_computations,
            candidates: Some(candidates),
            kl,
            mixed,
        });
        if let Convergence::Stop(reason) = check_convergence(&reports, cfg) {
            break reason;
        }
    };
    Ok(RunOutcome {
        network: current,
        reports,
        stop,
    })
}

/// Unconstrained greedy search from the empty graph, reported as a single
/// iteration.
pub fn run_greedy(
    data: &Dataset,
    score: ScoreConfig,
    search: &SearchConfig,
    smoothing: f64,
    reference: Option<(&BayesianNetwork, KlMode)>,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut scorer = Scorer::with_stats(StatsCache::new(data), score)?;
    let (dag, trace) = greedy_hill_climb(&Dag::empty(data.n_vars()), search, &mut scorer)?;
    let network = BayesianNetwork::fit(&dag, scorer.stats(), smoothing)?;
    let kl = reference
        .map(|(r, mode)| r.kl_to_reference(&network, mode).map(|e| e.value))
        .transpose()?;
    let report = IterationReport {
        iteration: 1,
        elapsed_s: started.elapsed().as_secs_f64(),
        score_per_instance: trace.best_score / data.n_rows() as f64,
        stats: scorer.cache_report().fresh_computations,
        candidates: None,
        kl,
        mixed: false,
    };
    Ok(RunOutcome {
        network,
        reports: vec![report],
        stop: StopReason::ScoreUnchanged,
    })
}

/// Tab-separated report, one row per iteration. Missing KL is written as
/// `NA`.
pub fn write_report<W: Write>(reports: &[IterationReport], mut out: W) -> Result<()> {
    writeln!(out, "iter\ttime_s\tscore_per_instance\tkl\tstats")?;
    for r in reports {
        let kl = r.kl.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        writeln!(
            out,
            "{}\t{:.3}\t{:.6}\t{}\t{}",
            r.iteration, r.elapsed_s, r.score_per_instance, kl, r.stats
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::VariableDecl;

    fn report(score: f64, cands: Option<Vec<Vec<usize>>>) -> IterationReport {
        IterationReport {
            iteration: 0,
            elapsed_s: 0.0,
            score_per_instance: score,
            stats: 0,
            candidates: cands.map(|c| CandidateSets::new(c, 1).unwrap()),
            kl: None,
            mixed: false,
        }
    }

    #[test]
    fn score_mode_stops_on_equal_scores() {
        let cfg = RunConfig::new(MeasureKind::Score, 1);
        assert_eq!(
            check_convergence(&[report(-1.0, None)], &cfg),
            Convergence::Continue
        );
        let h = [report(-2.0, None), report(-1.0, None)];
        assert_eq!(check_convergence(&h, &cfg), Convergence::Continue);
        let h = [report(-1.0, None), report(-1.0, None)];
        assert_eq!(
            check_convergence(&h, &cfg),
            Convergence::Stop(StopReason::ScoreUnchanged)
        );
    }

    #[test]
    fn candidate_mode_stops_on_equal_sets() {
        let mut cfg = RunConfig::new(MeasureKind::Score, 1);
        cfg.stopping = Stopping::Candidate;
        let sets = vec![vec![1], vec![0]];
        let h = [report(-2.0, Some(sets.clone())), report(-1.0, Some(sets))];
        assert_eq!(
            check_convergence(&h, &cfg),
            Convergence::Stop(StopReason::CandidatesUnchanged)
        );
    }

    #[test]
    fn candidate_mode_cycle_guard() {
        let mut cfg = RunConfig::new(MeasureKind::Score, 1);
        cfg.stopping = Stopping::Candidate;
        cfg.no_improvement_limit = 2;
        let a = vec![vec![1], vec![0], vec![0]];
        let b = vec![vec![2], vec![2], vec![1]];
        let h = [report(-1.0, Some(a.clone())), report(-1.0, Some(b.clone()))];
        assert_eq!(check_convergence(&h, &cfg), Convergence::Continue);
        let h = [
            report(-1.0, Some(a.clone())),
            report(-1.0, Some(b)),
            report(-1.0, Some(a)),
        ];
        assert_eq!(
            check_convergence(&h, &cfg),
            Convergence::Stop(StopReason::NoImprovement)
        );
    }

    #[test]
    fn max_iterations_caps_the_run() {
        let mut cfg = RunConfig::new(MeasureKind::Score, 1);
        cfg.max_iterations = 2;
        let h = [report(-3.0, None), report(-2.0, None)];
        assert_eq!(
            check_convergence(&h, &cfg),
            Convergence::Stop(StopReason::MaxIterations)
        );
    }

    #[test]
    fn independent_uniform_variables_stay_empty() {
        // every combination of three binary variables equally often
        let vars: Vec<VariableDecl> = (0..3)
            .map(|i| VariableDecl::with_cardinality(format!("V{i}"), 2).unwrap())
            .collect();
        let rows: Vec<Vec<usize>> = (0..64)
            .map(|r| (0..3).map(|b| (r >> b) & 1).collect())
            .collect();
        let data = Dataset::from_rows(vars, &rows).unwrap();
        let mut cfg = RunConfig::new(MeasureKind::Disc, 1);
        cfg.score = ScoreConfig::mdl();
        let out = run_sparse_candidate(&data, &cfg, None, None).unwrap();
        assert_eq!(out.network.dag().n_edges(), 0);
        assert_eq!(out.reports.len(), 2);
        assert_eq!(out.stop, StopReason::ScoreUnchanged);
    }

    #[test]
    fn report_layout() {
        let mut r = report(-1.5, None);
        r.iteration = 1;
        r.stats = 7;
        let mut out = Vec::new();
        write_report(&[r], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "iter\ttime_s\tscore_per_instance\tkl\tstats\n1\t0.000\t-1.500000\tNA\t7\n"
        );
    }
}
