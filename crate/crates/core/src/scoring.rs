//! Decomposable structure scores (BDe and MDL), in bits.
//!
//! [`Scorer`] bundles the statistics cache with a per-family score cache so
//! that a local search only pays for the families a move touches.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::dataset::{CacheReport, ContingencyTable, Dataset, StatsCache};
use crate::error::{Error, Result};
use crate::network::{family_counts, Dag};
use crate::search::{Move, MoveKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Bayesian Dirichlet score with a uniform prior.
    Bde,
    /// Log-likelihood minus (log₂N / 2) per free parameter.
    Mdl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    /// Equivalent sample size; ignored by MDL.
    pub ess: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self::bde(10.0)
    }
}

impl ScoreConfig {
    pub fn bde(ess: f64) -> Self {
        Self {
            kind: ScoreKind::Bde,
            ess,
        }
    }

    pub fn mdl() -> Self {
        Self {
            kind: ScoreKind::Mdl,
            ess: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ScoreKind::Bde && !(self.ess > 0.0 && self.ess.is_finite()) {
            return Err(Error::invalid("equivalent sample size must be positive"));
        }
        Ok(())
    }
}

/// Score of `child` given the other variables of `table` as its parents.
pub fn family_score_from_counts(
    cfg: &ScoreConfig,
    table: &ContingencyTable,
    child: usize,
) -> Result<f64> {
    let axis = table
        .axis(child)
        .ok_or_else(|| Error::invalid(format!("variable {child} not in family table")))?;
    let r = table.cards()[axis];
    let fam = family_counts(table, child);
    let q = fam.len() / r;
    match cfg.kind {
        ScoreKind::Bde => {
            let alpha = cfg.ess / (r * q) as f64;
            let alpha_pa = cfg.ess / q as f64;
            let ln_alpha = ln_gamma(alpha);
            let ln_alpha_pa = ln_gamma(alpha_pa);
            let mut total = 0.0;
            for row in fam.chunks_exact(r) {
                let n_pa: u64 = row.iter().sum();
                if n_pa == 0 {
                    continue;
                }
                total += ln_alpha_pa - ln_gamma(alpha_pa + n_pa as f64);
                for &c in row.iter().filter(|&&c| c > 0) {
                    total += ln_gamma(alpha + c as f64) - ln_alpha;
                }
            }
            Ok(total / LN_2)
        }
        ScoreKind::Mdl => {
            let mut ll = 0.0;
            for row in fam.chunks_exact(r) {
                let n_pa: u64 = row.iter().sum();
                for &c in row.iter().filter(|&&c| c > 0) {
                    ll += c as f64 * (c as f64 / n_pa as f64).log2();
                }
            }
            let n = table.total() as f64;
            let penalty = if n > 0.0 { n.log2() / 2.0 } else { 0.0 };
            Ok(ll - penalty * ((r - 1) * q) as f64)
        }
    }
}

/// Family and network scoring over one dataset.
#[derive(Debug)]
pub struct Scorer<'d> {
    stats: StatsCache<'d>,
    cfg: ScoreConfig,
    families: HashMap<(usize, Vec<usize>), f64>,
}

impl<'d> Scorer<'d> {
    pub fn new(data: &'d Dataset, cfg: ScoreConfig) -> Result<Self> {
        Self::with_stats(StatsCache::new(data), cfg)
    }

    pub fn with_stats(stats: StatsCache<'d>, cfg: ScoreConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            stats,
            cfg,
            families: HashMap::new(),
        })
    }

    pub fn config(&self) -> &ScoreConfig {
        &self.cfg
    }

    pub fn data(&self) -> &'d Dataset {
        self.stats.data()
    }

    pub fn stats(&mut self) -> &mut StatsCache<'d> {
        &mut self.stats
    }

    pub fn cache_report(&self) -> CacheReport {
        self.stats.report()
    }

    pub fn counts(&mut self, scope: &[usize]) -> Result<Arc<ContingencyTable>> {
        self.stats.counts(scope)
    }

    /// Score of `child` with parent set `parents` (any order).
    pub fn family_score(&mut self, child: usize, parents: &[usize]) -> Result<f64> {
        let n = self.data().n_vars();
        if child >= n || parents.iter().any(|&p| p >= n) {
            return Err(Error::invalid("variable index out of range"));
        }
        if parents.contains(&child) {
            return Err(Error::invalid(format!("{child} cannot be its own parent")));
        }
        let mut key = parents.to_vec();
        key.sort_unstable();
        key.dedup();
        let key = (child, key);
        if let Some(&s) = self.families.get(&key) {
            return Ok(s);
        }
        let mut scope = key.1.clone();
        scope.push(child);
        let table = self.stats.counts(&scope)?;
        let s = family_score_from_counts(&self.cfg, &table, child)?;
        self.families.insert(key, s);
        Ok(s)
    }

    pub fn network_score(&mut self, dag: &Dag) -> Result<f64> {
        if dag.n() != self.data().n_vars() {
            return Err(Error::VariableMismatch(
                "structure size differs from data".into(),
            ));
        }
        if !dag.is_acyclic() {
            return Err(Error::Cyclic);
        }
        (0..dag.n())
            .map(|i| self.family_score(i, dag.parents(i)))
            .sum()
    }

    /// Score change caused by `mv`, from the touched families only.
    pub fn move_delta(&mut self, dag: &Dag, mv: &Move) -> Result<f64> {
        let mut after = dag.clone();
        mv.apply_to(&mut after)?;
        let Move { kind, from, to } = *mv;
        let mut delta =
            self.family_score(to, after.parents(to))? - self.family_score(to, dag.parents(to))?;
        if kind == MoveKind::Reverse {
            delta += self.family_score(from, after.parents(from))?
                - self.family_score(from, dag.parents(from))?;
        }
        Ok(delta)
    }
}
