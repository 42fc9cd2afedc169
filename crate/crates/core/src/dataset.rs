//! Complete discrete datasets, joint count tables, and the statistics cache.
//!
//! Every joint count table the learner needs goes through [`StatsCache`]. A
//! request is answered from an identical cached table if possible, otherwise
//! by marginalizing the smallest cached superset, and only as a last resort
//! by a fresh pass over the rows. Fresh passes are what experiment reports
//! call "statistics".

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Hard ceiling on the number of cells of a single table.
pub const MAX_TABLE_CELLS: usize = 1 << 28;

/// A discrete variable: a name and its ordered state labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableDecl {
    pub name: String,
    pub states: Vec<String>,
}

impl VariableDecl {
    pub fn new(name: impl Into<String>, states: Vec<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid("empty variable name"));
        }
        if states.len() < 2 {
            return Err(Error::invalid(format!(
                "variable {name} needs at least two states"
            )));
        }
        if states.len() > u16::MAX as usize {
            return Err(Error::invalid(format!(
                "variable {name} has too many states"
            )));
        }
        let distinct: BTreeSet<&str> = states.iter().map(String::as_str).collect();
        if distinct.len() != states.len() {
            return Err(Error::invalid(format!(
                "variable {name} has duplicate state labels"
            )));
        }
        Ok(Self { name, states })
    }

    /// Variable `name` with states `s0, s1, ...`.
    pub fn with_cardinality(name: impl Into<String>, cardinality: usize) -> Result<Self> {
        Self::new(name, (0..cardinality).map(|s| format!("s{s}")).collect())
    }

    pub fn cardinality(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }
}

pub(crate) fn check_unique_names(variables: &[VariableDecl]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for v in variables {
        if !seen.insert(v.name.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate variable name {}",
                v.name
            )));
        }
    }
    Ok(())
}

/// A set of complete instances over discrete variables, stored row-major as
/// dense state indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    variables: Vec<VariableDecl>,
    values: Vec<u16>,
    n_rows: usize,
}

impl Dataset {
    /// Builds a dataset from row-major state indices.
    pub fn from_values(variables: Vec<VariableDecl>, values: Vec<u16>) -> Result<Self> {
        check_unique_names(&variables)?;
        let n = variables.len();
        if n == 0 {
            return Err(Error::invalid("dataset without variables"));
        }
        if !values.len().is_multiple_of(n) {
            return Err(Error::ShapeMismatch(format!(
                "{} values is not a multiple of {n} variables",
                values.len()
            )));
        }
        for (pos, &v) in values.iter().enumerate() {
            let var = &variables[pos % n];
            if v as usize >= var.cardinality() {
                return Err(Error::invalid(format!(
                    "state index {v} out of range for {} in row {}",
                    var.name,
                    pos / n
                )));
            }
        }
        let n_rows = values.len() / n;
        Ok(Self {
            variables,
            values,
            n_rows,
        })
    }

    pub fn from_rows(variables: Vec<VariableDecl>, rows: &[Vec<usize>]) -> Result<Self> {
        let n = variables.len();
        let mut values = Vec::with_capacity(rows.len() * n);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "row {r} has {} values, expected {n}",
                    row.len()
                )));
            }
            for &v in row {
                values.push(u16::try_from(v).map_err(|_| Error::invalid("state index too large"))?);
            }
        }
        Self::from_values(variables, values)
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn variables(&self) -> &[VariableDecl] {
        &self.variables
    }

    pub fn variable(&self, i: usize) -> &VariableDecl {
        &self.variables[i]
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables
            .iter()
            .map(VariableDecl::cardinality)
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn row(&self, r: usize) -> &[u16] {
        let n = self.n_vars();
        &self.values[r * n..(r + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.values.chunks_exact(self.n_vars())
    }

    pub fn value(&self, r: usize, var: usize) -> usize {
        self.values[r * self.n_vars() + var] as usize
    }

    /// Re-expresses this dataset in terms of `target` declarations: columns
    /// are matched by name and labels re-indexed. Every target variable must
    /// be present and every observed label must exist in the target.
    pub fn align_to(&self, target: &[VariableDecl]) -> Result<Dataset> {
        let mut column_maps = Vec::with_capacity(target.len());
        for t in target {
            let src = self.index_of(&t.name).ok_or_else(|| {
                Error::VariableMismatch(format!("dataset has no variable {}", t.name))
            })?;
            let mut map = Vec::with_capacity(self.variables[src].cardinality());
            for label in &self.variables[src].states {
                map.push(t.state_index(label).map(|s| s as u16));
            }
            column_maps.push((src, map));
        }
        let mut values = Vec::with_capacity(self.n_rows * target.len());
        for row in self.rows() {
            for (t, (src, map)) in column_maps.iter().enumerate() {
                let v = map[row[*src] as usize].ok_or_else(|| {
                    Error::VariableMismatch(format!(
                        "label {} of {} unknown to target",
                        self.variables[*src].states[row[*src] as usize], target[t].name
                    ))
                })?;
                values.push(v);
            }
        }
        Dataset::from_values(target.to_vec(), values)
    }
}

/// Parses the dataset text format: a header line of tab- or comma-separated
/// variable names (the delimiter is detected from this line), followed by one
/// instance per non-empty line. Lines starting with `#` are skipped. State
/// labels per column are sorted and mapped to dense indices.
pub fn load_dataset<R: BufRead>(source: R) -> Result<Dataset> {
    let mut header: Option<(Vec<String>, char)> = None;
    let mut raw_rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match &header {
            None => {
                let delim = if line.contains('\t') { '\t' } else { ',' };
                let names: Vec<String> = line.split(delim).map(|s| s.trim().to_string()).collect();
                let mut seen = BTreeSet::new();
                for name in &names {
                    if name.is_empty() {
                        return Err(Error::parse(line_no, "empty variable name"));
                    }
                    if !seen.insert(name.clone()) {
                        return Err(Error::parse(
                            line_no,
                            format!("duplicate variable name {name}"),
                        ));
                    }
                }
                header = Some((names, delim));
            }
            Some((names, delim)) => {
                let fields: Vec<String> =
                    line.split(*delim).map(|s| s.trim().to_string()).collect();
                if fields.len() != names.len() {
                    return Err(Error::parse(line_no, "row arity mismatch"));
                }
                if fields.iter().any(String::is_empty) {
                    return Err(Error::parse(line_no, "missing value"));
                }
                raw_rows.push((line_no, fields));
            }
        }
    }
    let (names, _) = header.ok_or_else(|| Error::parse(1, "missing header"))?;
    if raw_rows.is_empty() {
        return Err(Error::parse(1, "empty data section"));
    }

    let n = names.len();
    let mut labels: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
    for (_, fields) in &raw_rows {
        for (c, f) in fields.iter().enumerate() {
            labels[c].insert(f.as_str());
        }
    }
    let mut variables = Vec::with_capacity(n);
    for (c, name) in names.iter().enumerate() {
        if labels[c].len() < 2 {
            // The header is the first non-comment line; report the first data line.
            return Err(Error::parse(
                raw_rows[0].0,
                format!("variable {name} has a single observed state"),
            ));
        }
        let states: Vec<String> = labels[c].iter().map(|s| s.to_string()).collect();
        variables.push(
            VariableDecl::new(name.clone(), states)
                .map_err(|e| Error::parse(raw_rows[0].0, e.to_string()))?,
        );
    }
    let lookup: Vec<HashMap<&str, u16>> = labels
        .iter()
        .map(|set| {
            set.iter()
                .enumerate()
                .map(|(i, s)| (*s, i as u16))
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(raw_rows.len() * n);
    for (_, fields) in &raw_rows {
        for (c, f) in fields.iter().enumerate() {
            values.push(lookup[c][f.as_str()]);
        }
    }
    Dataset::from_values(variables, values)
}

pub fn read_dataset_file(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_dataset(std::io::BufReader::new(file))
}

/// Writes the dataset in tab-separated form.
pub fn write_dataset<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    for v in data.variables() {
        if v.name.contains(['\t', '\n']) || v.states.iter().any(|s| s.contains(['\t', '\n'])) {
            return Err(Error::invalid(format!(
                "variable {} cannot be written: tab or newline in a label",
                v.name
            )));
        }
    }
    let header: Vec<&str> = data.variables().iter().map(|v| v.name.as_str()).collect();
    writeln!(out, "{}", header.join("\t"))?;
    let mut line = String::new();
    for row in data.rows() {
        line.clear();
        for (c, &v) in row.iter().enumerate() {
            if c > 0 {
                line.push('\t');
            }
            line.push_str(&data.variables()[c].states[v as usize]);
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Joint counts over a sorted set of variables. Cells are laid out row-major
/// with the last scope variable varying fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    scope: Vec<usize>,
    cards: Vec<usize>,
    counts: Vec<u64>,
    total: u64,
}

pub(crate) fn table_size(cards: &[usize]) -> Result<usize> {
    let mut size: usize = 1;
    for &c in cards {
        size = size
            .checked_mul(c)
            .filter(|&s| s <= MAX_TABLE_CELLS)
            .ok_or_else(|| Error::ResourceLimit(format!("table over {MAX_TABLE_CELLS} cells")))?;
    }
    Ok(size)
}

pub(crate) fn strides(cards: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; cards.len()];
    for a in (0..cards.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * cards[a + 1];
    }
    strides
}

impl ContingencyTable {
    /// `scope` must be strictly increasing.
    pub fn new(scope: Vec<usize>, cards: Vec<usize>, counts: Vec<u64>) -> Result<Self> {
        if scope.is_empty() {
            return Err(Error::invalid("empty scope"));
        }
        if scope.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("table scope must be strictly increasing"));
        }
        if scope.len() != cards.len() {
            return Err(Error::ShapeMismatch(
                "scope and cardinalities differ in length".into(),
            ));
        }
        if table_size(&cards)? != counts.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for a table of {} cells",
                counts.len(),
                cards.iter().product::<usize>()
            )));
        }
        let total = counts.iter().sum();
        Ok(Self {
            scope,
            cards,
            counts,
            total,
        })
    }

    /// Tallies `scope` (sorted) with one pass over `data`.
    pub fn from_data(data: &Dataset, scope: &[usize]) -> Result<Self> {
        let scope = canonical_scope(scope, data.n_vars())?;
        let cards: Vec<usize> = scope
            .iter()
            .map(|&v| data.variable(v).cardinality())
            .collect();
        let size = table_size(&cards)?;
        let strides = strides(&cards);
        let mut counts = vec![0u64; size];
        for row in data.rows() {
            let mut idx = 0;
            for (a, &v) in scope.iter().enumerate() {
                idx += row[v] as usize * strides[a];
            }
            counts[idx] += 1;
        }
        Ok(Self {
            scope,
            cards,
            counts,
            total: data.n_rows() as u64,
        })
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.cards)
    }

    /// Position of variable `var` among the table axes.
    pub fn axis(&self, var: usize) -> Option<usize> {
        self.scope.binary_search(&var).ok()
    }

    /// Count of one configuration, given as state indices in scope order.
    pub fn count(&self, assignment: &[usize]) -> u64 {
        let idx: usize = assignment
            .iter()
            .zip(self.strides())
            .map(|(&s, stride)| s * stride)
            .sum();
        self.counts[idx]
    }

    /// Sums out every variable not in `keep`.
    pub fn marginalize(&self, keep: &[usize]) -> Result<ContingencyTable> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() {
            return Err(Error::invalid("marginalizing onto an empty scope"));
        }
        let mut kept_axes = Vec::with_capacity(keep.len());
        for &v in &keep {
            kept_axes.push(self.axis(v).ok_or_else(|| {
                Error::invalid(format!("variable {v} is not in the table scope"))
            })?);
        }
        if keep.len() == self.scope.len() {
            return Ok(self.clone());
        }
        let out_cards: Vec<usize> = kept_axes.iter().map(|&a| self.cards[a]).collect();
        let out_strides = strides(&out_cards);
        // Per input axis: the output stride it contributes, 0 when summed out.
        let mut axis_out_stride = vec![0usize; self.scope.len()];
        for (k, &a) in kept_axes.iter().enumerate() {
            axis_out_stride[a] = out_strides[k];
        }
        let mut out = vec![0u64; out_cards.iter().product()];
        let mut digits = vec![0usize; self.scope.len()];
        let mut out_idx = 0usize;
        for &c in &self.counts {
            out[out_idx] += c;
            // odometer increment, last axis fastest
            for a in (0..digits.len()).rev() {
                digits[a] += 1;
                out_idx += axis_out_stride[a];
                if digits[a] < self.cards[a] {
                    break;
                }
                out_idx -= axis_out_stride[a] * digits[a];
                digits[a] = 0;
            }
        }
        Ok(ContingencyTable {
            scope: keep,
            cards: out_cards,
            counts: out,
            total: self.total,
        })
    }
}

/// Free-function form of [`ContingencyTable::marginalize`].
pub fn marginalize_table(table: &ContingencyTable, keep: &[usize]) -> Result<ContingencyTable> {
    table.marginalize(keep)
}

fn canonical_scope(scope: &[usize], n_vars: usize) -> Result<Vec<usize>> {
    if scope.is_empty() {
        return Err(Error::invalid("empty scope"));
    }
    let mut s = scope.to_vec();
    s.sort_unstable();
    s.dedup();
    if let Some(&bad) = s.iter().find(|&&v| v >= n_vars) {
        return Err(Error::invalid(format!("variable index {bad} out of range")));
    }
    Ok(s)
}

/// Counter snapshot of a [`StatsCache`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheReport {
    /// Tables built by a pass over the data.
    pub fresh_computations: u64,
    /// Tables built by summing out a cached superset.
    pub marginalizations: u64,
    /// Requests answered by an identical cached table.
    pub hits: u64,
}

/// Cache of joint count tables over one dataset, keyed by sorted scope.
#[derive(Debug)]
pub struct StatsCache<'d> {
    data: &'d Dataset,
    tables: HashMap<Vec<usize>, Arc<ContingencyTable>>,
    // keys containing each variable, for superset lookup
    by_var: Vec<Vec<Vec<usize>>>,
    report: CacheReport,
    stored_cells: usize,
    memory_cap: Option<usize>,
}

impl<'d> StatsCache<'d> {
    pub fn new(data: &'d Dataset) -> Self {
        Self {
            data,
            tables: HashMap::new(),
            by_var: vec![Vec::new(); data.n_vars()],
            report: CacheReport::default(),
            stored_cells: 0,
            memory_cap: None,
        }
    }

    /// Limits the total number of cached cells; a request that would exceed
    /// it fails with [`Error::ResourceLimit`].
    pub fn with_memory_cap(mut self, cells: usize) -> Self {
        self.memory_cap = Some(cells);
        self
    }

    pub fn data(&self) -> &'d Dataset {
        self.data
    }

    pub fn report(&self) -> CacheReport {
        self.report
    }

    pub fn stored_cells(&self) -> usize {
        self.stored_cells
    }

    /// Exact joint counts over `scope`.
    pub fn counts(&mut self, scope: &[usize]) -> Result<Arc<ContingencyTable>> {
        let key = canonical_scope(scope, self.data.n_vars())?;
        if let Some(t) = self.tables.get(&key) {
            self.report.hits += 1;
            return Ok(Arc::clone(t));
        }
        let superset = self.by_var[key[0]]
            .iter()
            .filter(|cand| cand.len() > key.len() && is_subset(&key, cand))
            .map(|cand| &self.tables[cand])
            .min_by_key(|t| t.len())
            .cloned();
        let table = match superset {
            Some(sup) => {
                let t = sup.marginalize(&key)?;
                self.reserve(t.len())?;
                self.report.marginalizations += 1;
                t
            }
            None => {
                let cards: Vec<usize> = key
                    .iter()
                    .map(|&v| self.data.variable(v).cardinality())
                    .collect();
                self.reserve(table_size(&cards)?)?;
                self.report.fresh_computations += 1;
                ContingencyTable::from_data(self.data, &key)?
            }
        };
        let table = Arc::new(table);
        for &v in &key {
            self.by_var[v].push(key.clone());
        }
        self.tables.insert(key, Arc::clone(&table));
        Ok(table)
    }

    fn reserve(&mut self, cells: usize) -> Result<()> {
        let after = self.stored_cells.saturating_add(cells);
        if let Some(cap) = self.memory_cap {
            if after > cap {
                return Err(Error::ResourceLimit(format!(
                    "statistics cache would hold {after} cells, cap is {cap}"
                )));
            }
        }
        self.stored_cells = after;
        Ok(())
    }
}

/// Both slices sorted ascending.
fn is_subset(small: &[usize], big: &[usize]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == s))
}
