//! Delimited-text ingestion, column typing and discretization.
//!
//! A [`RawTable`] is loaded from delimited text, every column is assigned a
//! [`ColumnKind`], and [`discretize`] maps each retained column onto a small
//! set of symbolic states recorded in a [`Codebook`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Significant digits used for numeric bin labels.
pub const LABEL_SIGNIFICANT_DIGITS: usize = 4;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited text: {0}")]
    Parse(String),
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("table has no data rows")]
    NoRows,
    #[error("column {index} has an empty name")]
    EmptyColumnName { index: usize },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("expected {expected} column kinds, got {found}")]
    KindCount { expected: usize, found: usize },
    #[error("column {0:?} has only missing values")]
    AllMissing(String),
    #[error("max_states must be at least 2, got {0}")]
    MaxStates(usize),
    #[error("no column survives typing; every column was excluded")]
    NothingRetained,
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("state id {state} out of range for column {column:?} with {cardinality} states")]
    StateOutOfRange {
        column: String,
        state: usize,
        cardinality: usize,
    },
    #[error("invalid codebook for column {column:?}: {reason}")]
    InvalidCodebook { column: String, reason: String },
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Clone, Debug, PartialEq)]
pub struct RawColumn {
    pub name: String,
    /// `None` marks a missing cell.
    pub cells: Vec<Option<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub name: String,
    pub columns: Vec<RawColumn>,
}

impl RawTable {
    pub fn new(name: impl Into<String>, columns: Vec<RawColumn>) -> Result<Self> {
        let rows = columns.first().map(|c| c.cells.len()).unwrap_or(0);
        if rows == 0 {
            return Err(IngestError::NoRows);
        }
        let mut seen = BTreeSet::new();
        for (index, column) in columns.iter().enumerate() {
            if column.name.trim().is_empty() {
                return Err(IngestError::EmptyColumnName { index });
            }
            if !seen.insert(column.name.as_str()) {
                return Err(IngestError::DuplicateColumn(column.name.clone()));
            }
            if column.cells.len() != rows {
                return Err(IngestError::RaggedRow {
                    row: column.cells.len().min(rows) + 1,
                    found: column.cells.len(),
                    expected: rows,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            columns,
        })
    }

    pub fn row_count(&self) -> usize {
        self.columns.first().map(|c| c.cells.len()).unwrap_or(0)
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// Loads a delimited text file. The table is named after the file stem.
pub fn load_table(path: impl AsRef<Path>, delimiter: u8, has_header: bool) -> Result<RawTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".to_string());
    parse_table(&name, &bytes, delimiter, has_header)
}

/// Parses delimited text held in memory. Empty (or whitespace-only) cells
/// become missing markers. Data rows are numbered from 1 in errors.
pub fn parse_table(name: &str, bytes: &[u8], delimiter: u8, has_header: bool) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);

    let mut header: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut columns: Vec<Vec<Option<String>>> = Vec::new();
    let mut data_row = 0usize;

    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse(e.to_string()))?;
        if has_header && header.is_none() {
            header = Some(record.iter().map(|s| s.trim().to_string()).collect());
            width = Some(record.len());
            columns = vec![Vec::new(); record.len()];
            continue;
        }
        data_row += 1;
        let expected = *width.get_or_insert_with(|| {
            columns = vec![Vec::new(); record.len()];
            record.len()
        });
        if record.len() != expected {
            return Err(IngestError::RaggedRow {
                row: data_row,
                found: record.len(),
                expected,
            });
        }
        for (column, field) in columns.iter_mut().zip(record.iter()) {
            let trimmed = field.trim();
            column.push((!trimmed.is_empty()).then(|| trimmed.to_string()));
        }
    }

    if data_row == 0 {
        return Err(IngestError::NoRows);
    }
    let names = header.unwrap_or_else(|| (1..=columns.len()).map(|i| format!("column_{i}")).collect());
    let columns = names
        .into_iter()
        .zip(columns)
        .map(|(name, cells)| RawColumn { name, cells })
        .collect();
    RawTable::new(name, columns)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Identifier,
    AllMissing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Excluded(ExclusionReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindConfig {
    /// Fraction of non-missing cells that must parse as numbers.
    pub numeric_fraction: f64,
    /// Numeric columns with at most this many distinct values stay categorical.
    pub categorical_cap: usize,
    /// Distinct/non-missing ratio at or above which a column is an identifier.
    pub identifier_ratio: f64,
}

impl Default for KindConfig {
    fn default() -> Self {
        Self {
            numeric_fraction: 0.95,
            categorical_cap: 30,
            identifier_ratio: 0.98,
        }
    }
}

pub fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Assigns exactly one kind to every column.
///
/// Identifier detection only applies to text columns and integer-valued
/// numeric columns; a column of distinct real-valued measurements is numeric.
pub fn infer_column_kinds(table: &RawTable, config: &KindConfig) -> Vec<ColumnKind> {
    table
        .columns
        .iter()
        .map(|column| infer_kind(column, config))
        .collect()
}

fn infer_kind(column: &RawColumn, config: &KindConfig) -> ColumnKind {
    let present: Vec<&str> = column.cells.iter().flatten().map(String::as_str).collect();
    if present.is_empty() {
        return ColumnKind::Excluded(ExclusionReason::AllMissing);
    }
    let distinct: BTreeSet<&str> = present.iter().copied().collect();
    let parsed: Vec<f64> = present.iter().filter_map(|s| parse_number(s)).collect();
    let numeric = parsed.len() as f64 >= config.numeric_fraction * present.len() as f64;
    let integer_valued = numeric && parsed.iter().all(|v| v.fract() == 0.0);

    let ratio = distinct.len() as f64 / present.len() as f64;
    if present.len() >= 2 && ratio >= config.identifier_ratio && (!numeric || integer_valued) {
        return ColumnKind::Excluded(ExclusionReason::Identifier);
    }
    if numeric && distinct.len() > config.categorical_cap {
        ColumnKind::Numeric
    } else {
        ColumnKind::Categorical
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateRole {
    Other,
    Missing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDef {
    pub id: usize,
    pub label: String,
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<StateRole>,
}

impl StateDef {
    pub fn is_bin(&self) -> bool {
        self.lower.is_some() && self.upper.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnCodebook {
    pub kind: StateKind,
    pub states: Vec<StateDef>,
}

impl ColumnCodebook {
    pub fn cardinality(&self) -> usize {
        self.states.len()
    }

    fn role_state(&self, role: StateRole) -> Option<usize> {
        self.states.iter().position(|s| s.role == Some(role))
    }

    pub fn missing_state(&self) -> Option<usize> {
        self.role_state(StateRole::Missing)
    }

    pub fn other_state(&self) -> Option<usize> {
        self.role_state(StateRole::Other)
    }

    /// States backed by observed values (neither "other" nor "missing").
    pub fn value_states(&self) -> impl Iterator<Item = &StateDef> {
        self.states.iter().filter(|s| s.role.is_none())
    }

    /// The bin containing `x`. Bins are half-open `[lower, upper)` except the
    /// last, which also contains its upper bound.
    pub fn resolve_number(&self, x: f64) -> Option<usize> {
        if self.kind != StateKind::Numeric || !x.is_finite() {
            return None;
        }
        let bins: Vec<&StateDef> = self.states.iter().filter(|s| s.is_bin()).collect();
        let last = bins.len().checked_sub(1)?;
        bins.iter().enumerate().find_map(|(i, s)| {
            let (lo, hi) = (s.lower?, s.upper?);
            let inside = if i == last { lo <= x && x <= hi } else { lo <= x && x < hi };
            inside.then_some(s.id)
        })
    }

    /// Maps a raw cell to its state.
    pub fn encode(&self, cell: Option<&str>) -> Option<usize> {
        let Some(value) = cell else {
            return self.missing_state();
        };
        match self.kind {
            StateKind::Numeric => match parse_number(value) {
                Some(x) => self.resolve_number(x),
                None => self.missing_state(),
            },
            StateKind::Categorical => self
                .states
                .iter()
                .find(|s| s.values.as_ref().is_some_and(|v| v.iter().any(|x| x == value)))
                .map(|s| s.id)
                .or_else(|| self.other_state()),
        }
    }

    fn validate(&self, column: &str) -> Result<()> {
        let bad = |reason: String| IngestError::InvalidCodebook {
            column: column.to_string(),
            reason,
        };
        if self.states.is_empty() {
            return Err(bad("no states".into()));
        }
        let mut labels = BTreeSet::new();
        for (i, s) in self.states.iter().enumerate() {
            if s.id != i {
                return Err(bad(format!("state at position {i} has id {}", s.id)));
            }
            if !labels.insert(s.label.as_str()) {
                return Err(bad(format!("duplicate label {:?}", s.label)));
            }
        }
        let bins: Vec<&StateDef> = self.states.iter().filter(|s| s.is_bin()).collect();
        for pair in bins.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if !(a.lower < b.lower && a.upper == b.lower) {
                return Err(bad(format!("bins {} and {} are not contiguous and increasing", a.id, b.id)));
            }
        }
        for s in &bins {
            if s.lower > s.upper {
                return Err(bad(format!("bin {} has lower > upper", s.id)));
            }
        }
        Ok(())
    }
}

/// Per-column state dictionaries, in column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Codebook {
    pub columns: IndexMap<String, ColumnCodebook>,
}

impl Codebook {
    pub fn column(&self, name: &str) -> Option<&ColumnCodebook> {
        self.columns.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.columns.values().map(ColumnCodebook::cardinality).collect()
    }

    /// Case-insensitive column lookup returning the canonical name.
    pub fn find_column(&self, name: &str) -> Option<&str> {
        if let Some((k, _)) = self.columns.get_key_value(name) {
            return Some(k);
        }
        let wanted = name.trim();
        self.columns
            .keys()
            .find(|k| k.as_str() == wanted)
            .or_else(|| self.columns.keys().find(|k| k.eq_ignore_ascii_case(wanted)))
            .map(String::as_str)
    }

    pub fn state(&self, column: &str, state: usize) -> Option<&StateDef> {
        self.columns.get(column)?.states.get(state)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, column) in &self.columns {
            column.validate(name)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("codebook serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let codebook: Codebook =
            serde_json::from_str(text).map_err(|e| IngestError::Parse(format!("codebook: {e}")))?;
        codebook.validate()?;
        Ok(codebook)
    }
}

/// A table after discretization: a row-major matrix of state ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTable {
    pub name: String,
    pub columns: Vec<String>,
    pub cardinalities: Vec<usize>,
    cells: Vec<usize>,
    rows: usize,
}

impl DiscreteTable {
    pub fn new(
        name: impl Into<String>,
        columns: Vec<String>,
        cardinalities: Vec<usize>,
        rows: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let width = columns.len();
        let mut cells = Vec::with_capacity(rows.len() * width);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(IngestError::RaggedRow {
                    row: r + 1,
                    found: row.len(),
                    expected: width,
                });
            }
            for (c, &state) in row.iter().enumerate() {
                if state >= cardinalities[c] {
                    return Err(IngestError::StateOutOfRange {
                        column: columns[c].clone(),
                        state,
                        cardinality: cardinalities[c],
                    });
                }
            }
            cells.extend_from_slice(row);
        }
        Ok(Self {
            name: name.into(),
            columns,
            cardinalities,
            cells,
            rows: rows.len(),
        })
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, column: usize) -> usize {
        self.cells[row * self.columns.len() + column]
    }

    pub fn row(&self, row: usize) -> &[usize] {
        let w = self.columns.len();
        &self.cells[row * w..(row + 1) * w]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.iter().map(|c| csv_quote(c)).collect::<Vec<_>>().join(",");
        out.push('\n');
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(usize::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Reads the state-id CSV written by [`DiscreteTable::to_csv`], checking
    /// it against the codebook.
    pub fn from_csv(name: &str, bytes: &[u8], codebook: &Codebook) -> Result<Self> {
        let raw = parse_table(name, bytes, b',', true)?;
        let mut columns = Vec::new();
        let mut cards = Vec::new();
        for column in &raw.columns {
            let book = codebook
                .column(&column.name)
                .ok_or_else(|| IngestError::UnknownColumn(column.name.clone()))?;
            columns.push(column.name.clone());
            cards.push(book.cardinality());
        }
        let rows = (0..raw.row_count())
            .map(|r| {
                raw.columns
                    .iter()
                    .map(|c| {
                        c.cells[r]
                            .as_deref()
                            .and_then(|s| s.parse::<usize>().ok())
                            .ok_or_else(|| IngestError::Parse(format!("row {} column {:?}: expected a state id", r + 1, c.name)))
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, columns, cards, rows)
    }
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Rounds to `digits` significant digits and prints without trailing zeros.
pub fn format_number(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let digits = digits.max(1);
    let exponent = x.abs().log10().floor() as i32;
    if !(-5..15).contains(&exponent) {
        let s = format!("{:.*e}", digits - 1, x);
        let (mantissa, exp) = s.split_once('e').unwrap_or((&s, "0"));
        return format!("{}e{}", trim_zeros(mantissa), exp);
    }
    let decimals = (digits as i32 - 1 - exponent).max(0) as usize;
    let scale = 10f64.powi(exponent - digits as i32 + 1);
    let rounded = if decimals == 0 { (x / scale).round() * scale } else { x };
    let s = format!("{:.*}", decimals, rounded);
    let s = trim_zeros(&s);
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Ordered qualitative phrases for `k` quantile bins.
pub fn level_phrases(k: usize) -> Vec<String> {
    let fixed: &[&str] = match k {
        1 => &["typical"],
        2 => &["low", "high"],
        3 => &["low", "medium", "high"],
        4 => &["very low", "low", "high", "very high"],
        5 => &["very low", "low", "medium", "high", "very high"],
        _ => &[],
    };
    if !fixed.is_empty() {
        return fixed.iter().map(|s| s.to_string()).collect();
    }
    (1..=k).map(|i| format!("at level {i} of {k}")).collect()
}

/// Bins every numeric and categorical column; excluded columns are dropped.
pub fn discretize(
    table: &RawTable,
    kinds: &[ColumnKind],
    max_states: usize,
) -> Result<(DiscreteTable, Codebook)> {
    if max_states < 2 {
        return Err(IngestError::MaxStates(max_states));
    }
    if kinds.len() != table.columns.len() {
        return Err(IngestError::KindCount {
            expected: table.columns.len(),
            found: kinds.len(),
        });
    }
    let mut codebook = Codebook::default();
    let mut retained = Vec::new();
    for (column, kind) in table.columns.iter().zip(kinds) {
        let book = match kind {
            ColumnKind::Numeric => numeric_codebook(column, max_states)?,
            ColumnKind::Categorical => categorical_codebook(column, max_states)?,
            ColumnKind::Excluded(_) => continue,
        };
        codebook.columns.insert(column.name.clone(), book);
        retained.push(column);
    }
    if retained.is_empty() {
        return Err(IngestError::NothingRetained);
    }

    let names: Vec<String> = retained.iter().map(|c| c.name.clone()).collect();
    let cards = codebook.cardinalities();
    let books: Vec<&ColumnCodebook> = codebook.columns.values().collect();
    let rows = (0..table.row_count())
        .map(|r| {
            retained
                .iter()
                .zip(&books)
                .map(|(column, book)| {
                    let cell = column.cells[r].as_deref();
                    book.encode(cell).ok_or_else(|| IngestError::InvalidCodebook {
                        column: column.name.clone(),
                        reason: format!("value {cell:?} maps to no state"),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let discrete = DiscreteTable::new(table.name.clone(), names, cards, rows)?;
    Ok((discrete, codebook))
}

fn missing_state(id: usize) -> StateDef {
    StateDef {
        id,
        label: "missing".into(),
        phrase: "not recorded".into(),
        lower: None,
        upper: None,
        values: None,
        role: Some(StateRole::Missing),
    }
}

/// Equal-frequency cut points at sorted positions `ceil(i*n/bins)`, with
/// duplicate boundaries merged. Returns the lower bound of each bin.
pub fn quantile_lower_bounds(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut lowers = vec![sorted[0]];
    for i in 1..bins {
        let cut = (i * n).div_ceil(bins);
        if cut >= n {
            break;
        }
        let boundary = sorted[cut];
        if boundary > *lowers.last().unwrap() {
            lowers.push(boundary);
        }
    }
    lowers
}

fn numeric_codebook(column: &RawColumn, max_states: usize) -> Result<ColumnCodebook> {
    let mut values: Vec<f64> = column.cells.iter().flatten().filter_map(|s| parse_number(s)).collect();
    if values.is_empty() {
        return Err(IngestError::AllMissing(column.name.clone()));
    }
    let has_missing = values.len() < column.cells.len();
    values.sort_by(f64::total_cmp);
    let distinct = 1 + values.windows(2).filter(|w| w[0] != w[1]).count();
    let slots = max_states - usize::from(has_missing);
    let bins = slots.max(1).min(distinct);

    let (min, max) = (values[0], values[values.len() - 1]);
    let mut states = Vec::new();
    if distinct == 1 {
        states.push(StateDef {
            id: 0,
            label: format!("equal to {}", format_number(min, LABEL_SIGNIFICANT_DIGITS)),
            phrase: level_phrases(1).remove(0),
            lower: Some(min),
            upper: Some(max),
            values: None,
            role: None,
        });
    } else {
        let lowers = quantile_lower_bounds(&values, bins);
        let uppers: Vec<f64> = lowers.iter().skip(1).copied().chain([max]).collect();
        let phrases = level_phrases(lowers.len());
        let labels = unique_range_labels(&lowers, &uppers);
        for (id, (((lo, hi), label), phrase)) in lowers.iter().zip(&uppers).zip(labels).zip(phrases).enumerate() {
            states.push(StateDef {
                id,
                label,
                phrase,
                lower: Some(*lo),
                upper: Some(*hi),
                values: None,
                role: None,
            });
        }
    }
    if has_missing {
        states.push(missing_state(states.len()));
    }
    Ok(ColumnCodebook {
        kind: StateKind::Numeric,
        states,
    })
}

fn unique_range_labels(lowers: &[f64], uppers: &[f64]) -> Vec<String> {
    let mut digits = LABEL_SIGNIFICANT_DIGITS;
    loop {
        let labels: Vec<String> = lowers
            .iter()
            .zip(uppers)
            .map(|(lo, hi)| {
                if lo == hi {
                    format!("equal to {}", format_number(*lo, digits))
                } else {
                    format!("between {} and {}", format_number(*lo, digits), format_number(*hi, digits))
                }
            })
            .collect();
        let distinct: BTreeSet<&String> = labels.iter().collect();
        if distinct.len() == labels.len() || digits >= 17 {
            return labels;
        }
        digits += 1;
    }
}

fn categorical_codebook(column: &RawColumn, max_states: usize) -> Result<ColumnCodebook> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for value in column.cells.iter().flatten() {
        *counts.entry(value.as_str()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(IngestError::AllMissing(column.name.clone()));
    }
    let has_missing = column.cells.iter().any(Option::is_none);
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let slots = (max_states - usize::from(has_missing)).max(1);
    let (kept, folded): (&[(&str, usize)], &[(&str, usize)]) = if ranked.len() <= slots {
        (&ranked, &[])
    } else {
        ranked.split_at(slots - 1)
    };

    let mut states: Vec<StateDef> = kept
        .iter()
        .enumerate()
        .map(|(id, (value, _))| StateDef {
            id,
            label: value.to_string(),
            phrase: value.to_string(),
            lower: None,
            upper: None,
            values: Some(vec![value.to_string()]),
            role: None,
        })
        .collect();
    let taken: BTreeSet<String> = states.iter().map(|s| s.label.clone()).collect();
    let free_label = |base: &str| {
        let mut label = base.to_string();
        while taken.contains(&label) {
            label = format!("<{label}>");
        }
        label
    };
    if !folded.is_empty() {
        let other = free_label("other");
        states.push(StateDef {
            id: states.len(),
            label: other,
            phrase: "some other value".into(),
            lower: None,
            upper: None,
            values: None,
            role: Some(StateRole::Other),
        });
    }
    if has_missing {
        let mut missing = missing_state(states.len());
        missing.label = free_label("missing");
        states.push(missing);
    }
    Ok(ColumnCodebook {
        kind: StateKind::Categorical,
        states,
    })
}

/// Counts of each state per column, useful for summaries.
pub fn state_counts(table: &DiscreteTable) -> BTreeMap<String, Vec<usize>> {
    table
        .columns
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let mut counts = vec![0; table.cardinalities[c]];
            for r in 0..table.row_count() {
                counts[table.get(r, c)] += 1;
            }
            (name.clone(), counts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(name: &str, values: &[&str]) -> RawColumn {
        RawColumn {
            name: name.into(),
            cells: values.iter().map(|v| (!v.is_empty()).then(|| v.to_string())).collect(),
        }
    }

    #[test]
    fn loads_small_csv() {
        let t = parse_table("t", b"a,b\n1,x\n2,y\n3,z\n", b',', true).unwrap();
        assert_eq!(t.columns.len(), 2);
        assert_eq!(t.row_count(), 3);
        assert_eq!(t.columns[1].cells[2].as_deref(), Some("z"));
    }

    #[test]
    fn ragged_row_names_row() {
        let err = parse_table("t", b"a,b\n1,2\n3\n4,5\n", b',', true).unwrap_err();
        assert!(matches!(err, IngestError::RaggedRow { row: 2, found: 1, expected: 2 }), "{err}");
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn empty_cells_are_missing() {
        let t = parse_table("t", b"a;b\n1;\n;2\n", b';', true).unwrap();
        assert_eq!(t.columns[0].cells, vec![Some("1".into()), None]);
        assert_eq!(t.columns[1].cells, vec![None, Some("2".into())]);
    }

    #[test]
    fn header_only_is_an_error() {
        assert!(matches!(parse_table("t", b"a,b\n", b',', true), Err(IngestError::NoRows)));
        assert!(matches!(parse_table("t", b"", b',', false), Err(IngestError::NoRows)));
    }

    #[test]
    fn duplicate_header_rejected() {
        assert!(matches!(
            parse_table("t", b"a,a\n1,2\n", b',', true),
            Err(IngestError::DuplicateColumn(_))
        ));
    }

    #[test]
    fn headerless_columns_are_numbered() {
        let t = parse_table("t", b"1,2\n3,4\n", b',', false).unwrap();
        assert_eq!(t.columns[0].name, "column_1");
        assert_eq!(t.row_count(), 2);
    }

    #[test]
    fn kinds_follow_thresholds() {
        let floats: Vec<String> = (0..40).map(|i| format!("{}.5", i % 35)).collect();
        let floats: Vec<&str> = floats.iter().map(String::as_str).collect();
        let strings: Vec<&str> = (0..40).map(|i| ["a", "b", "c"][i % 3]).collect();
        let ids: Vec<String> = (0..40).map(|i| format!("id{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let int_ids: Vec<String> = (0..40).map(|i| i.to_string()).collect();
        let int_ids: Vec<&str> = int_ids.iter().map(String::as_str).collect();
        let table = RawTable::new(
            "t",
            vec![
                column("f", &floats),
                column("s", &strings),
                column("id", &ids),
                column("n", &int_ids),
                column("empty", &[""; 40]),
            ],
        )
        .unwrap();
        let kinds = infer_column_kinds(&table, &KindConfig::default());
        assert_eq!(
            kinds,
            vec![
                ColumnKind::Numeric,
                ColumnKind::Categorical,
                ColumnKind::Excluded(ExclusionReason::Identifier),
                ColumnKind::Excluded(ExclusionReason::Identifier),
                ColumnKind::Excluded(ExclusionReason::AllMissing),
            ]
        );
    }

    #[test]
    fn distinct_real_values_are_numeric_not_identifiers() {
        let vals: Vec<String> = (0..100).map(|i| format!("{:.3}", i as f64 * 0.731 + 0.1)).collect();
        let vals: Vec<&str> = vals.iter().map(String::as_str).collect();
        let table = RawTable::new("t", vec![column("x", &vals)]).unwrap();
        assert_eq!(infer_column_kinds(&table, &KindConfig::default()), vec![ColumnKind::Numeric]);
    }

    #[test]
    fn constant_column_single_state() {
        let table = RawTable::new("t", vec![column("c", &["7", "7", "7"])]).unwrap();
        let (d, cb) = discretize(&table, &[ColumnKind::Numeric], 5).unwrap();
        let col = cb.column("c").unwrap();
        assert_eq!(col.cardinality(), 1);
        assert_eq!(col.states[0].label, "equal to 7");
        assert_eq!(d.row(2), &[0]);
    }

    #[test]
    fn one_to_ten_in_five_bins() {
        let vals: Vec<String> = (1..=10).map(|i| i.to_string()).collect();
        let vals: Vec<&str> = vals.iter().map(String::as_str).collect();
        let table = RawTable::new("t", vec![column("x", &vals)]).unwrap();
        let (d, cb) = discretize(&table, &[ColumnKind::Numeric], 5).unwrap();
        let states: Vec<usize> = (0..10).map(|r| d.get(r, 0)).collect();
        assert_eq!(states, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
        let col = cb.column("x").unwrap();
        assert_eq!(col.states[0].label, "between 1 and 3");
        assert_eq!(col.states[4].label, "between 9 and 10");
        let phrases: Vec<&str> = col.states.iter().map(|s| s.phrase.as_str()).collect();
        assert_eq!(phrases, ["very low", "low", "medium", "high", "very high"]);
    }

    #[test]
    fn categorical_keeps_top_values_plus_other() {
        let mut vals = vec!["a"; 5];
        vals.extend(["b"; 3]);
        vals.extend(["c", "d"]);
        let table = RawTable::new("t", vec![column("k", &vals)]).unwrap();
        let (d, cb) = discretize(&table, &[ColumnKind::Categorical], 3).unwrap();
        let labels: Vec<&str> = cb.column("k").unwrap().states.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["a", "b", "other"]);
        assert_eq!(d.get(8, 0), 2);
        assert_eq!(d.get(9, 0), 2);
    }

    #[test]
    fn missing_state_appended_within_budget() {
        let table = RawTable::new("t", vec![column("x", &["1", "2", "", "4", "5", "6"])]).unwrap();
        let (d, cb) = discretize(&table, &[ColumnKind::Numeric], 3).unwrap();
        let col = cb.column("x").unwrap();
        assert_eq!(col.cardinality(), 3);
        assert_eq!(col.states[2].role, Some(StateRole::Missing));
        assert_eq!(d.get(2, 0), 2);
    }

    #[test]
    fn excluded_columns_dropped_and_all_missing_errors() {
        let table = RawTable::new("t", vec![column("x", &["1", "2"]), column("y", &["", ""])]).unwrap();
        let (d, _) = discretize(
            &table,
            &[ColumnKind::Categorical, ColumnKind::Excluded(ExclusionReason::AllMissing)],
            5,
        )
        .unwrap();
        assert_eq!(d.columns, vec!["x"]);
        assert!(matches!(
            discretize(&table, &[ColumnKind::Categorical, ColumnKind::Numeric], 5),
            Err(IngestError::AllMissing(_))
        ));
        assert!(matches!(
            discretize(&table, &[ColumnKind::Categorical], 5),
            Err(IngestError::KindCount { .. })
        ));
        assert!(matches!(discretize(&table, &[ColumnKind::Categorical; 2], 1), Err(IngestError::MaxStates(1))));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(1234.5678, 4), "1235");
        assert_eq!(format_number(0.012345, 4), "0.01235");
        assert_eq!(format_number(3.0, 4), "3");
        assert_eq!(format_number(-2.5, 4), "-2.5");
        assert_eq!(format_number(123456.0, 4), "123500");
        assert_eq!(format_number(0.0, 4), "0");
    }

    #[test]
    fn codebook_json_round_trip_preserves_order() {
        let table = RawTable::new(
            "t",
            vec![column("zeta", &["1", "2", "3"]), column("alpha", &["a", "b", "a"])],
        )
        .unwrap();
        let (_, cb) = discretize(&table, &[ColumnKind::Numeric, ColumnKind::Categorical], 5).unwrap();
        let json = cb.to_json();
        assert!(json.find("zeta").unwrap() < json.find("alpha").unwrap());
        assert_eq!(Codebook::from_json(&json).unwrap(), cb);
    }

    #[test]
    fn discrete_csv_round_trip() {
        let table = RawTable::new("t", vec![column("x", &["1", "2", "3", "4"]), column("y", &["a", "b", "a", ""])]).unwrap();
        let (d, cb) = discretize(&table, &[ColumnKind::Numeric, ColumnKind::Categorical], 5).unwrap();
        let back = DiscreteTable::from_csv("t", d.to_csv().as_bytes(), &cb).unwrap();
        assert_eq!(back, d);
    }
}
