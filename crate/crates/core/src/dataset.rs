//! Tabular data model: schema, encoding, splitting and correlation screening.
//!
//! A [`DataTable`] holds fully encoded rows. Numeric columns are stored as
//! reals, binary columns as `{0, 1}` with the declared positive label mapped
//! to 1, ordinal columns as their level index, and categorical columns as a
//! block of one-hot indicators. Positive class and privileged group are
//! always declared in the schema: for the protected column the declared
//! `positive` label is the privileged group (encoded 1).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: column `{column}`: {message}")]
    Row {
        /// 1-based data row number (the header is not counted).
        row: usize,
        column: String,
        message: String,
    },
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Two-valued column. `positive` encodes to 1, `negative` to 0.
    Binary { positive: String, negative: String },
    /// Unordered levels, one-hot encoded. Levels default to the sorted set of
    /// observed values when not declared.
    Categorical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<Vec<String>>,
    },
    /// Ordered levels stored as a single column holding the level index.
    Ordinal { levels: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Protected,
    Target,
    /// A model input that also defines the conditioning strata.
    Stratum,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn numeric(name: &str, role: ColumnRole) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Numeric, role }
    }

    pub fn binary(name: &str, positive: &str, negative: &str, role: ColumnRole) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Binary { positive: positive.into(), negative: negative.into() },
            role,
        }
    }

    pub fn categorical(name: &str, levels: Option<Vec<String>>, role: ColumnRole) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Categorical { levels }, role }
    }

    pub fn ordinal(name: &str, levels: &[&str], role: ColumnRole) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Ordinal { levels: levels.iter().map(|s| s.to_string()).collect() },
            role,
        }
    }
}

/// One physical column of the encoded matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    /// Index into the schema.
    pub source: usize,
    /// Level index for one-hot indicator columns.
    pub level: Option<usize>,
}

/// Validates a schema independently of any data.
pub fn validate_schema(schema: &[ColumnSpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for c in schema {
        if !seen.insert(c.name.as_str()) {
            return Err(DatasetError::Schema(format!("duplicate column `{}`", c.name)));
        }
        match &c.kind {
            ColumnKind::Binary { positive, negative } if positive == negative => {
                return Err(DatasetError::Schema(format!(
                    "binary column `{}` declares the same label twice",
                    c.name
                )));
            }
            ColumnKind::Ordinal { levels } if levels.is_empty() => {
                return Err(DatasetError::Schema(format!("ordinal column `{}` has no levels", c.name)));
            }
            _ => {}
        }
        if matches!(c.role, ColumnRole::Target | ColumnRole::Protected)
            && !matches!(c.kind, ColumnKind::Binary { .. })
        {
            return Err(DatasetError::Schema(format!(
                "column `{}` is {:?} and must be binary",
                c.name, c.role
            )));
        }
        if c.role == ColumnRole::Stratum && matches!(c.kind, ColumnKind::Numeric) {
            return Err(DatasetError::Schema(format!(
                "stratum column `{}` must have a finite label set",
                c.name
            )));
        }
    }
    let targets = schema.iter().filter(|c| c.role == ColumnRole::Target).count();
    if targets != 1 {
        return Err(DatasetError::Schema(format!("expected exactly one target column, found {targets}")));
    }
    if schema.iter().filter(|c| c.role == ColumnRole::Stratum).count() > 1 {
        return Err(DatasetError::Schema("at most one stratum column is supported".into()));
    }
    if schema.iter().filter(|c| c.role == ColumnRole::Protected).count() > 1 {
        return Err(DatasetError::Schema("at most one protected column is supported".into()));
    }
    Ok(())
}

/// Encoded, immutable tabular dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    schema: Vec<ColumnSpec>,
    columns: Vec<EncodedColumn>,
    values: Vec<f64>,
    n: usize,
}

/// Options for [`parse_table`] and [`load_table`].
#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    pub delimiter: u8,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions { delimiter: b',' }
    }
}

/// Loads a delimiter-separated file with a header row.
pub fn load_table(path: impl AsRef<Path>, schema: &[ColumnSpec], opts: ReadOptions) -> Result<DataTable> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| DatasetError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_table(file, schema, opts)
}

/// Parses delimiter-separated text. Extra columns not named in the schema
/// are ignored; missing schema columns are a schema error.
pub fn parse_table<R: Read>(reader: R, schema: &[ColumnSpec], opts: ReadOptions) -> Result<DataTable> {
    validate_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| DatasetError::Io(e.to_string()))?.clone();
    let mut positions = Vec::with_capacity(schema.len());
    for c in schema {
        let pos = header
            .iter()
            .position(|h| h.trim() == c.name)
            .ok_or_else(|| DatasetError::Schema(format!("missing column `{}`", c.name)))?;
        positions.push(pos);
    }
    let mut records: Vec<Vec<String>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DatasetError::Row {
            row: i + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(schema.len());
        for (c, &pos) in schema.iter().zip(&positions) {
            let cell = rec.get(pos).map(str::trim).unwrap_or("");
            if cell.is_empty() {
                return Err(DatasetError::Row {
                    row: i + 1,
                    column: c.name.clone(),
                    message: "missing value".into(),
                });
            }
            row.push(cell.to_string());
        }
        records.push(row);
    }
    DataTable::encode(schema, &records)
}

impl DataTable {
    /// Encodes raw string records laid out in schema order.
    pub fn encode(schema: &[ColumnSpec], records: &[Vec<String>]) -> Result<DataTable> {
        validate_schema(schema)?;
        let mut schema = schema.to_vec();
        for (j, c) in schema.iter_mut().enumerate() {
            if let ColumnKind::Categorical { levels: None } = c.kind {
                let observed: BTreeSet<&str> = records.iter().map(|r| r[j].as_str()).collect();
                c.kind = ColumnKind::Categorical {
                    levels: Some(observed.into_iter().map(String::from).collect()),
                };
            }
        }
        let columns = encoded_columns(&schema);
        let width = columns.len();
        let mut values = Vec::with_capacity(records.len() * width);
        for (i, rec) in records.iter().enumerate() {
            if rec.len() != schema.len() {
                return Err(DatasetError::Row {
                    row: i + 1,
                    column: String::new(),
                    message: format!("expected {} cells, found {}", schema.len(), rec.len()),
                });
            }
            for (c, cell) in schema.iter().zip(rec) {
                let err = |message: String| DatasetError::Row { row: i + 1, column: c.name.clone(), message };
                match &c.kind {
                    ColumnKind::Numeric => {
                        let v: f64 = cell.parse().map_err(|_| err(format!("unparseable number `{cell}`")))?;
                        if !v.is_finite() {
                            return Err(err(format!("non-finite number `{cell}`")));
                        }
                        values.push(v);
                    }
                    ColumnKind::Binary { positive, negative } => {
                        if cell == positive {
                            values.push(1.0);
                        } else if cell == negative {
                            values.push(0.0);
                        } else {
                            return Err(err(format!("unknown label `{cell}`")));
                        }
                    }
                    ColumnKind::Ordinal { levels } => {
                        let k = levels.iter().position(|l| l == cell).ok_or_else(|| err(format!("unknown level `{cell}`")))?;
                        values.push(k as f64);
                    }
                    ColumnKind::Categorical { levels } => {
                        let levels = levels.as_ref().expect("levels resolved above");
                        let k = levels.iter().position(|l| l == cell).ok_or_else(|| err(format!("unknown level `{cell}`")))?;
                        values.extend((0..levels.len()).map(|l| if l == k { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
        Ok(DataTable { schema, columns, values, n: records.len() })
    }

    /// Builds a table directly from encoded rows. Rows must follow the
    /// encoded column layout implied by `schema` (categorical levels must be
    /// declared).
    pub fn from_encoded(schema: Vec<ColumnSpec>, rows: &[Vec<f64>]) -> Result<DataTable> {
        validate_schema(&schema)?;
        if schema.iter().any(|c| matches!(c.kind, ColumnKind::Categorical { levels: None })) {
            return Err(DatasetError::Schema("categorical levels must be declared".into()));
        }
        let columns = encoded_columns(&schema);
        let mut values = Vec::with_capacity(rows.len() * columns.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(DatasetError::Row {
                    row: i + 1,
                    column: String::new(),
                    message: format!("expected {} values, found {}", columns.len(), r.len()),
                });
            }
            values.extend_from_slice(r);
        }
        let t = DataTable { schema, columns, values, n: rows.len() };
        t.check_encoding()?;
        Ok(t)
    }

    fn check_encoding(&self) -> Result<()> {
        for i in 0..self.n {
            let row = self.row(i);
            for (s, c) in self.schema.iter().enumerate() {
                let cols = self.columns_of(s);
                let err = |message: &str| DatasetError::Row { row: i + 1, column: c.name.clone(), message: message.into() };
                match &c.kind {
                    ColumnKind::Numeric => {
                        if !row[cols[0]].is_finite() {
                            return Err(err("non-finite value"));
                        }
                    }
                    ColumnKind::Binary { .. } => {
                        if row[cols[0]] != 0.0 && row[cols[0]] != 1.0 {
                            return Err(err("binary value outside {0,1}"));
                        }
                    }
                    ColumnKind::Ordinal { levels } => {
                        let v = row[cols[0]];
                        if v.fract() != 0.0 || v < 0.0 || v >= levels.len() as f64 {
                            return Err(err("ordinal value is not a level index"));
                        }
                    }
                    ColumnKind::Categorical { .. } => {
                        let ones = cols.iter().filter(|&&j| row[j] == 1.0).count();
                        let zeros = cols.iter().filter(|&&j| row[j] == 0.0).count();
                        if ones != 1 || ones + zeros != cols.len() {
                            return Err(err("one-hot block does not sum to 1"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn columns(&self) -> &[EncodedColumn] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_values(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn spec(&self, name: &str) -> Option<&ColumnSpec> {
        self.schema.iter().find(|c| c.name == name)
    }

    fn source_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    /// Encoded column indices belonging to schema column `source`.
    pub fn columns_of(&self, source: usize) -> Vec<usize> {
        self.columns.iter().enumerate().filter(|(_, c)| c.source == source).map(|(j, _)| j).collect()
    }

    fn role_column(&self, role: ColumnRole) -> Option<usize> {
        self.schema.iter().position(|c| c.role == role)
    }

    pub fn target_name(&self) -> Option<&str> {
        self.role_column(ColumnRole::Target).map(|s| self.schema[s].name.as_str())
    }

    pub fn protected_name(&self) -> Option<&str> {
        self.role_column(ColumnRole::Protected).map(|s| self.schema[s].name.as_str())
    }

    pub fn stratum_name(&self) -> Option<&str> {
        self.role_column(ColumnRole::Stratum).map(|s| self.schema[s].name.as_str())
    }

    fn binary_column(&self, role: ColumnRole) -> Result<Vec<u8>> {
        let s = self
            .role_column(role)
            .ok_or_else(|| DatasetError::Schema(format!("table has no {role:?} column")))?;
        let j = self.columns_of(s)[0];
        Ok(self.rows().map(|r| r[j] as u8).collect())
    }

    /// Target labels in `{0, 1}`.
    pub fn target(&self) -> Result<Vec<u8>> {
        self.binary_column(ColumnRole::Target)
    }

    /// Protected group ids: 1 = privileged, 0 = unprivileged.
    pub fn protected(&self) -> Result<Vec<u8>> {
        self.binary_column(ColumnRole::Protected)
    }

    /// Stratum label indices, if a stratum column is declared.
    pub fn strata(&self) -> Option<Vec<u32>> {
        let s = self.role_column(ColumnRole::Stratum)?;
        let cols = self.columns_of(s);
        Some(match &self.schema[s].kind {
            ColumnKind::Categorical { .. } => self
                .rows()
                .map(|r| cols.iter().position(|&j| r[j] == 1.0).unwrap_or(0) as u32)
                .collect(),
            _ => self.rows().map(|r| r[cols[0]] as u32).collect(),
        })
    }

    /// Human-readable labels of the stratum levels.
    pub fn stratum_labels(&self) -> Vec<String> {
        let Some(s) = self.role_column(ColumnRole::Stratum) else { return Vec::new() };
        match &self.schema[s].kind {
            ColumnKind::Binary { positive, negative } => vec![negative.clone(), positive.clone()],
            other => match other {
                ColumnKind::Categorical { levels: Some(l) } | ColumnKind::Ordinal { levels: l } => l.clone(),
                _ => Vec::new(),
            },
        }
    }

    /// Encoded columns used as model inputs: every feature, stratum and
    /// protected column.
    pub fn input_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                matches!(
                    self.schema[c.source].role,
                    ColumnRole::Feature | ColumnRole::Stratum | ColumnRole::Protected
                )
            })
            .map(|(j, _)| j)
            .collect()
    }

    pub fn input_names(&self) -> Vec<String> {
        self.input_columns().into_iter().map(|j| self.columns[j].name.clone()).collect()
    }

    /// Row-major matrix of the named encoded columns. Fails on the first name
    /// that the table does not carry.
    pub fn matrix(&self, names: &[String]) -> Result<Vec<f64>> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| DatasetError::Schema(format!("column `{n}` not present in table")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(self.n * idx.len());
        for r in self.rows() {
            out.extend(idx.iter().map(|&j| r[j]));
        }
        Ok(out)
    }

    /// New table holding the given rows (repeats allowed) in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> DataTable {
        let mut values = Vec::with_capacity(indices.len() * self.width());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DataTable { schema: self.schema.clone(), columns: self.columns.clone(), values, n: indices.len() }
    }

    /// Same table with the target replaced.
    pub fn with_target(&self, labels: &[u8]) -> Result<DataTable> {
        if labels.len() != self.n {
            return Err(DatasetError::Invalid(format!("expected {} labels, got {}", self.n, labels.len())));
        }
        let s = self.role_column(ColumnRole::Target).ok_or_else(|| DatasetError::Schema("table has no target".into()))?;
        let j = self.columns_of(s)[0];
        let mut t = self.clone();
        let w = t.width();
        for (i, &l) in labels.iter().enumerate() {
            if l > 1 {
                return Err(DatasetError::Invalid("labels must be 0 or 1".into()));
            }
            t.values[i * w + j] = l as f64;
        }
        Ok(t)
    }

    /// Drops whole schema columns (all of their encoded columns).
    pub fn drop_columns(&self, names: &[&str]) -> Result<DataTable> {
        let mut drop = BTreeSet::new();
        for n in names {
            let s = self
                .source_index(n)
                .ok_or_else(|| DatasetError::Schema(format!("cannot drop missing column `{n}`")))?;
            drop.insert(s);
        }
        let keep_sources: Vec<usize> = (0..self.schema.len()).filter(|s| !drop.contains(s)).collect();
        let schema: Vec<ColumnSpec> = keep_sources.iter().map(|&s| self.schema[s].clone()).collect();
        let columns = encoded_columns(&schema);
        let keep_cols: Vec<usize> = (0..self.width()).filter(|&j| !drop.contains(&self.columns[j].source)).collect();
        let mut values = Vec::with_capacity(self.n * keep_cols.len());
        for r in self.rows() {
            values.extend(keep_cols.iter().map(|&j| r[j]));
        }
        Ok(DataTable { schema, columns, values, n: self.n })
    }

    /// Replaces a single-column schema entry by a numeric column with new
    /// values and a new name, keeping its position.
    pub fn replace_with_numeric(&self, name: &str, new_name: &str, values: &[f64]) -> Result<DataTable> {
        let s = self.source_index(name).ok_or_else(|| DatasetError::Schema(format!("missing column `{name}`")))?;
        let cols = self.columns_of(s);
        if cols.len() != 1 {
            return Err(DatasetError::Schema(format!("column `{name}` is not single-valued")));
        }
        if values.len() != self.n {
            return Err(DatasetError::Invalid(format!("expected {} values, got {}", self.n, values.len())));
        }
        if self.source_index(new_name).is_some_and(|o| o != s) {
            return Err(DatasetError::Schema(format!("column `{new_name}` already exists")));
        }
        let mut t = self.clone();
        t.schema[s] = ColumnSpec { name: new_name.into(), kind: ColumnKind::Numeric, role: self.schema[s].role };
        t.columns = encoded_columns(&t.schema);
        let w = t.width();
        for (i, &v) in values.iter().enumerate() {
            t.values[i * w + cols[0]] = v;
        }
        Ok(t)
    }

    /// Decodes back to raw string records in schema order.
    pub fn decode(&self) -> Vec<Vec<String>> {
        let blocks: Vec<Vec<usize>> = (0..self.schema.len()).map(|s| self.columns_of(s)).collect();
        self.rows()
            .map(|r| {
                self.schema
                    .iter()
                    .zip(&blocks)
                    .map(|(c, cols)| match &c.kind {
                        ColumnKind::Numeric => format!("{}", r[cols[0]]),
                        ColumnKind::Binary { positive, negative } => {
                            if r[cols[0]] == 1.0 { positive.clone() } else { negative.clone() }
                        }
                        ColumnKind::Ordinal { levels } => levels[r[cols[0]] as usize].clone(),
                        ColumnKind::Categorical { levels } => {
                            let levels = levels.as_ref().expect("resolved");
                            let k = cols.iter().position(|&j| r[j] == 1.0).unwrap_or(0);
                            levels[k].clone()
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Serializes to delimiter-separated text with a header row.
    pub fn to_delimited(&self, delimiter: u8) -> String {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(Vec::new());
        w.write_record(self.schema.iter().map(|c| c.name.as_str())).expect("in-memory write");
        for rec in self.decode() {
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn write_delimited(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_delimited(delimiter))
            .map_err(|e| DatasetError::Io(format!("{}: {e}", path.as_ref().display())))
    }

    /// Content hash over schema and encoded values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.schema).expect("schema serializes"));
        h.update((self.n as u64).to_le_bytes());
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn encoded_columns(schema: &[ColumnSpec]) -> Vec<EncodedColumn> {
    let mut out = Vec::new();
    for (s, c) in schema.iter().enumerate() {
        match &c.kind {
            ColumnKind::Categorical { levels: Some(levels) } => {
                for (k, l) in levels.iter().enumerate() {
                    out.push(EncodedColumn { name: format!("{}={}", c.name, l), source: s, level: Some(k) });
                }
            }
            _ => out.push(EncodedColumn { name: c.name.clone(), source: s, level: None }),
        }
    }
    out
}

/// Train/test partition of a table.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: DataTable,
    pub test: DataTable,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub seed: u64,
    pub fraction: f64,
}

/// Splits jointly stratified on (protected group, target label).
///
/// Each cell sends `round(fraction * size)` rows to train, clamped so both
/// sides keep at least one row of every cell.
pub fn stratified_split(table: &DataTable, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::Invalid(format!("fraction {fraction} outside (0,1)")));
    }
    if table.n_rows() < 4 {
        return Err(DatasetError::Invalid("need at least 4 rows to split".into()));
    }
    let groups = table.protected()?;
    let y = table.target()?;
    let mut cells: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for g in 0..2u8 {
        for l in 0..2u8 {
            cells.insert((g, l), Vec::new());
        }
    }
    for i in 0..table.n_rows() {
        cells.get_mut(&(groups[i], y[i])).expect("binary").push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((g, l), mut rows) in cells {
        if rows.len() < 2 {
            return Err(DatasetError::Stratification(format!(
                "cell (group={g}, label={l}) has {} rows; need at least 2",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        let k = ((fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train: table.select_rows(&train),
        test: table.select_rows(&test),
        train_rows: train,
        test_rows: test,
        seed,
        fraction,
    })
}

/// Pearson correlation of two equally long vectors, `None` when either has
/// zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    /// Set when either column has zero variance; `value` is then 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    /// Encoded column carrying the largest absolute correlation.
    pub indicator: String,
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub against: String,
    /// Per encoded indicator column.
    pub indicators: BTreeMap<String, Correlation>,
    /// Per schema feature, summarized by its max-|corr| indicator.
    pub features: BTreeMap<String, FeatureCorrelation>,
}

/// Pearson correlation between every model-input column (other than
/// `column` itself) and the encoded `column`.
pub fn correlation_with(table: &DataTable, column: &str) -> Result<CorrelationReport> {
    let s = table
        .source_index(column)
        .ok_or_else(|| DatasetError::Schema(format!("missing column `{column}`")))?;
    let cols = table.columns_of(s);
    if cols.len() != 1 {
        return Err(DatasetError::Schema(format!("column `{column}` must be single-valued")));
    }
    let reference = table.column_values(cols[0]);
    let mut indicators = BTreeMap::new();
    let mut features: BTreeMap<String, FeatureCorrelation> = BTreeMap::new();
    for j in table.input_columns() {
        let ec = &table.columns[j];
        if ec.source == s {
            continue;
        }
        let r = pearson(&table.column_values(j), &reference);
        let corr = Correlation { value: r.unwrap_or(0.0), degenerate: r.is_none() };
        let feature = table.schema[ec.source].name.clone();
        let replace = match features.get(&feature) {
            None => true,
            Some(f) => corr.value.abs() > f.value.abs(),
        };
        if replace {
            features.insert(
                feature,
                FeatureCorrelation { indicator: ec.name.clone(), value: corr.value, degenerate: corr.degenerate },
            );
        }
        indicators.insert(ec.name.clone(), corr);
    }
    Ok(CorrelationReport { against: column.to_string(), indicators, features })
}
