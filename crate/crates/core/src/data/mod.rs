//! Multi-output datasets with per-cell observation flags.
//!
//! A dataset holds `N` input rows of dimension `D` and an `N × M` block of
//! outputs, any cell of which may be unobserved.

mod benchmark;

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kernels::Inputs;

pub use benchmark::{benchmark_split, Benchmark, BenchmarkSplit, CanonicalLayout};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty file: no header row")]
    Empty,
    #[error("no data rows")]
    NoRows,
    #[error("column {column:?} not found in header")]
    MissingColumn { column: String },
    #[error("column {column:?} listed more than once")]
    DuplicateColumn { column: String },
    #[error("row {row}: expected {expected} cells, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column {column:?}: value is not finite")]
    NonFinite { row: usize, column: String },
    #[error("row {row}, column {column:?}: input cells may not be empty")]
    MissingInput { row: usize, column: String },
    #[error("row {row}: no observed outputs")]
    EmptyRow { row: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid ordering: {0}")]
    Ordering(String),
    #[error("{0}")]
    NotClosedDownwards(Violation),
    #[error("{benchmark} protocol: {reason}")]
    Protocol {
        benchmark: &'static str,
        reason: String,
    },
}

/// First cell breaking the closed-downwards property: `output` is observed
/// at `row` while some output ordered before it is not. Both indices are
/// zero-based; `output` indexes the dataset columns, not the ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub row: usize,
    pub output: usize,
    pub missing_predecessor: usize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "data not closed downwards: row {} has output {} observed but earlier output {} missing",
            self.row, self.output, self.missing_predecessor
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputDataset {
    input_names: Vec<String>,
    output_names: Vec<String>,
    inputs: Vec<f64>,
    /// Row-major `N × M`; unobserved cells hold 0.0.
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl MultiOutputDataset {
    /// Rows may be entirely unobserved here; only [`load_csv`] rejects them.
    pub fn new(
        input_names: Vec<String>,
        output_names: Vec<String>,
        inputs: Vec<Vec<f64>>,
        outputs: Vec<Vec<Option<f64>>>,
    ) -> Result<Self, DataError> {
        let d = input_names.len();
        let m = output_names.len();
        if m == 0 {
            return Err(DataError::Shape(
                "at least one output column is required".into(),
            ));
        }
        if inputs.len() != outputs.len() {
            return Err(DataError::Shape(format!(
                "{} input rows but {} output rows",
                inputs.len(),
                outputs.len()
            )));
        }
        let n = inputs.len();
        let mut flat = Vec::with_capacity(n * d);
        let mut values = Vec::with_capacity(n * m);
        let mut observed = Vec::with_capacity(n * m);
        for (r, (xi, yi)) in inputs.iter().zip(&outputs).enumerate() {
            if xi.len() != d || yi.len() != m {
                return Err(DataError::Shape(format!(
                    "row {r} has {} inputs and {} outputs",
                    xi.len(),
                    yi.len()
                )));
            }
            for (c, v) in xi.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DataError::NonFinite {
                        row: r,
                        column: input_names[c].clone(),
                    });
                }
            }
            flat.extend_from_slice(xi);
            for (c, v) in yi.iter().enumerate() {
                match v {
                    Some(v) if !v.is_finite() => {
                        return Err(DataError::NonFinite {
                            row: r,
                            column: output_names[c].clone(),
                        })
                    }
                    Some(v) => {
                        values.push(*v);
                        observed.push(true);
                    }
                    None => {
                        values.push(0.0);
                        observed.push(false);
                    }
                }
            }
        }
        Ok(MultiOutputDataset {
            input_names,
            output_names,
            inputs: flat,
            values,
            observed,
        })
    }

    pub fn len(&self) -> usize {
        self.observed.len() / self.output_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_names.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_names.len()
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    pub fn output_index(&self, name: &str) -> Option<usize> {
        self.output_names.iter().position(|n| n == name)
    }

    pub fn input_row(&self, row: usize) -> &[f64] {
        let d = self.input_dim();
        &self.inputs[row * d..(row + 1) * d]
    }

    pub fn inputs(&self) -> Inputs<f64> {
        Inputs::from_flat(self.input_dim(), self.inputs.clone())
    }

    pub fn value(&self, row: usize, output: usize) -> Option<f64> {
        let i = row * self.n_outputs() + output;
        self.observed[i].then_some(self.values[i])
    }

    pub fn is_observed(&self, row: usize, output: usize) -> bool {
        self.observed[row * self.n_outputs() + output]
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }

    pub fn column(&self, output: usize) -> Vec<Option<f64>> {
        (0..self.len()).map(|r| self.value(r, output)).collect()
    }

    pub fn row_values(&self, row: usize) -> Vec<Option<f64>> {
        (0..self.n_outputs()).map(|c| self.value(row, c)).collect()
    }

    pub fn unobserve(&mut self, row: usize, output: usize) {
        let i = row * self.n_outputs() + output;
        self.observed[i] = false;
        self.values[i] = 0.0;
    }

    pub fn set_value(
        &mut self,
        row: usize,
        output: usize,
        value: Option<f64>,
    ) -> Result<(), DataError> {
        let i = row * self.n_outputs() + output;
        match value {
            Some(v) if !v.is_finite() => Err(DataError::NonFinite {
                row,
                column: self.output_names[output].clone(),
            }),
            Some(v) => {
                self.values[i] = v;
                self.observed[i] = true;
                Ok(())
            }
            None => {
                self.unobserve(row, output);
                Ok(())
            }
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> MultiOutputDataset {
        let (d, m) = (self.input_dim(), self.n_outputs());
        let mut out = MultiOutputDataset {
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
            inputs: Vec::with_capacity(rows.len() * d),
            values: Vec::with_capacity(rows.len() * m),
            observed: Vec::with_capacity(rows.len() * m),
        };
        for &r in rows {
            out.inputs.extend_from_slice(self.input_row(r));
            out.values
                .extend_from_slice(&self.values[r * m..(r + 1) * m]);
            out.observed
                .extend_from_slice(&self.observed[r * m..(r + 1) * m]);
        }
        out
    }

    /// Applies `f` to every observed value; fails if a result is not finite.
    pub fn map_outputs(
        &self,
        mut f: impl FnMut(usize, f64) -> f64,
    ) -> Result<MultiOutputDataset, DataError> {
        let mut out = self.clone();
        let m = self.n_outputs();
        for i in 0..out.values.len() {
            if out.observed[i] {
                let v = f(i % m, out.values[i]);
                if !v.is_finite() {
                    return Err(DataError::NonFinite {
                        row: i / m,
                        column: self.output_names[i % m].clone(),
                    });
                }
                out.values[i] = v;
            }
        }
        Ok(out)
    }

    /// SHA-256 over names, shapes, inputs, flags and observed values, all in
    /// little-endian bit patterns. Independent of any file formatting.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for names in [&self.input_names, &self.output_names] {
            h.update((names.len() as u64).to_le_bytes());
            for n in names {
                h.update((n.len() as u64).to_le_bytes());
                h.update(n.as_bytes());
            }
        }
        h.update((self.len() as u64).to_le_bytes());
        for v in &self.inputs {
            h.update(v.to_bits().to_le_bytes());
        }
        for (v, o) in self.values.iter().zip(&self.observed) {
            h.update([*o as u8]);
            if *o {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file's bytes, lowercase hex.
pub fn file_sha256(path: &Path) -> Result<String, DataError> {
    let mut file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = file.read(&mut buf).map_err(|e| io_err(path, e))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(hex(&h.finalize()))
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Permutation of output indices: position `p` holds the output modelled `p`-th.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct OutputOrdering(Vec<usize>);

impl OutputOrdering {
    pub fn new(perm: Vec<usize>) -> Result<Self, DataError> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(DataError::Ordering(format!(
                    "{perm:?} is not a permutation of 0..{}",
                    perm.len()
                )));
            }
            seen[p] = true;
        }
        if perm.is_empty() {
            return Err(DataError::Ordering("empty ordering".into()));
        }
        Ok(OutputOrdering(perm))
    }

    pub fn identity(m: usize) -> Self {
        OutputOrdering((0..m).collect())
    }

    pub fn from_names<S: AsRef<str>>(
        ds: &MultiOutputDataset,
        names: &[S],
    ) -> Result<Self, DataError> {
        let perm = names
            .iter()
            .map(|n| {
                ds.output_index(n.as_ref())
                    .ok_or_else(|| DataError::Ordering(format!("unknown output {:?}", n.as_ref())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if perm.len() != ds.n_outputs() {
            return Err(DataError::Ordering(format!(
                "{} names given for {} outputs",
                perm.len(),
                ds.n_outputs()
            )));
        }
        Self::new(perm)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Output index at ordering position `p`.
    pub fn output(&self, p: usize) -> usize {
        self.0[p]
    }

    pub fn position_of(&self, output: usize) -> Option<usize> {
        self.0.iter().position(|o| *o == output)
    }

    fn check(&self, ds: &MultiOutputDataset) -> Result<(), DataError> {
        if self.len() != ds.n_outputs() {
            return Err(DataError::Ordering(format!(
                "ordering has {} entries, dataset {} outputs",
                self.len(),
                ds.n_outputs()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for OutputOrdering {
    type Error = DataError;
    fn try_from(v: Vec<usize>) -> Result<Self, DataError> {
        OutputOrdering::new(v)
    }
}

impl From<OutputOrdering> for Vec<usize> {
    fn from(o: OutputOrdering) -> Vec<usize> {
        o.0
    }
}

/// Length of the observed prefix of `row` under `ord`.
pub fn observed_prefix(ds: &MultiOutputDataset, ord: &OutputOrdering, row: usize) -> usize {
    ord.as_slice()
        .iter()
        .take_while(|&&o| ds.is_observed(row, o))
        .count()
}

/// First violation in row-major order, or `None` when closed downwards.
pub fn first_violation(
    ds: &MultiOutputDataset,
    ord: &OutputOrdering,
) -> Result<Option<Violation>, DataError> {
    ord.check(ds)?;
    for row in 0..ds.len() {
        let prefix = observed_prefix(ds, ord, row);
        if let Some(p) = (prefix..ord.len()).find(|&p| ds.is_observed(row, ord.output(p))) {
            return Ok(Some(Violation {
                row,
                output: ord.output(p),
                missing_predecessor: ord.output(prefix),
            }));
        }
    }
    Ok(None)
}

pub fn is_closed_downwards(
    ds: &MultiOutputDataset,
    ord: &OutputOrdering,
) -> Result<bool, DataError> {
    first_violation(ds, ord).map(|v| v.is_none())
}

/// Keeps the longest observed prefix of each row; returns the number of
/// cells unflagged.
pub fn restrict_to_closed_downwards(
    ds: &MultiOutputDataset,
    ord: &OutputOrdering,
) -> Result<(MultiOutputDataset, usize), DataError> {
    ord.check(ds)?;
    let mut out = ds.clone();
    let mut dropped = 0;
    for row in 0..ds.len() {
        let prefix = observed_prefix(ds, ord, row);
        for p in prefix..ord.len() {
            let o = ord.output(p);
            if out.is_observed(row, o) {
                out.unobserve(row, o);
                dropped += 1;
            }
        }
    }
    Ok((out, dropped))
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl CsvSchema {
    pub fn new<S: Into<String>>(
        inputs: impl IntoIterator<Item = S>,
        outputs: impl IntoIterator<Item = S>,
    ) -> Self {
        CsvSchema {
            inputs: inputs.into_iter().map(Into::into).collect(),
            outputs: outputs.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<MultiOutputDataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_csv(file, schema)
}

/// First `n_inputs` header columns are inputs, the rest outputs.
pub fn load_csv_leading_inputs(
    path: &Path,
    n_inputs: usize,
) -> Result<MultiOutputDataset, DataError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let header = csv::ReaderBuilder::new()
        .from_reader(bytes.as_slice())
        .headers()?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(DataError::Empty);
    }
    if header.len() <= n_inputs {
        return Err(DataError::Shape(format!(
            "header has {} columns, need more than {n_inputs}",
            header.len()
        )));
    }
    let names: Vec<String> = header.iter().map(str::to_string).collect();
    let schema = CsvSchema {
        inputs: names[..n_inputs].to_vec(),
        outputs: names[n_inputs..].to_vec(),
    };
    read_csv(bytes.as_slice(), &schema)
}

/// Data rows are numbered from 1 in errors.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<MultiOutputDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(DataError::Empty);
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut locate = |name: &String| -> Result<usize, DataError> {
        if !seen.insert(name.clone()) {
            return Err(DataError::DuplicateColumn {
                column: name.clone(),
            });
        }
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn {
                column: name.clone(),
            })
    };
    let in_cols = schema
        .inputs
        .iter()
        .map(&mut locate)
        .collect::<Result<Vec<_>, _>>()?;
    let out_cols = schema
        .outputs
        .iter()
        .map(&mut locate)
        .collect::<Result<Vec<_>, _>>()?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(DataError::RaggedRow {
                row,
                expected: header.len(),
                found: rec.len(),
            });
        }
        let parse = |col: usize, name: &String| -> Result<Option<f64>, DataError> {
            let cell = rec[col].trim();
            if cell.is_empty() {
                return Ok(None);
            }
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                row,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    row,
                    column: name.clone(),
                });
            }
            Ok(Some(v))
        };
        let x = in_cols
            .iter()
            .zip(&schema.inputs)
            .map(|(&c, n)| {
                parse(c, n)?.ok_or_else(|| DataError::MissingInput {
                    row,
                    column: n.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let y = out_cols
            .iter()
            .zip(&schema.outputs)
            .map(|(&c, n)| parse(c, n))
            .collect::<Result<Vec<_>, _>>()?;
        if y.iter().all(Option::is_none) {
            return Err(DataError::EmptyRow { row });
        }
        inputs.push(x);
        outputs.push(y);
    }
    if inputs.is_empty() {
        return Err(DataError::NoRows);
    }
    MultiOutputDataset::new(
        schema.inputs.clone(),
        schema.outputs.clone(),
        inputs,
        outputs,
    )
}

/// Inputs then outputs; unobserved cells are empty. Values use the shortest
/// representation that parses back to the same bits.
pub fn write_csv<W: Write>(writer: W, ds: &MultiOutputDataset) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ds.input_names.iter().chain(&ds.output_names))?;
    let mut rec = Vec::with_capacity(ds.input_dim() + ds.n_outputs());
    for r in 0..ds.len() {
        rec.clear();
        rec.extend(ds.input_row(r).iter().map(|v| v.to_string()));
        rec.extend(
            (0..ds.n_outputs()).map(|c| ds.value(r, c).map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| DataError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn save_csv(path: &Path, ds: &MultiOutputDataset) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_csv(std::io::BufWriter::new(file), ds)
}
