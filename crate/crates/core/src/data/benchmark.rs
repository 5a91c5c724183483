//! Canonical layouts and train/test masks for the three real-data tasks.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{is_closed_downwards, CsvSchema, DataError, MultiOutputDataset, OutputOrdering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Eeg,
    Jura,
    Exchange,
}

impl FromStr for Benchmark {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "eeg" => Ok(Benchmark::Eeg),
            "jura" => Ok(Benchmark::Jura),
            "exchange" => Ok(Benchmark::Exchange),
            _ => Err(format!(
                "unknown benchmark {s:?} (expected eeg, jura or exchange)"
            )),
        }
    }
}

/// Column layout a benchmark CSV must follow exactly, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalLayout {
    pub inputs: &'static [&'static str],
    pub outputs: &'static [&'static str],
    pub rows: usize,
    /// Output names in model order.
    pub ordering: &'static [&'static str],
}

const EEG: CanonicalLayout = CanonicalLayout {
    inputs: &["t"],
    outputs: &["F3", "F4", "F5", "F6", "FZ", "F1", "F2"],
    rows: 256,
    ordering: &["F3", "F4", "F5", "F6", "FZ", "F1", "F2"],
};

const JURA: CanonicalLayout = CanonicalLayout {
    inputs: &["x", "y"],
    outputs: &["Ni", "Zn", "Cd"],
    rows: 359,
    ordering: &["Ni", "Zn", "Cd"],
};

const EXCHANGE: CanonicalLayout = CanonicalLayout {
    inputs: &["day"],
    outputs: &[
        "CAD", "EUR", "JPY", "GBP", "CHF", "AUD", "HKD", "NZD", "KRW", "MXN", "XAU", "XAG", "XPT",
    ],
    rows: 251,
    ordering: &[
        "EUR", "GBP", "CHF", "HKD", "NZD", "KRW", "MXN", "XAU", "XAG", "XPT", "CAD", "JPY", "AUD",
    ],
};

/// EEG: rows at or after this index hide FZ, F1, F2.
const EEG_OBSERVED: usize = 156;
/// Jura: the first rows are fully observed; the rest hide Cd.
const JURA_TRAIN: usize = 259;

/// Exchange windows as inclusive 1-based day ranges (= row index + 1).
const EXCHANGE_TRAIN_GAPS: [(&str, usize, usize); 3] =
    [("CAD", 50, 100), ("JPY", 50, 150), ("AUD", 50, 200)];
const EXCHANGE_TEST: [(&str, usize, usize); 3] =
    [("CAD", 50, 100), ("JPY", 100, 150), ("AUD", 150, 200)];

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Eeg => "eeg",
            Benchmark::Jura => "jura",
            Benchmark::Exchange => "exchange",
        }
    }

    pub fn layout(self) -> &'static CanonicalLayout {
        match self {
            Benchmark::Eeg => &EEG,
            Benchmark::Jura => &JURA,
            Benchmark::Exchange => &EXCHANGE,
        }
    }

    pub fn schema(self) -> CsvSchema {
        let l = self.layout();
        CsvSchema::new(l.inputs.iter().copied(), l.outputs.iter().copied())
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Benchmark::Eeg => "eeg.csv",
            Benchmark::Jura => "jura.csv",
            Benchmark::Exchange => "exchange.csv",
        }
    }

    pub fn source_url(self) -> &'static str {
        match self {
            Benchmark::Eeg => "https://archive.ics.uci.edu/ml/datasets/eeg+database",
            Benchmark::Jura => {
                "https://sites.google.com/site/goovaertspierre/pierregoovaertswebsite/download/"
            }
            Benchmark::Exchange => "http://fx.sauder.ubc.ca",
        }
    }

    pub fn ordering(self, ds: &MultiOutputDataset) -> Result<OutputOrdering, DataError> {
        OutputOrdering::from_names(ds, self.layout().ordering)
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkSplit {
    pub train: MultiOutputDataset,
    /// Held-out rows; only target cells are observed.
    pub test: MultiOutputDataset,
    /// Row of `train` each test row came from.
    pub test_rows: Vec<usize>,
    pub ordering: OutputOrdering,
}

fn protocol(b: Benchmark, reason: String) -> DataError {
    DataError::Protocol {
        benchmark: b.name(),
        reason,
    }
}

/// Applies the task's masks to a fully observed canonical dataset.
pub fn benchmark_split(b: Benchmark, ds: &MultiOutputDataset) -> Result<BenchmarkSplit, DataError> {
    let l = b.layout();
    if ds.input_names() != l.inputs || ds.output_names() != l.outputs {
        return Err(protocol(
            b,
            format!(
                "expected columns {:?} + {:?}, found {:?} + {:?}",
                l.inputs,
                l.outputs,
                ds.input_names(),
                ds.output_names()
            ),
        ));
    }
    if ds.len() != l.rows {
        return Err(protocol(
            b,
            format!("expected {} rows, found {}", l.rows, ds.len()),
        ));
    }
    if ds.observed_count() != ds.len() * ds.n_outputs() {
        return Err(protocol(b, "canonical file must be fully observed".into()));
    }
    let idx = |name: &str| ds.output_index(name).expect("layout checked");
    let mut train = ds.clone();
    // (row, output) target cells
    let mut targets: Vec<(usize, usize)> = Vec::new();
    match b {
        Benchmark::Eeg => {
            for r in EEG_OBSERVED..ds.len() {
                for name in ["FZ", "F1", "F2"] {
                    train.unobserve(r, idx(name));
                    targets.push((r, idx(name)));
                }
            }
        }
        Benchmark::Jura => {
            for r in JURA_TRAIN..ds.len() {
                train.unobserve(r, idx("Cd"));
                targets.push((r, idx("Cd")));
            }
        }
        Benchmark::Exchange => {
            for (name, lo, hi) in EXCHANGE_TRAIN_GAPS {
                for day in lo..=hi {
                    train.unobserve(day - 1, idx(name));
                }
            }
            for (name, lo, hi) in EXCHANGE_TEST {
                for day in lo..=hi {
                    targets.push((day - 1, idx(name)));
                }
            }
        }
    }
    let mut test_rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
    test_rows.sort_unstable();
    test_rows.dedup();
    let mut test = ds.select_rows(&test_rows);
    for (i, &r) in test_rows.iter().enumerate() {
        for c in 0..ds.n_outputs() {
            if !targets.contains(&(r, c)) {
                test.unobserve(i, c);
            }
        }
    }
    let ordering = b.ordering(ds)?;
    debug_assert!(is_closed_downwards(&train, &ordering)?);
    Ok(BenchmarkSplit {
        train,
        test,
        test_rows,
        ordering,
    })
}
