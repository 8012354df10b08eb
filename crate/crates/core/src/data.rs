//! Sparse datasets: LIBSVM ingestion, example normalization and partitioning
//! of the examples across machines.
//!
//! The design matrix `X` is `d x n` with one sparse column per example and is
//! stored in compressed sparse column form. Feature indices are 0-based
//! internally; the 1-based LIBSVM indices are converted at the text boundary.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Columns whose norm exceeds `1 + NORM_SLACK` are rescaled by [`Dataset::normalize`].
pub const NORM_SLACK: f64 = 1e-12;

/// A borrowed sparse column `x_i`.
#[derive(Clone, Copy, Debug)]
pub struct Column<'a> {
    pub indices: &'a [usize],
    pub values: &'a [f64],
}

impl Column<'_> {
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&j, &x)| x * w[j])
            .sum()
    }

    /// `out += a * x_i`
    pub fn axpy_into(&self, a: f64, out: &mut [f64]) {
        for (&j, &x) in self.indices.iter().zip(self.values) {
            out[j] += a * x;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Training examples `{x_i, y_i}` with `x_i` stored as sparse columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_features: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from explicit sparse columns.
    ///
    /// Each column must have strictly increasing indices below `n_features`.
    /// Explicit zeros are dropped.
    pub fn from_columns(
        n_features: usize,
        columns: Vec<Vec<(usize, f64)>>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if columns.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} columns but {} labels",
                columns.len(),
                labels.len()
            )));
        }
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for (i, col) in columns.into_iter().enumerate() {
            let mut prev: Option<usize> = None;
            for (j, x) in col {
                if j >= n_features {
                    return Err(Error::InvalidArgument(format!(
                        "column {i}: feature index {j} out of range for d = {n_features}"
                    )));
                }
                if prev.is_some_and(|p| j <= p) {
                    return Err(Error::InvalidArgument(format!(
                        "column {i}: indices not strictly increasing at {j}"
                    )));
                }
                if !x.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "column {i}: non-finite value at feature {j}"
                    )));
                }
                prev = Some(j);
                if x != 0.0 {
                    row_idx.push(j);
                    values.push(x);
                }
            }
            col_ptr.push(row_idx.len());
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidArgument("non-finite label".into()));
        }
        Ok(Self {
            n_features,
            col_ptr,
            row_idx,
            values,
            labels,
        })
    }

    /// Builds a dataset from dense columns (each of length `d`). Mostly for tests.
    pub fn from_dense_columns(columns: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let d = columns.first().map_or(0, Vec::len);
        let sparse = columns
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0.0)
                    .map(|(j, &x)| (j, x))
                    .collect()
            })
            .collect();
        Self::from_columns(d, sparse, labels)
    }

    /// Number of examples.
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Number of features.
    pub fn d(&self) -> usize {
        self.n_features
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, i: usize) -> Column<'_> {
        let (a, b) = (self.col_ptr[i], self.col_ptr[i + 1]);
        Column {
            indices: &self.row_idx[a..b],
            values: &self.values[a..b],
        }
    }

    pub fn columns(&self) -> impl Iterator<Item = Column<'_>> + '_ {
        (0..self.n()).map(move |i| self.column(i))
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Largest feature index that actually appears, plus one.
    pub fn max_observed_feature(&self) -> usize {
        self.row_idx.iter().max().map_or(0, |&j| j + 1)
    }

    /// Widens the feature dimension, e.g. when a shard omits trailing features.
    pub fn with_n_features(mut self, d: usize) -> Result<Self> {
        if d < self.max_observed_feature() {
            return Err(Error::InvalidArgument(format!(
                "requested d = {d} but data contains feature {}",
                self.max_observed_feature()
            )));
        }
        self.n_features = d;
        Ok(self)
    }

    /// `X alpha`, a `d`-vector.
    pub fn mul_vec(&self, alpha: &[f64]) -> Vec<f64> {
        assert_eq!(alpha.len(), self.n());
        let mut out = vec![0.0; self.d()];
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                self.column(i).axpy_into(a, &mut out);
            }
        }
        out
    }

    /// `X^T w`, an `n`-vector.
    pub fn tr_mul_vec(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.d());
        self.columns().map(|c| c.dot(w)).collect()
    }

    /// Copies the examples listed in `indices` (in that order) into a new dataset
    /// with the same feature dimension.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut col_ptr = Vec::with_capacity(indices.len() + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut labels = Vec::with_capacity(indices.len());
        col_ptr.push(0);
        for &i in indices {
            let c = self.column(i);
            row_idx.extend_from_slice(c.indices);
            values.extend_from_slice(c.values);
            col_ptr.push(row_idx.len());
            labels.push(self.labels[i]);
        }
        Dataset {
            n_features: self.n_features,
            col_ptr,
            row_idx,
            values,
            labels,
        }
    }

    /// Rescales every example with `||x_i|| > 1` onto the unit sphere.
    ///
    /// Columns already inside the unit ball (including zero columns) are left
    /// untouched, which makes the operation idempotent.
    pub fn normalize(&self) -> Dataset {
        let mut out = self.clone();
        for i in 0..out.n() {
            let (a, b) = (out.col_ptr[i], out.col_ptr[i + 1]);
            let norm = out.values[a..b].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1.0 + NORM_SLACK {
                for x in &mut out.values[a..b] {
                    *x /= norm;
                }
            }
        }
        out
    }

    pub fn max_column_norm(&self) -> f64 {
        self.columns()
            .map(|c| c.norm_sq().sqrt())
            .fold(0.0, f64::max)
    }

    /// Writes the dataset in LIBSVM text format with 1-based feature indices.
    ///
    /// Values use Rust's shortest round-trip float formatting, so parsing the
    /// output reproduces the dataset exactly.
    pub fn write_libsvm<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.n() {
            write!(out, "{}", self.labels[i])?;
            let c = self.column(i);
            for (&j, &x) in c.indices.iter().zip(c.values) {
                write!(out, " {}:{}", j + 1, x)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_libsvm_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_libsvm(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("LIBSVM output is ASCII")
    }
}

/// Parses LIBSVM text: one example per non-empty line, `<label> <idx>:<val> ...`
/// with 1-based, strictly increasing indices. Text after `#` is ignored.
///
/// `d` is the largest observed index.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut columns = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let mut tokens = content.split_ascii_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label = parse_number(label_tok).map_err(|_| err(format!("bad label {label_tok:?}")))?;
        let mut col = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected <index>:<value>, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            if idx <= prev {
                let what = if idx == prev { "duplicate" } else { "non-increasing" };
                return Err(err(format!("{what} feature index {idx}")));
            }
            let val = parse_number(val).map_err(|_| err(format!("bad feature value {val:?}")))?;
            prev = idx;
            d = d.max(idx);
            if val != 0.0 {
                col.push((idx - 1, val));
            }
        }
        columns.push(col);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    Dataset::from_columns(d, columns, labels)
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    parse_libsvm(text.as_bytes())
}

pub fn read_libsvm_file(path: impl AsRef<std::path::Path>) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    parse_libsvm(std::io::BufReader::new(f))
}

fn parse_number(tok: &str) -> std::result::Result<f64, ()> {
    match tok.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(()),
    }
}

/// How examples are assigned to machines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PartitionStrategy {
    Contiguous,
    RoundRobin,
    /// Seeded shuffle followed by a contiguous split.
    #[default]
    Random,
}

impl FromStr for PartitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(Self::Contiguous),
            "round-robin" | "roundrobin" => Ok(Self::RoundRobin),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidArgument(format!(
                "unknown partition strategy {other:?}"
            ))),
        }
    }
}

impl fmt::Display for PartitionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Contiguous => "contiguous",
            Self::RoundRobin => "round-robin",
            Self::Random => "random",
        })
    }
}

/// Disjoint, non-empty index blocks `P_1, ..., P_K` covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    n: usize,
}

impl Partition {
    pub fn new(n: usize, k: usize, strategy: PartitionStrategy, seed: u64) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= K <= n, got K = {k}, n = {n}"
            )));
        }
        let blocks = match strategy {
            PartitionStrategy::Contiguous => contiguous_split(&(0..n).collect::<Vec<_>>(), k),
            PartitionStrategy::RoundRobin => {
                let mut blocks = vec![Vec::with_capacity(n / k + 1); k];
                for i in 0..n {
                    blocks[i % k].push(i);
                }
                blocks
            }
            PartitionStrategy::Random => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                contiguous_split(&order, k)
            }
        };
        Ok(Self { blocks, n })
    }

    /// Validates and wraps explicit blocks.
    pub fn from_blocks(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("partition has no blocks".into()));
        }
        let mut seen = vec![false; n];
        for (k, b) in blocks.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::InvalidArgument(format!("block {k} is empty")));
            }
            for &i in b {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidArgument(format!(
                        "index {i} out of range or assigned twice"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("blocks do not cover 0..n".into()));
        }
        Ok(Self { blocks, n })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Gathers `alpha[P_k]` in block order.
    pub fn gather(&self, k: usize, alpha: &[f64]) -> Vec<f64> {
        self.blocks[k].iter().map(|&i| alpha[i]).collect()
    }

    /// Writes a block-local vector back into its global positions.
    pub fn scatter(&self, k: usize, local: &[f64], alpha: &mut [f64]) {
        for (&i, &a) in self.blocks[k].iter().zip(local) {
            alpha[i] = a;
        }
    }
}

fn contiguous_split(order: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    let (base, extra) = (n / k, n % k);
    let mut blocks = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let len = base + usize::from(b < extra);
        blocks.push(order[start..start + len].to_vec());
        start += len;
    }
    blocks
}
