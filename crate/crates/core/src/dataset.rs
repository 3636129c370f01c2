//! Labeled datasets and their on-disk text format.
//!
//! Format, version 1. The first line is the header:
//!
//! ```text
//! # cvsurrogate-dataset v1 cv=<name> D=<dim> L=<box nm> seed=<u64> source=<uniform|structured|external> n=<rows>
//! ```
//!
//! Fields are single-space separated and appear in exactly this order. Each
//! following line is one frame: `D` coordinates, the CV value, then `D`
//! Jacobian entries, comma separated, every number written in Rust's
//! shortest round-trip decimal form so reading back is bit-exact.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cv::{CvFunction, CvKind};
use crate::error::{Error, Result};
use crate::geometry::SimBox;

pub const DATASET_MAGIC: &str = "# cvsurrogate-dataset v1";

/// How the configurations of a dataset were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Uniform,
    Structured,
    External,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Uniform => "uniform",
            Provenance::Structured => "structured",
            Provenance::External => "external",
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Provenance::Uniform),
            "structured" => Ok(Provenance::Structured),
            "external" => Ok(Provenance::External),
            other => Err(Error::InvalidArgument(format!("unknown dataset source '{other}'"))),
        }
    }
}

/// Rows of (coordinates, CV value, analytical Jacobian).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub cv: CvKind,
    pub sim_box: SimBox,
    pub provenance: Provenance,
    pub seed: u64,
    dim: usize,
    inputs: Vec<f64>,
    values: Vec<f64>,
    jacobians: Vec<f64>,
}

impl LabeledDataset {
    pub fn new(cv: CvKind, sim_box: SimBox, provenance: Provenance, seed: u64) -> Self {
        LabeledDataset {
            cv,
            sim_box,
            provenance,
            seed,
            dim: cv.input_dim(),
            inputs: Vec::new(),
            values: Vec::new(),
            jacobians: Vec::new(),
        }
    }

    pub fn push(&mut self, input: &[f64], value: f64, jacobian: &[f64]) -> Result<()> {
        if input.len() != self.dim || jacobian.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: input.len().min(jacobian.len()),
            });
        }
        self.inputs.extend_from_slice(input);
        self.values.push(value);
        self.jacobians.extend_from_slice(jacobian);
        Ok(())
    }

    /// Label `input` with `oracle` and append it.
    pub fn push_labeled(&mut self, oracle: &dyn CvFunction, input: &[f64]) -> Result<()> {
        let (v, j) = oracle.value_and_jacobian(input)?;
        self.push(input, v, &j)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jacobian(&self, i: usize) -> &[f64] {
        &self.jacobians[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inputs_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.dim), &self.inputs).expect("row-major inputs")
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut out = LabeledDataset::new(self.cv, self.sim_box, self.provenance, self.seed);
        out.inputs.reserve(indices.len() * self.dim);
        for &i in indices {
            out.inputs.extend_from_slice(self.input(i));
            out.values.push(self.values[i]);
            out.jacobians.extend_from_slice(self.jacobian(i));
        }
        out
    }

    /// Check a deterministic ~1% sample (at least one row) against the
    /// oracle. Labels must match exactly since they come from the same code.
    pub fn verify_sample(&self, oracle: &dyn CvFunction) -> Result<()> {
        let stride = (self.len() / 100).max(1);
        for i in (0..self.len()).step_by(stride) {
            let (v, j) = oracle.value_and_jacobian(self.input(i))?;
            let jac_ok = j.iter().zip(self.jacobian(i)).all(|(a, b)| (a - b).abs() <= 1e-12);
            if (v - self.values[i]).abs() > 1e-12 || !jac_ok {
                return Err(Error::Numerical(format!(
                    "row {i}: stored labels disagree with the {} oracle",
                    oracle.name()
                )));
            }
        }
        Ok(())
    }

    fn header(&self) -> String {
        format!(
            "{DATASET_MAGIC} cv={} D={} L={} seed={} source={} n={}",
            self.cv,
            self.dim,
            self.sim_box.length(),
            self.seed,
            self.provenance.as_str(),
            self.len()
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut line = String::new();
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", self.header()).map_err(io)?;
        for i in 0..self.len() {
            line.clear();
            for v in self.input(i) {
                write!(line, "{v},").unwrap();
            }
            write!(line, "{}", self.values[i]).unwrap();
            for v in self.jacobian(i) {
                write!(line, ",{v}").unwrap();
            }
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Read a file written by [`LabeledDataset::write`] and spot-check its
    /// labels against the analytical oracle.
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let p = path.display().to_string();
        let perr = |line: usize, msg: String| Error::Parse {
            path: p.clone(),
            line,
            msg,
        };
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e))?,
            None => return Err(perr(1, "empty file".into())),
        };
        let h = DatasetHeader::parse(&header).map_err(|m| perr(1, m))?;
        let sim_box = SimBox::new(h.box_length).map_err(|e| perr(1, e.to_string()))?;
        if h.dim != h.cv.input_dim() {
            return Err(perr(1, format!("D={} but cv {} reads {} coordinates", h.dim, h.cv, h.cv.input_dim())));
        }
        let mut ds = LabeledDataset::new(h.cv, sim_box, h.source, h.seed);
        let want = 2 * h.dim + 1;
        let mut row = Vec::with_capacity(want);
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            row.clear();
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| perr(lineno, format!("cannot parse '{field}' as a number")))?;
                row.push(v);
            }
            if row.len() != want {
                return Err(perr(lineno, format!("expected {want} columns, found {}", row.len())));
            }
            ds.push(&row[..h.dim], row[h.dim], &row[h.dim + 1..])?;
        }
        if ds.len() != h.n {
            return Err(perr(1, format!("header declares n={} but file has {} rows", h.n, ds.len())));
        }
        ds.verify_sample(h.cv.oracle(sim_box).as_ref())?;
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DatasetHeader {
    cv: CvKind,
    dim: usize,
    box_length: f64,
    seed: u64,
    source: Provenance,
    n: usize,
}

impl DatasetHeader {
    fn parse(line: &str) -> std::result::Result<Self, String> {
        let rest = line
            .strip_prefix(DATASET_MAGIC)
            .ok_or_else(|| format!("expected header starting with '{DATASET_MAGIC}'"))?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let keys = ["cv", "D", "L", "seed", "source", "n"];
        if fields.len() != keys.len() {
            return Err(format!("expected {} header fields, found {}", keys.len(), fields.len()));
        }
        let mut vals = Vec::with_capacity(keys.len());
        for (f, k) in fields.iter().zip(keys) {
            let v = f
                .strip_prefix(k)
                .and_then(|s| s.strip_prefix('='))
                .ok_or_else(|| format!("expected field '{k}=', found '{f}'"))?;
            vals.push(v);
        }
        let bad = |k: &str, v: &str| format!("bad value for {k}: '{v}'");
        Ok(DatasetHeader {
            cv: vals[0].parse().map_err(|_| bad("cv", vals[0]))?,
            dim: vals[1].parse().map_err(|_| bad("D", vals[1]))?,
            box_length: vals[2].parse().map_err(|_| bad("L", vals[2]))?,
            seed: vals[3].parse().map_err(|_| bad("seed", vals[3]))?,
            source: vals[4].parse().map_err(|_| bad("source", vals[4]))?,
            n: vals[5].parse().map_err(|_| bad("n", vals[5]))?,
        })
    }
}

/// Ingest external frames. Lines starting with `#` are comments. Fields may
/// be separated by commas or whitespace. A row holds either `D` coordinates
/// or a full `2D + 1` labeled row; labels are always recomputed from the
/// oracle, and disagreements with labels found in the file are logged.
pub fn load_external(path: &Path, cv: CvKind, sim_box: SimBox) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let oracle = cv.oracle(sim_box);
    let dim = cv.input_dim();
    let mut ds = LabeledDataset::new(cv, sim_box, Provenance::External, 0);
    let mut disagreements = 0usize;
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg,
        };
        let row: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| perr(format!("cannot parse '{s}' as a number"))))
            .collect::<Result<_>>()?;
        if row.len() != dim && row.len() != 2 * dim + 1 {
            return Err(perr(format!(
                "expected {dim} coordinates (or {} labeled columns), found {} columns",
                2 * dim + 1,
                row.len()
            )));
        }
        let coords = &row[..dim];
        let (v, j) = oracle.value_and_jacobian(coords).map_err(|e| perr(e.to_string()))?;
        if row.len() == 2 * dim + 1 {
            let same = (row[dim] - v).abs() <= 1e-9
                && row[dim + 1..].iter().zip(&j).all(|(a, b)| (a - b).abs() <= 1e-9);
            if !same {
                disagreements += 1;
                log::warn!(
                    "{}:{lineno}: file labels disagree with the {cv} oracle (file value {}, oracle {v}); using oracle",
                    path.display(),
                    row[dim]
                );
            }
        }
        ds.push(coords, v, &j)?;
    }
    if disagreements > 0 {
        log::warn!("{disagreements} rows relabeled from the oracle");
    }
    Ok(ds)
}

/// Seeded train/test partition: shuffle, then first `train_fraction` of rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5b1);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(n_train.min(n));
    Split { train: idx, test }
}
