//! Observation containers, CSV ingestion, overlap trimming and sample splits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use faer::Mat;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamKey};

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub y: String,
    pub d: String,
    pub covariates: Vec<String>,
}

impl ColumnSchema {
    pub fn new(y: &str, d: &str, covariates: &[&str]) -> Self {
        ColumnSchema {
            y: y.to_string(),
            d: d.to_string(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// `y`, `d`, `x1..xp`.
    pub fn default_for(p: usize) -> Self {
        ColumnSchema {
            y: "y".into(),
            d: "d".into(),
            covariates: (1..=p).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

/// `n` observations of a binary outcome, a treatment and `p` covariates.
///
/// The outcome is always binary. The treatment is real-valued here; tasks that
/// need a binary treatment call [`Dataset::require_binary_treatment`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    d: Vec<f64>,
    x: Mat<f64>,
    schema: ColumnSchema,
}

impl Dataset {
    pub fn new(y: Vec<f64>, d: Vec<f64>, x: Mat<f64>) -> Result<Self> {
        let schema = ColumnSchema::default_for(x.ncols());
        Self::with_schema(y, d, x, schema)
    }

    pub fn with_schema(y: Vec<f64>, d: Vec<f64>, x: Mat<f64>, schema: ColumnSchema) -> Result<Self> {
        let n = y.len();
        if d.len() != n || x.nrows() != n {
            return Err(Error::shape(format!(
                "y has {n} rows, d has {}, x has {}",
                d.len(),
                x.nrows()
            )));
        }
        if schema.covariates.len() != x.ncols() {
            return Err(Error::Schema(format!(
                "{} covariate names for {} columns",
                schema.covariates.len(),
                x.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::DegenerateSample(format!("need at least 2 observations, got {n}")));
        }
        for (i, &v) in y.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Validation {
                    row: i + 1,
                    message: format!("outcome must be 0 or 1, got {v}"),
                });
            }
        }
        for (i, &v) in d.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Validation {
                    row: i + 1,
                    message: format!("treatment must be finite, got {v}"),
                });
            }
        }
        for i in 0..n {
            for j in 0..x.ncols() {
                if !x[(i, j)].is_finite() {
                    return Err(Error::Validation {
                        row: i + 1,
                        message: format!("covariate '{}' is not finite", schema.covariates[j]),
                    });
                }
            }
        }
        Ok(Dataset { y, d, x, schema })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x(&self) -> &Mat<f64> {
        &self.x
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    pub fn covariate_row(&self, i: usize) -> Vec<f64> {
        (0..self.p()).map(|j| self.x[(i, j)]).collect()
    }

    pub fn is_binary_treatment(&self) -> bool {
        self.d.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn require_binary_treatment(&self) -> Result<()> {
        match self.d.iter().position(|&v| v != 0.0 && v != 1.0) {
            None => Ok(()),
            Some(i) => Err(Error::Validation {
                row: i + 1,
                message: format!("treatment must be 0 or 1 for this task, got {}", self.d[i]),
            }),
        }
    }

    /// Rows in the given order (indices are 0-based).
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let x = Mat::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]);
        Dataset::with_schema(
            rows.iter().map(|&i| self.y[i]).collect(),
            rows.iter().map(|&i| self.d[i]).collect(),
            x,
            self.schema.clone(),
        )
    }

    /// Kernel input matrix `[d, x]` with the treatment in column 0.
    pub fn design_points(&self) -> Mat<f64> {
        Mat::from_fn(self.n(), self.p() + 1, |i, j| {
            if j == 0 {
                self.d[i]
            } else {
                self.x[(i, j - 1)]
            }
        })
    }

    /// Kernel inputs `[t, x]` with the treatment column replaced by `t`.
    pub fn points_at(&self, t: f64) -> Mat<f64> {
        Mat::from_fn(self.n(), self.p() + 1, |i, j| if j == 0 { t } else { self.x[(i, j - 1)] })
    }

    /// Writes the dataset as CSV; finite doubles round-trip bit-exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::io::BufWriter::new(File::create(path).map_err(io)?);
        let mut header = vec![self.schema.y.clone(), self.schema.d.clone()];
        header.extend(self.schema.covariates.iter().cloned());
        writeln!(f, "{}", header.join(",")).map_err(io)?;
        for i in 0..self.n() {
            let mut line = format!("{},{}", self.y[i], self.d[i]);
            for j in 0..self.p() {
                line.push(',');
                line.push_str(&format!("{}", self.x[(i, j)]));
            }
            writeln!(f, "{line}").map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// Reads a headed CSV, picking columns by name.
pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in {}", path.display())))
    };
    let y_col = find(&schema.y)?;
    let d_col = find(&schema.d)?;
    let x_cols = schema.covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |c: usize, name: &str| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                message: format!("'{raw}' is not a number"),
            })
        };
        let yv = cell(y_col, &schema.y)?;
        if yv != 0.0 && yv != 1.0 {
            return Err(Error::Validation {
                row,
                message: format!("outcome '{}' must be 0 or 1, got {yv}", schema.y),
            });
        }
        y.push(yv);
        d.push(cell(d_col, &schema.d)?);
        for (&c, name) in x_cols.iter().zip(&schema.covariates) {
            xs.push(cell(c, name)?);
        }
    }
    let n = y.len();
    let p = x_cols.len();
    let x = Mat::from_fn(n, p, |i, j| xs[i * p + j]);
    Dataset::with_schema(y, d, x, schema.clone())
}

/// 0-based indices of scores inside `[lo, hi]`.
pub fn overlap_indices(pscores: &[f64], lo: f64, hi: f64) -> Result<Vec<usize>> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::config(format!("trimming bounds must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]")));
    }
    Ok(pscores
        .iter()
        .enumerate()
        .filter(|(_, &s)| lo <= s && s <= hi)
        .map(|(i, _)| i)
        .collect())
}

/// Keeps rows whose score lies in `[lo, hi]`; returns the kept 0-based indices.
pub fn trim_by_overlap(data: &Dataset, pscores: &[f64], lo: f64, hi: f64) -> Result<(Dataset, Vec<usize>)> {
    if pscores.len() != data.n() {
        return Err(Error::shape(format!(
            "{} scores for {} observations",
            pscores.len(),
            data.n()
        )));
    }
    let kept = overlap_indices(pscores, lo, hi)?;
    if kept.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "{} observation(s) have a propensity score in [{lo}, {hi}]",
            kept.len()
        )));
    }
    Ok((data.subset(&kept)?, kept))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Pilot estimation and posterior inference both use the full sample.
    #[default]
    FullReuse,
    /// A random half is used for pilot estimation and the other half for inference.
    HalfSplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub pilot_indices: Vec<usize>,
    pub inference_indices: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    /// Exchanges the roles of the two halves.
    pub fn swapped(mut self) -> Self {
        std::mem::swap(&mut self.pilot_indices, &mut self.inference_indices);
        self
    }
}

/// Deterministic given `seed`. Half-split sends the first `⌊n/2⌋` entries of a
/// random permutation to pilot estimation and the rest to inference.
pub fn make_split(n: usize, mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    make_split_keyed(n, mode, StreamKey::new(seed))
}

pub(crate) fn make_split_keyed(n: usize, mode: SplitMode, key: StreamKey) -> Result<SplitPlan> {
    match mode {
        SplitMode::FullReuse => Ok(SplitPlan {
            mode,
            pilot_indices: (0..n).collect(),
            inference_indices: (0..n).collect(),
            seed: key.seed,
        }),
        SplitMode::HalfSplit => {
            if n < 4 {
                return Err(Error::config(format!("half-split needs n >= 4, got {n}")));
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut key.stream(Purpose::Split, 0));
            let mut pilot = perm[..n / 2].to_vec();
            let mut inference = perm[n / 2..].to_vec();
            pilot.sort_unstable();
            inference.sort_unstable();
            Ok(SplitPlan {
                mode,
                pilot_indices: pilot,
                inference_indices: inference,
                seed: key.seed,
            })
        }
    }
}
