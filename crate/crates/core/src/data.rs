//! Dataset container, CSV ingestion, balancing, splits and the synthetic
//! generators.
//!
//! CSV layout: UTF-8, comma-separated, header
//! `feature_0,...,feature_{d-1},label,group`. Labels are `-1`/`1` (or `0`/`1`
//! when label coercion is requested), groups are non-negative integers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Label;

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<Label>,
    groups: Vec<u32>,
    num_groups: usize,
}

impl Dataset {
    /// `features` is row-major `n x dim`. `num_groups` defaults to `max(group) + 1`.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<Label>,
        groups: Vec<u32>,
        num_groups: Option<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::invalid("dataset must contain at least one example"));
        }
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if features.len() != n * dim {
            return Err(Error::Shape {
                what: "feature matrix",
                expected: n * dim,
                got: features.len(),
            });
        }
        if groups.len() != n {
            return Err(Error::Shape {
                what: "group vector",
                expected: n,
                got: groups.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        let observed = groups.iter().copied().max().unwrap_or(0) as usize + 1;
        let num_groups = num_groups.unwrap_or(observed);
        if observed > num_groups {
            return Err(Error::invalid(format!(
                "group id {} out of range for {num_groups} groups",
                observed - 1
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            groups,
            num_groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    #[inline]
    pub fn group(&self, i: usize) -> u32 {
        self.groups[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Number of examples with group `z` and label `y`.
    pub fn cell_count(&self, z: u32, y: Label) -> usize {
        self.groups
            .iter()
            .zip(&self.labels)
            .filter(|&(&g, &l)| g == z && l == y)
            .count()
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_groups];
        for &g in &self.groups {
            counts[g as usize] += 1;
        }
        counts
    }

    /// Mean group id, `z-bar`.
    pub fn mean_group(&self) -> f64 {
        self.groups.iter().map(|&g| f64::from(g)).sum::<f64>() / self.len() as f64
    }

    /// Rows at `indices`, in the given order. Duplicates are allowed.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("subset would be empty"));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut groups = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("index {i} out of range for {} rows", self.len())));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            groups.push(self.groups[i]);
        }
        Ok(Self {
            features,
            dim: self.dim,
            labels,
            groups,
            num_groups: self.num_groups,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let header: Vec<String> = (0..self.dim)
            .map(|k| format!("feature_{k}"))
            .chain(["label".to_string(), "group".to_string()])
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            for v in self.row(i) {
                write!(w, "{},", fmt_f64(*v))?;
            }
            writeln!(w, "{},{}", i8::from(self.labels[i]), self.groups[i])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    /// Map `{0, 1}` labels onto `{-1, +1}`.
    pub coerce_labels: bool,
}

pub fn load_csv(path: &Path, opts: CsvOptions) -> Result<Dataset> {
    let err = |line: u64, msg: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| err(0, e.to_string()))?;

    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let ncols = headers.len();
    if ncols < 3 {
        return Err(err(1, "expected at least one feature plus label and group columns".into()));
    }
    let dim = ncols - 2;
    for (k, name) in headers.iter().enumerate() {
        let expected = match k {
            k if k < dim => format!("feature_{k}"),
            k if k == dim => "label".to_string(),
            _ => "group".to_string(),
        };
        if name.trim() != expected {
            return Err(err(1, format!("unknown column `{name}` at position {k}, expected `{expected}`")));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != ncols {
            return Err(err(line, format!("expected {ncols} fields, found {}", record.len())));
        }
        for (k, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(err(line, format!("missing value in column {}", &headers[k])));
            }
            if k < dim {
                let v: f64 = field
                    .parse()
                    .map_err(|_| err(line, format!("bad float `{field}` in {}", &headers[k])))?;
                if !v.is_finite() {
                    return Err(err(line, format!("non-finite value in {}", &headers[k])));
                }
                features.push(v);
            } else if k == dim {
                let raw: f64 = field
                    .parse()
                    .map_err(|_| err(line, format!("bad label `{field}`")))?;
                let raw = if opts.coerce_labels && raw == 0.0 { -1.0 } else { raw };
                let label = Label::try_from(raw).map_err(|_| err(line, format!("invalid label `{field}`")))?;
                labels.push(label);
            } else {
                let g: u32 = field
                    .parse()
                    .map_err(|_| err(line, format!("bad group `{field}`")))?;
                groups.push(g);
            }
        }
    }
    if labels.is_empty() {
        return Err(err(1, "file contains no data rows".into()));
    }
    Dataset::new(features, dim, labels, groups, None)
}

/// The four cell means of the one-dimensional Gaussian study, keyed by
/// `(group, label)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMeans {
    pub z0_neg: f64,
    pub z1_neg: f64,
    pub z0_pos: f64,
    pub z1_pos: f64,
}

impl CellMeans {
    /// In the order `(z0_neg, z1_neg, z0_pos, z1_pos)`.
    pub fn from_array(mu: [f64; 4]) -> Self {
        Self {
            z0_neg: mu[0],
            z1_neg: mu[1],
            z0_pos: mu[2],
            z1_pos: mu[3],
        }
    }

    pub fn get(&self, z: u32, y: Label) -> f64 {
        match (z, y) {
            (0, Label::Neg) => self.z0_neg,
            (_, Label::Neg) => self.z1_neg,
            (0, Label::Pos) => self.z0_pos,
            (_, Label::Pos) => self.z1_pos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub mu: CellMeans,
    pub sigma: f64,
    pub n_per_cell: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            mu: CellMeans::from_array([-2.0, -0.5, 0.5, 2.0]),
            sigma: 0.7,
            n_per_cell: 1000,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let m = &self.mu;
        if !(m.z0_neg < m.z1_neg && m.z1_neg < 0.0 && 0.0 < m.z0_pos && m.z0_pos < m.z1_pos) {
            return Err(Error::invalid(
                "cell means must satisfy z0_neg < z1_neg < 0 < z0_pos < z1_pos",
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if self.n_per_cell == 0 {
            return Err(Error::invalid("n_per_cell must be at least 1"));
        }
        Ok(())
    }
}

const CELLS: [(u32, Label); 4] = [(0, Label::Neg), (1, Label::Neg), (0, Label::Pos), (1, Label::Pos)];

/// One-dimensional data: `x ~ N(mu[z, y], sigma)`, `n_per_cell` rows per cell,
/// emitted cell by cell.
pub fn generate_synthetic(p: &SyntheticParams, seed: u64) -> Result<Dataset> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4 * p.n_per_cell;
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (z, y) in CELLS {
        let dist = Normal::new(p.mu.get(z, y), p.sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for _ in 0..p.n_per_cell {
            features.push(dist.sample(&mut rng));
            labels.push(y);
            groups.push(z);
        }
    }
    Dataset::new(features, 1, labels, groups, Some(2))
}

/// Census-style tabular stand-in with balanced `(group, label)` cells.
///
/// Features are drawn per cell and loosely follow the structure of census
/// income data after group/label balancing:
///
/// - `x0` age-like: positives concentrate mid-range, negatives are young or old
/// - `x1` education-like: shifted by label
/// - `x2` hours-like: shifted by label and group
/// - `x3` capital-gain-like: mostly zero, heavy-tailed when present, far more
///   often present for positives
/// - `x4` married-like indicator depending on label and group
/// - `x5` relationship-like indicator, a near-perfect group proxy
/// - `x6` occupation-like score mixing group and label
/// - remaining coordinates are noise
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabularParams {
    pub n_per_cell: usize,
    pub dim: usize,
}

impl Default for TabularParams {
    fn default() -> Self {
        Self {
            n_per_cell: 1000,
            dim: 10,
        }
    }
}

fn bernoulli(rng: &mut ChaCha8Rng, logit: f64) -> f64 {
    let p = 1.0 / (1.0 + (-logit).exp());
    if rng.gen::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

fn tabular_row(rng: &mut ChaCha8Rng, z: u32, y: Label, dim: usize, out: &mut Vec<f64>) {
    let unit: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let ys = y.sign();
    let zs = 2.0 * f64::from(z) - 1.0;
    let age = if y.is_pos() {
        0.3 + 0.6 * unit.sample(rng)
    } else {
        let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        side * 1.1 + 0.7 * unit.sample(rng)
    };
    let gain = if rng.gen::<f64>() < if y.is_pos() { 0.25 } else { 0.04 } {
        (1.0 + 0.5 * unit.sample(rng)).exp() / 3.0
    } else {
        0.0
    };
    let row = [
        age,
        0.8 * ys + unit.sample(rng),
        0.5 * ys + 0.5 * zs + unit.sample(rng),
        gain,
        bernoulli(rng, 1.2 * ys + 1.5 * zs),
        bernoulli(rng, 2.5 * zs + 0.5 * ys),
        0.7 * zs + 0.3 * ys + unit.sample(rng),
    ];
    for k in 0..dim {
        out.push(match row.get(k) {
            Some(&v) => v,
            None => unit.sample(rng),
        });
    }
}

pub fn generate_tabular(p: &TabularParams, seed: u64) -> Result<Dataset> {
    if p.dim == 0 || p.n_per_cell == 0 {
        return Err(Error::invalid("tabular generator needs dim >= 1 and n_per_cell >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4 * p.n_per_cell;
    let mut features = Vec::with_capacity(n * p.dim);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (z, y) in CELLS {
        for _ in 0..p.n_per_cell {
            tabular_row(&mut rng, z, y, p.dim, &mut features);
            labels.push(y);
            groups.push(z);
        }
    }
    // interleave cells so that prefixes are representative
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Dataset::new(features, p.dim, labels, groups, Some(2))?.subset(&order)
}

/// Resamples every `(group, label)` cell with replacement up to the size of
/// the largest cell, then shuffles.
pub fn balance_resample(data: &Dataset, seed: u64) -> Result<Dataset> {
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for z in 0..data.num_groups() as u32 {
        for y in [Label::Neg, Label::Pos] {
            let members: Vec<usize> = (0..data.len())
                .filter(|&i| data.group(i) == z && data.label(i) == y)
                .collect();
            if members.is_empty() {
                return Err(Error::EmptyCell(format!("(z={z}, y={})", i8::from(y))));
            }
            cells.push(members);
        }
    }
    let target = cells.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(target * cells.len());
    for members in &cells {
        for _ in 0..target {
            picked.push(members[rng.gen_range(0..members.len())]);
        }
    }
    picked.shuffle(&mut rng);
    data.subset(&picked)
}

/// Random permutation; the first `floor(n * train_fraction)` rows train.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction must lie in (0, 1)"));
    }
    let n = data.len();
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "split of {n} rows at {train_fraction} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((data.subset(&order[..n_train])?, data.subset(&order[n_train..])?))
}
