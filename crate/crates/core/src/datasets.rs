//! Seeded synthetic tasks, CSV ingestion and mini-batch iteration.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{PinsError, Result};
use crate::models::Input;

/// Fractions used by the synthetic generators.
pub const DEFAULT_SPLIT: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense { dim: usize, data: Vec<f32> },
    Tokens { seq_len: usize, data: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub noise: f64,
    pub label_noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Features,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub num_classes: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices tagged with `split`, in row order.
    pub fn rows(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn input(&self, rows: &[usize]) -> Input {
        match &self.features {
            Features::Dense { dim, data } => {
                let mut out = Vec::with_capacity(rows.len() * dim);
                for &r in rows {
                    out.extend_from_slice(&data[r * dim..(r + 1) * dim]);
                }
                Input::Dense(Tensor::new(vec![rows.len(), *dim], out).expect("non-empty batch"))
            }
            Features::Tokens { seq_len, data } => {
                let mut ids = Vec::with_capacity(rows.len() * seq_len);
                for &r in rows {
                    ids.extend_from_slice(&data[r * seq_len..(r + 1) * seq_len]);
                }
                Input::Tokens {
                    seq_len: *seq_len,
                    ids,
                }
            }
        }
    }

    pub fn labels_for(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }

    /// Flips `round(rate * n_train)` train labels to a different class.
    pub fn with_label_noise(mut self, rate: f64, seed: u64) -> Result<Dataset> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(PinsError::Config(format!("label noise {rate} not in [0, 1]")));
        }
        if rate == 0.0 {
            return Ok(self);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = self.rows(Split::Train);
        train.shuffle(&mut rng);
        let flips = round_half_up(rate * train.len() as f64).min(train.len());
        for &r in &train[..flips] {
            let shift = if self.num_classes == 2 {
                1
            } else {
                rng.random_range(1..self.num_classes)
            };
            self.labels[r] = (self.labels[r] + shift) % self.num_classes;
        }
        self.meta.label_noise = rate;
        Ok(self)
    }

    /// Writes features, label and split as CSV with a header row.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let (width, prefix) = match &self.features {
            Features::Dense { dim, .. } => (*dim, "f"),
            Features::Tokens { seq_len, .. } => (*seq_len, "t"),
        };
        let mut header: Vec<String> = (0..width).map(|i| format!("{prefix}{i}")).collect();
        header.push("label".into());
        header.push("split".into());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = match &self.features {
                Features::Dense { dim, data } => {
                    data[r * dim..(r + 1) * dim].iter().map(|v| v.to_string()).collect()
                }
                Features::Tokens { seq_len, data } => data[r * seq_len..(r + 1) * seq_len]
                    .iter()
                    .map(|v| v.to_string())
                    .collect(),
            };
            rec.push(self.labels[r].to_string());
            rec.push(self.splits[r].as_str().to_string());
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| PinsError::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> PinsError {
    PinsError::io(path, std::io::Error::other(e.to_string()))
}

pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Assigns split tags through a seeded permutation of the rows.
fn assign_splits(n: usize, fractions: [f64; 3], rng: &mut ChaCha8Rng) -> Result<Vec<Split>> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(PinsError::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n_train = round_half_up(fractions[0] * n as f64).min(n);
    let n_val = round_half_up(fractions[1] * n as f64).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut splits = vec![Split::Test; n];
    for (pos, &row) in order.iter().enumerate() {
        if pos < n_train {
            splits[row] = Split::Train;
        } else if pos < n_train + n_val {
            splits[row] = Split::Val;
        }
    }
    Ok(splits)
}

/// Two interleaving half circles with isotropic Gaussian noise.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(PinsError::Config(format!("two moons needs n >= 10, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(PinsError::Config(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_outer = n.div_ceil(2);
    let n_inner = n - n_outer;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let arc = |k: usize, count: usize| {
        if count <= 1 {
            0.0
        } else {
            std::f64::consts::PI * k as f64 / (count - 1) as f64
        }
    };
    for k in 0..n_outer {
        let t = arc(k, n_outer);
        data.extend([t.cos(), t.sin()]);
        labels.push(0);
    }
    for k in 0..n_inner {
        let t = arc(k, n_inner);
        data.extend([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("noise is finite and positive");
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    let splits = assign_splits(n, DEFAULT_SPLIT, &mut rng)?;
    Ok(Dataset {
        features: Features::Dense {
            dim: 2,
            data: data.into_iter().map(|v| v as f32).collect(),
        },
        labels,
        splits,
        num_classes: 2,
        meta: DatasetMeta {
            generator: "two_moons".into(),
            seed,
            noise,
            label_noise: 0.0,
        },
    })
}

/// Random bit strings labelled by the parity of their ones, with classes
/// balanced by rejection sampling.
pub fn gen_parity_sequences(n: usize, seq_len: usize, seed: u64) -> Result<Dataset> {
    if seq_len < 2 {
        return Err(PinsError::Config(format!("seq_len must be >= 2, got {seq_len}")));
    }
    if n < 2 {
        return Err(PinsError::Config(format!("parity needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quota = [n.div_ceil(2), n / 2];
    let mut have = [0usize; 2];
    let mut data = Vec::with_capacity(n * seq_len);
    let mut labels = Vec::with_capacity(n);
    let mut seq = vec![0usize; seq_len];
    while labels.len() < n {
        for s in &mut seq {
            *s = rng.random_range(0..2);
        }
        let label = parity(&seq);
        if have[label] < quota[label] {
            have[label] += 1;
            data.extend_from_slice(&seq);
            labels.push(label);
        }
    }
    let splits = assign_splits(n, DEFAULT_SPLIT, &mut rng)?;
    Ok(Dataset {
        features: Features::Tokens { seq_len, data },
        labels,
        splits,
        num_classes: 2,
        meta: DatasetMeta {
            generator: "parity".into(),
            seed,
            noise: 0.0,
            label_noise: 0.0,
        },
    })
}

pub fn parity(bits: &[usize]) -> usize {
    bits.iter().filter(|&&b| b == 1).count() % 2
}

/// Reads a rectangular numeric CSV with a header row. Features are
/// standardized with train-split statistics; labels are factorized in order
/// of first appearance. A `split` column, if present, fixes each row's split
/// instead of the seeded assignment.
pub fn load_csv(path: &Path, label_column: &str, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| PinsError::Ingestion {
            row: 1,
            reason: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| PinsError::Ingestion {
            row: 1,
            reason: format!("unknown label column {label_column:?}"),
        })?;
    let split_idx = headers.iter().position(|h| h == "split" && label_column != "split");
    let width = headers.len();
    let dim = width - 1 - usize::from(split_idx.is_some());
    let mut given_splits = Vec::new();

    let mut features: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut classes: HashMap<String, usize> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| PinsError::Ingestion {
            row: line,
            reason: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(PinsError::Ingestion {
                row: line,
                reason: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                let next = classes.len();
                labels.push(*classes.entry(cell.trim().to_string()).or_insert(next));
            } else if Some(j) == split_idx {
                given_splits.push(Split::parse(cell.trim()).ok_or_else(|| PinsError::Ingestion {
                    row: line,
                    reason: format!("unknown split {cell:?}"),
                })?);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| PinsError::Ingestion {
                    row: line,
                    reason: format!("non-numeric value {cell:?} in column {:?}", &headers[j]),
                })?;
                features.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(PinsError::Ingestion {
            row: 2,
            reason: "no data rows".into(),
        });
    }
    let splits = if split_idx.is_some() {
        given_splits
    } else {
        assign_splits(n, fractions, &mut ChaCha8Rng::seed_from_u64(seed))?
    };

    let train: Vec<usize> = (0..n).filter(|&r| splits[r] == Split::Train).collect();
    let stats_rows: &[usize] = if train.is_empty() { &[] } else { &train };
    for j in 0..dim {
        let (mean, std) = if stats_rows.is_empty() {
            (0.0, 1.0)
        } else {
            let m = stats_rows.iter().map(|&r| features[r * dim + j]).sum::<f64>()
                / stats_rows.len() as f64;
            let var = stats_rows
                .iter()
                .map(|&r| (features[r * dim + j] - m).powi(2))
                .sum::<f64>()
                / stats_rows.len() as f64;
            (m, if var > 1e-12 { var.sqrt() } else { 1.0 })
        };
        for r in 0..n {
            let v = &mut features[r * dim + j];
            *v = (*v - mean) / std;
        }
    }

    Ok(Dataset {
        features: Features::Dense {
            dim,
            data: features.into_iter().map(|v| v as f32).collect(),
        },
        labels,
        splits,
        num_classes: classes.len().max(1),
        meta: DatasetMeta {
            generator: format!("csv:{}", path.display()),
            seed,
            noise: 0.0,
            label_noise: 0.0,
        },
    })
}

/// Seeded shuffle of the split's rows, chunked into batches; the final short
/// batch is kept.
pub fn batch_iter(
    dataset: &Dataset,
    split: Split,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(PinsError::Config("batch_size must be >= 1".into()));
    }
    let mut rows = dataset.rows(split);
    if rows.is_empty() {
        return Err(PinsError::Iteration(format!("{} split is empty", split.as_str())));
    }
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(rows.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TwoMoons,
    Parity,
    Csv,
}

/// Dataset section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub task: Task,
    pub n: usize,
    pub noise: f64,
    /// Fraction of train labels flipped after generation.
    pub label_noise: f64,
    pub seq_len: usize,
    pub csv_path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            task: Task::TwoMoons,
            n: 1000,
            noise: 0.2,
            label_noise: 0.0,
            seq_len: 16,
            csv_path: None,
            label_column: None,
            split: DEFAULT_SPLIT,
        }
    }
}

impl DataConfig {
    pub fn build(&self, seed: u64) -> Result<Dataset> {
        let ds = match self.task {
            Task::TwoMoons => gen_two_moons(self.n, self.noise, seed)?,
            Task::Parity => gen_parity_sequences(self.n, self.seq_len, seed)?,
            Task::Csv => {
                let path = self
                    .csv_path
                    .as_ref()
                    .ok_or_else(|| PinsError::Config("task csv requires csv_path".into()))?;
                let label = self.label_column.as_deref().unwrap_or("label");
                load_csv(path, label, self.split, seed)?
            }
        };
        ds.with_label_noise(self.label_noise, seed ^ 0x6c61_6265_6c5f_6e6f)
    }
}
