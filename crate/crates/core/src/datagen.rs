//! Synthetic classification data, symmetric label noise, long-tailed
//! subsampling and train/validation/test splits.
//!
//! Every generator is a pure function of its inputs and seed.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{stream_raw, StreamRng};

/// Examples with observed labels, their pre-corruption labels and a clean flag.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub true_labels: Vec<usize>,
    /// `flags[i]` is true when `labels[i] == true_labels[i]`.
    pub flags: Vec<bool>,
    pub num_classes: usize,
}

impl LabeledDataset {
    /// Clean dataset: observed labels are the true labels.
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let flags = vec![true; labels.len()];
        let ds = LabeledDataset {
            features,
            true_labels: labels.clone(),
            labels,
            flags,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.rank() != 2 || self.features.rows() != n {
            return Err(Error::dim("feature rows differ from label count"));
        }
        if self.true_labels.len() != n || self.flags.len() != n {
            return Err(Error::dim("label bookkeeping vectors differ in length"));
        }
        for i in 0..n {
            if self.labels[i] >= self.num_classes || self.true_labels[i] >= self.num_classes {
                return Err(Error::Validation(format!("example {i} has a label out of range")));
            }
            if self.flags[i] != (self.labels[i] == self.true_labels[i]) {
                return Err(Error::Validation(format!("example {i} has a stale clean flag")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.row_len()
    }

    /// Counts of observed labels per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn noisy_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.flags.iter().filter(|f| !**f).count() as f64 / self.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        LabeledDataset {
            features: Tensor::new(vec![indices.len(), d], data).expect("consistent"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            true_labels: indices.iter().map(|&i| self.true_labels[i]).collect(),
            flags: indices.iter().map(|&i| self.flags[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Features and observed labels of the given examples.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        (
            Tensor::new(vec![indices.len(), d], data).expect("consistent"),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

fn seeded(seed: u64) -> StreamRng {
    stream_raw(seed, crate::rng::Stream::Dataset as u64)
}

/// Gaussian clusters, `per_class` examples each, class-major order.
///
/// Class means are the standard basis vectors when `dim >= classes`
/// (vertices of a simplex), otherwise evenly spaced points on the unit circle
/// in the first two coordinates. `spread` is the per-coordinate standard
/// deviation.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::config("need at least two classes"));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::config(format!("spread {spread} must be positive")));
    }
    if dim < 2 {
        return Err(Error::config("need at least two feature dimensions"));
    }
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            let mut m = vec![0.0; dim];
            if dim >= classes {
                m[k] = 1.0;
            } else {
                let a = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
                m[0] = a.cos();
                m[1] = a.sin();
            }
            m
        })
        .collect();
    let noise = Normal::new(0.0, spread).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(mean.iter().map(|mu| mu + noise.sample(&mut rng)));
            labels.push(k);
        }
    }
    let features = Tensor::new(vec![labels.len(), dim], data)?;
    LabeledDataset::new(features, labels, classes)
}

/// Replaces each label, with probability `rate`, by a class drawn uniformly
/// from all classes (the original class included).
pub fn inject_symmetric_noise(ds: &LabeledDataset, rate: f64, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config(format!("noise rate {rate} outside [0, 1]")));
    }
    let mut out = ds.clone();
    let mut rng = seeded(seed);
    for i in 0..out.len() {
        if rng.random::<f64>() < rate {
            out.labels[i] = rng.random_range(0..out.num_classes);
        }
        out.flags[i] = out.labels[i] == out.true_labels[i];
    }
    Ok(out)
}

/// Per-class decay ratio for an imbalance factor: `F^(-1/(c-1))`.
pub fn longtail_mu(imbalance_factor: f64, classes: usize) -> f64 {
    imbalance_factor.powf(-1.0 / (classes as f64 - 1.0))
}

/// Number of examples class `i` keeps out of `n`.
pub fn longtail_count(n: usize, mu: f64, class: usize) -> usize {
    (n as f64 * mu.powi(class as i32)).round() as usize
}

/// Keeps `round(n_i * mu^i)` examples of class `i`, chosen uniformly without
/// replacement, where class 0 is the head.
pub fn make_longtail(ds: &LabeledDataset, imbalance_factor: f64, seed: u64) -> Result<LabeledDataset> {
    if !(imbalance_factor >= 1.0) || !imbalance_factor.is_finite() {
        return Err(Error::config(format!("imbalance factor {imbalance_factor} must be >= 1")));
    }
    let c = ds.num_classes;
    if c < 2 {
        return Err(Error::config("need at least two classes"));
    }
    let mu = longtail_mu(imbalance_factor, c);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = seeded(seed);
    let mut keep = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        let target = longtail_count(members.len(), mu, class);
        if target == 0 {
            return Err(Error::config(format!(
                "class {class} would keep no examples (n = {}, mu = {mu})",
                members.len()
            )));
        }
        let picked = index::sample(&mut rng, members.len(), target);
        keep.extend(picked.iter().map(|p| members[p]));
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Sizes of a train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_n: usize,
    pub val_m: usize,
    pub test_n: usize,
    /// Draw validation examples only from clean-flagged examples.
    pub val_is_clean: bool,
    /// Spread validation examples evenly over the observed classes.
    pub stratified: bool,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Disjoint random split. Validation is taken first, then training and test
/// come from the remaining examples.
pub fn split(ds: &LabeledDataset, spec: &SplitSpec, seed: u64) -> Result<Splits> {
    if spec.train_n == 0 || spec.val_m == 0 || spec.test_n == 0 {
        return Err(Error::config("split sizes must be positive"));
    }
    let total = spec.train_n + spec.val_m + spec.test_n;
    if total > ds.len() {
        return Err(Error::config(format!(
            "split asks for {total} examples but the dataset has {}",
            ds.len()
        )));
    }
    let mut rng = seeded(seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);

    let eligible = |i: usize| !spec.val_is_clean || ds.flags[i];
    let mut taken = vec![false; ds.len()];
    let mut val = Vec::with_capacity(spec.val_m);
    if spec.stratified {
        let c = ds.num_classes;
        let mut quota: Vec<usize> = (0..c)
            .map(|k| spec.val_m / c + usize::from(k < spec.val_m % c))
            .collect();
        for &i in &order {
            let y = ds.labels[i];
            if quota[y] > 0 && eligible(i) {
                quota[y] -= 1;
                taken[i] = true;
                val.push(i);
            }
        }
        if let Some(k) = quota.iter().position(|&q| q > 0) {
            return Err(Error::config(format!(
                "not enough {}examples of class {k} for the validation set",
                if spec.val_is_clean { "clean " } else { "" }
            )));
        }
    } else {
        for &i in &order {
            if val.len() == spec.val_m {
                break;
            }
            if eligible(i) {
                taken[i] = true;
                val.push(i);
            }
        }
        if val.len() < spec.val_m {
            return Err(Error::config("not enough clean examples for the validation set"));
        }
    }
    let rest: Vec<usize> = order.into_iter().filter(|&i| !taken[i]).collect();
    let train = &rest[..spec.train_n];
    let test = &rest[spec.train_n..spec.train_n + spec.test_n];
    Ok(Splits {
        train: ds.subset(train),
        val: ds.subset(&val),
        test: ds.subset(test),
    })
}

/// Writes `c,D_0` on the first line, then one `features...,label` row per example.
pub fn write_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record([ds.num_classes.to_string(), ds.dim().to_string()])
        .map_err(|e| Error::csv(path, e))?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.labels[i].to_string());
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the format of [`write_csv`]; every example is treated as clean.
pub fn read_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut records = r.records();
    let bad = |msg: String| Error::Validation(format!("{}: {msg}", path.display()));
    let header = records
        .next()
        .ok_or_else(|| bad("missing header".into()))?
        .map_err(|e| Error::csv(path, e))?;
    if header.len() != 2 {
        return Err(bad("header must be `classes,dim`".into()));
    }
    let parse_usize = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(format!("{s}: {e}")));
    let classes = parse_usize(&header[0])?;
    let dim = parse_usize(&header[1])?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() != dim + 1 {
            return Err(bad(format!("row {} has {} fields, expected {}", line + 2, rec.len(), dim + 1)));
        }
        for f in rec.iter().take(dim) {
            data.push(f.trim().parse::<f64>().map_err(|e| bad(format!("{f}: {e}")))?);
        }
        labels.push(parse_usize(&rec[dim])?);
    }
    let features = Tensor::new(vec![labels.len(), dim], data)?;
    LabeledDataset::new(features, labels, classes)
}

/// Recipe for a noisy synthetic experiment: blobs, optional long tail, a
/// split, then symmetric noise on the training part only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobTask {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default)]
    pub imbalance_factor: Option<f64>,
    pub split: SplitSpec,
}

impl BlobTask {
    pub fn build(&self, seed: u64) -> Result<Splits> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::config(format!("noise rate {} outside [0, 1]", self.noise_rate)));
        }
        let mut ds = make_blobs(self.classes, self.per_class, self.dim, self.spread, seed)?;
        if let Some(f) = self.imbalance_factor {
            ds = make_longtail(&ds, f, seed)?;
        }
        let mut splits = split(&ds, &self.split, seed)?;
        splits.train = inject_symmetric_noise(&splits.train, self.noise_rate, seed)?;
        Ok(splits)
    }
}
