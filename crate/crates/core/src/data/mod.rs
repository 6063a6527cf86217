//! Feature datasets and the landmark-to-feature pipeline.

mod csvio;
pub mod features;
pub mod landmarks;
mod synth;
pub mod taps;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Mat, Rng};

pub use csvio::{load_feature_csv, read_feature_csv, write_feature_csv, write_feature_csv_to};
pub use features::extract_from_landmarks;
pub use features::{extract_features, feature_names, FeatureVector, DEFAULT_FEATURE_WIDTH};
pub use landmarks::{
    compute_angle_signal, interpolate_gaps, load_landmark_csv, write_landmark_csv, write_landmark_csv_to, AngleSignal,
    LandmarkSequence,
};
pub use synth::synth_generate;
pub use taps::{detect_taps, TapEvents};

/// Severity grades 0 through 4.
pub const NUM_SEVERITY_CLASSES: usize = 5;

/// Per-column standard deviations below this are treated as this value.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// N feature rows with optional severity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Mat,
    pub labels: Option<Vec<usize>>,
    /// Normalization already applied to `features`, if any.
    pub stats: Option<ZScoreStats>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(features: Mat, labels: Option<Vec<usize>>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::data(format!(
                    "{} labels for {} feature rows",
                    l.len(),
                    features.rows()
                )));
            }
            if let Some((i, &y)) = l.iter().enumerate().find(|(_, &y)| y >= NUM_SEVERITY_CLASSES) {
                return Err(Error::data(format!(
                    "row {i}: label {y} outside [0, {NUM_SEVERITY_CLASSES})"
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            stats: None,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    /// Labels, or a data error when the dataset is unlabeled.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::data(format!("dataset `{}` has no labels", self.provenance)))
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let w = self.width();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            features: Mat::new(indices.len(), w, data).expect("subset shape"),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            stats: self.stats.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Per-column mean and population standard deviation.
pub fn zscore_fit(train: &Dataset) -> Result<ZScoreStats> {
    if train.is_empty() {
        return Err(Error::data("cannot fit normalization on an empty dataset"));
    }
    let n = train.len() as f64;
    let w = train.width();
    let mut mean = vec![0.0; w];
    for r in 0..train.len() {
        for (m, v) in mean.iter_mut().zip(train.features.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; w];
    for r in 0..train.len() {
        for ((s, v), m) in var.iter_mut().zip(train.features.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(ZScoreStats { mean, std })
}

pub fn zscore_apply(stats: &ZScoreStats, ds: &Dataset) -> Result<Dataset> {
    if stats.mean.len() != ds.width() || stats.std.len() != ds.width() {
        return Err(Error::shape(format!(
            "normalization for {} columns applied to {}",
            stats.mean.len(),
            ds.width()
        )));
    }
    let mut out = ds.clone();
    for r in 0..out.len() {
        for ((v, m), s) in out.features.row_mut(r).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s.max(STD_FLOOR);
        }
    }
    out.stats = Some(stats.clone());
    Ok(out)
}

/// Label indices grouped by class, ascending.
fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        groups.entry(y).or_default().push(i);
    }
    groups
}

/// Class-stratified split into `(train, test)`.
///
/// Each class contributes `round(n_c * test_fraction)` rows to the test
/// side, clamped so both sides keep at least one row of every class.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let labels = ds.require_labels()?;
    let mut rng = Rng::new(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in by_class(labels) {
        if idx.len() < 2 {
            return Err(Error::data(format!(
                "class {class} has {} sample(s); stratified split needs at least 2",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}
