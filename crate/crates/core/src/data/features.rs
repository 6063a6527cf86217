//! Fixed-width tapping feature vectors.
//!
//! Slots `0..48` are six families x eight statistics, family-major:
//! speed, acceleration, frequency, period, amplitude, wrist displacement,
//! each as mean, std, median, min, max, cv, slope, iqr. Slots `48..57` are
//! recording-level scalars; see [`SCALAR_NAMES`]. `docs/feature-schema.md`
//! gives units for each slot.

use crate::data::landmarks::{compute_angle_signal, interpolate_gaps, AngleSignal, LandmarkSequence};
use crate::data::taps::{detect_taps, TapEvents};
use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_WIDTH: usize = 57;

pub const FAMILY_NAMES: [&str; 6] = ["speed", "accel", "freq", "period", "amp", "wrist"];
pub const STAT_NAMES: [&str; 8] = ["mean", "std", "median", "min", "max", "cv", "slope", "iqr"];
pub const SCALAR_NAMES: [&str; 9] = [
    "duration_s",
    "peak_rate_hz",
    "angle_range",
    "angle_mean",
    "angle_std",
    "amp_decrement",
    "period_ratio",
    "interp_fraction",
    "tap_count",
];
/// Slots filled by the schema before padding.
pub const SCHEMA_WIDTH: usize = FAMILY_NAMES.len() * STAT_NAMES.len() + SCALAR_NAMES.len();

/// Default gap length (frames) bridged by interpolation during extraction.
pub const DEFAULT_MAX_GAP: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Name of every slot for a vector of `width`; padding slots are `pad{i}`.
pub fn feature_names(width: usize) -> Vec<String> {
    let mut names: Vec<String> = FAMILY_NAMES
        .iter()
        .flat_map(|f| STAT_NAMES.iter().map(move |s| format!("{f}_{s}")))
        .chain(SCALAR_NAMES.iter().map(|s| s.to_string()))
        .collect();
    names.truncate(width);
    let n = names.len();
    names.extend((n..width).map(|i| format!("pad{i}")));
    names
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The eight summary statistics of `xs`. Slope is the least-squares trend
/// per sample index; cv is 0 when the mean is 0.
pub fn summarize(xs: &[f64]) -> Option<[f64; 8]> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cv = if mean.abs() > 0.0 { std / mean.abs() } else { 0.0 };
    let t_mean = (n - 1.0) / 2.0;
    let sxx: f64 = (0..xs.len()).map(|i| (i as f64 - t_mean).powi(2)).sum();
    let slope = if sxx > 0.0 {
        xs.iter()
            .enumerate()
            .map(|(i, x)| (i as f64 - t_mean) * (x - mean))
            .sum::<f64>()
            / sxx
    } else {
        0.0
    };
    Some([
        mean,
        std,
        quantile(&sorted, 0.5),
        sorted[0],
        sorted[sorted.len() - 1],
        cv,
        slope,
        quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
    ])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean of the second half over the mean of the first half; 1 when there
/// is too little data or the first half averages 0.
fn half_ratio(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 1.0;
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    let ma = mean(a);
    if ma == 0.0 {
        1.0
    } else {
        mean(b) / ma
    }
}

/// Feature vector of one clean segment.
///
/// `wrist` holds one position per sample of `sig`. The result is padded with
/// zeros or truncated to `width`.
pub fn extract_features(
    sig: &AngleSignal,
    wrist: &[[f64; 2]],
    events: &TapEvents,
    width: usize,
) -> Result<FeatureVector> {
    if wrist.len() != sig.len() {
        return Err(Error::shape(format!(
            "wrist track has {} samples, angle signal {}",
            wrist.len(),
            sig.len()
        )));
    }
    let r = sig.rate_hz;
    let a = &sig.angles;
    let speed: Vec<f64> = a.windows(2).map(|w| (w[1] - w[0]).abs() * r).collect();
    let accel: Vec<f64> = a.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs() * r * r).collect();
    let freq: Vec<f64> = events.periods.iter().map(|p| 1.0 / p).collect();
    let disp: Vec<f64> = wrist
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .collect();
    let families: [(&str, &[f64]); 6] = [
        ("speed", &speed),
        ("acceleration", &accel),
        ("frequency", &freq),
        ("period", &events.periods),
        ("amplitude", &events.amplitudes),
        ("wrist displacement", &disp),
    ];
    let mut values = Vec::with_capacity(SCHEMA_WIDTH.max(width));
    for (name, xs) in families {
        let s = summarize(xs).ok_or_else(|| Error::data(format!("feature family `{name}` is empty")))?;
        values.extend_from_slice(&s);
    }
    let angle_stats = summarize(a).ok_or_else(|| Error::data("empty angle signal"))?;
    let duration = sig.duration();
    values.extend_from_slice(&[
        duration,
        events.tap_count() as f64 / duration,
        angle_stats[4] - angle_stats[3],
        angle_stats[0],
        angle_stats[1],
        half_ratio(&events.amplitudes),
        half_ratio(&events.periods),
        sig.interpolated as f64 / sig.len() as f64,
        events.tap_count() as f64,
    ]);
    values.resize(width, 0.0);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("feature slot {i}")));
    }
    Ok(FeatureVector { values })
}

/// Full pipeline for one recording: angle signal, gap interpolation, tap
/// detection on the longest clean segment, and feature extraction.
pub fn extract_from_landmarks(seq: &LandmarkSequence, width: usize, max_gap_frames: usize) -> Result<FeatureVector> {
    let sig = compute_angle_signal(seq)?;
    let segments = interpolate_gaps(&sig, max_gap_frames)?;
    let seg = segments
        .iter()
        .max_by_key(|s| (s.len(), std::cmp::Reverse(s.start_frame)))
        .expect("interpolate_gaps returns at least one segment");
    let events = detect_taps(seg)?;
    let wrist = seq.wrist_track(seg)?;
    extract_features(seg, &wrist, &events, width)
}
