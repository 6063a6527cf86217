//! Tap segmentation of the angle signal.

use crate::data::AngleSignal;
use crate::error::{Error, Result};

/// Extrema must rise at least this fraction of the signal range above
/// their surroundings.
pub const MIN_PROMINENCE_FRACTION: f64 = 0.2;
/// Same-type extrema closer than this are merged, keeping the stronger.
pub const MIN_SPACING_S: f64 = 0.1;
pub const MIN_SEGMENT_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TapEvents {
    /// Sample indices, ascending; peaks and valleys alternate.
    pub peaks: Vec<usize>,
    pub valleys: Vec<usize>,
    /// Sub-sample refined peak times (seconds) and angles (degrees).
    pub peak_times: Vec<f64>,
    pub peak_values: Vec<f64>,
    pub valley_values: Vec<f64>,
    /// One per peak with at least one neighbouring valley: peak minus the
    /// mean of its neighbouring valleys.
    pub amplitudes: Vec<f64>,
    /// Intervals between consecutive refined peak times.
    pub periods: Vec<f64>,
}

impl TapEvents {
    pub fn tap_count(&self) -> usize {
        self.peaks.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Peak,
    Valley,
}

/// Prominence of the maximum at `i` of `x`.
fn prominence(x: &[f64], i: usize) -> f64 {
    let h = x[i];
    let mut left_min = h;
    for &v in x[..i].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[i + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Local maxima (plateaus report their first sample) passing the
/// prominence and spacing filters.
fn maxima(x: &[f64], min_prom: f64, min_gap: usize) -> Vec<usize> {
    let mut cand = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                cand.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    cand.retain(|&i| prominence(x, i) >= min_prom);

    // Strongest first; drop anything within `min_gap` of a kept extremum.
    let mut order = cand.clone();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| k.abs_diff(i) >= min_gap) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// Vertex of the parabola through `i-1, i, i+1`: (offset, value).
fn parabolic(x: &[f64], i: usize) -> (f64, f64) {
    if i == 0 || i + 1 >= x.len() {
        return (0.0, x[i]);
    }
    let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
    let denom = a - 2.0 * b + c;
    if denom == 0.0 {
        return (0.0, b);
    }
    let d = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
    (d, b - 0.25 * (a - c) * d)
}

fn insufficient(detail: impl std::fmt::Display) -> Error {
    Error::data(format!("insufficient taps: {detail}"))
}

pub fn detect_taps(sig: &AngleSignal) -> Result<TapEvents> {
    let x = &sig.angles;
    if sig.valid.iter().any(|v| !v) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(
            "tap detection needs a fully valid segment; interpolate gaps first",
        ));
    }
    if sig.duration() < MIN_SEGMENT_S {
        return Err(insufficient(format!(
            "segment lasts {:.3} s, need {MIN_SEGMENT_S} s",
            sig.duration()
        )));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if range <= 0.0 {
        return Err(insufficient("constant signal"));
    }
    let min_prom = MIN_PROMINENCE_FRACTION * range;
    let min_gap = (MIN_SPACING_S * sig.rate_hz).ceil().max(1.0) as usize;
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();

    let mut ext: Vec<(usize, Kind)> = maxima(x, min_prom, min_gap)
        .into_iter()
        .map(|i| (i, Kind::Peak))
        .collect();
    ext.extend(maxima(&neg, min_prom, min_gap).into_iter().map(|i| (i, Kind::Valley)));
    ext.sort_by_key(|e| e.0);

    // Alternation: of two consecutive same-type extrema keep the more extreme.
    let mut alt: Vec<(usize, Kind)> = Vec::with_capacity(ext.len());
    for e in ext {
        match alt.last_mut() {
            Some(last) if last.1 == e.1 => {
                let better = match e.1 {
                    Kind::Peak => x[e.0] > x[last.0],
                    Kind::Valley => x[e.0] < x[last.0],
                };
                if better {
                    *last = e;
                }
            }
            _ => alt.push(e),
        }
    }

    let mut ev = TapEvents {
        peaks: Vec::new(),
        valleys: Vec::new(),
        peak_times: Vec::new(),
        peak_values: Vec::new(),
        valley_values: Vec::new(),
        amplitudes: Vec::new(),
        periods: Vec::new(),
    };
    let mut refined = Vec::with_capacity(alt.len());
    for &(i, kind) in &alt {
        let (d, v) = match kind {
            Kind::Peak => parabolic(x, i),
            Kind::Valley => {
                let (d, v) = parabolic(&neg, i);
                (d, -v)
            }
        };
        refined.push(v);
        match kind {
            Kind::Peak => {
                ev.peaks.push(i);
                ev.peak_times.push((i as f64 + d) / sig.rate_hz);
                ev.peak_values.push(v);
            }
            Kind::Valley => {
                ev.valleys.push(i);
                ev.valley_values.push(v);
            }
        }
    }
    if ev.peaks.len() < 2 {
        return Err(insufficient(format!("found {} peak(s), need 2", ev.peaks.len())));
    }
    for (k, &(_, kind)) in alt.iter().enumerate() {
        if kind != Kind::Peak {
            continue;
        }
        let nb: Vec<f64> = [k.checked_sub(1), Some(k + 1)]
            .into_iter()
            .flatten()
            .filter(|&j| j < alt.len())
            .map(|j| refined[j])
            .collect();
        if !nb.is_empty() {
            ev.amplitudes
                .push(refined[k] - nb.iter().sum::<f64>() / nb.len() as f64);
        }
    }
    ev.periods = ev.peak_times.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn sinusoid(freq: f64, secs: f64, rate: f64, noise: f64, seed: u64) -> AngleSignal {
        let mut rng = Rng::new(seed);
        let n = (secs * rate).round() as usize;
        let a = (0..n)
            .map(|i| 30.0 + 25.0 * (TAU * freq * i as f64 / rate).sin() + noise * 25.0 * rng.normal())
            .collect();
        AngleSignal::from_samples(a, rate)
    }

    #[test]
    fn two_hz_ten_seconds_has_twenty_peaks() {
        let ev = detect_taps(&sinusoid(2.0, 10.0, 30.0, 0.0, 0)).unwrap();
        assert!((19..=21).contains(&ev.tap_count()), "{}", ev.tap_count());
        let mean_amp = ev.amplitudes.iter().sum::<f64>() / ev.amplitudes.len() as f64;
        assert!((mean_amp - 50.0).abs() < 2.5, "{mean_amp}");
        assert!(ev.periods.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn noise_does_not_change_count() {
        let clean = detect_taps(&sinusoid(2.0, 10.0, 30.0, 0.0, 0)).unwrap().tap_count();
        for seed in 1..6 {
            let noisy = detect_taps(&sinusoid(2.0, 10.0, 30.0, 0.01, seed)).unwrap().tap_count();
            assert_eq!(noisy, clean, "seed {seed}");
        }
    }

    #[test]
    fn constant_and_short_signals_rejected() {
        for sig in [
            AngleSignal::from_samples(vec![40.0; 300], 30.0),
            sinusoid(3.0, 0.9, 30.0, 0.0, 0),
        ] {
            let err = detect_taps(&sig).unwrap_err();
            assert!(
                matches!(&err, Error::Data(m) if m.contains("insufficient taps")),
                "{err}"
            );
        }
    }

    #[test]
    fn plateau_peak_found_once() {
        let mut a = vec![0.0; 60];
        for (i, v) in a.iter_mut().enumerate() {
            *v = match i % 20 {
                5..=8 => 10.0,
                _ => 0.0,
            };
        }
        let ev = detect_taps(&AngleSignal::from_samples(a, 30.0)).unwrap();
        assert_eq!(ev.peaks, vec![5, 25, 45]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn alternation_holds(freq in 0.5f64..4.0, noise in 0.0f64..0.05, seed in any::<u64>()) {
            let ev = detect_taps(&sinusoid(freq, 6.0, 30.0, noise, seed)).unwrap();
            let mut all: Vec<(usize, bool)> = ev.peaks.iter().map(|&i| (i, true))
                .chain(ev.valleys.iter().map(|&i| (i, false))).collect();
            all.sort();
            prop_assert!(all.windows(2).all(|w| w[0].1 != w[1].1));
            prop_assert!(ev.periods.iter().all(|&p| p > 0.0));
        }

        #[test]
        fn frequency_within_two_percent(freq in 0.5f64..4.0, rate in 30.0f64..120.0, phase in 0.0f64..1.0) {
            let n = (10.0 * rate) as usize;
            let a = (0..n).map(|i| 30.0 + 25.0 * (TAU * (freq * i as f64 / rate + phase)).sin()).collect();
            let ev = detect_taps(&AngleSignal::from_samples(a, rate)).unwrap();
            let mean_f = ev.periods.iter().map(|p| 1.0 / p).sum::<f64>() / ev.periods.len() as f64;
            prop_assert!((mean_f - freq).abs() <= 0.02 * freq, "{} vs {}", mean_f, freq);
        }
    }
}
