//! Hand-landmark recordings and the thumb-index angle signal.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 21;
pub const WRIST: usize = 0;
pub const THUMB_TIP: usize = 4;
pub const INDEX_TIP: usize = 8;

/// Rays shorter than this (in normalized image units) are degenerate.
const MIN_RAY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub points: [[f64; 2]; NUM_LANDMARKS],
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    frames: Vec<Frame>,
}

impl LandmarkSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        for (i, w) in frames.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::data(format!(
                    "frame {}: timestamp {} does not increase past {}",
                    i + 1,
                    w[1].t,
                    w[0].t
                )));
            }
        }
        for (i, f) in frames.iter().enumerate() {
            if !f.t.is_finite() {
                return Err(Error::data(format!("frame {i}: non-finite timestamp")));
            }
            if f.valid && f.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "frame {i}: non-finite coordinate in a valid frame"
                )));
            }
        }
        Ok(LandmarkSequence { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Sampling rate from the median frame interval.
    pub fn rate_hz(&self) -> Result<f64> {
        if self.frames.len() < 2 {
            return Err(Error::data("need at least 2 frames to estimate a frame rate"));
        }
        let mut dt: Vec<f64> = self.frames.windows(2).map(|w| w[1].t - w[0].t).collect();
        dt.sort_by(f64::total_cmp);
        Ok(1.0 / dt[dt.len() / 2])
    }

    /// Wrist positions over the frames of `segment`, with invalid frames
    /// linearly interpolated like the angle signal.
    pub fn wrist_track(&self, segment: &AngleSignal) -> Result<Vec<[f64; 2]>> {
        let range = segment.start_frame..segment.start_frame + segment.len();
        let frames = self
            .frames
            .get(range)
            .ok_or_else(|| Error::shape("segment lies outside the landmark sequence"))?;
        let valid: Vec<bool> = frames.iter().map(|f| f.valid).collect();
        let mut xs: Vec<f64> = frames.iter().map(|f| f.points[WRIST][0]).collect();
        let mut ys: Vec<f64> = frames.iter().map(|f| f.points[WRIST][1]).collect();
        fill_linear(&mut xs, &valid)?;
        fill_linear(&mut ys, &valid)?;
        Ok(xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect())
    }
}

fn header_names() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 0..NUM_LANDMARKS {
        h.push(format!("x{i}"));
        h.push(format!("y{i}"));
    }
    h.push("valid".into());
    h
}

fn parse_flag(cell: &str) -> Option<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Parse `t,x0,y0,...,x20,y20,valid`. Coordinates of invalid frames may be
/// empty or non-numeric; they are stored as NaN.
pub fn read_landmark_csv<R: Read>(reader: R, name: &str) -> Result<LandmarkSequence> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::data(format!("{name}: {e}")))?.clone();
    let expected = header_names();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::data(format!(
            "{name}: landmark header must be `t,x0,y0,...,x20,y20,valid` ({} columns)",
            expected.len()
        )));
    }
    let mut frames = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::data(format!("{name}: row {row}: {e}")))?;
        let valid = parse_flag(&rec[expected.len() - 1])
            .ok_or_else(|| Error::data(format!("{name}: row {row}: valid flag `{}`", &rec[expected.len() - 1])))?;
        let t: f64 = rec[0]
            .parse()
            .map_err(|_| Error::data(format!("{name}: row {row}: timestamp `{}` is not a number", &rec[0])))?;
        let mut points = [[f64::NAN; 2]; NUM_LANDMARKS];
        for (k, p) in points.iter_mut().enumerate() {
            for (d, slot) in p.iter_mut().enumerate() {
                let cell = &rec[1 + 2 * k + d];
                match cell.parse::<f64>() {
                    Ok(v) => *slot = v,
                    Err(_) if !valid => {}
                    Err(_) => {
                        return Err(Error::data(format!(
                            "{name}: row {row}, column {}: `{cell}` is not a number",
                            expected[1 + 2 * k + d]
                        )))
                    }
                }
            }
        }
        frames.push(Frame { t, points, valid });
    }
    LandmarkSequence::new(frames).map_err(|e| match e {
        Error::Data(m) => Error::data(format!("{name}: {m}")),
        other => other,
    })
}

pub fn load_landmark_csv(path: impl AsRef<Path>) -> Result<LandmarkSequence> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_landmark_csv(file, &path.display().to_string())
}

/// Inverse of [`read_landmark_csv`]; invalid frames keep whatever
/// coordinates they hold, NaN written as an empty cell.
pub fn write_landmark_csv_to<W: std::io::Write>(seq: &LandmarkSequence, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::data(format!("writing landmark CSV: {e}"));
    w.write_record(header_names()).map_err(err)?;
    for f in &seq.frames {
        let mut rec = vec![format!("{:?}", f.t)];
        for v in f.points.iter().flatten() {
            rec.push(if v.is_nan() { String::new() } else { format!("{v:?}") });
        }
        rec.push(if f.valid { "1" } else { "0" }.to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::data(format!("writing landmark CSV: {e}")))
}

pub fn write_landmark_csv(seq: &LandmarkSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_landmark_csv_to(seq, file)
}

/// Per-frame thumb-index angle at the wrist, in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSignal {
    pub angles: Vec<f64>,
    pub valid: Vec<bool>,
    pub rate_hz: f64,
    /// Index of the first sample within the source recording.
    pub start_frame: usize,
    /// Samples filled by interpolation.
    pub interpolated: usize,
}

impl AngleSignal {
    /// A fully valid signal starting at frame 0.
    pub fn from_samples(angles: Vec<f64>, rate_hz: f64) -> Self {
        let valid = vec![true; angles.len()];
        AngleSignal {
            angles,
            valid,
            rate_hz,
            start_frame: 0,
            interpolated: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.rate_hz
    }
}

/// Angle between `a - o` and `b - o` in degrees, or `None` if either ray
/// is degenerate.
pub fn ray_angle(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let u = [a[0] - o[0], a[1] - o[1]];
    let v = [b[0] - o[0], b[1] - o[1]];
    let nu = u[0].hypot(u[1]);
    let nv = v[0].hypot(v[1]);
    if nu < MIN_RAY || nv < MIN_RAY {
        return None;
    }
    // atan2 of |cross| and dot stays accurate near 0 and 180 degrees.
    let cross = (u[0] * v[1] - u[1] * v[0]).abs();
    Some(cross.atan2(u[0] * v[0] + u[1] * v[1]).to_degrees())
}

pub fn compute_angle_signal(seq: &LandmarkSequence) -> Result<AngleSignal> {
    let n_valid = seq.frames.iter().filter(|f| f.valid).count();
    if n_valid < 2 {
        return Err(Error::data(format!(
            "angle signal needs 2 valid frames, found {n_valid}"
        )));
    }
    let rate_hz = seq.rate_hz()?;
    let mut angles = Vec::with_capacity(seq.len());
    let mut valid = Vec::with_capacity(seq.len());
    for f in &seq.frames {
        let a = if f.valid {
            ray_angle(f.points[WRIST], f.points[THUMB_TIP], f.points[INDEX_TIP])
        } else {
            None
        };
        valid.push(a.is_some());
        angles.push(a.unwrap_or(f64::NAN));
    }
    Ok(AngleSignal {
        angles,
        valid,
        rate_hz,
        start_frame: 0,
        interpolated: 0,
    })
}

/// Fill invalid entries by linear interpolation between valid neighbours;
/// leading or trailing invalid entries take the nearest valid value.
fn fill_linear(values: &mut [f64], valid: &[bool]) -> Result<usize> {
    let idx: Vec<usize> = (0..values.len()).filter(|&i| valid[i]).collect();
    let (&first, &last) = match (idx.first(), idx.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::data("no valid samples to interpolate from")),
    };
    let mut filled = 0;
    for i in 0..first {
        values[i] = values[first];
        filled += 1;
    }
    for i in last + 1..values.len() {
        values[i] = values[last];
        filled += 1;
    }
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a + 1..b {
            let s = (i - a) as f64 / (b - a) as f64;
            values[i] = values[a] + s * (values[b] - values[a]);
            filled += 1;
        }
    }
    Ok(filled)
}

/// Clean, fully valid segments of `sig`.
///
/// Invalid runs of at most `max_gap_frames` are linearly interpolated;
/// longer runs split the signal. Leading and trailing invalid frames are
/// dropped.
pub fn interpolate_gaps(sig: &AngleSignal, max_gap_frames: usize) -> Result<Vec<AngleSignal>> {
    let valid_idx: Vec<usize> = (0..sig.len()).filter(|&i| sig.valid[i]).collect();
    if valid_idx.is_empty() {
        return Err(Error::data("signal has no valid frames"));
    }
    let mut bounds = Vec::new();
    let mut start = valid_idx[0];
    for w in valid_idx.windows(2) {
        if w[1] - w[0] - 1 > max_gap_frames {
            bounds.push((start, w[0]));
            start = w[1];
        }
    }
    bounds.push((start, *valid_idx.last().unwrap()));

    let mut out = Vec::with_capacity(bounds.len());
    for (a, b) in bounds {
        let mut angles = sig.angles[a..=b].to_vec();
        let filled = fill_linear(&mut angles, &sig.valid[a..=b])?;
        out.push(AngleSignal {
            valid: vec![true; angles.len()],
            angles,
            rate_hz: sig.rate_hz,
            start_frame: sig.start_frame + a,
            interpolated: sig.interpolated + filled,
        });
    }
    Ok(out)
}

/// A frame with the wrist at `wrist`, the thumb ray along +x and the index
/// ray rotated by `deg`.
pub fn frame_with_angle(t: f64, deg: f64, wrist: [f64; 2]) -> Frame {
    let mut points = [[0.5, 0.5]; NUM_LANDMARKS];
    points[WRIST] = wrist;
    points[THUMB_TIP] = [wrist[0] + 0.2, wrist[1]];
    let r = deg.to_radians();
    points[INDEX_TIP] = [wrist[0] + 0.2 * r.cos(), wrist[1] + 0.2 * r.sin()];
    Frame { t, points, valid: true }
}

/// Synthetic tapping recording: angle `centre + amplitude * sin(2 pi f t)`
/// with a stationary wrist.
pub fn synthetic_tapping(freq_hz: f64, duration_s: f64, rate_hz: f64, centre: f64, amplitude: f64) -> LandmarkSequence {
    let n = (duration_s * rate_hz).round() as usize;
    let frames = (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            frame_with_angle(
                t,
                centre + amplitude * (std::f64::consts::TAU * freq_hz * t).sin(),
                [0.5, 0.6],
            )
        })
        .collect();
    LandmarkSequence { frames }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn right_and_zero_angles() {
        assert!((ray_angle([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]).unwrap() - 90.0).abs() < 1e-12);
        assert_eq!(ray_angle([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]).unwrap(), 0.0);
        assert!(ray_angle([0.3, 0.3], [0.3, 0.3], [1.0, 0.0]).is_none());
    }

    #[test]
    fn degenerate_frame_is_invalid_not_fatal() {
        let mut frames: Vec<Frame> = (0..3)
            .map(|i| frame_with_angle(i as f64 / 30.0, 40.0, [0.5, 0.5]))
            .collect();
        frames[1].points[THUMB_TIP] = frames[1].points[WRIST];
        let sig = compute_angle_signal(&LandmarkSequence::new(frames).unwrap()).unwrap();
        assert_eq!(sig.valid, vec![true, false, true]);
    }

    #[test]
    fn recovers_generator_angle() {
        let rate = 30.0;
        let frames: Vec<Frame> = (0..300)
            .map(|i| {
                let t = i as f64 / rate;
                frame_with_angle(
                    t,
                    30.0 + 25.0 * (2.0 * std::f64::consts::PI * 2.0 * t).sin(),
                    [0.4, 0.6],
                )
            })
            .collect();
        let sig = compute_angle_signal(&LandmarkSequence::new(frames.clone()).unwrap()).unwrap();
        assert!((sig.rate_hz - rate).abs() < 1e-9);
        for (i, a) in sig.angles.iter().enumerate() {
            let t = frames[i].t;
            let expect = 30.0 + 25.0 * (2.0 * std::f64::consts::PI * 2.0 * t).sin();
            assert!((a - expect).abs() < 1e-9, "{i}: {a} vs {expect}");
        }
    }

    #[test]
    fn midpoint_fill_and_split() {
        let mut sig = AngleSignal::from_samples(vec![10.0, f64::NAN, 20.0], 30.0);
        sig.valid[1] = false;
        let segs = interpolate_gaps(&sig, 3).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].angles, vec![10.0, 15.0, 20.0]);
        assert_eq!(segs[0].interpolated, 1);

        let mut long = AngleSignal::from_samples(vec![1.0; 10], 30.0);
        for v in &mut long.valid[3..8] {
            *v = false;
        }
        let segs = interpolate_gaps(&long, 3).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start_frame, segs[0].len()), (0, 3));
        assert_eq!((segs[1].start_frame, segs[1].len()), (8, 2));

        let none = AngleSignal {
            valid: vec![false; 4],
            ..AngleSignal::from_samples(vec![0.0; 4], 30.0)
        };
        assert!(interpolate_gaps(&none, 3).is_err());
    }

    #[test]
    fn masked_sinusoid_reconstruction() {
        let rate = 30.0;
        let truth: Vec<f64> = (0..600)
            .map(|i| 30.0 + 25.0 * (2.0 * std::f64::consts::PI * 2.0 * i as f64 / rate).sin())
            .collect();
        let mut sig = AngleSignal::from_samples(truth.clone(), rate);
        let mut rng = Rng::new(8);
        for i in 1..truth.len() - 1 {
            if rng.next_f64() < 0.05 {
                sig.valid[i] = false;
                sig.angles[i] = f64::NAN;
            }
        }
        let segs = interpolate_gaps(&sig, 3).unwrap();
        let seg = &segs[0];
        let mse: f64 = seg
            .angles
            .iter()
            .enumerate()
            .map(|(i, a)| (a - truth[seg.start_frame + i]).powi(2))
            .sum::<f64>()
            / seg.len() as f64;
        assert!(mse.sqrt() < 1.0, "rms {}", mse.sqrt());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let mut text = header_names().join(",");
        text.push('\n');
        for i in 0..3 {
            let f = frame_with_angle(i as f64 * 0.1, 45.0, [0.5, 0.5]);
            let mut cells = vec![format!("{}", f.t)];
            for p in f.points {
                cells.push(p[0].to_string());
                cells.push(p[1].to_string());
            }
            cells.push(if i == 1 { "0".into() } else { "1".into() });
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        let seq = read_landmark_csv(text.as_bytes(), "t").unwrap();
        assert_eq!(seq.len(), 3);
        assert!(!seq.frames()[1].valid);
        assert!(read_landmark_csv("t,x0,y0\n0,1,1\n".as_bytes(), "t").is_err());
        let mut buf = Vec::new();
        write_landmark_csv_to(&seq, &mut buf).unwrap();
        let back = read_landmark_csv(buf.as_slice(), "t").unwrap();
        assert_eq!(back.frames()[0], seq.frames()[0]);
        assert_eq!(back.len(), 3);
        let swapped = text.replacen("\n0.1,", "\n0.0,", 1).replacen("\n0,", "\n0.3,", 1);
        assert!(read_landmark_csv(swapped.as_bytes(), "t").is_err());
    }
}
