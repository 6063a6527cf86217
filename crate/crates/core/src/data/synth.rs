use crate::data::{Dataset, NUM_SEVERITY_CLASSES};
use crate::error::{Error, Result};
use crate::numerics::{dot, Mat, Rng};

/// Unit-variance feature width of the generated clusters.
const SYNTH_WIDTH: usize = 57;

/// `k` orthonormal random directions in `R^dim` (Gram-Schmidt on Gaussian draws).
fn orthonormal_directions(k: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for u in &out {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            out.push(v);
        }
    }
    out
}

/// Five isotropic unit-variance Gaussian clusters in `R^57`.
///
/// Class `c` is centred at `separation * u_c` for orthonormal `u_c`, so any
/// two means are `separation * sqrt(2)` apart. Rows are grouped by class.
pub fn synth_generate(n_per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::param("synth: n_per_class must be at least 1"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::param(format!(
            "synth: separation {separation} must be finite and >= 0"
        )));
    }
    let mut rng = Rng::new(seed);
    let dirs = orthonormal_directions(NUM_SEVERITY_CLASSES, SYNTH_WIDTH, &mut rng);
    let n = n_per_class * NUM_SEVERITY_CLASSES;
    let mut data = Vec::with_capacity(n * SYNTH_WIDTH);
    let mut labels = Vec::with_capacity(n);
    for (class, dir) in dirs.iter().enumerate() {
        for _ in 0..n_per_class {
            data.extend(dir.iter().map(|d| separation * d + rng.normal()));
            labels.push(class);
        }
    }
    Dataset::new(
        Mat::new(n, SYNTH_WIDTH, data)?,
        Some(labels),
        format!("synth(n_per_class={n_per_class}, separation={separation}, seed={seed})"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_centroid_accuracy(ds: &Dataset) -> f64 {
        let labels = ds.labels.as_ref().unwrap();
        let w = ds.width();
        let mut cent = vec![vec![0.0; w]; NUM_SEVERITY_CLASSES];
        let mut counts = [0usize; NUM_SEVERITY_CLASSES];
        for (r, &y) in labels.iter().enumerate() {
            counts[y] += 1;
            cent[y].iter_mut().zip(ds.features.row(r)).for_each(|(c, v)| *c += v);
        }
        for (c, n) in cent.iter_mut().zip(counts) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        let hits = labels
            .iter()
            .enumerate()
            .filter(|&(r, &y)| {
                let row = ds.features.row(r);
                let d = |c: &Vec<f64>| c.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                let best = (0..NUM_SEVERITY_CLASSES)
                    .min_by(|&a, &b| d(&cent[a]).total_cmp(&d(&cent[b])))
                    .unwrap();
                best == y
            })
            .count();
        hits as f64 / labels.len() as f64
    }

    #[test]
    fn directions_are_orthonormal() {
        let d = orthonormal_directions(5, 57, &mut Rng::new(1));
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&d[i], &d[j]) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_clusters_are_centroid_separable() {
        let ds = synth_generate(200, 6.0, 11).unwrap();
        assert_eq!((ds.len(), ds.width()), (1000, 57));
        assert!(nearest_centroid_accuracy(&ds) >= 0.99);
    }

    #[test]
    fn zero_separation_is_near_chance() {
        // Train-set centroids overfit slightly, so allow some headroom above 0.2.
        let acc = nearest_centroid_accuracy(&synth_generate(400, 0.0, 2).unwrap());
        assert!((0.12..0.32).contains(&acc), "{acc}");
    }

    #[test]
    fn deterministic_and_validated() {
        assert_eq!(synth_generate(3, 2.0, 5).unwrap(), synth_generate(3, 2.0, 5).unwrap());
        assert_ne!(
            synth_generate(3, 2.0, 5).unwrap().features,
            synth_generate(3, 2.0, 6).unwrap().features
        );
        assert!(synth_generate(0, 1.0, 0).is_err());
        assert!(synth_generate(1, -1.0, 0).is_err());
    }
}
