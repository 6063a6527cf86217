use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Probabilities are clamped here before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean sparse categorical cross-entropy and its gradient w.r.t. the
/// softmax logits, `(probs - onehot) / batch`.
pub fn sparse_categorical_crossentropy(probs: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::shape("loss over an empty batch"));
    }
    let k = probs.cols();
    let n = labels.len() as f64;
    let mut grad = probs.clone();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::data(format!("row {r}: label {y} outside [0, {k})")));
        }
        total -= probs.get(r, y).max(PROB_FLOOR).ln();
        let row = grad.row_mut(r);
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g /= n);
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{stable_softmax, Rng};

    #[test]
    fn certain_prediction_costs_nothing() {
        let p = Mat::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let (loss, _) = sparse_categorical_crossentropy(&p, &[1]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_over_five_is_ln5() {
        let p = Mat::new(2, 5, vec![0.2; 10]).unwrap();
        let (loss, g) = sparse_categorical_crossentropy(&p, &[0, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
        assert!((loss - 1.60944).abs() < 1e-5);
        assert!((g.get(0, 0) - (0.2 - 1.0) / 2.0).abs() < 1e-15);
        assert!((g.get(1, 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn matches_per_sample_oracle() {
        let mut rng = Rng::new(5);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| stable_softmax(&(0..4).map(|_| rng.uniform(-3.0, 3.0)).collect::<Vec<_>>()).unwrap())
            .collect();
        let labels: Vec<usize> = (0..6).map(|_| rng.below(4)).collect();
        let p = Mat::from_rows(&rows).unwrap();
        let (loss, _) = sparse_categorical_crossentropy(&p, &labels).unwrap();
        let expect: f64 = rows.iter().zip(&labels).map(|(r, &y)| -r[y].ln()).sum::<f64>() / 6.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let p = Mat::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let (loss, _) = sparse_categorical_crossentropy(&p, &[1]).unwrap();
        assert!((loss - (-PROB_FLOOR.ln())).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_names_row() {
        let p = Mat::new(3, 2, vec![0.5; 6]).unwrap();
        let err = sparse_categorical_crossentropy(&p, &[0, 1, 2]).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("row 2")), "{err}");
    }
}
