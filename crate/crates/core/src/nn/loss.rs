use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One-hot matrix `(n, c)` for integer labels.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(vec![labels.len(), num_classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::Validation(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        t.row_mut(i)[y] = 1.0;
    }
    Ok(t)
}

/// Recovers class indices from a one-hot matrix, rejecting anything else.
pub fn labels_from_one_hot(one_hot: &Tensor) -> Result<Vec<usize>> {
    if one_hot.rank() != 2 {
        return Err(Error::dim("labels must be a (n, c) matrix"));
    }
    (0..one_hot.rows())
        .map(|i| {
            let row = one_hot.row(i);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != row.len() - 1 {
                return Err(Error::Validation(format!("label row {i} is not one-hot")));
            }
            Ok(row.iter().position(|&v| v == 1.0).expect("one entry is set"))
        })
        .collect()
}

/// `log(sum(exp(row)))` shifted by the row maximum.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of one row, written into `out`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Softmax cross-entropy of every row of `logits` against one-hot `labels`.
pub fn cross_entropy_per_example(logits: &Tensor, labels: &Tensor) -> Result<Vec<f64>> {
    if logits.shape() != labels.shape() {
        return Err(Error::dim(format!(
            "logits {:?} vs labels {:?}",
            logits.shape(),
            labels.shape()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    let classes = labels_from_one_hot(labels)?;
    cross_entropy_indices(logits, &classes)
}

/// Same as [`cross_entropy_per_example`] with integer labels.
pub fn cross_entropy_indices(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    if logits.rank() != 2 || logits.rows() != labels.len() {
        return Err(Error::dim("logits rows differ from label count"));
    }
    let c = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= c {
                return Err(Error::Validation(format!("label {y} out of range")));
            }
            let row = logits.row(i);
            Ok((log_sum_exp(row) - row[y]).max(0.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor::filled(vec![3, 10], 0.7);
        let labels = one_hot(&[0, 4, 9], 10).unwrap();
        for l in cross_entropy_per_example(&logits, &labels).unwrap() {
            assert!((l - 10f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [0.0, 1.0, 5.0, 20.0, 100.0, 800.0] {
            let logits = Tensor::from_rows(&[vec![margin, 0.0, 0.0]]).unwrap();
            let l = cross_entropy_indices(&logits, &[0]).unwrap()[0];
            assert!(l >= 0.0 && (l < prev || l == 0.0), "margin {margin}: {l}");
            prev = l;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn matches_naive_softmax_then_log() {
        let rows = vec![vec![0.3, -1.2, 2.5, 0.0], vec![-4.0, 1.0, 0.5, 3.3]];
        let logits = Tensor::from_rows(&rows).unwrap();
        let got = cross_entropy_indices(&logits, &[2, 0]).unwrap();
        for (i, &y) in [2usize, 0].iter().enumerate() {
            let z: f64 = rows[i].iter().map(|v| v.exp()).sum();
            let expected = -(rows[i][y].exp() / z).ln();
            assert!((got[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_non_one_hot() {
        let logits = Tensor::zeros(vec![1, 3]);
        let labels = Tensor::from_rows(&[vec![0.5, 0.5, 0.0]]).unwrap();
        assert!(matches!(
            cross_entropy_per_example(&logits, &labels),
            Err(Error::Validation(_))
        ));
        let two = Tensor::from_rows(&[vec![1.0, 1.0, 0.0]]).unwrap();
        assert!(cross_entropy_per_example(&logits, &two).is_err());
    }
}
