use crate::error::{shape_err, NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax of `B x C` logits, stabilized by max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = logits.dims2("softmax")?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(out)
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`) and its
/// gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (b, c) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != b {
        return shape_err("softmax_cross_entropy", format!("{} labels for a batch of {b}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(NnError::LabelOutOfRange { label: bad, classes: c });
    }
    let bt = T::of(b as f64);
    let mut grad = Tensor::zeros(&[b, c]);
    let mut loss = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.data()[r * c..(r + 1) * c];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let log_z = z.ln() + m;
        loss += log_z - row[label];
        let g = &mut grad.data_mut()[r * c..(r + 1) * c];
        for (k, gv) in g.iter_mut().enumerate() {
            *gv = (row[k] - log_z).exp() / bt;
        }
        g[label] -= T::one() / bt;
    }
    Ok((loss / bt, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::<f64>::full(&[3, 10], 0.7);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logit_saturates() {
        let mut logits = Tensor::<f64>::zeros(&[1, 10]);
        logits.data_mut()[3] = 30.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[3]).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::<f64>::from_fn(&[4, 6], |i| (i as f64 * 1.3).cos() * 5.0);
        let (_, g) = softmax_cross_entropy(&logits, &[0, 1, 5, 2]).unwrap();
        for row in g.data().chunks(6) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(softmax_cross_entropy(&logits, &[3]), Err(NnError::LabelOutOfRange { label: 3, classes: 3 })));
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let logits = Tensor::<f32>::from_vec(&[1, 3], vec![1000.0, 1000.0, -1000.0]).unwrap();
        let p = softmax(&logits).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 0.0]);
    }
}
