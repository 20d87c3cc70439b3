use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax of `[batch, classes]` logits.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    let c = logits.item_len();
    for row in out.data_mut().chunks_mut(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`),
/// with gradient `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.shape().len() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::Config(format!(
            "cross-entropy expects [{}, C] logits, got {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let classes = logits.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    let batch = T::from_usize_lossy(labels.len());
    let mut grad = softmax(logits);
    let mut loss = T::zero();
    for (b, &y) in labels.iter().enumerate() {
        let row = logits.item(b);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss += lse - row[y];
        grad.item_mut(b)[y] -= T::one();
    }
    grad.data_mut().iter_mut().for_each(|g| *g /= batch);
    Ok((loss / batch, grad))
}
