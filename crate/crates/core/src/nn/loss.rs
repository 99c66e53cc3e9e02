use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Mean squared error over all elements and its gradient `2 (p - t) / N`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>), NnError> {
    target.expect_shape(pred.shape())?;
    let n = pred.len();
    if n == 0 {
        return Err(NnError::Dimension("mse of empty tensors".into()));
    }
    let scale = T::of_f64(2.0 / n as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0f64;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok((T::of_f64(sum / n as f64), grad))
}
