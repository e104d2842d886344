use super::layers::Param;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to predicted probabilities.
pub const PROB_FLOOR: f64 = 1e-7;

/// Loss value and its gradients.
#[derive(Debug, Clone)]
pub struct Loss<F> {
    pub value: f64,
    /// d loss / d y_hat, same shape as the predictions.
    pub pred_grad: Tensor<F>,
    /// λ·θ for each param passed in (zeros for non-trainable ones).
    pub param_grads: Vec<Tensor<F>>,
}

/// Checks every row of a batch of label distributions.
pub fn validate_labels<F: Scalar>(y: &Tensor<F>) -> Result<()> {
    if y.dims().len() != 2 {
        return Err(Error::Shape(format!("labels must be NxC, got {:?}", y.dims())));
    }
    let c = y.dims()[1];
    for (i, row) in y.data().chunks_exact(c).enumerate() {
        let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
        if row.iter().any(|v| !(v.as_f64() >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Label(format!(
                "label row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Σ_n Σ_c y·ln(y/ŷ) over the batch plus (λ/2)·‖Θ‖² over trainable params.
///
/// Predictions are clamped to [1e-7, 1]; terms with y = 0 contribute zero.
pub fn kl_loss<F: Scalar>(
    y: &Tensor<F>,
    y_hat: &Tensor<F>,
    params: &[&Param<F>],
    lambda: f64,
) -> Result<Loss<F>> {
    if y.dims() != y_hat.dims() {
        return Err(Error::Shape(format!(
            "labels {:?} vs predictions {:?}",
            y.dims(),
            y_hat.dims()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::Spec(format!("negative l2 coefficient {lambda}")));
    }
    validate_labels(y)?;
    let mut value = 0.0;
    let mut pred_grad = Tensor::zeros(y.dims());
    for ((t, p), g) in y
        .data()
        .iter()
        .zip(y_hat.data())
        .zip(pred_grad.data_mut())
    {
        let t = t.as_f64();
        if t == 0.0 {
            continue;
        }
        let raw = p.as_f64();
        let clamped = raw.clamp(PROB_FLOOR, 1.0);
        value += t * (t.ln() - clamped.ln());
        if raw > PROB_FLOOR && raw <= 1.0 {
            *g = F::from_f64_lossy(-t / clamped);
        }
    }
    let lam = F::from_f64_lossy(lambda);
    let mut param_grads = Vec::with_capacity(params.len());
    for p in params {
        if p.trainable {
            value += 0.5 * lambda * p.value.sum_squares();
            let mut g = p.value.clone();
            g.data_mut().iter_mut().for_each(|v| *v *= lam);
            param_grads.push(g);
        } else {
            param_grads.push(Tensor::zeros(p.value.dims()));
        }
    }
    Ok(Loss {
        value,
        pred_grad,
        param_grads,
    })
}
