//! Central finite-difference checks of the analytic gradients.
//!
//! A layer is reduced to the scalar `Σ r ⊙ layer(x)` for a fixed random `r`,
//! so the analytic input and parameter gradients are one backward pass with
//! `r` as the upstream gradient. The numeric reference is always evaluated in
//! f64 on a copy of the layer holding the same parameter values; the analytic
//! side runs in the scalar type under test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Context, Layer, LayerSpec, Mode};
use super::loss::kl_loss;
use super::layers::Param;
use super::tensor::{Scalar, Tensor};
use crate::error::Result;

/// Step used for the central differences.
pub const STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so entries whose true gradient
/// is ~0 are judged by absolute error.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub layer: String,
    /// Number of gradient entries compared.
    pub checked: usize,
    pub max_rel_error: f64,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn random_input(spec: &LayerSpec, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let v: f64 = rng.gen_range(-1.0..1.0);
            // keep ReLU inputs away from the kink
            if matches!(spec, LayerSpec::Relu) && v.abs() < 0.1 {
                v.signum() * 0.1 + v
            } else {
                v
            }
        })
        .collect()
}

fn context(mode: Mode, seed: u64) -> Context {
    let mut ctx = Context::train(ChaCha8Rng::seed_from_u64(seed));
    ctx.mode = mode;
    ctx
}

fn projection(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, r: &[f64], mode: Mode, seed: u64) -> f64 {
    let out = layer
        .forward(x, &mut context(mode, seed))
        .expect("forward during finite differences");
    out.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Checks one layer kind on a random batch of `batch` samples of `dims`.
///
/// Trainable parameters are randomized first so that zero-initialized
/// biases and unit BN scales do not hide errors.
pub fn check_layer<F: Scalar>(
    spec: LayerSpec,
    dims: &[usize],
    batch: usize,
    mode: Mode,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut under_test = spec.build::<F>(spec.tag().to_string(), dims, &mut rng)?;
    let mut reference = spec.build::<f64>(spec.tag().to_string(), dims, &mut rng)?;
    for p in under_test.params_mut() {
        if p.trainable {
            for v in p.value.data_mut() {
                *v = F::from_f64_lossy(rng.gen_range(-1.0..1.0));
            }
        }
    }
    for (dst, src) in reference.params_mut().into_iter().zip(under_test.params()) {
        dst.value = src.value.cast();
    }

    let mut batch_dims = vec![batch];
    batch_dims.extend_from_slice(dims);
    let len: usize = batch_dims.iter().product();
    // round through F so both sides see the same input
    let x_f: Tensor<F> = Tensor::from_vec(&batch_dims, random_input(&spec, len, &mut rng))?.cast();
    let x: Tensor<f64> = x_f.cast();

    let mut out_dims = vec![batch];
    out_dims.extend(spec.output_dims(dims)?);
    let out_len: usize = out_dims.iter().product();
    let r: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r_f: Tensor<F> = Tensor::from_vec(&out_dims, r.clone())?.cast();
    let r: Vec<f64> = r_f.cast::<f64>().into_data();

    let pass_seed = rng.gen();
    under_test.forward(&x_f, &mut context(mode, pass_seed))?;
    let dx = under_test.backward(&r_f)?;

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut xp = x.clone();
    for i in 0..len {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let plus = projection(reference.as_mut(), &xp, &r, mode, pass_seed);
        xp.data_mut()[i] = orig - STEP;
        let minus = projection(reference.as_mut(), &xp, &r, mode, pass_seed);
        xp.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        max_rel = max_rel.max(rel_error(dx.data()[i].as_f64(), numeric));
        checked += 1;
    }

    let analytic: Vec<(bool, Vec<f64>)> = under_test
        .params()
        .iter()
        .map(|p| (p.trainable, p.grad.cast::<f64>().into_data()))
        .collect();
    for (pi, (trainable, grads)) in analytic.iter().enumerate() {
        if !trainable {
            continue;
        }
        for (j, g) in grads.iter().enumerate() {
            let nudge = |layer: &mut dyn Layer<f64>, delta: f64| {
                let mut params = layer.params_mut();
                params[pi].value.data_mut()[j] += delta;
            };
            nudge(reference.as_mut(), STEP);
            let plus = projection(reference.as_mut(), &x, &r, mode, pass_seed);
            nudge(reference.as_mut(), -2.0 * STEP);
            let minus = projection(reference.as_mut(), &x, &r, mode, pass_seed);
            nudge(reference.as_mut(), STEP);
            let numeric = (plus - minus) / (2.0 * STEP);
            max_rel = max_rel.max(rel_error(*g, numeric));
            checked += 1;
        }
    }

    Ok(GradCheck {
        layer: spec.to_string(),
        checked,
        max_rel_error: max_rel,
    })
}

/// Checks the KL + L2 loss gradients with respect to the predictions and a
/// random parameter tensor.
pub fn check_loss<F: Scalar>(batch: usize, classes: usize, lambda: f64, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let mut y = Vec::new();
    let mut y_hat = Vec::new();
    for i in 0..batch {
        // mix soft rows with one-hot rows to exercise the 0·ln 0 convention
        if i % 2 == 0 {
            y.extend(dist(&mut rng));
        } else {
            let mut row = vec![0.0; classes];
            row[rng.gen_range(0..classes)] = 1.0;
            y.extend(row);
        }
        y_hat.extend(dist(&mut rng));
    }
    let dims = [batch, classes];
    let y_f: Tensor<F> = Tensor::from_vec(&dims, y)?.cast();
    let y_hat_f: Tensor<F> = Tensor::from_vec(&dims, y_hat)?.cast();
    let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let param_f = Param {
        name: "w".into(),
        value: Tensor::<f64>::from_vec(&[6], w)?.cast::<F>(),
        grad: Tensor::zeros(&[6]),
        trainable: true,
    };
    let analytic = kl_loss(&y_f, &y_hat_f, &[&param_f], lambda)?;

    let y: Tensor<f64> = y_f.cast();
    let mut y_hat: Tensor<f64> = y_hat_f.cast();
    let mut param = Param {
        name: "w".into(),
        value: param_f.value.cast::<f64>(),
        grad: Tensor::zeros(&[6]),
        trainable: true,
    };
    let value = |y_hat: &Tensor<f64>, p: &Param<f64>| kl_loss(&y, y_hat, &[p], lambda).unwrap().value;

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for i in 0..y_hat.len() {
        let orig = y_hat.data()[i];
        y_hat.data_mut()[i] = orig + STEP;
        let plus = value(&y_hat, &param);
        y_hat.data_mut()[i] = orig - STEP;
        let minus = value(&y_hat, &param);
        y_hat.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        max_rel = max_rel.max(rel_error(analytic.pred_grad.data()[i].as_f64(), numeric));
        checked += 1;
    }
    for j in 0..param.value.len() {
        let orig = param.value.data()[j];
        param.value.data_mut()[j] = orig + STEP;
        let plus = value(&y_hat, &param);
        param.value.data_mut()[j] = orig - STEP;
        let minus = value(&y_hat, &param);
        param.value.data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        max_rel = max_rel.max(rel_error(analytic.param_grads[0].data()[j].as_f64(), numeric));
        checked += 1;
    }
    Ok(GradCheck {
        layer: "KL+L2 loss".into(),
        checked,
        max_rel_error: max_rel,
    })
}

/// One randomized small case for each of the eight layer kinds:
/// (spec, per-sample dims, batch, mode).
pub fn standard_cases() -> Vec<(LayerSpec, Vec<usize>, usize, Mode)> {
    vec![
        (LayerSpec::Conv { filters: 3 }, vec![5, 5, 2], 2, Mode::Train),
        (LayerSpec::BatchNorm, vec![4, 3, 3], 3, Mode::Train),
        (LayerSpec::BatchNorm, vec![5], 4, Mode::Train),
        (LayerSpec::Relu, vec![4, 4, 2], 2, Mode::Train),
        (LayerSpec::AvgPool, vec![4, 6, 2], 2, Mode::Train),
        (LayerSpec::GlobalAvgPool, vec![3, 4, 3], 2, Mode::Train),
        (LayerSpec::Dense { units: 3 }, vec![4], 3, Mode::Train),
        (LayerSpec::Softmax, vec![6], 3, Mode::Train),
        (LayerSpec::Dropout { rate: 0.4 }, vec![10], 3, Mode::Train),
    ]
}
