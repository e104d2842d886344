use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Context;
use super::loss::kl_loss;
use super::mixup::{mixup_batch, MixupDraw};
use super::network::Network;
use super::optim::Adam;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::fusion::{mean_over_patches, ProbabilityDistribution};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// λ of the (λ/2)·‖Θ‖² penalty.
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Beta(α, α) parameter; `None` disables mixup.
    pub mixup_alpha: Option<f64>,
    pub seed: u64,
    pub dropout: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            lr: 1e-4,
            epochs: 100,
            batch_size: 32,
            mixup_alpha: Some(0.4),
            seed: 0,
            dropout: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0) {
            return Err(Error::Spec(format!("l2 coefficient must be >= 0, got {}", self.l2)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Spec(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Spec("epochs and batch size must be >= 1".into()));
        }
        if let Some(alpha) = self.mixup_alpha {
            if !(alpha > 0.0) {
                return Err(Error::Spec(format!("mixup alpha must be > 0, got {alpha}")));
            }
        }
        Ok(())
    }
}

/// Flattened samples with soft labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    sample_dims: Vec<usize>,
    classes: usize,
    inputs: Vec<F>,
    labels: Vec<F>,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(sample_dims: &[usize], classes: usize) -> Self {
        Self {
            sample_dims: sample_dims.to_vec(),
            classes,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn sample_len(&self) -> usize {
        self.sample_dims.iter().product()
    }

    pub fn sample_dims(&self) -> &[usize] {
        &self.sample_dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len() / self.classes.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, input: &[F], label: &[F]) -> Result<()> {
        if input.len() != self.sample_len() || label.len() != self.classes {
            return Err(Error::Shape(format!(
                "sample of {} values / label of {}, expected {} / {}",
                input.len(),
                label.len(),
                self.sample_len(),
                self.classes
            )));
        }
        self.inputs.extend_from_slice(input);
        self.labels.extend_from_slice(label);
        Ok(())
    }

    /// Adds a sample with a one-hot label.
    pub fn push_class(&mut self, input: &[F], class: usize) -> Result<()> {
        if class >= self.classes {
            return Err(Error::Label(format!("class {class} >= {}", self.classes)));
        }
        let mut label = vec![F::zero(); self.classes];
        label[class] = F::one();
        self.push(input, &label)
    }

    pub fn input(&self, i: usize) -> &[F] {
        let len = self.sample_len();
        &self.inputs[i * len..(i + 1) * len]
    }

    pub fn label(&self, i: usize) -> &[F] {
        &self.labels[i * self.classes..(i + 1) * self.classes]
    }

    /// Stacks the given rows into batch tensors.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<F>, Tensor<F>) {
        let mut x = Vec::with_capacity(indices.len() * self.sample_len());
        let mut y = Vec::with_capacity(indices.len() * self.classes);
        for &i in indices {
            x.extend_from_slice(self.input(i));
            y.extend_from_slice(self.label(i));
        }
        let mut dims = vec![indices.len()];
        dims.extend_from_slice(&self.sample_dims);
        (
            Tensor::from_vec(&dims, x).expect("gathered inputs"),
            Tensor::from_vec(&[indices.len(), self.classes], y).expect("gathered labels"),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Per-epoch loss: summed batch losses divided by the sample count.
    pub epoch_losses: Vec<f64>,
}

/// Splits a shuffled order into batches, folding a trailing singleton into
/// the previous batch (batch norm and mixup both need two samples).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = order.len() - 1 - out.last().unwrap().len();
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

pub fn train<F: Scalar>(
    net: &mut Network<F>,
    data: &Dataset<F>,
    config: &TrainingConfig,
) -> Result<TrainReport> {
    train_with(net, data, config, |_, _| {})
}

/// Like [`train`], calling `on_epoch(epoch, loss)` after every epoch.
pub fn train_with<F: Scalar>(
    net: &mut Network<F>,
    data: &Dataset<F>,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if data.sample_dims() != net.input_dims() {
        return Err(Error::Shape(format!(
            "dataset samples {:?} do not match network input {:?}",
            data.sample_dims(),
            net.input_dims()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&order, config.batch_size) {
            let (mut x, mut y) = data.gather(batch);
            if let Some(alpha) = config.mixup_alpha {
                let draw = MixupDraw::sample(&mut rng, alpha, batch.len())?;
                (x, y) = mixup_batch(&x, &y, &draw)?;
            }
            net.zero_grad();
            // the layers draw dropout masks from the context rng; hand it over
            // for the pass and take it back afterwards
            let mut ctx = Context::train(rng);
            ctx.dropout = config.dropout;
            let y_hat = net.forward(&x, &mut ctx);
            rng = ctx.rng;
            let y_hat = y_hat?;
            let loss = kl_loss(&y, &y_hat, &net.params(), config.l2)?;
            net.backward(&loss.pred_grad)?;
            let mut params = net.params_mut();
            for (p, g) in params.iter_mut().zip(&loss.param_grads) {
                if p.trainable {
                    for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
            }
            adam.step(&mut params)?;
            total += loss.value;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at epoch {}", epoch + 1)));
        }
        on_epoch(epoch + 1, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainReport { epoch_losses })
}

/// Eval-mode class probabilities for every sample of `x`, in chunks of `batch`.
pub fn predict_proba<F: Scalar>(
    net: &mut Network<F>,
    x: &Tensor<F>,
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = x.batch();
    let len = x.sample_len();
    let mut out = Vec::with_capacity(n);
    let mut ctx = Context::eval();
    let mut start = 0;
    while start < n {
        let end = (start + batch.max(1)).min(n);
        let mut dims = x.dims().to_vec();
        dims[0] = end - start;
        let chunk = Tensor::from_vec(&dims, x.data()[start * len..end * len].to_vec())?;
        let probs = net.forward(&chunk, &mut ctx)?;
        let c = probs.sample_len();
        out.extend(
            probs
                .data()
                .chunks_exact(c)
                .map(|row| row.iter().map(|v| v.as_f64()).collect()),
        );
        start = end;
    }
    Ok(out)
}

/// Clip probability: per-patch softmax outputs averaged over the patches.
pub fn predict_clip<F: Scalar>(
    net: &mut Network<F>,
    patches: &[Vec<F>],
) -> Result<ProbabilityDistribution> {
    if patches.is_empty() {
        return Err(Error::Data("no patches to classify".into()));
    }
    let mut dims = vec![patches.len()];
    dims.extend_from_slice(net.input_dims());
    let flat: Vec<F> = patches.iter().flatten().copied().collect();
    let x = Tensor::from_vec(&dims, flat)?;
    let per_patch = predict_proba(net, &x, patches.len())?;
    mean_over_patches(&per_patch)
}
