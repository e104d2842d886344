use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Context, Layer, LayerSpec, Param};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A sequential stack of layers over per-sample `input_dims`.
pub struct Network<F: Scalar> {
    input_dims: Vec<usize>,
    layers: Vec<Box<dyn Layer<F>>>,
}

/// Per-sample output dims after each layer.
pub fn shape_flow(input_dims: &[usize], specs: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    let mut dims = input_dims.to_vec();
    specs
        .iter()
        .map(|spec| {
            dims = spec.output_dims(&dims)?;
            Ok(dims.clone())
        })
        .collect()
}

impl<F: Scalar> Network<F> {
    /// Builds the stack with Glorot-uniform weights drawn from `seed`.
    ///
    /// Layers are named by kind and ordinal (`conv1`, `bn3`, `fc2`, ...).
    pub fn new(input_dims: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_dims.is_empty() || input_dims.contains(&0) {
            return Err(Error::Spec(format!("invalid input dims {input_dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
        let mut dims = input_dims.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let ordinal = counters.entry(spec.tag()).or_insert(0);
            *ordinal += 1;
            let name = format!("{}{}", spec.tag(), ordinal);
            layers.push(spec.build::<F>(name, &dims, &mut rng)?);
            dims = spec.output_dims(&dims)?;
        }
        Ok(Self {
            input_dims: input_dims.to_vec(),
            layers,
        })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec()).collect()
    }

    pub fn layers(&self) -> &[Box<dyn Layer<F>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer<F>>] {
        &mut self.layers
    }

    pub fn output_dims(&self) -> Result<Vec<usize>> {
        Ok(shape_flow(&self.input_dims, &self.layer_specs())?
            .pop()
            .unwrap_or_else(|| self.input_dims.clone()))
    }

    pub fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>> {
        if x.dims().len() != self.input_dims.len() + 1 || x.sample_dims() != self.input_dims {
            return Err(Error::Shape(format!(
                "network expects N x {:?}, got {:?}",
                self.input_dims,
                x.dims()
            )));
        }
        let mut out = x.clone();
        for layer in &mut self.layers {
            out = layer.forward(&out, ctx)?;
        }
        Ok(out)
    }

    /// Forward pass recording each layer's output (for shape inspection).
    pub fn forward_trace(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Vec<Tensor<F>>> {
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut out = x.clone();
        for layer in &mut self.layers {
            out = layer.forward(&out, ctx)?;
            trace.push(out.clone());
        }
        Ok(trace)
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Param<F>> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(F::zero());
        }
    }

    /// Total trainable scalar count.
    pub fn trainable_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// ‖Θ‖² over trainable tensors.
    pub fn l2_norm_sq(&self) -> f64 {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.sum_squares())
            .sum()
    }
}
