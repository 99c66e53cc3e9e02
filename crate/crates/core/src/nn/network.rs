use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{Conv2d, Layer, LayerSpec, Mode, ParamRef};
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// A sequential stack of named layers.
pub struct Network<T> {
    layers: Vec<(String, Layer<T>)>,
    specs: Vec<(String, LayerSpec)>,
    forward_done: bool,
}

impl<T: Scalar> Network<T> {
    /// Builds the layer stack with all weights zero and batch-norm scales one.
    pub fn new(specs: &[(String, LayerSpec)]) -> Result<Self, NnError> {
        let layers = specs
            .iter()
            .map(|(name, spec)| Ok((name.clone(), Layer::from_spec(spec)?)))
            .collect::<Result<Vec<_>, NnError>>()?;
        Ok(Self {
            layers,
            specs: specs.to_vec(),
            forward_done: false,
        })
    }

    pub fn specs(&self) -> &[(String, LayerSpec)] {
        &self.specs
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Layer<T>)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l))
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer<T>> {
        self.layers.iter_mut().find(|(n, _)| n == name).map(|(_, l)| l)
    }

    /// He-normal conv weights, zero biases, batch norm at gamma 1 / beta 0.
    pub fn init_he(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |conv: &mut Conv2d<T>| {
            let std = (2.0 / conv.spec.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in conv.weight.data_mut() {
                *w = T::of_f64(normal.sample(&mut rng));
            }
            conv.bias.data_mut().fill(T::zero());
        };
        for (_, layer) in &mut self.layers {
            match layer {
                Layer::Conv(c) => init(c),
                Layer::Residual(r) => {
                    init(&mut r.conv1);
                    init(&mut r.conv2);
                }
                Layer::BatchNorm(_) | Layer::LeakyRelu(_) | Layer::Crop(_) => {}
            }
        }
    }

    /// Eval-mode forward pass without recording activations.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut h = x.clone();
        for (name, layer) in &self.layers {
            h = layer.infer(&h)?;
            h.check_finite(name)?;
        }
        Ok(h)
    }

    /// Forward pass that records what `backward` needs.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut h = x.clone();
        for (name, layer) in &mut self.layers {
            h = layer.forward(&h, mode)?;
            h.check_finite(name)?;
        }
        self.forward_done = true;
        Ok(h)
    }

    /// Accumulates parameter gradients for the last forward pass and returns
    /// the gradient with respect to the network input.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        if !self.forward_done {
            return Err(NnError::State("backward called before forward"));
        }
        let mut g = dy.clone();
        for (name, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
            g.check_finite(name)?;
        }
        Ok(g)
    }

    /// Drops recorded activations.
    pub fn clear_cache(&mut self) {
        for (_, layer) in &mut self.layers {
            layer.clear_cache();
        }
        self.forward_done = false;
    }

    pub fn zero_grad(&mut self) {
        for (_, layer) in &mut self.layers {
            layer.zero_grad();
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        for (name, layer) in &mut self.layers {
            layer.params(name, &mut out);
        }
        out
    }

    /// Number of trainable scalars.
    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Every persistent tensor (parameters and running statistics) in a
    /// fixed order.
    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (name, layer) in &mut self.layers {
            layer.state(name, &mut out);
        }
        out
    }
}
