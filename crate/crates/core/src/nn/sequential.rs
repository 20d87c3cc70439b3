use crate::error::{Error, Result};
use crate::nn::layers::{Cache, Layer, Mode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Rng;

/// A chain of layers with explicit forward/backward passes.
#[derive(Clone, Debug)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
    /// Per-example input shape (no batch axis).
    input_shape: Vec<usize>,
    caches: Option<Vec<Cache<T>>>,
}

impl<T: Scalar> Sequential<T> {
    /// Builds a network and checks that every layer accepts its predecessor's output.
    pub fn new(input_shape: &[usize], layers: Vec<Layer<T>>) -> Result<Self> {
        let mut shape = std::iter::once(1).chain(input_shape.iter().copied()).collect::<Vec<_>>();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(Self {
            layers,
            input_shape: input_shape.to_vec(),
            caches: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-example output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = std::iter::once(1).chain(self.input_shape.iter().copied()).collect::<Vec<_>>();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("validated at construction");
        }
        shape[1..].to_vec()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Config(format!(
                "network expects [B, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass that records caches for a subsequent `backward`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, mut rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&h, mode, rng.as_deref_mut())?;
            caches.push(cache);
            h = y;
        }
        self.caches = Some(caches);
        Ok(h)
    }

    /// Eval-mode forward pass; pure in (parameters, input).
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, Mode::Eval, None)?.0;
        }
        Ok(h)
    }

    /// Backpropagates `grad_out`, accumulating into parameter grads. Consumes the caches.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let caches = self
            .caches
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let mut g = grad_out.clone();
        for (layer, cache) in self.layers.iter_mut().zip(&caches).rev() {
            g = layer.backward(cache, &g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Parameter names of the form `<index>.<layer>.<weight|bias>`, in `params()` order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let n = layer.params().len();
            for kind in ["weight", "bias"].iter().take(n) {
                names.push(format!("{i}.{}.{kind}", layer.name()));
            }
        }
        names
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
