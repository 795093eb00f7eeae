//! Sequential 3D CNNs: validated layer chains, forward inference with
//! activation recording, and reverse-mode gradients built from per-layer
//! vector-Jacobian products.

mod layer;
pub mod ncf;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use layer::{Layer, LayerKind, LayerWeights, Padding};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Default)]
struct EvalCounters {
    forward: AtomicUsize,
    backward: AtomicUsize,
}

/// A validated sequential network.
///
/// Inputs are `[channels, nx, ny, nz]`; the last layer must produce a 1-axis
/// score vector. The network is immutable once built, so evaluations can run
/// concurrently. It counts full forward and backward passes for diagnostics.
#[derive(Debug)]
pub struct Network {
    input_dims: Vec<usize>,
    layers: Vec<Layer>,
    // shapes[l] is the input dims of layer l; shapes[len] is the output.
    shapes: Vec<Vec<usize>>,
    counters: EvalCounters,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            input_dims: self.input_dims.clone(),
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            counters: EvalCounters::default(),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_dims == other.input_dims && self.layers == other.layers
    }
}

/// Per-layer activations of one forward pass.
///
/// `activations[0]` is the network input and `activations[l + 1]` the
/// output of layer `l`, so the output of one layer is by construction the
/// input of the next.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    names: Vec<String>,
    activations: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn input_of(&self, layer: usize) -> &Tensor {
        &self.activations[layer]
    }

    pub fn output_of(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }

    pub fn output_by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|l| self.output_of(l))
    }

    pub fn input_by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|l| self.input_of(l))
    }

    pub fn final_output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input").data()
    }
}

impl Network {
    pub fn new(input_dims: [usize; 4], layers: Vec<Layer>) -> Result<Self> {
        if input_dims.contains(&0) {
            return Err(Error::domain(format!("invalid input dims {input_dims:?}")));
        }
        if layers.is_empty() {
            return Err(Error::usage("network has no layers"));
        }
        let mut shapes = vec![input_dims.to_vec()];
        for (l, layer) in layers.iter().enumerate() {
            if layers[..l].iter().any(|p| p.name == layer.name) {
                return Err(Error::usage(format!("duplicate layer name '{}'", layer.name)));
            }
            match (layer.kind.param_dims(), &layer.weights) {
                (Some((wd, bd)), Some(w)) => {
                    w.weight.expect_dims(&wd)?;
                    w.bias.expect_dims(&bd)?;
                }
                (None, None) => {}
                _ => {
                    return Err(Error::shape(format!("layer '{}' has inconsistent parameters", layer.name)))
                }
            }
            let next = layer.output_dims(shapes.last().unwrap())?;
            shapes.push(next);
        }
        if shapes.last().unwrap().len() != 1 {
            return Err(Error::shape(format!(
                "network output must be a vector, got dims {:?}",
                shapes.last().unwrap()
            )));
        }
        Ok(Network { input_dims: input_dims.to_vec(), layers, shapes, counters: EvalCounters::default() })
    }

    pub fn input_dims(&self) -> [usize; 4] {
        [self.input_dims[0], self.input_dims[1], self.input_dims[2], self.input_dims[3]]
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.input_dims[1], self.input_dims[2], self.input_dims[3]]
    }

    pub fn output_width(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Input dims of layer `l` (`l == layers().len()` gives the output dims).
    pub fn shape_at(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    pub fn forward_count(&self) -> usize {
        self.counters.forward.load(Ordering::Relaxed)
    }

    pub fn backward_count(&self) -> usize {
        self.counters.backward.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.counters.forward.store(0, Ordering::Relaxed);
        self.counters.backward.store(0, Ordering::Relaxed);
    }

    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.forward_traced(x).map(|(out, _)| out)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Vec<f64>, ActivationTrace)> {
        x.expect_dims(&self.input_dims)?;
        self.counters.forward.fetch_add(1, Ordering::Relaxed);
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap())?;
            activations.push(next);
        }
        let out = activations.last().unwrap().data().to_vec();
        let names = self.layers.iter().map(|l| l.name.clone()).collect();
        Ok((out, ActivationTrace { names, activations }))
    }

    /// Runs layers `start..` on `a`, which must have the input dims of
    /// layer `start`.
    pub fn forward_tail(&self, start: usize, a: &Tensor) -> Result<Vec<f64>> {
        if start > self.layers.len() {
            return Err(Error::Index { index: start, len: self.layers.len() });
        }
        a.expect_dims(&self.shapes[start])?;
        self.counters.forward.fetch_add(1, Ordering::Relaxed);
        let mut cur = a.clone();
        for layer in &self.layers[start..] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur.into_data())
    }

    /// Chains layer VJPs from the output down to the input of layer
    /// `down_to`, starting from cotangent `output_cot` on the network output.
    pub fn backprop(&self, trace: &ActivationTrace, output_cot: &Tensor, down_to: usize) -> Result<Tensor> {
        if down_to > self.layers.len() {
            return Err(Error::Index { index: down_to, len: self.layers.len() });
        }
        if trace.len() != self.layers.len() {
            return Err(Error::shape("trace does not belong to this network"));
        }
        self.counters.backward.fetch_add(1, Ordering::Relaxed);
        let mut cot = output_cot.clone();
        for l in (down_to..self.layers.len()).rev() {
            cot = self.layers[l].vjp(trace.input_of(l), &cot)?;
        }
        Ok(cot)
    }

    pub fn one_hot_output(&self, target: usize) -> Result<Tensor> {
        let c = self.output_width();
        if target >= c {
            return Err(Error::Index { index: target, len: c });
        }
        let mut t = Tensor::zeros(&[c]);
        t.data_mut()[target] = 1.0;
        Ok(t)
    }

    /// Gradient of `output[target]` with respect to the input.
    pub fn input_gradient(&self, x: &Tensor, target: usize) -> Result<Tensor> {
        let seed = self.one_hot_output(target)?;
        let (_, trace) = self.forward_traced(x)?;
        self.backprop(&trace, &seed, 0)
    }

    /// Index of the last convolutional layer in graph order.
    pub fn last_conv(&self) -> Option<usize> {
        self.layers.iter().rposition(Layer::is_conv)
    }
}

/// The demo architecture: two conv/ReLU/max-pool stages, a 64-unit hidden
/// dense layer and `outputs` raw scores. `resolution` must be divisible by 4.
pub fn default_architecture(resolution: usize, outputs: usize, seed: u64) -> Result<Network> {
    let mut layers = default_encoder_layers();
    layers.extend(classifier_head(resolution, outputs)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut layers {
        l.init_glorot(&mut rng);
    }
    Network::new([1, resolution, resolution, resolution], layers)
}

pub(crate) fn default_encoder_layers() -> Vec<Layer> {
    vec![
        Layer::conv3d("conv1", 1, 8, 3, Padding::Same),
        Layer::relu("relu1"),
        Layer::maxpool("pool1", 2),
        Layer::conv3d("conv2", 8, 16, 3, Padding::Same),
        Layer::relu("relu2"),
        Layer::maxpool("pool2", 2),
    ]
}

pub(crate) fn classifier_head(resolution: usize, outputs: usize) -> Result<Vec<Layer>> {
    if resolution < 4 || !resolution.is_multiple_of(4) {
        return Err(Error::domain(format!("resolution {resolution} is not a positive multiple of 4")));
    }
    let r = resolution / 4;
    Ok(vec![
        Layer::flatten("flatten"),
        Layer::dense("fc1", 16 * r * r * r, 64),
        Layer::relu("relu3"),
        Layer::dense("fc2", 64, outputs),
    ])
}
