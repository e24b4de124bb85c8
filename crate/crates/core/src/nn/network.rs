//! Sequential networks: parameters, forward/backward passes and the two
//! beam-alignment architectures.

use super::layers::{self, LayerSpec, Shape};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Param {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Param {
    fn zeros(spec: &LayerSpec) -> Self {
        let (w, b) = spec.param_sizes();
        Self { weight: vec![0.0; w], bias: vec![0.0; b] }
    }
}

/// Per-layer gradients, laid out like [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<Param>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self { layers: net.layers.iter().map(|l| l.is_parameterized().then(|| Param::zeros(l))).collect() }
    }

    pub fn scale(&mut self, s: f64) {
        for p in self.layers.iter_mut().flatten() {
            p.weight.iter_mut().chain(p.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weight.iter().chain(&p.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input: Shape,
    pub aux_width: usize,
    pub layers: Vec<LayerSpec>,
    /// `Some` for conv3d and fc layers. Conv weights are laid out
    /// `[out][in][k_x][k_y][k_z]`, fc weights `[out][in]`.
    pub params: Vec<Option<Param>>,
    shapes: Vec<Shape>,
}

impl Network {
    /// Validates the layer chain and draws fan-in scaled uniform weights
    /// (`U(±√(6/fan_in))`) with zero biases.
    pub fn new(input: Shape, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut shapes = vec![input];
        let mut aux_width = 0;
        for l in &layers {
            if let LayerSpec::ConcatAux { width } = *l {
                aux_width += width;
            }
            let next = l.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        if let Some(pos) = layers.iter().position(|l| *l == LayerSpec::SoftmaxCe) {
            if pos + 1 != layers.len() {
                return Err(Error::ShapeMismatch("softmax-CE must be the last layer".into()));
            }
        }
        let mut net = Self {
            input,
            aux_width,
            params: layers.iter().map(|l| l.is_parameterized().then(|| Param::zeros(l))).collect(),
            layers,
            shapes,
        };
        net.reinitialize(seed);
        Ok(net)
    }

    pub fn reinitialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, param) in self.layers.iter().zip(self.params.iter_mut()) {
            if let Some(p) = param {
                let bound = (6.0 / spec.fan_in() as f64).sqrt();
                p.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
                p.bias.fill(0.0);
            }
        }
    }

    pub fn output_width(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    /// Activation shape entering layer `k`; index `layers.len()` is the output.
    pub fn shape_at(&self, k: usize) -> Shape {
        self.shapes[k]
    }

    pub fn parameterized_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_parameterized())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    /// Forward-pass FLOPs with multiply-add counted as two.
    pub fn count_flops(&self) -> u64 {
        self.layers.iter().zip(&self.shapes).map(|(l, s)| l.flops(*s)).sum()
    }

    fn check_inputs(&self, input: &[f64], aux: &[f64]) -> Result<()> {
        if input.len() != self.input.len() {
            return Err(Error::ShapeMismatch(format!("network expects {} inputs, got {}", self.input.len(), input.len())));
        }
        if aux.len() != self.aux_width {
            return Err(Error::ShapeMismatch(format!("network expects {} aux values, got {}", self.aux_width, aux.len())));
        }
        Ok(())
    }

    fn apply(&self, k: usize, x: &[f64], aux: &[f64]) -> Vec<f64> {
        match (self.layers[k], self.shapes[k]) {
            (LayerSpec::Conv3d { in_channels, out_channels, kernel }, Shape::Volume { dims, .. }) => {
                let p = self.params[k].as_ref().unwrap();
                layers::conv3d_forward(x, in_channels, dims, out_channels, kernel, &p.weight, &p.bias)
            }
            (LayerSpec::Fc { out_width, .. }, _) => {
                let p = self.params[k].as_ref().unwrap();
                layers::fc_forward(x, out_width, &p.weight, &p.bias)
            }
            (LayerSpec::Relu, _) => x.iter().map(|&v| v.max(0.0)).collect(),
            (LayerSpec::ConcatAux { .. }, _) => x.iter().chain(aux).copied().collect(),
            (LayerSpec::Flatten | LayerSpec::SoftmaxCe, _) => x.to_vec(),
            (LayerSpec::Conv3d { .. }, Shape::Flat(_)) => unreachable!("validated in Network::new"),
        }
    }

    fn logit_layers(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxCe) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    /// Logits (the input of the softmax-CE head).
    pub fn forward(&self, input: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(input, aux)?;
        let mut x = input.to_vec();
        for k in 0..self.logit_layers() {
            x = self.apply(k, &x, aux);
        }
        Ok(x)
    }

    /// Every intermediate activation, starting with the input.
    pub fn forward_cached(&self, input: &[f64], aux: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(input, aux)?;
        let mut acts = vec![input.to_vec()];
        for k in 0..self.logit_layers() {
            let next = self.apply(k, acts.last().unwrap(), aux);
            acts.push(next);
        }
        Ok(acts)
    }

    /// Back-propagates `grad_logits` through cached activations, adding the
    /// parameter gradients into `grads`.
    pub fn backward(&self, acts: &[Vec<f64>], grad_logits: Vec<f64>, grads: &mut Gradients) {
        let mut g = grad_logits;
        for k in (0..self.logit_layers()).rev() {
            let x = &acts[k];
            g = match (self.layers[k], self.shapes[k]) {
                (LayerSpec::Conv3d { in_channels, out_channels, kernel }, Shape::Volume { dims, .. }) => {
                    let p = self.params[k].as_ref().unwrap();
                    let gp = grads.layers[k].as_mut().unwrap();
                    layers::conv3d_backward(
                        x,
                        in_channels,
                        dims,
                        out_channels,
                        kernel,
                        &p.weight,
                        &g,
                        &mut gp.weight,
                        &mut gp.bias,
                    )
                }
                (LayerSpec::Fc { .. }, _) => {
                    let p = self.params[k].as_ref().unwrap();
                    let gp = grads.layers[k].as_mut().unwrap();
                    layers::fc_backward(x, &p.weight, &g, &mut gp.weight, &mut gp.bias)
                }
                (LayerSpec::Relu, _) => g.iter().zip(x).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect(),
                (LayerSpec::ConcatAux { width }, _) => {
                    g.truncate(g.len() - width);
                    g
                }
                (LayerSpec::Flatten | LayerSpec::SoftmaxCe, _) => g,
                (LayerSpec::Conv3d { .. }, Shape::Flat(_)) => unreachable!(),
            };
        }
    }

    /// Softmax cross-entropy loss for one sample; gradients are accumulated.
    pub fn loss_and_grad(&self, input: &[f64], aux: &[f64], label: usize, grads: &mut Gradients) -> Result<(f64, Vec<f64>)> {
        let acts = self.forward_cached(input, aux)?;
        let logits = acts.last().unwrap().clone();
        if label >= logits.len() {
            return Err(Error::ShapeMismatch(format!("label {label} outside {} classes", logits.len())));
        }
        let (loss, grad) = layers::softmax_ce(&logits, label);
        self.backward(&acts, grad, grads);
        Ok((loss, logits))
    }

    pub fn loss(&self, input: &[f64], aux: &[f64], label: usize) -> Result<f64> {
        Ok(layers::softmax_ce(&self.forward(input, aux)?, label).0)
    }

    /// Rounds every parameter to `f32` precision so a checkpoint written in
    /// 32-bit floats reloads into an identical network.
    pub fn round_params_to_f32(&mut self) {
        for p in self.params.iter_mut().flatten() {
            p.weight.iter_mut().chain(p.bias.iter_mut()).for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Layer widths of the VDF-based network: a 3D-conv stack, an FC stack,
/// then a final MLP that also sees the MS side input.
#[derive(Debug, Clone, PartialEq)]
pub struct VdbanSpec {
    pub filters: Vec<usize>,
    pub kernels: Vec<[usize; 3]>,
    pub fc: Vec<usize>,
    /// Final MLP widths; the last entry is the class count.
    pub mlp: Vec<usize>,
    pub aux_width: usize,
}

/// Must match the VDF row length.
pub const VDBAN_INPUT_CHANNELS: usize = crate::features::VDF_ROW;

impl VdbanSpec {
    pub fn full(classes: usize) -> Self {
        Self {
            filters: vec![6, 6, 8, 8, 16, 16, 32, 32, 64, 64],
            kernels: vec![
                [5, 5, 5],
                [5, 5, 5],
                [5, 5, 3],
                [5, 5, 3],
                [5, 3, 3],
                [5, 3, 3],
                [3, 3, 3],
                [3, 3, 3],
                [3, 3, 3],
                [3, 3, 3],
            ],
            fc: vec![512, 256, 128, 64],
            mlp: vec![512, 1024, classes],
            aux_width: 3,
        }
    }

    /// Same ten-conv / four-FC / three-MLP topology with narrow widths for
    /// desk-scale training.
    pub fn mini(classes: usize) -> Self {
        Self {
            filters: vec![4, 4, 4, 4, 8, 8, 8, 8, 16, 16],
            fc: vec![128, 64, 64, 32],
            mlp: vec![128, 128, classes],
            ..Self::full(classes)
        }
    }

    pub fn layers(&self, grid: [usize; 3]) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut channels = VDBAN_INPUT_CHANNELS;
        for (&f, &k) in self.filters.iter().zip(&self.kernels) {
            layers.push(LayerSpec::Conv3d { in_channels: channels, out_channels: f, kernel: k });
            layers.push(LayerSpec::Relu);
            channels = f;
        }
        layers.push(LayerSpec::Flatten);
        let mut width = channels * grid.iter().product::<usize>();
        for &w in &self.fc {
            layers.push(LayerSpec::Fc { in_width: width, out_width: w });
            layers.push(LayerSpec::Relu);
            width = w;
        }
        if self.aux_width > 0 {
            layers.push(LayerSpec::ConcatAux { width: self.aux_width });
            width += self.aux_width;
        }
        for (i, &w) in self.mlp.iter().enumerate() {
            layers.push(LayerSpec::Fc { in_width: width, out_width: w });
            if i + 1 < self.mlp.len() {
                layers.push(LayerSpec::Relu);
            }
            width = w;
        }
        layers.push(LayerSpec::SoftmaxCe);
        layers
    }
}

pub fn build_vdban_with(grid: [usize; 3], spec: &VdbanSpec, seed: u64) -> Result<Network> {
    let input = Shape::Volume { channels: VDBAN_INPUT_CHANNELS, dims: grid };
    Network::new(input, spec.layers(grid), seed)
}

/// Full-width VDF network over a `(7, G_X, G_Y, G_Z)` input.
pub fn build_vdban(grid: [usize; 3], classes: usize) -> Result<Network> {
    build_vdban_with(grid, &VdbanSpec::full(classes), 0)
}

/// Hidden widths of the situational-awareness baseline; the class count is appended.
pub const SABA_HIDDEN: [usize; 12] = [128, 128, 256, 256, 512, 1024, 1024, 1024, 1024, 1024, 1024, 1024];

pub fn saba_layers(input_width: usize, widths: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut prev = input_width;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(LayerSpec::Fc { in_width: prev, out_width: w });
        if i + 1 < widths.len() {
            layers.push(LayerSpec::Relu);
        }
        prev = w;
    }
    layers.push(LayerSpec::SoftmaxCe);
    layers
}

pub fn build_saba_with(input_width: usize, widths: &[usize], seed: u64) -> Result<Network> {
    Network::new(Shape::Flat(input_width), saba_layers(input_width, widths), seed)
}

/// Thirteen fully connected layers ending in `classes` logits.
pub fn build_saba(input_width: usize, classes: usize) -> Result<Network> {
    let mut widths = SABA_HIDDEN.to_vec();
    widths.push(classes);
    build_saba_with(input_width, &widths, 0)
}
