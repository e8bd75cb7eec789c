use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::{self, DenseTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }
}

/// Fully connected layer: `act(x @ weight + bias)`, weight stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseTensor,
    pub bias: DenseTensor,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Feed-forward chain of dense layers.
///
/// With `residual` set, the chain output is added to the input
/// (`x + f(x)`); this requires equal input and output widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    residual: bool,
}

impl Network {
    pub fn new(layers: Vec<Layer>, residual: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::dim(format!("layer {i}: bias/weight mismatch")));
            }
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::dim(format!(
                    "layer widths do not chain: {} -> {}",
                    w[0].output_dim(),
                    w[1].input_dim()
                )));
            }
        }
        let net = Network { layers, residual };
        if residual && net.input_dim() != net.output_dim() {
            return Err(Error::dim("residual network needs equal in/out widths"));
        }
        Ok(net)
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        residual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() != activations.len() + 1 {
            return Err(Error::contract("need one activation per layer"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Layer {
                    weight: DenseTensor::matrix(fan_in, fan_out, data).expect("sized"),
                    bias: DenseTensor::zeros(&[fan_out]),
                    activation,
                }
            })
            .collect();
        Self::new(layers, residual)
    }

    /// Single linear layer with identity weight.
    pub fn identity(dim: usize) -> Self {
        Network {
            layers: vec![Layer {
                weight: DenseTensor::identity(dim),
                bias: DenseTensor::zeros(&[dim]),
                activation: Activation::Linear,
            }],
            residual: false,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn is_residual(&self) -> bool {
        self.residual
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters in registry order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&DenseTensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }

    /// Flatten every parameter into one vector (registry order).
    pub fn flat_params(&self) -> Vec<f64> {
        self.params()
            .into_iter()
            .flat_map(|p| p.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Plain evaluation without recording; bit-identical to the taped forward.
    pub fn infer(&self, x: &DenseTensor) -> Result<DenseTensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "input width {} but network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            let z = tensor::add_row(&tensor::matmul(&h, &layer.weight)?, &layer.bias)?;
            h = match layer.activation {
                Activation::Linear => z,
                act => z.map(|v| act.apply(v)),
            };
        }
        if self.residual {
            for (o, i) in h.data_mut().iter_mut().zip(x.data()) {
                *o += i;
            }
        }
        Ok(h)
    }

    /// Record the parameters on `tape` as gradient-receiving leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundNetwork<'_, 't> {
        let vars = self.params().into_iter().map(|p| tape.param(p.clone())).collect();
        BoundNetwork { net: self, vars }
    }

    /// Record the parameters as constants (no gradient flows into them).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> BoundNetwork<'_, 't> {
        let vars = self
            .params()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        BoundNetwork { net: self, vars }
    }

    /// Clamp every parameter into `[-c, c]`.
    pub fn clamp_params(&mut self, c: f64) {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
        }
    }
}

/// A network whose parameters live on a tape.
pub struct BoundNetwork<'n, 't> {
    net: &'n Network,
    vars: Vec<Var<'t>>,
}

impl<'n, 't> BoundNetwork<'n, 't> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let width = x.shape().last().copied().unwrap_or(0);
        if width != self.net.input_dim() {
            return Err(Error::dim(format!(
                "input width {} but network expects {}",
                width,
                self.net.input_dim()
            )));
        }
        let mut h = x;
        for (i, layer) in self.net.layers.iter().enumerate() {
            let z = h.matmul(self.vars[2 * i])?.add_row(self.vars[2 * i + 1])?;
            h = match layer.activation {
                Activation::Linear => z,
                Activation::Relu => z.relu(),
                Activation::Tanh => z.tanh(),
            };
        }
        if self.net.residual {
            h = x.add(h)?;
        }
        Ok(h)
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradients for each parameter in registry order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<DenseTensor> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}
