//! Fully connected layers and stacks of them.

use rand::Rng;

use crate::init::scaled_uniform;
use crate::params::{prefixed, Params};
use crate::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Uses subgradient 0 at exactly 0.
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(x · Wᵀ + b)` over a batch of row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out x in`
    pub weight: Matrix,
    /// `1 x out`
    pub bias: Matrix,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseBackward {
    pub dx: Matrix,
    pub dweight: Matrix,
    pub dbias: Matrix,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Matrix, activation: Activation) -> Self {
        assert_eq!(bias.rows(), 1, "bias must be a row vector");
        assert_eq!(bias.cols(), weight.rows(), "bias width must equal output size");
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, gain: f64, rng: &mut R) -> Self {
        Self::new(
            scaled_uniform(output, input, gain, rng),
            Matrix::zeros(1, output),
            activation,
        )
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols(), self.input_size(), "dense input width mismatch");
        let mut y = x.matmul_t(&self.weight);
        y.add_row_broadcast(&self.bias);
        if self.activation != Activation::Identity {
            let act = self.activation;
            y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        y
    }

    /// Backward pass given the forward input and output.
    pub fn backward_with_output(&self, x: &Matrix, y: &Matrix, dy: &Matrix) -> DenseBackward {
        assert_eq!(dy.shape(), y.shape(), "dense upstream gradient shape mismatch");
        let act = self.activation;
        let mut dz = dy.clone();
        if act != Activation::Identity {
            for (g, &out) in dz.data_mut().iter_mut().zip(y.data()) {
                *g *= act.grad_from_output(out);
            }
        }
        DenseBackward {
            dx: dz.matmul(&self.weight),
            dweight: dz.t_matmul(x),
            dbias: dz.col_sums(),
        }
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix) -> DenseBackward {
        let y = self.forward(x);
        self.backward_with_output(x, &y, dy)
    }
}

impl Params for DenseLayer {
    fn named_blocks(&self) -> Vec<(String, &Matrix)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// A stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer outputs of an [`Mlp`] forward pass, `outputs[i]` being the
/// output of layer `i`.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub input: Matrix,
    pub outputs: Vec<Matrix>,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().unwrap_or(&self.input)
    }
}

impl Mlp {
    /// Hidden layers use `hidden_act` with gain √2; the final layer is linear
    /// with `head_gain`.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        head_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(DenseLayer::init(prev, h, hidden_act, 2f64.sqrt(), rng));
            prev = h;
        }
        layers.push(DenseLayer::init(prev, output, Activation::Identity, head_gain, rng));
        Self { layers }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty mlp").output_size()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        self.layers.iter().fold(x.clone(), |h, l| l.forward(&h))
    }

    pub fn forward_cached(&self, x: &Matrix) -> MlpCache {
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let y = l.forward(input);
            outputs.push(y);
        }
        MlpCache {
            input: x.clone(),
            outputs,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns `dx`.
    pub fn backward(&self, cache: &MlpCache, dy: &Matrix, grads: &mut Mlp) -> Matrix {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            let back = self.layers[i].backward_with_output(input, &cache.outputs[i], &d);
            grads.layers[i].weight.add_assign(&back.dweight);
            grads.layers[i].bias.add_assign(&back.dbias);
            d = back.dx;
        }
        d
    }
}

impl Params for Mlp {
    fn named_blocks(&self) -> Vec<(String, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("l{i}"), l.named_blocks()))
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| l.blocks_mut()).collect()
    }
}
