//! Sequential networks with a flat parameter layout.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Conv2dSpec, Graph, Var};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    MaxPool2d { kernel: usize, stride: usize, pad: usize },
    Upsample2,
    Relu,
    Tanh,
    Sigmoid,
    Flatten,
    /// Per-sample shape; the batch dimension is kept.
    Reshape { shape: Vec<usize> },
    Linear { inputs: usize, outputs: usize },
}

impl Layer {
    /// Shapes of the weight and bias tensors, if any.
    fn param_shapes(&self) -> Option<([usize; 4], usize)> {
        match *self {
            Layer::Conv2d { in_ch, out_ch, kernel, .. } => Some(([out_ch, in_ch, kernel, kernel], out_ch)),
            Layer::Linear { inputs, outputs } => Some(([inputs, outputs, 1, 1], outputs)),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv2d { in_ch, kernel, .. } => in_ch * kernel * kernel,
            Layer::Linear { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeError {
    pub layer: usize,
    pub input: Vec<usize>,
}

impl core::fmt::Display for ShapeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "layer {} cannot accept input of shape {:?}", self.layer, self.input)
    }
}

/// A feed-forward stack applied to inputs of per-sample shape `input`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Net {
    pub input: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl Net {
    pub fn new(input: &[usize], layers: Vec<Layer>) -> Self {
        Self { input: input.to_vec(), layers }
    }

    /// Per-sample output shape, or the first layer that rejects its input.
    pub fn output_shape(&self) -> Result<Vec<usize>, ShapeError> {
        let mut s = self.input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let err = || ShapeError { layer: i, input: s.clone() };
            s = match *layer {
                Layer::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                    if s.len() != 3 || s[0] != in_ch || s[1] + 2 * pad < kernel || s[2] + 2 * pad < kernel || stride == 0 {
                        return Err(err());
                    }
                    vec![out_ch, (s[1] + 2 * pad - kernel) / stride + 1, (s[2] + 2 * pad - kernel) / stride + 1]
                }
                Layer::MaxPool2d { kernel, stride, pad } => {
                    if s.len() != 3 || s[1] + 2 * pad < kernel || s[2] + 2 * pad < kernel || stride == 0 {
                        return Err(err());
                    }
                    vec![s[0], (s[1] + 2 * pad - kernel) / stride + 1, (s[2] + 2 * pad - kernel) / stride + 1]
                }
                Layer::Upsample2 => {
                    if s.len() != 3 {
                        return Err(err());
                    }
                    vec![s[0], 2 * s[1], 2 * s[2]]
                }
                Layer::Relu | Layer::Tanh | Layer::Sigmoid => s,
                Layer::Flatten => vec![s.iter().product()],
                Layer::Reshape { ref shape } => {
                    if shape.iter().product::<usize>() != s.iter().product::<usize>() {
                        return Err(err());
                    }
                    shape.clone()
                }
                Layer::Linear { inputs, outputs } => {
                    if s.len() != 1 || s[0] != inputs {
                        return Err(err());
                    }
                    vec![outputs]
                }
            };
        }
        Ok(s)
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().map(|s| s.iter().product()).unwrap_or(0)
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::param_shapes)
            .map(|(w, b)| w.iter().product::<usize>() + b)
            .sum()
    }

    /// He-uniform weights and zero biases.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            if let Some((w, b)) = layer.param_shapes() {
                let bound = (6.0 / layer.fan_in() as f64).sqrt() as f32;
                out.extend((0..w.iter().product::<usize>()).map(|_| rng.random_range(-bound..bound)));
                out.extend(core::iter::repeat_n(0.0, b));
            }
        }
        out
    }

    /// Registers `params` as graph leaves, one weight and one bias per layer.
    pub fn bind<T: Real>(&self, g: &mut Graph<'_, T>, params: &[T], trainable: bool) -> Vec<Var> {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let mut vars = Vec::new();
        let mut at = 0;
        for layer in &self.layers {
            if let Some((w, b)) = layer.param_shapes() {
                let wshape: &[usize] = match layer {
                    Layer::Linear { .. } => &w[..2],
                    _ => &w,
                };
                let wn: usize = w.iter().product();
                for (len, shape) in [(wn, wshape), (b, &[b][..])] {
                    let data = params[at..at + len].to_vec();
                    vars.push(if trainable { g.param(data, shape) } else { g.constant(data, shape) });
                    at += len;
                }
            }
        }
        vars
    }

    /// Applies the network to `x` (`[batch, ..input]`), consuming `weights`
    /// in the order produced by [`Net::bind`].
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, weights: &[Var], x: Var) -> Var {
        let batch = g.shape(x)[0];
        let mut full = vec![batch];
        full.extend_from_slice(&self.input);
        let mut h = if g.shape(x) == full.as_slice() { x } else { g.reshape(x, &full) };
        let mut w = weights.iter().copied();
        for layer in &self.layers {
            h = match *layer {
                Layer::Conv2d { stride, pad, .. } => {
                    let (k, b) = (w.next().unwrap(), w.next().unwrap());
                    g.conv2d(h, k, b, Conv2dSpec { stride, pad })
                }
                Layer::MaxPool2d { kernel, stride, pad } => g.max_pool2d(h, kernel, stride, pad),
                Layer::Upsample2 => g.upsample2(h),
                Layer::Relu => g.relu(h),
                Layer::Tanh => g.tanh(h),
                Layer::Sigmoid => g.sigmoid(h),
                Layer::Flatten => g.flatten(h),
                Layer::Reshape { ref shape } => {
                    let mut s = vec![batch];
                    s.extend_from_slice(shape);
                    g.reshape(h, &s)
                }
                Layer::Linear { .. } => {
                    let (k, b) = (w.next().unwrap(), w.next().unwrap());
                    g.linear(h, k, b)
                }
            };
        }
        h
    }
}

/// Convolutional encoder for 64x64 RGB inputs: three stride-2 convolutions
/// followed by a linear projection.
pub fn small_encoder(image: usize, outputs: usize) -> Net {
    let conv = |i, o| Layer::Conv2d { in_ch: i, out_ch: o, kernel: 3, stride: 2, pad: 1 };
    let side = image.div_ceil(2).div_ceil(2).div_ceil(2);
    Net::new(
        &[3, image, image],
        vec![
            conv(3, 16),
            Layer::Relu,
            conv(16, 32),
            Layer::Relu,
            conv(32, 32),
            Layer::Relu,
            Layer::Flatten,
            Layer::Linear { inputs: 32 * side * side, outputs },
        ],
    )
}

/// Deeper encoder with max-pooling, sized for 224x224 inputs.
pub fn deep_encoder(image: usize, outputs: usize) -> Net {
    let mut net = Net::new(
        &[3, image, image],
        vec![
            Layer::Conv2d { in_ch: 3, out_ch: 64, kernel: 7, stride: 2, pad: 3 },
            Layer::Relu,
            Layer::MaxPool2d { kernel: 3, stride: 2, pad: 1 },
            Layer::Conv2d { in_ch: 64, out_ch: 64, kernel: 3, stride: 1, pad: 1 },
            Layer::Relu,
            Layer::MaxPool2d { kernel: 3, stride: 2, pad: 0 },
            Layer::Conv2d { in_ch: 64, out_ch: 64, kernel: 3, stride: 2, pad: 1 },
            Layer::Relu,
            Layer::MaxPool2d { kernel: 3, stride: 2, pad: 0 },
            Layer::Flatten,
        ],
    );
    let flat = net.output_shape().map(|s| s[0]).unwrap_or(0);
    net.layers.push(Layer::Linear { inputs: flat, outputs });
    net
}

/// Mirror of [`small_encoder`]: linear expansion, two upsampling 3x3
/// convolutions, then a per-pixel colour projection upsampled to full size
/// and squashed to `[0, 1]`.
pub fn small_decoder(state_dim: usize, image: usize) -> Net {
    let side = image / 8;
    let conv = |i, o| Layer::Conv2d { in_ch: i, out_ch: o, kernel: 3, stride: 1, pad: 1 };
    Net::new(
        &[state_dim],
        vec![
            Layer::Linear { inputs: state_dim, outputs: 32 * side * side },
            Layer::Relu,
            Layer::Reshape { shape: vec![32, side, side] },
            Layer::Upsample2,
            conv(32, 32),
            Layer::Relu,
            Layer::Upsample2,
            conv(32, 16),
            Layer::Relu,
            Layer::Conv2d { in_ch: 16, out_ch: 3, kernel: 1, stride: 1, pad: 0 },
            Layer::Upsample2,
            Layer::Sigmoid,
        ],
    )
}

/// Fully connected network with `tanh` hidden layers.
pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize) -> Net {
    let mut layers = Vec::new();
    let mut prev = inputs;
    for &h in hidden {
        layers.push(Layer::Linear { inputs: prev, outputs: h });
        layers.push(Layer::Tanh);
        prev = h;
    }
    layers.push(Layer::Linear { inputs: prev, outputs });
    Net::new(&[inputs], layers)
}
