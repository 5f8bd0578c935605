use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvGeometry};
use super::tensor::{softmax, Tensor};
use crate::error::{Error, Result};

pub const CLASS_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    },
    Relu,
    Maxpool {
        kernel: (usize, usize),
        stride: usize,
    },
    Gap,
    Fc {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: (3, 3),
            stride: 1,
            pad: 1,
        }
    }

    pub fn pool2x2() -> Self {
        LayerSpec::Maxpool {
            kernel: (2, 2),
            stride: 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Gap => "gap",
            LayerSpec::Fc { .. } => "fc",
        }
    }

    /// Window geometry of spatial layers (relu is a 1x1 identity window).
    pub fn window(&self) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::Conv {
                kernel, stride, pad, ..
            } => Some(ConvGeometry { kernel, stride, pad }),
            LayerSpec::Maxpool { kernel, stride } => Some(ConvGeometry {
                kernel,
                stride,
                pad: 0,
            }),
            LayerSpec::Relu => Some(ConvGeometry {
                kernel: (1, 1),
                stride: 1,
                pad: 0,
            }),
            LayerSpec::Gap | LayerSpec::Fc { .. } => None,
        }
    }

    fn check(&self, index: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Model(format!("layer {index} ({}): {m}", self.name())));
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if stride < 1 {
                    return bad("stride must be >= 1");
                }
                if kernel.0 < 1 || kernel.1 < 1 {
                    return bad("kernel extents must be >= 1");
                }
                if in_channels == 0 || out_channels == 0 {
                    return bad("channel counts must be >= 1");
                }
            }
            LayerSpec::Maxpool { kernel, stride } => {
                if stride < 1 {
                    return bad("stride must be >= 1");
                }
                if kernel.0 < 1 || kernel.1 < 1 {
                    return bad("kernel extents must be >= 1");
                }
            }
            LayerSpec::Fc {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return bad("feature counts must be >= 1");
                }
            }
            LayerSpec::Relu | LayerSpec::Gap => {}
        }
        Ok(())
    }
}

/// Layer stack for a single-sample (C, H, W) classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
    pub final_conv_units: usize,
}

impl ModelSpec {
    /// Four conv blocks (3x3 conv, ReLU, 2x2 max pool) of widths 8-16-32-`units`,
    /// then global average pooling and a linear classifier.
    pub fn desk(patch_side: usize, units: usize) -> Self {
        let widths = [8, 16, 32, units];
        let mut layers = Vec::new();
        let mut prev = 1;
        for &w in &widths {
            layers.push(LayerSpec::conv3x3(prev, w));
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::pool2x2());
            prev = w;
        }
        layers.push(LayerSpec::Gap);
        layers.push(LayerSpec::Fc {
            in_features: units,
            out_features: CLASS_COUNT,
        });
        ModelSpec {
            input_shape: [1, patch_side, patch_side],
            layers,
            class_count: CLASS_COUNT,
            final_conv_units: units,
        }
    }

    /// Output shape of every layer; fails naming the first inconsistent layer.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check(i)?;
            let mismatch = |expected: Vec<usize>, actual: &[usize]| Error::Shape {
                layer: format!("layer {i} ({})", layer.name()),
                expected,
                actual: actual.to_vec(),
            };
            shape = match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(mismatch(vec![in_channels, 0, 0], &shape));
                    }
                    let h = ops::out_extent(shape[1], kernel.0, stride, pad);
                    let w = ops::out_extent(shape[2], kernel.1, stride, pad);
                    match (h, w) {
                        (Some(h), Some(w)) => vec![out_channels, h, w],
                        _ => return Err(mismatch(vec![in_channels, kernel.0, kernel.1], &shape)),
                    }
                }
                LayerSpec::Relu => shape,
                LayerSpec::Maxpool { kernel, stride } => {
                    if shape.len() != 3 {
                        return Err(mismatch(vec![0, kernel.0, kernel.1], &shape));
                    }
                    match (
                        ops::out_extent(shape[1], kernel.0, stride, 0),
                        ops::out_extent(shape[2], kernel.1, stride, 0),
                    ) {
                        (Some(h), Some(w)) => vec![shape[0], h, w],
                        _ => return Err(mismatch(vec![shape[0], kernel.0, kernel.1], &shape)),
                    }
                }
                LayerSpec::Gap => {
                    if shape.len() != 3 {
                        return Err(mismatch(vec![0, 0, 0], &shape));
                    }
                    vec![shape[0]]
                }
                LayerSpec::Fc {
                    in_features,
                    out_features,
                } => {
                    if shape != [in_features] {
                        return Err(mismatch(vec![in_features], &shape));
                    }
                    vec![out_features]
                }
            };
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    /// Checks layer chaining and the conv -> gap -> fc(U -> classes) tail.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.output_shapes()?;
        let n = self.layers.len();
        if n < 3 {
            return Err(Error::Model("need at least conv, gap and fc layers".into()));
        }
        let tail_ok = matches!(self.layers[n - 2], LayerSpec::Gap)
            && matches!(self.layers[n - 1], LayerSpec::Fc { in_features, out_features }
                if in_features == self.final_conv_units && out_features == self.class_count);
        if !tail_ok {
            return Err(Error::Model(format!(
                "model must end with gap -> fc({} -> {})",
                self.final_conv_units, self.class_count
            )));
        }
        let before = &self.layers[..n - 2];
        if before.iter().any(|l| matches!(l, LayerSpec::Gap | LayerSpec::Fc { .. })) {
            return Err(Error::Model("gap/fc may only appear in the classifier tail".into()));
        }
        let last_conv = before.iter().rev().find_map(|l| match l {
            LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
            _ => None,
        });
        if last_conv != Some(self.final_conv_units) {
            return Err(Error::Model(format!(
                "final conv block must have {} units",
                self.final_conv_units
            )));
        }
        if shapes[n - 3][0] != self.final_conv_units {
            return Err(Error::Model("final feature map channel count mismatch".into()));
        }
        Ok(())
    }

    /// Index of the layer whose output feeds global average pooling.
    pub fn feature_layer(&self) -> usize {
        self.layers.len() - 3
    }

    pub fn gap_layer(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn fc_layer(&self) -> usize {
        self.layers.len() - 1
    }
}

/// Trainable parameters of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }
}

/// Per-layer parameter slots; `None` for parameter-free layers.
pub type ParamSet = Vec<Option<Params>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Tensor,
    pub probabilities: Tensor,
    /// Output of every layer, present when recording was requested.
    pub activations: Option<Vec<Tensor>>,
}

impl ForwardPass {
    pub fn activation(&self, layer: usize) -> Option<&Tensor> {
        self.activations.as_ref().and_then(|a| a.get(layer))
    }
}

impl Model {
    /// Fan-in scaled uniform initialization, zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .layers
            .iter()
            .map(|layer| match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = in_channels * kernel.0 * kernel.1;
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Some(Params {
                        weight: Tensor::from_fn(&[out_channels, in_channels, kernel.0, kernel.1], |_| {
                            rng.gen_range(-bound..bound)
                        }),
                        bias: Tensor::zeros(&[out_channels]),
                    })
                }
                LayerSpec::Fc {
                    in_features,
                    out_features,
                } => {
                    let bound = (1.0 / in_features as f64).sqrt();
                    Some(Params {
                        weight: Tensor::from_fn(&[out_features, in_features], |_| rng.gen_range(-bound..bound)),
                        bias: Tensor::zeros(&[out_features]),
                    })
                }
                _ => None,
            })
            .collect();
        Ok(Model { spec, params })
    }

    /// Builds a model from explicit parameters, checking every tensor shape.
    pub fn from_params(spec: ModelSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.layers.len() {
            return Err(Error::Model(format!(
                "expected {} parameter slots, got {}",
                spec.layers.len(),
                params.len()
            )));
        }
        for (i, (layer, p)) in spec.layers.iter().zip(&params).enumerate() {
            let expected: Option<(Vec<usize>, Vec<usize>)> = match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => Some((vec![out_channels, in_channels, kernel.0, kernel.1], vec![out_channels])),
                LayerSpec::Fc {
                    in_features,
                    out_features,
                } => Some((vec![out_features, in_features], vec![out_features])),
                _ => None,
            };
            match (expected, p) {
                (None, None) => {}
                (Some((w, b)), Some(p)) if p.weight.shape() == w && p.bias.shape() == b => {}
                (Some((w, _)), Some(p)) => {
                    return Err(Error::Shape {
                        layer: format!("layer {i} ({}) parameters", layer.name()),
                        expected: w,
                        actual: p.weight.shape().to_vec(),
                    })
                }
                _ => return Err(Error::Model(format!("layer {i} ({}): parameter slot mismatch", layer.name()))),
            }
        }
        Ok(Model { spec, params })
    }

    pub fn fc_params(&self) -> &Params {
        self.params[self.spec.fc_layer()].as_ref().expect("fc parameters")
    }

    pub fn fc_params_mut(&mut self) -> &mut Params {
        let i = self.spec.fc_layer();
        self.params[i].as_mut().expect("fc parameters")
    }

    /// FC weight connecting `unit` to `class`.
    pub fn class_weight(&self, class: usize, unit: usize) -> f64 {
        self.fc_params().weight.at2(class, unit)
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.spec.input_shape {
            return Err(Error::Shape {
                layer: "input".into(),
                expected: self.spec.input_shape.to_vec(),
                actual: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn apply_layer(&self, index: usize, x: &Tensor) -> Tensor {
        apply_layer(&self.spec.layers[index], self.params[index].as_ref(), x)
    }

    pub fn forward(&self, input: &Tensor, record: bool) -> Result<ForwardPass> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(if record { self.spec.layers.len() } else { 0 });
        let mut x = input.clone();
        for i in 0..self.spec.layers.len() {
            x = self.apply_layer(i, &x);
            if record {
                acts.push(x.clone());
            }
        }
        let probabilities = Tensor::new(vec![x.len()], softmax(x.data()))?;
        Ok(ForwardPass {
            logits: x,
            probabilities,
            activations: record.then_some(acts),
        })
    }

    /// Final conv feature maps (U, h, w): the input to global average pooling.
    pub fn features(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for i in 0..=self.spec.feature_layer() {
            x = self.apply_layer(i, &x);
        }
        Ok(x)
    }

    /// Cross-entropy loss of one labelled sample and its parameter gradients.
    pub fn loss_and_gradients(&self, input: &Tensor, label: usize) -> Result<(f64, ParamSet)> {
        self.check_input(input)?;
        if label >= self.spec.class_count {
            return Err(Error::OutOfRange(format!(
                "label {label} not in [0, {})",
                self.spec.class_count
            )));
        }
        let n = self.spec.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut x = input.clone();
        for i in 0..n {
            let y = self.apply_layer(i, &x);
            inputs.push(x);
            x = y;
        }
        let p = softmax(x.data());
        let loss = -p[label].max(f64::MIN_POSITIVE).ln();
        let mut grad = p;
        grad[label] -= 1.0;
        let mut grad = Tensor::new(vec![grad.len()], grad)?;

        let mut grads: ParamSet = vec![None; n];
        for i in (0..n).rev() {
            let xin = &inputs[i];
            grad = match self.spec.layers[i] {
                LayerSpec::Conv {
                    kernel, stride, pad, ..
                } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let (dx, dw, db) =
                        ops::conv2d_backward(xin, &p.weight, &grad, ConvGeometry { kernel, stride, pad });
                    grads[i] = Some(Params { weight: dw, bias: db });
                    dx
                }
                LayerSpec::Relu => ops::relu_backward(xin, &grad),
                LayerSpec::Maxpool { kernel, stride } => ops::maxpool_backward(xin, &grad, kernel, stride),
                LayerSpec::Gap => ops::gap_backward(xin.shape(), &grad),
                LayerSpec::Fc { .. } => {
                    let p = self.params[i].as_ref().expect("fc params");
                    let (dx, dw, db) = ops::fc_backward(xin, &p.weight, &grad);
                    grads[i] = Some(Params { weight: dw, bias: db });
                    dx
                }
            };
        }
        Ok((loss, grads))
    }
}

pub(crate) fn apply_layer(layer: &LayerSpec, params: Option<&Params>, x: &Tensor) -> Tensor {
    match *layer {
        LayerSpec::Conv {
            kernel, stride, pad, ..
        } => {
            let p = params.expect("conv params");
            ops::conv2d(x, &p.weight, &p.bias, ConvGeometry { kernel, stride, pad })
        }
        LayerSpec::Relu => ops::relu(x),
        LayerSpec::Maxpool { kernel, stride } => ops::maxpool(x, kernel, stride),
        LayerSpec::Gap => ops::gap(x),
        LayerSpec::Fc { .. } => {
            let p = params.expect("fc params");
            ops::fc(x, &p.weight, &p.bias)
        }
    }
}
