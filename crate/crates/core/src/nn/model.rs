use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm2d, Conv2d, ConvBnRelu, Layer, Linear, Mode, Param, ResidualBlock};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Element, Rng, Tape, Tensor, Var};

pub const DEFAULT_NUM_CLASSES: usize = 51;
pub const DEFAULT_INPUT_SIZE: usize = 256;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// One stage of the feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3×3 convolution → batch norm → ReLU.
    Conv { out_channels: usize, stride: usize },
    /// Identity-skip residual block at the current width.
    Residual,
    /// Non-overlapping max pooling.
    MaxPool { window: usize },
}

/// Architecture description. The feature extractor is always followed by
/// global max pooling and a linear classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelSpec {
    /// Two stem convolutions (64 filters stride 1, 128 filters stride 2),
    /// three 128-wide residual blocks, global max pool, linear head.
    pub fn resnet9(num_classes: usize, input_size: usize) -> Self {
        ModelSpec {
            in_channels: 3,
            input_size,
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 64,
                    stride: 1,
                },
                LayerSpec::Conv {
                    out_channels: 128,
                    stride: 2,
                },
                LayerSpec::Residual,
                LayerSpec::Residual,
                LayerSpec::Residual,
            ],
            num_classes,
            bn_eps: BN_EPS,
            bn_momentum: BN_MOMENTUM,
        }
    }

    /// Shapes after every stage for a batch of `n`, starting with the
    /// input, then each layer, the pooled features, and the logits.
    pub fn shape_chain(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        let (mut c, mut h, mut w) = (self.in_channels, self.input_size, self.input_size);
        let mut chain = vec![vec![n, c, h, w]];
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    stride,
                } => {
                    if h < kernels::KERNEL || w < kernels::KERNEL {
                        return Err(Error::shape(format!(
                            "feature map {h}x{w} too small for a 3x3 convolution"
                        )));
                    }
                    c = out_channels;
                    h = kernels::conv_out_dim(h, stride);
                    w = kernels::conv_out_dim(w, stride);
                }
                LayerSpec::Residual => {
                    if h < kernels::KERNEL || w < kernels::KERNEL {
                        return Err(Error::shape(format!(
                            "feature map {h}x{w} too small for a residual block"
                        )));
                    }
                }
                LayerSpec::MaxPool { window } => {
                    if window == 0 || h < window || w < window {
                        return Err(Error::shape(format!(
                            "max pool window {window} does not fit {h}x{w}"
                        )));
                    }
                    h /= window;
                    w /= window;
                }
            }
            chain.push(vec![n, c, h, w]);
        }
        chain.push(vec![n, c]);
        chain.push(vec![n, self.num_classes]);
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.num_classes == 0 || self.input_size == 0 {
            return Err(Error::invalid(
                "channels, classes and input size must be positive",
            ));
        }
        for layer in &self.layers {
            if let LayerSpec::Conv { out_channels, stride } = *layer {
                if out_channels == 0 || !(stride == 1 || stride == 2) {
                    return Err(Error::invalid(format!("invalid conv layer {layer:?}")));
                }
            }
        }
        self.shape_chain(1).map(|_| ())
    }

    pub fn feature_width(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .unwrap_or(self.in_channels)
    }
}

/// The classifier network. Parameters and running statistics are held
/// directly; see [`ResNet9::forward`] for training and [`ResNet9::infer`]
/// for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNet9<T: Element = f32> {
    spec: ModelSpec,
    layers: Vec<Layer<T>>,
    head: Linear<T>,
}

impl<T: Element> ResNet9<T> {
    /// Builds the architecture with zero weights and identity batch norm.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut channels = spec.in_channels;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let prefix = format!("layers.{i}");
            layers.push(match *layer {
                LayerSpec::Conv {
                    out_channels,
                    stride,
                } => {
                    let l = ConvBnRelu {
                        conv: Conv2d::new(&format!("{prefix}.conv"), channels, out_channels, stride)?,
                        bn: BatchNorm2d::new(
                            &format!("{prefix}.bn"),
                            out_channels,
                            spec.bn_eps,
                            spec.bn_momentum,
                        )?,
                    };
                    channels = out_channels;
                    Layer::ConvBnRelu(l)
                }
                LayerSpec::Residual => Layer::Residual(ResidualBlock::new(
                    &prefix,
                    channels,
                    spec.bn_eps,
                    spec.bn_momentum,
                )?),
                LayerSpec::MaxPool { window } => Layer::MaxPool { window },
            });
        }
        let head = Linear::new("head", channels, spec.num_classes)?;
        Ok(ResNet9 { spec, layers, head })
    }

    /// Builds and initializes with [`ResNet9::kaiming_init`].
    pub fn init(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        let mut model = Self::new(spec)?;
        model.kaiming_init(rng);
        Ok(model)
    }

    /// Convolution and linear weights ~ N(0, 2/fan_in) drawn in parameter
    /// order; linear bias 0; batch norm γ=1, β=0, running mean 0, var 1.
    pub fn kaiming_init(&mut self, rng: &mut Rng) {
        for layer in &mut self.layers {
            layer.kaiming(rng);
        }
        self.head.kaiming(rng);
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn head(&self) -> &Linear<T> {
        &self.head
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = &self.spec;
        match *shape {
            [_, c, h, w] if c == s.in_channels && h == s.input_size && w == s.input_size => Ok(()),
            _ => Err(Error::shape(format!(
                "model expects input [N,{},{},{}], got {shape:?}",
                s.in_channels, s.input_size, s.input_size
            ))),
        }
    }

    /// Records the forward pass on `tape` and returns the logits. Train mode
    /// normalizes with batch statistics and updates running statistics.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        let mut h = x;
        for layer in &mut self.layers {
            h = layer.forward(tape, h, mode)?;
        }
        let pooled = tape.global_max_pool(h)?;
        self.head.forward(tape, pooled)
    }

    /// Eval-mode forward without recording anything. Pure: the model is not
    /// modified and each sample's logits depend only on that sample.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.infer_trace(x)?.pop().expect("trace ends with logits"))
    }

    /// Like [`ResNet9::infer`] but returns every intermediate activation:
    /// one entry per layer, then the pooled features, then the logits.
    pub fn infer_trace(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x.shape())?;
        let mut trace = Vec::with_capacity(self.layers.len() + 2);
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
            trace.push(h.clone());
        }
        let (pooled, _) = kernels::global_max_pool(&h)?;
        let logits = self.head.infer(&pooled)?;
        trace.push(pooled);
        trace.push(logits);
        Ok(trace)
    }

    /// Trainable tensors in canonical order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.layers.iter().flat_map(|l| l.params()).collect();
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> =
            self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        out.extend(self.head.params_mut());
        out
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        self.layers.iter().flat_map(|l| l.batch_norms()).collect()
    }

    /// Sum of element counts over trainable tensors (running statistics
    /// excluded).
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Every persistent tensor (parameters, then running statistics) with
    /// its name, in canonical order.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for bn in self.batch_norms() {
            out.push((bn.running_mean_name(), bn.running_mean.clone()));
            out.push((bn.running_var_name(), bn.running_var.clone()));
        }
        out
    }

    /// Mutable access to every persistent tensor, same order as
    /// [`ResNet9::state`].
    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut buffers: Vec<(String, &mut Tensor<T>)> = Vec::new();
        let mut params: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for layer in &mut self.layers {
            let (p, b) = layer.state_mut();
            params.extend(p);
            buffers.extend(b);
        }
        params.extend(
            self.head
                .params_mut()
                .into_iter()
                .map(|p| (p.name.clone(), &mut p.value)),
        );
        params.extend(buffers);
        params
    }

    /// Converts element type, e.g. to `f64` for gradient checking.
    pub fn cast<U: Element>(&self) -> ResNet9<U> {
        ResNet9 {
            spec: self.spec.clone(),
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            head: self.head.cast(),
        }
    }
}
