use crate::error::Result;
use crate::tensor::{kernels, Element, Rng, Tape, Tensor, Var};

/// Whether batch norm uses batch statistics (and updates its running
/// averages) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Element = f32> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether weight decay applies. Off for batch-norm affine parameters.
    pub decay: bool,
}

impl<T: Element> Param<T> {
    fn zeros(name: String, shape: &[usize], decay: bool) -> Result<Self> {
        Ok(Param {
            name,
            value: Tensor::zeros(shape)?,
            decay,
        })
    }

    fn bind(&self, tape: &mut Tape<T>) -> Var {
        tape.param(&self.name, &self.value)
    }

    fn cast<U: Element>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            value: self.value.cast(),
            decay: self.decay,
        }
    }

    fn fill_normal(&mut self, std: f64, rng: &mut Rng) {
        for v in self.value.data_mut() {
            *v = T::from_f64(std * rng.next_normal());
        }
    }

    fn fill(&mut self, value: f64) {
        let v = T::from_f64(value);
        self.value.data_mut().iter_mut().for_each(|x| *x = v);
    }
}

/// 3×3 convolution, padding 1, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Element = f32> {
    pub weight: Param<T>,
    pub stride: usize,
}

impl<T: Element> Conv2d<T> {
    pub fn new(prefix: &str, in_ch: usize, out_ch: usize, stride: usize) -> Result<Self> {
        Ok(Conv2d {
            weight: Param::zeros(
                format!("{prefix}.weight"),
                &[out_ch, in_ch, kernels::KERNEL, kernels::KERNEL],
                true,
            )?,
            stride,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = self.weight.bind(tape);
        tape.conv2d(x, w, self.stride)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        kernels::conv2d(x, &self.weight.value, self.stride)
    }

    fn kaiming(&mut self, rng: &mut Rng) {
        let fan_in = self.in_channels() * kernels::KERNEL * kernels::KERNEL;
        self.weight.fill_normal((2.0 / fan_in as f64).sqrt(), rng);
    }

    fn cast<U: Element>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            stride: self.stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T: Element = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    prefix: String,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(prefix: &str, channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Param {
                name: format!("{prefix}.gamma"),
                value: Tensor::ones(&[channels])?,
                decay: false,
            },
            beta: Param::zeros(format!("{prefix}.beta"), &[channels], false)?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::ones(&[channels])?,
            eps,
            momentum,
            prefix: prefix.to_string(),
        })
    }

    pub fn running_mean_name(&self) -> String {
        format!("{}.running_mean", self.prefix)
    }

    pub fn running_var_name(&self) -> String {
        format!("{}.running_var", self.prefix)
    }

    /// Train mode also folds the batch statistics into the running
    /// averages: `running ← (1 − momentum)·running + momentum·batch`.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let g = self.gamma.bind(tape);
        let b = self.beta.bind(tape);
        match mode {
            Mode::Train => {
                let (y, mean, var) = tape.batch_norm_train(x, g, b, self.eps)?;
                let m = self.momentum;
                for (r, s) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = T::from_f64((1.0 - m) * r.as_f64() + m * s);
                }
                for (r, s) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *r = T::from_f64((1.0 - m) * r.as_f64() + m * s);
                }
                Ok(y)
            }
            Mode::Eval => tape.batch_norm_eval(
                x,
                g,
                b,
                &self.running_mean,
                &self.running_var,
                self.eps,
            ),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, _) = kernels::batch_norm_eval(
            x,
            &self.gamma.value,
            &self.beta.value,
            &self.running_mean,
            &self.running_var,
            self.eps,
        )?;
        Ok(y)
    }

    fn reset(&mut self) {
        self.gamma.fill(1.0);
        self.beta.fill(0.0);
        self.running_mean.data_mut().iter_mut().for_each(|x| *x = T::zero());
        self.running_var.data_mut().iter_mut().for_each(|x| *x = T::one());
    }

    fn cast<U: Element>(&self) -> BatchNorm2d<U> {
        BatchNorm2d {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            eps: self.eps,
            momentum: self.momentum,
            prefix: self.prefix.clone(),
        }
    }
}

/// `x · weightᵀ + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Element = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Element> Linear<T> {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Linear {
            weight: Param::zeros(format!("{prefix}.weight"), &[fan_out, fan_in], true)?,
            bias: Param::zeros(format!("{prefix}.bias"), &[fan_out], true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = self.weight.bind(tape);
        let b = self.bias.bind(tape);
        tape.linear(x, w, b)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        kernels::linear(x, &self.weight.value, &self.bias.value)
    }

    pub(crate) fn kaiming(&mut self, rng: &mut Rng) {
        let fan_in = self.weight.value.shape()[1];
        self.weight.fill_normal((2.0 / fan_in as f64).sqrt(), rng);
        self.bias.fill(0.0);
    }

    pub(crate) fn cast<U: Element>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Convolution, batch norm, ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBnRelu<T: Element = f32> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Element> ConvBnRelu<T> {
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(tape, x)?;
        let y = self.bn.forward(tape, y, mode)?;
        Ok(tape.relu(y))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.conv.infer(x)?;
        Ok(kernels::relu(&self.bn.infer(&y)?))
    }
}

/// `relu(bn2(conv2(relu(bn1(conv1(x))))) + x)` with an identity skip.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T: Element = f32> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
}

impl<T: Element> ResidualBlock<T> {
    pub fn new(prefix: &str, channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        Ok(ResidualBlock {
            conv1: Conv2d::new(&format!("{prefix}.conv1"), channels, channels, 1)?,
            bn1: BatchNorm2d::new(&format!("{prefix}.bn1"), channels, eps, momentum)?,
            conv2: Conv2d::new(&format!("{prefix}.conv2"), channels, channels, 1)?,
            bn2: BatchNorm2d::new(&format!("{prefix}.bn2"), channels, eps, momentum)?,
        })
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv1.forward(tape, x)?;
        let y = self.bn1.forward(tape, y, mode)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, y)?;
        let y = self.bn2.forward(tape, y, mode)?;
        let y = tape.add(y, x)?;
        Ok(tape.relu(y))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = kernels::relu(&self.bn1.infer(&self.conv1.infer(x)?)?);
        let mut y = self.bn2.infer(&self.conv2.infer(&y)?)?;
        for (a, &b) in y.data_mut().iter_mut().zip(x.data()) {
            *a += b;
        }
        Ok(kernels::relu(&y))
    }
}

/// One entry of the feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Element = f32> {
    ConvBnRelu(ConvBnRelu<T>),
    Residual(ResidualBlock<T>),
    MaxPool { window: usize },
}

impl<T: Element> Layer<T> {
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        match self {
            Layer::ConvBnRelu(l) => l.forward(tape, x, mode),
            Layer::Residual(l) => l.forward(tape, x, mode),
            Layer::MaxPool { window } => tape.max_pool2d(x, *window),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::ConvBnRelu(l) => l.infer(x),
            Layer::Residual(l) => l.infer(x),
            Layer::MaxPool { window } => Ok(kernels::max_pool2d(x, *window)?.0),
        }
    }

    pub(crate) fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        match self {
            Layer::ConvBnRelu(l) => vec![&l.bn],
            Layer::Residual(l) => vec![&l.bn1, &l.bn2],
            Layer::MaxPool { .. } => vec![],
        }
    }

    pub(crate) fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::ConvBnRelu(l) => vec![&l.conv.weight, &l.bn.gamma, &l.bn.beta],
            Layer::Residual(l) => vec![
                &l.conv1.weight,
                &l.bn1.gamma,
                &l.bn1.beta,
                &l.conv2.weight,
                &l.bn2.gamma,
                &l.bn2.beta,
            ],
            Layer::MaxPool { .. } => vec![],
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::ConvBnRelu(l) => vec![&mut l.conv.weight, &mut l.bn.gamma, &mut l.bn.beta],
            Layer::Residual(l) => vec![
                &mut l.conv1.weight,
                &mut l.bn1.gamma,
                &mut l.bn1.beta,
                &mut l.conv2.weight,
                &mut l.bn2.gamma,
                &mut l.bn2.beta,
            ],
            Layer::MaxPool { .. } => vec![],
        }
    }

    /// Named mutable views of `(parameters, running statistics)`, each in
    /// canonical order.
    #[allow(clippy::type_complexity)]
    pub(crate) fn state_mut(
        &mut self,
    ) -> (Vec<(String, &mut Tensor<T>)>, Vec<(String, &mut Tensor<T>)>) {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        let conv_bn = conv_bn_state::<T>;
        match self {
            Layer::ConvBnRelu(l) => {
                let (p, b) = conv_bn(&mut l.conv, &mut l.bn);
                params.extend(p);
                buffers.extend(b);
            }
            Layer::Residual(l) => {
                let (p1, b1) = conv_bn(&mut l.conv1, &mut l.bn1);
                let (p2, b2) = conv_bn(&mut l.conv2, &mut l.bn2);
                params.extend(p1);
                params.extend(p2);
                buffers.extend(b1);
                buffers.extend(b2);
            }
            Layer::MaxPool { .. } => {}
        }
        (params, buffers)
    }

    pub(crate) fn kaiming(&mut self, rng: &mut Rng) {
        match self {
            Layer::ConvBnRelu(l) => {
                l.conv.kaiming(rng);
                l.bn.reset();
            }
            Layer::Residual(l) => {
                l.conv1.kaiming(rng);
                l.bn1.reset();
                l.conv2.kaiming(rng);
                l.bn2.reset();
            }
            Layer::MaxPool { .. } => {}
        }
    }

    pub(crate) fn cast<U: Element>(&self) -> Layer<U> {
        match self {
            Layer::ConvBnRelu(l) => Layer::ConvBnRelu(ConvBnRelu {
                conv: l.conv.cast(),
                bn: l.bn.cast(),
            }),
            Layer::Residual(l) => Layer::Residual(ResidualBlock {
                conv1: l.conv1.cast(),
                bn1: l.bn1.cast(),
                conv2: l.conv2.cast(),
                bn2: l.bn2.cast(),
            }),
            Layer::MaxPool { window } => Layer::MaxPool { window: *window },
        }
    }
}

impl<T: Element> Linear<T> {
    pub(crate) fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

}

type Named<'a, T> = (String, &'a mut Tensor<T>);

#[allow(clippy::type_complexity)]
fn conv_bn_state<'a, T: Element>(
    conv: &'a mut Conv2d<T>,
    bn: &'a mut BatchNorm2d<T>,
) -> ([Named<'a, T>; 3], [Named<'a, T>; 2]) {
    let names = (bn.running_mean_name(), bn.running_var_name());
    let BatchNorm2d {
        gamma,
        beta,
        running_mean,
        running_var,
        ..
    } = bn;
    (
        [
            (conv.weight.name.clone(), &mut conv.weight.value),
            (gamma.name.clone(), &mut gamma.value),
            (beta.name.clone(), &mut beta.value),
        ],
        [(names.0, running_mean), (names.1, running_var)],
    )
}
