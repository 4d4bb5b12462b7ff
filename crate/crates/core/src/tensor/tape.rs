use std::collections::HashMap;

use super::kernels::{self, BatchNormCache};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

/// How the right operand of an elementwise op lines up with the left one.
#[derive(Debug, Clone, Copy)]
enum Broadcast {
    Same,
    /// Right operand is a `[C]` vector along the channel axis; `inner` is
    /// the number of contiguous elements per channel entry.
    Channel { channels: usize, inner: usize },
}

impl Broadcast {
    /// Channel axis: last axis for rank ≤ 2, otherwise axis `rank − 3`
    /// (so `[C,H,W]` and `[N,C,H,W]` both broadcast over C).
    fn resolve(a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Broadcast::Same);
        }
        let axis = if a.len() <= 2 { a.len() - 1 } else { a.len() - 3 };
        if let [c] = *b {
            if a[axis] == c {
                return Ok(Broadcast::Channel {
                    channels: c,
                    inner: a[axis + 1..].iter().product(),
                });
            }
        }
        Err(Error::shape(format!(
            "cannot broadcast {b:?} against {a:?} (only equal shapes or a per-channel vector)"
        )))
    }

    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Channel { channels, inner } => (i / inner) % channels,
        }
    }

    /// Folds a gradient shaped like the left operand onto the right operand.
    fn reduce<T: Element>(self, grad: Vec<T>, rhs_shape: &[usize]) -> Tensor<T> {
        match self {
            Broadcast::Same => Tensor::from_parts(rhs_shape.to_vec(), grad),
            Broadcast::Channel { channels, .. } => {
                let mut out = vec![T::zero(); channels];
                for (i, g) in grad.into_iter().enumerate() {
                    out[self.index(i)] += g;
                }
                Tensor::from_parts(rhs_shape.to_vec(), out)
            }
        }
    }
}

enum Op<T: Element> {
    Leaf,
    MatMul(Var, Var),
    Elementwise {
        op: Elementwise,
        lhs: Var,
        rhs: Var,
        broadcast: Broadcast,
    },
    Relu(Var),
    Sum(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        weight: Var,
        stride: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormCache<T>,
        train: bool,
    },
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    LogSoftmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        logp: Tensor<T>,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations. Each forward method computes its
/// output immediately and appends a node; [`Tape::backward`] walks the nodes
/// in exact reverse order.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records an input tensor. Gradients are tracked when the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = value.requires_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a named trainable tensor; its gradient can be fetched by name
    /// from the resulting [`Gradients`].
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        let var = self.push(value.clone().with_requires_grad(true), Op::Leaf, true);
        self.params.push((name.to_string(), var));
        var
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.tracks(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Pointwise `add`/`sub`/`mul`. The right operand may be a per-channel
    /// vector instead of a same-shaped tensor.
    pub fn elementwise(&mut self, op: Elementwise, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        let broadcast = Broadcast::resolve(a.shape(), b.shape())?;
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[broadcast.index(i)];
                match op {
                    Elementwise::Add => x + y,
                    Elementwise::Sub => x - y,
                    Elementwise::Mul => x * y,
                }
            })
            .collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        let rg = self.tracks(&[lhs, rhs]);
        Ok(self.push(
            out,
            Op::Elementwise {
                op,
                lhs,
                rhs,
                broadcast,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, a, b)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::relu(self.value(x));
        let rg = self.tracks(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.tracks(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?.with_requires_grad(false);
        let rg = self.tracks(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, stride: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(weight), stride)?;
        let rg = self.tracks(&[x, weight]);
        Ok(self.push(out, Op::Conv2d { x, weight, stride }, rg))
    }

    /// Train-mode batch norm. Returns the output and the per-channel batch
    /// mean and biased variance so the caller can update running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (out, cache) =
            kernels::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let (mean, var) = (cache.mean.clone(), cache.var.clone());
        let rg = self.tracks(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                train: true,
            },
            rg,
        );
        Ok((v, mean, var))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var> {
        let (out, cache) = kernels::batch_norm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        let rg = self.tracks(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                train: false,
            },
            rg,
        ))
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::global_max_pool(self.value(x))?;
        let rg = self.tracks(&[x]);
        Ok(self.push(out, Op::GlobalMaxPool { x, argmax }, rg))
    }

    pub fn max_pool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (out, argmax) = kernels::max_pool2d(self.value(x), window)?;
        let rg = self.tracks(&[x]);
        Ok(self.push(out, Op::MaxPool2d { x, argmax }, rg))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::linear(self.value(x), self.value(weight), self.value(bias))?;
        let rg = self.tracks(&[x, weight, bias]);
        Ok(self.push(out, Op::Linear { x, weight, bias }, rg))
    }

    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let out = kernels::log_softmax(self.value(logits))?;
        let rg = self.tracks(&[logits]);
        Ok(self.push(out, Op::LogSoftmax(logits), rg))
    }

    /// Mean cross-entropy over the batch, as a `[1]` tensor.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, logp) = kernels::cross_entropy(self.value(logits), labels)?;
        let rg = self.tracks(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                logp,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a single-element `loss`.
    ///
    /// Every leaf that requires a gradient receives one of its own shape,
    /// zero-filled when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(loss_value.map(|_| T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let dy = match &node.op {
                Op::Leaf => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(&node.op, &node.value, dy, &mut grads)?;
        }

        let mut out = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[idx].take().unwrap_or_else(|| node.value.zeros_like());
                out.insert(Var(idx), g);
            }
        }
        Ok(Gradients {
            grads: out,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape());
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        dy: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (da, db) = kernels::matmul_backward(self.value(*a), self.value(*b), &dy);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Elementwise {
                op,
                lhs,
                rhs,
                broadcast,
            } => {
                let (a, b) = (self.value(*lhs), self.value(*rhs));
                let bd = b.data();
                let (da, db): (Vec<T>, Vec<T>) = match op {
                    Elementwise::Add => (dy.data().to_vec(), dy.data().to_vec()),
                    Elementwise::Sub => (dy.data().to_vec(), dy.data().iter().map(|&g| -g).collect()),
                    Elementwise::Mul => (
                        dy.data()
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| g * bd[broadcast.index(i)])
                            .collect(),
                        dy.data().iter().zip(a.data()).map(|(&g, &x)| g * x).collect(),
                    ),
                };
                let db = broadcast.reduce(db, b.shape());
                self.accumulate(grads, *lhs, Tensor::from_parts(a.shape().to_vec(), da));
                self.accumulate(grads, *rhs, db);
            }
            Op::Relu(x) => {
                let dx = kernels::relu_backward(self.value(*x), &dy);
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let g = dy.data()[0];
                let dx = self.value(*x).map(|_| g);
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => {
                let dx = dy.reshape(self.value(*x).shape())?.with_requires_grad(false);
                self.accumulate(grads, *x, dx);
            }
            Op::Conv2d { x, weight, stride } => {
                let (dx, dw) =
                    kernels::conv2d_backward(self.value(*x), self.value(*weight), *stride, &dy)?;
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *weight, dw);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                train,
            } => {
                let g = self.value(*gamma);
                let (dx, dgamma, dbeta) = if *train {
                    kernels::batch_norm_train_backward(&dy, g, cache)?
                } else {
                    kernels::batch_norm_eval_backward(&dy, g, cache)?
                };
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::GlobalMaxPool { x, argmax } | Op::MaxPool2d { x, argmax } => {
                let dx = kernels::max_pool_backward(self.value(*x).shape(), argmax, &dy);
                self.accumulate(grads, *x, dx);
            }
            Op::Linear { x, weight, bias } => {
                let (dx, dw, db) = kernels::linear_backward(self.value(*x), self.value(*weight), &dy);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *weight, dw);
                self.accumulate(grads, *bias, db);
            }
            Op::LogSoftmax(x) => {
                let dx = kernels::log_softmax_backward(out, &dy);
                self.accumulate(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                logp,
            } => {
                let dx = kernels::cross_entropy_backward(logp, labels, dy.data()[0]);
                self.accumulate(grads, *logits, dx);
            }
        }
        Ok(())
    }
}

/// Gradients of a loss with respect to every tracked leaf.
#[derive(Debug)]
pub struct Gradients<T: Element> {
    grads: HashMap<Var, Tensor<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    /// Gradient of the parameter registered under `name`. If the same name
    /// was registered more than once, the last registration wins.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.grads.get(v))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
        tape.leaf(
            Tensor::from_vec(shape, data.to_vec())
                .unwrap()
                .with_requires_grad(true),
        )
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[3], &[1.0, -2.0, 5.0]);
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[2], &[1.0, 2.0]);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn relu_gradient_at_points() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[3], &[-1.0, 0.0, 2.0]);
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let loss = tape.sum(r);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[2], &[1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[2], &[1.0, 2.0]);
        let unused = leaf(&mut tape, &[2, 2], &[1.0; 4]);
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn channel_broadcast_add_and_reduce() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[2, 2, 1, 2], &[0.0; 8]);
        let b = leaf(&mut tape, &[2], &[1.0, 10.0]);
        let y = tape.add(x, b).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[1.0, 1.0, 10.0, 10.0, 1.0, 1.0, 10.0, 10.0]
        );
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[4.0, 4.0]);
        let bad = leaf(&mut tape, &[3], &[0.0; 3]);
        assert!(tape.add(x, bad).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[2], &[3.0, 4.0]);
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn param_lookup_by_name() {
        let mut tape = Tape::<f64>::new();
        let w = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let v = tape.param("w", &w);
        let sq = tape.mul(v, v).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.param("w").unwrap().data(), &[2.0, 4.0]);
        assert!(g.param("missing").is_none());
    }
}
