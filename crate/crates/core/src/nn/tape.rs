//! Reverse-mode differentiation over a recorded sequence of tensor ops.
//!
//! A [`Tape`] borrows the parameter tensors it differentiates with respect
//! to and records every forward op together with whatever the op needs for
//! its backward pass (inputs are kept as node values, pooling keeps its
//! argmax, dropout keeps its mask). [`Tape::backward`] walks the record in
//! reverse and returns one gradient buffer per parameter.

use rand::Rng;

use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::entropy::{LossSpec, ProbabilityPair};
use crate::error::{Error, Result};

/// Handle to a value on a tape: either a borrowed parameter or a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    Param(usize),
    Node(usize),
}

/// Whether dropout is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

#[derive(Debug)]
enum Op {
    Input,
    Conv2d { input: Var, weight: Var, bias: Var, dims: ConvDims },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Relu { input: Var },
    Sigmoid { input: Var },
    Dense { input: Var, weight: Var, bias: Var },
    Dropout { input: Var, mask: Vec<f64> },
    Reshape { input: Var },
    Sum { inputs: Vec<Var> },
    Scale { input: Var, factor: f64 },
    Square { input: Var },
    CrossEntropy { input: Var, target: ProbabilityPair, spec: LossSpec, weight: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: Vec<&'p Tensor>,
    nodes: Vec<Node>,
}

/// Output of [`Tape::backward`]: one buffer per parameter, in the order the
/// parameters were given to [`Tape::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: Vec<&'p Tensor>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn param(&self, i: usize) -> Result<Var> {
        if i < self.params.len() {
            Ok(Var::Param(i))
        } else {
            Err(Error::shape(format!("no parameter {i} on this tape")))
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes, keeping the parameter bindings.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match v {
            Var::Param(i) => self.params[i],
            Var::Node(i) => &self.nodes[i].value,
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        match v {
            Var::Param(_) => true,
            Var::Node(i) => self.nodes[i].needs_grad,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var::Node(self.nodes.len() - 1)
    }

    /// Records a constant that no gradient flows into.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Same-padded, stride-1 3x3 convolution of a `(C_in, H, W)` input.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(input).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
        );
        if xs.len() != 3 || ws.len() != 4 || ws[2..] != [3, 3] || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::shape(format!(
                "conv2d: input {xs:?}, weights {ws:?}, bias {bs:?}"
            )));
        }
        let dims = ConvDims {
            c_in: xs[0],
            c_out: ws[0],
            h: xs[1],
            w: xs[2],
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            dims,
        );
        let value = Tensor::from_parts(vec![dims.c_out, dims.h, dims.w], out);
        let needs = self.needs_grad(input) || self.needs_grad(weight) || self.needs_grad(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                dims,
            },
            needs,
        ))
    }

    /// 2x2 max pooling with stride 2 over a `(C, H, W)` input with even `H`, `W`.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let xs = self.value(input).shape();
        if xs.len() != 3 {
            return Err(Error::shape(format!("maxpool2 expects (C, H, W), got {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("maxpool2 needs even height and width, got {h}x{w}")));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(input).data(), c, h, w);
        let value = Tensor::from_parts(vec![c, h / 2, w / 2], out);
        let needs = self.needs_grad(input);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, needs))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let needs = self.needs_grad(input);
        self.push(value, Op::Relu { input }, needs)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let needs = self.needs_grad(input);
        self.push(value, Op::Sigmoid { input }, needs)
    }

    /// `W x + b` for a vector input.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(input).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
        );
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::shape(format!(
                "dense: input {xs:?}, weights {ws:?}, bias {bs:?}"
            )));
        }
        let out = kernels::dense_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::from_parts(vec![ws[0]], out);
        let needs = self.needs_grad(input) || self.needs_grad(weight) || self.needs_grad(bias);
        Ok(self.push(value, Op::Dense { input, weight, bias }, needs))
    }

    /// Inverted dropout: in [`Mode::Train`] each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`. In
    /// [`Mode::Eval`], or with `rate == 0`, the input is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::domain(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let needs = self.needs_grad(input);
        Ok(self.push(value, Op::Dropout { input, mask }, needs))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = Tensor::new(shape, self.value(input).data().to_vec())?;
        let needs = self.needs_grad(input);
        Ok(self.push(value, Op::Reshape { input }, needs))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len();
        self.reshape(input, vec![n])
    }

    /// Scalar sum of every element of every input.
    pub fn sum(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let total = inputs.iter().map(|&v| self.value(v).data().iter().sum::<f64>()).sum();
        let needs = inputs.iter().any(|&v| self.needs_grad(v));
        Ok(self.push(
            Tensor::scalar(total),
            Op::Sum {
                inputs: inputs.to_vec(),
            },
            needs,
        ))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let out = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let needs = self.needs_grad(input);
        self.push(value, Op::Scale { input, factor }, needs)
    }

    pub fn square(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = x.data().iter().map(|v| v * v).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let needs = self.needs_grad(input);
        self.push(value, Op::Square { input }, needs)
    }

    /// `weight * H(target, (1 - s, s))` where `s` is the single element of
    /// `input`. `weight` is `1 / N` when the caller averages over a batch.
    pub fn cross_entropy(&mut self, input: Var, target: ProbabilityPair, spec: &LossSpec, weight: f64) -> Result<Var> {
        spec.validate()?;
        let s = self
            .value(input)
            .item()
            .ok_or_else(|| Error::shape(format!("cross_entropy expects a scalar, got {:?}", self.value(input).shape())))?;
        let p = ProbabilityPair::from_informative(s)?;
        let value = Tensor::scalar(weight * spec.sample_loss(&target, &p));
        let needs = self.needs_grad(input);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                input,
                target,
                spec: *spec,
                weight,
            },
            needs,
        ))
    }

    /// Gradient of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut param_grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let start = match loss {
            Var::Param(i) => {
                if i >= self.params.len() {
                    return Err(Error::shape(format!("no parameter {i} on this tape")));
                }
                if self.params[i].len() != 1 {
                    return Err(Error::shape("loss must be a scalar"));
                }
                param_grads[i][0] = 1.0;
                return Ok(Gradients { params: param_grads });
            }
            Var::Node(i) => i,
        };
        if start >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.nodes[start].value.len() != 1 {
            return Err(Error::shape(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[start].value.shape()
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; start + 1];
        grads[start] = Some(vec![1.0]);

        for idx in (0..=start).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut emit = |v: Var, delta: Vec<f64>| match v {
                Var::Param(i) => add_into(&mut param_grads[i], &delta),
                Var::Node(j) => {
                    if self.nodes[j].needs_grad {
                        match &mut grads[j] {
                            Some(existing) => add_into(existing, &delta),
                            slot @ None => *slot = Some(delta),
                        }
                    }
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    dims,
                } => {
                    let (gi, gw, gb) = kernels::conv2d_backward(
                        self.value(*input).data(),
                        self.value(*weight).data(),
                        &g,
                        *dims,
                        self.needs_grad(*input),
                    );
                    if let Some(gi) = gi {
                        emit(*input, gi);
                    }
                    emit(*weight, gw);
                    emit(*bias, gb);
                }
                Op::MaxPool2 { input, argmax } => {
                    let n = self.value(*input).len();
                    emit(*input, kernels::maxpool2_backward(&g, argmax, n));
                }
                Op::Relu { input } => {
                    let x = self.value(*input).data();
                    let d = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    emit(*input, d);
                }
                Op::Sigmoid { input: inp } => {
                    let s = node.value.data();
                    let d = g.iter().zip(s).map(|(g, s)| g * s * (1.0 - s)).collect();
                    emit(*inp, d);
                }
                Op::Dense { input, weight, bias } => {
                    let (gx, gw) = kernels::dense_backward(self.value(*input).data(), self.value(*weight).data(), &g);
                    emit(*input, gx);
                    emit(*weight, gw);
                    emit(*bias, g);
                }
                Op::Dropout { input, mask } => {
                    let d = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                    emit(*input, d);
                }
                Op::Reshape { input } => emit(*input, g),
                Op::Sum { inputs } => {
                    for &v in inputs {
                        let n = self.value(v).len();
                        emit(v, vec![g[0]; n]);
                    }
                }
                Op::Scale { input, factor } => {
                    let d = g.iter().map(|g| g * factor).collect();
                    emit(*input, d);
                }
                Op::Square { input } => {
                    let x = self.value(*input).data();
                    let d = g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect();
                    emit(*input, d);
                }
                Op::CrossEntropy {
                    input,
                    target,
                    spec,
                    weight,
                } => {
                    let s = self.value(*input).data()[0];
                    let p = ProbabilityPair::from_informative(s)?;
                    emit(*input, vec![g[0] * weight * spec.sample_grad(target, &p)]);
                }
            }
        }
        Ok(Gradients { params: param_grads })
    }
}

fn add_into(acc: &mut [f64], delta: &[f64]) {
    debug_assert_eq!(acc.len(), delta.len());
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}
