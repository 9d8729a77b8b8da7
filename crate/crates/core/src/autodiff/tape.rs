//! Reverse-mode differentiation over a recorded operation graph.
//!
//! Nodes only reference earlier nodes, so one reverse sweep over the
//! arena visits each node exactly once in reverse topological order.

use super::ops;
use super::tensor::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a recorded tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch-norm running statistics owned by the model, updated by
/// train-mode forwards (momentum 0.1 toward the unbiased batch
/// variance, matching the common convention).
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnRunning {
    pub fn new(channels: usize) -> Self {
        BnRunning {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

enum Op<E: Element> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        saved: ops::BnSaved<E>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        eps: f64,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Add {
        a: Var,
        b: Var,
    },
    MseMasked {
        pred: Var,
        target: Tensor<E>,
        mask: (usize, usize),
    },
    WeightedSum {
        x: Var,
        weights: Tensor<E>,
    },
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
}

/// Recorded operation graph with per-node gradient accumulators.
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
    /// In checked mode every op output is scanned for NaN/Inf.
    pub checked: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: false,
        }
    }

    pub fn checked() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<E> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::Numeric("non-finite values in op output".into()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor<E>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let y = ops::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|bv| self.value(bv)),
            stride,
            padding,
        )?;
        self.push(
            y,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
        )
    }

    /// Batch normalization; train mode updates `running` in place.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut BnRunning,
        mode: BnMode,
    ) -> Result<Var> {
        match mode {
            BnMode::Train => {
                let (y, saved, biased_var) = ops::bn_train_forward(
                    self.value(x),
                    self.value(gamma),
                    self.value(beta),
                    running.eps,
                )?;
                let shape = self.value(x).shape();
                let m = (shape.n() * shape.h() * shape.w()) as f64;
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                for (ci, (rm, rv)) in running
                    .mean
                    .iter_mut()
                    .zip(running.var.iter_mut())
                    .enumerate()
                {
                    *rm = (1.0 - running.momentum) * *rm
                        + running.momentum * saved.mean[ci].to_f64();
                    *rv = (1.0 - running.momentum) * *rv
                        + running.momentum * biased_var[ci] * unbias;
                }
                let eps = running.eps;
                self.push(
                    y,
                    Op::BatchNorm {
                        x,
                        gamma,
                        beta,
                        mode,
                        saved,
                        running_mean: Vec::new(),
                        running_var: Vec::new(),
                        eps,
                    },
                )
            }
            BnMode::Eval => {
                let y = ops::bn_eval_forward(
                    self.value(x),
                    self.value(gamma),
                    self.value(beta),
                    &running.mean,
                    &running.var,
                    running.eps,
                )?;
                self.push(
                    y,
                    Op::BatchNorm {
                        x,
                        gamma,
                        beta,
                        mode,
                        saved: ops::BnSaved {
                            mean: Vec::new(),
                            inv_std: Vec::new(),
                        },
                        running_mean: running.mean.clone(),
                        running_var: running.var.clone(),
                        eps: running.eps,
                    },
                )
            }
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = ops::relu_forward(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn maxpool2d(
        &mut self,
        x: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (y, argmax) = ops::maxpool2d_forward(self.value(x), kernel, stride, padding)?;
        self.push(y, Op::MaxPool { x, argmax })
    }

    pub fn residual_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add_forward(self.value(a), self.value(b))?;
        self.push(y, Op::Add { a, b })
    }

    /// Scalar masked MSE against a constant target.
    pub fn mse_masked(
        &mut self,
        pred: Var,
        target: Tensor<E>,
        mask: (usize, usize),
    ) -> Result<Var> {
        let loss = ops::mse_masked_forward(self.value(pred), &target, mask)?;
        self.push(
            Tensor::from_vec(Shape([1, 1, 1, 1]), vec![loss])?,
            Op::MseMasked { pred, target, mask },
        )
    }

    /// Scalar Σ x·weights against constant weights (gradient-check
    /// reduction).
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<E>) -> Result<Var> {
        if weights.shape() != self.value(x).shape() {
            return Err(Error::ShapeMismatch("weighted sum shapes".into()));
        }
        let mut acc = 0.0f64;
        for (a, b) in self.value(x).data().iter().zip(weights.data()) {
            acc += a.to_f64() * b.to_f64();
        }
        self.push(
            Tensor::from_vec(Shape([1, 1, 1, 1]), vec![E::from_f64(acc)])?,
            Op::WeightedSum { x, weights },
        )
    }

    /// Reverse sweep from a scalar loss; returns one gradient slot per
    /// recorded node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<E>> {
        if self.value(loss).shape().count() != 1 {
            return Err(Error::InvalidInput("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), E::ONE));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (dx, dw, db) = ops::conv2d_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[w.0].value,
                        b.is_some(),
                        *stride,
                        *padding,
                        &dy,
                    )?;
                    accumulate(&mut grads, x.0, dx);
                    accumulate(&mut grads, w.0, dw);
                    if let (Some(bv), Some(db)) = (b, db) {
                        accumulate(&mut grads, bv.0, db);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mode,
                    saved,
                    running_mean,
                    running_var,
                    eps,
                } => {
                    let (dx, dgamma, dbeta) = match mode {
                        BnMode::Train => ops::bn_train_backward(
                            &self.nodes[x.0].value,
                            &self.nodes[gamma.0].value,
                            saved,
                            &dy,
                        ),
                        BnMode::Eval => ops::bn_eval_backward(
                            &self.nodes[x.0].value,
                            &self.nodes[gamma.0].value,
                            running_mean,
                            running_var,
                            *eps,
                            &dy,
                        ),
                    };
                    accumulate(&mut grads, x.0, dx);
                    accumulate(&mut grads, gamma.0, dgamma);
                    accumulate(&mut grads, beta.0, dbeta);
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(&self.nodes[x.0].value, &dy);
                    accumulate(&mut grads, x.0, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = ops::maxpool2d_backward(self.nodes[x.0].value.shape(), argmax, &dy);
                    accumulate(&mut grads, x.0, dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, a.0, dy.clone());
                    accumulate(&mut grads, b.0, dy);
                }
                Op::MseMasked { pred, target, mask } => {
                    let dx = ops::mse_masked_backward(
                        &self.nodes[pred.0].value,
                        target,
                        *mask,
                        dy.data()[0],
                    );
                    accumulate(&mut grads, pred.0, dx);
                }
                Op::WeightedSum { x, weights } => {
                    let up = dy.data()[0];
                    let mut dx = weights.clone();
                    for v in dx.data_mut() {
                        *v = *v * up;
                    }
                    accumulate(&mut grads, x.0, dx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<E: Element>(grads: &mut [Option<Tensor<E>>], idx: usize, add: Tensor<E>) {
    match &mut grads[idx] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(add.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(add),
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: Var) -> Option<&Tensor<E>> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<E>> {
        self.grads[var.0].take()
    }
}
