//! Reverse-mode differentiation over a linear tape.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::graph::{self, Eager};
use super::{conv2d_backward, conv2d_transpose_backward, ConvGeometry, Graph, Shape, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Conv2d(ConvGeometry),
    ConvTranspose2d(ConvGeometry),
    Relu,
    Add,
    Scale(f64),
    Sum,
    SquaredError(f64),
    MaxPool2,
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    output: usize,
    /// Pooling argmax positions; other ops re-read their inputs from the tape.
    saved: Vec<usize>,
}

/// Records values and operations in creation order, which is a topological
/// order, so `backward` is a single reverse sweep.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    values: Vec<Tensor>,
    is_leaf: Vec<bool>,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            values: Vec::new(),
            is_leaf: Vec::new(),
            nodes: Vec::new(),
        }
    }

    /// Adds an input tensor; it receives a gradient iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, true)
    }

    /// Adds a tensor that gradients are accumulated into.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Adds a tensor that gradients never flow into.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    fn push(&mut self, tensor: Tensor, leaf: bool) -> Var {
        self.values.push(tensor);
        self.is_leaf.push(leaf);
        Var {
            index: self.values.len() - 1,
            tape: self.id,
        }
    }

    fn index(&self, var: &Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.values.len() {
            return Err(Error::Graph(format!(
                "value {} does not belong to this tape",
                var.index
            )));
        }
        Ok(var.index)
    }

    pub fn value(&self, var: &Var) -> Result<&Tensor> {
        Ok(&self.values[self.index(var)?])
    }

    pub fn grad(&self, var: &Var) -> Result<Option<&[f64]>> {
        Ok(self.value(var)?.grad())
    }

    pub fn take_grad(&mut self, var: &Var) -> Result<Option<Vec<f64>>> {
        let i = self.index(var)?;
        Ok(self.values[i].grad.take())
    }

    pub fn zero_grad(&mut self) {
        self.values.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn record(&mut self, op: Op, inputs: &[usize], output: Tensor, saved: Vec<usize>) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.values[i].requires_grad());
        let var = self.push(output.with_requires_grad(requires_grad), false);
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            output: var.index,
            saved,
        });
        var
    }

    /// Accumulates `d loss / d leaf` into every leaf that requires a gradient.
    /// Repeated calls add to the existing leaf gradients.
    pub fn backward(&mut self, loss: &Var) -> Result<()> {
        let root = self.index(loss)?;
        let shape = self.values[root].shape();
        if shape.numel() != 1 {
            return Err(Error::argument(format!(
                "backward needs a scalar loss, got {shape}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        grads[root] = Some(vec![1.0]);

        for node in self.nodes[..].iter().rev() {
            if node.output > root {
                continue;
            }
            let Some(gy) = grads[node.output].take() else {
                continue;
            };
            let wants: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| self.values[i].requires_grad())
                .collect();
            let contributions = self.input_grads(node, &gy, &wants)?;
            for ((&input, contribution), wanted) in node.inputs.iter().zip(contributions).zip(wants) {
                if let (Some(g), true) = (contribution, wanted) {
                    accumulate(&mut grads[input], g);
                }
            }
        }

        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.is_leaf[i] && self.values[i].requires_grad() {
                    self.values[i].accumulate_grad(&g)?;
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, node: &Node, gy: &[f64], wants: &[bool]) -> Result<Vec<Option<Vec<f64>>>> {
        let input = |k: usize| &self.values[node.inputs[k]];
        let grads = match node.op {
            Op::Conv2d(geom) => {
                let want = [wants[0], wants[1], wants[2]];
                conv2d_backward(input(0), input(1), gy, geom, want)?.to_vec()
            }
            Op::ConvTranspose2d(geom) => {
                let want = [wants[0], wants[1], wants[2]];
                conv2d_transpose_backward(input(0), input(1), gy, geom, want)?.to_vec()
            }
            Op::Relu => {
                let x = input(0).data();
                let gx = gy
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Some(gx)]
            }
            Op::Add => vec![Some(gy.to_vec()), Some(gy.to_vec())],
            Op::Scale(factor) => vec![Some(gy.iter().map(|g| g * factor).collect())],
            Op::Sum => vec![Some(vec![gy[0]; input(0).numel()])],
            Op::SquaredError(divisor) => {
                let k = 2.0 * gy[0] / divisor;
                let ga: Vec<f64> = input(0)
                    .data()
                    .iter()
                    .zip(input(1).data())
                    .map(|(a, b)| k * (a - b))
                    .collect();
                let gb = wants[1].then(|| ga.iter().map(|v| -v).collect());
                vec![Some(ga), gb]
            }
            Op::MaxPool2 => {
                let mut gx = vec![0.0; input(0).numel()];
                for (&src, g) in node.saved.iter().zip(gy) {
                    gx[src] += g;
                }
                vec![Some(gx)]
            }
        };
        Ok(grads)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Graph for Tape {
    type Value = Var;

    fn shape_of(&self, value: &Var) -> Result<Shape> {
        Ok(self.value(value)?.shape())
    }

    fn item(&self, value: &Var) -> Result<f64> {
        self.value(value)?.item()
    }

    fn conv2d(&mut self, input: &Var, weight: &Var, bias: &Var, geom: ConvGeometry) -> Result<Var> {
        let ids = [self.index(input)?, self.index(weight)?, self.index(bias)?];
        let out = Eager.conv2d(&self.values[ids[0]], &self.values[ids[1]], &self.values[ids[2]], geom)?;
        Ok(self.record(Op::Conv2d(geom), &ids, out, Vec::new()))
    }

    fn conv2d_transpose(&mut self, input: &Var, weight: &Var, bias: &Var, geom: ConvGeometry) -> Result<Var> {
        let ids = [self.index(input)?, self.index(weight)?, self.index(bias)?];
        let out = Eager.conv2d_transpose(
            &self.values[ids[0]],
            &self.values[ids[1]],
            &self.values[ids[2]],
            geom,
        )?;
        Ok(self.record(Op::ConvTranspose2d(geom), &ids, out, Vec::new()))
    }

    fn relu(&mut self, input: &Var) -> Result<Var> {
        let i = self.index(input)?;
        let out = graph::relu(&self.values[i]);
        Ok(self.record(Op::Relu, &[i], out, Vec::new()))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let ids = [self.index(a)?, self.index(b)?];
        let out = graph::add(&self.values[ids[0]], &self.values[ids[1]])?;
        Ok(self.record(Op::Add, &ids, out, Vec::new()))
    }

    fn scale(&mut self, input: &Var, factor: f64) -> Result<Var> {
        let i = self.index(input)?;
        let out = self.values[i].map(|v| v * factor);
        Ok(self.record(Op::Scale(factor), &[i], out, Vec::new()))
    }

    fn sum(&mut self, input: &Var) -> Result<Var> {
        let i = self.index(input)?;
        let out = Tensor::scalar(self.values[i].sum());
        Ok(self.record(Op::Sum, &[i], out, Vec::new()))
    }

    fn squared_error(&mut self, a: &Var, b: &Var, divisor: f64) -> Result<Var> {
        let ids = [self.index(a)?, self.index(b)?];
        let out = graph::squared_error(&self.values[ids[0]], &self.values[ids[1]], divisor)?;
        Ok(self.record(Op::SquaredError(divisor), &ids, out, Vec::new()))
    }

    fn max_pool2(&mut self, input: &Var) -> Result<Var> {
        let i = self.index(input)?;
        let (out, argmax) = graph::max_pool2_indexed(&self.values[i])?;
        Ok(self.record(Op::MaxPool2, &[i], out, argmax))
    }
}
