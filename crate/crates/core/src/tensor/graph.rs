use crate::error::{Error, Result};

use super::{conv2d_forward, conv2d_transpose_forward, ConvGeometry, Shape, Tensor};

/// The operations shared by eager evaluation and tape recording.
///
/// Network and loss code is written once against this trait and runs either
/// through [`Eager`] (values are plain tensors, intermediates are dropped as
/// soon as they go out of scope) or through [`super::Tape`] (values are
/// handles into the tape, which keeps everything needed for `backward`).
pub trait Graph {
    type Value;

    fn shape_of(&self, value: &Self::Value) -> Result<Shape>;

    /// Reads a one-element value.
    fn item(&self, value: &Self::Value) -> Result<f64>;

    /// Cross-correlation; `weight` is `[cout, cin, kh, kw]`, `bias` has `cout` entries.
    fn conv2d(
        &mut self,
        input: &Self::Value,
        weight: &Self::Value,
        bias: &Self::Value,
        geom: ConvGeometry,
    ) -> Result<Self::Value>;

    /// Adjoint of [`Graph::conv2d`]; `weight` is `[cin, cout, kh, kw]`.
    fn conv2d_transpose(
        &mut self,
        input: &Self::Value,
        weight: &Self::Value,
        bias: &Self::Value,
        geom: ConvGeometry,
    ) -> Result<Self::Value>;

    fn relu(&mut self, input: &Self::Value) -> Result<Self::Value>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;

    fn scale(&mut self, input: &Self::Value, factor: f64) -> Result<Self::Value>;

    /// Sum of all elements, as a scalar.
    fn sum(&mut self, input: &Self::Value) -> Result<Self::Value>;

    /// `sum((a - b)^2) / divisor`, as a scalar.
    fn squared_error(&mut self, a: &Self::Value, b: &Self::Value, divisor: f64)
        -> Result<Self::Value>;

    /// 2x2 max pooling with stride 2; spatial dims must be even.
    fn max_pool2(&mut self, input: &Self::Value) -> Result<Self::Value>;
}

/// Evaluates operations immediately on owned tensors.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

pub(crate) fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "cannot add {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub(crate) fn squared_error(a: &Tensor, b: &Tensor, divisor: f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "squared error between {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    if !(divisor > 0.0) {
        return Err(Error::argument(format!("divisor must be positive, got {divisor}")));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(Tensor::scalar(sum / divisor))
}

/// Max pooling that also reports, for every output, the flat input index it
/// was taken from (the first maximum in row-major window order).
pub(crate) fn max_pool2_indexed(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = input.shape();
    if !s.h().is_multiple_of(2) || !s.w().is_multiple_of(2) {
        return Err(Error::shape(format!("max pooling needs even spatial dims, got {s}")));
    }
    let out_shape = Shape::new(s.n(), s.c(), s.h() / 2, s.w() / 2);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let data = input.data();
    for plane in 0..s.n() * s.c() {
        let base = plane * s.plane_len();
        for oy in 0..out_shape.h() {
            for ox in 0..out_shape.w() {
                let mut best = base + 2 * oy * s.w() + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * s.w() + 2 * ox + dx;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, argmax))
}

impl Graph for Eager {
    type Value = Tensor;

    fn shape_of(&self, value: &Tensor) -> Result<Shape> {
        Ok(value.shape())
    }

    fn item(&self, value: &Tensor) -> Result<f64> {
        value.item()
    }

    fn conv2d(&mut self, input: &Tensor, weight: &Tensor, bias: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
        conv2d_forward(input, weight, bias, geom)
    }

    fn conv2d_transpose(
        &mut self,
        input: &Tensor,
        weight: &Tensor,
        bias: &Tensor,
        geom: ConvGeometry,
    ) -> Result<Tensor> {
        conv2d_transpose_forward(input, weight, bias, geom)
    }

    fn relu(&mut self, input: &Tensor) -> Result<Tensor> {
        Ok(relu(input))
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        add(a, b)
    }

    fn scale(&mut self, input: &Tensor, factor: f64) -> Result<Tensor> {
        Ok(input.map(|v| v * factor))
    }

    fn sum(&mut self, input: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(input.sum()))
    }

    fn squared_error(&mut self, a: &Tensor, b: &Tensor, divisor: f64) -> Result<Tensor> {
        squared_error(a, b, divisor)
    }

    fn max_pool2(&mut self, input: &Tensor) -> Result<Tensor> {
        max_pool2_indexed(input).map(|(t, _)| t)
    }
}
