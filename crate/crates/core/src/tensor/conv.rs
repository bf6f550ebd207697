//! Convolution and transposed convolution via im2col + GEMM.
//!
//! Both directions share one pair of lowering routines. For a convolution
//! with geometry `(k, stride, pad)` mapping a "large" plane `H x W` onto a
//! "small" plane `h x w`, `im2col` gathers every receptive field of the large
//! plane into a `(C*k*k) x (h*w)` matrix and `col2im` scatter-adds such a
//! matrix back. Convolution is `W * im2col(x)`; its transpose is
//! `col2im(W^T * y)`, which makes the two operators exact adjoints.

use crate::error::{Error, Result};

use super::{Shape, Tensor};

/// Stride and padding of a (transposed) convolution. `output_pad` only
/// applies to the transposed direction, where it adds extra rows/columns at
/// the bottom/right so that a stride-2, 3x3 transposed convolution can
/// exactly double the spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, pad: usize) -> Self {
        ConvGeometry {
            stride,
            pad,
            output_pad: 0,
        }
    }

    pub const fn with_output_pad(mut self, output_pad: usize) -> Self {
        self.output_pad = output_pad;
        self
    }

    fn check(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::argument("stride must be positive"));
        }
        Ok(())
    }

    /// Output extent of a convolution over an input extent.
    pub fn conv_out(&self, input: usize, kernel: usize) -> Result<usize> {
        self.check()?;
        let padded = input + 2 * self.pad;
        if kernel == 0 || kernel > padded {
            return Err(Error::shape(format!(
                "kernel {kernel} does not fit padded extent {padded}"
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution over an input extent.
    pub fn transpose_out(&self, input: usize, kernel: usize) -> Result<usize> {
        self.check()?;
        if self.output_pad >= self.stride {
            return Err(Error::argument(format!(
                "output padding {} must be smaller than stride {}",
                self.output_pad, self.stride
            )));
        }
        let full = (input.max(1) - 1) * self.stride + kernel + self.output_pad;
        if input == 0 || kernel == 0 || full <= 2 * self.pad {
            return Err(Error::shape(format!(
                "transposed convolution of extent {input} with kernel {kernel} is empty"
            )));
        }
        Ok(full - 2 * self.pad)
    }
}

/// `c = a * b + beta * c` for row-major matrices; `ta`/`tb` mean the operand
/// is stored transposed (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths checked above cover every element addressed
    // by the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one lowering: a `channels x big_h x big_w` plane viewed
/// through `kh x kw` windows yields a `small_h x small_w` grid.
#[derive(Clone, Copy)]
struct Lowering {
    channels: usize,
    big_h: usize,
    big_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    small_h: usize,
    small_w: usize,
}

impl Lowering {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.small_h * self.small_w
    }

    /// Source index along one axis, or `None` when it falls in the padding.
    #[inline]
    fn source(&self, out: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + k).checked_sub(self.pad)?;
        (pos < extent).then_some(pos)
    }

    fn im2col(&self, src: &[f64], cols: &mut [f64]) {
        let plane = self.big_h * self.big_w;
        let ncols = self.cols();
        for ci in 0..self.channels {
            let img = &src[ci * plane..(ci + 1) * plane];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.small_h {
                        let line = &mut dst[oy * self.small_w..(oy + 1) * self.small_w];
                        match self.source(oy, ki, self.big_h) {
                            None => line.fill(0.0),
                            Some(iy) => {
                                let src_row = &img[iy * self.big_w..(iy + 1) * self.big_w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, kj, self.big_w) {
                                        Some(ix) => src_row[ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dst: &mut [f64]) {
        let plane = self.big_h * self.big_w;
        let ncols = self.cols();
        for ci in 0..self.channels {
            let img = &mut dst[ci * plane..(ci + 1) * plane];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.small_h {
                        let Some(iy) = self.source(oy, ki, self.big_h) else {
                            continue;
                        };
                        let line = &src[oy * self.small_w..(oy + 1) * self.small_w];
                        let dst_row = &mut img[iy * self.big_w..(iy + 1) * self.big_w];
                        for (ox, v) in line.iter().enumerate() {
                            if let Some(ix) = self.source(ox, kj, self.big_w) {
                                dst_row[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `transposed` weights are laid out `[cin, cout, kh, kw]`, others `[cout, cin, kh, kw]`.
fn check_weight(weight: &Tensor, bias: &Tensor, in_channels: usize, transposed: bool) -> Result<()> {
    let ws = weight.shape();
    if ws.rank() != 4 {
        return Err(Error::shape(format!("weight must be rank 4, got {ws}")));
    }
    let (weight_in, bias_len) = if transposed { (ws.n(), ws.c()) } else { (ws.c(), ws.n()) };
    if in_channels != weight_in {
        return Err(Error::shape(format!(
            "input has {in_channels} channels but weight is {ws}"
        )));
    }
    if bias.numel() != bias_len {
        return Err(Error::shape(format!(
            "bias has {} entries, expected {bias_len}",
            bias.numel()
        )));
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(gy: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; channels];
    for (i, chunk) in gy.chunks(plane).enumerate() {
        db[i % channels] += chunk.iter().sum::<f64>();
    }
    db
}

fn conv_lowering(input: Shape, weight: Shape, geom: ConvGeometry) -> Result<Lowering> {
    let small_h = geom.conv_out(input.h(), weight.h())?;
    let small_w = geom.conv_out(input.w(), weight.w())?;
    Ok(Lowering {
        channels: input.c(),
        big_h: input.h(),
        big_w: input.w(),
        kh: weight.h(),
        kw: weight.w(),
        stride: geom.stride,
        pad: geom.pad,
        small_h,
        small_w,
    })
}

/// Cross-correlation of `input [n,cin,h,w]` with `weight [cout,cin,kh,kw]`.
pub(crate) fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weight.shape());
    check_weight(weight, bias, is.c(), false)?;
    let low = conv_lowering(is, ws, geom)?;
    let cout = ws.n();
    let out_shape = Shape::new(is.n(), cout, low.small_h, low.small_w);
    let mut out = vec![0.0; out_shape.numel()];
    let mut cols = vec![0.0; low.rows() * low.cols()];
    let (in_len, out_len) = (is.sample_len(), out_shape.sample_len());
    for n in 0..is.n() {
        low.im2col(&input.data()[n * in_len..(n + 1) * in_len], &mut cols);
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        gemm(cout, low.rows(), low.cols(), weight.data(), false, &cols, false, 0.0, dst);
    }
    add_bias(&mut out, bias.data(), out_shape.plane_len());
    Tensor::from_vec(out_shape, out)
}

/// Gradients of a convolution with respect to its input, weight and bias.
/// Each is computed only when requested.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &[f64],
    geom: ConvGeometry,
    want: [bool; 3],
) -> Result<[Option<Vec<f64>>; 3]> {
    let (is, ws) = (input.shape(), weight.shape());
    let low = conv_lowering(is, ws, geom)?;
    let cout = ws.n();
    let out_len = cout * low.cols();
    let in_len = is.sample_len();
    let mut dx = want[0].then(|| vec![0.0; is.numel()]);
    let mut dw = want[1].then(|| vec![0.0; ws.numel()]);
    let mut cols = vec![0.0; low.rows() * low.cols()];
    for n in 0..is.n() {
        let gy = &grad_out[n * out_len..(n + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            low.im2col(&input.data()[n * in_len..(n + 1) * in_len], &mut cols);
            gemm(cout, low.cols(), low.rows(), gy, false, &cols, true, 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(low.rows(), cout, low.cols(), weight.data(), true, gy, false, 0.0, &mut cols);
            low.col2im(&cols, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    let db = want[2].then(|| bias_grad(grad_out, cout, low.cols()));
    Ok([dx, dw, db])
}

fn transpose_lowering(input: Shape, weight: Shape, geom: ConvGeometry) -> Result<Lowering> {
    Ok(Lowering {
        channels: weight.c(),
        big_h: geom.transpose_out(input.h(), weight.h())?,
        big_w: geom.transpose_out(input.w(), weight.w())?,
        kh: weight.h(),
        kw: weight.w(),
        stride: geom.stride,
        pad: geom.pad,
        small_h: input.h(),
        small_w: input.w(),
    })
}

/// Transposed convolution of `input [n,cin,h,w]` with `weight [cin,cout,kh,kw]`,
/// the adjoint of [`conv2d_forward`] with the same geometry.
pub(crate) fn conv2d_transpose_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weight.shape());
    check_weight(weight, bias, is.c(), true)?;
    let low = transpose_lowering(is, ws, geom)?;
    let cin = is.c();
    let out_shape = Shape::new(is.n(), low.channels, low.big_h, low.big_w);
    let mut out = vec![0.0; out_shape.numel()];
    let mut cols = vec![0.0; low.rows() * low.cols()];
    let (in_len, out_len) = (is.sample_len(), out_shape.sample_len());
    for n in 0..is.n() {
        let x = &input.data()[n * in_len..(n + 1) * in_len];
        gemm(low.rows(), cin, low.cols(), weight.data(), true, x, false, 0.0, &mut cols);
        low.col2im(&cols, &mut out[n * out_len..(n + 1) * out_len]);
    }
    add_bias(&mut out, bias.data(), out_shape.plane_len());
    Tensor::from_vec(out_shape, out)
}

pub(crate) fn conv2d_transpose_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &[f64],
    geom: ConvGeometry,
    want: [bool; 3],
) -> Result<[Option<Vec<f64>>; 3]> {
    let (is, ws) = (input.shape(), weight.shape());
    let low = transpose_lowering(is, ws, geom)?;
    let cin = is.c();
    let in_len = is.sample_len();
    let out_len = low.channels * low.big_h * low.big_w;
    let mut dx = want[0].then(|| vec![0.0; is.numel()]);
    let mut dw = want[1].then(|| vec![0.0; ws.numel()]);
    let mut cols = vec![0.0; low.rows() * low.cols()];
    for n in 0..is.n() {
        if dx.is_none() && dw.is_none() {
            break;
        }
        low.im2col(&grad_out[n * out_len..(n + 1) * out_len], &mut cols);
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[n * in_len..(n + 1) * in_len];
            gemm(cin, low.rows(), low.cols(), weight.data(), false, &cols, false, 0.0, dst);
        }
        if let Some(dw) = dw.as_mut() {
            let x = &input.data()[n * in_len..(n + 1) * in_len];
            gemm(cin, low.cols(), low.rows(), x, false, &cols, true, 1.0, dw);
        }
    }
    let db = want[2].then(|| bias_grad(grad_out, low.channels, low.big_h * low.big_w));
    Ok([dx, dw, db])
}
