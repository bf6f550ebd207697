//! Haze synthesis with the atmosphere scattering model
//! `I = J t + A (1 - t)`, `t = exp(-beta d)`, and its exact inversion.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Default lower bound on `t` when inverting.
pub const DEFAULT_T_FLOOR: f64 = 1e-4;

/// Scene depth per pixel, in units consistent with `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} depth values for a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::argument(format!("depth must be finite and >= 0, got {bad}")));
        }
        Ok(DepthMap { height, width, values })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Global atmosphere light `A` (shared by all channels) and scattering coefficient `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazeParams {
    a: f64,
    beta: f64,
}

impl HazeParams {
    pub fn new(a: f64, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::argument(format!("atmosphere light must be in [0, 1], got {a}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::argument(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(HazeParams { a, beta })
    }

    pub fn atmosphere(&self) -> f64 {
        self.a
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Fraction of scene radiance reaching the camera, per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl TransmissionMap {
    /// Builds a map directly; values must lie in `[0, 1]`.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} transmission values for a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::argument(format!("transmission must be in [0, 1], got {bad}")));
        }
        Ok(TransmissionMap { height, width, values })
    }

    pub fn uniform(height: usize, width: usize, t: f64) -> Result<Self> {
        Self::new(height, width, vec![t; height * width])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn check(&self, image: Shape) -> Result<()> {
        if image.rank() != 4 || image.c() != 3 || (image.h(), image.w()) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "transmission {}x{} does not match image {image}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// `t(x) = exp(-beta * d(x))`.
pub fn transmission(depth: &DepthMap, beta: f64) -> Result<TransmissionMap> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::argument(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(TransmissionMap {
        height: depth.height,
        width: depth.width,
        values: depth.values.iter().map(|d| (-beta * d).exp()).collect(),
    })
}

/// Applies the scattering model to a clear batch `[n, 3, h, w]`, with the
/// same transmission for every channel and sample.
pub fn synthesize(clear: &Tensor, t: &TransmissionMap, params: &HazeParams) -> Result<Tensor> {
    let shape = clear.shape();
    t.check(shape)?;
    let a = params.a;
    let plane = shape.plane_len();
    let mut out = clear.clone();
    out.clear_grad();
    for chunk in out.data_mut().chunks_mut(plane) {
        for (v, &tx) in chunk.iter_mut().zip(&t.values) {
            *v = *v * tx + a * (1.0 - tx);
        }
    }
    Ok(out)
}

/// Recovers the clear image given the true transmission and atmosphere light:
/// `J = (I - A (1 - t)) / max(t, t_floor)`.
pub fn invert(hazy: &Tensor, t: &TransmissionMap, params: &HazeParams, t_floor: f64) -> Result<Tensor> {
    if !(t_floor > 0.0) {
        return Err(Error::argument(format!("t_floor must be positive, got {t_floor}")));
    }
    let shape = hazy.shape();
    t.check(shape)?;
    let a = params.a;
    let plane = shape.plane_len();
    let mut out = hazy.clone();
    out.clear_grad();
    for chunk in out.data_mut().chunks_mut(plane) {
        for (v, &tx) in chunk.iter_mut().zip(&t.values) {
            *v = (*v - a * (1.0 - tx)) / tx.max(t_floor);
        }
    }
    Ok(out)
}

/// Synthetic depth layouts standing in for estimated scene depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthKind {
    Constant(f64),
    /// `d(y, x) = y / (h - 1)`: zero at the top row, one at the bottom.
    LinearRamp,
    /// Distance from the image center, normalized so the corners are one.
    Radial,
}

impl fmt::Display for DepthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthKind::Constant(c) => write!(f, "constant:{c}"),
            DepthKind::LinearRamp => f.write_str("ramp"),
            DepthKind::Radial => f.write_str("radial"),
        }
    }
}

impl FromStr for DepthKind {
    type Err = Error;

    /// Accepts `constant` (depth 1), `constant:<value>`, `ramp` and `radial`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(DepthKind::Constant(1.0)),
            "ramp" | "linear_ramp" => Ok(DepthKind::LinearRamp),
            "radial" => Ok(DepthKind::Radial),
            other => {
                let value = other
                    .strip_prefix("constant:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Usage(format!("unknown depth kind {other:?}")))?;
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::Usage(format!("constant depth must be >= 0, got {value}")));
                }
                Ok(DepthKind::Constant(value))
            }
        }
    }
}

pub fn gen_depth(kind: DepthKind, height: usize, width: usize) -> Result<DepthMap> {
    if height == 0 || width == 0 {
        return Err(Error::argument("depth map dims must be positive"));
    }
    let values: Vec<f64> = match kind {
        DepthKind::Constant(c) => vec![c; height * width],
        DepthKind::LinearRamp => {
            let denom = (height.max(2) - 1) as f64;
            (0..height)
                .flat_map(|y| std::iter::repeat_n(y as f64 / denom, width))
                .collect()
        }
        DepthKind::Radial => {
            let (cy, cx) = ((height - 1) as f64 / 2.0, (width - 1) as f64 / 2.0);
            let max = cy.hypot(cx);
            (0..height)
                .flat_map(|y| {
                    (0..width).map(move |x| {
                        if max == 0.0 {
                            0.0
                        } else {
                            (y as f64 - cy).hypot(x as f64 - cx) / max
                        }
                    })
                })
                .collect()
        }
    };
    DepthMap::new(height, width, values)
}

/// The `(A, beta)` sweep used to build a hazy dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct HazeGrid {
    pub atmosphere: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for HazeGrid {
    fn default() -> Self {
        HazeGrid {
            atmosphere: vec![0.8, 0.9, 1.0],
            beta: vec![0.5, 1.0, 1.5, 2.0],
        }
    }
}

impl HazeGrid {
    /// Every grid point, atmosphere-major.
    pub fn points(&self) -> Result<Vec<HazeParams>> {
        let mut out = Vec::with_capacity(self.atmosphere.len() * self.beta.len());
        for &a in &self.atmosphere {
            for &b in &self.beta {
                out.push(HazeParams::new(a, b)?);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.atmosphere.len() * self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
