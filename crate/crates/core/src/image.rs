//! Binary PPM (P6, maxval 255) reading and writing, plus the padding used to
//! run the network on arbitrary image sizes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
}

/// A decoded image: `[1, 3, h, w]` pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFile {
    pub pixels: Tensor,
    pub format: ImageFormat,
}

fn check_rgb(image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.rank() != 4 || s.n() != 1 || s.c() != 3 || s.h() == 0 || s.w() == 0 {
        return Err(Error::shape(format!("expected a 1x3xHxW image, got {s}")));
    }
    Ok(())
}

/// Clamps to `[0, 1]` and quantizes with `round(v * 255)`; NaN becomes 0.
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    check_rgb(image)?;
    let s = image.shape();
    let header = format!("P6\n{} {}\n255\n", s.w(), s.h());
    let mut out = Vec::with_capacity(header.len() + 3 * s.plane_len());
    out.extend_from_slice(header.as_bytes());
    let plane = s.plane_len();
    let data = image.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(data[c * plane + i]));
        }
    }
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Parses a decimal field, returning it with its byte offset.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| Error::format(start as u64, format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageFile> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::format(0, "not a binary PPM (missing P6 magic)"));
    }
    let mut header = Header { bytes, pos: 2 };
    let (width, width_at) = header.number("width")?;
    let (height, _) = header.number("height")?;
    let (maxval, maxval_at) = header.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_at as u64, format!("maxval {maxval} unsupported, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(width_at as u64, format!("empty image {width}x{height}")));
    }
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => return Err(Error::format(header.pos as u64, "expected whitespace after maxval")),
    }
    let plane = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(width_at as u64, "image dimensions overflow"))?;
    let body = &bytes[header.pos..];
    if body.len() < 3 * plane {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated pixel data: {} of {} bytes", body.len(), 3 * plane),
        ));
    }
    if body.len() > 3 * plane {
        return Err(Error::format(
            (header.pos + 3 * plane) as u64,
            format!("{} trailing bytes", body.len() - 3 * plane),
        ));
    }
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in body.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Ok(ImageFile {
        pixels: Tensor::from_vec(Shape::new(1, 3, height, width), data)?,
        format: ImageFormat::Ppm,
    })
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ppm(image).map_err(|e| e.in_file(path))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Pads the bottom and right edges by reflection so both spatial dims become
/// multiples of `multiple`.
pub fn reflect_pad_to_multiple(image: &Tensor, multiple: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.rank() != 4 || multiple == 0 {
        return Err(Error::argument(format!("cannot pad {s} to a multiple of {multiple}")));
    }
    let h = s.h().div_ceil(multiple) * multiple;
    let w = s.w().div_ceil(multiple) * multiple;
    if (h, w) == (s.h(), s.w()) {
        return Ok(image.clone());
    }
    Ok(Tensor::from_fn(Shape::new(s.n(), s.c(), h, w), |n, c, y, x| {
        image.get(n, c, reflect(y as isize, s.h()), reflect(x as isize, s.w()))
    }))
}

/// The top-left `h x w` window of every plane.
pub fn crop_top_left(image: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.rank() != 4 || h > s.h() || w > s.w() {
        return Err(Error::argument(format!("cannot crop {s} to {h}x{w}")));
    }
    Ok(Tensor::from_fn(Shape::new(s.n(), s.c(), h, w), |n, c, y, x| image.get(n, c, y, x)))
}
