//! Binary checkpoint format. All integers little-endian:
//!
//! ```text
//! "GMAN"                      4 bytes
//! version                     u32
//! base_channels               u32
//! down_channels               u32
//! residual block count        u32
//! convs per residual block    u32 each
//! parameter tensor count      u32
//! per parameter, in layer order:
//!   name length u16, UTF-8 name, rank u8, dims u32 each, f32 data
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::gman::{Network, NetworkConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GMAN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Little-endian cursor that reports the byte offset of every failure.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn bytes(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::format(
                self.offset(),
                format!("truncated {what}: need {len} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.bytes(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        if self.bytes(4, "magic")? != magic {
            return Err(Error::format(at, format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_version(&mut self, version: u32) -> Result<()> {
        let at = self.offset();
        let found = self.u32("version")?;
        if found != version {
            return Err(Error::format(at, format!("unsupported version {found}, expected {version}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }

    /// Reads one parameter record, checking it against the expected name and shape.
    pub(crate) fn param(&mut self, name: &str, shape: Shape) -> Result<Tensor> {
        let at = self.offset();
        let len = self.u16("name length")? as usize;
        let raw = self.bytes(len, "name")?;
        let found = std::str::from_utf8(raw).map_err(|_| Error::format(at + 2, "name is not UTF-8"))?;
        if found != name {
            return Err(Error::format(at, format!("expected parameter {name:?}, found {found:?}")));
        }
        let at = self.offset();
        let rank = self.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32("dimension")? as usize);
        }
        if dims != shape.dims() {
            return Err(Error::format(at, format!("{name} has dims {dims:?}, expected {shape:?}")));
        }
        let raw = self.bytes(4 * shape.numel(), "parameter data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Tensor::from_vec(shape, data)
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(u32::try_from(v).expect("value fits in u32")).to_le_bytes());
}

/// Parameters are stored in single precision.
pub(crate) fn put_param(out: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    let len = u16::try_from(name.len()).expect("parameter name fits in u16");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    let shape = tensor.shape();
    out.push(shape.rank() as u8);
    for &d in shape.dims() {
        put_u32(out, d);
    }
    for &v in tensor.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let config = net.config();
    let mut out = Vec::with_capacity(64 + 4 * net.param_count());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, config.base_channels);
    put_u32(&mut out, config.down_channels);
    put_u32(&mut out, config.residual_conv_counts.len());
    for &c in &config.residual_conv_counts {
        put_u32(&mut out, c);
    }
    put_u32(&mut out, net.params().len());
    for (name, tensor) in net.param_names().iter().zip(net.params()) {
        put_param(&mut out, name, tensor);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes);
    r.expect_magic(&CHECKPOINT_MAGIC)?;
    r.expect_version(CHECKPOINT_VERSION)?;
    let base_channels = r.u32("base_channels")? as usize;
    let down_channels = r.u32("down_channels")? as usize;
    let at = r.offset();
    let blocks = r.u32("residual block count")? as usize;
    if blocks > bytes.len() {
        return Err(Error::format(at, format!("implausible residual block count {blocks}")));
    }
    let mut residual_conv_counts = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        residual_conv_counts.push(r.u32("residual conv count")? as usize);
    }
    let config = NetworkConfig {
        base_channels,
        down_channels,
        residual_conv_counts,
    };
    let fits = config
        .param_count()
        .and_then(|n| n.checked_mul(4))
        .is_some_and(|need| need <= bytes.len());
    if !fits {
        return Err(Error::format(at, "config implies more parameters than the file holds"));
    }
    let mut net = Network::zeroed(&config).map_err(|e| Error::format(at, format!("invalid config: {e}")))?;
    let at = r.offset();
    let count = r.u32("parameter count")? as usize;
    if count != net.params().len() {
        return Err(Error::format(at, format!(
            "{count} parameters declared, config implies {}",
            net.params().len()
        )));
    }
    let names = net.param_names().to_vec();
    for (name, slot) in names.iter().zip(net.params_mut()) {
        *slot = r.param(name, slot.shape())?;
    }
    r.finish()?;
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_gman;

    fn net() -> Network {
        build_gman(&NetworkConfig::reduced(4, 8), 11).unwrap()
    }

    fn f32_bits(net: &Network) -> Vec<u32> {
        net.params()
            .iter()
            .flat_map(|p| p.data().iter().map(|&v| (v as f32).to_bits()))
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise_in_single_precision() {
        let net = net();
        let back = decode_checkpoint(&encode_checkpoint(&net)).unwrap();
        assert_eq!(back.config(), net.config());
        assert_eq!(back.param_names(), net.param_names());
        assert_eq!(f32_bits(&back), f32_bits(&net));
        // a second pass is the identity
        assert_eq!(encode_checkpoint(&back), encode_checkpoint(&net));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&net());
        assert_eq!(&bytes[..4], b"GMAN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        let name_len = u16::from_le_bytes(bytes[40..42].try_into().unwrap()) as usize;
        assert_eq!(&bytes[42..42 + name_len], b"conv1.weight");
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = encode_checkpoint(&net());
        bytes[0] = b'X';
        match decode_checkpoint(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_version_and_truncation() {
        let good = encode_checkpoint(&net());
        let mut bytes = good.clone();
        bytes[4] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format { offset: 4, .. })));
        for cut in [3, 10, 50, good.len() - 1] {
            assert!(matches!(decode_checkpoint(&good[..cut]), Err(Error::Format { .. })));
        }
        let mut longer = good.clone();
        longer.push(0);
        assert!(matches!(
            decode_checkpoint(&longer),
            Err(Error::Format { offset, .. }) if offset == good.len() as u64
        ));
    }

    #[test]
    fn oversized_config_is_rejected_before_allocating() {
        let mut bytes = encode_checkpoint(&net());
        // first residual conv count, made enormous
        bytes[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format { offset: 16, .. })));
    }

    #[test]
    fn config_count_matches_built_network() {
        for config in [NetworkConfig::default(), NetworkConfig::reduced(4, 8)] {
            let built = Network::zeroed(&config).unwrap().param_count();
            assert_eq!(config.param_count(), Some(built));
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = net();
        save_checkpoint(&net, &path).unwrap();
        assert_eq!(f32_bits(&load_checkpoint(&path).unwrap()), f32_bits(&net));
        let missing = load_checkpoint(dir.path().join("missing"));
        assert!(matches!(missing, Err(Error::Io { .. })));
    }
}
