//! Saves the default network, reads the header back, reloads it and shows
//! how a damaged file is rejected.
//!
//! cargo run --example checkpoint

use gman::nn::{build_gman, decode_checkpoint, encode_checkpoint, NetworkConfig};

fn main() -> gman::Result<()> {
    let net = build_gman(&NetworkConfig::default(), 42)?;
    let bytes = encode_checkpoint(&net);
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    println!("{} bytes, magic {:?}, version {}", bytes.len(), String::from_utf8_lossy(&bytes[..4]), word(4));
    println!("base {} down {} residual blocks {}", word(8), word(12), word(16));

    let back = decode_checkpoint(&bytes)?;
    let same = net
        .params()
        .iter()
        .zip(back.params())
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| (*x as f32).to_bits() == (*y as f32).to_bits()));
    println!("reloaded {} parameters, single-precision bit-exact: {same}", back.param_count());

    let mut damaged = bytes.clone();
    damaged[5] ^= 0xff;
    println!("damaged version: {}", decode_checkpoint(&damaged).unwrap_err());
    println!("truncated: {}", decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err());
    Ok(())
}
