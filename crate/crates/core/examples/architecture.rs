//! Prints the layer table, parameter counts and the volume after every
//! layer for one forward pass.
//!
//! cargo run --example architecture [side]

use gman::nn::{build_gman, NetworkConfig, DECODED_STAGE, ENCODED_STAGE};
use gman::tensor::{Shape, Tensor};

fn main() -> gman::Result<()> {
    let side: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(224);
    let net = build_gman(&NetworkConfig::default(), 0)?;

    println!("{:<14} {:<18} {:>6} {:>6} {:>7} {:>10}", "layer", "kind", "in", "out", "stride", "params");
    for layer in net.layers() {
        let s = layer.spec;
        println!(
            "{:<14} {:<18} {:>6} {:>6} {:>7} {:>10}",
            layer.name,
            format!("{:?}", s.kind),
            s.in_channels,
            s.out_channels,
            s.stride,
            s.param_count()
        );
    }
    println!("total parameters: {}", net.param_count());

    let input = Tensor::from_fn(Shape::new(1, 3, side, side), |_, c, y, x| ((c + y + x) % 5) as f64 / 4.0);
    let (out, trace) = net.forward_traced(&input)?;
    println!();
    for stage in &trace {
        let mark = match stage.name.as_str() {
            ENCODED_STAGE => "  <- encoded",
            DECODED_STAGE => "  <- decoded",
            _ => "",
        };
        println!("{:<16} {}{mark}", stage.name, stage.shape);
    }
    println!("output {}", out.shape());
    Ok(())
}
