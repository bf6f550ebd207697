//! Compares tape gradients of a small conv / deconv / relu stack against
//! central differences, input by input.
//!
//! cargo run --example gradient_check

use gman::tensor::{finite_diff_grad, max_relative_error, ConvGeometry, Eager, Graph, Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random values keep pre-activations off the relu kink.
fn random(rng: &mut ChaCha8Rng, shape: Shape, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| scale * rng.random_range(-1.0..1.0))
}

/// conv (stride 2) -> relu -> deconv (stride 2) -> squared error against `target`.
fn loss<G: Graph>(g: &mut G, v: &[G::Value]) -> gman::Result<G::Value> {
    let down = ConvGeometry::new(2, 1);
    let up = ConvGeometry::new(2, 1).with_output_pad(1);
    let h = g.conv2d(&v[0], &v[1], &v[2], down)?;
    let h = g.relu(&h)?;
    let y = g.conv2d_transpose(&h, &v[3], &v[4], up)?;
    g.squared_error(&y, &v[5], 1.0)
}

fn main() -> gman::Result<()> {
    let names = ["input", "conv.weight", "conv.bias", "deconv.weight", "deconv.bias"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![
        random(&mut rng, Shape::new(2, 3, 8, 8), 1.0),
        random(&mut rng, Shape::new(4, 3, 3, 3), 0.4),
        random(&mut rng, Shape::vector(4), 0.1),
        random(&mut rng, Shape::new(4, 3, 3, 3), 0.4),
        random(&mut rng, Shape::vector(3), 0.1),
    ];
    let target = random(&mut rng, Shape::new(2, 3, 8, 8), 0.5);

    let mut tape = Tape::new();
    let mut vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    vars.push(tape.constant(target.clone()));
    let l = loss(&mut tape, &vars)?;
    tape.backward(&l)?;
    println!("loss {:.6}", tape.value(&l)?.item()?);

    for (i, name) in names.iter().enumerate() {
        let analytic = tape.grad(&vars[i])?.expect("parameter gradient").to_vec();
        let numeric = finite_diff_grad(
            |probe| {
                let mut values = inputs.clone();
                values[i] = probe.clone();
                values.push(target.clone());
                loss(&mut Eager, &values)?.item()
            },
            &inputs[i],
            1e-6,
        )?;
        println!("{name:<14} {:>4} coords  max rel err {:.2e}", analytic.len(), max_relative_error(&analytic, numeric.data()));
    }
    Ok(())
}
