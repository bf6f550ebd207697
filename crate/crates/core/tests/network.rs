use gman::loss::mse_loss;
use gman::nn::{build_gman, residual_block_forward, FeatureExtractor, FeatureExtractorConfig, NetworkConfig, ENCODED_STAGE};
use gman::tensor::{finite_diff_grad, max_relative_error, Eager, Graph, Shape, Tape, Tensor};
use proptest::prelude::*;

fn pattern(n: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(Shape::new(n, 3, h, w), |s, c, y, x| {
        ((s * 5 + c * 7 + y * 3 + x * 11) % 13) as f64 / 12.0
    })
}

#[test]
fn first_layer_gradient_matches_finite_difference() {
    let net = build_gman(&NetworkConfig::default(), 8).unwrap();
    let input = pattern(1, 32, 32);
    let target = pattern(1, 32, 32).map(|v| 1.0 - v);

    let mut tape = Tape::new();
    let params = net.bind(&mut tape);
    let x = tape.constant(input.clone());
    let t = tape.constant(target.clone());
    let y = net.forward_on(&mut tape, &params, &x).unwrap();
    let loss = mse_loss(&mut tape, &y, &t).unwrap();
    tape.backward(&loss).unwrap();
    let analytic = tape.grad(&params[0]).unwrap().unwrap()[0];

    let w = net.param("conv1.weight").unwrap();
    let coordinate = Tensor::from_vec(Shape::vector(1), vec![w.data()[0]]).unwrap();
    let numeric = finite_diff_grad(
        |probe| {
            let mut perturbed = net.clone();
            perturbed.param_mut("conv1.weight").unwrap().data_mut()[0] = probe.data()[0];
            let out = perturbed.forward(&input)?;
            mse_loss(&mut Eager, &out, &target)?.item()
        },
        &coordinate,
        1e-6,
    )
    .unwrap();
    assert!(analytic.abs() > 1e-8, "first-layer gradient vanished");
    let err = max_relative_error(&[analytic], numeric.data());
    assert!(err < 1e-3, "analytic {analytic}, numeric {}", numeric.data()[0]);
}

#[test]
fn full_width_network_keeps_dims_across_sizes() {
    let net = build_gman(&NetworkConfig::default(), 0).unwrap();
    for (h, w) in [(8, 8), (12, 20), (36, 16)] {
        let (out, trace) = net.forward_traced(&pattern(1, h, w)).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 3, h, w));
        let encoded = trace.iter().find(|s| s.name == ENCODED_STAGE).unwrap();
        assert_eq!(encoded.shape, Shape::new(1, 128, h / 4, w / 4));
    }
}

#[test]
fn residual_shortcut_carries_gradient_with_zero_weights() {
    let x = Tensor::from_fn(Shape::new(1, 2, 4, 4), |_, c, y, x| {
        let v = ((c * 16 + y * 4 + x) % 7) as f64 - 3.0;
        if v == 0.0 { 0.5 } else { v / 3.0 }
    });
    let params = vec![
        Tensor::zeros(Shape::new(2, 2, 3, 3)),
        Tensor::zeros(Shape::vector(2)),
        Tensor::zeros(Shape::new(2, 2, 3, 3)),
        Tensor::zeros(Shape::vector(2)),
    ];
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let pv: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let y = residual_block_forward(&mut tape, &xv, &pv).unwrap();
    let s = tape.sum(&y).unwrap();
    tape.backward(&s).unwrap();
    let analytic = tape.grad(&xv).unwrap().unwrap().to_vec();
    let mask: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    assert_eq!(analytic, mask);
    let numeric = finite_diff_grad(
        |probe| {
            let mut g = Eager;
            let y = residual_block_forward(&mut g, probe, &params)?;
            Ok(y.sum())
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(max_relative_error(&analytic, numeric.data()) < 1e-8);
}

#[test]
fn default_extractor_taps_at_224() {
    let fx = FeatureExtractor::build(&FeatureExtractorConfig::seeded(0)).unwrap();
    let shapes: Vec<Shape> = fx.extract(&pattern(1, 224, 224)).unwrap().iter().map(Tensor::shape).collect();
    assert_eq!(
        shapes,
        vec![Shape::new(1, 64, 224, 224), Shape::new(1, 128, 112, 112), Shape::new(1, 256, 56, 56)]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_and_encoded_dims_follow_input(hq in 2usize..=56, wq in 2usize..=56, seed in 0u64..4) {
        let net = build_gman(&NetworkConfig::reduced(2, 4), seed).unwrap();
        let (h, w) = (4 * hq, 4 * wq);
        let (out, trace) = net.forward_traced(&pattern(1, h, w)).unwrap();
        prop_assert_eq!(out.shape(), Shape::new(1, 3, h, w));
        let encoded = trace.iter().find(|s| s.name == ENCODED_STAGE).unwrap();
        prop_assert_eq!(encoded.shape, Shape::new(1, 4, h / 4, w / 4));
    }

    #[test]
    fn zero_refinement_is_identity_on_unit_inputs(
        values in prop::collection::vec(0.0f64..=1.0, 3 * 8 * 12),
        seed in 0u64..8,
    ) {
        let mut net = build_gman(&NetworkConfig::reduced(4, 8), seed).unwrap();
        net.param_mut("out.weight").unwrap().data_mut().fill(0.0);
        net.param_mut("out.bias").unwrap().data_mut().fill(0.0);
        let x = Tensor::from_vec(Shape::new(1, 3, 8, 12), values).unwrap();
        prop_assert_eq!(net.forward(&x).unwrap().max_abs_diff(&x).unwrap(), 0.0);
    }
}
