//! The encoder / residual / decoder dehazing network.
//!
//! Layer sequence for a config with `base` and `down` channels:
//!
//! ```text
//! conv1  3 -> base        s1  relu
//! conv2  base -> base     s1  relu
//! down1  base -> down     s2  relu
//! down2  down -> down     s2  relu      (encoded volume, H/4 x W/4)
//! res1..resK  residual blocks at `down` channels
//! up1    down -> down     transposed s2  relu
//! up2    down -> base     transposed s2  relu   (decoded volume, H x W)
//! conv3  base -> base     s1  relu
//! out    base -> 3        s1
//! residual: add the network input, then relu
//! ```

use std::fmt;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Eager, Graph, Shape, Tape, Tensor, Var};

/// Name of the stage whose output is the encoded volume.
pub const ENCODED_STAGE: &str = "down2.relu";
/// Name of the stage whose output is the decoded volume fed to the last two convs.
pub const DECODED_STAGE: &str = "up2.relu";

const KERNEL: usize = 3;
const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub down_channels: usize,
    /// Number of convolutions inside each residual block.
    pub residual_conv_counts: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 64,
            down_channels: 128,
            residual_conv_counts: vec![2, 2, 3, 4],
        }
    }
}

impl NetworkConfig {
    /// Input height and width must be multiples of this (two stride-2 stages).
    pub const INPUT_MULTIPLE: usize = 4;

    /// A narrow variant with the default topology, for fast experiments.
    pub fn reduced(base_channels: usize, down_channels: usize) -> Self {
        NetworkConfig {
            base_channels,
            down_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::argument("base_channels must be positive"));
        }
        if self.down_channels < self.base_channels {
            return Err(Error::argument(format!(
                "down_channels ({}) must be at least base_channels ({})",
                self.down_channels, self.base_channels
            )));
        }
        if self.residual_conv_counts.is_empty() || self.residual_conv_counts.contains(&0) {
            return Err(Error::argument(
                "residual_conv_counts must be non-empty with every entry at least 1",
            ));
        }
        Ok(())
    }

    /// Scalar parameter count implied by the config, without building it.
    /// `None` on overflow.
    pub fn param_count(&self) -> Option<usize> {
        let conv = |cin: usize, cout: usize| cout.checked_mul(cin)?.checked_mul(9)?.checked_add(cout);
        let (base, down) = (self.base_channels, self.down_channels);
        let residual_convs = self
            .residual_conv_counts
            .iter()
            .try_fold(0usize, |acc, &c| acc.checked_add(c))?;
        [
            conv(IMAGE_CHANNELS, base)?,
            conv(base, base)?,
            conv(base, down)?,
            conv(down, down)?,
            conv(down, down)?.checked_mul(residual_convs)?,
            conv(down, down)?,
            conv(down, base)?,
            conv(base, base)?,
            conv(base, IMAGE_CHANNELS)?,
        ]
        .into_iter()
        .try_fold(0usize, |acc, c| acc.checked_add(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
    Relu,
    ResidualBlock,
    GlobalResidualAdd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    /// Convolutions inside a residual block; zero for other kinds.
    pub inner_conv_count: usize,
}

impl LayerSpec {
    fn conv(kind: LayerKind, cin: usize, cout: usize, stride: usize) -> Self {
        LayerSpec {
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel: (KERNEL, KERNEL),
            stride,
            inner_conv_count: 0,
        }
    }

    fn pointwise(kind: LayerKind, channels: usize) -> Self {
        LayerSpec {
            kind,
            in_channels: channels,
            out_channels: channels,
            kernel: (1, 1),
            stride: 1,
            inner_conv_count: 0,
        }
    }

    fn residual(channels: usize, convs: usize) -> Self {
        LayerSpec {
            inner_conv_count: convs,
            kernel: (KERNEL, KERNEL),
            ..Self::pointwise(LayerKind::ResidualBlock, channels)
        }
    }

    /// "Same" padding; transposed layers add `stride - 1` output padding so
    /// they exactly invert the spatial reduction of a strided conv.
    pub fn geometry(&self) -> ConvGeometry {
        let g = ConvGeometry::new(self.stride, self.kernel.0 / 2);
        match self.kind {
            LayerKind::Deconv => g.with_output_pad(self.stride - 1),
            _ => g,
        }
    }

    /// Scalar parameters owned by this layer.
    pub fn param_count(&self) -> usize {
        let (kh, kw) = self.kernel;
        let conv = self.in_channels * self.out_channels * kh * kw + self.out_channels;
        match self.kind {
            LayerKind::Conv | LayerKind::Deconv => conv,
            LayerKind::ResidualBlock => self.inner_conv_count * conv,
            LayerKind::Relu | LayerKind::GlobalResidualAdd => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
    params: Range<usize>,
}

/// Shape of a named intermediate volume, recorded by [`Network::forward_traced`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub name: String,
    pub shape: Shape,
}

#[derive(Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("config", &self.config)
            .field("layers", &self.layers.len())
            .field("parameters", &self.param_count())
            .finish()
    }
}

/// Builds the network with fan-in scaled normal weights and zero biases.
/// Equal seeds give bitwise-equal parameters.
pub fn build_gman(config: &NetworkConfig, init_seed: u64) -> Result<Network> {
    let mut net = Network::zeroed(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    for layer in &net.layers {
        let spec = layer.spec;
        let fan_in = match spec.kind {
            LayerKind::Conv | LayerKind::ResidualBlock | LayerKind::Deconv => {
                spec.in_channels * spec.kernel.0 * spec.kernel.1
            }
            _ => continue,
        };
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        for i in layer.params.clone() {
            if net.names[i].ends_with(".weight") {
                net.params[i]
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = normal.sample(&mut rng));
            }
        }
    }
    Ok(net)
}

/// `relu(x + C_k(relu(...relu(C_1(x)))))` with `params = [w1, b1, ..., wk, bk]`.
pub fn residual_block_forward<G: Graph>(g: &mut G, x: &G::Value, params: &[G::Value]) -> Result<G::Value> {
    if params.is_empty() || params.len() % 2 != 0 {
        return Err(Error::argument("residual block needs (weight, bias) pairs"));
    }
    let channels = g.shape_of(x)?.c();
    let geom = ConvGeometry::new(1, KERNEL / 2);
    let mut branch: Option<G::Value> = None;
    let convs = params.len() / 2;
    for (i, pair) in params.chunks(2).enumerate() {
        let ws = g.shape_of(&pair[0])?;
        if ws.c() != channels || ws.n() != channels {
            return Err(Error::shape(format!(
                "residual block conv {ws} on {channels}-channel input"
            )));
        }
        let y = g.conv2d(branch.as_ref().unwrap_or(x), &pair[0], &pair[1], geom)?;
        branch = Some(if i + 1 < convs { g.relu(&y)? } else { y });
    }
    let sum = g.add(x, &branch.expect("at least one conv"))?;
    g.relu(&sum)
}

fn push_conv(
    specs: &mut Vec<(String, LayerSpec)>,
    name: &str,
    kind: LayerKind,
    cin: usize,
    cout: usize,
    stride: usize,
    relu: bool,
) {
    specs.push((name.to_string(), LayerSpec::conv(kind, cin, cout, stride)));
    if relu {
        specs.push((format!("{name}.relu"), LayerSpec::pointwise(LayerKind::Relu, cout)));
    }
}

impl Network {
    /// The layer table for `config`, with every parameter zero.
    pub fn zeroed(config: &NetworkConfig) -> Result<Network> {
        config.validate()?;
        let (base, down) = (config.base_channels, config.down_channels);
        let mut specs: Vec<(String, LayerSpec)> = Vec::new();
        let s = &mut specs;
        push_conv(s, "conv1", LayerKind::Conv, IMAGE_CHANNELS, base, 1, true);
        push_conv(s, "conv2", LayerKind::Conv, base, base, 1, true);
        push_conv(s, "down1", LayerKind::Conv, base, down, 2, true);
        push_conv(s, "down2", LayerKind::Conv, down, down, 2, true);
        for (i, &count) in config.residual_conv_counts.iter().enumerate() {
            s.push((format!("res{}", i + 1), LayerSpec::residual(down, count)));
        }
        push_conv(s, "up1", LayerKind::Deconv, down, down, 2, true);
        push_conv(s, "up2", LayerKind::Deconv, down, base, 2, true);
        push_conv(s, "conv3", LayerKind::Conv, base, base, 1, true);
        push_conv(s, "out", LayerKind::Conv, base, IMAGE_CHANNELS, 1, false);
        specs.push((
            "residual".into(),
            LayerSpec::pointwise(LayerKind::GlobalResidualAdd, IMAGE_CHANNELS),
        ));
        specs.push((
            "residual.relu".into(),
            LayerSpec::pointwise(LayerKind::Relu, IMAGE_CHANNELS),
        ));

        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut layers = Vec::new();
        for (name, spec) in specs {
            let start = params.len();
            let (kh, kw) = spec.kernel;
            let (cin, cout) = (spec.in_channels, spec.out_channels);
            let mut add = |suffix: String, shape: Shape| {
                names.push(suffix);
                params.push(Tensor::zeros(shape));
            };
            match spec.kind {
                LayerKind::Conv => {
                    add(format!("{name}.weight"), Shape::new(cout, cin, kh, kw));
                    add(format!("{name}.bias"), Shape::vector(cout));
                }
                LayerKind::Deconv => {
                    add(format!("{name}.weight"), Shape::new(cin, cout, kh, kw));
                    add(format!("{name}.bias"), Shape::vector(cout));
                }
                LayerKind::ResidualBlock => {
                    for k in 1..=spec.inner_conv_count {
                        add(format!("{name}.conv{k}.weight"), Shape::new(cout, cin, kh, kw));
                        add(format!("{name}.conv{k}.bias"), Shape::vector(cout));
                    }
                }
                LayerKind::Relu | LayerKind::GlobalResidualAdd => {}
            }
            layers.push(Layer {
                name,
                spec,
                params: start..params.len(),
            });
        }
        Ok(Network {
            config: config.clone(),
            layers,
            names,
            params,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameter names in layer order.
    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        let m = NetworkConfig::INPUT_MULTIPLE;
        if shape.rank() != 4 || shape.c() != IMAGE_CHANNELS {
            return Err(Error::shape(format!("expected an n x 3 x h x w batch, got {shape}")));
        }
        if shape.h() == 0 || shape.w() == 0 || !shape.h().is_multiple_of(m) || !shape.w().is_multiple_of(m) {
            return Err(Error::shape(format!(
                "input {}x{} is not a positive multiple of {m}",
                shape.h(),
                shape.w()
            )));
        }
        Ok(())
    }

    /// Runs the network on any graph, using `params` in place of the stored
    /// parameters (same order as [`Network::params`]).
    pub fn forward_on<G: Graph>(&self, g: &mut G, params: &[G::Value], input: &G::Value) -> Result<G::Value> {
        self.run(g, params, input, None)
    }

    fn run<G: Graph>(
        &self,
        g: &mut G,
        params: &[G::Value],
        input: &G::Value,
        mut trace: Option<&mut Vec<StageShape>>,
    ) -> Result<G::Value> {
        if params.len() != self.params.len() {
            return Err(Error::argument(format!(
                "{} parameters supplied, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.check_input(g.shape_of(input)?)?;
        let mut current: Option<G::Value> = None;
        for layer in &self.layers {
            let x = current.as_ref().unwrap_or(input);
            let p = &params[layer.params.clone()];
            let y = match layer.spec.kind {
                LayerKind::Conv => g.conv2d(x, &p[0], &p[1], layer.spec.geometry())?,
                LayerKind::Deconv => g.conv2d_transpose(x, &p[0], &p[1], layer.spec.geometry())?,
                LayerKind::Relu => g.relu(x)?,
                LayerKind::ResidualBlock => residual_block_forward(g, x, p)?,
                LayerKind::GlobalResidualAdd => g.add(x, input)?,
            };
            if let Some(trace) = trace.as_deref_mut() {
                trace.push(StageShape {
                    name: layer.name.clone(),
                    shape: g.shape_of(&y)?,
                });
            }
            current = Some(y);
        }
        Ok(current.expect("network has layers"))
    }

    /// Inference on a batch whose height and width are multiples of 4.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.run(&mut Eager, &self.params, batch, None)
    }

    /// Inference that also reports the shape after every layer.
    pub fn forward_traced(&self, batch: &Tensor) -> Result<(Tensor, Vec<StageShape>)> {
        let mut trace = Vec::with_capacity(self.layers.len());
        let out = self.run(&mut Eager, &self.params, batch, Some(&mut trace))?;
        Ok((out, trace))
    }

    /// Places every parameter on `tape` as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig::reduced(4, 8)
    }

    fn image(n: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(Shape::new(n, 3, h, w), |_, c, y, x| {
            ((c * 7 + y * 3 + x * 5) % 11) as f64 / 10.0
        })
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        assert!(NetworkConfig::reduced(16, 8).validate().is_err());
        let mut c = NetworkConfig::default();
        c.residual_conv_counts = vec![];
        assert!(c.validate().is_err());
        c.residual_conv_counts = vec![2, 0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn layer_table_matches_topology() {
        let net = Network::zeroed(&NetworkConfig::default()).unwrap();
        let kinds: Vec<LayerKind> = net.layers().iter().map(|l| l.spec.kind).collect();
        use LayerKind::*;
        assert_eq!(
            kinds,
            vec![
                Conv, Relu, Conv, Relu, Conv, Relu, Conv, Relu, ResidualBlock, ResidualBlock,
                ResidualBlock, ResidualBlock, Deconv, Relu, Deconv, Relu, Conv, Relu, Conv,
                GlobalResidualAdd, Relu
            ]
        );
        let inner: Vec<usize> = net
            .layers()
            .iter()
            .filter(|l| l.spec.kind == ResidualBlock)
            .map(|l| l.spec.inner_conv_count)
            .collect();
        assert_eq!(inner, vec![2, 2, 3, 4]);
        for l in net.layers() {
            if matches!(l.spec.kind, Conv | Deconv | ResidualBlock) {
                assert_eq!(l.spec.kernel, (3, 3));
            }
            if l.spec.kind == ResidualBlock {
                assert_eq!(l.spec.in_channels, l.spec.out_channels);
            }
        }
        let total: usize = net.layers().iter().map(|l| l.spec.param_count()).sum();
        assert_eq!(total, net.param_count());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_gman(&small(), 7).unwrap();
        let b = build_gman(&small(), 7).unwrap();
        let c = build_gman(&small(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.params().iter().zip(a.param_names()).all(|(p, n)| {
            !n.ends_with(".bias") || p.data().iter().all(|&v| v == 0.0)
        }));
    }

    #[test]
    fn output_dims_equal_input_dims() {
        let net = build_gman(&small(), 1).unwrap();
        for (h, w) in [(8, 8), (12, 20), (16, 4)] {
            let y = net.forward(&image(1, h, w)).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 3, h, w));
        }
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let net = build_gman(&small(), 1).unwrap();
        assert!(matches!(net.forward(&image(1, 10, 8)), Err(Error::Shape(_))));
        let gray = Tensor::zeros(Shape::new(1, 1, 8, 8));
        assert!(matches!(net.forward(&gray), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_final_conv_gives_identity() {
        let mut net = build_gman(&small(), 3).unwrap();
        net.param_mut("out.weight").unwrap().data_mut().fill(0.0);
        net.param_mut("out.bias").unwrap().data_mut().fill(0.0);
        let x = image(2, 8, 12);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn identical_samples_give_identical_outputs() {
        let net = build_gman(&small(), 5).unwrap();
        let one = image(1, 8, 8);
        let y = net.forward(&Tensor::stack(&[one.clone(), one]).unwrap()).unwrap();
        assert_eq!(y.sample(0).unwrap(), y.sample(1).unwrap());
    }

    #[test]
    fn residual_block_with_zero_weights_is_relu() {
        let x = Tensor::from_fn(Shape::new(1, 2, 4, 4), |_, c, y, x| c as f64 - (y * 4 + x) as f64 / 8.0);
        let params = vec![
            Tensor::zeros(Shape::new(2, 2, 3, 3)),
            Tensor::zeros(Shape::vector(2)),
            Tensor::zeros(Shape::new(2, 2, 3, 3)),
            Tensor::zeros(Shape::vector(2)),
        ];
        let y = residual_block_forward(&mut Eager, &x, &params).unwrap();
        assert_eq!(y, x.map(|v| v.max(0.0)));
        let bad = vec![Tensor::zeros(Shape::new(3, 3, 3, 3)), Tensor::zeros(Shape::vector(3))];
        assert!(residual_block_forward(&mut Eager, &x, &bad).is_err());
    }

    #[test]
    fn traced_stages_report_encoder_and_decoder_volumes() {
        let net = build_gman(&small(), 2).unwrap();
        let (_, trace) = net.forward_traced(&image(1, 16, 24)).unwrap();
        let find = |name: &str| trace.iter().find(|s| s.name == name).unwrap().shape;
        assert_eq!(find(ENCODED_STAGE), Shape::new(1, 8, 4, 6));
        assert_eq!(find(DECODED_STAGE), Shape::new(1, 4, 16, 24));
    }
}
