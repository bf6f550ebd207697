//! Frozen convolutional feature extractor for the perceptual loss.
//!
//! The geometry follows the first three stages of VGG16: stage `j` runs
//! `convs_per_stage[j]` 3x3 convs with ReLU at `tap_channels[j]` channels,
//! stages are separated by 2x2 max pooling, and the feature of stage `j`
//! (1-based) is the activation after its `j`-th conv (conv1_1, conv2_2,
//! conv3_3). Weights are never trained: they come from a seed or a file.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Eager, Graph, Shape, Tape, Tensor, Var};

use super::checkpoint::{put_param, put_u32, Reader};

pub const EXTRACTOR_MAGIC: [u8; 4] = *b"GMFX";
pub const EXTRACTOR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtractorSource {
    Seeded(u64),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureExtractorConfig {
    pub tap_channels: Vec<usize>,
    pub convs_per_stage: Vec<usize>,
    /// Spatial reduction between stages; only 2 is supported.
    pub downsample_factor: usize,
    pub source: ExtractorSource,
}

impl Default for FeatureExtractorConfig {
    fn default() -> Self {
        FeatureExtractorConfig {
            tap_channels: vec![64, 128, 256],
            convs_per_stage: vec![2, 2, 3],
            downsample_factor: 2,
            source: ExtractorSource::Seeded(0),
        }
    }
}

impl FeatureExtractorConfig {
    pub fn seeded(seed: u64) -> Self {
        FeatureExtractorConfig {
            source: ExtractorSource::Seeded(seed),
            ..Self::default()
        }
    }

    /// Same stage layout with different channel widths.
    pub fn with_channels(mut self, tap_channels: Vec<usize>) -> Self {
        self.tap_channels = tap_channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.tap_channels.len();
        if stages == 0 || stages != self.convs_per_stage.len() {
            return Err(Error::argument(
                "tap_channels and convs_per_stage must be non-empty and of equal length",
            ));
        }
        if self.tap_channels.contains(&0) {
            return Err(Error::argument("tap channels must be positive"));
        }
        for (j, &convs) in self.convs_per_stage.iter().enumerate() {
            if convs < j + 1 {
                return Err(Error::argument(format!(
                    "stage {} taps conv {} but has only {convs}",
                    j + 1,
                    j + 1
                )));
            }
        }
        if self.downsample_factor != 2 {
            return Err(Error::argument("only a downsample factor of 2 is supported"));
        }
        Ok(())
    }

    /// Height and width of inputs must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        1 << (self.tap_channels.len() - 1)
    }

    /// Parameter names and shapes, stage by stage. Only convs up to the
    /// final tap are materialized.
    fn layout(&self) -> Vec<(String, Shape)> {
        let mut out = Vec::new();
        let mut cin = 3;
        let stages = self.tap_channels.len();
        for (j, (&ch, &convs)) in self.tap_channels.iter().zip(&self.convs_per_stage).enumerate() {
            let convs = if j + 1 == stages { j + 1 } else { convs };
            for k in 1..=convs {
                out.push((format!("stage{}.conv{k}.weight", j + 1), Shape::new(ch, cin, 3, 3)));
                out.push((format!("stage{}.conv{k}.bias", j + 1), Shape::vector(ch)));
                cin = ch;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    config: FeatureExtractorConfig,
    names: Vec<String>,
    weights: Vec<Tensor>,
}

impl FeatureExtractor {
    pub fn build(config: &FeatureExtractorConfig) -> Result<Self> {
        config.validate()?;
        match &config.source {
            ExtractorSource::Seeded(seed) => Ok(Self::seeded(config, *seed)),
            ExtractorSource::File(path) => Self::load(config, path),
        }
    }

    fn seeded(config: &FeatureExtractorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, weights) = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let mut t = Tensor::zeros(shape);
                if name.ends_with(".weight") {
                    let fan_in = shape.c() * shape.h() * shape.w();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    t.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
                }
                (name, t)
            })
            .unzip();
        FeatureExtractor {
            config: config.clone(),
            names,
            weights,
        }
    }

    pub fn config(&self) -> &FeatureExtractorConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    /// Places the weights on `tape` as constants, so no gradient reaches them.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.weights.iter().map(|w| tape.constant(w.clone())).collect()
    }

    /// Feature volumes at every tap, computed on any graph with `weights`
    /// standing in for [`FeatureExtractor::weights`].
    pub fn extract_on<G: Graph>(&self, g: &mut G, weights: &[G::Value], image: &G::Value) -> Result<Vec<G::Value>> {
        let shape = g.shape_of(image)?;
        let m = self.config.input_multiple();
        if shape.rank() != 4 || shape.c() != 3 || shape.h() % m != 0 || shape.w() % m != 0 {
            return Err(Error::shape(format!(
                "feature extractor needs n x 3 x h x w with h, w multiples of {m}, got {shape}"
            )));
        }
        if weights.len() != self.weights.len() {
            return Err(Error::argument("wrong number of extractor weights"));
        }
        let geom = ConvGeometry::new(1, 1);
        let stages = self.config.tap_channels.len();
        let mut taps = Vec::with_capacity(stages);
        let mut pairs = weights.chunks(2);
        // latest activation: either `x`, or the most recent tap when `at_tap`
        let mut x: Option<G::Value> = None;
        let mut at_tap = false;
        for j in 0..stages {
            if j > 0 {
                let prev = if at_tap { taps.last() } else { x.as_ref() };
                x = Some(g.max_pool2(prev.expect("previous stage ran"))?);
                at_tap = false;
            }
            let convs = if j + 1 == stages { j + 1 } else { self.config.convs_per_stage[j] };
            for k in 1..=convs {
                let pair = pairs.next().expect("layout covers every conv");
                let input = match (at_tap, taps.last()) {
                    (true, Some(tap)) => tap,
                    _ => x.as_ref().unwrap_or(image),
                };
                let y = g.conv2d(input, &pair[0], &pair[1], geom)?;
                let y = g.relu(&y)?;
                if k == j + 1 {
                    taps.push(y);
                    at_tap = true;
                } else {
                    x = Some(y);
                    at_tap = false;
                }
            }
        }
        Ok(taps)
    }

    pub fn extract(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        self.extract_on(&mut Eager, &self.weights, image)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&EXTRACTOR_MAGIC);
        out.extend_from_slice(&EXTRACTOR_VERSION.to_le_bytes());
        put_u32(&mut out, self.config.tap_channels.len());
        for (&ch, &convs) in self.config.tap_channels.iter().zip(&self.config.convs_per_stage) {
            put_u32(&mut out, ch);
            put_u32(&mut out, convs);
        }
        put_u32(&mut out, self.weights.len());
        for (name, w) in self.names.iter().zip(&self.weights) {
            put_param(&mut out, name, w);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    fn load(config: &FeatureExtractorConfig, path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(config, &bytes).map_err(|e| e.in_file(path))
    }

    /// Decodes weights saved by [`FeatureExtractor::encode`]; the stored stage
    /// layout must match `config`.
    pub fn decode(config: &FeatureExtractorConfig, bytes: &[u8]) -> Result<Self> {
        config.validate()?;
        let mut r = Reader::new(bytes);
        r.expect_magic(&EXTRACTOR_MAGIC)?;
        r.expect_version(EXTRACTOR_VERSION)?;
        let at = r.offset();
        let stages = r.u32("stage count")? as usize;
        if stages != config.tap_channels.len() {
            return Err(Error::format(at, format!("file has {stages} stages, config {}", config.tap_channels.len())));
        }
        for (&ch, &convs) in config.tap_channels.iter().zip(&config.convs_per_stage) {
            let at = r.offset();
            let (fch, fconvs) = (r.u32("channels")? as usize, r.u32("conv count")? as usize);
            if (fch, fconvs) != (ch, convs) {
                return Err(Error::format(at, format!(
                    "stage is {fch} channels x {fconvs} convs, config wants {ch} x {convs}"
                )));
            }
        }
        let layout = config.layout();
        let at = r.offset();
        if r.u32("parameter count")? as usize != layout.len() {
            return Err(Error::format(at, "parameter count does not match stage layout"));
        }
        let mut names = Vec::with_capacity(layout.len());
        let mut weights = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            weights.push(r.param(&name, shape)?);
            names.push(name);
        }
        r.finish()?;
        Ok(FeatureExtractor {
            config: config.clone(),
            names,
            weights,
        })
    }
}
