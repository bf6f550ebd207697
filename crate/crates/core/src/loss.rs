//! Training objective: pixel MSE plus a weighted perceptual term,
//! `L = L_mse + lambda * L_p`.

use crate::error::{Error, Result};
use crate::nn::{FeatureExtractor, FeatureExtractorConfig};
use crate::tensor::{Eager, Graph, Shape, Tensor};

pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the perceptual term.
    pub lambda: f64,
    pub extractor: FeatureExtractorConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            extractor: FeatureExtractorConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::argument(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        self.extractor.validate()
    }
}

/// Scalar values of each loss component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_mse: f64,
    pub l_p: f64,
    pub total: f64,
}

/// Loss components as graph values, so `total` can be differentiated.
#[derive(Clone, Debug)]
pub struct LossTerms<V> {
    pub l_mse: V,
    pub l_p: V,
    pub total: V,
}

impl<V> LossTerms<V> {
    pub fn breakdown<G: Graph<Value = V>>(&self, g: &G) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            l_mse: g.item(&self.l_mse)?,
            l_p: g.item(&self.l_p)?,
            total: g.item(&self.total)?,
        })
    }
}

fn check_pair(out: Shape, truth: Shape) -> Result<()> {
    if out != truth {
        return Err(Error::shape(format!("output {out} does not match truth {truth}")));
    }
    if out.rank() != 4 {
        return Err(Error::shape(format!("loss expects n x c x h x w images, got {out}")));
    }
    Ok(())
}

/// Squared error summed over channels and averaged over the `n * h * w` pixels.
pub fn mse_loss<G: Graph>(g: &mut G, output: &G::Value, truth: &G::Value) -> Result<G::Value> {
    let shape = g.shape_of(output)?;
    check_pair(shape, g.shape_of(truth)?)?;
    let pixels = (shape.n() * shape.h() * shape.w()) as f64;
    g.squared_error(output, truth, pixels)
}

/// Sum over extractor taps of the squared feature distance, each normalized
/// by the element count of its feature volume (batch included).
pub fn perceptual_loss<G: Graph>(
    g: &mut G,
    extractor: &FeatureExtractor,
    weights: &[G::Value],
    output: &G::Value,
    truth: &G::Value,
) -> Result<G::Value> {
    check_pair(g.shape_of(output)?, g.shape_of(truth)?)?;
    let out_features = extractor.extract_on(g, weights, output)?;
    let truth_features = extractor.extract_on(g, weights, truth)?;
    let mut total: Option<G::Value> = None;
    for (a, b) in out_features.iter().zip(&truth_features) {
        let count = g.shape_of(a)?.numel() as f64;
        let term = g.squared_error(a, b, count)?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(&acc, &term)?,
        });
    }
    total.ok_or_else(|| Error::argument("feature extractor has no taps"))
}

pub fn total_loss<G: Graph>(
    g: &mut G,
    extractor: &FeatureExtractor,
    weights: &[G::Value],
    output: &G::Value,
    truth: &G::Value,
    lambda: f64,
) -> Result<LossTerms<G::Value>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::argument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let l_mse = mse_loss(g, output, truth)?;
    let l_p = perceptual_loss(g, extractor, weights, output, truth)?;
    let weighted = g.scale(&l_p, lambda)?;
    let total = g.add(&l_mse, &weighted)?;
    Ok(LossTerms { l_mse, l_p, total })
}

/// A loss configuration with its extractor built.
#[derive(Clone, Debug)]
pub struct Objective {
    lambda: f64,
    extractor: FeatureExtractor,
}

impl Objective {
    pub fn new(config: &LossConfig) -> Result<Self> {
        config.validate()?;
        Ok(Objective {
            lambda: config.lambda,
            extractor: FeatureExtractor::build(&config.extractor)?,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::argument(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(())
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn terms_on<G: Graph>(
        &self,
        g: &mut G,
        weights: &[G::Value],
        output: &G::Value,
        truth: &G::Value,
    ) -> Result<LossTerms<G::Value>> {
        total_loss(g, &self.extractor, weights, output, truth, self.lambda)
    }

    pub fn evaluate(&self, output: &Tensor, truth: &Tensor) -> Result<LossBreakdown> {
        let mut g = Eager;
        let terms = self.terms_on(&mut g, self.extractor.weights(), output, truth)?;
        terms.breakdown(&g)
    }
}
