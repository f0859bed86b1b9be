//! Per-class SHAP attributions.
//!
//! Three engines share one contract: given a model with `C` outputs and an
//! input `x` of `K` scalar features, produce for each output a map `φ` shaped
//! like `x` and a base value `φ0` so that `φ0 + Σφ ≈ f(x)`.
//!
//! * [`exact_shapley`]: enumerates all `2^K` coalitions against one baseline.
//! * [`sampling_shapley`]: Monte-Carlo permutation estimate over a background.
//! * [`gradient_shap`]: expected gradients along random baseline-to-input
//!   paths; the engine used for neural networks.

mod exact;
mod gradient;
mod sampling;

pub use exact::{exact_shapley, exact_shapley_all, MAX_EXACT_FEATURES};
pub use gradient::{background_mean_output, gradient_shap, gradient_shap_all};
pub use sampling::{sampling_shapley, sampling_shapley_all, SamplingEstimate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::numerics::{Tape, Tensor};
use crate::rng;

/// A differentiable (or at least evaluable) map from inputs to `C` outputs.
pub trait Explainable {
    fn num_outputs(&self) -> usize;

    /// `[n, C]` outputs for a `[n, ...example shape]` batch.
    fn outputs(&self, batch: &Tensor) -> Result<Tensor>;

    /// Outputs plus, for each requested class, the gradient of that output
    /// with respect to the batch (same shape as `batch`).
    fn output_gradients(&self, batch: &Tensor, classes: &[usize]) -> Result<(Tensor, Vec<Tensor>)>;
}

impl Explainable for Model {
    fn num_outputs(&self) -> usize {
        self.classes()
    }

    fn outputs(&self, batch: &Tensor) -> Result<Tensor> {
        self.logits(batch)
    }

    fn output_gradients(&self, batch: &Tensor, classes: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false);
        let x = tape.var(batch.clone(), true);
        let logits = self.forward(&mut tape, x, &params)?;
        let mut grads = Vec::with_capacity(classes.len());
        for &c in classes {
            let col = tape.column(logits, c)?;
            let head = tape.sum(col);
            let mut g = tape.backward(head)?;
            grads.push(g.take(x).unwrap_or_else(|| Tensor::zeros(batch.shape().to_vec())));
        }
        Ok((tape.value(logits).clone(), grads))
    }
}

/// `f(x) = x·W + b` over flattened inputs, with exact gradients. Handy as a
/// reference model: every engine must reproduce `φ_k = W_kc (x_k − b_k)`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    /// `[K, C]`
    pub weights: Tensor,
    /// `[C]`
    pub bias: Vec<f64>,
}

impl Explainable for LinearModel {
    fn num_outputs(&self) -> usize {
        self.bias.len()
    }

    fn outputs(&self, batch: &Tensor) -> Result<Tensor> {
        let n = batch.shape().first().copied().unwrap_or(0);
        let flat = batch.reshape(vec![n, batch.len() / n.max(1)])?;
        let mut out = crate::numerics::kernels::matmul(&flat, &self.weights)?;
        let c = self.bias.len();
        for row in out.data_mut().chunks_mut(c) {
            row.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        }
        Ok(out)
    }

    fn output_gradients(&self, batch: &Tensor, classes: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
        let out = self.outputs(batch)?;
        let (k, c) = (self.weights.shape()[0], self.weights.shape()[1]);
        let n = batch.shape()[0];
        let grads = classes
            .iter()
            .map(|&cls| {
                let col: Vec<f64> = (0..k).map(|i| self.weights.data()[i * c + cls]).collect();
                Tensor::new(batch.shape().to_vec(), col.repeat(n))
            })
            .collect::<Result<_>>()?;
        Ok((out, grads))
    }
}

/// Additive explanation of one output: `f(x) ≈ phi0 + Σ phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub phi: Tensor,
    pub phi0: f64,
    pub class_id: usize,
}

impl AttributionMap {
    pub fn total(&self) -> f64 {
        self.phi.sum()
    }

    pub fn clamp_positive(&self) -> Self {
        clamp_positive(self)
    }
}

/// Keeps only the positive attributions; `phi0` is untouched.
pub fn clamp_positive(map: &AttributionMap) -> AttributionMap {
    AttributionMap {
        phi: map.phi.map(|v| v.max(0.0)),
        phi0: map.phi0,
        class_id: map.class_id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Gradient,
    Sampling,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapConfig {
    #[serde(default = "default_engine")]
    pub engine: Engine,
    /// Paths (gradient engine) or permutations (sampling engine) per example.
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    /// Gaussian noise added to each path point by the gradient engine.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_engine() -> Engine {
    Engine::Gradient
}
fn default_samples() -> usize {
    200
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self {
            engine: default_engine(),
            n_samples: default_samples(),
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl ShapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config {
                field: "shap.n_samples".into(),
                reason: "must be at least 1".into(),
            });
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config {
                field: "shap.noise_std".into(),
                reason: "must be non-negative".into(),
            });
        }
        Ok(())
    }

    /// Seed for one example; shared by all of that example's classes.
    pub fn example_seed(&self, example: usize) -> u64 {
        rng::derive(self.seed, &[example as u64])
    }
}

/// Explanations of one model against one background, with the background's
/// mean output computed once.
pub struct Explainer<'a> {
    model: &'a dyn Explainable,
    background: &'a Tensor,
    config: ShapConfig,
    base: Option<Vec<f64>>,
}

impl<'a> Explainer<'a> {
    /// `background` is a `[B, ...example shape]` batch.
    pub fn new(model: &'a dyn Explainable, background: &'a Tensor, config: &ShapConfig) -> Result<Self> {
        config.validate()?;
        if background.shape().first().copied().unwrap_or(0) == 0 {
            return Err(Error::invalid("background set is empty"));
        }
        let base = match config.engine {
            Engine::Gradient => Some(gradient::background_mean_output(model, background)?),
            _ => None,
        };
        Ok(Self {
            model,
            background,
            config: config.clone(),
            base,
        })
    }

    /// Signed maps for every output unit at `x`. `example` keys the random
    /// stream so that results do not depend on evaluation order. The exact
    /// engine uses the background mean as its single baseline.
    pub fn explain_raw(&self, x: &Tensor, example: usize) -> Result<Vec<AttributionMap>> {
        let seeded = ShapConfig {
            seed: self.config.example_seed(example),
            ..self.config.clone()
        };
        match self.config.engine {
            Engine::Gradient => {
                let base = self.base.as_deref().expect("computed for the gradient engine");
                gradient::gradient_shap_with_base(self.model, x, self.background, &seeded, base)
            }
            Engine::Sampling => Ok(sampling_shapley_all(self.model, x, self.background, &seeded)?
                .into_iter()
                .map(|e| e.map)
                .collect()),
            Engine::Exact => {
                let b = self.background.shape()[0];
                let mut mean = vec![0.0; x.len()];
                for row in self.background.data().chunks(x.len()) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / b as f64);
                }
                exact_shapley_all(self.model, x, &Tensor::new(x.shape().to_vec(), mean)?)
            }
        }
    }

    /// Clamped maps for every output unit at `x`.
    pub fn explain(&self, x: &Tensor, example: usize) -> Result<Vec<AttributionMap>> {
        Ok(self.explain_raw(x, example)?.iter().map(clamp_positive).collect())
    }
}

/// Signed maps for every output unit of `model` at `x`; see [`Explainer`].
pub fn explain_all_classes_raw(
    model: &dyn Explainable,
    x: &Tensor,
    background: &Tensor,
    config: &ShapConfig,
    example: usize,
) -> Result<Vec<AttributionMap>> {
    Explainer::new(model, background, config)?.explain_raw(x, example)
}

/// Clamped maps, one per output unit.
pub fn explain_all_classes(
    model: &dyn Explainable,
    x: &Tensor,
    background: &Tensor,
    config: &ShapConfig,
    example: usize,
) -> Result<Vec<AttributionMap>> {
    Ok(explain_all_classes_raw(model, x, background, config, example)?
        .iter()
        .map(clamp_positive)
        .collect())
}

pub(crate) fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
