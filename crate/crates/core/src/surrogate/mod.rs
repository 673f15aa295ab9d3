//! Learned deviation-payoff functions.
//!
//! A [`SurrogateModel`] wraps a [`Network`] with input and output
//! normalization: mixture entries are fed raw, the family parameter is
//! min-max scaled to `[0, 1]`, and payoffs are trained in the `[0, 1]` image of
//! the family's payoff scale.

mod io;
mod network;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{DeviationPayoffs, Mixture};
use crate::{par, seeding};

pub use io::{load_model, load_model_expecting, save_model, MODEL_FORMAT_VERSION};
pub use network::{Adam, Dense, ForwardCache, Head, Network, NetworkSpec};

/// Rows per forward chunk. Chunk boundaries are fixed so that batched
/// inference is bit-identical for every thread count.
pub const FORWARD_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { learning_rate: 1e-3, batch_size: 32, epochs: 10, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 0 }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0 and batch_size >= 1 (got {}, {})",
                self.learning_rate, self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("Adam moments must lie in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }

    pub fn with_epochs(&self, epochs: usize) -> Self {
        TrainSettings { epochs, ..self.clone() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_trained: usize,
    /// Mean mini-batch loss of every epoch so far.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub spec: NetworkSpec,
    pub network: Network,
    /// Parameter range mapped to `[0, 1]`.
    pub input_norm: (f64, f64),
    /// Payoff `(min, max)` mapped to `[0, 1]`.
    pub output_norm: (f64, f64),
    pub meta: TrainingMeta,
}

/// Training rows in model space: normalized inputs and normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// He-initialized model, deterministic in `seed`.
pub fn init_model(
    spec: &NetworkSpec,
    input_norm: (f64, f64),
    output_norm: (f64, f64),
    seed: u64,
) -> Result<SurrogateModel> {
    spec.validate()?;
    if !(output_norm.1 > output_norm.0) {
        return Err(Error::InvalidConfig(format!("output normalization needs max > min, got {output_norm:?}")));
    }
    if !(input_norm.1 >= input_norm.0) {
        return Err(Error::InvalidConfig(format!("input normalization needs max >= min, got {input_norm:?}")));
    }
    let mut rng = seeding::rng(seeding::derive(seed, seeding::stream::MODEL_INIT));
    Ok(SurrogateModel {
        spec: spec.clone(),
        network: Network::init(spec, &mut rng),
        input_norm,
        output_norm,
        meta: TrainingMeta { seed, ..Default::default() },
    })
}

impl SurrogateModel {
    pub fn num_strategies(&self) -> usize {
        self.spec.num_heads
    }

    pub fn normalize_parameter(&self, v: f64) -> f64 {
        let (lo, hi) = self.input_norm;
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.5
        }
    }

    pub fn normalize_payoff(&self, x: f64) -> f64 {
        let (lo, hi) = self.output_norm;
        (x - lo) / (hi - lo)
    }

    pub fn denormalize_payoff(&self, y: f64) -> f64 {
        let (lo, hi) = self.output_norm;
        lo + y * (hi - lo)
    }

    /// Build model-space input rows. `vs` is ignored when the model has no
    /// parameter input.
    pub fn encode_inputs(&self, mixes: &[&[f64]], vs: &[f64]) -> Result<Array2<f64>> {
        let n = self.num_strategies();
        let width = self.spec.input_width();
        if self.spec.includes_parameter_input && vs.len() != mixes.len() {
            return Err(Error::DimensionMismatch { expected: mixes.len(), got: vs.len() });
        }
        let mut x = Array2::zeros((mixes.len(), width));
        for (i, mix) in mixes.iter().enumerate() {
            if mix.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: mix.len() });
            }
            for (j, p) in mix.iter().enumerate() {
                x[[i, j]] = *p;
            }
            if self.spec.includes_parameter_input {
                x[[i, n]] = self.normalize_parameter(vs[i]);
            }
        }
        Ok(x)
    }

    pub fn encode_dataset(&self, mixes: &[&[f64]], vs: &[f64], payoffs: &[&[f64]]) -> Result<EncodedDataset> {
        if payoffs.len() != mixes.len() {
            return Err(Error::DimensionMismatch { expected: mixes.len(), got: payoffs.len() });
        }
        let inputs = self.encode_inputs(mixes, vs)?;
        let n = self.num_strategies();
        let mut targets = Array2::zeros((payoffs.len(), n));
        for (i, row) in payoffs.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            for (j, u) in row.iter().enumerate() {
                targets[[i, j]] = self.normalize_payoff(*u);
            }
        }
        Ok(EncodedDataset { inputs, targets })
    }

    /// Batched forward pass in normalized payoff space.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let width = self.spec.input_width();
        if batch.ncols() != width {
            return Err(Error::DimensionMismatch { expected: width, got: batch.ncols() });
        }
        let rows = batch.nrows();
        if rows <= FORWARD_CHUNK {
            return Ok(self.network.forward(batch));
        }
        let chunks = rows.div_ceil(FORWARD_CHUNK);
        let parts = par::map_range(chunks, |c| {
            let lo = c * FORWARD_CHUNK;
            let hi = (lo + FORWARD_CHUNK).min(rows);
            self.network.forward(batch.slice(s![lo..hi, ..]))
        });
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(concatenate(Axis(0), &views).expect("chunk shapes agree"))
    }

    /// Mean squared error in normalized space.
    pub fn mse(&self, data: &EncodedDataset) -> Result<f64> {
        let out = self.forward(data.inputs.view())?;
        let diff = out - &data.targets;
        Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len().max(1) as f64)
    }

    /// Mini-batch Adam on the joint MSE over all heads. Optimizer moments
    /// start fresh on every call; weights continue from their current values.
    pub fn train(&mut self, data: &EncodedDataset, settings: &TrainSettings) -> Result<()> {
        settings.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let width = self.spec.input_width();
        if data.inputs.ncols() != width {
            return Err(Error::DimensionMismatch { expected: width, got: data.inputs.ncols() });
        }
        if data.targets.ncols() != self.num_strategies() || data.targets.nrows() != data.len() {
            return Err(Error::DimensionMismatch { expected: self.num_strategies(), got: data.targets.ncols() });
        }
        let mut adam = Adam::new(&self.network, settings.learning_rate, settings.beta1, settings.beta2, settings.eps);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..settings.epochs {
            let epoch = self.meta.epochs_trained;
            let mut rng = seeding::rng(seeding::derive_path(settings.seed, &[seeding::stream::TRAIN, epoch as u64]));
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for (b, idx) in order.chunks(settings.batch_size).enumerate() {
                let x = data.inputs.select(Axis(0), idx);
                let y = data.targets.select(Axis(0), idx);
                let (loss, grads) = self.network.mse_and_grad(x.view(), y.view());
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                adam.step(&mut self.network, &grads);
                total += loss;
                batches += 1;
            }
            self.meta.loss_history.push(total / batches as f64);
            self.meta.epochs_trained += 1;
        }
        Ok(())
    }

    /// Convenience wrapper: encode raw rows (payoff units) and train.
    pub fn fit(&mut self, mixes: &[&[f64]], vs: &[f64], payoffs: &[&[f64]], settings: &TrainSettings) -> Result<()> {
        let data = self.encode_dataset(mixes, vs, payoffs)?;
        self.train(&data, settings)
    }

    fn check_parameter(&self, v: f64, allow_extrapolation: bool) -> Result<()> {
        if !self.spec.includes_parameter_input || allow_extrapolation {
            return Ok(());
        }
        let (lo, hi) = self.input_norm;
        let tol = 1e-9 * (hi - lo).abs().max(1.0);
        if !(v >= lo - tol && v <= hi + tol) {
            return Err(Error::OutOfRange { v, min: lo, max: hi });
        }
        Ok(())
    }

    /// Deviation payoffs in payoff units for one `(mix, v)`.
    pub fn predict_deviation_payoffs(&self, mix: &Mixture, v: f64) -> Result<DeviationPayoffs> {
        self.predict_with(mix, v, false)
    }

    pub fn predict_with(&self, mix: &Mixture, v: f64, allow_extrapolation: bool) -> Result<DeviationPayoffs> {
        let mut out = self.predict_batch(&[mix.probs()], &[v], allow_extrapolation)?;
        Ok(DeviationPayoffs::new(out.pop().expect("one row")))
    }

    /// Batched prediction in payoff units.
    pub fn predict_batch(&self, mixes: &[&[f64]], vs: &[f64], allow_extrapolation: bool) -> Result<Vec<Vec<f64>>> {
        if self.spec.includes_parameter_input {
            for &v in vs {
                self.check_parameter(v, allow_extrapolation)?;
            }
        }
        let x = self.encode_inputs(mixes, vs)?;
        let out = self.forward(x.view())?;
        Ok(out.rows().into_iter().map(|r| r.iter().map(|y| self.denormalize_payoff(*y)).collect()).collect())
    }
}
