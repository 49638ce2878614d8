//! Mini-batch training of the residual network with adaptive moment
//! estimation, deterministic for a fixed seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradnet::network::{
    loss_eq2, network_backward, network_forward, NetworkWeights, WeightGradients,
};
use crate::gradnet::GradientCube;

/// Training hyperparameters. Defaults follow the full-scale configuration;
/// tests shrink depth/width to desk scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub depth: usize,
    pub width: usize,
    pub patch_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of pairs held out for a per-epoch validation loss; 0 trains
    /// on everything.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth: 17,
            width: 64,
            patch_size: 40,
            batch_size: 128,
            epochs: 100,
            learning_rate: 1e-3,
            seed: 0,
            validation_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.patch_size < 5 {
            return Err(Error::InvalidInput("patch_size must be >= 5".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        if self.depth < 2 {
            return Err(Error::InvalidInput("depth must be >= 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidInput(
                "validation_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Trained weights plus the loss traces recorded along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub weights: NetworkWeights,
    /// Mean training loss per epoch (over the patches seen in that epoch,
    /// each evaluated before its batch's update).
    pub loss_trace: Vec<f64>,
    /// Held-out loss per epoch; empty when validation_fraction is 0.
    pub validation_trace: Vec<f64>,
}

/// First and second moment accumulators, flat per block like the gradients.
struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(weights: &NetworkWeights) -> Self {
        let shapes: Vec<usize> = weights
            .blocks
            .iter()
            .map(|b| b.kernel.len() + b.bias.len())
            .collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, weights: &mut NetworkWeights, grads: &WeightGradients, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (bi, block) in weights.blocks.iter_mut().enumerate() {
            let g = &grads.blocks[bi];
            let m = &mut self.m[bi];
            let v = &mut self.v[bi];
            let kn = block.kernel.len();
            for (j, grad) in g.kernel.iter().chain(g.bias.iter()).enumerate() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * grad;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * grad * grad;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let delta = lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                if j < kn {
                    block.kernel[j] -= delta;
                } else {
                    block.bias[j - kn] -= delta;
                }
            }
        }
    }
}

/// Trains a freshly initialized network on the given patch pairs.
///
/// Weights are seeded from `config.seed`; epoch shuffling and the optional
/// validation split use derived sub-seeds, so a repeated run is bit-identical.
/// A non-finite batch loss aborts with a diagnostic.
pub fn train(pairs: &[(GradientCube, GradientCube)], config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    let shape = &pairs[0].0;
    for (input, target) in pairs {
        if !input.same_shape(shape) || !input.same_shape(target) {
            return Err(Error::ShapeMismatch(
                "training pairs must share one shape".into(),
            ));
        }
    }

    let mut weights =
        NetworkWeights::seeded(config.depth, config.width, shape.channels(), config.seed)?;
    let mut adam = AdamState::new(&weights);

    // Validation split: deterministic shuffle of indices, tail held out.
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    let n_val = (pairs.len() as f64 * config.validation_fraction).floor() as usize;
    let val_indices: Vec<usize> = if n_val > 0 {
        let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
        indices.shuffle(&mut split_rng);
        indices.split_off(pairs.len() - n_val)
    } else {
        Vec::new()
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut validation_trace = Vec::with_capacity(if n_val > 0 { config.epochs } else { 0 });

    for epoch in 0..config.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_sq = 0.0;
        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<GradientCube> = chunk.iter().map(|&i| pairs[i].0.clone()).collect();
            let targets: Vec<GradientCube> = chunk.iter().map(|&i| pairs[i].1.clone()).collect();
            let grads = network_backward(&batch, &targets, &weights)?;
            if !grads.loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch}: non-finite loss"
                )));
            }
            epoch_sq += grads.loss * chunk.len() as f64;
            adam.update(&mut weights, &grads, config.learning_rate);
        }
        loss_trace.push(epoch_sq / indices.len() as f64);

        if n_val > 0 {
            let mut val_sq = 0.0;
            for &i in &val_indices {
                let (input, target) = &pairs[i];
                let pred = network_forward(input, &weights)?;
                val_sq += loss_eq2(&pred, input, target)?;
            }
            validation_trace.push(val_sq / n_val as f64);
        }
    }

    Ok(TrainRun { weights, loss_trace, validation_trace })
}
