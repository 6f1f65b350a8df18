use log::{debug, info};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::{Example, SeqInput, SequenceNetwork};
use crate::error::{Error, Result};

/// Gradient-descent settings. Parameters are updated after every batch of
/// `batch_sequences` sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_sequences: usize,
    /// Standard deviation of Gaussian noise added to dense inputs on every
    /// presentation during training.
    pub input_noise_std: f64,
    pub early_stop_patience: usize,
    pub rng_seed: u64,
    pub momentum: f64,
    /// Batch gradients with a larger L2 norm are rescaled to this norm.
    pub clip_norm: Option<f64>,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            max_epochs: 100,
            batch_sequences: 10,
            input_noise_std: 0.1,
            early_stop_patience: 20,
            rng_seed: 0,
            momentum: 0.0,
            clip_norm: Some(10.0),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "learning rate must be finite and nonnegative".into(),
            ));
        }
        if !(self.input_noise_std >= 0.0) {
            return Err(Error::Config(
                "input noise deviation must be nonnegative".into(),
            ));
        }
        if self.batch_sequences == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation cost of the initial parameters.
    pub initial_valid_cost: f64,
    /// Summed batch costs seen during each epoch (with input noise).
    pub train_costs: Vec<f64>,
    /// Validation cost after each epoch.
    pub valid_costs: Vec<f64>,
    /// Epoch whose parameters were returned; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_valid_cost: f64,
}

fn with_noise(ex: &Example, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> Example {
    match &ex.input {
        SeqInput::Dense(x) => {
            let noisy =
                DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] + normal.sample(rng));
            Example {
                input: SeqInput::Dense(noisy),
                target: ex.target.clone(),
            }
        }
        SeqInput::Tokens(_) => ex.clone(),
    }
}

/// Trains a copy of `net` and returns the parameters with the lowest
/// validation cost. When `valid` is empty the noise-free training cost is
/// used for model selection. Results depend only on `cfg.rng_seed`.
pub fn train(
    net: &SequenceNetwork,
    train_set: &[Example],
    valid: &[Example],
    cfg: &TrainConfig,
) -> Result<(SequenceNetwork, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let selection = if valid.is_empty() { train_set } else { valid };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let normal = Normal::new(0.0, cfg.input_noise_std)
        .map_err(|e| Error::Config(format!("input noise: {e}")))?;

    let mut params = net.clone();
    let mut velocity = net.zeros_like();
    let initial = params.cost(selection)?;
    if !initial.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut report = TrainReport {
        initial_valid_cost: initial,
        train_costs: Vec::new(),
        valid_costs: Vec::new(),
        best_epoch: 0,
        best_valid_cost: initial,
    };
    let mut best = params.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_cost = 0.0;
        for chunk in order.chunks(cfg.batch_sequences) {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&i| {
                    if cfg.input_noise_std > 0.0 {
                        with_noise(&train_set[i], &normal, &mut rng)
                    } else {
                        train_set[i].clone()
                    }
                })
                .collect();
            let (mut grad, cost) = params.gradients(&batch)?;
            if !cost.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            epoch_cost += cost;
            if let Some(limit) = cfg.clip_norm {
                let norm = grad.l2_norm();
                if norm > limit {
                    grad.scale(limit / norm);
                }
            }
            if cfg.momentum > 0.0 {
                velocity.scale(cfg.momentum);
                velocity.axpy(-cfg.learning_rate, &grad);
                params.axpy(1.0, &velocity);
            } else {
                params.axpy(-cfg.learning_rate, &grad);
            }
        }
        let vcost = params.cost(selection)?;
        if !vcost.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        debug!("epoch {epoch}: train {epoch_cost:.6e}, valid {vcost:.6e}");
        report.train_costs.push(epoch_cost);
        report.valid_costs.push(vcost);
        if vcost < report.best_valid_cost {
            report.best_valid_cost = vcost;
            report.best_epoch = epoch;
            best = params.clone();
        } else if epoch - report.best_epoch >= cfg.early_stop_patience {
            info!(
                "early stop at epoch {epoch}; best epoch {}",
                report.best_epoch
            );
            break;
        }
    }
    Ok((best, report))
}
