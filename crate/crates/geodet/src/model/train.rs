//! Toy training loop: per-scene gradient steps with Adam moments, decoupled
//! weight decay, and a polynomial learning-rate schedule
//! `lr_t = lr0 * (1 - epoch/epochs)^power`. Deterministic under a fixed
//! seed: scenes are visited in order and all initialization flows from the
//! run seed.

use crate::error::{Error, Result};
use crate::model::params::ModelParams;
use crate::model::pipeline::{first_non_finite_stage, forward, loss_and_grads, ScenePrep};
use crate::types::SceneAnnotation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    /// Classification weight in the total loss.
    pub beta: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 500,
            learning_rate: 2e-4,
            weight_decay: 0.05,
            poly_power: 0.9,
            beta: 0.5,
        }
    }
}

/// Per-epoch mean loss over the scene set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub loss_trace: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One decoupled-weight-decay Adam step at learning rate `lr`.
    fn update(
        &mut self,
        theta: &mut [f64],
        grad: &[f64],
        decay_mask: &[bool],
        lr: f64,
        weight_decay: f64,
    ) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..theta.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let mut step = m_hat / (v_hat.sqrt() + EPS);
            if decay_mask[i] {
                step += weight_decay * theta[i];
            }
            theta[i] -= lr * step;
        }
    }
}

/// Train on the given scenes until the epoch budget is spent. Aborts with a
/// diagnostic naming the first non-finite pipeline stage if the loss stops
/// being finite.
pub fn train_toy(
    scenes: &[(ScenePrep, SceneAnnotation)],
    mut params: ModelParams,
    options: &TrainOptions,
) -> Result<(ModelParams, TrainReport)> {
    if scenes.is_empty() {
        return Err(Error::validation("training requires at least one scene"));
    }
    if options.epochs == 0 {
        return Err(Error::config("epoch count must be at least 1"));
    }

    let decay_mask = params.decay_mask();
    let mut theta = params.flatten();
    let mut adam = AdamState::new(theta.len());
    let mut loss_trace = Vec::with_capacity(options.epochs);

    for epoch in 0..options.epochs {
        let lr = options.learning_rate
            * (1.0 - epoch as f64 / options.epochs as f64).powf(options.poly_power);
        let mut epoch_loss = 0.0;
        for (scene_idx, (scene, annotation)) in scenes.iter().enumerate() {
            let (breakdown, grads) = loss_and_grads(&params, scene, annotation, options.beta)?;
            if !breakdown.total.is_finite() {
                let stage = forward(&params, scene)
                    .ok()
                    .and_then(|pass| first_non_finite_stage(&pass))
                    .unwrap_or("loss");
                return Err(Error::validation(format!(
                    "non-finite loss at epoch {epoch}, scene {scene_idx}; first non-finite tensor: {stage}"
                )));
            }
            epoch_loss += breakdown.total;
            let grad_flat = grads.flatten();
            adam.update(&mut theta, &grad_flat, &decay_mask, lr, options.weight_decay);
            params.assign_from_flat(&theta);
        }
        loss_trace.push(epoch_loss / scenes.len() as f64);
    }

    let report = TrainReport {
        initial_loss: loss_trace[0],
        final_loss: *loss_trace.last().unwrap(),
        loss_trace,
    };
    Ok((params, report))
}
