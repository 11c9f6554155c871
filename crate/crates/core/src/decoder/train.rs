use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lstm::{AttentionDecoderModel, Dims};
use crate::error::{invalid, Result};
use crate::neural::NeuralRecording;
use crate::rng;
use crate::speaker::{ClusterModel, SpeakerEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub hidden: usize,
    pub fc_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            hidden: super::lstm::DEFAULT_HIDDEN,
            fc_hidden: super::lstm::DEFAULT_FC_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub seed: u64,
    pub epochs: usize,
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(model: &AttentionDecoderModel, data: &[(NeuralRecording, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (z, y) in data {
        if argmax(&model.forward(z)?) == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Adam on per-example cross-entropy, batch size 1, fixed epoch count.
/// Visiting order is reshuffled every epoch from `cfg.seed`.
pub fn train_predictor(
    dataset: &[(NeuralRecording, usize)],
    validation: &[(NeuralRecording, usize)],
    classes: usize,
    channels: usize,
    cfg: &TrainConfig,
) -> Result<(AttentionDecoderModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if let Some((_, y)) = dataset.iter().chain(validation).find(|(_, y)| *y >= classes) {
        return Err(invalid(format!("label {y} out of range for K={classes}")));
    }
    let dims = Dims::new(channels, cfg.hidden, cfg.fc_hidden, classes)?;
    let mut model = AttentionDecoderModel::init(dims, cfg.seed);
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);

    let mut initial = 0.0;
    for (z, y) in dataset {
        initial += model.loss(z, *y)?;
    }
    let initial_loss = initial / dataset.len() as f64;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::rng_at(cfg.seed, &[0x5E, epoch as u64]));
        let mut total = 0.0;
        for &i in &order {
            let (z, y) = &dataset[i];
            let (loss, grad) = model.loss_and_grad(z, *y)?;
            total += loss;
            adam.update(model.params_mut(), &grad);
        }
        let mean = total / dataset.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }

    let report = TrainReport {
        initial_loss,
        train_accuracy: accuracy(&model, dataset)?,
        val_accuracy: if validation.is_empty() { None } else { Some(accuracy(&model, validation)?) },
        epoch_losses,
        seed: cfg.seed,
        epochs: cfg.epochs,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intention {
    pub label: usize,
    pub centroid: SpeakerEmbedding,
    pub probs: Vec<f64>,
}

/// Most probable cluster and its centroid.
pub fn predict_intention(
    model: &AttentionDecoderModel,
    clusters: &ClusterModel,
    z: &NeuralRecording,
) -> Result<Intention> {
    if model.dims().classes != clusters.k() {
        return Err(invalid("model classes and cluster count differ"));
    }
    let probs = model.forward(z)?;
    let label = argmax(&probs);
    Ok(Intention { label, centroid: clusters.centroid_of(label)?, probs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(3, 0.1, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, 1.0, 1.0];
        adam.update(&mut p, &[2.0, -0.5, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn empty_and_out_of_range() {
        assert!(train_predictor(&[], &[], 3, 2, &TrainConfig::default()).is_err());
        let z = NeuralRecording::new(vec![0.0; 4], 2, 100.0, "z").unwrap();
        assert!(train_predictor(&[(z, 3)], &[], 3, 2, &TrainConfig::default()).is_err());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
