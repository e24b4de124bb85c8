//! Mini-batch training with a fresh seeded shuffle every epoch.

use super::network::{Gradients, Network};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub aux: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// When false the training order is drawn once and reused every epoch.
    pub shuffle_each_epoch: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            optimizer: Optimizer::default(),
            shuffle_each_epoch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    /// Order in which training samples were visited this epoch.
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn val_accuracy(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.val_accuracy).collect()
    }

    pub fn train_loss(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

struct OptimizerState {
    first: Gradients,
    second: Gradients,
    step: i32,
}

impl OptimizerState {
    fn new(net: &Network) -> Self {
        Self { first: Gradients::zeros_like(net), second: Gradients::zeros_like(net), step: 0 }
    }

    fn apply(&mut self, net: &mut Network, grads: &Gradients, hp: &Hyperparams) {
        self.step += 1;
        let lr = hp.learning_rate;
        for (k, param) in net.params.iter_mut().enumerate() {
            let Some(p) = param else { continue };
            let g = grads.layers[k].as_ref().unwrap();
            let m = self.first.layers[k].as_mut().unwrap();
            let v = self.second.layers[k].as_mut().unwrap();
            let pairs = [(&mut p.weight, &g.weight, &mut m.weight, &mut v.weight), (&mut p.bias, &g.bias, &mut m.bias, &mut v.bias)];
            for (w, g, m, v) in pairs {
                match hp.optimizer {
                    Optimizer::Adam { beta1, beta2, eps } => {
                        let c1 = 1.0 - beta1.powi(self.step);
                        let c2 = 1.0 - beta2.powi(self.step);
                        for i in 0..w.len() {
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                            w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                        }
                    }
                    Optimizer::Sgd { momentum } => {
                        for i in 0..w.len() {
                            m[i] = momentum * m[i] + g[i];
                            w[i] -= lr * m[i];
                        }
                    }
                }
            }
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of `net` over `samples`.
pub fn accuracy(net: &Network, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for s in samples {
        if argmax(&net.forward(&s.input, &s.aux)?) == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

pub fn train(net: &mut Network, train_set: &[Sample], val_set: &[Sample], hp: &Hyperparams) -> Result<TrainingHistory> {
    train_with_observer(net, train_set, val_set, hp, |_, _| Ok(()))
}

/// Trains in place. `observer` runs after every epoch with the epoch index
/// and the current network.
pub fn train_with_observer<F>(
    net: &mut Network,
    train_set: &[Sample],
    val_set: &[Sample],
    hp: &Hyperparams,
    mut observer: F,
) -> Result<TrainingHistory>
where
    F: FnMut(usize, &Network) -> Result<()>,
{
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = net.output_width();
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.label >= classes) {
        return Err(Error::Config(format!("label {} outside {classes} classes", s.label)));
    }
    if hp.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut state = OptimizerState::new(net);
    let mut history = TrainingHistory::default();

    for epoch in 0..hp.epochs {
        if epoch == 0 || hp.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in order.chunks(hp.batch_size) {
            let mut grads = Gradients::zeros_like(net);
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &train_set[i];
                let (loss, logits) = net.loss_and_grad(&s.input, &s.aux, s.label, &mut grads)?;
                batch_loss += loss;
                if argmax(&logits) == s.label {
                    hits += 1;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::DivergenceDetected { epoch, loss: batch_loss });
            }
            grads.scale(1.0 / batch.len() as f64);
            state.apply(net, &grads, hp);
            loss_sum += batch_loss;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_accuracy = if val_set.is_empty() { None } else { Some(accuracy(net, val_set)?) };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy: hits as f64 / train_set.len() as f64,
            val_accuracy,
            permutation: order.clone(),
        });
        observer(epoch, net)?;
    }
    Ok(history)
}
