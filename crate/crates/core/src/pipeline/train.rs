//! Imitation training with ADAM, and evaluation metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgat::{backward, check_finite, cross_entropy, forward, ModelParams, Sample, CLASSES};
use crate::scenario::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight each class by n / (2 n_c) in the loss. Off by default: it
    /// moves weakly informed models towards braking, which inflates AD.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            seed: 0,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("ADAM needs beta1, beta2 in [0,1) and epsilon > 0".into()));
        }
        Ok(())
    }
}

pub fn class_weights(samples: &[Sample], enabled: bool) -> [f64; CLASSES] {
    if !enabled {
        return [1.0; CLASSES];
    }
    let n = samples.len() as f64;
    let mut counts = [0usize; CLASSES];
    for s in samples {
        counts[s.label.class()] += 1;
    }
    counts.map(|c| if c == 0 { 1.0 } else { n / (CLASSES as f64 * c as f64) })
}

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Weighted mean loss and summed gradient of a batch. Per-sample work runs
/// in parallel; the reduction is sequential so results do not depend on
/// the thread count.
fn batch_gradient(batch: &[&Sample], p: &ModelParams, w: [f64; CLASSES]) -> (f64, Vec<f64>) {
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| {
            let mut g = vec![0.0; p.len()];
            let tr = forward(&s.graph, p);
            let wy = w[s.label.class()];
            let loss = cross_entropy(&tr, s.label, wy) * scale;
            backward(&s.graph, p, &tr, s.label, wy * scale, &mut g);
            (loss, g)
        })
        .collect();
    let mut grad = vec![0.0; p.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (loss, grad)
}

/// Weighted mean cross-entropy over `samples`.
pub fn dataset_loss(samples: &[Sample], p: &ModelParams, w: [f64; CLASSES]) -> f64 {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| cross_entropy(&forward(&s.graph, p), s.label, w[s.label.class()]))
        .collect();
    losses.iter().sum::<f64>() / samples.len().max(1) as f64
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Loss of the initial parameters over the whole training set.
    pub initial_loss: f64,
    /// Mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn train(samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let mut params = ModelParams::init(cfg.seed);
    let w = class_weights(samples, cfg.class_weighting);
    let initial_loss = dataset_loss(samples, &params, w);
    let mut adam = Adam::new(params.len(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grad) = batch_gradient(&batch, &params, w);
            check_finite(loss, &grad).map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { epoch, detail },
                other => other,
            })?;
            total += loss * chunk.len() as f64;
            adam.step(&mut params.data, &grad);
        }
        let mean = total / samples.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        params,
        initial_loss,
        epoch_losses,
    })
}

/// Confusion counts with brake as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_brake: usize,
    pub missed_brake: usize,
    pub false_brake: usize,
    pub true_go: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: Action, predicted: Action) {
        match (truth, predicted) {
            (Action::Brake, Action::Brake) => self.true_brake += 1,
            (Action::Brake, Action::Go) => self.missed_brake += 1,
            (Action::Go, Action::Brake) => self.false_brake += 1,
            (Action::Go, Action::Go) => self.true_go += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_brake + self.missed_brake + self.false_brake + self.true_go
    }

    /// Recall on brake instances; 0 when there are none.
    pub fn ad(&self) -> f64 {
        let pos = self.true_brake + self.missed_brake;
        if pos == 0 {
            0.0
        } else {
            self.true_brake as f64 / pos as f64
        }
    }

    /// Fraction of predictions equal to the expert's action.
    pub fn ear(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.true_brake + self.true_go) as f64 / self.total() as f64
        }
    }

    /// Accuracy of always predicting the more frequent class.
    pub fn majority_rate(&self) -> f64 {
        let brake = self.true_brake + self.missed_brake;
        let go = self.total() - brake;
        brake.max(go) as f64 / self.total().max(1) as f64
    }
}

pub fn confusion_of(truth: &[Action], predicted: &[Action]) -> Confusion {
    let mut c = Confusion::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        c.record(t, p);
    }
    c
}

pub fn predict_all(samples: &[Sample], p: &ModelParams) -> Vec<Action> {
    samples
        .par_iter()
        .map(|s| forward(&s.graph, p).prediction.action())
        .collect()
}

pub fn evaluate(samples: &[Sample], p: &ModelParams) -> Confusion {
    let pred = predict_all(samples, p);
    let truth: Vec<Action> = samples.iter().map(|s| s.label).collect();
    confusion_of(&truth, &pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_oracles() {
        let truth = [Action::Brake, Action::Go, Action::Go, Action::Brake, Action::Go];
        let all_brake = confusion_of(&truth, &[Action::Brake; 5]);
        assert_eq!(all_brake.ad(), 1.0);
        assert_eq!(all_brake.ear(), 0.4);
        let perfect = confusion_of(&truth, &truth);
        assert_eq!((perfect.ad(), perfect.ear()), (1.0, 1.0));
        assert_eq!(perfect.majority_rate(), 0.6);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(2, &cfg);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[0.5, -3.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn class_weights_balance() {
        use crate::hgat::GraphInput;
        use crate::scenario::Command;
        let g = GraphInput::from_parts(vec![[0.0, 0.0, 0.0, 1.0]], 0, [&[], &[]], Command::LaneFollow);
        let s = |label| Sample { graph: g.clone(), label };
        let samples = vec![s(Action::Brake), s(Action::Go), s(Action::Go), s(Action::Go)];
        assert_eq!(class_weights(&samples, true), [2.0, 4.0 / 6.0]);
        assert_eq!(class_weights(&samples, false), [1.0, 1.0]);
    }
}
