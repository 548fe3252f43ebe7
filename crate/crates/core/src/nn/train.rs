//! Mini-batch training loop with reduce-on-plateau learning rate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{CnnModel, Gradients, Workspace};
use super::NnError;

/// One network input with its (normalized) regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    /// Multiplier applied to the learning rate on a plateau.
    pub factor: f64,
    /// Epochs without validation improvement before reducing.
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { factor: 0.5, patience: 3, min_lr: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReduceOnPlateau {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    stale: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr0: f64, cfg: PlateauConfig) -> Self {
        Self { cfg, lr: lr0, best: f64::INFINITY, stale: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch's validation loss and returns the learning rate for
    /// the next epoch.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub plateau: PlateauConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Rescale each batch gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
    /// End with the weights of the epoch with the lowest validation loss.
    pub restore_best: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 18,
            batch_size: 4,
            lr0: 1e-3,
            plateau: PlateauConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            grad_clip: Some(0.1),
            restore_best: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

/// Samples evaluated together when scoring a set.
const EVAL_SLOTS: usize = 16;

/// Mean squared error over `examples`.
pub fn mse(model: &CnnModel, examples: &[Example], ws: &mut Workspace) -> f64 {
    let preds = model.predict_many(examples.iter().map(|e| &e.input[..]), ws);
    let sum: f64 = preds.iter().zip(examples).map(|(p, e)| (p - e.target) * (p - e.target)).sum();
    sum / examples.len() as f64
}

/// Trains `model` in place. Batches are drawn from a seeded per-epoch shuffle
/// and processed strictly in order, so a given seed reproduces bitwise.
pub fn fit(
    model: &mut CnnModel,
    train: &[Example],
    val: &[Example],
    cfg: &FitConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>, NnError> {
    if train.is_empty() {
        return Err(NnError::EmptyData("training set"));
    }
    if cfg.batch_size == 0 || train.len() < cfg.batch_size {
        return Err(NnError::Config(format!(
            "need at least batch_size ({}) training examples, have {}",
            cfg.batch_size,
            train.len()
        )));
    }
    if let Some(e) = train.iter().chain(val).find(|e| e.input.len() != model.input_len()) {
        return Err(NnError::Shape(format!("example input of length {}", e.input.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut ws = Workspace::with_capacity(model, cfg.batch_size.max(EVAL_SLOTS));
    let mut grads = Gradients::zeros_like(model);
    let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(&shapes);
    let mut sched = ReduceOnPlateau::new(cfg.lr0, cfg.plateau);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch: Vec<(&[f64], f64)> = Vec::with_capacity(cfg.batch_size);
    let mut best: Option<(f64, CnnModel)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = sched.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| (&train[i].input[..], train[i].target)));
            let loss = model.batch_gradients(&batch, &mut ws, &mut grads);
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            if let Some(c) = cfg.grad_clip {
                grads.clip_norm(c);
            }
            adam_step(&mut model.param_slices_mut(), &grads.0, &mut adam, lr, &cfg.adam);
        }
        let train_mse = loss_sum / train.len() as f64;
        let val_mse = (!val.is_empty()).then(|| mse(model, val, &mut ws));
        if let Some(v) = val_mse {
            if !v.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch });
            }
            sched.observe(v);
            if cfg.restore_best && best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
            }
        }
        let rec = EpochRecord { epoch, train_mse, val_mse, lr };
        on_epoch(&rec);
        history.push(rec);
        model.epochs_trained += 1;
    }
    if let Some((_, mut m)) = best {
        m.epochs_trained = model.epochs_trained;
        *model = m;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Architecture;

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = ReduceOnPlateau::new(1e-3, PlateauConfig::default());
        assert_eq!(s.observe(1.0), 1e-3);
        assert_eq!(s.observe(1.0), 1e-3);
        assert_eq!(s.observe(1.1), 1e-3);
        assert_eq!(s.observe(1.2), 5e-4);
        assert_eq!(s.observe(0.5), 5e-4);
        let mut s = ReduceOnPlateau::new(2e-5, PlateauConfig::default());
        for _ in 0..10 {
            s.observe(1.0);
        }
        assert_eq!(s.lr(), 1e-5);
    }

    fn tiny() -> Architecture {
        Architecture { conv_filters: vec![2, 3], kernel: (2, 2), dense_widths: vec![4] }
    }

    fn examples(n: usize, f: impl Fn(&[f64]) -> f64) -> Vec<Example> {
        (0..n)
            .map(|k| {
                let input: Vec<f64> = (0..35).map(|i| ((i * 13 + k * 7) as f64 * 0.37).sin()).collect();
                let target = f(&input);
                Example { input, target }
            })
            .collect()
    }

    #[test]
    fn learns_constant_target() {
        let data = examples(16, |_| 0.37);
        let mut m = CnnModel::new(&tiny(), 1).unwrap();
        let cfg = FitConfig { epochs: 3000, lr0: 1e-2, plateau: PlateauConfig { patience: 10_000, ..Default::default() }, ..Default::default() };
        let hist = fit(&mut m, &data, &data, &cfg, |_| {}).unwrap();
        let mut ws = Workspace::new(&m);
        assert!(mse(&m, &data, &mut ws) < 1e-6, "final {:?}", hist.last());
    }

    #[test]
    fn same_seed_same_weights() {
        let data = examples(12, |x| x[0] - 0.5 * x[3]);
        let cfg = FitConfig { epochs: 3, seed: 42, ..Default::default() };
        let mut a = CnnModel::new(&tiny(), 7).unwrap();
        let mut b = CnnModel::new(&tiny(), 7).unwrap();
        fit(&mut a, &data, &data[..4], &cfg, |_| {}).unwrap();
        fit(&mut b, &data, &data[..4], &cfg, |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epochs_trained, 3);
    }

    #[test]
    fn rejects_empty_and_short() {
        let mut m = CnnModel::new(&tiny(), 1).unwrap();
        assert!(matches!(fit(&mut m, &[], &[], &FitConfig::default(), |_| {}), Err(NnError::EmptyData(_))));
        let data = examples(3, |_| 0.0);
        assert!(matches!(fit(&mut m, &data, &[], &FitConfig::default(), |_| {}), Err(NnError::Config(_))));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut data = examples(8, |_| 0.0);
        data[3].target = f64::NAN;
        let mut m = CnnModel::new(&tiny(), 1).unwrap();
        let err = fit(&mut m, &data, &[], &FitConfig::default(), |_| {}).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteLoss { epoch: 1 }));
    }
}
