//! From demonstration samples to a fitted steering model and its report.

use std::collections::BTreeSet;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{run_ids, Sample};
use crate::features::{FeatureError, FeatureMatrix, Normalizer, PermutationTable, FEATURE_VERSION};
use crate::nn::{
    fit, regression_metrics, Architecture, CnnModel, EpochRecord, Example, FitConfig, NnError, RegressionMetrics,
    Workspace,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model uses feature version {found}, this build extracts version {expected}")]
    FeatureVersion { found: u32, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub fit: FitConfig,
    pub architecture: Architecture,
    /// Share of training runs held out (whole runs) to drive the learning-rate schedule.
    pub validation_fraction: f64,
    /// Keep every `frame_stride`-th tick of each run for gradient steps.
    /// Neighbouring ticks at 30 Hz are nearly identical, so this mostly
    /// trades redundant work for wall-clock time.
    pub frame_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            architecture: Architecture::default(),
            validation_fraction: 0.1,
            frame_stride: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let f = &self.fit;
        if f.epochs == 0 || f.batch_size == 0 || !(f.lr0 > 0.0) {
            return Err(TrainError::Config("epochs, batch_size and lr0 must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(TrainError::Config(format!(
                "validation_fraction {} must be in [0, 0.5)",
                self.validation_fraction
            )));
        }
        if self.frame_stride == 0 {
            return Err(TrainError::Config("frame_stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    /// Metrics in normalized target units (rad / target_scale).
    pub train: RegressionMetrics,
    pub test: Option<RegressionMetrics>,
    pub target_scale: f64,
    pub fit_examples: usize,
    pub validation_examples: usize,
    pub validation_runs: Vec<u32>,
    pub frame_stride: usize,
    /// Wall-clock time; left out of the serialized report so reruns compare equal.
    #[serde(skip)]
    pub seconds: f64,
}

fn encode(model: &CnnModel, s: &Sample) -> Example {
    let z = model.normalizer.normalize(&s.features);
    Example {
        input: FeatureMatrix::from_normalized(&z, &model.permutations).flatten(),
        target: s.target / model.target_scale,
    }
}

/// Metrics of `model` on `samples`, in normalized target units.
pub fn evaluate(model: &CnnModel, samples: &[Sample]) -> Result<RegressionMetrics, TrainError> {
    if model.feature_version != FEATURE_VERSION {
        return Err(TrainError::FeatureVersion { found: model.feature_version, expected: FEATURE_VERSION });
    }
    let mut ws = Workspace::with_capacity(model, 16);
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(4096) {
        let inputs: Vec<Example> = chunk.iter().map(|s| encode(model, s)).collect();
        preds.extend(model.predict_many(inputs.iter().map(|e| &e.input[..]), &mut ws));
    }
    let targets: Vec<f64> = samples.iter().map(|s| s.target / model.target_scale).collect();
    Ok(regression_metrics(&preds, &targets)?)
}

/// Fits a fresh model on `train`; `test` (possibly empty) is only scored.
pub fn train_model(
    train: &[Sample],
    test: &[Sample],
    cfg: &TrainConfig,
    target_scale: f64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(CnnModel, FitReport), TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptyData("training set").into());
    }
    if !(target_scale > 0.0) {
        return Err(TrainError::Config(format!("target scale {target_scale} must be positive")));
    }
    let started = std::time::Instant::now();
    let mut ids = run_ids(train);
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.fit.seed ^ 0x7a11_da7e));
    let n_val = if ids.len() >= 2 {
        ((ids.len() as f64 * cfg.validation_fraction).round() as usize).min(ids.len() - 1)
    } else {
        0
    };
    let mut validation_runs = ids[..n_val].to_vec();
    validation_runs.sort_unstable();
    let val_set: BTreeSet<u32> = validation_runs.iter().copied().collect();

    let fit_rows = train.iter().filter(|s| !val_set.contains(&s.run_id)).map(|s| &s.features);
    let mut model = CnnModel::new(&cfg.architecture, cfg.fit.seed)?;
    model.normalizer = Normalizer::fit(fit_rows)?;
    model.permutations = PermutationTable::cyclic();
    model.target_scale = target_scale;

    // Tick index within each run, offset by run id so strided runs do not all
    // keep the same phase of the 30 Hz grid.
    let mut fit_set = Vec::new();
    let mut val = Vec::new();
    let mut tick = 0usize;
    let mut current = None;
    for s in train {
        if current != Some(s.run_id) {
            current = Some(s.run_id);
            tick = s.run_id as usize;
        }
        if tick % cfg.frame_stride == 0 {
            let e = encode(&model, s);
            if val_set.contains(&s.run_id) {
                val.push(e);
            } else {
                fit_set.push(e);
            }
        }
        tick += 1;
    }
    info!(
        "training on {} examples ({} runs held out, {} validation examples), stride {}",
        fit_set.len(),
        validation_runs.len(),
        val.len(),
        cfg.frame_stride
    );
    let history = fit(&mut model, &fit_set, &val, &cfg.fit, &mut on_epoch)?;
    let (fit_examples, validation_examples) = (fit_set.len(), val.len());
    drop((fit_set, val));
    let train_metrics = evaluate(&model, train)?;
    let test_metrics = if test.is_empty() { None } else { Some(evaluate(&model, test)?) };
    let report = FitReport {
        history,
        train: train_metrics,
        test: test_metrics,
        target_scale,
        fit_examples,
        validation_examples,
        validation_runs,
        frame_stride: cfg.frame_stride,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
