//! Cross-entropy, ADAM, and the training loop.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, OptimizerConfig};
use crate::datasets::{padded_frames, predict_clip, segment_starts};
use crate::error::{Error, Result};
use crate::features::FeatureClip;
use crate::netcore::{model_gradients, Gradients, ModelParams};
use crate::rng::{derive_seed, stream_rng, STREAM_DROPOUT, STREAM_SHUFFLE};

/// `-ln(max(p[label], 1e-12))`.
pub fn cross_entropy(probabilities: ArrayView1<f64>, label: usize) -> Result<f64> {
    let p = probabilities
        .get(label)
        .ok_or(Error::LabelOutOfRange {
            label,
            classes: probabilities.len(),
        })?;
    Ok(-p.max(1e-12).ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper::from(&OptimizerConfig::default())
    }
}

impl From<&OptimizerConfig> for AdamHyper {
    fn from(c: &OptimizerConfig) -> Self {
        AdamHyper {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

/// Bias-corrected first and second moment estimates, one buffer per
/// parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moments: Vec<Vec<f64>>,
    pub second_moments: Vec<Vec<f64>>,
    pub step_count: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    /// Zero moments for tensors of the given lengths.
    pub fn new(lengths: impl IntoIterator<Item = usize>, hyper: AdamHyper) -> Self {
        let lengths: Vec<usize> = lengths.into_iter().collect();
        AdamState {
            first_moments: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            second_moments: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
            hyper,
        }
    }

    pub fn for_params(params: &ModelParams, hyper: AdamHyper) -> Self {
        AdamState::new(params.tensors().iter().map(|t| t.len()), hyper)
    }

    /// One ADAM update of `params` along `grads`. Nothing is modified when an
    /// error is returned.
    pub fn update(&mut self, mut params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moments.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors, {} gradient tensors, {} moment buffers",
                params.len(),
                grads.len(),
                self.first_moments.len()
            )));
        }
        for (i, ((p, g), m)) in params.iter().zip(&grads).zip(&self.first_moments).enumerate() {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape(format!(
                    "tensor {i}: {} parameters, {} gradients, {} moments",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
        }
        if let Some(tensor) = grads.iter().position(|g| !g.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteGradient { tensor });
        }

        let AdamHyper {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.first_moments)
            .zip(&mut self.second_moments)
        {
            for (((theta, &grad), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * grad;
                *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.update(params.tensors_mut(), grads.tensors())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PatienceExhausted,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Parameters from the epoch with the highest validation accuracy,
    /// earliest on ties.
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl TrainRun {
    /// `epoch,train_loss,val_accuracy` with a header line.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_accuracy\n");
        for r in &self.history {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_accuracy));
        }
        out
    }
}

/// Training and validation clips, already standardized.
pub struct TrainData<'a> {
    pub train: &'a [FeatureClip],
    pub validation: &'a [FeatureClip],
}

/// Class index of each clip's label in `classes`.
pub(crate) fn class_indices(clips: &[FeatureClip], classes: &[String]) -> Result<Vec<usize>> {
    clips
        .iter()
        .map(|c| {
            classes.iter().position(|k| *k == c.label).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "clip {} has label {:?} which is not a configured class",
                    c.clip_id, c.label
                ))
            })
        })
        .collect()
}

/// Clip-level accuracy of `params` on `clips` using probability voting.
pub fn clip_accuracy(params: &ModelParams, clips: &[FeatureClip], hop: usize) -> Result<f64> {
    let labels = class_indices(clips, &params.classes)?;
    let predictor = params.predictor();
    let mut correct = 0usize;
    for (clip, &label) in clips.iter().zip(&labels) {
        let (predicted, _) = predict_clip(&predictor, clip.frames.view(), hop)?;
        correct += usize::from(predicted == label);
    }
    Ok(correct as f64 / clips.len() as f64)
}

/// Train with [`train_with_progress`] and no progress callback.
pub fn train(config: &ModelConfig, data: TrainData<'_>, seed: u64) -> Result<TrainRun> {
    train_with_progress(config, data, seed, |_| {})
}

/// Mini-batch ADAM over every training segment, validated by clip voting
/// after each epoch, with early stopping.
///
/// Initialization, shuffling and dropout each draw from a stream derived
/// from `seed`, so equal inputs give bit-identical runs.
pub fn train_with_progress(
    config: &ModelConfig,
    data: TrainData<'_>,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainRun> {
    config.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs at least one training and one validation clip".into(),
        ));
    }
    for clip in data.train.iter().chain(data.validation) {
        if clip.frames.ncols() != config.feature_length {
            return Err(Error::Shape(format!(
                "clip {} has {} features per frame, config expects {}",
                clip.clip_id,
                clip.frames.ncols(),
                config.feature_length
            )));
        }
    }
    let labels = class_indices(data.train, &config.classes)?;
    class_indices(data.validation, &config.classes)?;

    let init_config = ModelConfig {
        seed,
        ..config.clone()
    };
    let mut params = ModelParams::init(&init_config)?;
    let mut adam = AdamState::for_params(&params, AdamHyper::from(&config.optimizer));

    let q = config.segment_width();
    let padded: Vec<Array2<f64>> = data
        .train
        .iter()
        .map(|c| padded_frames(c.frames.view(), q).into_owned())
        .collect();
    let mut segments: Vec<(usize, usize)> = padded
        .iter()
        .enumerate()
        .flat_map(|(ci, frames)| {
            segment_starts(frames.nrows(), q, config.training.train_hop).map(move |s| (ci, s))
        })
        .collect();

    let mut shuffle_rng = stream_rng(seed, STREAM_SHUFFLE);
    let dropout_seed = derive_seed(seed, STREAM_DROPOUT);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut batch_counter = 0u64;

    for epoch in 1..=config.training.max_epochs {
        segments.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in segments.chunks(config.training.batch_size) {
            let batch: Vec<(ArrayView2<f64>, usize)> = chunk
                .iter()
                .map(|&(ci, start)| {
                    (
                        padded[ci].slice(ndarray::s![start..start + q, ..]),
                        labels[ci],
                    )
                })
                .collect();
            let (grads, loss) =
                model_gradients(&batch, &params, derive_seed(dropout_seed, batch_counter))?;
            batch_counter += 1;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            adam_step(&mut params, &grads, &mut adam)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / segments.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let val_accuracy = clip_accuracy(&params, data.validation, config.training.inference_hop)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
        };
        on_epoch(&record);
        history.push(record);

        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.training.patience {
            stop_reason = StopReason::PatienceExhausted;
            break;
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainRun {
        best_params,
        best_epoch,
        history,
        stop_reason,
    })
}
