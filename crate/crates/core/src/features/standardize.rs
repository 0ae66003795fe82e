use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use super::FeatureClip;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-column z-scoring statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Array1<f64>,
    /// Population standard deviations, floored at [`STD_FLOOR`].
    pub stds: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StandardizerFile {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl Standardizer {
    /// JSON document `{"means": [...], "stds": [...]}`.
    pub fn to_json(&self) -> String {
        let file = StandardizerFile {
            means: self.means.to_vec(),
            stds: self.stds.to_vec(),
        };
        serde_json::to_string_pretty(&file).expect("standardizer serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StandardizerFile = serde_json::from_str(text).map_err(|e| Error::Format {
            kind: "standardizer",
            reason: e.to_string(),
        })?;
        if file.means.len() != file.stds.len() {
            return Err(Error::Format {
                kind: "standardizer",
                reason: format!("{} means but {} stds", file.means.len(), file.stds.len()),
            });
        }
        if !file.stds.iter().all(|s| s.is_finite() && *s > 0.0) || !file.means.iter().all(|m| m.is_finite()) {
            return Err(Error::Format {
                kind: "standardizer",
                reason: "statistics must be finite with positive stds".into(),
            });
        }
        Ok(Standardizer {
            means: Array1::from(file.means),
            stds: Array1::from(file.stds),
        })
    }
}

/// Fit on every frame of `training_clips`. Callers pass training-fold clips
/// only; validation and test clips are transformed with the result.
pub fn fit_standardizer(training_clips: &[FeatureClip]) -> Result<Standardizer> {
    let first = training_clips
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot fit a standardizer on zero clips".into()))?;
    let cols = first.frames.ncols();
    if let Some(c) = training_clips.iter().find(|c| c.frames.ncols() != cols) {
        return Err(Error::Shape(format!(
            "clip {} has {} columns, expected {cols}",
            c.clip_id,
            c.frames.ncols()
        )));
    }
    let count: usize = training_clips.iter().map(|c| c.frames.nrows()).sum();
    let mut sums = Array1::<f64>::zeros(cols);
    for clip in training_clips {
        sums += &clip.frames.sum_axis(Axis(0));
    }
    let means = sums / count as f64;
    // Two-pass variance about the mean.
    let mut var = Array1::<f64>::zeros(cols);
    for clip in training_clips {
        for row in clip.frames.rows() {
            ndarray::Zip::from(&mut var)
                .and(&row)
                .and(&means)
                .for_each(|acc, &v, &m| *acc += (v - m) * (v - m));
        }
    }
    let stds = var.mapv(|v| (v / count as f64).sqrt().max(STD_FLOOR));
    Ok(Standardizer { means, stds })
}

pub fn apply_standardizer(clip: &FeatureClip, s: &Standardizer) -> Result<FeatureClip> {
    if clip.frames.ncols() != s.means.len() {
        return Err(Error::Shape(format!(
            "clip {} has {} columns, standardizer has {}",
            clip.clip_id,
            clip.frames.ncols(),
            s.means.len()
        )));
    }
    let mut out = clip.clone();
    for mut row in out.frames.rows_mut() {
        ndarray::Zip::from(&mut row)
            .and(&s.means)
            .and(&s.stds)
            .for_each(|v, &m, &sd| *v = (*v - m) / sd);
    }
    Ok(out)
}
