//! Audio ingestion and spectrogram features.
//!
//! Audio is mono at 22050 Hz. Each clip becomes a `T × 120` matrix: a 60-bin
//! log-mel spectrogram (1024-point FFT, hop 512) and its temporal delta,
//! side by side. Features are z-scored with statistics fitted on training
//! clips only.

mod cache;
mod spectrogram;
mod standardize;
mod wav;

use ndarray::Array2;

pub use cache::{cache_file_name, load_cached, read_feature_clip, save_cached, write_feature_clip, FEATURE_MAGIC};
pub use spectrogram::{
    delta, frame_count, hz_to_mel, log_compress, log_mel_delta, mel_band_edges, mel_filterbank,
    mel_to_hz, power_spectrogram,
};
pub use standardize::{apply_standardizer, fit_standardizer, Standardizer, STD_FLOOR};
pub use wav::{decode_wav, encode_wav, resample};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22050;
pub const FFT_SIZE: usize = 1024;
pub const HOP: usize = 512;
pub const MEL_BINS: usize = 60;
pub const FEATURE_LENGTH: usize = 2 * MEL_BINS;
pub const DELTA_WIDTH: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source: String,
}

/// A clip's feature frames with its dataset bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClip {
    pub clip_id: String,
    pub label: String,
    pub fold: usize,
    /// `T × features`, one frame per row.
    pub frames: Array2<f64>,
}

impl FeatureClip {
    pub fn new(clip_id: impl Into<String>, label: impl Into<String>, fold: usize, frames: Array2<f64>) -> Result<Self> {
        let clip_id = clip_id.into();
        if frames.nrows() == 0 {
            return Err(Error::InvalidArgument(format!("{clip_id}: clip has no frames")));
        }
        if !frames.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{clip_id}: non-finite feature value")));
        }
        Ok(FeatureClip {
            clip_id,
            label: label.into(),
            fold,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }
}

/// Decode WAV bytes and compute the 120-column feature matrix.
pub fn featurize_wav(bytes: &[u8], clip_id: &str, label: &str, fold: usize) -> Result<FeatureClip> {
    let audio = decode_wav(bytes, clip_id)?;
    FeatureClip::new(clip_id, label, fold, log_mel_delta(&audio)?)
}
