use ndarray::{s, Array2};
use rustfft::{num_complex::Complex, FftPlanner};

use super::{AudioClip, DELTA_WIDTH, FEATURE_LENGTH, FFT_SIZE, HOP, MEL_BINS, SAMPLE_RATE};
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// The `bins + 2` band edges, equally spaced in mel from 0 Hz to Nyquist.
pub fn mel_band_edges(bins: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (0..bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bins + 1) as f64))
        .collect()
}

/// `bins × (fft_size/2 + 1)` triangular filters with unit peak.
pub fn mel_filterbank(bins: usize, fft_size: usize, sample_rate: u32) -> Array2<f64> {
    let edges = mel_band_edges(bins, sample_rate);
    let freqs = fft_size / 2 + 1;
    Array2::from_shape_fn((bins, freqs), |(m, k)| {
        let f = k as f64 * sample_rate as f64 / fft_size as f64;
        let (lower, center, upper) = (edges[m], edges[m + 1], edges[m + 2]);
        let rise = (f - lower) / (center - lower);
        let fall = (upper - f) / (upper - center);
        rise.min(fall).max(0.0)
    })
}

/// Index into a signal of length `len` extended by mirror reflection about
/// its end samples (no edge repetition).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let j = i.rem_euclid(period);
    if j < len as isize {
        j as usize
    } else {
        (period - j) as usize
    }
}

/// Number of frames produced for `samples` samples: `1 + ⌊samples / 512⌋`.
pub fn frame_count(samples: usize) -> usize {
    1 + samples / HOP
}

/// Centered power spectrogram, `frames × (FFT_SIZE/2 + 1)`, periodic Hann
/// window, reflect padding of `FFT_SIZE/2` on both ends.
pub fn power_spectrogram(samples: &[f64]) -> Result<Array2<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let frames = frame_count(samples.len());
    let window: Vec<f64> = (0..FFT_SIZE)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FFT_SIZE as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
    let pad = (FFT_SIZE / 2) as isize;
    let mut out = Array2::zeros((frames, FFT_SIZE / 2 + 1));
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    for t in 0..frames {
        let start = (t * HOP) as isize - pad;
        for (n, slot) in buf.iter_mut().enumerate() {
            let x = samples[reflect(start + n as isize, samples.len())];
            *slot = Complex::new(x * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in out.row_mut(t).iter_mut().enumerate() {
            *v = buf[k].norm_sqr();
        }
    }
    Ok(out)
}

/// Regression delta over a `DELTA_WIDTH`-frame window, edges replicated.
pub fn delta(features: &Array2<f64>) -> Array2<f64> {
    let half = (DELTA_WIDTH / 2) as isize;
    let denom = 2.0 * (1..=half).map(|k| (k * k) as f64).sum::<f64>();
    let frames = features.nrows() as isize;
    let at = |t: isize| t.clamp(0, frames - 1) as usize;
    Array2::from_shape_fn(features.dim(), |(t, j)| {
        let t = t as isize;
        (1..=half)
            .map(|k| k as f64 * (features[[at(t + k), j]] - features[[at(t - k), j]]))
            .sum::<f64>()
            / denom
    })
}

/// Log power in decibels, `10·log10(max(p, 1e-10))`.
pub fn log_compress(power: &Array2<f64>) -> Array2<f64> {
    power.mapv(|p| 10.0 * p.max(1e-10).log10())
}

/// The 120-column feature matrix of a clip: 60 log-mel bins followed by their
/// 60 deltas.
pub fn log_mel_delta(clip: &AudioClip) -> Result<Array2<f64>> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {SAMPLE_RATE} Hz audio, got {}",
            clip.source, clip.sample_rate
        )));
    }
    let power = power_spectrogram(&clip.samples)?;
    let filters = mel_filterbank(MEL_BINS, FFT_SIZE, SAMPLE_RATE);
    let mel = log_compress(&power.dot(&filters.t()));
    let d = delta(&mel);
    let mut out = Array2::zeros((mel.nrows(), FEATURE_LENGTH));
    out.slice_mut(s![.., ..MEL_BINS]).assign(&mel);
    out.slice_mut(s![.., MEL_BINS..]).assign(&d);
    Ok(out)
}
