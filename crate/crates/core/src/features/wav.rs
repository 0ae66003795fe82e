use std::io::Cursor;

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Decode 16-bit PCM WAV bytes to mono samples at 22050 Hz.
///
/// Stereo is averaged, samples are scaled by `1/32768`, and other rates go
/// through [`resample`].
pub fn decode_wav(bytes: &[u8], source: &str) -> Result<AudioClip> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedCodec(format!(
            "{source}: {:?} {}-bit, only 16-bit integer PCM is supported",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::UnsupportedCodec(format!(
            "{source}: {} channels, only mono and stereo are supported",
            spec.channels
        )));
    }
    if spec.sample_rate == 0 {
        return Err(Error::MalformedWav(format!("{source}: sample rate is 0")));
    }
    let raw = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    let channels = spec.channels as usize;
    let samples: Vec<f64> = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let samples = if spec.sample_rate == SAMPLE_RATE {
        samples
    } else {
        resample(&samples, spec.sample_rate, SAMPLE_RATE)
    };
    Ok(AudioClip {
        samples,
        sample_rate: SAMPLE_RATE,
        source: source.to_string(),
    })
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedCodec("unsupported wav encoding".into()),
        hound::Error::IoError(e) => Error::MalformedWav(e.to_string()),
        other => Error::MalformedWav(other.to_string()),
    }
}

const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Band-limited rational resampling with a Kaiser-windowed sinc, one 64-tap
/// filter per output phase.
///
/// The cutoff sits at the lower of the two Nyquist frequencies; each phase is
/// normalised to unit DC gain.
pub fn resample(samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if from_rate == to_rate || samples.is_empty() {
        return samples.to_vec();
    }
    let g = gcd(from_rate, to_rate);
    let up = (to_rate / g) as usize;
    let down = (from_rate / g) as usize;
    let cutoff = (to_rate as f64 / from_rate as f64).min(1.0);
    let half = (TAPS / 2) as f64;
    let norm = bessel_i0(KAISER_BETA);

    // Tap i of a phase reads input sample `base - TAPS/2 + 1 + i`.
    let phases: Vec<[f64; TAPS]> = (0..up)
        .map(|phase| {
            let frac = phase as f64 / up as f64;
            let mut taps = [0.0; TAPS];
            for (i, tap) in taps.iter_mut().enumerate() {
                let distance = frac + half - 1.0 - i as f64;
                let ratio = distance / half;
                let window = if ratio.abs() <= 1.0 {
                    bessel_i0(KAISER_BETA * (1.0 - ratio * ratio).sqrt()) / norm
                } else {
                    0.0
                };
                let x = cutoff * distance;
                let sinc = if x == 0.0 {
                    1.0
                } else {
                    (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
                };
                *tap = cutoff * sinc * window;
            }
            let total: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= total);
            taps
        })
        .collect();

    let out_len = (samples.len() * up).div_ceil(down);
    (0..out_len)
        .map(|j| {
            let pos = j * down;
            let base = (pos / up) as isize;
            let taps = &phases[pos % up];
            let first = base - (TAPS as isize / 2) + 1;
            taps.iter()
                .enumerate()
                .filter_map(|(i, &c)| {
                    let idx = first + i as isize;
                    (idx >= 0 && (idx as usize) < samples.len()).then(|| c * samples[idx as usize])
                })
                .sum()
        })
        .collect()
}

/// 16-bit PCM WAV bytes for `samples` in `[-1, 1]`, one channel per inner
/// slice element. Used to produce fixtures.
pub fn encode_wav(channels: &[Vec<f64>], sample_rate: u32) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory writer");
        let len = channels.iter().map(|c| c.len()).min().unwrap_or(0);
        for t in 0..len {
            for c in channels {
                let v = (c[t] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).expect("in-memory write");
            }
        }
        writer.finalize().expect("in-memory finalize");
    }
    cursor.into_inner()
}
