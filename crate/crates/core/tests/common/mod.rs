#![allow(dead_code)]

use mclnn::config::{LayerConfig, ModelConfig};
use mclnn::netcore::{example_dropout_seed, model_forward, ModelParams};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line evaluation of the conditional stack, mean pooling, dense
/// PReLU layers and softmax, written with explicit index loops. Inference
/// mode only.
pub fn naive_forward(frames: &Array2<f64>, params: &ModelParams) -> Vec<f64> {
    let mut x: Vec<Vec<f64>> = frames.rows().into_iter().map(|r| r.to_vec()).collect();
    for layer in &params.conditional {
        let n = layer.order();
        let (l, e) = (layer.input_width(), layer.hidden());
        let mut out = Vec::new();
        for t in n..x.len() - n {
            let mut y = vec![0.0; e];
            for j in 0..e {
                let mut acc = layer.bias()[j];
                for (ui, w) in layer.weights().iter().enumerate() {
                    let frame = &x[t + ui - n];
                    for i in 0..l {
                        let keep = layer.mask().map_or(1.0, |m| if m.get(i, j) { 1.0 } else { 0.0 });
                        acc += frame[i] * w[[i, j]] * keep;
                    }
                }
                y[j] = if acc > 0.0 { acc } else { layer.slopes()[j] * acc };
            }
            out.push(y);
        }
        x = out;
    }
    let width = x[0].len();
    let mut h: Vec<f64> = (0..width)
        .map(|j| x.iter().map(|row| row[j]).sum::<f64>() / x.len() as f64)
        .collect();
    for layer in &params.dense {
        let mut next = Vec::new();
        for j in 0..layer.output_width() {
            let mut acc = layer.bias[j];
            for (i, hi) in h.iter().enumerate() {
                acc += hi * layer.weights[[i, j]];
            }
            next.push(if acc > 0.0 { acc } else { layer.slopes[j] * acc });
        }
        h = next;
    }
    let mut logits = Vec::new();
    for j in 0..params.num_classes() {
        let mut acc = params.output.bias[j];
        for (i, hi) in h.iter().enumerate() {
            acc += hi * params.output.weights[[i, j]];
        }
        logits.push(acc);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|v| v / total).collect()
}

/// Mean cross-entropy over a batch, each example using the same dropout
/// seed the analytic gradient uses.
pub fn batch_loss(batch: &[(Array2<f64>, usize)], params: &ModelParams, seed: u64) -> f64 {
    batch
        .iter()
        .enumerate()
        .map(|(i, (frames, label))| {
            let p = model_forward(frames.view(), params, true, example_dropout_seed(seed, i)).unwrap();
            -p[*label].max(1e-12).ln()
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Central finite differences of [`batch_loss`] for every scalar of every
/// parameter tensor, in canonical tensor order.
pub fn finite_difference_gradients(
    batch: &[(Array2<f64>, usize)],
    params: &ModelParams,
    seed: u64,
    step: f64,
) -> Vec<Vec<f64>> {
    let mut probe = params.clone();
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut out = Vec::new();
    for (ti, &len) in shapes.iter().enumerate() {
        let mut grads = Vec::with_capacity(len);
        for k in 0..len {
            let original = probe.tensors()[ti][k];
            probe.tensors_mut()[ti][k] = original + step;
            let plus = batch_loss(batch, &probe, seed);
            probe.tensors_mut()[ti][k] = original - step;
            let minus = batch_loss(batch, &probe, seed);
            probe.tensors_mut()[ti][k] = original;
            grads.push((plus - minus) / (2.0 * step));
        }
        out.push(grads);
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Denominator floor for relative gradient error, so entries whose true
/// value is at the level of finite-difference noise are judged absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub struct RandomCase {
    pub params: ModelParams,
    pub batch: Vec<(Array2<f64>, usize)>,
}

/// A random small model with perturbed biases and slopes, random values at
/// masked weight positions, and a random batch.
pub fn random_case(seed: u64, masked: bool, dropout: f64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = rng.random_range(3..=8);
    let n = rng.random_range(1..=2);
    let m = rng.random_range(1..=2);
    let k = rng.random_range(1..=3);
    let mut layers = Vec::new();
    let mut input = l;
    for _ in 0..m {
        let e = rng.random_range(2..=6);
        if masked {
            let bw = rng.random_range(1..=input.min(4));
            let ov = rng.random_range(-(input as i64)..bw as i64);
            layers.push(LayerConfig::masked(e, bw, ov));
        } else {
            layers.push(LayerConfig::unmasked(e));
        }
        input = e;
    }
    let classes = rng.random_range(2..=4);
    let dense = (0..rng.random_range(0..=2)).map(|_| rng.random_range(2..=5)).collect();
    let config = ModelConfig {
        feature_length: l,
        order: n,
        layers,
        extra_frames: k,
        dense,
        classes: (0..classes).map(|c| format!("c{c}")).collect(),
        dropout,
        seed,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::init(&config).unwrap();
    for tensor in params.tensors_mut() {
        for v in tensor.iter_mut() {
            // Every scalar gets a fresh random value, including masked
            // weights and PReLU slopes.
            *v = rng.random_range(-0.8..0.8);
        }
    }
    let q = params.segment_width();
    let batch = (0..rng.random_range(1..=4))
        .map(|_| {
            let frames = Array2::from_shape_simple_fn((q, l), || rng.random_range(-1.5..1.5));
            (frames, rng.random_range(0..classes))
        })
        .collect();
    RandomCase { params, batch }
}

pub fn random_frames(rng: &mut ChaCha8Rng, q: usize, l: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((q, l), || rng.random_range(-2.0..2.0))
}

pub fn to_vec(a: &Array1<f64>) -> Vec<f64> {
    a.to_vec()
}

/// Mask entry test by direct search: position (row, col) is set when some
/// band offset `a < bw` and band number `g ≤ ⌈l·e / step⌉` generate its
/// column-major linear index.
pub fn naive_mask(l: usize, e: usize, bw: usize, ov: i64) -> Vec<Vec<u8>> {
    let step = (l as i64 + bw as i64 - ov) as usize;
    let g_max = (l * e).div_ceil(step);
    let mut out = vec![vec![0u8; e]; l];
    for (row, line) in out.iter_mut().enumerate() {
        for (col, cell) in line.iter_mut().enumerate() {
            let lx = col * l + row;
            let hit = (1..=g_max).any(|g| (0..bw).any(|a| a + (g - 1) * step == lx));
            *cell = u8::from(hit);
        }
    }
    out
}
