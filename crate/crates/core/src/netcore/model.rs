use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layer::{ConditionalGrads, ConditionalLayer, DenseGrads, DenseLayer, OutputLayer};
use super::{global_mean_pool, prelu_scalar, softmax};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::maskgen::build_mask;
use crate::rng::{derive_seed, stream_rng, STREAM_INIT};

/// Every trainable quantity of a masked conditional classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conditional: Vec<ConditionalLayer>,
    pub dense: Vec<DenseLayer>,
    pub output: OutputLayer,
    /// Frames left after the conditional stack, averaged before the dense stage.
    pub extra_frames: usize,
    /// Inverted-dropout rate on the dense hidden activations during training.
    pub dropout: f64,
    pub classes: Vec<String>,
}

impl ModelParams {
    /// Randomly initialised parameters for `config`.
    ///
    /// Weights are uniform in `±sqrt(6 / (fan_in + fan_out))`, where a
    /// conditional layer's fan-in counts every frame of its window. Masked
    /// positions start at zero, biases at zero, PReLU slopes at 0.25.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, STREAM_INIT);
        let d = 2 * config.order + 1;

        let mut conditional = Vec::with_capacity(config.layers.len());
        for (layer, input) in config.layers.iter().zip(config.layer_inputs()) {
            let e = layer.hidden;
            let limit = (6.0 / ((d * input + e) as f64)).sqrt();
            let mask = layer
                .mask_spec()
                .map(|spec| build_mask(input, e, spec))
                .transpose()?;
            let weights = (0..d)
                .map(|_| {
                    let mut w = uniform((input, e), limit, &mut rng);
                    if let Some(mask) = &mask {
                        w.zip_mut_with(mask.entries(), |v, &keep| {
                            if keep == 0 {
                                *v = 0.0;
                            }
                        });
                    }
                    w
                })
                .collect();
            conditional.push(ConditionalLayer::new(
                config.order,
                weights,
                Array1::zeros(e),
                Array1::from_elem(e, 0.25),
                mask,
            )?);
        }

        let mut width = config.layers.last().map(|l| l.hidden).unwrap_or(config.feature_length);
        let mut dense = Vec::with_capacity(config.dense.len());
        for &out in &config.dense {
            let limit = (6.0 / ((width + out) as f64)).sqrt();
            dense.push(DenseLayer {
                weights: uniform((width, out), limit, &mut rng),
                bias: Array1::zeros(out),
                slopes: Array1::from_elem(out, 0.25),
            });
            width = out;
        }
        let classes = config.num_classes();
        let limit = (6.0 / ((width + classes) as f64)).sqrt();
        let output = OutputLayer {
            weights: uniform((width, classes), limit, &mut rng),
            bias: Array1::zeros(classes),
        };

        let params = ModelParams {
            conditional,
            dense,
            output,
            extra_frames: config.extra_frames,
            dropout: config.dropout,
            classes: config.classes.clone(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn num_classes(&self) -> usize {
        self.output.weights.ncols()
    }

    pub fn feature_length(&self) -> usize {
        self.conditional[0].input_width()
    }

    pub fn segment_width(&self) -> usize {
        self.conditional.iter().map(|l| 2 * l.order()).sum::<usize>() + self.extra_frames
    }

    /// Checks that adjacent layer widths chain and the output matches the
    /// class list.
    pub fn validate(&self) -> Result<()> {
        if self.conditional.is_empty() {
            return Err(Error::Shape("model has no conditional layers".into()));
        }
        if self.extra_frames < 1 {
            return Err(Error::InvalidArgument("extra_frames must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} must be in [0, 1)",
                self.dropout
            )));
        }
        let mut width = self.conditional[0].input_width();
        for (i, layer) in self.conditional.iter().enumerate() {
            if layer.input_width() != width {
                return Err(Error::Shape(format!(
                    "conditional layer {i} expects {} inputs, previous layer gives {width}",
                    layer.input_width()
                )));
            }
            width = layer.hidden();
        }
        for (i, layer) in self.dense.iter().enumerate() {
            let out = layer.output_width();
            if layer.input_width() != width || layer.bias.len() != out || layer.slopes.len() != out {
                return Err(Error::Shape(format!(
                    "dense layer {i} is {:?} with {} biases and {} slopes after width {width}",
                    layer.weights.dim(),
                    layer.bias.len(),
                    layer.slopes.len()
                )));
            }
            width = out;
        }
        let (rows, cols) = self.output.weights.dim();
        if rows != width || self.output.bias.len() != cols {
            return Err(Error::Shape(format!(
                "output layer is {rows}x{cols} with {} biases after width {width}",
                self.output.bias.len()
            )));
        }
        if cols != self.classes.len() {
            return Err(Error::Shape(format!(
                "output width {cols} does not match {} class labels",
                self.classes.len()
            )));
        }
        Ok(())
    }

    /// Parameter tensors in canonical order: per conditional layer its
    /// weight matrices for `u = -n..=n`, bias and slopes; per dense layer
    /// weights, bias and slopes; then output weights and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.conditional {
            out.extend(layer.weights().iter().map(slice2));
            out.push(slice1(layer.bias()));
            out.push(slice1(layer.slopes()));
        }
        for layer in &self.dense {
            out.push(slice2(&layer.weights));
            out.push(slice1(&layer.bias));
            out.push(slice1(&layer.slopes));
        }
        out.push(slice2(&self.output.weights));
        out.push(slice1(&self.output.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.conditional {
            let (weights, bias, slopes) = layer.parts_mut();
            out.extend(weights.iter_mut().map(slice2_mut));
            out.push(slice1_mut(bias));
            out.push(slice1_mut(slopes));
        }
        for layer in &mut self.dense {
            out.push(slice2_mut(&mut layer.weights));
            out.push(slice1_mut(&mut layer.bias));
            out.push(slice1_mut(&mut layer.slopes));
        }
        out.push(slice2_mut(&mut self.output.weights));
        out.push(slice1_mut(&mut self.output.bias));
        out
    }

    /// Shapes of [`ModelParams::tensors`], matrices as `[rows, cols]`.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for layer in &self.conditional {
            out.extend(layer.weights().iter().map(|w| w.shape().to_vec()));
            out.push(vec![layer.hidden()]);
            out.push(vec![layer.hidden()]);
        }
        for layer in &self.dense {
            out.push(layer.weights.shape().to_vec());
            out.push(vec![layer.output_width()]);
            out.push(vec![layer.output_width()]);
        }
        out.push(self.output.weights.shape().to_vec());
        out.push(vec![self.num_classes()]);
        out
    }

    /// Zero-valued gradient structure mirroring these parameters.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            conditional: self.conditional.iter().map(ConditionalGrads::zeros_like).collect(),
            dense: self
                .dense
                .iter()
                .map(|l| DenseGrads {
                    weights: Array2::zeros(l.weights.dim()),
                    bias: Array1::zeros(l.output_width()),
                    slopes: Array1::zeros(l.output_width()),
                })
                .collect(),
            output: DenseGrads {
                weights: Array2::zeros(self.output.weights.dim()),
                bias: Array1::zeros(self.num_classes()),
                slopes: Array1::zeros(0),
            },
        }
    }

    /// A forward evaluator with masks pre-applied, for scoring many segments.
    pub fn predictor(&self) -> Predictor<'_> {
        Predictor {
            params: self,
            effective: self.conditional.iter().map(|l| l.effective_weights().into_owned()).collect(),
        }
    }
}

fn uniform(shape: (usize, usize), limit: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-limit..limit))
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// Gradients mirroring [`ModelParams`]. The output layer has no slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conditional: Vec<ConditionalGrads>,
    pub dense: Vec<DenseGrads>,
    pub output: DenseGrads,
}

impl Gradients {
    /// Tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.conditional {
            out.extend(layer.weights.iter().map(slice2));
            out.push(slice1(&layer.bias));
            out.push(slice1(&layer.slopes));
        }
        for layer in &self.dense {
            out.push(slice2(&layer.weights));
            out.push(slice1(&layer.bias));
            out.push(slice1(&layer.slopes));
        }
        out.push(slice2(&self.output.weights));
        out.push(slice1(&self.output.bias));
        out
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.conditional.iter_mut().zip(&other.conditional) {
            for (wa, wb) in a.weights.iter_mut().zip(&b.weights) {
                *wa += wb;
            }
            a.bias += &b.bias;
            a.slopes += &b.slopes;
        }
        for (a, b) in self.dense.iter_mut().zip(&other.dense).chain([(&mut self.output, &other.output)]) {
            a.weights += &b.weights;
            a.bias += &b.bias;
            a.slopes += &b.slopes;
        }
    }

    fn scale(&mut self, factor: f64) {
        for g in &mut self.conditional {
            for w in &mut g.weights {
                *w *= factor;
            }
            g.bias *= factor;
            g.slopes *= factor;
        }
        for g in self.dense.iter_mut().chain([&mut self.output]) {
            g.weights *= factor;
            g.bias *= factor;
            g.slopes *= factor;
        }
    }
}

/// Forward evaluator holding the masked weights of every conditional layer.
pub struct Predictor<'a> {
    params: &'a ModelParams,
    effective: Vec<Vec<Array2<f64>>>,
}

/// Dense layer input, pre-activation and dropout keep-scale.
type DenseTrace = (Array1<f64>, Array1<f64>, Option<Array1<f64>>);

/// Intermediate values of one forward pass kept for backpropagation.
struct Trace {
    /// Input to each conditional layer, then the final conditional output.
    frames: Vec<Array2<f64>>,
    /// Pre-activations of each conditional layer.
    pre: Vec<Array2<f64>>,
    pooled: Array1<f64>,
    dense: Vec<DenseTrace>,
    /// Input to the output layer.
    head: Array1<f64>,
    probs: Array1<f64>,
}

impl Predictor<'_> {
    pub fn params(&self) -> &ModelParams {
        self.params
    }

    /// Class probabilities for one `q × l` segment. Dropout is applied only
    /// when `train_mode` is set, with masks drawn from `dropout_seed`.
    pub fn forward(
        &self,
        frames: ArrayView2<f64>,
        train_mode: bool,
        dropout_seed: u64,
    ) -> Result<Array1<f64>> {
        Ok(self.trace(frames, train_mode, dropout_seed)?.probs)
    }

    fn trace(&self, frames: ArrayView2<f64>, train_mode: bool, dropout_seed: u64) -> Result<Trace> {
        let params = self.params;
        let q = params.segment_width();
        if frames.nrows() != q {
            return Err(Error::Shape(format!(
                "segment has {} frames, model expects {q}",
                frames.nrows()
            )));
        }
        if frames.ncols() != params.feature_length() {
            return Err(Error::Shape(format!(
                "segment frames have {} features, model expects {}",
                frames.ncols(),
                params.feature_length()
            )));
        }

        let mut stack = vec![frames.to_owned()];
        let mut pres = Vec::with_capacity(params.conditional.len());
        for (layer, effective) in params.conditional.iter().zip(&self.effective) {
            let pre = layer.pre_activation(stack.last().unwrap().view(), effective)?;
            let mut act = pre.clone();
            act.zip_mut_with(&layer.slopes().broadcast(pre.dim()).unwrap(), |v, &a| {
                *v = prelu_scalar(*v, a)
            });
            pres.push(pre);
            stack.push(act);
        }
        let pooled = global_mean_pool(stack.last().unwrap().view())?;

        let mut rng = (train_mode && params.dropout > 0.0).then(|| {
            <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(dropout_seed)
        });
        let keep_scale = 1.0 / (1.0 - params.dropout);
        let mut x = pooled.clone();
        let mut dense = Vec::with_capacity(params.dense.len());
        for layer in &params.dense {
            let pre = layer.pre_activation(x.view());
            let mut h = ndarray::Zip::from(&pre)
                .and(&layer.slopes)
                .map_collect(|&v, &a| prelu_scalar(v, a));
            let keep = rng.as_mut().map(|rng| {
                Array1::from_shape_simple_fn(h.len(), || {
                    if rng.random::<f64>() < params.dropout {
                        0.0
                    } else {
                        keep_scale
                    }
                })
            });
            if let Some(keep) = &keep {
                h *= keep;
            }
            dense.push((x, pre, keep));
            x = h;
        }
        let probs = softmax(params.output.logits(x.view()).view());
        Ok(Trace {
            frames: stack,
            pre: pres,
            pooled,
            dense,
            head: x,
            probs,
        })
    }

    /// Accumulate gradients of `-ln p[label]` for one example into `grads`.
    /// Returns the example loss.
    fn accumulate(
        &self,
        frames: ArrayView2<f64>,
        label: usize,
        dropout_seed: u64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let params = self.params;
        let trace = self.trace(frames, true, dropout_seed)?;
        let loss = -trace.probs[label].max(1e-12).ln();

        let mut d_logits = trace.probs.clone();
        d_logits[label] -= 1.0;
        grads.output.bias += &d_logits;
        outer_add(&mut grads.output.weights, &trace.head, &d_logits);
        let mut d_x = params.output.weights.dot(&d_logits);

        for ((layer, g), (input, pre, keep)) in params
            .dense
            .iter()
            .zip(grads.dense.iter_mut())
            .zip(trace.dense.iter())
            .rev()
        {
            if let Some(keep) = keep {
                d_x *= keep;
            }
            let mut d_pre = Array1::zeros(pre.len());
            for j in 0..pre.len() {
                if pre[j] > 0.0 {
                    d_pre[j] = d_x[j];
                } else {
                    d_pre[j] = d_x[j] * layer.slopes[j];
                    g.slopes[j] += d_x[j] * pre[j];
                }
            }
            g.bias += &d_pre;
            outer_add(&mut g.weights, input, &d_pre);
            d_x = layer.weights.dot(&d_pre);
        }
        debug_assert_eq!(d_x.len(), trace.pooled.len());

        let k = params.extra_frames;
        let mut d_frames = d_x.insert_axis(Axis(0)).broadcast((k, trace.pooled.len())).unwrap().to_owned();
        d_frames /= k as f64;
        for (i, (layer, g)) in params.conditional.iter().zip(grads.conditional.iter_mut()).enumerate().rev() {
            let next = layer.backward(
                trace.frames[i].view(),
                trace.pre[i].view(),
                d_frames.view(),
                &self.effective[i],
                g,
                i > 0,
            );
            match next {
                Some(d) => d_frames = d,
                None => break,
            }
        }
        Ok(loss)
    }
}

fn outer_add(target: &mut Array2<f64>, x: &Array1<f64>, y: &Array1<f64>) {
    for (mut row, &xi) in target.rows_mut().into_iter().zip(x) {
        if xi != 0.0 {
            row.scaled_add(xi, y);
        }
    }
}

/// Class probabilities for one segment.
pub fn model_forward(
    frames: ArrayView2<f64>,
    params: &ModelParams,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<Array1<f64>> {
    params.predictor().forward(frames, train_mode, dropout_seed)
}

/// Dropout seed used for example `index` of a batch evaluated with `seed`.
pub fn example_dropout_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Examples per gradient accumulator; partial sums are merged in chunk order,
/// so the result does not depend on the thread count.
const GRADIENT_CHUNK: usize = 32;

/// Analytic gradients of the mean categorical cross-entropy over `batch`,
/// with dropout active. Example `i` uses dropout seed
/// [`example_dropout_seed`]`(dropout_seed, i)`.
pub fn model_gradients(
    batch: &[(ArrayView2<f64>, usize)],
    params: &ModelParams,
    dropout_seed: u64,
) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient batch is empty".into()));
    }
    let classes = params.num_classes();
    if let Some(&(_, label)) = batch.iter().find(|(_, label)| *label >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let predictor = params.predictor();
    let partials: Vec<Result<(Gradients, f64)>> = batch
        .par_chunks(GRADIENT_CHUNK)
        .enumerate()
        .map(|(chunk, examples)| {
            let mut grads = params.zero_gradients();
            let mut loss = 0.0;
            for (offset, (frames, label)) in examples.iter().enumerate() {
                let index = chunk * GRADIENT_CHUNK + offset;
                loss += predictor.accumulate(
                    frames.view(),
                    *label,
                    example_dropout_seed(dropout_seed, index),
                    &mut grads,
                )?;
            }
            Ok((grads, loss))
        })
        .collect();

    let mut iter = partials.into_iter();
    let (mut grads, mut loss) = iter.next().expect("nonempty batch")?;
    for part in iter {
        let (g, l) = part?;
        grads.add_assign(&g);
        loss += l;
    }
    for (layer, g) in params.conditional.iter().zip(grads.conditional.iter_mut()) {
        layer.mask_gradients(g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((grads, loss / n))
}

/// Trainable scalar totals, with and without the PReLU slopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterCount {
    pub without_slopes: usize,
    pub with_slopes: usize,
}

pub fn parameter_count(config: &ModelConfig) -> ParameterCount {
    let d = 2 * config.order + 1;
    let mut weights = 0;
    let mut slopes = 0;
    for (layer, input) in config.layers.iter().zip(config.layer_inputs()) {
        weights += d * input * layer.hidden + layer.hidden;
        slopes += layer.hidden;
    }
    let mut width = config.layers.last().map(|l| l.hidden).unwrap_or(config.feature_length);
    for &out in &config.dense {
        weights += width * out + out;
        slopes += out;
        width = out;
    }
    weights += width * config.num_classes() + config.num_classes();
    ParameterCount {
        without_slopes: weights,
        with_slopes: weights + slopes,
    }
}
