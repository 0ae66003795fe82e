//! Conditional layers, the full classifier, and its analytic gradients.

mod io;
mod layer;
mod model;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use layer::{ConditionalGrads, ConditionalLayer, DenseGrads, DenseLayer, OutputLayer};
pub use model::{
    example_dropout_seed, model_forward, model_gradients, parameter_count, Gradients, ModelParams,
    ParameterCount, Predictor,
};

use crate::error::{Error, Result};

/// Frames in one conditional window, `2n + 1`.
pub fn window_width(order: usize) -> Result<usize> {
    if order < 1 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    Ok(2 * order + 1)
}

/// Frames a stack of `layers` conditional layers of order `order` needs to
/// leave `extra` frames for pooling: `2·order·layers + extra`.
pub fn segment_width(order: usize, layers: usize, extra: usize) -> Result<usize> {
    if order < 1 || layers < 1 || extra < 1 {
        return Err(Error::InvalidArgument(format!(
            "order, layer count and extra frames must all be at least 1 (got {order}, {layers}, {extra})"
        )));
    }
    Ok(2 * order * layers + extra)
}

/// A window of consecutive feature frames fed to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// `q × l`, one frame per row.
    pub frames: Array2<f64>,
    pub clip_id: String,
    pub start: usize,
}

pub fn prelu(x: ArrayView1<f64>, slopes: ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != slopes.len() {
        return Err(Error::Shape(format!(
            "prelu input has {} entries but {} slopes",
            x.len(),
            slopes.len()
        )));
    }
    Ok(ndarray::Zip::from(&x)
        .and(&slopes)
        .map_collect(|&v, &a| prelu_scalar(v, a)))
}

#[inline]
pub(crate) fn prelu_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Feature-wise mean over the rows of `frames`.
pub fn global_mean_pool(frames: ArrayView2<f64>) -> Result<Array1<f64>> {
    if frames.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot pool zero frames".into()));
    }
    Ok(frames.sum_axis(Axis(0)) / frames.nrows() as f64)
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|z| (z - max).exp());
    let total = exp.sum();
    exp / total
}
