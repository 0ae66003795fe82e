use std::borrow::Cow;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};

use super::prelu_scalar;
use crate::error::{Error, Result};
use crate::maskgen::BinaryMask;

/// One conditional layer: `2n + 1` weight matrices of shape `l_in × e`, a
/// bias, per-neuron PReLU slopes, and an optional band mask shared by every
/// weight matrix.
///
/// Output frame `t` is `prelu(b + Σ_u x[t + u] · Z_u)` for `u ∈ [-n, n]`,
/// where `Z_u` is `W_u` with masked positions zeroed. Only frames with a full
/// window are produced, so the output has `2n` fewer rows than the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLayer {
    order: usize,
    /// `weights[u + n]` holds `W_u`.
    weights: Vec<Array2<f64>>,
    bias: Array1<f64>,
    slopes: Array1<f64>,
    mask: Option<BinaryMask>,
}

impl ConditionalLayer {
    pub fn new(
        order: usize,
        weights: Vec<Array2<f64>>,
        bias: Array1<f64>,
        slopes: Array1<f64>,
        mask: Option<BinaryMask>,
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument("order must be at least 1".into()));
        }
        if weights.len() != 2 * order + 1 {
            return Err(Error::Shape(format!(
                "order {order} needs {} weight matrices, got {}",
                2 * order + 1,
                weights.len()
            )));
        }
        let dim = weights[0].dim();
        if let Some(w) = weights.iter().find(|w| w.dim() != dim) {
            return Err(Error::Shape(format!(
                "weight matrices differ in shape: {dim:?} vs {:?}",
                w.dim()
            )));
        }
        if bias.len() != dim.1 || slopes.len() != dim.1 {
            return Err(Error::Shape(format!(
                "hidden width {} but bias has {} and slopes {} entries",
                dim.1,
                bias.len(),
                slopes.len()
            )));
        }
        if let Some(mask) = &mask {
            if (mask.rows(), mask.cols()) != dim {
                return Err(Error::Shape(format!(
                    "mask is {}x{} but weights are {}x{}",
                    mask.rows(),
                    mask.cols(),
                    dim.0,
                    dim.1
                )));
            }
        }
        if !bias.iter().chain(slopes.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("bias and slopes must be finite".into()));
        }
        Ok(ConditionalLayer {
            order,
            weights,
            bias,
            slopes,
            mask,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn hidden(&self) -> usize {
        self.weights[0].ncols()
    }

    /// `W_u` for `u ∈ [-n, n]`, in order.
    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn slopes(&self) -> &Array1<f64> {
        &self.slopes
    }

    pub fn mask(&self) -> Option<&BinaryMask> {
        self.mask.as_ref()
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Array2<f64>], &mut Array1<f64>, &mut Array1<f64>) {
        (&mut self.weights, &mut self.bias, &mut self.slopes)
    }

    /// Weight matrices with the mask applied.
    pub fn effective_weights(&self) -> Cow<'_, [Array2<f64>]> {
        match &self.mask {
            None => Cow::Borrowed(&self.weights),
            Some(mask) => {
                let m = mask.entries();
                Cow::Owned(
                    self.weights
                        .iter()
                        .map(|w| {
                            let mut z = w.clone();
                            z.zip_mut_with(m, |v, &keep| {
                                if keep == 0 {
                                    *v = 0.0;
                                }
                            });
                            z
                        })
                        .collect(),
                )
            }
        }
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.effective_weights();
        let mut pre = self.pre_activation(input, &z)?;
        let dim = pre.dim();
        pre.zip_mut_with(&self.slopes.broadcast(dim).unwrap(), |v, &a| {
            *v = prelu_scalar(*v, a)
        });
        Ok(pre)
    }

    /// `b + Σ_u x[t + u] · Z_u` for every central frame `t`.
    pub(crate) fn pre_activation(
        &self,
        input: ArrayView2<f64>,
        effective: &[Array2<f64>],
    ) -> Result<Array2<f64>> {
        let (frames, width) = input.dim();
        if width != self.input_width() {
            return Err(Error::Shape(format!(
                "layer expects {} features per frame, input has {width}",
                self.input_width()
            )));
        }
        let d = 2 * self.order + 1;
        if frames < d {
            return Err(Error::Shape(format!(
                "{frames} frames cannot fill a window of {d}"
            )));
        }
        let out_rows = frames - 2 * self.order;
        let mut pre = self
            .bias
            .broadcast((out_rows, self.hidden()))
            .unwrap()
            .to_owned();
        for (u, z) in effective.iter().enumerate() {
            general_mat_mul(1.0, &input.slice(s![u..u + out_rows, ..]), z, 1.0, &mut pre);
        }
        Ok(pre)
    }

    /// Zero the weight gradients at masked positions.
    pub(crate) fn mask_gradients(&self, grads: &mut ConditionalGrads) {
        if let Some(mask) = &self.mask {
            for gw in grads.weights.iter_mut() {
                gw.zip_mut_with(mask.entries(), |v, &keep| {
                    if keep == 0 {
                        *v = 0.0;
                    }
                });
            }
        }
    }

    /// Accumulate parameter gradients into `grads` given the upstream
    /// gradient `d_out` of the activations. Masked positions are left to
    /// [`Self::mask_gradients`]. Returns the gradient with respect
    /// to the input when `want_input` is set.
    pub(crate) fn backward(
        &self,
        input: ArrayView2<f64>,
        pre: ArrayView2<f64>,
        d_out: ArrayView2<f64>,
        effective: &[Array2<f64>],
        grads: &mut ConditionalGrads,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let out_rows = pre.nrows();
        let slopes = self.slopes.broadcast(pre.dim()).unwrap();
        let mut d_pre = Array2::<f64>::zeros(pre.dim());
        Zip::from(&mut d_pre)
            .and(&pre)
            .and(&d_out)
            .and(&slopes)
            .for_each(|dp, &a, &g, &s| *dp = if a > 0.0 { g } else { g * s });
        for ((ds, a_col), g_col) in grads
            .slopes
            .iter_mut()
            .zip(pre.columns())
            .zip(d_out.columns())
        {
            *ds += a_col
                .iter()
                .zip(g_col)
                .filter(|(&a, _)| a <= 0.0)
                .map(|(&a, &g)| a * g)
                .sum::<f64>();
        }
        grads.bias += &d_pre.sum_axis(Axis(0));

        for (u, gw) in grads.weights.iter_mut().enumerate() {
            let window = input.slice(s![u..u + out_rows, ..]);
            general_mat_mul(1.0, &window.t(), &d_pre, 1.0, gw);
        }
        want_input.then(|| {
            let mut d_input = Array2::<f64>::zeros(input.dim());
            for (u, z) in effective.iter().enumerate() {
                let mut rows: ArrayViewMut2<f64> = d_input.slice_mut(s![u..u + out_rows, ..]);
                general_mat_mul(1.0, &d_pre, &z.t(), 1.0, &mut rows);
            }
            d_input
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGrads {
    pub weights: Vec<Array2<f64>>,
    pub bias: Array1<f64>,
    pub slopes: Array1<f64>,
}

impl ConditionalGrads {
    pub(crate) fn zeros_like(layer: &ConditionalLayer) -> Self {
        ConditionalGrads {
            weights: layer
                .weights
                .iter()
                .map(|w| Array2::zeros(w.dim()))
                .collect(),
            bias: Array1::zeros(layer.hidden()),
            slopes: Array1::zeros(layer.hidden()),
        }
    }
}

/// Fully connected PReLU layer, `in × out` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub slopes: Array1<f64>,
}

impl DenseLayer {
    pub fn input_width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.weights.ncols()
    }

    pub(crate) fn pre_activation(&self, x: ArrayView1<f64>) -> Array1<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub slopes: Array1<f64>,
}

/// Final affine layer feeding the softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl OutputLayer {
    pub fn logits(&self, x: ArrayView1<f64>) -> Array1<f64> {
        x.dot(&self.weights) + &self.bias
    }
}
