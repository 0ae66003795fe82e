//! Filterbank-like binary masks for masked conditional layers.
//!
//! A mask is an `l × e` matrix (input features × hidden neurons). Ones are laid
//! out as bands of `bandwidth` consecutive positions along a flat, column-major
//! index; successive bands start `l + (bandwidth - overlap)` positions apart.
//! Reading the flat index column-major makes every hidden neuron see a
//! contiguous run of frequency bins, and the band start drifts down the
//! feature axis from one neuron to the next.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band layout of a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    /// Number of consecutive feature bins per band.
    pub bandwidth: usize,
    /// Superposition distance between successive bands. Negative values leave
    /// a gap of `-overlap` positions between bands.
    pub overlap: i64,
}

impl MaskSpec {
    pub fn new(bandwidth: usize, overlap: i64) -> Result<Self> {
        let spec = MaskSpec { bandwidth, overlap };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidth < 1 {
            return Err(Error::InvalidMask("bandwidth must be at least 1".into()));
        }
        if self.overlap >= self.bandwidth as i64 {
            return Err(Error::InvalidMask(format!(
                "overlap {} must be less than bandwidth {}",
                self.overlap, self.bandwidth
            )));
        }
        Ok(())
    }

    /// Distance between the first positions of two successive bands in the
    /// flat index, `l + (bw - ov)`.
    pub fn band_step(&self, rows: usize) -> usize {
        // overlap < bandwidth, so bandwidth - overlap >= 1
        (rows as i64 + self.bandwidth as i64 - self.overlap) as usize
    }
}

/// A dense `rows × cols` matrix of zeros and ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    spec: MaskSpec,
    entries: Array2<u8>,
}

impl BinaryMask {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn spec(&self) -> MaskSpec {
        self.spec
    }

    pub fn entries(&self) -> &Array2<u8> {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.entries[[row, col]] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.entries.iter().filter(|&&v| v == 1).count()
    }

    /// The mask as a real matrix of 0.0 / 1.0.
    pub fn to_f64(&self) -> Array2<f64> {
        self.entries.mapv(f64::from)
    }

    /// One line per matrix row, `0`/`1` characters, newline terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows() * (self.cols() + 1));
        for row in self.entries.rows() {
            for &v in row {
                out.push(if v == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }
}

/// Number of bands generated for an `rows × cols` matrix,
/// `⌈(rows·cols) / step⌉`.
pub fn band_count(rows: usize, cols: usize, spec: &MaskSpec) -> usize {
    (rows * cols).div_ceil(spec.band_step(rows))
}

/// Build the `rows × cols` mask for `spec`.
///
/// Positions generated past the end of the matrix are dropped.
pub fn build_mask(rows: usize, cols: usize, spec: MaskSpec) -> Result<BinaryMask> {
    spec.validate()?;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidMask(format!(
            "mask dimensions must be positive, got {rows}x{cols}"
        )));
    }
    if spec.bandwidth > rows {
        return Err(Error::InvalidMask(format!(
            "bandwidth {} exceeds feature length {rows}",
            spec.bandwidth
        )));
    }

    let total = rows * cols;
    let step = spec.band_step(rows);
    let mut entries = Array2::<u8>::zeros((rows, cols));
    for start in (0..band_count(rows, cols, &spec)).map(|g| g * step) {
        for lx in (start..start + spec.bandwidth).take_while(|&lx| lx < total) {
            entries[[lx % rows, lx / rows]] = 1;
        }
    }
    Ok(BinaryMask { spec, entries })
}

/// Elementwise product of `weights` with `mask`.
pub fn apply_mask(weights: &Array2<f64>, mask: &BinaryMask) -> Result<Array2<f64>> {
    if weights.dim() != mask.entries.dim() {
        return Err(Error::Shape(format!(
            "weights are {:?} but mask is {:?}",
            weights.dim(),
            mask.entries.dim()
        )));
    }
    let mut out = weights.clone();
    out.zip_mut_with(&mask.entries, |w, &m| {
        if m == 0 {
            *w = 0.0;
        }
    });
    Ok(out)
}
