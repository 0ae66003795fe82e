//! Model files.
//!
//! Layout: the magic `MCLNN1\n`, a little-endian `u32` byte length, a UTF-8
//! JSON header describing layers, mask specs, class labels and the list of
//! parameter arrays, then each array as little-endian `f32` in header order.
//! Matrices are row-major with one row per input feature.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layer::{ConditionalLayer, DenseLayer, OutputLayer};
use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::maskgen::{build_mask, MaskSpec};

pub const MODEL_MAGIC: &[u8; 7] = b"MCLNN1\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    classes: Vec<String>,
    extra_frames: usize,
    dropout: f64,
    layers: Vec<LayerHeader>,
    arrays: Vec<ArrayHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerHeader {
    Conditional {
        order: usize,
        input: usize,
        hidden: usize,
        mask: Option<MaskSpec>,
    },
    Dense {
        input: usize,
        output: usize,
    },
    Output {
        input: usize,
        output: usize,
    },
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayHeader {
    name: String,
    shape: Vec<usize>,
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "model",
        reason: reason.into(),
    }
}

fn array_headers(params: &ModelParams) -> Vec<ArrayHeader> {
    let mut names = Vec::new();
    for (i, layer) in params.conditional.iter().enumerate() {
        let n = layer.order() as i64;
        names.extend((-n..=n).map(|u| format!("conditional{i}.weights[{u}]")));
        names.push(format!("conditional{i}.bias"));
        names.push(format!("conditional{i}.slopes"));
    }
    for i in 0..params.dense.len() {
        names.push(format!("dense{i}.weights"));
        names.push(format!("dense{i}.bias"));
        names.push(format!("dense{i}.slopes"));
    }
    names.push("output.weights".into());
    names.push("output.bias".into());
    names
        .into_iter()
        .zip(params.tensor_shapes())
        .map(|(name, shape)| ArrayHeader { name, shape })
        .collect()
}

pub fn write_model<W: Write>(params: &ModelParams, mut out: W) -> Result<()> {
    params.validate()?;
    let mut layers: Vec<LayerHeader> = params
        .conditional
        .iter()
        .map(|l| LayerHeader::Conditional {
            order: l.order(),
            input: l.input_width(),
            hidden: l.hidden(),
            mask: l.mask().map(|m| m.spec()),
        })
        .collect();
    layers.extend(params.dense.iter().map(|l| LayerHeader::Dense {
        input: l.input_width(),
        output: l.output_width(),
    }));
    layers.push(LayerHeader::Output {
        input: params.output.weights.nrows(),
        output: params.num_classes(),
    });
    let header = Header {
        classes: params.classes.clone(),
        extra_frames: params.extra_frames,
        dropout: params.dropout,
        layers,
        arrays: array_headers(params),
    };
    let text = serde_json::to_vec(&header).expect("header serializes");

    let mut buf = Vec::with_capacity(text.len() + 16);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(&text);
    for tensor in params.tensors() {
        for &v in tensor {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| format_err(format!("write failed: {e}")))
}

pub fn read_model<R: Read>(mut input: R) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| format_err(format!("read failed: {e}")))?;
    if bytes.len() < MODEL_MAGIC.len() + 4 || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(format_err("missing MCLNN1 magic"));
    }
    let mut pos = MODEL_MAGIC.len();
    let header_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    let header_bytes = bytes
        .get(pos..pos + header_len)
        .ok_or_else(|| format_err("truncated header"))?;
    pos += header_len;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| format_err(format!("bad header: {e}")))?;

    if !(bytes.len() - pos).is_multiple_of(4) {
        return Err(format_err("payload is not a whole number of f32 values"));
    }
    let mut payload = Payload {
        bytes: &bytes[pos..],
    };

    let mut conditional = Vec::new();
    let mut dense = Vec::new();
    let mut output = None;
    for layer in &header.layers {
        match *layer {
            LayerHeader::Conditional {
                order,
                input,
                hidden,
                mask,
            } => {
                if output.is_some() || !dense.is_empty() {
                    return Err(format_err("conditional layer after dense stage"));
                }
                let weights = (0..2 * order + 1)
                    .map(|_| payload.matrix(input, hidden))
                    .collect::<Result<Vec<_>>>()?;
                let bias = payload.vector(hidden)?;
                let slopes = payload.vector(hidden)?;
                let mask = mask.map(|spec| build_mask(input, hidden, spec)).transpose()?;
                conditional.push(ConditionalLayer::new(order, weights, bias, slopes, mask)?);
            }
            LayerHeader::Dense { input, output: out } => {
                if output.is_some() {
                    return Err(format_err("dense layer after output layer"));
                }
                let weights = payload.matrix(input, out)?;
                let bias = payload.vector(out)?;
                let slopes = payload.vector(out)?;
                dense.push(DenseLayer {
                    weights,
                    bias,
                    slopes,
                });
            }
            LayerHeader::Output { input, output: out } => {
                if output.is_some() {
                    return Err(format_err("more than one output layer"));
                }
                let weights = payload.matrix(input, out)?;
                let bias = payload.vector(out)?;
                output = Some(OutputLayer { weights, bias });
            }
        }
    }
    if !payload.bytes.is_empty() {
        return Err(format_err("trailing bytes after parameter payload"));
    }
    let params = ModelParams {
        conditional,
        dense,
        output: output.ok_or_else(|| format_err("missing output layer"))?,
        extra_frames: header.extra_frames,
        dropout: header.dropout,
        classes: header.classes,
    };
    params.validate()?;
    if array_headers(&params) != header.arrays {
        return Err(format_err("array list does not match layer list"));
    }
    Ok(params)
}

struct Payload<'a> {
    bytes: &'a [u8],
}

impl Payload<'_> {
    fn take(&mut self, len: usize) -> Result<Vec<f64>> {
        if self.bytes.len() < 4 * len {
            return Err(format_err("truncated parameter payload"));
        }
        let (head, rest) = self.bytes.split_at(4 * len);
        self.bytes = rest;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn vector(&mut self, len: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.take(len)?))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_vec((rows, cols), self.take(rows * cols)?).unwrap())
    }
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(params, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(file))
}
