//! Binary model container.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "TNWP"
//! 4       4     format version, u32 little-endian
//! 8       8     header length H, u64 little-endian
//! 16      H     UTF-8 JSON header, space-padded so the blob starts 8-byte aligned
//! 16 + H  ...   parameter blob, f64 little-endian, tensors in header order
//! ```
//!
//! Each parameter entry in the header records its shape and its byte offset
//! and byte length inside the blob. Offsets are contiguous in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Activation, Conv1d, Dense, Layer, ModelGraph, Normalization, ResidualBlock, CURRENT_VERSION,
};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub const MAGIC: [u8; 4] = *b"TNWP";
pub const FORMAT_VERSION: u32 = CURRENT_VERSION;
const PREAMBLE: usize = 16;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    name: String,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    kind: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

fn layer_meta(layer: &Layer) -> BTreeMap<String, usize> {
    let mut meta = BTreeMap::new();
    match layer {
        Layer::Conv1d(c) => {
            meta.insert("in_channels".into(), c.in_channels());
            meta.insert("out_channels".into(), c.out_channels());
            meta.insert("kernel_size".into(), c.kernel_size());
        }
        Layer::Dense(d) => {
            meta.insert("in_features".into(), d.in_features());
            meta.insert("out_features".into(), d.out_features());
        }
        Layer::Residual(r) => {
            meta.insert("channels".into(), r.channels());
            meta.insert("kernel_size".into(), r.first.kernel_size());
        }
        Layer::SplitHeads(heads) => {
            meta.insert("heads".into(), heads.len());
        }
        Layer::BroadcastScalarRows {
            vector_rows,
            scalar_rows,
            levels,
        } => {
            meta.insert("vector_rows".into(), *vector_rows);
            meta.insert("scalar_rows".into(), *scalar_rows);
            meta.insert("levels".into(), *levels);
        }
        Layer::Relu | Layer::Tanh | Layer::InputNormalize(_) | Layer::OutputDenormalize(_) => {}
    }
    meta
}

/// Serializes a graph into container bytes.
pub fn encode_model(graph: &ModelGraph) -> Result<Vec<u8>> {
    graph.validate()?;
    let mut blob: Vec<u8> = Vec::with_capacity(graph.param_count() * 8);
    let mut layers = Vec::with_capacity(graph.layers().len());
    for layer in graph.layers() {
        let mut params = Vec::new();
        for (name, t) in layer.params() {
            let offset = blob.len() as u64;
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            params.push(ParamEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                length: blob.len() as u64 - offset,
            });
        }
        layers.push(LayerEntry {
            kind: layer.kind().to_string(),
            meta: layer_meta(layer),
            activation: match layer {
                Layer::Residual(r) => Some(r.activation.name().to_string()),
                _ => None,
            },
            params,
        });
    }
    let header = Header {
        name: graph.name().to_string(),
        input_shape: graph.input_shape().to_vec(),
        output_shape: graph.output_shape().to_vec(),
        layers,
    };
    let mut json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    while !(PREAMBLE + json.len()).is_multiple_of(8) {
        json.push(b' ');
    }

    let mut out = Vec::with_capacity(PREAMBLE + json.len() + blob.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&graph.format_version().to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// Validates `graph` and writes it to `path`. Nothing is written when
/// validation fails.
pub fn save_model(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_model(graph)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}

struct ParamReader<'a> {
    blob: &'a [u8],
    cursor: u64,
    entries: std::slice::Iter<'a, ParamEntry>,
    layer: usize,
}

impl ParamReader<'_> {
    fn next(&mut self, expected_name: &str) -> Result<Tensor> {
        let entry = self.entries.next().ok_or_else(|| {
            Error::Format(format!(
                "layer {} is missing parameter {expected_name}",
                self.layer
            ))
        })?;
        if entry.name != expected_name {
            return Err(Error::Format(format!(
                "layer {}: expected parameter {expected_name}, found {}",
                self.layer, entry.name
            )));
        }
        let elements = numel(&entry.shape) as u64;
        if entry.length != elements * 8 {
            return Err(Error::Format(format!(
                "layer {} parameter {}: shape {:?} needs {} bytes, header says {}",
                self.layer,
                entry.name,
                entry.shape,
                elements * 8,
                entry.length
            )));
        }
        if entry.offset != self.cursor {
            return Err(Error::Format(format!(
                "layer {} parameter {}: offset {} is not contiguous (expected {})",
                self.layer, entry.name, entry.offset, self.cursor
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.length as usize;
        let data = self.blob[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        self.cursor += entry.length;
        Tensor::new(entry.shape.clone(), data)
    }

    fn finish(mut self) -> Result<()> {
        match self.entries.next() {
            None => Ok(()),
            Some(extra) => Err(Error::Format(format!(
                "layer {} has unexpected parameter {}",
                self.layer, extra.name
            ))),
        }
    }
}

fn meta_value(entry: &LayerEntry, index: usize, key: &str) -> Result<usize> {
    entry
        .meta
        .get(key)
        .copied()
        .ok_or_else(|| Error::Format(format!("layer {index} ({}) lacks meta {key}", entry.kind)))
}

fn decode_layer(entry: &LayerEntry, index: usize, blob: &[u8], cursor: &mut u64) -> Result<Layer> {
    let mut reader = ParamReader {
        blob,
        cursor: *cursor,
        entries: entry.params.iter(),
        layer: index,
    };
    let layer = match entry.kind.as_str() {
        "Conv1D" => Layer::Conv1d(Conv1d {
            weight: reader.next("weight")?,
            bias: reader.next("bias")?,
        }),
        "Dense" => Layer::Dense(Dense {
            weight: reader.next("weight")?,
            bias: reader.next("bias")?,
        }),
        "ReLU" => Layer::Relu,
        "Tanh" => Layer::Tanh,
        "ResidualBlock" => {
            let activation = match entry.activation.as_deref() {
                Some("ReLU") => Activation::Relu,
                Some("Tanh") => Activation::Tanh,
                other => {
                    return Err(Error::Format(format!(
                        "layer {index}: unknown residual activation {other:?}"
                    )))
                }
            };
            Layer::Residual(ResidualBlock {
                first: Conv1d {
                    weight: reader.next("conv1.weight")?,
                    bias: reader.next("conv1.bias")?,
                },
                second: Conv1d {
                    weight: reader.next("conv2.weight")?,
                    bias: reader.next("conv2.bias")?,
                },
                activation,
            })
        }
        kind @ ("InputNormalize" | "OutputDenormalize") => {
            let norm = Normalization {
                mean: reader.next("mean")?,
                std: reader.next("std")?,
            };
            if kind == "InputNormalize" {
                Layer::InputNormalize(norm)
            } else {
                Layer::OutputDenormalize(norm)
            }
        }
        "SplitHeads" => {
            let count = meta_value(entry, index, "heads")?;
            let mut heads = Vec::with_capacity(count);
            for i in 0..count {
                heads.push(Dense {
                    weight: reader.next(&format!("head{i}.weight"))?,
                    bias: reader.next(&format!("head{i}.bias"))?,
                });
            }
            Layer::SplitHeads(heads)
        }
        "BroadcastScalarRows" => Layer::BroadcastScalarRows {
            vector_rows: meta_value(entry, index, "vector_rows")?,
            scalar_rows: meta_value(entry, index, "scalar_rows")?,
            levels: meta_value(entry, index, "levels")?,
        },
        other => {
            return Err(Error::Format(format!("layer {index}: unknown kind {other:?}")));
        }
    };
    *cursor = reader.cursor;
    reader.finish()?;
    Ok(layer)
}

/// Parses container bytes into a validated graph.
pub fn decode_model(bytes: &[u8]) -> Result<ModelGraph> {
    if bytes.len() < PREAMBLE {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {PREAMBLE}-byte preamble",
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[0..4],
            MAGIC
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let available = (bytes.len() - PREAMBLE) as u64;
    if header_len > available {
        return Err(Error::Format(format!(
            "truncated header: expected {header_len} bytes, found {available}"
        )));
    }
    let blob_start = PREAMBLE + header_len as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..blob_start])
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let blob = &bytes[blob_start..];

    let expected_blob: u64 = header
        .layers
        .iter()
        .flat_map(|l| &l.params)
        .map(|p| p.length)
        .sum();
    if expected_blob != blob.len() as u64 {
        return Err(Error::Format(format!(
            "parameter blob size mismatch: expected {expected_blob} bytes, found {}",
            blob.len()
        )));
    }

    let mut cursor = 0u64;
    let layers = header
        .layers
        .iter()
        .enumerate()
        .map(|(i, entry)| decode_layer(entry, i, blob, &mut cursor))
        .collect::<Result<Vec<_>>>()?;
    ModelGraph::new(header.name, header.input_shape, header.output_shape, layers)
}
