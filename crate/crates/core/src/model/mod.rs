//! Layer-graph data model, the binary model container and topology builders.

pub mod builders;
pub mod format;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub use builders::{
    build_conv_tanh_model, build_dense_model, build_identity_model, build_reference_gwd_model,
    build_tanh_model,
};
pub use format::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "ReLU",
            Activation::Tanh => "Tanh",
        }
    }
}

/// Convolution parameters: weight `(C_out, C_in, K)`, bias `(C_out,)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.weight.shape().len() != 3 {
            return Err(format!("weight must be rank 3, got {:?}", self.weight.shape()));
        }
        if self.kernel_size().is_multiple_of(2) {
            return Err(format!("kernel size must be odd, got {}", self.kernel_size()));
        }
        if self.bias.shape() != [self.out_channels()] {
            return Err(format!(
                "bias shape {:?} does not match {} output channels",
                self.bias.shape(),
                self.out_channels()
            ));
        }
        Ok(())
    }
}

/// Affine layer parameters: weight `(m, n)`, bias `(m,)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.weight.shape().len() != 2 {
            return Err(format!("weight must be rank 2, got {:?}", self.weight.shape()));
        }
        if self.bias.shape() != [self.out_features()] {
            return Err(format!(
                "bias shape {:?} does not match {} outputs",
                self.bias.shape(),
                self.out_features()
            ));
        }
        Ok(())
    }
}

/// Two convolutions, each followed by `activation`, plus an identity skip:
/// `y = x + act(conv2(act(conv1(x))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub first: Conv1d,
    pub second: Conv1d,
    pub activation: Activation,
}

impl ResidualBlock {
    pub fn channels(&self) -> usize {
        self.first.in_channels()
    }
}

/// Mean/std pair. Used per-variable per-level on the input side and
/// per-variable on the output side.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Tensor,
    pub std: Tensor,
}

impl Normalization {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.mean.shape() != self.std.shape() {
            return Err(format!(
                "mean shape {:?} differs from std shape {:?}",
                self.mean.shape(),
                self.std.shape()
            ));
        }
        if let Some(bad) = self.std.data().iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(format!(
                "std entry {bad} is {} (must be strictly positive)",
                self.std.data()[bad]
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    Dense(Dense),
    Relu,
    Tanh,
    Residual(ResidualBlock),
    /// `(x − mean) / std` elementwise, stats shaped like the input.
    InputNormalize(Normalization),
    /// `x · std[r] + mean[r]` for every row `r`, stats shaped `(rows,)`.
    OutputDenormalize(Normalization),
    /// Parallel dense heads applied to the flattened input, outputs concatenated.
    SplitHeads(Vec<Dense>),
    /// Unpacks `(vector_rows · levels + scalar_rows,)` into
    /// `(vector_rows + scalar_rows, levels)`, repeating each scalar across levels.
    BroadcastScalarRows {
        vector_rows: usize,
        scalar_rows: usize,
        levels: usize,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "Conv1D",
            Layer::Dense(_) => "Dense",
            Layer::Relu => "ReLU",
            Layer::Tanh => "Tanh",
            Layer::Residual(_) => "ResidualBlock",
            Layer::InputNormalize(_) => "InputNormalize",
            Layer::OutputDenormalize(_) => "OutputDenormalize",
            Layer::SplitHeads(_) => "SplitHeads",
            Layer::BroadcastScalarRows { .. } => "BroadcastScalarRows",
        }
    }

    /// Parameter tensors in serialization order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Layer::Conv1d(c) => vec![("weight".into(), &c.weight), ("bias".into(), &c.bias)],
            Layer::Dense(d) => vec![("weight".into(), &d.weight), ("bias".into(), &d.bias)],
            Layer::Residual(r) => vec![
                ("conv1.weight".into(), &r.first.weight),
                ("conv1.bias".into(), &r.first.bias),
                ("conv2.weight".into(), &r.second.weight),
                ("conv2.bias".into(), &r.second.bias),
            ],
            Layer::InputNormalize(n) | Layer::OutputDenormalize(n) => {
                vec![("mean".into(), &n.mean), ("std".into(), &n.std)]
            }
            Layer::SplitHeads(heads) => heads
                .iter()
                .enumerate()
                .flat_map(|(i, h)| {
                    [
                        (format!("head{i}.weight"), &h.weight),
                        (format!("head{i}.bias"), &h.bias),
                    ]
                })
                .collect(),
            Layer::Relu | Layer::Tanh | Layer::BroadcastScalarRows { .. } => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Shape-independent parameter invariants.
    fn validate(&self) -> std::result::Result<(), String> {
        for (name, t) in self.params() {
            if !t.is_finite() {
                return Err(format!("parameter {name} has non-finite entries"));
            }
        }
        match self {
            Layer::Conv1d(c) => c.validate(),
            Layer::Dense(d) => d.validate(),
            Layer::Residual(r) => {
                r.first.validate()?;
                r.second.validate()?;
                let ch = r.first.in_channels();
                if r.first.out_channels() != ch
                    || r.second.in_channels() != ch
                    || r.second.out_channels() != ch
                {
                    return Err(format!(
                        "residual convolutions must map {ch} channels to {ch}, got {:?} and {:?}",
                        r.first.weight.shape(),
                        r.second.weight.shape()
                    ));
                }
                Ok(())
            }
            Layer::InputNormalize(n) => n.validate(),
            Layer::OutputDenormalize(n) => {
                n.validate()?;
                if n.mean.shape().len() != 1 {
                    return Err(format!(
                        "output statistics must be per-variable (rank 1), got {:?}",
                        n.mean.shape()
                    ));
                }
                Ok(())
            }
            Layer::SplitHeads(heads) => {
                if heads.is_empty() {
                    return Err("at least one head is required".into());
                }
                let n = heads[0].in_features();
                for (i, h) in heads.iter().enumerate() {
                    h.validate().map_err(|e| format!("head {i}: {e}"))?;
                    if h.in_features() != n {
                        return Err(format!(
                            "head {i} reads {} features, head 0 reads {n}",
                            h.in_features()
                        ));
                    }
                }
                Ok(())
            }
            Layer::BroadcastScalarRows { levels, .. } => {
                if *levels == 0 {
                    return Err("levels must be positive".into());
                }
                Ok(())
            }
            Layer::Relu | Layer::Tanh => Ok(()),
        }
    }

    /// Output extents for an input of extents `input`, or the extents the
    /// layer expected instead.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, Vec<usize>> {
        match self {
            Layer::Conv1d(c) => match *input {
                [ch, l] if ch == c.in_channels() => Ok(vec![c.out_channels(), l]),
                [_, l] => Err(vec![c.in_channels(), l]),
                _ => Err(vec![c.in_channels(), 0]),
            },
            Layer::Residual(r) => match *input {
                [ch, _] if ch == r.channels() => Ok(input.to_vec()),
                [_, l] => Err(vec![r.channels(), l]),
                _ => Err(vec![r.channels(), 0]),
            },
            Layer::Dense(d) => {
                if input == [d.in_features()] {
                    Ok(vec![d.out_features()])
                } else {
                    Err(vec![d.in_features()])
                }
            }
            Layer::Relu | Layer::Tanh => Ok(input.to_vec()),
            Layer::InputNormalize(n) => {
                if input == n.mean.shape() {
                    Ok(input.to_vec())
                } else {
                    Err(n.mean.shape().to_vec())
                }
            }
            Layer::OutputDenormalize(n) => {
                let rows = n.mean.len();
                match *input {
                    [r, _] if r == rows => Ok(input.to_vec()),
                    [_, l] => Err(vec![rows, l]),
                    _ => Err(vec![rows, 0]),
                }
            }
            Layer::SplitHeads(heads) => {
                let n = heads[0].in_features();
                if numel(input) == n {
                    Ok(vec![heads.iter().map(Dense::out_features).sum()])
                } else {
                    Err(vec![n])
                }
            }
            Layer::BroadcastScalarRows {
                vector_rows,
                scalar_rows,
                levels,
            } => {
                let n = vector_rows * levels + scalar_rows;
                if input == [n] {
                    Ok(vec![vector_rows + scalar_rows, *levels])
                } else {
                    Err(vec![n])
                }
            }
        }
    }

    /// True when the layer is infinitely differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        match self {
            Layer::Relu => false,
            Layer::Residual(r) => r.activation != Activation::Relu,
            _ => true,
        }
    }
}

/// Current container format version.
pub const CURRENT_VERSION: u32 = 1;

/// A validated sequential chain of layers with declared input and output extents.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    name: String,
    format_version: u32,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl ModelGraph {
    /// Builds a graph, checking every layer invariant and the shape chain.
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let graph = ModelGraph {
            name: name.into(),
            format_version: CURRENT_VERSION,
            input_shape,
            output_shape,
            layers,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn input_len(&self) -> usize {
        numel(&self.input_shape)
    }

    pub fn output_len(&self) -> usize {
        numel(&self.output_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// True when no layer has a kink, so second-order Taylor behaviour holds.
    pub fn is_smooth(&self) -> bool {
        self.layers.iter().all(Layer::is_smooth)
    }

    /// True when every layer is affine, so the Taylor remainder vanishes.
    pub fn is_affine(&self) -> bool {
        !self
            .layers
            .iter()
            .any(|l| matches!(l, Layer::Relu | Layer::Tanh | Layer::Residual(_)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "input shape {:?} must have positive extents",
                self.input_shape
            )));
        }
        for (index, layer) in self.layers.iter().enumerate() {
            layer.validate().map_err(|message| Error::InvalidLayer {
                index,
                kind: layer.kind(),
                message,
            })?;
        }
        check_shapes(self).map(|_| ())
    }
}

/// Propagates extents through the chain without touching parameter values.
///
/// Returns `[input_shape, shape after layer 0, …]`; the last entry equals the
/// declared output shape on success.
pub fn check_shapes(graph: &ModelGraph) -> Result<Vec<Vec<usize>>> {
    let mut trace = vec![graph.input_shape.clone()];
    for (index, layer) in graph.layers.iter().enumerate() {
        let current = trace.last().expect("trace starts non-empty");
        let next = layer
            .output_shape(current)
            .map_err(|expected| Error::LayerShape {
                index,
                kind: layer.kind(),
                expected,
                actual: current.clone(),
            })?;
        trace.push(next);
    }
    let last = trace.last().expect("trace starts non-empty");
    if *last != graph.output_shape {
        return Err(Error::shape("model output", &graph.output_shape, last));
    }
    Ok(trace)
}
