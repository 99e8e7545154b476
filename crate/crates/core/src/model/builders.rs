//! Deterministic model builders: the gravity-wave-drag reference topology
//! and the small fixtures used across the test corpus.

use super::{Activation, Conv1d, Dense, Layer, ModelGraph, Normalization, ResidualBlock};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const GWD_INPUT_VARS: usize = 11;
pub const GWD_OUTPUT_VARS: usize = 5;
pub const GWD_LEVELS: usize = 89;
pub const GWD_CHANNELS: usize = 16;
pub const GWD_VECTOR_ROWS: usize = 3;
pub const GWD_SCALAR_ROWS: usize = 2;

/// Uniform `[-s, s]` weights and biases with `s = 1/sqrt(C_in · K)`.
fn init_conv(rng: &mut SeededRng, c_out: usize, c_in: usize, k: usize) -> Conv1d {
    let s = 1.0 / ((c_in * k) as f64).sqrt();
    Conv1d {
        weight: rng.uniform_tensor(&[c_out, c_in, k], -s, s),
        bias: rng.uniform_tensor(&[c_out], -s, s),
    }
}

/// Uniform `[-s, s]` weights and biases with `s = 1/sqrt(n)`.
fn init_dense(rng: &mut SeededRng, m: usize, n: usize) -> Dense {
    let s = 1.0 / (n as f64).sqrt();
    Dense {
        weight: rng.uniform_tensor(&[m, n], -s, s),
        bias: rng.uniform_tensor(&[m], -s, s),
    }
}

fn init_stats(rng: &mut SeededRng, shape: &[usize], std_range: (f64, f64)) -> Normalization {
    Normalization {
        mean: rng.uniform_tensor(shape, -1.0, 1.0),
        std: rng.uniform_tensor(shape, std_range.0, std_range.1),
    }
}

/// The reference non-orographic gravity-wave-drag surrogate, `(11, 89) → (5, 89)`:
///
/// 1. per-variable per-level input normalization
/// 2. kernel-1 stem convolution lifting 11 channels to 16
/// 3. two ReLU residual blocks of 16 channels, kernel 3
/// 4. kernel-3 convolution reducing 16 channels to 5
/// 5. parallel heads over the flattened `5 × 89` features: three dense maps to
///    89 levels (the vector outputs) and one dense map to 2 scalars
/// 6. scalars broadcast across levels into rows 4 and 5
/// 7. per-variable global output denormalization
///
/// Parameters are drawn from [`SeededRng`] in layer order.
pub fn build_reference_gwd_model(seed: u64) -> ModelGraph {
    let mut rng = SeededRng::new(seed);
    let features = GWD_OUTPUT_VARS * GWD_LEVELS;

    let input_norm = init_stats(&mut rng, &[GWD_INPUT_VARS, GWD_LEVELS], (0.5, 1.5));
    let stem = init_conv(&mut rng, GWD_CHANNELS, GWD_INPUT_VARS, 1);
    let mut residual = || ResidualBlock {
        first: init_conv(&mut rng, GWD_CHANNELS, GWD_CHANNELS, 3),
        second: init_conv(&mut rng, GWD_CHANNELS, GWD_CHANNELS, 3),
        activation: Activation::Relu,
    };
    let block1 = residual();
    let block2 = residual();
    let reduce = init_conv(&mut rng, GWD_OUTPUT_VARS, GWD_CHANNELS, 3);
    let mut heads: Vec<Dense> = (0..GWD_VECTOR_ROWS)
        .map(|_| init_dense(&mut rng, GWD_LEVELS, features))
        .collect();
    heads.push(init_dense(&mut rng, GWD_SCALAR_ROWS, features));
    let output_norm = init_stats(&mut rng, &[GWD_OUTPUT_VARS], (0.5, 2.0));

    ModelGraph::new(
        "reference-gwd",
        vec![GWD_INPUT_VARS, GWD_LEVELS],
        vec![GWD_OUTPUT_VARS, GWD_LEVELS],
        vec![
            Layer::InputNormalize(input_norm),
            Layer::Conv1d(stem),
            Layer::Residual(block1),
            Layer::Residual(block2),
            Layer::Conv1d(reduce),
            Layer::SplitHeads(heads),
            Layer::BroadcastScalarRows {
                vector_rows: GWD_VECTOR_ROWS,
                scalar_rows: GWD_SCALAR_ROWS,
                levels: GWD_LEVELS,
            },
            Layer::OutputDenormalize(output_norm),
        ],
    )
    .expect("reference topology is shape-consistent")
}

/// Single dense layer with `W = I`, `b = 0`.
pub fn build_identity_model(n: usize) -> ModelGraph {
    let weight = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
    let layer = Layer::Dense(Dense {
        weight,
        bias: Tensor::zeros(&[n]),
    });
    ModelGraph::new("identity", vec![n], vec![n], vec![layer]).expect("identity is valid")
}

/// Single square dense layer `W = I + E`, `|E_ij| ≤ 0.2/sqrt(n)`, random bias.
///
/// The perturbation keeps the singular values of `W` close to one, so the
/// least-squares demo on this model is well conditioned.
pub fn build_dense_model(seed: u64, n: usize) -> ModelGraph {
    let mut rng = SeededRng::new(seed);
    let s = 0.2 / (n as f64).sqrt();
    let mut weight = rng.uniform_tensor(&[n, n], -s, s);
    for i in 0..n {
        weight.data_mut()[i * n + i] += 1.0;
    }
    let bias = rng.uniform_tensor(&[n], -1.0, 1.0);
    ModelGraph::new("dense", vec![n], vec![n], vec![Layer::Dense(Dense { weight, bias })])
        .expect("dense fixture is valid")
}

/// `Dense(n_in → hidden) → Tanh → Dense(hidden → n_out)`.
pub fn build_tanh_model(seed: u64, n_in: usize, hidden: usize, n_out: usize) -> ModelGraph {
    let mut rng = SeededRng::new(seed);
    let first = init_dense(&mut rng, hidden, n_in);
    let second = init_dense(&mut rng, n_out, hidden);
    ModelGraph::new(
        "tanh-mlp",
        vec![n_in],
        vec![n_out],
        vec![Layer::Dense(first), Layer::Tanh, Layer::Dense(second)],
    )
    .expect("tanh fixture is valid")
}

/// Miniature of the reference topology with Tanh activations throughout:
/// `(3, levels) → (2, levels)` with one vector row and one scalar row.
///
/// Exercises every layer kind except ReLU while staying smooth, so it is
/// usable for second-order Taylor checks.
pub fn build_conv_tanh_model(seed: u64, levels: usize) -> ModelGraph {
    let mut rng = SeededRng::new(seed);
    let channels = 4;
    let input_norm = init_stats(&mut rng, &[3, levels], (0.5, 1.5));
    let stem = init_conv(&mut rng, channels, 3, 1);
    let block = ResidualBlock {
        first: init_conv(&mut rng, channels, channels, 3),
        second: init_conv(&mut rng, channels, channels, 3),
        activation: Activation::Tanh,
    };
    let reduce = init_conv(&mut rng, 2, channels, 3);
    let heads = vec![
        init_dense(&mut rng, levels, 2 * levels),
        init_dense(&mut rng, 1, 2 * levels),
    ];
    let output_norm = init_stats(&mut rng, &[2], (0.5, 2.0));
    ModelGraph::new(
        "conv-tanh",
        vec![3, levels],
        vec![2, levels],
        vec![
            Layer::InputNormalize(input_norm),
            Layer::Conv1d(stem),
            Layer::Tanh,
            Layer::Residual(block),
            Layer::Conv1d(reduce),
            Layer::SplitHeads(heads),
            Layer::BroadcastScalarRows {
                vector_rows: 1,
                scalar_rows: 1,
                levels,
            },
            Layer::OutputDenormalize(output_norm),
        ],
    )
    .expect("conv-tanh fixture is valid")
}
