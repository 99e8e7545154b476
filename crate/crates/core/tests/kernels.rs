//! Convolution and dense kernels against naive loop oracles.

use tnwp_core::model::{Conv1d, Dense};
use tnwp_core::tensor::{conv1d, conv1d_linear, conv1d_transpose, dense, Tensor};
use tnwp_core::SeededRng;

/// Direct evaluation of `b[c] + Σ_i Σ_k w[c,i,k] · x[i, l+k-p]` with explicit
/// zero padding.
fn naive_conv(x: &[f64], c_in: usize, len: usize, w: &[f64], c_out: usize, k: usize, b: &[f64]) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut padded = vec![0.0; c_in * (len + 2 * pad)];
    for i in 0..c_in {
        for l in 0..len {
            padded[i * (len + 2 * pad) + l + pad] = x[i * len + l];
        }
    }
    let mut out = vec![0.0; c_out * len];
    for c in 0..c_out {
        for l in 0..len {
            let mut s = 0.0;
            for i in 0..c_in {
                for t in 0..k {
                    s += w[(c * c_in + i) * k + t] * padded[i * (len + 2 * pad) + l + t];
                }
            }
            out[c * len + l] = b[c] + s;
        }
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-300))
        .fold(0.0, f64::max)
}

fn max_abs_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_matches_naive_oracle_on_column_shapes() {
    let mut rng = SeededRng::new(11);
    let x = rng.normal_tensor(&[11, 89]);
    let w = rng.normal_tensor(&[16, 11, 3]);
    let b = rng.normal_tensor(&[16]);
    let out = conv1d(&x, &w, &b).unwrap();
    assert_eq!(out.shape(), &[16, 89]);
    let oracle = naive_conv(x.data(), 11, 89, w.data(), 16, 3, b.data());
    assert!(max_abs_err(out.data(), &oracle) < 1e-13);
}

#[test]
fn conv_wide_kernel_matches_oracle() {
    let mut rng = SeededRng::new(12);
    let x = rng.normal_tensor(&[3, 7]);
    let w = rng.normal_tensor(&[2, 3, 5]);
    let b = rng.normal_tensor(&[2]);
    let oracle = naive_conv(x.data(), 3, 7, w.data(), 2, 5, b.data());
    assert!(max_abs_err(conv1d(&x, &w, &b).unwrap().data(), &oracle) < 1e-13);
}

#[test]
fn dense_matches_naive_matvec() {
    let mut rng = SeededRng::new(13);
    let w = rng.normal_tensor(&[64, 32]);
    let b = rng.normal_tensor(&[64]);
    let x = rng.normal_tensor(&[32]);
    let out = dense(&x, &w, &b).unwrap();
    let oracle: Vec<f64> = (0..64)
        .map(|r| {
            let mut s = 0.0;
            for q in 0..32 {
                s += w.data()[r * 32 + q] * x.data()[q];
            }
            s + b.data()[r]
        })
        .collect();
    assert!(rel_err(out.data(), &oracle) <= 1e-15);
}

#[test]
fn conv_and_dense_are_linear_without_bias() {
    let mut rng = SeededRng::new(14);
    let w = rng.normal_tensor(&[4, 3, 3]);
    let x1 = rng.normal_tensor(&[3, 10]);
    let x2 = rng.normal_tensor(&[3, 10]);
    let (a, b) = (0.7, -1.3);
    let combo = x1.zip_map(&x2, |u, v| a * u + b * v);
    let lhs = conv1d_linear(&combo, &w).unwrap();
    let f1 = conv1d_linear(&x1, &w).unwrap();
    let f2 = conv1d_linear(&x2, &w).unwrap();
    let rhs = f1.zip_map(&f2, |u, v| a * u + b * v);
    let scale = rhs.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_abs_err(lhs.data(), rhs.data()) <= 1e-14 * scale);

    let wd = rng.normal_tensor(&[5, 6]);
    let zero = Tensor::zeros(&[5]);
    let y1 = rng.normal_tensor(&[6]);
    let y2 = rng.normal_tensor(&[6]);
    let lhs = dense(&y1.zip_map(&y2, |u, v| a * u + b * v), &wd, &zero).unwrap();
    let d1 = dense(&y1, &wd, &zero).unwrap();
    let d2 = dense(&y2, &wd, &zero).unwrap();
    let rhs = d1.zip_map(&d2, |u, v| a * u + b * v);
    let scale = rhs.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_abs_err(lhs.data(), rhs.data()) <= 1e-14 * scale);
}

#[test]
fn kernel_one_conv_is_per_position_channel_mixing() {
    let mut rng = SeededRng::new(15);
    let w = rng.normal_tensor(&[4, 3, 1]);
    let b = rng.normal_tensor(&[4]);
    let x = rng.normal_tensor(&[3, 9]);
    let out = conv1d(&x, &w, &b).unwrap();
    let mixing = w.clone().reshape(&[4, 3]).unwrap();
    for l in 0..9 {
        let column = Tensor::vector((0..3).map(|i| x.data()[i * 9 + l]).collect());
        let mixed = dense(&column, &mixing, &b).unwrap();
        for c in 0..4 {
            assert_eq!(out.data()[c * 9 + l].to_bits(), mixed.data()[c].to_bits());
        }
    }
}

#[test]
fn conv_transpose_satisfies_inner_product_identity() {
    let mut rng = SeededRng::new(16);
    let w = rng.normal_tensor(&[5, 3, 3]);
    for _ in 0..20 {
        let x = rng.normal_tensor(&[3, 12]);
        let z = rng.normal_tensor(&[5, 12]);
        let lhs = conv1d_linear(&x, &w).unwrap().dot(&z);
        let rhs = x.dot(&conv1d_transpose(&z, &w).unwrap());
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }
}

#[test]
fn layer_parameter_accessors() {
    let conv = Conv1d {
        weight: Tensor::zeros(&[4, 3, 5]),
        bias: Tensor::zeros(&[4]),
    };
    assert_eq!((conv.out_channels(), conv.in_channels(), conv.kernel_size()), (4, 3, 5));
    let d = Dense {
        weight: Tensor::zeros(&[2, 7]),
        bias: Tensor::zeros(&[2]),
    };
    assert_eq!((d.out_features(), d.in_features()), (2, 7));
}
