#![allow(dead_code)]

use tnwp_core::{infer, ModelGraph, SeededRng, Tensor};

/// `(M(x + h·dx) − M(x − h·dx)) / 2h`.
pub fn central_difference(g: &ModelGraph, x: &Tensor, dx: &Tensor, h: f64) -> Tensor {
    let plus = infer(g, &x.zip_map(dx, |a, b| a + h * b)).unwrap();
    let minus = infer(g, &x.zip_map(dx, |a, b| a - h * b)).unwrap();
    plus.zip_map(&minus, |p, m| (p - m) / (2.0 * h))
}

/// Entrywise finite-difference Jacobian, row-major `(m, n)`.
pub fn fd_jacobian(g: &ModelGraph, x: &Tensor, h: f64) -> Vec<f64> {
    let (m, n) = (g.output_len(), g.input_len());
    let mut out = vec![0.0; m * n];
    for q in 0..n {
        let mut e = Tensor::zeros(g.input_shape());
        e.data_mut()[q] = 1.0;
        let col = central_difference(g, x, &e, h);
        for p in 0..m {
            out[p * n + q] = col.data()[p];
        }
    }
    out
}

/// `‖a − b‖ / ‖b‖`, zero when both vanish.
pub fn norm_rel(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.zip_map(b, |x, y| x - y).norm();
    let scale = b.norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// `max_i |a_i − b_i| / (1 + |b_i|)`.
pub fn entry_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max)
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Input probe away from every ReLU kink by at least `margin`.
pub fn kink_free_probe(g: &ModelGraph, rng: &mut SeededRng, margin: f64) -> Tensor {
    loop {
        let x = rng.normal_tensor(g.input_shape());
        let (_, trace) = tnwp_core::forward(g, &x).unwrap();
        if trace.relu_margin() > margin {
            return x;
        }
    }
}
