//! Dense row-major tensors, layout conversion to and from column-major host
//! buffers, and the handful of kernels the layer set needs.
//!
//! Every reduction in this module runs in a fixed loop order, so a kernel
//! applied to the same operands always produces the same bits regardless of
//! how callers batch or schedule the work.

use crate::error::{Error, Result};

/// Flat ordering of a multi-dimensional array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Last index varies fastest. The only layout used inside the engine.
    RowMajor,
    /// First index varies fastest. The layout of host buffers at the boundary.
    ColMajor,
}

/// Number of elements described by `shape`.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Dense 64-bit tensor stored in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(f).collect(),
        }
    }

    /// Rank-1 tensor holding `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data viewed under a different shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean inner product of the flattened tensors.
    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub(crate) fn expect_shape(&self, expected: &[usize], context: &str) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(context, expected, &self.shape));
        }
        Ok(())
    }
}

/// Sequential left-to-right inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x * y)
}

fn check_len(len: usize, shape: &[usize]) -> Result<()> {
    let expected = numel(shape);
    if len != expected {
        return Err(Error::LengthMismatch {
            shape: shape.to_vec(),
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Walks the multi-index space of `shape` in row-major order and calls
/// `visit(row_major_offset, col_major_offset)` for every element.
fn for_each_offset_pair(shape: &[usize], mut visit: impl FnMut(usize, usize)) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let rank = shape.len();
    let mut col_strides = vec![1usize; rank];
    for d in 1..rank {
        col_strides[d] = col_strides[d - 1] * shape[d - 1];
    }
    let mut index = vec![0usize; rank];
    let mut col = 0usize;
    for row in 0..total {
        visit(row, col);
        // odometer increment, last axis fastest
        for d in (0..rank).rev() {
            index[d] += 1;
            col += col_strides[d];
            if index[d] < shape[d] {
                break;
            }
            col -= col_strides[d] * shape[d];
            index[d] = 0;
        }
    }
}

/// Reorders `src` laid out as `from` into `dst` laid out as `to`.
///
/// Pure index permutation: the output holds exactly the input values.
pub fn relayout_into<T: Copy>(
    src: &[T],
    shape: &[usize],
    from: Layout,
    to: Layout,
    dst: &mut [T],
) -> Result<()> {
    check_len(src.len(), shape)?;
    check_len(dst.len(), shape)?;
    match (from, to) {
        (Layout::RowMajor, Layout::RowMajor) | (Layout::ColMajor, Layout::ColMajor) => {
            dst.copy_from_slice(src)
        }
        (Layout::ColMajor, Layout::RowMajor) => {
            for_each_offset_pair(shape, |row, col| dst[row] = src[col])
        }
        (Layout::RowMajor, Layout::ColMajor) => {
            for_each_offset_pair(shape, |row, col| dst[col] = src[row])
        }
    }
    Ok(())
}

/// Reads a column-major host buffer into a row-major tensor.
pub fn colmajor_to_rowmajor(buffer: &[f64], shape: &[usize]) -> Result<Tensor> {
    let mut data = vec![0.0; buffer.len()];
    relayout_into(buffer, shape, Layout::ColMajor, Layout::RowMajor, &mut data)?;
    Tensor::new(shape.to_vec(), data)
}

/// Writes a row-major tensor out as a column-major buffer.
pub fn rowmajor_to_colmajor(t: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    relayout_into(t.data(), t.shape(), Layout::RowMajor, Layout::ColMajor, &mut out)
        .expect("tensor length always matches its shape");
    out
}

/// 32-bit ingest: widens to 64-bit on the way in.
pub fn colmajor_f32_to_rowmajor(buffer: &[f32], shape: &[usize]) -> Result<Tensor> {
    let widened: Vec<f64> = buffer.iter().map(|&v| f64::from(v)).collect();
    colmajor_to_rowmajor(&widened, shape)
}

/// 32-bit egress: narrows with round-to-nearest on the way out.
pub fn rowmajor_to_colmajor_f32(t: &Tensor) -> Vec<f32> {
    rowmajor_to_colmajor(t).into_iter().map(|v| v as f32).collect()
}

fn conv_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let [c_out, c_in, k] = match *weight.shape() {
        [a, b, c] => [a, b, c],
        _ => return Err(Error::shape("conv1d weight rank", &[0, 0, 0], weight.shape())),
    };
    if k % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "conv1d kernel size must be odd, got {k}"
        )));
    }
    match *input.shape() {
        [c, l] if c == c_in => Ok((c_out, c_in, k, l)),
        [_, l] => Err(Error::shape("conv1d input", &[c_in, l], input.shape())),
        _ => Err(Error::shape("conv1d input", &[c_in, 0], input.shape())),
    }
}

/// "Same" zero-padded 1-D convolution without bias.
///
/// `out[c, l] = Σ_i Σ_k w[c, i, k] · x[i, l + k − p]` with `p = (K − 1) / 2`,
/// accumulated with `i` outer and `k` inner.
pub fn conv1d_linear(input: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (c_out, c_in, k, len) = conv_dims(input, weight)?;
    let pad = (k - 1) / 2;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; c_out * len];
    for c in 0..c_out {
        for l in 0..len {
            let mut acc = 0.0;
            for i in 0..c_in {
                let w_row = &w[(c * c_in + i) * k..(c * c_in + i + 1) * k];
                let x_row = &x[i * len..(i + 1) * len];
                for (tap, &wv) in w_row.iter().enumerate() {
                    let pos = l + tap;
                    if pos >= pad && pos - pad < len {
                        acc += wv * x_row[pos - pad];
                    }
                }
            }
            out[c * len + l] = acc;
        }
    }
    Tensor::new(vec![c_out, len], out)
}

/// "Same" zero-padded 1-D convolution with per-output-channel bias.
pub fn conv1d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c_out = weight.shape().first().copied().unwrap_or(0);
    bias.expect_shape(&[c_out], "conv1d bias")?;
    let mut out = conv1d_linear(input, weight)?;
    let len = out.shape()[1];
    for (c, &b) in bias.data().iter().enumerate() {
        for v in &mut out.data_mut()[c * len..(c + 1) * len] {
            *v += b;
        }
    }
    Ok(out)
}

/// Adjoint of [`conv1d_linear`] with respect to its input.
///
/// `x*[i, j] = Σ_c Σ_k w[c, i, k] · z[c, j − k + p]`, accumulated with `c`
/// outer and `k` inner.
pub fn conv1d_transpose(cotangent: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let [c_out, c_in, k] = match *weight.shape() {
        [a, b, c] => [a, b, c],
        _ => return Err(Error::shape("conv1d weight rank", &[0, 0, 0], weight.shape())),
    };
    let len = match *cotangent.shape() {
        [c, l] if c == c_out => l,
        _ => {
            let l = cotangent.shape().get(1).copied().unwrap_or(0);
            return Err(Error::shape("conv1d cotangent", &[c_out, l], cotangent.shape()));
        }
    };
    let pad = (k - 1) / 2;
    let z = cotangent.data();
    let w = weight.data();
    let mut out = vec![0.0; c_in * len];
    for i in 0..c_in {
        for j in 0..len {
            let mut acc = 0.0;
            for c in 0..c_out {
                let w_row = &w[(c * c_in + i) * k..(c * c_in + i + 1) * k];
                let z_row = &z[c * len..(c + 1) * len];
                for (tap, &wv) in w_row.iter().enumerate() {
                    // output position l satisfies l + tap - pad == j
                    let shifted = j + pad;
                    if shifted >= tap && shifted - tap < len {
                        acc += wv * z_row[shifted - tap];
                    }
                }
            }
            out[i * len + j] = acc;
        }
    }
    Tensor::new(vec![c_in, len], out)
}

fn dense_dims(input_len: usize, input_shape: &[usize], weight: &Tensor) -> Result<(usize, usize)> {
    let (m, n) = match *weight.shape() {
        [m, n] => (m, n),
        _ => return Err(Error::shape("dense weight rank", &[0, 0], weight.shape())),
    };
    if input_len != n || input_shape.len() != 1 {
        return Err(Error::shape("dense input", &[n], input_shape));
    }
    Ok((m, n))
}

/// `W · x` for a row-major `(m, n)` weight, row by row.
pub fn matvec(weight: &Tensor, x: &[f64]) -> Vec<f64> {
    let n = weight.shape()[1];
    weight.data().chunks_exact(n).map(|row| dot(row, x)).collect()
}

/// `Wᵀ · z` for a row-major `(m, n)` weight, accumulated over rows in order.
pub fn matvec_transposed(weight: &Tensor, z: &[f64]) -> Vec<f64> {
    let n = weight.shape()[1];
    let mut out = vec![0.0; n];
    for (row, &zr) in weight.data().chunks_exact(n).zip(z) {
        for (o, &w) in out.iter_mut().zip(row) {
            *o += w * zr;
        }
    }
    out
}

/// Affine map `W · x + b` on a rank-1 input.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, _) = dense_dims(input.len(), input.shape(), weight)?;
    bias.expect_shape(&[m], "dense bias")?;
    let mut out = matvec(weight, input.data());
    for (o, &b) in out.iter_mut().zip(bias.data()) {
        *o += b;
    }
    Ok(Tensor::vector(out))
}
