//! Forward inference, tangent-linear (`J · dx`) and adjoint (`Jᵀ · z`)
//! evaluation over a [`ModelGraph`].
//!
//! A forward pass records a [`ForwardTrace`]: the input of every layer plus
//! the activation derivatives evaluated at the linearization point. Tangent
//! and adjoint sweeps replay that trace forwards and backwards through
//! per-layer JVP/VJP rules. The Jacobian is never formed by the sweeps; it is
//! assembled separately by [`jacobian`] from unit-vector sweeps.
//!
//! The ReLU derivative at exactly zero is taken as zero.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Activation, Conv1d, Dense, Layer, ModelGraph, Normalization, ResidualBlock};
use crate::tensor::{self, conv1d, conv1d_linear, conv1d_transpose, numel, Tensor};

/// Derivative of the activation at each pre-activation value.
fn activation_derivative(activation: Activation, pre: &Tensor, post: &Tensor) -> Tensor {
    match activation {
        Activation::Relu => pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        Activation::Tanh => post.map(|y| 1.0 - y * y),
    }
}

fn activate(activation: Activation, pre: &Tensor) -> Tensor {
    match activation {
        Activation::Relu => pre.map(|v| v.max(0.0)),
        Activation::Tanh => pre.map(f64::tanh),
    }
}

fn smallest_magnitude(t: &Tensor) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, |x, y| x * y)
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, |x, y| x + y)
}

fn conv_lin(c: &Conv1d, x: &Tensor) -> Tensor {
    conv1d_linear(x, &c.weight).expect("shapes checked at graph construction")
}

fn conv_adj(c: &Conv1d, z: &Tensor) -> Tensor {
    conv1d_transpose(z, &c.weight).expect("shapes checked at graph construction")
}

fn normalize_rows(n: &Normalization, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let rows = n.mean.len();
    let levels = x.len() / rows;
    let mut out = x.clone();
    for (r, row) in out.data_mut().chunks_exact_mut(levels).enumerate() {
        let (mean, std) = (n.mean.data()[r], n.std.data()[r]);
        for v in row {
            *v = f(*v, mean, std);
        }
    }
    out
}

fn heads_forward(heads: &[Dense], x: &[f64], with_bias: bool) -> Tensor {
    let mut out = Vec::with_capacity(heads.iter().map(Dense::out_features).sum());
    for h in heads {
        let y = tensor::matvec(&h.weight, x);
        if with_bias {
            out.extend(y.iter().zip(h.bias.data()).map(|(a, b)| a + b));
        } else {
            out.extend(y);
        }
    }
    Tensor::vector(out)
}

fn broadcast_rows(x: &Tensor, vector_rows: usize, scalar_rows: usize, levels: usize) -> Tensor {
    let src = x.data();
    let mut out = Vec::with_capacity((vector_rows + scalar_rows) * levels);
    out.extend_from_slice(&src[..vector_rows * levels]);
    for s in 0..scalar_rows {
        let v = src[vector_rows * levels + s];
        out.extend(std::iter::repeat_n(v, levels));
    }
    Tensor::new(vec![vector_rows + scalar_rows, levels], out).expect("broadcast length")
}

/// Values recorded for one layer at the linearization point.
#[derive(Debug, Clone)]
struct Step {
    input: Tensor,
    /// Activation derivatives, one tensor per activation inside the layer.
    derivs: Vec<Tensor>,
}

struct Evaluated {
    output: Tensor,
    derivs: Vec<Tensor>,
    margin: f64,
}

impl Layer {
    fn eval(&self, x: &Tensor, record: bool) -> Evaluated {
        let mut derivs = Vec::new();
        let mut margin = f64::INFINITY;
        let output = match self {
            Layer::Conv1d(c) => conv1d(x, &c.weight, &c.bias).expect("shapes checked"),
            Layer::Dense(d) => tensor::dense(x, &d.weight, &d.bias).expect("shapes checked"),
            Layer::Relu | Layer::Tanh => {
                let act = if matches!(self, Layer::Relu) {
                    margin = smallest_magnitude(x);
                    Activation::Relu
                } else {
                    Activation::Tanh
                };
                let y = activate(act, x);
                if record {
                    derivs.push(activation_derivative(act, x, &y));
                }
                y
            }
            Layer::Residual(ResidualBlock {
                first,
                second,
                activation,
            }) => {
                let h1 = conv1d(x, &first.weight, &first.bias).expect("shapes checked");
                let a1 = activate(*activation, &h1);
                let h2 = conv1d(&a1, &second.weight, &second.bias).expect("shapes checked");
                let a2 = activate(*activation, &h2);
                if *activation == Activation::Relu {
                    margin = smallest_magnitude(&h1).min(smallest_magnitude(&h2));
                }
                if record {
                    derivs.push(activation_derivative(*activation, &h1, &a1));
                    derivs.push(activation_derivative(*activation, &h2, &a2));
                }
                add(x, &a2)
            }
            Layer::InputNormalize(n) => {
                let centered = x.zip_map(&n.mean, |v, m| v - m);
                centered.zip_map(&n.std, |v, s| v / s)
            }
            Layer::OutputDenormalize(n) => normalize_rows(n, x, |v, m, s| v * s + m),
            Layer::SplitHeads(heads) => heads_forward(heads, x.data(), true),
            Layer::BroadcastScalarRows {
                vector_rows,
                scalar_rows,
                levels,
            } => broadcast_rows(x, *vector_rows, *scalar_rows, *levels),
        };
        Evaluated {
            output,
            derivs,
            margin,
        }
    }

    fn jvp(&self, step: &Step, dx: &Tensor) -> Tensor {
        match self {
            Layer::Conv1d(c) => conv_lin(c, dx),
            Layer::Dense(d) => Tensor::vector(tensor::matvec(&d.weight, dx.data())),
            Layer::Relu | Layer::Tanh => hadamard(&step.derivs[0], dx),
            Layer::Residual(r) => {
                let t1 = hadamard(&step.derivs[0], &conv_lin(&r.first, dx));
                let t2 = hadamard(&step.derivs[1], &conv_lin(&r.second, &t1));
                add(dx, &t2)
            }
            Layer::InputNormalize(n) => dx.zip_map(&n.std, |v, s| v / s),
            Layer::OutputDenormalize(n) => normalize_rows(n, dx, |v, _, s| v * s),
            Layer::SplitHeads(heads) => heads_forward(heads, dx.data(), false),
            Layer::BroadcastScalarRows {
                vector_rows,
                scalar_rows,
                levels,
            } => broadcast_rows(dx, *vector_rows, *scalar_rows, *levels),
        }
    }

    fn vjp(&self, step: &Step, z: &Tensor) -> Tensor {
        let input_shape = step.input.shape();
        match self {
            Layer::Conv1d(c) => conv_adj(c, z),
            Layer::Dense(d) => Tensor::vector(tensor::matvec_transposed(&d.weight, z.data())),
            Layer::Relu | Layer::Tanh => hadamard(&step.derivs[0], z),
            Layer::Residual(r) => {
                let g2 = hadamard(&step.derivs[1], z);
                let g1 = hadamard(&step.derivs[0], &conv_adj(&r.second, &g2));
                add(z, &conv_adj(&r.first, &g1))
            }
            Layer::InputNormalize(n) => z.zip_map(&n.std, |v, s| v / s),
            Layer::OutputDenormalize(n) => normalize_rows(n, z, |v, _, s| v * s),
            Layer::SplitHeads(heads) => {
                let mut acc = vec![0.0; numel(input_shape)];
                let mut offset = 0;
                for h in heads {
                    let m = h.out_features();
                    let part = tensor::matvec_transposed(&h.weight, &z.data()[offset..offset + m]);
                    for (a, p) in acc.iter_mut().zip(part) {
                        *a += p;
                    }
                    offset += m;
                }
                Tensor::new(input_shape.to_vec(), acc).expect("head input length")
            }
            Layer::BroadcastScalarRows {
                vector_rows,
                scalar_rows,
                levels,
            } => {
                let src = z.data();
                let split = vector_rows * levels;
                let mut out = Vec::with_capacity(split + scalar_rows);
                out.extend_from_slice(&src[..split]);
                for row in src[split..].chunks_exact(*levels) {
                    out.push(row.iter().fold(0.0, |acc, v| acc + v));
                }
                Tensor::vector(out)
            }
        }
    }
}

fn check_input(graph: &ModelGraph, x: &Tensor) -> Result<()> {
    x.expect_shape(graph.input_shape(), "model input")?;
    if !x.is_finite() {
        return Err(Error::InvalidInput("model input contains non-finite values".into()));
    }
    Ok(())
}

/// Forward pass without recording a trace. Bit-identical to the output of
/// [`forward`].
pub fn infer(graph: &ModelGraph, x: &Tensor) -> Result<Tensor> {
    check_input(graph, x)?;
    let mut current = x.clone();
    for layer in graph.layers() {
        current = layer.eval(&current, false).output;
    }
    Ok(current)
}

/// Forward pass recording everything the tangent and adjoint sweeps need.
pub fn forward<'g>(graph: &'g ModelGraph, x: &Tensor) -> Result<(Tensor, ForwardTrace<'g>)> {
    check_input(graph, x)?;
    let mut steps = Vec::with_capacity(graph.layers().len());
    let mut current = x.clone();
    let mut relu_margin = f64::INFINITY;
    for layer in graph.layers() {
        let evaluated = layer.eval(&current, true);
        relu_margin = relu_margin.min(evaluated.margin);
        steps.push(Step {
            input: current,
            derivs: evaluated.derivs,
        });
        current = evaluated.output;
    }
    let trace = ForwardTrace {
        graph,
        input: x.clone(),
        steps,
        output: current.clone(),
        relu_margin,
    };
    Ok((current, trace))
}

/// The linearization of a graph at one input, recorded by [`forward`].
///
/// Sweeps borrow the trace immutably and can be repeated from any number of
/// threads.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'g> {
    graph: &'g ModelGraph,
    input: Tensor,
    steps: Vec<Step>,
    output: Tensor,
    relu_margin: f64,
}

impl<'g> ForwardTrace<'g> {
    pub fn graph(&self) -> &'g ModelGraph {
        self.graph
    }

    /// The linearization point.
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Number of recorded layers.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Input activation recorded for layer `index`.
    pub fn layer_input(&self, index: usize) -> &Tensor {
        &self.steps[index].input
    }

    /// Smallest |pre-activation| over every ReLU in the graph, or infinity
    /// when there is none. Probes closer than a finite-difference step to a
    /// kink should be discarded.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    /// `J · dx`, by a forward sweep over the trace.
    pub fn tangent(&self, dx: &Tensor) -> Result<Tensor> {
        dx.expect_shape(self.graph.input_shape(), "tangent perturbation")?;
        let mut current = dx.clone();
        for (layer, step) in self.graph.layers().iter().zip(&self.steps) {
            current = layer.jvp(step, &current);
        }
        Ok(current)
    }

    /// `Jᵀ · z`, by a reverse sweep over the trace.
    pub fn adjoint(&self, ystar: &Tensor) -> Result<Tensor> {
        ystar.expect_shape(self.graph.output_shape(), "adjoint sensitivity")?;
        let mut current = ystar.clone();
        for (layer, step) in self.graph.layers().iter().zip(&self.steps).rev() {
            current = layer.vjp(step, &current);
        }
        // an empty chain still has to hand back input-shaped sensitivities
        current.reshape(self.graph.input_shape())
    }
}

pub fn tangent(trace: &ForwardTrace<'_>, dx: &Tensor) -> Result<Tensor> {
    trace.tangent(dx)
}

pub fn adjoint(trace: &ForwardTrace<'_>, ystar: &Tensor) -> Result<Tensor> {
    trace.adjoint(ystar)
}

/// `k = ⟨M(x0), z⟩` and its gradient with respect to `x0`, which is `Jᵀ · z`.
pub fn scalar_loss_adjoint(graph: &ModelGraph, x0: &Tensor, z: &Tensor) -> Result<(f64, Tensor)> {
    let (y, trace) = forward(graph, x0)?;
    z.expect_shape(graph.output_shape(), "loss weights")?;
    let k = y.dot(z);
    Ok((k, trace.adjoint(z)?))
}

/// A model linearized at one point: the output there plus both sweeps.
pub trait Linearization: Sync {
    fn input_shape(&self) -> &[usize];
    fn output_shape(&self) -> &[usize];
    fn output(&self) -> &Tensor;
    fn tangent(&self, dx: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, ystar: &Tensor) -> Result<Tensor>;
}

/// Anything that can be evaluated and linearized.
pub trait Differentiable: Sync {
    fn name(&self) -> &str;
    fn input_shape(&self) -> &[usize];
    fn output_shape(&self) -> &[usize];
    fn evaluate(&self, x: &Tensor) -> Result<Tensor>;
    fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>>;
    /// Smallest distance to a kink over the activations at `x`.
    fn kink_margin(&self, x: &Tensor) -> Result<f64>;
    fn is_smooth(&self) -> bool;
    fn is_affine(&self) -> bool;
}

impl Linearization for ForwardTrace<'_> {
    fn input_shape(&self) -> &[usize] {
        self.graph.input_shape()
    }

    fn output_shape(&self) -> &[usize] {
        self.graph.output_shape()
    }

    fn output(&self) -> &Tensor {
        &self.output
    }

    fn tangent(&self, dx: &Tensor) -> Result<Tensor> {
        ForwardTrace::tangent(self, dx)
    }

    fn adjoint(&self, ystar: &Tensor) -> Result<Tensor> {
        ForwardTrace::adjoint(self, ystar)
    }
}

impl Differentiable for ModelGraph {
    fn name(&self) -> &str {
        ModelGraph::name(self)
    }

    fn input_shape(&self) -> &[usize] {
        ModelGraph::input_shape(self)
    }

    fn output_shape(&self) -> &[usize] {
        ModelGraph::output_shape(self)
    }

    fn evaluate(&self, x: &Tensor) -> Result<Tensor> {
        infer(self, x)
    }

    fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>> {
        Ok(Box::new(forward(self, x)?.1))
    }

    fn kink_margin(&self, x: &Tensor) -> Result<f64> {
        Ok(forward(self, x)?.1.relu_margin())
    }

    fn is_smooth(&self) -> bool {
        ModelGraph::is_smooth(self)
    }

    fn is_affine(&self) -> bool {
        ModelGraph::is_affine(self)
    }
}

/// Dense `∂y_p/∂x_q`, rows indexed by flattened output, columns by
/// flattened input (row-major flattening on both sides).
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    output_shape: Vec<usize>,
    input_shape: Vec<usize>,
    data: Vec<f64>,
}

fn unflatten(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = flat % shape[d];
        flat /= shape[d];
    }
    idx
}

impl JacobianMatrix {
    pub fn rows(&self) -> usize {
        numel(&self.output_shape)
    }

    pub fn cols(&self) -> usize {
        numel(&self.input_shape)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    /// Row-major `(rows, cols)` entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.cols();
        &self.data[row * n..(row + 1) * n]
    }

    /// `(variable, level, …)` coordinates of output row `row`.
    pub fn output_coords(&self, row: usize) -> Vec<usize> {
        unflatten(row, &self.output_shape)
    }

    /// `(variable, level, …)` coordinates of input column `col`.
    pub fn input_coords(&self, col: usize) -> Vec<usize> {
        unflatten(col, &self.input_shape)
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows(), self.cols()], self.data.clone()).expect("jacobian size")
    }
}

fn unit(shape: &[usize], index: usize) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut()[index] = 1.0;
    t
}

/// Assembles `J` row by row from adjoint sweeps with unit sensitivities.
pub fn jacobian_by_rows(lin: &dyn Linearization, exec: Execution) -> Result<JacobianMatrix> {
    let out_shape = lin.output_shape().to_vec();
    let in_shape = lin.input_shape().to_vec();
    let rows = exec.map_indices(numel(&out_shape), |p| lin.adjoint(&unit(&out_shape, p)));
    let mut data = Vec::with_capacity(numel(&out_shape) * numel(&in_shape));
    for row in rows {
        data.extend_from_slice(row?.data());
    }
    Ok(JacobianMatrix {
        output_shape: out_shape,
        input_shape: in_shape,
        data,
    })
}

/// Assembles `J` column by column from tangent sweeps with unit perturbations.
pub fn jacobian_by_columns(lin: &dyn Linearization, exec: Execution) -> Result<JacobianMatrix> {
    let out_shape = lin.output_shape().to_vec();
    let in_shape = lin.input_shape().to_vec();
    let (m, n) = (numel(&out_shape), numel(&in_shape));
    let cols = exec.map_indices(n, |q| lin.tangent(&unit(&in_shape, q)));
    let mut data = vec![0.0; m * n];
    for (q, col) in cols.into_iter().enumerate() {
        for (p, &v) in col?.data().iter().enumerate() {
            data[p * n + q] = v;
        }
    }
    Ok(JacobianMatrix {
        output_shape: out_shape,
        input_shape: in_shape,
        data,
    })
}

/// Jacobian at `x`, using `min(m, n)` sweeps; ties go to adjoint sweeps.
pub fn jacobian(graph: &ModelGraph, x: &Tensor) -> Result<JacobianMatrix> {
    let (_, trace) = forward(graph, x)?;
    if graph.output_len() <= graph.input_len() {
        jacobian_by_rows(&trace, Execution::default())
    } else {
        jacobian_by_columns(&trace, Execution::default())
    }
}
