//! Variational state estimation with the adjoint as the gradient.
//!
//! A truth state `x_t` is drawn from the seed and observed through the model,
//! `y_obs = M(x_t)`. Starting from `x = 0`, gradient descent minimizes
//! `J(x) = ½‖M(x) − y_obs‖²`, whose gradient is `Jᵀ (M(x) − y_obs)`.

use serde::Serialize;
use tnwp_core::{forward, infer, ModelGraph, Result, SeededRng, Tensor};

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    IterationLimit,
    ZeroGradient,
    /// No step length decreased the cost enough; the cost is at its
    /// floating-point floor.
    LineSearchFailed,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdvarResult {
    /// Cost before the first step, then after every accepted step.
    pub costs: Vec<f64>,
    pub stop: StopReason,
    /// `‖x − x_t‖ / ‖x_t‖` at the final iterate.
    pub state_error: f64,
    #[serde(skip)]
    pub truth: Tensor,
    #[serde(skip)]
    pub estimate: Tensor,
}

impl FdvarResult {
    pub fn iterations(&self) -> usize {
        self.costs.len() - 1
    }

    /// First iteration whose cost is at most `fraction` of the initial cost.
    pub fn reached(&self, fraction: f64) -> Option<usize> {
        let target = fraction * self.costs[0];
        self.costs.iter().position(|&c| c <= target)
    }

    pub fn is_monotone(&self) -> bool {
        self.costs.windows(2).all(|w| w[1] <= w[0])
    }
}

fn cost_and_residual(model: &ModelGraph, x: &Tensor, obs: &Tensor) -> Result<(f64, Tensor)> {
    let r = infer(model, x)?.zip_map(obs, |a, b| a - b);
    Ok((0.5 * r.dot(&r), r))
}

/// Gradient of the cost at `x`.
pub fn gradient(model: &ModelGraph, x: &Tensor, obs: &Tensor) -> Result<Tensor> {
    let (y, trace) = forward(model, x)?;
    trace.adjoint(&y.zip_map(obs, |a, b| a - b))
}

pub fn truth_state(model: &ModelGraph, seed: u64) -> Tensor {
    SeededRng::new(seed).normal_tensor(model.input_shape())
}

/// Steepest descent with Armijo backtracking from a unit trial step.
pub fn run_fdvar(model: &ModelGraph, seed: u64, iters: usize) -> Result<FdvarResult> {
    let truth = truth_state(model, seed);
    let obs = infer(model, &truth)?;
    let mut x = Tensor::zeros(model.input_shape());
    let (mut cost, _) = cost_and_residual(model, &x, &obs)?;
    let mut costs = vec![cost];
    let mut stop = StopReason::IterationLimit;

    'outer: for it in 0..iters {
        let g = gradient(model, &x, &obs)?;
        let g2 = g.dot(&g);
        if g2 == 0.0 {
            stop = StopReason::ZeroGradient;
            break;
        }
        let mut alpha = 1.0;
        for _ in 0..MAX_HALVINGS {
            let trial = x.zip_map(&g, |a, b| a - alpha * b);
            let (c, _) = cost_and_residual(model, &trial, &obs)?;
            if c <= cost - ARMIJO_C * alpha * g2 {
                log::debug!("iteration {it}: cost {c:.6e}, step {alpha:e}");
                x = trial;
                cost = c;
                costs.push(cost);
                continue 'outer;
            }
            alpha *= 0.5;
        }
        stop = StopReason::LineSearchFailed;
        break;
    }

    let state_error = x.zip_map(&truth, |a, b| a - b).norm() / truth.norm();
    Ok(FdvarResult {
        costs,
        stop,
        state_error,
        truth,
        estimate: x,
    })
}
