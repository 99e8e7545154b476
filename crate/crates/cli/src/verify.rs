//! Numerical checks of a model's tangent and adjoint against each other and
//! against finite differences of the plain forward pass.
//!
//! Every check draws its probes from a [`SeededRng`], so a report is a pure
//! function of the model, the seed and the options.

use std::fmt;

use serde::Serialize;
use tnwp_core::autodiff::{jacobian_by_columns, jacobian_by_rows, Differentiable, Linearization};
use tnwp_core::{Execution, Result, SeededRng, Tensor};

pub const DOT_PRODUCT_TOL: f64 = 1e-12;
pub const JACOBIAN_FD_TOL: f64 = 1e-6;
pub const JACOBIAN_SWEEP_TOL: f64 = 1e-13;
pub const LINEARITY_TOL: f64 = 1e-13;
pub const FD_STEP: f64 = 1e-6;

/// Accepted band for `r(ε/2) / r(ε)` on smooth models is `0.25 ± 0.05`.
pub const TAYLOR_RATIO_TOL: f64 = 0.05;
/// Bound on `r(ε) / ‖J δ‖` where the remainder should vanish.
pub const TAYLOR_AFFINE_TOL: f64 = 1e-8;
pub const TAYLOR_FIRST_ORDER_TOL: f64 = 1e-6;

const TAYLOR_STEPS: [f64; 4] = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
const FIRST_ORDER_STEP: f64 = 1e-7;
const PROBE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub samples: usize,
    /// Probes used for the Jacobian checks, capped by `samples`.
    pub jacobian_probes: usize,
    /// Jacobian checks are skipped when `outputs × inputs` exceeds this.
    pub jacobian_cap: usize,
    /// Minimum distance of probes from a ReLU kink.
    pub kink_margin: f64,
    pub exec: Execution,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            samples: 100,
            jacobian_probes: 3,
            jacobian_cap: 1_000_000,
            kink_margin: 1e-6,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub check: String,
    pub model: String,
    pub samples: usize,
    pub max_error: f64,
    pub threshold: f64,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckRecord {
    fn measured(check: &str, model: &str, samples: usize, max_error: f64, threshold: f64) -> Self {
        // NaN compares false, so it fails
        let status = if max_error <= threshold {
            Status::Pass
        } else {
            Status::Fail
        };
        CheckRecord {
            check: check.to_string(),
            model: model.to_string(),
            samples,
            max_error,
            threshold,
            status,
            note: None,
        }
    }

    fn skipped(check: &str, model: &str, threshold: f64, note: String) -> Self {
        CheckRecord {
            check: check.to_string(),
            model: model.to_string(),
            samples: 0,
            max_error: 0.0,
            threshold,
            status: Status::Skipped,
            note: Some(note),
        }
    }

    /// Skipped checks do not fail a report.
    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub model: String,
    pub seed: u64,
    pub samples: usize,
    pub passed: bool,
    pub checks: Vec<CheckRecord>,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.check == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {} (seed {}, {} samples)", self.model, self.seed, self.samples)?;
        writeln!(
            f,
            "{:<22} {:>8} {:>12} {:>12}  status",
            "check", "samples", "max error", "threshold"
        )?;
        for c in &self.checks {
            write!(
                f,
                "{:<22} {:>8} {:>12.3e} {:>12.3e}  {}",
                c.check, c.samples, c.max_error, c.threshold, c.status
            )?;
            if let Some(note) = &c.note {
                write!(f, " ({note})")?;
            }
            writeln!(f)?;
        }
        write!(f, "overall: {}", if self.passed { "PASS" } else { "FAIL" })
    }
}

/// Draws standard-normal inputs, rejecting those within `margin` of a kink
/// when the model has any.
fn draw_input(model: &dyn Differentiable, rng: &mut SeededRng, margin: f64) -> Result<Tensor> {
    if model.is_smooth() {
        return Ok(rng.normal_tensor(model.input_shape()));
    }
    for _ in 0..PROBE_ATTEMPTS {
        let x = rng.normal_tensor(model.input_shape());
        if model.kink_margin(&x)? > margin {
            return Ok(x);
        }
    }
    Err(tnwp_core::Error::InvalidInput(format!(
        "no input at distance {margin:e} from every kink in {PROBE_ATTEMPTS} draws"
    )))
}

fn unit_direction(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let d = rng.normal_tensor(shape);
    let n = d.norm();
    d.map(|v| v / n)
}

fn diff_norm_rel(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.zip_map(b, |x, y| x - y).norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / b.norm()
    }
}

/// `‖M(x + δ) − M(x) − J δ‖` and `‖J δ‖`, where `δ` is the perturbation
/// actually realized in floating point.
fn remainder(
    model: &dyn Differentiable,
    lin: &dyn Linearization,
    x: &Tensor,
    dx: &Tensor,
    eps: f64,
) -> Result<(f64, f64)> {
    let moved = x.zip_map(dx, |a, d| a + eps * d);
    let delta = moved.zip_map(x, |a, b| a - b);
    let jd = lin.tangent(&delta)?;
    let y = model.evaluate(&moved)?;
    let r = y
        .data()
        .iter()
        .zip(lin.output().data())
        .zip(jd.data())
        .map(|((yp, y0), t)| {
            let e = yp - y0 - t;
            e * e
        })
        .sum::<f64>()
        .sqrt();
    Ok((r, jd.norm()))
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Taylor remainder check. Smooth nonlinear models must show second-order
/// decay; affine models a vanishing remainder; piecewise-linear models a
/// first-order fit at kink-free probes.
pub fn check_taylor(model: &dyn Differentiable, opts: &VerifyOptions) -> Result<CheckRecord> {
    let mut rng = SeededRng::new(opts.seed ^ 0x7a11);
    let name = model.name();
    let mut worst: f64 = 0.0;
    let (check, threshold) = if model.is_affine() {
        ("taylor-affine", TAYLOR_AFFINE_TOL)
    } else if model.is_smooth() {
        ("taylor-second-order", TAYLOR_RATIO_TOL)
    } else {
        ("taylor-first-order", TAYLOR_FIRST_ORDER_TOL)
    };
    for _ in 0..opts.samples {
        let x = draw_input(model, &mut rng, opts.kink_margin)?;
        let dx = unit_direction(&mut rng, model.input_shape());
        let lin = model.linearize(&x)?;
        let err = if model.is_affine() {
            let (r, jd) = remainder(model, lin.as_ref(), &x, &dx, TAYLOR_STEPS[0])?;
            ratio_or_zero(r, jd)
        } else if model.is_smooth() {
            let rs = TAYLOR_STEPS
                .iter()
                .map(|&e| remainder(model, lin.as_ref(), &x, &dx, e).map(|p| p.0))
                .collect::<Result<Vec<_>>>()?;
            rs.windows(2)
                .map(|w| {
                    if w[0] == 0.0 && w[1] == 0.0 {
                        0.0
                    } else {
                        (w[1] / w[0] - 0.25).abs()
                    }
                })
                .fold(0.0, f64::max)
        } else {
            let (r, jd) = remainder(model, lin.as_ref(), &x, &dx, FIRST_ORDER_STEP)?;
            ratio_or_zero(r, jd)
        };
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok(CheckRecord::measured(check, name, opts.samples, worst, threshold))
}

/// `|⟨J dx, z⟩ − ⟨dx, Jᵀ z⟩| / (1 + |⟨J dx, z⟩|)` over fresh `(x, dx, z)`.
pub fn check_dot_product(model: &dyn Differentiable, opts: &VerifyOptions) -> Result<CheckRecord> {
    let mut rng = SeededRng::new(opts.seed ^ 0xd07);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.samples {
        let x = rng.normal_tensor(model.input_shape());
        let dx = rng.normal_tensor(model.input_shape());
        let z = rng.normal_tensor(model.output_shape());
        let lin = model.linearize(&x)?;
        let lhs = lin.tangent(&dx)?.dot(&z);
        let rhs = dx.dot(&lin.adjoint(&z)?);
        let err = (lhs - rhs).abs() / (1.0 + lhs.abs());
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok(CheckRecord::measured(
        "dot-product",
        model.name(),
        opts.samples,
        worst,
        DOT_PRODUCT_TOL,
    ))
}

/// Column `q` of the Jacobian by central differences with the realized step.
fn fd_column(model: &dyn Differentiable, x: &Tensor, q: usize, h: f64) -> Result<Vec<f64>> {
    let mut plus = x.clone();
    let mut minus = x.clone();
    plus.data_mut()[q] += h;
    minus.data_mut()[q] -= h;
    let step = plus.data()[q] - minus.data()[q];
    let yp = model.evaluate(&plus)?;
    let ym = model.evaluate(&minus)?;
    Ok(yp.data().iter().zip(ym.data()).map(|(a, b)| (a - b) / step).collect())
}

fn entry_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, |m, e| if e.is_nan() { f64::INFINITY } else { m.max(e) })
}

/// Both Jacobian checks: assembled-by-rows against finite differences, and
/// rows against columns.
pub fn check_jacobian(model: &dyn Differentiable, opts: &VerifyOptions) -> Result<[CheckRecord; 2]> {
    let name = model.name();
    let m: usize = model.output_shape().iter().product();
    let n: usize = model.input_shape().iter().product();
    if m.saturating_mul(n) > opts.jacobian_cap {
        let note = format!("{m}x{n} exceeds the {} entry cap", opts.jacobian_cap);
        return Ok([
            CheckRecord::skipped("jacobian-fd", name, JACOBIAN_FD_TOL, note.clone()),
            CheckRecord::skipped("jacobian-sweeps", name, JACOBIAN_SWEEP_TOL, note),
        ]);
    }
    let probes = opts.jacobian_probes.min(opts.samples);
    let mut rng = SeededRng::new(opts.seed ^ 0x7ac0);
    let (mut fd_worst, mut sweep_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..probes {
        let x = draw_input(model, &mut rng, opts.kink_margin)?;
        let lin = model.linearize(&x)?;
        let by_rows = jacobian_by_rows(lin.as_ref(), opts.exec)?;
        let by_cols = jacobian_by_columns(lin.as_ref(), opts.exec)?;
        sweep_worst = sweep_worst.max(entry_rel(by_rows.data(), by_cols.data()));

        let cols = opts
            .exec
            .map_indices(n, |q| fd_column(model, &x, q, FD_STEP))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut fd = vec![0.0; m * n];
        for (q, col) in cols.iter().enumerate() {
            for p in 0..m {
                fd[p * n + q] = col[p];
            }
        }
        fd_worst = fd_worst.max(entry_rel(by_rows.data(), &fd));
    }
    Ok([
        CheckRecord::measured("jacobian-fd", name, probes, fd_worst, JACOBIAN_FD_TOL),
        CheckRecord::measured("jacobian-sweeps", name, probes, sweep_worst, JACOBIAN_SWEEP_TOL),
    ])
}

/// `L(a u + b v) = a L(u) + b L(v)` for both sweeps.
pub fn check_linearity(model: &dyn Differentiable, opts: &VerifyOptions) -> Result<[CheckRecord; 2]> {
    let mut rng = SeededRng::new(opts.seed ^ 0x11e4);
    let (mut tan_worst, mut adj_worst): (f64, f64) = (0.0, 0.0);
    let combine = |a: f64, u: &Tensor, b: f64, v: &Tensor| u.zip_map(v, |p, q| a * p + b * q);
    for _ in 0..opts.samples {
        let x = rng.normal_tensor(model.input_shape());
        let lin = model.linearize(&x)?;
        let (a, b) = (rng.normal(), rng.normal());

        let u = rng.normal_tensor(model.input_shape());
        let v = rng.normal_tensor(model.input_shape());
        let lhs = lin.tangent(&combine(a, &u, b, &v))?;
        let rhs = combine(a, &lin.tangent(&u)?, b, &lin.tangent(&v)?);
        tan_worst = tan_worst.max(diff_norm_rel(&lhs, &rhs));

        let u = rng.normal_tensor(model.output_shape());
        let v = rng.normal_tensor(model.output_shape());
        let lhs = lin.adjoint(&combine(a, &u, b, &v))?;
        let rhs = combine(a, &lin.adjoint(&u)?, b, &lin.adjoint(&v)?);
        adj_worst = adj_worst.max(diff_norm_rel(&lhs, &rhs));
    }
    let nan_fails = |e: f64| if e.is_nan() { f64::INFINITY } else { e };
    Ok([
        CheckRecord::measured(
            "tangent-linearity",
            model.name(),
            opts.samples,
            nan_fails(tan_worst),
            LINEARITY_TOL,
        ),
        CheckRecord::measured(
            "adjoint-linearity",
            model.name(),
            opts.samples,
            nan_fails(adj_worst),
            LINEARITY_TOL,
        ),
    ])
}

/// Runs every check and combines them into one report.
pub fn verify(model: &dyn Differentiable, opts: &VerifyOptions) -> Result<VerificationReport> {
    let mut checks = vec![check_taylor(model, opts)?, check_dot_product(model, opts)?];
    checks.extend(check_jacobian(model, opts)?);
    checks.extend(check_linearity(model, opts)?);
    Ok(VerificationReport {
        model: model.name().to_string(),
        seed: opts.seed,
        samples: opts.samples,
        passed: checks.iter().all(CheckRecord::passed),
        checks,
    })
}

/// Wrappers that corrupt one sweep, for confirming that the checks catch
/// broken derivative rules.
pub mod fault {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Sweep {
        Tangent,
        Adjoint,
    }

    /// Perturbs the first entry of one sweep's output by `1e-6` times the
    /// first entry of its input.
    pub struct Sabotaged<'m> {
        pub inner: &'m dyn Differentiable,
        pub sweep: Sweep,
    }

    struct SabotagedLinearization<'a> {
        inner: Box<dyn Linearization + 'a>,
        sweep: Sweep,
    }

    fn corrupt(mut out: Tensor, seed: &Tensor) -> Tensor {
        let bump = 1e-6 * seed.data()[0];
        out.data_mut()[0] += bump;
        out
    }

    impl Linearization for SabotagedLinearization<'_> {
        fn input_shape(&self) -> &[usize] {
            self.inner.input_shape()
        }

        fn output_shape(&self) -> &[usize] {
            self.inner.output_shape()
        }

        fn output(&self) -> &Tensor {
            self.inner.output()
        }

        fn tangent(&self, dx: &Tensor) -> Result<Tensor> {
            let dy = self.inner.tangent(dx)?;
            Ok(match self.sweep {
                Sweep::Tangent => corrupt(dy, dx),
                Sweep::Adjoint => dy,
            })
        }

        fn adjoint(&self, ystar: &Tensor) -> Result<Tensor> {
            let xs = self.inner.adjoint(ystar)?;
            Ok(match self.sweep {
                Sweep::Adjoint => corrupt(xs, ystar),
                Sweep::Tangent => xs,
            })
        }
    }

    impl Differentiable for Sabotaged<'_> {
        fn name(&self) -> &str {
            self.inner.name()
        }

        fn input_shape(&self) -> &[usize] {
            self.inner.input_shape()
        }

        fn output_shape(&self) -> &[usize] {
            self.inner.output_shape()
        }

        fn evaluate(&self, x: &Tensor) -> Result<Tensor> {
            self.inner.evaluate(x)
        }

        fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>> {
            Ok(Box::new(SabotagedLinearization {
                inner: self.inner.linearize(x)?,
                sweep: self.sweep,
            }))
        }

        fn kink_margin(&self, x: &Tensor) -> Result<f64> {
            self.inner.kink_margin(x)
        }

        fn is_smooth(&self) -> bool {
            self.inner.is_smooth()
        }

        fn is_affine(&self) -> bool {
            self.inner.is_affine()
        }
    }
}
