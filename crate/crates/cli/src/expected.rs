//! Expected-values files consumed by the host harness.
//!
//! Plain text, one record per labeled vector:
//!
//! ```text
//! <label> <length>
//! <value>        (length lines, `{:.16e}`)
//! ```
//!
//! Lines starting with `#` are comments. Seventeen significant digits make
//! every value round-trip exactly. All arrays are column-major, batches with
//! the column index slowest.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use tnwp_core::bridge::{self, BridgeError, BridgeResult};
use tnwp_core::{load_model, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub label: String,
    pub values: Vec<f64>,
}

pub fn render(records: &[Record], header: &str) -> String {
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for r in records {
        let _ = writeln!(out, "{} {}", r.label, r.values.len());
        for v in &r.values {
            let _ = writeln!(out, "{v:.16e}");
        }
    }
    out
}

pub fn parse(text: &str) -> anyhow::Result<Vec<Record>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let mut records = Vec::new();
    while let Some((no, head)) = lines.next() {
        let mut parts = head.split_whitespace();
        let (Some(label), Some(len), None) = (parts.next(), parts.next(), parts.next()) else {
            bail!("line {}: expected `<label> <length>`, got {head:?}", no + 1);
        };
        let len: usize = len
            .parse()
            .with_context(|| format!("line {}: bad length {len:?}", no + 1))?;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            let Some((vno, v)) = lines.next() else {
                bail!("record {label}: expected {len} values, found {}", values.len());
            };
            values.push(
                v.trim()
                    .parse::<f64>()
                    .with_context(|| format!("line {}: bad value {v:?}", vno + 1))?,
            );
        }
        records.push(Record {
            label: label.to_string(),
            values,
        });
    }
    Ok(records)
}

fn record(label: &str, values: Vec<f64>) -> Record {
    Record {
        label: label.to_string(),
        values,
    }
}

/// Evaluates the model at seeded probes through the column-major boundary.
///
/// Labels: `x y dx dy ystar xstar xs ys`; `xs`/`ys` carry `batch` columns.
pub fn generate(path: &Path, seed: u64, batch: usize) -> BridgeResult<Vec<Record>> {
    let graph = load_model(path).map_err(BridgeError::from)?;
    let h = bridge::model_new(path, "cpu")?;
    let result = (|| {
        let (n, m) = (graph.input_len(), graph.output_len());
        let (xe, ye) = (graph.input_shape().to_vec(), graph.output_shape().to_vec());
        let mut rng = SeededRng::new(seed);
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.normal()).collect() };
        let (x, dx, ystar) = (draw(n), draw(n), draw(m));
        let xs = draw(n * batch);

        let mut y = vec![0.0; m];
        bridge::model_forward(h, &x, &xe, &mut y, &ye)?;
        let mut dy = vec![0.0; m];
        bridge::model_tangent(h, &x, &xe, &dx, &xe, &mut dy, &ye)?;
        let mut xstar = vec![0.0; n];
        bridge::model_adjoint(h, &x, &xe, &ystar, &ye, &mut xstar, &xe)?;
        let mut ys = vec![0.0; m * batch];
        let (mut xbe, mut ybe) = (xe.clone(), ye.clone());
        xbe.push(batch);
        ybe.push(batch);
        bridge::model_forward_batch(h, &xs, &xbe, &mut ys, &ybe, batch, 1, Default::default())?;

        Ok(vec![
            record("x", x),
            record("y", y),
            record("dx", dx),
            record("dy", dy),
            record("ystar", ystar),
            record("xstar", xstar),
            record("xs", xs),
            record("ys", ys),
        ])
    })();
    let _ = bridge::model_delete(h);
    result
}
