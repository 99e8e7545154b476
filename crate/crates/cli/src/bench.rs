//! Timing of the batched forward path through the boundary, per chunk size.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use tnwp_core::bridge::{self, BridgeError, BridgeResult, ModelHandle};
use tnwp_core::{load_model, Execution, SeededRng};

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub chunk: usize,
    pub mean_seconds: f64,
    pub columns_per_second: f64,
    /// Output bit-identical to the first chunk size's output.
    pub matches_first: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub model: String,
    pub batch: usize,
    pub reps: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn invariant(&self) -> bool {
        self.rows.iter().all(|r| r.matches_first)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {} batch {} reps {}", self.model, self.batch, self.reps)?;
        writeln!(f, "{:>8} {:>14} {:>16}  identical", "chunk", "mean (s)", "columns/s")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>8} {:>14.6} {:>16.1}  {}",
                r.chunk,
                r.mean_seconds,
                r.columns_per_second,
                if r.matches_first { "yes" } else { "NO" }
            )?;
        }
        write!(f, "chunk invariance: {}", if self.invariant() { "PASS" } else { "FAIL" })
    }
}

struct Loaded(ModelHandle);

impl Drop for Loaded {
    fn drop(&mut self) {
        let _ = bridge::model_delete(self.0);
    }
}

/// Runs `reps` batched forwards for each chunk size on seeded inputs.
pub fn run_bench(
    path: &Path,
    batch: usize,
    chunks: &[usize],
    reps: usize,
    seed: u64,
    exec: Execution,
) -> BridgeResult<BenchReport> {
    let graph = load_model(path).map_err(BridgeError::from)?;
    let handle = Loaded(bridge::model_new(path, "cpu")?);
    let mut xe = graph.input_shape().to_vec();
    xe.push(batch);
    let mut ye = graph.output_shape().to_vec();
    ye.push(batch);

    let mut rng = SeededRng::new(seed);
    let xs: Vec<f64> = (0..graph.input_len() * batch).map(|_| rng.normal()).collect();
    let mut first: Option<Vec<u64>> = None;
    let mut rows = Vec::with_capacity(chunks.len());
    for &chunk in chunks {
        let mut ys = vec![0.0; graph.output_len() * batch];
        let start = Instant::now();
        for _ in 0..reps.max(1) {
            bridge::model_forward_batch(handle.0, &xs, &xe, &mut ys, &ye, batch, chunk, exec)?;
        }
        let mean = start.elapsed().as_secs_f64() / reps.max(1) as f64;
        let bits: Vec<u64> = ys.iter().map(|v| v.to_bits()).collect();
        let matches_first = match &first {
            None => {
                first = Some(bits);
                true
            }
            Some(f) => *f == bits,
        };
        rows.push(BenchRow {
            chunk,
            mean_seconds: mean,
            columns_per_second: if mean > 0.0 { batch as f64 / mean } else { f64::INFINITY },
            matches_first,
        });
    }
    Ok(BenchReport {
        model: graph.name().to_string(),
        batch,
        reps: reps.max(1),
        rows,
    })
}
