//! Execution strategy for independent work items.
//!
//! With the `parallel` feature (default) work items are spread over the rayon
//! pool; without it everything runs on the calling thread. Each item is
//! computed by the same code either way, so results never depend on the
//! strategy.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Defaults to `Parallel` when that variant exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

impl Execution {
    /// `(0..n).map(f)` under this strategy, results in index order.
    pub fn map_indices<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }

    /// Applies `f(chunk_index, input_chunk, output_chunk)` over paired chunks.
    pub fn for_each_chunk_pair<A, B, F>(
        self,
        input: &[A],
        in_chunk: usize,
        output: &mut [B],
        out_chunk: usize,
        f: F,
    ) where
        A: Sync,
        B: Send,
        F: Fn(usize, &[A], &mut [B]) + Sync + Send,
    {
        match self {
            Execution::Sequential => input
                .chunks(in_chunk)
                .zip(output.chunks_mut(out_chunk))
                .enumerate()
                .for_each(|(i, (a, b))| f(i, a, b)),
            #[cfg(feature = "parallel")]
            Execution::Parallel => input
                .par_chunks(in_chunk)
                .zip(output.par_chunks_mut(out_chunk))
                .enumerate()
                .for_each(|(i, (a, b))| f(i, a, b)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let seq = Execution::Sequential.map_indices(100, |i| (i as f64).sin());
        let dflt = Execution::default().map_indices(100, |i| (i as f64).sin());
        assert_eq!(seq, dflt);
    }

    #[test]
    fn chunk_pairs_cover_everything() {
        let input: Vec<u32> = (0..10).collect();
        let mut output = vec![0u32; 20];
        Execution::default().for_each_chunk_pair(&input, 3, &mut output, 6, |_, a, b| {
            for (j, &v) in a.iter().enumerate() {
                b[2 * j] = v;
                b[2 * j + 1] = v * 10;
            }
        });
        assert_eq!(output[18], 9);
        assert_eq!(output[19], 90);
    }
}
