//! Deterministic model files for tests, demos and the host harness.

use std::path::{Path, PathBuf};

use tnwp_core::model::{
    build_conv_tanh_model, build_dense_model, build_identity_model, build_reference_gwd_model,
    build_tanh_model,
};
use tnwp_core::{save_model, ModelGraph, Result};

pub const IDENTITY_SIZE: usize = 8;
pub const DENSE_SIZE: usize = 16;
pub const CONV_TANH_LEVELS: usize = 8;

/// Every fixture graph, named by its file stem.
pub fn fixture_graphs(seed: u64) -> Vec<(&'static str, ModelGraph)> {
    vec![
        ("identity", build_identity_model(IDENTITY_SIZE)),
        ("dense", build_dense_model(seed, DENSE_SIZE)),
        ("tanh-mlp", build_tanh_model(seed, 6, 12, 4)),
        ("conv-tanh", build_conv_tanh_model(seed, CONV_TANH_LEVELS)),
        ("reference-gwd", build_reference_gwd_model(seed)),
    ]
}

/// Writes `<name>.tnwp` for every fixture into `dir`, creating it if needed.
pub fn write_fixtures(dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    fixture_graphs(seed)
        .into_iter()
        .map(|(name, g)| {
            let path = dir.join(format!("{name}.tnwp"));
            save_model(&g, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{verify, VerifyOptions};
    use tnwp_core::load_model;

    #[test]
    fn written_corpus_loads_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_fixtures(dir.path(), 3).unwrap();
        assert_eq!(paths.len(), 5);
        for path in paths {
            let g = load_model(&path).unwrap();
            let opts = VerifyOptions {
                samples: 4,
                jacobian_probes: 1,
                jacobian_cap: 10_000,
                ..VerifyOptions::default()
            };
            let report = verify(&g, &opts).unwrap();
            assert!(report.passed, "{report}");
        }
    }
}
