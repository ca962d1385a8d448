#![allow(dead_code)]

use std::path::PathBuf;

use gcde::cli::{GraphFile, RunConfig};
use gcde::format::write_matrix;
use gcde::Matrix;
use tempfile::TempDir;

/// Input files for one CLI run, living in a temporary directory.
pub struct ProblemFiles {
    pub dir: TempDir,
    pub graph: PathBuf,
    pub features: PathBuf,
    pub targets: PathBuf,
    pub weights: Option<PathBuf>,
}

impl ProblemFiles {
    pub fn new(graph: &GraphFile, h0: &Matrix, target: &Matrix, weights: Option<&Matrix>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name);
        std::fs::write(p("graph.txt"), graph.to_text()).unwrap();
        write_matrix(&p("h0.txt"), h0).unwrap();
        write_matrix(&p("target.txt"), target).unwrap();
        let weights = weights.map(|w| {
            write_matrix(&p("w.txt"), w).unwrap();
            p("w.txt")
        });
        ProblemFiles {
            graph: p("graph.txt"),
            features: p("h0.txt"),
            targets: p("target.txt"),
            weights,
            dir,
        }
    }

    pub fn config(&self, out: &str) -> RunConfig {
        RunConfig {
            graph: Some(self.graph.clone()),
            features: Some(self.features.clone()),
            targets: Some(self.targets.clone()),
            weights: self.weights.clone(),
            out: self.dir.path().join(out),
            ..RunConfig::default()
        }
    }
}

/// Ring graph over `n` nodes with self loops and symmetric normalization.
pub fn ring(n: usize) -> GraphFile {
    GraphFile {
        node_count: n,
        edges: (0..n).map(|i| (i, (i + 1) % n)).filter(|(u, v)| u != v).collect(),
        self_loops: true,
        normalize: true,
    }
}

/// Graph whose adjacency is the 1x1 matrix `[[1]]`.
pub fn single_self_loop() -> GraphFile {
    GraphFile {
        node_count: 1,
        edges: vec![],
        self_loops: true,
        normalize: false,
    }
}
