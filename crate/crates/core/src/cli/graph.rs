//! Graph text format.
//!
//! ```text
//! # comment
//! nodes 4
//! self_loops
//! normalize
//! 0 1
//! 1 2
//! ```
//!
//! Edges are undirected and 0-indexed; each pair is stored once and
//! symmetrized on load. Repeated pairs (in either direction) collapse.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{GcdeError, Result};
use crate::format::read_to_string;
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphFile {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub self_loops: bool,
    pub normalize: bool,
}

impl GraphFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| GcdeError::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut node_count = None;
        let mut self_loops = false;
        let mut normalize = false;
        let mut seen = BTreeSet::new();
        let mut edges = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let Some(n) = node_count else {
                match toks.as_slice() {
                    ["nodes", n] => match n.parse::<usize>() {
                        Ok(n) if n > 0 => node_count = Some(n),
                        _ => return Err(err(line_no, format!("invalid node count '{n}'"))),
                    },
                    _ => return Err(err(line_no, "expected 'nodes <N>' first".into())),
                }
                continue;
            };
            match toks.as_slice() {
                ["self_loops"] => self_loops = true,
                ["normalize"] => normalize = true,
                [u, v] => {
                    let parse = |s: &str| -> Result<usize> {
                        let id = s
                            .parse::<usize>()
                            .map_err(|_| err(line_no, format!("invalid node id '{s}'")))?;
                        if id >= n {
                            return Err(err(
                                line_no,
                                format!("node id {id} out of range for {n} nodes"),
                            ));
                        }
                        Ok(id)
                    };
                    let (u, v) = (parse(u)?, parse(v)?);
                    if seen.insert((u.min(v), u.max(v))) {
                        edges.push((u, v));
                    }
                }
                _ => return Err(err(line_no, format!("unrecognized line '{line}'"))),
            }
        }
        let node_count = node_count.ok_or_else(|| err(1, "missing 'nodes <N>' line".into()))?;
        Ok(GraphFile {
            node_count,
            edges,
            self_loops,
            normalize,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    /// Dense symmetric adjacency. Adds `I` when `self_loops` is set, then
    /// applies `D^{-1/2}·A·D^{-1/2}` when `normalize` is set.
    pub fn adjacency(&self) -> Result<Matrix> {
        let n = self.node_count;
        let mut a = Matrix::zeros(n, n);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        if self.self_loops {
            for i in 0..n {
                a.set(i, i, a.get(i, i) + 1.0);
            }
        }
        if self.normalize {
            let mut deg = Vec::with_capacity(n);
            for i in 0..n {
                let d: f64 = a.row(i).iter().sum();
                if d <= 0.0 {
                    return Err(GcdeError::Validation(format!(
                        "node {i} has zero degree; normalization needs self_loops or an edge"
                    )));
                }
                deg.push(d);
            }
            // a_ij / sqrt(d_i d_j) keeps the result exactly symmetric
            a = Matrix::from_fn(n, n, |i, j| a.get(i, j) / (deg[i] * deg[j]).sqrt());
        }
        Ok(a)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("nodes {}\n", self.node_count);
        if self.self_loops {
            out.push_str("self_loops\n");
        }
        if self.normalize {
            out.push_str("normalize\n");
        }
        for (u, v) in &self.edges {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }
}

/// Reads a graph file and returns its adjacency matrix.
pub fn load_graph(path: &Path) -> Result<Matrix> {
    GraphFile::read(path)?.adjacency()
}
