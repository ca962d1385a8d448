//! Seeded synthetic problems: teacher-student regression and random
//! instances whose pre-activations stay away from the ReLU kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cli::graph::GraphFile;
use crate::error::{GcdeError, Result};
use crate::linalg::Matrix;
use crate::ode::{integrate_forward, GcdeModel, SolverConfig};
use crate::training::{min_abs_preactivation, Dataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

/// Dense symmetric matrix with entries in `[-1, 1)`.
pub fn symmetric_matrix(rng: &mut impl Rng, n: usize) -> Matrix {
    let upper = uniform_matrix(rng, n, n, -1.0, 1.0);
    Matrix::from_fn(n, n, |i, j| if i <= j { upper.get(i, j) } else { upper.get(j, i) })
}

/// Ring graph plus random chords, with self loops and symmetric normalization.
pub fn random_graph(rng: &mut impl Rng, n: usize, chord_prob: f64) -> Matrix {
    let mut edges = Vec::new();
    for i in 0..n {
        if n > 1 {
            edges.push((i, (i + 1) % n));
        }
        for j in i + 2..n {
            if rng.gen_bool(chord_prob) {
                edges.push((i, j));
            }
        }
    }
    GraphFile {
        node_count: n,
        edges,
        self_loops: true,
        normalize: true,
    }
    .adjacency()
    .expect("self loops keep every degree positive")
}

/// Small random weights used when no weight file is supplied.
pub fn init_weights(seed: u64, channels: usize) -> Matrix {
    let mut rng = rng(seed);
    uniform_matrix(&mut rng, channels, channels, -0.5, 0.5)
}

/// Half-width of the student's initial weight distribution. Starting near zero
/// keeps plain gradient descent from stalling on dead ReLU channels.
pub const STUDENT_INIT_SCALE: f64 = 0.01;

/// A regression problem whose target is produced by a hidden weight matrix.
#[derive(Debug, Clone)]
pub struct TeacherStudent {
    pub student: GcdeModel,
    pub teacher_weights: Matrix,
    pub dataset: Dataset,
}

pub fn teacher_student(nodes: usize, channels: usize, seed: u64, solver: &SolverConfig) -> Result<TeacherStudent> {
    let mut rng = rng(seed);
    let adjacency = random_graph(&mut rng, nodes, 0.3);
    let h0 = uniform_matrix(&mut rng, nodes, channels, -1.0, 1.0);
    let teacher_weights = uniform_matrix(&mut rng, channels, channels, -1.0, 1.0);
    let student_weights = uniform_matrix(&mut rng, channels, channels, -STUDENT_INIT_SCALE, STUDENT_INIT_SCALE);
    let teacher = GcdeModel::new(adjacency, teacher_weights.clone(), 0.0, 1.0)?;
    let target = integrate_forward(&teacher, &h0, solver)?.final_state().clone();
    Ok(TeacherStudent {
        student: teacher.with_weights(student_weights)?,
        teacher_weights,
        dataset: Dataset::new(h0, target, None)?,
    })
}

/// Draws random instances until every stored pre-activation satisfies
/// `|Z| >= margin` and at least one unit is active at `t0`. Adjacency is
/// symmetric; all entries are uniform in `[-1, 1)`.
pub fn kink_free_instance(
    rng: &mut impl Rng,
    nodes: usize,
    channels: usize,
    solver: &SolverConfig,
    margin: f64,
) -> Result<(GcdeModel, Dataset)> {
    const MAX_TRIES: usize = 100_000;
    for _ in 0..MAX_TRIES {
        let a = symmetric_matrix(rng, nodes);
        let w = uniform_matrix(rng, channels, channels, -1.0, 1.0);
        let h0 = uniform_matrix(rng, nodes, channels, -1.0, 1.0);
        let target = uniform_matrix(rng, nodes, channels, -1.0, 1.0);
        let model = GcdeModel::new(a, w, 0.0, 1.0)?;
        // cheap screen before the full solve
        let z0 = model.adjacency().matmul(&h0)?.matmul(model.weights())?;
        // at least one active unit, otherwise the loss ignores W entirely
        if z0.min_abs() < margin || z0.as_slice().iter().all(|&v| v < 0.0) {
            continue;
        }
        let traj = integrate_forward(&model, &h0, solver)?;
        if min_abs_preactivation(&model, &traj)? >= margin {
            return Ok((model, Dataset::new(h0, target, None)?));
        }
    }
    Err(GcdeError::Validation(format!(
        "no kink-free {nodes}x{channels} instance found in {MAX_TRIES} draws"
    )))
}
