//! The `gcde` command-line front end.
//!
//! Exit codes: 0 ok, 1 usage or parse error, 2 divergence, 3 gradient check
//! flagged a ReLU kink, 4 Jacobian size guard.

pub mod config;
pub mod graph;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{GcdeError, Result};
use crate::fixtures::init_weights;
use crate::format::{format_value, read_matrix, write_matrix, write_matrix_string};
use crate::jacobian::{gcde_jacobian_wrt_state, gcde_jacobian_wrt_weights, JACOBIAN_SIZE_LIMIT};
use crate::linalg::Matrix;
use crate::ode::{integrate_forward, GcdeModel};
use crate::training::{fit_with, grad_check_with, Dataset, TrainConfig};

pub use config::{RunArgs, RunConfig};
pub use graph::{load_graph, GraphFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_KINK: i32 = 3;
pub const EXIT_GUARD: i32 = 4;

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOL: f64 = 1e-4;

pub const FINAL_STATE_FILE: &str = "h_t1.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const GRAD_ANALYTIC_FILE: &str = "grad_analytic.txt";
pub const GRAD_NUMERIC_FILE: &str = "grad_numeric.txt";
pub const JACOBIAN_STATE_FILE: &str = "jacobian_state.txt";
pub const JACOBIAN_WEIGHTS_FILE: &str = "jacobian_weights.txt";
pub const TRAINED_WEIGHTS_FILE: &str = "weights.txt";
pub const LOSS_HISTORY_FILE: &str = "loss_history.txt";

#[derive(Debug, Parser)]
#[command(name = "gcde", version, about = "Graph convolutional neural ODEs with vectorized adjoint gradients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate H from t0 to t1 and write H(t1)
    Forward(RunArgs),
    /// Compare adjoint dL/dW with central finite differences
    Gradcheck(RunArgs),
    /// Dump the unrolled state and weight Jacobians at H(t0)
    Jacobian(RunArgs),
    /// Fit W by gradient descent
    Train(RunArgs),
}

/// Parses `RunArgs` and runs the matching command.
pub fn run(cli: Cli) -> i32 {
    let (args, cmd): (&RunArgs, fn(&RunConfig) -> i32) = match &cli.command {
        Command::Forward(a) => (a, cmd_forward),
        Command::Gradcheck(a) => (a, cmd_gradcheck),
        Command::Jacobian(a) => (a, cmd_jacobian),
        Command::Train(a) => (a, cmd_train),
    };
    match RunConfig::from_args(args) {
        Ok(cfg) => cmd(&cfg),
        Err(e) => report(e),
    }
}

pub fn exit_code(err: &GcdeError) -> i32 {
    match err {
        GcdeError::Divergence { .. } | GcdeError::TrainingDiverged { .. } => EXIT_DIVERGENCE,
        GcdeError::OracleGuard { .. } => EXIT_GUARD,
        _ => EXIT_USAGE,
    }
}

fn report(err: GcdeError) -> i32 {
    eprintln!("error: {err}");
    exit_code(&err)
}

/// Graph, features, weights and time span assembled from a config.
struct Problem {
    model: GcdeModel,
    h0: Matrix,
}

fn load_problem(cfg: &RunConfig) -> Result<Problem> {
    cfg.validate()?;
    let adjacency = load_graph(cfg.require("graph", &cfg.graph)?)?;
    let h0 = read_matrix(cfg.require("features", &cfg.features)?)?;
    if h0.rows() != adjacency.rows() {
        return Err(GcdeError::shape("features vs graph", h0.shape(), (adjacency.rows(), h0.cols())));
    }
    let weights = match &cfg.weights {
        Some(p) => read_matrix(p)?,
        None => init_weights(cfg.seed, h0.cols()),
    };
    if weights.shape() != (h0.cols(), h0.cols()) {
        return Err(GcdeError::shape("weights vs features", weights.shape(), (h0.cols(), h0.cols())));
    }
    Ok(Problem {
        model: GcdeModel::new(adjacency, weights, cfg.t0, cfg.t1)?,
        h0,
    })
}

fn load_dataset(cfg: &RunConfig, h0: &Matrix) -> Result<Dataset> {
    let target = read_matrix(cfg.require("targets", &cfg.targets)?)?;
    let mask = match &cfg.mask {
        Some(p) => {
            let m = read_matrix(p)?;
            if m.cols() != 1 {
                return Err(GcdeError::shape("mask", m.shape(), (h0.rows(), 1)));
            }
            Some(m.as_slice().iter().map(|&v| v != 0.0).collect())
        }
        None => None,
    };
    Dataset::new(h0.clone(), target, mask)
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| GcdeError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| GcdeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn forward(cfg: &RunConfig) -> Result<PathBuf> {
    let p = load_problem(cfg)?;
    let traj = integrate_forward(&p.model, &p.h0, &cfg.solver()?)?;
    ensure_out_dir(&cfg.out)?;
    let out = cfg.out.join(FINAL_STATE_FILE);
    write_matrix(&out, traj.final_state())?;
    if cfg.write_trajectory {
        let mut text = String::new();
        for (t, h) in traj.times().iter().zip(traj.states()) {
            text.push_str(&format!("# t = {}\n", format_value(*t)));
            text.push_str(&write_matrix_string(h));
        }
        write_text(&cfg.out.join(TRAJECTORY_FILE), &text)?;
    }
    Ok(out)
}

pub fn cmd_forward(cfg: &RunConfig) -> i32 {
    match forward(cfg) {
        Ok(path) => {
            println!("wrote {}", path.display());
            EXIT_OK
        }
        Err(e) => report(e),
    }
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> i32 {
    let result = (|| {
        let p = load_problem(cfg)?;
        let ds = load_dataset(cfg, &p.h0)?;
        let r = grad_check_with(&p.model, &ds, &cfg.solver()?, cfg.eps, cfg.adjoint)?;
        ensure_out_dir(&cfg.out)?;
        write_matrix(&cfg.out.join(GRAD_ANALYTIC_FILE), &r.analytic)?;
        write_matrix(&cfg.out.join(GRAD_NUMERIC_FILE), &r.numeric)?;
        Ok(r)
    })();
    let r = match result {
        Ok(r) => r,
        Err(e) => return report(e),
    };
    println!("analytic_norm {}", format_value(r.analytic.frobenius_norm()));
    println!("numeric_norm {}", format_value(r.numeric.frobenius_norm()));
    println!("max_abs_err {}", format_value(r.max_abs_err()));
    println!("norm_rel_err {}", format_value(r.norm_rel_err()));
    println!("min_abs_preactivation {}", format_value(r.min_abs_preactivation));
    println!("kink_warning {}", r.kink_warning());
    if r.kink_warning() {
        eprintln!("warning: pre-activation within the kink margin; finite differences are unreliable");
        EXIT_KINK
    } else if r.norm_rel_err() <= GRADCHECK_TOL {
        EXIT_OK
    } else {
        eprintln!("gradient check failed: norm_rel_err {} > {GRADCHECK_TOL}", r.norm_rel_err());
        EXIT_USAGE
    }
}

pub fn cmd_jacobian(cfg: &RunConfig) -> i32 {
    let result = (|| {
        let p = load_problem(cfg)?;
        let size = p.model.nodes() * p.model.channels();
        if size > JACOBIAN_SIZE_LIMIT {
            return Err(GcdeError::OracleGuard {
                size,
                limit: JACOBIAN_SIZE_LIMIT,
            });
        }
        let (a, w) = (p.model.adjacency(), p.model.weights());
        let js = gcde_jacobian_wrt_state(a, w, &p.h0)?;
        let jw = gcde_jacobian_wrt_weights(a, &p.h0, w)?;
        ensure_out_dir(&cfg.out)?;
        write_matrix(&cfg.out.join(JACOBIAN_STATE_FILE), js.inner())?;
        write_matrix(&cfg.out.join(JACOBIAN_WEIGHTS_FILE), jw.inner())?;
        Ok((js.inner().shape(), jw.inner().shape()))
    })();
    match result {
        Ok((s, w)) => {
            println!("state_jacobian {}x{}", s.0, s.1);
            println!("weight_jacobian {}x{}", w.0, w.1);
            EXIT_OK
        }
        Err(e) => report(e),
    }
}

pub fn write_loss_history(path: &Path, losses: &[f64]) -> Result<()> {
    let text: String = losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{} {}\n", i + 1, format_value(*l)))
        .collect();
    write_text(path, &text)
}

/// Reads `epoch loss` lines.
pub fn read_loss_history(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = crate::format::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = || GcdeError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: format!("expected 'epoch loss', got '{line}'"),
        };
        let (e, l) = line.split_once(' ').ok_or_else(err)?;
        out.push((e.parse().map_err(|_| err())?, l.trim().parse().map_err(|_| err())?));
    }
    Ok(out)
}

pub fn cmd_train(cfg: &RunConfig) -> i32 {
    let result = (|| {
        let p = load_problem(cfg)?;
        let ds = load_dataset(cfg, &p.h0)?;
        let tc = TrainConfig {
            learning_rate: cfg.lr,
            epochs: cfg.epochs,
            solver: cfg.solver()?,
            seed: cfg.seed,
        };
        ensure_out_dir(&cfg.out)?;
        match fit_with(&p.model, &ds, &tc, cfg.adjoint) {
            Ok((model, losses)) => {
                write_matrix(&cfg.out.join(TRAINED_WEIGHTS_FILE), model.weights())?;
                write_loss_history(&cfg.out.join(LOSS_HISTORY_FILE), &losses)?;
                Ok(losses)
            }
            Err(GcdeError::TrainingDiverged { epoch, losses }) => {
                write_loss_history(&cfg.out.join(LOSS_HISTORY_FILE), &losses)?;
                Err(GcdeError::TrainingDiverged { epoch, losses })
            }
            Err(e) => Err(e),
        }
    })();
    match result {
        Ok(losses) => {
            let first = losses.first().copied().unwrap_or(f64::NAN);
            let last = losses.last().copied().unwrap_or(f64::NAN);
            println!("epochs {} initial_loss {} final_loss {}", losses.len(), format_value(first), format_value(last));
            EXIT_OK
        }
        Err(e) => report(e),
    }
}
