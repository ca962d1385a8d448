//! Run configuration: a flat `key = value` file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use crate::error::{GcdeError, Result};
use crate::format::read_to_string;
use crate::jacobian::DEFAULT_FD_EPS;
use crate::ode::{BackwardMode, SolverConfig, SolverMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Euler,
    Rk4,
}

impl From<SolverArg> for SolverMethod {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Euler => SolverMethod::Euler,
            SolverArg::Rk4 => SolverMethod::Rk4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdjointArg {
    Stored,
    Augmented,
}

impl From<AdjointArg> for BackwardMode {
    fn from(a: AdjointArg) -> Self {
        match a {
            AdjointArg::Stored => BackwardMode::StoredTrajectory,
            AdjointArg::Augmented => BackwardMode::AugmentedRecompute,
        }
    }
}

/// Flags shared by every subcommand. Anything given here overrides the
/// config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Initial node features H(t0), N x C
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Weight matrix W, C x C (seeded random init when absent)
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Regression targets at t1, N x C
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Per-node 0/1 loss mask, N x 1
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub t0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub t1: Option<f64>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Finite-difference step
    #[arg(long, allow_hyphen_values = true)]
    pub eps: Option<f64>,
    /// How the backward pass obtains H(t)
    #[arg(long, value_enum)]
    pub adjoint: Option<AdjointArg>,
    /// Also write the full forward trajectory
    #[arg(long)]
    pub trajectory: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub t0: f64,
    pub t1: f64,
    pub method: SolverMethod,
    pub steps: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub eps: f64,
    pub adjoint: BackwardMode,
    pub write_trajectory: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: None,
            features: None,
            weights: None,
            targets: None,
            mask: None,
            t0: 0.0,
            t1: 1.0,
            method: SolverMethod::Rk4,
            steps: 100,
            lr: 0.1,
            epochs: 100,
            seed: 0,
            eps: DEFAULT_FD_EPS,
            adjoint: BackwardMode::StoredTrajectory,
            write_trajectory: false,
            out: PathBuf::from("."),
        }
    }
}

fn invalid(msg: String) -> GcdeError {
    GcdeError::Validation(msg)
}

impl RunConfig {
    /// Parses a config file. Relative paths are resolved against the file's
    /// directory.
    pub fn parse_file(text: &str, origin: &Path) -> Result<Self> {
        let base = origin.parent().unwrap_or(Path::new(""));
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| GcdeError::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let path = || Some(base.join(value));
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("invalid number '{v}' for {key}")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| err(format!("invalid integer '{v}' for {key}")));
            match key {
                "graph" => cfg.graph = path(),
                "features" => cfg.features = path(),
                "weights" => cfg.weights = path(),
                "targets" => cfg.targets = path(),
                "mask" => cfg.mask = path(),
                "out" => cfg.out = base.join(value),
                "t0" => cfg.t0 = num(value)?,
                "t1" => cfg.t1 = num(value)?,
                "lr" => cfg.lr = num(value)?,
                "eps" => cfg.eps = num(value)?,
                "steps" => cfg.steps = int(value)? as usize,
                "epochs" => cfg.epochs = int(value)? as usize,
                "seed" => cfg.seed = int(value)?,
                "solver" => {
                    cfg.method = match value {
                        "euler" => SolverMethod::Euler,
                        "rk4" => SolverMethod::Rk4,
                        _ => return Err(err(format!("unknown solver '{value}'"))),
                    }
                }
                "adjoint" => {
                    cfg.adjoint = match value {
                        "stored" => BackwardMode::StoredTrajectory,
                        "augmented" => BackwardMode::AugmentedRecompute,
                        _ => return Err(err(format!("unknown adjoint mode '{value}'"))),
                    }
                }
                "trajectory" => {
                    cfg.write_trajectory = value
                        .parse()
                        .map_err(|_| err(format!("expected true/false, got '{value}'")))?
                }
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }
        Ok(cfg)
    }

    /// Config file (if any) with every given flag applied on top.
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => Self::parse_file(&read_to_string(path)?, path)?,
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = &args.$field { cfg.$target = v.clone().into(); })*
            };
        }
        overlay!(t0 => t0, t1 => t1, steps => steps, lr => lr, epochs => epochs, seed => seed, eps => eps);
        if let Some(s) = args.solver {
            cfg.method = s.into();
        }
        if let Some(a) = args.adjoint {
            cfg.adjoint = a.into();
        }
        for (flag, slot) in [
            (&args.graph, &mut cfg.graph),
            (&args.features, &mut cfg.features),
            (&args.weights, &mut cfg.weights),
            (&args.targets, &mut cfg.targets),
            (&args.mask, &mut cfg.mask),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if let Some(out) = &args.out {
            cfg.out = out.clone();
        }
        cfg.write_trajectory |= args.trajectory;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t1.is_finite() && self.t1 > self.t0) {
            return Err(invalid(format!("need t1 > t0, got t0={} t1={}", self.t0, self.t1)));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be at least 1".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be non-negative, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1".into()));
        }
        for (name, path) in [
            ("graph", &self.graph),
            ("features", &self.features),
            ("weights", &self.weights),
            ("targets", &self.targets),
            ("mask", &self.mask),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(invalid(format!("{name} file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        SolverConfig::new(self.method, self.steps)
    }

    pub(crate) fn require<'a>(&self, name: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| invalid(format!("missing required --{name}")))
    }
}
