//! Fixed-step forward integration of `dH/dt = ReLU(A·H·W)` and the backward
//! adjoint pass that produces `∂L/∂H(t0)` and `∂L/∂W`.
//!
//! The backward pass integrates, from `t1` down to `t0`,
//!
//! ```text
//! da/dt   = −Aᵀ·(a ⊙ step(Z))·Wᵀ          a(t1)   = ∂L/∂H(t1)
//! dG_W/dt = −(A·H)ᵀ·(a ⊙ step(Z))          G_W(t1) = 0
//! ```
//!
//! with `Z = A·H·W`, so that `G_W(t0) = ∂L/∂W`. `H(t)` comes either from the
//! stored forward checkpoints or from re-integrating the forward dynamics in
//! reverse time alongside the adjoint.

use crate::adjoint::{backward_rhs_pair, check_symmetric};
use crate::error::{GcdeError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GcdeModel {
    adjacency: Matrix,
    weights: Matrix,
    t0: f64,
    t1: f64,
}

impl GcdeModel {
    pub fn new(adjacency: Matrix, weights: Matrix, t0: f64, t1: f64) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(GcdeError::shape(
                "adjacency",
                adjacency.shape(),
                (adjacency.rows(), adjacency.rows()),
            ));
        }
        check_symmetric(&adjacency)?;
        if !weights.is_square() {
            return Err(GcdeError::shape(
                "weights",
                weights.shape(),
                (weights.rows(), weights.rows()),
            ));
        }
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(GcdeError::Validation(format!(
                "time span requires t1 > t0, got [{t0}, {t1}]"
            )));
        }
        Ok(GcdeModel {
            adjacency,
            weights,
            t0,
            t1,
        })
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    /// Number of graph nodes `N`.
    pub fn nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// Number of features per node `C`.
    pub fn channels(&self) -> usize {
        self.weights.rows()
    }

    /// Same graph and time span with different weights.
    pub fn with_weights(&self, weights: Matrix) -> Result<Self> {
        if weights.shape() != self.weights.shape() {
            return Err(GcdeError::shape("with_weights", weights.shape(), self.weights.shape()));
        }
        Ok(GcdeModel {
            weights,
            ..self.clone()
        })
    }

    pub(crate) fn check_state(&self, h: &Matrix, what: &'static str) -> Result<()> {
        let expected = (self.nodes(), self.channels());
        if h.shape() != expected {
            return Err(GcdeError::shape(what, h.shape(), expected));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub steps: usize,
}

impl SolverConfig {
    pub fn new(method: SolverMethod, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(GcdeError::Validation("solver needs at least one step".into()));
        }
        Ok(SolverConfig { method, steps })
    }

    pub fn rk4(steps: usize) -> Result<Self> {
        Self::new(SolverMethod::Rk4, steps)
    }

    pub fn euler(steps: usize) -> Result<Self> {
        Self::new(SolverMethod::Euler, steps)
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(GcdeError::Validation("solver needs at least one step".into()));
        }
        Ok(())
    }
}

/// Forward solution sampled on the uniform solver grid, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Matrix>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Matrix] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `H(t1)`.
    pub fn final_state(&self) -> &Matrix {
        self.states.last().expect("trajectory has at least two points")
    }

    pub fn initial_state(&self) -> &Matrix {
        &self.states[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardResult {
    /// `∂L/∂H(t0)`.
    pub state_grad: Matrix,
    /// `∂L/∂W`.
    pub weight_grad: Matrix,
}

/// Where the backward pass gets `H(t)` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardMode {
    /// Restart each backward step from the stored forward checkpoint.
    #[default]
    StoredTrajectory,
    /// Integrate `H` backward from `H(t1)` together with the adjoint.
    AugmentedRecompute,
}

/// `t0 + k·(t1 − t0)/steps` for `k = 0..=steps`.
pub fn time_grid(t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    let dt = (t1 - t0) / steps as f64;
    (0..=steps).map(|k| t0 + k as f64 * dt).collect()
}

/// `ReLU(A·h·W)`.
pub fn gcde_rhs(model: &GcdeModel, h: &Matrix) -> Result<Matrix> {
    model.check_state(h, "gcde_rhs")?;
    Ok(model.adjacency.matmul(h)?.matmul(&model.weights)?.relu())
}

trait OdeState: Sized {
    fn add_scaled(&self, alpha: f64, d: &Self) -> Result<Self>;
    fn is_finite(&self) -> bool;
}

impl OdeState for Matrix {
    fn add_scaled(&self, alpha: f64, d: &Self) -> Result<Self> {
        Matrix::add_scaled(self, alpha, d)
    }

    fn is_finite(&self) -> bool {
        Matrix::is_finite(self)
    }
}

/// `(H, a, G_W)` integrated jointly in the backward pass.
struct Augmented {
    h: Matrix,
    adj: Matrix,
    gw: Matrix,
}

impl OdeState for Augmented {
    fn add_scaled(&self, alpha: f64, d: &Self) -> Result<Self> {
        Ok(Augmented {
            h: self.h.add_scaled(alpha, &d.h)?,
            adj: self.adj.add_scaled(alpha, &d.adj)?,
            gw: self.gw.add_scaled(alpha, &d.gw)?,
        })
    }

    fn is_finite(&self) -> bool {
        self.h.is_finite() && self.adj.is_finite() && self.gw.is_finite()
    }
}

/// One explicit step of an autonomous system.
fn solver_step<S: OdeState>(
    method: SolverMethod,
    y: &S,
    dt: f64,
    f: impl Fn(&S) -> Result<S>,
) -> Result<S> {
    match method {
        SolverMethod::Euler => y.add_scaled(dt, &f(y)?),
        SolverMethod::Rk4 => {
            let k1 = f(y)?;
            let k2 = f(&y.add_scaled(0.5 * dt, &k1)?)?;
            let k3 = f(&y.add_scaled(0.5 * dt, &k2)?)?;
            let k4 = f(&y.add_scaled(dt, &k3)?)?;
            y.add_scaled(dt / 6.0, &k1)?
                .add_scaled(dt / 3.0, &k2)?
                .add_scaled(dt / 3.0, &k3)?
                .add_scaled(dt / 6.0, &k4)
        }
    }
}

/// Integrates the GCDE from `t0` to `t1` with `cfg.steps` fixed steps.
pub fn integrate_forward(model: &GcdeModel, h0: &Matrix, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate()?;
    model.check_state(h0, "initial state")?;
    let times = time_grid(model.t0, model.t1, cfg.steps);
    let dt = (model.t1 - model.t0) / cfg.steps as f64;
    let mut states = Vec::with_capacity(cfg.steps + 1);
    states.push(h0.clone());
    for step in 1..=cfg.steps {
        let next = solver_step(cfg.method, &states[step - 1], dt, |h| gcde_rhs(model, h))?;
        if !next.is_finite() {
            return Err(GcdeError::Divergence { step });
        }
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

fn check_forward_matches(model: &GcdeModel, forward: &Trajectory, cfg: &SolverConfig) -> Result<()> {
    if forward.len() != cfg.steps + 1 || forward.states.len() != forward.times.len() {
        return Err(GcdeError::Validation(format!(
            "trajectory has {} points but the solver config implies {}",
            forward.len(),
            cfg.steps + 1
        )));
    }
    if forward.times != time_grid(model.t0, model.t1, cfg.steps) {
        return Err(GcdeError::Validation(
            "trajectory time grid does not match the model time span and solver steps".into(),
        ));
    }
    for h in &forward.states {
        model.check_state(h, "trajectory state")?;
    }
    Ok(())
}

/// Backward adjoint pass from `a(t1) = loss_grad_at_t1` to `t0`.
///
/// `forward` must come from [`integrate_forward`] with the same model and
/// solver config; the backward grid is the forward grid, so no interpolation
/// is ever needed.
pub fn integrate_backward(
    model: &GcdeModel,
    forward: &Trajectory,
    loss_grad_at_t1: &Matrix,
    cfg: &SolverConfig,
    mode: BackwardMode,
) -> Result<BackwardResult> {
    cfg.validate()?;
    model.check_state(loss_grad_at_t1, "loss gradient")?;
    check_forward_matches(model, forward, cfg)?;

    let (a, w) = (&model.adjacency, &model.weights);
    let dt = (model.t1 - model.t0) / cfg.steps as f64;
    let rhs = |y: &Augmented| -> Result<Augmented> {
        let (adj, gw) = backward_rhs_pair(a, w, &y.h, &y.adj)?;
        // In stored mode H is reset from the checkpoint every step, and the
        // stage values inside a step still follow the forward dynamics.
        let h = gcde_rhs(model, &y.h)?;
        Ok(Augmented { h, adj, gw })
    };

    let mut y = Augmented {
        h: forward.final_state().clone(),
        adj: loss_grad_at_t1.clone(),
        gw: Matrix::zeros(model.channels(), model.channels()),
    };
    for k in (0..cfg.steps).rev() {
        if mode == BackwardMode::StoredTrajectory {
            y.h = forward.states[k + 1].clone();
        }
        y = solver_step(cfg.method, &y, -dt, rhs)?;
        if !y.is_finite() {
            return Err(GcdeError::Divergence { step: cfg.steps - k });
        }
    }
    Ok(BackwardResult {
        state_grad: y.adj,
        weight_grad: y.gw,
    })
}
