//! MSE loss, end-to-end gradient checking and plain gradient-descent training
//! of the weight matrix.

use crate::error::{GcdeError, Result};
use crate::linalg::{norm_rel_err, Matrix};
use crate::ode::{
    integrate_backward, integrate_forward, BackwardMode, GcdeModel, SolverConfig, Trajectory,
};

/// Trajectories whose pre-activations come closer to zero than this are
/// flagged: the loss is not differentiable at ReLU switches.
pub const KINK_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub h0: Matrix,
    pub target: Matrix,
    /// Nodes that contribute to the loss; `None` means all of them.
    pub node_mask: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(h0: Matrix, target: Matrix, node_mask: Option<Vec<bool>>) -> Result<Self> {
        if h0.shape() != target.shape() {
            return Err(GcdeError::shape("dataset target", target.shape(), h0.shape()));
        }
        if let Some(mask) = &node_mask {
            if mask.len() != h0.rows() {
                return Err(GcdeError::Validation(format!(
                    "node mask has {} entries for {} nodes",
                    mask.len(),
                    h0.rows()
                )));
            }
        }
        Ok(Dataset {
            h0,
            target,
            node_mask,
        })
    }

    fn check_model(&self, model: &GcdeModel) -> Result<()> {
        let expected = (model.nodes(), model.channels());
        if self.h0.shape() != expected {
            return Err(GcdeError::shape("dataset features", self.h0.shape(), expected));
        }
        Ok(())
    }

    fn node_weight(&self, node: usize) -> f64 {
        match &self.node_mask {
            Some(mask) if !mask[node] => 0.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub solver: SolverConfig,
    /// Seeds weight initialization in the command-line front end. Gradient
    /// descent itself is deterministic.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GcdeError::Validation(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(GcdeError::Validation("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Analytic vs finite-difference weight gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub analytic: Matrix,
    pub numeric: Matrix,
    /// Smallest `|A·H·W|` entry over the forward checkpoints.
    pub min_abs_preactivation: f64,
}

impl GradientReport {
    pub fn max_abs_err(&self) -> f64 {
        self.analytic
            .max_abs_diff(&self.numeric)
            .expect("report matrices share a shape")
    }

    pub fn norm_rel_err(&self) -> f64 {
        norm_rel_err(&self.analytic, &self.numeric).expect("report matrices share a shape")
    }

    pub fn kink_warning(&self) -> bool {
        self.min_abs_preactivation < KINK_THRESHOLD
    }
}

/// Masked mean squared error `Σ mask·(pred − target)² / (2·count)` and its
/// gradient with respect to `pred`.
pub fn mse_loss(pred: &Matrix, ds: &Dataset) -> Result<(f64, Matrix)> {
    if pred.shape() != ds.target.shape() {
        return Err(GcdeError::shape("mse_loss", pred.shape(), ds.target.shape()));
    }
    let active = (0..pred.rows()).filter(|&i| ds.node_weight(i) > 0.0).count();
    if active == 0 {
        return Err(GcdeError::Validation("node mask selects no nodes".into()));
    }
    let count = (active * pred.cols()) as f64;
    let mut loss = 0.0;
    let grad = Matrix::from_fn(pred.rows(), pred.cols(), |i, j| {
        let d = ds.node_weight(i) * (pred.get(i, j) - ds.target.get(i, j));
        loss += d * d;
        d / count
    });
    Ok((loss / (2.0 * count), grad))
}

/// Loss at `t1` after integrating `model` from `ds.h0`.
pub fn forward_loss(model: &GcdeModel, h0: &Matrix, ds: &Dataset, cfg: &SolverConfig) -> Result<f64> {
    let traj = integrate_forward(model, h0, cfg)?;
    Ok(mse_loss(traj.final_state(), ds)?.0)
}

/// Smallest `|A·H·W|` over the stored states of `traj`.
///
/// Rows of nodes whose adjacency row is entirely zero are skipped: their
/// pre-activation is identically zero for every `H` and `W`, so it can never
/// switch sign. Returns infinity when no entry qualifies.
pub fn min_abs_preactivation(model: &GcdeModel, traj: &Trajectory) -> Result<f64> {
    let a = model.adjacency();
    let live: Vec<usize> = (0..a.rows())
        .filter(|&i| a.row(i).iter().any(|&v| v != 0.0))
        .collect();
    let mut min = f64::INFINITY;
    for h in traj.states() {
        let z = a.matmul(h)?.matmul(model.weights())?;
        for &i in &live {
            min = z.row(i).iter().fold(min, |m, v| m.min(v.abs()));
        }
    }
    Ok(min)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GcdeError::Validation(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Central differences of the end-to-end loss in every entry of `W`.
pub fn numeric_weight_gradient(
    model: &GcdeModel,
    ds: &Dataset,
    cfg: &SolverConfig,
    eps: f64,
) -> Result<Matrix> {
    check_eps(eps)?;
    let w = model.weights();
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let mut probe = w.clone();
            probe.set(i, j, w.get(i, j) + eps);
            let plus = forward_loss(&model.with_weights(probe.clone())?, &ds.h0, ds, cfg)?;
            probe.set(i, j, w.get(i, j) - eps);
            let minus = forward_loss(&model.with_weights(probe)?, &ds.h0, ds, cfg)?;
            grad.set(i, j, (plus - minus) / (2.0 * eps));
        }
    }
    Ok(grad)
}

/// Central differences of the end-to-end loss in every entry of `H(t0)`.
pub fn numeric_state_gradient(
    model: &GcdeModel,
    ds: &Dataset,
    cfg: &SolverConfig,
    eps: f64,
) -> Result<Matrix> {
    check_eps(eps)?;
    let h0 = &ds.h0;
    let mut grad = Matrix::zeros(h0.rows(), h0.cols());
    let mut probe = h0.clone();
    for i in 0..h0.rows() {
        for j in 0..h0.cols() {
            probe.set(i, j, h0.get(i, j) + eps);
            let plus = forward_loss(model, &probe, ds, cfg)?;
            probe.set(i, j, h0.get(i, j) - eps);
            let minus = forward_loss(model, &probe, ds, cfg)?;
            probe.set(i, j, h0.get(i, j));
            grad.set(i, j, (plus - minus) / (2.0 * eps));
        }
    }
    Ok(grad)
}

/// Loss, `∂L/∂H(t0)` and `∂L/∂W` via the adjoint pass.
pub fn adjoint_gradients(
    model: &GcdeModel,
    ds: &Dataset,
    cfg: &SolverConfig,
    mode: BackwardMode,
) -> Result<(f64, crate::ode::BackwardResult)> {
    ds.check_model(model)?;
    let traj = integrate_forward(model, &ds.h0, cfg)?;
    let (loss, grad) = mse_loss(traj.final_state(), ds)?;
    let back = integrate_backward(model, &traj, &grad, cfg, mode)?;
    Ok((loss, back))
}

/// Compares the adjoint `∂L/∂W` against central differences of the loss.
pub fn grad_check(
    model: &GcdeModel,
    ds: &Dataset,
    cfg: &SolverConfig,
    eps: f64,
) -> Result<GradientReport> {
    grad_check_with(model, ds, cfg, eps, BackwardMode::StoredTrajectory)
}

/// [`grad_check`] with an explicit backward mode.
pub fn grad_check_with(
    model: &GcdeModel,
    ds: &Dataset,
    cfg: &SolverConfig,
    eps: f64,
    mode: BackwardMode,
) -> Result<GradientReport> {
    check_eps(eps)?;
    ds.check_model(model)?;
    let traj = integrate_forward(model, &ds.h0, cfg)?;
    let min_abs = min_abs_preactivation(model, &traj)?;
    let (_, grad) = mse_loss(traj.final_state(), ds)?;
    let back = integrate_backward(model, &traj, &grad, cfg, mode)?;
    let numeric = numeric_weight_gradient(model, ds, cfg, eps)?;
    Ok(GradientReport {
        analytic: back.weight_grad,
        numeric,
        min_abs_preactivation: min_abs,
    })
}

/// Full-batch gradient descent on `W`. Returns the trained model and the loss
/// recorded at the start of every epoch.
pub fn fit(model: &GcdeModel, ds: &Dataset, tc: &TrainConfig) -> Result<(GcdeModel, Vec<f64>)> {
    fit_with(model, ds, tc, BackwardMode::StoredTrajectory)
}

/// [`fit`] with an explicit backward mode.
pub fn fit_with(
    model: &GcdeModel,
    ds: &Dataset,
    tc: &TrainConfig,
    mode: BackwardMode,
) -> Result<(GcdeModel, Vec<f64>)> {
    tc.validate()?;
    ds.check_model(model)?;
    let mut model = model.clone();
    let mut losses = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let step = adjoint_gradients(&model, ds, &tc.solver, mode);
        let (loss, back) = match step {
            Ok(v) => v,
            Err(GcdeError::Divergence { .. }) => {
                return Err(GcdeError::TrainingDiverged { epoch, losses })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(GcdeError::TrainingDiverged { epoch, losses });
        }
        losses.push(loss);
        let w = model.weights().add_scaled(-tc.learning_rate, &back.weight_grad)?;
        if !w.is_finite() {
            return Err(GcdeError::TrainingDiverged { epoch, losses });
        }
        model = model.with_weights(w)?;
    }
    Ok((model, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mse_examples() {
        let t = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let ds = Dataset::new(Matrix::zeros(2, 2), t.clone(), None).unwrap();
        let (l, g) = mse_loss(&t, &ds).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, Matrix::zeros(2, 2));

        let pred = t.add(&Matrix::ones(2, 2)).unwrap();
        let (l, g) = mse_loss(&pred, &ds).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, Matrix::filled(2, 2, 0.25));
    }

    #[test]
    fn mse_mask() {
        let t = Matrix::zeros(3, 2);
        let ds = Dataset::new(Matrix::zeros(3, 2), t, Some(vec![true, false, true])).unwrap();
        let pred = m(&[&[1.0, 1.0], &[5.0, 5.0], &[1.0, 1.0]]);
        let (l, g) = mse_loss(&pred, &ds).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g.row(1), &[0.0, 0.0]);
        assert_eq!(g.row(0), &[0.25, 0.25]);

        let empty = Dataset::new(Matrix::zeros(2, 1), Matrix::zeros(2, 1), Some(vec![false; 2])).unwrap();
        assert!(matches!(
            mse_loss(&Matrix::zeros(2, 1), &empty),
            Err(GcdeError::Validation(_))
        ));
        assert!(Dataset::new(Matrix::zeros(2, 1), Matrix::zeros(2, 1), Some(vec![true])).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = Matrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let pred = Matrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let ds = Dataset::new(Matrix::zeros(4, 3), target, Some(vec![true, true, false, true])).unwrap();
        let (_, g) = mse_loss(&pred, &ds).unwrap();
        let eps = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut p = pred.clone();
                p.set(i, j, pred.get(i, j) + eps);
                let lp = mse_loss(&p, &ds).unwrap().0;
                p.set(i, j, pred.get(i, j) - eps);
                let lm = mse_loss(&p, &ds).unwrap().0;
                assert!(((lp - lm) / (2.0 * eps) - g.get(i, j)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn grad_check_zero_adjacency() {
        let model = GcdeModel::new(Matrix::zeros(3, 3), Matrix::identity(2), 0.0, 1.0).unwrap();
        let ds = Dataset::new(Matrix::ones(3, 2), Matrix::zeros(3, 2), None).unwrap();
        let r = grad_check(&model, &ds, &SolverConfig::rk4(20).unwrap(), 1e-5).unwrap();
        assert_eq!(r.analytic, Matrix::zeros(2, 2));
        assert_eq!(r.numeric, Matrix::zeros(2, 2));
        assert_eq!(r.norm_rel_err(), 0.0);
        assert_eq!(r.max_abs_err(), 0.0);
        // Z is structurally zero, not near a switch
        assert!(!r.kink_warning());
    }

    #[test]
    fn grad_check_scalar_exponential() {
        let model = GcdeModel::new(m(&[&[1.0]]), m(&[&[1.0]]), 0.0, 1.0).unwrap();
        let ds = Dataset::new(m(&[&[1.0]]), m(&[&[0.0]]), None).unwrap();
        let r = grad_check(&model, &ds, &SolverConfig::rk4(200).unwrap(), 1e-5).unwrap();
        assert!(r.norm_rel_err() <= 1e-5, "{}", r.norm_rel_err());
        assert!(!r.kink_warning());
        // L = e^{2w}/2 so dL/dw = e^{2w} = e² at w = 1
        let e2 = std::f64::consts::E.powi(2);
        assert!((r.analytic.get(0, 0) - e2).abs() / e2 < 1e-8);
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let model = GcdeModel::new(m(&[&[1.0]]), m(&[&[1.0]]), 0.0, 1.0).unwrap();
        let ds = Dataset::new(m(&[&[1.0]]), m(&[&[0.0]]), None).unwrap();
        assert!(grad_check(&model, &ds, &SolverConfig::rk4(2).unwrap(), 0.0).is_err());
    }

    #[test]
    fn fit_with_zero_learning_rate_is_constant() {
        let model = GcdeModel::new(m(&[&[1.0, 0.5], &[0.5, 1.0]]), m(&[&[0.5]]), 0.0, 1.0).unwrap();
        let ds = Dataset::new(m(&[&[1.0], &[0.5]]), m(&[&[2.0], &[1.0]]), None).unwrap();
        let tc = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            solver: SolverConfig::rk4(20).unwrap(),
            seed: 0,
        };
        let (trained, losses) = fit(&model, &ds, &tc).unwrap();
        assert_eq!(losses.len(), 5);
        assert!(losses.iter().all(|&l| l == losses[0]));
        assert_eq!(trained, model);
    }

    #[test]
    fn fit_at_optimum_stays_at_zero() {
        let model = GcdeModel::new(m(&[&[1.0, 0.5], &[0.5, 1.0]]), m(&[&[0.5]]), 0.0, 1.0).unwrap();
        let h0 = m(&[&[1.0], &[0.5]]);
        let cfg = SolverConfig::rk4(20).unwrap();
        let target = integrate_forward(&model, &h0, &cfg).unwrap().final_state().clone();
        let ds = Dataset::new(h0, target, None).unwrap();
        let tc = TrainConfig {
            learning_rate: 0.5,
            epochs: 10,
            solver: cfg,
            seed: 0,
        };
        let (_, losses) = fit(&model, &ds, &tc).unwrap();
        assert!(losses.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn fit_reports_divergence_with_partial_history() {
        let model = GcdeModel::new(m(&[&[1.0]]), m(&[&[1.0]]), 0.0, 1.0).unwrap();
        let ds = Dataset::new(m(&[&[1.0]]), m(&[&[0.0]]), None).unwrap();
        let tc = TrainConfig {
            learning_rate: -1e300,
            epochs: 3,
            solver: SolverConfig::rk4(5).unwrap(),
            seed: 0,
        };
        assert!(fit(&model, &ds, &tc).is_err());
        // a huge step pushes W far positive and the forward solve overflows
        let ds = Dataset::new(m(&[&[1.0]]), m(&[&[1000.0]]), None).unwrap();
        let tc = TrainConfig {
            learning_rate: 1e300,
            ..tc
        };
        match fit(&model, &ds, &tc) {
            Err(GcdeError::TrainingDiverged { epoch, losses }) => {
                assert!(epoch >= 1);
                assert_eq!(losses.len(), epoch);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
