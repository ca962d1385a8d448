//! Vectorized vector-Jacobian products.
//!
//! Closed-form replacements for `unroll(G)ᵀ · J` that never build the unrolled
//! Jacobian: every intermediate is a product of the original matrices, so the
//! only buffers allocated have the shapes of `A`, `H` or `W`.
//!
//! For `C = X·A·Y` the VJP with respect to `A` is `Xᵀ·G·Yᵀ`, and for `B = X·A`
//! it is `Xᵀ·G`. The GCDE kernels specialize these to `f(H) = ReLU(A·H·W)`
//! with the ReLU derivative gating the upstream adjoint:
//!
//! * state adjoint:   `da/dt  = −Aᵀ·(a ⊙ step(Z))·Wᵀ`
//! * weight integrand: `dG/dt = −(A·H)ᵀ·(a ⊙ step(Z))`
//!
//! where `Z = A·H·W` is the pre-activation. The general kernels return the
//! unsigned VJP; the GCDE kernels include the leading minus of the adjoint ODE.

use crate::error::{GcdeError, Result};
use crate::linalg::Matrix;

/// Tolerance used when checking that the adjacency is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// `Xᵀ · upstream · Yᵀ`: VJP of `A ↦ X·A·Y` (result has the shape of `A`).
pub fn vjp_sandwich(x: &Matrix, y: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if upstream.shape() != (x.rows(), y.cols()) {
        return Err(GcdeError::shape("vjp_sandwich", upstream.shape(), (x.rows(), y.cols())));
    }
    x.matmul_tn(upstream)?.matmul_nt(y)
}

/// `Xᵀ · upstream`: VJP of `A ↦ X·A`.
pub fn vjp_left(x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if upstream.rows() != x.rows() {
        return Err(GcdeError::shape("vjp_left", upstream.shape(), x.shape()));
    }
    x.matmul_tn(upstream)
}

fn check_shapes(a: &Matrix, w: &Matrix, h: &Matrix, adj: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(GcdeError::shape("adjacency", a.shape(), (a.rows(), a.rows())));
    }
    if !w.is_square() {
        return Err(GcdeError::shape("weights", w.shape(), (w.rows(), w.rows())));
    }
    let hs = (a.rows(), w.rows());
    if h.shape() != hs {
        return Err(GcdeError::shape("state", h.shape(), hs));
    }
    if adj.shape() != hs {
        return Err(GcdeError::shape("adjoint", adj.shape(), hs));
    }
    Ok(())
}

pub(crate) fn check_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(GcdeError::Validation(format!(
            "adjacency must be symmetric to within {SYMMETRY_TOL}"
        )));
    }
    Ok(())
}

/// `a ⊙ step(A·H·W)` together with `A·H`.
fn gated_adjoint(a: &Matrix, w: &Matrix, h: &Matrix, adj: &Matrix) -> Result<(Matrix, Matrix)> {
    let ah = a.matmul(h)?;
    let z = ah.matmul(w)?;
    let gated = adj.hadamard(&z.step())?;
    Ok((ah, gated))
}

/// Right-hand side of the state adjoint ODE, `−Aᵀ·(adj ⊙ step(A·H·W))·Wᵀ`.
///
/// Rejects a non-symmetric adjacency; see [`adjoint_state_rhs_unchecked`].
pub fn adjoint_state_rhs(a: &Matrix, w: &Matrix, h: &Matrix, adj: &Matrix) -> Result<Matrix> {
    check_shapes(a, w, h, adj)?;
    check_symmetric(a)?;
    adjoint_state_rhs_unchecked(a, w, h, adj)
}

/// As [`adjoint_state_rhs`] without the symmetry check. Uses `Aᵀ`, so the
/// result is the correct adjoint for any square `A`.
pub fn adjoint_state_rhs_unchecked(
    a: &Matrix,
    w: &Matrix,
    h: &Matrix,
    adj: &Matrix,
) -> Result<Matrix> {
    check_shapes(a, w, h, adj)?;
    let (_, gated) = gated_adjoint(a, w, h, adj)?;
    Ok(vjp_sandwich(a, w, &gated)?.scale(-1.0))
}

/// Integrand of the weight gradient, `−(A·H)ᵀ·(adj ⊙ step(A·H·W))`, shape `C x C`.
pub fn weight_grad_rhs(a: &Matrix, h: &Matrix, w: &Matrix, adj: &Matrix) -> Result<Matrix> {
    check_shapes(a, w, h, adj)?;
    let (ah, gated) = gated_adjoint(a, w, h, adj)?;
    Ok(vjp_left(&ah, &gated)?.scale(-1.0))
}

/// Both backward right-hand sides from one evaluation of the pre-activation.
/// Shapes are assumed valid (checked once by the caller).
pub(crate) fn backward_rhs_pair(
    a: &Matrix,
    w: &Matrix,
    h: &Matrix,
    adj: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let (ah, gated) = gated_adjoint(a, w, h, adj)?;
    let d_adj = vjp_sandwich(a, w, &gated)?.scale(-1.0);
    let d_w = vjp_left(&ah, &gated)?.scale(-1.0);
    Ok((d_adj, d_w))
}
