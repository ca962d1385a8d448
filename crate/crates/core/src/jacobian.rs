//! Explicit unrolled Jacobians of matrix-to-matrix maps.
//!
//! These are the memory-hungry reference constructions: each map
//! `F: R^{r x c} -> R^{r' x c'}` is flattened to `R^{rc} -> R^{r'c'}` and its
//! full `r'c' x rc` Jacobian is materialized. Inputs of the products below are
//! unrolled by columns and outputs by rows; [`UnrolledJacobian`] records the
//! orders so a VJP can always undo them correctly.
//!
//! Construction is capped at [`JACOBIAN_SIZE_LIMIT`] entries per flattened side.

use crate::error::{GcdeError, Result};
use crate::linalg::{roll, unroll, Matrix, UnrollOrder, Vector};

/// Maximum flattened input or output length an oracle Jacobian may have.
pub const JACOBIAN_SIZE_LIMIT: usize = 256;

/// Default central-difference step.
pub const DEFAULT_FD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledJacobian {
    inner: Matrix,
    out_shape: (usize, usize),
    in_shape: (usize, usize),
    out_order: UnrollOrder,
    in_order: UnrollOrder,
}

impl UnrolledJacobian {
    pub fn new(
        inner: Matrix,
        out_shape: (usize, usize),
        out_order: UnrollOrder,
        in_shape: (usize, usize),
        in_order: UnrollOrder,
    ) -> Result<Self> {
        let expected = (out_shape.0 * out_shape.1, in_shape.0 * in_shape.1);
        if inner.shape() != expected {
            return Err(GcdeError::shape("UnrolledJacobian", inner.shape(), expected));
        }
        Ok(UnrolledJacobian {
            inner,
            out_shape,
            in_shape,
            out_order,
            in_order,
        })
    }

    pub fn inner(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_inner(self) -> Matrix {
        self.inner
    }

    /// Shape of the function output before unrolling.
    pub fn out_shape(&self) -> (usize, usize) {
        self.out_shape
    }

    /// Shape of the function input before unrolling.
    pub fn in_shape(&self) -> (usize, usize) {
        self.in_shape
    }

    pub fn out_order(&self) -> UnrollOrder {
        self.out_order
    }

    pub fn in_order(&self) -> UnrollOrder {
        self.in_order
    }

    /// `J_self · J_inner` for the composition `self ∘ inner`.
    pub fn compose(&self, inner: &UnrolledJacobian) -> Result<UnrolledJacobian> {
        if self.in_shape != inner.out_shape || self.in_order != inner.out_order {
            return Err(GcdeError::shape("compose", self.in_shape, inner.out_shape));
        }
        UnrolledJacobian::new(
            self.inner.matmul(&inner.inner)?,
            self.out_shape,
            self.out_order,
            inner.in_shape,
            inner.in_order,
        )
    }
}

fn guard(out_len: usize, in_len: usize) -> Result<()> {
    let size = out_len.max(in_len);
    if size > JACOBIAN_SIZE_LIMIT {
        return Err(GcdeError::OracleGuard {
            size,
            limit: JACOBIAN_SIZE_LIMIT,
        });
    }
    Ok(())
}

fn require_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(GcdeError::Dimension(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// Jacobian of `A ↦ X·A` for `X: m x n` and `A: n x p`.
///
/// Row block `i` (of `m`) is `p x np` and carries `x_{i,:}` on its block
/// diagonal, i.e. `∂b_{ij}/∂a_{kl} = x_{ik}·δ_{jl}`.
pub fn jacobian_left_mul(x: &Matrix, p: usize) -> Result<UnrolledJacobian> {
    require_positive("p", p)?;
    let (m, n) = x.shape();
    guard(m * p, n * p)?;
    let out_order = UnrollOrder::ByRows;
    let in_order = UnrollOrder::ByCols;
    let mut j = Matrix::zeros(m * p, n * p);
    for i in 0..m {
        for col in 0..p {
            let r = out_order.flat_index(i, col, m, p);
            for k in 0..n {
                j.set(r, in_order.flat_index(k, col, n, p), x.get(i, k));
            }
        }
    }
    UnrolledJacobian::new(j, (m, p), out_order, (n, p), in_order)
}

/// Jacobian of `B ↦ B·Y` for `B: m x p` and `Y: p x q`: `m` copies of `Yᵀ` on
/// the block diagonal. Both sides are unrolled by rows.
pub fn jacobian_right_mul(y: &Matrix, m: usize) -> Result<UnrolledJacobian> {
    require_positive("m", m)?;
    let (p, q) = y.shape();
    guard(m * q, m * p)?;
    let order = UnrollOrder::ByRows;
    let mut j = Matrix::zeros(m * q, m * p);
    for blk in 0..m {
        for r in 0..q {
            for c in 0..p {
                j.set(blk * q + r, blk * p + c, y.get(c, r));
            }
        }
    }
    UnrolledJacobian::new(j, (m, q), order, (m, p), order)
}

/// Jacobian of `A ↦ X·A·Y` for `X: m x n`, `A: n x p`, `Y: p x q`.
///
/// Block `(i, l)` (each `q x n`) is the outer product `y_{l,:}ᵀ · x_{i,:}`, so
/// `∂c_{ij}/∂a_{kl} = y_{lj}·x_{ik}`. This equals
/// `jacobian_right_mul(y, m) · jacobian_left_mul(x, p)` entry for entry.
pub fn jacobian_sandwich(x: &Matrix, y: &Matrix, p: usize) -> Result<UnrolledJacobian> {
    require_positive("p", p)?;
    if y.rows() != p {
        return Err(GcdeError::shape("jacobian_sandwich", (x.cols(), p), y.shape()));
    }
    let (m, n) = x.shape();
    let q = y.cols();
    guard(m * q, n * p)?;
    let out_order = UnrollOrder::ByRows;
    let in_order = UnrollOrder::ByCols;
    let mut j = Matrix::zeros(m * q, n * p);
    for i in 0..m {
        for jj in 0..q {
            let r = out_order.flat_index(i, jj, m, q);
            for l in 0..p {
                let ylj = y.get(l, jj);
                for k in 0..n {
                    j.set(r, in_order.flat_index(k, l, n, p), ylj * x.get(i, k));
                }
            }
        }
    }
    UnrolledJacobian::new(j, (m, q), out_order, (n, p), in_order)
}

fn check_gcde_shapes(a: &Matrix, h: &Matrix, w: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(GcdeError::shape("gcde adjacency", a.shape(), (a.rows(), a.rows())));
    }
    if !w.is_square() {
        return Err(GcdeError::shape("gcde weights", w.shape(), (w.rows(), w.rows())));
    }
    if h.shape() != (a.rows(), w.rows()) {
        return Err(GcdeError::shape("gcde state", h.shape(), (a.rows(), w.rows())));
    }
    Ok(())
}

/// Scales row `r` of `j` by `step(z)` at the `r`-th entry of `unroll(z, ByRows)`.
fn gate_rows(mut j: UnrolledJacobian, z: &Matrix) -> UnrolledJacobian {
    let mask = unroll(&z.step(), UnrollOrder::ByRows);
    let cols = j.inner.cols();
    let mut data = j.inner.as_slice().to_vec();
    for (r, &g) in mask.as_slice().iter().enumerate() {
        for v in &mut data[r * cols..(r + 1) * cols] {
            *v *= g;
        }
    }
    j.inner = Matrix::new(j.inner.rows(), cols, data).expect("same shape");
    j
}

/// Full Jacobian of `H ↦ ReLU(A·H·W)` with respect to `H` (unrolled by columns),
/// output unrolled by rows. Shape `NC x NC`.
pub fn gcde_jacobian_wrt_state(a: &Matrix, w: &Matrix, h: &Matrix) -> Result<UnrolledJacobian> {
    check_gcde_shapes(a, h, w)?;
    let z = a.matmul(h)?.matmul(w)?;
    let j = jacobian_sandwich(a, w, w.rows())?;
    Ok(gate_rows(j, &z))
}

/// Full Jacobian of `W ↦ ReLU((A·H)·W)` with respect to `W` (unrolled by
/// columns), output unrolled by rows. Shape `NC x C²`.
pub fn gcde_jacobian_wrt_weights(a: &Matrix, h: &Matrix, w: &Matrix) -> Result<UnrolledJacobian> {
    check_gcde_shapes(a, h, w)?;
    let ah = a.matmul(h)?;
    let z = ah.matmul(w)?;
    let j = jacobian_left_mul(&ah, w.cols())?;
    Ok(gate_rows(j, &z))
}

/// Central-difference Jacobian of `f` at `at`.
///
/// Column `k` perturbs the input entry at flat position `k` of `in_order`;
/// rows follow `out_order`.
pub fn numeric_jacobian<F>(
    f: F,
    at: &Matrix,
    in_order: UnrollOrder,
    out_order: UnrollOrder,
    eps: f64,
) -> Result<UnrolledJacobian>
where
    F: Fn(&Matrix) -> Matrix,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GcdeError::Validation(format!("eps must be positive, got {eps}")));
    }
    let base = f(at);
    let (in_rows, in_cols) = at.shape();
    let (out_rows, out_cols) = base.shape();
    let n_in = in_rows * in_cols;
    let n_out = out_rows * out_cols;
    guard(n_out, n_in)?;

    let mut j = Matrix::zeros(n_out, n_in);
    let mut probe = at.clone();
    for i in 0..in_rows {
        for c in 0..in_cols {
            let col = in_order.flat_index(i, c, in_rows, in_cols);
            let orig = at.get(i, c);
            probe.set(i, c, orig + eps);
            let plus = f(&probe);
            probe.set(i, c, orig - eps);
            let minus = f(&probe);
            probe.set(i, c, orig);
            if plus.shape() != base.shape() || minus.shape() != base.shape() {
                return Err(GcdeError::shape("numeric_jacobian", base.shape(), plus.shape()));
            }
            if !plus.is_finite() || !minus.is_finite() {
                return Err(GcdeError::NonFinite(format!(
                    "function output at perturbed entry ({i}, {c})"
                )));
            }
            for oi in 0..out_rows {
                for oc in 0..out_cols {
                    let r = out_order.flat_index(oi, oc, out_rows, out_cols);
                    j.set(r, col, (plus.get(oi, oc) - minus.get(oi, oc)) / (2.0 * eps));
                }
            }
        }
    }
    UnrolledJacobian::new(j, (out_rows, out_cols), out_order, (in_rows, in_cols), in_order)
}

/// `unroll(upstream)ᵀ · J`, rolled back to the input's shape and order.
pub fn vjp_via_jacobian(j: &UnrolledJacobian, upstream: &Matrix) -> Result<Matrix> {
    if upstream.shape() != j.out_shape {
        return Err(GcdeError::shape("vjp_via_jacobian", upstream.shape(), j.out_shape));
    }
    let u = unroll(upstream, j.out_order);
    let row = Matrix::new(1, u.len(), u.into_inner())?;
    let prod = row.matmul(&j.inner)?;
    let v = Vector::new(prod.as_slice().to_vec())?;
    roll(&v, j.in_shape.0, j.in_shape.1, j.in_order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_rel_err;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// `P` with `P · unroll(A, ByCols) = unroll(A, ByRows)` for `A: n x p`.
    fn cols_to_rows_permutation(n: usize, p: usize) -> Matrix {
        let mut pm = Matrix::zeros(n * p, n * p);
        for i in 0..n {
            for j in 0..p {
                pm.set(
                    UnrollOrder::ByRows.flat_index(i, j, n, p),
                    UnrollOrder::ByCols.flat_index(i, j, n, p),
                    1.0,
                );
            }
        }
        pm
    }

    #[test]
    fn left_mul_examples() {
        let j = jacobian_left_mul(&m(&[&[3.5]]), 1).unwrap();
        assert_eq!(j.inner(), &m(&[&[3.5]]));

        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(jacobian_left_mul(&x, 1).unwrap().inner(), &x);

        // g(A) = A: the Jacobian is the ByCols -> ByRows permutation, confirmed
        // against central differences of the identity map.
        let j = jacobian_left_mul(&Matrix::identity(2), 2).unwrap();
        let at = m(&[&[0.3, -0.7], &[1.1, 0.2]]);
        let fd = numeric_jacobian(|a| a.clone(), &at, UnrollOrder::ByCols, UnrollOrder::ByRows, 1e-5)
            .unwrap();
        assert!(j.inner().max_abs_diff(fd.inner()).unwrap() < 1e-10);
        assert_eq!(j.inner(), &cols_to_rows_permutation(2, 2));
        assert_eq!(
            j.inner(),
            &m(&[
                &[1.0, 0.0, 0.0, 0.0],
                &[0.0, 0.0, 1.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 1.0],
            ])
        );
        assert!(jacobian_left_mul(&x, 0).is_err());
    }

    #[test]
    fn right_mul_examples() {
        assert_eq!(
            jacobian_right_mul(&Matrix::identity(2), 2).unwrap().inner(),
            &Matrix::identity(4)
        );
        assert_eq!(jacobian_right_mul(&m(&[&[-2.0]]), 1).unwrap().inner(), &m(&[&[-2.0]]));
        let y = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let expected = m(&[
            &[1.0, 3.0, 0.0, 0.0],
            &[2.0, 4.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 3.0],
            &[0.0, 0.0, 2.0, 4.0],
        ]);
        let j = jacobian_right_mul(&y, 2).unwrap();
        assert_eq!(j.inner(), &expected);
        let at = m(&[&[0.1, 0.2], &[-0.3, 0.4]]);
        let fd = numeric_jacobian(
            |b| b.matmul(&y).unwrap(),
            &at,
            UnrollOrder::ByRows,
            UnrollOrder::ByRows,
            1e-5,
        )
        .unwrap();
        assert!(fd.inner().max_abs_diff(&expected).unwrap() < 1e-9);
        assert!(jacobian_right_mul(&y, 0).is_err());
    }

    #[test]
    fn sandwich_examples() {
        let j = jacobian_sandwich(&m(&[&[2.0]]), &m(&[&[3.0]]), 1).unwrap();
        assert_eq!(j.inner(), &m(&[&[6.0]]));
        let id = Matrix::identity(2);
        assert_eq!(
            jacobian_sandwich(&id, &id, 2).unwrap().inner(),
            jacobian_left_mul(&id, 2).unwrap().inner()
        );
        assert!(jacobian_sandwich(&id, &id, 3).is_err());
    }

    #[test]
    fn sandwich_is_exact_chain_rule_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (mm, n, p, q) = (
                rng.gen_range(1..=4),
                rng.gen_range(1..=4),
                rng.gen_range(1..=4),
                rng.gen_range(1..=4),
            );
            let x = rand_matrix(&mut rng, mm, n);
            let y = rand_matrix(&mut rng, p, q);
            let direct = jacobian_sandwich(&x, &y, p).unwrap();
            let chained = jacobian_right_mul(&y, mm)
                .unwrap()
                .compose(&jacobian_left_mul(&x, p).unwrap())
                .unwrap();
            assert_eq!(direct, chained);
        }
    }

    #[test]
    fn sandwich_entries_are_single_entry_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_matrix(&mut rng, 2, 3);
        let y = rand_matrix(&mut rng, 4, 2);
        let a0 = rand_matrix(&mut rng, 3, 4);
        let j = jacobian_sandwich(&x, &y, 4).unwrap();
        let c = |a: &Matrix| x.matmul(a).unwrap().matmul(&y).unwrap();
        let eps = 1e-6;
        for k in 0..3 {
            for l in 0..4 {
                let mut ap = a0.clone();
                ap.set(k, l, a0.get(k, l) + eps);
                let dc = c(&ap).sub(&c(&a0)).unwrap().scale(1.0 / eps);
                for i in 0..2 {
                    for jj in 0..2 {
                        let entry = j.inner().get(i * 2 + jj, l * 3 + k);
                        assert!((entry - dc.get(i, jj)).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn left_mul_zero_block_structure() {
        let x = Matrix::from_fn(3, 2, |i, j| 1.0 + (i * 2 + j) as f64);
        let (mm, n, p) = (3, 2, 4);
        let j = jacobian_left_mul(&x, p).unwrap();
        for i in 0..mm {
            for col_out in 0..p {
                for k in 0..n {
                    for col_in in 0..p {
                        let v = j.inner().get(i * p + col_out, col_in * n + k);
                        if col_out != col_in {
                            assert_eq!(v, 0.0);
                        } else {
                            assert_eq!(v, x.get(i, k));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gcde_state_jacobian_examples() {
        // ReLU inactive everywhere: reduces to the identity sandwich.
        let h = m(&[&[1.0, 2.0], &[0.5, 3.0], &[4.0, 0.25]]);
        let j = gcde_jacobian_wrt_state(&Matrix::identity(3), &Matrix::identity(2), &h).unwrap();
        assert_eq!(j.inner(), jacobian_left_mul(&Matrix::identity(3), 2).unwrap().inner());

        // Negative pre-activation everywhere: gate closed.
        let neg = h.scale(-1.0);
        let j = gcde_jacobian_wrt_state(&Matrix::identity(3), &Matrix::identity(2), &neg).unwrap();
        assert_eq!(j.inner(), &Matrix::zeros(6, 6));
    }

    #[test]
    fn gcde_weight_jacobian_examples() {
        let a = m(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let w = m(&[&[1.0, -1.0], &[2.0, 0.5]]);
        let j = gcde_jacobian_wrt_weights(&a, &Matrix::zeros(2, 2), &w).unwrap();
        assert_eq!(j.inner(), &Matrix::zeros(4, 4));

        let j = gcde_jacobian_wrt_weights(&m(&[&[1.0]]), &m(&[&[2.0]]), &m(&[&[3.0]])).unwrap();
        assert_eq!(j.inner(), &m(&[&[2.0]]));
    }

    #[test]
    fn gcde_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 5 {
            let a0 = rand_matrix(&mut rng, 3, 3);
            let a = a0.add(&a0.transpose()).unwrap();
            let h = rand_matrix(&mut rng, 3, 2);
            let w = rand_matrix(&mut rng, 2, 2);
            let z = a.matmul(&h).unwrap().matmul(&w).unwrap();
            if z.min_abs() < 0.1 {
                continue;
            }
            checked += 1;
            let f_h = |hh: &Matrix| a.matmul(hh).unwrap().matmul(&w).unwrap().relu();
            let fd = numeric_jacobian(f_h, &h, UnrollOrder::ByCols, UnrollOrder::ByRows, 1e-5)
                .unwrap();
            let an = gcde_jacobian_wrt_state(&a, &w, &h).unwrap();
            assert!(norm_rel_err(an.inner(), fd.inner()).unwrap() <= 1e-6);

            let f_w = |ww: &Matrix| a.matmul(&h).unwrap().matmul(ww).unwrap().relu();
            let fd = numeric_jacobian(f_w, &w, UnrollOrder::ByCols, UnrollOrder::ByRows, 1e-5)
                .unwrap();
            let an = gcde_jacobian_wrt_weights(&a, &h, &w).unwrap();
            assert!(norm_rel_err(an.inner(), fd.inner()).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn numeric_jacobian_of_linear_and_relu_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_matrix(&mut rng, 3, 2);
        let at = rand_matrix(&mut rng, 2, 3);
        let fd = numeric_jacobian(
            |a| x.matmul(a).unwrap(),
            &at,
            UnrollOrder::ByCols,
            UnrollOrder::ByRows,
            1e-5,
        )
        .unwrap();
        let an = jacobian_left_mul(&x, 3).unwrap();
        assert!(fd.inner().max_abs_diff(an.inner()).unwrap() <= 1e-9);

        let at = m(&[&[0.5, -0.2], &[-1.5, 0.3]]);
        let fd = numeric_jacobian(|a| a.relu(), &at, UnrollOrder::ByRows, UnrollOrder::ByRows, 1e-5)
            .unwrap();
        let expected = Matrix::diag(unroll(&at.step(), UnrollOrder::ByRows).as_slice());
        assert!(fd.inner().max_abs_diff(&expected).unwrap() < 1e-10);
    }

    #[test]
    fn numeric_jacobian_errors() {
        let at = Matrix::ones(2, 2);
        let id = |a: &Matrix| a.clone();
        assert!(numeric_jacobian(id, &at, UnrollOrder::ByRows, UnrollOrder::ByRows, 0.0).is_err());
        let blowup = |a: &Matrix| a.map(|v| if v > 1.0 { f64::INFINITY } else { v });
        assert!(matches!(
            numeric_jacobian(blowup, &at, UnrollOrder::ByRows, UnrollOrder::ByRows, 1e-5),
            Err(GcdeError::NonFinite(_))
        ));
    }

    #[test]
    fn oracle_size_guard() {
        let x = Matrix::identity(17);
        assert!(matches!(
            jacobian_left_mul(&x, 16),
            Err(GcdeError::OracleGuard { size: 272, .. })
        ));
        assert!(jacobian_left_mul(&Matrix::identity(16), 16).is_ok());
    }

    #[test]
    fn vjp_via_jacobian_examples() {
        let g = m(&[&[1.0, -2.0], &[0.5, 4.0]]);
        let id = UnrolledJacobian::new(
            Matrix::identity(4),
            (2, 2),
            UnrollOrder::ByRows,
            (2, 2),
            UnrollOrder::ByRows,
        )
        .unwrap();
        assert_eq!(vjp_via_jacobian(&id, &g).unwrap(), g);

        let eye = Matrix::identity(2);
        let j = jacobian_sandwich(&eye, &eye, 2).unwrap();
        assert_eq!(vjp_via_jacobian(&j, &g).unwrap(), g);
        assert!(vjp_via_jacobian(&j, &Matrix::zeros(2, 3)).is_err());
    }
}
