use super::smoother::{BlockJacobiSmoother, PIVOT_TOLERANCE};
use super::{PrecondError, Preconditioner};
use crate::linalg::{remove_mean, BandCholesky, SparseOperator};
use crate::spectral::Prolongation;

/// Largest accepted relative residual of `P c = 1`.
const KERNEL_TOLERANCE: f64 = 1e-10;

/// Two-grid preconditioner: pre-smoothing, coarse correction, post-smoothing.
///
/// The coarse operator `A^c = Pᵀ A P` inherits the one-dimensional kernel
/// spanned by `c` with `P c = 1`. One coarse unknown with `c_p ≠ 0` is pinned
/// to zero (its row and column replaced by the identity) so that the remaining
/// system is positive definite; any constant shift this introduces is removed
/// by the final zero-mean projection.
#[derive(Debug, Clone)]
pub struct TwoGridPreconditioner {
    a: SparseOperator,
    p: Prolongation,
    smoother: BlockJacobiSmoother,
    coarse: BandCholesky,
    pinned: usize,
}

/// Sparse `Pᵀ A P`, one block column at a time.
fn galerkin_triplets(a: &SparseOperator, p: &Prolongation) -> Vec<(usize, usize, f64)> {
    let n_c = p.n_c();
    let mesh = p.mesh();
    let mut scratch = vec![0.0; a.dim()];
    let mut seen = vec![false; a.dim()];
    let mut touched: Vec<usize> = Vec::new();
    let mut triplets = Vec::new();
    for (j, block) in p.blocks().iter().enumerate() {
        let cells = p.element_cells(j);
        for k in 0..n_c {
            for (l, &c) in cells.iter().enumerate() {
                let v = block.basis[(l, k)];
                let (cols, vals) = a.row(c);
                for (&col, &aval) in cols.iter().zip(vals) {
                    if !seen[col] {
                        seen[col] = true;
                        touched.push(col);
                    }
                    scratch[col] += aval * v;
                }
            }
            let mut elements: Vec<usize> = touched.iter().map(|&c| mesh.element_of(c)).collect();
            elements.sort_unstable();
            elements.dedup();
            for &i in &elements {
                let bi = &p.block(i).basis;
                for kk in 0..n_c {
                    let s: f64 = p.element_cells(i).iter().enumerate().map(|(l, &c)| bi[(l, kk)] * scratch[c]).sum();
                    triplets.push((i * n_c + kk, j * n_c + k, s));
                }
            }
            for &c in &touched {
                scratch[c] = 0.0;
                seen[c] = false;
            }
            touched.clear();
        }
    }
    triplets
}

/// Assembles and factorizes the pinned coarse operator.
pub fn build_two_grid(a: &SparseOperator, p: Prolongation, smoother: BlockJacobiSmoother) -> Result<TwoGridPreconditioner, PrecondError> {
    if a.dim() != p.n_fine() || smoother.dim() != a.dim() {
        return Err(PrecondError::Dimension(format!(
            "A is {}x{}, P has {} rows, smoother acts on {}",
            a.dim(),
            a.dim(),
            p.n_fine(),
            smoother.dim()
        )));
    }
    let (c, residual) = p.constant_coefficients();
    if !(residual <= KERNEL_TOLERANCE) {
        return Err(PrecondError::KernelCondition { residual });
    }
    let n_c = p.n_c();
    let nc_total = p.n_coarse_dofs();
    let last = p.blocks().len() - 1;
    let pinned = (last * n_c..nc_total)
        .reduce(|best, i| if c[i].abs() > c[best].abs() { i } else { best })
        .unwrap_or(nc_total - 1);

    let ac = SparseOperator::from_triplets(nc_total, galerkin_triplets(a, &p));
    let bandwidth = (p.mesh().cx + 1) * n_c;
    let coarse = BandCholesky::factor_with_tolerance(nc_total, bandwidth, PIVOT_TOLERANCE, |i, j| {
        if i == pinned || j == pinned {
            if i == j {
                1.0
            } else {
                0.0
            }
        } else {
            ac.get(i, j)
        }
    })
    .map_err(|source| PrecondError::CoarseFactor { source })?;
    log::debug!("coarse operator: {nc_total} unknowns, {} nonzeros, pinned dof {pinned}", ac.nnz());
    Ok(TwoGridPreconditioner { a: a.clone(), p, smoother, coarse, pinned })
}

impl TwoGridPreconditioner {
    pub fn prolongation(&self) -> &Prolongation {
        &self.p
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.a
    }

    /// Coarse unknown fixed to zero in the coarse solve.
    pub fn pinned_dof(&self) -> usize {
        self.pinned
    }

    /// `x = A^c⁺ b` with the pinned unknown set to zero.
    pub fn coarse_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        x[self.pinned] = 0.0;
        self.coarse.solve_in_place(&mut x);
        x
    }

    fn residual(&self, r: &[f64], w: &[f64], s: &mut [f64]) {
        self.a.mul_vec_into(w, s);
        for (si, ri) in s.iter_mut().zip(r) {
            *si = ri - *si;
        }
    }
}

impl Preconditioner for TwoGridPreconditioner {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn apply(&self, r: &[f64], out: &mut [f64]) {
        let n = self.a.dim();
        let mut w = vec![0.0; n];
        let mut s = vec![0.0; n];
        self.smoother.apply(r, &mut w);
        self.residual(r, &w, &mut s);
        let correction = self.p.apply(&self.coarse_solve(&self.p.apply_transpose(&s)));
        for (wi, ci) in w.iter_mut().zip(&correction) {
            *wi += ci;
        }
        self.residual(r, &w, &mut s);
        self.smoother.apply(&s, out);
        for (o, wi) in out.iter_mut().zip(&w) {
            *o += wi;
        }
        remove_mean(out);
    }
}
