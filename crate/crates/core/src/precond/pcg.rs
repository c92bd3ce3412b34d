use super::{PrecondError, Preconditioner};
use crate::linalg::{axpy, dot, norm2, remove_mean, SparseOperator};

/// Outcome of a PCG run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Final iterate, shifted to zero mean.
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖r_k‖₂ / ‖F‖₂` for `k = 0..=iterations`; entry 0 is the initial residual.
    pub history: Vec<f64>,
    /// Set when the preconditioned residual norm `√(rᵀB⁻¹r)` grew more than
    /// tenfold in a single step, a sign of a non-SPD or inconsistent preconditioner.
    pub residual_rise: bool,
}

impl SolveReport {
    pub fn final_relative_residual(&self) -> f64 {
        self.history.last().copied().unwrap_or(0.0)
    }
}

/// Preconditioned conjugate gradients from `x₀ = 0`, stopping at `‖r‖/‖F‖ ≤ tol`.
pub fn pcg<M: Preconditioner + ?Sized>(
    a: &SparseOperator,
    f: &[f64],
    m: &M,
    tol: f64,
    maxit: usize,
) -> Result<SolveReport, PrecondError> {
    let n = a.dim();
    if f.len() != n || m.dim() != n {
        return Err(PrecondError::Dimension(format!(
            "A is {n}x{n}, F has {} entries, preconditioner acts on {}",
            f.len(),
            m.dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(PrecondError::InvalidTolerance(tol));
    }
    let sum: f64 = f.iter().sum();
    if sum.abs() > 1e-12 * f.iter().map(|v| v.abs()).sum::<f64>() {
        return Err(PrecondError::IncompatibleRhs { sum });
    }
    let norm_f = norm2(f);
    let mut x = vec![0.0; n];
    let mut history = vec![if norm_f == 0.0 { 0.0 } else { 1.0 }];
    if norm_f == 0.0 {
        return Ok(SolveReport { solution: x, iterations: 0, history, residual_rise: false });
    }

    let mut r = f.to_vec();
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    remove_mean(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut residual_rise = false;

    for it in 1..=maxit {
        a.mul_vec_into(&p, &mut q);
        let curvature = dot(&p, &q);
        if !(curvature > 0.0) {
            return Err(PrecondError::Breakdown { iteration: it, curvature });
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        let relres = norm2(&r) / norm_f;
        history.push(relres);
        if relres <= tol {
            remove_mean(&mut x);
            log::debug!("PCG converged in {it} iterations (relative residual {relres:e})");
            return Ok(SolveReport { solution: x, iterations: it, history, residual_rise });
        }
        m.apply(&r, &mut z);
        remove_mean(&mut z);
        let rz_next = dot(&r, &z);
        if rz_next > 100.0 * rz {
            residual_rise = true;
            log::warn!("preconditioned residual grew more than tenfold at iteration {it}");
        }
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    remove_mean(&mut x);
    Err(PrecondError::NonConvergence(Box::new(SolveReport {
        solution: x,
        iterations: maxit,
        history,
        residual_rise,
    })))
}
