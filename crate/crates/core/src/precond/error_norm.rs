use super::{PrecondError, Preconditioner, TwoGridPreconditioner};
use crate::linalg::{dot, remove_mean, SparseOperator};
use crate::rng::SeededStream;

/// Largest system for which the error-operator norm is estimated.
pub const ERROR_NORM_MAX_DIM: usize = 4096;

/// Relative change of successive Ritz values treated as converged.
const STOP_TOLERANCE: f64 = 1e-12;
/// Relative change still accepted when the iteration budget runs out.
const ACCEPT_TOLERANCE: f64 = 1e-6;
/// Seed of the fixed starting vector, so repeated estimates are comparable.
const START_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNormEstimate {
    /// Estimate of `‖E‖_A` for `E = I − B⁻¹A`.
    pub value: f64,
    pub iterations: usize,
}

/// Power iteration for the A-norm of the two-grid error propagator
/// `E = I − B⁻¹A` on the zero-mean subspace.
///
/// `E` is self-adjoint and positive semidefinite in the A-inner product, so
/// its A-norm is its largest eigenvalue; the Ritz value reported at each step
/// is the A-Rayleigh quotient `⟨Ev, v⟩_A / ⟨v, v⟩_A`.
pub fn estimate_error_norm(
    a: &SparseOperator,
    m: &TwoGridPreconditioner,
    max_iterations: usize,
) -> Result<ErrorNormEstimate, PrecondError> {
    let n = a.dim();
    if n > ERROR_NORM_MAX_DIM {
        return Err(PrecondError::TooLarge { n, max: ERROR_NORM_MAX_DIM });
    }
    if m.dim() != n {
        return Err(PrecondError::Dimension(format!("A has {n} rows, preconditioner acts on {}", m.dim())));
    }
    let mut rng = SeededStream::new(START_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    remove_mean(&mut v);
    let mut av = a.mul_vec(&v);
    let scale = dot(&v, &av).sqrt();
    v.iter_mut().for_each(|x| *x /= scale);
    av.iter_mut().for_each(|x| *x /= scale);

    let mut ev = vec![0.0; n];
    let mut previous = f64::NAN;
    let mut last = f64::NAN;
    for it in 1..=max_iterations {
        // ev = v - B⁻¹ A v
        m.apply(&av, &mut ev);
        for (e, x) in ev.iter_mut().zip(&v) {
            *e = x - *e;
        }
        remove_mean(&mut ev);
        let aev = a.mul_vec(&ev);
        let ritz = dot(&ev, &av);
        let norm = dot(&ev, &aev).max(0.0).sqrt();
        previous = last;
        last = ritz;
        if norm <= 1e-14 {
            return Ok(ErrorNormEstimate { value: ritz.max(0.0), iterations: it });
        }
        if (last - previous).abs() <= STOP_TOLERANCE * last.abs() {
            return Ok(ErrorNormEstimate { value: last, iterations: it });
        }
        v.iter_mut().zip(&ev).for_each(|(x, e)| *x = e / norm);
        av.iter_mut().zip(&aev).for_each(|(x, e)| *x = e / norm);
    }
    if (last - previous).abs() <= ACCEPT_TOLERANCE * last.abs() {
        Ok(ErrorNormEstimate { value: last, iterations: max_iterations })
    } else {
        Err(PrecondError::PowerIteration { previous, last })
    }
}
