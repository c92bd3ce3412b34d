//! Log-Gaussian fields from a truncated Karhunen–Loève expansion.
//!
//! The covariance operator is discretized by midpoint collocation on the
//! fine-cell centres with cell-area weights, so the discrete eigenproblem is
//! `(h_x h_y) C u = mu u` with `C` the kernel matrix. Modes are scaled to
//! `f = u / sqrt(h_x h_y)`, which makes `sum_a mu_a f_a f_aᵀ` converge to `C`
//! as the truncation reaches `N`.
//!
//! Small meshes use a dense symmetric eigensolver. Larger meshes use Lanczos
//! with full reorthogonalization; because the kernel is stationary on a
//! uniform grid, the kernel matrix is block-Toeplitz and each product is
//! evaluated exactly through a zero-padded 2-D FFT.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{CoeffError, CoefficientField};
use crate::linalg::{axpy, dot, norm2};
use crate::mesh::TwoScaleMesh;
use crate::rng::SeededStream;

/// Meshes with at most this many cells use the dense eigensolver.
pub const DENSE_LIMIT: usize = 1024;

/// Relative tolerance below which negative covariance eigenvalues are treated as roundoff.
const PSD_TOLERANCE: f64 = 1e-10;

/// Ritz pairs are accepted once their residual is below this fraction of the largest eigenvalue.
const LANCZOS_TOLERANCE: f64 = 1e-8;

/// Seed of the Lanczos starting vector; fixed so the basis is reproducible.
const LANCZOS_START_SEED: u64 = 0x4b4c_5354_4152_5400;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFieldSpec {
    /// Variance of `log kappa`.
    pub sigma2: f64,
    /// Correlation length along x.
    pub eta1: f64,
    /// Correlation length along y.
    pub eta2: f64,
    /// Number of KL modes kept.
    pub modes: usize,
}

impl GaussianFieldSpec {
    pub fn validate(&self, mesh: &TwoScaleMesh) -> Result<(), CoeffError> {
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(CoeffError::InvalidSpec(format!("sigma2 must be >= 0, got {}", self.sigma2)));
        }
        if !(self.eta1 > 0.0 && self.eta2 > 0.0) {
            return Err(CoeffError::InvalidSpec("correlation lengths must be positive".into()));
        }
        if self.modes == 0 || self.modes > mesh.n_fine() {
            return Err(CoeffError::InvalidSpec(format!(
                "mode count {} outside 1..={}",
                self.modes,
                mesh.n_fine()
            )));
        }
        Ok(())
    }
}

/// `sigma2 * exp(-sqrt(dx²/eta1² + dy²/eta2²))`.
pub fn exponential_kernel(sigma2: f64, eta1: f64, eta2: f64, dx: f64, dy: f64) -> f64 {
    sigma2 * (-((dx / eta1).powi(2) + (dy / eta2).powi(2)).sqrt()).exp()
}

/// Truncated KL basis of the log-permeability on a given mesh.
#[derive(Debug, Clone)]
pub struct KlBasis {
    mesh: TwoScaleMesh,
    /// Eigenvalues, nonincreasing.
    eigenvalues: Vec<f64>,
    /// Modes `f_a` evaluated at the cell centres.
    modes: Vec<Vec<f64>>,
}

impl KlBasis {
    pub fn compute(mesh: &TwoScaleMesh, spec: &GaussianFieldSpec) -> Result<Self, CoeffError> {
        spec.validate(mesh)?;
        let n = mesh.n_fine();
        if spec.sigma2 == 0.0 {
            return Ok(Self {
                mesh: *mesh,
                eigenvalues: vec![0.0; spec.modes],
                modes: vec![vec![0.0; n]; spec.modes],
            });
        }
        let (values, vectors) = if n <= DENSE_LIMIT {
            dense_top_eigenpairs(mesh, spec)?
        } else {
            let op = ToeplitzKernel::new(mesh, spec);
            lanczos_top_eigenpairs(&op, n, spec.modes)?
        };
        let scale = 1.0 / mesh.cell_area().sqrt();
        let top = values[0];
        let mut eigenvalues = Vec::with_capacity(spec.modes);
        for (index, &mu) in values.iter().enumerate() {
            if mu < -PSD_TOLERANCE * top {
                return Err(CoeffError::NegativeEigenvalue { index, value: mu });
            }
            eigenvalues.push(mu.max(0.0));
        }
        let modes = vectors
            .into_iter()
            .map(|mut v| {
                v.iter_mut().for_each(|x| *x *= scale);
                v
            })
            .collect();
        Ok(Self { mesh: *mesh, eigenvalues, modes })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    /// `Z = sum_a omega_a sqrt(mu_a) f_a` with `omega` drawn in mode order from the seeded stream.
    pub fn sample_log(&self, seed: u64) -> Vec<f64> {
        let mut rng = SeededStream::new(seed);
        let mut z = vec![0.0; self.mesh.n_fine()];
        for (mu, f) in self.eigenvalues.iter().zip(&self.modes) {
            let omega = rng.standard_normal();
            axpy(omega * mu.sqrt(), f, &mut z);
        }
        z
    }

    pub fn sample(&self, seed: u64) -> Result<CoefficientField, CoeffError> {
        let z = self.sample_log(seed);
        CoefficientField::new(self.mesh, z.into_iter().map(f64::exp).collect())
    }
}

/// One-shot sampler; use [`KlBasis`] directly to reuse the eigendecomposition across seeds.
pub fn sample_log_gaussian(mesh: &TwoScaleMesh, spec: &GaussianFieldSpec, seed: u64) -> Result<CoefficientField, CoeffError> {
    KlBasis::compute(mesh, spec)?.sample(seed)
}

fn dense_top_eigenpairs(mesh: &TwoScaleMesh, spec: &GaussianFieldSpec) -> Result<(Vec<f64>, Vec<Vec<f64>>), CoeffError> {
    let n = mesh.n_fine();
    let area = mesh.cell_area();
    let centres: Vec<(f64, f64)> = (0..n).map(|c| mesh.cell_center(c)).collect();
    let s = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (centres[i], centres[j]);
        area * exponential_kernel(spec.sigma2, spec.eta1, spec.eta2, a.0 - b.0, a.1 - b.1)
    });
    let eig = SymmetricEigen::try_new(s, 1e-14, 0)
        .ok_or_else(|| CoeffError::EigenNotConverged("dense symmetric eigensolver".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().take(spec.modes).map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .take(spec.modes)
        .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect();
    Ok((values, vectors))
}

/// Area-weighted kernel matrix applied through a circulant embedding.
struct ToeplitzKernel {
    nx: usize,
    ny: usize,
    px: usize,
    py: usize,
    spectrum: Vec<Complex<f64>>,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
}

impl ToeplitzKernel {
    fn new(mesh: &TwoScaleMesh, spec: &GaussianFieldSpec) -> Self {
        let (nx, ny) = (mesh.nx, mesh.ny);
        let (px, py) = (2 * nx, 2 * ny);
        let mut planner = FftPlanner::new();
        let mut op = Self {
            nx,
            ny,
            px,
            py,
            spectrum: Vec::new(),
            fft_x: planner.plan_fft_forward(px),
            ifft_x: planner.plan_fft_inverse(px),
            fft_y: planner.plan_fft_forward(py),
            ifft_y: planner.plan_fft_inverse(py),
        };
        let lag = |k: usize, n: usize, p: usize| -> Option<f64> {
            if k < n {
                Some(k as f64)
            } else if k > p - n {
                Some(k as f64 - p as f64)
            } else {
                None
            }
        };
        let area = mesh.cell_area();
        let mut grid = vec![Complex::new(0.0, 0.0); px * py];
        for b in 0..py {
            let Some(dy) = lag(b, ny, py) else { continue };
            for a in 0..px {
                let Some(dx) = lag(a, nx, px) else { continue };
                grid[b * px + a].re =
                    area * exponential_kernel(spec.sigma2, spec.eta1, spec.eta2, dx * mesh.hx, dy * mesh.hy);
            }
        }
        op.fft2(&mut grid, false);
        op.spectrum = grid;
        op
    }

    fn fft2(&self, grid: &mut [Complex<f64>], inverse: bool) {
        let (fx, fy) = if inverse { (&self.ifft_x, &self.ifft_y) } else { (&self.fft_x, &self.fft_y) };
        for row in grid.chunks_exact_mut(self.px) {
            fx.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); self.py];
        for a in 0..self.px {
            for b in 0..self.py {
                column[b] = grid[b * self.px + a];
            }
            fy.process(&mut column);
            for b in 0..self.py {
                grid[b * self.px + a] = column[b];
            }
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut grid = vec![Complex::new(0.0, 0.0); self.px * self.py];
        for j in 0..self.ny {
            for i in 0..self.nx {
                grid[j * self.px + i].re = x[j * self.nx + i];
            }
        }
        self.fft2(&mut grid, false);
        for (g, s) in grid.iter_mut().zip(&self.spectrum) {
            *g *= s;
        }
        self.fft2(&mut grid, true);
        let norm = 1.0 / (self.px * self.py) as f64;
        for j in 0..self.ny {
            for i in 0..self.nx {
                y[j * self.nx + i] = grid[j * self.px + i].re * norm;
            }
        }
    }
}

/// Largest `count` eigenpairs of the symmetric operator by Lanczos with full
/// reorthogonalization, extended until every kept Ritz pair has converged.
fn lanczos_top_eigenpairs(op: &ToeplitzKernel, n: usize, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>), CoeffError> {
    let mut rng = SeededStream::new(LANCZOS_START_SEED);
    let mut v0 = vec![0.0; n];
    rng.fill_standard_normal(&mut v0);
    let nv = norm2(&v0);
    v0.iter_mut().for_each(|x| *x /= nv);

    let mut basis: Vec<Vec<f64>> = vec![v0];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut target = (count + count / 2 + 20).min(n);
    let mut w = vec![0.0; n];
    loop {
        while alpha.len() < target {
            let k = alpha.len();
            op.apply(&basis[k], &mut w);
            let a = dot(&w, &basis[k]);
            axpy(-a, &basis[k], &mut w);
            if k > 0 {
                axpy(-beta[k - 1], &basis[k - 1], &mut w);
            }
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(&w, v);
                    axpy(-c, v, &mut w);
                }
            }
            alpha.push(a);
            let b = norm2(&w);
            if alpha.len() == n || b <= 1e-13 * alpha[0].abs().max(1e-300) {
                // invariant subspace reached: the Ritz pairs are exact
                beta.push(0.0);
                target = alpha.len();
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::try_new(t, 1e-14, 0)
            .ok_or_else(|| CoeffError::EigenNotConverged("tridiagonal eigensolver".into()))?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let kept = count.min(m);
        let top = eig.eigenvalues[order[0]].abs();
        let b_last = beta[m - 1];
        let worst = order[..kept]
            .iter()
            .map(|&k| (b_last * eig.eigenvectors[(m - 1, k)]).abs())
            .fold(0.0, f64::max);
        if kept == count && worst <= LANCZOS_TOLERANCE * top {
            let values = order[..kept].iter().map(|&k| eig.eigenvalues[k]).collect();
            let vectors = order[..kept]
                .iter()
                .map(|&k| {
                    let mut y = vec![0.0; n];
                    for (i, v) in basis.iter().take(m).enumerate() {
                        axpy(eig.eigenvectors[(i, k)], v, &mut y);
                    }
                    y
                })
                .collect();
            log::debug!("KL Lanczos: {count} modes converged after {m} steps");
            return Ok((values, vectors));
        }
        if m == n || target == m && b_last == 0.0 {
            return Err(CoeffError::EigenNotConverged(format!(
                "{kept} of {count} Ritz pairs available after {m} steps, worst residual {worst:e}"
            )));
        }
        target = (m + m / 2).min(n);
    }
}
