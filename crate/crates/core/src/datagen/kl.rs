use nalgebra::{DMatrix, SymmetricEigen};

use super::DatasetError;
use crate::rng::SeededStream;

/// Relative size of the negative eigenvalues accepted (and clipped to zero).
const CLIP_TOLERANCE: f64 = 1e-12;

/// Truncated Karhunen–Loève model of `Z = log κ` over `m × m` tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct KlModel {
    pub m: usize,
    pub mean: Vec<f64>,
    /// `μ¹ ≥ μ² ≥ … ≥ 0`.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal modes `f_α`, one per eigenvalue.
    pub modes: Vec<Vec<f64>>,
}

impl KlModel {
    pub fn l(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Z = mean + Σ ω_α √μ^α f_α` for the given coefficients.
    pub fn log_tile(&self, omega: &[f64]) -> Vec<f64> {
        assert_eq!(omega.len(), self.l());
        let mut z = self.mean.clone();
        for ((w, mu), f) in omega.iter().zip(&self.eigenvalues).zip(&self.modes) {
            let s = w * mu.sqrt();
            for (zi, fi) in z.iter_mut().zip(f) {
                *zi += s * fi;
            }
        }
        z
    }

    pub fn tile(&self, omega: &[f64]) -> Vec<f64> {
        self.log_tile(omega).into_iter().map(f64::exp).collect()
    }
}

/// Empirical mean and covariance of the log tiles, and the top `l` eigenpairs
/// of the covariance (normalized by the sample count, not count − 1).
pub fn fit_kl(tiles: &[Vec<f64>], m: usize, l: usize) -> Result<KlModel, DatasetError> {
    let n = m * m;
    if tiles.len() < 2 {
        return Err(DatasetError::TooFewTiles(tiles.len()));
    }
    if l == 0 || l > n {
        return Err(DatasetError::Truncation { l, max: n });
    }
    let mut z = DMatrix::zeros(n, tiles.len());
    for (s, tile) in tiles.iter().enumerate() {
        if tile.len() != n {
            return Err(DatasetError::TileLength { expected: n, got: tile.len() });
        }
        for (i, &v) in tile.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DatasetError::NonPositive { index: i, value: v });
            }
            z[(i, s)] = v.ln();
        }
    }
    let count = tiles.len() as f64;
    let mean: Vec<f64> = (0..n).map(|i| z.row(i).sum() / count).collect();
    for s in 0..tiles.len() {
        for i in 0..n {
            z[(i, s)] -= mean[i];
        }
    }
    let cov = (&z * z.transpose()) / count;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let floor = -CLIP_TOLERANCE * eig.eigenvalues[order[0]].abs().max(1.0);
    let mut eigenvalues = Vec::with_capacity(l);
    let mut modes = Vec::with_capacity(l);
    for (index, &idx) in order.iter().take(l).enumerate() {
        let value = eig.eigenvalues[idx];
        if value < floor {
            return Err(DatasetError::NegativeEigenvalue { index, value });
        }
        eigenvalues.push(value.max(0.0));
        modes.push(eig.eigenvectors.column(idx).iter().copied().collect());
    }
    Ok(KlModel { m, mean, eigenvalues, modes })
}

/// `count` new tiles from one seeded stream, `l` standard normals per tile.
pub fn kl_augment(model: &KlModel, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededStream::new(seed);
    let mut omega = vec![0.0; model.l()];
    (0..count)
        .map(|_| {
            rng.fill_standard_normal(&mut omega);
            model.tile(&omega)
        })
        .collect()
}
