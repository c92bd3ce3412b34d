use rayon::prelude::*;

use super::{PrecondError, Preconditioner};
use crate::linalg::{BandCholesky, SparseOperator};
use crate::mesh::TwoScaleMesh;

/// Pivots smaller than this fraction of their diagonal entry count as zero.
pub(crate) const PIVOT_TOLERANCE: f64 = 1e-13;

/// Block-Jacobi smoother `R`: exact solves with the diagonal blocks of `A`
/// that belong to the coarse-element tiles.
#[derive(Debug, Clone)]
pub struct BlockJacobiSmoother {
    n: usize,
    cells: Vec<Vec<usize>>,
    factors: Vec<BandCholesky>,
}

/// Extracts and factorizes each tile block of `A`.
///
/// Local row-major ordering couples each cell only to neighbours at most `mx`
/// positions away, so the blocks are factorized as band matrices.
pub fn build_block_jacobi(a: &SparseOperator, mesh: &TwoScaleMesh) -> Result<BlockJacobiSmoother, PrecondError> {
    if a.dim() != mesh.n_fine() {
        return Err(PrecondError::OperatorMesh { operator: a.dim(), mesh: mesh.n_fine() });
    }
    let cells: Vec<Vec<usize>> = (0..mesh.n_coarse()).map(|j| mesh.element_cells(j)).collect();
    let factors = cells
        .par_iter()
        .enumerate()
        .map(|(element, local)| {
            BandCholesky::factor_with_tolerance(local.len(), mesh.mx, PIVOT_TOLERANCE, |p, q| a.get(local[p], local[q]))
                .map_err(|source| PrecondError::SmootherBlock { element, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BlockJacobiSmoother { n: a.dim(), cells, factors })
}

impl BlockJacobiSmoother {
    pub fn n_blocks(&self) -> usize {
        self.factors.len()
    }
}

impl Preconditioner for BlockJacobiSmoother {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, r: &[f64], out: &mut [f64]) {
        assert_eq!(r.len(), self.n);
        let solved: Vec<Vec<f64>> = self
            .cells
            .par_iter()
            .zip(&self.factors)
            .map(|(cells, factor)| {
                let mut x: Vec<f64> = cells.iter().map(|&c| r[c]).collect();
                factor.solve_in_place(&mut x);
                x
            })
            .collect();
        for (cells, x) in self.cells.iter().zip(solved) {
            for (&c, v) in cells.iter().zip(x) {
                out[c] = v;
            }
        }
    }
}
