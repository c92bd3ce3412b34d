//! Local spectral problems and the multiscale prolongation built from them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{local_pencil, AssemblyError, LocalPencil};
use crate::coeff::CoefficientField;
use crate::mesh::TwoScaleMesh;

/// Relative eigen-residual above which a local solve is rejected.
const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("n_c must be at least 1")]
    NoModes,
    #[error("requested {n_c} modes but the element has only {size} cells")]
    TooManyModes { n_c: usize, size: usize },
    #[error("pencil mass entry {index} is {value}; the mass must be positive")]
    InvalidMass { index: usize, value: f64 },
    #[error("pencil stiffness is {rows}x{cols} but the mass has {mass} entries")]
    PencilShape { rows: usize, cols: usize, mass: usize },
    #[error("local eigensolver failed to converge (relative residuals {residuals:?})")]
    EigenNotConverged { residuals: Vec<f64> },
    #[error("coarse element {element}: {source}")]
    AtElement {
        element: usize,
        #[source]
        source: Box<SpectralError>,
    },
    #[error("invalid prolongation: {0}")]
    InvalidProlongation(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Basis of one coarse element, local row ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseBlock {
    pub element: usize,
    /// `(mx·my) × n_c` matrix; column `k` is the `k`-th basis function.
    pub basis: DMatrix<f64>,
    /// Eigenvalues in nondecreasing order when the block came from the eigensolver.
    pub eigenvalues: Option<Vec<f64>>,
    /// `λ_{n_c+1} − λ_{n_c}`, when a further eigenvalue exists.
    pub gap: Option<f64>,
}

impl CoarseBlock {
    pub fn from_basis(element: usize, basis: DMatrix<f64>) -> Self {
        Self { element, basis, eigenvalues: None, gap: None }
    }

    pub fn n_c(&self) -> usize {
        self.basis.ncols()
    }

    pub fn rows(&self) -> usize {
        self.basis.nrows()
    }
}

fn fix_sign(column: &mut [f64]) {
    let mut best = 0;
    for (i, v) in column.iter().enumerate() {
        if v.abs() > column[best].abs() {
            best = i;
        }
    }
    if column[best] < 0.0 {
        column.iter_mut().for_each(|v| *v = -*v);
    }
}

/// The `n_c` smallest eigenpairs of `stiffness φ = λ mass φ`, computed from the
/// symmetric similarity transform `mass^{-1/2} stiffness mass^{-1/2}`.
///
/// Columns come back mass-orthonormal, with the entry of largest magnitude
/// positive. The returned block carries element index 0.
pub fn solve_lsp(pencil: &LocalPencil, n_c: usize) -> Result<CoarseBlock, SpectralError> {
    let n = pencil.mass.len();
    if pencil.stiffness.nrows() != n || pencil.stiffness.ncols() != n {
        return Err(SpectralError::PencilShape {
            rows: pencil.stiffness.nrows(),
            cols: pencil.stiffness.ncols(),
            mass: n,
        });
    }
    if n_c == 0 {
        return Err(SpectralError::NoModes);
    }
    if n_c > n {
        return Err(SpectralError::TooManyModes { n_c, size: n });
    }
    if let Some((index, &value)) = pencil.mass.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(SpectralError::InvalidMass { index, value });
    }
    let inv_sqrt: DVector<f64> = pencil.mass.map(|m| 1.0 / m.sqrt());
    let mut sym = pencil.stiffness.clone();
    for j in 0..n {
        for i in 0..n {
            sym[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(|| SpectralError::EigenNotConverged { residuals: Vec::new() })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let mut basis = DMatrix::zeros(n, n_c);
    let mut values = Vec::with_capacity(n_c);
    for (k, &idx) in order.iter().take(n_c).enumerate() {
        let mut col: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, idx)] * inv_sqrt[i]).collect();
        fix_sign(&mut col);
        basis.set_column(k, &DVector::from_vec(col));
        values.push(eig.eigenvalues[idx]);
    }

    // reject the solve if any returned pair is not an eigenpair of the pencil
    let scale = pencil.stiffness.amax().max(f64::MIN_POSITIVE);
    let residuals: Vec<f64> = (0..n_c)
        .map(|k| {
            let phi = basis.column(k);
            let r = &pencil.stiffness * phi - pencil.mass.component_mul(&phi) * values[k];
            r.amax() / (scale * phi.amax())
        })
        .collect();
    if residuals.iter().any(|r| !(*r <= RESIDUAL_TOLERANCE)) {
        return Err(SpectralError::EigenNotConverged { residuals });
    }

    let gap = order.get(n_c).map(|&next| eig.eigenvalues[next] - values[n_c - 1]);
    Ok(CoarseBlock { element: 0, basis, eigenvalues: Some(values), gap })
}

/// Block-diagonal prolongation: block `j` maps coefficients
/// `[j·n_c, (j+1)·n_c)` to the fine cells of coarse element `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prolongation {
    mesh: TwoScaleMesh,
    n_c: usize,
    blocks: Vec<CoarseBlock>,
    cells: Vec<Vec<usize>>,
}

impl Prolongation {
    pub fn new(mesh: TwoScaleMesh, blocks: Vec<CoarseBlock>) -> Result<Self, SpectralError> {
        let bad = |m: String| Err(SpectralError::InvalidProlongation(m));
        if blocks.len() != mesh.n_coarse() {
            return bad(format!("{} blocks for {} coarse elements", blocks.len(), mesh.n_coarse()));
        }
        let n_c = blocks.first().map_or(0, CoarseBlock::n_c);
        if n_c == 0 {
            return Err(SpectralError::NoModes);
        }
        for (j, b) in blocks.iter().enumerate() {
            if b.element != j {
                return bad(format!("block {j} is labelled with element {}", b.element));
            }
            if b.rows() != mesh.cells_per_element() || b.n_c() != n_c {
                return bad(format!(
                    "block {j} is {}x{}, expected {}x{n_c}",
                    b.rows(),
                    b.n_c(),
                    mesh.cells_per_element()
                ));
            }
            if b.basis.iter().any(|v| !v.is_finite()) {
                return bad(format!("block {j} has non-finite entries"));
            }
        }
        let cells = (0..mesh.n_coarse()).map(|j| mesh.element_cells(j)).collect();
        Ok(Self { mesh, n_c, blocks, cells })
    }

    pub fn mesh(&self) -> &TwoScaleMesh {
        &self.mesh
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn blocks(&self) -> &[CoarseBlock] {
        &self.blocks
    }

    pub fn block(&self, element: usize) -> &CoarseBlock {
        &self.blocks[element]
    }

    /// Global fine-cell indices of element `element`, in local order.
    pub fn element_cells(&self, element: usize) -> &[usize] {
        &self.cells[element]
    }

    /// `N^c = n · n_c`.
    pub fn n_coarse_dofs(&self) -> usize {
        self.blocks.len() * self.n_c
    }

    pub fn n_fine(&self) -> usize {
        self.mesh.n_fine()
    }

    /// `P · coarse`.
    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        assert_eq!(coarse.len(), self.n_coarse_dofs());
        let mut fine = vec![0.0; self.n_fine()];
        for (j, b) in self.blocks.iter().enumerate() {
            let c = &coarse[j * self.n_c..(j + 1) * self.n_c];
            for (l, &cell) in self.cells[j].iter().enumerate() {
                fine[cell] = (0..self.n_c).map(|k| b.basis[(l, k)] * c[k]).sum();
            }
        }
        fine
    }

    /// `Pᵀ · fine`.
    pub fn apply_transpose(&self, fine: &[f64]) -> Vec<f64> {
        assert_eq!(fine.len(), self.n_fine());
        let mut coarse = vec![0.0; self.n_coarse_dofs()];
        for (j, b) in self.blocks.iter().enumerate() {
            for k in 0..self.n_c {
                coarse[j * self.n_c + k] = self.cells[j].iter().enumerate().map(|(l, &cell)| b.basis[(l, k)] * fine[cell]).sum();
            }
        }
        coarse
    }

    /// Keeps the first `n_c` columns of every block. Blocks from the
    /// eigensolver then equal those of a solve with the smaller `n_c`.
    pub fn leading(&self, n_c: usize) -> Result<Self, SpectralError> {
        if n_c == 0 {
            return Err(SpectralError::NoModes);
        }
        if n_c > self.n_c {
            return Err(SpectralError::TooManyModes { n_c, size: self.n_c });
        }
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let eigenvalues = b.eigenvalues.as_ref().map(|ev| ev[..n_c].to_vec());
                let gap = match (&b.eigenvalues, n_c < self.n_c) {
                    (Some(ev), true) => Some(ev[n_c] - ev[n_c - 1]),
                    _ if n_c == self.n_c => b.gap,
                    _ => None,
                };
                CoarseBlock { element: b.element, basis: b.basis.columns(0, n_c).into_owned(), eigenvalues, gap }
            })
            .collect();
        Self::new(self.mesh, blocks)
    }

    /// Replaces every block `B_j` by `B_j · R_j`.
    pub fn recombine(&self, mixes: &[DMatrix<f64>]) -> Result<Self, SpectralError> {
        if mixes.len() != self.blocks.len() {
            return Err(SpectralError::InvalidProlongation(format!(
                "{} mixing matrices for {} blocks",
                mixes.len(),
                self.blocks.len()
            )));
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, r) in self.blocks.iter().zip(mixes) {
            if r.nrows() != self.n_c || r.ncols() != self.n_c {
                return Err(SpectralError::InvalidProlongation(format!(
                    "mixing matrix for element {} is {}x{}",
                    b.element,
                    r.nrows(),
                    r.ncols()
                )));
            }
            blocks.push(CoarseBlock::from_basis(b.element, &b.basis * r));
        }
        Self::new(self.mesh, blocks)
    }

    /// Least-squares coefficients `c` with `P c ≈ 1`, solved block by block,
    /// together with the worst relative block residual `‖B_j c_j − 1‖ / ‖1‖`.
    pub fn constant_coefficients(&self) -> (Vec<f64>, f64) {
        let mut coeffs = Vec::with_capacity(self.n_coarse_dofs());
        let mut worst: f64 = 0.0;
        for b in &self.blocks {
            let ones = DVector::from_element(b.rows(), 1.0);
            let qr = b.basis.clone().qr();
            let rhs = qr.q().transpose() * &ones;
            let c = qr.r().solve_upper_triangular(&rhs).unwrap_or_else(|| DVector::zeros(self.n_c));
            let resid = (&b.basis * &c - &ones).norm() / ones.norm();
            worst = worst.max(if resid.is_finite() { resid } else { f64::INFINITY });
            coeffs.extend(c.iter().map(|v| if v.is_finite() { *v } else { 0.0 }));
        }
        (coeffs, worst)
    }

    /// Dense `N × N^c` matrix; intended for small meshes and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n_fine(), self.n_coarse_dofs());
        for (j, b) in self.blocks.iter().enumerate() {
            for (l, &cell) in self.cells[j].iter().enumerate() {
                for k in 0..self.n_c {
                    p[(cell, j * self.n_c + k)] = b.basis[(l, k)];
                }
            }
        }
        p
    }
}

/// Solves the local spectral problem on every coarse element in parallel.
pub fn build_prolongation(mesh: &TwoScaleMesh, kappa: &CoefficientField, n_c: usize) -> Result<Prolongation, SpectralError> {
    let size = mesh.cells_per_element();
    if n_c == 0 {
        return Err(SpectralError::NoModes);
    }
    if n_c > size {
        return Err(SpectralError::TooManyModes { n_c, size });
    }
    let blocks = (0..mesh.n_coarse())
        .into_par_iter()
        .map(|j| {
            let attach = |e: SpectralError| SpectralError::AtElement { element: j, source: Box::new(e) };
            let pencil = local_pencil(mesh, kappa, j).map_err(|e| attach(e.into()))?;
            let mut block = solve_lsp(&pencil, n_c).map_err(attach)?;
            block.element = j;
            Ok(block)
        })
        .collect::<Result<Vec<_>, SpectralError>>()?;
    log::debug!("solved {} local spectral problems with n_c = {n_c}", blocks.len());
    Prolongation::new(*mesh, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::tile_pencil;
    use crate::mesh::build_mesh;
    use crate::rng::SeededStream;

    fn lognormal_tile(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = SeededStream::new(seed);
        (0..n).map(|_| (scale * rng.standard_normal()).exp()).collect()
    }

    #[test]
    fn unit_element_eigenvalues() {
        let p = tile_pencil(&[1.0; 4], 2, 2, 0.5, 0.5).unwrap();
        let b = solve_lsp(&p, 4).unwrap();
        let ev = b.eigenvalues.unwrap();
        for (got, want) in ev.iter().zip([0.0, 8.0, 8.0, 16.0]) {
            assert!((got - want).abs() < 1e-12, "{ev:?}");
        }
        assert!(b.gap.is_none());
        assert!(b.basis.column(0).iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn mass_orthonormal_with_sign_convention() {
        let vals = lognormal_tile(64, 1, 2.0);
        let p = tile_pencil(&vals, 8, 8, 1.0 / 64.0, 1.0 / 64.0).unwrap();
        let b = solve_lsp(&p, 6).unwrap();
        let gram = b.basis.transpose() * DMatrix::from_diagonal(&p.mass) * &b.basis;
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);
        for k in 0..6 {
            let col = b.basis.column(k);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
        let ev = b.eigenvalues.as_ref().unwrap();
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        assert!(ev[0].abs() < 1e-10 * ev[5]);
        let c = b.basis.column(0);
        assert!(c.iter().all(|v| (v - c[0]).abs() < 1e-8 * c[0].abs()));
        assert!(b.gap.unwrap() >= 0.0);
    }

    #[test]
    fn scale_invariance_of_eigenpairs() {
        let vals = lognormal_tile(16, 4, 1.0);
        let scaled: Vec<f64> = vals.iter().map(|v| v * 37.0).collect();
        let a = solve_lsp(&tile_pencil(&vals, 4, 4, 0.25, 0.25).unwrap(), 3).unwrap();
        let b = solve_lsp(&tile_pencil(&scaled, 4, 4, 0.25, 0.25).unwrap(), 3).unwrap();
        let (ea, eb) = (a.eigenvalues.unwrap(), b.eigenvalues.unwrap());
        for (x, y) in ea.iter().zip(&eb) {
            assert!((x - y).abs() < 1e-9 * ea[2]);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let p = tile_pencil(&[1.0; 4], 2, 2, 0.5, 0.5).unwrap();
        assert_eq!(solve_lsp(&p, 0).unwrap_err(), SpectralError::NoModes);
        assert!(matches!(solve_lsp(&p, 5), Err(SpectralError::TooManyModes { .. })));
        let mut bad = p.clone();
        bad.mass[2] = 0.0;
        assert!(matches!(solve_lsp(&bad, 1), Err(SpectralError::InvalidMass { index: 2, .. })));
    }

    #[test]
    fn prolongation_shapes_and_transpose() {
        let m = build_mesh(12, 8, 3, 2).unwrap();
        let k = CoefficientField::new(m, lognormal_tile(m.n_fine(), 7, 1.5)).unwrap();
        let p = build_prolongation(&m, &k, 3).unwrap();
        assert_eq!(p.n_coarse_dofs(), 18);
        let dense = p.to_dense();
        let mut rng = SeededStream::new(3);
        let c: Vec<f64> = (0..18).map(|_| rng.standard_normal()).collect();
        let f: Vec<f64> = (0..m.n_fine()).map(|_| rng.standard_normal()).collect();
        let pc = p.apply(&c);
        let ptf = p.apply_transpose(&f);
        let want_pc = &dense * DVector::from_vec(c.clone());
        let want_ptf = dense.transpose() * DVector::from_vec(f.clone());
        assert!(pc.iter().zip(want_pc.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(ptf.iter().zip(want_ptf.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let (_, resid) = p.constant_coefficients();
        assert!(resid < 1e-10);
        for (j, b) in p.blocks().iter().enumerate() {
            assert_eq!(b.element, j);
        }
    }

    #[test]
    fn single_mode_spans_piecewise_constants() {
        let m = build_mesh(8, 8, 2, 2).unwrap();
        let k = CoefficientField::new(m, lognormal_tile(64, 9, 1.0)).unwrap();
        let p = build_prolongation(&m, &k, 1).unwrap();
        for (j, b) in p.blocks().iter().enumerate() {
            let w: f64 = k.element_values(j).iter().map(|v| v * m.cell_area()).sum();
            for v in b.basis.iter() {
                assert!((v - 1.0 / w.sqrt()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn leading_columns_match_smaller_solve() {
        let m = build_mesh(16, 16, 2, 2).unwrap();
        let k = CoefficientField::new(m, lognormal_tile(m.n_fine(), 17, 2.0)).unwrap();
        let five = build_prolongation(&m, &k, 5).unwrap();
        assert_eq!(five.leading(3).unwrap(), build_prolongation(&m, &k, 3).unwrap());
        assert_eq!(five.leading(5).unwrap(), five);
        assert!(five.leading(6).is_err());
    }

    #[test]
    fn element_errors_carry_index() {
        let m = build_mesh(4, 4, 2, 2).unwrap();
        let k = CoefficientField::constant(m, 1.0).unwrap();
        assert!(matches!(build_prolongation(&m, &k, 5), Err(SpectralError::TooManyModes { .. })));
        let blocks = vec![CoarseBlock::from_basis(0, DMatrix::zeros(4, 1)); 4];
        assert!(matches!(Prolongation::new(m, blocks), Err(SpectralError::InvalidProlongation(_))));
    }
}
