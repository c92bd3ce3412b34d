use super::{DatasetError, DatasetRecord};

/// The four reflections of a square that map the grid onto itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symmetry {
    /// Reverses the order of the rows: `(i, j) → (i, ny−1−j)`.
    RowFlip,
    /// Reverses the order of the columns: `(i, j) → (nx−1−i, j)`.
    ColumnFlip,
    /// Reflection in the main diagonal: `(i, j) → (j, i)`.
    Transpose,
    /// Reflection in the anti-diagonal: `(i, j) → (n−1−j, n−1−i)`.
    AntiTranspose,
}

impl Symmetry {
    pub const ALL: [Symmetry; 4] = [Symmetry::RowFlip, Symmetry::ColumnFlip, Symmetry::Transpose, Symmetry::AntiTranspose];

    pub fn is_diagonal(self) -> bool {
        matches!(self, Symmetry::Transpose | Symmetry::AntiTranspose)
    }

    /// Image of cell `(i, j)` on an `nx × ny` grid.
    fn map(self, i: usize, j: usize, nx: usize, ny: usize) -> (usize, usize) {
        match self {
            Symmetry::RowFlip => (i, ny - 1 - j),
            Symmetry::ColumnFlip => (nx - 1 - i, j),
            Symmetry::Transpose => (j, i),
            Symmetry::AntiTranspose => (nx - 1 - j, ny - 1 - i),
        }
    }
}

/// Moves every value of a row-major `nx × ny` grid to its image under `t`.
pub fn apply_to_grid<T: Copy>(values: &[T], nx: usize, ny: usize, t: Symmetry) -> Result<Vec<T>, DatasetError> {
    if values.len() != nx * ny {
        return Err(DatasetError::TileLength { expected: nx * ny, got: values.len() });
    }
    if t.is_diagonal() && nx != ny {
        return Err(DatasetError::DiagonalOnRectangle { transform: t, nx, ny });
    }
    let mut out = values.to_vec();
    for j in 0..ny {
        for i in 0..nx {
            let (ti, tj) = t.map(i, j, nx, ny);
            out[tj * nx + ti] = values[j * nx + i];
        }
    }
    Ok(out)
}

fn transform_record(record: &DatasetRecord, t: Symmetry) -> Result<DatasetRecord, DatasetError> {
    let m = record.m;
    let kappa = apply_to_grid(&record.kappa, m, m, t)?;
    let mut label = record.label.clone();
    for k in 0..record.n_basis() {
        let col: Vec<f64> = record.label.column(k).iter().copied().collect();
        let moved = apply_to_grid(&col, m, m, t)?;
        label.column_mut(k).copy_from_slice(&moved);
    }
    Ok(DatasetRecord { m, kappa, label })
}

/// The four transformed copies of `record`, in [`Symmetry::ALL`] order.
///
/// Labels are permuted along with the tile; no eigenproblem is solved.
pub fn symmetry_augment(record: &DatasetRecord) -> Result<Vec<DatasetRecord>, DatasetError> {
    Symmetry::ALL.iter().map(|&t| transform_record(record, t)).collect()
}
