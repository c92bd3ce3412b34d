//! Two-scale uniform quadrilateral grids on the unit square.
//!
//! Fine cells are indexed row-major from the bottom-left corner: cell `(i, j)`
//! (column `i`, row `j`) has index `j * nx + i`. Coarse elements are indexed
//! the same way over the coarse grid, and each one owns a contiguous
//! `mx × my` tile of fine cells. Inside an element, cells use the local
//! row-major index `b * mx + a` for tile offset `(a, b)`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh sizes must be positive (nx={nx}, ny={ny}, cx={cx}, cy={cy})")]
    NonPositive { nx: usize, ny: usize, cx: usize, cy: usize },
    #[error("fine count {fine} along {axis} is not divisible by coarse count {coarse}")]
    NotDivisible { axis: char, fine: usize, coarse: usize },
    #[error("coarse element index {index} out of range (n = {count})")]
    ElementOutOfRange { index: usize, count: usize },
}

/// Fine/coarse grid pair with the divisibility contract `nx % cx == 0`, `ny % cy == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoScaleMesh {
    pub nx: usize,
    pub ny: usize,
    pub cx: usize,
    pub cy: usize,
    pub hx: f64,
    pub hy: f64,
    /// Fine cells per coarse element along x.
    pub mx: usize,
    /// Fine cells per coarse element along y.
    pub my: usize,
}

/// Orientation of the edge itself. A vertical edge separates two cells that
/// are neighbours along x.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Cell on the negative side (left or below).
    pub minus: usize,
    /// Cell on the positive side (right or above).
    pub plus: usize,
    pub orientation: Orientation,
    pub length: f64,
}

pub type EdgeSet = Vec<Edge>;

impl TwoScaleMesh {
    pub fn new(nx: usize, ny: usize, cx: usize, cy: usize) -> Result<Self, MeshError> {
        if nx == 0 || ny == 0 || cx == 0 || cy == 0 {
            return Err(MeshError::NonPositive { nx, ny, cx, cy });
        }
        if !nx.is_multiple_of(cx) {
            return Err(MeshError::NotDivisible { axis: 'x', fine: nx, coarse: cx });
        }
        if !ny.is_multiple_of(cy) {
            return Err(MeshError::NotDivisible { axis: 'y', fine: ny, coarse: cy });
        }
        Ok(Self {
            nx,
            ny,
            cx,
            cy,
            hx: 1.0 / nx as f64,
            hy: 1.0 / ny as f64,
            mx: nx / cx,
            my: ny / cy,
        })
    }

    /// Total number of fine cells `N`.
    pub fn n_fine(&self) -> usize {
        self.nx * self.ny
    }

    /// Number of coarse elements `n`.
    pub fn n_coarse(&self) -> usize {
        self.cx * self.cy
    }

    /// Fine cells per coarse element, `N / n`.
    pub fn cells_per_element(&self) -> usize {
        self.mx * self.my
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (i, j) = (cell % self.nx, cell / self.nx);
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    /// Coarse element owning `cell`.
    pub fn element_of(&self, cell: usize) -> usize {
        let (i, j) = (cell % self.nx, cell / self.nx);
        (j / self.my) * self.cx + i / self.mx
    }

    /// Local index of `cell` inside its coarse element.
    pub fn local_index(&self, cell: usize) -> usize {
        let (i, j) = (cell % self.nx, cell / self.nx);
        (j % self.my) * self.mx + i % self.mx
    }

    /// Global fine-cell index of local cell `local` in element `element`.
    pub fn global_index(&self, element: usize, local: usize) -> usize {
        let (ex, ey) = (element % self.cx, element / self.cx);
        let (a, b) = (local % self.mx, local / self.mx);
        self.cell_index(ex * self.mx + a, ey * self.my + b)
    }

    /// Fine cells of `element` in local order.
    pub fn element_cells(&self, element: usize) -> Vec<usize> {
        (0..self.cells_per_element())
            .map(|l| self.global_index(element, l))
            .collect()
    }

    fn check_element(&self, element: usize) -> Result<(), MeshError> {
        if element >= self.n_coarse() {
            return Err(MeshError::ElementOutOfRange { index: element, count: self.n_coarse() });
        }
        Ok(())
    }

    /// All interior edges: vertical edges row-major, then horizontal edges row-major.
    pub fn interior_edges(&self) -> EdgeSet {
        let mut edges = Vec::with_capacity((self.nx - 1) * self.ny + self.nx * (self.ny - 1));
        for j in 0..self.ny {
            for i in 0..self.nx - 1 {
                edges.push(Edge {
                    minus: self.cell_index(i, j),
                    plus: self.cell_index(i + 1, j),
                    orientation: Orientation::Vertical,
                    length: self.hy,
                });
            }
        }
        for j in 0..self.ny - 1 {
            for i in 0..self.nx {
                edges.push(Edge {
                    minus: self.cell_index(i, j),
                    plus: self.cell_index(i, j + 1),
                    orientation: Orientation::Horizontal,
                    length: self.hx,
                });
            }
        }
        edges
    }

    /// Interior edges with both neighbours inside `element`, in the same
    /// ordering convention as [`interior_edges`](Self::interior_edges).
    pub fn element_edges(&self, element: usize) -> Result<EdgeSet, MeshError> {
        self.check_element(element)?;
        let (ex, ey) = (element % self.cx, element / self.cx);
        let (i0, j0) = (ex * self.mx, ey * self.my);
        let mut edges = Vec::with_capacity(2 * self.cells_per_element());
        for b in 0..self.my {
            for a in 0..self.mx.saturating_sub(1) {
                edges.push(Edge {
                    minus: self.cell_index(i0 + a, j0 + b),
                    plus: self.cell_index(i0 + a + 1, j0 + b),
                    orientation: Orientation::Vertical,
                    length: self.hy,
                });
            }
        }
        for b in 0..self.my.saturating_sub(1) {
            for a in 0..self.mx {
                edges.push(Edge {
                    minus: self.cell_index(i0 + a, j0 + b),
                    plus: self.cell_index(i0 + a, j0 + b + 1),
                    orientation: Orientation::Horizontal,
                    length: self.hx,
                });
            }
        }
        Ok(edges)
    }

    /// True when the edge connects two different coarse elements.
    pub fn crosses_coarse_boundary(&self, edge: &Edge) -> bool {
        self.element_of(edge.minus) != self.element_of(edge.plus)
    }
}

/// Free-function form of [`TwoScaleMesh::new`].
pub fn build_mesh(nx: usize, ny: usize, cx: usize, cy: usize) -> Result<TwoScaleMesh, MeshError> {
    TwoScaleMesh::new(nx, ny, cx, cy)
}
