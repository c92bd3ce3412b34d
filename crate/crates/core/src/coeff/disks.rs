//! Random non-overlapping disk inclusions with harmonic-mean rasterization.

use super::{CoeffError, CoefficientField};
use crate::mesh::TwoScaleMesh;
use crate::rng::SeededStream;

/// Total number of candidate disks tried before giving up.
pub const DEFAULT_ATTEMPT_BUDGET: usize = 100_000;

/// Sub-samples per cell axis used to estimate the covered fraction.
const SUBSAMPLES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DiskFieldSpec {
    pub n_disks: usize,
    /// Permeability inside the disks.
    pub kappa_b: f64,
    /// Background permeability.
    pub kappa_r: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub max_attempts: usize,
}

impl Default for DiskFieldSpec {
    fn default() -> Self {
        Self {
            n_disks: 15,
            kappa_b: 1e4,
            kappa_r: 1.0,
            radius_min: 0.02,
            radius_max: 0.08,
            max_attempts: DEFAULT_ATTEMPT_BUDGET,
        }
    }
}

impl DiskFieldSpec {
    pub fn validate(&self) -> Result<(), CoeffError> {
        let bad = |m: &str| Err(CoeffError::InvalidSpec(m.to_string()));
        if !(self.kappa_b > 0.0 && self.kappa_b.is_finite() && self.kappa_r > 0.0 && self.kappa_r.is_finite()) {
            return bad("kappa_b and kappa_r must be positive and finite");
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max < 0.5) {
            return bad("radii must satisfy 0 < radius_min <= radius_max < 0.5");
        }
        if self.max_attempts == 0 && self.n_disks > 0 {
            return bad("attempt budget must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl Disk {
    fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.x, py - self.y);
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Draws disks by rejection: each attempt samples a radius in
/// `[radius_min, radius_max)` and a centre uniformly in the square, and is
/// kept only if the disk lies inside `[0,1]²` and overlaps no earlier disk.
/// Each attempt consumes three uniforms in the order radius, x, y.
pub fn sample_disk_layout(spec: &DiskFieldSpec, seed: u64) -> Result<Vec<Disk>, CoeffError> {
    spec.validate()?;
    let mut rng = SeededStream::new(seed);
    let mut disks: Vec<Disk> = Vec::with_capacity(spec.n_disks);
    let mut attempts = 0;
    while disks.len() < spec.n_disks {
        if attempts == spec.max_attempts {
            return Err(CoeffError::PlacementInfeasible {
                placed: disks.len(),
                requested: spec.n_disks,
                attempts,
            });
        }
        attempts += 1;
        let radius = rng.uniform_in(spec.radius_min, spec.radius_max);
        let x = rng.uniform();
        let y = rng.uniform();
        if x < radius || x > 1.0 - radius || y < radius || y > 1.0 - radius {
            continue;
        }
        let overlaps = disks.iter().any(|d| {
            let (dx, dy) = (d.x - x, d.y - y);
            (dx * dx + dy * dy).sqrt() < d.radius + radius
        });
        if !overlaps {
            disks.push(Disk { x, y, radius });
        }
    }
    Ok(disks)
}

/// Cell values from a disk layout: `kappa_b` for fully covered cells,
/// `kappa_r` for untouched cells, otherwise the harmonic mean
/// `1 / (f / kappa_b + (1 - f) / kappa_r)` with covered fraction `f`
/// estimated on a 4×4 grid of sub-cell centres.
pub fn rasterize_disks(
    mesh: &TwoScaleMesh,
    disks: &[Disk],
    kappa_b: f64,
    kappa_r: f64,
) -> Result<CoefficientField, CoeffError> {
    let total = (SUBSAMPLES * SUBSAMPLES) as f64;
    let mut values = Vec::with_capacity(mesh.n_fine());
    for cell in 0..mesh.n_fine() {
        let (i, j) = (cell % mesh.nx, cell / mesh.nx);
        let (x0, y0) = (i as f64 * mesh.hx, j as f64 * mesh.hy);
        let mut inside = 0usize;
        for sy in 0..SUBSAMPLES {
            let py = y0 + (sy as f64 + 0.5) / SUBSAMPLES as f64 * mesh.hy;
            for sx in 0..SUBSAMPLES {
                let px = x0 + (sx as f64 + 0.5) / SUBSAMPLES as f64 * mesh.hx;
                if disks.iter().any(|d| d.contains(px, py)) {
                    inside += 1;
                }
            }
        }
        let v = if inside == 0 {
            kappa_r
        } else if inside == SUBSAMPLES * SUBSAMPLES {
            kappa_b
        } else {
            let f = inside as f64 / total;
            1.0 / (f / kappa_b + (1.0 - f) / kappa_r)
        };
        values.push(v);
    }
    CoefficientField::new(*mesh, values)
}

pub fn sample_random_disks(mesh: &TwoScaleMesh, spec: &DiskFieldSpec, seed: u64) -> Result<CoefficientField, CoeffError> {
    let disks = sample_disk_layout(spec, seed)?;
    rasterize_disks(mesh, &disks, spec.kappa_b, spec.kappa_r)
}
