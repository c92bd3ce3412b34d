//! Quick self-checks of the library's invariants, run by `gmsnet verify`.
//!
//! Each suite is a scaled-down version of an integration test and returns a
//! description of the first violation it finds.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::assembly::{assemble_tpfa, tile_pencil};
use crate::coeff::CoefficientField;
use crate::datagen::{label_tile, read_dataset_from, symmetry_augment, write_dataset_to, DatasetHeader};
use crate::linalg::{dot, remove_mean};
use crate::mesh::build_mesh;
use crate::precond::{build_block_jacobi, build_two_grid, Preconditioner};
use crate::rng::SeededStream;
use crate::spectral::{build_prolongation, solve_lsp};
use crate::subspace::dist_matrices;
use crate::surrogate::{load_weights_from, save_weights_to, Architecture, UNetWeights};

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
    pub seconds: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

type Suite = fn() -> Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut SeededStream) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

fn metric_axioms() -> Result<(), String> {
    let mut rng = SeededStream::new(1);
    for trial in 0..100 {
        let w: Vec<f64> = (0..64).map(|_| rng.uniform_in(0.1, 10.0)).collect();
        let (a, b, c) = (random_matrix(64, 3, &mut rng), random_matrix(64, 3, &mut rng), random_matrix(64, 3, &mut rng));
        let d = |x: &DMatrix<f64>, y: &DMatrix<f64>| dist_matrices(x, y, &w).map_err(|e| e.to_string());
        let (ab, ba, bc, ac) = (d(&a, &b)?, d(&b, &a)?, d(&b, &c)?, d(&a, &c)?);
        ensure((ab - ba).abs() <= 1e-12, || format!("trial {trial}: asymmetric {ab} vs {ba}"))?;
        ensure(ac <= ab + bc + 1e-9, || format!("trial {trial}: triangle {ac} > {ab} + {bc}"))?;
        ensure(d(&a, &a)? < 1e-12, || format!("trial {trial}: dist(P, P) nonzero"))?;
        let mix = random_matrix(3, 3, &mut rng);
        let moved = d(&(&a * mix), &b)?;
        ensure((moved - ab).abs() < 1e-9, || format!("trial {trial}: recombination changed {ab} to {moved}"))?;
    }
    Ok(())
}

fn tpfa_oracle() -> Result<(), String> {
    let m = build_mesh(2, 2, 1, 1).map_err(|e| e.to_string())?;
    let a = assemble_tpfa(&m, &CoefficientField::constant(m, 1.0).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let expected = [[2.0, -1.0, -1.0, 0.0], [-1.0, 2.0, 0.0, -1.0], [-1.0, 0.0, 2.0, -1.0], [0.0, -1.0, -1.0, 2.0]];
    for (i, row) in expected.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            ensure((a.get(i, j) - v).abs() < 1e-12, || format!("entry ({i},{j}) is {}", a.get(i, j)))?;
        }
    }
    Ok(())
}

fn lsp_oracle() -> Result<(), String> {
    let p = tile_pencil(&[1.0; 4], 2, 2, 0.5, 0.5).map_err(|e| e.to_string())?;
    let b = solve_lsp(&p, 4).map_err(|e| e.to_string())?;
    let ev = b.eigenvalues.unwrap_or_default();
    for (got, want) in ev.iter().zip([0.0, 8.0, 8.0, 16.0]) {
        ensure((got - want).abs() < 1e-10, || format!("eigenvalues {ev:?}"))?;
    }
    Ok(())
}

fn symmetry_equivariance() -> Result<(), String> {
    let mut rng = SeededStream::new(3);
    for tile_index in 0..10 {
        let tile: Vec<f64> = (0..64).map(|_| (2.0 * rng.standard_normal()).exp()).collect();
        let rec = label_tile(&tile, 8, 5).map_err(|e| e.to_string())?;
        for aug in symmetry_augment(&rec).map_err(|e| e.to_string())? {
            let fresh = label_tile(&aug.kappa, 8, 5).map_err(|e| e.to_string())?;
            let d = dist_matrices(&aug.label, &fresh.label, &aug.kappa).map_err(|e| e.to_string())?;
            ensure(d < 1e-8, || format!("tile {tile_index}: distance {d:e}"))?;
        }
    }
    Ok(())
}

fn two_grid_symmetry() -> Result<(), String> {
    let m = build_mesh(16, 16, 4, 4).map_err(|e| e.to_string())?;
    let mut rng = SeededStream::new(4);
    let k = CoefficientField::new(m, (0..256).map(|_| (2.0 * rng.standard_normal()).exp()).collect()).map_err(|e| e.to_string())?;
    let a = assemble_tpfa(&m, &k).map_err(|e| e.to_string())?;
    let p = build_prolongation(&m, &k, 3).map_err(|e| e.to_string())?;
    let smoother = build_block_jacobi(&a, &m).map_err(|e| e.to_string())?;
    let tg = build_two_grid(&a, p, smoother).map_err(|e| e.to_string())?;
    let mut draw = || {
        let mut v: Vec<f64> = (0..256).map(|_| rng.standard_normal()).collect();
        remove_mean(&mut v);
        v
    };
    let (r, s) = (draw(), draw());
    let (mut br, mut bs) = (vec![0.0; 256], vec![0.0; 256]);
    tg.apply(&r, &mut br);
    tg.apply(&s, &mut bs);
    let (x, y) = (dot(&br, &s), dot(&r, &bs));
    ensure((x - y).abs() < 1e-10 * x.abs().max(1.0), || format!("<Br, s> = {x}, <r, Bs> = {y}"))
}

fn formats() -> Result<(), String> {
    let rec = label_tile(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], 3, 3).map_err(|e| e.to_string())?;
    let header = DatasetHeader { m: 3, n_basis: 2 };
    let mut buf = Vec::new();
    write_dataset_to(&mut buf, header, std::slice::from_ref(&rec)).map_err(|e| e.to_string())?;
    let (_, back) = read_dataset_from(buf.as_slice(), Some(header)).map_err(|e| e.to_string())?;
    ensure(back == vec![rec], || "dataset round trip changed the record".into())?;
    let last = buf.len() - 6;
    buf[last] ^= 1;
    ensure(read_dataset_from(buf.as_slice(), None).is_err(), || "bit flip went unnoticed".into())?;
    let arch = Architecture { levels: 2, base_channels: 2, in_channels: 1, out_channels: 2, input_side: 8 };
    let w = UNetWeights::random(arch, 5).map_err(|e| e.to_string())?;
    let mut wbuf = Vec::new();
    save_weights_to(&mut wbuf, &w).map_err(|e| e.to_string())?;
    ensure(load_weights_from(wbuf.as_slice()).map_err(|e| e.to_string())? == w, || "weight round trip changed tensors".into())
}

const SUITES: [(&str, Suite); 6] = [
    ("metric axioms", metric_axioms),
    ("TPFA oracle", tpfa_oracle),
    ("local spectral oracle", lsp_oracle),
    ("symmetry equivariance", symmetry_equivariance),
    ("two-grid symmetry", two_grid_symmetry),
    ("file formats", formats),
];

/// Runs every suite and reports each outcome.
pub fn run_all() -> Vec<SuiteResult> {
    SUITES
        .iter()
        .map(|&(name, suite)| {
            let start = Instant::now();
            let outcome = suite();
            SuiteResult { name, outcome, seconds: start.elapsed().as_secs_f64() }
        })
        .collect()
}
