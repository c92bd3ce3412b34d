use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use gmsnet::assembly::{assemble_source, assemble_tpfa, SourcePattern};
use gmsnet::coeff::{sample_random_disks, CoefficientField, DiskFieldSpec, GaussianFieldSpec, KlBasis};
use gmsnet::datagen::{
    extract_records, fit_kl, kl_augment, label_tile, read_dataset, symmetry_augment, write_dataset, DatasetHeader,
    DatasetRecord,
};
use gmsnet::mesh::{build_mesh, TwoScaleMesh};
use gmsnet::precond::{build_block_jacobi, build_two_grid, pcg, PrecondError, SolveReport};
use gmsnet::spectral::{build_prolongation, Prolongation};
use gmsnet::surrogate::{load_weights, predict_prolongation_with_fallback, save_weights, Architecture, UNetWeights};
use gmsnet::verify;
use log::{debug, info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Augment, ConfigError, Profile, ProlongationKind, RunConfig};

pub const CSV_HEADER: &str = "profile,n_c,source,seed,iters,final_relres";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] gmsnet::Error),
    #[error("{failed} verification suite(s) failed")]
    Verification { failed: usize },
    #[error("{failed} of {total} solves did not converge")]
    BenchNonConvergence { failed: usize, total: usize },
}

type CliResult<T> = Result<T, CliError>;

fn core<T, E: Into<gmsnet::Error>>(r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| CliError::Core(e.into()))
}

fn make_mesh(cfg: &RunConfig) -> CliResult<TwoScaleMesh> {
    core(build_mesh(cfg.nx(), cfg.nx(), cfg.cx(), cfg.cx()))
}

/// Samples `--n-fields` fields with seeds `seed, seed + 1, …`.
fn sample_fields(cfg: &RunConfig, mesh: &TwoScaleMesh) -> CliResult<Vec<(u64, CoefficientField)>> {
    let seed = cfg.require_seed()?;
    let seeds: Vec<u64> = (0..cfg.n_fields() as u64).map(|i| seed + i).collect();
    match cfg.profile() {
        Profile::Gaussian => {
            let spec = GaussianFieldSpec {
                sigma2: cfg.sigma2(),
                eta1: cfg.eta1(),
                eta2: cfg.eta2(),
                modes: cfg.modes.unwrap_or_else(|| cfg.modes().min(mesh.n_fine())),
            };
            let start = Instant::now();
            let basis = core(KlBasis::compute(mesh, &spec))?;
            info!("KL basis with {} modes in {:.2} s", spec.modes, start.elapsed().as_secs_f64());
            seeds.into_iter().map(|s| Ok((s, core(basis.sample(s))?))).collect()
        }
        Profile::Disks => {
            let spec = DiskFieldSpec { kappa_b: cfg.kappa_b(), n_disks: cfg.n_disks(), ..Default::default() };
            seeds.into_iter().map(|s| Ok((s, core(sample_random_disks(mesh, &spec, s))?))).collect()
        }
    }
}

/// Fields are stored as label-free records whose tile is the whole grid.
fn write_fields(path: &Path, fields: &[(u64, CoefficientField)]) -> CliResult<()> {
    let m = fields[0].1.mesh().nx;
    let records: Vec<DatasetRecord> = fields
        .iter()
        .map(|(_, f)| DatasetRecord { m, kappa: f.values().to_vec(), label: DMatrix::zeros(m * m, 0) })
        .collect();
    core(write_dataset(path, DatasetHeader { m, n_basis: 0 }, &records))
}

fn read_field(path: &Path, cfg: &RunConfig) -> CliResult<(TwoScaleMesh, CoefficientField)> {
    let (header, records) = core(read_dataset(path, None))?;
    let first = records
        .into_iter()
        .next()
        .ok_or_else(|| ConfigError::Invalid(format!("{} holds no field", path.display())))?;
    let mesh = core(build_mesh(header.m, header.m, cfg.cx(), cfg.cx()))?;
    Ok((mesh, core(CoefficientField::new(mesh, first.kappa))?))
}

pub fn gen_field(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.require_out()?;
    let mesh = make_mesh(cfg)?;
    let fields = sample_fields(cfg, &mesh)?;
    for (seed, f) in &fields {
        println!(
            "{{\"profile\":\"{}\",\"seed\":{seed},\"min\":{:e},\"max\":{:e},\"contrast\":{:e}}}",
            cfg.profile().name(),
            f.min(),
            f.max(),
            f.contrast()
        );
    }
    write_fields(out, &fields)?;
    info!("wrote {} field(s) to {}", fields.len(), out.display());
    Ok(())
}

fn label_tiles(tiles: &[Vec<f64>], m: usize, n_c: usize) -> CliResult<Vec<DatasetRecord>> {
    core(tiles.par_iter().map(|t| label_tile(t, m, n_c)).collect::<Result<Vec<_>, _>>())
}

pub fn make_dataset(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.require_out()?;
    let seed = cfg.require_seed()?;
    if cfg.n_c() < 2 {
        return Err(ConfigError::Invalid("datasets need --n-c of at least 2".into()).into());
    }
    let mesh = make_mesh(cfg)?;
    let fields = sample_fields(cfg, &mesh)?;
    let start = Instant::now();
    let mut records = Vec::new();
    for (_, f) in &fields {
        records.extend(core(extract_records(&mesh, f, cfg.n_c()))?);
    }
    let mut label_seconds = start.elapsed().as_secs_f64();
    let originals = records.len();
    match cfg.augment() {
        Augment::None => {}
        Augment::Symmetry => {
            let mut all = Vec::with_capacity(5 * originals);
            for r in records {
                let extra = core(symmetry_augment(&r))?;
                all.push(r);
                all.extend(extra);
            }
            records = all;
        }
        Augment::Kl => {
            let m = mesh.mx;
            let tiles: Vec<Vec<f64>> = records.iter().map(|r| r.kappa.clone()).collect();
            let l = cfg.kl_l.unwrap_or(m * m);
            let model = core(fit_kl(&tiles, m, l))?;
            let draws = kl_augment(&model, cfg.kl_m.unwrap_or(1) * originals, seed ^ 0x6b6c);
            let start = Instant::now();
            records.extend(label_tiles(&draws, m, cfg.n_c())?);
            label_seconds += start.elapsed().as_secs_f64();
        }
    }
    let header = DatasetHeader { m: mesh.mx, n_basis: cfg.n_c() - 1 };
    core(write_dataset(out, header, &records))?;
    println!(
        "{}",
        json!({
            "records": records.len(),
            "original_records": originals,
            "m": header.m,
            "n_basis": header.n_basis,
            "label_seconds": label_seconds,
        })
    );
    Ok(())
}

struct Problem {
    mesh: TwoScaleMesh,
    field: CoefficientField,
    seed: Option<u64>,
}

fn problem(cfg: &RunConfig) -> CliResult<Vec<Problem>> {
    if let Some(path) = &cfg.field {
        let (mesh, field) = read_field(path, cfg)?;
        return Ok(vec![Problem { mesh, field, seed: cfg.seed }]);
    }
    let mesh = make_mesh(cfg)?;
    Ok(sample_fields(cfg, &mesh)?.into_iter().map(|(s, field)| Problem { mesh, field, seed: Some(s) }).collect())
}

fn prolongation(p: &Problem, n_c: usize, weights: Option<&UNetWeights>) -> CliResult<Prolongation> {
    match weights {
        None => core(build_prolongation(&p.mesh, &p.field, n_c)),
        Some(w) => {
            let pred = core(predict_prolongation_with_fallback(w, &p.mesh, &p.field))?;
            if !pred.fallback_elements.is_empty() {
                warn!("eigensolver fallback on elements {:?}", pred.fallback_elements);
            }
            debug!("network prolongation with {} columns per element", pred.prolongation.n_c());
            Ok(pred.prolongation)
        }
    }
}

fn load_network(cfg: &RunConfig, n_c: usize) -> CliResult<Option<UNetWeights>> {
    if cfg.prolongation() != ProlongationKind::Nn {
        return Ok(None);
    }
    let path = cfg.weights.as_ref().ok_or_else(|| ConfigError::Invalid("--prolongation nn needs --weights".into()))?;
    let w = core(load_weights(path))?;
    let out = w.architecture().out_channels;
    if out + 1 != n_c {
        return Err(ConfigError::Invalid(format!("network predicts {out} channels, so it serves --n-c {} only", out + 1)).into());
    }
    Ok(Some(w))
}

fn run_pcg(p: &Problem, prol: Prolongation, cfg: &RunConfig) -> CliResult<Result<SolveReport, Box<SolveReport>>> {
    let a = core(assemble_tpfa(&p.mesh, &p.field))?;
    let f = core(assemble_source(&p.mesh, &SourcePattern::Corners))?;
    let smoother = core(build_block_jacobi(&a, &p.mesh))?;
    let tg = core(build_two_grid(&a, prol, smoother))?;
    match pcg(&a, &f, &tg, cfg.tol(), cfg.maxit()) {
        Ok(r) => Ok(Ok(r)),
        Err(PrecondError::NonConvergence(r)) => Ok(Err(r)),
        Err(e) => Err(CliError::Core(e.into())),
    }
}

fn append_csv(path: &Path, rows: &[String]) -> CliResult<()> {
    let mut file = core(OpenOptions::new().create(true).append(true).open(path))?;
    let empty = core(file.metadata())?.len() == 0;
    let mut text = String::new();
    if empty {
        text.push_str(CSV_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    core(file.write_all(text.as_bytes()))
}

fn csv_row(cfg: &RunConfig, n_c: usize, seed: Option<u64>, report: &SolveReport) -> String {
    let seed = seed.map(|s| s.to_string()).unwrap_or_default();
    format!(
        "{},{n_c},{},{seed},{},{:e}",
        cfg.profile().name(),
        cfg.prolongation().name(),
        report.iterations,
        report.final_relative_residual()
    )
}

pub fn solve(cfg: &RunConfig) -> CliResult<()> {
    if cfg.field.is_none() && cfg.n_fields() != 1 {
        return Err(ConfigError::Invalid("solve takes one field; use bench for several".into()).into());
    }
    let n_c = cfg.n_c();
    let weights = load_network(cfg, n_c)?;
    let p = problem(cfg)?.remove(0);
    let start = Instant::now();
    let prol = prolongation(&p, n_c, weights.as_ref())?;
    let setup = start.elapsed().as_secs_f64();
    let outcome = run_pcg(&p, prol, cfg)?;
    let converged = outcome.is_ok();
    let report = match &outcome {
        Ok(r) => r,
        Err(r) => r.as_ref(),
    };
    println!(
        "{}",
        json!({
            "profile": cfg.profile().name(),
            "source": cfg.prolongation().name(),
            "n_c": n_c,
            "seed": p.seed,
            "converged": converged,
            "iterations": report.iterations,
            "final_relres": report.final_relative_residual(),
            "residual_rise": report.residual_rise,
            "contrast": p.field.contrast(),
            "setup_seconds": setup,
            "solve_seconds": start.elapsed().as_secs_f64() - setup,
            "history": report.history,
        })
    );
    if let Some(out) = &cfg.out {
        append_csv(out, &[csv_row(cfg, n_c, p.seed, report)])?;
    }
    match outcome {
        Ok(_) => Ok(()),
        Err(r) => {
            for (k, h) in r.history.iter().enumerate() {
                eprintln!("{k} {h:e}");
            }
            Err(CliError::Core(PrecondError::NonConvergence(r).into()))
        }
    }
}

/// Sweeps seeds and coarse-space sizes, appending one CSV row per solve.
pub fn bench(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.require_out()?.to_path_buf();
    let sizes: Vec<usize> = match (cfg.n_c, cfg.prolongation()) {
        (Some(n), _) => vec![n],
        (None, ProlongationKind::Lsp) => vec![1, 3, 5],
        (None, ProlongationKind::Nn) => vec![5],
    };
    let largest = *sizes.iter().max().unwrap_or(&5);
    let weights = load_network(cfg, largest)?;
    let (mut failed, mut total) = (0, 0);
    for p in problem(cfg)? {
        let full = prolongation(&p, largest, weights.as_ref())?;
        let mut rows = Vec::new();
        for &n_c in &sizes {
            let prol = if n_c == largest { full.clone() } else { core(full.leading(n_c))? };
            let outcome = run_pcg(&p, prol, cfg)?;
            total += 1;
            let report = match &outcome {
                Ok(r) => r,
                Err(r) => {
                    failed += 1;
                    r.as_ref()
                }
            };
            info!("seed {} n_c {n_c}: {} iterations", p.seed.map_or("-".to_string(), |s| s.to_string()), report.iterations);
            rows.push(csv_row(cfg, n_c, p.seed, report));
        }
        append_csv(&out, &rows)?;
    }
    if failed > 0 {
        return Err(CliError::BenchNonConvergence { failed, total });
    }
    Ok(())
}

pub fn verify() -> CliResult<()> {
    let results = verify::run_all();
    let mut failed = 0;
    for r in &results {
        match &r.outcome {
            Ok(()) => println!("PASS {} ({:.2} s)", r.name, r.seconds),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} ({:.2} s): {msg}", r.name, r.seconds);
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Verification { failed });
    }
    Ok(())
}

pub fn init_weights(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.require_out()?;
    let seed = cfg.require_seed()?;
    if cfg.n_c() < 2 {
        return Err(ConfigError::Invalid("the network predicts n_c - 1 channels, so --n-c must be at least 2".into()).into());
    }
    let arch = Architecture {
        levels: cfg.levels(),
        base_channels: cfg.base(),
        in_channels: 1,
        out_channels: cfg.n_c() - 1,
        input_side: 32,
    };
    let weights = core(UNetWeights::random(arch, seed))?;
    core(save_weights(out, &weights))?;
    println!("{}", json!({ "parameters": arch.parameter_count(), "levels": arch.levels, "base": arch.base_channels }));
    Ok(())
}
