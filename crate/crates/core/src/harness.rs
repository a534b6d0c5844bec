//! Study orchestration and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{solve_cell, CellSolution};
use crate::config::{ResolvedRun, RunConfig, Study};
use crate::einstein::einstein_check;
use crate::error::Result;
use crate::evolution::{simulate, EvolutionReport, FineOperator};
use crate::oracle::{dense_cell_solution, OracleReport, ORACLE_TOLERANCE};
use crate::torus::TorusGrid;

#[derive(Serialize)]
struct Manifest<'a> {
    study: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct Failure<'a> {
    error: String,
    exit_code: i32,
    study: &'a str,
}

/// Per-epsilon summary of an evolution ladder.
#[derive(Clone, Debug, Serialize)]
pub struct EvolveSummary {
    pub inverse_epsilons: Vec<usize>,
    pub sup_errors: Vec<f64>,
    pub final_errors: Vec<f64>,
    pub final_ansatz_errors: Vec<f64>,
    /// sup_error(eps / 2) / sup_error(eps) for consecutive ladder entries.
    pub halving_ratios: Vec<f64>,
    pub monotone: bool,
    /// |quadrature(L^eps u v0(x / eps))| for a seeded random u, per epsilon.
    pub weighted_mass_probe: Vec<f64>,
    pub reports: Vec<EvolutionReport>,
}

/// Paths written by a successful run.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, out: &mut Artifacts) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value)?)?;
    out.files.push(path);
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str, out: &mut Artifacts) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text)?;
    out.files.push(path);
    Ok(())
}

/// |quadrature(L^eps u * weight)| for u uniform in [-1, 1].
pub fn weighted_mass_probe(op: &FineOperator, weight: &[f64], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..weight.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    op.fine_grid().inner(&op.apply(&u), weight).abs()
}

fn run_evolve(run: &ResolvedRun, dir: &Path, out: &mut Artifacts) -> Result<()> {
    let tol = &run.config.tolerances;
    let n_cell = run.evolution[0].n_cell;
    let cell_grid = TorusGrid::new(run.grid.dim, n_cell)?;
    let cell = solve_cell(&run.kernel, &run.mu, &cell_grid, &run.config.assembly, tol)?;
    write_json(dir, "cell_solution.json", &cell, out)?;
    let reports = run
        .evolution
        .par_iter()
        .map(|cfg| simulate(&run.kernel, &run.mu, cfg, &cell))
        .collect::<Result<Vec<_>>>()?;
    let mut probes = Vec::with_capacity(reports.len());
    for (cfg, report) in run.evolution.iter().zip(&reports) {
        write_text(dir, &format!("evolve_eps{}.csv", report.inverse_epsilon), &report.to_csv(), out)?;
        let op = FineOperator::new(&run.kernel, &run.mu, cfg.n_cell, cfg.inverse_epsilon()?)?;
        probes.push(weighted_mass_probe(&op, &op.lift(&cell.v0), run.config.seed));
    }
    let sup: Vec<f64> = reports.iter().map(|r| r.sup_error).collect();
    let halving_ratios: Vec<f64> = sup.windows(2).map(|w| w[1] / w[0]).collect();
    let summary = EvolveSummary {
        inverse_epsilons: reports.iter().map(|r| r.inverse_epsilon).collect(),
        final_errors: reports.iter().map(|r| r.final_error).collect(),
        final_ansatz_errors: reports.iter().map(|r| r.final_ansatz_error).collect(),
        monotone: halving_ratios.iter().all(|r| *r < 1.0),
        halving_ratios,
        sup_errors: sup,
        weighted_mass_probe: probes,
        reports,
    };
    write_json(dir, "evolve_summary.json", &summary, out)
}

fn run_study(run: &ResolvedRun, dir: &Path, out: &mut Artifacts) -> Result<()> {
    let tol = &run.config.tolerances;
    let assembly = &run.config.assembly;
    match run.study {
        Study::Cell => {
            let cell = solve_cell(&run.kernel, &run.mu, &run.grid, assembly, tol)?;
            write_json(dir, "cell_solution.json", &cell, out)
        }
        Study::Evolve => run_evolve(run, dir, out),
        Study::Einstein => {
            let report = einstein_check(&run.kernel, &run.mu, &run.grid, &run.config.einstein, assembly, tol)?;
            write_json(dir, "einstein_report.json", &report, out)?;
            write_text(dir, "einstein_jacobians.csv", &report.jacobian_csv(), out)
        }
        Study::Oracle => {
            let dense = dense_cell_solution(&run.kernel, &run.mu, &run.grid)?;
            let cell: CellSolution = solve_cell(&run.kernel, &run.mu, &run.grid, assembly, tol)?;
            let report = OracleReport::compare(&cell, &dense, ORACLE_TOLERANCE);
            write_json(dir, "cell_solution.json", &cell, out)?;
            write_json(dir, "oracle_report.json", &report, out)?;
            report.check()
        }
    }
}

/// Loads, validates and executes a study. Invalid configurations fail before
/// anything is written; numerical failures leave `failure.json` next to the manifest.
pub fn run(study: Study, config_path: &Path, out_override: Option<PathBuf>) -> Result<Artifacts> {
    let resolved = RunConfig::load(config_path)?.resolve(study, out_override)?;
    execute(&resolved)
}

/// Executes an already resolved run.
pub fn execute(resolved: &ResolvedRun) -> Result<Artifacts> {
    let dir = resolved.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let mut out = Artifacts::default();
    let manifest = Manifest {
        study: resolved.study.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: resolved.config.seed,
        threads: rayon::current_num_threads(),
        config: &resolved.config,
    };
    write_json(&dir, "manifest.json", &manifest, &mut out)?;
    log::info!("running {} study into {}", resolved.study.name(), dir.display());
    match run_study(resolved, &dir, &mut out) {
        Ok(()) => Ok(out),
        Err(e) => {
            let failure = Failure {
                error: e.to_string(),
                exit_code: e.exit_code(),
                study: resolved.study.name(),
            };
            write_json(&dir, "failure.json", &failure, &mut out)?;
            Err(e)
        }
    }
}
