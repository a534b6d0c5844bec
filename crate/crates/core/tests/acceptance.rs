use std::process::ExitCode;
use std::time::Instant;

use nlhomog::cell::{solve_cell, CellSolution, Tolerances};
use nlhomog::einstein::{einstein_check, EinsteinConfig};
use nlhomog::evolution::{simulate, EvolutionConfig, InitialDatum};
use nlhomog::kernel::{CoefficientSpec, JumpDensity, KernelSpec};
use nlhomog::oracle::{dense_cell_solution, OracleReport};
use nlhomog::torus::{AssemblyOptions, TorusGrid};

struct Ledger {
    failed: Vec<usize>,
}

impl Ledger {
    fn record(&mut self, id: usize, ok: bool, detail: String) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id}: {detail}");
        if !ok {
            self.failed.push(id);
        }
    }
}

fn cell(kernel: &dyn JumpDensity, mu: &CoefficientSpec, n: usize) -> CellSolution {
    let grid = TorusGrid::new(1, n).unwrap();
    solve_cell(kernel, mu, &grid, &AssemblyOptions::default(), &Tolerances::default()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn biased() -> KernelSpec {
    KernelSpec::shifted_gaussian(0.2, vec![0.3]).unwrap()
}

fn trig() -> CoefficientSpec {
    CoefficientSpec::trig_product(0.5, 1).unwrap()
}

fn constant_exactness(l: &mut Ledger) {
    let start = Instant::now();
    let s = cell(&biased(), &CoefficientSpec::constant(1.0, 1).unwrap(), 256);
    let secs = start.elapsed().as_secs_f64();
    let (db, dt) = ((s.b[0] - 0.3).abs(), (s.theta[0] - 0.065).abs());
    l.record(
        1,
        db <= 1e-6 && dt <= 1e-6 && secs < 5.0,
        format!("|b - 0.3| = {db:.2e}, |theta - 0.065| = {dt:.2e}, {secs:.2} s"),
    );
}

fn symmetric_vanishing(l: &mut Ledger) {
    let s = cell(&KernelSpec::gaussian(0.2, 1).unwrap(), &trig(), 128);
    let dv = s.v0.iter().fold(0.0_f64, |m, v| m.max((v - 1.0).abs()));
    l.record(
        2,
        s.b[0].abs() <= 1e-8 && dv <= 1e-8,
        format!("|b| = {:.2e}, |v0 - 1|_inf = {dv:.2e}", s.b[0].abs()),
    );
}

fn flux_identity(l: &mut Ledger) {
    let s = cell(&biased(), &trig(), 128);
    let defect = s.flux_identity_defect();
    let eig = s.min_sym_eigenvalue();
    l.record(
        3,
        defect <= 1e-8 && eig > 0.0,
        format!("relative defect = {defect:.2e}, min eigenvalue = {eig:.6}"),
    );
}

fn fredholm_bookkeeping(l: &mut Ledger) {
    let s = cell(&biased(), &trig(), 128);
    let r = &s.residuals;
    let vmin = s.v0.iter().cloned().fold(f64::INFINITY, f64::min);
    l.record(
        4,
        r.solvability <= 1e-10
            && r.corrector1 <= 1e-10
            && r.corrector2 <= 1e-10
            && r.ground_state <= 1e-12
            && vmin > 0.0,
        format!(
            "solvability = {:.2e}, correctors = {:.2e}/{:.2e}, ground state = {:.2e}, min v0 = {vmin:.4}",
            r.solvability, r.corrector1, r.corrector2, r.ground_state
        ),
    );
}

fn oracle_equivalence(l: &mut Ledger) {
    let start = Instant::now();
    let (a, mu) = (biased(), trig());
    let grid = TorusGrid::new(1, 128).unwrap();
    let s = solve_cell(&a, &mu, &grid, &AssemblyOptions::default(), &Tolerances::default()).unwrap();
    let dense = dense_cell_solution(&a, &mu, &grid).unwrap();
    let report = OracleReport::compare(&s, &dense, 1e-8);
    let secs = start.elapsed().as_secs_f64();
    l.record(
        5,
        report.check().is_ok() && secs < 30.0,
        format!("max discrepancy = {:.2e}, {secs:.2} s", report.max_discrepancy()),
    );
}

fn evolution(l: &mut Ledger) {
    let start = Instant::now();
    let (a, mu) = (biased(), trig());
    let c = cell(&a, &mu, 32);
    let reports: Vec<_> = [0.125, 0.0625, 0.03125]
        .iter()
        .map(|&epsilon| {
            let cfg = EvolutionConfig {
                epsilon,
                horizon: 0.25,
                n_cell: 32,
                initial_datum: InitialDatum::Harmonic { k0: vec![1] },
                dt_safety: 0.5,
            };
            simulate(&a, &mu, &cfg, &c).unwrap()
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let errs: Vec<f64> = reports.iter().map(|r| r.sup_error).collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
    l.record(
        6,
        ratios.iter().all(|r| *r <= 0.75) && secs < 600.0,
        format!("sup errors = {}, ratios = {ratios:.4?}, {secs:.2} s", sci(&errs)),
    );

    let drift = reports.iter().map(|r| r.mass_drift).fold(0.0, f64::max);
    let energy = reports.iter().map(|r| r.max_energy_increase).fold(0.0, f64::max);
    let initial = reports.iter().map(|r| r.l2_error[0]).fold(0.0, f64::max);
    l.record(
        7,
        drift <= 1e-8 && energy <= 1e-10 && initial <= 1e-14,
        format!("mass drift = {drift:.2e}, energy increase = {energy:.2e}, t=0 error = {initial:.2e}"),
    );
}

fn einstein(l: &mut Ledger) {
    let a = KernelSpec::gaussian(0.2, 1).unwrap();
    let grid = TorusGrid::new(1, 128).unwrap();
    let cfg = EinsteinConfig::default();
    let run = |mu: &CoefficientSpec| {
        einstein_check(&a, mu, &grid, &cfg, &AssemblyOptions::default(), &Tolerances::default()).unwrap()
    };
    let r = run(&trig());
    let ratio = r.fd.decay_ratios[0];
    let trig_ok = r.deviations.fd_vs_2theta <= 1e-4
        && r.deviations.lin_vs_fd <= 1e-5
        && (3.0..=5.5).contains(&ratio)
        && cfg.min_step() == 2.5e-3;
    let k = run(&CoefficientSpec::constant(1.0, 1).unwrap());
    let worst = [k.b_lin[0], k.b_fd[0], 2.0 * k.theta_sym[0]]
        .iter()
        .fold(0.0_f64, |m, v| m.max((v - 0.04).abs()));
    l.record(
        8,
        trig_ok && worst <= 1e-6,
        format!(
            "|B_fd - 2 theta| = {:.2e}, |B_lin - B_fd| = {:.2e}, step decay ratio = {ratio:.3}, constant case deviation = {worst:.2e}",
            r.deviations.fd_vs_2theta, r.deviations.lin_vs_fd
        ),
    );
}

fn grid_cauchy(l: &mut Ledger) {
    let a = KernelSpec::compact_bump(0.25, vec![0.1]).unwrap();
    let mu = trig();
    let sols: Vec<CellSolution> = [64, 128, 256, 512].iter().map(|&n| cell(&a, &mu, n)).collect();
    let db: Vec<f64> = sols.windows(2).map(|w| (w[1].b[0] - w[0].b[0]).abs()).collect();
    let dt: Vec<f64> = sols.windows(2).map(|w| (w[1].theta[0] - w[0].theta[0]).abs()).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    l.record(
        9,
        decreasing(&db) && decreasing(&dt),
        format!("|db| = {}, |dtheta| = {}", sci(&db), sci(&dt)),
    );
}

fn scaling(l: &mut Ledger) {
    let a = biased();
    let one = cell(&a, &trig(), 64);
    let two = cell(&a, &CoefficientSpec::trig_product(0.5, 1).unwrap().scaled(2.0).unwrap(), 64);
    let doubled = |x: &[f64]| x.iter().map(|v| 2.0 * v).collect::<Vec<_>>();
    let defects = [
        max_diff(&two.b, &doubled(&one.b)),
        max_diff(&two.theta, &doubled(&one.theta)),
        max_diff(&two.v0, &one.v0),
        max_diff(&two.kappa1[0], &one.kappa1[0]),
    ];
    let worst = defects.iter().cloned().fold(0.0, f64::max);
    l.record(10, worst <= 1e-8, format!("max defect = {worst:.2e}"));
}

fn main() -> ExitCode {
    let mut l = Ledger { failed: Vec::new() };
    constant_exactness(&mut l);
    symmetric_vanishing(&mut l);
    flux_identity(&mut l);
    fredholm_bookkeeping(&mut l);
    oracle_equivalence(&mut l);
    evolution(&mut l);
    einstein(&mut l);
    grid_cauchy(&mut l);
    scaling(&mut l);
    if l.failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {:?}", l.failed);
        ExitCode::FAILURE
    }
}
