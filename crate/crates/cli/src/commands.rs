//! The four subcommands.

use std::path::{Path, PathBuf};

use coupled_diffusion::analysis::{decay_report, epsilon_sweep, SweepConfig};
use coupled_diffusion::energy_spectrum::{
    estimate_beta1, estimate_energy_control_k, SpectralDecomposition,
};
use coupled_diffusion::evolution::{
    cfl_limit, evolve, picard_window_solve, ImplicitStepper, SchemeKind, StepScheme, Trajectory,
    DEFAULT_IMPLICIT_DT,
};
use coupled_diffusion::{CouplingConstants, Error, GeneratorMatrix, Grid, Kernel, StateField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{AutoOr, InitKind, SimConfig};
use crate::output::{fmt_num, line_plot, read_column, Axis, Table};
use crate::CliError;

/// Files written by a run, plus remarks worth showing the user.
#[derive(Debug, Default, Clone)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

impl Artifacts {
    fn save(&mut self, table: Table, path: PathBuf) -> Result<(), CliError> {
        table.save(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn save_text(&mut self, text: &str, path: PathBuf) -> Result<(), CliError> {
        crate::output::write_atomic(&path, text.as_bytes())?;
        self.files.push(path);
        Ok(())
    }
}

fn config_err(key: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config {
        key: key.into(),
        msg: e.to_string(),
    }
}

fn runtime_err(stage: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime {
        stage: stage.into(),
        msg: e.to_string(),
    }
}

struct Problem {
    grid: Grid,
    kernel: Kernel,
    constants: CouplingConstants,
    generator: GeneratorMatrix,
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(
            key,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn build_problem(cfg: &SimConfig) -> Result<Problem, CliError> {
    positive("kernel.radius", cfg.radius)?;
    positive("kernel.epsilon", cfg.epsilon)?;
    let kernel = Kernel::new(cfg.family, cfg.radius, cfg.epsilon)
        .map_err(|e| config_err("kernel.family", e))?;
    let constants = kernel.coupling_constants();
    let grid = Grid::new(cfg.n_local, cfg.n_nonlocal).map_err(|e| {
        let key = if cfg.n_local < 4 {
            "grid.n_local"
        } else {
            "grid.n_nonlocal"
        };
        config_err(key, e)
    })?;
    let generator = GeneratorMatrix::assemble(&grid, &kernel, &constants).map_err(|e| match e {
        Error::UnderResolved { .. } => config_err(
            "grid.n_nonlocal",
            format!(
                "{e}; use at least {}",
                Grid::resolving_count(cfg.n_nonlocal, kernel.support())
            ),
        ),
        other => config_err("kernel.family", other),
    })?;
    Ok(Problem {
        grid,
        kernel,
        constants,
        generator,
    })
}

fn initial_state(cfg: &SimConfig, grid: &Grid) -> Result<StateField, CliError> {
    if cfg.init.kind == InitKind::Gaussian {
        positive("init.width", cfg.init.width)?;
    }
    let w = match cfg.init.profile() {
        Some(f) => grid.mesh().sample(f),
        None => {
            let path = cfg
                .init
                .path
                .as_ref()
                .ok_or_else(|| config_err("init.path", "required when init.kind = file"))?;
            let values = read_column(path, "w").map_err(|e| config_err("init.path", e))?;
            if values.len() != grid.len() {
                return Err(config_err(
                    "init.path",
                    format!("{} values for a grid of {}", values.len(), grid.len()),
                ));
            }
            StateField::new(values)
        }
    };
    w.check_finite().map_err(|e| config_err("init.kind", e))?;
    Ok(w)
}

/// The scheme and its requested step, checked against the generator.
fn checked_scheme(cfg: &SimConfig, p: &Problem) -> Result<(StepScheme, f64), CliError> {
    positive("time.horizon", cfg.horizon)?;
    let scheme = cfg.step_scheme(p.constants.picard_window_bound());
    if scheme.kind == SchemeKind::Picard {
        scheme
            .validate_picard(&p.constants)
            .map_err(|e| config_err("picard.window", e))?;
    }
    let dt = scheme
        .requested_dt(&p.generator)
        .map_err(|e| config_err("time.dt", e))?;
    Ok((scheme, dt))
}

/// Config with the automatic choices made concrete, so re-running it
/// repeats the same steps.
fn resolved(cfg: &SimConfig, p: &Problem, requested_dt: f64) -> SimConfig {
    let mut out = cfg.clone();
    let params = cfg.picard_params(p.constants.picard_window_bound());
    out.picard_window = AutoOr::Value(params.window);
    if cfg.scheme != SchemeKind::Picard {
        out.dt = AutoOr::Value(requested_dt);
    }
    out
}

fn write_manifest(
    art: &mut Artifacts,
    dir: &Path,
    cfg: &SimConfig,
    notes: &[(&str, String)],
) -> Result<(), CliError> {
    art.save_text(&cfg.render(notes), dir.join("manifest.conf"))
}

pub fn run_simulate(cfg: &SimConfig, svg: bool) -> Result<Artifacts, CliError> {
    let p = build_problem(cfg)?;
    let w0 = initial_state(cfg, &p.grid)?;
    let (scheme, requested) = checked_scheme(cfg, &p)?;
    let traj = evolve(&p.generator, &w0, &scheme, cfg.horizon, cfg.snapshot_stride)
        .map_err(|e| runtime_err("evolve", e))?;

    let dir = &cfg.output_dir;
    let mut art = Artifacts::default();
    art.save(timeseries_table(&traj)?, dir.join("timeseries.csv"))?;
    for snap in traj.snapshots() {
        let mut t = Table::new(&["x", "w", "region"])?;
        let nl = p.grid.interface_index();
        for (i, (x, w)) in p
            .grid
            .positions()
            .iter()
            .zip(snap.state.values())
            .enumerate()
        {
            let region = if i <= nl { "local" } else { "nonlocal" };
            t.row([fmt_num(*x), fmt_num(*w), region.to_string()])?;
        }
        art.save(
            t,
            dir.join("snapshots")
                .join(format!("snapshot_{:08}.csv", snap.step)),
        )?;
    }

    let spectral = estimate_beta1(&p.generator).map_err(|e| runtime_err("gap estimate", e))?;
    match decay_report(&traj, &spectral) {
        Ok(d) => {
            let mut t = Table::new(&[
                "fitted_rate",
                "beta1",
                "lambda2",
                "r_squared",
                "bound_satisfied",
            ])?;
            t.row([
                fmt_num(d.fitted_rate),
                fmt_num(d.beta1_used),
                fmt_num(d.lambda2),
                fmt_num(d.r_squared),
                d.bound_satisfied.to_string(),
            ])?;
            art.save(t, dir.join("decay.csv"))?;
        }
        Err(Error::InsufficientSamples(why)) => art.notes.push(format!("decay.csv skipped: {why}")),
        Err(e) => return Err(runtime_err("decay fit", e)),
    }

    if svg {
        let pts: Vec<(f64, f64)> = traj
            .series()
            .iter()
            .map(|r| (r.t, r.dist_to_mean))
            .collect();
        let plot = line_plot(
            "distance to mean",
            "t",
            "dist_to_mean",
            &pts,
            Axis::Linear,
            Axis::Log,
        );
        art.save_text(&plot, dir.join("dist_to_mean.svg"))?;
    }

    let mut notes = vec![
        ("dt_used", traj.dt().to_string()),
        ("steps", traj.steps().to_string()),
    ];
    if let Ok(limit) = cfl_limit(&p.generator) {
        notes.push(("cfl_limit", limit.to_string()));
    }
    write_manifest(&mut art, dir, &resolved(cfg, &p, requested), &notes)?;
    Ok(art)
}

fn timeseries_table(traj: &Trajectory) -> Result<Table, CliError> {
    let mut t = Table::new(&[
        "t",
        "mass",
        "energy_total",
        "energy_local",
        "energy_nonlocal",
        "energy_coupling",
        "dist_to_mean",
    ])?;
    for r in traj.series() {
        let e = &r.energy;
        t.row(
            [
                r.t,
                r.mass,
                e.total,
                e.local_term,
                e.nonlocal_term,
                e.coupling_term,
                r.dist_to_mean,
            ]
            .map(fmt_num),
        )?;
    }
    Ok(t)
}

pub fn run_spectrum(cfg: &SimConfig) -> Result<Artifacts, CliError> {
    let header = [
        "n_local",
        "n_nonlocal",
        "epsilon",
        "beta1",
        "lambda2",
        "residual",
        "k_estimate",
    ];
    let mut t = Table::new(&header)?;
    let dir = &cfg.output_dir;
    let mut art = Artifacts::default();
    if cfg.pure_heat {
        let gen = GeneratorMatrix::pure_heat(cfg.pure_heat_cells)
            .map_err(|e| config_err("spectrum.n_cells", e))?;
        let r = estimate_beta1(&gen).map_err(|e| runtime_err("gap estimate", e))?;
        t.row([
            cfg.pure_heat_cells.to_string(),
            "0".into(),
            fmt_num(f64::NAN),
            fmt_num(r.beta1),
            fmt_num(r.lambda2),
            fmt_num(r.residual),
            fmt_num(f64::NAN),
        ])?;
        art.notes
            .push("pure heat diagnostic: epsilon and k_estimate are not defined".into());
    } else {
        let p = build_problem(cfg)?;
        if cfg.k_samples < 10 {
            return Err(config_err("spectrum.k_samples", "need at least 10 samples"));
        }
        let r = estimate_beta1(&p.generator).map_err(|e| runtime_err("gap estimate", e))?;
        let k =
            estimate_energy_control_k(&p.grid, &p.kernel, &p.constants, cfg.k_samples, cfg.seed)
                .map_err(|e| runtime_err("energy control sampling", e))?;
        t.row([
            cfg.n_local.to_string(),
            cfg.n_nonlocal.to_string(),
            fmt_num(cfg.epsilon),
            fmt_num(r.beta1),
            fmt_num(r.lambda2),
            fmt_num(r.residual),
            fmt_num(k),
        ])?;
    }
    art.save(t, dir.join("spectrum.csv"))?;
    write_manifest(&mut art, dir, cfg, &[])?;
    Ok(art)
}

pub fn run_sweep(cfg: &SimConfig, svg: bool) -> Result<Artifacts, CliError> {
    let eps = &cfg.eps_list;
    if eps.is_empty() || eps.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
        return Err(config_err("sweep.eps_list", "needs positive values"));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(config_err("sweep.eps_list", "must be strictly decreasing"));
    }
    positive("time.horizon", cfg.horizon)?;
    positive("kernel.radius", cfg.radius)?;
    if cfg.sweep_modes == 0 {
        return Err(config_err("sweep.n_modes", "must be positive"));
    }
    if cfg.sweep_compare_stride == 0 {
        return Err(config_err("sweep.compare_stride", "must be positive"));
    }
    let dt = match cfg.dt {
        AutoOr::Auto => DEFAULT_IMPLICIT_DT,
        AutoOr::Value(v) => v,
    };
    positive("time.dt", dt)?;
    Grid::new(cfg.n_local, cfg.n_nonlocal).map_err(|e| config_err("grid.n_local", e))?;
    let profile = cfg
        .init
        .profile()
        .ok_or_else(|| config_err("init.kind", "the sweep needs an analytic initial profile"))?;
    if cfg.init.kind == InitKind::Gaussian {
        positive("init.width", cfg.init.width)?;
    }

    let base = SweepConfig {
        family: cfg.family,
        radius: cfg.radius,
        n_local: cfg.n_local,
        n_nonlocal: cfg.n_nonlocal,
        dt,
        n_modes: cfg.sweep_modes,
        compare_stride: cfg.sweep_compare_stride,
    };
    let rows = epsilon_sweep(&base, eps, cfg.horizon, profile.as_ref())
        .map_err(|e| runtime_err("epsilon sweep", e))?;

    let dir = &cfg.output_dir;
    let mut art = Artifacts::default();
    let mut t = Table::new(&["epsilon", "n_nonlocal", "dt", "sup_error_l2", "beta1_eps"])?;
    for r in &rows {
        t.row([
            fmt_num(r.epsilon),
            r.n_nonlocal.to_string(),
            fmt_num(r.dt),
            fmt_num(r.sup_error),
            fmt_num(r.beta1_eps),
        ])?;
    }
    art.save(t, dir.join("sweep.csv"))?;
    if cfg.scheme != SchemeKind::Implicit {
        art.notes
            .push("the sweep always steps with implicit Euler".into());
    }
    if svg {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.epsilon, r.sup_error)).collect();
        let plot = line_plot(
            "sweep error",
            "epsilon",
            "sup_error_l2",
            &pts,
            Axis::Log,
            Axis::Log,
        );
        art.save_text(&plot, dir.join("sweep.svg"))?;
    }
    let mut manifest = cfg.clone();
    manifest.dt = AutoOr::Value(dt);
    write_manifest(&mut art, dir, &manifest, &[])?;
    Ok(art)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CheckRow {
    fn from(name: &'static str, result: Result<(bool, String), Error>) -> Self {
        match result {
            Ok((pass, detail)) => Self { name, pass, detail },
            Err(e) => Self {
                name,
                pass: false,
                detail: format!("error: {e}"),
            },
        }
    }
}

type Check<'a> = (
    &'static str,
    Box<dyn Fn() -> Result<(bool, String), Error> + Send + Sync + 'a>,
);

/// Run the invariant checklist. Configuration problems are errors; failed
/// checks are reported in the rows.
pub fn run_verify(cfg: &SimConfig) -> Result<Vec<CheckRow>, CliError> {
    let p = build_problem(cfg)?;
    let w0 = initial_state(cfg, &p.grid)?;
    let (_, requested) = checked_scheme(cfg, &p)?;
    let dt = if cfg.scheme == SchemeKind::Implicit {
        requested
    } else {
        DEFAULT_IMPLICIT_DT
    };

    let clean = &p.generator;
    let mut under_test = clean.clone();
    if cfg.corrupt_generator {
        under_test.zero_first_coupling_entry();
    }
    let gen = &under_test;
    let traj = evolve(gen, &w0, &StepScheme::implicit(dt), cfg.horizon, 0);
    let traj = &traj;
    let mesh = p.grid.mesh();
    let w0 = &w0;

    let checks: Vec<Check> = vec![
        (
            "operator structure",
            Box::new(|| {
                let s = gen.structure();
                let defect = gen.m_matrix_defect(dt);
                Ok((
                    s.holds(1e-12) && defect <= 1e-12,
                    format!(
                        "row sums {:.1e}, symmetry {:.1e}, M-matrix defect {defect:.1e}",
                        s.row_sum_defect, s.symmetry_defect
                    ),
                ))
            }),
        ),
        (
            "mass conservation",
            Box::new(|| {
                let traj = traj.as_ref().map_err(Clone::clone)?;
                let scale = gen.max_abs_diagonal().max(1.0);
                let probes = [
                    StateField::constant(p.grid.len(), 1.0),
                    mesh.sample(|x| x),
                    mesh.sample(|x| x * x),
                    w0.clone(),
                ];
                let mut worst_identity: f64 = 0.0;
                for probe in &probes {
                    let lw = gen.apply(probe)?;
                    let norm = mesh.norm(probe).max(1e-300);
                    worst_identity = worst_identity.max(mesh.mass(&lw).abs() / (scale * norm));
                }
                let m0 = traj.series()[0].mass;
                let drift = traj
                    .series()
                    .iter()
                    .map(|r| (r.mass - m0).abs())
                    .fold(0.0, f64::max)
                    / mesh.norm(w0).max(m0.abs()).max(1e-300);
                Ok((
                    worst_identity <= 1e-14 && drift <= 1e-11,
                    format!("mass identity {worst_identity:.1e}, drift {drift:.1e}"),
                ))
            }),
        ),
        (
            "energy dissipation",
            Box::new(|| {
                let traj = traj.as_ref().map_err(Clone::clone)?;
                let e0 = traj.series()[0].energy.total;
                let rise = traj.max_energy_increase();
                Ok((
                    rise <= 1e-12 * e0.max(1.0),
                    format!("largest step increase {rise:.2e}"),
                ))
            }),
        ),
        (
            "comparison principle",
            Box::new(|| {
                let stepper = ImplicitStepper::new(gen, dt)?;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let mut worst = f64::NEG_INFINITY;
                for _ in 0..10 {
                    let mut lo = StateField::new(
                        (0..p.grid.len())
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect(),
                    );
                    let mut hi = StateField::new(
                        lo.values()
                            .iter()
                            .map(|v| v + rng.random_range(0.0..0.5))
                            .collect(),
                    );
                    for _ in 0..100 {
                        lo = stepper.step(&lo)?;
                        hi = stepper.step(&hi)?;
                        let gap = lo
                            .values()
                            .iter()
                            .zip(hi.values())
                            .map(|(a, b)| a - b)
                            .fold(f64::NEG_INFINITY, f64::max);
                        worst = worst.max(gap);
                    }
                }
                Ok((
                    worst <= 1e-12,
                    format!("worst ordering violation {:.1e}", worst.max(0.0)),
                ))
            }),
        ),
        (
            "decay bound",
            Box::new(|| {
                let traj = traj.as_ref().map_err(Clone::clone)?;
                let beta1 = estimate_beta1(gen)?.beta1;
                let d0 = traj.series()[0].dist_to_mean;
                let worst = traj
                    .series()
                    .iter()
                    .map(|r| {
                        let bound = d0 * (-beta1 * r.t).exp();
                        if bound > 0.0 {
                            r.dist_to_mean / bound
                        } else if r.dist_to_mean > 0.0 {
                            f64::INFINITY
                        } else {
                            0.0
                        }
                    })
                    .fold(0.0, f64::max);
                Ok((
                    worst <= 1.0 + 1e-6,
                    format!("beta1 {beta1:.6}, worst ratio to bound {worst:.6}"),
                ))
            }),
        ),
        (
            "picard vs implicit",
            Box::new(|| {
                let params = cfg.picard_params(p.constants.picard_window_bound());
                let horizon = cfg.horizon.min(0.5);
                let (pt, report) = picard_window_solve(
                    &p.grid,
                    &p.kernel,
                    &p.constants,
                    w0,
                    &StepScheme::picard(params),
                    horizon,
                )?;
                let mono = evolve(clean, w0, &StepScheme::implicit(pt.dt()), horizon, 0)?;
                let dist = mesh.distance(pt.final_state(), mono.final_state());
                let ok = dist <= 1e-6
                    && report.converged(params.tol)
                    && report.max_ratio() <= report.kappa;
                Ok((
                    ok,
                    format!(
                        "distance {dist:.2e}, contraction {:.2e} vs kappa {:.3}",
                        report.max_ratio(),
                        report.kappa
                    ),
                ))
            }),
        ),
        (
            "matrix exponential oracle",
            Box::new(|| {
                let n_nl = Grid::resolving_count(20, p.kernel.support());
                let small = Grid::new(20, n_nl)?;
                let g = GeneratorMatrix::assemble(&small, &p.kernel, &p.constants)?;
                let exact = SpectralDecomposition::new(&g);
                let start = small
                    .mesh()
                    .sample(|x| (-(x + 0.5f64).powi(2) / 0.02).exp());
                let want = exact.propagate(&start, 0.5)?;
                let got = evolve(&g, &start, &StepScheme::implicit(1e-4), 0.5, 0)?;
                let dist = small.mesh().distance(&want, got.final_state());
                Ok((
                    dist <= 1e-5,
                    format!("distance at t=0.5 {dist:.2e} on a {}+{} grid", 20, n_nl),
                ))
            }),
        ),
    ];

    Ok(checks
        .par_iter()
        .map(|(name, check)| CheckRow::from(name, check()))
        .collect())
}
