//! Time integration of `w' = L w`.
//!
//! Three schemes share one trajectory format: explicit Euler under the
//! Gershgorin limit, implicit Euler (the default), and a windowed Picard
//! iteration that alternates a nonlocal solve driven by the interface trace
//! with a local solve driven by the nonlocal field.

use std::fmt;
use std::str::FromStr;

use nalgebra::Dyn;
use nalgebra::{DMatrix, DVector, LU};

use crate::discretization::{GeneratorMatrix, Grid, Mesh, Model, StateField};
use crate::energy_spectrum::{EnergyBreakdown, GeneratorEnergy};
use crate::error::{Error, Result};
use crate::kernels::{CouplingConstants, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Explicit,
    Implicit,
    Picard,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Explicit => "explicit",
            SchemeKind::Implicit => "implicit",
            SchemeKind::Picard => "picard",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "explicit" => Ok(SchemeKind::Explicit),
            "implicit" => Ok(SchemeKind::Implicit),
            "picard" => Ok(SchemeKind::Picard),
            other => Err(Error::Invalid(format!("unknown time scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    Fixed(f64),
    /// Explicit: the CFL limit. Implicit: [`DEFAULT_IMPLICIT_DT`].
    /// Picard: window / substeps.
    Auto,
}

pub const DEFAULT_IMPLICIT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardParams {
    pub window: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Implicit sub-steps per window when the time step is automatic.
    pub substeps: usize,
}

impl Default for PicardParams {
    fn default() -> Self {
        Self {
            window: 0.0,
            tol: 1e-10,
            max_iters: 50,
            substeps: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScheme {
    pub kind: SchemeKind,
    pub dt: TimeStep,
    pub picard: PicardParams,
}

impl StepScheme {
    pub fn explicit(dt: TimeStep) -> Self {
        Self {
            kind: SchemeKind::Explicit,
            dt,
            picard: PicardParams::default(),
        }
    }

    pub fn implicit(dt: f64) -> Self {
        Self {
            kind: SchemeKind::Implicit,
            dt: TimeStep::Fixed(dt),
            picard: PicardParams::default(),
        }
    }

    pub fn picard(params: PicardParams) -> Self {
        Self {
            kind: SchemeKind::Picard,
            dt: TimeStep::Auto,
            picard: params,
        }
    }

    /// Time step this scheme asks for on `generator` (before fitting to the horizon).
    pub fn requested_dt(&self, generator: &GeneratorMatrix) -> Result<f64> {
        let dt = match (self.kind, self.dt) {
            (_, TimeStep::Fixed(dt)) => dt,
            (SchemeKind::Explicit, TimeStep::Auto) => cfl_limit(generator)?,
            (SchemeKind::Implicit, TimeStep::Auto) => DEFAULT_IMPLICIT_DT,
            (SchemeKind::Picard, TimeStep::Auto) => {
                self.picard.window / self.picard.substeps.max(1) as f64
            }
        };
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::NonPositive {
                name: "time.dt",
                value: dt,
            });
        }
        if self.kind == SchemeKind::Explicit {
            let limit = cfl_limit(generator)?;
            if dt > limit * (1.0 + 1e-12) {
                return Err(Error::AboveCfl { dt, limit });
            }
        }
        Ok(dt)
    }

    /// Checks the Picard window against `1 / (2 c1 + c2)`.
    pub fn validate_picard(&self, constants: &CouplingConstants) -> Result<()> {
        let p = &self.picard;
        let bound = constants.picard_window_bound();
        if !(p.window > 0.0) || p.window >= bound {
            return Err(Error::PicardWindow {
                window: p.window,
                bound,
            });
        }
        if !(p.tol > 0.0) || p.max_iters == 0 || p.substeps == 0 {
            return Err(Error::Invalid(
                "picard tolerance, iteration cap and sub-step count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `0.9 / max |L_ii|`.
pub fn cfl_limit(generator: &GeneratorMatrix) -> Result<f64> {
    let d = generator.max_abs_diagonal();
    if d == 0.0 {
        return Err(Error::ZeroGenerator);
    }
    Ok(0.9 / d)
}

/// `w + dt L w`; refuses steps above the CFL limit.
pub fn step_explicit(generator: &GeneratorMatrix, w: &StateField, dt: f64) -> Result<StateField> {
    let limit = cfl_limit(generator)?;
    if !(dt > 0.0) {
        return Err(Error::NonPositive {
            name: "dt",
            value: dt,
        });
    }
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::AboveCfl { dt, limit });
    }
    let x = w.to_dvector();
    let next = &x + generator.matrix() * &x * dt;
    Ok(StateField::from_dvector(&next))
}

/// Cached factorisation of `I - dt L`.
pub struct ImplicitStepper {
    system: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    dt: f64,
}

impl ImplicitStepper {
    pub fn new(generator: &GeneratorMatrix, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::NonPositive {
                name: "dt",
                value: dt,
            });
        }
        let system = shifted_identity(generator.matrix(), dt);
        let lu = system.clone().lu();
        Ok(Self { system, lu, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Solve `(I - dt L) x = w`. The solve is done for the increment
    /// `d = x - w`, from `(I - dt L) d = dt L w`, so roundoff scales with the
    /// update rather than with the state and the mass stays put over long runs.
    pub fn step(&self, w: &StateField) -> Result<StateField> {
        let x = w.to_dvector();
        let rhs = (&self.system * &x - &x) * -1.0;
        let scale = rhs.amax().max(1e-12 * x.amax());
        let d = if scale == 0.0 {
            DVector::zeros(x.len())
        } else {
            solve_checked_scaled(&self.system, &self.lu, &rhs, scale)?
        };
        Ok(StateField::from_dvector(&(x + d)))
    }
}

fn shifted_identity(block: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let n = block.nrows();
    let mut m = block * (-dt);
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    m
}

fn residual_inf(
    system: &DMatrix<f64>,
    x: &DVector<f64>,
    rhs: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let r = rhs - system * x;
    let norm = r.amax();
    (r, norm)
}

fn solve_checked(
    system: &DMatrix<f64>,
    lu: &LU<f64, Dyn, Dyn>,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    solve_checked_scaled(system, lu, rhs, rhs.amax())
}

/// LU solve with one refinement step, accepted at residual `1e-12 * scale`.
fn solve_checked_scaled(
    system: &DMatrix<f64>,
    lu: &LU<f64, Dyn, Dyn>,
    rhs: &DVector<f64>,
    scale: f64,
) -> Result<DVector<f64>> {
    let mut x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Invalid("singular implicit system".into()))?;
    let required = 1e-12 * scale;
    let (r, mut res) = residual_inf(system, &x, rhs);
    if res > required {
        // one round of iterative refinement
        if let Some(dx) = lu.solve(&r) {
            x += dx;
            res = residual_inf(system, &x, rhs).1;
        }
        if res > required {
            return Err(Error::SolveResidual {
                residual: res,
                required,
            });
        }
    }
    Ok(x)
}

/// One implicit Euler step; factorises `I - dt L` on every call.
pub fn step_implicit(generator: &GeneratorMatrix, w: &StateField, dt: f64) -> Result<StateField> {
    generator.mesh().check(w)?;
    ImplicitStepper::new(generator, dt)?.step(w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRecord {
    pub t: f64,
    pub mass: f64,
    pub energy: EnergyBreakdown,
    pub dist_to_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub state: StateField,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    mesh: Mesh,
    dt: f64,
    series: Vec<SeriesRecord>,
    snapshots: Vec<Snapshot>,
    last: StateField,
}

impl Trajectory {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// Step size actually used (the requested one, shrunk to divide the horizon).
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn series(&self) -> &[SeriesRecord] {
        &self.series
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.series.iter().map(|r| r.t)
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn final_state(&self) -> &StateField {
        &self.last
    }

    pub fn steps(&self) -> usize {
        self.series.len() - 1
    }

    /// Largest `|mass(t) - mass(0)| / |mass(0)|` (absolute when the mass is zero).
    pub fn max_relative_mass_drift(&self) -> f64 {
        let m0 = self.series[0].mass;
        let scale = if m0.abs() > 0.0 { m0.abs() } else { 1.0 };
        self.series
            .iter()
            .map(|r| (r.mass - m0).abs() / scale)
            .fold(0.0, f64::max)
    }

    /// Largest increase of the total energy between consecutive records.
    pub fn max_energy_increase(&self) -> f64 {
        self.series
            .windows(2)
            .map(|p| p[1].energy.total - p[0].energy.total)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

struct Recorder {
    mesh: Mesh,
    energy: GeneratorEnergy,
    stride: usize,
    dt: f64,
    series: Vec<SeriesRecord>,
    snapshots: Vec<Snapshot>,
}

impl Recorder {
    fn new(generator: &GeneratorMatrix, stride: usize, dt: f64) -> Result<Self> {
        Ok(Self {
            mesh: generator.mesh().clone(),
            energy: GeneratorEnergy::for_generator(generator)?,
            stride,
            dt,
            series: Vec::new(),
            snapshots: Vec::new(),
        })
    }

    fn record(&mut self, step: usize, t: f64, w: &StateField) -> Result<()> {
        if w.first_non_finite().is_some() {
            return Err(Error::Blowup { step, time: t });
        }
        self.series.push(SeriesRecord {
            t,
            mass: self.mesh.mass(w),
            energy: self.energy.evaluate(w)?,
            dist_to_mean: self.mesh.dist_to_mean(w),
        });
        if self.stride > 0 && step.is_multiple_of(self.stride) {
            self.snapshots.push(Snapshot {
                step,
                t,
                state: w.clone(),
            });
        }
        Ok(())
    }

    fn finish(self, last: StateField) -> Trajectory {
        Trajectory {
            mesh: self.mesh,
            dt: self.dt,
            series: self.series,
            snapshots: self.snapshots,
            last,
        }
    }
}

/// Number of equal steps of size at most `dt` covering `horizon`.
fn step_count(horizon: f64, dt: f64) -> usize {
    if horizon <= 0.0 {
        return 0;
    }
    ((horizon / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Advance `w0` to `horizon`, recording diagnostics every step and a snapshot
/// every `snapshot_stride` steps (0 disables snapshots).
pub fn evolve(
    generator: &GeneratorMatrix,
    w0: &StateField,
    scheme: &StepScheme,
    horizon: f64,
    snapshot_stride: usize,
) -> Result<Trajectory> {
    generator.mesh().check(w0)?;
    w0.check_finite()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::NonPositive {
            name: "time.horizon",
            value: horizon,
        });
    }
    if scheme.kind == SchemeKind::Picard {
        let Model::Coupled {
            grid, constants, ..
        } = generator.model()
        else {
            return Err(Error::Invalid(
                "picard iteration needs the coupled generator".into(),
            ));
        };
        return picard_run(
            generator,
            grid,
            constants,
            w0,
            scheme,
            horizon,
            snapshot_stride,
        )
        .map(|(traj, _)| traj);
    }

    let requested = scheme.requested_dt(generator)?;
    let n = step_count(horizon, requested);
    let dt = if n == 0 {
        requested
    } else {
        horizon / n as f64
    };

    let mut rec = Recorder::new(generator, snapshot_stride, dt)?;
    let mut w = w0.clone();
    rec.record(0, 0.0, &w)?;
    match scheme.kind {
        SchemeKind::Explicit => {
            let l = generator.matrix();
            let mut x = w.to_dvector();
            for step in 1..=n {
                let lx = l * &x;
                x.axpy(dt, &lx, 1.0);
                w = StateField::from_dvector(&x);
                rec.record(step, step as f64 * dt, &w)?;
            }
        }
        SchemeKind::Implicit => {
            let stepper = ImplicitStepper::new(generator, dt)?;
            for step in 1..=n {
                w = stepper.step(&w)?;
                rec.record(step, step as f64 * dt, &w)?;
            }
        }
        SchemeKind::Picard => unreachable!(),
    }
    Ok(rec.finish(w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub windows: usize,
    pub iterations: Vec<usize>,
    pub final_updates: Vec<f64>,
    /// Ratios of successive update norms observed in each window.
    pub ratios: Vec<Vec<f64>>,
    /// `(c2/2) c2 T / (1 - (2 c1 + c2) T)` for the window length used.
    pub kappa: f64,
    /// Window length actually used.
    pub window: f64,
}

impl PicardReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn converged(&self, tol: f64) -> bool {
        self.final_updates.iter().all(|&u| u <= tol)
    }
}

/// Windowed fixed-point construction: on each window, solve the nonlocal
/// subsystem with the interface trace frozen from the current local iterate,
/// then the local subsystem with that nonlocal history, until the local
/// history stops changing.
pub fn picard_window_solve(
    grid: &Grid,
    kernel: &Kernel,
    constants: &CouplingConstants,
    w0: &StateField,
    scheme: &StepScheme,
    horizon: f64,
) -> Result<(Trajectory, PicardReport)> {
    let generator = GeneratorMatrix::assemble(grid, kernel, constants)?;
    grid.mesh().check(w0)?;
    w0.check_finite()?;
    picard_run(&generator, grid, constants, w0, scheme, horizon, 1)
}

fn picard_run(
    generator: &GeneratorMatrix,
    grid: &Grid,
    constants: &CouplingConstants,
    w0: &StateField,
    scheme: &StepScheme,
    horizon: f64,
    snapshot_stride: usize,
) -> Result<(Trajectory, PicardReport)> {
    scheme.validate_picard(constants)?;
    let params = scheme.picard;
    let requested = match scheme.dt {
        TimeStep::Fixed(dt) => {
            let ratio = params.window / dt;
            if !(dt > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                return Err(Error::Invalid(format!(
                    "picard sub-step {dt} does not divide the window {}",
                    params.window
                )));
            }
            dt
        }
        TimeStep::Auto => params.window / params.substeps as f64,
    };
    let per_window = (params.window / requested).round().max(1.0) as usize;
    let n_total = step_count(horizon, requested);
    let dt = if n_total == 0 {
        requested
    } else {
        horizon / n_total as f64
    };
    let window = per_window as f64 * dt;
    let kappa = constants.picard_kappa(window);

    let nl = grid.interface_index();
    let off = grid.nonlocal_offset();
    let n_u = off;
    let n_v = grid.n_nonlocal();
    let l = generator.matrix();
    let a_uu = l.view((0, 0), (n_u, n_u)).clone_owned();
    let a_vv = l.view((off, off), (n_v, n_v)).clone_owned();
    // only the interface row of L[u, v] and the interface column of L[v, u] are nonzero
    let to_u = DVector::from_fn(n_v, |j, _| l[(nl, off + j)]);
    let to_v = DVector::from_fn(n_v, |j, _| l[(off + j, nl)]);

    let sys_u = shifted_identity(&a_uu, dt);
    let sys_v = shifted_identity(&a_vv, dt);
    let lu_u = sys_u.clone().lu();
    let lu_v = sys_v.clone().lu();
    let local_weights = &grid.weights()[..n_u];
    let local_norm = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        a.iter()
            .zip(b.iter())
            .zip(local_weights)
            .map(|((x, y), c)| c * (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };

    let mut rec = Recorder::new(generator, snapshot_stride, dt)?;
    rec.record(0, 0.0, w0)?;
    let (u_init, v_init) = grid.split(w0);
    let mut u_start = DVector::from_column_slice(u_init);
    let mut v_start = DVector::from_column_slice(v_init);
    let floor = 1e-13 * w0.max_abs().max(1e-300);

    let mut report = PicardReport {
        windows: 0,
        iterations: Vec::new(),
        final_updates: Vec::new(),
        ratios: Vec::new(),
        kappa,
        window,
    };

    let mut done = 0usize;
    while done < n_total {
        let m = per_window.min(n_total - done);
        let mut u_hist: Vec<DVector<f64>> = vec![u_start.clone(); m];
        let mut v_hist: Vec<DVector<f64>> = vec![v_start.clone(); m];
        let mut ratios = Vec::new();
        let mut prev_update = f64::INFINITY;
        let mut update = f64::INFINITY;
        let mut iters = 0;
        while iters < params.max_iters {
            iters += 1;
            // (a) nonlocal solve with the frozen trace history
            let mut v = v_start.clone();
            for s in 0..m {
                let rhs = &v + &to_v * (dt * u_hist[s][nl]);
                v = solve_checked(&sys_v, &lu_v, &rhs)?;
                v_hist[s].copy_from(&v);
            }
            // (b) local solve driven by that nonlocal history
            let mut u = u_start.clone();
            update = 0.0;
            for s in 0..m {
                let mut rhs = u.clone();
                rhs[nl] += dt * to_u.dot(&v_hist[s]);
                u = solve_checked(&sys_u, &lu_u, &rhs)?;
                update = update.max(local_norm(&u, &u_hist[s]));
                u_hist[s].copy_from(&u);
            }
            if prev_update.is_finite() && prev_update > floor && update > floor {
                ratios.push(update / prev_update);
            }
            if update <= params.tol {
                break;
            }
            prev_update = update;
        }
        if update > params.tol {
            return Err(Error::PicardDiverged {
                window: report.windows,
                last_update: update,
                kappa,
            });
        }
        for s in 0..m {
            let mut values = u_hist[s].as_slice().to_vec();
            values.extend_from_slice(v_hist[s].as_slice());
            let step = done + s + 1;
            rec.record(step, step as f64 * dt, &StateField::new(values))?;
        }
        u_start = u_hist[m - 1].clone();
        v_start = v_hist[m - 1].clone();
        report.windows += 1;
        report.iterations.push(iters);
        report.final_updates.push(update);
        report.ratios.push(ratios);
        done += m;
    }

    let mut last = u_start.as_slice().to_vec();
    last.extend_from_slice(v_start.as_slice());
    Ok((rec.finish(StateField::new(last)), report))
}
