//! Post-processing: decay fits, the cosine-series heat reference, the
//! epsilon sweep towards the local limit, and discrete sub/supersolution checks.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::discretization::{GeneratorMatrix, Grid, Mesh, StateField};
use crate::energy_spectrum::{estimate_beta1, SpectralReport};
use crate::error::{Error, Result};
use crate::evolution::{ImplicitStepper, Trajectory};
use crate::kernels::{CouplingConstants, Kernel, KernelFamily};

/// Exact Neumann heat flow on `(-1, 1)`, truncated to `n_modes` cosines,
/// with coefficients taken by the mesh quadrature.
///
/// The coefficients are taken of `w0 - mean`, so constants are reproduced
/// exactly, and modes with fewer than four samples per wavelength on the
/// coarsest part of the mesh are dropped since the quadrature aliases them.
#[derive(Debug, Clone)]
pub struct HeatReference {
    mesh: Mesh,
    mass: f64,
    /// `a_n` for `n = 1..=modes`.
    coefficients: Vec<f64>,
    /// `basis[n - 1][i] = cos(n pi (x_i + 1) / 2)`.
    basis: Vec<Vec<f64>>,
}

impl HeatReference {
    pub fn new(mesh: &Mesh, w0: &StateField, n_modes: usize) -> Result<Self> {
        mesh.check(w0)?;
        if n_modes == 0 {
            return Err(Error::Invalid(
                "heat reference needs at least one mode".into(),
            ));
        }
        let modes = n_modes.min(Self::resolved_modes(mesh));
        let centered = w0.shifted(-mesh.mean(w0));
        let basis: Vec<Vec<f64>> = (1..=modes)
            .map(|n| {
                let k = n as f64 * PI / 2.0;
                mesh.positions()
                    .iter()
                    .map(|&x| (k * (x + 1.0)).cos())
                    .collect()
            })
            .collect();
        let coefficients = basis
            .iter()
            .map(|phi| mesh.inner_unchecked(phi, centered.values()))
            .collect();
        Ok(Self {
            mesh: mesh.clone(),
            mass: mesh.mass(w0),
            coefficients,
            basis,
        })
    }

    /// Largest mode with a wavelength of at least four mesh spacings.
    pub fn resolved_modes(mesh: &Mesh) -> usize {
        let widest = mesh
            .positions()
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(0.0, f64::max);
        ((1.0 / widest).floor() as usize).max(1)
    }

    pub fn modes(&self) -> usize {
        self.coefficients.len()
    }

    /// Reference state at time `t`, shifted by a constant so its discrete
    /// mass equals that of `w0` (the cosines only integrate to zero up to
    /// quadrature error).
    pub fn at(&self, t: f64) -> StateField {
        let total = self.mesh.total_weight();
        let mut values = vec![self.mass / total; self.mesh.len()];
        for (n, (a, phi)) in self.coefficients.iter().zip(&self.basis).enumerate() {
            let k = (n + 1) as f64 * PI / 2.0;
            let decay = a * (-k * k * t).exp();
            if decay == 0.0 {
                continue;
            }
            for (v, p) in values.iter_mut().zip(phi) {
                *v += decay * p;
            }
        }
        let mut field = StateField::new(values);
        let shift = (self.mass - self.mesh.mass(&field)) / total;
        for v in field.values_mut() {
            *v += shift;
        }
        field
    }
}

/// One-shot evaluation of the heat reference.
pub fn heat_reference(mesh: &Mesh, w0: &StateField, t: f64, n_modes: usize) -> Result<StateField> {
    Ok(HeatReference::new(mesh, w0, n_modes)?.at(t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub fitted_rate: f64,
    pub fit_window: (f64, f64),
    pub r_squared: f64,
    pub beta1_used: f64,
    pub lambda2: f64,
    /// `dist(t) <= dist(0) e^{-beta1 t} (1 + 1e-6)` at every sample.
    pub bound_satisfied: bool,
    /// Largest `dist(t) / (dist(0) e^{-beta1 t})` over the samples.
    pub worst_bound_ratio: f64,
}

/// Least-squares fit of `ln dist_to_mean` against `t` over the samples with
/// `dist in [1e-10, dist(0) / 2]`.
pub fn decay_report(traj: &Trajectory, spectral: &SpectralReport) -> Result<DecayReport> {
    let series = traj.series();
    let usable = series.iter().filter(|r| r.dist_to_mean >= 1e-12).count();
    if usable < 20 {
        return Err(Error::InsufficientSamples(format!(
            "{usable} samples with dist_to_mean >= 1e-12, need 20"
        )));
    }
    let d0 = series[0].dist_to_mean;
    let beta1 = spectral.beta1;

    let mut worst: f64 = 0.0;
    for r in series {
        let bound = d0 * (-beta1 * r.t).exp();
        if bound > 0.0 {
            worst = worst.max(r.dist_to_mean / bound);
        } else if r.dist_to_mean > 0.0 {
            worst = f64::INFINITY;
        }
    }

    let points: Vec<(f64, f64)> = series
        .iter()
        .filter(|r| r.dist_to_mean >= 1e-10 && r.dist_to_mean <= 0.5 * d0)
        .map(|r| (r.t, r.dist_to_mean.ln()))
        .collect();
    if points.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "only {} samples inside the fit window",
            points.len()
        )));
    }
    let (slope, r_squared) = linear_fit(&points);
    Ok(DecayReport {
        fitted_rate: -slope,
        fit_window: (points[0].0, points[points.len() - 1].0),
        r_squared,
        beta1_used: beta1,
        lambda2: spectral.lambda2,
        bound_satisfied: worst <= 1.0 + 1e-6,
        worst_bound_ratio: worst,
    })
}

/// Slope and coefficient of determination of the least-squares line.
fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (slope, r2)
}

/// Shared settings of an epsilon sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub family: KernelFamily,
    pub radius: f64,
    pub n_local: usize,
    /// Minimum nonlocal count; raised per epsilon to resolve the kernel.
    pub n_nonlocal: usize,
    pub dt: f64,
    pub n_modes: usize,
    /// Compare against the reference every this many steps.
    pub compare_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub n_nonlocal: usize,
    pub dt: f64,
    /// `max_t || w^eps(t) - w_ref(t) ||_W` over the compared times.
    pub sup_error: f64,
    pub beta1_eps: f64,
    /// `|u(0) - v(0+)|` at the horizon, with `v(0+)` extrapolated linearly
    /// from the first two cell centres. Taken at the end rather than as a
    /// maximum, since the first steps carry a transient layer.
    pub interface_jump: f64,
}

/// Solve the rescaled problem for each epsilon from the same initial
/// profile and measure the distance to the Neumann heat flow.
pub fn epsilon_sweep(
    base: &SweepConfig,
    eps_list: &[f64],
    horizon: f64,
    w0: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<Vec<SweepRow>> {
    if eps_list.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Invalid(
            "eps_list must be strictly decreasing".into(),
        ));
    }
    if !(horizon > 0.0) || !(base.dt > 0.0) || base.compare_stride == 0 {
        return Err(Error::Invalid(
            "sweep needs a positive horizon, time step and compare stride".into(),
        ));
    }
    eps_list
        .par_iter()
        .map(|&eps| sweep_member(base, eps, horizon, w0))
        .collect()
}

fn sweep_member(
    base: &SweepConfig,
    eps: f64,
    horizon: f64,
    w0: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<SweepRow> {
    let unscaled = Kernel::new(base.family, base.radius, 1.0)?;
    let constants: CouplingConstants = unscaled.coupling_constants();
    let kernel = unscaled.rescaled(eps)?;
    let n_nonlocal = Grid::resolving_count(base.n_nonlocal, kernel.support());
    let grid = Grid::new(base.n_local, n_nonlocal)?;
    let generator = GeneratorMatrix::assemble(&grid, &kernel, &constants)?;
    let mesh = grid.mesh();

    let n = ((horizon / base.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = horizon / n as f64;
    let stepper = ImplicitStepper::new(&generator, dt)?;
    let mut w = mesh.sample(w0);
    let reference = HeatReference::new(mesh, &w, base.n_modes)?;

    let off = grid.nonlocal_offset();
    let nl = grid.interface_index();
    let jump = |w: &StateField| {
        let v = w.values();
        (v[nl] - (1.5 * v[off] - 0.5 * v[off + 1])).abs()
    };

    let mut sup_error = mesh.distance(&w, &reference.at(0.0));
    for step in 1..=n {
        w = stepper.step(&w)?;
        if w.first_non_finite().is_some() {
            return Err(Error::Blowup {
                step,
                time: step as f64 * dt,
            });
        }
        if step % base.compare_stride == 0 || step == n {
            let t = step as f64 * dt;
            sup_error = sup_error.max(mesh.distance(&w, &reference.at(t)));
        }
    }
    let interface_jump = jump(&w);
    let beta1_eps = estimate_beta1(&generator)?.beta1;
    Ok(SweepRow {
        epsilon: eps,
        n_nonlocal,
        dt,
        sup_error,
        beta1_eps,
        interface_jump,
    })
}

/// Barrier built from the cubic profile
/// `f(xi) = 1 + (xi + xi0)^3 / (3 xi0^2)` on `(-xi0, 0]`, `f = 1` below `-xi0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSpec {
    pub xi0: f64,
    pub a: f64,
    /// Time offset `T`, also the length of the time interval checked.
    pub t_offset: f64,
}

impl BarrierSpec {
    pub fn new(xi0: f64, a: f64, t_offset: f64) -> Result<Self> {
        let barrier = Self { xi0, a, t_offset };
        barrier.validate()?;
        Ok(barrier)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi0 > 1.0) {
            return Err(Error::Invalid(format!("xi0 = {} must exceed 1", self.xi0)));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::Invalid(format!("a = {} must lie in (0, 1)", self.a)));
        }
        let t_max = self.a * self.a / (2.0 * self.xi0 * self.xi0);
        if !(self.t_offset > 0.0 && self.t_offset < t_max) {
            return Err(Error::Invalid(format!(
                "T = {} must lie in (0, {t_max})",
                self.t_offset
            )));
        }
        if 0.5 < self.a * self.a * self.max_second_derivative() {
            return Err(Error::Invalid(format!(
                "a = {} violates 1/2 >= a^2 max|f''|",
                self.a
            )));
        }
        Ok(())
    }

    pub fn f(&self, xi: f64) -> f64 {
        if xi <= -self.xi0 {
            1.0
        } else {
            1.0 + (xi + self.xi0).powi(3) / (3.0 * self.xi0 * self.xi0)
        }
    }

    pub fn f_prime(&self, xi: f64) -> f64 {
        if xi <= -self.xi0 {
            0.0
        } else {
            (xi + self.xi0).powi(2) / (self.xi0 * self.xi0)
        }
    }

    pub fn f_second(&self, xi: f64) -> f64 {
        if xi <= -self.xi0 {
            0.0
        } else {
            2.0 * (xi + self.xi0) / (self.xi0 * self.xi0)
        }
    }

    pub fn max_second_derivative(&self) -> f64 {
        2.0 / self.xi0
    }

    /// `g(eta) = f(a eta) / a`.
    pub fn g(&self, eta: f64) -> f64 {
        self.f(self.a * eta) / self.a
    }

    /// `(T + t)^{1/2} g(x / (T + t)^{1/2})`.
    pub fn value(&self, x: f64, t: f64) -> f64 {
        let s = (self.t_offset + t).sqrt();
        s * self.g(x / s)
    }

    /// Barrier frames on `grid` at `t = k dt`, `k = 0..n_times`. The nonlocal
    /// side is filled with the interface value, so the Robin flux vanishes.
    pub fn frames(&self, grid: &Grid, dt: f64, n_times: usize, sign: f64) -> Vec<StateField> {
        (0..n_times)
            .map(|k| {
                let t = k as f64 * dt;
                let trace = self.value(0.0, t);
                grid.sample_split(|x| sign * self.value(x, t), |_| sign * trace)
            })
            .collect()
    }
}

/// Worst margins of the four discrete supersolution inequalities; a margin
/// below `-tol` is a violation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupersolutionReport {
    /// `du/dt - Delta_h u` at interior local nodes.
    pub interior: f64,
    /// `-(ghost-consistent derivative at x = -1)`.
    pub left: f64,
    /// Ghost-consistent derivative at `x = 0` minus the Robin flux.
    pub interface: f64,
    /// `dv/dt` minus the nonlocal right-hand side.
    pub nonlocal: f64,
    pub tol: f64,
}

impl SupersolutionReport {
    pub fn margins(&self) -> [f64; 4] {
        [self.interior, self.left, self.interface, self.nonlocal]
    }

    pub fn passes(&self) -> [bool; 4] {
        self.margins().map(|m| m >= -self.tol)
    }

    /// Inequalities (1)-(3), the local subproblem only.
    pub fn local_passes(&self) -> bool {
        self.passes()[..3].iter().all(|&p| p)
    }

    pub fn all_pass(&self) -> bool {
        self.passes().iter().all(|&p| p)
    }
}

/// Check the discrete supersolution inequalities on a space-time field given
/// as frames at uniform spacing `dt`. Time derivatives are centred, so the
/// first and last frames only serve as neighbours. The boundary derivatives
/// carry the half-cell correction of the ghost-node scheme, which makes a
/// semi-discrete solution satisfy (2) and (3) with equality.
pub fn supersolution_check(
    frames: &[StateField],
    dt: f64,
    grid: &Grid,
    kernel: &Kernel,
    constants: &CouplingConstants,
    tol: f64,
) -> Result<SupersolutionReport> {
    if frames.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "supersolution check needs 3 time samples, got {}",
            frames.len()
        )));
    }
    for f in frames {
        grid.mesh().check(f)?;
    }
    if !(dt > 0.0) {
        return Err(Error::NonPositive {
            name: "dt",
            value: dt,
        });
    }
    let h = grid.h_local();
    let h_nl = grid.h_nonlocal();
    let nl = grid.interface_index();
    let off = grid.nonlocal_offset();
    let centers = grid.nonlocal_centers();
    let q: Vec<f64> = centers
        .iter()
        .map(|&y| kernel.coupling_profile_unchecked(y))
        .collect();
    let reach = kernel.support();

    let mut report = SupersolutionReport {
        interior: f64::INFINITY,
        left: f64::INFINITY,
        interface: f64::INFINITY,
        nonlocal: f64::INFINITY,
        tol,
    };
    for k in 1..frames.len() - 1 {
        let prev = frames[k - 1].values();
        let cur = frames[k].values();
        let next = frames[k + 1].values();
        let dtv = |i: usize| (next[i] - prev[i]) / (2.0 * dt);

        for i in 1..nl {
            let lap = (cur[i - 1] - 2.0 * cur[i] + cur[i + 1]) / (h * h);
            report.interior = report.interior.min(dtv(i) - lap);
        }
        let d_left = (cur[1] - cur[0]) / h - 0.5 * h * dtv(0);
        report.left = report.left.min(-d_left);

        let trace = cur[nl];
        let flux: f64 = constants.c2
            * h_nl
            * q.iter()
                .enumerate()
                .map(|(j, qj)| qj * (cur[off + j] - trace))
                .sum::<f64>();
        let d_int = (cur[nl] - cur[nl - 1]) / h + 0.5 * h * dtv(nl);
        report.interface = report.interface.min(d_int - flux);

        for j in 0..centers.len() {
            let vj = cur[off + j];
            let mut diffusion = 0.0;
            for m in 0..centers.len() {
                let d = centers[j] - centers[m];
                if m != j && d.abs() < reach {
                    diffusion += kernel.eval(d) * (cur[off + m] - vj);
                }
            }
            let rhs = constants.c1 * h_nl * diffusion - constants.c2 * q[j] * (vj - trace);
            report.nonlocal = report.nonlocal.min(dtv(off + j) - rhs);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_decays_exactly() {
        let grid = Grid::new(200, 200).unwrap();
        let mode = |x: f64| (PI * (x + 1.0) / 2.0).cos();
        let w0 = grid.mesh().sample(mode);
        let r = heat_reference(grid.mesh(), &w0, 1.0, 16).unwrap();
        let expected = grid.mesh().sample(|x| (-PI * PI / 4.0).exp() * mode(x));
        assert!(grid.mesh().distance(&r, &expected) < 1e-5);
    }

    #[test]
    fn reference_conserves_mass_and_relaxes() {
        let grid = Grid::new(100, 150).unwrap();
        let w0 = grid
            .mesh()
            .sample(|x| (-(x + 0.3).powi(2) / 0.02).exp() + 0.3 * x);
        let m0 = grid.mass(&w0);
        for t in [0.0, 0.05, 1.0] {
            let r = heat_reference(grid.mesh(), &w0, t, 64).unwrap();
            assert!((grid.mass(&r) - m0).abs() < 1e-8);
        }
        let late = heat_reference(grid.mesh(), &w0, 1e3, 64).unwrap();
        assert!(late.values().iter().all(|&v| (v - m0 / 2.0).abs() < 1e-12));
    }

    #[test]
    fn linear_fit_recovers_slope() {
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|i| (i as f64 * 0.1, 2.0 - 3.0 * i as f64 * 0.1))
            .collect();
        let (slope, r2) = linear_fit(&pts);
        assert!((slope + 3.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn barrier_profile_properties() {
        let b = BarrierSpec::new(2.0, 0.5, 0.03).unwrap();
        assert_eq!(b.f_prime(0.0), 1.0);
        assert!((b.f_second(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(b.max_second_derivative(), 1.0);
        let mut prev = b.f(-3.0);
        for i in 0..=300 {
            let xi = -3.0 + i as f64 * 0.01;
            assert!(b.f(xi) >= prev);
            prev = b.f(xi);
        }
        assert!(BarrierSpec::new(2.0, 0.5, 0.04).is_err());
        assert!(BarrierSpec::new(0.9, 0.5, 0.01).is_err());
        assert!(BarrierSpec::new(2.0, 0.9, 0.01).is_err());
    }

    #[test]
    fn check_needs_three_frames() {
        let grid = Grid::new(10, 10).unwrap();
        let k = Kernel::new(KernelFamily::Triangle, 1.0, 1.0).unwrap();
        let frames = vec![StateField::constant(grid.len(), 1.0); 2];
        assert!(
            supersolution_check(&frames, 0.1, &grid, &k, &k.coupling_constants(), 1e-6).is_err()
        );
    }

    #[test]
    fn sweep_rejects_increasing_list() {
        let cfg = SweepConfig {
            family: KernelFamily::Triangle,
            radius: 1.0,
            n_local: 20,
            n_nonlocal: 20,
            dt: 1e-2,
            n_modes: 16,
            compare_stride: 1,
        };
        assert!(epsilon_sweep(&cfg, &[0.2, 0.4], 0.1, &|_| 1.0).is_err());
    }
}
