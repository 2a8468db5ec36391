use std::f64::consts::PI;

use coupled_diffusion::analysis::{
    decay_report, epsilon_sweep, heat_reference, supersolution_check, BarrierSpec, SweepConfig,
};
use coupled_diffusion::energy_spectrum::{estimate_beta1, SpectralDecomposition};
use coupled_diffusion::evolution::{evolve, StepScheme};
use coupled_diffusion::{Error, GeneratorMatrix, Grid, Kernel, KernelFamily, StateField};

fn triangle(eps: f64) -> Kernel {
    Kernel::new(KernelFamily::Triangle, 1.0, eps).unwrap()
}

fn sweep_config(n: usize) -> SweepConfig {
    SweepConfig {
        family: KernelFamily::Triangle,
        radius: 1.0,
        n_local: n,
        n_nonlocal: n,
        dt: 1e-3,
        n_modes: 256,
        compare_stride: 10,
    }
}

#[test]
fn reference_projection_improves_with_modes() {
    let g = Grid::new(200, 200).unwrap();
    let w0 = g.sample_split(|x| if x < -0.5 { 1.0 } else { 0.0 }, |y| y);
    let errors: Vec<f64> = [16, 64, 256]
        .iter()
        .map(|&n| {
            g.mesh()
                .distance(&heat_reference(g.mesh(), &w0, 0.0, n).unwrap(), &w0)
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    assert!(heat_reference(g.mesh(), &w0, 0.1, 0).is_err());
}

#[test]
fn pure_heat_mode_decays_at_the_closed_form_rate() {
    let gen = GeneratorMatrix::pure_heat(400).unwrap();
    let spectral = estimate_beta1(&gen).unwrap();
    let w0 = gen.mesh().sample(|x| (PI * (x + 1.0) / 2.0).cos());
    let traj = evolve(&gen, &w0, &StepScheme::implicit(1e-3), 8.0, 0).unwrap();
    let report = decay_report(&traj, &spectral).unwrap();
    let rate = PI * PI / 4.0;
    assert!(
        ((report.fitted_rate - rate) / rate).abs() < 0.02,
        "{report:?}"
    );
    assert!(report.bound_satisfied);
    assert!((0.0..=1.0).contains(&report.r_squared));
    assert!(report.fit_window.0 < report.fit_window.1);
}

#[test]
fn coupled_decay_follows_the_slowest_mode() {
    let k = triangle(1.0);
    let g = Grid::new(100, 100).unwrap();
    let gen = GeneratorMatrix::assemble(&g, &k, &k.coupling_constants()).unwrap();
    let spectral = estimate_beta1(&gen).unwrap();
    let w0 = g.mesh().sample(|x| (-(x + 0.5f64).powi(2) / 0.02).exp());
    let traj = evolve(&gen, &w0, &StepScheme::implicit(1e-3), 10.0, 0).unwrap();
    let report = decay_report(&traj, &spectral).unwrap();
    let target = 2.0 * spectral.beta1;
    assert!(
        (0.95 * target..=1.05 * target).contains(&report.fitted_rate),
        "{report:?}"
    );
    assert!(report.bound_satisfied);
}

#[test]
fn decay_report_needs_samples() {
    let gen = GeneratorMatrix::pure_heat(20).unwrap();
    let spectral = estimate_beta1(&gen).unwrap();
    let w0 = gen.mesh().sample(|x| x);
    let traj = evolve(&gen, &w0, &StepScheme::implicit(1e-2), 0.05, 0).unwrap();
    assert!(matches!(
        decay_report(&traj, &spectral),
        Err(Error::InsufficientSamples(_))
    ));
}

#[test]
fn sweep_of_a_constant_is_exact() {
    let rows = epsilon_sweep(&sweep_config(40), &[0.4, 0.2, 0.1], 0.2, &|_| 2.5).unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!(r.sup_error <= 1e-10, "{r:?}");
        assert!(r.n_nonlocal >= Grid::resolving_count(40, r.epsilon));
    }
}

#[test]
fn sweep_error_and_jump_shrink_with_epsilon() {
    let bump = |x: f64| (-(x + 0.2f64).powi(2) / 0.05).exp();
    let rows = epsilon_sweep(&sweep_config(100), &[0.4, 0.2, 0.1, 0.05], 0.5, &bump).unwrap();
    for pair in rows.windows(2) {
        assert!(pair[1].sup_error < pair[0].sup_error, "{rows:?}");
        assert!(pair[1].interface_jump <= pair[0].interface_jump, "{rows:?}");
        assert!(pair[1].beta1_eps > pair[0].beta1_eps, "{rows:?}");
    }
}

/// Root of `k tan k = 2 kappa` in `(0, pi/2)`: the first antisymmetric mode of
/// two unit heat intervals joined through an interface of conductance `kappa`.
fn conductance_gap(kappa: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, PI / 2.0 - 1e-15);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid.tan() < 2.0 * kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = 0.5 * (lo + hi);
    0.5 * k * k
}

/// For small kernels the exchange layer acts as an interface of conductance
/// `int_0^1 q = (1/eps) int_0^R tail`, which is `1/(6 eps)` for the triangle.
/// The discrete gap follows this model, and therefore still sits well below
/// the limit value at moderate epsilon.
#[test]
fn small_scale_gap_matches_interface_conductance_model() {
    for eps in [0.1, 0.05, 0.025] {
        let k = triangle(eps);
        let g = Grid::new(200, Grid::resolving_count(200, k.support())).unwrap();
        let gen = GeneratorMatrix::assemble(&g, &k, &k.coupling_constants()).unwrap();
        let beta1 = estimate_beta1(&gen).unwrap().beta1;
        let model = conductance_gap(1.0 / (6.0 * eps));
        assert!(
            ((beta1 - model) / model).abs() < 0.03,
            "eps={eps}: {beta1} vs {model}"
        );
    }
    assert!(conductance_gap(1e9) > 0.999 * PI * PI / 8.0);
}

#[test]
fn exact_solutions_satisfy_all_four_inequalities() {
    let k = triangle(1.0);
    let c = k.coupling_constants();
    let g = Grid::new(20, 20).unwrap();
    let gen = GeneratorMatrix::assemble(&g, &k, &c).unwrap();
    let exact = SpectralDecomposition::new(&gen);
    let w0 = g.mesh().sample(|x| (-(x + 0.5f64).powi(2) / 0.02).exp());
    let dt = 1e-4;
    let frames: Vec<StateField> = (0..50)
        .map(|i| exact.propagate(&w0, 0.1 + i as f64 * dt).unwrap())
        .collect();
    let report = supersolution_check(&frames, dt, &g, &k, &c, 1e-6).unwrap();
    assert!(report.all_pass(), "{report:?}");
    let negated: Vec<StateField> = frames
        .iter()
        .map(|f| StateField::new(f.values().iter().map(|v| -v).collect()))
        .collect();
    assert!(supersolution_check(&negated, dt, &g, &k, &c, 1e-6)
        .unwrap()
        .all_pass());
}

#[test]
fn barrier_is_a_local_supersolution() {
    let barrier = BarrierSpec::new(2.0, 0.5, 0.03).unwrap();
    let k = triangle(1.0);
    let c = k.coupling_constants();
    let g = Grid::new(1000, 100).unwrap();
    let dt = 1e-5;
    let frames = barrier.frames(&g, dt, 3001, 1.0);
    let report = supersolution_check(&frames, dt, &g, &k, &c, 1e-6).unwrap();
    assert!(report.local_passes(), "{report:?}");

    let negated = barrier.frames(&g, dt, 3001, -1.0);
    let report = supersolution_check(&negated, dt, &g, &k, &c, 1e-6).unwrap();
    assert!(!report.passes()[0], "{report:?}");
}
