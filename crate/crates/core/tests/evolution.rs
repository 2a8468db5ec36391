use coupled_diffusion::energy_spectrum::SpectralDecomposition;
use coupled_diffusion::evolution::{
    cfl_limit, evolve, picard_window_solve, step_explicit, ImplicitStepper, PicardParams,
    StepScheme, TimeStep,
};
use coupled_diffusion::{Error, GeneratorMatrix, Grid, Kernel, KernelFamily, StateField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(n: usize, eps: f64) -> (Grid, Kernel, GeneratorMatrix) {
    let k = Kernel::new(KernelFamily::Triangle, 1.0, eps).unwrap();
    let g = Grid::new(n, Grid::resolving_count(n, k.support())).unwrap();
    let gen = GeneratorMatrix::assemble(&g, &k, &k.coupling_constants()).unwrap();
    (g, k, gen)
}

fn bump(g: &Grid) -> StateField {
    g.mesh().sample(|x| (-(x + 0.5f64).powi(2) / 0.02).exp())
}

fn picard_params(k: &Kernel) -> PicardParams {
    PicardParams {
        window: 0.8 * k.coupling_constants().picard_window_bound(),
        ..PicardParams::default()
    }
}

#[test]
fn every_scheme_conserves_mass_to_t10() {
    let (g, k, gen) = setup(20, 1.0);
    let w0 = g.sample_split(|x| 1.0 + x, |y| y * y);
    let schemes = [
        StepScheme::explicit(TimeStep::Auto),
        StepScheme::implicit(1e-2),
        StepScheme::picard(picard_params(&k)),
    ];
    for scheme in schemes {
        let traj = evolve(&gen, &w0, &scheme, 10.0, 0).unwrap();
        let m0 = traj.series()[0].mass;
        for r in traj.series() {
            assert!(
                (r.mass - m0).abs() <= 1e-11 * m0.abs() + 1e-13,
                "{:?}",
                scheme.kind
            );
        }
        assert!((traj.times().last().unwrap() - 10.0).abs() < 1e-9);
    }
}

#[test]
fn implicit_energy_never_increases() {
    let (g, _, gen) = setup(60, 0.5);
    let traj = evolve(&gen, &bump(&g), &StepScheme::implicit(1e-3), 2.0, 0).unwrap();
    assert!(traj.max_energy_increase() <= 1e-12);
}

#[test]
fn explicit_auto_step_is_the_cfl_limit() {
    let (g, _, gen) = setup(20, 1.0);
    let limit = cfl_limit(&gen).unwrap();
    let horizon = 100.0 * limit;
    let traj = evolve(
        &gen,
        &bump(&g),
        &StepScheme::explicit(TimeStep::Auto),
        horizon,
        0,
    )
    .unwrap();
    assert!((traj.dt() - limit).abs() <= 1e-12 * limit);
    assert_eq!(traj.steps(), 100);
    let too_big = StepScheme::explicit(TimeStep::Fixed(2.0 * limit));
    assert!(matches!(
        evolve(&gen, &bump(&g), &too_big, horizon, 0),
        Err(Error::AboveCfl { .. })
    ));
}

#[test]
fn ordered_data_stay_ordered() {
    let (g, _, gen) = setup(20, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let limit = cfl_limit(&gen).unwrap();
    let stepper = ImplicitStepper::new(&gen, 1e-2).unwrap();
    for _ in 0..10 {
        let lo = StateField::new((0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let hi = StateField::new(
            lo.values()
                .iter()
                .map(|v| v + rng.random_range(0.0..0.5))
                .collect(),
        );
        let (mut a, mut b) = (lo.clone(), hi.clone());
        let (mut c, mut d) = (lo, hi);
        for _ in 0..200 {
            a = step_explicit(&gen, &a, limit).unwrap();
            b = step_explicit(&gen, &b, limit).unwrap();
            c = stepper.step(&c).unwrap();
            d = stepper.step(&d).unwrap();
            let worst = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| x - y)
                .chain(c.values().iter().zip(d.values()).map(|(x, y)| x - y))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(worst <= 1e-12, "{worst}");
        }
    }
}

/// Explicit and implicit Euler bracket the exact flow with opposite O(dt)
/// errors, so their gap halves with the step.
#[test]
fn explicit_and_implicit_gap_is_first_order() {
    let (g, _, gen) = setup(20, 1.0);
    let w0 = bump(&g);
    let horizon = 0.1;
    let dt = cfl_limit(&gen).unwrap();
    let gap = |dt: f64| {
        let e = evolve(
            &gen,
            &w0,
            &StepScheme::explicit(TimeStep::Fixed(dt)),
            horizon,
            0,
        )
        .unwrap();
        let i = evolve(&gen, &w0, &StepScheme::implicit(dt), horizon, 0).unwrap();
        g.mesh().distance(e.final_state(), i.final_state())
    };
    let ratio = gap(dt) / gap(0.5 * dt);
    assert!((1.5..=2.5).contains(&ratio), "{ratio}");
}

#[test]
fn implicit_matches_matrix_exponential_on_small_grid() {
    let (g, _, gen) = setup(20, 1.0);
    let exact = SpectralDecomposition::new(&gen);
    for w0 in [g.sample_split(|_| 1.0, |_| 0.0), bump(&g)] {
        let want = exact.propagate(&w0, 0.5).unwrap();
        let traj = evolve(&gen, &w0, &StepScheme::implicit(1e-4), 0.5, 0).unwrap();
        assert!(g.mesh().distance(&want, traj.final_state()) < 1e-5);
    }
}

#[test]
fn semigroup_oracle_is_consistent() {
    let (g, _, gen) = setup(12, 1.0);
    let exact = SpectralDecomposition::new(&gen);
    let w0 = bump(&g);
    let half = exact.propagate(&w0, 0.25).unwrap();
    let twice = exact.propagate(&half, 0.25).unwrap();
    let once = exact.propagate(&w0, 0.5).unwrap();
    assert!(g.mesh().distance(&twice, &once) < 1e-12);
    assert!(g.mesh().distance(&exact.propagate(&w0, 0.0).unwrap(), &w0) < 1e-12);
    assert!((g.mass(&once) - g.mass(&w0)).abs() < 1e-12);
}

#[test]
fn picard_on_constants_takes_one_sweep() {
    let (g, k, _) = setup(30, 1.0);
    let w0 = StateField::constant(g.len(), 0.7);
    let scheme = StepScheme::picard(picard_params(&k));
    let (traj, report) =
        picard_window_solve(&g, &k, &k.coupling_constants(), &w0, &scheme, 0.2).unwrap();
    assert!(report.iterations.iter().all(|&n| n == 1));
    assert!(traj
        .final_state()
        .values()
        .iter()
        .all(|&v| (v - 0.7).abs() < 1e-12));
}

#[test]
fn picard_reaches_the_monolithic_fixed_point() {
    let (g, k, gen) = setup(100, 1.0);
    let c = k.coupling_constants();
    let w0 = g.sample_split(|_| 1.0, |_| 0.0);
    let scheme = StepScheme::picard(picard_params(&k));
    let (traj, report) = picard_window_solve(&g, &k, &c, &w0, &scheme, 0.5).unwrap();
    assert!(report.converged(1e-10));
    let mono = evolve(&gen, &w0, &StepScheme::implicit(traj.dt()), 0.5, 0).unwrap();
    assert!(g.mesh().distance(traj.final_state(), mono.final_state()) < 1e-6);
    assert!(report.kappa < 1.0);
    assert!(
        report.max_ratio() <= report.kappa,
        "{} > {}",
        report.max_ratio(),
        report.kappa
    );
}

#[test]
fn picard_window_above_bound_is_rejected() {
    let (g, k, _) = setup(20, 1.0);
    let c = k.coupling_constants();
    let params = PicardParams {
        window: 1.1 * c.picard_window_bound(),
        ..PicardParams::default()
    };
    let w0 = bump(&g);
    assert!(matches!(
        picard_window_solve(&g, &k, &c, &w0, &StepScheme::picard(params), 0.1),
        Err(Error::PicardWindow { .. })
    ));
}
