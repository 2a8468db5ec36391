//! Discrete energy, its spectral gap and the energy-control estimates.
//!
//! With quadrature weights `W`, the energy is `E(w) = 1/2 <w, -L w>_W`, so the
//! smallest nonzero eigenvalue `lambda2` of `-L` in the `W` inner product is
//! twice the infimum `beta1` of `E / ||w||^2` over mass-free states.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::discretization::{GeneratorMatrix, Grid, Mesh, Model, StateField};
use crate::error::{Error, Result};
use crate::kernels::{CouplingConstants, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    /// `1/2 int |u_x|^2` on the local side.
    pub local_term: f64,
    /// `c1/4 int int J (v(y) - v(x))^2` over the nonlocal square.
    pub nonlocal_term: f64,
    /// `c2/2 int q(x) (v(x) - u(0))^2`.
    pub coupling_term: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(local_term: f64, nonlocal_term: f64, coupling_term: f64) -> Self {
        Self {
            local_term,
            nonlocal_term,
            coupling_term,
            total: local_term + nonlocal_term + coupling_term,
        }
    }
}

/// Precomputed kernel weights for repeated energy evaluations on one grid.
#[derive(Debug, Clone)]
pub struct EnergyForm {
    grid: Grid,
    constants: CouplingConstants,
    /// `(j, k, J(y_j - y_k))` for `j < k` inside the support.
    pairs: Vec<(usize, usize, f64)>,
    profile: Vec<f64>,
}

impl EnergyForm {
    pub fn new(grid: &Grid, kernel: &Kernel, constants: &CouplingConstants) -> Result<Self> {
        grid.resolves(kernel)?;
        constants.validate()?;
        let centers = grid.nonlocal_centers();
        let reach = kernel.support();
        let mut pairs = Vec::new();
        for j in 0..centers.len() {
            for k in (j + 1)..centers.len() {
                let d = centers[k] - centers[j];
                if d >= reach {
                    break;
                }
                pairs.push((j, k, kernel.eval(d)));
            }
        }
        let profile = centers
            .iter()
            .map(|&y| kernel.coupling_profile_unchecked(y))
            .collect();
        Ok(Self {
            grid: grid.clone(),
            constants: *constants,
            pairs,
            profile,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn evaluate(&self, w: &StateField) -> Result<EnergyBreakdown> {
        self.grid.mesh().check(w)?;
        let (u, v) = self.grid.split(w);
        let h = self.grid.h_local();
        let h_nl = self.grid.h_nonlocal();

        let local = 0.5 * u.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum::<f64>() / h;
        // each unordered pair appears twice in the double sum
        let nonlocal = 0.5
            * self.constants.c1
            * h_nl
            * h_nl
            * self
                .pairs
                .iter()
                .map(|&(j, k, jk)| jk * (v[k] - v[j]).powi(2))
                .sum::<f64>();
        let trace = u[u.len() - 1];
        let coupling = 0.5
            * self.constants.c2
            * h_nl
            * self
                .profile
                .iter()
                .zip(v)
                .map(|(q, vj)| q * (vj - trace).powi(2))
                .sum::<f64>();
        Ok(EnergyBreakdown::new(local, nonlocal, coupling))
    }
}

/// Energy of a state on the coupled grid.
pub fn energy(
    grid: &Grid,
    kernel: &Kernel,
    constants: &CouplingConstants,
    w: &StateField,
) -> Result<EnergyBreakdown> {
    EnergyForm::new(grid, kernel, constants)?.evaluate(w)
}

/// Energy evaluator matched to whatever model a generator descends.
#[derive(Debug, Clone)]
pub enum GeneratorEnergy {
    Coupled(EnergyForm),
    PureHeat { h: f64 },
}

impl GeneratorEnergy {
    pub fn for_generator(generator: &GeneratorMatrix) -> Result<Self> {
        Ok(match generator.model() {
            Model::Coupled {
                grid,
                kernel,
                constants,
            } => GeneratorEnergy::Coupled(EnergyForm::new(grid, kernel, constants)?),
            Model::PureHeat { n_cells } => GeneratorEnergy::PureHeat {
                h: 2.0 / *n_cells as f64,
            },
        })
    }

    pub fn evaluate(&self, w: &StateField) -> Result<EnergyBreakdown> {
        match self {
            GeneratorEnergy::Coupled(form) => form.evaluate(w),
            GeneratorEnergy::PureHeat { h } => {
                let local = 0.5
                    * w.values()
                        .windows(2)
                        .map(|p| (p[1] - p[0]).powi(2))
                        .sum::<f64>()
                    / h;
                Ok(EnergyBreakdown::new(local, 0.0, 0.0))
            }
        }
    }
}

/// `int int_{(-1,1)^2} J^eps(x - y) (w(y) - w(x))^2` over every pair of
/// degrees of freedom, local and nonlocal alike.
pub fn nonlocal_energy_full(grid: &Grid, kernel: &Kernel, w: &StateField) -> Result<f64> {
    grid.resolves(kernel)?;
    grid.mesh().check(w)?;
    let x = grid.positions();
    let c = grid.weights();
    let vals = w.values();
    let reach = kernel.support();
    let mut sum = 0.0;
    // positions are sorted, so the inner loop can stop at the support edge
    for a in 0..x.len() {
        for b in (a + 1)..x.len() {
            let d = x[b] - x[a];
            if d >= reach {
                break;
            }
            sum += c[a] * c[b] * kernel.eval(d) * (vals[b] - vals[a]).powi(2);
        }
    }
    Ok(2.0 * sum)
}

/// Spectral gap of a generator together with its eigenpair.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub beta1: f64,
    pub lambda2: f64,
    /// `W`-normalised, mass-free eigenvector for `lambda2`.
    pub eigvec: StateField,
    /// `|| -L x - lambda2 x ||_W` for the normalised eigenvector.
    pub residual: f64,
}

/// `W^{1/2} (-L) W^{-1/2}`, symmetrised to remove roundoff asymmetry.
fn symmetrized(generator: &GeneratorMatrix) -> (DMatrix<f64>, Vec<f64>) {
    let sqrt_w: Vec<f64> = generator
        .mesh()
        .weights()
        .iter()
        .map(|c| c.sqrt())
        .collect();
    let n = generator.len();
    let l = generator.matrix();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for b in 0..n {
        for a in 0..n {
            s[(a, b)] = -l[(a, b)] * sqrt_w[a] / sqrt_w[b];
        }
    }
    let st = s.transpose();
    s += st;
    s *= 0.5;
    (s, sqrt_w)
}

/// Smallest nonzero eigenvalue of `-L` and its eigenvector.
pub fn estimate_beta1(generator: &GeneratorMatrix) -> Result<SpectralReport> {
    let (mut s, sqrt_w) = symmetrized(generator);
    let n = generator.len();
    let mesh = generator.mesh();

    // push the constant mode W^{1/2} 1 to the top of the spectrum
    let total: f64 = mesh.total_weight();
    let e = DVector::from_iterator(n, sqrt_w.iter().map(|r| r / total.sqrt()));
    let shift = 4.0 * generator.max_abs_diagonal() + 1.0;
    s.ger(shift, &e, &e, 1.0);

    let eig = SymmetricEigen::new(s);
    let (idx, &lambda2) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Invalid("empty generator".into()))?;
    let z = eig.eigenvectors.column(idx);
    let mut x: Vec<f64> = z.iter().zip(&sqrt_w).map(|(zi, r)| zi / r).collect();

    // remove any constant leak, renormalise in W
    let mut field = StateField::new(std::mem::take(&mut x));
    let mean = mesh.mean(&field);
    for value in field.values_mut() {
        *value -= mean;
    }
    let norm = mesh.norm(&field);
    for value in field.values_mut() {
        *value /= norm;
    }
    let lambda2 = refine_rayleigh(generator, &field).unwrap_or(lambda2);

    let lx = generator.apply(&field)?;
    let r = StateField::new(
        lx.values()
            .iter()
            .zip(field.values())
            .map(|(a, b)| -a - lambda2 * b)
            .collect(),
    );
    let residual = mesh.norm(&r);
    let required = 1e-8 * lambda2.abs().max(f64::MIN_POSITIVE);
    if residual > required || lambda2 <= 0.0 {
        return Err(Error::EigenResidual { residual, required });
    }
    Ok(SpectralReport {
        beta1: 0.5 * lambda2,
        lambda2,
        eigvec: field,
        residual,
    })
}

/// `<x, -L x>_W / <x, x>_W`.
fn refine_rayleigh(generator: &GeneratorMatrix, x: &StateField) -> Option<f64> {
    let mesh = generator.mesh();
    let lx = generator.apply(x).ok()?;
    let num = -mesh.inner_unchecked(x.values(), lx.values());
    let den = mesh.inner_unchecked(x.values(), x.values());
    (den > 0.0).then(|| num / den)
}

/// All eigenvalues of `-L` in the `W` inner product, ascending.
pub fn generator_spectrum(generator: &GeneratorMatrix) -> Vec<f64> {
    let (s, _) = symmetrized(generator);
    let mut values: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Full `W`-orthonormal eigendecomposition of a generator, used to evaluate
/// the exact semigroup `e^{tL}` on small instances.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    mesh: Mesh,
    sqrt_w: Vec<f64>,
    /// Eigenvalues of `-L`.
    values: DVector<f64>,
    /// Orthonormal eigenvectors of the symmetrised matrix.
    vectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn new(generator: &GeneratorMatrix) -> Self {
        let (s, sqrt_w) = symmetrized(generator);
        let eig = SymmetricEigen::new(s);
        Self {
            mesh: generator.mesh().clone(),
            sqrt_w,
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.values.as_slice()
    }

    /// `e^{tL} w0`.
    pub fn propagate(&self, w0: &StateField, t: f64) -> Result<StateField> {
        self.mesh.check(w0)?;
        let y = DVector::from_iterator(
            w0.len(),
            w0.values().iter().zip(&self.sqrt_w).map(|(a, r)| a * r),
        );
        let mut coeffs = self.vectors.tr_mul(&y);
        for (c, lambda) in coeffs.iter_mut().zip(self.values.iter()) {
            // the constant mode carries a roundoff-sized eigenvalue
            let lambda = if lambda.abs() < 1e-9 { 0.0 } else { *lambda };
            *c *= (-lambda * t).exp();
        }
        let z = &self.vectors * coeffs;
        Ok(StateField::new(
            z.iter().zip(&self.sqrt_w).map(|(a, r)| a / r).collect(),
        ))
    }
}

/// Minimum of `E / nonlocal_energy_full` over `n_samples` random mass-free
/// states with independent standard normal entries.
pub fn estimate_energy_control_k(
    grid: &Grid,
    kernel: &Kernel,
    constants: &CouplingConstants,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples < 10 {
        return Err(Error::Invalid(format!(
            "energy-control estimate needs at least 10 samples, got {n_samples}"
        )));
    }
    let form = EnergyForm::new(grid, kernel, constants)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..n_samples {
        let w = random_mass_free(grid.mesh(), &mut rng);
        let full = nonlocal_energy_full(grid, kernel, &w)?;
        if full < 1e-14 {
            continue;
        }
        best = best.min(form.evaluate(&w)?.total / full);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::DegenerateSamples)
    }
}

/// Exact discrete infimum of `E / nonlocal_energy_full` over mass-free
/// states, from the generalised symmetric eigenproblem of the two forms.
/// Dense, so meant for grids of a few hundred unknowns.
pub fn energy_control_infimum(
    grid: &Grid,
    kernel: &Kernel,
    constants: &CouplingConstants,
) -> Result<f64> {
    grid.resolves(kernel)?;
    let generator = GeneratorMatrix::assemble(grid, kernel, constants)?;
    let n = grid.len();
    let x = grid.positions();
    let c = grid.weights();

    let mut a = generator.weighted() * -0.5;
    let at = a.transpose();
    a += at;
    a *= 0.5;
    let mut b = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = x[j] - x[i];
            if d >= kernel.support() {
                break;
            }
            let s = 2.0 * c[i] * c[j] * kernel.eval(d);
            b[(i, i)] += s;
            b[(j, j)] += s;
            b[(i, j)] -= s;
            b[(j, i)] -= s;
        }
    }

    // Both forms vanish on constants. Adding `pen * (W1)(W1)^T` to A and
    // `(W1)(W1)^T` to B gives the constant direction the ratio `pen`, with no
    // cross terms against mass-free states. Any `pen` above the infimum then
    // leaves the mass-free minimum as the smallest eigenvalue.
    let probe = grid.mesh().sample(|x| x);
    let probe = probe.shifted(-grid.mesh().mean(&probe));
    let pv = DVector::from_column_slice(probe.values());
    let pen = 2.0 * pv.dot(&(&a * &pv)) / pv.dot(&(&b * &pv));
    let wv = DVector::from_column_slice(c);
    a.ger(pen, &wv, &wv, 1.0);
    b.ger(1.0, &wv, &wv, 1.0);

    let chol = b.cholesky().ok_or(Error::DegenerateSamples)?;
    let lower = chol.l();
    let y = lower
        .solve_lower_triangular(&a)
        .ok_or(Error::DegenerateSamples)?;
    let m = lower
        .solve_lower_triangular(&y.transpose())
        .ok_or(Error::DegenerateSamples)?;
    let m = (&m + m.transpose()) * 0.5;
    Ok(m.symmetric_eigenvalues().min())
}

fn random_mass_free(mesh: &Mesh, rng: &mut ChaCha8Rng) -> StateField {
    let mut w = StateField::new(
        (0..mesh.len())
            .map(|_| StandardNormal.sample(rng))
            .collect(),
    );
    let mean = mesh.mean(&w);
    for value in w.values_mut() {
        *value -= mean;
    }
    w
}

/// Ratios `||w - mean||^2 / nonlocal_energy_full(w)` for random mass-free states.
/// The largest ratio at one scale calibrates the constant of the nonlocal
/// Poincare inequality.
pub fn poincare_ratios(
    grid: &Grid,
    kernel: &Kernel,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    grid.resolves(kernel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let w = random_mass_free(grid.mesh(), &mut rng);
        let full = nonlocal_energy_full(grid, kernel, &w)?;
        if full < 1e-14 {
            continue;
        }
        out.push(grid.mesh().inner_unchecked(w.values(), w.values()) / full);
    }
    Ok(out)
}

/// `E(w - mean) / ||w - mean||^2_W`.
pub fn rayleigh(
    grid: &Grid,
    kernel: &Kernel,
    constants: &CouplingConstants,
    w: &StateField,
) -> Result<f64> {
    grid.mesh().check(w)?;
    let mean = grid.mesh().mean(w);
    let centered = w.shifted(-mean);
    let norm2 = grid
        .mesh()
        .inner_unchecked(centered.values(), centered.values());
    let scale = w.max_abs().max(1.0);
    if norm2.sqrt() <= 1e-13 * scale {
        return Err(Error::ConstantState);
    }
    Ok(energy(grid, kernel, constants, &centered)?.total / norm2)
}
