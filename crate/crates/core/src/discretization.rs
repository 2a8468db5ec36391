//! Two-subdomain grid and the assembled generator of the semi-discrete flow.
//!
//! Unknowns are ordered `[u_0 .. u_{N_l}, v_0 .. v_{N_nl - 1}]`: nodal values on
//! `[-1, 0]` (the last one is the interface trace `u(0)`) followed by cell
//! centres in `(0, 1)`. The generator `L` is the negative `W`-gradient of the
//! discrete energy, where `W` holds the quadrature weights, so `W L` is
//! symmetric and `L 1 = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{CouplingConstants, Kernel};

/// Quadrature nodes and weights of a layout of degrees of freedom on `(-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl Mesh {
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Uniform nodal mesh with `n_cells` cells on `[-1, 1]` and trapezoid weights.
    pub fn nodal(n_cells: usize) -> Self {
        let h = 2.0 / n_cells as f64;
        let positions = (0..=n_cells).map(|i| -1.0 + i as f64 * h).collect();
        let mut weights = vec![h; n_cells + 1];
        weights[0] = 0.5 * h;
        weights[n_cells] = 0.5 * h;
        Self { positions, weights }
    }

    pub fn check(&self, w: &StateField) -> Result<()> {
        if w.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// `int w` by the mesh quadrature.
    pub fn mass(&self, w: &StateField) -> f64 {
        debug_assert_eq!(w.len(), self.len());
        self.weights
            .iter()
            .zip(w.values())
            .map(|(c, x)| c * x)
            .sum()
    }

    /// Discrete `L^2` inner product.
    pub fn inner(&self, a: &StateField, b: &StateField) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.inner_unchecked(a.values(), b.values()))
    }

    pub(crate) fn inner_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(c, (x, y))| c * x * y)
            .sum()
    }

    pub fn norm(&self, w: &StateField) -> f64 {
        self.inner_unchecked(w.values(), w.values()).sqrt()
    }

    /// Weighted mean `mass / total_weight`.
    pub fn mean(&self, w: &StateField) -> f64 {
        self.mass(w) / self.total_weight()
    }

    /// `|| w - mean ||_W`.
    pub fn dist_to_mean(&self, w: &StateField) -> f64 {
        let m = self.mean(w);
        self.weights
            .iter()
            .zip(w.values())
            .map(|(c, x)| c * (x - m) * (x - m))
            .sum::<f64>()
            .sqrt()
    }

    /// Weighted `L^2` distance between two fields on this mesh.
    pub fn distance(&self, a: &StateField, b: &StateField) -> f64 {
        self.weights
            .iter()
            .zip(a.values().iter().zip(b.values()))
            .map(|(c, (x, y))| c * (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Sample `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> StateField {
        StateField::new(self.positions.iter().map(|&x| f(x)).collect())
    }
}

/// Nodal points on `[-1, 0]` and cell centres on `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n_local: usize,
    n_nonlocal: usize,
    mesh: Mesh,
}

impl Grid {
    pub fn new(n_local: usize, n_nonlocal: usize) -> Result<Self> {
        if n_local < 4 || n_nonlocal < 4 {
            return Err(Error::GridTooCoarse {
                n_local,
                n_nonlocal,
            });
        }
        let h_l = 1.0 / n_local as f64;
        let h_nl = 1.0 / n_nonlocal as f64;
        let mut positions = Vec::with_capacity(n_local + 1 + n_nonlocal);
        let mut weights = Vec::with_capacity(n_local + 1 + n_nonlocal);
        for i in 0..=n_local {
            // exact endpoints; the interface node is exactly 0
            positions.push(-1.0 + i as f64 * h_l);
            weights.push(if i == 0 || i == n_local {
                0.5 * h_l
            } else {
                h_l
            });
        }
        positions[n_local] = 0.0;
        for j in 0..n_nonlocal {
            positions.push((j as f64 + 0.5) * h_nl);
            weights.push(h_nl);
        }
        Ok(Self {
            n_local,
            n_nonlocal,
            mesh: Mesh { positions, weights },
        })
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn n_nonlocal(&self) -> usize {
        self.n_nonlocal
    }

    pub fn h_local(&self) -> f64 {
        1.0 / self.n_local as f64
    }

    pub fn h_nonlocal(&self) -> f64 {
        1.0 / self.n_nonlocal as f64
    }

    pub fn len(&self) -> usize {
        self.n_local + 1 + self.n_nonlocal
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the node at `x = 0`.
    pub fn interface_index(&self) -> usize {
        self.n_local
    }

    /// Index of the first nonlocal cell centre.
    pub fn nonlocal_offset(&self) -> usize {
        self.n_local + 1
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn positions(&self) -> &[f64] {
        self.mesh.positions()
    }

    pub fn weights(&self) -> &[f64] {
        self.mesh.weights()
    }

    pub fn local_nodes(&self) -> &[f64] {
        &self.mesh.positions[..=self.n_local]
    }

    pub fn nonlocal_centers(&self) -> &[f64] {
        &self.mesh.positions[self.nonlocal_offset()..]
    }

    /// `h_nl <= eps R / 4`.
    pub fn resolves(&self, kernel: &Kernel) -> Result<()> {
        let support = kernel.support();
        let h = self.h_nonlocal();
        if h > 0.25 * support * (1.0 + 1e-12) {
            return Err(Error::UnderResolved {
                h_nonlocal: h,
                support,
            });
        }
        Ok(())
    }

    /// Smallest `n_nonlocal >= base` that resolves a kernel of support `support`.
    pub fn resolving_count(base: usize, support: f64) -> usize {
        let needed = (4.0 / support - 1e-9).ceil() as usize;
        base.max(needed).max(4)
    }

    /// Build a field from separate profiles on the two subdomains.
    pub fn sample_split(
        &self,
        local: impl Fn(f64) -> f64,
        nonlocal: impl Fn(f64) -> f64,
    ) -> StateField {
        let mut values: Vec<f64> = self.local_nodes().iter().map(|&x| local(x)).collect();
        values.extend(self.nonlocal_centers().iter().map(|&y| nonlocal(y)));
        StateField::new(values)
    }

    /// `u` and `v` parts of a field on this grid.
    pub fn split<'a>(&self, w: &'a StateField) -> (&'a [f64], &'a [f64]) {
        w.values().split_at(self.nonlocal_offset())
    }

    pub fn mass(&self, w: &StateField) -> f64 {
        self.mesh.mass(w)
    }

    pub fn weighted_inner(&self, a: &StateField, b: &StateField) -> Result<f64> {
        self.mesh.inner(a, b)
    }
}

/// Mass of a field on the grid.
pub fn mass(grid: &Grid, w: &StateField) -> Result<f64> {
    grid.mesh.check(w)?;
    Ok(grid.mass(w))
}

pub fn weighted_inner(grid: &Grid, a: &StateField, b: &StateField) -> Result<f64> {
    grid.weighted_inner(a, b)
}

/// Values of `w = (u, v)` on some mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    values: Vec<f64>,
}

impl StateField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self {
            values: vec![value; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|x| !x.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self::new(self.values.iter().map(|x| x + c).collect())
    }

    pub(crate) fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub(crate) fn from_dvector(v: &DVector<f64>) -> Self {
        Self::new(v.as_slice().to_vec())
    }
}

/// Which energy the generator descends.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Coupled {
        grid: Grid,
        kernel: Kernel,
        constants: CouplingConstants,
    },
    /// Three-point Neumann Laplacian on all of `(-1, 1)`, kept only to
    /// validate the eigensolver and decay fits against closed forms.
    PureHeat { n_cells: usize },
}

/// The matrix `L` of `w' = L w`.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    matrix: DMatrix<f64>,
    mesh: Mesh,
    model: Model,
}

/// Measured structure of a generator.
#[derive(Debug, Clone, Copy)]
pub struct StructureReport {
    /// `max_a |sum_b L_ab| / max_b |L_ab|`.
    pub row_sum_defect: f64,
    /// Smallest off-diagonal entry.
    pub min_off_diagonal: f64,
    /// Largest diagonal entry.
    pub max_diagonal: f64,
    /// `max |(WL)_ab - (WL)_ba| / max |WL|`.
    pub symmetry_defect: f64,
    /// `max |L 1|`.
    pub constant_image: f64,
}

impl StructureReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.row_sum_defect <= tol
            && self.min_off_diagonal >= 0.0
            && self.max_diagonal <= 0.0
            && self.symmetry_defect <= tol
            && self.constant_image <= tol
    }
}

impl GeneratorMatrix {
    /// Assemble the coupled generator.
    pub fn assemble(grid: &Grid, kernel: &Kernel, constants: &CouplingConstants) -> Result<Self> {
        constants.validate()?;
        grid.resolves(kernel)?;

        let n = grid.len();
        let nl = grid.n_local();
        let off = grid.nonlocal_offset();
        let h = grid.h_local();
        let h_nl = grid.h_nonlocal();
        let inv_h2 = 1.0 / (h * h);
        let mut l = DMatrix::<f64>::zeros(n, n);

        l[(0, 0)] = -2.0 * inv_h2;
        l[(0, 1)] = 2.0 * inv_h2;
        for i in 1..nl {
            l[(i, i - 1)] = inv_h2;
            l[(i, i)] = -2.0 * inv_h2;
            l[(i, i + 1)] = inv_h2;
        }

        let centers = grid.nonlocal_centers();
        let q: Vec<f64> = centers
            .iter()
            .map(|&y| kernel.coupling_profile_unchecked(y))
            .collect();

        // interface node: Neumann-like ghost plus the discrete Robin flux
        let robin = 2.0 / h * constants.c2 * h_nl;
        let mut exchange = 0.0;
        for (j, &qj) in q.iter().enumerate() {
            let a = robin * qj;
            l[(nl, off + j)] = a;
            exchange += a;
        }
        l[(nl, nl - 1)] = 2.0 * inv_h2;
        l[(nl, nl)] = -2.0 * inv_h2 - exchange;

        let reach = kernel.support();
        for j in 0..centers.len() {
            let mut diag = 0.0;
            for k in 0..centers.len() {
                if k == j {
                    continue;
                }
                let d = centers[j] - centers[k];
                if d.abs() >= reach {
                    continue;
                }
                let a = constants.c1 * kernel.eval(d) * h_nl;
                l[(off + j, off + k)] = a;
                diag += a;
            }
            let b = constants.c2 * q[j];
            l[(off + j, nl)] = b;
            l[(off + j, off + j)] = -diag - b;
        }

        Ok(Self {
            matrix: l,
            mesh: grid.mesh().clone(),
            model: Model::Coupled {
                grid: grid.clone(),
                kernel: *kernel,
                constants: *constants,
            },
        })
    }

    /// Neumann heat generator on `(-1, 1)` with `n_cells` cells.
    pub fn pure_heat(n_cells: usize) -> Result<Self> {
        if n_cells < 4 {
            return Err(Error::Invalid(format!(
                "pure heat generator needs at least 4 cells, got {n_cells}"
            )));
        }
        let mesh = Mesh::nodal(n_cells);
        let h = 2.0 / n_cells as f64;
        let inv_h2 = 1.0 / (h * h);
        let n = n_cells + 1;
        let mut l = DMatrix::<f64>::zeros(n, n);
        l[(0, 0)] = -2.0 * inv_h2;
        l[(0, 1)] = 2.0 * inv_h2;
        for i in 1..n_cells {
            l[(i, i - 1)] = inv_h2;
            l[(i, i)] = -2.0 * inv_h2;
            l[(i, i + 1)] = inv_h2;
        }
        l[(n_cells, n_cells - 1)] = 2.0 * inv_h2;
        l[(n_cells, n_cells)] = -2.0 * inv_h2;
        Ok(Self {
            matrix: l,
            mesh,
            model: Model::PureHeat { n_cells },
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn grid(&self) -> Option<&Grid> {
        match &self.model {
            Model::Coupled { grid, .. } => Some(grid),
            Model::PureHeat { .. } => None,
        }
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `L w`.
    pub fn apply(&self, w: &StateField) -> Result<StateField> {
        self.mesh.check(w)?;
        Ok(StateField::from_dvector(&(&self.matrix * w.to_dvector())))
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        self.matrix
            .diagonal()
            .iter()
            .fold(0.0, |m, d| m.max(d.abs()))
    }

    /// `W L` as a dense matrix.
    pub fn weighted(&self) -> DMatrix<f64> {
        let mut wl = self.matrix.clone();
        for (a, &c) in self.mesh.weights().iter().enumerate() {
            wl.row_mut(a).scale_mut(c);
        }
        wl
    }

    pub fn structure(&self) -> StructureReport {
        let n = self.len();
        let l = &self.matrix;
        let mut row_sum_defect: f64 = 0.0;
        let mut min_off = f64::INFINITY;
        let mut max_diag = f64::NEG_INFINITY;
        for a in 0..n {
            let row = l.row(a);
            let scale = row
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()))
                .max(f64::MIN_POSITIVE);
            row_sum_defect = row_sum_defect.max(row.sum().abs() / scale);
            for b in 0..n {
                if a == b {
                    max_diag = max_diag.max(l[(a, b)]);
                } else {
                    min_off = min_off.min(l[(a, b)]);
                }
            }
        }
        let wl = self.weighted();
        let wl_max = wl.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut asym: f64 = 0.0;
        for a in 0..n {
            for b in (a + 1)..n {
                asym = asym.max((wl[(a, b)] - wl[(b, a)]).abs());
            }
        }
        let ones = StateField::constant(n, 1.0);
        let image = self.apply(&ones).expect("length matches");
        let diag_scale = self.max_abs_diagonal().max(1.0);
        StructureReport {
            row_sum_defect,
            min_off_diagonal: min_off,
            max_diagonal: max_diag,
            symmetry_defect: asym / wl_max,
            constant_image: image.max_abs() / diag_scale,
        }
    }

    /// Checks that `I - dt L` has unit row sums, diagonal `>= 1` and
    /// nonpositive off-diagonal entries. Returns the largest violation.
    pub fn m_matrix_defect(&self, dt: f64) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for a in 0..n {
            let mut row_sum = 0.0;
            for b in 0..n {
                let entry = if a == b { 1.0 } else { 0.0 } - dt * self.matrix[(a, b)];
                row_sum += entry;
                if a == b {
                    worst = worst.max(1.0 - entry);
                } else {
                    worst = worst.max(entry);
                }
            }
            let scale = 1.0 + 2.0 * dt * self.matrix[(a, a)].abs();
            worst = worst.max((row_sum - 1.0).abs() / scale - 1e-15);
        }
        worst.max(0.0)
    }

    /// Mutation hook for harness tests: zeroes the first interface-to-nonlocal
    /// coupling entry, which breaks the discrete mass identity.
    pub fn zero_first_coupling_entry(&mut self) {
        if let Model::Coupled { grid, .. } = &self.model {
            let (i, j) = (grid.interface_index(), grid.nonlocal_offset());
            self.matrix[(i, j)] = 0.0;
        }
    }
}
