//! Convolution kernels and the constants that couple them to the heat equation.
//!
//! Every family is even, nonnegative, supported on `[-R, R]` and has unit
//! mass before rescaling. The rescaled kernel is `J^eps(z) = eps^-3 J(z / eps)`,
//! so its mass is `eps^-2` while its second moment stays `M(J)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{positive, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `1/(2R)` on `[-R, R]`. Discontinuous at `|z| = R`.
    Uniform,
    /// `(1 - |z|/R)/R`.
    Triangle,
    /// `3/(4R) (1 - (z/R)^2)`.
    Epanechnikov,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::Uniform,
        KernelFamily::Triangle,
        KernelFamily::Epanechnikov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Uniform => "uniform",
            KernelFamily::Triangle => "triangle",
            KernelFamily::Epanechnikov => "epanechnikov",
        }
    }

    /// Density of the unit-radius member at `t`.
    fn unit_density(self, t: f64) -> f64 {
        let a = t.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            KernelFamily::Uniform => 0.5,
            KernelFamily::Triangle => 1.0 - a,
            KernelFamily::Epanechnikov => 0.75 * (1.0 - a * a),
        }
    }

    /// `int_t^inf` of the unit-radius density.
    fn unit_tail(self, t: f64) -> f64 {
        if t <= -1.0 {
            return 1.0;
        }
        if t >= 1.0 {
            return 0.0;
        }
        match self {
            KernelFamily::Uniform => 0.5 * (1.0 - t),
            KernelFamily::Triangle => {
                if t >= 0.0 {
                    0.5 * (1.0 - t) * (1.0 - t)
                } else {
                    1.0 - 0.5 * (1.0 + t) * (1.0 + t)
                }
            }
            KernelFamily::Epanechnikov => 0.25 * (2.0 - 3.0 * t + t * t * t),
        }
    }

    /// `int z^2 J(z) dz` for the unit-radius member.
    fn unit_second_moment(self) -> f64 {
        match self {
            KernelFamily::Uniform => 1.0 / 3.0,
            KernelFamily::Triangle => 1.0 / 6.0,
            KernelFamily::Epanechnikov => 1.0 / 5.0,
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(KernelFamily::Uniform),
            "triangle" => Ok(KernelFamily::Triangle),
            "epanechnikov" => Ok(KernelFamily::Epanechnikov),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

/// An admissible kernel, optionally rescaled by `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    radius: f64,
    epsilon: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, radius: f64, epsilon: f64) -> Result<Self> {
        Ok(Self {
            family,
            radius: positive("kernel.radius", radius)?,
            epsilon: positive("kernel.epsilon", epsilon)?,
        })
    }

    /// Same as [`Kernel::new`] with the family given by name.
    pub fn from_name(family: &str, radius: f64, epsilon: f64) -> Result<Self> {
        Self::new(family.parse()?, radius, epsilon)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Half-width of the rescaled support, `R * eps`.
    pub fn support(&self) -> f64 {
        self.radius * self.epsilon
    }

    /// Copy of this kernel with a different scale.
    pub fn rescaled(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.family, self.radius, epsilon)
    }

    /// Unscaled member `J(z)` of the family.
    pub fn base(&self, z: f64) -> f64 {
        self.family.unit_density(z / self.radius) / self.radius
    }

    /// Point value of the rescaled kernel `eps^-3 J(z / eps)`.
    pub fn eval(&self, z: f64) -> f64 {
        let eps = self.epsilon;
        self.base(z / eps) / (eps * eps * eps)
    }

    /// Total mass of the rescaled kernel, `eps^-2`.
    pub fn mass(&self) -> f64 {
        1.0 / (self.epsilon * self.epsilon)
    }

    /// `M(J)` of the unscaled kernel.
    pub fn second_moment(&self) -> f64 {
        self.family.unit_second_moment() * self.radius * self.radius
    }

    pub fn coupling_constants(&self) -> CouplingConstants {
        CouplingConstants::from_moment(self.second_moment())
    }

    fn base_tail(&self, z: f64) -> f64 {
        self.family.unit_tail(z / self.radius)
    }

    /// `q(y) = int_{-1}^{0} J^eps(y - s) ds`, the weight with which the point
    /// `y` of the nonlocal region sees the local region.
    pub fn coupling_profile(&self, y: f64) -> Result<f64> {
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::OutsideNonlocal(y));
        }
        Ok(self.coupling_profile_unchecked(y))
    }

    pub(crate) fn coupling_profile_unchecked(&self, y: f64) -> f64 {
        let eps = self.epsilon;
        let near = self.base_tail(y / eps);
        let far = self.base_tail((y + 1.0) / eps);
        (near - far).max(0.0) / (eps * eps)
    }
}

/// Constants in front of the nonlocal diffusion term (`c1`) and the
/// interface exchange term (`c2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingConstants {
    pub c1: f64,
    pub c2: f64,
    pub m_j: f64,
}

impl CouplingConstants {
    /// `c1 = 2 / M(J)`, `c2 = 1`.
    pub fn from_moment(m_j: f64) -> Self {
        Self {
            c1: 2.0 / m_j,
            c2: 1.0,
            m_j,
        }
    }

    /// Explicit override of the defaults, for experiments.
    pub fn custom(c1: f64, c2: f64, m_j: f64) -> Result<Self> {
        Ok(Self {
            c1: positive("c1", c1)?,
            c2: positive("c2", c2)?,
            m_j: positive("m_j", m_j)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        positive("c1", self.c1)?;
        positive("c2", self.c2)?;
        positive("m_j", self.m_j)?;
        Ok(())
    }

    /// Upper bound on the Picard window length, `1 / (2 c1 + c2)`.
    pub fn picard_window_bound(&self) -> f64 {
        1.0 / (2.0 * self.c1 + self.c2)
    }

    /// Lipschitz constant of the local solve with respect to the nonlocal
    /// data, `c2 / 2`.
    pub fn local_lipschitz(&self) -> f64 {
        0.5 * self.c2
    }

    /// Contraction factor of one Picard sweep over a window of length `window`.
    /// Infinite when the window violates the bound.
    pub fn picard_kappa(&self, window: f64) -> f64 {
        let denom = 1.0 - (2.0 * self.c1 + self.c2) * window;
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        self.local_lipschitz() * self.c2 * window / denom
    }
}
