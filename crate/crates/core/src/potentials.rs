//! Diabatic matrix potentials.
//!
//! A potential supplies the two diagonal surfaces with analytic gradients and
//! Hessians, plus the off-diagonal coupling `V01`. The lower-left entry is
//! always `conj(V01)`, so Hermiticity holds by construction. The coupling
//! scale `δ` is not part of the potential; callers multiply it in.

use core::f64::consts::FRAC_PI_2;

use nalgebra::SMatrix;
use num_complex::Complex64;

use crate::{Error, Point, Result};

/// Index of a diabatic surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    Zero,
    One,
}

impl Surface {
    pub fn flip(self) -> Self {
        match self {
            Surface::Zero => Surface::One,
            Surface::One => Surface::Zero,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Surface::Zero => 0,
            Surface::One => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Surface::Zero),
            1 => Some(Surface::One),
            _ => None,
        }
    }
}

/// Value, gradient and Hessian of one diagonal surface at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceJet<const M: usize> {
    pub value: f64,
    pub gradient: Point<M>,
    pub hessian: SMatrix<f64, M, M>,
}

/// A 2×2 Hermitian matrix potential in `M` dimensions.
///
/// Implementations must be pure functions of `q`; the ensemble driver calls
/// them concurrently.
pub trait DiabaticPotential<const M: usize> {
    /// `V_ll(q)`.
    fn diagonal(&self, surface: Surface, q: &Point<M>) -> f64;

    /// `V01(q)`, without the `δ` factor.
    fn coupling(&self, q: &Point<M>) -> Complex64;

    /// `∇V_ll(q)`.
    fn gradient(&self, surface: Surface, q: &Point<M>) -> Point<M>;

    /// `∇²V_ll(q)`, symmetric.
    fn hessian(&self, surface: Surface, q: &Point<M>) -> SMatrix<f64, M, M>;

    /// All diagonal-surface data at once. Override when the three share work.
    fn jet(&self, surface: Surface, q: &Point<M>) -> SurfaceJet<M> {
        SurfaceJet {
            value: self.diagonal(surface, q),
            gradient: self.gradient(surface, q),
            hessian: self.hessian(surface, q),
        }
    }

    /// Matrix entry `V_{to,from}` picked up by a hop `from → to`.
    fn transition_coupling(&self, to: Surface, from: Surface, q: &Point<M>) -> Complex64 {
        match (to, from) {
            (Surface::Zero, Surface::One) => self.coupling(q),
            (Surface::One, Surface::Zero) => self.coupling(q).conj(),
            _ => Complex64::new(0.0, 0.0),
        }
    }
}

impl<const M: usize, P: DiabaticPotential<M> + ?Sized> DiabaticPotential<M> for &P {
    fn diagonal(&self, surface: Surface, q: &Point<M>) -> f64 {
        (**self).diagonal(surface, q)
    }
    fn coupling(&self, q: &Point<M>) -> Complex64 {
        (**self).coupling(q)
    }
    fn gradient(&self, surface: Surface, q: &Point<M>) -> Point<M> {
        (**self).gradient(surface, q)
    }
    fn hessian(&self, surface: Surface, q: &Point<M>) -> SMatrix<f64, M, M> {
        (**self).hessian(surface, q)
    }
    fn jet(&self, surface: Surface, q: &Point<M>) -> SurfaceJet<M> {
        (**self).jet(surface, q)
    }
}

fn point_from_slice<const M: usize>(q: &[f64]) -> Result<Point<M>> {
    if q.len() != M {
        return Err(Error::DimensionMismatch {
            expected: M,
            found: q.len(),
        });
    }
    Ok(Point::<M>::from_column_slice(q))
}

/// `V_ll(q)` for a coordinate slice of unchecked length.
pub fn eval_diagonal<const M: usize, P: DiabaticPotential<M>>(
    potential: &P,
    surface: Surface,
    q: &[f64],
) -> Result<f64> {
    Ok(potential.diagonal(surface, &point_from_slice(q)?))
}

/// `V01(q)` for a coordinate slice of unchecked length.
pub fn eval_coupling<const M: usize, P: DiabaticPotential<M>>(potential: &P, q: &[f64]) -> Result<Complex64> {
    Ok(potential.coupling(&point_from_slice(q)?))
}

pub fn gradient<const M: usize, P: DiabaticPotential<M>>(
    potential: &P,
    surface: Surface,
    q: &[f64],
) -> Result<Point<M>> {
    Ok(potential.gradient(surface, &point_from_slice(q)?))
}

pub fn hessian<const M: usize, P: DiabaticPotential<M>>(
    potential: &P,
    surface: Surface,
    q: &[f64],
) -> Result<SMatrix<f64, M, M>> {
    Ok(potential.hessian(surface, &point_from_slice(q)?))
}

/// Parameters of the dual avoided-crossing model
/// `V00 = 0`, `V11 = -depth·exp(-width·x²) + offset`,
/// `V01 = amplitude·exp(-coupling_width·x²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualCrossingParams {
    pub depth: f64,
    pub width: f64,
    pub offset: f64,
    pub amplitude: f64,
    pub coupling_width: f64,
}

impl Default for DualCrossingParams {
    fn default() -> Self {
        Self {
            depth: 0.1,
            width: 0.28,
            offset: 0.05,
            amplitude: 0.015,
            coupling_width: 0.06,
        }
    }
}

/// The one-dimensional benchmark models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinModel {
    /// `V00 = tanh x`, `V11 = -tanh x`, `V01 = 1`.
    SimpleCrossing,
    /// Dual crossing; the coupling amplitude is inside `V01`, use `δ = 1`.
    DualCrossing(DualCrossingParams),
    /// `V00 = atan(k x) + π/2`, `V11 = -V00`, `V01 = 1`.
    ExtendedCoupling { steepness: f64 },
}

impl BuiltinModel {
    pub const SIMPLE: &'static str = "simple";
    pub const DUAL: &'static str = "dual";
    pub const EXTENDED: &'static str = "extended";

    pub fn dual_crossing() -> Self {
        BuiltinModel::DualCrossing(DualCrossingParams::default())
    }

    pub fn extended_coupling() -> Self {
        BuiltinModel::ExtendedCoupling { steepness: 10.0 }
    }

    /// Model with default parameters for a config tag.
    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            Self::SIMPLE => Some(BuiltinModel::SimpleCrossing),
            Self::DUAL => Some(Self::dual_crossing()),
            Self::EXTENDED => Some(Self::extended_coupling()),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            BuiltinModel::SimpleCrossing => Self::SIMPLE,
            BuiltinModel::DualCrossing(_) => Self::DUAL,
            BuiltinModel::ExtendedCoupling { .. } => Self::EXTENDED,
        }
    }

    // Value, first and second derivative of surface 0 or 1 at x.
    fn derivatives(&self, surface: Surface, x: f64) -> (f64, f64, f64) {
        match *self {
            BuiltinModel::SimpleCrossing => {
                let t = libm::tanh(x);
                let sech2 = 1.0 - t * t;
                let jet = (t, sech2, -2.0 * t * sech2);
                odd_pair(surface, jet)
            }
            BuiltinModel::ExtendedCoupling { steepness: k } => {
                let kx = k * x;
                let denom = 1.0 + kx * kx;
                let jet = (
                    libm::atan(kx) + FRAC_PI_2,
                    k / denom,
                    -2.0 * k * k * kx / (denom * denom),
                );
                odd_pair(surface, jet)
            }
            BuiltinModel::DualCrossing(p) => match surface {
                Surface::Zero => (0.0, 0.0, 0.0),
                Surface::One => {
                    let g = libm::exp(-p.width * x * x);
                    let scale = 2.0 * p.depth * p.width * g;
                    (
                        -p.depth * g + p.offset,
                        scale * x,
                        scale * (1.0 - 2.0 * p.width * x * x),
                    )
                }
            },
        }
    }
}

fn odd_pair(surface: Surface, jet: (f64, f64, f64)) -> (f64, f64, f64) {
    match surface {
        Surface::Zero => jet,
        Surface::One => (-jet.0, -jet.1, -jet.2),
    }
}

impl DiabaticPotential<1> for BuiltinModel {
    fn diagonal(&self, surface: Surface, q: &Point<1>) -> f64 {
        self.derivatives(surface, q[0]).0
    }

    fn coupling(&self, q: &Point<1>) -> Complex64 {
        match *self {
            BuiltinModel::SimpleCrossing | BuiltinModel::ExtendedCoupling { .. } => Complex64::new(1.0, 0.0),
            BuiltinModel::DualCrossing(p) => {
                Complex64::new(p.amplitude * libm::exp(-p.coupling_width * q[0] * q[0]), 0.0)
            }
        }
    }

    fn gradient(&self, surface: Surface, q: &Point<1>) -> Point<1> {
        Point::<1>::new(self.derivatives(surface, q[0]).1)
    }

    fn hessian(&self, surface: Surface, q: &Point<1>) -> SMatrix<f64, 1, 1> {
        SMatrix::<f64, 1, 1>::new(self.derivatives(surface, q[0]).2)
    }

    fn jet(&self, surface: Surface, q: &Point<1>) -> SurfaceJet<1> {
        let (value, g, h) = self.derivatives(surface, q[0]);
        SurfaceJet {
            value,
            gradient: Point::<1>::new(g),
            hessian: SMatrix::<f64, 1, 1>::new(h),
        }
    }
}

/// Constant surfaces `V_ll = levels[l]` with constant coupling.
///
/// Gives a position-independent hop rate, which makes the jump process an
/// exact Poisson process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSurfaces {
    pub levels: [f64; 2],
    pub coupling: Complex64,
}

impl<const M: usize> DiabaticPotential<M> for FlatSurfaces {
    fn diagonal(&self, surface: Surface, _q: &Point<M>) -> f64 {
        self.levels[surface.index()]
    }
    fn coupling(&self, _q: &Point<M>) -> Complex64 {
        self.coupling
    }
    fn gradient(&self, _surface: Surface, _q: &Point<M>) -> Point<M> {
        Point::<M>::zeros()
    }
    fn hessian(&self, _surface: Surface, _q: &Point<M>) -> SMatrix<f64, M, M> {
        SMatrix::<f64, M, M>::zeros()
    }
}

/// Identical harmonic wells `V_ll = ½ Σ k_i q_i² + offsets[l]` on both
/// surfaces, with constant coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicWells<const M: usize> {
    pub stiffness: Point<M>,
    pub offsets: [f64; 2],
    pub coupling: Complex64,
}

impl<const M: usize> HarmonicWells<M> {
    /// Unit-frequency isotropic well with no coupling.
    pub fn isotropic() -> Self {
        Self {
            stiffness: Point::<M>::repeat(1.0),
            offsets: [0.0; 2],
            coupling: Complex64::new(0.0, 0.0),
        }
    }
}

impl<const M: usize> DiabaticPotential<M> for HarmonicWells<M> {
    fn diagonal(&self, surface: Surface, q: &Point<M>) -> f64 {
        0.5 * q.component_mul(q).dot(&self.stiffness) + self.offsets[surface.index()]
    }
    fn coupling(&self, _q: &Point<M>) -> Complex64 {
        self.coupling
    }
    fn gradient(&self, _surface: Surface, q: &Point<M>) -> Point<M> {
        self.stiffness.component_mul(q)
    }
    fn hessian(&self, _surface: Surface, _q: &Point<M>) -> SMatrix<f64, M, M> {
        SMatrix::<f64, M, M>::from_diagonal(&self.stiffness)
    }
}

/// Exposes surface 0 of a matrix potential as both surfaces with no coupling:
/// the scalar problem with `W = V00`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarSurface<P>(pub P);

impl<const M: usize, P: DiabaticPotential<M>> DiabaticPotential<M> for ScalarSurface<P> {
    fn diagonal(&self, _surface: Surface, q: &Point<M>) -> f64 {
        self.0.diagonal(Surface::Zero, q)
    }
    fn coupling(&self, _q: &Point<M>) -> Complex64 {
        Complex64::new(0.0, 0.0)
    }
    fn gradient(&self, _surface: Surface, q: &Point<M>) -> Point<M> {
        self.0.gradient(Surface::Zero, q)
    }
    fn hessian(&self, _surface: Surface, q: &Point<M>) -> SMatrix<f64, M, M> {
        self.0.hessian(Surface::Zero, q)
    }
    fn jet(&self, _surface: Surface, q: &Point<M>) -> SurfaceJet<M> {
        self.0.jet(Surface::Zero, q)
    }
}
