//! Initial FGA amplitudes and phase-space sampling.
//!
//! Every trajectory starts from a phase-space point `(q0, p0)` with
//! amplitude
//!
//! ```text
//! A0(q0, p0) = 2^{m/2} ∫ u0(y) exp((i/ε)(-p0·(y - q0) + (i/2)|y - q0|²)) dy
//! ```
//!
//! The amplitude is tabulated on a tensor grid over a phase-space box; the
//! sampler draws cell centres with probability proportional to `|A0|`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::{Error, Point, Result};

/// Cells with `|A0|` below this fraction of the maximum are never sampled.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

/// Default tabulation points per phase-space axis.
pub const DEFAULT_RESOLUTION: usize = 128;

/// The adaptive box is enlarged until every boundary cell is below this
/// fraction of the maximum. Tight enough that the truncated mass is < 1e-8.
pub const BOUNDARY_RATIO: f64 = 1e-10;

// Width of the automatic box, in standard deviations of |A0|.
const BOX_SIGMAS: f64 = 7.0;

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
        })
    }
}

/// Uniform variate in `[0, 1)` from the top 53 bits of a `u64`.
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `u0(x) = c · exp(-α|x - μ|²) · exp((i/ε) p̄·(x - μ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianWavePacket<const M: usize> {
    pub prefactor: Complex64,
    pub alpha: f64,
    pub center: Point<M>,
    pub momentum: Point<M>,
}

impl<const M: usize> GaussianWavePacket<M> {
    pub fn new(alpha: f64, center: Point<M>, momentum: Point<M>) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                value: alpha,
            });
        }
        Ok(Self {
            prefactor: Complex64::new(1.0, 0.0),
            alpha,
            center,
            momentum,
        })
    }

    pub fn with_prefactor(mut self, prefactor: Complex64) -> Self {
        self.prefactor = prefactor;
        self
    }

    pub fn evaluate(&self, x: &Point<M>, epsilon: f64) -> Complex64 {
        let d = x - self.center;
        let envelope = libm::exp(-self.alpha * d.norm_squared());
        let phase = self.momentum.dot(&d) / epsilon;
        self.prefactor * Complex64::from_polar(envelope, phase)
    }

    /// `‖u0‖₂ = |c| (π/(2α))^{m/4}`.
    pub fn l2_norm(&self) -> f64 {
        self.prefactor.norm() * libm::pow(PI / (2.0 * self.alpha), M as f64 / 4.0)
    }

    /// Standard deviations `(σq, σp)` of `|A0|` viewed as a Gaussian density.
    pub fn amplitude_widths(&self, epsilon: f64) -> (f64, f64) {
        let a = self.alpha + 0.5 / epsilon;
        (libm::sqrt(epsilon * a / self.alpha), libm::sqrt(2.0 * a) * epsilon)
    }

    /// Box centred on `(μ, p̄)` spanning ±7 standard deviations of `|A0|`.
    pub fn phase_space_box(&self, epsilon: f64) -> PhaseSpaceBox<M> {
        let (sq, sp) = self.amplitude_widths(epsilon);
        PhaseSpaceBox {
            q_center: self.center,
            p_center: self.momentum,
            q_half_width: Point::<M>::repeat(BOX_SIGMAS * sq),
            p_half_width: Point::<M>::repeat(BOX_SIGMAS * sp),
        }
    }
}

/// Closed form of the `A0` integral for a Gaussian packet.
///
/// With `s = y - q0`, `d = q0 - μ` and `a = α + 1/(2ε)` the exponent is the
/// quadratic `-a s² + b s + c` per axis, `b = -2αd + i(p̄ - p0)/ε`,
/// `c = -αd² + i p̄ d/ε`, which integrates to `√(π/a) exp(b²/(4a) + c)`.
pub fn analytic_a0_gaussian<const M: usize>(
    packet: &GaussianWavePacket<M>,
    q0: &Point<M>,
    p0: &Point<M>,
    epsilon: f64,
) -> Result<Complex64> {
    check_epsilon(epsilon)?;
    let alpha = packet.alpha;
    let a = alpha + 0.5 / epsilon;
    let mut exponent = Complex64::new(0.0, 0.0);
    for k in 0..M {
        let d = q0[k] - packet.center[k];
        let b = Complex64::new(-2.0 * alpha * d, (packet.momentum[k] - p0[k]) / epsilon);
        let c = Complex64::new(-alpha * d * d, packet.momentum[k] * d / epsilon);
        exponent += b * b / (4.0 * a) + c;
    }
    let scale = libm::pow(2.0 * PI / a, M as f64 / 2.0);
    Ok(packet.prefactor * scale * exponent.exp())
}

/// Trapezoidal quadrature of the `A0` integral for arbitrary `u0`.
///
/// The window is where `exp(-|y - q0|²/(2ε)) > 1e-16` along each axis, with
/// at least 16 nodes per `√ε`. The cost is `O(276^M)` evaluations of `u0`.
pub fn compute_a0_quadrature<const M: usize, F>(u0: F, q0: &Point<M>, p0: &Point<M>, epsilon: f64) -> Result<Complex64>
where
    F: Fn(&Point<M>) -> Complex64,
{
    check_epsilon(epsilon)?;
    let sqrt_eps = libm::sqrt(epsilon);
    let half_window = libm::sqrt(2.0 * epsilon * libm::log(1e16));
    let intervals = libm::ceil(2.0 * half_window / (sqrt_eps / 16.0)) as usize;
    let h = 2.0 * half_window / intervals as f64;
    let nodes = intervals + 1;

    let mut digits = [0usize; M];
    let mut total = Complex64::new(0.0, 0.0);
    'outer: loop {
        let mut y = *q0;
        let mut weight = 1.0;
        for k in 0..M {
            y[k] += -half_window + digits[k] as f64 * h;
            if digits[k] == 0 || digits[k] == intervals {
                weight *= 0.5;
            }
        }
        let s = y - q0;
        let kernel = Complex64::from_polar(libm::exp(-0.5 * s.norm_squared() / epsilon), -p0.dot(&s) / epsilon);
        total += u0(&y) * kernel * weight;

        for digit in digits.iter_mut() {
            *digit += 1;
            if *digit < nodes {
                continue 'outer;
            }
            *digit = 0;
        }
        break;
    }
    Ok(total * libm::pow(2.0 * h * h, M as f64 / 2.0))
}

/// Axis-aligned box in `(q, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpaceBox<const M: usize> {
    pub q_center: Point<M>,
    pub p_center: Point<M>,
    pub q_half_width: Point<M>,
    pub p_half_width: Point<M>,
}

impl<const M: usize> PhaseSpaceBox<M> {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            q_half_width: self.q_half_width * factor,
            p_half_width: self.p_half_width * factor,
            ..*self
        }
    }

    pub fn volume(&self) -> f64 {
        (0..M)
            .map(|k| 4.0 * self.q_half_width[k] * self.p_half_width[k])
            .product()
    }
}

/// `A0` tabulated at the cell centres of a uniform grid over a
/// [`PhaseSpaceBox`]. Cell `i` has one base-`resolution` digit per axis,
/// positions first, lowest axis least significant.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeTable<const M: usize> {
    bounds: PhaseSpaceBox<M>,
    resolution: usize,
    epsilon: f64,
    values: Vec<Complex64>,
    cell_volume: f64,
    max_magnitude: f64,
}

impl<const M: usize> AmplitudeTable<M> {
    /// Evaluates `a0(q, p)` at every cell centre.
    pub fn tabulate<F>(bounds: PhaseSpaceBox<M>, resolution: usize, epsilon: f64, mut a0: F) -> Result<Self>
    where
        F: FnMut(&Point<M>, &Point<M>) -> Complex64,
    {
        check_epsilon(epsilon)?;
        if resolution == 0 {
            return Err(Error::InvalidParameter {
                name: "resolution",
                value: 0.0,
            });
        }
        let cells = resolution.pow(2 * M as u32);
        let mut table = Self {
            bounds,
            resolution,
            epsilon,
            values: Vec::with_capacity(cells),
            cell_volume: bounds.volume() / cells as f64,
            max_magnitude: 0.0,
        };
        for cell in 0..cells {
            let (q, p) = table.cell_center(cell);
            let value = a0(&q, &p);
            table.max_magnitude = table.max_magnitude.max(value.norm());
            table.values.push(value);
        }
        Ok(table)
    }

    /// Tabulates on `initial`, enlarging the box by 1.5× until the boundary
    /// cells fall below [`BOUNDARY_RATIO`] of the maximum.
    pub fn adaptive<F>(initial: PhaseSpaceBox<M>, resolution: usize, epsilon: f64, mut a0: F) -> Result<Self>
    where
        F: FnMut(&Point<M>, &Point<M>) -> Complex64,
    {
        let mut bounds = initial;
        for _ in 0..24 {
            let table = Self::tabulate(bounds, resolution, epsilon, &mut a0)?;
            if table.max_magnitude == 0.0 || table.boundary_max() <= BOUNDARY_RATIO * table.max_magnitude {
                return Ok(table);
            }
            bounds = bounds.scaled(1.5);
        }
        Self::tabulate(bounds, resolution, epsilon, a0)
    }

    /// Analytic amplitudes of a Gaussian packet on an adaptive box.
    pub fn for_packet(packet: &GaussianWavePacket<M>, epsilon: f64, resolution: usize) -> Result<Self> {
        check_epsilon(epsilon)?;
        Self::adaptive(packet.phase_space_box(epsilon), resolution, epsilon, |q, p| {
            analytic_a0_gaussian(packet, q, p, epsilon).unwrap_or_default()
        })
    }

    pub fn bounds(&self) -> &PhaseSpaceBox<M> {
        &self.bounds
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn max_magnitude(&self) -> f64 {
        self.max_magnitude
    }

    pub fn cell_center(&self, cell: usize) -> (Point<M>, Point<M>) {
        let n = self.resolution;
        let mut rest = cell;
        let mut q = Point::<M>::zeros();
        let mut p = Point::<M>::zeros();
        for k in 0..2 * M {
            let digit = rest % n;
            rest /= n;
            let frac = (digit as f64 + 0.5) / n as f64;
            if k < M {
                let half = self.bounds.q_half_width[k];
                q[k] = self.bounds.q_center[k] - half + 2.0 * half * frac;
            } else {
                let half = self.bounds.p_half_width[k - M];
                p[k - M] = self.bounds.p_center[k - M] - half + 2.0 * half * frac;
            }
        }
        (q, p)
    }

    /// Indices of the cells the sampler can return.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        let cut = SUPPORT_THRESHOLD * self.max_magnitude;
        self.values
            .iter()
            .enumerate()
            .filter(move |(_, v)| self.max_magnitude > 0.0 && v.norm() >= cut)
            .map(|(i, _)| i)
    }

    /// `C_N = (2πε)^{-3m/2} Σ |A0| · cell volume` over every cell.
    pub fn normalization_constant(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|v| v.norm()).sum();
        sum * self.cell_volume * phase_space_measure::<M>(self.epsilon)
    }

    pub fn sampler(&self) -> Result<PhaseSpaceSampler<'_, M>> {
        PhaseSpaceSampler::new(self)
    }

    fn boundary_max(&self) -> f64 {
        let n = self.resolution;
        let mut max = 0.0f64;
        for (cell, v) in self.values.iter().enumerate() {
            let mut rest = cell;
            let mut on_edge = false;
            for _ in 0..2 * M {
                let digit = rest % n;
                rest /= n;
                on_edge |= digit == 0 || digit == n - 1;
            }
            if on_edge {
                max = max.max(v.norm());
            }
        }
        max
    }
}

/// `(2πε)^{-3m/2}`, the measure factor of the FGA phase-space integral.
pub fn phase_space_measure<const M: usize>(epsilon: f64) -> f64 {
    libm::pow(2.0 * PI * epsilon, -1.5 * M as f64)
}

/// `C_N` of a table; `epsilon` must be the one the table was built with.
pub fn normalization_constant<const M: usize>(table: &AmplitudeTable<M>, epsilon: f64) -> f64 {
    debug_assert_eq!(table.epsilon, epsilon);
    table.normalization_constant()
}

/// A drawn initial condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpacePoint<const M: usize> {
    pub position: Point<M>,
    pub momentum: Point<M>,
    pub amplitude: Complex64,
    pub cell: usize,
}

/// Discrete inverse-CDF sampler over the support cells of a table.
///
/// The sampler is immutable; randomness comes from the caller, so one
/// sampler can serve any number of independent streams.
#[derive(Debug, Clone)]
pub struct PhaseSpaceSampler<'a, const M: usize> {
    table: &'a AmplitudeTable<M>,
    cells: Vec<usize>,
    cumulative: Vec<f64>,
}

impl<'a, const M: usize> PhaseSpaceSampler<'a, M> {
    pub fn new(table: &'a AmplitudeTable<M>) -> Result<Self> {
        let cells: Vec<usize> = table.support().collect();
        if cells.is_empty() {
            return Err(Error::EmptySupport);
        }
        let mut running = 0.0;
        let cumulative = cells
            .iter()
            .map(|&c| {
                running += table.values[c].norm();
                running
            })
            .collect();
        Ok(Self {
            table,
            cells,
            cumulative,
        })
    }

    pub fn table(&self) -> &'a AmplitudeTable<M> {
        self.table
    }

    pub fn support_len(&self) -> usize {
        self.cells.len()
    }

    pub fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> PhaseSpacePoint<M> {
        let total = *self.cumulative.last().expect("support is non-empty");
        let target = uniform(rng) * total;
        let slot = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.cells.len() - 1);
        let cell = self.cells[slot];
        let (position, momentum) = self.table.cell_center(cell);
        PhaseSpacePoint {
            position,
            momentum,
            amplitude: self.table.values[cell],
            cell,
        }
    }
}

/// A sampler bundled with its own seeded stream.
#[derive(Debug, Clone)]
pub struct SeededSampler<'a, const M: usize> {
    sampler: PhaseSpaceSampler<'a, M>,
    rng: ChaCha8Rng,
}

impl<const M: usize> SeededSampler<'_, M> {
    pub fn next_point(&mut self) -> PhaseSpacePoint<M> {
        self.sampler.draw(&mut self.rng)
    }
}

impl<const M: usize> Iterator for SeededSampler<'_, M> {
    type Item = PhaseSpacePoint<M>;
    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_point())
    }
}

pub fn build_sampler<const M: usize>(table: &AmplitudeTable<M>, seed: u64) -> Result<SeededSampler<'_, M>> {
    Ok(SeededSampler {
        sampler: table.sampler()?,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}
