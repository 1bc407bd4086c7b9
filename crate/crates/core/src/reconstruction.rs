//! Trajectory averages on a grid.
//!
//! Each record contributes the sample
//!
//! ```text
//! X(x) = C_N · w · exp(iΘ(x)/ε),   Θ(x) = S + P·(x - Q) + (i/2)|x - Q|²
//! ```
//!
//! to component `n mod 2`, where `n` is its hop count and `w` its
//! [`TrajectoryWeight`]. The estimate of `u` is the sample mean over all
//! records, with standard errors from streaming second moments.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::potentials::Surface;
use crate::trajectory::{RateModel, TrajectoryRecord};
use crate::{Error, Point, Result};

/// Bumps are cut off where `|x - Q| > 8√ε`, i.e. below `e^{-32}`.
pub const BUMP_RADIUS: f64 = 8.0;

/// Frozen Gaussian `exp(iΘ(x)/ε)` of a trajectory endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel<const M: usize> {
    pub position: Point<M>,
    pub momentum: Point<M>,
    pub action: f64,
}

impl<const M: usize> GaussianKernel<M> {
    pub fn theta(&self, x: &Point<M>) -> Complex64 {
        let d = x - self.position;
        Complex64::new(self.action + self.momentum.dot(&d), 0.5 * d.norm_squared())
    }

    pub fn evaluate(&self, x: &Point<M>, epsilon: f64) -> Complex64 {
        let d = x - self.position;
        Complex64::from_polar(
            libm::exp(-0.5 * d.norm_squared() / epsilon),
            (self.action + self.momentum.dot(&d)) / epsilon,
        )
    }
}

impl<const M: usize> From<&TrajectoryRecord<M>> for GaussianKernel<M> {
    fn from(record: &TrajectoryRecord<M>) -> Self {
        let s = &record.final_state;
        Self {
            position: s.position,
            momentum: s.momentum,
            action: s.action,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(hops: usize) -> Self {
        if hops % 2 == 0 {
            Self::Even
        } else {
            Self::Odd
        }
    }

    /// Component the sample is routed to.
    pub fn surface(self) -> Surface {
        match self {
            Self::Even => Surface::Zero,
            Self::Odd => Surface::One,
        }
    }
}

/// The x-independent factor of a record's sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryWeight {
    pub value: Complex64,
    pub parity: Parity,
}

/// `(-i)^n ∏ c_j (δ/ε)/λ_j · (A_t/|A0|) · exp(∫λ)`.
///
/// For the standard rate `(δ/ε)/λ_j = 1/|c_j|`, and the unit phases
/// `c_j/|c_j|` are used directly.
pub fn trajectory_weight<const M: usize>(
    record: &TrajectoryRecord<M>,
    delta: f64,
    epsilon: f64,
) -> Result<TrajectoryWeight> {
    let a0 = record.initial_amplitude.norm();
    if !(a0 > 0.0) {
        return Err(Error::DegenerateWeight);
    }
    let mut product = Complex64::new(1.0, 0.0);
    for hop in &record.hops {
        let factor = match record.rate_model {
            RateModel::Standard => hop.coupling / hop.coupling.norm(),
            RateModel::GapModified => hop.coupling * (delta / epsilon / hop.rate),
        };
        product *= factor;
    }
    let n = record.hops.len();
    let minus_i_pow = match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    };
    let value = minus_i_pow * product * (record.final_state.amplitude / a0) * libm::exp(record.rate_integral);
    Ok(TrajectoryWeight {
        value,
        parity: Parity::of(n),
    })
}

/// Uniform grid on `[lower, upper)^M` with nodes `lower + j (upper - lower)/points`.
///
/// The right endpoint is excluded so the same nodes serve the periodic
/// spectral solver. Axis 0 varies fastest in the flat storage order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<const M: usize> {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl<const M: usize> GridSpec<M> {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::InvalidParameter {
                name: "grid.upper",
                value: upper,
            });
        }
        if points < 2 {
            return Err(Error::InvalidParameter {
                name: "grid.points",
                value: points as f64,
            });
        }
        Ok(Self { lower, upper, points })
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / self.points as f64
    }

    pub fn coordinate(&self, j: usize) -> f64 {
        self.lower + j as f64 * self.spacing()
    }

    pub fn len(&self) -> usize {
        self.points.pow(M as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, index: usize) -> Point<M> {
        let mut rest = index;
        Point::<M>::from_fn(|_, _| {
            let j = rest % self.points;
            rest /= self.points;
            self.coordinate(j)
        })
    }

    /// Volume element `Δx^M`.
    pub fn cell_volume(&self) -> f64 {
        libm::pow(self.spacing(), M as f64)
    }

    /// Calls `f(flat index, node)` for every node with `|x - center| ≤ radius`.
    pub fn for_each_in_ball<F>(&self, center: &Point<M>, radius: f64, mut f: F)
    where
        F: FnMut(usize, &Point<M>),
    {
        let h = self.spacing();
        let mut lo = [0usize; M];
        let mut hi = [0usize; M];
        for k in 0..M {
            let a = libm::ceil((center[k] - radius - self.lower) / h).max(0.0);
            let b = libm::floor((center[k] + radius - self.lower) / h).min(self.points as f64 - 1.0);
            if b < a {
                return;
            }
            lo[k] = a as usize;
            hi[k] = b as usize;
        }
        let r2 = radius * radius;
        let mut digits = lo;
        'outer: loop {
            let mut x = Point::<M>::zeros();
            let mut index = 0;
            let mut stride = 1;
            for k in 0..M {
                x[k] = self.coordinate(digits[k]);
                index += digits[k] * stride;
                stride *= self.points;
            }
            if (x - center).norm_squared() <= r2 {
                f(index, &x);
            }
            for k in 0..M {
                digits[k] += 1;
                if digits[k] <= hi[k] {
                    continue 'outer;
                }
                digits[k] = lo[k];
            }
            break;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Zero,
    One,
    Both,
}

/// Both wave-function components on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunctionGrid<const M: usize> {
    pub spec: GridSpec<M>,
    pub epsilon: f64,
    pub components: [Vec<Complex64>; 2],
}

impl<const M: usize> WaveFunctionGrid<M> {
    pub fn zeros(spec: GridSpec<M>, epsilon: f64) -> Self {
        let n = spec.len();
        Self {
            spec,
            epsilon,
            components: [vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]],
        }
    }

    /// Samples `f(surface, x)` at every node.
    pub fn from_fn<F>(spec: GridSpec<M>, epsilon: f64, mut f: F) -> Self
    where
        F: FnMut(Surface, &Point<M>) -> Complex64,
    {
        let mut grid = Self::zeros(spec, epsilon);
        for (i, surface) in [Surface::Zero, Surface::One].into_iter().enumerate() {
            for (j, v) in grid.components[i].iter_mut().enumerate() {
                *v = f(surface, &spec.node(j));
            }
        }
        grid
    }

    pub fn component(&self, surface: Surface) -> &[Complex64] {
        &self.components[surface.index()]
    }

    pub fn component_mut(&mut self, surface: Surface) -> &mut [Complex64] {
        &mut self.components[surface.index()]
    }

    fn compatible(&self, other: &Self) -> bool {
        self.spec == other.spec && self.epsilon == other.epsilon
    }

    /// `self + other` on identical grids.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.compatible(other) {
            return Err(Error::GridMismatch);
        }
        let mut out = self.clone();
        for i in 0..2 {
            for (a, b) in out.components[i].iter_mut().zip(&other.components[i]) {
                *a += b;
            }
        }
        Ok(out)
    }
}

/// Discrete `L²` norm, `(Δx^M Σ |u|²)^{1/2}`.
pub fn l2_norm<const M: usize>(grid: &WaveFunctionGrid<M>, component: Component) -> f64 {
    let sum = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let total = match component {
        Component::Zero => sum(&grid.components[0]),
        Component::One => sum(&grid.components[1]),
        Component::Both => sum(&grid.components[0]) + sum(&grid.components[1]),
    };
    libm::sqrt(total * grid.spec.cell_volume())
}

/// `‖a - b‖` over both components, optionally relative to `‖b‖`.
pub fn l2_error<const M: usize>(a: &WaveFunctionGrid<M>, b: &WaveFunctionGrid<M>, relative: bool) -> Result<f64> {
    l2_error_component(a, b, Component::Both, relative)
}

pub fn l2_error_component<const M: usize>(
    a: &WaveFunctionGrid<M>,
    b: &WaveFunctionGrid<M>,
    component: Component,
    relative: bool,
) -> Result<f64> {
    if !a.compatible(b) {
        return Err(Error::GridMismatch);
    }
    let mut diff = a.clone();
    for i in 0..2 {
        for (x, y) in diff.components[i].iter_mut().zip(&b.components[i]) {
            *x -= y;
        }
    }
    let err = l2_norm(&diff, component);
    if !relative {
        return Ok(err);
    }
    let norm = l2_norm(b, component);
    if norm > 0.0 {
        Ok(err / norm)
    } else {
        Err(Error::ZeroNorm)
    }
}

/// `R = ‖u1(T)‖² / ‖u0(0)‖²`, with `initial_norm = ‖u0(0)‖`.
pub fn transition_rate<const M: usize>(final_grid: &WaveFunctionGrid<M>, initial_norm: f64) -> f64 {
    let n1 = l2_norm(final_grid, Component::One);
    n1 * n1 / (initial_norm * initial_norm)
}

/// Per-node count, mean and sum of squared deviations for both components.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator<const M: usize> {
    spec: GridSpec<M>,
    epsilon: f64,
    count: u64,
    mean: [Vec<Complex64>; 2],
    m2: [Vec<f64>; 2],
}

impl<const M: usize> MomentAccumulator<M> {
    pub fn new(spec: GridSpec<M>, epsilon: f64) -> Self {
        let n = spec.len();
        Self {
            spec,
            epsilon,
            count: 0,
            mean: [vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]],
            m2: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Folds in `other` with the pairwise (Chan et al.) update.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.spec != other.spec || self.epsilon != other.epsilon {
            return Err(Error::GridMismatch);
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..2 {
            for j in 0..self.mean[i].len() {
                let d = other.mean[i][j] - self.mean[i][j];
                self.mean[i][j] += d * (nb / n);
                self.m2[i][j] += other.m2[i][j] + d.norm_sqr() * (na * nb / n);
            }
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> WaveFunctionGrid<M> {
        WaveFunctionGrid {
            spec: self.spec,
            epsilon: self.epsilon,
            components: self.mean.clone(),
        }
    }

    /// Standard error of the mean at each node, `sqrt(M2 / (n(n-1)))`.
    pub fn standard_error(&self) -> [Vec<f64>; 2] {
        let n = self.count as f64;
        let scale = if self.count < 2 { 0.0 } else { 1.0 / (n * (n - 1.0)) };
        [0, 1].map(|i| self.m2[i].iter().map(|m| libm::sqrt(m.max(0.0) * scale)).collect())
    }
}

/// Raw sums over one batch of records; sparse deposition keeps the cost
/// proportional to the bump size.
#[derive(Debug, Clone)]
struct BatchSums<const M: usize> {
    count: u64,
    sum: [Vec<Complex64>; 2],
    sum_sq: [Vec<f64>; 2],
}

impl<const M: usize> BatchSums<M> {
    fn new(len: usize) -> Self {
        Self {
            count: 0,
            sum: [vec![Complex64::new(0.0, 0.0); len], vec![Complex64::new(0.0, 0.0); len]],
            sum_sq: [vec![0.0; len], vec![0.0; len]],
        }
    }

    fn into_moments(self, spec: GridSpec<M>, epsilon: f64) -> MomentAccumulator<M> {
        let n = self.count as f64;
        let mut acc = MomentAccumulator::new(spec, epsilon);
        acc.count = self.count;
        if self.count == 0 {
            return acc;
        }
        for i in 0..2 {
            for j in 0..self.sum[i].len() {
                let mean = self.sum[i][j] / n;
                acc.mean[i][j] = mean;
                acc.m2[i][j] = (self.sum_sq[i][j] - n * mean.norm_sqr()).max(0.0);
            }
        }
        acc
    }
}

/// Deposits `coefficient · exp(iΘ/ε)` of `kernel` into `values`.
pub fn deposit_bump<const M: usize>(
    values: &mut [Complex64],
    spec: &GridSpec<M>,
    epsilon: f64,
    kernel: &GaussianKernel<M>,
    coefficient: Complex64,
) {
    let radius = BUMP_RADIUS * libm::sqrt(epsilon);
    spec.for_each_in_ball(&kernel.position, radius, |j, x| {
        values[j] += coefficient * kernel.evaluate(x, epsilon);
    });
}

/// Monte Carlo estimate with per-node standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleEstimate<const M: usize> {
    pub mean: WaveFunctionGrid<M>,
    pub standard_error: [Vec<f64>; 2],
    pub samples: u64,
    pub total_hops: u64,
}

impl<const M: usize> EnsembleEstimate<M> {
    /// `L²` norm of the standard-error field of one component.
    pub fn standard_error_norm(&self, component: Component) -> f64 {
        let sum = |v: &[f64]| v.iter().map(|s| s * s).sum::<f64>();
        let total = match component {
            Component::Zero => sum(&self.standard_error[0]),
            Component::One => sum(&self.standard_error[1]),
            Component::Both => sum(&self.standard_error[0]) + sum(&self.standard_error[1]),
        };
        libm::sqrt(total * self.mean.spec.cell_volume())
    }
}

/// Streaming reconstruction. Records are added in batches; each batch is
/// reduced to moments and merged in call order, so the result depends only
/// on the batch partition, not on who computed the batches.
#[derive(Debug, Clone)]
pub struct EnsembleEstimator<const M: usize> {
    normalization: f64,
    delta: f64,
    max_hops: Option<usize>,
    moments: MomentAccumulator<M>,
    total_hops: u64,
}

impl<const M: usize> EnsembleEstimator<M> {
    pub fn new(spec: GridSpec<M>, epsilon: f64, normalization: f64, delta: f64) -> Self {
        Self {
            normalization,
            delta,
            max_hops: None,
            moments: MomentAccumulator::new(spec, epsilon),
            total_hops: 0,
        }
    }

    /// Records with more than `max_hops` hops still count as samples but
    /// contribute zero: the estimator of the series truncated at `max_hops`.
    pub fn truncated(mut self, max_hops: usize) -> Self {
        self.max_hops = Some(max_hops);
        self
    }

    pub fn spec(&self) -> &GridSpec<M> {
        &self.moments.spec
    }

    pub fn epsilon(&self) -> f64 {
        self.moments.epsilon
    }

    /// Reduces one batch to moments without touching the estimator.
    pub fn batch_moments(&self, records: &[TrajectoryRecord<M>]) -> Result<(MomentAccumulator<M>, u64)> {
        let spec = self.moments.spec;
        let epsilon = self.moments.epsilon;
        let radius = BUMP_RADIUS * libm::sqrt(epsilon);
        let mut sums = BatchSums::<M>::new(spec.len());
        let mut hops = 0u64;
        for record in records {
            sums.count += 1;
            hops += record.hops.len() as u64;
            if self.max_hops.is_some_and(|m| record.hops.len() > m) {
                continue;
            }
            let weight = trajectory_weight(record, self.delta, epsilon)?;
            let coefficient = weight.value * self.normalization;
            let kernel = GaussianKernel::from(record);
            let c = weight.parity.surface().index();
            let (sum, sum_sq) = (&mut sums.sum[c], &mut sums.sum_sq[c]);
            spec.for_each_in_ball(&kernel.position, radius, |j, x| {
                let v = coefficient * kernel.evaluate(x, epsilon);
                sum[j] += v;
                sum_sq[j] += v.norm_sqr();
            });
        }
        Ok((sums.into_moments(spec, epsilon), hops))
    }

    pub fn merge_batch(&mut self, batch: &MomentAccumulator<M>, hops: u64) -> Result<()> {
        self.moments.merge(batch)?;
        self.total_hops += hops;
        Ok(())
    }

    pub fn add_batch(&mut self, records: &[TrajectoryRecord<M>]) -> Result<()> {
        let (batch, hops) = self.batch_moments(records)?;
        self.merge_batch(&batch, hops)
    }

    pub fn samples(&self) -> u64 {
        self.moments.count
    }

    pub fn finish(&self) -> Result<EnsembleEstimate<M>> {
        if self.moments.count == 0 {
            return Err(Error::EmptyEnsemble);
        }
        Ok(EnsembleEstimate {
            mean: self.moments.mean(),
            standard_error: self.moments.standard_error(),
            samples: self.moments.count,
            total_hops: self.total_hops,
        })
    }
}

/// One-shot reconstruction of `records` as a single batch.
pub fn reconstruct<const M: usize>(
    records: &[TrajectoryRecord<M>],
    spec: GridSpec<M>,
    normalization: f64,
    delta: f64,
    epsilon: f64,
) -> Result<EnsembleEstimate<M>> {
    if records.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut estimator = EnsembleEstimator::new(spec, epsilon, normalization, delta);
    estimator.add_batch(records)?;
    estimator.finish()
}
