//! Strang-split Fourier pseudo-spectral solver for the two-level equation
//! in one dimension, used as the reference for every accuracy check.
//!
//! Each step applies `e^{-iτK/2ε} e^{-iτV/ε} e^{-iτK/2ε}` with the kinetic
//! factor diagonal in Fourier space and the potential factor an exact
//! pointwise 2×2 unitary. Consecutive half kinetic steps are fused.

use std::f64::consts::PI;
use std::sync::Arc;

use fgash_core::potentials::{DiabaticPotential, Surface};
use fgash_core::reconstruction::{GridSpec, WaveFunctionGrid};
use fgash_core::{Complex64, Point};
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Fraction of the mass allowed within `10√ε` of the boundary.
pub const ALIASING_TOLERANCE: f64 = 1e-8;

// Below this rotation angle the 2×2 exponential uses its Taylor expansion.
const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("spectral grid needs a power-of-two number of points, got {0}")]
    NotPowerOfTwo(usize),
    #[error("invalid reference parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error(
        "{fraction:e} of the mass is within 10√ε of the boundary at t = {time}; \
         enlarge the domain"
    )]
    Aliasing { time: f64, fraction: f64 },
}

/// Periodic grid with its Fourier wavenumbers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    pub spec: GridSpec<1>,
    pub epsilon: f64,
    wavenumbers: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(spec: GridSpec<1>, epsilon: f64) -> Result<Self, ReferenceError> {
        if !spec.points.is_power_of_two() {
            return Err(ReferenceError::NotPowerOfTwo(spec.points));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(ReferenceError::InvalidParameter {
                name: "epsilon",
                value: epsilon,
            });
        }
        let n = spec.points;
        let scale = 2.0 * PI / (spec.upper - spec.lower);
        let wavenumbers = (0..n)
            .map(|j| {
                let signed = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
                signed * scale
            })
            .collect();
        Ok(Self {
            spec,
            epsilon,
            wavenumbers,
        })
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Smallest power-of-two grid on `[lower, upper)` with `Δx ≤ max_spacing`.
    pub fn with_spacing(lower: f64, upper: f64, max_spacing: f64, epsilon: f64) -> Result<Self, ReferenceError> {
        let needed = ((upper - lower) / max_spacing).ceil().max(2.0) as usize;
        let spec =
            GridSpec::new(lower, upper, needed.next_power_of_two()).map_err(|_| ReferenceError::InvalidParameter {
                name: "domain",
                value: upper - lower,
            })?;
        Self::new(spec, epsilon)
    }

    /// Fraction of the total mass on nodes within `10√ε` of either end.
    pub fn boundary_fraction(&self, u: &WaveFunctionGrid<1>) -> f64 {
        let margin = 10.0 * self.epsilon.sqrt();
        let (mut edge, mut total) = (0.0, 0.0);
        for j in 0..self.spec.points {
            let x = self.spec.coordinate(j);
            let mass = u.components[0][j].norm_sqr() + u.components[1][j].norm_sqr();
            total += mass;
            if x - self.spec.lower < margin || self.spec.upper - x < margin {
                edge += mass;
            }
        }
        if total > 0.0 {
            edge / total
        } else {
            0.0
        }
    }
}

/// `exp(-iτH/ε)` for the Hermitian `H = [[v00, c], [conj(c), v11]]`.
///
/// Writing `H = a I + d·σ` with `d = (Re c, -Im c, (v00 - v11)/2)` gives
/// `e^{-iτa/ε} (cos θ I - i sin θ d·σ/|d|)`, `θ = τ|d|/ε`.
pub fn potential_propagator(v00: f64, v11: f64, c: Complex64, tau: f64, epsilon: f64) -> [[Complex64; 2]; 2] {
    let mean = 0.5 * (v00 + v11);
    let dz = 0.5 * (v00 - v11);
    let norm = (c.norm_sqr() + dz * dz).sqrt();
    let theta = tau * norm / epsilon;
    // s = sin θ / |d|
    let (cos, s) = if theta.abs() < SMALL_ANGLE {
        (1.0 - 0.5 * theta * theta, tau / epsilon * (1.0 - theta * theta / 6.0))
    } else {
        (theta.cos(), theta.sin() / norm)
    };
    let phase = Complex64::from_polar(1.0, -tau * mean / epsilon);
    let i = Complex64::new(0.0, 1.0);
    [
        [phase * (cos - i * s * dz), phase * (-i * s * c)],
        [phase * (-i * s * c.conj()), phase * (cos + i * s * dz)],
    ]
}

fn potential_factors<P>(grid: &SpectralGrid, potential: &P, delta: f64, tau: f64) -> Vec<[[Complex64; 2]; 2]>
where
    P: DiabaticPotential<1> + ?Sized,
{
    (0..grid.spec.points)
        .map(|j| {
            let x = Point::<1>::new(grid.spec.coordinate(j));
            potential_propagator(
                potential.diagonal(Surface::Zero, &x),
                potential.diagonal(Surface::One, &x),
                potential.coupling(&x) * delta,
                tau,
                grid.epsilon,
            )
        })
        .collect()
}

/// Applies `exp(-iτV/ε)` pointwise, including the `δ V01` coupling.
pub fn potential_step<P>(u: &mut WaveFunctionGrid<1>, grid: &SpectralGrid, potential: &P, delta: f64, tau: f64)
where
    P: DiabaticPotential<1> + ?Sized,
{
    apply_factors(u, &potential_factors(grid, potential, delta, tau));
}

fn apply_factors(u: &mut WaveFunctionGrid<1>, factors: &[[[Complex64; 2]; 2]]) {
    let [u0, u1] = &mut u.components;
    for ((a, b), m) in u0.iter_mut().zip(u1.iter_mut()).zip(factors) {
        let (x, y) = (*a, *b);
        *a = m[0][0] * x + m[0][1] * y;
        *b = m[1][0] * x + m[1][1] * y;
    }
}

/// FFT plans and scratch for repeated kinetic steps on one grid.
pub struct KineticPropagator {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    wavenumbers: Vec<f64>,
    epsilon: f64,
}

impl KineticPropagator {
    pub fn new(grid: &SpectralGrid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.spec.points;
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); len],
            wavenumbers: grid.wavenumbers.clone(),
            epsilon: grid.epsilon,
        }
    }

    pub fn phases(&self, tau: f64) -> Vec<Complex64> {
        let n = self.wavenumbers.len() as f64;
        self.wavenumbers
            .iter()
            .map(|k| Complex64::from_polar(1.0 / n, -tau * self.epsilon * k * k / 2.0))
            .collect()
    }

    /// Multiplies every Fourier mode by `phases` (which carry the `1/n`).
    pub fn apply(&mut self, u: &mut WaveFunctionGrid<1>, phases: &[Complex64]) {
        for component in &mut u.components {
            self.forward.process_with_scratch(component, &mut self.scratch);
            for (v, p) in component.iter_mut().zip(phases) {
                *v *= p;
            }
            self.inverse.process_with_scratch(component, &mut self.scratch);
        }
    }

    /// Free evolution `exp(iτε∂²/2)` over `τ`.
    pub fn step(&mut self, u: &mut WaveFunctionGrid<1>, tau: f64) {
        let phases = self.phases(tau);
        self.apply(u, &phases);
    }
}

/// Applies the free evolution over `τ` to both components.
pub fn kinetic_step(u: &mut WaveFunctionGrid<1>, grid: &SpectralGrid, tau: f64) {
    KineticPropagator::new(grid).step(u, tau);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceParams {
    pub delta: f64,
    /// May be negative to run backwards.
    pub final_time: f64,
    pub dt: f64,
    /// Fail when mass reaches the boundary layer.
    pub aliasing_guard: bool,
}

impl ReferenceParams {
    /// `dt = ε/32` with the aliasing guard on.
    pub fn new(epsilon: f64, delta: f64, final_time: f64) -> Self {
        Self {
            delta,
            final_time,
            dt: epsilon / 32.0,
            aliasing_guard: true,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// Strang splitting from `u_in` over `params.final_time`.
pub fn solve<P>(
    u_in: &WaveFunctionGrid<1>,
    grid: &SpectralGrid,
    potential: &P,
    params: &ReferenceParams,
) -> Result<WaveFunctionGrid<1>, ReferenceError>
where
    P: DiabaticPotential<1> + ?Sized,
{
    if u_in.spec != grid.spec || u_in.epsilon != grid.epsilon {
        return Err(ReferenceError::InvalidParameter {
            name: "grid",
            value: u_in.spec.points as f64,
        });
    }
    if !(params.dt > 0.0 && params.dt.is_finite()) {
        return Err(ReferenceError::InvalidParameter {
            name: "dt",
            value: params.dt,
        });
    }
    if !params.final_time.is_finite() || !(params.delta >= 0.0) {
        return Err(ReferenceError::InvalidParameter {
            name: "final_time",
            value: params.final_time,
        });
    }
    let mut u = u_in.clone();
    let guard = |u: &WaveFunctionGrid<1>, time: f64| -> Result<(), ReferenceError> {
        if !params.aliasing_guard {
            return Ok(());
        }
        let fraction = grid.boundary_fraction(u);
        if fraction >= ALIASING_TOLERANCE {
            return Err(ReferenceError::Aliasing { time, fraction });
        }
        Ok(())
    };
    guard(&u, 0.0)?;

    let sign = params.final_time.signum();
    let span = params.final_time.abs();
    let steps = (span / params.dt - 1e-9).ceil().max(0.0) as usize;
    if steps == 0 {
        return Ok(u);
    }
    let full = sign * params.dt;
    let last = params.final_time - full * (steps - 1) as f64;

    let mut kinetic = KineticPropagator::new(grid);
    let full_potential = potential_factors(grid, potential, params.delta, full);
    let half_kinetic = kinetic.phases(0.5 * full);
    let full_kinetic = kinetic.phases(full);
    let check_every = (steps / 64).max(1);

    if steps == 1 {
        kinetic.step(&mut u, 0.5 * last);
    } else {
        kinetic.apply(&mut u, &half_kinetic);
    }
    for k in 0..steps {
        let is_last = k + 1 == steps;
        if is_last && last != full {
            apply_factors(&mut u, &potential_factors(grid, potential, params.delta, last));
            kinetic.step(&mut u, 0.5 * last);
        } else {
            apply_factors(&mut u, &full_potential);
            if is_last {
                kinetic.apply(&mut u, &half_kinetic);
            } else if k + 2 == steps && last != full {
                kinetic.step(&mut u, 0.5 * (full + last));
            } else {
                kinetic.apply(&mut u, &full_kinetic);
            }
        }
        if is_last || (k + 1) % check_every == 0 {
            guard(&u, full * (k + 1) as f64)?;
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fgash_core::initial_data::GaussianWavePacket;
    use fgash_core::potentials::{BuiltinModel, FlatSurfaces};
    use fgash_core::reconstruction::{l2_error, l2_norm, Component};
    use nalgebra::{Matrix2, SymmetricEigen};
    use rand::{Rng, SeedableRng};

    fn example1_grid() -> (SpectralGrid, WaveFunctionGrid<1>) {
        let eps = 0.04;
        let grid = SpectralGrid::new(GridSpec::new(-8.0, 8.0, 2048).unwrap(), eps).unwrap();
        let packet = GaussianWavePacket::new(12.5, Point::<1>::new(-1.5), Point::<1>::new(2.0)).unwrap();
        let u = WaveFunctionGrid::from_fn(grid.spec, eps, |s, x| match s {
            Surface::Zero => packet.evaluate(x, eps),
            Surface::One => Complex64::new(0.0, 0.0),
        });
        (grid, u)
    }

    fn eigen_propagator(h: Matrix2<Complex64>, tau: f64, eps: f64) -> Matrix2<Complex64> {
        let eig = SymmetricEigen::new(h);
        let phases = eig.eigenvalues.map(|l| Complex64::from_polar(1.0, -tau * l / eps));
        eig.eigenvectors * Matrix2::from_diagonal(&phases) * eig.eigenvectors.adjoint()
    }

    #[test]
    fn propagator_special_cases() {
        let zero = potential_propagator(0.0, 0.0, Complex64::new(0.0, 0.0), 0.3, 0.1);
        assert_eq!(zero[0][0], Complex64::new(1.0, 0.0));
        assert_eq!(zero[0][1], Complex64::new(0.0, 0.0));
        let theta = 0.7;
        let diag = potential_propagator(1.0, -1.0, Complex64::new(0.0, 0.0), theta * 0.1, 0.1);
        assert!((diag[0][0] - Complex64::from_polar(1.0, -theta)).norm() < 1e-15);
        assert!((diag[1][1] - Complex64::from_polar(1.0, theta)).norm() < 1e-15);
        assert_eq!(diag[1][0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn propagator_matches_eigendecomposition() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v00 = rng.random_range(-2.0..2.0);
            let v11 = rng.random_range(-2.0..2.0);
            let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let tau = rng.random_range(-0.5..0.5);
            let eps = rng.random_range(0.01..0.2);
            let m = potential_propagator(v00, v11, c, tau, eps);
            let h = Matrix2::new(Complex64::new(v00, 0.0), c, c.conj(), Complex64::new(v11, 0.0));
            let oracle = eigen_propagator(h, tau, eps);
            for r in 0..2 {
                for s in 0..2 {
                    assert!((m[r][s] - oracle[(r, s)]).norm() < 1e-12, "{:?} vs {}", m, oracle);
                }
            }
        }
    }

    #[test]
    fn propagator_small_angle_branch_is_continuous() {
        let c = Complex64::new(3e-10, -1e-10);
        let a = potential_propagator(0.2, 0.2 + 1e-10, c, 0.01, 0.04);
        let h = Matrix2::new(Complex64::new(0.2, 0.0), c, c.conj(), Complex64::new(0.2 + 1e-10, 0.0));
        let oracle = eigen_propagator(h, 0.01, 0.04);
        for r in 0..2 {
            for s in 0..2 {
                assert!((a[r][s] - oracle[(r, s)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn wavenumbers_and_grid_checks() {
        assert_eq!(
            SpectralGrid::new(GridSpec::new(0.0, 1.0, 100).unwrap(), 0.1),
            Err(ReferenceError::NotPowerOfTwo(100))
        );
        let g = SpectralGrid::new(GridSpec::new(0.0, 2.0 * PI, 8).unwrap(), 0.1).unwrap();
        assert_eq!(g.wavenumbers(), &[0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
        let g = SpectralGrid::with_spacing(-8.0, 8.0, 0.01, 0.04).unwrap();
        assert_eq!(g.spec.points, 2048);
    }

    #[test]
    fn kinetic_identity_and_plane_wave() {
        let (grid, u) = example1_grid();
        let mut v = u.clone();
        kinetic_step(&mut v, &grid, 0.0);
        assert!(l2_error(&v, &u, true).unwrap() <= 1e-13);

        let k = grid.wavenumbers()[37];
        let wave = WaveFunctionGrid::from_fn(grid.spec, grid.epsilon, |_, x| Complex64::from_polar(1.0, k * x[0]));
        let mut w = wave.clone();
        let tau = 0.3;
        kinetic_step(&mut w, &grid, tau);
        let phase = Complex64::from_polar(1.0, -tau * grid.epsilon * k * k / 2.0);
        for (a, b) in w.components[0].iter().zip(&wave.components[0]) {
            assert!((a - b * phase).norm() < 1e-12);
        }
    }

    #[test]
    fn free_gaussian_dispersion() {
        let (grid, u) = example1_grid();
        let eps = grid.epsilon;
        let (alpha, mu, p) = (12.5, -1.5, 2.0);
        let t = 1.0;
        let mut v = u.clone();
        kinetic_step(&mut v, &grid, t);
        let exact = WaveFunctionGrid::from_fn(grid.spec, eps, |s, x| {
            if s == Surface::One {
                return Complex64::new(0.0, 0.0);
            }
            let spread = Complex64::new(1.0, 2.0 * alpha * eps * t);
            let y = x[0] - mu;
            let shifted = y - p * t;
            (-(alpha * shifted * shifted) / spread + Complex64::new(0.0, p * y / eps - p * p * t / (2.0 * eps))).exp()
                / spread.sqrt()
        });
        assert!(l2_error(&v, &exact, false).unwrap() < 1e-8);
    }

    #[test]
    fn decoupled_system_keeps_upper_component_zero() {
        let (grid, u) = example1_grid();
        let params = ReferenceParams::new(grid.epsilon, 0.0, 0.5);
        let v = solve(&u, &grid, &BuiltinModel::SimpleCrossing, &params).unwrap();
        assert!(v.components[1].iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn solve_is_unitary_and_reversible() {
        let (grid, u) = example1_grid();
        let model = BuiltinModel::SimpleCrossing;
        let params = ReferenceParams::new(grid.epsilon, 0.04, 1.2);
        let v = solve(&u, &grid, &model, &params).unwrap();
        let n0 = l2_norm(&u, Component::Both);
        assert!((l2_norm(&v, Component::Both) - n0).abs() <= 1e-10 * n0);
        assert!(l2_norm(&v, Component::One) > 0.0);

        let back = solve(
            &v,
            &grid,
            &model,
            &ReferenceParams {
                final_time: -1.2,
                ..params
            },
        )
        .unwrap();
        assert!(l2_error(&back, &u, false).unwrap() < 1e-8);
    }

    #[test]
    fn partial_last_step_reaches_final_time() {
        // a flat potential with different levels only rotates phases
        let (grid, u) = example1_grid();
        let pot = FlatSurfaces {
            levels: [0.3, 0.0],
            coupling: Complex64::new(0.0, 0.0),
        };
        let params = ReferenceParams::new(grid.epsilon, 0.0, 0.1).with_dt(0.03);
        let v = solve(&u, &grid, &pot, &params).unwrap();
        let mut w = u.clone();
        kinetic_step(&mut w, &grid, 0.1);
        let phase = Complex64::from_polar(1.0, -0.3 * 0.1 / grid.epsilon);
        for (a, b) in v.components[0].iter().zip(&w.components[0]) {
            assert!((a - b * phase).norm() < 1e-12);
        }
    }

    #[test]
    fn strang_is_second_order() {
        let (grid, u) = example1_grid();
        let model = BuiltinModel::SimpleCrossing;
        let base = ReferenceParams::new(grid.epsilon, 0.04, 1.2);
        let run = |dt: f64| solve(&u, &grid, &model, &base.with_dt(dt)).unwrap();
        let dt = grid.epsilon / 32.0;
        let fine = run(dt / 8.0);
        let ratio = l2_error(&run(dt), &fine, false).unwrap() / l2_error(&run(dt / 2.0), &fine, false).unwrap();
        assert!((3.4..=4.6).contains(&ratio), "{ratio}");
    }

    #[test]
    fn spatially_resolved() {
        let eps = 0.04;
        let model = BuiltinModel::SimpleCrossing;
        let packet = GaussianWavePacket::new(12.5, Point::<1>::new(-1.5), Point::<1>::new(2.0)).unwrap();
        let run = |n: usize| {
            let grid = SpectralGrid::new(GridSpec::new(-8.0, 8.0, n).unwrap(), eps).unwrap();
            let u = WaveFunctionGrid::from_fn(grid.spec, eps, |s, x| match s {
                Surface::Zero => packet.evaluate(x, eps),
                Surface::One => Complex64::new(0.0, 0.0),
            });
            solve(&u, &grid, &model, &ReferenceParams::new(eps, 0.04, 1.2)).unwrap()
        };
        let coarse = run(2048);
        let fine = run(4096);
        let dx = coarse.spec.spacing();
        let mut sum = 0.0;
        for c in 0..2 {
            for j in 0..2048 {
                sum += (coarse.components[c][j] - fine.components[c][2 * j]).norm_sqr();
            }
        }
        assert!((sum * dx).sqrt() < 1e-8);
    }

    #[test]
    fn aliasing_guard_trips_near_boundary() {
        let eps = 0.04;
        let grid = SpectralGrid::new(GridSpec::new(-2.0, 2.0, 512).unwrap(), eps).unwrap();
        let packet = GaussianWavePacket::new(12.5, Point::<1>::new(0.0), Point::<1>::new(2.0)).unwrap();
        let u = WaveFunctionGrid::from_fn(grid.spec, eps, |s, x| match s {
            Surface::Zero => packet.evaluate(x, eps),
            Surface::One => Complex64::new(0.0, 0.0),
        });
        let params = ReferenceParams::new(eps, 0.0, 1.0);
        assert!(matches!(
            solve(&u, &grid, &BuiltinModel::SimpleCrossing, &params),
            Err(ReferenceError::Aliasing { .. })
        ));
        let unguarded = ReferenceParams {
            aliasing_guard: false,
            ..params
        };
        assert!(solve(&u, &grid, &BuiltinModel::SimpleCrossing, &unguarded).is_ok());
    }
}
