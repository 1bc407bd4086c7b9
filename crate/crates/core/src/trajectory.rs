//! Single-trajectory evolution: RK4 for `(Q, P, S, A, ∂zQ, ∂zP)` on the
//! current surface, interleaved with a per-step Bernoulli hop decision.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::initial_data::{check_epsilon, uniform, PhaseSpaceSampler};
use crate::potentials::{DiabaticPotential, Surface};
use crate::{Error, Point, Result, SMatrix};

/// Complex `M×M` matrix.
pub type CMatrix<const M: usize> = SMatrix<Complex64, M, M>;

/// `Z` counts as singular below this determinant modulus.
pub const SINGULAR_DET: f64 = 1e-12;

/// Default cap on the per-step hop probability `λΔt`.
pub const DEFAULT_PROBABILITY_CAP: f64 = 0.1;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryState<const M: usize> {
    pub time: f64,
    pub surface: Surface,
    pub position: Point<M>,
    pub momentum: Point<M>,
    pub action: f64,
    pub amplitude: Complex64,
    pub dz_q: CMatrix<M>,
    pub dz_p: CMatrix<M>,
}

impl<const M: usize> TrajectoryState<M> {
    /// `Z = ∂zQ + i ∂zP`.
    pub fn z(&self) -> CMatrix<M> {
        self.dz_q + self.dz_p * I
    }

    fn advanced(&self, h: f64, d: &TrajectoryDerivative<M>) -> Self {
        let hc = Complex64::new(h, 0.0);
        Self {
            time: self.time + h,
            surface: self.surface,
            position: self.position + d.position * h,
            momentum: self.momentum + d.momentum * h,
            action: self.action + d.action * h,
            amplitude: self.amplitude + d.amplitude * h,
            dz_q: self.dz_q + d.dz_q * hc,
            dz_p: self.dz_p + d.dz_p * hc,
        }
    }
}

/// Time derivative of every continuous field of a [`TrajectoryState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryDerivative<const M: usize> {
    pub position: Point<M>,
    pub momentum: Point<M>,
    pub action: f64,
    pub amplitude: Complex64,
    pub dz_q: CMatrix<M>,
    pub dz_p: CMatrix<M>,
}

impl<const M: usize> TrajectoryDerivative<M> {
    fn combine(k: [&Self; 4]) -> Self {
        let w = [1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
        let wc = w.map(|x| Complex64::new(x, 0.0));
        Self {
            position: k[0].position * w[0] + k[1].position * w[1] + k[2].position * w[2] + k[3].position * w[3],
            momentum: k[0].momentum * w[0] + k[1].momentum * w[1] + k[2].momentum * w[2] + k[3].momentum * w[3],
            action: k[0].action * w[0] + k[1].action * w[1] + k[2].action * w[2] + k[3].action * w[3],
            amplitude: k[0].amplitude * w[0] + k[1].amplitude * w[1] + k[2].amplitude * w[2] + k[3].amplitude * w[3],
            dz_q: k[0].dz_q * wc[0] + k[1].dz_q * wc[1] + k[2].dz_q * wc[2] + k[3].dz_q * wc[3],
            dz_p: k[0].dz_p * wc[0] + k[1].dz_p * wc[1] + k[2].dz_p * wc[2] + k[3].dz_p * wc[3],
        }
    }
}

/// `t = 0` on surface 0 with `S = 0`, `∂zQ = I`, `∂zP = -iI`, so `Z = 2I`.
pub fn initial_state<const M: usize>(q0: Point<M>, p0: Point<M>, a0: Complex64) -> TrajectoryState<M> {
    TrajectoryState {
        time: 0.0,
        surface: Surface::Zero,
        position: q0,
        momentum: p0,
        action: 0.0,
        amplitude: a0,
        dz_q: CMatrix::<M>::identity(),
        dz_p: CMatrix::<M>::identity() * -I,
    }
}

/// Right-hand side of the trajectory equations on `state.surface`, with
/// `H = ∇²V_ll(Q)`:
///
/// ```text
/// Q' = P    P' = -∇V    S' = |P|²/2 - V
/// A' = ½ A tr(Z⁻¹ (∂zP - i H ∂zQ))
/// (∂zQ)' = ∂zP    (∂zP)' = -H ∂zQ
/// ```
pub fn ode_rhs<const M: usize, P>(state: &TrajectoryState<M>, potential: &P) -> Result<TrajectoryDerivative<M>>
where
    P: DiabaticPotential<M> + ?Sized,
{
    let jet = potential.jet(state.surface, &state.position);
    let hessian = jet.hessian.map(|h| Complex64::new(h, 0.0));
    let h_dzq = hessian * state.dz_q;
    let (det, solved) = solve(state.z(), state.dz_p - h_dzq * I);
    if !(det.norm_sqr() > SINGULAR_DET * SINGULAR_DET) {
        return Err(Error::SingularZ {
            time: state.time,
            det: det.norm(),
        });
    }
    let trace = solved.trace();
    Ok(TrajectoryDerivative {
        position: state.momentum,
        momentum: -jet.gradient,
        action: 0.5 * state.momentum.norm_squared() - jet.value,
        amplitude: 0.5 * state.amplitude * trace,
        dz_q: state.dz_p,
        dz_p: -h_dzq,
    })
}

/// Gaussian elimination with partial pivoting: returns `det Z` and
/// `Z⁻¹ B`. When `Z` is singular the second value is meaningless.
fn solve<const M: usize>(mut z: CMatrix<M>, mut b: CMatrix<M>) -> (Complex64, CMatrix<M>) {
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..M {
        let pivot = (col..M)
            .max_by(|&i, &j| z[(i, col)].norm_sqr().total_cmp(&z[(j, col)].norm_sqr()))
            .unwrap_or(col);
        if pivot != col {
            z.swap_rows(pivot, col);
            b.swap_rows(pivot, col);
            det = -det;
        }
        let p = z[(col, col)];
        det *= p;
        if p.norm_sqr() == 0.0 {
            return (Complex64::new(0.0, 0.0), b);
        }
        for row in col + 1..M {
            let f = z[(row, col)] / p;
            for k in col..M {
                let v = z[(col, k)];
                z[(row, k)] -= f * v;
            }
            for k in 0..M {
                let v = b[(col, k)];
                b[(row, k)] -= f * v;
            }
        }
    }
    for col in (0..M).rev() {
        let p = z[(col, col)];
        for k in 0..M {
            let mut v = b[(col, k)];
            for j in col + 1..M {
                v -= z[(col, j)] * b[(j, k)];
            }
            b[(col, k)] = v / p;
        }
    }
    (det, b)
}

/// `det Z` of a state.
pub fn z_determinant<const M: usize>(state: &TrajectoryState<M>) -> Complex64 {
    solve(state.z(), CMatrix::<M>::identity()).0
}

/// One classical RK4 step on the current surface.
pub fn rk4_step<const M: usize, P>(state: &TrajectoryState<M>, dt: f64, potential: &P) -> Result<TrajectoryState<M>>
where
    P: DiabaticPotential<M> + ?Sized,
{
    let k1 = ode_rhs(state, potential)?;
    let k2 = ode_rhs(&state.advanced(0.5 * dt, &k1), potential)?;
    let k3 = ode_rhs(&state.advanced(0.5 * dt, &k2), potential)?;
    let k4 = ode_rhs(&state.advanced(dt, &k3), potential)?;
    let mut next = state.advanced(dt, &TrajectoryDerivative::combine([&k1, &k2, &k3, &k4]));
    next.time = state.time + dt;
    Ok(next)
}

/// `|P|²/2 + V_ll(Q)`.
pub fn classical_energy<const M: usize, P>(state: &TrajectoryState<M>, potential: &P) -> f64
where
    P: DiabaticPotential<M> + ?Sized,
{
    0.5 * state.momentum.norm_squared() + potential.diagonal(state.surface, &state.position)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateModel {
    /// `λ = (δ/ε)|V01|`.
    #[default]
    Standard,
    /// `λ = (δ/ε)|V01/(V00 - V11)|` where the gap exceeds 1, standard elsewhere.
    GapModified,
}

impl RateModel {
    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "standard" => Some(Self::Standard),
            "gap_modified" => Some(Self::GapModified),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::GapModified => "gap_modified",
        }
    }
}

/// Hop rate at `q`; symmetric in the two surfaces.
pub fn rate_at<const M: usize, P>(potential: &P, q: &Point<M>, delta: f64, epsilon: f64, model: RateModel) -> f64
where
    P: DiabaticPotential<M> + ?Sized,
{
    let base = delta / epsilon * potential.coupling(q).norm();
    match model {
        RateModel::Standard => base,
        RateModel::GapModified => {
            let gap = libm::fabs(potential.diagonal(Surface::Zero, q) - potential.diagonal(Surface::One, q));
            if gap > 1.0 {
                base / gap
            } else {
                base
            }
        }
    }
}

pub fn hop_rate<const M: usize, P>(
    state: &TrajectoryState<M>,
    potential: &P,
    delta: f64,
    epsilon: f64,
    model: RateModel,
) -> f64
where
    P: DiabaticPotential<M> + ?Sized,
{
    rate_at(potential, &state.position, delta, epsilon, model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopEvent {
    pub time: f64,
    pub from: Surface,
    pub to: Surface,
    /// `V_{to,from}(Q)` at the hop.
    pub coupling: Complex64,
    /// Rate `λ(Q)` that triggered the hop.
    pub rate: f64,
}

impl HopEvent {
    pub fn coupling_magnitude(&self) -> f64 {
        self.coupling.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord<const M: usize> {
    pub final_state: TrajectoryState<M>,
    pub hops: Vec<HopEvent>,
    /// `∫ λ(Q_s) ds`, left Riemann sum on the step grid.
    pub rate_integral: f64,
    pub initial_amplitude: Complex64,
    pub rate_model: RateModel,
    pub seed_tag: u64,
}

impl<const M: usize> TrajectoryRecord<M> {
    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }
}

/// Everything the engine needs besides the potential and the stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams {
    pub epsilon: f64,
    pub delta: f64,
    pub final_time: f64,
    pub dt: f64,
    pub rate_model: RateModel,
    pub probability_cap: f64,
}

impl PropagationParams {
    /// Standard rate, cap 0.1 and `dt = ε/10`.
    pub fn new(epsilon: f64, delta: f64, final_time: f64) -> Self {
        Self {
            epsilon,
            delta,
            final_time,
            dt: epsilon / 10.0,
            rate_model: RateModel::Standard,
            probability_cap: DEFAULT_PROBABILITY_CAP,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_rate_model(mut self, model: RateModel) -> Self {
        self.rate_model = model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        let checks = [
            ("delta", self.delta, self.delta >= 0.0 && self.delta.is_finite()),
            (
                "final_time",
                self.final_time,
                self.final_time >= 0.0 && self.final_time.is_finite(),
            ),
            ("dt", self.dt, self.dt > 0.0 && self.dt.is_finite()),
            (
                "probability_cap",
                self.probability_cap,
                self.probability_cap > 0.0 && self.probability_cap <= 1.0,
            ),
        ];
        for (name, value, ok) in checks {
            if !ok {
                return Err(Error::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    pub fn step_grid(&self) -> StepGrid {
        StepGrid::new(self.dt, self.final_time)
    }
}

/// Times `t_k = k·dt`, `k < n`, and `t_n = T`; the last step may be short.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepGrid {
    dt: f64,
    final_time: f64,
    steps: usize,
}

impl StepGrid {
    pub fn new(dt: f64, final_time: f64) -> Self {
        let steps = libm::ceil(final_time / dt - 1e-9).max(0.0) as usize;
        Self { dt, final_time, steps }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.final_time
        } else {
            k as f64 * self.dt
        }
    }

    pub fn step_length(&self, k: usize) -> f64 {
        self.time(k + 1) - self.time(k)
    }
}

/// Marches `state` deterministically from grid node `from` to node `to`
/// on its current surface.
pub fn advance_steps<const M: usize, P>(
    state: &TrajectoryState<M>,
    potential: &P,
    grid: &StepGrid,
    from: usize,
    to: usize,
) -> Result<TrajectoryState<M>>
where
    P: DiabaticPotential<M> + ?Sized,
{
    let mut current = *state;
    for k in from..to {
        current = rk4_step(&current, grid.step_length(k), potential)?;
        current.time = grid.time(k + 1);
    }
    Ok(current)
}

/// Step-by-step driver behind [`evolve_trajectory`]. Each step first
/// decides a hop at the step's start (which only flips the surface), then
/// integrates over the step.
#[derive(Debug, Clone)]
pub struct TrajectoryStepper<'a, const M: usize, P: ?Sized> {
    potential: &'a P,
    params: PropagationParams,
    grid: StepGrid,
    step: usize,
    state: TrajectoryState<M>,
    hops: Vec<HopEvent>,
    rate_integral: f64,
    initial_amplitude: Complex64,
}

impl<'a, const M: usize, P> TrajectoryStepper<'a, M, P>
where
    P: DiabaticPotential<M> + ?Sized,
{
    pub fn new(init: TrajectoryState<M>, params: &PropagationParams, potential: &'a P) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            potential,
            params: *params,
            grid: params.step_grid(),
            step: 0,
            state: init,
            hops: Vec::new(),
            rate_integral: 0.0,
            initial_amplitude: init.amplitude,
        })
    }

    pub fn state(&self) -> &TrajectoryState<M> {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.grid.steps()
    }

    /// Draws the step's uniform (only when the rate is positive) and flips
    /// the surface on a hop.
    pub fn decide_hop<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<Option<HopEvent>> {
        let p = &self.params;
        let tau = self.grid.step_length(self.step);
        let rate = hop_rate(&self.state, self.potential, p.delta, p.epsilon, p.rate_model);
        let probability = rate * tau;
        if probability > p.probability_cap {
            return Err(Error::StepSize {
                rate,
                dt: tau,
                probability,
                cap: p.probability_cap,
            });
        }
        self.rate_integral += probability;
        if probability <= 0.0 || uniform(rng) >= probability {
            return Ok(None);
        }
        let from = self.state.surface;
        let to = from.flip();
        let event = HopEvent {
            time: self.state.time,
            from,
            to,
            coupling: self.potential.transition_coupling(to, from, &self.state.position),
            rate,
        };
        self.state.surface = to;
        self.hops.push(event);
        Ok(Some(event))
    }

    pub fn advance(&mut self) -> Result<()> {
        let tau = self.grid.step_length(self.step);
        self.state = rk4_step(&self.state, tau, self.potential)?;
        self.step += 1;
        self.state.time = self.grid.time(self.step);
        Ok(())
    }

    pub fn finish(self, seed_tag: u64) -> TrajectoryRecord<M> {
        TrajectoryRecord {
            final_state: self.state,
            hops: self.hops,
            rate_integral: self.rate_integral,
            initial_amplitude: self.initial_amplitude,
            rate_model: self.params.rate_model,
            seed_tag,
        }
    }
}

/// Runs one trajectory from `init` to the final time.
pub fn evolve_trajectory<const M: usize, P, R>(
    init: TrajectoryState<M>,
    params: &PropagationParams,
    potential: &P,
    rng: &mut R,
    seed_tag: u64,
) -> Result<TrajectoryRecord<M>>
where
    P: DiabaticPotential<M> + ?Sized,
    R: RngCore + ?Sized,
{
    let mut stepper = TrajectoryStepper::new(init, params, potential)?;
    while !stepper.is_finished() {
        stepper.decide_hop(rng)?;
        stepper.advance()?;
    }
    Ok(stepper.finish(seed_tag))
}

/// Stream `index` of the ChaCha8 generator keyed by `master_seed`.
pub fn trajectory_stream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Draws the initial point of trajectory `index` and evolves it; the same
/// stream then supplies the hop variates.
pub fn run_trajectory<const M: usize, P>(
    sampler: &PhaseSpaceSampler<'_, M>,
    potential: &P,
    params: &PropagationParams,
    master_seed: u64,
    index: u64,
) -> Result<TrajectoryRecord<M>>
where
    P: DiabaticPotential<M> + ?Sized,
{
    let mut rng = trajectory_stream(master_seed, index);
    let start = sampler.draw(&mut rng);
    let init = initial_state(start.position, start.momentum, start.amplitude);
    evolve_trajectory(init, params, potential, &mut rng, index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{BuiltinModel, FlatSurfaces, HarmonicWells};
    use approx::assert_relative_eq;
    use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};
    use std::vec;

    fn p1(x: f64) -> Point<1> {
        Point::<1>::new(x)
    }

    fn flat(coupling: f64) -> FlatSurfaces {
        FlatSurfaces {
            levels: [0.0, 0.0],
            coupling: Complex64::new(coupling, 0.0),
        }
    }

    #[test]
    fn initial_state_fields() {
        let s = initial_state(p1(0.0), p1(2.0), Complex64::new(0.5, -0.25));
        assert_eq!(s.position[0], 0.0);
        assert_eq!(s.momentum[0], 2.0);
        assert_eq!(s.action, 0.0);
        assert_eq!(s.surface, Surface::Zero);
        assert_eq!(s.dz_q, CMatrix::<1>::identity());
        assert_eq!(s.dz_p[(0, 0)], -I);
        assert_eq!(z_determinant(&s), Complex64::new(2.0, 0.0));

        let s3 = initial_state(Point::<3>::zeros(), Point::<3>::zeros(), Complex64::new(1.0, 0.0));
        assert_eq!(z_determinant(&s3), Complex64::new(8.0, 0.0));
    }

    #[test]
    fn elimination_solves_small_systems() {
        let z = CMatrix::<3>::from_fn(|i, j| Complex64::new((i * 3 + j) as f64 + 1.0, (i as f64 - j as f64) * 0.5))
            + CMatrix::<3>::identity() * Complex64::new(4.0, 0.0);
        let b = CMatrix::<3>::from_fn(|i, j| Complex64::new(i as f64 - 1.0, j as f64));
        let (det, x) = solve(z, b);
        assert!((z * x - b).norm() < 1e-12);
        // cofactor expansion
        let m = |i: usize, j: usize| z[(i, j)];
        let cof = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        assert!((det - cof).norm() < 1e-10 * cof.norm());
    }

    #[test]
    fn rhs_on_flat_potential() {
        let mut s = initial_state(p1(0.3), p1(2.0), Complex64::new(1.0, 0.0));
        let pot = FlatSurfaces {
            levels: [0.5, -1.0],
            coupling: Complex64::new(0.0, 0.0),
        };
        let d = ode_rhs(&s, &pot).unwrap();
        assert_eq!(d.momentum[0], 0.0);
        assert_eq!(d.dz_p[(0, 0)], Complex64::new(0.0, 0.0));
        assert_eq!(d.action, 1.5);
        s.surface = Surface::One;
        assert_eq!(ode_rhs(&s, &pot).unwrap().action, 3.0);
    }

    #[test]
    fn singular_z_is_an_error() {
        let mut s = initial_state(p1(0.0), p1(1.0), Complex64::new(1.0, 0.0));
        s.dz_p = CMatrix::<1>::identity() * I; // Z = 1 + i·i = 0
        assert!(matches!(ode_rhs(&s, &flat(0.0)), Err(Error::SingularZ { .. })));
        assert!(matches!(rk4_step(&s, 0.1, &flat(0.0)), Err(Error::SingularZ { .. })));
    }

    #[test]
    fn tiny_step_changes_little() {
        let s = initial_state(p1(-1.0), p1(2.0), Complex64::new(0.7, 0.1));
        let pot = BuiltinModel::SimpleCrossing;
        let dt = 1e-12;
        let n = rk4_step(&s, dt, &pot).unwrap();
        let change = (n.position - s.position).norm()
            + (n.momentum - s.momentum).norm()
            + (n.action - s.action).abs()
            + (n.amplitude - s.amplitude).norm()
            + (n.dz_q - s.dz_q).norm()
            + (n.dz_p - s.dz_p).norm();
        assert!(change <= 10.0 * dt);
    }

    #[test]
    fn free_particle_amplitude_and_action() {
        let pot = FlatSurfaces {
            levels: [0.3, 0.3],
            coupling: Complex64::new(0.0, 0.0),
        };
        let a0 = Complex64::new(0.8, 0.6);
        let mut s = initial_state(p1(0.0), p1(1.5), a0);
        let dt = 0.01;
        for _ in 0..200 {
            s = rk4_step(&s, dt, &pot).unwrap();
        }
        let t = s.time;
        let exact = a0 * ((Complex64::new(2.0, -t)) / 2.0).sqrt();
        assert!((s.amplitude - exact).norm() < 1e-10);
        assert_relative_eq!(s.dz_q[(0, 0)].im, -t, max_relative = 1e-12);
        assert_relative_eq!(s.action, (0.5 * 1.5 * 1.5 - 0.3) * t, max_relative = 1e-12);
        assert_relative_eq!(s.position[0], 1.5 * t, max_relative = 1e-12);
    }

    #[test]
    fn amplitude_tracks_square_root_of_det_z() {
        // A(t) = A0 sqrt(det Z(t) / det Z(0)) along any path
        let pot = BuiltinModel::SimpleCrossing;
        let a0 = Complex64::new(1.0, 0.0);
        let mut s = initial_state(p1(-1.0), p1(2.0), a0);
        for _ in 0..100 {
            s = rk4_step(&s, 0.01, &pot).unwrap();
        }
        let ratio = (z_determinant(&s) / 2.0).sqrt();
        assert!((s.amplitude - a0 * ratio).norm() < 1e-8);
    }

    fn harmonic_error(dt: f64) -> f64 {
        let pot = HarmonicWells::<1>::isotropic();
        let (q0, p0) = (0.7, -0.4);
        let grid = StepGrid::new(dt, 2.0);
        let s = advance_steps(
            &initial_state(p1(q0), p1(p0), Complex64::new(1.0, 0.0)),
            &pot,
            &grid,
            0,
            grid.steps(),
        )
        .unwrap();
        let t = s.time;
        let q = q0 * t.cos() + p0 * t.sin();
        let p = -q0 * t.sin() + p0 * t.cos();
        ((s.position[0] - q).powi(2) + (s.momentum[0] - p).powi(2)).sqrt()
    }

    #[test]
    fn rk4_is_fourth_order_on_harmonic_well() {
        let ratio = harmonic_error(0.1) / harmonic_error(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    fn final_qp(pot: &BuiltinModel, q0: f64, p0: f64) -> (f64, f64) {
        let grid = StepGrid::new(1e-3, 1.0);
        let s = advance_steps(
            &initial_state(p1(q0), p1(p0), Complex64::new(1.0, 0.0)),
            pot,
            &grid,
            0,
            grid.steps(),
        )
        .unwrap();
        (s.position[0], s.momentum[0])
    }

    #[test]
    fn variational_matrices_match_finite_differences() {
        let (q0, p0) = (-0.6, 1.3);
        let grid = StepGrid::new(1e-3, 1.0);
        for pot in [BuiltinModel::SimpleCrossing, BuiltinModel::dual_crossing()] {
            let s = advance_steps(
                &initial_state(p1(q0), p1(p0), Complex64::new(1.0, 0.0)),
                &pot,
                &grid,
                0,
                grid.steps(),
            )
            .unwrap();
            let h = 1e-5;
            let (qa, pa) = final_qp(&pot, q0 + h, p0);
            let (qb, pb) = final_qp(&pot, q0 - h, p0);
            let (qc, pc) = final_qp(&pot, q0, p0 + h);
            let (qd, pd) = final_qp(&pot, q0, p0 - h);
            let dzq = Complex64::new((qa - qb) / (2.0 * h), -(qc - qd) / (2.0 * h));
            let dzp = Complex64::new((pa - pb) / (2.0 * h), -(pc - pd) / (2.0 * h));
            assert!((s.dz_q[(0, 0)] - dzq).norm() <= 1e-4 * dzq.norm());
            assert!((s.dz_p[(0, 0)] - dzp).norm() <= 1e-4 * dzp.norm());
        }
    }

    #[test]
    fn variational_matrices_in_two_dimensions() {
        let pot = HarmonicWells::<2> {
            stiffness: Point::<2>::new(1.0, 4.0),
            offsets: [0.0, 0.0],
            coupling: Complex64::new(0.0, 0.0),
        };
        let init = initial_state(
            Point::<2>::new(0.3, -0.2),
            Point::<2>::new(0.1, 0.5),
            Complex64::new(1.0, 0.0),
        );
        let grid = StepGrid::new(1e-3, 1.0);
        let s = advance_steps(&init, &pot, &grid, 0, grid.steps()).unwrap();
        // decoupled oscillators: ∂zQ = diag(cos ωt - i sin(ωt)/ω)
        for (k, w) in [(0usize, 1.0f64), (1, 2.0)] {
            let exact = Complex64::new(w.cos(), -w.sin() / w);
            assert!((s.dz_q[(k, k)] - exact).norm() < 1e-9);
        }
        assert!(s.dz_q[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn energy_is_conserved_between_hops() {
        let pot = BuiltinModel::SimpleCrossing;
        let init = initial_state(p1(-1.0), p1(2.0), Complex64::new(1.0, 0.0));
        let e0 = classical_energy(&init, &pot);
        let grid = StepGrid::new(1e-3, 1.0);
        let s = advance_steps(&init, &pot, &grid, 0, grid.steps()).unwrap();
        assert!((classical_energy(&s, &pot) - e0).abs() <= 1e-8);
    }

    #[test]
    fn rate_examples() {
        let s = initial_state(p1(0.5), p1(1.0), Complex64::new(1.0, 0.0));
        let simple = BuiltinModel::SimpleCrossing;
        assert_eq!(hop_rate(&s, &simple, 0.0, 0.04, RateModel::Standard), 0.0);
        assert_relative_eq!(hop_rate(&s, &simple, 0.04, 0.04, RateModel::Standard), 1.0);
        let gapped = FlatSurfaces {
            levels: [1.0, -1.0],
            coupling: Complex64::new(0.0, 1.0),
        };
        assert_eq!(hop_rate(&s, &gapped, 0.1, 0.1, RateModel::GapModified), 0.5);
        let small_gap = FlatSurfaces {
            levels: [0.2, -0.2],
            coupling: Complex64::new(0.0, 1.0),
        };
        assert_eq!(hop_rate(&s, &small_gap, 0.1, 0.1, RateModel::GapModified), 1.0);
    }

    #[test]
    fn step_grid_covers_final_time() {
        let g = StepGrid::new(0.1, 1.0);
        assert_eq!(g.steps(), 10);
        assert_eq!(g.time(10), 1.0);
        let g = StepGrid::new(0.3, 1.0);
        assert_eq!(g.steps(), 4);
        assert_relative_eq!(g.step_length(3), 0.1, max_relative = 1e-12);
        assert_eq!(StepGrid::new(0.1, 0.0).steps(), 0);
    }

    #[test]
    fn zero_delta_never_hops() {
        let params = PropagationParams::new(0.04, 0.0, 1.0);
        let init = initial_state(p1(-1.0), p1(2.0), Complex64::new(1.0, 0.0));
        let mut rng = trajectory_stream(1, 0);
        let r = evolve_trajectory(init, &params, &BuiltinModel::SimpleCrossing, &mut rng, 0).unwrap();
        assert!(r.hops.is_empty());
        assert_eq!(r.final_state.surface, Surface::Zero);
        assert_eq!(r.rate_integral, 0.0);
        assert_relative_eq!(r.final_state.time, 1.0);
    }

    #[test]
    fn probability_cap_is_enforced() {
        let params = PropagationParams::new(0.01, 0.5, 1.0).with_dt(0.01);
        let init = initial_state(p1(0.0), p1(1.0), Complex64::new(1.0, 0.0));
        let err = evolve_trajectory(init, &params, &flat(1.0), &mut trajectory_stream(0, 0), 0).unwrap_err();
        match err {
            Error::StepSize {
                rate,
                dt,
                probability,
                cap,
            } => {
                assert_relative_eq!(rate, 50.0);
                assert_relative_eq!(dt, 0.01);
                assert_relative_eq!(probability, 0.5);
                assert_eq!(cap, 0.1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let init = initial_state(p1(0.0), p1(1.0), Complex64::new(1.0, 0.0));
        for params in [
            PropagationParams::new(0.0, 0.1, 1.0),
            PropagationParams::new(0.1, -0.1, 1.0),
            PropagationParams::new(0.1, 0.1, 1.0).with_dt(0.0),
        ] {
            assert!(matches!(
                evolve_trajectory(init, &params, &flat(1.0), &mut trajectory_stream(0, 0), 0),
                Err(Error::InvalidParameter { .. })
            ));
        }
    }

    #[test]
    fn hops_are_continuous_and_alternate() {
        let pot = BuiltinModel::SimpleCrossing;
        let params = PropagationParams::new(0.04, 0.04, 3.0);
        let init = initial_state(p1(-1.0), p1(2.0), Complex64::new(1.0, 0.0));
        let mut rng = trajectory_stream(5, 0);
        let mut stepper = TrajectoryStepper::new(init, &params, &pot).unwrap();
        let mut seen = 0;
        while !stepper.is_finished() {
            let before = *stepper.state();
            if let Some(event) = stepper.decide_hop(&mut rng).unwrap() {
                let after = *stepper.state();
                assert_eq!(after.surface, before.surface.flip());
                assert_eq!(
                    TrajectoryState {
                        surface: before.surface,
                        ..after
                    },
                    before
                );
                assert_eq!(event.time, before.time);
                assert_eq!(event.from, before.surface);
                assert_eq!(
                    event.coupling,
                    pot.transition_coupling(event.to, event.from, &before.position)
                );
                seen += 1;
            }
            stepper.advance().unwrap();
        }
        let record = stepper.finish(0);
        assert!(seen > 0);
        assert_eq!(record.hops.len(), seen);
        assert_eq!(record.final_state.surface.index(), seen % 2);
        assert!(record.hops.windows(2).all(|w| w[0].time < w[1].time));
        assert!(record.hops.windows(2).all(|w| w[0].to == w[1].from));
    }

    #[test]
    fn same_seed_same_record() {
        let pot = BuiltinModel::SimpleCrossing;
        let params = PropagationParams::new(0.04, 0.04, 1.2);
        let init = initial_state(p1(-1.5), p1(2.0), Complex64::new(0.3, 0.1));
        let a = evolve_trajectory(init, &params, &pot, &mut trajectory_stream(9, 4), 4).unwrap();
        let b = evolve_trajectory(init, &params, &pot, &mut trajectory_stream(9, 4), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_rate_hop_counts_are_poisson() {
        // λ = 1, T = 1
        let params = PropagationParams::new(0.1, 0.1, 1.0).with_dt(1e-3);
        let init = initial_state(p1(0.0), p1(0.0), Complex64::new(1.0, 0.0));
        let n = 20_000u64;
        let mut counts = vec![0.0f64; 8];
        for i in 0..n {
            let r = evolve_trajectory(init, &params, &flat(1.0), &mut trajectory_stream(77, i), i).unwrap();
            assert_eq!(r.final_state.surface.index(), r.hop_count() % 2);
            counts[r.hop_count().min(7)] += 1.0;
        }
        let poisson = Poisson::new(1.0).unwrap();
        let mut expected: Vec<f64> = (0..7).map(|k| poisson.pmf(k) * n as f64).collect();
        expected.push(n as f64 - expected.iter().sum::<f64>());
        // merge the sparse tail into one bin
        let (mut chi2, mut dof, mut tail_e, mut tail_o) = (0.0, 0usize, 0.0, 0.0);
        for (e, o) in expected.iter().zip(&counts) {
            if *e >= 5.0 {
                chi2 += (o - e) * (o - e) / e;
                dof += 1;
            } else {
                tail_e += e;
                tail_o += o;
            }
        }
        if tail_e > 0.0 {
            chi2 += (tail_o - tail_e) * (tail_o - tail_e) / tail_e;
            dof += 1;
        }
        let critical = ChiSquared::new((dof - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} vs {critical}");

        let p0 = (-1.0f64).exp();
        let sigma = (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!((counts[0] / n as f64 - p0).abs() < 3.0 * sigma);
    }

    #[test]
    fn survival_matches_path_rate_integral() {
        // position-dependent rate along a deterministic no-hop path
        let pot = BuiltinModel::extended_coupling();
        let params = PropagationParams::new(0.04, 0.08, 0.5).with_dt(1e-3);
        let init = initial_state(p1(-1.0), p1(2.0), Complex64::new(1.0, 0.0));
        let n = 40_000u64;
        let mut survivors = 0usize;
        let mut integral = None;
        for i in 0..n {
            let r = evolve_trajectory(init, &params, &pot, &mut trajectory_stream(3, i), i).unwrap();
            if r.hops.is_empty() {
                survivors += 1;
                integral.get_or_insert(r.rate_integral);
            }
        }
        let p = (-integral.unwrap()).exp();
        assert!(p > 0.2 && p < 0.8, "{p}");
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((survivors as f64 / n as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn run_trajectory_starts_from_sampler() {
        use crate::initial_data::{AmplitudeTable, GaussianWavePacket};
        let packet = GaussianWavePacket::new(12.5, p1(-1.5), p1(2.0)).unwrap();
        let table = AmplitudeTable::for_packet(&packet, 0.04, 32).unwrap();
        let sampler = table.sampler().unwrap();
        let params = PropagationParams::new(0.04, 0.04, 0.2);
        let r = run_trajectory(&sampler, &BuiltinModel::SimpleCrossing, &params, 1, 17).unwrap();
        let start = sampler.draw(&mut trajectory_stream(1, 17));
        assert_eq!(r.initial_amplitude, start.amplitude);
        assert_eq!(r.seed_tag, 17);
    }
}
