//! Structural invariants of the trajectory engine and estimator, checked on
//! random initial data.

use fgash_core::initial_data::{AmplitudeTable, GaussianWavePacket};
use fgash_core::potentials::{BuiltinModel, DiabaticPotential, FlatSurfaces, HarmonicWells, Surface};
use fgash_core::reconstruction::{
    l2_error, l2_norm, reconstruct, trajectory_weight, Component, EnsembleEstimator, GridSpec, Parity,
};
use fgash_core::trajectory::{
    classical_energy, evolve_trajectory, initial_state, run_trajectory, trajectory_stream, z_determinant,
    PropagationParams, TrajectoryRecord,
};
use fgash_core::{Complex64, Point};
use proptest::prelude::*;

const MODELS: [BuiltinModel; 2] = [
    BuiltinModel::SimpleCrossing,
    BuiltinModel::ExtendedCoupling { steepness: 10.0 },
];

fn p1(x: f64) -> Point<1> {
    Point::<1>::new(x)
}

fn evolve<P: DiabaticPotential<1>>(
    pot: &P,
    q: f64,
    p: f64,
    params: &PropagationParams,
    seed: u64,
) -> TrajectoryRecord<1> {
    let init = initial_state(p1(q), p1(p), Complex64::new(0.7, 0.2));
    let mut rng = trajectory_stream(seed, 0);
    evolve_trajectory(init, params, pot, &mut rng, seed).unwrap()
}

// With ∂zQ = ∂qQ - i∂pQ and ∂zP = ∂qP - i∂pP the Jacobian determinant is
// Im(∂zQ) Re(∂zP) - Re(∂zQ) Im(∂zP).
fn jacobian(record: &TrajectoryRecord<1>) -> f64 {
    let s = &record.final_state;
    let (q, p) = (s.dz_q[(0, 0)], s.dz_p[(0, 0)]);
    q.im * p.re - q.re * p.im
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flow_stays_symplectic_through_hops(
        q in -2.0f64..1.0, p in 0.5f64..3.0, t in 0.1f64..1.5, model in 0usize..2, seed in 0u64..1000,
    ) {
        let params = PropagationParams::new(0.04, 0.04, t).with_dt(1e-3);
        let record = evolve(&MODELS[model], q, p, &params, seed);
        prop_assert!((jacobian(&record) - 1.0).abs() < 1e-8, "{}", jacobian(&record));
        prop_assert!(z_determinant(&record.final_state).norm() > 1.0);
    }

    #[test]
    fn hops_alternate_and_surface_matches_parity(
        q in -1.5f64..0.5, p in 0.5f64..3.0, seed in 0u64..10_000, delta in 0.02f64..0.2,
    ) {
        let params = PropagationParams::new(0.04, delta, 1.0).with_dt(2e-3);
        let record = evolve(&BuiltinModel::SimpleCrossing, q, p, &params, seed);
        let mut surface = Surface::Zero;
        let mut last = -1.0;
        for hop in &record.hops {
            prop_assert_eq!(hop.from, surface);
            prop_assert_eq!(hop.to, surface.flip());
            prop_assert!(hop.time > last);
            last = hop.time;
            surface = hop.to;
        }
        prop_assert_eq!(record.final_state.surface, surface);
        prop_assert_eq!(Parity::of(record.hop_count()).surface(), surface);
        // unit coupling: λ = δ/ε everywhere
        let expected = delta / 0.04 * 1.0;
        prop_assert!((record.rate_integral - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn zero_coupling_keeps_energy_and_weight(q in -2.0f64..2.0, p in -3.0f64..3.0, model in 0usize..2) {
        let params = PropagationParams::new(0.04, 0.0, 1.0).with_dt(1e-3);
        let init = initial_state(p1(q), p1(p), Complex64::new(0.7, 0.2));
        let e0 = classical_energy(&init, &MODELS[model]);
        let record = evolve(&MODELS[model], q, p, &params, 3);
        prop_assert_eq!(record.hop_count(), 0);
        prop_assert_eq!(record.rate_integral, 0.0);
        let e1 = classical_energy(&record.final_state, &MODELS[model]);
        prop_assert!((e1 - e0).abs() < 1e-7 * (1.0 + e0.abs()), "{} {}", e0, e1);
        let w = trajectory_weight(&record, 0.0, 0.04).unwrap();
        let ratio = record.final_state.amplitude / record.initial_amplitude.norm();
        prop_assert!((w.value - ratio).norm() < 1e-14 * ratio.norm());
    }

    #[test]
    fn hop_leaves_continuous_fields_unchanged(q in -1.0f64..1.0, p in 0.5f64..2.0, seed in 0u64..5000) {
        // identical wells: a hop changes nothing but the surface label
        let wells = HarmonicWells::<1> { coupling: Complex64::new(1.0, 0.0), ..HarmonicWells::isotropic() };
        let params = PropagationParams::new(0.05, 0.2, 0.8).with_dt(1e-3);
        let hopping = evolve(&wells, q, p, &params, seed);
        let still = evolve(&wells, q, p, &PropagationParams { delta: 0.0, ..params }, seed);
        let (a, b) = (&hopping.final_state, &still.final_state);
        prop_assert_eq!(a.position, b.position);
        prop_assert_eq!(a.momentum, b.momentum);
        prop_assert_eq!(a.action, b.action);
        prop_assert_eq!(a.amplitude, b.amplitude);
        prop_assert_eq!(a.surface, Parity::of(hopping.hop_count()).surface());
    }

    #[test]
    fn batch_partition_does_not_change_the_estimate(cuts in prop::collection::vec(1usize..59, 0..5)) {
        let packet = GaussianWavePacket::new(12.5, p1(-1.0), p1(2.0)).unwrap();
        let table = AmplitudeTable::for_packet(&packet, 0.04, 32).unwrap();
        let sampler = table.sampler().unwrap();
        let params = PropagationParams::new(0.04, 0.1, 0.3);
        let pot = BuiltinModel::SimpleCrossing;
        let records: Vec<_> = (0..60)
            .map(|i| run_trajectory(&sampler, &pot, &params, 11, i).unwrap())
            .collect();
        let spec = GridSpec::new(-3.0, 3.0, 256).unwrap();
        let c_n = table.normalization_constant();
        let whole = reconstruct(&records, spec, c_n, 0.1, 0.04).unwrap();

        let mut bounds: Vec<usize> = cuts;
        bounds.push(0);
        bounds.push(60);
        bounds.sort_unstable();
        bounds.dedup();
        let mut est = EnsembleEstimator::new(spec, 0.04, c_n, 0.1);
        for w in bounds.windows(2) {
            est.add_batch(&records[w[0]..w[1]]).unwrap();
        }
        let parts = est.finish().unwrap();
        prop_assert_eq!(parts.samples, 60);
        prop_assert_eq!(parts.total_hops, whole.total_hops);
        let scale = l2_norm(&whole.mean, Component::Both);
        prop_assert!(l2_error(&parts.mean, &whole.mean, false).unwrap() <= 1e-12 * scale);
        for c in 0..2 {
            for (x, y) in parts.standard_error[c].iter().zip(&whole.standard_error[c]) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y));
            }
        }
    }
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let packet = GaussianWavePacket::new(12.5, p1(-1.0), p1(2.0)).unwrap();
    let table = AmplitudeTable::for_packet(&packet, 0.04, 32).unwrap();
    let sampler = table.sampler().unwrap();
    let params = PropagationParams::new(0.04, 0.1, 0.3);
    let pot = BuiltinModel::SimpleCrossing;
    let a = run_trajectory(&sampler, &pot, &params, 5, 17).unwrap();
    let b = run_trajectory(&sampler, &pot, &params, 5, 17).unwrap();
    assert_eq!(a, b);
    let c = run_trajectory(&sampler, &pot, &params, 5, 18).unwrap();
    let d = run_trajectory(&sampler, &pot, &params, 6, 17).unwrap();
    assert_ne!(a.final_state.position, c.final_state.position);
    assert_ne!(a.final_state.position, d.final_state.position);
}

#[test]
fn flat_surfaces_carry_a_plane_phase() {
    // no force: Q moves ballistically and S grows by (|p|²/2 - V) t
    let pot = FlatSurfaces {
        levels: [0.25, 0.25],
        coupling: Complex64::new(0.0, 1.0),
    };
    let params = PropagationParams::new(0.1, 0.01, 2.0);
    let record = evolve(&pot, 0.5, 1.5, &params, 9);
    let s = &record.final_state;
    assert!((s.position[0] - 3.5).abs() < 1e-12);
    assert!((s.action - (1.125 - 0.25) * 2.0).abs() < 1e-12);
}
