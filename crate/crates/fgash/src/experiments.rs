//! Built-in experiment configurations; `configs/exampleN.cfg` ships the
//! same settings as files.

use crate::config::{
    GridConfig, ModelTag, OutputConfig, PacketConfig, PotentialConfig, ReferenceConfig, RunConfig, SimulationConfig,
    StudyConfig, DEFAULT_BATCH_SIZE,
};
use fgash_core::initial_data::DEFAULT_RESOLUTION;

/// Relative `L²` threshold of the trajectory-count study.
pub const NTRAJ_THRESHOLD: f64 = 0.08;

/// Relative `L²` threshold of the avoided-crossing study.
pub const AVOIDED_THRESHOLD: f64 = 0.2;

/// Seed shared by the shipped configurations.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[allow(clippy::too_many_arguments)]
fn base(
    model: ModelTag,
    (alpha, center, momentum): (f64, f64, f64),
    epsilon: f64,
    delta: f64,
    final_time: f64,
    trajectories: u64,
    (lower, upper, points): (f64, f64, usize),
) -> SimulationConfig {
    SimulationConfig {
        potential: PotentialConfig::of(model),
        packet: PacketConfig {
            alpha,
            center,
            momentum,
        },
        run: RunConfig {
            epsilon,
            delta,
            final_time,
            dt: None,
            trajectories,
            master_seed: DEFAULT_SEED,
            rate_model: "standard".into(),
            probability_cap: 0.1,
            phase_space_points: DEFAULT_RESOLUTION,
            batch_size: DEFAULT_BATCH_SIZE,
        },
        grid: GridConfig { lower, upper, points },
        reference: ReferenceConfig::default(),
        output: OutputConfig::default(),
        study: None,
    }
}

/// Simple crossing, `ε = δ = 0.04`, `T = 1.2`, 5000 trajectories.
pub fn example1() -> SimulationConfig {
    let mut c = base(
        ModelTag::Simple,
        (12.5, -1.5, 2.0),
        0.04,
        0.04,
        1.2,
        5000,
        (-8.0, 8.0, 2048),
    );
    c.study = Some(StudyConfig {
        trajectory_counts: Some(vec![100, 200, 400, 800, 1600]),
        replicates: Some(20),
        ..StudyConfig::default()
    });
    c
}

/// Dual crossing, `ε = 1/√2000`, `T = 2.2`, 10000 trajectories. The whole
/// off-diagonal entry lives in the potential, so `δ = 1`.
pub fn example2() -> SimulationConfig {
    let epsilon = 1.0 / 2000f64.sqrt();
    base(
        ModelTag::Dual,
        (500f64.sqrt(), -2.5, 2.0),
        epsilon,
        1.0,
        2.2,
        10_000,
        (-8.0, 8.0, 4096),
    )
}

/// Extended coupling with reflection, `ε = δ = 0.04`, `T = 1.4`.
pub fn example3() -> SimulationConfig {
    base(
        ModelTag::Extended,
        (12.5, -1.5, 2.0),
        0.04,
        0.04,
        1.4,
        30_000,
        (-8.0, 8.0, 2048),
    )
}

/// Weak-coupling (Marcus) sweep on the simple crossing, `T = 1`.
pub fn example4() -> SimulationConfig {
    let mut c = base(
        ModelTag::Simple,
        (12.5, -1.0, 2.0),
        0.04,
        0.01,
        1.0,
        40_000,
        (-8.0, 8.0, 2048),
    );
    c.study = Some(StudyConfig {
        deltas: Some(vec![0.004, 0.0064, 0.01, 0.016, 0.025, 0.04]),
        ..StudyConfig::default()
    });
    c
}

/// Landau–Zener regime, `δ = √ε = 0.2`, momentum 3, `T = 0.5`.
pub fn example5() -> SimulationConfig {
    base(
        ModelTag::Simple,
        (12.5, -1.0, 3.0),
        0.04,
        0.2,
        0.5,
        20_000,
        (-8.0, 8.0, 2048),
    )
}

/// Trajectories needed for a fixed error as `δ/ε` grows, `ε = 0.02`.
pub fn example6() -> SimulationConfig {
    let mut c = base(
        ModelTag::Simple,
        (25.0, -0.4, 2.0),
        0.02,
        0.02,
        0.5,
        10_000,
        (-4.0, 4.0, 2048),
    );
    c.study = Some(StudyConfig {
        deltas: Some(vec![0.001, 0.005, 0.01, 0.02, 0.04, 0.06, 0.08, 0.1, 0.12]),
        replicates: Some(3),
        threshold: Some(NTRAJ_THRESHOLD),
        max_trajectories: Some(1_000_000),
        start_trajectories: Some(64),
        ..StudyConfig::default()
    });
    c
}

/// Avoided crossing with `δ = √ε`, `α = 1/(2ε)`, centre `-2√ε` and
/// `T = 3√ε`, on a domain of half-width `24√ε` with `Δx ≤ ε/4`.
pub fn avoided_crossing(epsilon: f64) -> SimulationConfig {
    // twelve significant digits keep the shipped files readable
    let tidy = |x: f64| format!("{x:.11e}").parse::<f64>().expect("formatted float");
    let s = epsilon.sqrt();
    let points = ((192.0 / s).ceil() as usize).next_power_of_two();
    base(
        ModelTag::Simple,
        (tidy(0.5 / epsilon), tidy(-2.0 * s), 2.0),
        epsilon,
        tidy(s),
        tidy(3.0 * s),
        10_000,
        (tidy(-24.0 * s), tidy(24.0 * s), points),
    )
}

/// The avoided-crossing study at `ε = 0.04`, sweeping ε down to 0.00125.
pub fn example7() -> SimulationConfig {
    let mut c = avoided_crossing(0.04);
    c.study = Some(StudyConfig {
        epsilons: Some(vec![0.04, 0.01, 0.0025, 0.00125]),
        replicates: Some(3),
        threshold: Some(AVOIDED_THRESHOLD),
        max_trajectories: Some(1_000_000),
        start_trajectories: Some(64),
        ..StudyConfig::default()
    });
    c
}

/// `exampleN` for `N` in `1..=7`.
pub fn builtin(n: usize) -> Option<SimulationConfig> {
    match n {
        1 => Some(example1()),
        2 => Some(example2()),
        3 => Some(example3()),
        4 => Some(example4()),
        5 => Some(example5()),
        6 => Some(example6()),
        7 => Some(example7()),
        _ => None,
    }
}
