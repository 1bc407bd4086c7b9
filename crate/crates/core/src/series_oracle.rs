//! Deterministic evaluation of the zero- and one-hop terms of the FGA
//! surface-hopping series on the same phase-space cells the sampler uses.
//!
//! ```text
//! u⁽⁰⁾(x) = (2πε)^{-3m/2} ∫ A_T e^{iΘ_T/ε} dq0 dp0                  (surface 0 throughout)
//! u⁽¹⁾(x) = (-iδ/ε)(2πε)^{-3m/2} ∫ ∫_0^T V10(Q_{t1}) A_T e^{iΘ_T/ε} dt1 dq0 dp0
//! ```
//!
//! In `u⁽¹⁾` the path runs on surface 0 up to `t1` and on surface 1 after,
//! with every field continuous at `t1`. The phase-space integral is the
//! midpoint sum over the table's support cells; the `t1` integral is the
//! trapezoid rule on the engine's step grid.

use core::ops::Range;

use alloc::vec::Vec;
use num_complex::Complex64;

use crate::initial_data::{phase_space_measure, AmplitudeTable};
use crate::potentials::{DiabaticPotential, Surface};
use crate::reconstruction::{deposit_bump, GaussianKernel, GridSpec, WaveFunctionGrid};
use crate::trajectory::{advance_steps, initial_state, PropagationParams, TrajectoryState};
use crate::{Error, Result};

/// Fewest `t1` nodes accepted for the one-hop term.
pub const MIN_TIME_NODES: usize = 64;

/// One term of the series on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzTerm<const M: usize> {
    pub hop_count: usize,
    pub grid: WaveFunctionGrid<M>,
}

/// Support cells of `table` in sampler order.
pub fn support_cells<const M: usize>(table: &AmplitudeTable<M>) -> Vec<usize> {
    table.support().collect()
}

/// Full term `n ∈ {0, 1}`.
pub fn fga_term<const M: usize, P>(
    hop_count: usize,
    table: &AmplitudeTable<M>,
    potential: &P,
    params: &PropagationParams,
    spec: GridSpec<M>,
) -> Result<AnsatzTerm<M>>
where
    P: DiabaticPotential<M> + ?Sized,
{
    let cells = support_cells(table);
    fga_term_partial(hop_count, table, potential, params, spec, &cells, 0..cells.len())
}

/// Contribution of `cells[range]` to term `hop_count`. Partial terms over
/// a partition of the cells add up to the full term.
pub fn fga_term_partial<const M: usize, P>(
    hop_count: usize,
    table: &AmplitudeTable<M>,
    potential: &P,
    params: &PropagationParams,
    spec: GridSpec<M>,
    cells: &[usize],
    range: Range<usize>,
) -> Result<AnsatzTerm<M>>
where
    P: DiabaticPotential<M> + ?Sized,
{
    if hop_count > 1 {
        return Err(Error::UnsupportedHopCount(hop_count));
    }
    params.validate()?;
    let epsilon = params.epsilon;
    if table.epsilon() != epsilon {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
        });
    }
    let grid_steps = params.step_grid();
    let steps = grid_steps.steps();
    if hop_count == 1 && steps + 1 < MIN_TIME_NODES {
        return Err(Error::InvalidParameter {
            name: "t1 nodes",
            value: (steps + 1) as f64,
        });
    }

    let mut grid = WaveFunctionGrid::zeros(spec, epsilon);
    let measure = phase_space_measure::<M>(epsilon) * table.cell_volume();
    if hop_count == 1 && params.delta == 0.0 {
        return Ok(AnsatzTerm { hop_count, grid });
    }

    let mut path: Vec<TrajectoryState<M>> = Vec::with_capacity(steps + 1);
    for &cell in &cells[range] {
        let (q0, p0) = table.cell_center(cell);
        let start = initial_state(q0, p0, table.values()[cell]);
        if hop_count == 0 {
            let end = advance_steps(&start, potential, &grid_steps, 0, steps)?;
            let coefficient = end.amplitude * measure;
            deposit_bump(
                grid.component_mut(Surface::Zero),
                &spec,
                epsilon,
                &kernel(&end),
                coefficient,
            );
            continue;
        }

        path.clear();
        path.push(start);
        for k in 0..steps {
            let next = advance_steps(&path[k], potential, &grid_steps, k, k + 1)?;
            path.push(next);
        }
        let prefactor = Complex64::new(0.0, -params.delta / epsilon) * measure;
        for (k, state) in path.iter().enumerate() {
            let weight = 0.5
                * (if k > 0 { grid_steps.step_length(k - 1) } else { 0.0 }
                    + if k < steps { grid_steps.step_length(k) } else { 0.0 });
            let coupling = potential.transition_coupling(Surface::One, Surface::Zero, &state.position);
            let mut hopped = *state;
            hopped.surface = Surface::One;
            let end = advance_steps(&hopped, potential, &grid_steps, k, steps)?;
            let coefficient = prefactor * weight * coupling * end.amplitude;
            deposit_bump(
                grid.component_mut(Surface::One),
                &spec,
                epsilon,
                &kernel(&end),
                coefficient,
            );
        }
    }
    Ok(AnsatzTerm { hop_count, grid })
}

fn kernel<const M: usize>(state: &TrajectoryState<M>) -> GaussianKernel<M> {
    GaussianKernel {
        position: state.position,
        momentum: state.momentum,
        action: state.action,
    }
}
