//! End-to-end runs: sample, propagate, reconstruct, compare with the
//! reference and export.

use std::path::Path;

use fgash_core::initial_data::{AmplitudeTable, GaussianWavePacket};
use fgash_core::potentials::{BuiltinModel, Surface};
use fgash_core::reconstruction::{
    l2_error_component, l2_norm, transition_rate, Component, EnsembleEstimate, GridSpec, WaveFunctionGrid,
};
use fgash_core::trajectory::PropagationParams;
use serde::Serialize;

use crate::config::SimulationConfig;
use crate::ensemble::{parallel_fga_term, EnsembleDriver};
use crate::error::{AppError, AppResult};
use crate::io::{write_csv, write_json, ReferenceCache, ReferenceKey, WaveFunctionTable};
use crate::reference::{solve, ReferenceParams, SpectralGrid};

/// Everything derived from a validated configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: SimulationConfig,
    pub potential: BuiltinModel,
    pub packet: GaussianWavePacket<1>,
    pub table: AmplitudeTable<1>,
    pub params: PropagationParams,
    pub spec: GridSpec<1>,
}

impl Setup {
    pub fn new(config: &SimulationConfig) -> AppResult<Self> {
        config.validate()?;
        let packet = config.packet.build()?;
        let table = AmplitudeTable::for_packet(&packet, config.run.epsilon, config.run.phase_space_points)?;
        Ok(Self {
            config: config.clone(),
            potential: config.potential.build(),
            packet,
            table,
            params: config.propagation()?,
            spec: config.grid_spec()?,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.config.run.epsilon
    }

    /// The initial condition on the output grid, all mass on component 0.
    pub fn initial_grid(&self) -> WaveFunctionGrid<1> {
        let eps = self.epsilon();
        WaveFunctionGrid::from_fn(self.spec, eps, |s, x| match s {
            Surface::Zero => self.packet.evaluate(x, eps),
            Surface::One => Default::default(),
        })
    }

    /// Discrete `‖u0(0)‖` on the output grid.
    pub fn initial_norm(&self) -> f64 {
        l2_norm(&self.initial_grid(), Component::Zero)
    }

    pub fn driver(&self, seed: u64) -> AppResult<EnsembleDriver<'_, BuiltinModel>> {
        Ok(
            EnsembleDriver::new(&self.table, &self.potential, self.params, self.spec, seed)?
                .with_batch_size(self.config.run.batch_size),
        )
    }

    pub fn reference_key(&self) -> ReferenceKey {
        let c = &self.config;
        ReferenceKey {
            model: serde_json::to_string(&c.potential).expect("potential serialises"),
            epsilon: c.run.epsilon,
            delta: c.run.delta,
            final_time: c.run.final_time,
            dt: c.reference_dt(),
            lower: c.grid.lower,
            upper: c.grid.upper,
            points: c.grid.points,
            alpha: c.packet.alpha,
            center: c.packet.center,
            momentum: c.packet.momentum,
        }
    }

    /// Spectral solution at the final time, read from or written to the
    /// cache directory when one is configured.
    pub fn reference(&self) -> AppResult<WaveFunctionGrid<1>> {
        let key = self.reference_key();
        let cache = self.config.reference.cache_dir.as_ref().map(ReferenceCache::new);
        if let Some(grid) = cache.as_ref().and_then(|c| c.load(&key)) {
            return Ok(grid);
        }
        let grid = SpectralGrid::new(self.spec, self.epsilon())?;
        let params = ReferenceParams::new(self.epsilon(), self.config.run.delta, self.config.run.final_time)
            .with_dt(self.config.reference_dt());
        let solution = solve(&self.initial_grid(), &grid, &self.potential, &params)?;
        if let Some(cache) = cache {
            cache.store(&key, &solution)?;
        }
        Ok(solution)
    }
}

/// Errors and observables of the reference solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSummary {
    pub dt: f64,
    pub norm_u0: f64,
    pub norm_u1: f64,
    pub transition_rate: f64,
    pub relative_l2_error: f64,
    /// Absent when the reference component vanishes.
    pub relative_l2_error_u0: Option<f64>,
    pub relative_l2_error_u1: Option<f64>,
}

impl ReferenceSummary {
    pub fn new(
        estimate: &WaveFunctionGrid<1>,
        reference: &WaveFunctionGrid<1>,
        initial_norm: f64,
        dt: f64,
    ) -> AppResult<Self> {
        let relative = |c| match l2_error_component(estimate, reference, c, true) {
            Ok(e) => Ok(Some(e)),
            Err(fgash_core::Error::ZeroNorm) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            dt,
            norm_u0: l2_norm(reference, Component::Zero),
            norm_u1: l2_norm(reference, Component::One),
            transition_rate: transition_rate(reference, initial_norm),
            relative_l2_error: l2_error_component(estimate, reference, Component::Both, true)?,
            relative_l2_error_u0: relative(Component::Zero)?,
            relative_l2_error_u1: relative(Component::One)?,
        })
    }
}

/// Key-value summary of a surface-hopping run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub model: String,
    pub epsilon: f64,
    pub delta: f64,
    pub final_time: f64,
    pub dt: f64,
    pub trajectories: u64,
    pub master_seed: u64,
    pub rate_model: String,
    pub total_hops: u64,
    pub normalization_constant: f64,
    pub initial_norm: f64,
    pub norm_u0: f64,
    pub norm_u1: f64,
    pub stderr_norm_u0: f64,
    pub stderr_norm_u1: f64,
    /// `‖û1‖² / ‖u0(0)‖²`.
    pub transition_rate: f64,
    /// The same with the Monte Carlo variance `‖se1‖²` removed from `‖û1‖²`.
    pub transition_rate_corrected: f64,
    pub reference: Option<ReferenceSummary>,
}

impl RunSummary {
    pub fn new(
        setup: &Setup,
        estimate: &EnsembleEstimate<1>,
        reference: Option<&WaveFunctionGrid<1>>,
    ) -> AppResult<Self> {
        let c = &setup.config;
        let initial_norm = setup.initial_norm();
        let se1 = estimate.standard_error_norm(Component::One);
        let norm_u1 = l2_norm(&estimate.mean, Component::One);
        let reference = reference
            .map(|r| ReferenceSummary::new(&estimate.mean, r, initial_norm, c.reference_dt()))
            .transpose()?;
        Ok(Self {
            model: c.potential.model.tag().to_owned(),
            epsilon: c.run.epsilon,
            delta: c.run.delta,
            final_time: c.run.final_time,
            dt: c.dt(),
            trajectories: estimate.samples,
            master_seed: c.run.master_seed,
            rate_model: c.run.rate_model.clone(),
            total_hops: estimate.total_hops,
            normalization_constant: setup.table.normalization_constant(),
            initial_norm,
            norm_u0: l2_norm(&estimate.mean, Component::Zero),
            norm_u1,
            stderr_norm_u0: estimate.standard_error_norm(Component::Zero),
            stderr_norm_u1: se1,
            transition_rate: transition_rate(&estimate.mean, initial_norm),
            transition_rate_corrected: (norm_u1 * norm_u1 - se1 * se1) / (initial_norm * initial_norm),
            reference,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub estimate: EnsembleEstimate<1>,
    pub reference: Option<WaveFunctionGrid<1>>,
    pub summary: RunSummary,
}

impl RunArtifacts {
    pub fn table(&self) -> WaveFunctionTable {
        WaveFunctionTable {
            grid: self.estimate.mean.clone(),
            standard_error: self.estimate.standard_error.clone(),
        }
    }
}

/// Provenance lines: the tool and the configuration without output paths.
pub fn provenance(kind: &str, config: &SimulationConfig) -> Vec<String> {
    // output paths do not affect the numbers, so they stay out of the header
    let config = SimulationConfig {
        output: Default::default(),
        ..config.clone()
    };
    let mut lines = vec![format!("fgash {kind} {}", env!("CARGO_PKG_VERSION"))];
    lines.extend(config.to_toml().lines().filter(|l| !l.is_empty()).map(str::to_owned));
    lines
}

/// Samples, propagates and reconstructs `run.trajectories` trajectories,
/// then compares with the reference when it is enabled.
pub fn run_experiment(config: &SimulationConfig) -> AppResult<RunArtifacts> {
    let setup = Setup::new(config)?;
    let mut driver = setup.driver(config.run.master_seed)?;
    driver.extend_to(config.run.trajectories)?;
    let estimate = driver.estimate()?;
    let reference = if config.reference.enabled {
        Some(setup.reference()?)
    } else {
        None
    };
    let summary = RunSummary::new(&setup, &estimate, reference.as_ref())?;
    Ok(RunArtifacts {
        estimate,
        reference,
        summary,
    })
}

/// Writes the CSV and summary paths named in `config.output`.
pub fn write_run_outputs(config: &SimulationConfig, artifacts: &RunArtifacts) -> AppResult<()> {
    if let Some(path) = &config.output.csv {
        write_csv(path, &artifacts.table(), &provenance("run", config))?;
    }
    if let Some(path) = &config.output.summary {
        write_json(path, &artifacts.summary)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub model: String,
    pub epsilon: f64,
    pub delta: f64,
    pub final_time: f64,
    pub dt: f64,
    pub max_hops: usize,
    pub support_cells: usize,
    pub norm_u0: f64,
    pub norm_u1: f64,
    pub transition_rate: f64,
}

#[derive(Debug, Clone)]
pub struct OracleArtifacts {
    pub grid: WaveFunctionGrid<1>,
    pub summary: OracleSummary,
}

/// Deterministic series truncated after `max_hops` hops (0 or 1).
pub fn run_oracle(config: &SimulationConfig, max_hops: usize) -> AppResult<OracleArtifacts> {
    if max_hops > 1 {
        return Err(AppError::invalid(format!("--max-hops must be 0 or 1, got {max_hops}")));
    }
    let setup = Setup::new(config)?;
    let mut grid = WaveFunctionGrid::zeros(setup.spec, setup.epsilon());
    for n in 0..=max_hops {
        let term = parallel_fga_term(n, &setup.table, &setup.potential, &setup.params, setup.spec)?;
        grid = grid.add(&term.grid)?;
    }
    let initial_norm = setup.initial_norm();
    let summary = OracleSummary {
        model: config.potential.model.tag().to_owned(),
        epsilon: config.run.epsilon,
        delta: config.run.delta,
        final_time: config.run.final_time,
        dt: config.dt(),
        max_hops,
        support_cells: setup.table.support().count(),
        norm_u0: l2_norm(&grid, Component::Zero),
        norm_u1: l2_norm(&grid, Component::One),
        transition_rate: transition_rate(&grid, initial_norm),
    };
    Ok(OracleArtifacts { grid, summary })
}

/// Relative `L²` differences of two wave-function files, `a` against `b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub points: usize,
    pub l2_difference: f64,
    pub relative_l2_error: Option<f64>,
    pub relative_l2_error_u0: Option<f64>,
    pub relative_l2_error_u1: Option<f64>,
    pub norm_a: f64,
    pub norm_b: f64,
}

pub fn compare(a: &Path, b: &Path) -> AppResult<Comparison> {
    // ε only labels the grid and does not enter the norms
    let ta = crate::io::read_csv(a, 1.0)?;
    let tb = crate::io::read_csv(b, 1.0)?;
    let (ga, gb) = (&ta.grid, &tb.grid);
    if ga.spec.points != gb.spec.points
        || (ga.spec.lower - gb.spec.lower).abs() > 1e-9
        || (ga.spec.spacing() - gb.spec.spacing()).abs() > 1e-9 * ga.spec.spacing()
    {
        return Err(AppError::invalid(format!(
            "{} and {} are on different grids",
            a.display(),
            b.display()
        )));
    }
    let gb = WaveFunctionGrid {
        spec: ga.spec,
        ..gb.clone()
    };
    let relative = |c| l2_error_component(ga, &gb, c, true).ok();
    Ok(Comparison {
        points: ga.spec.points,
        l2_difference: l2_error_component(ga, &gb, Component::Both, false)?,
        relative_l2_error: relative(Component::Both),
        relative_l2_error_u0: relative(Component::Zero),
        relative_l2_error_u1: relative(Component::One),
        norm_a: l2_norm(ga, Component::Both),
        norm_b: l2_norm(&gb, Component::Both),
    })
}
