//! Parallel trajectory ensembles with a deterministic reduction.
//!
//! Trajectory `i` always uses stream `i` of the master seed, and the
//! estimator folds batches `[kB, (k+1)B)` in index order, so results do not
//! depend on the number of workers.

use std::ops::Range;

use fgash_core::initial_data::{AmplitudeTable, PhaseSpaceSampler};
use fgash_core::potentials::DiabaticPotential;
use fgash_core::reconstruction::{EnsembleEstimate, EnsembleEstimator, GridSpec, MomentAccumulator};
use fgash_core::series_oracle::{fga_term_partial, support_cells, AnsatzTerm};
use fgash_core::trajectory::{run_trajectory, PropagationParams};
use fgash_core::Result;
use rayon::prelude::*;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "FGASH_WORKERS";

/// Worker count from `FGASH_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn worker_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
}

/// Grows an estimator over trajectories `0, 1, 2, …` of one seed.
pub struct EnsembleDriver<'a, P: ?Sized> {
    sampler: PhaseSpaceSampler<'a, 1>,
    potential: &'a P,
    params: PropagationParams,
    seed: u64,
    batch_size: u64,
    estimator: EnsembleEstimator<1>,
    pool: rayon::ThreadPool,
    done: u64,
}

impl<'a, P> EnsembleDriver<'a, P>
where
    P: DiabaticPotential<1> + Sync + ?Sized,
{
    pub fn new(
        table: &'a AmplitudeTable<1>,
        potential: &'a P,
        params: PropagationParams,
        spec: GridSpec<1>,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let estimator = EnsembleEstimator::new(spec, params.epsilon, table.normalization_constant(), params.delta);
        Ok(Self {
            sampler: table.sampler()?,
            potential,
            params,
            seed,
            batch_size: crate::config::DEFAULT_BATCH_SIZE as u64,
            estimator,
            pool: worker_pool(default_workers()),
            done: 0,
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.pool = worker_pool(workers);
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1) as u64;
        self
    }

    /// Counts records with more than `max_hops` hops as zero samples.
    pub fn truncated(mut self, max_hops: usize) -> Self {
        self.estimator = self.estimator.truncated(max_hops);
        self
    }

    pub fn trajectories(&self) -> u64 {
        self.done
    }

    fn batch(&self, range: Range<u64>) -> Result<(MomentAccumulator<1>, u64)> {
        let records = range
            .map(|i| run_trajectory(&self.sampler, self.potential, &self.params, self.seed, i))
            .collect::<Result<Vec<_>>>()?;
        self.estimator.batch_moments(&records)
    }

    /// Runs trajectories up to index `total` (exclusive).
    pub fn extend_to(&mut self, total: u64) -> Result<()> {
        let b = self.batch_size;
        let mut ranges = Vec::new();
        let mut start = self.done;
        while start < total {
            let end = ((start / b + 1) * b).min(total);
            ranges.push(start..end);
            start = end;
        }
        // bound memory: at most 64 batch moments alive at once
        for round in ranges.chunks(64) {
            let results: Vec<_> = self
                .pool
                .install(|| round.par_iter().map(|r| self.batch(r.clone())).collect());
            for result in results {
                let (moments, hops) = result?;
                self.estimator.merge_batch(&moments, hops)?;
            }
        }
        self.done = self.done.max(total);
        Ok(())
    }

    pub fn estimate(&self) -> Result<EnsembleEstimate<1>> {
        self.estimator.finish()
    }

    /// Saves the estimator so a later [`restore`](Self::restore) can rewind.
    pub fn snapshot(&self) -> DriverSnapshot {
        DriverSnapshot {
            estimator: self.estimator.clone(),
            done: self.done,
        }
    }

    pub fn restore(&mut self, snapshot: &DriverSnapshot) {
        self.estimator = snapshot.estimator.clone();
        self.done = snapshot.done;
    }
}

/// Estimator state of an [`EnsembleDriver`] after some trajectory count.
#[derive(Debug, Clone)]
pub struct DriverSnapshot {
    estimator: EnsembleEstimator<1>,
    done: u64,
}

impl DriverSnapshot {
    pub fn trajectories(&self) -> u64 {
        self.done
    }
}

/// Runs `trajectories` trajectories and returns the estimate.
pub fn run_ensemble<P>(
    table: &AmplitudeTable<1>,
    potential: &P,
    params: PropagationParams,
    spec: GridSpec<1>,
    trajectories: u64,
    seed: u64,
) -> Result<EnsembleEstimate<1>>
where
    P: DiabaticPotential<1> + Sync + ?Sized,
{
    let mut driver = EnsembleDriver::new(table, potential, params, spec, seed)?;
    driver.extend_to(trajectories)?;
    driver.estimate()
}

/// Series term `hop_count` with the support cells split across workers
/// and summed in a fixed order.
pub fn parallel_fga_term<P>(
    hop_count: usize,
    table: &AmplitudeTable<1>,
    potential: &P,
    params: &PropagationParams,
    spec: GridSpec<1>,
) -> Result<AnsatzTerm<1>>
where
    P: DiabaticPotential<1> + Sync + ?Sized,
{
    let cells = support_cells(table);
    let chunk = 64;
    let ranges: Vec<Range<usize>> = (0..cells.len())
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(cells.len()))
        .collect();
    let pool = worker_pool(default_workers());
    let parts: Vec<Result<AnsatzTerm<1>>> = pool.install(|| {
        ranges
            .par_iter()
            .map(|r| fga_term_partial(hop_count, table, potential, params, spec, &cells, r.clone()))
            .collect()
    });
    let mut total = fga_term_partial(hop_count, table, potential, params, spec, &cells, 0..0)?;
    for part in parts {
        total.grid = total.grid.add(&part?.grid)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fgash_core::initial_data::GaussianWavePacket;
    use fgash_core::potentials::BuiltinModel;
    use fgash_core::reconstruction::{l2_error, l2_norm, Component};
    use fgash_core::series_oracle::fga_term;
    use fgash_core::Point;

    fn setup() -> (AmplitudeTable<1>, PropagationParams, GridSpec<1>) {
        let packet = GaussianWavePacket::new(12.5, Point::<1>::new(-1.5), Point::<1>::new(2.0)).unwrap();
        let table = AmplitudeTable::for_packet(&packet, 0.04, 64).unwrap();
        let params = PropagationParams::new(0.04, 0.04, 0.6);
        (table, params, GridSpec::new(-4.0, 4.0, 512).unwrap())
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (table, params, spec) = setup();
        let model = BuiltinModel::SimpleCrossing;
        let run = |workers| {
            let mut d = EnsembleDriver::new(&table, &model, params, spec, 42)
                .unwrap()
                .with_workers(workers)
                .with_batch_size(50);
            d.extend_to(777).unwrap();
            d.estimate().unwrap()
        };
        let one = run(1);
        let three = run(3);
        assert_eq!(one, three);
    }

    #[test]
    fn prefix_checkpoints_match_one_shot_runs() {
        let (table, params, spec) = setup();
        let model = BuiltinModel::SimpleCrossing;
        let mut d = EnsembleDriver::new(&table, &model, params, spec, 7).unwrap();
        d.extend_to(300).unwrap();
        let early = d.estimate().unwrap();
        d.extend_to(600).unwrap();
        let late = d.estimate().unwrap();
        assert_eq!(d.trajectories(), 600);
        let direct = run_ensemble(&table, &model, params, spec, 600, 7).unwrap();
        let scale = l2_norm(&direct.mean, Component::Both);
        assert!(l2_error(&late.mean, &direct.mean, false).unwrap() <= 1e-12 * scale);
        assert_eq!(early.samples, 300);
    }

    #[test]
    fn restore_rewinds_to_snapshot() {
        let (table, params, spec) = setup();
        let model = BuiltinModel::SimpleCrossing;
        let mut d = EnsembleDriver::new(&table, &model, params, spec, 3).unwrap();
        d.extend_to(256).unwrap();
        let snap = d.snapshot();
        d.extend_to(700).unwrap();
        let far = d.estimate().unwrap();
        d.restore(&snap);
        assert_eq!(d.trajectories(), 256);
        d.extend_to(500).unwrap();
        let mid = d.estimate().unwrap();
        let direct = run_ensemble(&table, &model, params, spec, 500, 3).unwrap();
        assert_eq!(mid, direct);
        assert_eq!(far.samples, 700);
    }

    #[test]
    fn parallel_oracle_matches_serial() {
        let (table, _, spec) = setup();
        let params = PropagationParams::new(0.04, 0.01, 0.3);
        let model = BuiltinModel::SimpleCrossing;
        let a = parallel_fga_term(1, &table, &model, &params, spec).unwrap();
        let b = fga_term(1, &table, &model, &params, spec).unwrap();
        let scale = l2_norm(&b.grid, Component::Both);
        assert!(l2_error(&a.grid, &b.grid, false).unwrap() <= 1e-12 * scale);
    }
}
