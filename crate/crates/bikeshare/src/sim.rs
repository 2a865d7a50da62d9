//! Exact stochastic simulation of the finite-`N` occupancy chain.
//!
//! Stations within a utilization class are exchangeable, so only the counts
//! `(c, k) ↦ number of class-c stations holding k bikes` evolve; each event
//! costs `O(C·(K+1))` instead of `O(N)`. Events are generated with the
//! Gillespie direct method: one exponential clock at the total rate, then a
//! categorical draw among transitions. Time-varying arrival rates are handled
//! by thinning retrieval candidates against the peak rate.
//!
//! # Reproducibility
//!
//! All randomness comes from ChaCha8, a counter-based generator: replication
//! `i` of a run uses the stream `i` of the master seed, so results are
//! bit-identical across runs and independent of execution order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{DemandProfile, EmpiricalMeasure, ModelError, ModelParams};
use crate::ode::Trajectory;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("initial counts have {got} entries, expected {expected}")]
    CountShape { got: usize, expected: usize },
    #[error("initial counts sum to {got}, expected the station count {expected}")]
    CountSum { got: u64, expected: usize },
    #[error("class {class} holds {got} stations, expected weight {expected} of {n}")]
    ClassCount {
        class: usize,
        got: u64,
        expected: f64,
        n: usize,
    },
    #[error("{docked} bikes docked initially, but the fleet only has {fleet}")]
    TooManyDocked { docked: u64, fleet: usize },
    #[error("horizon must be non-negative, got {0}")]
    NegativeHorizon(f64),
    #[error("output spacing must be positive, got {0}")]
    BadOutputDt(f64),
    #[error("need at least 2 replications, got {0}")]
    TooFewReplications(usize),
    #[error("this operation requires stationary demand")]
    RequiresStationary,
    #[error("this operation requires sinusoidal demand")]
    RequiresSinusoidal,
    #[error("time {t} is not on the output grid (spacing {output_dt})")]
    OffGrid { t: f64, output_dt: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One simulation experiment: model, initial counts, horizon, grid,
/// replication budget, and master seed.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: ModelParams,
    /// Initial station counts per `(class, occupancy)`, class-major; must
    /// sum to `N` and respect the class weights.
    pub y0_counts: Vec<u64>,
    pub horizon: f64,
    pub output_dt: f64,
    pub replications: usize,
    pub master_seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        let expected = self.params.state_dim();
        if self.y0_counts.len() != expected {
            return Err(SimError::CountShape {
                got: self.y0_counts.len(),
                expected,
            });
        }
        let n = self.params.station_count;
        let total: u64 = self.y0_counts.iter().sum();
        if total != n as u64 {
            return Err(SimError::CountSum {
                got: total,
                expected: n,
            });
        }
        let dim = self.params.occupancy_dim();
        for (c, class) in self.params.profile.classes().iter().enumerate() {
            let class_total: u64 = self.y0_counts[c * dim..(c + 1) * dim].iter().sum();
            if (class_total as f64 - class.weight * n as f64).abs() > 1e-6 {
                return Err(SimError::ClassCount {
                    class: c,
                    got: class_total,
                    expected: class.weight,
                    n,
                });
            }
        }
        let docked = docked_bikes(&self.y0_counts, dim);
        if docked > self.params.fleet_size as u64 {
            return Err(SimError::TooManyDocked {
                docked,
                fleet: self.params.fleet_size,
            });
        }
        if self.horizon < 0.0 {
            return Err(SimError::NegativeHorizon(self.horizon));
        }
        if self.output_dt <= 0.0 || self.output_dt.is_nan() {
            return Err(SimError::BadOutputDt(self.output_dt));
        }
        Ok(())
    }

    /// Initial counts from per-class occupancy proportions; every
    /// `proportion × N` must be an integer.
    pub fn counts_from_proportions(
        params: &ModelParams,
        proportions: &[f64],
    ) -> Result<Vec<u64>, SimError> {
        let n = params.station_count as f64;
        if proportions.len() != params.state_dim() {
            return Err(SimError::CountShape {
                got: proportions.len(),
                expected: params.state_dim(),
            });
        }
        let mut counts = Vec::with_capacity(proportions.len());
        for &p in proportions {
            let scaled = p * n;
            let rounded = scaled.round();
            if (scaled - rounded).abs() > 1e-9 * n.max(1.0) || rounded < 0.0 {
                return Err(SimError::CountSum {
                    got: scaled.max(0.0) as u64,
                    expected: params.station_count,
                });
            }
            counts.push(rounded as u64);
        }
        Ok(counts)
    }

    fn output_grid(&self) -> Vec<f64> {
        let count = (self.horizon / self.output_dt + 1e-9).floor() as usize;
        (0..=count).map(|i| i as f64 * self.output_dt).collect()
    }
}

fn docked_bikes(counts: &[u64], dim: usize) -> u64 {
    counts
        .iter()
        .enumerate()
        .map(|(idx, &c)| (idx % dim) as u64 * c)
        .sum()
}

/// RNG for replication `index` of a run: ChaCha8 seeded by the master seed,
/// positioned on stream `index`.
pub fn replication_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn exp_variate(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    // Inverse CDF on (0, 1]; guard the u = 0 corner.
    let u: f64 = rng.random();
    let u = if u == 0.0 { f64::MIN_POSITIVE } else { u };
    -u.ln() / rate
}

/// Walks one path of the counts chain, recording the last-seen state at every
/// grid time (càdlàg sampling).
struct PathRunner<'a> {
    params: &'a ModelParams,
    counts: Vec<u64>,
    docked: u64,
    /// Per-class retrieval rate bound `λ̄/r_c`; exact rate for stationary
    /// demand, peak rate for thinning.
    class_bounds: Vec<f64>,
    /// `None` for stationary demand; otherwise accept retrieval candidates at
    /// time `t` with probability `λ(t)/λ̄`.
    thinning: bool,
    grid: Vec<f64>,
    recorded: Vec<EmpiricalMeasure>,
}

impl<'a> PathRunner<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let params = &cfg.params;
        let peak = params.demand.peak_rate();
        let class_bounds = params
            .profile
            .classes()
            .iter()
            .map(|c| peak / c.relative_utilization)
            .collect();
        let dim = params.occupancy_dim();
        let grid = cfg.output_grid();
        let capacity_hint = grid.len();
        Self {
            params,
            counts: cfg.y0_counts.clone(),
            docked: docked_bikes(&cfg.y0_counts, dim),
            class_bounds,
            thinning: !params.demand.is_stationary(),
            grid,
            recorded: Vec::with_capacity(capacity_hint),
        }
    }

    fn measure(&self) -> EmpiricalMeasure {
        let n = self.params.station_count as f64;
        let values = self.counts.iter().map(|&c| c as f64 / n).collect();
        EmpiricalMeasure::from_ode_state(
            self.params.class_count(),
            self.params.capacity,
            values,
            0.0,
        )
        .expect("counts/N is a valid measure")
    }

    fn run(mut self, rng: &mut ChaCha8Rng) -> Trajectory {
        let dim = self.params.occupancy_dim();
        let cap = self.params.capacity;
        let classes = self.params.class_count();
        let n = self.params.station_count as f64;
        let fleet = self.params.fleet_size as u64;
        let mu = self.params.travel_rate;
        let peak = self.params.demand.peak_rate();
        let horizon = *self.grid.last().unwrap_or(&0.0);

        let mut t = 0.0;
        let mut next_record = 0usize;
        loop {
            // Candidate retrieval rate plus exact return rate.
            let mut retrieval_total = 0.0;
            for c in 0..classes {
                let mut occupied = 0u64;
                for k in 1..=cap {
                    occupied += self.counts[c * dim + k];
                }
                retrieval_total += occupied as f64 * self.class_bounds[c];
            }
            let per_station_return = mu / n * (fleet - self.docked) as f64;
            let mut not_full = 0u64;
            for c in 0..classes {
                for k in 0..cap {
                    not_full += self.counts[c * dim + k];
                }
            }
            let return_total = per_station_return * not_full as f64;
            let total = retrieval_total + return_total;

            if total <= 0.0 {
                // Absorbing: every station full with no bikes circulating, or
                // no demand. Hold the state through the remaining grid.
                break;
            }
            let t_next = t + exp_variate(rng, total);

            while next_record < self.grid.len() && self.grid[next_record] <= t_next {
                if self.grid[next_record] > horizon {
                    break;
                }
                self.recorded.push(self.measure());
                next_record += 1;
            }
            if t_next > horizon {
                break;
            }
            t = t_next;

            // Categorical selection, retrievals first then returns.
            let mut u = rng.random::<f64>() * total;
            let mut fired = None;
            'select: for c in 0..classes {
                for k in 1..=cap {
                    let rate = self.counts[c * dim + k] as f64 * self.class_bounds[c];
                    u -= rate;
                    if u < 0.0 {
                        fired = Some((c, k, true));
                        break 'select;
                    }
                }
            }
            if fired.is_none() {
                'select_return: for c in 0..classes {
                    for k in 0..cap {
                        let rate = self.counts[c * dim + k] as f64 * per_station_return;
                        u -= rate;
                        if u < 0.0 {
                            fired = Some((c, k, false));
                            break 'select_return;
                        }
                    }
                }
            }
            // Rounding can leave u barely above zero: attribute to the last
            // positive-rate category.
            let (c, k, is_retrieval) = match fired {
                Some(f) => f,
                None => match last_positive_category(&self.counts, dim, cap, classes) {
                    Some(f) => f,
                    None => break,
                },
            };

            if is_retrieval {
                if self.thinning {
                    // Accept with λ(t)/λ̄; the class factor 1/r cancels.
                    let accept = self.params.demand.rate_at(t) / peak;
                    if rng.random::<f64>() >= accept {
                        continue;
                    }
                }
                self.counts[c * dim + k] -= 1;
                self.counts[c * dim + k - 1] += 1;
                self.docked -= 1;
            } else {
                self.counts[c * dim + k] -= 1;
                self.counts[c * dim + k + 1] += 1;
                self.docked += 1;
            }
            debug_assert!(self.docked <= fleet);
            debug_assert_eq!(
                self.counts.iter().sum::<u64>(),
                self.params.station_count as u64
            );
        }

        while next_record < self.grid.len() {
            self.recorded.push(self.measure());
            next_record += 1;
        }
        Trajectory::from_parts(self.grid, self.recorded, None)
    }
}

fn last_positive_category(
    counts: &[u64],
    dim: usize,
    cap: usize,
    classes: usize,
) -> Option<(usize, usize, bool)> {
    for c in (0..classes).rev() {
        for k in (0..cap).rev() {
            if counts[c * dim + k] > 0 {
                return Some((c, k, false));
            }
        }
    }
    for c in (0..classes).rev() {
        for k in (1..=cap).rev() {
            if counts[c * dim + k] > 0 {
                return Some((c, k, true));
            }
        }
    }
    None
}

fn simulate_stream(cfg: &SimConfig, stream: u64) -> Trajectory {
    let mut rng = replication_rng(cfg.master_seed, stream);
    PathRunner::new(cfg).run(&mut rng)
}

/// Simulate one path of `Y_t^N` under stationary demand. `stream` selects the
/// RNG stream of the configured master seed.
pub fn simulate_path(cfg: &SimConfig, stream: u64) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    if !cfg.params.demand.is_stationary() {
        return Err(SimError::RequiresStationary);
    }
    Ok(simulate_stream(cfg, stream))
}

/// Simulate one path under sinusoidal demand: retrieval candidates are
/// generated at the peak rate and thinned by `λ(t)/λ̄`; returns are exact.
pub fn simulate_path_nonstationary(cfg: &SimConfig, stream: u64) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    if cfg.params.demand.is_stationary() {
        return Err(SimError::RequiresSinusoidal);
    }
    Ok(simulate_stream(cfg, stream))
}

/// Event times of a non-homogeneous Poisson process with the given rate
/// profile on `[0, horizon]`, by thinning against the peak rate.
pub fn sample_nhpp(demand: &DemandProfile, horizon: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let peak = demand.peak_rate();
    let mut times = Vec::new();
    let mut t = 0.0;
    if peak <= 0.0 || peak.is_nan() {
        return times;
    }
    loop {
        t += exp_variate(rng, peak);
        if t > horizon {
            return times;
        }
        if rng.random::<f64>() < demand.rate_at(t) / peak {
            times.push(t);
        }
    }
}

/// Across-replication statistics of the aggregated occupancy proportions:
/// sample mean `m(k, t)`, sample variance `v(k, t)`, and the
/// `m ± 2√v` band.
#[derive(Debug, Clone)]
pub struct SimStats {
    grid: Vec<f64>,
    /// `[time][k]` sample means.
    mean: Vec<Vec<f64>>,
    /// `[time][k]` unbiased sample variances.
    variance: Vec<Vec<f64>>,
    replications: usize,
}

impl SimStats {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn replications(&self) -> usize {
        self.replications
    }

    pub fn occupancy_dim(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    pub fn mean(&self, time_index: usize, occupancy: usize) -> f64 {
        self.mean[time_index][occupancy]
    }

    pub fn variance(&self, time_index: usize, occupancy: usize) -> f64 {
        self.variance[time_index][occupancy]
    }

    pub fn band_low(&self, time_index: usize, occupancy: usize) -> f64 {
        self.mean(time_index, occupancy) - 2.0 * self.variance(time_index, occupancy).sqrt()
    }

    pub fn band_high(&self, time_index: usize, occupancy: usize) -> f64 {
        self.mean(time_index, occupancy) + 2.0 * self.variance(time_index, occupancy).sqrt()
    }

    pub fn mean_series(&self, occupancy: usize) -> Vec<f64> {
        self.mean.iter().map(|row| row[occupancy]).collect()
    }

    pub fn variance_series(&self, occupancy: usize) -> Vec<f64> {
        self.variance.iter().map(|row| row[occupancy]).collect()
    }
}

/// Merge per-replication aggregated trajectories in index order with a
/// one-pass Welford accumulation.
fn stats_from_paths(grid: Vec<f64>, paths: &[Vec<Vec<f64>>]) -> SimStats {
    let replications = paths.len();
    let times = grid.len();
    let dim = paths[0][0].len();
    let mut mean = vec![vec![0.0; dim]; times];
    let mut m2 = vec![vec![0.0; dim]; times];
    for (i, path) in paths.iter().enumerate() {
        let count = (i + 1) as f64;
        for t in 0..times {
            for k in 0..dim {
                let x = path[t][k];
                let delta = x - mean[t][k];
                mean[t][k] += delta / count;
                m2[t][k] += delta * (x - mean[t][k]);
            }
        }
    }
    let denom = (replications.max(2) - 1) as f64;
    let variance = m2
        .into_iter()
        .map(|row| row.into_iter().map(|v| v / denom).collect())
        .collect();
    SimStats {
        grid,
        mean,
        variance,
        replications,
    }
}

fn aggregated_path(trajectory: &Trajectory) -> Vec<Vec<f64>> {
    trajectory.states().iter().map(|y| y.aggregated()).collect()
}

/// Run all configured replications (in parallel) and aggregate. Replication
/// `i` uses RNG stream `i`; the merge order is fixed by index, so the result
/// is independent of scheduling.
pub fn replicate(cfg: &SimConfig) -> Result<SimStats, SimError> {
    cfg.validate()?;
    if cfg.replications < 2 {
        return Err(SimError::TooFewReplications(cfg.replications));
    }
    let paths: Vec<Vec<Vec<f64>>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|stream| aggregated_path(&simulate_stream(cfg, stream)))
        .collect();
    Ok(stats_from_paths(cfg.output_grid(), &paths))
}

/// Both sides of the occupancy-mean flow balance at one `(k, t)`:
/// a finite-difference estimate of `d/dt E[Y_t(k)]` against the Monte-Carlo
/// average of the transition-rate expression, from the same ensemble.
#[derive(Debug, Clone)]
pub struct MomentRateReport {
    pub occupancy: usize,
    pub t: f64,
    pub window: f64,
    pub derivative_estimate: f64,
    pub derivative_se: f64,
    pub rate_estimate: f64,
    pub rate_se: f64,
    /// z-score of the per-replication paired differences.
    pub paired_z: f64,
}

fn grid_index(t: f64, output_dt: f64, len: usize) -> Result<usize, SimError> {
    let ratio = t / output_dt;
    let idx = ratio.round();
    if (ratio - idx).abs() > 1e-6 || idx < 0.0 || idx as usize >= len {
        return Err(SimError::OffGrid { t, output_dt });
    }
    Ok(idx as usize)
}

/// Estimate `d/dt E[Y_t(k)]` two ways from one replication ensemble.
///
/// The derivative side is a centered difference of each path over
/// `[t − window, t + window]`; the rate side averages the exact transition
/// rate expression evaluated on the time-`t` states. Stationary demand only.
pub fn moment_rate_check(
    cfg: &SimConfig,
    occupancy: usize,
    t: f64,
    window: f64,
) -> Result<MomentRateReport, SimError> {
    cfg.validate()?;
    if !cfg.params.demand.is_stationary() {
        return Err(SimError::RequiresStationary);
    }
    if cfg.replications < 2 {
        return Err(SimError::TooFewReplications(cfg.replications));
    }
    let grid = cfg.output_grid();
    let idx_lo = grid_index(t - window, cfg.output_dt, grid.len())?;
    let idx_hi = grid_index(t + window, cfg.output_dt, grid.len())?;
    let idx_at = grid_index(t, cfg.output_dt, grid.len())?;
    let span = grid[idx_hi] - grid[idx_lo];

    let params = &cfg.params;
    let cap = params.capacity;
    let mu = params.travel_rate;
    let gamma = params.bikes_per_station();
    let per_rep: Vec<(f64, f64)> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|stream| {
            let path = simulate_stream(cfg, stream);
            let states = path.states();
            let fd =
                (states[idx_hi].aggregate(occupancy) - states[idx_lo].aggregate(occupancy)) / span;
            let y = &states[idx_at];
            let ret = mu * (gamma - y.docked_mean());
            let mut rate = 0.0;
            for (c, class) in params.profile.classes().iter().enumerate() {
                let lam = params.demand.rate_at(t) / class.relative_utilization;
                if occupancy < cap {
                    rate += lam * y.get(c, occupancy + 1) - ret * y.get(c, occupancy);
                }
                if occupancy > 0 {
                    rate += ret * y.get(c, occupancy - 1) - lam * y.get(c, occupancy);
                }
            }
            (fd, rate)
        })
        .collect();

    let r = per_rep.len() as f64;
    let mean = |sel: &dyn Fn(&(f64, f64)) -> f64| per_rep.iter().map(sel).sum::<f64>() / r;
    let se = |sel: &dyn Fn(&(f64, f64)) -> f64, m: f64| {
        let var = per_rep.iter().map(|p| (sel(p) - m).powi(2)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    };
    let fd_mean = mean(&|p| p.0);
    let rate_mean = mean(&|p| p.1);
    let fd_se = se(&|p| p.0, fd_mean);
    let rate_se = se(&|p| p.1, rate_mean);
    let diff_mean = mean(&|p| p.0 - p.1);
    let diff_se = se(&|p| p.0 - p.1, diff_mean);
    let paired_z = if diff_se > 0.0 {
        diff_mean / diff_se
    } else {
        0.0
    };

    Ok(MomentRateReport {
        occupancy,
        t,
        window,
        derivative_estimate: fd_mean,
        derivative_se: fd_se,
        rate_estimate: rate_mean,
        rate_se,
        paired_z,
    })
}
