//! Performance measures derived from occupancy dynamics: bikes in
//! circulation with variance bands, equilibrium sweeps, distribution shape,
//! and the lag between demand swings and the occupancy response.

use thiserror::Error;

use crate::model::{DemandProfile, EmpiricalMeasure, ModelParams};
use crate::ode::{self, CovarianceTrajectory, OdeError, Trajectory};
use crate::sim::SimStats;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("series grids do not line up: {0}")]
    GridMismatch(String),
    #[error("lag analysis requires sinusoidal demand")]
    RequiresSinusoidal,
    #[error(
        "no matching series extremum within one period of the rate extremum at t = {lambda_time}"
    )]
    NoExtremum { lambda_time: f64 },
    #[error("series too short: need at least {needed} points after burn-in")]
    SeriesTooShort { needed: usize },
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Aggregated occupancy means on a time grid; the common input shape for
/// mean-field solutions and simulation statistics.
#[derive(Debug, Clone)]
pub struct OccupancySeries {
    pub grid: Vec<f64>,
    /// `[time][k]` occupancy proportions.
    pub means: Vec<Vec<f64>>,
}

impl OccupancySeries {
    pub fn from_trajectory(trajectory: &Trajectory) -> Self {
        Self {
            grid: trajectory.grid().to_vec(),
            means: trajectory.states().iter().map(|y| y.aggregated()).collect(),
        }
    }

    pub fn from_sim_stats(stats: &SimStats) -> Self {
        let dim = stats.occupancy_dim();
        Self {
            grid: stats.grid().to_vec(),
            means: (0..stats.grid().len())
                .map(|t| (0..dim).map(|k| stats.mean(t, k)).collect())
                .collect(),
        }
    }
}

/// Bikes in circulation over time: mean, variance, and `mean ± 2σ` band.
#[derive(Debug, Clone)]
pub struct CirculationSeries {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
}

fn grids_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(1.0))
}

/// Mean bikes in circulation `N·(γ − Σ j·y(j))` with the diffusion variance
/// `N·(Σ j²·Σ_jj + 2·Σ_{i<j} i·j·Σ_ij)`. Pass `None` for a band-free series.
pub fn circulation(
    occupancy: &OccupancySeries,
    covariance: Option<&CovarianceTrajectory>,
    params: &ModelParams,
) -> Result<CirculationSeries, MeasureError> {
    if let Some(cov) = covariance {
        if !grids_match(&occupancy.grid, cov.grid()) {
            return Err(MeasureError::GridMismatch(format!(
                "occupancy grid has {} points, covariance {}",
                occupancy.grid.len(),
                cov.len()
            )));
        }
    }
    let n = params.station_count as f64;
    let gamma = params.bikes_per_station();
    let mut mean = Vec::with_capacity(occupancy.grid.len());
    let mut variance = Vec::with_capacity(occupancy.grid.len());
    for (ti, row) in occupancy.means.iter().enumerate() {
        let docked: f64 = row.iter().enumerate().map(|(j, &y)| j as f64 * y).sum();
        mean.push(n * (gamma - docked));
        let var = match covariance {
            Some(cov) => {
                let sigma = &cov.states()[ti].cov;
                let dim = sigma.nrows();
                let mut acc = 0.0;
                for j in 0..dim {
                    acc += (j * j) as f64 * sigma[(j, j)];
                }
                for i in 0..dim {
                    for j in (i + 1)..dim {
                        acc += 2.0 * (i * j) as f64 * sigma[(i, j)];
                    }
                }
                n * acc
            }
            None => 0.0,
        };
        variance.push(var.max(0.0));
    }
    let band_low = mean
        .iter()
        .zip(&variance)
        .map(|(m, v)| m - 2.0 * v.sqrt())
        .collect();
    let band_high = mean
        .iter()
        .zip(&variance)
        .map(|(m, v)| m + 2.0 * v.sqrt())
        .collect();
    Ok(CirculationSeries {
        grid: occupancy.grid.clone(),
        mean,
        variance,
        band_low,
        band_high,
    })
}

/// Equilibrium average docked bikes per station across an arrival-rate grid.
/// Each solve starts from the all-empty measure.
pub fn avg_bikes_vs_lambda(
    template: &ModelParams,
    lambda_grid: &[f64],
    tol: f64,
) -> Result<Vec<(f64, f64)>, MeasureError> {
    let mut out = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let params = template
            .clone()
            .with_demand(DemandProfile::Stationary { rate: lambda });
        let y0 = all_empty_measure(&params);
        let eq = ode::equilibrium(&params, &y0, tol)?;
        out.push((lambda, eq.docked_mean()));
    }
    Ok(out)
}

/// Valid starting measure with every station empty: `y(c, 0) = w_c`.
pub fn all_empty_measure(params: &ModelParams) -> EmpiricalMeasure {
    let dim = params.occupancy_dim();
    let mut values = vec![0.0; params.state_dim()];
    for (c, class) in params.profile.classes().iter().enumerate() {
        values[c * dim] = class.weight;
    }
    EmpiricalMeasure::new(params.class_count(), params.capacity, values)
        .expect("weights sum to one")
}

/// Location and shape summary of an occupancy distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionStats {
    /// `Σ k·y(k)`.
    pub mean: f64,
    /// Smallest `k` with cumulative mass ≥ 1/2.
    pub median: usize,
    /// `mean − median`: positive for right skew, negative for left skew.
    pub skew_indicator: f64,
}

pub fn distribution_stats(y: &EmpiricalMeasure) -> DistributionStats {
    let agg = y.aggregated();
    let mean: f64 = agg.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
    let mut cumulative = 0.0;
    let mut median = agg.len() - 1;
    for (k, &v) in agg.iter().enumerate() {
        cumulative += v;
        if cumulative >= 0.5 {
            median = k;
            break;
        }
    }
    DistributionStats {
        mean,
        median,
        skew_indicator: mean - median as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    Peak,
    Valley,
}

impl ExtremumKind {
    pub fn label(self) -> &'static str {
        match self {
            ExtremumKind::Peak => "peak",
            ExtremumKind::Valley => "valley",
        }
    }
}

/// One matched pair: an arrival-rate extremum and the nearest same-type
/// extremum of a target series at or after it.
#[derive(Debug, Clone, Copy)]
pub struct LagEntry {
    pub series: usize,
    pub kind: ExtremumKind,
    pub lambda_time: f64,
    pub series_time: f64,
    pub lag: f64,
}

/// Lag-analysis result for one model configuration.
#[derive(Debug, Clone)]
pub struct LagReport {
    pub travel_rate: f64,
    pub entries: Vec<LagEntry>,
}

fn local_extrema(grid: &[f64], series: &[f64], kind: ExtremumKind) -> Vec<f64> {
    let mut times = Vec::new();
    for i in 1..series.len().saturating_sub(1) {
        let hit = match kind {
            ExtremumKind::Peak => series[i] > series[i - 1] && series[i] >= series[i + 1],
            ExtremumKind::Valley => series[i] < series[i - 1] && series[i] <= series[i + 1],
        };
        if hit {
            times.push(grid[i]);
        }
    }
    times
}

/// Lags between the extrema of `λ(t)` and the extrema of each target series.
///
/// Rate extrema are located analytically (`sin` peaks at `ωt = π/2 + 2πm`);
/// series extrema by discrete comparison on the grid. Each rate extremum is
/// paired with the nearest same-type series extremum occurring at or after it
/// within one period; a window with no such extremum is an error. Extrema are
/// only considered after `burn_in` and only when a full period of data
/// remains.
pub fn lag_analysis(
    params: &ModelParams,
    grid: &[f64],
    series_by_k: &[Vec<f64>],
    burn_in: f64,
) -> Result<LagReport, MeasureError> {
    let DemandProfile::Sinusoidal {
        angular_frequency, ..
    } = params.demand
    else {
        return Err(MeasureError::RequiresSinusoidal);
    };
    let period = 2.0 * std::f64::consts::PI / angular_frequency;
    let t_end = *grid
        .last()
        .ok_or(MeasureError::SeriesTooShort { needed: 3 })?;
    if grid.len() < 3 {
        return Err(MeasureError::SeriesTooShort { needed: 3 });
    }
    // A discrete extremum can land up to one sample before the analytic one;
    // open each match window one grid step early.
    let grid_slack = grid[1] - grid[0];

    let mut entries = Vec::new();
    for (series_idx, series) in series_by_k.iter().enumerate() {
        if series.len() != grid.len() {
            return Err(MeasureError::GridMismatch(format!(
                "series {series_idx} has {} points, grid has {}",
                series.len(),
                grid.len()
            )));
        }
        for kind in [ExtremumKind::Peak, ExtremumKind::Valley] {
            let phase = match kind {
                ExtremumKind::Peak => std::f64::consts::FRAC_PI_2,
                ExtremumKind::Valley => 1.5 * std::f64::consts::PI,
            };
            let series_extrema = local_extrema(grid, series, kind);
            let mut m = 0u32;
            loop {
                let lambda_time =
                    (phase + 2.0 * std::f64::consts::PI * m as f64) / angular_frequency;
                m += 1;
                if lambda_time < burn_in {
                    continue;
                }
                if lambda_time + period > t_end {
                    break;
                }
                let matched = series_extrema
                    .iter()
                    .find(|&&t| t >= lambda_time - grid_slack && t < lambda_time + period);
                match matched {
                    Some(&series_time) => entries.push(LagEntry {
                        series: series_idx,
                        kind,
                        lambda_time,
                        series_time,
                        lag: series_time - lambda_time,
                    }),
                    None => return Err(MeasureError::NoExtremum { lambda_time }),
                }
            }
        }
    }
    Ok(LagReport {
        travel_rate: params.travel_rate,
        entries,
    })
}
