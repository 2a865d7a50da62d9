//! Drivers for each experiment kind: run the analysis, emit CSV (and
//! optional SVG) artifacts, and close the run manifest.

use anyhow::{bail, Context, Result};
use serde::Serialize;

use bikeshare::ingest;
use bikeshare::measures::{self, ExtremumKind, OccupancySeries};
use bikeshare::ode::{self, CovarianceTrajectory, Trajectory};
use bikeshare::sim::{self, SimStats};

use crate::artifacts::{fmt, ArtifactSet, Manifest};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::svg::{self, Series};

pub fn run(kind: ExperimentKind, config: &ExperimentConfig) -> Result<Manifest> {
    let mut artifacts = ArtifactSet::create(&config.out_dir)?;
    match kind {
        ExperimentKind::Meanfield => mean_field_experiment(config, &mut artifacts)?,
        ExperimentKind::Diffusion => diffusion_experiment(config, &mut artifacts)?,
        ExperimentKind::Simulate => simulate_experiment(config, &mut artifacts)?,
        ExperimentKind::Compare => compare_experiment(config, &mut artifacts)?,
        ExperimentKind::Equilibrium => equilibrium_experiment(config, &mut artifacts)?,
        ExperimentKind::Sweep => sweep_experiment(config, &mut artifacts)?,
        ExperimentKind::Lag => lag_experiment(config, &mut artifacts)?,
        ExperimentKind::Ingest => ingest_experiment(config, &mut artifacts)?,
    }
    artifacts.finish(kind.name(), config.master_seed, &config.canonical_json()?)
}

fn solve_configured_mean_field(config: &ExperimentConfig) -> Result<Trajectory> {
    let params = config.model_params()?;
    let y0 = config.initial_measure(&params)?;
    ode::solve_mean_field(&params, &y0, config.horizon, config.step, config.output_dt)
        .context("mean-field solve failed")
}

fn mean_field_experiment(config: &ExperimentConfig, artifacts: &mut ArtifactSet) -> Result<()> {
    let mf = solve_configured_mean_field(config)?;
    let dim = config.capacity + 1;
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|k| format!("y{k}")));
    let rows: Vec<Vec<String>> = mf
        .grid()
        .iter()
        .zip(mf.states())
        .map(|(&t, y)| {
            let mut row = vec![fmt(t)];
            row.extend(y.aggregated().iter().map(|&v| fmt(v)));
            row
        })
        .collect();
    artifacts.write_csv("meanfield.csv", &header, &rows)?;

    if config.svg {
        let series: Vec<Series> = (0..dim)
            .map(|k| Series {
                name: format!("y({k})"),
                points: mf
                    .grid()
                    .iter()
                    .zip(mf.aggregated_series(k))
                    .map(|(&t, v)| (t, v))
                    .collect(),
                dashed: false,
            })
            .collect();
        let chart = svg::line_chart("Mean-field occupancy proportions", "t", "y(k)", &series);
        artifacts.write("meanfield.svg", chart.as_bytes())?;
    }
    Ok(())
}

fn write_circulation(
    config: &ExperimentConfig,
    artifacts: &mut ArtifactSet,
    mf: &Trajectory,
    cov: &CovarianceTrajectory,
) -> Result<()> {
    let params = config.model_params()?;
    let occupancy = OccupancySeries::from_trajectory(mf);
    let series = measures::circulation(&occupancy, Some(cov), &params)?;
    let header = ["t", "mean", "var", "lo", "hi"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let rows: Vec<Vec<String>> = (0..series.grid.len())
        .map(|i| {
            vec![
                fmt(series.grid[i]),
                fmt(series.mean[i]),
                fmt(series.variance[i]),
                fmt(series.band_low[i]),
                fmt(series.band_high[i]),
            ]
        })
        .collect();
    artifacts.write_csv("circulation.csv", &header, &rows)?;

    if config.svg {
        let pair = |v: &[f64]| {
            series
                .grid
                .iter()
                .zip(v)
                .map(|(&t, &y)| (t, y))
                .collect::<Vec<_>>()
        };
        let chart = svg::line_chart(
            "Bikes in circulation",
            "t",
            "bikes",
            &[
                Series {
                    name: "mean".into(),
                    points: pair(&series.mean),
                    dashed: false,
                },
                Series {
                    name: "mean - 2sd".into(),
                    points: pair(&series.band_low),
                    dashed: true,
                },
                Series {
                    name: "mean + 2sd".into(),
                    points: pair(&series.band_high),
                    dashed: true,
                },
            ],
        );
        artifacts.write("circulation.svg", chart.as_bytes())?;
    }
    Ok(())
}

fn diffusion_experiment(config: &ExperimentConfig, artifacts: &mut ArtifactSet) -> Result<()> {
    let params = config.model_params()?;
    let mf = solve_configured_mean_field(config)?;
    let cov = ode::solve_covariance_default(&params, &mf).context("covariance solve failed")?;

    let dim = config.capacity + 1;
    let mut header = vec!["t".to_string()];
    for i in 0..dim {
        for j in i..dim {
            header.push(format!("sigma_{i}_{j}"));
        }
    }
    let rows: Vec<Vec<String>> = cov
        .grid()
        .iter()
        .zip(cov.states())
        .map(|(&t, state)| {
            let mut row = vec![fmt(t)];
            for i in 0..dim {
                for j in i..dim {
                    row.push(fmt(state.cov[(i, j)]));
                }
            }
            row
        })
        .collect();
    artifacts.write_csv("diffusion.csv", &header, &rows)?;

    if config.svg {
        let series: Vec<Series> = (0..dim)
            .map(|k| Series {
                name: format!("Var D({k})"),
                points: cov
                    .grid()
                    .iter()
                    .zip(cov.variance_series(k))
                    .map(|(&t, v)| (t, v))
                    .collect(),
                dashed: false,
            })
            .collect();
        let chart = svg::line_chart("Fluctuation variances", "t", "Var", &series);
        artifacts.write("diffusion.svg", chart.as_bytes())?;
    }
    write_circulation(config, artifacts, &mf, &cov)
}

fn simulate_experiment(config: &ExperimentConfig, artifacts: &mut ArtifactSet) -> Result<()> {
    let cfg = config.sim_config()?;
    let stats = sim::replicate(&cfg).context("simulation failed")?;
    let dim = config.capacity + 1;
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|k| format!("mean_k{k}")));
    header.extend((0..dim).map(|k| format!("var_k{k}")));
    let rows: Vec<Vec<String>> = stats
        .grid()
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let mut row = vec![fmt(t)];
            row.extend((0..dim).map(|k| fmt(stats.mean(ti, k))));
            row.extend((0..dim).map(|k| fmt(stats.variance(ti, k))));
            row
        })
        .collect();
    artifacts.write_csv("simulate.csv", &header, &rows)?;

    if config.svg {
        let series: Vec<Series> = (0..dim)
            .map(|k| Series {
                name: format!("Y({k})"),
                points: stats
                    .grid()
                    .iter()
                    .zip(stats.mean_series(k))
                    .map(|(&t, v)| (t, v))
                    .collect(),
                dashed: false,
            })
            .collect();
        let chart = svg::line_chart("Simulated occupancy proportions", "t", "Y(k)", &series);
        artifacts.write("simulate.svg", chart.as_bytes())?;
    }
    Ok(())
}

fn compare_experiment(config: &ExperimentConfig, artifacts: &mut ArtifactSet) -> Result<()> {
    let params = config.model_params()?;
    let k = config.series_k;
    if k > config.capacity {
        bail!("series_k: {k} exceeds the capacity {}", config.capacity);
    }
    let cfg = config.sim_config()?;
    let stats: SimStats = sim::replicate(&cfg).context("simulation failed")?;
    let mf = solve_configured_mean_field(config)?;
    let cov = ode::solve_covariance_default(&params, &mf).context("covariance solve failed")?;
    if stats.grid().len() != mf.len() {
        bail!(
            "horizon/output_dt: simulation grid ({}) and mean-field grid ({}) differ",
            stats.grid().len(),
            mf.len()
        );
    }

    let n = config.station_count as f64;
    let header = vec![
        "t".to_string(),
        format!("sim_mean_k{k}"),
        "sim_band_lo".to_string(),
        "sim_band_hi".to_string(),
        format!("mf_k{k}"),
        "diff_band_lo".to_string(),
        "diff_band_hi".to_string(),
    ];
    let mf_series = mf.aggregated_series(k);
    let var_series = cov.variance_series(k);
    let rows: Vec<Vec<String>> = stats
        .grid()
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            // Y ≈ y ± 2·√(Σ_kk / N): the fluctuation band scaled back to Y.
            let half_width = 2.0 * (var_series[ti] / n).sqrt();
            vec![
                fmt(t),
                fmt(stats.mean(ti, k)),
                fmt(stats.band_low(ti, k)),
                fmt(stats.band_high(ti, k)),
                fmt(mf_series[ti]),
                fmt(mf_series[ti] - half_width),
                fmt(mf_series[ti] + half_width),
            ]
        })
        .collect();
    artifacts.write_csv("compare.csv", &header, &rows)?;

    if config.svg {
        let grid = stats.grid().to_vec();
        let pair = |v: Vec<f64>| grid.iter().zip(v).map(|(&t, y)| (t, y)).collect::<Vec<_>>();
        let chart = svg::line_chart(
            &format!("Simulation vs limits, k = {k}"),
            "t",
            &format!("Y({k})"),
            &[
                Series {
                    name: "sim mean".into(),
                    points: pair(stats.mean_series(k)),
                    dashed: false,
                },
                Series {
                    name: "sim +/- 2sd".into(),
                    points: pair((0..grid.len()).map(|ti| stats.band_low(ti, k)).collect()),
                    dashed: false,
                },
                Series {
                    name: "".into(),
                    points: pair((0..grid.len()).map(|ti| stats.band_high(ti, k)).collect()),
                    dashed: false,
                },
                Series {
                    name: "mean field".into(),
                    points: pair(mf_series.clone()),
                    dashed: true,
                },
                Series {
                    name: "diffusion band".into(),
                    points: pair(
                        (0..grid.len())
                            .map(|ti| mf_series[ti] - 2.0 * (var_series[ti] / n).sqrt())
                            .collect(),
                    ),
                    dashed: true,
                },
                Series {
                    name: "".into(),
                    points: pair(
                        (0..grid.len())
                            .map(|ti| mf_series[ti] + 2.0 * (var_series[ti] / n).sqrt())
                            .collect(),
                    ),
                    dashed: true,
                },
            ],
        );
        artifacts.write("compare.svg", chart.as_bytes())?;
    }
    write_circulation(config, artifacts, &mf, &cov)
}

#[derive(Serialize)]
struct EquilibriumStats {
    mean: f64,
    median: usize,
    skew_indicator: f64,
    circulation_mean: f64,
    drift_residual: f64,
}

fn equilibrium_experiment(config: &ExperimentConfig, artifacts: &mut ArtifactSet) -> Result<()> {
    let params = config.model_params()?;
    let y0 = config.initial_measure(&params)?;
    let eq = ode::equilibrium(&params, &y0, config.equilibrium_tol)
        .context("equilibrium solve failed")?;
    let aggregated = eq.aggregated();
    let header = vec!["k".to_string(), "y".to_string()];
    let rows: Vec<Vec<String>> = aggregated
        .iter()
        .enumerate()
        .map(|(k, &v)| vec![k.to_string(), fmt(v)])
        .collect();
    artifacts.write_csv("equilibrium.csv", &header, &rows)?;

    let shape = measures::distribution_stats(&eq);
    let stats = EquilibriumStats {
        mean: shape.mean,
        median: shape.median,
        skew_indicator: shape.skew_indicator,
        circulation_mean: params.station_count as f64
            * (params.bikes_per_station() - eq.docked_mean()),
        drift_residual: ode::drift_residual(&params, &eq),
    };
    artifacts.write_json("equilibrium_stats.json", &stats)?;

    if config.svg {
        let chart = svg::line_chart(
            "Equilibrium occupancy distribution",
            "k",
            "y(k)",
            &[Series {
                name: "y*".into(),
                points: aggregated
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| (k as f64, v))
                    .collect(),
                dashed: false,
            }],
        );
        artifacts.write("equilibrium.svg", chart.as_bytes())?;
    }
    Ok(())
}

fn sweep_experiment(config: &ExperimentConfig, artifacts: &mut ArtifactSet) -> Result<()> {
    let params = config.model_params()?;
    let grid = config
        .lambda_grid
        .clone()
        .unwrap_or_else(|| vec![0.5, 1.0, 1.5, 2.0]);
    let pairs = measures::avg_bikes_vs_lambda(&params, &grid, config.equilibrium_tol)
        .context("equilibrium sweep failed")?;
    let header = vec!["lambda".to_string(), "avg_docked".to_string()];
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .map(|&(l, avg)| vec![fmt(l), fmt(avg)])
        .collect();
    artifacts.write_csv("sweep.csv", &header, &rows)?;

    if config.svg {
        let chart = svg::line_chart(
            "Equilibrium average docked bikes vs arrival rate",
            "lambda",
            "avg bikes",
            &[Series {
                name: "avg docked".into(),
                points: pairs,
                dashed: false,
            }],
        );
        artifacts.write("sweep.svg", chart.as_bytes())?;
    }
    Ok(())
}

/// Mean lag per (occupancy, extremum kind) across the travel-rate grid.
type LagChartSeries = (usize, ExtremumKind, Vec<(f64, f64)>);

fn lag_experiment(config: &ExperimentConfig, artifacts: &mut ArtifactSet) -> Result<()> {
    let base_params = config.model_params()?;
    let bikeshare::model::DemandProfile::Sinusoidal {
        angular_frequency, ..
    } = base_params.demand
    else {
        bail!("demand: lag analysis requires sinusoidal demand");
    };
    let period = 2.0 * std::f64::consts::PI / angular_frequency;
    if config.horizon < config.burn_in + 2.0 * period {
        bail!(
            "horizon: need at least burn_in + 2 periods = {}",
            config.burn_in + 2.0 * period
        );
    }
    let mu_grid = config
        .mu_grid
        .clone()
        .unwrap_or_else(|| vec![config.travel_rate]);

    let header = [
        "mu",
        "series_k",
        "extremum_type",
        "lambda_time",
        "series_time",
        "lag",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut chart_points: Vec<LagChartSeries> = Vec::new();
    for &mu in &mu_grid {
        let params = base_params.clone().with_travel_rate(mu);
        let y0 = config.initial_measure(&params)?;
        let mf = ode::solve_mean_field(&params, &y0, config.horizon, config.step, config.output_dt)
            .context("mean-field solve failed")?;
        let series: Vec<Vec<f64>> = (0..=config.capacity)
            .map(|k| mf.aggregated_series(k))
            .collect();
        let report = measures::lag_analysis(&params, mf.grid(), &series, config.burn_in)
            .context("lag analysis failed")?;
        for entry in &report.entries {
            rows.push(vec![
                fmt(mu),
                entry.series.to_string(),
                entry.kind.label().to_string(),
                fmt(entry.lambda_time),
                fmt(entry.series_time),
                fmt(entry.lag),
            ]);
        }
        // Mean lag per (k, kind) for the chart.
        for k in 0..=config.capacity {
            for kind in [ExtremumKind::Peak, ExtremumKind::Valley] {
                let lags: Vec<f64> = report
                    .entries
                    .iter()
                    .filter(|e| e.series == k && e.kind == kind)
                    .map(|e| e.lag)
                    .collect();
                if lags.is_empty() {
                    continue;
                }
                let mean = lags.iter().sum::<f64>() / lags.len() as f64;
                match chart_points
                    .iter_mut()
                    .find(|(s, kd, _)| *s == k && *kd == kind)
                {
                    Some((_, _, pts)) => pts.push((mu, mean)),
                    None => chart_points.push((k, kind, vec![(mu, mean)])),
                }
            }
        }
    }
    artifacts.write_csv("lag.csv", &header, &rows)?;

    if config.svg {
        let series: Vec<Series> = chart_points
            .iter()
            .map(|(k, kind, pts)| Series {
                name: format!("k={k} {}", kind.label()),
                points: pts.clone(),
                dashed: *kind == ExtremumKind::Valley,
            })
            .collect();
        let chart = svg::line_chart("Response lag vs travel rate", "mu", "lag", &series);
        artifacts.write("lag.svg", chart.as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct IngestStats {
    trips: usize,
    skipped: usize,
    mean_secs: f64,
    median_secs: f64,
    std_dev_secs: f64,
    travel_rate_estimate_per_sec: f64,
    timezone: String,
}

fn ingest_experiment(config: &ExperimentConfig, artifacts: &mut ArtifactSet) -> Result<()> {
    let Some(ingest_cfg) = &config.ingest else {
        bail!("ingest: section required for the ingest experiment");
    };
    let schema = match ingest_cfg.schema.as_str() {
        "citibike" => ingest::TripSchema::citibike(),
        other => bail!("ingest.schema: unknown preset {other:?}"),
    };
    let parsed = ingest::parse_trips(&ingest_cfg.path, &schema)
        .with_context(|| format!("cannot ingest {}", ingest_cfg.path.display()))?;
    if parsed.records.is_empty() {
        bail!(
            "ingest.path: no usable trips in {}",
            ingest_cfg.path.display()
        );
    }
    let bins = ingest::binned_rates(
        &parsed.records,
        ingest_cfg.bin_seconds,
        ingest_cfg.fold_weeks,
    )?;
    let header = ["bin_start_seconds", "starts_per_bin", "ends_per_bin"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let rows: Vec<Vec<String>> = (0..bins.starts.len())
        .map(|i| {
            vec![
                fmt((i as u32 * bins.bin_seconds) as f64),
                fmt(bins.starts[i]),
                fmt(bins.ends[i]),
            ]
        })
        .collect();
    artifacts.write_csv("profile.csv", &header, &rows)?;

    let stats = ingest::duration_stats(&parsed.records, ingest_cfg.histogram_bin_secs)?;
    artifacts.write_json(
        "duration_stats.json",
        &IngestStats {
            trips: stats.count,
            skipped: parsed.skipped,
            mean_secs: stats.mean_secs,
            median_secs: stats.median_secs,
            std_dev_secs: stats.std_dev_secs,
            travel_rate_estimate_per_sec: stats.travel_rate_estimate,
            timezone: schema.timezone.clone(),
        },
    )?;

    if let Some(omega) = ingest_cfg.fit_angular_frequency {
        let times: Vec<f64> = (0..bins.starts.len())
            .map(|i| bins.bin_midpoint(i))
            .collect();
        let fit = ingest::fit_sinusoid(&times, &bins.starts, omega)?;
        #[derive(Serialize)]
        struct FitOut {
            base: f64,
            amplitude: f64,
            angular_frequency: f64,
            residual_norm: f64,
            clamped: bool,
        }
        artifacts.write_json(
            "sinusoid_fit.json",
            &FitOut {
                base: fit.base,
                amplitude: fit.amplitude,
                angular_frequency: fit.angular_frequency,
                residual_norm: fit.residual_norm,
                clamped: fit.clamped,
            },
        )?;
    }

    if config.svg {
        let points: Vec<(f64, f64)> = (0..bins.starts.len())
            .map(|i| ((i as u32 * bins.bin_seconds) as f64, bins.starts[i]))
            .collect();
        let end_points: Vec<(f64, f64)> = (0..bins.ends.len())
            .map(|i| ((i as u32 * bins.bin_seconds) as f64, bins.ends[i]))
            .collect();
        let chart = svg::line_chart(
            "Trips per bin",
            "seconds from origin",
            "trips",
            &[
                Series {
                    name: "starts".into(),
                    points,
                    dashed: false,
                },
                Series {
                    name: "ends".into(),
                    points: end_points,
                    dashed: false,
                },
            ],
        );
        artifacts.write("profile.svg", chart.as_bytes())?;
    }
    Ok(())
}
