//! Experiment configuration: a JSON document mirroring the model and run
//! parameters, plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bikeshare::model::{
    DemandProfile, EmpiricalMeasure, ModelParams, UtilizationClass, UtilizationProfile,
};
use bikeshare::sim::SimConfig;

/// Which analysis to run. Doubles as the CLI subcommand name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Simulate,
    Meanfield,
    Diffusion,
    Compare,
    Equilibrium,
    Sweep,
    Lag,
    Ingest,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Meanfield => "meanfield",
            ExperimentKind::Diffusion => "diffusion",
            ExperimentKind::Compare => "compare",
            ExperimentKind::Equilibrium => "equilibrium",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Lag => "lag",
            ExperimentKind::Ingest => "ingest",
        }
    }
}

/// Initial occupancy, as station counts or proportions per `(class, k)`.
/// Flat arrays describe a single class.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialOccupancy {
    Proportions(OccupancyValues),
    Counts(OccupancyValues),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OccupancyValues {
    Flat(Vec<f64>),
    PerClass(Vec<Vec<f64>>),
}

impl OccupancyValues {
    fn flatten(&self) -> Vec<f64> {
        match self {
            OccupancyValues::Flat(v) => v.clone(),
            OccupancyValues::PerClass(rows) => rows.iter().flatten().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassConfig {
    pub relative_utilization: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub path: PathBuf,
    /// Built-in schema name; only "citibike" is defined.
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default = "default_bin_seconds")]
    pub bin_seconds: u32,
    #[serde(default)]
    pub fold_weeks: bool,
    /// Fit `λ(t)` at this angular frequency (per second) when present.
    #[serde(default)]
    pub fit_angular_frequency: Option<f64>,
    #[serde(default = "default_histogram_bin")]
    pub histogram_bin_secs: f64,
}

fn default_schema() -> String {
    "citibike".into()
}

fn default_bin_seconds() -> u32 {
    300
}

fn default_histogram_bin() -> f64 {
    60.0
}

/// The configuration document. Every field of the model plus run controls;
/// command-line flags override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Optional; when present it must agree with the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,

    pub station_count: usize,
    pub fleet_size: usize,
    pub capacity: usize,
    #[serde(default = "default_travel_rate")]
    pub travel_rate: f64,
    pub demand: DemandProfile,
    #[serde(default)]
    pub classes: Option<Vec<ClassConfig>>,
    #[serde(default)]
    pub y0: Option<InitialOccupancy>,

    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_output_dt")]
    pub output_dt: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,

    /// Occupancy `k` highlighted by the `compare` experiment.
    #[serde(default)]
    pub series_k: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_equilibrium_tol")]
    pub equilibrium_tol: f64,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub mu_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub svg: bool,
    #[serde(default)]
    pub ingest: Option<IngestConfig>,
}

fn default_travel_rate() -> f64 {
    1.0
}

fn default_horizon() -> f64 {
    20.0
}

fn default_step() -> f64 {
    0.01
}

fn default_output_dt() -> f64 {
    0.1
}

fn default_replications() -> usize {
    50
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_burn_in() -> f64 {
    5.0
}

fn default_equilibrium_tol() -> f64 {
    1e-10
}

/// Command-line overrides; precedence: flag > config file field.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub master_seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub replications: Option<usize>,
    pub horizon: Option<f64>,
    pub svg: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.master_seed {
            self.master_seed = seed;
        }
        if let Some(out) = &overrides.out_dir {
            self.out_dir = out.clone();
        }
        if let Some(r) = overrides.replications {
            self.replications = r;
        }
        if let Some(h) = overrides.horizon {
            self.horizon = h;
        }
        if overrides.svg {
            self.svg = true;
        }
    }

    pub fn profile(&self) -> Result<UtilizationProfile> {
        match &self.classes {
            None => Ok(UtilizationProfile::homogeneous()),
            Some(classes) => UtilizationProfile::new(
                classes
                    .iter()
                    .map(|c| UtilizationClass {
                        relative_utilization: c.relative_utilization,
                        weight: c.weight,
                    })
                    .collect(),
            )
            .context("classes: invalid utilization profile"),
        }
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let params = ModelParams::new(self.station_count, self.fleet_size, self.capacity)
            .with_travel_rate(self.travel_rate)
            .with_demand(self.demand)
            .with_profile(self.profile()?);
        params.validate().map_err(|e| {
            anyhow::anyhow!("station_count/fleet_size/capacity/travel_rate/demand: {e}")
        })?;
        Ok(params)
    }

    /// The configured (or default all-empty) initial measure.
    pub fn initial_measure(&self, params: &ModelParams) -> Result<EmpiricalMeasure> {
        let proportions = match &self.y0 {
            None => {
                return Ok(bikeshare::measures::all_empty_measure(params));
            }
            Some(InitialOccupancy::Proportions(values)) => values.flatten(),
            Some(InitialOccupancy::Counts(values)) => {
                let n = params.station_count as f64;
                values.flatten().iter().map(|&c| c / n).collect()
            }
        };
        let measure = EmpiricalMeasure::new(params.class_count(), params.capacity, proportions)
            .context("y0: not a valid occupancy measure")?;
        params
            .validate_measure(&measure)
            .context("y0: inconsistent with station classes")?;
        Ok(measure)
    }

    /// Initial integer station counts; proportions must scale to integers.
    pub fn initial_counts(&self, params: &ModelParams) -> Result<Vec<u64>> {
        let counts = match &self.y0 {
            None => {
                let measure = bikeshare::measures::all_empty_measure(params);
                SimConfig::counts_from_proportions(params, measure.values())
            }
            Some(InitialOccupancy::Counts(values)) => {
                let flat = values.flatten();
                let mut counts = Vec::with_capacity(flat.len());
                for v in flat {
                    if v < 0.0 || v.fract() != 0.0 {
                        bail!("y0.counts: {v} is not a non-negative integer");
                    }
                    counts.push(v as u64);
                }
                Ok(counts)
            }
            Some(InitialOccupancy::Proportions(values)) => {
                SimConfig::counts_from_proportions(params, &values.flatten())
            }
        }
        .context("y0: cannot form integer station counts")?;
        Ok(counts)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let params = self.model_params()?;
        let y0_counts = self.initial_counts(&params)?;
        let cfg = SimConfig {
            params,
            y0_counts,
            horizon: self.horizon,
            output_dt: self.output_dt,
            replications: self.replications,
            master_seed: self.master_seed,
        };
        cfg.validate()
            .map_err(|e| anyhow::anyhow!("y0/horizon/output_dt/replications: {e}"))?;
        Ok(cfg)
    }

    /// Canonical JSON used for the manifest hash.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
