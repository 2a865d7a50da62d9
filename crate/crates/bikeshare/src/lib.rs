//! Finite-capacity bike-sharing fleet analysis.
//!
//! Stations hold at most `K` bikes; a closed fleet of `M` bikes circulates
//! among `N` stations. Riders arrive at a station, retrieve a bike if one is
//! docked, ride for an exponential travel time, and return the bike wherever
//! there is a free dock. The library tracks the occupancy *empirical measure*
//! `Y_t(k)`, the proportion of stations currently holding `k` bikes, and
//! provides three consistent views of its dynamics:
//!
//! - [`sim`]: exact event-by-event simulation of the finite-`N` Markov chain,
//!   with replications and across-path statistics;
//! - [`ode`]: the large-`N` mean-field ODE for `y_t(k)` and the
//!   Ornstein-Uhlenbeck mean/covariance ODEs for the fluctuations
//!   `D_t = √N (Y_t − y_t)`;
//! - [`exact`]: brute-force transient distributions for tiny instances via
//!   uniformization, used as ground truth.
//!
//! [`measures`] derives performance quantities (empty/full proportions, bikes
//! in circulation with variance bands, demand-response lags) and [`ingest`]
//! turns trip-record CSVs into binned arrival-rate profiles and fitted
//! demand curves.
//!
//! ```
//! use bikeshare::model::{EmpiricalMeasure, ModelParams};
//! use bikeshare::{ode, sim};
//!
//! // 100 stations with 3 docks each, 150 bikes, λ = μ = 1; half the
//! // stations start with one bike docked, half with two.
//! let params = ModelParams::new(100, 150, 3);
//! let y0 = EmpiricalMeasure::single_class(&[0.0, 0.5, 0.5, 0.0])?;
//!
//! // Deterministic limit and its fluctuation covariance.
//! let mean_field = ode::solve_mean_field(&params, &y0, 20.0, 0.01, 0.1)?;
//! let cov = ode::solve_covariance_default(&params, &mean_field)?;
//!
//! // Replicated simulation of the actual chain on the same grid.
//! let stats = sim::replicate(&sim::SimConfig {
//!     params,
//!     y0_counts: vec![0, 50, 50, 0],
//!     horizon: 20.0,
//!     output_dt: 0.1,
//!     replications: 20,
//!     master_seed: 7,
//! })?;
//!
//! // The proportion of empty stations tracks its limit curve.
//! let last = stats.grid().len() - 1;
//! let limit = mean_field.terminal().aggregate(0);
//! assert!((stats.mean(last, 0) - limit).abs() < 0.05);
//! assert!(cov.states()[last].cov[(0, 0)] > 0.0);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod exact;
pub mod ingest;
pub mod measures;
pub mod model;
pub mod ode;
pub mod sim;

pub use model::{
    utilization_from_rates, DemandProfile, DerivedRates, EmpiricalMeasure, ModelError, ModelParams,
    UtilizationClass, UtilizationProfile,
};
pub use ode::{CovarianceState, CovarianceTrajectory, OdeError, Trajectory};
pub use sim::{SimConfig, SimError, SimStats};
