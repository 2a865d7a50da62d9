//! Model parameters and the analytic objects of the occupancy dynamics.
//!
//! The state is the empirical measure `y(c, k)`: the mass of stations in
//! utilization class `c` currently holding `k` bikes. Three objects drive
//! every solver in this crate:
//!
//! - [`ModelParams::drift`]: the mean-field vector field `b(y)`,
//! - [`ModelParams::jacobian`]: its derivative `𝒜(t) = b'(y_t)` on the
//!   aggregated coordinates `y(0..K)`,
//! - [`ModelParams::noise_rate`]: the fluctuation rate matrix `ℬ(t)` built
//!   from the jump fluxes.
//!
//! Stations in a class are exchangeable: a class is described by its relative
//! utilization `r ∈ (0, 1]` (so the per-station retrieval rate is `λ(t)/r`)
//! and its mass fraction `w`. Transitions never move a station between
//! classes, so class masses are conserved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for exact-by-construction sums (total mass, class weights).
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("station count must be positive")]
    ZeroStations,
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("travel rate must be positive, got {0}")]
    NonPositiveTravelRate(f64),
    #[error("arrival rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("sinusoidal amplitude must lie in [0, 1), got {0}")]
    AmplitudeOutOfRange(f64),
    #[error("relative utilization must lie in (0, 1], got {0}")]
    UtilizationOutOfRange(f64),
    #[error("largest relative utilization must equal 1, got {0}")]
    UtilizationNotNormalized(f64),
    #[error("class weights must be non-negative and sum to 1, got sum {0}")]
    BadWeights(f64),
    #[error("utilization profile needs at least one class")]
    EmptyProfile,
    #[error("empirical measure has {got} entries, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("empirical measure entry ({class},{occupancy}) is negative: {value}")]
    NegativeMass {
        class: usize,
        occupancy: usize,
        value: f64,
    },
    #[error("empirical measure total mass is {0}, expected 1")]
    TotalMass(f64),
    #[error("class {class} holds mass {got}, expected weight {expected}")]
    ClassMass {
        class: usize,
        got: f64,
        expected: f64,
    },
    #[error("empirical measure contains a non-finite entry")]
    NonFinite,
}

/// Per-station arrival-rate profile of the minimum-rate (r = 1) class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DemandProfile {
    /// Constant rate `λ`.
    Stationary { rate: f64 },
    /// `λ(t) = base · (1 + amplitude · sin(angular_frequency · t))`.
    Sinusoidal {
        base: f64,
        amplitude: f64,
        angular_frequency: f64,
    },
}

impl DemandProfile {
    pub fn rate_at(&self, t: f64) -> f64 {
        match *self {
            DemandProfile::Stationary { rate } => rate,
            DemandProfile::Sinusoidal {
                base,
                amplitude,
                angular_frequency,
            } => base * (1.0 + amplitude * (angular_frequency * t).sin()),
        }
    }

    /// The limiting minimum arrival rate `Λ` (the constant rate, or the
    /// sinusoid's base level).
    pub fn base_rate(&self) -> f64 {
        match *self {
            DemandProfile::Stationary { rate } => rate,
            DemandProfile::Sinusoidal { base, .. } => base,
        }
    }

    /// Upper bound `λ̄ = base · (1 + amplitude)`, used for thinning.
    pub fn peak_rate(&self) -> f64 {
        match *self {
            DemandProfile::Stationary { rate } => rate,
            DemandProfile::Sinusoidal {
                base, amplitude, ..
            } => base * (1.0 + amplitude),
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, DemandProfile::Stationary { .. })
    }

    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            DemandProfile::Stationary { rate } => {
                if rate <= 0.0 || !rate.is_finite() {
                    return Err(ModelError::NonPositiveRate(rate));
                }
            }
            DemandProfile::Sinusoidal {
                base,
                amplitude,
                angular_frequency,
            } => {
                if base <= 0.0 || !base.is_finite() {
                    return Err(ModelError::NonPositiveRate(base));
                }
                if !(0.0..1.0).contains(&amplitude) {
                    return Err(ModelError::AmplitudeOutOfRange(amplitude));
                }
                if angular_frequency <= 0.0 || !angular_frequency.is_finite() {
                    return Err(ModelError::NonPositiveRate(angular_frequency));
                }
            }
        }
        Ok(())
    }
}

/// One exchangeable station class: relative utilization `r` and mass `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationClass {
    /// `r = (minimum arrival rate) / (this class's arrival rate)`, in `(0, 1]`.
    pub relative_utilization: f64,
    /// Fraction of stations in this class.
    pub weight: f64,
}

/// The discrete utilization mix: classes `(r_c, w_c)` with `Σ w_c = 1` and
/// `max_c r_c = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationProfile {
    classes: Vec<UtilizationClass>,
}

impl UtilizationProfile {
    pub fn new(classes: Vec<UtilizationClass>) -> Result<Self, ModelError> {
        if classes.is_empty() {
            return Err(ModelError::EmptyProfile);
        }
        let mut weight_sum = 0.0;
        let mut r_max: f64 = 0.0;
        for class in &classes {
            let r = class.relative_utilization;
            if !r.is_finite() || r <= 0.0 || r > 1.0 {
                return Err(ModelError::UtilizationOutOfRange(r));
            }
            if class.weight < 0.0 || !class.weight.is_finite() {
                return Err(ModelError::BadWeights(class.weight));
            }
            weight_sum += class.weight;
            r_max = r_max.max(r);
        }
        if (weight_sum - 1.0).abs() > MASS_TOL {
            return Err(ModelError::BadWeights(weight_sum));
        }
        if (r_max - 1.0).abs() > MASS_TOL {
            return Err(ModelError::UtilizationNotNormalized(r_max));
        }
        Ok(Self { classes })
    }

    /// Single class with `r = 1`: all stations see the same arrival rate.
    pub fn homogeneous() -> Self {
        Self {
            classes: vec![UtilizationClass {
                relative_utilization: 1.0,
                weight: 1.0,
            }],
        }
    }

    pub fn classes(&self) -> &[UtilizationClass] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }
}

/// Derive the utilization profile from explicit per-station arrival rates
/// under uniform routing: `r_i = min_j λ_j / λ_i`, `Λ = min_j λ_j`, classes
/// formed by grouping stations with equal `r`.
pub fn utilization_from_rates(rates: &[f64]) -> Result<(UtilizationProfile, f64), ModelError> {
    if rates.is_empty() {
        return Err(ModelError::EmptyProfile);
    }
    let mut min_rate = f64::INFINITY;
    for &rate in rates {
        if rate <= 0.0 || !rate.is_finite() {
            return Err(ModelError::NonPositiveRate(rate));
        }
        min_rate = min_rate.min(rate);
    }
    // Group equal r values; sort descending so the r = 1 class comes first.
    let mut ratios: Vec<f64> = rates.iter().map(|&rate| min_rate / rate).collect();
    ratios.sort_by(|a, b| b.partial_cmp(a).expect("finite ratios"));
    let mut classes: Vec<UtilizationClass> = Vec::new();
    let station_weight = 1.0 / rates.len() as f64;
    for r in ratios {
        match classes.last_mut() {
            Some(last) if last.relative_utilization == r => last.weight += station_weight,
            _ => classes.push(UtilizationClass {
                relative_utilization: r,
                weight: station_weight,
            }),
        }
    }
    // Guard against rounding drift in the accumulated weights.
    let total: f64 = classes.iter().map(|c| c.weight).sum();
    for class in &mut classes {
        class.weight /= total;
    }
    Ok((UtilizationProfile::new(classes)?, min_rate))
}

/// Full parameterization of the fleet model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of stations `N`.
    pub station_count: usize,
    /// Total number of bikes `M` (closed fleet).
    pub fleet_size: usize,
    /// Dock capacity `K`, identical across stations.
    pub capacity: usize,
    /// Travel rate `μ`: trips take `Exp(μ)` time.
    pub travel_rate: f64,
    pub demand: DemandProfile,
    pub profile: UtilizationProfile,
}

impl ModelParams {
    /// Homogeneous model with `λ = μ = 1`; adjust via the `with_*` builders.
    pub fn new(station_count: usize, fleet_size: usize, capacity: usize) -> Self {
        Self {
            station_count,
            fleet_size,
            capacity,
            travel_rate: 1.0,
            demand: DemandProfile::Stationary { rate: 1.0 },
            profile: UtilizationProfile::homogeneous(),
        }
    }

    pub fn with_demand(mut self, demand: DemandProfile) -> Self {
        self.demand = demand;
        self
    }

    pub fn with_travel_rate(mut self, travel_rate: f64) -> Self {
        self.travel_rate = travel_rate;
        self
    }

    pub fn with_profile(mut self, profile: UtilizationProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.station_count == 0 {
            return Err(ModelError::ZeroStations);
        }
        if self.capacity == 0 {
            return Err(ModelError::ZeroCapacity);
        }
        if self.travel_rate <= 0.0 || !self.travel_rate.is_finite() {
            return Err(ModelError::NonPositiveTravelRate(self.travel_rate));
        }
        self.demand.validate()?;
        UtilizationProfile::new(self.profile.classes().to_vec())?;
        Ok(())
    }

    /// Bikes per station `γ = M / N`.
    pub fn bikes_per_station(&self) -> f64 {
        self.fleet_size as f64 / self.station_count as f64
    }

    /// The limiting minimum arrival rate `Λ`.
    pub fn min_arrival_rate(&self) -> f64 {
        self.demand.base_rate()
    }

    pub fn class_count(&self) -> usize {
        self.profile.class_count()
    }

    /// Length of the aggregated occupancy vector, `K + 1`.
    pub fn occupancy_dim(&self) -> usize {
        self.capacity + 1
    }

    /// Length of the class-resolved state vector, `C · (K + 1)`.
    pub fn state_dim(&self) -> usize {
        self.class_count() * self.occupancy_dim()
    }

    /// Per-station retrieval rate of class `c` at time `t`: `λ(t) / r_c`.
    pub fn class_rate(&self, class: usize, t: f64) -> f64 {
        self.demand.rate_at(t) / self.profile.classes()[class].relative_utilization
    }

    /// Class-averaged retrieval intensity `Λ̃(t) = Σ_c w_c · λ(t) / r_c`.
    pub fn lambda_tilde(&self, t: f64) -> f64 {
        let rate = self.demand.rate_at(t);
        self.profile
            .classes()
            .iter()
            .map(|c| c.weight * rate / c.relative_utilization)
            .sum()
    }

    /// Check an empirical measure against this model's dimensions and class
    /// weights.
    pub fn validate_measure(&self, y: &EmpiricalMeasure) -> Result<(), ModelError> {
        if y.class_count() != self.class_count() || y.capacity() != self.capacity {
            return Err(ModelError::DimensionMismatch {
                got: y.values().len(),
                expected: self.state_dim(),
            });
        }
        y.validate_mass()?;
        for (c, class) in self.profile.classes().iter().enumerate() {
            let mass: f64 = (0..=self.capacity).map(|k| y.get(c, k)).sum();
            if (mass - class.weight).abs() > MASS_TOL {
                return Err(ModelError::ClassMass {
                    class: c,
                    got: mass,
                    expected: class.weight,
                });
            }
        }
        Ok(())
    }

    /// Auxiliary rates of the limit dynamics at state `y` and time `t`.
    pub fn derived_rates(&self, y: &EmpiricalMeasure, t: f64) -> DerivedRates {
        let gamma_tilde = self.bikes_per_station() - y.docked_mean();
        let rate = self.demand.rate_at(t);
        let class_retrieval: Vec<f64> = self
            .profile
            .classes()
            .iter()
            .map(|c| rate / c.relative_utilization)
            .collect();
        let lambda_tilde = self
            .profile
            .classes()
            .iter()
            .zip(&class_retrieval)
            .map(|(c, &lam)| c.weight * lam)
            .sum();
        DerivedRates {
            gamma_tilde,
            lambda_tilde,
            class_retrieval,
        }
    }

    /// Mean-field vector field `b(y)` on the class-resolved state.
    ///
    /// Per class `c` with retrieval rate `λ_c(t) = λ(t)/r_c` and return
    /// intensity `μ·γ̃` (with `γ̃ = γ − Σ k·y(k)`):
    ///
    /// ```text
    /// ẏ(c,0) = −μγ̃·y(c,0) + λ_c·y(c,1)
    /// ẏ(c,k) = λ_c·y(c,k+1) − (λ_c + μγ̃)·y(c,k) + μγ̃·y(c,k−1)
    /// ẏ(c,K) = −λ_c·y(c,K) + μγ̃·y(c,K−1)
    /// ```
    ///
    /// Fluxes telescope, so the total mass and each class mass are conserved
    /// exactly.
    pub fn drift(&self, y: &EmpiricalMeasure, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; y.values().len()];
        self.drift_into(t, y.values(), &mut out);
        out
    }

    /// Raw-slice form of [`drift`](Self::drift) for tight ODE loops. `state`
    /// uses the class-major layout of [`EmpiricalMeasure::values`].
    pub fn drift_into(&self, t: f64, state: &[f64], out: &mut [f64]) {
        let dim = self.occupancy_dim();
        let cap = self.capacity;
        let rate = self.demand.rate_at(t);
        // γ̃ from the current state; never cached across evaluations.
        let mut docked = 0.0;
        for c in 0..self.class_count() {
            for k in 1..=cap {
                docked += k as f64 * state[c * dim + k];
            }
        }
        let ret = self.travel_rate * (self.bikes_per_station() - docked);
        for (c, class) in self.profile.classes().iter().enumerate() {
            let lam = rate / class.relative_utilization;
            let base = c * dim;
            for k in 0..=cap {
                let mut d = 0.0;
                if k < cap {
                    d += lam * state[base + k + 1] - ret * state[base + k];
                }
                if k > 0 {
                    d += ret * state[base + k - 1] - lam * state[base + k];
                }
                out[base + k] = d;
            }
        }
    }

    /// Mean-field field on the aggregated coordinates `y(0..K)`, under the
    /// constructive independence of utilization and occupancy (class `c`
    /// holds `w_c·y(k)` at occupancy `k`). This is the function the
    /// [`jacobian`](Self::jacobian) differentiates.
    pub fn aggregated_drift(&self, y_agg: &[f64], t: f64) -> Vec<f64> {
        let cap = self.capacity;
        debug_assert_eq!(y_agg.len(), cap + 1);
        let lam = self.lambda_tilde(t);
        let docked: f64 = y_agg.iter().enumerate().map(|(k, &y)| k as f64 * y).sum();
        let ret = self.travel_rate * (self.bikes_per_station() - docked);
        let mut out = vec![0.0; cap + 1];
        for k in 0..=cap {
            let mut d = 0.0;
            if k < cap {
                d += lam * y_agg[k + 1] - ret * y_agg[k];
            }
            if k > 0 {
                d += ret * y_agg[k - 1] - lam * y_agg[k];
            }
            out[k] = d;
        }
        out
    }

    /// Drift Jacobian `𝒜(t) = b'(y)` on the aggregated coordinates, row
    /// `k` = component, column `j` = differentiation direction:
    ///
    /// ```text
    /// A[k][j] = μ·j·(y(k)·1{k<K} − y(k−1)·1{k>0})
    ///         + Λ̃·(1{j=k+1}·1{k<K} − 1{j=k}·1{k>0})
    ///         + μγ̃·(1{j=k−1}·1{k>0} − 1{j=k}·1{k<K})
    /// ```
    ///
    /// Columns sum to zero (mass conservation is linear).
    pub fn jacobian(&self, y_agg: &[f64], t: f64) -> nalgebra::DMatrix<f64> {
        let cap = self.capacity;
        debug_assert_eq!(y_agg.len(), cap + 1);
        let dim = cap + 1;
        let mu = self.travel_rate;
        let lam = self.lambda_tilde(t);
        let docked: f64 = y_agg.iter().enumerate().map(|(k, &y)| k as f64 * y).sum();
        let gamma_tilde = self.bikes_per_station() - docked;
        let mut a = nalgebra::DMatrix::zeros(dim, dim);
        for k in 0..dim {
            // Sensitivity of the return flux through γ̃.
            let flux = match (k > 0, k < cap) {
                (true, true) => y_agg[k] - y_agg[k - 1],
                (false, true) => y_agg[k],
                (true, false) => -y_agg[k - 1],
                (false, false) => 0.0,
            };
            for j in 0..dim {
                let mut v = mu * j as f64 * flux;
                if k < cap {
                    if j == k + 1 {
                        v += lam;
                    }
                    if j == k {
                        v -= mu * gamma_tilde;
                    }
                }
                if k > 0 {
                    if j == k {
                        v -= lam;
                    }
                    if j == k - 1 {
                        v += mu * gamma_tilde;
                    }
                }
                a[(k, j)] = v;
            }
        }
        a
    }

    /// Fluctuation rate matrix `ℬ(t)`: the time derivative of the limiting
    /// martingale brackets. Symmetric, tridiagonal, PSD, zero row sums:
    ///
    /// ```text
    /// B[k][k]   = Λ̃·(y(k+1)·1{k<K} + y(k)·1{k>0}) + μγ̃·(y(k)·1{k<K} + y(k−1)·1{k>0})
    /// B[k][k+1] = −(Λ̃·y(k+1) + μγ̃·y(k))
    /// ```
    pub fn noise_rate(&self, y_agg: &[f64], t: f64) -> nalgebra::DMatrix<f64> {
        let cap = self.capacity;
        debug_assert_eq!(y_agg.len(), cap + 1);
        let dim = cap + 1;
        let lam = self.lambda_tilde(t);
        let docked: f64 = y_agg.iter().enumerate().map(|(k, &y)| k as f64 * y).sum();
        let ret = self.travel_rate * (self.bikes_per_station() - docked);
        let mut b = nalgebra::DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let mut diag = 0.0;
            if k < cap {
                diag += lam * y_agg[k + 1] + ret * y_agg[k];
            }
            if k > 0 {
                diag += lam * y_agg[k] + ret * y_agg[k - 1];
            }
            b[(k, k)] = diag;
            if k < cap {
                let off = -(lam * y_agg[k + 1] + ret * y_agg[k]);
                b[(k, k + 1)] = off;
                b[(k + 1, k)] = off;
            }
        }
        b
    }
}

/// Auxiliary rates of the limit dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedRates {
    /// `γ̃ = γ − Σ k·y(k)`: mean bikes circulating per station.
    pub gamma_tilde: f64,
    /// `Λ̃ = Σ_c w_c·λ(t)/r_c`: class-averaged retrieval intensity.
    pub lambda_tilde: f64,
    /// Per-class retrieval rate `λ(t)/r_c`.
    pub class_retrieval: Vec<f64>,
}

/// Station-occupancy empirical measure `y(c, k)` for classes `c = 0..C` and
/// occupancies `k = 0..=K`. Stored class-major: index `(c, k)` lives at
/// `c·(K+1) + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    class_count: usize,
    capacity: usize,
    values: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Build and validate: entries non-negative, total mass 1.
    pub fn new(class_count: usize, capacity: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        let expected = class_count * (capacity + 1);
        if values.len() != expected {
            return Err(ModelError::DimensionMismatch {
                got: values.len(),
                expected,
            });
        }
        let measure = Self {
            class_count,
            capacity,
            values,
        };
        measure.validate_mass()?;
        Ok(measure)
    }

    /// Single-class measure from the aggregated occupancy proportions.
    pub fn single_class(proportions: &[f64]) -> Result<Self, ModelError> {
        if proportions.is_empty() {
            return Err(ModelError::DimensionMismatch {
                got: 0,
                expected: 1,
            });
        }
        Self::new(1, proportions.len() - 1, proportions.to_vec())
    }

    fn validate_mass(&self) -> Result<(), ModelError> {
        let mut total = 0.0;
        for (idx, &v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::NonFinite);
            }
            if v < -MASS_TOL {
                return Err(ModelError::NegativeMass {
                    class: idx / (self.capacity + 1),
                    occupancy: idx % (self.capacity + 1),
                    value: v,
                });
            }
            total += v;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(ModelError::TotalMass(total));
        }
        Ok(())
    }

    /// Build from an ODE state without the strict mass checks; entries may
    /// carry integration roundoff. Rejects values below `-tol`.
    pub(crate) fn from_ode_state(
        class_count: usize,
        capacity: usize,
        values: Vec<f64>,
        tol: f64,
    ) -> Result<Self, ModelError> {
        for (idx, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::NonFinite);
            }
            if v < -tol {
                return Err(ModelError::NegativeMass {
                    class: idx / (capacity + 1),
                    occupancy: idx % (capacity + 1),
                    value: v,
                });
            }
        }
        Ok(Self {
            class_count,
            capacity,
            values,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, class: usize, occupancy: usize) -> f64 {
        self.values[class * (self.capacity + 1) + occupancy]
    }

    /// Aggregated mass of stations holding `k` bikes: `y(k) = Σ_c y(c, k)`.
    pub fn aggregate(&self, occupancy: usize) -> f64 {
        (0..self.class_count).map(|c| self.get(c, occupancy)).sum()
    }

    /// The aggregated occupancy vector `(y(0), …, y(K))`.
    pub fn aggregated(&self) -> Vec<f64> {
        (0..=self.capacity).map(|k| self.aggregate(k)).collect()
    }

    /// Mean docked bikes per station, `Σ_k k·y(k)`.
    pub fn docked_mean(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(idx, &v)| (idx % (self.capacity + 1)) as f64 * v)
            .sum()
    }
}
