//! Fixed-step numerical integration of the limit dynamics.
//!
//! Classical fourth-order Runge-Kutta with a fixed step: the systems here are
//! smooth and low-dimensional, and determinism matters more than adaptive
//! error control. State is recorded on a coarser output grid (default spacing
//! 0.1 with step 0.01).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{EmpiricalMeasure, ModelError, ModelParams};

/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 0.01;
/// Default output-grid spacing.
pub const DEFAULT_OUTPUT_DT: f64 = 0.1;
/// Horizon cap for equilibrium searches.
pub const EQUILIBRIUM_HORIZON_CAP: f64 = 1e4;
/// States may undershoot zero by at most this much before the solve aborts.
pub const NEGATIVE_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step {step} must be positive and divide the output spacing {output_dt}")]
    StepMismatch { step: f64, output_dt: f64 },
    #[error("horizon must be non-negative, got {0}")]
    NegativeHorizon(f64),
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("state left the validity region at t = {t} (component {component} = {value})")]
    NegativeMass {
        t: f64,
        component: usize,
        value: f64,
    },
    #[error("no equilibrium within horizon {horizon} (‖drift‖∞ = {residual})")]
    NonConvergence { horizon: f64, residual: f64 },
    #[error("equilibrium requires stationary demand")]
    NonStationaryDemand,
    #[error("trajectory grids do not match: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Times and raw state vectors recorded on the output grid.
#[derive(Debug, Clone)]
pub struct RawTrajectory {
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step: f64,
}

/// Times plus one [`EmpiricalMeasure`] per grid point: either a mean-field
/// solution `y_t` or a single simulated path `Y_t^N`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: Vec<f64>,
    states: Vec<EmpiricalMeasure>,
    step: Option<f64>,
}

impl Trajectory {
    pub(crate) fn from_parts(
        grid: Vec<f64>,
        states: Vec<EmpiricalMeasure>,
        step: Option<f64>,
    ) -> Self {
        debug_assert_eq!(grid.len(), states.len());
        Self { grid, states, step }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn states(&self) -> &[EmpiricalMeasure] {
        &self.states
    }

    /// Integrator step that produced this trajectory; `None` for
    /// event-driven simulated paths.
    pub fn step(&self) -> Option<f64> {
        self.step
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn initial(&self) -> &EmpiricalMeasure {
        &self.states[0]
    }

    pub fn terminal(&self) -> &EmpiricalMeasure {
        self.states.last().expect("non-empty trajectory")
    }

    /// Aggregated occupancy series `t ↦ y_t(k)`.
    pub fn aggregated_series(&self, occupancy: usize) -> Vec<f64> {
        self.states.iter().map(|y| y.aggregate(occupancy)).collect()
    }
}

/// One classical RK4 step of size `h` at time `t`, in place.
fn rk4_step<F>(field: &mut F, t: f64, h: f64, y: &mut [f64], scratch: &mut Rk4Scratch)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let Rk4Scratch {
        k1,
        k2,
        k3,
        k4,
        tmp,
    } = scratch;
    field(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    field(t + 0.5 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    field(t + 0.5 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    field(t + h, tmp, k4);
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn steps_per_output(step: f64, output_dt: f64) -> Result<usize, OdeError> {
    if step <= 0.0 || output_dt <= 0.0 || step.is_nan() || output_dt.is_nan() {
        return Err(OdeError::StepMismatch { step, output_dt });
    }
    let ratio = output_dt / step;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(OdeError::StepMismatch { step, output_dt });
    }
    Ok(rounded as usize)
}

/// Integrate `ẏ = field(t, y)` with fixed-step RK4, recording the state at
/// every multiple of `output_dt` up to `horizon`. `post_step` runs after each
/// step and may project the state (e.g. re-symmetrize a matrix block) or
/// abort the solve.
pub fn integrate_with<F, P>(
    mut field: F,
    mut post_step: P,
    y0: &[f64],
    horizon: f64,
    step: f64,
    output_dt: f64,
) -> Result<RawTrajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    P: FnMut(f64, &mut [f64]) -> Result<(), OdeError>,
{
    if horizon < 0.0 {
        return Err(OdeError::NegativeHorizon(horizon));
    }
    let per_output = steps_per_output(step, output_dt)?;
    let outputs = (horizon / output_dt + 1e-9).floor() as usize;

    let mut y = y0.to_vec();
    let mut scratch = Rk4Scratch::new(y.len());
    let mut grid = Vec::with_capacity(outputs + 1);
    let mut states = Vec::with_capacity(outputs + 1);
    grid.push(0.0);
    states.push(y.clone());

    let mut step_index: u64 = 0;
    for out_index in 1..=outputs {
        for _ in 0..per_output {
            let t = step_index as f64 * step;
            rk4_step(&mut field, t, step, &mut y, &mut scratch);
            step_index += 1;
            let t_next = step_index as f64 * step;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFiniteState { t: t_next });
            }
            post_step(t_next, &mut y)?;
        }
        grid.push(out_index as f64 * output_dt);
        states.push(y.clone());
    }
    Ok(RawTrajectory { grid, states, step })
}

/// [`integrate_with`] without a post-step hook.
pub fn integrate<F>(
    field: F,
    y0: &[f64],
    horizon: f64,
    step: f64,
    output_dt: f64,
) -> Result<RawTrajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate_with(field, |_, _| Ok(()), y0, horizon, step, output_dt)
}

fn check_mass_validity(t: f64, state: &mut [f64]) -> Result<(), OdeError> {
    for (component, &value) in state.iter().enumerate() {
        if value < -NEGATIVE_MASS_TOL {
            return Err(OdeError::NegativeMass {
                t,
                component,
                value,
            });
        }
    }
    Ok(())
}

/// Solve the mean-field ODE `ẏ = b(y)` from `y0`.
pub fn solve_mean_field(
    params: &ModelParams,
    y0: &EmpiricalMeasure,
    horizon: f64,
    step: f64,
    output_dt: f64,
) -> Result<Trajectory, OdeError> {
    params.validate()?;
    params.validate_measure(y0)?;
    let raw = integrate_with(
        |t, y, out| params.drift_into(t, y, out),
        check_mass_validity,
        y0.values(),
        horizon,
        step,
        output_dt,
    )?;
    raw_to_trajectory(params, raw)
}

fn raw_to_trajectory(params: &ModelParams, raw: RawTrajectory) -> Result<Trajectory, OdeError> {
    let states = raw
        .states
        .into_iter()
        .map(|s| {
            EmpiricalMeasure::from_ode_state(
                params.class_count(),
                params.capacity,
                s,
                NEGATIVE_MASS_TOL,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory::from_parts(raw.grid, states, Some(raw.step)))
}

/// Mean vector `E[D_t]` and covariance `Σ(t)` of the fluctuation process.
#[derive(Debug, Clone)]
pub struct CovarianceState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl CovarianceState {
    /// Smallest eigenvalue of `Σ` (PSD check; symmetric by construction).
    pub fn min_eigenvalue(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.cov.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Diffusion mean/covariance along a mean-field solution.
#[derive(Debug, Clone)]
pub struct CovarianceTrajectory {
    grid: Vec<f64>,
    states: Vec<CovarianceState>,
}

impl CovarianceTrajectory {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn states(&self) -> &[CovarianceState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Series `t ↦ Σ_kk(t)` for one occupancy `k`.
    pub fn variance_series(&self, occupancy: usize) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| s.cov[(occupancy, occupancy)])
            .collect()
    }
}

/// Derivatives of the linear-Gaussian moment system:
/// `ṁ = A·m`, `Σ̇ = A·Σ + Σ·Aᵀ + B`.
fn mean_cov_derivative(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    mean: &[f64],
    cov: &[f64],
    out_mean: &mut [f64],
    out_cov: &mut [f64],
) {
    let d = a.nrows();
    for k in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += a[(k, j)] * mean[j];
        }
        out_mean[k] = acc;
    }
    let sigma = DMatrix::from_row_slice(d, d, cov);
    let asig = a * &sigma;
    for i in 0..d {
        for j in 0..d {
            out_cov[i * d + j] = asig[(i, j)] + asig[(j, i)] + b[(i, j)];
        }
    }
}

fn symmetrize_flat(cov: &mut [f64], d: usize) {
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (cov[i * d + j] + cov[j * d + i]);
            cov[i * d + j] = avg;
            cov[j * d + i] = avg;
        }
    }
}

/// Solve the fluctuation moment ODEs along a mean-field trajectory.
///
/// The mean-field state is co-integrated with the same step and grid as
/// `mean_field`, so `𝒜(t)` and `ℬ(t)` are evaluated on exactly the states the
/// mean-field solve produced. The covariance block is re-symmetrized after
/// every step.
pub fn solve_covariance(
    params: &ModelParams,
    mean_field: &Trajectory,
    sigma0: &DMatrix<f64>,
    mean0: &DVector<f64>,
) -> Result<CovarianceTrajectory, OdeError> {
    let d = params.occupancy_dim();
    let sd = params.state_dim();
    if sigma0.nrows() != d || sigma0.ncols() != d || mean0.len() != d {
        return Err(OdeError::GridMismatch(format!(
            "covariance initial condition must be {d}×{d}"
        )));
    }
    if mean_field.is_empty() {
        return Err(OdeError::GridMismatch("empty mean-field trajectory".into()));
    }
    let step = mean_field.step().ok_or_else(|| {
        OdeError::GridMismatch(
            "need a fixed-step mean-field trajectory, not a simulated path".into(),
        )
    })?;
    let horizon = *mean_field.grid().last().expect("non-empty grid");
    let output_dt = if mean_field.len() > 1 {
        mean_field.grid()[1] - mean_field.grid()[0]
    } else {
        DEFAULT_OUTPUT_DT
    };

    // Joint state: [ y (class-resolved) | mean | Σ row-major ].
    let mut joint = Vec::with_capacity(sd + d + d * d);
    joint.extend_from_slice(mean_field.initial().values());
    joint.extend(mean0.iter().cloned());
    for i in 0..d {
        for j in 0..d {
            joint.push(sigma0[(i, j)]);
        }
    }

    let mut agg = vec![0.0; d];
    let field = |t: f64, s: &[f64], out: &mut [f64]| {
        params.drift_into(t, &s[..sd], &mut out[..sd]);
        for (k, slot) in agg.iter_mut().enumerate() {
            *slot = (0..params.class_count()).map(|c| s[c * d + k]).sum();
        }
        let a = params.jacobian(&agg, t);
        let b = params.noise_rate(&agg, t);
        let (mean_in, cov_in) = s[sd..].split_at(d);
        let (mean_out, cov_out) = out[sd..].split_at_mut(d);
        mean_cov_derivative(&a, &b, mean_in, cov_in, mean_out, cov_out);
    };
    let post = |t: f64, s: &mut [f64]| {
        check_mass_validity(t, &mut s[..sd])?;
        symmetrize_flat(&mut s[sd + d..], d);
        Ok(())
    };

    let raw = integrate_with(field, post, &joint, horizon, step, output_dt)?;
    if raw.grid.len() != mean_field.len() {
        return Err(OdeError::GridMismatch(format!(
            "covariance grid has {} points, mean-field has {}",
            raw.grid.len(),
            mean_field.len()
        )));
    }

    let states = raw
        .states
        .into_iter()
        .map(|s| CovarianceState {
            mean: DVector::from_column_slice(&s[sd..sd + d]),
            cov: DMatrix::from_row_slice(d, d, &s[sd + d..]),
        })
        .collect();
    Ok(CovarianceTrajectory {
        grid: raw.grid,
        states,
    })
}

/// [`solve_covariance`] from the deterministic initial condition
/// `Σ(0) = 0`, `E[D_0] = 0` used throughout the experiments.
pub fn solve_covariance_default(
    params: &ModelParams,
    mean_field: &Trajectory,
) -> Result<CovarianceTrajectory, OdeError> {
    let d = params.occupancy_dim();
    solve_covariance(
        params,
        mean_field,
        &DMatrix::zeros(d, d),
        &DVector::zeros(d),
    )
}

/// Sup-norm of the drift at `y`; the equilibrium residual.
pub fn drift_residual(params: &ModelParams, y: &EmpiricalMeasure) -> f64 {
    params
        .drift(y, 0.0)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Run the mean-field dynamics to a fixed point: integrate until
/// `‖b(y)‖∞ ≤ tol` (checked every [`DEFAULT_OUTPUT_DT`]), up to the horizon
/// cap. Stationary demand only.
pub fn equilibrium(
    params: &ModelParams,
    y0: &EmpiricalMeasure,
    tol: f64,
) -> Result<EmpiricalMeasure, OdeError> {
    if !params.demand.is_stationary() {
        return Err(OdeError::NonStationaryDemand);
    }
    params.validate()?;
    params.validate_measure(y0)?;

    let step = DEFAULT_STEP;
    let per_check = steps_per_output(step, DEFAULT_OUTPUT_DT)?;
    let mut y = y0.values().to_vec();
    let mut scratch = Rk4Scratch::new(y.len());
    let mut field = |t: f64, s: &[f64], out: &mut [f64]| params.drift_into(t, s, out);

    let mut residual = f64::INFINITY;
    let mut step_index: u64 = 0;
    let total_checks = (EQUILIBRIUM_HORIZON_CAP / DEFAULT_OUTPUT_DT).round() as u64;
    for _ in 0..total_checks {
        let state = EmpiricalMeasure::from_ode_state(
            params.class_count(),
            params.capacity,
            y.clone(),
            NEGATIVE_MASS_TOL,
        )?;
        residual = drift_residual(params, &state);
        if residual <= tol {
            return Ok(state);
        }
        for _ in 0..per_check {
            let t = step_index as f64 * step;
            rk4_step(&mut field, t, step, &mut y, &mut scratch);
            step_index += 1;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFiniteState {
                    t: step_index as f64 * step,
                });
            }
        }
    }
    Err(OdeError::NonConvergence {
        horizon: EQUILIBRIUM_HORIZON_CAP,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DemandProfile;

    fn k3_params() -> ModelParams {
        ModelParams::new(100, 150, 3)
    }

    fn k3_initial() -> EmpiricalMeasure {
        EmpiricalMeasure::single_class(&[0.0, 0.5, 0.5, 0.0]).unwrap()
    }

    #[test]
    fn scalar_exponential_decay() {
        let raw = integrate(|_, y, out| out[0] = -y[0], &[1.0], 1.0, 0.01, 0.1).unwrap();
        let got = raw.states.last().unwrap()[0];
        assert!((got - (-1.0f64).exp()).abs() < 1e-8, "got {got}");
    }

    #[test]
    fn zero_field_is_identity() {
        let raw = integrate(|_, _, out| out.fill(0.0), &[0.25, 0.75], 5.0, 0.01, 0.5).unwrap();
        for s in &raw.states {
            assert_eq!(s, &vec![0.25, 0.75]);
        }
    }

    #[test]
    fn step_must_divide_output_dt() {
        assert!(matches!(
            integrate(|_, _, out| out.fill(0.0), &[1.0], 1.0, 0.03, 0.1),
            Err(OdeError::StepMismatch { .. })
        ));
    }

    #[test]
    fn mean_field_conserves_mass_and_starts_at_y0() {
        let p = k3_params();
        let y0 = k3_initial();
        let mf = solve_mean_field(&p, &y0, 20.0, 0.01, 0.1).unwrap();
        assert_eq!(mf.initial().values(), y0.values());
        for y in mf.states() {
            let total: f64 = y.values().iter().sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
        // Proportion of empty stations rises from zero toward equilibrium.
        let empty = mf.aggregated_series(0);
        assert_eq!(empty[0], 0.0);
        assert!(empty.last().unwrap() > &0.1);
        let mid = empty[empty.len() / 2];
        assert!(mid > 0.0 && mid <= empty.last().unwrap() + 1e-3);
    }

    #[test]
    fn rk4_order_is_four() {
        // Error against an h/8 reference shrinks ~16× when h halves.
        let p = k3_params();
        let y0 = k3_initial();
        let solve = |h: f64| {
            solve_mean_field(&p, &y0, 1.0, h, 1.0)
                .unwrap()
                .terminal()
                .values()
                .to_vec()
        };
        let reference = solve(0.0025);
        let err = |h: f64| -> f64 {
            solve(h)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = err(0.04);
        let e2 = err(0.02);
        let ratio = e1 / e2;
        assert!(
            (10.0..26.0).contains(&ratio),
            "order ratio {ratio} (errors {e1}, {e2})"
        );
    }

    #[test]
    fn long_horizon_reaches_equilibrium_residual() {
        let p = k3_params();
        let mf = solve_mean_field(&p, &k3_initial(), 200.0, 0.01, 1.0).unwrap();
        let residual = drift_residual(&p, mf.terminal());
        assert!(residual <= 1e-8, "residual {residual}");
    }

    #[test]
    fn equilibrium_matches_quadratic_root_for_k1() {
        // K = 1, λ = 1, γ = 0.5: balance (0.5 − y)(1 − y) = y, root
        // (2.5 − √4.25)/2.
        let p = ModelParams::new(100, 50, 1);
        let y0 = EmpiricalMeasure::single_class(&[1.0, 0.0]).unwrap();
        let eq = equilibrium(&p, &y0, 1e-10).unwrap();
        let expected = (2.5 - 4.25f64.sqrt()) / 2.0;
        assert!((eq.aggregate(1) - expected).abs() < 1e-8);
        assert!(drift_residual(&p, &eq) <= 1e-10);
    }

    #[test]
    fn equilibrium_circulation_near_sixty() {
        let p = k3_params();
        let eq = equilibrium(&p, &k3_initial(), 1e-10).unwrap();
        let circulating = p.station_count as f64 * (p.bikes_per_station() - eq.docked_mean());
        assert!(
            (circulating - 60.0).abs() < 5.0,
            "circulating {circulating}"
        );
    }

    #[test]
    fn equilibrium_independent_of_start() {
        let p = k3_params();
        let a = equilibrium(&p, &k3_initial(), 1e-10).unwrap();
        let b = equilibrium(
            &p,
            &EmpiricalMeasure::single_class(&[0.25, 0.25, 0.25, 0.25]).unwrap(),
            1e-10,
        )
        .unwrap();
        for k in 0..=3 {
            assert!((a.aggregate(k) - b.aggregate(k)).abs() < 1e-6);
        }
    }

    #[test]
    fn equilibrium_rejects_nonstationary_demand() {
        let p = k3_params().with_demand(DemandProfile::Sinusoidal {
            base: 1.0,
            amplitude: 0.5,
            angular_frequency: 0.5,
        });
        assert!(matches!(
            equilibrium(&p, &k3_initial(), 1e-10),
            Err(OdeError::NonStationaryDemand)
        ));
    }

    #[test]
    fn covariance_rejects_event_driven_trajectories() {
        let p = k3_params();
        let cfg = crate::sim::SimConfig {
            params: p.clone(),
            y0_counts: vec![0, 50, 50, 0],
            horizon: 1.0,
            output_dt: 0.1,
            replications: 2,
            master_seed: 1,
        };
        let path = crate::sim::simulate_path(&cfg, 0).unwrap();
        assert!(matches!(
            solve_covariance_default(&p, &path),
            Err(OdeError::GridMismatch(_))
        ));
    }

    #[test]
    fn covariance_rejects_wrong_initial_dimensions() {
        let p = k3_params();
        let mf = solve_mean_field(&p, &k3_initial(), 1.0, 0.01, 0.1).unwrap();
        assert!(matches!(
            solve_covariance(&p, &mf, &DMatrix::zeros(3, 3), &DVector::zeros(3)),
            Err(OdeError::GridMismatch(_))
        ));
    }

    #[test]
    fn covariance_zero_initial_mean_stays_zero() {
        let p = k3_params();
        let mf = solve_mean_field(&p, &k3_initial(), 5.0, 0.01, 0.1).unwrap();
        let cov = solve_covariance(&p, &mf, &DMatrix::zeros(4, 4), &DVector::zeros(4)).unwrap();
        assert_eq!(cov.len(), mf.len());
        for s in cov.states() {
            for v in s.mean.iter() {
                assert_eq!(*v, 0.0);
            }
        }
        // Variance grows from zero and stays PSD.
        assert!(cov.states().last().unwrap().cov[(0, 0)] > 0.0);
        for s in cov.states() {
            assert!(s.min_eigenvalue() >= -1e-8);
            for i in 0..4 {
                for j in 0..4 {
                    assert!((s.cov[(i, j)] - s.cov[(j, i)]).abs() < 1e-10);
                }
            }
        }
    }

    /// Dense matrix exponential by scaling and squaring a Taylor series;
    /// test oracle only.
    fn matrix_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
        let norm = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let squarings = norm.log2().ceil().max(0.0) as u32 + 4;
        let scaled = a / 2f64.powi(squarings as i32);
        let d = a.nrows();
        let mut term = DMatrix::<f64>::identity(d, d);
        let mut sum = DMatrix::<f64>::identity(d, d);
        for n in 1..30 {
            term = &term * &scaled / n as f64;
            sum += &term;
        }
        let mut result = sum;
        for _ in 0..squarings {
            result = &result * &result;
        }
        result
    }

    #[test]
    fn covariance_with_constant_matrices_matches_matrix_exponential() {
        // ℬ = 0 and constant 𝒜: Σ(t) = e^{𝒜t} Σ(0) e^{𝒜ᵀt}.
        let a = DMatrix::from_row_slice(3, 3, &[-0.8, 0.2, 0.1, 0.3, -1.1, 0.0, 0.5, 0.9, -0.6]);
        let b = DMatrix::zeros(3, 3);
        let sigma0 =
            DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let mean0 = [0.4, -0.2, 0.7];

        let mut joint = mean0.to_vec();
        joint.extend(sigma0.transpose().iter().cloned());
        let field = |_t: f64, s: &[f64], out: &mut [f64]| {
            let (m_in, c_in) = s.split_at(3);
            let (m_out, c_out) = out.split_at_mut(3);
            mean_cov_derivative(&a, &b, m_in, c_in, m_out, c_out);
        };
        let raw = integrate_with(
            field,
            |_, s: &mut [f64]| {
                symmetrize_flat(&mut s[3..], 3);
                Ok(())
            },
            &joint,
            1.0,
            0.001,
            1.0,
        )
        .unwrap();
        let end = raw.states.last().unwrap();

        let ea = matrix_exp(&a);
        let expected_sigma = &ea * &sigma0 * ea.transpose();
        let expected_mean = &ea * DVector::from_column_slice(&mean0);
        for i in 0..3 {
            assert!((end[i] - expected_mean[i]).abs() < 1e-6);
            for j in 0..3 {
                assert!(
                    (end[3 + i * 3 + j] - expected_sigma[(i, j)]).abs() < 1e-6,
                    "Σ[{i},{j}]"
                );
            }
        }
    }

    #[test]
    fn blowup_detected() {
        // ẏ = y² escapes in finite time from y(0) = 1 at t = 1.
        let result = integrate(|_, y, out| out[0] = y[0] * y[0], &[1.0], 2.0, 0.01, 0.1);
        assert!(matches!(result, Err(OdeError::NonFiniteState { .. })));
    }

    #[test]
    fn negative_mass_detected() {
        let p = k3_params();
        let y0 = k3_initial();
        // A sign-flipped field drives components negative quickly.
        let result = integrate_with(
            |t, y, out| {
                p.drift_into(t, y, out);
                for v in out.iter_mut() {
                    *v = -*v - 0.5;
                }
            },
            check_mass_validity,
            y0.values(),
            5.0,
            0.01,
            0.1,
        );
        assert!(matches!(result, Err(OdeError::NegativeMass { .. })));
    }
}
