//! Brute-force ground truth for tiny instances.
//!
//! Enumerates the full station-level state space `x ∈ {0..K}^N` with
//! `Σ x_i ≤ M`, builds the generator of the chain, and computes transient
//! distributions by uniformization. Strictly a desk-scale oracle: the state
//! space is capped at 10⁶ states.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{ModelError, ModelParams};

/// Hard cap on enumerated states.
pub const STATE_SPACE_LIMIT: u64 = 1_000_000;
/// Poisson tail mass dropped by the uniformization series.
const UNIFORMIZATION_TAIL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("state space has {size} states, over the {limit} limit")]
    StateSpaceTooLarge { size: u64, limit: u64 },
    #[error("need one arrival rate per station: got {got}, expected {expected}")]
    RateCount { got: usize, expected: usize },
    #[error("arrival rates must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("distribution has {got} entries, expected {expected}")]
    DistributionShape { got: usize, expected: usize },
    #[error("distribution sums to {0}, expected 1")]
    DistributionMass(f64),
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Enumerated occupancy vectors with index maps in both directions.
#[derive(Debug, Clone)]
pub struct StateSpace {
    station_count: usize,
    capacity: usize,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

impl StateSpace {
    /// Enumerate `{0..K}^N` restricted to `Σ x_i ≤ M`, in lexicographic
    /// order. Errors out before allocating if the count exceeds the cap.
    pub fn enumerate(
        station_count: usize,
        capacity: usize,
        fleet_size: usize,
    ) -> Result<Self, ExactError> {
        // No state can dock more than N·K bikes.
        let budget = fleet_size.min(station_count * capacity);
        let size = count_states(station_count, capacity, budget);
        if size > STATE_SPACE_LIMIT {
            return Err(ExactError::StateSpaceTooLarge {
                size,
                limit: STATE_SPACE_LIMIT,
            });
        }
        let mut states = Vec::with_capacity(size as usize);
        let mut current = vec![0u8; station_count];
        push_states(&mut states, &mut current, 0, budget, capacity);
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Self {
            station_count,
            capacity,
            states,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, index: usize) -> &[u8] {
        &self.states[index]
    }

    pub fn index_of(&self, state: &[u8]) -> Option<usize> {
        self.index.get(state).copied()
    }

    pub fn station_count(&self) -> usize {
        self.station_count
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Point mass at one occupancy vector.
    pub fn point_mass(&self, state: &[u8]) -> Result<Vec<f64>, ExactError> {
        let idx = self.index_of(state).ok_or(ExactError::DistributionShape {
            got: state.len(),
            expected: self.station_count,
        })?;
        let mut p = vec![0.0; self.len()];
        p[idx] = 1.0;
        Ok(p)
    }
}

fn count_states(stations: usize, capacity: usize, budget: usize) -> u64 {
    // count[b] = number of ways to fill the remaining stations with total ≤ b
    // is accumulated station by station; u64 with saturation is plenty here.
    let mut counts = vec![1u64; budget + 1];
    for _ in 0..stations {
        let mut next = vec![0u64; budget + 1];
        for b in 0..=budget {
            let mut acc = 0u64;
            for x in 0..=capacity.min(b) {
                acc = acc.saturating_add(counts[b - x]);
                if acc > STATE_SPACE_LIMIT {
                    return acc;
                }
            }
            next[b] = acc;
        }
        counts = next;
    }
    // counts[budget] now counts exact vectors with sum ≤ budget.
    counts[budget]
}

fn push_states(
    out: &mut Vec<Vec<u8>>,
    current: &mut Vec<u8>,
    station: usize,
    budget: usize,
    capacity: usize,
) {
    if station == current.len() {
        out.push(current.clone());
        return;
    }
    for x in 0..=capacity.min(budget) {
        current[station] = x as u8;
        push_states(out, current, station + 1, budget - x, capacity);
    }
    current[station] = 0;
}

/// Sparse generator matrix `Q` of the station-level chain: row `i` lists
/// `(j, rate)` for `j ≠ i` plus the diagonal entry.
#[derive(Debug, Clone)]
pub struct Generator {
    rows: Vec<Vec<(usize, f64)>>,
    uniformization_rate: f64,
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, rate)| rate).sum()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let d = self.dim();
        let mut q = nalgebra::DMatrix::zeros(d, d);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, rate) in row {
                q[(i, j)] += rate;
            }
        }
        q
    }
}

/// Build the generator for explicit per-station arrival rates under uniform
/// routing: retrievals at `λ_i·1{x_i > 0}`, returns at
/// `μ/N·(M − Σ x)·1{x_i < K}`.
pub fn build_generator(
    params: &ModelParams,
    station_rates: &[f64],
    space: &StateSpace,
) -> Result<Generator, ExactError> {
    params.validate()?;
    if station_rates.len() != params.station_count {
        return Err(ExactError::RateCount {
            got: station_rates.len(),
            expected: params.station_count,
        });
    }
    for &rate in station_rates {
        if rate <= 0.0 || !rate.is_finite() {
            return Err(ExactError::NonPositiveRate(rate));
        }
    }
    let n = params.station_count;
    let cap = params.capacity as u8;
    let m = params.fleet_size as u64;
    let return_scale = params.travel_rate / n as f64;

    let mut rows = Vec::with_capacity(space.len());
    let mut max_exit = 0.0f64;
    let mut neighbor = vec![0u8; n];
    for idx in 0..space.len() {
        let state = space.state(idx);
        let docked: u64 = state.iter().map(|&x| x as u64).sum();
        let circulating = (m - docked) as f64;
        let mut row = Vec::new();
        let mut exit = 0.0;
        for i in 0..n {
            neighbor.copy_from_slice(state);
            if state[i] > 0 {
                neighbor[i] = state[i] - 1;
                let j = space.index_of(&neighbor).expect("closed under retrieval");
                row.push((j, station_rates[i]));
                exit += station_rates[i];
                neighbor[i] = state[i];
            }
            if state[i] < cap && circulating > 0.0 {
                neighbor[i] = state[i] + 1;
                let j = space.index_of(&neighbor).expect("closed under return");
                let rate = return_scale * circulating;
                row.push((j, rate));
                exit += rate;
                neighbor[i] = state[i];
            }
        }
        row.push((idx, -exit));
        max_exit = max_exit.max(exit);
        rows.push(row);
    }
    Ok(Generator {
        rows,
        uniformization_rate: max_exit,
    })
}

/// Transient distribution `p(t) = p0·e^{Qt}` by uniformization: a
/// Poisson-weighted series of powers of the stochastic matrix
/// `P = I + Q/Λᵤ`, truncated once the remaining Poisson mass drops below
/// 10⁻¹².
pub fn transient(generator: &Generator, p0: &[f64], t: f64) -> Result<Vec<f64>, ExactError> {
    let d = generator.dim();
    if p0.len() != d {
        return Err(ExactError::DistributionShape {
            got: p0.len(),
            expected: d,
        });
    }
    let mass: f64 = p0.iter().sum();
    if (mass - 1.0).abs() > 1e-9 || p0.iter().any(|&p| p < 0.0) {
        return Err(ExactError::DistributionMass(mass));
    }
    if t < 0.0 || t.is_nan() {
        return Err(ExactError::NegativeTime(t));
    }
    let rate = generator.uniformization_rate;
    if t == 0.0 || rate == 0.0 {
        return Ok(p0.to_vec());
    }

    let a = rate * t;
    // Poisson(a) weights via the log recursion; underflowed early terms
    // contribute nothing and are skipped by the accumulated-mass test.
    let mut out = vec![0.0; d];
    let mut term = p0.to_vec();
    let mut next = vec![0.0; d];
    let mut log_w = -a;
    let mut accumulated = 0.0;
    let n_max = (a + 60.0 * a.sqrt().max(1.0) + 100.0) as u64;
    for n in 0..=n_max {
        if n > 0 {
            log_w += a.ln() - (n as f64).ln();
            // term ← term · P with P = I + Q/Λᵤ.
            next.copy_from_slice(&term);
            for (i, row) in generator.rows().iter().enumerate() {
                let scale = term[i] / rate;
                if scale != 0.0 {
                    for &(j, q) in row {
                        next[j] += scale * q;
                    }
                }
            }
            std::mem::swap(&mut term, &mut next);
        }
        let w = log_w.exp();
        if w > 0.0 {
            accumulated += w;
            for (slot, &v) in out.iter_mut().zip(&term) {
                *slot += w * v;
            }
        }
        if accumulated >= 1.0 - UNIFORMIZATION_TAIL && n as f64 >= a {
            break;
        }
    }
    Ok(out)
}

/// Exact occupancy empirical-measure mean `E[Y(k)]`, `k = 0..=K`, under a
/// state distribution: each state contributes its occupancy histogram.
pub fn expected_empirical(
    distribution: &[f64],
    space: &StateSpace,
) -> Result<Vec<f64>, ExactError> {
    if distribution.len() != space.len() {
        return Err(ExactError::DistributionShape {
            got: distribution.len(),
            expected: space.len(),
        });
    }
    let n = space.station_count() as f64;
    let mut out = vec![0.0; space.capacity() + 1];
    for (idx, &p) in distribution.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for &x in space.state(idx) {
            out[x as usize] += p / n;
        }
    }
    Ok(out)
}
