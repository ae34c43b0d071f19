//! Closed-form teletraffic quantities for a completely partitioned server.
//!
//! Partition and class indices in this module are 1-based, matching the
//! way partitions are numbered in reports and on the command line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("offered load must be finite and nonnegative, got {0}")]
    InvalidLoad(f64),
    #[error("{what} must be finite and nonnegative, got {value}")]
    NegativeEntry { what: &'static str, value: f64 },
    #[error("length mismatch: {left} rates vs {right} holding times")]
    LengthMismatch { left: usize, right: usize },
    #[error("busy interval must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("a partition plan needs at least one partition")]
    EmptyPlan,
    #[error("partition {partition} has zero ports")]
    ZeroCapacity { partition: usize },
    #[error("partition index {index} outside 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("partition range {first}..{end} is invalid for {k} partitions")]
    InvalidRange { first: usize, end: usize, k: usize },
    #[error("occupancy {occupied} exceeds capacity {capacity}")]
    OccupancyExceedsCapacity { occupied: u32, capacity: u32 },
    #[error("expected {expected} per-partition loads, got {actual}")]
    LoadCountMismatch { expected: usize, actual: usize },
}

/// Division of the server's `C` ports into `k` disjoint partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct PartitionPlan {
    capacities: Vec<u32>,
}

impl PartitionPlan {
    pub fn new(capacities: Vec<u32>) -> Result<Self, AnalyticError> {
        if capacities.is_empty() {
            return Err(AnalyticError::EmptyPlan);
        }
        if let Some(pos) = capacities.iter().position(|&c| c == 0) {
            return Err(AnalyticError::ZeroCapacity { partition: pos + 1 });
        }
        Ok(Self { capacities })
    }

    /// `k` partitions of `ports` each.
    pub fn uniform(k: usize, ports: u32) -> Result<Self, AnalyticError> {
        Self::new(vec![ports; k])
    }

    pub fn partition_count(&self) -> usize {
        self.capacities.len()
    }

    /// `C = Σ c_j`.
    pub fn total_capacity(&self) -> u64 {
        self.capacities.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    /// Capacity of partition `j` (1-based).
    pub fn capacity(&self, j: usize) -> Result<u32, AnalyticError> {
        self.check_index(j)?;
        Ok(self.capacities[j - 1])
    }

    pub(crate) fn check_index(&self, j: usize) -> Result<(), AnalyticError> {
        if j == 0 || j > self.capacities.len() {
            return Err(AnalyticError::IndexOutOfRange {
                index: j,
                max: self.capacities.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<u32>> for PartitionPlan {
    type Error = AnalyticError;

    fn try_from(value: Vec<u32>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<PartitionPlan> for Vec<u32> {
    fn from(plan: PartitionPlan) -> Self {
        plan.capacities
    }
}

/// Occupied-port count per partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyVector {
    occupied: Vec<u32>,
}

impl OccupancyVector {
    pub fn empty(plan: &PartitionPlan) -> Self {
        Self {
            occupied: vec![0; plan.partition_count()],
        }
    }

    pub fn from_counts(counts: Vec<u32>, plan: &PartitionPlan) -> Result<Self, AnalyticError> {
        if counts.len() != plan.partition_count() {
            return Err(AnalyticError::LoadCountMismatch {
                expected: plan.partition_count(),
                actual: counts.len(),
            });
        }
        for (&occupied, &capacity) in counts.iter().zip(plan.capacities()) {
            if occupied > capacity {
                return Err(AnalyticError::OccupancyExceedsCapacity { occupied, capacity });
            }
        }
        Ok(Self { occupied: counts })
    }

    /// Occupied ports on partition `j` (1-based). Panics when out of range.
    pub fn get(&self, j: usize) -> u32 {
        self.occupied[j - 1]
    }

    pub fn counts(&self) -> &[u32] {
        &self.occupied
    }

    pub fn total(&self) -> u64 {
        self.occupied.iter().map(|&q| u64::from(q)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.iter().all(|&q| q == 0)
    }

    pub(crate) fn increment(&mut self, j: usize) {
        self.occupied[j - 1] += 1;
    }

    pub(crate) fn decrement(&mut self, j: usize) {
        self.occupied[j - 1] -= 1;
    }
}

/// Erlang-B blocking probability of a loss system with `ports` servers
/// offered `erlangs` of Poisson traffic.
///
/// Uses the recurrence `B(0) = 1`, `B(j) = E·B(j-1) / (j + E·B(j-1))`, which
/// stays in `[0, 1]` where the factorial quotient would overflow.
/// `ports == 0` blocks everything.
pub fn erlang_b(erlangs: f64, ports: u32) -> Result<f64, AnalyticError> {
    if !erlangs.is_finite() || erlangs < 0.0 {
        return Err(AnalyticError::InvalidLoad(erlangs));
    }
    let mut b = 1.0;
    for j in 1..=ports {
        let eb = erlangs * b;
        b = eb / (f64::from(j) + eb);
    }
    Ok(b)
}

/// Per-class traffic description used for offered-load computations.
#[derive(Debug, Clone, PartialEq)]
pub struct OfferedLoad {
    rates: Vec<f64>,
    holds: Vec<f64>,
}

impl OfferedLoad {
    pub fn new(rates: Vec<f64>, holds: Vec<f64>) -> Result<Self, AnalyticError> {
        if rates.len() != holds.len() {
            return Err(AnalyticError::LengthMismatch {
                left: rates.len(),
                right: holds.len(),
            });
        }
        check_entries("arrival rate", &rates)?;
        check_entries("holding time", &holds)?;
        Ok(Self { rates, holds })
    }

    /// `Σ λ_i h_i` in Erlangs.
    pub fn erlangs(&self) -> f64 {
        self.rates.iter().zip(&self.holds).map(|(l, h)| l * h).sum()
    }

    /// The load sum divided by a busy interval `T`. Kept for fidelity with the
    /// original model's notation; it is not a dimensionless Erlang value unless
    /// `T = 1`.
    pub fn per_busy_interval(&self, busy_interval: f64) -> Result<f64, AnalyticError> {
        if !busy_interval.is_finite() || busy_interval <= 0.0 {
            return Err(AnalyticError::NonPositiveInterval(busy_interval));
        }
        Ok(self.erlangs() / busy_interval)
    }
}

fn check_entries(what: &'static str, values: &[f64]) -> Result<(), AnalyticError> {
    match values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        Some(&value) => Err(AnalyticError::NegativeEntry { what, value }),
        None => Ok(()),
    }
}

/// `Σ λ_i h_i`: offered traffic in Erlangs.
pub fn offered_load_erlangs(rates: &[f64], holds: &[f64]) -> Result<f64, AnalyticError> {
    Ok(OfferedLoad::new(rates.to_vec(), holds.to_vec())?.erlangs())
}

/// `(1/T) Σ λ_i h_i`, the busy-interval-normalized load.
pub fn offered_load_paper_literal(
    rates: &[f64],
    holds: &[f64],
    busy_interval: f64,
) -> Result<f64, AnalyticError> {
    OfferedLoad::new(rates.to_vec(), holds.to_vec())?.per_busy_interval(busy_interval)
}

/// Probability that a request is routed to partition `j` of `k` and finds a
/// free port there: `(1 - 1/k)^(j-1) · (1/k) · (c_j - q_j) / c_j`.
///
/// This assumes uniform dispatch over partitions; the simulator instead
/// routes each class to its own home partition.
pub fn routed_availability(
    j: usize,
    k: usize,
    ports: u32,
    occupied: u32,
) -> Result<f64, AnalyticError> {
    if k == 0 || j == 0 || j > k {
        return Err(AnalyticError::IndexOutOfRange { index: j, max: k });
    }
    if ports == 0 {
        return Err(AnalyticError::ZeroCapacity { partition: j });
    }
    if occupied > ports {
        return Err(AnalyticError::OccupancyExceedsCapacity {
            occupied,
            capacity: ports,
        });
    }
    let share = 1.0 / k as f64;
    let free_fraction = f64::from(ports - occupied) / f64::from(ports);
    let skipped = (1.0 - share).powi((j - 1) as i32);
    Ok(skipped * share * free_fraction)
}

/// Product of per-partition Erlang-B values over the 1-based half-open range
/// `first..end`, i.e. the probability that partitions `first` through
/// `end - 1` are all blocked when blocking events are treated as independent.
/// An empty range gives 1.
pub fn cascade_block_probability(
    loads: &[f64],
    plan: &PartitionPlan,
    first: usize,
    end: usize,
) -> Result<f64, AnalyticError> {
    let k = plan.partition_count();
    if loads.len() != k {
        return Err(AnalyticError::LoadCountMismatch {
            expected: k,
            actual: loads.len(),
        });
    }
    if first == 0 || first > end || end > k + 1 {
        return Err(AnalyticError::InvalidRange { first, end, k });
    }
    let mut product = 1.0;
    for m in first..end {
        product *= erlang_b(loads[m - 1], plan.capacities()[m - 1])?;
    }
    Ok(product)
}

/// Independence-approximation probability that a request homed at partition
/// `home` is denied after forwarding through every partition `home..=k`.
///
/// Overflow traffic is burstier than Poisson, so this underestimates denial
/// for partitions that receive overflow; the simulator is the reference.
pub fn end_to_end_denial(
    loads: &[f64],
    plan: &PartitionPlan,
    home: usize,
) -> Result<f64, AnalyticError> {
    plan.check_index(home)?;
    cascade_block_probability(loads, plan, home, plan.partition_count() + 1)
}
