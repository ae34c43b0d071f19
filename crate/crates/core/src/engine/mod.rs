//! Discrete-event simulation of the partitioned server as a pure loss system.
//!
//! Each traffic class `j` is homed at partition `j`. An arriving request is
//! offered to its home partition first and forwarded to later partitions
//! while they are full; a request that finds no free port is lost.

mod sim;
mod state;
mod traffic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{AnalyticError, PartitionPlan};
use crate::popularity::ZipfPopularity;

pub use sim::{
    run, ClassTally, PartitionTally, RunTallies, ScriptedArrival, Simulation, StepOutcome,
    TraceEvent,
};
pub use state::{Admission, InService, ServerState};
pub use traffic::{
    draw_hold_time, generate_arrivals, ClassStreams, HoldLaw, SessionKind, TrafficClass,
    INTERACTIVE_MAX_HOLD, STEADY_MAX_HOLD,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("class {class_id}: arrival rate must be finite and nonnegative, got {rate}")]
    InvalidRate { class_id: usize, rate: f64 },
    #[error("class {class_id}: hold-time parameter must be finite and positive, got {value}")]
    InvalidHold { class_id: usize, value: f64 },
    #[error("scenario has {classes} classes but {partitions} partitions")]
    ClassCountMismatch { classes: usize, partitions: usize },
    #[error("class at position {position} has class_id {class_id}, expected {position}")]
    ClassIdMismatch { position: usize, class_id: usize },
    #[error("horizon must be finite and positive, got {0}")]
    InvalidHorizon(f64),
    #[error("warm-up fraction must lie in [0, 1), got {0}")]
    InvalidWarmup(f64),
    #[error("sampling interval must be finite and positive, got {0}")]
    InvalidSampleInterval(f64),
    #[error("batch count must be at least 1")]
    InvalidBatches,
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("request {0} is not in service")]
    UnknownRequest(u64),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Departure,
    Arrival,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub class_id: usize,
    pub request_id: u64,
    pub title: Option<u64>,
}

/// Order in which a blocked request visits partitions after its home.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CascadePolicy {
    /// `home, home+1, ..., k`, then deny.
    #[default]
    ForwardNoWrap,
    /// `home, ..., k, 1, ..., home-1`, then deny.
    ForwardWrap,
}

impl CascadePolicy {
    /// 1-based partition indices visited by a request homed at `home`.
    pub fn scan(self, home: usize, k: usize) -> impl Iterator<Item = usize> {
        let wrapped = match self {
            CascadePolicy::ForwardNoWrap => 1..1,
            CascadePolicy::ForwardWrap => 1..home,
        };
        (home..=k).chain(wrapped)
    }
}

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;
pub const DEFAULT_BATCHES: usize = 20;

/// A complete, validated simulation input.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub plan: PartitionPlan,
    pub classes: Vec<TrafficClass>,
    /// Arrivals are generated on `(0, horizon]`.
    pub horizon: f64,
    pub seed: u64,
    pub popularity: Option<ZipfPopularity>,
    pub cascade: CascadePolicy,
    /// Leading fraction of the horizon excluded from every estimate.
    pub warmup_fraction: f64,
    /// Spacing of the free-port series; `None` gives 100 intervals.
    pub sample_interval: Option<f64>,
    /// Number of equal time batches used for batch-means intervals.
    pub batches: usize,
}

impl Scenario {
    /// A scenario with default policy, warm-up and sampling settings.
    pub fn new(
        plan: PartitionPlan,
        classes: Vec<TrafficClass>,
        horizon: f64,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let scenario = Self {
            id: "scenario".to_string(),
            plan,
            classes,
            horizon,
            seed,
            popularity: None,
            cascade: CascadePolicy::default(),
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            sample_interval: None,
            batches: DEFAULT_BATCHES,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let k = self.plan.partition_count();
        if self.classes.len() != k {
            return Err(EngineError::ClassCountMismatch {
                classes: self.classes.len(),
                partitions: k,
            });
        }
        for (i, class) in self.classes.iter().enumerate() {
            if class.class_id != i + 1 {
                return Err(EngineError::ClassIdMismatch {
                    position: i + 1,
                    class_id: class.class_id,
                });
            }
            class.validate()?;
        }
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(EngineError::InvalidHorizon(self.horizon));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(EngineError::InvalidWarmup(self.warmup_fraction));
        }
        if let Some(dt) = self.sample_interval {
            if !dt.is_finite() || dt <= 0.0 {
                return Err(EngineError::InvalidSampleInterval(dt));
            }
        }
        if self.batches == 0 {
            return Err(EngineError::InvalidBatches);
        }
        Ok(())
    }

    pub fn warmup_end(&self) -> f64 {
        self.horizon * self.warmup_fraction
    }

    pub fn effective_sample_interval(&self) -> f64 {
        self.sample_interval.unwrap_or(self.horizon / 100.0)
    }

    /// Offered load of each class in Erlangs, indexed like the partitions.
    pub fn class_loads(&self) -> Vec<f64> {
        self.classes.iter().map(TrafficClass::erlangs).collect()
    }

    /// Replace every class's arrival rate.
    pub fn with_rates(mut self, rates: &[f64]) -> Self {
        for (class, &rate) in self.classes.iter_mut().zip(rates) {
            class.arrival_rate = rate;
        }
        self
    }
}
