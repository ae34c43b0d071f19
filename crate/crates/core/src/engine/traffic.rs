use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{EngineError, EventKind, EventRecord};

/// Default cap on a steady (normal playback) session, in seconds.
pub const STEADY_MAX_HOLD: f64 = 120.0;
/// Default cap on an interactive session, in seconds.
pub const INTERACTIVE_MAX_HOLD: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionKind {
    Steady,
    Interactive,
}

impl SessionKind {
    pub fn default_hold(self) -> HoldLaw {
        match self {
            SessionKind::Steady => HoldLaw::Uniform {
                max: STEADY_MAX_HOLD,
            },
            SessionKind::Interactive => HoldLaw::Uniform {
                max: INTERACTIVE_MAX_HOLD,
            },
        }
    }
}

/// How long an admitted request keeps its port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum HoldLaw {
    /// Uniform on `(0, max]`.
    Uniform { max: f64 },
    /// Exponential with the given mean.
    Exponential { mean: f64 },
    /// Every request holds for exactly `duration`.
    Fixed { duration: f64 },
}

impl HoldLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            HoldLaw::Uniform { max } => max / 2.0,
            HoldLaw::Exponential { mean } => mean,
            HoldLaw::Fixed { duration } => duration,
        }
    }

    /// Upper bound on a single hold, if the law has one.
    pub fn max_hold(&self) -> Option<f64> {
        match *self {
            HoldLaw::Uniform { max } => Some(max),
            HoldLaw::Exponential { .. } => None,
            HoldLaw::Fixed { duration } => Some(duration),
        }
    }

    fn parameter(&self) -> f64 {
        match *self {
            HoldLaw::Uniform { max } => max,
            HoldLaw::Exponential { mean } => mean,
            HoldLaw::Fixed { duration } => duration,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            HoldLaw::Uniform { max } => {
                // u in [0, 1) maps to (0, max].
                let u: f64 = rng.random();
                max * (1.0 - u)
            }
            HoldLaw::Exponential { mean } => {
                let draw = Exp::new(1.0 / mean).expect("validated mean").sample(rng);
                if draw > 0.0 {
                    draw
                } else {
                    f64::MIN_POSITIVE
                }
            }
            HoldLaw::Fixed { duration } => duration,
        }
    }
}

/// One population of users, homed at the partition with the same index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficClass {
    pub class_id: usize,
    /// Poisson arrival rate in requests per second.
    pub arrival_rate: f64,
    pub session: SessionKind,
    pub hold: HoldLaw,
}

impl TrafficClass {
    pub fn new(
        class_id: usize,
        arrival_rate: f64,
        session: SessionKind,
        hold: HoldLaw,
    ) -> Result<Self, EngineError> {
        let class = Self {
            class_id,
            arrival_rate,
            session,
            hold,
        };
        class.validate()?;
        Ok(class)
    }

    /// A steady-session class with uniform holds capped at 120 s.
    pub fn steady(class_id: usize, arrival_rate: f64) -> Result<Self, EngineError> {
        Self::new(
            class_id,
            arrival_rate,
            SessionKind::Steady,
            SessionKind::Steady.default_hold(),
        )
    }

    /// An interactive-session class with uniform holds capped at 80 s.
    pub fn interactive(class_id: usize, arrival_rate: f64) -> Result<Self, EngineError> {
        Self::new(
            class_id,
            arrival_rate,
            SessionKind::Interactive,
            SessionKind::Interactive.default_hold(),
        )
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !self.arrival_rate.is_finite() || self.arrival_rate < 0.0 {
            return Err(EngineError::InvalidRate {
                class_id: self.class_id,
                rate: self.arrival_rate,
            });
        }
        let p = self.hold.parameter();
        if !p.is_finite() || p <= 0.0 {
            return Err(EngineError::InvalidHold {
                class_id: self.class_id,
                value: p,
            });
        }
        Ok(())
    }

    /// Offered load of this class alone, `λ · E[hold]`.
    pub fn erlangs(&self) -> f64 {
        self.arrival_rate * self.hold.mean()
    }
}

pub fn draw_hold_time<R: Rng + ?Sized>(class: &TrafficClass, rng: &mut R) -> f64 {
    class.hold.sample(rng)
}

/// Independent random streams used for one class within a run.
#[derive(Debug, Clone)]
pub struct ClassStreams {
    pub arrivals: ChaCha8Rng,
    pub holds: ChaCha8Rng,
    pub titles: ChaCha8Rng,
}

impl ClassStreams {
    /// Streams are keyed by `(seed, class_id)` so that changing one class's
    /// rate or a partition's capacity leaves every other stream untouched.
    pub fn new(seed: u64, class_id: usize) -> Self {
        let base = 3 * class_id as u64;
        Self {
            arrivals: stream_rng(seed, base),
            holds: stream_rng(seed, base + 1),
            titles: stream_rng(seed, base + 2),
        }
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Poisson arrival epochs of a single class.
#[derive(Debug, Clone)]
pub(crate) struct PoissonProcess {
    gaps: Option<Exp<f64>>,
    last: f64,
}

impl PoissonProcess {
    pub(crate) fn new(rate: f64) -> Self {
        let gaps = if rate > 0.0 {
            Some(Exp::new(rate).expect("validated rate"))
        } else {
            None
        };
        Self { gaps, last: 0.0 }
    }

    /// Next arrival time, or `None` for a silent class.
    pub(crate) fn next_time<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<f64> {
        let gaps = self.gaps.as_ref()?;
        let mut t = self.last + gaps.sample(rng);
        if t <= self.last {
            t = self.last.next_up();
        }
        self.last = t;
        Some(t)
    }
}

/// All arrivals of `class` in `(0, horizon]`, in increasing time order.
/// Request ids count up from zero within the returned list.
pub fn generate_arrivals<R: Rng + ?Sized>(
    class: &TrafficClass,
    horizon: f64,
    rng: &mut R,
) -> Vec<EventRecord> {
    let mut process = PoissonProcess::new(class.arrival_rate);
    let mut out = Vec::new();
    while let Some(time) = process.next_time(rng) {
        if time > horizon {
            break;
        }
        out.push(EventRecord {
            time,
            kind: EventKind::Arrival,
            class_id: class.class_id,
            request_id: out.len() as u64,
            title: None,
        });
    }
    out
}
