use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::metrics::MetricsReport;

use super::state::{Admission, ServerState};
use super::traffic::{ClassStreams, PoissonProcess};
use super::{EngineError, EventKind, EventRecord, Scenario};

/// A hand-specified arrival, used to drive the simulator deterministically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedArrival {
    pub time: f64,
    pub class_id: usize,
    pub hold: f64,
    pub title: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", content = "partition", rename_all = "lowercase")]
pub enum StepOutcome {
    Admitted(usize),
    Denied,
    Released(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub record: EventRecord,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassTally {
    pub offered: u64,
    pub admitted: u64,
    pub denied: u64,
    pub popular: u64,
    pub unpopular: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartitionTally {
    /// Requests that tried this partition, from its own class or forwarded.
    pub attempts: u64,
    pub admitted: u64,
    /// Time integral of occupied ports over the measurement window.
    pub occupied_area: f64,
    /// Time the partition spent with every port busy.
    pub full_time: f64,
}

/// Raw counters collected over the measurement window `[warmup_end, horizon]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTallies {
    pub classes: Vec<ClassTally>,
    pub partitions: Vec<PartitionTally>,
    /// `(offered, denied)` per equal-length time batch of the window.
    pub batches: Vec<(u64, u64)>,
    /// Per-class `(offered, denied)` batches.
    pub class_batches: Vec<Vec<(u64, u64)>>,
    /// Per-partition `(attempts, rejections)` batches.
    pub partition_batches: Vec<Vec<(u64, u64)>>,
    /// `(time, free ports)` sampled over `[0, horizon]`.
    pub free_ports: Vec<(f64, u64)>,
    pub window: f64,
    pub warmup_arrivals: u64,
}

#[derive(Debug, Clone)]
struct Pending {
    time: f64,
    kind: EventKind,
    request_id: u64,
    class_id: usize,
    hold: f64,
    title: Option<u64>,
}

impl Pending {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.request_id.cmp(&other.request_id))
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed so that BinaryHeap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

#[derive(Debug, Clone)]
struct ClassSource {
    class_id: usize,
    process: PoissonProcess,
    streams: ClassStreams,
}

/// One run of the loss system. Events are processed in time order with
/// departures ahead of arrivals at equal times, then by request id.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    state: ServerState,
    queue: BinaryHeap<Pending>,
    sources: Option<Vec<ClassSource>>,
    next_request_id: u64,
    clock: f64,
    tallies: RunTallies,
    next_sample: u64,
    trace: Option<Vec<TraceEvent>>,
}

impl<'a> Simulation<'a> {
    /// A run driven by each class's Poisson arrivals and hold law.
    pub fn new(scenario: &'a Scenario) -> Self {
        let mut sim = Self::empty(scenario);
        let mut sources: Vec<ClassSource> = scenario
            .classes
            .iter()
            .map(|class| ClassSource {
                class_id: class.class_id,
                process: PoissonProcess::new(class.arrival_rate),
                streams: ClassStreams::new(scenario.seed, class.class_id),
            })
            .collect();
        for source in sources.iter_mut() {
            sim.schedule_next_arrival(source);
        }
        sim.sources = Some(sources);
        sim
    }

    /// A run driven by an explicit arrival list instead of random traffic.
    pub fn scripted(
        scenario: &'a Scenario,
        arrivals: &[ScriptedArrival],
    ) -> Result<Self, EngineError> {
        let mut sim = Self::empty(scenario);
        let mut sorted = arrivals.to_vec();
        sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
        for arrival in sorted {
            if !(arrival.time >= 0.0 && arrival.time <= scenario.horizon) {
                return Err(EngineError::ContractViolation(format!(
                    "scripted arrival at {} lies outside [0, {}]",
                    arrival.time, scenario.horizon
                )));
            }
            if !(arrival.hold > 0.0 && arrival.hold.is_finite()) {
                return Err(EngineError::InvalidHold {
                    class_id: arrival.class_id,
                    value: arrival.hold,
                });
            }
            scenario.plan.check_index(arrival.class_id)?;
            let request_id = sim.fresh_id();
            sim.queue.push(Pending {
                time: arrival.time,
                kind: EventKind::Arrival,
                request_id,
                class_id: arrival.class_id,
                hold: arrival.hold,
                title: arrival.title,
            });
        }
        Ok(sim)
    }

    fn empty(scenario: &'a Scenario) -> Self {
        let k = scenario.plan.partition_count();
        Self {
            scenario,
            state: ServerState::new(&scenario.plan),
            queue: BinaryHeap::new(),
            sources: None,
            next_request_id: 0,
            clock: 0.0,
            tallies: RunTallies {
                classes: vec![ClassTally::default(); k],
                partitions: vec![PartitionTally::default(); k],
                batches: vec![(0, 0); scenario.batches],
                class_batches: vec![vec![(0, 0); scenario.batches]; k],
                partition_batches: vec![vec![(0, 0); scenario.batches]; k],
                free_ports: Vec::new(),
                window: scenario.horizon - scenario.warmup_end(),
                warmup_arrivals: 0,
            },
            next_sample: 0,
            trace: None,
        }
    }

    /// Keep a full event trace (every arrival, admission decision and release).
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn trace(&self) -> Option<&[TraceEvent]> {
        self.trace.as_deref()
    }

    pub fn tallies(&self) -> &RunTallies {
        &self.tallies
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_request_id;
        self.next_request_id += 1;
        id
    }

    fn schedule_next_arrival(&mut self, source: &mut ClassSource) {
        let Some(time) = source.process.next_time(&mut source.streams.arrivals) else {
            return;
        };
        if time > self.scenario.horizon {
            return;
        }
        let class_id = source.class_id;
        let class = &self.scenario.classes[class_id - 1];
        let hold = class.hold.sample(&mut source.streams.holds);
        let title = self
            .scenario
            .popularity
            .as_ref()
            .map(|pop| pop.sample_title(&mut source.streams.titles));
        let request_id = self.fresh_id();
        self.queue.push(Pending {
            time,
            kind: EventKind::Arrival,
            request_id,
            class_id,
            hold,
            title,
        });
    }

    /// Accumulate time-weighted statistics and free-port samples up to `to`.
    fn advance(&mut self, to: f64) {
        let horizon = self.scenario.horizon;
        let dt = self.scenario.effective_sample_interval();
        let capacity = self.scenario.plan.total_capacity();
        loop {
            let t = self.next_sample as f64 * dt;
            if t >= to || t > horizon {
                break;
            }
            let free = capacity - self.state.occupancy().total();
            self.tallies.free_ports.push((t, free));
            self.next_sample += 1;
        }

        let from = self.clock.max(self.scenario.warmup_end());
        let until = to.min(horizon);
        if until > from {
            let span = until - from;
            let caps = self.scenario.plan.capacities();
            for (j, tally) in self.tallies.partitions.iter_mut().enumerate() {
                let q = self.state.occupancy().counts()[j];
                tally.occupied_area += f64::from(q) * span;
                if q == caps[j] {
                    tally.full_time += span;
                }
            }
        }
        if to > self.clock {
            self.clock = to;
        }
    }

    /// Process the next event at or before the horizon.
    pub fn step(&mut self) -> Result<Option<TraceEvent>, EngineError> {
        match self.queue.peek() {
            Some(next) if next.time <= self.scenario.horizon => {}
            _ => return Ok(None),
        }
        let event = self.queue.pop().expect("peeked");
        self.advance(event.time);
        let traced = match event.kind {
            EventKind::Arrival => self.handle_arrival(event)?,
            EventKind::Departure => self.handle_departure(event)?,
        };
        if let Some(trace) = self.trace.as_mut() {
            trace.push(traced.clone());
        }
        Ok(Some(traced))
    }

    fn handle_arrival(&mut self, event: Pending) -> Result<TraceEvent, EngineError> {
        if let Some(mut sources) = self.sources.take() {
            self.schedule_next_arrival(&mut sources[event.class_id - 1]);
            self.sources = Some(sources);
        }

        let record = EventRecord {
            time: event.time,
            kind: EventKind::Arrival,
            class_id: event.class_id,
            request_id: event.request_id,
            title: event.title,
        };
        let departure = event.time + event.hold;
        let admission = self.state.admit(
            &record,
            departure,
            &self.scenario.plan,
            self.scenario.cascade,
        )?;

        if event.time >= self.scenario.warmup_end() {
            self.count_arrival(&record, admission);
        } else {
            self.tallies.warmup_arrivals += 1;
        }

        let outcome = match admission {
            Admission::Admitted(partition) => {
                self.queue.push(Pending {
                    time: departure,
                    kind: EventKind::Departure,
                    request_id: event.request_id,
                    class_id: event.class_id,
                    hold: event.hold,
                    title: event.title,
                });
                StepOutcome::Admitted(partition)
            }
            Admission::Denied => StepOutcome::Denied,
        };
        Ok(TraceEvent { record, outcome })
    }

    fn count_arrival(&mut self, record: &EventRecord, admission: Admission) {
        let scenario = self.scenario;
        let tallies = &mut self.tallies;
        let batches = tallies.batches.len();
        let offset = record.time - scenario.warmup_end();
        let b = if tallies.window > 0.0 {
            ((offset / tallies.window * batches as f64) as usize).min(batches - 1)
        } else {
            0
        };
        let denied = u64::from(admission == Admission::Denied);

        let class_idx = record.class_id - 1;
        let class = &mut tallies.classes[class_idx];
        class.offered += 1;
        class.denied += denied;
        class.admitted += 1 - denied;
        if let (Some(pop), Some(title)) = (scenario.popularity.as_ref(), record.title) {
            if pop.is_popular(title) {
                class.popular += 1;
            } else {
                class.unpopular += 1;
            }
        }
        tallies.batches[b].0 += 1;
        tallies.batches[b].1 += denied;
        tallies.class_batches[class_idx][b].0 += 1;
        tallies.class_batches[class_idx][b].1 += denied;

        let k = scenario.plan.partition_count();
        for j in scenario.cascade.scan(record.class_id, k) {
            let hit = admission == Admission::Admitted(j);
            let tally = &mut tallies.partitions[j - 1];
            tally.attempts += 1;
            let batch = &mut tallies.partition_batches[j - 1][b];
            batch.0 += 1;
            if hit {
                tally.admitted += 1;
                break;
            }
            batch.1 += 1;
        }
    }

    fn handle_departure(&mut self, event: Pending) -> Result<TraceEvent, EngineError> {
        let partition = self.state.release(event.request_id)?;
        Ok(TraceEvent {
            record: EventRecord {
                time: event.time,
                kind: EventKind::Departure,
                class_id: event.class_id,
                request_id: event.request_id,
                title: event.title,
            },
            outcome: StepOutcome::Released(partition),
        })
    }

    /// Process every event up to the horizon and close the statistics window.
    pub fn run_to_horizon(&mut self) -> Result<(), EngineError> {
        while self.step()?.is_some() {}
        let horizon = self.scenario.horizon;
        // Flush time-weighted stats and remaining samples through the horizon.
        self.advance(horizon.next_up());
        Ok(())
    }

    /// After the horizon: complete every outstanding service. No further
    /// arrivals are generated and no statistics are collected.
    pub fn drain(&mut self) -> Result<(), EngineError> {
        while let Some(event) = self.queue.pop() {
            if event.kind != EventKind::Departure {
                return Err(EngineError::ContractViolation(format!(
                    "arrival {} left unprocessed past the horizon",
                    event.request_id
                )));
            }
            self.clock = self.clock.max(event.time);
            let traced = self.handle_departure(event)?;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(traced);
            }
        }
        Ok(())
    }
}

/// Simulate `scenario` to its horizon and summarize the run.
pub fn run(scenario: &Scenario) -> Result<MetricsReport, EngineError> {
    scenario.validate()?;
    let mut sim = Simulation::new(scenario);
    sim.run_to_horizon()?;
    sim.drain()?;
    Ok(MetricsReport::from_tallies(scenario, sim.tallies()))
}
