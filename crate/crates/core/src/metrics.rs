//! Estimators and the per-run report.
//!
//! Blocking is estimated as `denied / offered` over the measurement window.
//! Two 95% intervals accompany each run-level estimate: the Wilson score
//! interval, which treats arrivals as independent trials, and a batch-means
//! interval over equal time batches, which accounts for the correlation
//! between successive blocking events in a loss system.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::analytic::{self, PartitionPlan};
use crate::engine::{RunTallies, Scenario, SessionKind, StepOutcome, TraceEvent, TrafficClass};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("denied count {denied} exceeds offered count {offered}")]
    DeniedExceedsOffered { denied: u64, offered: u64 },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }

    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }

    fn exact(x: f64) -> Self {
        Self {
            estimate: x,
            ci_low: x,
            ci_high: x,
        }
    }
}

/// Blocking probability `denied / offered` with a Wilson score 95% interval.
/// `None` when nothing was offered.
pub fn blocking_estimate(denied: u64, offered: u64) -> Result<Option<Interval>, MetricsError> {
    if denied > offered {
        return Err(MetricsError::DeniedExceedsOffered { denied, offered });
    }
    if offered == 0 {
        return Ok(None);
    }
    Ok(Some(wilson_interval(denied, offered, Z_95)))
}

pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> Interval {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The bounds are exactly 0 and 1 at the extremes; rounding would leave
    // tiny residues otherwise.
    Interval {
        estimate: p,
        ci_low: if successes == 0 {
            0.0
        } else {
            (centre - half).max(0.0)
        },
        ci_high: if successes == trials {
            1.0
        } else {
            (centre + half).min(1.0)
        },
    }
}

/// Two-sided 95% Student-t quantile with `dof` degrees of freedom.
pub fn t_quantile_95(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Ratio estimator `Σ denied / Σ offered` over time batches with a t-based
/// 95% interval from the between-batch spread. Needs at least two batches
/// with traffic.
pub fn batch_means_interval(batches: &[(u64, u64)]) -> Option<Interval> {
    let used: Vec<(f64, f64)> = batches
        .iter()
        .filter(|(offered, _)| *offered > 0)
        .map(|&(o, d)| (o as f64, d as f64))
        .collect();
    let b = used.len();
    if b < 2 {
        return None;
    }
    let offered: f64 = used.iter().map(|(o, _)| o).sum();
    let denied: f64 = used.iter().map(|(_, d)| d).sum();
    let ratio = denied / offered;
    let mean_offered = offered / b as f64;
    let ss: f64 = used.iter().map(|(o, d)| (d - ratio * o).powi(2)).sum();
    let se = (ss / ((b - 1) as f64 * b as f64)).sqrt() / mean_offered;
    let half = t_quantile_95(b - 1) * se;
    Some(Interval {
        estimate: ratio,
        ci_low: (ratio - half).max(0.0),
        ci_high: (ratio + half).min(1.0),
    })
}

/// Mean of independent replication values with a t-based 95% interval.
/// A single value yields a degenerate interval.
pub fn replication_interval(values: &[f64]) -> Option<Interval> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some(Interval::exact(mean));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = t_quantile_95(n - 1) * (var / n as f64).sqrt();
    Some(Interval {
        estimate: mean,
        ci_low: mean - half,
        ci_high: mean + half,
    })
}

/// Aggregate offered load `Σ λ_i · E[hold_i]` in Erlangs.
pub fn traffic_intensity(classes: &[TrafficClass]) -> f64 {
    classes.iter().map(TrafficClass::erlangs).sum()
}

/// Free ports `C - Σ Q_j` sampled every `interval` seconds over
/// `[0, horizon]`, replayed from an event trace. A sample at time `s`
/// reflects every event with time `<= s`.
pub fn free_port_trajectory(
    trace: &[TraceEvent],
    plan: &PartitionPlan,
    horizon: f64,
    interval: f64,
) -> Vec<(f64, u64)> {
    let capacity = plan.total_capacity();
    let mut occupied: u64 = 0;
    let mut events = trace.iter().peekable();
    let mut series = Vec::new();
    let mut n: u64 = 0;
    loop {
        let t = n as f64 * interval;
        if t > horizon {
            break;
        }
        while let Some(event) = events.next_if(|e| e.record.time <= t) {
            match event.outcome {
                StepOutcome::Admitted(_) => occupied += 1,
                StepOutcome::Released(_) => occupied -= 1,
                StepOutcome::Denied => {}
            }
        }
        series.push((t, capacity - occupied));
        n += 1;
    }
    series
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub session: SessionKind,
    pub arrival_rate: f64,
    pub offered: u64,
    pub admitted: u64,
    pub denied: u64,
    /// Wilson interval; absent when nothing was offered.
    pub blocking: Option<Interval>,
    pub blocking_batch_means: Option<Interval>,
    pub erlangs: f64,
    /// Independence-approximation denial over the class's forwarding scan.
    pub analytic_blocking: f64,
    pub popular_requests: u64,
    pub unpopular_requests: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionMetrics {
    pub partition: usize,
    pub capacity: u32,
    /// Requests that tried this partition, home or forwarded.
    pub attempts: u64,
    pub admitted: u64,
    /// Fraction of attempts that found the partition full.
    pub blocking: Option<Interval>,
    pub blocking_batch_means: Option<Interval>,
    pub mean_occupancy: f64,
    pub fraction_full: f64,
    /// Offered load of the home class in Erlangs.
    pub erlangs: f64,
    /// Erlang-B for the home class alone on this partition.
    pub erlang_b: f64,
    /// Home-class load divided by the measured all-ports-busy time, the
    /// busy-interval-normalized load form. Absent if the partition never filled.
    pub busy_interval_load: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverallMetrics {
    pub offered: u64,
    pub admitted: u64,
    pub denied: u64,
    pub blocking: Option<Interval>,
    pub blocking_batch_means: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticPredictions {
    /// Erlang-B of each partition under its home-class load.
    pub erlang_b: Vec<f64>,
    /// Per class: product of Erlang-B terms along the forwarding scan.
    pub end_to_end_denial: Vec<f64>,
    /// Always true: cascade products treat partition blocking as independent
    /// and overflow as Poisson.
    pub independence_approximation: bool,
}

/// Summary of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub seed: u64,
    pub horizon: f64,
    pub warmup_end: f64,
    pub total_capacity: u64,
    /// Aggregate offered load in Erlangs.
    pub traffic_intensity: f64,
    pub overall: OverallMetrics,
    pub classes: Vec<ClassMetrics>,
    pub partitions: Vec<PartitionMetrics>,
    /// Time-weighted mean of `C - Σ Q_j` over the measurement window.
    pub mean_free_ports: f64,
    pub free_port_series: Vec<(f64, u64)>,
    pub analytic: AnalyticPredictions,
}

/// Independence-approximation denial for a request homed at `home`,
/// following the scenario's forwarding order.
pub fn analytic_denial(scenario: &Scenario, home: usize) -> f64 {
    let loads = scenario.class_loads();
    let k = scenario.plan.partition_count();
    match scenario.cascade {
        crate::engine::CascadePolicy::ForwardNoWrap => {
            analytic::end_to_end_denial(&loads, &scenario.plan, home).expect("validated scenario")
        }
        policy => policy
            .scan(home, k)
            .map(|j| {
                analytic::erlang_b(loads[j - 1], scenario.plan.capacities()[j - 1])
                    .expect("validated load")
            })
            .product(),
    }
}

impl MetricsReport {
    pub fn from_tallies(scenario: &Scenario, tallies: &RunTallies) -> Self {
        let plan = &scenario.plan;
        let loads = scenario.class_loads();
        let erlang_b: Vec<f64> = loads
            .iter()
            .zip(plan.capacities())
            .map(|(&e, &c)| analytic::erlang_b(e, c).expect("validated load"))
            .collect();
        let end_to_end: Vec<f64> = (1..=plan.partition_count())
            .map(|home| analytic_denial(scenario, home))
            .collect();

        let classes: Vec<ClassMetrics> = scenario
            .classes
            .iter()
            .zip(&tallies.classes)
            .zip(&tallies.class_batches)
            .map(|((class, t), batches)| ClassMetrics {
                class_id: class.class_id,
                session: class.session,
                arrival_rate: class.arrival_rate,
                offered: t.offered,
                admitted: t.admitted,
                denied: t.denied,
                blocking: blocking_estimate(t.denied, t.offered)
                    .expect("engine tallies are consistent"),
                blocking_batch_means: batch_means_interval(batches),
                erlangs: class.erlangs(),
                analytic_blocking: end_to_end[class.class_id - 1],
                popular_requests: t.popular,
                unpopular_requests: t.unpopular,
            })
            .collect();

        let window = tallies.window;
        let partitions: Vec<PartitionMetrics> = tallies
            .partitions
            .iter()
            .zip(&tallies.partition_batches)
            .enumerate()
            .map(|(i, (t, batches))| PartitionMetrics {
                partition: i + 1,
                capacity: plan.capacities()[i],
                attempts: t.attempts,
                admitted: t.admitted,
                blocking: blocking_estimate(t.attempts - t.admitted, t.attempts)
                    .expect("attempts >= admitted"),
                blocking_batch_means: batch_means_interval(batches),
                mean_occupancy: if window > 0.0 {
                    t.occupied_area / window
                } else {
                    0.0
                },
                fraction_full: if window > 0.0 {
                    t.full_time / window
                } else {
                    0.0
                },
                erlangs: loads[i],
                erlang_b: erlang_b[i],
                busy_interval_load: (t.full_time > 0.0).then(|| loads[i] / t.full_time),
            })
            .collect();

        let offered: u64 = classes.iter().map(|c| c.offered).sum();
        let admitted: u64 = classes.iter().map(|c| c.admitted).sum();
        let denied: u64 = classes.iter().map(|c| c.denied).sum();
        let mean_occupied: f64 = partitions.iter().map(|p| p.mean_occupancy).sum();

        Self {
            scenario_id: scenario.id.clone(),
            seed: scenario.seed,
            horizon: scenario.horizon,
            warmup_end: scenario.warmup_end(),
            total_capacity: plan.total_capacity(),
            traffic_intensity: traffic_intensity(&scenario.classes),
            overall: OverallMetrics {
                offered,
                admitted,
                denied,
                blocking: blocking_estimate(denied, offered)
                    .expect("engine tallies are consistent"),
                blocking_batch_means: batch_means_interval(&tallies.batches),
            },
            classes,
            partitions,
            mean_free_ports: plan.total_capacity() as f64 - mean_occupied,
            free_port_series: tallies.free_ports.clone(),
            analytic: AnalyticPredictions {
                erlang_b,
                end_to_end_denial: end_to_end,
                independence_approximation: true,
            },
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// One row per class (`class_id` = `j`) and per partition
    /// (`class_id` = `p<j>`), in the fixed column order of [`CSV_HEADER`].
    /// The interval columns use the batch-means interval when the run had
    /// at least two batches with traffic, and the Wilson interval otherwise.
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::with_capacity(self.classes.len() + self.partitions.len());
        for c in &self.classes {
            let ci = c.blocking_batch_means.or(c.blocking);
            rows.push(CsvRow {
                scenario_id: self.scenario_id.clone(),
                class_id: c.class_id.to_string(),
                offered: c.offered,
                admitted: c.admitted,
                denied: c.denied,
                blocking: c.blocking.map(|b| b.estimate),
                ci_low: ci.map(|b| b.ci_low),
                ci_high: ci.map(|b| b.ci_high),
                erlangs: c.erlangs,
                analytic_blocking: c.analytic_blocking,
            });
        }
        for p in &self.partitions {
            let ci = p.blocking_batch_means.or(p.blocking);
            rows.push(CsvRow {
                scenario_id: self.scenario_id.clone(),
                class_id: format!("p{}", p.partition),
                offered: p.attempts,
                admitted: p.admitted,
                denied: p.attempts - p.admitted,
                blocking: p.blocking.map(|b| b.estimate),
                ci_low: ci.map(|b| b.ci_low),
                ci_high: ci.map(|b| b.ci_high),
                erlangs: p.erlangs,
                analytic_blocking: p.erlang_b,
            });
        }
        rows
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "scenario_id",
    "class_id",
    "offered",
    "admitted",
    "denied",
    "blocking",
    "ci_low",
    "ci_high",
    "erlangs",
    "analytic_blocking",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub scenario_id: String,
    pub class_id: String,
    pub offered: u64,
    pub admitted: u64,
    pub denied: u64,
    pub blocking: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub erlangs: f64,
    pub analytic_blocking: f64,
}

/// Write the rows of several reports as a single CSV table.
pub fn write_csv<'r, W: Write>(
    out: W,
    reports: impl IntoIterator<Item = &'r MetricsReport>,
) -> Result<(), MetricsError> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for report in reports {
        for row in report.csv_rows() {
            writer.serialize(row)?;
        }
    }
    writer.flush()?;
    Ok(())
}
