//! Sweeps with replication, result files, and analytic comparison.
//!
//! Every sweep point of every series is simulated once per replication, with
//! replication `r` using seed `base + r`. The same seeds are reused at every
//! point and in every series, so neighbouring points and overlaid series are
//! compared under common random numbers. Jobs run in parallel; results are
//! collected in canonical order (series, sweep value, seed) before anything
//! is written.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{
    preset_config, ConfigError, Metric, Overrides, ScenarioConfig, SweepParameter,
};
use crate::engine::{self, CascadePolicy, EngineError, Scenario};
use crate::metrics::{self, Interval, MetricsError, MetricsReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// All replications of one sweep point in one series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub series: String,
    pub index: usize,
    pub x: f64,
    /// Aggregate offered load of the point's scenario, in Erlangs.
    pub traffic_intensity: f64,
    /// Plotted value across replications; `None` if no replication offered
    /// any traffic.
    pub y: Option<Interval>,
    /// One report per replication, in seed order. Empty for computed metrics.
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// The config as run, overrides applied.
    pub config: ScenarioConfig,
    pub points: Vec<SweepPoint>,
}

impl ExperimentResult {
    /// Points of one series in sweep order.
    pub fn series(&self, label: &str) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.series == label).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        replication_seeds(&self.config)
    }
}

fn replication_seeds(config: &ScenarioConfig) -> Vec<u64> {
    (0..config.replications as u64)
        .map(|r| config.scenario.seed.wrapping_add(r))
        .collect()
}

/// Sweep values, or the single base point when the config has no sweep.
fn sweep_values(config: &ScenarioConfig, base: &Scenario) -> Vec<f64> {
    match &config.sweep {
        Some(sweep) => sweep.values(),
        None => vec![metrics::traffic_intensity(&base.classes)],
    }
}

fn point_scenario(
    config: &ScenarioConfig,
    series: Option<usize>,
    x: f64,
) -> Result<Scenario, ConfigError> {
    let mut scenario = config.build_scenario(series)?;
    if let Some(sweep) = &config.sweep {
        sweep.parameter.apply(&mut scenario, x);
    }
    Ok(scenario)
}

/// Run every point and replication of `config`.
pub fn run_experiment(config: &ScenarioConfig) -> Result<ExperimentResult, ExperimentError> {
    config.validate()?;
    let labels = config.series_labels();
    let seeds = replication_seeds(config);

    let mut scenarios = Vec::new();
    for (s, label) in labels.iter().enumerate() {
        let series = (!config.series.is_empty()).then_some(s);
        let base = config.build_scenario(series)?;
        for (index, x) in sweep_values(config, &base).into_iter().enumerate() {
            scenarios.push((label.clone(), index, x, point_scenario(config, series, x)?));
        }
    }

    let simulate = config.metric != Metric::TrafficIntensity;
    let jobs: Vec<(usize, u64)> = if simulate {
        (0..scenarios.len())
            .flat_map(|p| seeds.iter().map(move |&seed| (p, seed)))
            .collect()
    } else {
        Vec::new()
    };
    let mut reports = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let mut scenario = scenarios[p].3.clone();
            scenario.seed = seed;
            engine::run(&scenario)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter();

    let points = scenarios
        .into_iter()
        .map(|(series, index, x, scenario)| {
            let runs: Vec<MetricsReport> = if simulate {
                reports.by_ref().take(seeds.len()).collect()
            } else {
                Vec::new()
            };
            let traffic_intensity = metrics::traffic_intensity(&scenario.classes);
            let y = aggregate(config.metric, traffic_intensity, &runs);
            SweepPoint {
                series,
                index,
                x,
                traffic_intensity,
                y,
                reports: runs,
            }
        })
        .collect();

    Ok(ExperimentResult {
        config: config.clone(),
        points,
    })
}

fn aggregate(metric: Metric, intensity: f64, runs: &[MetricsReport]) -> Option<Interval> {
    match metric {
        Metric::TrafficIntensity => Some(Interval {
            estimate: intensity,
            ci_low: intensity,
            ci_high: intensity,
        }),
        Metric::Blocking => {
            if let [only] = runs {
                return only.overall.blocking_batch_means.or(only.overall.blocking);
            }
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.overall.blocking.map(|b| b.estimate))
                .collect();
            metrics::replication_interval(&values).map(|i| Interval {
                estimate: i.estimate,
                ci_low: i.ci_low.max(0.0),
                ci_high: i.ci_high.min(1.0),
            })
        }
        Metric::MeanFreePorts => {
            let values: Vec<f64> = runs.iter().map(|r| r.mean_free_ports).collect();
            metrics::replication_interval(&values).map(|i| Interval {
                ci_low: i.ci_low.max(0.0),
                ..i
            })
        }
    }
}

fn x_axis(config: &ScenarioConfig) -> (&'static str, &'static str, &'static str) {
    match &config.sweep {
        Some(s) => (
            sweep_name(s.parameter),
            s.parameter.label(),
            s.parameter.units(),
        ),
        None => (
            "offered_load",
            SweepParameter::OfferedLoad.label(),
            "Erlangs",
        ),
    }
}

fn sweep_name(p: SweepParameter) -> &'static str {
    match p {
        SweepParameter::PerClassRate => "per_class_rate",
        SweepParameter::AggregateRate => "aggregate_rate",
        SweepParameter::OfferedLoad => "offered_load",
        SweepParameter::PerPartitionLoad => "per_partition_load",
    }
}

fn metric_label(metric: Metric) -> &'static str {
    match metric {
        Metric::Blocking => "blocking probability (denied / offered)",
        Metric::MeanFreePorts => "time-weighted mean free ports",
        Metric::TrafficIntensity => "traffic intensity (sum of rate x mean hold)",
    }
}

#[derive(Serialize)]
struct Axis {
    parameter: &'static str,
    label: &'static str,
    units: &'static str,
}

#[derive(Serialize)]
struct SeriesMeta {
    label: String,
    partitions: Vec<u32>,
    cascade: CascadePolicy,
    plot_file: String,
}

#[derive(Serialize)]
struct Metadata<'a> {
    name: &'a str,
    description: &'a str,
    x_axis: Axis,
    y_axis: Axis,
    replications: usize,
    seeds: Vec<u64>,
    sweep_values: Vec<f64>,
    series: Vec<SeriesMeta>,
    point_format: &'static str,
    assumptions: Vec<String>,
    config: &'a ScenarioConfig,
}

fn assumptions(config: &ScenarioConfig) -> Vec<String> {
    let mut notes = Vec::new();
    if let Some(sweep) = &config.sweep {
        notes.push(match sweep.parameter {
            SweepParameter::PerClassRate => {
                "x is the arrival rate of each class in requests/s; every class gets the same rate"
                    .to_string()
            }
            SweepParameter::AggregateRate => {
                "x is the total arrival rate in requests/s, split evenly over the classes"
                    .to_string()
            }
            SweepParameter::OfferedLoad => {
                "x is the total offered load in Erlangs, split evenly over the classes".to_string()
            }
            SweepParameter::PerPartitionLoad => {
                "x is the offered load of each class at its home partition in Erlangs".to_string()
            }
        });
    }
    notes.push(format!(
        "y is the {}; intervals are 95% Student-t intervals across replications",
        metric_label(config.metric)
    ));
    notes.push("blocked requests are lost; a request is forwarded from its home partition to later partitions while they are full".to_string());
    notes.push(format!(
        "the first {} of the horizon is discarded as warm-up",
        config.scenario.warmup_fraction
    ));
    notes.push(
        "replication r uses seed base + r at every sweep point and in every series".to_string(),
    );
    notes.push("analytic cascade values in point files assume independent partition blocking and Poisson overflow".to_string());
    notes.extend(config.notes.iter().cloned());
    notes
}

fn create_file(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ExperimentError::Output {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write point files, one plot file per series and `metadata.json` into
/// `out_dir`. Returns the written paths in creation order.
pub fn write_experiment(
    result: &ExperimentResult,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let config = &result.config;
    let points_dir = out_dir.join("points");
    fs::create_dir_all(&points_dir).map_err(io_err(&points_dir))?;
    let mut written = Vec::new();

    for point in &result.points {
        if point.reports.is_empty() {
            continue;
        }
        let path = points_dir.join(format!(
            "{}-{:03}.{}",
            point.series,
            point.index,
            format.extension()
        ));
        let mut out = create_file(&path)?;
        match format {
            OutputFormat::Csv => metrics::write_csv(&mut out, &point.reports)?,
            OutputFormat::Json => {
                serde_json::to_writer_pretty(&mut out, point).map_err(MetricsError::from)?;
                out.write_all(b"\n").map_err(io_err(&path))?;
            }
        }
        out.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    let labels = config.series_labels();
    let mut series_meta = Vec::new();
    for (s, label) in labels.iter().enumerate() {
        let path = out_dir.join(format!("plot-{label}.csv"));
        let mut text = String::from("x,y,ci_low,ci_high\n");
        for point in result.points.iter().filter(|p| &p.series == label) {
            let _ = writeln!(
                text,
                "{},{},{},{}",
                point.x,
                fmt_opt(point.y.map(|y| y.estimate)),
                fmt_opt(point.y.map(|y| y.ci_low)),
                fmt_opt(point.y.map(|y| y.ci_high)),
            );
        }
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);

        let scenario = config.build_scenario((!config.series.is_empty()).then_some(s))?;
        series_meta.push(SeriesMeta {
            label: label.clone(),
            partitions: scenario.plan.capacities().to_vec(),
            cascade: scenario.cascade,
            plot_file: format!("plot-{label}.csv"),
        });
    }

    let (parameter, label, units) = x_axis(config);
    let base = config.build_scenario(None)?;
    let metadata = Metadata {
        name: &config.name,
        description: &config.description,
        x_axis: Axis {
            parameter,
            label,
            units,
        },
        y_axis: Axis {
            parameter: match config.metric {
                Metric::Blocking => "blocking",
                Metric::MeanFreePorts => "mean_free_ports",
                Metric::TrafficIntensity => "traffic_intensity",
            },
            label: metric_label(config.metric),
            units: config.metric.units(),
        },
        replications: config.replications,
        seeds: result.seeds(),
        sweep_values: sweep_values(config, &base),
        series: series_meta,
        point_format: format.extension(),
        assumptions: assumptions(config),
        config,
    };
    let path = out_dir.join("metadata.json");
    let mut out = create_file(&path)?;
    serde_json::to_writer_pretty(&mut out, &metadata).map_err(MetricsError::from)?;
    out.write_all(b"\n").map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

/// Load a shipped preset, apply overrides, run it and write its results.
pub fn run_preset(
    name: &str,
    out_dir: &Path,
    overrides: &Overrides,
    format: OutputFormat,
) -> Result<ExperimentResult, ExperimentError> {
    let mut config = preset_config(name)?;
    config.apply_overrides(overrides)?;
    let result = run_experiment(&config)?;
    write_experiment(&result, out_dir, format)?;
    Ok(result)
}

/// One partition's row of [`compare_analytic`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub partition: usize,
    pub capacity: u32,
    /// Home-class offered load in Erlangs.
    pub erlangs: f64,
    /// Requests that tried this partition.
    pub attempts: u64,
    /// Fraction of attempts that found the partition full.
    pub simulated_blocking: Interval,
    pub erlang_b: f64,
    pub erlang_b_agrees: bool,
    /// Whether Erlang-B is the exact answer for this partition.
    pub erlang_b_exact: bool,
    /// End-to-end denial of the class homed here.
    pub simulated_denial: Interval,
    pub end_to_end_denial: f64,
    pub cascade_agrees: bool,
    pub cascade_exact: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario_id: String,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

const ZERO: Interval = Interval {
    estimate: 0.0,
    ci_low: 0.0,
    ci_high: 0.0,
};

/// Simulate `scenario` once and set each partition's measured blocking and
/// each class's measured denial beside the analytic values. Intervals are
/// batch-means when available and Wilson otherwise; a partition or class
/// with no traffic shows an exact zero.
pub fn compare_analytic(scenario: &Scenario) -> Result<Comparison, EngineError> {
    let report = engine::run(scenario)?;
    let k = scenario.plan.partition_count();
    let rates: Vec<f64> = scenario.classes.iter().map(|c| c.arrival_rate).collect();

    // Partition j sees only Poisson home traffic when no other loaded class
    // can be forwarded to it.
    let exact: Vec<bool> = (1..=k)
        .map(|j| {
            (1..=k)
                .filter(|&i| i != j && rates[i - 1] > 0.0)
                .all(|i| !scenario.cascade.scan(i, k).any(|p| p == j))
        })
        .collect();

    let rows = (1..=k)
        .map(|j| {
            let p = &report.partitions[j - 1];
            let c = &report.classes[j - 1];
            let simulated_blocking = p.blocking_batch_means.or(p.blocking).unwrap_or(ZERO);
            let simulated_denial = c.blocking_batch_means.or(c.blocking).unwrap_or(ZERO);
            let scan: Vec<usize> = scenario.cascade.scan(j, k).collect();
            let cascade_exact = scan.len() == 1 && exact[j - 1];
            let erlang_b_agrees = simulated_blocking.contains(p.erlang_b);
            let cascade_agrees = simulated_denial.contains(c.analytic_blocking);
            let mut notes = Vec::new();
            if !exact[j - 1] {
                notes.push("partition also receives forwarded overflow, so Erlang-B of the home load is not exact");
            }
            if !cascade_exact {
                notes.push("cascade product assumes independent blocking and Poisson overflow; overflow is peaked, so disagreement is expected at high load");
            }
            ComparisonRow {
                partition: j,
                capacity: p.capacity,
                erlangs: p.erlangs,
                attempts: p.attempts,
                simulated_blocking,
                erlang_b: p.erlang_b,
                erlang_b_agrees,
                erlang_b_exact: exact[j - 1],
                simulated_denial,
                end_to_end_denial: c.analytic_blocking,
                cascade_agrees,
                cascade_exact,
                note: notes.join("; "),
            }
        })
        .collect();

    Ok(Comparison {
        scenario_id: scenario.id.clone(),
        seed: scenario.seed,
        rows,
    })
}

impl Comparison {
    /// Fixed-width text table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (seed {})", self.scenario_id, self.seed);
        let _ = writeln!(
            s,
            "{:>4} {:>4} {:>9} {:>9}  {:<32} {:>10} {:<5}  {:<32} {:>10} {:<5}",
            "part",
            "c",
            "erlangs",
            "attempts",
            "sim blocking [95% CI]",
            "erlang_b",
            "ok",
            "sim denial [95% CI]",
            "cascade",
            "ok"
        );
        let flag = |agrees: bool, exact: bool| match (agrees, exact) {
            (true, _) => "yes",
            (false, true) => "NO",
            (false, false) => "no*",
        };
        let ci = |i: &Interval| format!("{:.5} [{:.5}, {:.5}]", i.estimate, i.ci_low, i.ci_high);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>4} {:>4} {:>9.3} {:>9}  {:<32} {:>10.5} {:<5}  {:<32} {:>10.5} {:<5}",
                r.partition,
                r.capacity,
                r.erlangs,
                r.attempts,
                ci(&r.simulated_blocking),
                r.erlang_b,
                flag(r.erlang_b_agrees, r.erlang_b_exact),
                ci(&r.simulated_denial),
                r.end_to_end_denial,
                flag(r.cascade_agrees, r.cascade_exact),
            );
        }
        let mut noted = false;
        for r in self.rows.iter().filter(|r| !r.note.is_empty()) {
            if !noted {
                let _ = writeln!(s, "notes (no* = disagreement under a known approximation):");
                noted = true;
            }
            let _ = writeln!(s, "  partition {}: {}", r.partition, r.note);
        }
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "partition",
            "capacity",
            "erlangs",
            "attempts",
            "sim_blocking",
            "sim_blocking_low",
            "sim_blocking_high",
            "erlang_b",
            "erlang_b_agrees",
            "erlang_b_exact",
            "sim_denial",
            "sim_denial_low",
            "sim_denial_high",
            "end_to_end_denial",
            "cascade_agrees",
            "cascade_exact",
            "note",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.partition.to_string(),
                r.capacity.to_string(),
                r.erlangs.to_string(),
                r.attempts.to_string(),
                r.simulated_blocking.estimate.to_string(),
                r.simulated_blocking.ci_low.to_string(),
                r.simulated_blocking.ci_high.to_string(),
                r.erlang_b.to_string(),
                r.erlang_b_agrees.to_string(),
                r.erlang_b_exact.to_string(),
                r.simulated_denial.estimate.to_string(),
                r.simulated_denial.ci_low.to_string(),
                r.simulated_denial.ci_high.to_string(),
                r.end_to_end_denial.to_string(),
                r.cascade_agrees.to_string(),
                r.cascade_exact.to_string(),
                r.note.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
