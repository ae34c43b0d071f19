//! Scenario files and experiment presets.
//!
//! A config file is JSON describing one scenario plus optional sweep,
//! series and replication directives; the README documents the full
//! schema. Every diagnostic names the offending field by its path in
//! the document (for example `scenario.classes[2].arrival_rate`).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::PartitionPlan;
use crate::engine::{
    CascadePolicy, HoldLaw, Scenario, SessionKind, TrafficClass, DEFAULT_BATCHES,
    DEFAULT_WARMUP_FRACTION,
};
use crate::popularity::{ZipfParams, ZipfPopularity};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("invalid value at `{field}`: {message}")]
    Invariant { field: String, message: String },
    #[error("unknown preset `{0}` (expected one of fig2, fig3, fig4, fig5, fig6, fig7)")]
    UnknownPreset(String),
}

impl ConfigError {
    /// Path of the offending field, when the error concerns one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Schema { field, .. } | ConfigError::Invariant { field, .. } => Some(field),
            _ => None,
        }
    }

    fn invariant(field: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError::Invariant {
            field: field.into(),
            message: message.to_string(),
        }
    }

    fn schema(field: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError::Schema {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

pub const DEFAULT_REPLICATIONS: usize = 30;
pub const DEFAULT_HORIZON: f64 = 400.0;

/// Partition capacities, either listed or as `count` partitions of `ports`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartitionsSpec {
    List(Vec<u32>),
    Uniform { count: usize, ports: u32 },
}

impl PartitionsSpec {
    pub fn capacities(&self) -> Vec<u32> {
        match self {
            PartitionsSpec::List(c) => c.clone(),
            PartitionsSpec::Uniform { count, ports } => vec![*ports; *count],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    /// Optional; when given it must equal the class's 1-based position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<usize>,
    pub arrival_rate: f64,
    #[serde(default = "default_session")]
    pub session: SessionKind,
    /// Defaults to uniform on `(0, 120]` for steady and `(0, 80]` for
    /// interactive sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold: Option<HoldLaw>,
}

fn default_session() -> SessionKind {
    SessionKind::Steady
}

impl ClassSpec {
    fn hold_law(&self) -> HoldLaw {
        self.hold.unwrap_or_else(|| self.session.default_hold())
    }
}

/// Traffic classes, either listed (one per partition) or one template
/// repeated for every partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassesSpec {
    List(Vec<ClassSpec>),
    Repeat { repeat: ClassSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub partitions: PartitionsSpec,
    pub classes: ClassesSpec,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cascade: CascadePolicy,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity: Option<ZipfParams>,
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}

fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRACTION
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

/// Quantity varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Every class gets arrival rate `x` (requests/s).
    PerClassRate,
    /// Total arrival rate `x` (requests/s) split evenly over the classes.
    AggregateRate,
    /// Total offered load `x` (Erlangs) split evenly over the classes.
    OfferedLoad,
    /// Every class offers `x` Erlangs to its home partition.
    PerPartitionLoad,
}

impl SweepParameter {
    pub fn units(self) -> &'static str {
        match self {
            SweepParameter::PerClassRate | SweepParameter::AggregateRate => "requests/s",
            SweepParameter::OfferedLoad | SweepParameter::PerPartitionLoad => "Erlangs",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepParameter::PerClassRate => "per-class arrival rate",
            SweepParameter::AggregateRate => "aggregate arrival rate",
            SweepParameter::OfferedLoad => "aggregate offered load (traffic intensity)",
            SweepParameter::PerPartitionLoad => "offered load per partition",
        }
    }

    /// Set the class rates of `scenario` for sweep value `x`.
    pub fn apply(self, scenario: &mut Scenario, x: f64) {
        let k = scenario.classes.len() as f64;
        for class in scenario.classes.iter_mut() {
            let mean = class.hold.mean();
            class.arrival_rate = match self {
                SweepParameter::PerClassRate => x,
                SweepParameter::AggregateRate => x / k,
                SweepParameter::OfferedLoad => x / k / mean,
                SweepParameter::PerPartitionLoad => x / mean,
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Sweep {
    /// `start, start + step, ...` up to and including `stop` (with a small
    /// tolerance for accumulated rounding in the bound).
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

/// An overlaid variant of the base scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<PartitionsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadePolicy>,
}

/// What the plot data reports on its y axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Overall blocking probability, denied / offered.
    #[default]
    Blocking,
    /// Time-weighted mean number of free ports.
    MeanFreePorts,
    /// Aggregate offered load in Erlangs; computed, not simulated.
    TrafficIntensity,
}

impl Metric {
    pub fn units(self) -> &'static str {
        match self {
            Metric::Blocking => "probability",
            Metric::MeanFreePorts => "ports",
            Metric::TrafficIntensity => "Erlangs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub scenario: ScenarioSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<SeriesSpec>,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Free-form assumptions copied into result metadata.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub warmup_fraction: Option<f64>,
}

/// Read and validate a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Parse and validate config text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let field = match err.path().to_string() {
            p if p == "." => "(document)".to_string(),
            p => p,
        };
        ConfigError::schema(field, err.into_inner())
    })?;
    config.validate()?;
    Ok(config)
}

pub const PRESET_NAMES: [&str; 6] = ["fig2", "fig3", "fig4", "fig5", "fig6", "fig7"];

/// The shipped figure presets, embedded from `presets/*.json`.
pub fn preset_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig2" => include_str!("../presets/fig2.json"),
        "fig3" => include_str!("../presets/fig3.json"),
        "fig4" => include_str!("../presets/fig4.json"),
        "fig5" => include_str!("../presets/fig5.json"),
        "fig6" => include_str!("../presets/fig6.json"),
        "fig7" => include_str!("../presets/fig7.json"),
        _ => return None,
    })
}

pub fn preset_config(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let text = preset_source(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    parse_config(text)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(ConfigError::invariant("name", "must not be empty"));
        }
        if self.replications == 0 {
            return Err(ConfigError::invariant("replications", "must be at least 1"));
        }
        if let Some(sweep) = &self.sweep {
            for (field, v) in [
                ("start", sweep.start),
                ("stop", sweep.stop),
                ("step", sweep.step),
            ] {
                if !v.is_finite() {
                    return Err(ConfigError::invariant(
                        format!("sweep.{field}"),
                        "must be finite",
                    ));
                }
            }
            if sweep.step <= 0.0 {
                return Err(ConfigError::invariant("sweep.step", "must be positive"));
            }
            if sweep.start > sweep.stop {
                return Err(ConfigError::invariant(
                    "sweep.start",
                    "must not exceed sweep.stop",
                ));
            }
            if sweep.start < 0.0 {
                return Err(ConfigError::invariant("sweep.start", "must be nonnegative"));
            }
        }
        let mut labels = std::collections::HashSet::new();
        for (i, series) in self.series.iter().enumerate() {
            let label_ok = !series.label.is_empty()
                && series
                    .label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !label_ok {
                return Err(ConfigError::invariant(
                    format!("series[{i}].label"),
                    "must be a nonempty identifier of letters, digits, '-' or '_'",
                ));
            }
            if !labels.insert(series.label.as_str()) {
                return Err(ConfigError::invariant(
                    format!("series[{i}].label"),
                    "duplicate label",
                ));
            }
        }
        self.build_scenario(None)?;
        for i in 0..self.series.len() {
            self.build_scenario(Some(i))?;
        }
        Ok(())
    }

    /// Series labels in output order; a config without series has one
    /// implicit series called `main`.
    pub fn series_labels(&self) -> Vec<String> {
        if self.series.is_empty() {
            vec!["main".to_string()]
        } else {
            self.series.iter().map(|s| s.label.clone()).collect()
        }
    }

    pub fn apply_overrides(&mut self, overrides: &Overrides) -> Result<(), ConfigError> {
        if let Some(seed) = overrides.seed {
            self.scenario.seed = seed;
        }
        if let Some(r) = overrides.replications {
            self.replications = r;
        }
        if let Some(w) = overrides.warmup_fraction {
            self.scenario.warmup_fraction = w;
        }
        self.validate()
    }

    /// Build the base scenario, or the variant for series `series`.
    pub fn build_scenario(&self, series: Option<usize>) -> Result<Scenario, ConfigError> {
        let spec = &self.scenario;
        let variant = series.map(|i| (i, &self.series[i]));

        let (partitions_field, partitions) =
            match variant.and_then(|(i, s)| s.partitions.as_ref().map(|p| (i, p))) {
                Some((i, p)) => (format!("series[{i}].partitions"), p),
                None => ("scenario.partitions".to_string(), &spec.partitions),
            };
        let plan = PartitionPlan::new(partitions.capacities())
            .map_err(|e| ConfigError::invariant(partitions_field.clone(), e))?;
        let k = plan.partition_count();

        let class_specs: Vec<ClassSpec> = match &spec.classes {
            ClassesSpec::List(list) => {
                if list.len() != k {
                    return Err(ConfigError::schema(
                        "scenario.classes",
                        format!(
                            "expected one class per partition ({k} from {partitions_field}), found {}",
                            list.len()
                        ),
                    ));
                }
                list.clone()
            }
            ClassesSpec::Repeat { repeat } => vec![repeat.clone(); k],
        };

        let mut classes = Vec::with_capacity(k);
        for (i, cs) in class_specs.iter().enumerate() {
            let field = match &spec.classes {
                ClassesSpec::List(_) => format!("scenario.classes[{i}]"),
                ClassesSpec::Repeat { .. } => "scenario.classes.repeat".to_string(),
            };
            if let Some(id) = cs.class_id {
                if id != i + 1 && matches!(spec.classes, ClassesSpec::List(_)) {
                    return Err(ConfigError::invariant(
                        format!("{field}.class_id"),
                        format!("class at position {} must have class_id {}", i + 1, i + 1),
                    ));
                }
            }
            if !cs.arrival_rate.is_finite() || cs.arrival_rate < 0.0 {
                return Err(ConfigError::invariant(
                    format!("{field}.arrival_rate"),
                    "must be finite and nonnegative",
                ));
            }
            let class = TrafficClass::new(i + 1, cs.arrival_rate, cs.session, cs.hold_law())
                .map_err(|e| ConfigError::invariant(format!("{field}.hold"), e))?;
            classes.push(class);
        }

        if !spec.horizon.is_finite() || spec.horizon <= 0.0 {
            return Err(ConfigError::invariant(
                "scenario.horizon",
                "must be finite and positive",
            ));
        }
        if !(0.0..1.0).contains(&spec.warmup_fraction) {
            return Err(ConfigError::invariant(
                "scenario.warmup_fraction",
                "must lie in [0, 1)",
            ));
        }
        if let Some(dt) = spec.sample_interval {
            if !dt.is_finite() || dt <= 0.0 {
                return Err(ConfigError::invariant(
                    "scenario.sample_interval",
                    "must be finite and positive",
                ));
            }
        }
        if spec.batches == 0 {
            return Err(ConfigError::invariant(
                "scenario.batches",
                "must be at least 1",
            ));
        }
        let popularity = spec
            .popularity
            .map(ZipfPopularity::from_params)
            .transpose()
            .map_err(|e| ConfigError::invariant("scenario.popularity", e))?;

        let cascade = variant.and_then(|(_, s)| s.cascade).unwrap_or(spec.cascade);
        let scenario = Scenario {
            id: self.name.clone(),
            plan,
            classes,
            horizon: spec.horizon,
            seed: spec.seed,
            popularity,
            cascade,
            warmup_fraction: spec.warmup_fraction,
            sample_interval: spec.sample_interval,
            batches: spec.batches,
        };
        scenario
            .validate()
            .map_err(|e| ConfigError::invariant("scenario", e))?;
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "minimal",
        "scenario": {
            "partitions": [2, 2],
            "classes": [
                {"arrival_rate": 0.1},
                {"arrival_rate": 0.2, "session": "interactive"}
            ]
        }
    }"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = parse_config(MINIMAL).unwrap();
        let s = cfg.build_scenario(None).unwrap();
        assert_eq!(s.plan.capacities(), &[2, 2]);
        assert_eq!(s.classes.len(), 2);
        assert_eq!(s.classes[1].hold, HoldLaw::Uniform { max: 80.0 });
        assert_eq!(s.horizon, 400.0);
        assert_eq!(s.warmup_fraction, 0.1);
        assert_eq!(cfg.replications, 30);
        assert_eq!(cfg.series_labels(), vec!["main"]);
    }

    #[test]
    fn class_count_mismatch_names_classes() {
        let text = MINIMAL.replace(r#"{"arrival_rate": 0.1},"#, "");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Schema { .. }), "{err}");
        assert!(err.field().unwrap().contains("classes"));
    }

    #[test]
    fn type_errors_name_the_field() {
        let text = MINIMAL.replace(r#""arrival_rate": 0.2"#, r#""arrival_rate": "fast""#);
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Schema { .. }));
        assert!(err.to_string().contains("classes"), "{err}");

        let text = MINIMAL.replace(r#""name": "minimal","#, r#""name": "minimal", "bogus": 1,"#);
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invariant_errors_name_the_field() {
        let cases = [
            (
                r#""arrival_rate": 0.2"#,
                r#""arrival_rate": -0.2"#,
                "scenario.classes[1].arrival_rate",
            ),
            (
                r#""partitions": [2, 2]"#,
                r#""partitions": [2, 0]"#,
                "scenario.partitions",
            ),
        ];
        for (from, to, field) in cases {
            let err = parse_config(&MINIMAL.replace(from, to)).unwrap_err();
            assert!(matches!(err, ConfigError::Invariant { .. }), "{err}");
            assert_eq!(err.field(), Some(field));
        }
        let with_sweep = MINIMAL.replace(
            r#""name": "minimal","#,
            r#""name": "minimal", "sweep": {"parameter": "per_class_rate", "start": 2, "stop": 1, "step": 0.5},"#,
        );
        assert_eq!(
            parse_config(&with_sweep).unwrap_err().field(),
            Some("sweep.start")
        );
        let zero_reps = MINIMAL.replace(
            r#""name": "minimal","#,
            r#""name": "minimal", "replications": 0,"#,
        );
        assert_eq!(
            parse_config(&zero_reps).unwrap_err().field(),
            Some("replications")
        );
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_config("/definitely/not/here.json").unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));
    }

    #[test]
    fn sweep_values_include_stop() {
        let sweep = Sweep {
            parameter: SweepParameter::PerClassRate,
            start: 1.0,
            stop: 5.0,
            step: 0.5,
        };
        assert_eq!(
            sweep.values(),
            vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]
        );
        let tenths = Sweep {
            parameter: SweepParameter::PerClassRate,
            start: 0.1,
            stop: 0.3,
            step: 0.1,
        };
        assert_eq!(tenths.values().len(), 3);
    }

    #[test]
    fn sweep_parameters_set_rates() {
        let cfg = parse_config(MINIMAL).unwrap();
        let mut s = cfg.build_scenario(None).unwrap();
        SweepParameter::AggregateRate.apply(&mut s, 3.0);
        assert_eq!(s.classes[0].arrival_rate, 1.5);
        SweepParameter::PerPartitionLoad.apply(&mut s, 12.0);
        assert_eq!(s.classes[0].arrival_rate, 12.0 / 60.0);
        assert_eq!(s.classes[1].arrival_rate, 12.0 / 40.0);
        SweepParameter::OfferedLoad.apply(&mut s, 24.0);
        assert!((s.class_loads().iter().sum::<f64>() - 24.0).abs() < 1e-12);
    }

    #[test]
    fn all_presets_load() {
        for name in PRESET_NAMES {
            let cfg = preset_config(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
        }
        assert!(matches!(
            preset_config("fig9"),
            Err(ConfigError::UnknownPreset(_))
        ));
    }
}
