//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 3 4`.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{erlang_b_oracle, relative_error};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rayon::prelude::*;
use vod_cac::analytic::{cascade_block_probability, erlang_b, routed_availability, PartitionPlan};
use vod_cac::config::{preset_config, ScenarioConfig};
use vod_cac::engine::{
    run, CascadePolicy, HoldLaw, Scenario, SessionKind, Simulation, TrafficClass,
};
use vod_cac::experiment::{run_experiment, ExperimentResult, SweepPoint};
use vod_cac::metrics::{replication_interval, Interval, MetricsReport};
use vod_cac::popularity::ZipfPopularity;

type Check = fn() -> Result<String, String>;

struct Criterion {
    number: u32,
    name: &'static str,
    limit: Option<Duration>,
    check: Check,
}

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria = [
        Criterion {
            number: 1,
            name: "Erlang-B exactness",
            limit: Some(Duration::from_secs(1)),
            check: erlang_b_exactness,
        },
        Criterion {
            number: 2,
            name: "Zipf normalization and complement identity",
            limit: Some(Duration::from_secs(5)),
            check: zipf_normalization,
        },
        Criterion {
            number: 3,
            name: "M/M/c/c oracle equivalence",
            limit: Some(Duration::from_secs(120)),
            check: mmcc_equivalence,
        },
        Criterion {
            number: 4,
            name: "hold-law insensitivity",
            limit: Some(Duration::from_secs(120)),
            check: insensitivity,
        },
        Criterion {
            number: 5,
            name: "fig4 free ports approach zero",
            limit: Some(Duration::from_secs(300)),
            check: fig4_trend,
        },
        Criterion {
            number: 6,
            name: "fig5 blocking approaches one",
            limit: Some(Duration::from_secs(300)),
            check: fig5_trend,
        },
        Criterion {
            number: 7,
            name: "fig6 fewer ports block more",
            limit: Some(Duration::from_secs(300)),
            check: fig6_ordering,
        },
        Criterion {
            number: 8,
            name: "fig7 intensity linear in rate",
            limit: Some(Duration::from_secs(1)),
            check: fig7_linearity,
        },
        Criterion {
            number: 9,
            name: "cascade consistency",
            limit: None,
            check: cascade_consistency,
        },
        Criterion {
            number: 10,
            name: "engine invariant suite",
            limit: Some(Duration::from_secs(120)),
            check: engine_invariants,
        },
    ];

    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for c in criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.number))
    {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.check))
            .unwrap_or_else(|payload| Err(panic_message(payload.as_ref())));
        let elapsed = start.elapsed();
        let in_time = c.limit.is_none_or(|limit| elapsed <= limit);
        let (status, detail) = match (&result, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => (
                "FAIL",
                format!("{d}; exceeded {:?} limit", c.limit.unwrap()),
            ),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!(
            "criterion {:>2} {status} [{:.2}s] {}: {detail}",
            c.number,
            elapsed.as_secs_f64(),
            c.name
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn erlang_b_exactness() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for e in [0.1, 1.0, 5.0, 10.0, 50.0, 100.0] {
        for c in [1, 2, 5, 10, 50, 100, 200] {
            let got = erlang_b(e, c).map_err(|err| err.to_string())?;
            let want = erlang_b_oracle(e, c);
            let rel = relative_error(got, want);
            ensure(rel < 1e-12, || {
                format!("E={e} c={c}: {got:e} vs exact {want:e} (rel {rel:e})")
            })?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("42 grid points, worst relative error {worst:.2e}"))
}

fn zipf_normalization() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for (n, skew) in [
        (10u64, 0.5),
        (1000, 0.8),
        (100_000, 0.3),
        (1_000_000, 0.8),
        (1_000_000, 0.99),
    ] {
        let pop = ZipfPopularity::new(n, 1, skew).map_err(|e| e.to_string())?;
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for i in 1..=n {
            let v = pop.pmf(i);
            let t = s + v;
            let bp = t - s;
            comp += (s - (t - bp)) + (v - bp);
            s = t;
        }
        let err = (s + comp - 1.0).abs();
        ensure(err < 1e-12, || {
            format!("N={n} α={skew}: pmf sums to 1 {err:+e}")
        })?;
        worst = worst.max(err);
    }
    let mut identities = 0;
    for n in [1u64, 7, 100, 1000, 54_321] {
        for m in [1, n / 3 + 1, n / 2 + 1, n] {
            for skew in [0.01, 0.25, 0.5, 0.8, 0.99] {
                let pop = ZipfPopularity::new(n, m.min(n), skew).map_err(|e| e.to_string())?;
                let total = pop.unpopular_request_probability() + pop.cumulative_approx();
                ensure(total == 1.0, || {
                    format!("N={n} M={m} α={skew}: identity gives {total:e}")
                })?;
                identities += 1;
            }
        }
    }
    Ok(format!(
        "max normalization error {worst:.1e} up to N=1e6; identity exact in {identities} cases"
    ))
}

fn mmcc_scenario(hold: HoldLaw, horizon: f64, seed: u64) -> Scenario {
    let plan = PartitionPlan::uniform(1, 10).expect("plan");
    let class = TrafficClass::new(1, 5.0 / hold.mean(), SessionKind::Steady, hold).expect("class");
    Scenario::new(plan, vec![class], horizon, seed).expect("scenario")
}

fn mmcc_equivalence() -> Result<String, String> {
    let want = erlang_b(5.0, 10).map_err(|e| e.to_string())?;
    let reports: Vec<MetricsReport> = (0..30u64)
        .into_par_iter()
        .map(|seed| {
            run(&mmcc_scenario(
                HoldLaw::Exponential { mean: 120.0 },
                3e7,
                1000 + seed,
            ))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let min_offered = reports.iter().map(|r| r.overall.offered).min().unwrap_or(0);
    ensure(min_offered >= 1_000_000, || {
        format!("a run offered only {min_offered} arrivals")
    })?;

    let offered: u64 = reports.iter().map(|r| r.overall.offered).sum();
    let denied: u64 = reports.iter().map(|r| r.overall.denied).sum();
    let pooled = denied as f64 / offered as f64;
    let rel = relative_error(pooled, want);
    let covered = reports
        .iter()
        .filter(|r| {
            r.overall
                .blocking_batch_means
                .is_some_and(|i| i.contains(want))
        })
        .count();
    let wilson = reports
        .iter()
        .filter(|r| r.overall.blocking.is_some_and(|i| i.contains(want)))
        .count();
    let worst_run = reports
        .iter()
        .map(|r| relative_error(r.overall.blocking.map_or(f64::NAN, |b| b.estimate), want))
        .fold(0.0, f64::max);
    let detail = format!(
        "pooled {pooled:.6} vs erlang_b {want:.6} (rel {:.3}%), CI covers in {covered}/30 runs \
         (Wilson alone {wilson}/30), worst single run {:.2}%, min arrivals/run {min_offered}",
        rel * 100.0,
        worst_run * 100.0
    );
    ensure(rel < 0.02, || format!("relative error too large: {detail}"))?;
    ensure(covered >= 27, || format!("coverage too low: {detail}"))?;
    Ok(detail)
}

fn replicated_blocking(hold: HoldLaw, seed_base: u64) -> Result<Interval, String> {
    let values: Vec<f64> = (0..30u64)
        .into_par_iter()
        .map(|s| {
            run(&mmcc_scenario(hold, 1e7, seed_base + s))
                .map(|r| r.overall.blocking.map_or(0.0, |b| b.estimate))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    replication_interval(&values).ok_or_else(|| "no replications".to_string())
}

fn insensitivity() -> Result<String, String> {
    let uniform = replicated_blocking(HoldLaw::Uniform { max: 240.0 }, 2000)?;
    let expo = replicated_blocking(HoldLaw::Exponential { mean: 120.0 }, 3000)?;
    let diff = (uniform.estimate - expo.estimate).abs();
    let allowed = uniform.half_width() + expo.half_width();
    let detail = format!(
        "uniform(0,240] {:.6} ± {:.6}, exponential(120) {:.6} ± {:.6}, |diff| {diff:.6} < {allowed:.6}",
        uniform.estimate,
        uniform.half_width(),
        expo.estimate,
        expo.half_width()
    );
    ensure(diff < allowed, || format!("estimates differ: {detail}"))?;
    Ok(detail)
}

fn run_preset_in_memory(name: &str) -> Result<ExperimentResult, String> {
    let config: ScenarioConfig = preset_config(name).map_err(|e| e.to_string())?;
    run_experiment(&config).map_err(|e| e.to_string())
}

fn y(point: &SweepPoint) -> Result<Interval, String> {
    point
        .y
        .ok_or_else(|| format!("no estimate at x = {}", point.x))
}

fn fig4_trend() -> Result<String, String> {
    let result = run_preset_in_memory("fig4")?;
    let points = result.series("main");
    let capacity = result
        .config
        .build_scenario(None)
        .map_err(|e| e.to_string())?
        .plan
        .total_capacity() as f64;
    let mut worst_high = 0.0f64;
    for p in points.iter().filter(|p| p.x > 200.0) {
        let v = y(p)?.estimate;
        ensure(v < 0.01 * capacity, || {
            format!(
                "mean free ports {v} at {} req/s exceeds 1% of C = {capacity}",
                p.x
            )
        })?;
        worst_high = worst_high.max(v);
    }
    for w in points.windows(2) {
        let (a, b) = (y(w[0])?, y(w[1])?);
        ensure(
            b.estimate <= a.estimate + a.half_width() + b.half_width(),
            || {
                format!(
                    "free ports rise from {} at {} to {} at {}",
                    a.estimate, w[0].x, b.estimate, w[1].x
                )
            },
        )?;
    }
    Ok(format!(
        "{} points; free ports {:.1} at {} req/s down to max {worst_high:.4} (< {:.1}) above 200 req/s",
        points.len(),
        y(points[0])?.estimate,
        points[0].x,
        0.01 * capacity
    ))
}

fn fig5_trend() -> Result<String, String> {
    let result = run_preset_in_memory("fig5")?;
    let points = result.series("main");
    let mut lowest_high = 1.0f64;
    for p in points.iter().filter(|p| p.x > 600.0) {
        let v = y(p)?.estimate;
        ensure(v > 0.95, || {
            format!("blocking {v} at {} Erlangs is not above 0.95", p.x)
        })?;
        lowest_high = lowest_high.min(v);
    }
    ensure(points.iter().any(|p| p.x > 600.0), || {
        "sweep never exceeds 600 Erlangs".to_string()
    })?;
    for w in points.windows(2) {
        let (a, b) = (y(w[0])?, y(w[1])?);
        ensure(
            b.estimate >= a.estimate - a.half_width() - b.half_width(),
            || {
                format!(
                    "blocking falls from {} at {} to {} at {}",
                    a.estimate, w[0].x, b.estimate, w[1].x
                )
            },
        )?;
    }
    Ok(format!(
        "{} points; blocking {:.4} at {} Erlangs, min {lowest_high:.4} above 600 Erlangs",
        points.len(),
        y(points[0])?.estimate,
        points[0].x
    ))
}

fn fig6_ordering() -> Result<String, String> {
    let result = run_preset_in_memory("fig6")?;
    let wide = result.series("c10");
    let narrow = result.series("c8");
    ensure(wide.len() == narrow.len() && !wide.is_empty(), || {
        "series lengths differ".to_string()
    })?;
    let mut strict = 0;
    for (w, n) in wide.iter().zip(&narrow) {
        let (bw, bn) = (y(w)?, y(n)?);
        ensure(bn.estimate >= bw.estimate, || {
            format!(
                "at {} Erlangs c=8 blocks {} < c=10 {}",
                w.x, bn.estimate, bw.estimate
            )
        })?;
        if bw.estimate > 0.01 && bn.estimate > 0.01 {
            ensure(bn.ci_low > bw.ci_high, || {
                format!(
                    "at {} Erlangs intervals overlap: c=8 {bn:?}, c=10 {bw:?}",
                    w.x
                )
            })?;
            strict += 1;
        }
    }
    Ok(format!(
        "{} common points, c=8 >= c=10 everywhere, separated intervals at all {strict} points above 0.01",
        wide.len()
    ))
}

fn fig7_linearity() -> Result<String, String> {
    let result = run_preset_in_memory("fig7")?;
    let points = result.series("main");
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| Ok((p.x, y(p)?.estimate)))
        .collect::<Result<_, String>>()?;
    let slope =
        xy.iter().map(|(x, y)| x * y).sum::<f64>() / xy.iter().map(|(x, _)| x * x).sum::<f64>();
    let worst = xy
        .iter()
        .map(|(x, y)| (y - slope * x).abs())
        .fold(0.0, f64::max);
    ensure(worst < 1e-9, || {
        format!("residual {worst:e} from line through origin (slope {slope})")
    })?;
    Ok(format!(
        "{} points, slope {slope} Erlangs per req/s, max residual {worst:.1e}",
        xy.len()
    ))
}

fn cascade_consistency() -> Result<String, String> {
    let plan = PartitionPlan::new(vec![1, 3, 10, 25, 200]).map_err(|e| e.to_string())?;
    let mut checks = 0;
    for loads in [
        [0.0, 0.5, 5.0, 20.0, 150.0],
        [3.0, 3.0, 3.0, 3.0, 3.0],
        [0.1, 100.0, 7.5, 0.0, 199.0],
    ] {
        for j in 1..=5 {
            let single =
                cascade_block_probability(&loads, &plan, j, j + 1).map_err(|e| e.to_string())?;
            let direct =
                erlang_b(loads[j - 1], plan.capacities()[j - 1]).map_err(|e| e.to_string())?;
            ensure(single.to_bits() == direct.to_bits(), || {
                format!("partition {j}: cascade {single:e} vs erlang_b {direct:e}")
            })?;
            checks += 1;
        }
        for j in 1..=6 {
            let empty =
                cascade_block_probability(&loads, &plan, j, j).map_err(|e| e.to_string())?;
            ensure(empty == 1.0, || format!("empty range at {j} gives {empty}"))?;
            checks += 1;
        }
    }
    for k in [1usize, 2, 3, 7, 20, 25] {
        for c in [1u32, 2, 8, 10, 33] {
            for q in 0..=c {
                let general = routed_availability(1, k, c, q).map_err(|e| e.to_string())?;
                let first = (1.0 / k as f64) * (f64::from(c - q) / f64::from(c));
                ensure((general - first).abs() <= 1e-15, || {
                    format!("k={k} c={c} q={q}: {general:e} vs {first:e}")
                })?;
                checks += 1;
            }
        }
    }
    Ok(format!("{checks} checks"))
}

fn small_scenario() -> impl Strategy<Value = Scenario> {
    (1usize..=4)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(1u32..=4, k),
                prop::collection::vec((0.0f64..1.0, 0u8..3, 0.2f64..20.0), k),
                1.0f64..60.0,
                any::<u64>(),
                any::<bool>(),
            )
        })
        .prop_map(|(caps, specs, horizon, seed, wrap)| {
            let plan = PartitionPlan::new(caps).expect("plan");
            let classes = specs
                .into_iter()
                .enumerate()
                .map(|(i, (rate, law, p))| {
                    let hold = match law {
                        0 => HoldLaw::Uniform { max: p },
                        1 => HoldLaw::Exponential { mean: p },
                        _ => HoldLaw::Fixed { duration: p },
                    };
                    TrafficClass::new(i + 1, rate, SessionKind::Steady, hold).expect("class")
                })
                .collect();
            let mut s = Scenario::new(plan, classes, horizon, seed).expect("scenario");
            if wrap {
                s.cascade = CascadePolicy::ForwardWrap;
            }
            s
        })
}

fn check_engine(scenario: &Scenario) -> Result<u64, TestCaseError> {
    let plan = &scenario.plan;
    let mut sim = Simulation::new(scenario).with_trace();
    let mut events = 0u64;
    while sim
        .step()
        .map_err(|e| TestCaseError::fail(e.to_string()))?
        .is_some()
    {
        events += 1;
        sim.state()
            .check_invariants(plan)
            .map_err(TestCaseError::fail)?;
    }
    sim.run_to_horizon()
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let report = MetricsReport::from_tallies(scenario, sim.tallies());
    prop_assert_eq!(
        report.overall.offered,
        report.overall.admitted + report.overall.denied
    );
    for c in &report.classes {
        prop_assert_eq!(c.offered, c.admitted + c.denied);
    }
    sim.drain()
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(
        sim.state().occupancy().is_empty(),
        "occupancy after drain: {:?}",
        sim.state().occupancy()
    );
    prop_assert!(sim.state().in_service().is_empty());

    let again = run(scenario).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(
        &again,
        &run(scenario).map_err(|e| TestCaseError::fail(e.to_string()))?
    );
    prop_assert_eq!(&again, &report);
    Ok(events)
}

fn engine_invariants() -> Result<String, String> {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let total = std::sync::atomic::AtomicU64::new(0);
    runner
        .run(&small_scenario(), |scenario| {
            let events = check_engine(&scenario)?;
            total.fetch_add(events, std::sync::atomic::Ordering::Relaxed);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "1000 randomized scenarios, {} events checked, zero violations",
        total.into_inner()
    ))
}
