//! Executes scenarios against the simulator and turns the results into
//! artifacts: single runs, and parallel sweeps over a parameter grid.

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use attestnet_core::simnet::World;
use rayon::prelude::*;

use crate::artifacts;
use crate::metrics::{self, MetricsReport, METRIC_NAMES};
use crate::scenario::{resolve_attacks, Attack, Bound, ResolvedAttacks, Scenario, ScenarioError};

#[derive(Clone, Debug)]
pub struct AssertOutcome {
    pub bound: Bound,
    pub value: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub metrics: MetricsReport,
    pub asserts: Vec<AssertOutcome>,
    pub pass: bool,
    pub wall_ms: u128,
}

/// Rejects bounds that name no known metric before any time is spent.
pub fn validate_bounds(sc: &Scenario) -> Result<(), ScenarioError> {
    for b in &sc.asserts {
        if !METRIC_NAMES.contains(&b.metric.as_str()) {
            return Err(ScenarioError(format!(
                "assert: unknown metric {:?}",
                b.metric
            )));
        }
    }
    Ok(())
}

/// Builds the world, injects the fault timeline, runs to the horizon.
pub fn execute(sc: &Scenario) -> (World, ResolvedAttacks, u128) {
    let t0 = Instant::now();
    let mut world = World::build(sc.world_config(), sc.node_config(), sc.swarm.n);
    world.converged_start();
    let resolved = resolve_attacks(sc, &world);
    for (at, a) in &resolved.actions {
        world.schedule(*at, a.clone());
    }
    world.run_until((sc.run.duration_s * 1e6) as u64);
    (world, resolved, t0.elapsed().as_millis())
}

pub fn evaluate(sc: &Scenario, world: &World, resolved: &ResolvedAttacks, wall_ms: u128) -> RunOutcome {
    let m = metrics::compute(world, resolved);
    let asserts: Vec<AssertOutcome> = sc
        .asserts
        .iter()
        .map(|b| {
            let value = m.value(&b.metric).unwrap_or(f64::NAN);
            AssertOutcome {
                bound: b.clone(),
                value,
                pass: m.value(&b.metric).is_some_and(|v| b.holds(v)),
            }
        })
        .collect();
    let pass = asserts.iter().all(|a| a.pass);
    RunOutcome {
        metrics: m,
        asserts,
        pass,
        wall_ms,
    }
}

pub fn run(sc: &Scenario) -> Result<RunOutcome, ScenarioError> {
    validate_bounds(sc)?;
    let (world, resolved, wall_ms) = execute(sc);
    Ok(evaluate(sc, &world, &resolved, wall_ms))
}

pub fn summary_value(sc: &Scenario, out: &RunOutcome) -> serde_json::Value {
    let metrics: serde_json::Map<String, serde_json::Value> = out
        .metrics
        .values()
        .into_iter()
        .map(|(k, v)| (k.to_string(), float_json(v)))
        .collect();
    let asserts: Vec<serde_json::Value> = out
        .asserts
        .iter()
        .map(|a| {
            serde_json::json!({
                "metric": a.bound.metric,
                "min": a.bound.min,
                "max": a.bound.max,
                "value": float_json(a.value),
                "pass": a.pass,
            })
        })
        .collect();
    serde_json::json!({
        "schema": artifacts::SUMMARY_SCHEMA,
        "name": sc.name,
        "seed": sc.seed,
        "digest": sc.config_digest(),
        "n": sc.swarm.n,
        "o": sc.swarm.overlays,
        "wall_ms": out.wall_ms as u64,
        "proofs_histogram": out
            .metrics
            .proofs_histogram
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::json!(v)))
            .collect::<serde_json::Map<_, _>>(),
        "metrics": metrics,
        "asserts": asserts,
        "pass": out.pass,
    })
}

/// JSON has no inf/nan; those render as strings.
fn float_json(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::json!(format!("{v}"))
    }
}

/// Runs a scenario and writes every enabled artifact under `dir`.
pub fn run_to_dir(sc: &Scenario, dir: &Path) -> Result<RunOutcome> {
    validate_bounds(sc).map_err(anyhow::Error::from)?;
    let (world, resolved, wall_ms) = execute(sc);
    let out = evaluate(sc, &world, &resolved, wall_ms);
    std::fs::create_dir_all(dir)?;
    artifacts::write_metrics_csv(
        &dir.join("metrics.csv"),
        &[(sc.clone(), out.metrics.clone())],
    )?;
    artifacts::write_json(&dir.join("summary.json"), &summary_value(sc, &out))?;
    if sc.run.keep_trace {
        artifacts::write_trace_jsonl(&dir.join("trace.jsonl"), &world)?;
    }
    if sc.run.snapshot {
        artifacts::write_json(&dir.join("snapshot.json"), &artifacts::snapshot_value(&world))?;
    }
    Ok(out)
}

// -- sweeps ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<f64>,
}

/// Parses one `--grid key=v1,v2,…` argument.
pub fn parse_axis(arg: &str) -> Result<GridAxis, ScenarioError> {
    let (key, rest) = arg
        .split_once('=')
        .ok_or_else(|| ScenarioError(format!("grid {arg:?}: expected key=v1,v2,…")))?;
    if !GRID_KEYS.contains(&key) {
        return Err(ScenarioError(format!(
            "grid key {key:?}: known keys are {GRID_KEYS:?}"
        )));
    }
    let values = rest
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| ScenarioError(format!("grid {key}: bad value {v:?}")))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if values.is_empty() {
        return Err(ScenarioError(format!("grid {key}: no values")));
    }
    Ok(GridAxis {
        key: key.to_string(),
        values,
    })
}

pub const GRID_KEYS: [&str; 5] = ["n", "o", "seed", "probability", "fraction"];

fn apply_override(sc: &mut Scenario, key: &str, v: f64) {
    match key {
        "n" => sc.swarm.n = v as usize,
        "o" => sc.swarm.overlays = v as usize,
        "seed" => sc.seed = v as u64,
        "probability" => sc.attest.probability = v,
        "fraction" => {
            for a in &mut sc.attack {
                if let Attack::WipeCycle { fraction, .. } = a {
                    *fraction = v;
                }
            }
        }
        _ => unreachable!("parse_axis vets keys"),
    }
}

#[derive(Debug)]
pub struct SweepPoint {
    pub scenario: Scenario,
    pub result: Result<RunOutcome, String>,
}

/// Cartesian product of the axes, one simulation per point, in parallel.
/// Point failures are recorded and do not stop the sweep. No axes means
/// no points: an empty sweep yields a header-only CSV, not a template run.
pub fn sweep(template: &Scenario, grid: &[GridAxis]) -> Vec<SweepPoint> {
    if grid.is_empty() {
        return Vec::new();
    }
    let mut points: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for axis in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), *v));
                    q
                })
            })
            .collect();
    }
    points
        .into_par_iter()
        .map(|overrides| {
            let mut sc = template.clone();
            for (k, v) in &overrides {
                apply_override(&mut sc, k, *v);
            }
            let result = run(&sc).map_err(|e| e.to_string());
            SweepPoint {
                scenario: sc,
                result,
            }
        })
        .collect()
}

/// Writes the aggregated sweep CSV plus a per-point status summary.
pub fn sweep_to_dir(template: &Scenario, grid: &[GridAxis], dir: &Path) -> Result<Vec<SweepPoint>> {
    let points = sweep(template, grid);
    std::fs::create_dir_all(dir)?;
    let rows: Vec<_> = points
        .iter()
        .filter_map(|p| {
            p.result
                .as_ref()
                .ok()
                .map(|o| (p.scenario.clone(), o.metrics.clone()))
        })
        .collect();
    artifacts::write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    let statuses: Vec<serde_json::Value> = points
        .iter()
        .map(|p| match &p.result {
            Ok(o) => serde_json::json!({
                "digest": p.scenario.config_digest(),
                "n": p.scenario.swarm.n,
                "o": p.scenario.swarm.overlays,
                "seed": p.scenario.seed,
                "ok": true,
                "pass": o.pass,
            }),
            Err(e) => serde_json::json!({
                "digest": p.scenario.config_digest(),
                "n": p.scenario.swarm.n,
                "o": p.scenario.swarm.overlays,
                "seed": p.scenario.seed,
                "ok": false,
                "error": e,
            }),
        })
        .collect();
    artifacts::write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "schema": artifacts::SUMMARY_SCHEMA,
            "name": template.name,
            "points": statuses,
        }),
    )?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, seconds: f64) -> Scenario {
        Scenario::from_toml(&format!(
            r#"
            schema = "attestnet-scenario/1"
            name = "tiny"
            seed = 5
            [swarm]
            n = {n}
            overlays = 2
            [attest]
            enabled = true
            probability = 0.5
            tick_ms = 500
            [run]
            duration_s = {seconds}
            "#
        ))
        .unwrap()
    }

    #[test]
    fn identical_runs_produce_identical_metrics() {
        let sc = tiny(6, 4.0);
        let a = run(&sc).unwrap();
        let b = run(&sc).unwrap();
        assert_eq!(a.metrics.values(), b.metrics.values());
        assert!(a.metrics.latency.sessions > 0);
        assert_eq!(a.metrics.memory.mismatches, 0);
    }

    #[test]
    fn unknown_assert_metric_is_rejected_before_running() {
        let mut sc = tiny(4, 1.0);
        sc.asserts.push(Bound {
            metric: "nonsense".into(),
            min: Some(0.0),
            max: None,
        });
        assert!(run(&sc).is_err());
    }

    #[test]
    fn bounds_decide_the_outcome() {
        let mut sc = tiny(4, 1.0);
        sc.asserts.push(Bound {
            metric: "members_running".into(),
            min: Some(4.0),
            max: Some(4.0),
        });
        let out = run(&sc).unwrap();
        assert!(out.pass);
        sc.asserts[0].min = Some(5.0);
        assert!(!run(&sc).unwrap().pass);
    }

    #[test]
    fn grid_parsing_rejects_junk() {
        assert!(parse_axis("n=64,256").is_ok());
        assert!(parse_axis("bogus=1").is_err());
        assert!(parse_axis("n=sixty").is_err());
        assert!(parse_axis("n").is_err());
    }

    #[test]
    fn empty_grid_yields_no_points() {
        let sc = tiny(4, 0.5);
        assert!(sweep(&sc, &[]).is_empty());
    }

    #[test]
    fn sweep_covers_the_product_in_order() {
        let sc = tiny(4, 0.0);
        let grid = vec![
            parse_axis("n=4,6").unwrap(),
            parse_axis("o=1,2").unwrap(),
        ];
        let pts = sweep(&sc, &grid);
        let shape: Vec<(usize, usize)> = pts
            .iter()
            .map(|p| (p.scenario.swarm.n, p.scenario.swarm.overlays))
            .collect();
        assert_eq!(shape, vec![(4, 1), (4, 2), (6, 1), (6, 2)]);
    }
}
