//! Run artifacts: versioned CSV/JSON files consumed by scripts and CI.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use attestnet_core::node::TraceEvent;
use attestnet_core::simnet::World;

use crate::metrics::MetricsReport;
use crate::scenario::Scenario;

pub const METRICS_SCHEMA: &str = "attestnet-metrics/1";
pub const TRACE_SCHEMA: &str = "attestnet-trace/1";
pub const SNAPSHOT_SCHEMA: &str = "attestnet-snapshot/1";
pub const SUMMARY_SCHEMA: &str = "attestnet-summary/1";

/// Column names of metrics.csv, in writing order.
pub fn metrics_header(sample: &MetricsReport) -> Vec<String> {
    let mut h = vec![
        "schema".to_string(),
        "name".to_string(),
        "seed".to_string(),
        "digest".to_string(),
        "n".to_string(),
        "o".to_string(),
    ];
    h.extend(sample.values().iter().map(|(k, _)| k.to_string()));
    h
}

pub fn metrics_row(sc: &Scenario, m: &MetricsReport) -> Vec<String> {
    let mut row = vec![
        METRICS_SCHEMA.to_string(),
        sc.name.clone(),
        sc.seed.to_string(),
        sc.config_digest(),
        sc.swarm.n.to_string(),
        sc.swarm.overlays.to_string(),
    ];
    row.extend(m.values().iter().map(|(_, v)| format_value(*v)));
    row
}

/// Integral values print without a fraction so the CSV diffs cleanly.
fn format_value(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[(Scenario, MetricsReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("create {}", path.display()))?;
    match rows.first() {
        Some((_, m)) => w.write_record(metrics_header(m))?,
        None => {
            // Header-only file: derive the column set from an empty report
            // shape via a default-constructed sample.
            let placeholder = empty_report();
            w.write_record(metrics_header(&placeholder))?;
        }
    }
    for (sc, m) in rows {
        w.write_record(metrics_row(sc, m))?;
    }
    w.flush()?;
    Ok(())
}

fn empty_report() -> MetricsReport {
    use attestnet_core::node::NodeConfig;
    use attestnet_core::simnet::WorldConfig;
    let w = World::build(
        WorldConfig::default(),
        NodeConfig {
            o: 1,
            ..NodeConfig::default()
        },
        1,
    );
    crate::metrics::compute(&w, &crate::scenario::ResolvedAttacks::default())
}

pub fn write_trace_jsonl(path: &Path, world: &World) -> Result<()> {
    let f = File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "{}", serde_json::json!({ "schema": TRACE_SCHEMA }))?;
    for r in &world.trace {
        let (kind, detail) = split_event(&r.event);
        writeln!(
            w,
            "{}",
            serde_json::json!({
                "at_us": r.at_us,
                "device": r.device,
                "kind": kind,
                "detail": detail,
            })
        )?;
    }
    w.flush()?;
    Ok(())
}

fn split_event(e: &TraceEvent) -> (&'static str, String) {
    let kind = match e {
        TraceEvent::Status { .. } => "status",
        TraceEvent::Phase { .. } => "phase",
        TraceEvent::Alert { .. } => "alert",
        TraceEvent::AlertReceived { .. } => "alert-received",
        TraceEvent::Verdict(_) => "verdict",
        TraceEvent::ProofStored { .. } => "proof-stored",
        TraceEvent::RecoverySent { .. } => "recovery-sent",
        TraceEvent::ReplayRejected => "replay-rejected",
        TraceEvent::DecodeDrop => "decode-drop",
        TraceEvent::TtlDrop { .. } => "ttl-drop",
        TraceEvent::RouteStuck { .. } => "route-stuck",
        TraceEvent::JoinStuck { .. } => "join-stuck",
        TraceEvent::PartitionSuspected { .. } => "partition-suspected",
    };
    (kind, format!("{e:?}"))
}

pub fn snapshot_value(world: &World) -> serde_json::Value {
    let devices: Vec<serde_json::Value> = world
        .engines
        .iter()
        .map(|e| {
            let overlays: Vec<serde_json::Value> = e
                .overlays
                .iter()
                .map(|ov| {
                    serde_json::json!({
                        "oid": ov.record.ring.0,
                        "phase": format!("{:?}", ov.phase),
                        "pred": ov.routing.predecessor.as_ref().map(|p| p.ring.0),
                        "successors": ov
                            .routing
                            .successors()
                            .iter()
                            .map(|s| s.ring.0)
                            .collect::<Vec<_>>(),
                        "fingers": ov.routing.finger_count(),
                        "proof_keys": ov.proofs.keys().map(|k| k.0).collect::<Vec<_>>(),
                    })
                })
                .collect();
            let mem = e.memory();
            serde_json::json!({
                "device": e.device,
                "status": format!("{:?}", e.status),
                "uid_key": e.uid_key.0,
                "overlays": overlays,
                "memory_total": mem.total(),
            })
        })
        .collect();
    serde_json::json!({
        "schema": SNAPSHOT_SCHEMA,
        "now_us": world.now_us,
        "devices": devices,
    })
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let f = File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
