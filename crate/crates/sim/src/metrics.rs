//! Metric extraction from a finished world: recovery accounting, latency
//! distribution, placement and memory statistics, detection confusion.

use std::collections::BTreeMap;

use attestnet_core::attest::Verdict;
use attestnet_core::ring::RingId;
use attestnet_core::simnet::{Counters, World};

use crate::analysis::quantile;
use crate::scenario::ResolvedAttacks;

#[derive(Clone, Debug, Default)]
pub struct LatencyStats {
    pub sessions: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct DetectionStats {
    pub healthy: u64,
    pub prover_flagged: u64,
    pub hosts_flagged: u64,
    pub ties: u64,
    pub warnings: u64,
    /// Tampered devices that were accused at least once.
    pub flagged_true: usize,
    /// Honest devices accused at least once.
    pub flagged_false: usize,
    /// Tamper instant to first accusation, worst case over tampered
    /// devices; infinite when one was never flagged.
    pub latency_max_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MemoryStats {
    pub min: usize,
    pub mean: f64,
    pub max: usize,
    /// Devices whose byte-accounted storage differs from the formula.
    pub mismatches: usize,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub resilience_index: f64,
    pub proofs_lost: u64,
    pub proofs_recovered: u64,
    pub latency: LatencyStats,
    pub detection: DetectionStats,
    pub alerts: usize,
    /// Removal instant to first absence alert, worst case over removals
    /// and overlays; infinite when one overlay never alerted.
    pub alert_latency_max_s: f64,
    /// Stored proofs per device, total across overlays: count -> devices.
    pub proofs_histogram: BTreeMap<usize, usize>,
    pub max_proofs: usize,
    pub max_proofs_holders: usize,
    /// Upper tail normalized by replica count: max_proofs / o.
    pub tail_per_overlay: f64,
    /// Largest single-overlay finger table over all devices.
    pub max_finger_entries: usize,
    /// Largest whole-device finger total; bounded by o·m.
    pub max_finger_total: usize,
    pub memory: MemoryStats,
    pub members_running: usize,
    pub message_counts: Counters,
}

/// Storage formula: fixed credentials plus per-overlay state, with the
/// per-overlay counts read from the live structures.
pub fn memory_formula(s: usize, f: usize, p: usize) -> usize {
    168 + 68 * s + 68 * f + 128 * p
}

pub const MEMORY_BASE: usize = 1832;

pub fn compute(world: &World, ctx: &ResolvedAttacks) -> MetricsReport {
    let o = world.node_cfg.o;

    // Recovery accounting: every injected loss is matched to the first
    // later recovery of the same copy.
    let mut by_copy: BTreeMap<(u8, RingId), (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for (at, ov, uid) in &world.drop_log {
        by_copy.entry((*ov, *uid)).or_default().0.push(*at);
    }
    for (at, ov, uid) in &world.recovery_log {
        if let Some(e) = by_copy.get_mut(&(*ov, *uid)) {
            e.1.push(*at);
        }
    }
    let mut lost = 0u64;
    let mut recovered = 0u64;
    for (drops, recs) in by_copy.values() {
        let mut ri = 0usize;
        for d in drops {
            lost += 1;
            while ri < recs.len() && recs[ri] <= *d {
                ri += 1;
            }
            if ri < recs.len() {
                recovered += 1;
                ri += 1;
            }
        }
    }
    let resilience_index = if lost == 0 {
        1.0
    } else {
        recovered as f64 / lost as f64
    };

    // Latency over sessions that ran the full query round.
    let mut lat: Vec<f64> = Vec::new();
    let mut det = DetectionStats::default();
    let mut accused: BTreeMap<u32, u64> = BTreeMap::new();
    for (_, _, rec) in &world.verdicts {
        match rec.verdict {
            Verdict::Healthy => det.healthy += 1,
            Verdict::ProverCorrupted => det.prover_flagged += 1,
            Verdict::OverlayHostsCorrupted => det.hosts_flagged += 1,
            Verdict::NetworkCorrupted => det.ties += 1,
            Verdict::PossibleInfectionWarning => det.warnings += 1,
        }
        if rec.verdict != Verdict::PossibleInfectionWarning {
            lat.push((rec.decided_at_us - rec.engaged_at_us) as f64 / 1e6);
        }
        if rec.verdict == Verdict::ProverCorrupted {
            if let Some(dev) = world.device_of_uid.get(&rec.subject) {
                accused.entry(*dev).or_insert(rec.decided_at_us);
            }
        }
    }
    let latency = if lat.is_empty() {
        LatencyStats::default()
    } else {
        LatencyStats {
            sessions: lat.len(),
            mean_s: lat.iter().sum::<f64>() / lat.len() as f64,
            p50_s: quantile(&lat, 0.5),
            p95_s: quantile(&lat, 0.95),
            max_s: quantile(&lat, 1.0),
        }
    };

    det.flagged_true = accused.keys().filter(|d| ctx.tampered.contains(d)).count();
    det.flagged_false = accused.keys().filter(|d| !ctx.tampered.contains(d)).count();
    det.latency_max_s = ctx
        .tamper_times
        .iter()
        .map(|(at, dev)| match accused.get(dev) {
            Some(t) if t >= at => (t - at) as f64 / 1e6,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max);

    // Absence alerts, matched per removal and overlay by the victim's
    // per-overlay ring identity.
    let mut alert_latency_max_s = 0.0f64;
    for (at, dev) in &ctx.removals {
        for ov in 0..o {
            let victim = world.engines[*dev as usize].record(ov).ring;
            let hit = world
                .alerts
                .iter()
                .filter(|(t, _, aov, subject)| {
                    *aov as usize == ov && *subject == victim && t >= at
                })
                .map(|(t, _, _, _)| (*t - *at) as f64 / 1e6)
                .fold(f64::INFINITY, f64::min);
            alert_latency_max_s = alert_latency_max_s.max(hit);
        }
    }

    // Placement and storage statistics over the final state.
    let mut proofs_histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let mut max_finger_entries = 0usize;
    let mut max_finger_total = 0usize;
    let mut mem_min = usize::MAX;
    let mut mem_max = 0usize;
    let mut mem_sum = 0usize;
    let mut mismatches = 0usize;
    for e in &world.engines {
        let held: usize = e.overlays.iter().map(|ov| ov.proofs.len()).sum();
        *proofs_histogram.entry(held).or_insert(0) += 1;
        let total: usize = e.overlays.iter().map(|ov| ov.routing.finger_count()).sum();
        max_finger_total = max_finger_total.max(total);
        let report = e.memory();
        let mut formula = MEMORY_BASE;
        for ov in &e.overlays {
            max_finger_entries = max_finger_entries.max(ov.routing.finger_count());
            formula += memory_formula(
                ov.routing.successors().len(),
                ov.routing.finger_count(),
                ov.proofs.len(),
            );
        }
        let actual = report.total();
        if actual != formula {
            mismatches += 1;
        }
        mem_min = mem_min.min(actual);
        mem_max = mem_max.max(actual);
        mem_sum += actual;
    }
    let n = world.engines.len();
    let max_proofs = proofs_histogram.keys().next_back().copied().unwrap_or(0);
    let max_proofs_holders = proofs_histogram.get(&max_proofs).copied().unwrap_or(0);

    MetricsReport {
        resilience_index,
        proofs_lost: lost,
        proofs_recovered: recovered,
        latency,
        detection: det,
        alerts: world.alerts.len(),
        alert_latency_max_s,
        proofs_histogram,
        max_proofs,
        max_proofs_holders,
        tail_per_overlay: max_proofs as f64 / o as f64,
        max_finger_entries,
        max_finger_total,
        memory: MemoryStats {
            min: if n == 0 { 0 } else { mem_min },
            mean: if n == 0 { 0.0 } else { mem_sum as f64 / n as f64 },
            max: mem_max,
            mismatches,
        },
        members_running: world.running_devices().len(),
        message_counts: world.counters,
    }
}

/// Names of the flat metric namespace, in CSV column order.
pub const METRIC_NAMES: [&str; 41] = [
    "resilience_index",
    "proofs_lost",
    "proofs_recovered",
    "sessions",
    "latency_mean_s",
    "latency_p50_s",
    "latency_p95_s",
    "latency_max_s",
    "healthy",
    "prover_flagged",
    "hosts_flagged",
    "ties",
    "warnings",
    "flagged_true",
    "flagged_false",
    "detection_latency_max_s",
    "alerts",
    "alert_latency_max_s",
    "max_proofs",
    "max_proofs_holders",
    "tail_per_overlay",
    "max_finger_entries",
    "max_finger_total",
    "memory_min",
    "memory_mean",
    "memory_max",
    "memory_mismatches",
    "members_running",
    "frames_sent",
    "frames_delivered",
    "frames_lost",
    "frames_blocked",
    "bytes_sent",
    "decode_drops",
    "ttl_drops",
    "route_stuck",
    "replay_rejected",
    "join_stuck",
    "partition_suspected",
    "proofs_stored",
    "proofs_wiped",
];

impl MetricsReport {
    /// Flat named view: the CSV row, and the namespace scenario bounds
    /// refer to.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let c = &self.message_counts;
        vec![
            ("resilience_index", self.resilience_index),
            ("proofs_lost", self.proofs_lost as f64),
            ("proofs_recovered", self.proofs_recovered as f64),
            ("sessions", self.latency.sessions as f64),
            ("latency_mean_s", self.latency.mean_s),
            ("latency_p50_s", self.latency.p50_s),
            ("latency_p95_s", self.latency.p95_s),
            ("latency_max_s", self.latency.max_s),
            ("healthy", self.detection.healthy as f64),
            ("prover_flagged", self.detection.prover_flagged as f64),
            ("hosts_flagged", self.detection.hosts_flagged as f64),
            ("ties", self.detection.ties as f64),
            ("warnings", self.detection.warnings as f64),
            ("flagged_true", self.detection.flagged_true as f64),
            ("flagged_false", self.detection.flagged_false as f64),
            ("detection_latency_max_s", self.detection.latency_max_s),
            ("alerts", self.alerts as f64),
            ("alert_latency_max_s", self.alert_latency_max_s),
            ("max_proofs", self.max_proofs as f64),
            ("max_proofs_holders", self.max_proofs_holders as f64),
            ("tail_per_overlay", self.tail_per_overlay),
            ("max_finger_entries", self.max_finger_entries as f64),
            ("max_finger_total", self.max_finger_total as f64),
            ("memory_min", self.memory.min as f64),
            ("memory_mean", self.memory.mean),
            ("memory_max", self.memory.max as f64),
            ("memory_mismatches", self.memory.mismatches as f64),
            ("members_running", self.members_running as f64),
            ("frames_sent", c.frames_sent as f64),
            ("frames_delivered", c.frames_delivered as f64),
            ("frames_lost", c.frames_lost as f64),
            ("frames_blocked", c.frames_blocked as f64),
            ("bytes_sent", c.bytes_sent as f64),
            ("decode_drops", c.decode_drops as f64),
            ("ttl_drops", c.ttl_drops as f64),
            ("route_stuck", c.route_stuck as f64),
            ("replay_rejected", c.replay_rejected as f64),
            ("join_stuck", c.join_stuck as f64),
            ("partition_suspected", c.partition_suspected as f64),
            ("proofs_stored", c.proofs_stored as f64),
            ("proofs_wiped", c.proofs_wiped as f64),
        ]
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.values().into_iter().find(|(k, _)| *k == name).map(|(_, v)| v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use attestnet_core::node::NodeConfig;
    use attestnet_core::simnet::WorldConfig;
    use std::collections::BTreeSet;

    #[test]
    fn formula_matches_the_bare_device_example() {
        // One overlay, two successor slots, no fingers, no proofs.
        assert_eq!(MEMORY_BASE + memory_formula(2, 0, 0), 2136);
    }

    #[test]
    fn no_losses_reads_as_full_resilience() {
        let w = World::build(WorldConfig::default(), NodeConfig { o: 1, ..NodeConfig::default() }, 2);
        let m = compute(&w, &ResolvedAttacks::default());
        assert_eq!(m.resilience_index, 1.0);
        assert_eq!(m.proofs_lost, 0);
    }

    #[test]
    fn losses_match_only_later_recoveries() {
        let mut w = World::build(
            WorldConfig::default(),
            NodeConfig { o: 1, ..NodeConfig::default() },
            2,
        );
        let k = RingId(7);
        // Recovery before the loss does not count; one after does.
        w.recovery_log.push((5, 0, k));
        w.drop_log.push((10, 0, k));
        w.recovery_log.push((20, 0, k));
        w.drop_log.push((30, 0, k));
        let m = compute(&w, &ResolvedAttacks::default());
        assert_eq!(m.proofs_lost, 2);
        assert_eq!(m.proofs_recovered, 1);
        assert_eq!(m.resilience_index, 0.5);
    }

    #[test]
    fn metric_names_are_unique_and_match_the_constant() {
        let w = World::build(
            WorldConfig::default(),
            NodeConfig { o: 1, ..NodeConfig::default() },
            1,
        );
        let m = compute(&w, &ResolvedAttacks::default());
        let names: Vec<&str> = m.values().iter().map(|(k, _)| *k).collect();
        let set: BTreeSet<&str> = names.iter().copied().collect();
        assert_eq!(names.len(), set.len());
        assert_eq!(names, METRIC_NAMES);
        assert_eq!(m.value("resilience_index"), Some(1.0));
        assert_eq!(m.value("bogus"), None);
    }
}
