//! Release gate: each test is one headline claim, driven end to end through
//! the bundled scenarios and the public runner. One pass/fail line each.
//!
//! Component-level properties (ring lookup oracles, cipher and codec
//! roundtrips, vote counting against exhaustive enumeration, state-machine
//! legality, join orderings) gate separately in the core crate's suites;
//! this file covers the swarm-scale behavior those pieces add up to.

use std::path::PathBuf;

use attestnet_core::simnet::{LossWindow, World};
use attestnet_core::wire::{cert_frame_len, routine_frame_len};
use attestnet_sim::analysis;
use attestnet_sim::metrics;
use attestnet_sim::runner;
use attestnet_sim::scenario::Scenario;

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    Scenario::load(&path).expect("bundled scenario loads")
}

fn banner(label: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {label}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

#[test]
fn acceptance_1_wiped_proofs_recover_with_replicas_and_not_without() {
    let sc = bundled("fig-resilience.toml");
    let replicated = runner::run(&sc).expect("valid scenario");
    let mut solo = sc.clone();
    solo.swarm.overlays = 1;
    let single = runner::run(&solo).expect("valid scenario");

    let idx3 = replicated.metrics.resilience_index;
    let idx1 = single.metrics.resilience_index;
    let pass = replicated.pass && idx1 < idx3;
    banner(
        "1 lost-proof recovery",
        pass,
        &format!(
            "index {idx3:.4} with 3 overlays ({} lost, {} recovered), {idx1:.4} with 1",
            replicated.metrics.proofs_lost, replicated.metrics.proofs_recovered
        ),
    );
    assert!(replicated.pass, "declared bounds hold: {:?}", replicated.asserts);
    assert!(idx1 < idx3, "single overlay must recover strictly less");
}

#[test]
fn acceptance_2_session_latency_grows_logarithmically() {
    let template = bundled("fig-attestation-latency.toml");
    let grid = vec![runner::parse_axis("n=64,256,1024,4096").unwrap()];
    let points = runner::sweep(&template, &grid);

    let mut latency = Vec::new();
    let mut fingers = Vec::new();
    let mut fingers_bounded = true;
    for p in &points {
        let out = p.result.as_ref().expect("sweep point runs");
        latency.push((p.scenario.swarm.n, out.metrics.latency.mean_s));
        fingers.push((p.scenario.swarm.n, out.metrics.max_finger_entries as f64));
        let cap = p.scenario.swarm.overlays * 64;
        fingers_bounded &= out.metrics.max_finger_total <= cap;
    }
    let lat_fit = analysis::fit_log2(&latency);
    let finger_fit = analysis::fit_log2(&fingers);

    let spot = runner::run(&template).expect("valid scenario");
    let mean = spot.metrics.latency.mean_s;

    let pass = lat_fit.slope > 0.0
        && lat_fit.r2 > 0.9
        && finger_fit.slope > 0.0
        && finger_fit.r2 > 0.9
        && fingers_bounded
        && spot.pass;
    banner(
        "2 latency shape",
        pass,
        &format!(
            "fit {:.1} ms/doubling r2 {:.3}, 10k mean {mean:.3} s, finger fit r2 {:.3}",
            lat_fit.slope * 1e3,
            lat_fit.r2,
            finger_fit.r2
        ),
    );
    assert!(lat_fit.slope > 0.0 && lat_fit.r2 > 0.9, "latency fit {lat_fit:?}");
    assert!(
        finger_fit.slope > 0.0 && finger_fit.r2 > 0.9,
        "finger fit {finger_fit:?}"
    );
    assert!(fingers_bounded, "finger entries exceed the table bound");
    assert!(spot.pass, "10k spot bounds hold: {:?}", spot.asserts);
}

#[test]
fn acceptance_3_storage_and_frame_bytes_are_closed_form() {
    for s in 0..=4 {
        assert_eq!(routine_frame_len(s), 384 + 68 * s);
    }
    for o in 1..=8 {
        assert_eq!(cert_frame_len(o), 256 * o);
    }
    assert_eq!(routine_frame_len(2), 520);
    assert_eq!(cert_frame_len(4), 1024);

    let sc = bundled("proofs-distribution.toml");
    let (world, resolved, _) = runner::execute(&sc);
    let m = metrics::compute(&world, &resolved);
    let pass = m.memory.mismatches == 0;
    banner(
        "3 memory model",
        pass,
        &format!(
            "{} devices byte-audited, {} mismatches, frames 520/1024",
            world.engines.len(),
            m.memory.mismatches
        ),
    );
    assert_eq!(m.memory.mismatches, 0, "formula drifts from stored bytes");
}

#[test]
fn acceptance_4_placement_tail_is_bounded_and_shrinks_with_replicas() {
    let sc = bundled("proofs-distribution.toml");
    let spread = runner::run(&sc).expect("valid scenario");
    let mut solo = sc.clone();
    solo.swarm.overlays = 1;
    let single = runner::run(&solo).expect("valid scenario");

    let tail3 = spread.metrics.tail_per_overlay;
    let tail1 = single.metrics.tail_per_overlay;
    let pass = spread.pass && tail3 < tail1;
    banner(
        "4 proof placement",
        pass,
        &format!(
            "max {} held by {}, per-overlay tail {tail3:.1} vs {tail1:.1} unreplicated",
            spread.metrics.max_proofs, spread.metrics.max_proofs_holders
        ),
    );
    assert!(spread.pass, "declared bounds hold: {:?}", spread.asserts);
    assert!(tail3 < tail1, "replication must shrink the per-overlay tail");
}

#[test]
fn acceptance_5_tampered_devices_condemned_and_corrupt_hosts_outvoted() {
    let tamper = runner::run(&bundled("detection-tamper.toml")).expect("valid scenario");
    let minority = runner::run(&bundled("byzantine-minority.toml")).expect("valid scenario");
    let tie = runner::run(&bundled("byzantine-tie.toml")).expect("valid scenario");

    // Below the threshold every session elects the golden proof: verdicts
    // are clean or dissent-only, never deadlocked or timed out.
    let md = &minority.metrics.detection;
    let golden_all = md.healthy + md.hosts_flagged == minority.metrics.latency.sessions as u64
        && md.ties == 0
        && md.warnings == 0;

    let pass = tamper.pass && minority.pass && tie.pass && golden_all;
    banner(
        "5 detection",
        pass,
        &format!(
            "{} tampered flagged in {:.1} s, 0 false; minority: {}/{} golden; tie: {} deadlocks",
            tamper.metrics.detection.flagged_true,
            tamper.metrics.detection.latency_max_s,
            md.healthy + md.hosts_flagged,
            minority.metrics.latency.sessions,
            tie.metrics.detection.ties
        ),
    );
    assert!(tamper.pass, "tamper bounds hold: {:?}", tamper.asserts);
    assert!(minority.pass, "minority bounds hold: {:?}", minority.asserts);
    assert!(golden_all, "an election missed the golden proof");
    assert!(tie.pass, "tie bounds hold: {:?}", tie.asserts);
}

#[test]
fn acceptance_6_reruns_are_identical_removals_alert_and_one_loss_does_not() {
    // Same seed, same trace, bit for bit.
    let sc = bundled("byzantine-tie.toml");
    let (a, _, _) = runner::execute(&sc);
    let (b, _, _) = runner::execute(&sc);
    let identical = a.trace_digest() == b.trace_digest();

    // A vanished device raises an alert in every overlay within two
    // stabilize periods.
    let removal = runner::run(&bundled("physical-removal.toml")).expect("valid scenario");

    // One fully lost message exchange is absorbed by retries: no alert.
    let quiet_sc = {
        let mut q = bundled("physical-removal.toml");
        q.attack.clear();
        q
    };
    let mut world = World::build(quiet_sc.world_config(), quiet_sc.node_config(), quiet_sc.swarm.n);
    world.converged_start();
    world.add_loss_window(LossWindow {
        from_us: 5_000_000,
        until_us: 5_900_000,
        probability: 1.0,
        only_from: Some(3),
    });
    world.run_until(30_000_000);
    let no_false_alarm = world.alerts.is_empty();

    let pass = identical && removal.pass && no_false_alarm;
    banner(
        "6 property suites",
        pass,
        &format!(
            "replay digest equal: {identical}; removal alerts {} in {:.2} s; alerts after single loss: {}",
            removal.metrics.alerts,
            removal.metrics.alert_latency_max_s,
            world.alerts.len()
        ),
    );
    assert!(identical, "seeded reruns diverged");
    assert!(removal.pass, "removal bounds hold: {:?}", removal.asserts);
    assert!(no_false_alarm, "a single lost exchange must not raise alerts");
}
