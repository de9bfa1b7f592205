//! Declarative scenario files: swarm shape, a timeline of injected faults,
//! and bounds the finished run must satisfy. Scenarios are data so that
//! acceptance thresholds live next to the experiment they gate.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use attestnet_core::attest::AttestConfig;
use attestnet_core::node::NodeConfig;
use attestnet_core::simnet::{Action, LinkModel, World, WorldConfig};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "attestnet-scenario/1";

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub swarm: Swarm,
    #[serde(default)]
    pub attest: Attest,
    #[serde(default)]
    pub link: Link,
    pub run: Run,
    #[serde(default)]
    pub attack: Vec<Attack>,
    #[serde(default, rename = "assert")]
    pub asserts: Vec<Bound>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Swarm {
    pub n: usize,
    #[serde(default = "default_overlays")]
    pub overlays: usize,
    #[serde(default = "default_successors")]
    pub successors: usize,
    #[serde(default = "default_stabilize_ms")]
    pub stabilize_ms: u64,
    /// Off for large converged swarms: the tables are exact already and
    /// refresh traffic would drown the measured flows.
    #[serde(default)]
    pub refresh_fingers: bool,
    #[serde(default)]
    pub distinct_keys: bool,
}

fn default_overlays() -> usize {
    3
}
fn default_successors() -> usize {
    2
}
fn default_stabilize_ms() -> u64 {
    1_000
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Attest {
    pub enabled: bool,
    #[serde(default = "default_probability")]
    pub probability: f64,
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
    #[serde(default = "default_attest_timeout_ms")]
    pub report_timeout_ms: u64,
    #[serde(default = "default_attest_timeout_ms")]
    pub query_timeout_ms: u64,
}

fn default_probability() -> f64 {
    0.1
}
fn default_tick_ms() -> u64 {
    1_000
}
fn default_attest_timeout_ms() -> u64 {
    2_000
}

impl Default for Attest {
    fn default() -> Self {
        Attest {
            enabled: true,
            probability: default_probability(),
            tick_ms: default_tick_ms(),
            report_timeout_ms: default_attest_timeout_ms(),
            query_timeout_ms: default_attest_timeout_ms(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub base_us: u64,
    pub kbps: u64,
    pub crypto_us: u64,
}

impl Default for Link {
    fn default() -> Self {
        let m = LinkModel::default();
        Link {
            base_us: m.base_us,
            kbps: m.kbps,
            crypto_us: m.crypto_us,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Run {
    pub duration_s: f64,
    #[serde(default)]
    pub keep_trace: bool,
    #[serde(default)]
    pub snapshot: bool,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Attack {
    /// Each cycle, `fraction` of the devices erase their whole proof store
    /// at a uniform instant inside the cycle window.
    WipeCycle {
        #[serde(default)]
        start_s: f64,
        period_s: f64,
        fraction: f64,
        cycles: u32,
    },
    /// Flips bits in the monitored region of the listed devices.
    Tamper {
        at_s: f64,
        devices: Vec<u32>,
        #[serde(default)]
        byte: usize,
        #[serde(default = "default_mask")]
        mask: u8,
    },
    /// Physical removal: the listed devices fall silent forever.
    Remove { at_s: f64, devices: Vec<u32> },
    /// The listed devices answer proof queries with fabricated values.
    CorruptHosts {
        #[serde(default)]
        at_s: f64,
        devices: Vec<u32>,
        #[serde(default)]
        collude: bool,
    },
    /// Corrupts whichever devices host the victim's proof on the listed
    /// overlays, resolved against the converged placement.
    CorruptHostsOf {
        #[serde(default)]
        at_s: f64,
        device: u32,
        overlays: Vec<u8>,
        #[serde(default)]
        collude: bool,
    },
}

fn default_mask() -> u8 {
    0xFF
}

/// One declarative bound on a metric of the finished run.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    pub metric: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl Bound {
    pub fn holds(&self, value: f64) -> bool {
        self.min.is_none_or(|m| value >= m) && self.max.is_none_or(|m| value <= m)
    }
}

#[derive(Debug)]
pub struct ScenarioError(pub String);

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario: {}", self.0)
    }
}

impl std::error::Error for ScenarioError {}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError(format!("{}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError(m));
        if self.schema != SCHEMA {
            return fail(format!("schema: expected {SCHEMA:?}, found {:?}", self.schema));
        }
        if self.swarm.n == 0 {
            return fail("swarm.n: must be at least 1".into());
        }
        if !(1..=8).contains(&self.swarm.overlays) {
            return fail("swarm.overlays: must be in 1..=8".into());
        }
        if !(1..=8).contains(&self.swarm.successors) {
            return fail("swarm.successors: must be in 1..=8".into());
        }
        if !(0.0..=1.0).contains(&self.attest.probability) {
            return fail("attest.probability: must be in [0, 1]".into());
        }
        if self.run.duration_s < 0.0 {
            return fail("run.duration_s: must be non-negative".into());
        }
        for (i, a) in self.attack.iter().enumerate() {
            match a {
                Attack::WipeCycle {
                    period_s, fraction, ..
                } => {
                    if *period_s <= 0.0 {
                        return fail(format!("attack[{i}].period_s: must be positive"));
                    }
                    if !(0.0..=1.0).contains(fraction) {
                        return fail(format!("attack[{i}].fraction: must be in [0, 1]"));
                    }
                }
                Attack::Tamper { devices, .. }
                | Attack::Remove { devices, .. }
                | Attack::CorruptHosts { devices, .. } => {
                    if let Some(d) = devices.iter().find(|d| **d as usize >= self.swarm.n) {
                        return fail(format!("attack[{i}]: device {d} outside 0..{}", self.swarm.n));
                    }
                }
                Attack::CorruptHostsOf { device, overlays, .. } => {
                    if *device as usize >= self.swarm.n {
                        return fail(format!("attack[{i}].device: outside 0..{}", self.swarm.n));
                    }
                    if let Some(o) = overlays.iter().find(|o| **o as usize >= self.swarm.overlays)
                    {
                        return fail(format!("attack[{i}]: overlay {o} outside the swarm"));
                    }
                }
            }
        }
        for (i, b) in self.asserts.iter().enumerate() {
            if b.min.is_none() && b.max.is_none() {
                return fail(format!("assert[{i}]: needs a min or a max"));
            }
        }
        Ok(())
    }

    pub fn node_config(&self) -> NodeConfig {
        NodeConfig {
            o: self.swarm.overlays,
            s: self.swarm.successors,
            stabilize_every_us: self.swarm.stabilize_ms * 1_000,
            refresh_fingers: self.swarm.refresh_fingers,
            attest: AttestConfig {
                enabled: self.attest.enabled,
                probability: self.attest.probability,
                tick_every_us: self.attest.tick_ms * 1_000,
                report_timeout_us: self.attest.report_timeout_ms * 1_000,
                query_timeout_us: self.attest.query_timeout_ms * 1_000,
                ..AttestConfig::default()
            },
            ..NodeConfig::default()
        }
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.seed,
            link: LinkModel {
                base_us: self.link.base_us,
                kbps: self.link.kbps,
                crypto_us: self.link.crypto_us,
            },
            keep_trace: self.run.keep_trace,
            distinct_keys: self.swarm.distinct_keys,
            ..WorldConfig::default()
        }
    }

    /// Canonical digest of everything that shapes the run.
    pub fn config_digest(&self) -> String {
        let canon = toml::to_string(self).expect("scenario serializes");
        let d = attestnet_core::crypto::sha256_parts(&[canon.as_bytes()]);
        let mut s = String::with_capacity(16);
        for b in &d[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

/// Fault timeline resolved against a built world, plus the ground truth
/// the metrics need to score detection.
#[derive(Clone, Debug, Default)]
pub struct ResolvedAttacks {
    pub actions: Vec<(u64, Action)>,
    pub tampered: BTreeSet<u32>,
    pub corrupt_hosts: BTreeSet<u32>,
    pub removals: Vec<(u64, u32)>,
    pub tamper_times: Vec<(u64, u32)>,
}

/// 53-bit uniform draw in [0, 1).
fn u01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn resolve_attacks(sc: &Scenario, world: &World) -> ResolvedAttacks {
    let n = sc.swarm.n;
    let mut out = ResolvedAttacks::default();
    for (ai, a) in sc.attack.iter().enumerate() {
        match a {
            Attack::WipeCycle {
                start_s,
                period_s,
                fraction,
                cycles,
            } => {
                let mut rng = attestnet_core::crypto::derive_rng(
                    sc.seed,
                    u32::MAX - ai as u32,
                    b"attack-wipe",
                );
                let hits = ((*fraction * n as f64).round() as usize).min(n);
                for c in 0..*cycles {
                    let base = start_s + *period_s * c as f64;
                    // Partial Fisher-Yates: `hits` distinct devices per cycle.
                    let mut pool: Vec<u32> = (0..n as u32).collect();
                    for k in 0..hits {
                        let j = k + (rng.next_u64() as usize) % (n - k);
                        pool.swap(k, j);
                        let at = base + u01(&mut rng) * period_s;
                        out.actions.push((
                            (at * 1e6) as u64,
                            Action::WipeStore { device: pool[k] },
                        ));
                    }
                }
            }
            Attack::Tamper {
                at_s,
                devices,
                byte,
                mask,
            } => {
                for d in devices {
                    let at = (at_s * 1e6) as u64;
                    out.actions.push((
                        at,
                        Action::Tamper {
                            device: *d,
                            byte: *byte,
                            mask: *mask,
                        },
                    ));
                    out.tampered.insert(*d);
                    out.tamper_times.push((at, *d));
                }
            }
            Attack::Remove { at_s, devices } => {
                for d in devices {
                    let at = (at_s * 1e6) as u64;
                    out.actions.push((at, Action::Remove { device: *d }));
                    out.removals.push((at, *d));
                }
            }
            Attack::CorruptHosts {
                at_s,
                devices,
                collude,
            } => {
                for d in devices {
                    let action = if *collude {
                        Action::SetColludingHost {
                            device: *d,
                            value: true,
                        }
                    } else {
                        Action::SetCorruptHost {
                            device: *d,
                            value: true,
                        }
                    };
                    out.actions.push(((at_s * 1e6) as u64, action));
                    out.corrupt_hosts.insert(*d);
                }
            }
            Attack::CorruptHostsOf {
                at_s,
                device,
                overlays,
                collude,
            } => {
                let uid = world.uid_of[*device as usize];
                for ov in overlays {
                    let members: Vec<_> = world.overlay_members(*ov as usize);
                    let sorted: Vec<_> = members.iter().map(|(r, _)| *r).collect();
                    let owner = world
                        .node_cfg
                        .space
                        .responsible_in_sorted(uid, &sorted)
                        .expect("overlay has members");
                    let host = members
                        .iter()
                        .find(|(r, _)| *r == owner)
                        .map(|(_, d)| *d)
                        .expect("owner is a member");
                    let action = if *collude {
                        Action::SetColludingHost {
                            device: host,
                            value: true,
                        }
                    } else {
                        Action::SetCorruptHost {
                            device: host,
                            value: true,
                        }
                    };
                    out.actions.push(((at_s * 1e6) as u64, action));
                    out.corrupt_hosts.insert(host);
                }
            }
        }
    }
    out
}
