//! Deterministic discrete-event network simulator.
//!
//! A [`World`] owns every device engine, a microsecond event clock, and a
//! lossy link model. All randomness flows from the world seed through
//! per-purpose derived streams, and all collections iterate in fixed order,
//! so two runs with the same inputs produce byte-identical trace digests.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand_core::RngCore;

use crate::attest::{Reaction, ReactionPolicy, Verdict, VerdictRecord};
use crate::crypto::{
    derive_rng, rsa_keygen, sha256_parts, Authority, DetRng, DeviceCredentials, Proof,
};
use crate::node::{
    ConvergedOverlay, DeviceEngine, DeviceInit, Effect, GlobalStatus, MemoryReport, NodeConfig,
    OverlayPhase, TimerToken, TraceEvent,
};
use crate::ring::RingId;
use crate::wire::OidRecord;

/// Link timing model. One hop costs the sender's sealing time, the channel
/// time for the frame bytes, and the receiver's opening time.
#[derive(Clone, Copy, Debug)]
pub struct LinkModel {
    /// Fixed per-frame channel overhead.
    pub base_us: u64,
    /// Channel rate in kilobits per second.
    pub kbps: u64,
    /// One-sided cryptographic processing time.
    pub crypto_us: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            base_us: 2_000,
            kbps: 250,
            crypto_us: 10_000,
        }
    }
}

impl LinkModel {
    /// One-hop latency for a frame of `bytes`.
    pub fn delay_us(&self, bytes: usize) -> u64 {
        2 * self.crypto_us + self.base_us + (bytes as u64 * 8_000) / self.kbps
    }
}

/// Time window during which sends are dropped with a fixed probability,
/// optionally restricted to one sending device.
#[derive(Clone, Copy, Debug)]
pub struct LossWindow {
    pub from_us: u64,
    pub until_us: u64,
    pub probability: f64,
    pub only_from: Option<u32>,
}

/// Scheduled world mutations: device lifecycle and adversarial injections.
#[derive(Clone, Debug)]
pub enum Action {
    /// First device of the swarm comes up as sole member.
    StartBootstrap { device: u32 },
    /// Device starts with entry points read from live members at fire time.
    StartCertified { device: u32, entries_from: Vec<u32> },
    /// Device starts with only an introducer's address and certificate.
    StartIntroduced { device: u32, introducer: u32 },
    /// Flips bits in the device's monitored region.
    Tamper { device: u32, byte: usize, mask: u8 },
    /// Restores the clean region image.
    HardReset { device: u32 },
    /// Physical removal: the device stops sending and receiving forever.
    Remove { device: u32 },
    /// Makes the device answer proof queries with fabricated values.
    SetCorruptHost { device: u32, value: bool },
    /// Like SetCorruptHost, but every colluding device serves the same
    /// fabricated value for a given subject.
    SetColludingHost { device: u32, value: bool },
    /// Erases every hosted proof copy on the device, leftovers included.
    WipeStore { device: u32 },
    /// Deletes one hosted proof copy from the device's store.
    DropStoredProof {
        device: u32,
        overlay: u8,
        uid_key: RingId,
    },
    /// Cuts a device off (or reconnects it): both directions blocked.
    Quarantine { device: u32, value: bool },
    /// Re-delivers the most recently captured frames unchanged.
    ReplayLast { count: usize },
}

#[derive(Clone, Debug)]
enum EventKind {
    Deliver { to: u32, frame: Vec<u8> },
    Timer { device: u32, token: TimerToken },
    Act(Action),
}

#[derive(Clone, Debug)]
struct Event {
    at_us: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.at_us == other.at_us && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        (self.at_us, self.seq).cmp(&(other.at_us, other.seq))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_lost: u64,
    pub frames_blocked: u64,
    pub bytes_sent: u64,
    pub decode_drops: u64,
    pub ttl_drops: u64,
    pub route_stuck: u64,
    pub replay_rejected: u64,
    pub join_stuck: u64,
    pub partition_suspected: u64,
    pub proofs_stored: u64,
    pub proofs_recovered: u64,
    pub proofs_wiped: u64,
}

#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub at_us: u64,
    pub device: u32,
    pub event: TraceEvent,
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub seed: u64,
    pub link: LinkModel,
    pub policy: ReactionPolicy,
    /// Retain the full event trace (small runs only); counters, verdicts,
    /// alerts and the digest are always kept.
    pub keep_trace: bool,
    /// Give every device its own signing keypair. Required for runs that
    /// exercise the certification exchange; bulk-built swarms share one.
    pub distinct_keys: bool,
    pub region_len: usize,
    pub cert_expiry_us: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 7,
            link: LinkModel::default(),
            policy: ReactionPolicy::default(),
            keep_trace: false,
            distinct_keys: false,
            region_len: 64,
            cert_expiry_us: u64::MAX,
        }
    }
}

const CAPTURE_DEPTH: usize = 32;

pub struct World {
    pub cfg: WorldConfig,
    pub node_cfg: NodeConfig,
    pub engines: Vec<DeviceEngine>,
    pub ca: Authority,
    pub now_us: u64,
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    dead: BTreeSet<u32>,
    quarantined: BTreeSet<u32>,
    loss: Vec<LossWindow>,
    attack_rng: DetRng,
    capture: VecDeque<(u32, Vec<u8>)>,
    digest: [u8; 32],
    pub counters: Counters,
    pub verdicts: Vec<(u64, u32, VerdictRecord)>,
    pub alerts: Vec<(u64, u32, u8, RingId)>,
    pub status_log: Vec<(u64, u32, GlobalStatus)>,
    pub trace: Vec<TraceRecord>,
    /// Proof-store key of each device, identical across overlays.
    pub uid_of: Vec<RingId>,
    pub device_of_uid: BTreeMap<RingId, u32>,
    /// Injected proof losses, one entry per erased copy.
    pub drop_log: Vec<(u64, u8, RingId)>,
    /// Repairs that landed, one entry per recovery-store arrival.
    pub recovery_log: Vec<(u64, u8, RingId)>,
}

impl World {
    /// Provisions `n` devices against one fresh authority. Devices exist but
    /// are not started; use [`World::converged_start`] or schedule
    /// [`Action::StartBootstrap`] / join actions.
    pub fn build(cfg: WorldConfig, node_cfg: NodeConfig, n: usize) -> Self {
        let mut ca_rng = derive_rng(cfg.seed, u32::MAX, b"authority");
        let ca = Authority::generate(&mut ca_rng);
        let shared = if cfg.distinct_keys {
            None
        } else {
            let mut kr = derive_rng(cfg.seed, u32::MAX, b"shared-keys");
            Some(rsa_keygen(&mut kr))
        };
        let mut engines = Vec::with_capacity(n);
        let mut uid_of = Vec::with_capacity(n);
        let mut device_of_uid = BTreeMap::new();
        for d in 0..n as u32 {
            let mut pr = derive_rng(cfg.seed, d, b"provision");
            let creds = match &shared {
                Some((priv_k, pub_k)) => DeviceCredentials::provision_with_keys(
                    node_cfg.space,
                    &ca,
                    cfg.cert_expiry_us,
                    priv_k.clone(),
                    pub_k.clone(),
                    &mut pr,
                ),
                None => {
                    DeviceCredentials::provision(node_cfg.space, &ca, cfg.cert_expiry_us, &mut pr)
                }
            };
            let mut region = alloc::vec![0u8; cfg.region_len];
            let mut rr = derive_rng(cfg.seed, d, b"region");
            rr.fill_bytes(&mut region);
            let engine = DeviceEngine::new(
                node_cfg.clone(),
                DeviceInit {
                    device: d,
                    addr: d + 1,
                    seed: cfg.seed,
                    creds,
                    region,
                    ca_public: ca.public.clone(),
                    ca_id: ca.id,
                },
            );
            uid_of.push(engine.uid_key);
            device_of_uid.insert(engine.uid_key, d);
            engines.push(engine);
        }
        let attack_rng = derive_rng(cfg.seed, u32::MAX, b"attack");
        World {
            cfg,
            node_cfg,
            engines,
            ca,
            now_us: 0,
            heap: BinaryHeap::new(),
            next_seq: 0,
            dead: BTreeSet::new(),
            quarantined: BTreeSet::new(),
            loss: Vec::new(),
            attack_rng,
            capture: VecDeque::new(),
            digest: [0; 32],
            counters: Counters::default(),
            verdicts: Vec::new(),
            alerts: Vec::new(),
            status_log: Vec::new(),
            trace: Vec::new(),
            uid_of,
            device_of_uid,
            drop_log: Vec::new(),
            recovery_log: Vec::new(),
        }
    }

    /// Installs the fully converged swarm state directly: correct successor
    /// lists, predecessors, owner-exact finger tables and proof placement in
    /// every overlay. Every device is a running member afterwards.
    pub fn converged_start(&mut self) {
        let space = self.node_cfg.space;
        let o = self.node_cfg.o;
        let s = self.node_cfg.s;
        let n = self.engines.len();
        let golden: Vec<Proof> = self.engines.iter().map(|e| e.golden_proof()).collect();

        let mut per_device: Vec<Vec<ConvergedOverlay>> = (0..n)
            .map(|_| Vec::with_capacity(o))
            .collect();
        for ov in 0..o {
            // Sorted ring of (position, device).
            let mut members: Vec<(RingId, usize)> = self
                .engines
                .iter()
                .enumerate()
                .map(|(i, e)| (e.record(ov).ring, i))
                .collect();
            members.sort();
            let rings: Vec<RingId> = members.iter().map(|(r, _)| *r).collect();
            let record_at =
                |j: usize| -> OidRecord { self.engines[members[j % n].1].record(ov) };

            // Proof placement: owner of each device id key.
            let mut stored: BTreeMap<usize, BTreeMap<RingId, Proof>> = BTreeMap::new();
            for d in 0..n {
                let key = self.uid_of[d];
                let owner_ring = space
                    .responsible_in_sorted(key, &rings)
                    .expect("nonempty ring");
                let owner = members[rings.binary_search(&owner_ring).unwrap()].1;
                stored.entry(owner).or_default().insert(key, golden[d]);
            }

            for (j, (ring, dev)) in members.iter().enumerate() {
                let pred = record_at(j + n - 1);
                let successors: Vec<OidRecord> =
                    (1..=s.min(n - 1)).map(|k| record_at(j + k)).collect();
                let mut fingers: BTreeMap<RingId, OidRecord> = BTreeMap::new();
                for i in 1..=space.bits() {
                    let start = space.finger_start(*ring, i);
                    let owner = space
                        .responsible_in_sorted(start, &rings)
                        .expect("nonempty ring");
                    if owner != *ring {
                        let idx = members[rings.binary_search(&owner).unwrap()].1;
                        fingers.insert(owner, self.engines[idx].record(ov));
                    }
                }
                per_device[*dev].push(ConvergedOverlay {
                    pred: if n > 1 { Some(pred) } else { None },
                    successors: if n > 1 {
                        successors
                    } else {
                        alloc::vec![self.engines[*dev].record(ov)]
                    },
                    fingers: fingers.into_values().collect(),
                    proofs: stored.remove(dev).unwrap_or_default(),
                });
            }
        }
        for (d, state) in per_device.into_iter().enumerate() {
            let mut out = Vec::new();
            let now = self.now_us;
            self.engines[d].install_converged(now, state, &mut out);
            self.absorb(d as u32, out);
        }
    }

    pub fn schedule(&mut self, at_us: u64, action: Action) {
        self.push_event(at_us, EventKind::Act(action));
    }

    pub fn add_loss_window(&mut self, w: LossWindow) {
        self.loss.push(w);
    }

    /// Stable digest over every trace event; equal digests mean equal runs.
    pub fn trace_digest(&self) -> [u8; 32] {
        self.digest
    }

    fn push_event(&mut self, at_us: u64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { at_us, seq, kind }));
    }

    fn lost(&mut self, from: u32) -> bool {
        let now = self.now_us;
        for w in &self.loss {
            if now >= w.from_us
                && now < w.until_us
                && w.only_from.is_none_or(|d| d == from)
            {
                let draw = (self.attack_rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                if draw < w.probability {
                    return true;
                }
            }
        }
        false
    }

    fn absorb(&mut self, device: u32, effects: Vec<Effect>) {
        for e in effects {
            match e {
                Effect::Send { to, frame } => {
                    self.counters.frames_sent += 1;
                    self.counters.bytes_sent += frame.len() as u64;
                    if self.dead.contains(&device) || self.quarantined.contains(&device) {
                        self.counters.frames_blocked += 1;
                        continue;
                    }
                    if self.lost(device) {
                        self.counters.frames_lost += 1;
                        continue;
                    }
                    let delay = self.cfg.link.delay_us(frame.len());
                    self.capture.push_back((to, frame.clone()));
                    if self.capture.len() > CAPTURE_DEPTH {
                        self.capture.pop_front();
                    }
                    let at = self.now_us + delay;
                    self.push_event(at, EventKind::Deliver { to, frame });
                }
                Effect::Timer { at_us, token } => {
                    self.push_event(at_us, EventKind::Timer { device, token });
                }
                Effect::Trace(t) => self.record_trace(device, t),
            }
        }
    }

    fn record_trace(&mut self, device: u32, event: TraceEvent) {
        self.digest = sha256_parts(&[&self.digest, &encode_trace(self.now_us, device, &event)]);
        match &event {
            TraceEvent::Status { status } => {
                self.status_log.push((self.now_us, device, *status));
            }
            TraceEvent::Alert { overlay, subject } => {
                self.alerts.push((self.now_us, device, *overlay, *subject));
            }
            TraceEvent::Verdict(record) => {
                self.verdicts.push((self.now_us, device, record.clone()));
                self.apply_reactions(record.clone());
            }
            TraceEvent::ProofStored {
                recovered,
                overlay,
                uid_key,
            } => {
                if *recovered {
                    self.counters.proofs_recovered += 1;
                    self.recovery_log.push((self.now_us, *overlay, *uid_key));
                } else {
                    self.counters.proofs_stored += 1;
                }
            }
            TraceEvent::DecodeDrop => self.counters.decode_drops += 1,
            TraceEvent::TtlDrop { .. } => self.counters.ttl_drops += 1,
            TraceEvent::RouteStuck { .. } => self.counters.route_stuck += 1,
            TraceEvent::ReplayRejected => self.counters.replay_rejected += 1,
            TraceEvent::JoinStuck { .. } => self.counters.join_stuck += 1,
            TraceEvent::PartitionSuspected { .. } => self.counters.partition_suspected += 1,
            _ => {}
        }
        if self.cfg.keep_trace {
            self.trace.push(TraceRecord {
                at_us: self.now_us,
                device,
                event,
            });
        }
    }

    /// Applies the configured reaction to a decided verdict.
    fn apply_reactions(&mut self, record: VerdictRecord) {
        let reaction = match record.verdict {
            Verdict::ProverCorrupted => self.cfg.policy.prover_corrupted,
            Verdict::OverlayHostsCorrupted => self.cfg.policy.hosts_corrupted,
            Verdict::NetworkCorrupted => self.cfg.policy.network_corrupted,
            Verdict::PossibleInfectionWarning => self.cfg.policy.warning,
            Verdict::Healthy => return,
        };
        let device = match self.device_of_uid.get(&record.subject) {
            Some(d) => *d,
            None => return,
        };
        match reaction {
            Reaction::Isolate => {
                self.quarantined.insert(device);
            }
            Reaction::HardReset => {
                self.engines[device as usize].hard_reset();
            }
            Reaction::Persist | Reaction::LogOnly => {}
        }
    }

    fn apply_action(&mut self, action: Action) {
        match action {
            Action::StartBootstrap { device } => {
                let mut out = Vec::new();
                let now = self.now_us;
                self.engines[device as usize].start_bootstrap(now, &mut out);
                self.absorb(device, out);
            }
            Action::StartCertified {
                device,
                entries_from,
            } => {
                let entries: Vec<Vec<OidRecord>> = (0..self.node_cfg.o)
                    .map(|ov| {
                        entries_from
                            .iter()
                            .map(|d| self.engines[*d as usize].record(ov))
                            .collect()
                    })
                    .collect();
                let mut out = Vec::new();
                let now = self.now_us;
                self.engines[device as usize].start_certified(now, entries, &mut out);
                self.absorb(device, out);
            }
            Action::StartIntroduced { device, introducer } => {
                let cert = self.engines[introducer as usize].creds.certificate;
                let addr = self.engines[introducer as usize].addr;
                let mut out = Vec::new();
                let now = self.now_us;
                self.engines[device as usize].start_introduced(now, addr, cert, &mut out);
                self.absorb(device, out);
            }
            Action::Tamper { device, byte, mask } => {
                self.engines[device as usize].tamper_region(byte, mask);
            }
            Action::HardReset { device } => {
                self.engines[device as usize].hard_reset();
            }
            Action::Remove { device } => {
                self.dead.insert(device);
            }
            Action::SetCorruptHost { device, value } => {
                self.engines[device as usize].corrupt_host = value;
            }
            Action::SetColludingHost { device, value } => {
                self.engines[device as usize].corrupt_host = value;
                self.engines[device as usize].collude_host = value;
            }
            Action::WipeStore { device } => {
                let now = self.now_us;
                for (i, ov) in self.engines[device as usize].overlays.iter_mut().enumerate() {
                    for k in ov.proofs.keys().chain(ov.leftovers.keys()) {
                        self.drop_log.push((now, i as u8, *k));
                        self.counters.proofs_wiped += 1;
                    }
                    ov.proofs.clear();
                    ov.leftovers.clear();
                    ov.leftover_heir = None;
                }
            }
            Action::DropStoredProof {
                device,
                overlay,
                uid_key,
            } => {
                if self.engines[device as usize].drop_stored_proof(overlay as usize, uid_key) {
                    self.drop_log.push((self.now_us, overlay, uid_key));
                    self.counters.proofs_wiped += 1;
                }
            }
            Action::Quarantine { device, value } => {
                if value {
                    self.quarantined.insert(device);
                } else {
                    self.quarantined.remove(&device);
                }
            }
            Action::ReplayLast { count } => {
                let frames: Vec<(u32, Vec<u8>)> = self
                    .capture
                    .iter()
                    .rev()
                    .take(count)
                    .cloned()
                    .collect();
                for (to, frame) in frames {
                    let delay = self.cfg.link.delay_us(frame.len());
                    let at = self.now_us + delay;
                    self.push_event(at, EventKind::Deliver { to, frame });
                }
            }
        }
    }

    /// Advances the clock, processing every event due up to `until_us`.
    pub fn run_until(&mut self, until_us: u64) {
        while let Some(Reverse(ev)) = self.heap.peek() {
            if ev.at_us > until_us {
                break;
            }
            let Reverse(ev) = self.heap.pop().expect("peeked");
            self.now_us = ev.at_us;
            match ev.kind {
                EventKind::Deliver { to, frame } => {
                    let idx = (to - 1) as usize;
                    if idx >= self.engines.len()
                        || self.dead.contains(&(to - 1))
                        || self.quarantined.contains(&(to - 1))
                    {
                        self.counters.frames_blocked += 1;
                        continue;
                    }
                    self.counters.frames_delivered += 1;
                    let mut out = Vec::new();
                    let now = self.now_us;
                    self.engines[idx].on_frame(now, &frame, &mut out);
                    self.absorb(to - 1, out);
                }
                EventKind::Timer { device, token } => {
                    if self.dead.contains(&device) {
                        continue;
                    }
                    let mut out = Vec::new();
                    let now = self.now_us;
                    self.engines[device as usize].on_timer(now, token, &mut out);
                    self.absorb(device, out);
                }
                EventKind::Act(action) => self.apply_action(action),
            }
        }
        self.now_us = until_us;
    }

    // -- inspection helpers ----------------------------------------------------

    pub fn is_dead(&self, device: u32) -> bool {
        self.dead.contains(&device)
    }

    pub fn is_quarantined(&self, device: u32) -> bool {
        self.quarantined.contains(&device)
    }

    /// Devices currently members of every overlay and not removed.
    pub fn running_devices(&self) -> Vec<u32> {
        self.engines
            .iter()
            .filter(|e| {
                !self.dead.contains(&e.device)
                    && e.status == GlobalStatus::MemberAndRunning
            })
            .map(|e| e.device)
            .collect()
    }

    /// Sorted live membership view of one overlay: devices in member phase
    /// and not removed.
    pub fn overlay_members(&self, overlay: usize) -> Vec<(RingId, u32)> {
        let mut v: Vec<(RingId, u32)> = self
            .engines
            .iter()
            .filter(|e| {
                !self.dead.contains(&e.device)
                    && e.overlays[overlay].phase == OverlayPhase::Member
            })
            .map(|e| (e.record(overlay).ring, e.device))
            .collect();
        v.sort();
        v
    }

    /// How many overlays hold a live authentic proof copy for `device`,
    /// stored at the member actually responsible for its key.
    pub fn proof_copies(&self, device: u32) -> usize {
        let space = self.node_cfg.space;
        let key = self.uid_of[device as usize];
        let golden = self.engines[device as usize].golden_proof();
        let mut copies = 0;
        for ov in 0..self.node_cfg.o {
            let members = self.overlay_members(ov);
            let rings: Vec<RingId> = members.iter().map(|(r, _)| *r).collect();
            let Ok(owner) = space.responsible_in_sorted(key, &rings) else {
                continue;
            };
            let owner_dev = members[rings.binary_search(&owner).unwrap()].1;
            let store = &self.engines[owner_dev as usize].overlays[ov];
            if store.proofs.get(&key).or_else(|| store.leftovers.get(&key)) == Some(&golden) {
                copies += 1;
            }
        }
        copies
    }

    pub fn memory_reports(&self) -> Vec<MemoryReport> {
        self.engines.iter().map(|e| e.memory()).collect()
    }
}

/// Stable byte encoding of one trace event for the run digest.
fn encode_trace(at_us: u64, device: u32, event: &TraceEvent) -> Vec<u8> {
    let mut b = Vec::with_capacity(64);
    b.extend_from_slice(&at_us.to_le_bytes());
    b.extend_from_slice(&device.to_le_bytes());
    match event {
        TraceEvent::Status { status } => {
            b.push(1);
            b.push(*status as u8);
        }
        TraceEvent::Phase { overlay, phase } => {
            b.push(2);
            b.push(*overlay);
            b.push(*phase as u8);
        }
        TraceEvent::Alert { overlay, subject } => {
            b.push(3);
            b.push(*overlay);
            b.extend_from_slice(&subject.0.to_le_bytes());
        }
        TraceEvent::AlertReceived { overlay, subject } => {
            b.push(4);
            b.push(*overlay);
            b.extend_from_slice(&subject.0.to_le_bytes());
        }
        TraceEvent::Verdict(r) => {
            b.push(5);
            b.push(r.verdict as u8);
            b.extend_from_slice(&r.subject.0.to_le_bytes());
            b.push(r.dissenting.len() as u8);
            b.extend_from_slice(&r.dissenting);
            b.push(r.blank.len() as u8);
            b.extend_from_slice(&r.blank);
            b.extend_from_slice(&r.engaged_at_us.to_le_bytes());
            b.extend_from_slice(&r.decided_at_us.to_le_bytes());
        }
        TraceEvent::ProofStored {
            overlay,
            uid_key,
            recovered,
        } => {
            b.push(6);
            b.push(*overlay);
            b.extend_from_slice(&uid_key.0.to_le_bytes());
            b.push(*recovered as u8);
        }
        TraceEvent::RecoverySent { overlay, uid_key } => {
            b.push(7);
            b.push(*overlay);
            b.extend_from_slice(&uid_key.0.to_le_bytes());
        }
        TraceEvent::ReplayRejected => b.push(8),
        TraceEvent::DecodeDrop => b.push(9),
        TraceEvent::TtlDrop { kind } => {
            b.push(10);
            b.push(*kind);
        }
        TraceEvent::RouteStuck { overlay, key } => {
            b.push(11);
            b.push(*overlay);
            b.extend_from_slice(&key.0.to_le_bytes());
        }
        TraceEvent::JoinStuck { overlay } => {
            b.push(12);
            b.push(*overlay);
        }
        TraceEvent::PartitionSuspected { overlay } => {
            b.push(13);
            b.push(*overlay);
        }
    }
    b
}
