//! Device engine: the complete per-device protocol state machine.
//!
//! The engine is pure with respect to time and transport: callers feed it
//! frames and timer expirations, it returns [`Effect`]s (frames to send,
//! timers to arm, trace events). The same engine runs under the
//! deterministic simulator and under unit tests that hand-deliver frames.
//!
//! Lifecycle: a provisioned device generates one DH identity per overlay,
//! runs the certification exchange against an introducer, then joins every
//! overlay through routed lookups. It becomes fully operational only when
//! every overlay has granted it membership; from then on it stabilizes its
//! rings, hosts proofs for the device ids it is responsible for, and takes
//! part in attestation as verifier, prover and proof host.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::attest::{decide, draw_target, AttestConfig, Session, SlotState, Verdict, VerdictRecord};
use crate::crypto::{
    fresh_nonce, measure, oid_ring, report_hash, sha256_parts, uid_ring, verify_certificate,
    Certificate, DetRng, DeviceCredentials, DhParams, Nonce, OidKeypair, Proof, RsaPublic,
    SuiteKind, PROOF_BYTES, SECRET_BYTES,
};
use crate::ring::{Closure, OverlayRouting, RingId, Space};
use crate::wire::{
    cert_frame_len, decode_routine, encode_certification, encode_routine, open_certification,
    peek_certification, rewrap, AlertReason, CertStep, JoinPurpose, OidRecord, Payload,
    RoutineFrame, RoutineMsg, WireError, OID_RECORD_BYTES,
};

/// Device-wide lifecycle states, in order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum GlobalStatus {
    /// Provisioned, identities not yet generated or announced.
    DeviceSetting,
    /// Identities generated, no member vouches for the device yet.
    DeviceUnknown,
    /// Certificates exchanged with a member; joining overlays.
    DeviceCertified,
    /// Member of every overlay.
    MemberAndRunning,
}

/// Per-overlay membership phase.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OverlayPhase {
    /// Not yet started.
    Idle,
    /// Routed lookup for the own key in flight.
    Joining,
    /// Successor known, waiting for the stored-proof handover and the
    /// membership grant. The predecessor pointer stays empty: the device
    /// answers for no arc yet.
    NonMember,
    Member,
}

#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub space: Space,
    /// Successor list length.
    pub s: usize,
    /// Overlay count.
    pub o: usize,
    pub suite: SuiteKind,
    pub params: DhParams,
    pub stabilize_every_us: u64,
    /// Timeout for one-hop replies.
    pub reply_timeout_us: u64,
    /// Timeout for replies to routed requests.
    pub routed_timeout_us: u64,
    /// Hop budget for routed messages.
    pub hop_budget: u8,
    pub refresh_fingers: bool,
    pub attest: AttestConfig,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            space: Space::new(64),
            s: 2,
            o: 3,
            suite: SuiteKind::Test,
            params: DhParams::sim_default(),
            stabilize_every_us: 1_000_000,
            reply_timeout_us: 150_000,
            routed_timeout_us: 1_500_000,
            hop_budget: 40,
            refresh_fingers: true,
            attest: AttestConfig::default(),
        }
    }
}

/// Timers the engine arms; the scheduler hands them back at expiry.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum TimerToken {
    Stabilize,
    AttestTick,
    /// Reply window for the request whose session nonce this is.
    Reply(Nonce),
}

/// What the engine asks its host to do.
#[derive(Clone, Debug)]
pub enum Effect {
    Send { to: u32, frame: Vec<u8> },
    Timer { at_us: u64, token: TimerToken },
    Trace(TraceEvent),
}

/// Selective observability events; the simulator records them for metrics
/// and assertions.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceEvent {
    Status { status: GlobalStatus },
    Phase { overlay: u8, phase: OverlayPhase },
    /// Raised by the device that confirmed a member vanished.
    Alert { overlay: u8, subject: RingId },
    AlertReceived { overlay: u8, subject: RingId },
    Verdict(VerdictRecord),
    /// A proof was written into this device's store.
    ProofStored {
        overlay: u8,
        uid_key: RingId,
        recovered: bool,
    },
    /// Verifier pushed an elected proof toward a blank overlay.
    RecoverySent { overlay: u8, uid_key: RingId },
    ReplayRejected,
    /// A frame failed to decode and was dropped (tampering or stale tables).
    DecodeDrop,
    /// Routed frame ran out of hops at this device.
    TtlDrop { kind: u8 },
    /// No next hop known for a routed key.
    RouteStuck { overlay: u8, key: RingId },
    JoinStuck { overlay: u8 },
    /// Successor list exhausted: the overlay ring is unreachable.
    PartitionSuspected { overlay: u8 },
}

/// Outstanding request state, keyed by session nonce.
#[derive(Clone, Debug)]
enum Pending {
    Stabilize {
        overlay: u8,
        succ: RingId,
        suspect: Option<RingId>,
        /// One unanswered stabilize is retried before the successor is
        /// declared gone; a single lost frame must not reshape the ring.
        retried: bool,
    },
    Join { overlay: u8 },
    Refresh { overlay: u8 },
    /// Liveness probe of a reported-dead predecessor; alert goes back to
    /// the reporter when the probe also fails.
    ProbeSuspect {
        overlay: u8,
        suspect: RingId,
        report_to: OidRecord,
    },
    /// Attestation challenge awaiting the prover's report.
    Report,
    ProofQuery { overlay: u8 },
    CertExchange,
}

/// One overlay's complete local state.
#[derive(Clone, Debug)]
pub struct Overlay {
    pub idx: u8,
    pub kp: OidKeypair,
    pub record: OidRecord,
    pub routing: OverlayRouting<OidRecord>,
    pub phase: OverlayPhase,
    pub pred_last_seen_us: u64,
    /// Proofs this device hosts: its arc of the id space.
    pub proofs: BTreeMap<RingId, Proof>,
    /// Proofs handed over to a joining predecessor, kept until it reports
    /// membership. Answerable, but no longer owned.
    pub leftovers: BTreeMap<RingId, Proof>,
    pub leftover_heir: Option<RingId>,
    /// Whether the stored-proof handover from the successor completed.
    pub proofs_ready: bool,
    /// Join entry points.
    pub entries: Vec<OidRecord>,
    pub join_attempts: u32,
}

impl Overlay {
    fn new(cfg: &NodeConfig, idx: u8, kp: OidKeypair, addr: u32) -> Self {
        let ring = oid_ring(cfg.space, &kp.public);
        let record = OidRecord {
            dh: kp.public,
            addr,
            ring,
        };
        Overlay {
            idx,
            kp,
            record,
            routing: OverlayRouting::new(cfg.space, idx, ring, cfg.s),
            phase: OverlayPhase::Idle,
            pred_last_seen_us: 0,
            proofs: BTreeMap::new(),
            leftovers: BTreeMap::new(),
            leftover_heir: None,
            proofs_ready: false,
            entries: Vec::new(),
            join_attempts: 0,
        }
    }

    /// Whether this device answers for `key`. A member owns `(pred, self]`;
    /// a device whose successor is itself owns the whole ring; everyone else
    /// owns nothing and forwards.
    pub fn is_responsible(&self, space: Space, key: RingId) -> bool {
        if let Some(p) = &self.routing.predecessor {
            return space.in_interval(key, p.ring, self.record.ring, Closure::OpenClosed);
        }
        match self.routing.successor() {
            Some(s) => s.ring == self.record.ring,
            None => false,
        }
    }
}

/// Byte counts of one overlay's stored state; every term is the length of a
/// buffer the device actually holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlayMemory {
    pub secret: usize,
    pub own_record: usize,
    pub pred_slot: usize,
    pub successors: usize,
    pub fingers: usize,
    pub proofs: usize,
}

impl OverlayMemory {
    pub fn total(&self) -> usize {
        self.secret + self.own_record + self.pred_slot + self.successors + self.fingers + self.proofs
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryReport {
    /// Long-term credentials: device id, key records, certificate record.
    pub credentials: usize,
    pub overlays: Vec<OverlayMemory>,
}

impl MemoryReport {
    pub fn total(&self) -> usize {
        self.credentials + self.overlays.iter().map(|o| o.total()).sum::<usize>()
    }
}

/// Construction-time identity of one device.
#[derive(Clone, Debug)]
pub struct DeviceInit {
    pub device: u32,
    pub addr: u32,
    pub seed: u64,
    pub creds: DeviceCredentials,
    /// Monitored software region; measurements hash it.
    pub region: Vec<u8>,
    pub ca_public: RsaPublic,
    pub ca_id: u64,
}

/// Converged-bootstrap state for one overlay.
#[derive(Clone, Debug)]
pub struct ConvergedOverlay {
    pub pred: Option<OidRecord>,
    pub successors: Vec<OidRecord>,
    pub fingers: Vec<OidRecord>,
    pub proofs: BTreeMap<RingId, Proof>,
}

const REPLAY_WINDOW: usize = 256;
const MAX_JOIN_ATTEMPTS: u32 = 12;

pub struct DeviceEngine {
    pub cfg: NodeConfig,
    pub device: u32,
    pub addr: u32,
    pub creds: DeviceCredentials,
    pub ca_public: RsaPublic,
    pub ca_id: u64,
    /// Ring key the device's proof is stored under, identical per overlay.
    pub uid_key: RingId,
    pub region: Vec<u8>,
    clean_region: Vec<u8>,
    /// When set, this device lies to proof queries with a self-consistent
    /// wrong value.
    pub corrupt_host: bool,
    /// Lying hosts with this flag share one fabricated value per subject
    /// instead of each inventing their own.
    pub collude_host: bool,
    pub status: GlobalStatus,
    pub overlays: Vec<Overlay>,
    rng: DetRng,
    pending: BTreeMap<Nonce, Pending>,
    replay_seen: BTreeSet<[u8; 16]>,
    replay_order: VecDeque<[u8; 16]>,
    pub session: Option<Session>,
    introducer: Option<(u32, Certificate)>,
    cert_nonce: Option<Nonce>,
}

impl DeviceEngine {
    pub fn new(cfg: NodeConfig, init: DeviceInit) -> Self {
        let mut rng = crate::crypto::derive_rng(init.seed, init.device, b"device");
        let overlays = (0..cfg.o)
            .map(|i| {
                let kp = OidKeypair::generate(&cfg.params, &mut rng);
                Overlay::new(&cfg, i as u8, kp, init.addr)
            })
            .collect();
        let uid_key = uid_ring(cfg.space, &init.creds.uid);
        DeviceEngine {
            cfg,
            device: init.device,
            addr: init.addr,
            creds: init.creds,
            ca_public: init.ca_public,
            ca_id: init.ca_id,
            uid_key,
            clean_region: init.region.clone(),
            region: init.region,
            corrupt_host: false,
            collude_host: false,
            status: GlobalStatus::DeviceSetting,
            overlays,
            rng,
            pending: BTreeMap::new(),
            replay_seen: BTreeSet::new(),
            replay_order: VecDeque::new(),
            session: None,
            introducer: None,
            cert_nonce: None,
        }
    }

    pub fn record(&self, overlay: usize) -> OidRecord {
        self.overlays[overlay].record
    }

    pub fn records(&self) -> Vec<OidRecord> {
        self.overlays.iter().map(|o| o.record).collect()
    }

    /// Fresh measurement of the monitored region, as a prover reports it.
    pub fn current_measurement(&self) -> Proof {
        measure(&self.region)
    }

    /// Measurement of the provisioned clean region: the golden value that
    /// gets stored in the overlays.
    pub fn golden_proof(&self) -> Proof {
        measure(&self.clean_region)
    }

    pub fn tamper_region(&mut self, byte: usize, mask: u8) {
        let n = self.region.len();
        self.region[byte % n] ^= if mask == 0 { 1 } else { mask };
    }

    pub fn hard_reset(&mut self) {
        self.region = self.clean_region.clone();
    }

    /// Removes a hosted proof, as a storage-loss attack does. Returns
    /// whether one was present.
    pub fn drop_stored_proof(&mut self, overlay: usize, uid_key: RingId) -> bool {
        self.overlays[overlay].proofs.remove(&uid_key).is_some()
            | self.overlays[overlay].leftovers.remove(&uid_key).is_some()
    }

    /// Byte accounting of everything the device stores long-term.
    pub fn memory(&self) -> MemoryReport {
        MemoryReport {
            credentials: self.creds.stored_bytes(),
            overlays: self
                .overlays
                .iter()
                .map(|ov| OverlayMemory {
                    secret: SECRET_BYTES,
                    own_record: OID_RECORD_BYTES,
                    pred_slot: OID_RECORD_BYTES,
                    successors: OID_RECORD_BYTES * ov.routing.successors().len(),
                    fingers: OID_RECORD_BYTES * ov.routing.finger_count(),
                    proofs: PROOF_BYTES * ov.proofs.len(),
                })
                .collect(),
        }
    }

    // -- startup ------------------------------------------------------------

    fn set_status(&mut self, status: GlobalStatus, out: &mut Vec<Effect>) {
        if self.status != status {
            self.status = status;
            out.push(Effect::Trace(TraceEvent::Status { status }));
        }
    }

    fn set_phase(&mut self, overlay: usize, phase: OverlayPhase, out: &mut Vec<Effect>) {
        if self.overlays[overlay].phase != phase {
            self.overlays[overlay].phase = phase;
            out.push(Effect::Trace(TraceEvent::Phase {
                overlay: overlay as u8,
                phase,
            }));
        }
    }

    fn schedule_base_timers(&mut self, now: u64, out: &mut Vec<Effect>) {
        // Staggered start so swarm-wide ticks never synchronize.
        let jitter = self.rng.next_u64() % self.cfg.stabilize_every_us;
        out.push(Effect::Timer {
            at_us: now + jitter,
            token: TimerToken::Stabilize,
        });
        if self.cfg.attest.enabled {
            let jitter = self.rng.next_u64() % self.cfg.attest.tick_every_us;
            out.push(Effect::Timer {
                at_us: now + jitter,
                token: TimerToken::AttestTick,
            });
        }
    }

    /// First device of a swarm: sole member of every overlay.
    pub fn start_bootstrap(&mut self, now: u64, out: &mut Vec<Effect>) {
        self.set_status(GlobalStatus::DeviceUnknown, out);
        self.set_status(GlobalStatus::DeviceCertified, out);
        for i in 0..self.overlays.len() {
            let rec = self.overlays[i].record;
            self.overlays[i].routing.set_successors(rec, &[]);
            self.set_phase(i, OverlayPhase::Member, out);
        }
        self.set_status(GlobalStatus::MemberAndRunning, out);
        let golden = self.golden_proof();
        for i in 0..self.overlays.len() {
            self.store_own_proof(i, golden, now, out);
        }
        self.schedule_base_timers(now, out);
    }

    /// Device with pre-obtained entry points (certification already done
    /// out of band): joins every overlay.
    pub fn start_certified(
        &mut self,
        now: u64,
        entries: Vec<Vec<OidRecord>>,
        out: &mut Vec<Effect>,
    ) {
        assert_eq!(entries.len(), self.overlays.len());
        self.set_status(GlobalStatus::DeviceUnknown, out);
        self.set_status(GlobalStatus::DeviceCertified, out);
        for (i, e) in entries.into_iter().enumerate() {
            assert!(!e.is_empty(), "certified start needs entry points");
            self.overlays[i].entries = e;
            self.begin_join(i, now, out);
        }
        self.schedule_base_timers(now, out);
    }

    /// Device introduced to one member: runs the certification exchange,
    /// then joins through the records the member returns.
    pub fn start_introduced(
        &mut self,
        now: u64,
        introducer_addr: u32,
        introducer_cert: Certificate,
        out: &mut Vec<Effect>,
    ) {
        self.set_status(GlobalStatus::DeviceUnknown, out);
        self.introducer = Some((introducer_addr, introducer_cert));
        self.send_cert_offer(now, out);
        self.schedule_base_timers(now, out);
    }

    /// Direct state injection for bulk-built converged networks.
    pub fn install_converged(
        &mut self,
        now: u64,
        per_overlay: Vec<ConvergedOverlay>,
        out: &mut Vec<Effect>,
    ) {
        assert_eq!(per_overlay.len(), self.overlays.len());
        self.set_status(GlobalStatus::DeviceUnknown, out);
        self.set_status(GlobalStatus::DeviceCertified, out);
        for (i, st) in per_overlay.into_iter().enumerate() {
            let ov = &mut self.overlays[i];
            if let Some(head) = st.successors.first().cloned() {
                ov.routing.set_successors(head, &st.successors[1..]);
            } else {
                let rec = ov.record;
                ov.routing.set_successors(rec, &[]);
            }
            ov.routing.predecessor = st.pred;
            ov.pred_last_seen_us = now;
            ov.routing.install_fingers(st.fingers);
            ov.proofs = st.proofs;
            ov.proofs_ready = true;
            self.set_phase(i, OverlayPhase::Member, out);
        }
        self.set_status(GlobalStatus::MemberAndRunning, out);
        self.schedule_base_timers(now, out);
    }

    // -- certification exchange ----------------------------------------------

    fn send_cert_offer(&mut self, now: u64, out: &mut Vec<Effect>) {
        let (addr, cert) = match &self.introducer {
            Some(x) => x.clone(),
            None => return,
        };
        if verify_certificate(&cert, &self.ca_public, self.ca_id, now).is_err() {
            return;
        }
        let nonce = fresh_nonce(&mut self.rng);
        self.cert_nonce = Some(nonce);
        let frame = encode_certification(
            CertStep::Offer,
            &self.creds.certificate,
            &nonce,
            &self.records(),
            &cert.subject_public(),
            &self.creds.private,
            &mut self.rng,
        )
        .expect("offer fits the frame");
        out.push(Effect::Send { to: addr, frame });
        self.pending.insert(nonce, Pending::CertExchange);
        out.push(Effect::Timer {
            at_us: now + self.cfg.routed_timeout_us,
            token: TimerToken::Reply(nonce),
        });
    }

    fn on_certification(&mut self, now: u64, raw: &[u8], out: &mut Vec<Effect>) {
        let (step, cert, o) = match peek_certification(raw) {
            Ok(x) => x,
            Err(_) => {
                out.push(Effect::Trace(TraceEvent::DecodeDrop));
                return;
            }
        };
        if o != self.cfg.o
            || verify_certificate(&cert, &self.ca_public, self.ca_id, now).is_err()
        {
            out.push(Effect::Trace(TraceEvent::DecodeDrop));
            return;
        }
        let payload =
            match open_certification(raw, &cert.subject_public(), &self.creds.private) {
                Ok(p) => p,
                Err(_) => {
                    out.push(Effect::Trace(TraceEvent::DecodeDrop));
                    return;
                }
            };
        match step {
            CertStep::Offer => {
                // Only a certified device vouches for newcomers.
                if self.status < GlobalStatus::DeviceCertified {
                    return;
                }
                let reply = encode_certification(
                    CertStep::Accept,
                    &self.creds.certificate,
                    &payload.nonce,
                    &self.records(),
                    &cert.subject_public(),
                    &self.creds.private,
                    &mut self.rng,
                )
                .expect("accept fits the frame");
                let to = payload.oids[0].addr;
                out.push(Effect::Send { to, frame: reply });
            }
            CertStep::Accept => {
                if self.cert_nonce != Some(payload.nonce) {
                    return;
                }
                self.pending.remove(&payload.nonce);
                self.cert_nonce = None;
                self.set_status(GlobalStatus::DeviceCertified, out);
                for (i, rec) in payload.oids.iter().enumerate() {
                    self.overlays[i].entries = alloc::vec![*rec];
                    self.begin_join(i, now, out);
                }
            }
        }
    }

    // -- join ------------------------------------------------------------------

    fn begin_join(&mut self, overlay: usize, now: u64, out: &mut Vec<Effect>) {
        self.set_phase(overlay, OverlayPhase::Joining, out);
        let ov = &self.overlays[overlay];
        if ov.entries.is_empty() {
            // Nobody to join through: sole member.
            let rec = ov.record;
            self.overlays[overlay].routing.set_successors(rec, &[]);
            self.set_phase(overlay, OverlayPhase::Member, out);
            self.update_global_membership(out);
            let golden = self.golden_proof();
            self.store_own_proof(overlay, golden, now, out);
            return;
        }
        let entry = ov.entries[ov.join_attempts as usize % ov.entries.len()];
        let nonce = fresh_nonce(&mut self.rng);
        let payload = Payload::JoinRequest {
            purpose: JoinPurpose::Join,
            key: self.overlays[overlay].record.ring,
            ttl: self.cfg.hop_budget,
            origin: self.overlays[overlay].record,
        };
        self.pending.insert(
            nonce,
            Pending::Join {
                overlay: overlay as u8,
            },
        );
        out.push(Effect::Timer {
            at_us: now + self.cfg.routed_timeout_us,
            token: TimerToken::Reply(nonce),
        });
        self.send_to(now, overlay, &entry, RoutineMsg { nonce, payload }, out);
    }

    fn regenerate_identity(&mut self, overlay: usize) {
        let kp = OidKeypair::generate(&self.cfg.params, &mut self.rng);
        let ring = oid_ring(self.cfg.space, &kp.public);
        let ov = &mut self.overlays[overlay];
        ov.record = OidRecord {
            dh: kp.public,
            addr: self.addr,
            ring,
        };
        ov.kp = kp;
        ov.routing = OverlayRouting::new(self.cfg.space, overlay as u8, ring, self.cfg.s);
    }

    fn update_global_membership(&mut self, out: &mut Vec<Effect>) {
        if self.status == GlobalStatus::MemberAndRunning {
            return;
        }
        if self
            .overlays
            .iter()
            .all(|o| o.phase == OverlayPhase::Member)
        {
            self.set_status(GlobalStatus::MemberAndRunning, out);
        }
    }

    /// Places the device's own golden proof at the responsible member of
    /// one overlay.
    fn store_own_proof(&mut self, overlay: usize, golden: Proof, now: u64, out: &mut Vec<Effect>) {
        let payload = Payload::ProofStore {
            key: self.uid_key,
            ttl: self.cfg.hop_budget,
            uid_key: self.uid_key,
            proof: golden,
        };
        let nonce = fresh_nonce(&mut self.rng);
        self.route(now, overlay, self.uid_key, RoutineMsg { nonce, payload }, out);
    }

    // -- sending ---------------------------------------------------------------

    /// Sends one frame to a specific record, or short-circuits to local
    /// handling when the record is this device itself.
    fn send_to(
        &mut self,
        now: u64,
        overlay: usize,
        to: &OidRecord,
        msg: RoutineMsg,
        out: &mut Vec<Effect>,
    ) {
        let ov = &self.overlays[overlay];
        if to.ring == ov.record.ring {
            let frame = RoutineFrame {
                overlay: overlay as u8,
                source: ov.record,
                sender: ov.record,
                msg,
            };
            self.handle_delivered(now, frame, out);
            return;
        }
        let frame = encode_routine(
            self.cfg.suite,
            &self.cfg.params,
            self.cfg.s,
            overlay as u8,
            &to.dh,
            &self.overlays[overlay].record,
            &self.overlays[overlay].kp,
            &self.overlays[overlay].record,
            &msg,
            &mut self.rng,
        );
        match frame {
            Ok(f) => out.push(Effect::Send { to: to.addr, frame: f }),
            Err(_) => out.push(Effect::Trace(TraceEvent::DecodeDrop)),
        }
    }

    /// Routes a message toward the member responsible for `key`, handling
    /// locally when that member is this device.
    fn route(&mut self, now: u64, overlay: usize, key: RingId, msg: RoutineMsg, out: &mut Vec<Effect>) {
        let space = self.cfg.space;
        let ov = &self.overlays[overlay];
        if ov.is_responsible(space, key) {
            let frame = RoutineFrame {
                overlay: overlay as u8,
                source: ov.record,
                sender: ov.record,
                msg,
            };
            self.handle_delivered(now, frame, out);
            return;
        }
        let next = match ov.routing.lookup_next_hop(key) {
            Some(n) => *n,
            None => {
                out.push(Effect::Trace(TraceEvent::RouteStuck {
                    overlay: overlay as u8,
                    key,
                }));
                return;
            }
        };
        self.send_to(now, overlay, &next, msg, out);
    }

    // -- frame intake ------------------------------------------------------------

    pub fn on_frame(&mut self, now: u64, raw: &[u8], out: &mut Vec<Effect>) {
        if raw.len() < 2 {
            out.push(Effect::Trace(TraceEvent::DecodeDrop));
            return;
        }
        if raw[1] >= 0xF0 {
            if raw.len() == cert_frame_len(self.cfg.o) {
                self.on_certification(now, raw, out);
            } else {
                out.push(Effect::Trace(TraceEvent::DecodeDrop));
            }
            return;
        }
        let overlay = raw[1] as usize;
        if overlay >= self.overlays.len() {
            out.push(Effect::Trace(TraceEvent::DecodeDrop));
            return;
        }
        // Frame-level replay window over header nonces.
        if raw.len() > 18 {
            let hnonce: [u8; 16] = raw[2..18].try_into().unwrap();
            if self.replay_seen.contains(&hnonce) {
                out.push(Effect::Trace(TraceEvent::ReplayRejected));
                return;
            }
            self.replay_seen.insert(hnonce);
            self.replay_order.push_back(hnonce);
            if self.replay_order.len() > REPLAY_WINDOW {
                if let Some(old) = self.replay_order.pop_front() {
                    self.replay_seen.remove(&old);
                }
            }
        }
        let frame = match decode_routine(
            self.cfg.suite,
            &self.cfg.params,
            self.cfg.s,
            &self.overlays[overlay].kp,
            raw,
        ) {
            Ok(f) => f,
            Err(_) => {
                out.push(Effect::Trace(TraceEvent::DecodeDrop));
                return;
            }
        };

        // Routed payloads are forwarded until they reach the responsible
        // member; everything else is for this device by construction.
        if let Some((key, _ttl)) = frame.msg.payload.routing() {
            let space = self.cfg.space;
            if !self.overlays[overlay].is_responsible(space, key) {
                // A handed-over proof is still answerable while its heir
                // joins, even though the arc is no longer ours.
                if let Payload::ProofQuery { uid_key, origin, .. } = &frame.msg.payload {
                    if let Some(p) = self.overlays[overlay].leftovers.get(uid_key).copied() {
                        let reply = Payload::ProofResponse {
                            uid_key: *uid_key,
                            present: true,
                            proof: p,
                            echo: frame.msg.nonce,
                        };
                        let origin = *origin;
                        let nonce = fresh_nonce(&mut self.rng);
                        self.send_to(now, overlay, &origin, RoutineMsg { nonce, payload: reply }, out);
                        return;
                    }
                }
                self.forward(now, overlay, frame, out);
                return;
            }
        }
        self.handle_delivered(now, frame, out);
    }

    fn forward(&mut self, _now: u64, overlay: usize, frame: RoutineFrame, out: &mut Vec<Effect>) {
        let key = frame.msg.payload.routing().expect("routed").0;
        let next = match self.overlays[overlay].routing.lookup_next_hop(key) {
            Some(n) => *n,
            None => {
                out.push(Effect::Trace(TraceEvent::RouteStuck {
                    overlay: overlay as u8,
                    key,
                }));
                return;
            }
        };
        let rewrapped = rewrap(
            self.cfg.suite,
            &self.cfg.params,
            self.cfg.s,
            &frame,
            &self.overlays[overlay].kp,
            &self.overlays[overlay].record,
            &next.dh,
            &mut self.rng,
        );
        match rewrapped {
            Ok(f) => out.push(Effect::Send { to: next.addr, frame: f }),
            Err(WireError::TtlExpired) => out.push(Effect::Trace(TraceEvent::TtlDrop {
                kind: frame.msg.payload.kind(),
            })),
            Err(_) => out.push(Effect::Trace(TraceEvent::DecodeDrop)),
        }
    }

    // -- delivered payloads --------------------------------------------------------

    fn handle_delivered(&mut self, now: u64, frame: RoutineFrame, out: &mut Vec<Effect>) {
        let overlay = frame.overlay as usize;
        let sender = frame.sender;
        let source = frame.source;
        let nonce = frame.msg.nonce;
        match frame.msg.payload {
            Payload::JoinRequest { purpose, key, origin, .. } => {
                let collision =
                    purpose == JoinPurpose::Join && key == self.overlays[overlay].record.ring;
                let ov = &self.overlays[overlay];
                let reply = Payload::SuccessorResponse {
                    pred: ov.routing.predecessor,
                    successors: ov.routing.successors().to_vec(),
                    collision,
                    grant: false,
                    echo: nonce,
                };
                let n = fresh_nonce(&mut self.rng);
                self.send_to(now, overlay, &origin, RoutineMsg { nonce: n, payload: reply }, out);
            }
            Payload::Stabilize {
                member,
                proofs_ready,
                suspect,
            } => {
                // A reported-dead member that is our predecessor gets one
                // direct probe before we believe it.
                if let (Some(x), Some(p)) = (suspect, self.overlays[overlay].routing.predecessor) {
                    if p.ring == x && !self.pending.values().any(|pend| matches!(pend, Pending::ProbeSuspect { suspect: s2, .. } if *s2 == x)) {
                        let probe_nonce = fresh_nonce(&mut self.rng);
                        let probe = Payload::Stabilize {
                            member: self.overlays[overlay].phase == OverlayPhase::Member,
                            proofs_ready: self.overlays[overlay].proofs_ready,
                            suspect: None,
                        };
                        self.pending.insert(
                            probe_nonce,
                            Pending::ProbeSuspect {
                                overlay: overlay as u8,
                                suspect: x,
                                report_to: sender,
                            },
                        );
                        out.push(Effect::Timer {
                            at_us: now + self.cfg.reply_timeout_us,
                            token: TimerToken::Reply(probe_nonce),
                        });
                        self.send_to(
                            now,
                            overlay,
                            &p,
                            RoutineMsg {
                                nonce: probe_nonce,
                                payload: probe,
                            },
                            out,
                        );
                    }
                }
                let ov = &self.overlays[overlay];
                let is_pred = ov
                    .routing
                    .predecessor
                    .as_ref()
                    .is_some_and(|p| p.ring == sender.ring);
                if is_pred {
                    self.overlays[overlay].pred_last_seen_us = now;
                }
                let grant = self.overlays[overlay].phase == OverlayPhase::Member
                    && is_pred
                    && proofs_ready;
                // A still-joining predecessor that lost the handover frames
                // gets the transfer again.
                if is_pred && !member && !proofs_ready {
                    self.send_handover(now, overlay, sender, out);
                }
                let ov = &self.overlays[overlay];
                let reply = Payload::SuccessorResponse {
                    pred: ov.routing.predecessor,
                    successors: ov.routing.successors().to_vec(),
                    collision: false,
                    grant,
                    echo: nonce,
                };
                let n = fresh_nonce(&mut self.rng);
                self.send_to(now, overlay, &sender, RoutineMsg { nonce: n, payload: reply }, out);
            }
            Payload::Notify { member } => {
                self.on_notify(now, overlay, sender, member, out);
            }
            Payload::ProofStore { uid_key, proof, .. } => {
                self.overlays[overlay].proofs.insert(uid_key, proof);
                out.push(Effect::Trace(TraceEvent::ProofStored {
                    overlay: overlay as u8,
                    uid_key,
                    recovered: false,
                }));
            }
            Payload::RecoveryStore { uid_key, proof, .. } => {
                self.overlays[overlay].proofs.insert(uid_key, proof);
                out.push(Effect::Trace(TraceEvent::ProofStored {
                    overlay: overlay as u8,
                    uid_key,
                    recovered: true,
                }));
            }
            Payload::ProofQuery { uid_key, origin, .. } => {
                let stored = self.overlays[overlay]
                    .proofs
                    .get(&uid_key)
                    .or_else(|| self.overlays[overlay].leftovers.get(&uid_key))
                    .copied();
                let (present, proof) = if self.corrupt_host {
                    (true, self.fabricated_proof(uid_key))
                } else {
                    match stored {
                        Some(p) => (true, p),
                        None => (false, Proof([0u8; PROOF_BYTES])),
                    }
                };
                let reply = Payload::ProofResponse {
                    uid_key,
                    present,
                    proof,
                    echo: nonce,
                };
                let n = fresh_nonce(&mut self.rng);
                self.send_to(now, overlay, &origin, RoutineMsg { nonce: n, payload: reply }, out);
            }
            Payload::ProofsUpdate {
                remaining, record, ..
            } => {
                if let Some((k, p)) = record {
                    self.overlays[overlay].proofs.insert(k, p);
                }
                if remaining == 0 && self.overlays[overlay].phase == OverlayPhase::NonMember {
                    self.overlays[overlay].proofs_ready = true;
                }
            }
            Payload::AttestChallenge { origin, .. } => {
                let proof = self.current_measurement();
                let digest = report_hash(&proof, &nonce);
                let reply = Payload::AttestReport {
                    uid_key: self.uid_key,
                    digest,
                    echo: nonce,
                };
                let n = fresh_nonce(&mut self.rng);
                self.send_to(now, overlay, &origin, RoutineMsg { nonce: n, payload: reply }, out);
            }
            Payload::AttestReport {
                uid_key,
                digest,
                echo,
            } => {
                if matches!(self.pending.get(&echo), Some(Pending::Report)) {
                    self.pending.remove(&echo);
                    self.on_report(now, uid_key, digest, out);
                }
            }
            Payload::ProofResponse {
                present,
                proof,
                echo,
                ..
            } => {
                if let Some(Pending::ProofQuery { overlay: ov }) = self.pending.get(&echo).cloned()
                {
                    self.pending.remove(&echo);
                    self.on_query_answer(
                        now,
                        ov as usize,
                        if present {
                            SlotState::Got(proof)
                        } else {
                            SlotState::NoProof
                        },
                        out,
                    );
                }
            }
            Payload::SuccessorResponse {
                pred,
                successors,
                collision,
                grant,
                echo,
            } => {
                let pending = match self.pending.get(&echo).cloned() {
                    Some(p) => p,
                    None => return,
                };
                self.pending.remove(&echo);
                self.on_successor_response(
                    now, pending, source, pred, successors, collision, grant, out,
                );
            }
            Payload::Alert { subject, .. } => {
                out.push(Effect::Trace(TraceEvent::AlertReceived {
                    overlay: overlay as u8,
                    subject,
                }));
            }
        }
    }

    fn on_notify(
        &mut self,
        now: u64,
        overlay: usize,
        sender: OidRecord,
        sender_is_member: bool,
        out: &mut Vec<Effect>,
    ) {
        // Heir finished joining: the handed-over records are its now.
        if sender_is_member && self.overlays[overlay].leftover_heir == Some(sender.ring) {
            self.overlays[overlay].leftovers.clear();
            self.overlays[overlay].leftover_heir = None;
        }
        // Predecessor management runs only on members; a joining device
        // answers for no arc and must not accept one.
        if self.overlays[overlay].phase != OverlayPhase::Member {
            return;
        }
        let space = self.cfg.space;
        let self_ring = self.overlays[overlay].record.ring;
        if sender.ring == self_ring {
            return;
        }
        // A singleton learns its first peer: the ring is two devices now.
        let succ_is_self = self.overlays[overlay]
            .routing
            .successor()
            .is_some_and(|s| s.ring == self_ring);
        if succ_is_self {
            self.overlays[overlay].routing.set_successors(sender, &[]);
            self.send_notify(now, overlay, out);
        }
        let (adopt, changed) = match &self.overlays[overlay].routing.predecessor {
            None => (true, true),
            Some(p) if p.ring == sender.ring => (true, false),
            Some(p) => {
                let closer = space.in_interval(sender.ring, p.ring, self_ring, Closure::OpenOpen);
                let stale = now.saturating_sub(self.overlays[overlay].pred_last_seen_us)
                    > self.cfg.stabilize_every_us * 5 / 2;
                (closer || stale, true)
            }
        };
        if !adopt {
            return;
        }
        self.overlays[overlay].pred_last_seen_us = now;
        if changed {
            self.overlays[overlay].routing.predecessor = Some(sender);
            self.send_handover(now, overlay, sender, out);
        }
    }

    /// Hands over every stored record outside the own arc to the new
    /// predecessor. One record per frame; the final frame carries zero
    /// remaining. Idempotent, so loss is repaired by resending.
    fn send_handover(&mut self, now: u64, overlay: usize, pred: OidRecord, out: &mut Vec<Effect>) {
        let space = self.cfg.space;
        let self_ring = self.overlays[overlay].record.ring;
        let moves: Vec<RingId> = self.overlays[overlay]
            .proofs
            .keys()
            .filter(|k| !space.in_interval(**k, pred.ring, self_ring, Closure::OpenClosed))
            .copied()
            .collect();
        for k in &moves {
            if let Some(p) = self.overlays[overlay].proofs.remove(k) {
                self.overlays[overlay].leftovers.insert(*k, p);
            }
        }
        self.overlays[overlay].leftover_heir = Some(pred.ring);
        let records: Vec<(RingId, Proof)> = self.overlays[overlay]
            .leftovers
            .iter()
            .map(|(k, v)| (*k, *v))
            .collect();
        let total = records.len();
        if total == 0 {
            let n = fresh_nonce(&mut self.rng);
            let payload = Payload::ProofsUpdate {
                seq: 0,
                remaining: 0,
                record: None,
            };
            self.send_to(now, overlay, &pred, RoutineMsg { nonce: n, payload }, out);
            return;
        }
        for (i, (k, p)) in records.into_iter().enumerate() {
            let n = fresh_nonce(&mut self.rng);
            let payload = Payload::ProofsUpdate {
                seq: i as u16,
                remaining: (total - 1 - i) as u16,
                record: Some((k, p)),
            };
            self.send_to(now, overlay, &pred, RoutineMsg { nonce: n, payload }, out);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_successor_response(
        &mut self,
        now: u64,
        pending: Pending,
        source: OidRecord,
        resp_pred: Option<OidRecord>,
        successors: Vec<OidRecord>,
        collision: bool,
        grant: bool,
        out: &mut Vec<Effect>,
    ) {
        match pending {
            Pending::Join { overlay } => {
                let overlay = overlay as usize;
                if self.overlays[overlay].phase != OverlayPhase::Joining {
                    return;
                }
                if collision {
                    self.regenerate_identity(overlay);
                    self.overlays[overlay].join_attempts += 1;
                    self.begin_join(overlay, now, out);
                    return;
                }
                self.overlays[overlay]
                    .routing
                    .set_successors(source, &successors);
                self.set_phase(overlay, OverlayPhase::NonMember, out);
                let golden = self.golden_proof();
                self.store_own_proof(overlay, golden, now, out);
                // Announce right away instead of waiting a full period: the
                // successor adopts us and starts the handover.
                self.send_notify(now, overlay, out);
            }
            Pending::Stabilize { overlay, succ, .. } => {
                let overlay = overlay as usize;
                // A closer predecessor of our successor supersedes it.
                let space = self.cfg.space;
                let self_ring = self.overlays[overlay].record.ring;
                if let Some(x) = resp_pred {
                    if x.ring != self_ring
                        && space.in_interval(x.ring, self_ring, succ, Closure::OpenOpen)
                    {
                        self.overlays[overlay].routing.adopt_successor(x);
                    } else {
                        self.overlays[overlay].routing.set_successors(source, &successors);
                    }
                } else {
                    self.overlays[overlay].routing.set_successors(source, &successors);
                }
                if grant && self.overlays[overlay].phase == OverlayPhase::NonMember {
                    self.set_phase(overlay, OverlayPhase::Member, out);
                    self.update_global_membership(out);
                    // The store sent while joining can have crossed a
                    // half-formed arc and died; repeat it now that routing
                    // to this arc is settled. Idempotent.
                    let golden = self.golden_proof();
                    self.store_own_proof(overlay, golden, now, out);
                }
                self.send_notify(now, overlay, out);
            }
            Pending::Refresh { overlay } => {
                self.overlays[overlay as usize].routing.learn(source);
            }
            Pending::ProbeSuspect { .. } => {
                // Suspect answered: alive, nothing to repair.
            }
            Pending::Report | Pending::ProofQuery { .. } | Pending::CertExchange => {}
        }
    }

    fn send_notify(&mut self, now: u64, overlay: usize, out: &mut Vec<Effect>) {
        let ov = &self.overlays[overlay];
        let succ = match ov.routing.successor() {
            Some(s) if s.ring != ov.record.ring => *s,
            _ => return,
        };
        let member = ov.phase == OverlayPhase::Member;
        let n = fresh_nonce(&mut self.rng);
        self.send_to(
            now,
            overlay,
            &succ,
            RoutineMsg {
                nonce: n,
                payload: Payload::Notify { member },
            },
            out,
        );
    }

    // -- timers -----------------------------------------------------------------

    pub fn on_timer(&mut self, now: u64, token: TimerToken, out: &mut Vec<Effect>) {
        match token {
            TimerToken::Stabilize => {
                self.stabilize_round(now, out);
                out.push(Effect::Timer {
                    at_us: now + self.cfg.stabilize_every_us,
                    token: TimerToken::Stabilize,
                });
            }
            TimerToken::AttestTick => {
                self.attest_tick(now, out);
                out.push(Effect::Timer {
                    at_us: now + self.cfg.attest.tick_every_us,
                    token: TimerToken::AttestTick,
                });
            }
            TimerToken::Reply(nonce) => {
                let pending = match self.pending.remove(&nonce) {
                    Some(p) => p,
                    None => return,
                };
                self.on_reply_timeout(now, pending, out);
            }
        }
    }

    /// One stabilize request with its reply window.
    fn send_stabilize(
        &mut self,
        overlay: usize,
        to: OidRecord,
        suspect: Option<RingId>,
        retried: bool,
        now: u64,
        out: &mut Vec<Effect>,
    ) {
        let nonce = fresh_nonce(&mut self.rng);
        let payload = Payload::Stabilize {
            member: self.overlays[overlay].phase == OverlayPhase::Member,
            proofs_ready: self.overlays[overlay].proofs_ready,
            suspect,
        };
        self.pending.insert(
            nonce,
            Pending::Stabilize {
                overlay: overlay as u8,
                succ: to.ring,
                suspect,
                retried,
            },
        );
        out.push(Effect::Timer {
            at_us: now + self.cfg.reply_timeout_us,
            token: TimerToken::Reply(nonce),
        });
        self.send_to(now, overlay, &to, RoutineMsg { nonce, payload }, out);
    }

    fn stabilize_round(&mut self, now: u64, out: &mut Vec<Effect>) {
        for i in 0..self.overlays.len() {
            let phase = self.overlays[i].phase;
            if !matches!(phase, OverlayPhase::NonMember | OverlayPhase::Member) {
                continue;
            }
            let succ = match self.overlays[i].routing.successor() {
                Some(s) if s.ring != self.overlays[i].record.ring => *s,
                _ => continue,
            };
            self.send_stabilize(i, succ, None, false, now, out);
            self.send_notify(now, i, out);

            if self.cfg.refresh_fingers && phase == OverlayPhase::Member {
                let start = self.overlays[i].routing.next_refresh_start();
                if !self.overlays[i].is_responsible(self.cfg.space, start) {
                    let nonce = fresh_nonce(&mut self.rng);
                    let payload = Payload::JoinRequest {
                        purpose: JoinPurpose::Refresh,
                        key: start,
                        ttl: self.cfg.hop_budget,
                        origin: self.overlays[i].record,
                    };
                    self.pending.insert(nonce, Pending::Refresh { overlay: i as u8 });
                    out.push(Effect::Timer {
                        at_us: now + self.cfg.routed_timeout_us,
                        token: TimerToken::Reply(nonce),
                    });
                    self.route(now, i, start, RoutineMsg { nonce, payload }, out);
                }
            }
        }
    }

    fn on_reply_timeout(&mut self, now: u64, pending: Pending, out: &mut Vec<Effect>) {
        match pending {
            Pending::Stabilize {
                overlay,
                succ,
                suspect,
                retried,
            } => {
                let overlay = overlay as usize;
                if !retried {
                    if let Some(rec) = self.overlays[overlay]
                        .routing
                        .successors()
                        .iter()
                        .find(|e| e.ring == succ)
                        .copied()
                    {
                        self.send_stabilize(overlay, rec, suspect, true, now, out);
                        return;
                    }
                }
                let next = self.overlays[overlay].routing.evict(succ).copied();
                match next {
                    Some(c) => {
                        // Tell the replacement about the silent member; it
                        // confirms or clears the suspicion.
                        self.send_stabilize(overlay, c, Some(succ), false, now, out);
                    }
                    None => {
                        // Successor list exhausted: fall back to the finger
                        // table before declaring the overlay unreachable.
                        match self.overlays[overlay].routing.nearest_known().copied() {
                            Some(e) => {
                                self.overlays[overlay].routing.adopt_successor(e);
                                self.send_stabilize(overlay, e, Some(succ), false, now, out);
                            }
                            None => {
                                out.push(Effect::Trace(TraceEvent::PartitionSuspected {
                                    overlay: overlay as u8,
                                }));
                            }
                        }
                    }
                }
            }
            Pending::Join { overlay } => {
                let overlay = overlay as usize;
                if self.overlays[overlay].phase != OverlayPhase::Joining {
                    return;
                }
                self.overlays[overlay].join_attempts += 1;
                if self.overlays[overlay].join_attempts >= MAX_JOIN_ATTEMPTS {
                    out.push(Effect::Trace(TraceEvent::JoinStuck {
                        overlay: overlay as u8,
                    }));
                    return;
                }
                self.begin_join(overlay, now, out);
            }
            Pending::Refresh { .. } => {}
            Pending::ProbeSuspect {
                overlay,
                suspect,
                report_to,
            } => {
                // Probe unanswered: the suspect is gone. Take over the arc,
                // adopt the reporter as predecessor, raise the alert.
                let overlay = overlay as usize;
                self.overlays[overlay].routing.evict(suspect);
                self.overlays[overlay].routing.predecessor = Some(report_to);
                self.overlays[overlay].pred_last_seen_us = now;
                out.push(Effect::Trace(TraceEvent::Alert {
                    overlay: overlay as u8,
                    subject: suspect,
                }));
                let n = fresh_nonce(&mut self.rng);
                let payload = Payload::Alert {
                    subject: suspect,
                    reason: AlertReason::AbsentMember,
                };
                self.send_to(now, overlay, &report_to, RoutineMsg { nonce: n, payload }, out);
            }
            Pending::Report => {
                // Prover silent: warn, do not condemn.
                if let Some(session) = self.session.take() {
                    let record = VerdictRecord {
                        verdict: Verdict::PossibleInfectionWarning,
                        subject: session.key,
                        dissenting: Vec::new(),
                        blank: Vec::new(),
                        engaged_at_us: session.engaged_at_us,
                        decided_at_us: now,
                    };
                    out.push(Effect::Trace(TraceEvent::Verdict(record)));
                }
            }
            Pending::ProofQuery { overlay } => {
                self.on_query_answer(now, overlay as usize, SlotState::Timeout, out);
            }
            Pending::CertExchange => {
                self.send_cert_offer(now, out);
            }
        }
    }

    // -- attestation --------------------------------------------------------------

    fn attest_tick(&mut self, now: u64, out: &mut Vec<Effect>) {
        if !self.cfg.attest.enabled
            || self.status != GlobalStatus::MemberAndRunning
            || self.session.is_some()
        {
            return;
        }
        // 53-bit uniform draw against the configured probability.
        let draw = (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        if draw >= self.cfg.attest.probability {
            return;
        }
        let overlay = (self.rng.next_u64() % self.overlays.len() as u64) as usize;
        let key = draw_target(&mut self.rng);
        let nonce = fresh_nonce(&mut self.rng);
        self.session = Some(Session::new(
            overlay as u8,
            key,
            nonce,
            now,
            self.overlays.len(),
        ));
        let payload = Payload::AttestChallenge {
            key,
            ttl: self.cfg.hop_budget,
            origin: self.overlays[overlay].record,
        };
        self.pending.insert(nonce, Pending::Report);
        out.push(Effect::Timer {
            at_us: now + self.cfg.attest.report_timeout_us,
            token: TimerToken::Reply(nonce),
        });
        self.route(now, overlay, key, RoutineMsg { nonce, payload }, out);
    }

    fn on_report(
        &mut self,
        now: u64,
        uid_key: RingId,
        digest: crate::crypto::ReportDigest,
        out: &mut Vec<Effect>,
    ) {
        let nonces: Vec<(usize, Nonce)> = {
            let session = match self.session.as_mut() {
                Some(s) => s,
                None => return,
            };
            session.prover_uid = Some(uid_key);
            session.digest = Some(digest);
            (0..self.overlays.len())
                .map(|i| (i, fresh_nonce(&mut self.rng)))
                .collect()
        };
        // One query per overlay: the stored copies vote.
        for (i, nonce) in nonces {
            let payload = Payload::ProofQuery {
                key: uid_key,
                ttl: self.cfg.hop_budget,
                uid_key,
                origin: self.overlays[i].record,
            };
            self.pending.insert(nonce, Pending::ProofQuery { overlay: i as u8 });
            out.push(Effect::Timer {
                at_us: now + self.cfg.attest.query_timeout_us,
                token: TimerToken::Reply(nonce),
            });
            self.route(now, i, uid_key, RoutineMsg { nonce, payload }, out);
        }
    }

    fn on_query_answer(
        &mut self,
        now: u64,
        overlay: usize,
        slot: SlotState,
        out: &mut Vec<Effect>,
    ) {
        let done = {
            let session = match self.session.as_mut() {
                Some(s) => s,
                None => return,
            };
            if session.slots[overlay] == SlotState::Pending {
                session.slots[overlay] = slot;
            }
            session.all_slots_settled()
        };
        if !done {
            return;
        }
        let session = self.session.take().expect("session present");
        let (record, repair) = decide(&session, now);
        if let Some((elected, blanks)) = repair {
            let uid_key = session.prover_uid.expect("report received");
            for b in blanks {
                let payload = Payload::RecoveryStore {
                    key: uid_key,
                    ttl: self.cfg.hop_budget,
                    uid_key,
                    proof: elected,
                };
                let n = fresh_nonce(&mut self.rng);
                out.push(Effect::Trace(TraceEvent::RecoverySent {
                    overlay: b,
                    uid_key,
                }));
                self.route(now, b as usize, uid_key, RoutineMsg { nonce: n, payload }, out);
            }
        }
        out.push(Effect::Trace(TraceEvent::Verdict(record)));
    }

    /// Wrong-but-stable value a lying host serves. Independent liars salt
    /// with their own id, so they never agree by accident; colluding ones
    /// drop the salt and serve one shared lie per subject.
    fn fabricated_proof(&self, uid_key: RingId) -> Proof {
        let own: &[u8] = if self.collude_host {
            b""
        } else {
            self.creds.uid.as_bytes()
        };
        let mut out = [0u8; PROOF_BYTES];
        for i in 0..4u8 {
            let d = sha256_parts(&[b"corrupt-host", own, &uid_key.0.to_le_bytes(), &[i]]);
            out[i as usize * 32..(i as usize + 1) * 32].copy_from_slice(&d);
        }
        Proof(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Authority;
    use alloc::vec;

    fn test_config(o: usize) -> NodeConfig {
        NodeConfig {
            o,
            attest: AttestConfig {
                enabled: false,
                ..AttestConfig::default()
            },
            ..NodeConfig::default()
        }
    }

    fn build_device(cfg: &NodeConfig, device: u32, ca: &Authority) -> DeviceEngine {
        let mut rng = crate::crypto::derive_rng(42, device, b"provision");
        let creds = DeviceCredentials::provision(cfg.space, ca, u64::MAX, &mut rng);
        let region = vec![device as u8; 64];
        DeviceEngine::new(
            cfg.clone(),
            DeviceInit {
                device,
                addr: device + 1,
                seed: 42,
                creds,
                region,
                ca_public: ca.public.clone(),
                ca_id: ca.id,
            },
        )
    }

    /// Minimal deterministic harness: instant delivery, timers fired in
    /// timestamp order.
    struct Pump {
        engines: Vec<DeviceEngine>,
        timers: Vec<(u64, usize, TimerToken)>,
        traces: Vec<(usize, TraceEvent)>,
        now: u64,
    }

    impl Pump {
        fn new(engines: Vec<DeviceEngine>) -> Self {
            Pump {
                engines,
                timers: Vec::new(),
                traces: Vec::new(),
                now: 0,
            }
        }

        fn absorb(&mut self, from: usize, effects: Vec<Effect>) {
            let mut queue: VecDeque<(usize, Effect)> =
                effects.into_iter().map(|e| (from, e)).collect();
            while let Some((idx, e)) = queue.pop_front() {
                match e {
                    Effect::Send { to, frame } => {
                        let target = self
                            .engines
                            .iter()
                            .position(|d| d.addr == to)
                            .expect("known addr");
                        let mut out = Vec::new();
                        let now = self.now;
                        self.engines[target].on_frame(now, &frame, &mut out);
                        queue.extend(out.into_iter().map(|e| (target, e)));
                    }
                    Effect::Timer { at_us, token } => {
                        self.timers.push((at_us, idx, token));
                    }
                    Effect::Trace(t) => self.traces.push((idx, t)),
                }
            }
        }

        /// Runs until `until_us`, firing timers in order.
        fn run_until(&mut self, until_us: u64) {
            loop {
                self.timers.sort();
                let due = match self.timers.first() {
                    Some(&(at, _, _)) if at <= until_us => {
                        let (at, idx, token) = self.timers.remove(0);
                        (at, idx, token)
                    }
                    _ => break,
                };
                self.now = due.0;
                let mut out = Vec::new();
                self.engines[due.1].on_timer(due.0, due.2, &mut out);
                self.absorb(due.1, out);
            }
            self.now = until_us;
        }
    }

    #[test]
    fn bootstrap_device_owns_every_overlay() {
        let ca = Authority::generate(&mut crate::crypto::derive_rng(1, 0, b"ca"));
        let cfg = test_config(3);
        let mut d = build_device(&cfg, 0, &ca);
        let mut out = Vec::new();
        d.start_bootstrap(0, &mut out);
        assert_eq!(d.status, GlobalStatus::MemberAndRunning);
        for ov in &d.overlays {
            assert_eq!(ov.phase, OverlayPhase::Member);
            assert!(ov.is_responsible(cfg.space, RingId(0)));
            assert!(ov.is_responsible(cfg.space, RingId(u64::MAX)));
            // Own proof stored locally: the sole member hosts everything.
            assert_eq!(ov.proofs.get(&d.uid_key), Some(&d.golden_proof()));
        }
        let statuses: Vec<GlobalStatus> = out
            .iter()
            .filter_map(|e| match e {
                Effect::Trace(TraceEvent::Status { status }) => Some(*status),
                _ => None,
            })
            .collect();
        assert_eq!(
            statuses,
            vec![
                GlobalStatus::DeviceUnknown,
                GlobalStatus::DeviceCertified,
                GlobalStatus::MemberAndRunning
            ]
        );
    }

    #[test]
    fn two_devices_converge_to_mutual_membership() {
        let ca = Authority::generate(&mut crate::crypto::derive_rng(1, 0, b"ca"));
        let cfg = test_config(2);
        let d0 = build_device(&cfg, 0, &ca);
        let d1 = build_device(&cfg, 1, &ca);
        let mut pump = Pump::new(vec![d0, d1]);

        let mut out = Vec::new();
        pump.engines[0].start_bootstrap(0, &mut out);
        pump.absorb(0, out);

        let entries: Vec<Vec<OidRecord>> = pump.engines[0]
            .records()
            .into_iter()
            .map(|r| vec![r])
            .collect();
        let mut out = Vec::new();
        pump.engines[1].start_certified(0, entries, &mut out);
        pump.absorb(1, out);

        pump.run_until(20_000_000);

        for d in &pump.engines {
            assert_eq!(d.status, GlobalStatus::MemberAndRunning, "device {}", d.device);
        }
        let space = cfg.space;
        for ov_idx in 0..cfg.o {
            let a = &pump.engines[0].overlays[ov_idx];
            let b = &pump.engines[1].overlays[ov_idx];
            // Two-member ring: each is the other's successor and predecessor.
            assert_eq!(a.routing.successor().unwrap().ring, b.record.ring);
            assert_eq!(b.routing.successor().unwrap().ring, a.record.ring);
            assert_eq!(a.routing.predecessor.as_ref().unwrap().ring, b.record.ring);
            assert_eq!(b.routing.predecessor.as_ref().unwrap().ring, a.record.ring);
            // Every device's proof lives at the responsible member.
            for d in &pump.engines {
                let holder = if a.is_responsible(space, d.uid_key) { a } else { b };
                assert_eq!(
                    holder.proofs.get(&d.uid_key),
                    Some(&d.golden_proof()),
                    "proof of device {} in overlay {ov_idx}",
                    d.device
                );
            }
        }
    }

    #[test]
    fn membership_grant_requires_completed_handover() {
        let ca = Authority::generate(&mut crate::crypto::derive_rng(1, 0, b"ca"));
        let cfg = test_config(1);
        let d0 = build_device(&cfg, 0, &ca);
        let d1 = build_device(&cfg, 1, &ca);
        let mut pump = Pump::new(vec![d0, d1]);
        let mut out = Vec::new();
        pump.engines[0].start_bootstrap(0, &mut out);
        pump.absorb(0, out);
        let entries = vec![vec![pump.engines[0].record(0)]];
        let mut out = Vec::new();
        pump.engines[1].start_certified(0, entries, &mut out);
        pump.absorb(1, out);

        // The join response and immediate notify run; membership must wait
        // for a stabilize round trip that carries proofs-ready.
        let phases: Vec<OverlayPhase> = pump
            .traces
            .iter()
            .filter_map(|(idx, t)| match t {
                TraceEvent::Phase { phase, .. } if *idx == 1 => Some(*phase),
                _ => None,
            })
            .collect();
        assert_eq!(phases, vec![OverlayPhase::Joining, OverlayPhase::NonMember]);
        assert!(pump.engines[1].overlays[0].proofs_ready);

        pump.run_until(20_000_000);
        assert_eq!(pump.engines[1].overlays[0].phase, OverlayPhase::Member);
        let phases: Vec<OverlayPhase> = pump
            .traces
            .iter()
            .filter_map(|(idx, t)| match t {
                TraceEvent::Phase { phase, .. } if *idx == 1 => Some(*phase),
                _ => None,
            })
            .collect();
        assert_eq!(
            phases,
            vec![
                OverlayPhase::Joining,
                OverlayPhase::NonMember,
                OverlayPhase::Member
            ]
        );
    }

    #[test]
    fn introduced_device_certifies_then_joins() {
        let ca = Authority::generate(&mut crate::crypto::derive_rng(1, 0, b"ca"));
        let cfg = test_config(2);
        let d0 = build_device(&cfg, 0, &ca);
        let d1 = build_device(&cfg, 1, &ca);
        let intro_cert = d0.creds.certificate;
        let intro_addr = d0.addr;
        let mut pump = Pump::new(vec![d0, d1]);
        let mut out = Vec::new();
        pump.engines[0].start_bootstrap(0, &mut out);
        pump.absorb(0, out);
        let mut out = Vec::new();
        pump.engines[1].start_introduced(0, intro_addr, intro_cert, &mut out);
        pump.absorb(1, out);
        pump.run_until(20_000_000);

        assert_eq!(pump.engines[1].status, GlobalStatus::MemberAndRunning);
        let statuses: Vec<GlobalStatus> = pump
            .traces
            .iter()
            .filter_map(|(idx, t)| match t {
                TraceEvent::Status { status } if *idx == 1 => Some(*status),
                _ => None,
            })
            .collect();
        assert_eq!(
            statuses,
            vec![
                GlobalStatus::DeviceUnknown,
                GlobalStatus::DeviceCertified,
                GlobalStatus::MemberAndRunning
            ]
        );
    }

    #[test]
    fn replayed_frames_are_rejected() {
        let ca = Authority::generate(&mut crate::crypto::derive_rng(1, 0, b"ca"));
        let cfg = test_config(1);
        let mut d0 = build_device(&cfg, 0, &ca);
        let d1 = build_device(&cfg, 1, &ca);
        let mut out = Vec::new();
        d0.start_bootstrap(0, &mut out);

        // Hand-craft a frame from d1 to d0 and deliver it twice.
        let msg = RoutineMsg {
            nonce: Nonce([9; 16]),
            payload: Payload::Notify { member: false },
        };
        let mut rng = crate::crypto::derive_rng(7, 7, b"replay");
        let frame = encode_routine(
            cfg.suite,
            &cfg.params,
            cfg.s,
            0,
            &d0.record(0).dh,
            &d1.record(0),
            &d1.overlays[0].kp,
            &d1.record(0),
            &msg,
            &mut rng,
        )
        .unwrap();
        let mut out = Vec::new();
        d0.on_frame(10, &frame, &mut out);
        assert!(!out
            .iter()
            .any(|e| matches!(e, Effect::Trace(TraceEvent::ReplayRejected))));
        let mut out = Vec::new();
        d0.on_frame(20, &frame, &mut out);
        assert!(out
            .iter()
            .any(|e| matches!(e, Effect::Trace(TraceEvent::ReplayRejected))));
    }

    #[test]
    fn collision_forces_identity_regeneration() {
        let ca = Authority::generate(&mut crate::crypto::derive_rng(1, 0, b"ca"));
        let cfg = test_config(1);
        let mut d = build_device(&cfg, 0, &ca);
        let original = d.record(0);
        let mut out = Vec::new();
        d.set_status(GlobalStatus::DeviceCertified, &mut out);
        d.overlays[0].phase = OverlayPhase::Joining;
        d.overlays[0].entries = vec![original];

        // Deliver a collision response against a forged pending entry.
        let nonce = Nonce([3; 16]);
        d.pending.insert(nonce, Pending::Join { overlay: 0 });
        let frame = RoutineFrame {
            overlay: 0,
            source: original,
            sender: original,
            msg: RoutineMsg {
                nonce: Nonce([4; 16]),
                payload: Payload::SuccessorResponse {
                    pred: None,
                    successors: vec![],
                    collision: true,
                    grant: false,
                    echo: nonce,
                },
            },
        };
        let mut out = Vec::new();
        d.handle_delivered(5, frame, &mut out);
        assert_ne!(d.record(0).ring, original.ring, "identity regenerated");
        assert_eq!(d.overlays[0].phase, OverlayPhase::Joining);
    }

    #[test]
    fn memory_report_matches_structure_sizes() {
        let ca = Authority::generate(&mut crate::crypto::derive_rng(1, 0, b"ca"));
        let cfg = test_config(3);
        let mut d = build_device(&cfg, 0, &ca);
        let mut out = Vec::new();
        d.start_bootstrap(0, &mut out);
        let report = d.memory();
        assert_eq!(report.credentials, 1832);
        assert_eq!(report.overlays.len(), 3);
        for (i, m) in report.overlays.iter().enumerate() {
            assert_eq!(m.secret, 32);
            assert_eq!(m.own_record, 68);
            assert_eq!(m.pred_slot, 68);
            assert_eq!(m.successors, 68 * d.overlays[i].routing.successors().len());
            assert_eq!(m.fingers, 68 * d.overlays[i].routing.finger_count());
            assert_eq!(m.proofs, 128 * d.overlays[i].proofs.len());
        }
        // Singleton: successor list holds only itself, no fingers, one proof.
        assert_eq!(report.total(), 1832 + 3 * (32 + 68 + 68 + 68 + 128));
    }

    #[test]
    fn corrupt_host_lies_consistently_but_uniquely() {
        let ca = Authority::generate(&mut crate::crypto::derive_rng(1, 0, b"ca"));
        let cfg = test_config(1);
        let mut a = build_device(&cfg, 0, &ca);
        let mut b = build_device(&cfg, 1, &ca);
        a.corrupt_host = true;
        b.corrupt_host = true;
        let k = RingId(99);
        assert_eq!(a.fabricated_proof(k), a.fabricated_proof(k));
        assert_ne!(a.fabricated_proof(k), b.fabricated_proof(k));
        assert_ne!(a.fabricated_proof(k), a.fabricated_proof(RingId(100)));
        a.collude_host = true;
        b.collude_host = true;
        assert_eq!(a.fabricated_proof(k), b.fabricated_proof(k));
        assert_ne!(a.fabricated_proof(k), a.fabricated_proof(RingId(100)));
    }
}
