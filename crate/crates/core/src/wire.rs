//! Message framing and codecs.
//!
//! Routine frames have a closed-form width: `384 + 68*s` bytes for successor
//! list length `s`. Layout (see `LAYOUT.md` at the repository root):
//!
//! ```text
//! [version 1][overlay 1]
//! [header nonce 16][header ct 136][header tag 16]     sealed to H(recipient OID)
//! [body nonce 16]  [body ct 182+68s][body tag 16]     sealed to K(sender, recipient)
//! ```
//!
//! The header carries two 68-byte identity records, originator and current
//! sender; only a holder of the recipient's OID can read either, so traffic
//! is unlinkable to anyone outside the swarm. The body is rewrapped hop by
//! hop under the pairwise key of the two endpoints of that hop; forwarding
//! preserves the originator record and replaces the sender record.
//!
//! Certification frames (the pre-membership exchange) are `256 * o` bytes
//! for `o` overlays: a plaintext certificate followed by a signed-and-
//! encrypted bundle of the sender's `o` identity records.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::crypto::{
    asym_sign_encrypt, asym_verify_decrypt, fresh_nonce, header_key, sym_open, sym_seal,
    Certificate, CryptoError, DhParams, DhPub, Nonce, OidKeypair, Proof, ReportDigest, RsaPrivate,
    RsaPublic, SuiteKind, CERT_WIRE_BYTES, DH_PUB_BYTES, MAC_BYTES, NONCE_BYTES, PROOF_BYTES,
};
use crate::ring::RingId;

pub const WIRE_VERSION: u8 = 1;

/// Identity record: DH public value, transport address, ring position.
pub const OID_RECORD_BYTES: usize = DH_PUB_BYTES + 4 + 8;

/// Frame width shared by every routine message at a given successor-list
/// length.
pub fn routine_frame_len(s: usize) -> usize {
    ROUTINE_BASE_BYTES + OID_RECORD_BYTES * s
}

/// Certification frame width at a given overlay count.
pub fn cert_frame_len(o: usize) -> usize {
    CERT_UNIT_BYTES * o
}

pub const ROUTINE_BASE_BYTES: usize = 384;
pub const CERT_UNIT_BYTES: usize = 256;

const HEADER_PT_BYTES: usize = 2 * OID_RECORD_BYTES;
const HEADER_SECTION_BYTES: usize = NONCE_BYTES + HEADER_PT_BYTES + MAC_BYTES;
/// Body plaintext width: frame minus version, overlay, header section, body
/// nonce and body tag.
fn body_pt_len(s: usize) -> usize {
    routine_frame_len(s) - 2 - HEADER_SECTION_BYTES - NONCE_BYTES - MAC_BYTES
}
/// Payload field budget inside the body: kind byte and session nonce come
/// first.
fn field_budget(s: usize) -> usize {
    body_pt_len(s) - 1 - NONCE_BYTES
}

const CERT_KIND_OFFER: u8 = 0xF0;
const CERT_KIND_ACCEPT: u8 = 0xF1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WireError {
    Crypto(CryptoError),
    /// Frame or field shorter or longer than its fixed layout.
    BadLength { expected: usize, got: usize },
    /// Structurally invalid content (bad flag byte, nonzero padding).
    Malformed,
    UnknownKind(u8),
    /// Variable content exceeds the fixed field budget.
    Oversize,
    /// Rewrap requested for a payload that is not routed.
    NotRouted,
    /// Routed payload ran out of hops.
    TtlExpired,
}

impl From<CryptoError> for WireError {
    fn from(e: CryptoError) -> Self {
        WireError::Crypto(e)
    }
}

impl core::fmt::Display for WireError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            WireError::Crypto(e) => write!(f, "crypto: {e}"),
            WireError::BadLength { expected, got } => {
                write!(f, "bad length: expected {expected}, got {got}")
            }
            WireError::Malformed => f.write_str("malformed frame"),
            WireError::UnknownKind(k) => write!(f, "unknown payload kind {k}"),
            WireError::Oversize => f.write_str("content exceeds field budget"),
            WireError::NotRouted => f.write_str("payload is not routed"),
            WireError::TtlExpired => f.write_str("hop budget exhausted"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for WireError {}

// ---------------------------------------------------------------------------
// Identity records
// ---------------------------------------------------------------------------

/// What one device knows about another inside one overlay.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct OidRecord {
    pub dh: DhPub,
    pub addr: u32,
    pub ring: RingId,
}

impl OidRecord {
    pub fn encode(&self) -> [u8; OID_RECORD_BYTES] {
        let mut out = [0u8; OID_RECORD_BYTES];
        out[..DH_PUB_BYTES].copy_from_slice(self.dh.as_bytes());
        out[DH_PUB_BYTES..DH_PUB_BYTES + 4].copy_from_slice(&self.addr.to_le_bytes());
        out[DH_PUB_BYTES + 4..].copy_from_slice(&self.ring.0.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        if buf.len() < OID_RECORD_BYTES {
            return Err(WireError::BadLength {
                expected: OID_RECORD_BYTES,
                got: buf.len(),
            });
        }
        Ok(OidRecord {
            dh: DhPub::from_slice(&buf[..DH_PUB_BYTES]).map_err(WireError::Crypto)?,
            addr: u32::from_le_bytes(buf[DH_PUB_BYTES..DH_PUB_BYTES + 4].try_into().unwrap()),
            ring: RingId(u64::from_le_bytes(buf[DH_PUB_BYTES + 4..].try_into().unwrap())),
        })
    }
}

impl crate::ring::RingEntry for OidRecord {
    fn ring(&self) -> RingId {
        self.ring
    }
}

// ---------------------------------------------------------------------------
// Payloads
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum JoinPurpose {
    /// First entry into an overlay; a key collision forces a new identity.
    Join,
    /// Finger refresh lookup by an existing member.
    Refresh,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AlertReason {
    /// Successor vanished without a successor-list trace: physical removal
    /// or power loss suspected.
    AbsentMember,
}

/// Session-layer message: every routine body carries the kind, a session
/// nonce chosen by the originator, and the kind's fields.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RoutineMsg {
    pub nonce: Nonce,
    pub payload: Payload,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Payload {
    /// Routed lookup for the member responsible for `key`.
    JoinRequest {
        purpose: JoinPurpose,
        key: RingId,
        ttl: u8,
        origin: OidRecord,
    },
    /// Direct answer to a lookup or stabilize: responder's predecessor and
    /// successor list, plus admission flags.
    SuccessorResponse {
        pred: Option<OidRecord>,
        successors: Vec<OidRecord>,
        /// Requested key equals the responder's own: identity collision.
        collision: bool,
        /// Responder adopted the requester as predecessor and its proofs are
        /// placed: requester may switch to member.
        grant: bool,
        echo: Nonce,
    },
    /// Periodic probe to the first live successor.
    Stabilize {
        member: bool,
        proofs_ready: bool,
        /// Successor the sender just evicted as unreachable, if any.
        suspect: Option<RingId>,
    },
    /// Tells the successor who its predecessor should be.
    Notify { member: bool },
    /// Routed placement of a proof at the member responsible for `uid_key`.
    ProofStore {
        key: RingId,
        ttl: u8,
        uid_key: RingId,
        proof: Proof,
    },
    /// Routed fetch of the proof stored under `uid_key`.
    ProofQuery {
        key: RingId,
        ttl: u8,
        uid_key: RingId,
        origin: OidRecord,
    },
    /// Direct answer to a proof query.
    ProofResponse {
        uid_key: RingId,
        present: bool,
        proof: Proof,
        echo: Nonce,
    },
    /// Direct transfer of stored proofs to a joining predecessor, one record
    /// per frame; `remaining` counts records still to come.
    ProofsUpdate {
        seq: u16,
        remaining: u16,
        record: Option<(RingId, Proof)>,
    },
    /// Routed attestation trigger; whoever is responsible for `key` must
    /// measure itself and report back to `origin`.
    AttestChallenge {
        key: RingId,
        ttl: u8,
        origin: OidRecord,
    },
    /// Direct measurement report bound to the challenge nonce.
    AttestReport {
        uid_key: RingId,
        digest: ReportDigest,
        echo: Nonce,
    },
    /// Routed re-placement of an elected proof at a host that lost it.
    RecoveryStore {
        key: RingId,
        ttl: u8,
        uid_key: RingId,
        proof: Proof,
    },
    /// Direct notification that a member disappeared.
    Alert {
        subject: RingId,
        reason: AlertReason,
    },
}

impl Payload {
    pub fn kind(&self) -> u8 {
        match self {
            Payload::JoinRequest { .. } => 1,
            Payload::SuccessorResponse { .. } => 2,
            Payload::Stabilize { .. } => 3,
            Payload::Notify { .. } => 4,
            Payload::ProofStore { .. } => 5,
            Payload::ProofQuery { .. } => 6,
            Payload::ProofResponse { .. } => 7,
            Payload::ProofsUpdate { .. } => 8,
            Payload::AttestChallenge { .. } => 9,
            Payload::AttestReport { .. } => 10,
            Payload::RecoveryStore { .. } => 11,
            Payload::Alert { .. } => 12,
        }
    }

    /// Routing key and remaining hop budget, for payloads that travel via
    /// the finger tables.
    pub fn routing(&self) -> Option<(RingId, u8)> {
        match self {
            Payload::JoinRequest { key, ttl, .. }
            | Payload::ProofStore { key, ttl, .. }
            | Payload::ProofQuery { key, ttl, .. }
            | Payload::AttestChallenge { key, ttl, .. }
            | Payload::RecoveryStore { key, ttl, .. } => Some((*key, *ttl)),
            _ => None,
        }
    }

    fn decrement_ttl(&mut self) -> Result<(), WireError> {
        let ttl = match self {
            Payload::JoinRequest { ttl, .. }
            | Payload::ProofStore { ttl, .. }
            | Payload::ProofQuery { ttl, .. }
            | Payload::AttestChallenge { ttl, .. }
            | Payload::RecoveryStore { ttl, .. } => ttl,
            _ => return Err(WireError::NotRouted),
        };
        if *ttl == 0 {
            return Err(WireError::TtlExpired);
        }
        *ttl -= 1;
        Ok(())
    }
}

struct FieldWriter {
    buf: Vec<u8>,
    budget: usize,
}

impl FieldWriter {
    fn new(budget: usize) -> Self {
        FieldWriter {
            buf: Vec::with_capacity(budget),
            budget,
        }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<(), WireError> {
        if self.buf.len() + bytes.len() > self.budget {
            return Err(WireError::Oversize);
        }
        self.buf.extend_from_slice(bytes);
        Ok(())
    }

    fn put_u8(&mut self, v: u8) -> Result<(), WireError> {
        self.put(&[v])
    }

    fn put_ring(&mut self, r: RingId) -> Result<(), WireError> {
        self.put(&r.0.to_le_bytes())
    }
}

struct FieldReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> FieldReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        FieldReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return Err(WireError::Malformed);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn take_bool(&mut self) -> Result<bool, WireError> {
        match self.take_u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::Malformed),
        }
    }

    fn take_ring(&mut self) -> Result<RingId, WireError> {
        Ok(RingId(u64::from_le_bytes(self.take(8)?.try_into().unwrap())))
    }

    fn take_nonce(&mut self) -> Result<Nonce, WireError> {
        Ok(Nonce(self.take(NONCE_BYTES)?.try_into().unwrap()))
    }

    fn take_proof(&mut self) -> Result<Proof, WireError> {
        Ok(Proof(self.take(PROOF_BYTES)?.try_into().unwrap()))
    }

    fn take_record(&mut self) -> Result<OidRecord, WireError> {
        OidRecord::decode(self.take(OID_RECORD_BYTES)?)
    }

    fn remainder_is_zero(&self) -> bool {
        self.buf[self.pos..].iter().all(|b| *b == 0)
    }
}

fn encode_fields(payload: &Payload, s: usize, w: &mut FieldWriter) -> Result<(), WireError> {
    match payload {
        Payload::JoinRequest {
            purpose,
            key,
            ttl,
            origin,
        } => {
            w.put_u8(match purpose {
                JoinPurpose::Join => 0,
                JoinPurpose::Refresh => 1,
            })?;
            w.put_ring(*key)?;
            w.put_u8(*ttl)?;
            w.put(&origin.encode())?;
        }
        Payload::SuccessorResponse {
            pred,
            successors,
            collision,
            grant,
            echo,
        } => {
            let mut flags = 0u8;
            if pred.is_some() {
                flags |= 1;
            }
            if *collision {
                flags |= 2;
            }
            if *grant {
                flags |= 4;
            }
            w.put_u8(flags)?;
            w.put(&pred.unwrap_or(ZERO_RECORD).encode())?;
            if successors.len() > s {
                return Err(WireError::Oversize);
            }
            w.put_u8(successors.len() as u8)?;
            for e in successors {
                w.put(&e.encode())?;
            }
            w.put(echo.as_bytes())?;
        }
        Payload::Stabilize {
            member,
            proofs_ready,
            suspect,
        } => {
            w.put_u8(*member as u8)?;
            w.put_u8(*proofs_ready as u8)?;
            w.put_u8(suspect.is_some() as u8)?;
            w.put_ring(suspect.unwrap_or(RingId(0)))?;
        }
        Payload::Notify { member } => {
            w.put_u8(*member as u8)?;
        }
        Payload::ProofStore {
            key,
            ttl,
            uid_key,
            proof,
        }
        | Payload::RecoveryStore {
            key,
            ttl,
            uid_key,
            proof,
        } => {
            w.put_ring(*key)?;
            w.put_u8(*ttl)?;
            w.put_ring(*uid_key)?;
            w.put(proof.as_bytes())?;
        }
        Payload::ProofQuery {
            key,
            ttl,
            uid_key,
            origin,
        } => {
            w.put_ring(*key)?;
            w.put_u8(*ttl)?;
            w.put_ring(*uid_key)?;
            w.put(&origin.encode())?;
        }
        Payload::ProofResponse {
            uid_key,
            present,
            proof,
            echo,
        } => {
            w.put_ring(*uid_key)?;
            w.put_u8(*present as u8)?;
            w.put(proof.as_bytes())?;
            w.put(echo.as_bytes())?;
        }
        Payload::ProofsUpdate {
            seq,
            remaining,
            record,
        } => {
            w.put(&seq.to_le_bytes())?;
            w.put(&remaining.to_le_bytes())?;
            w.put_u8(record.is_some() as u8)?;
            let (ring, proof) = record.unwrap_or((RingId(0), Proof([0u8; PROOF_BYTES])));
            w.put_ring(ring)?;
            w.put(proof.as_bytes())?;
        }
        Payload::AttestChallenge { key, ttl, origin } => {
            w.put_ring(*key)?;
            w.put_u8(*ttl)?;
            w.put(&origin.encode())?;
        }
        Payload::AttestReport {
            uid_key,
            digest,
            echo,
        } => {
            w.put_ring(*uid_key)?;
            w.put(digest.as_bytes())?;
            w.put(echo.as_bytes())?;
        }
        Payload::Alert { subject, reason } => {
            w.put_ring(*subject)?;
            w.put_u8(match reason {
                AlertReason::AbsentMember => 1,
            })?;
        }
    }
    Ok(())
}

const ZERO_RECORD: OidRecord = OidRecord {
    dh: DhPub([0u8; DH_PUB_BYTES]),
    addr: 0,
    ring: RingId(0),
};

fn decode_fields(kind: u8, s: usize, r: &mut FieldReader<'_>) -> Result<Payload, WireError> {
    let payload = match kind {
        1 => Payload::JoinRequest {
            purpose: match r.take_u8()? {
                0 => JoinPurpose::Join,
                1 => JoinPurpose::Refresh,
                _ => return Err(WireError::Malformed),
            },
            key: r.take_ring()?,
            ttl: r.take_u8()?,
            origin: r.take_record()?,
        },
        2 => {
            let flags = r.take_u8()?;
            if flags & !7 != 0 {
                return Err(WireError::Malformed);
            }
            let pred_rec = r.take_record()?;
            let count = r.take_u8()? as usize;
            if count > s {
                return Err(WireError::Malformed);
            }
            let mut successors = Vec::with_capacity(count);
            for _ in 0..count {
                successors.push(r.take_record()?);
            }
            Payload::SuccessorResponse {
                pred: (flags & 1 != 0).then_some(pred_rec),
                successors,
                collision: flags & 2 != 0,
                grant: flags & 4 != 0,
                echo: r.take_nonce()?,
            }
        }
        3 => {
            let member = r.take_bool()?;
            let proofs_ready = r.take_bool()?;
            let has_suspect = r.take_bool()?;
            let suspect = r.take_ring()?;
            Payload::Stabilize {
                member,
                proofs_ready,
                suspect: has_suspect.then_some(suspect),
            }
        }
        4 => Payload::Notify {
            member: r.take_bool()?,
        },
        5 | 11 => {
            let key = r.take_ring()?;
            let ttl = r.take_u8()?;
            let uid_key = r.take_ring()?;
            let proof = r.take_proof()?;
            if kind == 5 {
                Payload::ProofStore {
                    key,
                    ttl,
                    uid_key,
                    proof,
                }
            } else {
                Payload::RecoveryStore {
                    key,
                    ttl,
                    uid_key,
                    proof,
                }
            }
        }
        6 => Payload::ProofQuery {
            key: r.take_ring()?,
            ttl: r.take_u8()?,
            uid_key: r.take_ring()?,
            origin: r.take_record()?,
        },
        7 => Payload::ProofResponse {
            uid_key: r.take_ring()?,
            present: r.take_bool()?,
            proof: r.take_proof()?,
            echo: r.take_nonce()?,
        },
        8 => {
            let seq = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
            let remaining = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
            let has_record = r.take_bool()?;
            let ring = r.take_ring()?;
            let proof = r.take_proof()?;
            Payload::ProofsUpdate {
                seq,
                remaining,
                record: has_record.then_some((ring, proof)),
            }
        }
        9 => Payload::AttestChallenge {
            key: r.take_ring()?,
            ttl: r.take_u8()?,
            origin: r.take_record()?,
        },
        10 => Payload::AttestReport {
            uid_key: r.take_ring()?,
            digest: ReportDigest(r.take(32)?.try_into().unwrap()),
            echo: r.take_nonce()?,
        },
        12 => Payload::Alert {
            subject: r.take_ring()?,
            reason: match r.take_u8()? {
                1 => AlertReason::AbsentMember,
                _ => return Err(WireError::Malformed),
            },
        },
        k => return Err(WireError::UnknownKind(k)),
    };
    if !r.remainder_is_zero() {
        return Err(WireError::Malformed);
    }
    Ok(payload)
}

// ---------------------------------------------------------------------------
// Routine frames
// ---------------------------------------------------------------------------

/// A decoded routine frame, as seen by its recipient.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RoutineFrame {
    pub overlay: u8,
    /// Originator; preserved end to end.
    pub source: OidRecord,
    /// Previous hop; replaced on every forward.
    pub sender: OidRecord,
    pub msg: RoutineMsg,
}

/// Seals a routine message for one recipient. `source` is the originator
/// record, `sender` the record of the transmitting device (equal for the
/// first hop).
#[allow(clippy::too_many_arguments)]
pub fn encode_routine(
    suite: SuiteKind,
    params: &DhParams,
    s: usize,
    overlay: u8,
    recipient: &DhPub,
    source: &OidRecord,
    sender_kp: &OidKeypair,
    sender: &OidRecord,
    msg: &RoutineMsg,
    rng: &mut impl RngCore,
) -> Result<Vec<u8>, WireError> {
    let mut frame = Vec::with_capacity(routine_frame_len(s));
    frame.push(WIRE_VERSION);
    frame.push(overlay);

    let mut header_pt = [0u8; HEADER_PT_BYTES];
    header_pt[..OID_RECORD_BYTES].copy_from_slice(&source.encode());
    header_pt[OID_RECORD_BYTES..].copy_from_slice(&sender.encode());
    let hnonce = fresh_nonce(rng);
    let hk = header_key(recipient);
    frame.extend_from_slice(hnonce.as_bytes());
    frame.extend_from_slice(&sym_seal(suite, &hk, &hnonce, &[WIRE_VERSION, overlay], &header_pt));

    let mut body_pt = vec![0u8; body_pt_len(s)];
    body_pt[0] = msg.payload.kind();
    body_pt[1..1 + NONCE_BYTES].copy_from_slice(msg.nonce.as_bytes());
    let mut w = FieldWriter::new(field_budget(s));
    encode_fields(&msg.payload, s, &mut w)?;
    body_pt[1 + NONCE_BYTES..1 + NONCE_BYTES + w.buf.len()].copy_from_slice(&w.buf);

    let bk = sender_kp.shared_key(recipient, params)?;
    let bnonce = fresh_nonce(rng);
    frame.extend_from_slice(bnonce.as_bytes());
    frame.extend_from_slice(&sym_seal(suite, &bk, &bnonce, &[WIRE_VERSION, overlay], &body_pt));

    debug_assert_eq!(frame.len(), routine_frame_len(s));
    Ok(frame)
}

/// Opens a routine frame addressed to `self_kp`'s identity. Fails closed on
/// any manipulation, truncation or wrong recipient.
pub fn decode_routine(
    suite: SuiteKind,
    params: &DhParams,
    s: usize,
    self_kp: &OidKeypair,
    frame: &[u8],
) -> Result<RoutineFrame, WireError> {
    let expected = routine_frame_len(s);
    if frame.len() != expected {
        return Err(WireError::BadLength {
            expected,
            got: frame.len(),
        });
    }
    if frame[0] != WIRE_VERSION {
        return Err(WireError::Malformed);
    }
    let overlay = frame[1];
    let aad = [WIRE_VERSION, overlay];

    let mut pos = 2;
    let hnonce = Nonce(frame[pos..pos + NONCE_BYTES].try_into().unwrap());
    pos += NONCE_BYTES;
    let hk = header_key(&self_kp.public);
    let header_ct = &frame[pos..pos + HEADER_PT_BYTES + MAC_BYTES];
    pos += HEADER_PT_BYTES + MAC_BYTES;
    let header_pt = sym_open(suite, &hk, &hnonce, &aad, header_ct)?;
    let source = OidRecord::decode(&header_pt[..OID_RECORD_BYTES])?;
    let sender = OidRecord::decode(&header_pt[OID_RECORD_BYTES..])?;

    let bnonce = Nonce(frame[pos..pos + NONCE_BYTES].try_into().unwrap());
    pos += NONCE_BYTES;
    let bk = self_kp.shared_key(&sender.dh, params)?;
    let body_pt = sym_open(suite, &bk, &bnonce, &aad, &frame[pos..])?;

    let kind = body_pt[0];
    let nonce = Nonce(body_pt[1..1 + NONCE_BYTES].try_into().unwrap());
    let mut r = FieldReader::new(&body_pt[1 + NONCE_BYTES..]);
    let payload = decode_fields(kind, s, &mut r)?;
    Ok(RoutineFrame {
        overlay,
        source,
        sender,
        msg: RoutineMsg { nonce, payload },
    })
}

/// Re-seals a routed frame for its next hop: originator and session nonce
/// preserved, sender replaced by the forwarder, hop budget decremented.
pub fn rewrap(
    suite: SuiteKind,
    params: &DhParams,
    s: usize,
    received: &RoutineFrame,
    forwarder_kp: &OidKeypair,
    forwarder: &OidRecord,
    next: &DhPub,
    rng: &mut impl RngCore,
) -> Result<Vec<u8>, WireError> {
    let mut msg = received.msg.clone();
    msg.payload.decrement_ttl()?;
    encode_routine(
        suite,
        params,
        s,
        received.overlay,
        next,
        &received.source,
        forwarder_kp,
        forwarder,
        &msg,
        rng,
    )
}

// ---------------------------------------------------------------------------
// Certification frames
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CertStep {
    /// Unattached device opens the exchange.
    Offer,
    /// Certified member completes it.
    Accept,
}

/// Decrypted certification payload: the sender's identity records for every
/// overlay, bound to a session nonce.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CertPayload {
    pub step: CertStep,
    pub nonce: Nonce,
    pub oids: Vec<OidRecord>,
}

/// Builds a certification frame of exactly `256 * o` bytes: plaintext
/// certificate, then the sender's `o` identity records signed and encrypted
/// for the recipient.
pub fn encode_certification(
    step: CertStep,
    cert: &Certificate,
    nonce: &Nonce,
    oids: &[OidRecord],
    recipient: &RsaPublic,
    sender: &RsaPrivate,
    rng: &mut impl RngCore,
) -> Result<Vec<u8>, WireError> {
    let o = oids.len();
    if o == 0 || o > 8 {
        return Err(WireError::Oversize);
    }
    let total = cert_frame_len(o);
    let mut pt = Vec::with_capacity(1 + NONCE_BYTES + o * OID_RECORD_BYTES);
    pt.push(match step {
        CertStep::Offer => 0,
        CertStep::Accept => 1,
    });
    pt.extend_from_slice(nonce.as_bytes());
    for rec in oids {
        pt.extend_from_slice(&rec.encode());
    }
    let blob = asym_sign_encrypt(recipient, sender, &pt, rng);

    let mut frame = Vec::with_capacity(total);
    frame.push(WIRE_VERSION);
    frame.push(match step {
        CertStep::Offer => CERT_KIND_OFFER,
        CertStep::Accept => CERT_KIND_ACCEPT,
    });
    frame.push(CERT_WIRE_BYTES as u8);
    frame.extend_from_slice(&cert.encode_wire());
    frame.extend_from_slice(&blob);
    if frame.len() > total {
        return Err(WireError::Oversize);
    }
    frame.resize(total, 0);
    Ok(frame)
}

/// Reads the plaintext part of a certification frame: step and certificate.
/// Callers verify the certificate against their trusted authority before
/// decrypting the rest.
pub fn peek_certification(frame: &[u8]) -> Result<(CertStep, Certificate, usize), WireError> {
    if frame.len() < CERT_UNIT_BYTES
        || frame.len() % CERT_UNIT_BYTES != 0
        || frame.len() > 8 * CERT_UNIT_BYTES
    {
        return Err(WireError::BadLength {
            expected: CERT_UNIT_BYTES,
            got: frame.len(),
        });
    }
    if frame[0] != WIRE_VERSION {
        return Err(WireError::Malformed);
    }
    let step = match frame[1] {
        CERT_KIND_OFFER => CertStep::Offer,
        CERT_KIND_ACCEPT => CertStep::Accept,
        k => return Err(WireError::UnknownKind(k)),
    };
    if frame[2] as usize != CERT_WIRE_BYTES {
        return Err(WireError::Malformed);
    }
    let cert = Certificate::decode_wire(&frame[3..3 + CERT_WIRE_BYTES]).map_err(WireError::Crypto)?;
    Ok((step, cert, frame.len() / CERT_UNIT_BYTES))
}

/// Decrypts and attributes the sealed part of a certification frame. The
/// sender key comes from the already-verified certificate.
pub fn open_certification(
    frame: &[u8],
    sender: &RsaPublic,
    self_private: &RsaPrivate,
) -> Result<CertPayload, WireError> {
    let (step, _, o) = peek_certification(frame)?;
    let pt_len = 1 + NONCE_BYTES + o * OID_RECORD_BYTES;
    let blob_len = pt_len + crate::crypto::SEAL_OVERHEAD;
    let start = 3 + CERT_WIRE_BYTES;
    if start + blob_len > frame.len() {
        return Err(WireError::Malformed);
    }
    if frame[start + blob_len..].iter().any(|b| *b != 0) {
        return Err(WireError::Malformed);
    }
    let pt = asym_verify_decrypt(sender, self_private, &frame[start..start + blob_len])?;
    let inner_step = match pt[0] {
        0 => CertStep::Offer,
        1 => CertStep::Accept,
        _ => return Err(WireError::Malformed),
    };
    if inner_step != step {
        return Err(WireError::Malformed);
    }
    let nonce = Nonce(pt[1..1 + NONCE_BYTES].try_into().unwrap());
    let mut oids = Vec::with_capacity(o);
    for i in 0..o {
        let off = 1 + NONCE_BYTES + i * OID_RECORD_BYTES;
        oids.push(OidRecord::decode(&pt[off..off + OID_RECORD_BYTES])?);
    }
    Ok(CertPayload { step, nonce, oids })
}
