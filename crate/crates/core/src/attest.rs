//! Mutual attestation: challenge sessions, replica voting, verdicts.
//!
//! Any member may act as verifier: it draws a random ring key, the member
//! responsible for that key becomes the prover and reports a nonce-bound
//! digest of its software state. The verifier then fetches the proof stored
//! for the prover's device id from every overlay and lets the copies vote.
//! No copy is trusted individually; a strict plurality elects the golden
//! proof, hosts serving a different copy are flagged, and missing copies are
//! repaired from the elected value.

use alloc::vec::Vec;

use rand_core::RngCore;

use crate::crypto::{report_hash, Nonce, Proof, ReportDigest};
use crate::ring::RingId;

/// Verifier-side knobs. Timeouts cover the full routed round trips.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttestConfig {
    pub enabled: bool,
    /// Chance that a device opens a session on one of its attestation ticks.
    pub probability: f64,
    pub tick_every_us: u64,
    pub report_timeout_us: u64,
    pub query_timeout_us: u64,
    pub reactions: ReactionPolicy,
}

impl Default for AttestConfig {
    fn default() -> Self {
        AttestConfig {
            enabled: true,
            probability: 0.1,
            tick_every_us: 1_000_000,
            report_timeout_us: 2_000_000,
            query_timeout_us: 2_000_000,
            reactions: ReactionPolicy::default(),
        }
    }
}

/// What the swarm does to a device a verdict incriminates.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Reaction {
    /// Members stop accepting the device's traffic.
    Isolate,
    /// Device is forced back to a clean image and re-enters.
    HardReset,
    /// Device stays flagged but keeps running.
    Persist,
    LogOnly,
}

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReactionPolicy {
    pub prover_corrupted: Reaction,
    pub hosts_corrupted: Reaction,
    pub network_corrupted: Reaction,
    pub warning: Reaction,
}

impl Default for ReactionPolicy {
    fn default() -> Self {
        ReactionPolicy {
            prover_corrupted: Reaction::Isolate,
            hosts_corrupted: Reaction::LogOnly,
            network_corrupted: Reaction::LogOnly,
            warning: Reaction::LogOnly,
        }
    }
}

/// One overlay's answer within a session.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SlotState {
    Pending,
    /// Host answered: nothing stored under the key.
    NoProof,
    /// Host never answered.
    Timeout,
    Got(Proof),
}

impl SlotState {
    pub fn is_blank(&self) -> bool {
        matches!(self, SlotState::NoProof | SlotState::Timeout)
    }
}

/// Verifier-side session state. The session nonce doubles as the report
/// binding; query slots are indexed by overlay.
#[derive(Clone, Debug)]
pub struct Session {
    /// Overlay the challenge was routed in.
    pub overlay: u8,
    /// Random ring key that selected the prover.
    pub key: RingId,
    pub nonce: Nonce,
    pub engaged_at_us: u64,
    /// Device id key from the report; unknown until the prover answers.
    pub prover_uid: Option<RingId>,
    pub digest: Option<ReportDigest>,
    pub slots: Vec<SlotState>,
}

impl Session {
    pub fn new(overlay: u8, key: RingId, nonce: Nonce, now_us: u64, overlays: usize) -> Self {
        Session {
            overlay,
            key,
            nonce,
            engaged_at_us: now_us,
            prover_uid: None,
            digest: None,
            slots: alloc::vec![SlotState::Pending; overlays],
        }
    }

    pub fn all_slots_settled(&self) -> bool {
        self.slots.iter().all(|s| *s != SlotState::Pending)
    }
}

/// Uniform prover selection: every member owns an arc, so a uniform key
/// lands on members in proportion to nothing but arc size.
pub fn draw_target(rng: &mut impl RngCore) -> RingId {
    RingId(rng.next_u64())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Verdict {
    Healthy,
    /// Report does not match the elected golden proof.
    ProverCorrupted,
    /// Some stored copies dissent from the elected golden proof.
    OverlayHostsCorrupted,
    /// No strict plurality among the stored copies.
    NetworkCorrupted,
    /// Nothing to judge against: no report, or every copy missing.
    PossibleInfectionWarning,
}

/// Outcome of one session, as traced and as consumed by swarm reactions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerdictRecord {
    pub verdict: Verdict,
    /// Device-id ring key of the prover; the routed challenge key when the
    /// prover never identified itself.
    pub subject: RingId,
    /// Overlays whose stored copy lost the vote.
    pub dissenting: Vec<u8>,
    /// Overlays with no copy (missing or silent host).
    pub blank: Vec<u8>,
    pub engaged_at_us: u64,
    pub decided_at_us: u64,
}

/// Vote among the stored copies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tally {
    /// Winner under strict plurality, if any copies voted at all.
    pub elected: Option<Proof>,
    /// Top count shared by more than one distinct value.
    pub tie: bool,
    pub dissenting: Vec<u8>,
    pub blank: Vec<u8>,
}

/// First-past-the-post among non-blank slots. Blanks abstain rather than
/// vote: a silent host must not be able to force a tie.
pub fn tally(slots: &[SlotState]) -> Tally {
    debug_assert!(slots.iter().all(|s| *s != SlotState::Pending));
    let mut counts: Vec<(Proof, usize)> = Vec::new();
    let mut blank = Vec::new();
    for (i, slot) in slots.iter().enumerate() {
        match slot {
            SlotState::Got(p) => {
                match counts.iter_mut().find(|(v, _)| v == p) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((*p, 1)),
                }
            }
            SlotState::NoProof | SlotState::Timeout => blank.push(i as u8),
            SlotState::Pending => {}
        }
    }
    let top = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    let winners: Vec<&Proof> = counts
        .iter()
        .filter(|(_, c)| *c == top)
        .map(|(v, _)| v)
        .collect();
    let (elected, tie) = match winners.len() {
        0 => (None, false),
        1 => (Some(*winners[0]), false),
        _ => (None, true),
    };
    let dissenting = match elected {
        Some(g) => slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                SlotState::Got(p) if *p != g => Some(i as u8),
                _ => None,
            })
            .collect(),
        None => Vec::new(),
    };
    Tally {
        elected,
        tie,
        dissenting,
        blank,
    }
}

/// Decision for a session whose slots are all settled. Returns the record
/// plus the overlays to repair with the elected proof.
pub fn decide(session: &Session, now_us: u64) -> (VerdictRecord, Option<(Proof, Vec<u8>)>) {
    let t = tally(&session.slots);
    let subject = session.prover_uid.unwrap_or(session.key);
    let base = VerdictRecord {
        verdict: Verdict::PossibleInfectionWarning,
        subject,
        dissenting: t.dissenting.clone(),
        blank: t.blank.clone(),
        engaged_at_us: session.engaged_at_us,
        decided_at_us: now_us,
    };
    if t.tie {
        return (
            VerdictRecord {
                verdict: Verdict::NetworkCorrupted,
                ..base
            },
            None,
        );
    }
    let elected = match t.elected {
        // Every copy blank: nothing to compare the report against.
        None => return (base, None),
        Some(g) => g,
    };
    let prover_ok = match (&session.digest, &session.nonce) {
        (Some(d), nonce) => *d == report_hash(&elected, nonce),
        (None, _) => false,
    };
    let verdict = if !prover_ok {
        Verdict::ProverCorrupted
    } else if !t.dissenting.is_empty() {
        Verdict::OverlayHostsCorrupted
    } else {
        Verdict::Healthy
    };
    let repair = (!t.blank.is_empty()).then(|| (elected, t.blank.clone()));
    (
        VerdictRecord {
            verdict,
            ..base
        },
        repair,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_rng, NONCE_BYTES, PROOF_BYTES};
    use alloc::vec;

    fn p(tag: u8) -> Proof {
        Proof([tag; PROOF_BYTES])
    }

    fn session_with(slots: Vec<SlotState>, digest: Option<ReportDigest>) -> Session {
        let nonce = Nonce([9; NONCE_BYTES]);
        Session {
            overlay: 0,
            key: RingId(100),
            nonce,
            engaged_at_us: 5,
            prover_uid: Some(RingId(42)),
            digest,
            slots,
        }
    }

    fn digest_for(proof: Proof) -> ReportDigest {
        report_hash(&proof, &Nonce([9; NONCE_BYTES]))
    }

    /// Brute-force election oracle: count every distinct value, elect the
    /// unique maximum.
    fn oracle(slots: &[SlotState]) -> (Option<Proof>, bool) {
        let votes: Vec<Proof> = slots
            .iter()
            .filter_map(|s| match s {
                SlotState::Got(v) => Some(*v),
                _ => None,
            })
            .collect();
        let mut best: Option<(Proof, usize)> = None;
        let mut tie = false;
        for v in &votes {
            let c = votes.iter().filter(|x| *x == v).count();
            match best {
                None => best = Some((*v, c)),
                Some((bv, bc)) => {
                    if c > bc {
                        best = Some((*v, c));
                        tie = false;
                    } else if c == bc && *v != bv {
                        tie = true;
                    }
                }
            }
        }
        match (best, tie) {
            (Some(_), true) => (None, true),
            (Some((v, _)), false) => (Some(v), false),
            (None, _) => (None, false),
        }
    }

    #[test]
    fn tally_matches_exhaustive_oracle_up_to_eight_slots() {
        // Alphabet: two blank kinds and four distinct proof values.
        let alphabet = [
            SlotState::NoProof,
            SlotState::Timeout,
            SlotState::Got(p(1)),
            SlotState::Got(p(2)),
            SlotState::Got(p(3)),
            SlotState::Got(p(4)),
        ];
        for len in 1..=8usize {
            // Exhaustive up to 4 slots, strided sampling beyond.
            let total = alphabet.len().pow(len as u32);
            let step = if len <= 4 { 1 } else { (total / 4096).max(1) };
            let mut idx = 0usize;
            while idx < total {
                let mut slots = Vec::with_capacity(len);
                let mut x = idx;
                for _ in 0..len {
                    slots.push(alphabet[x % alphabet.len()]);
                    x /= alphabet.len();
                }
                let t = tally(&slots);
                let (want_elected, want_tie) = oracle(&slots);
                assert_eq!(t.elected, want_elected, "slots {slots:?}");
                assert_eq!(t.tie, want_tie, "slots {slots:?}");
                idx += step;
            }
        }
    }

    #[test]
    fn blanks_abstain_instead_of_voting() {
        let t = tally(&[
            SlotState::Got(p(1)),
            SlotState::NoProof,
            SlotState::Timeout,
        ]);
        assert_eq!(t.elected, Some(p(1)));
        assert!(!t.tie);
        assert_eq!(t.blank, vec![1, 2]);
    }

    #[test]
    fn healthy_prover_with_unanimous_copies() {
        let s = session_with(
            vec![SlotState::Got(p(1)); 3],
            Some(digest_for(p(1))),
        );
        let (rec, repair) = decide(&s, 70);
        assert_eq!(rec.verdict, Verdict::Healthy);
        assert!(rec.dissenting.is_empty());
        assert_eq!(repair, None);
        assert_eq!(rec.subject, RingId(42));
        assert_eq!((rec.engaged_at_us, rec.decided_at_us), (5, 70));
    }

    #[test]
    fn tampered_prover_is_flagged_by_majority() {
        let s = session_with(
            vec![SlotState::Got(p(1)); 3],
            Some(digest_for(p(9))),
        );
        assert_eq!(decide(&s, 0).0.verdict, Verdict::ProverCorrupted);
    }

    #[test]
    fn dissenting_host_is_outvoted_and_flagged() {
        let s = session_with(
            vec![
                SlotState::Got(p(1)),
                SlotState::Got(p(7)),
                SlotState::Got(p(1)),
            ],
            Some(digest_for(p(1))),
        );
        let (rec, repair) = decide(&s, 0);
        assert_eq!(rec.verdict, Verdict::OverlayHostsCorrupted);
        assert_eq!(rec.dissenting, vec![1]);
        assert_eq!(repair, None);
    }

    #[test]
    fn two_against_one_elects_the_pair_even_when_wrong() {
        // Two corrupt hosts agreeing outvote the single honest copy: the
        // prover is honest yet gets flagged. Collusion above the replication
        // threshold defeats the vote by design.
        let s = session_with(
            vec![
                SlotState::Got(p(7)),
                SlotState::Got(p(7)),
                SlotState::Got(p(1)),
            ],
            Some(digest_for(p(1))),
        );
        let (rec, _) = decide(&s, 0);
        assert_eq!(rec.verdict, Verdict::ProverCorrupted);
        assert_eq!(rec.dissenting, vec![2]);
    }

    #[test]
    fn distinct_wrong_copies_tie_into_network_corrupted() {
        let s = session_with(
            vec![
                SlotState::Got(p(1)),
                SlotState::Got(p(2)),
                SlotState::Got(p(3)),
            ],
            Some(digest_for(p(1))),
        );
        let (rec, repair) = decide(&s, 0);
        assert_eq!(rec.verdict, Verdict::NetworkCorrupted);
        assert_eq!(repair, None);
    }

    #[test]
    fn all_blank_yields_warning_not_judgement() {
        let s = session_with(
            vec![SlotState::Timeout, SlotState::NoProof, SlotState::Timeout],
            Some(digest_for(p(1))),
        );
        let (rec, repair) = decide(&s, 0);
        assert_eq!(rec.verdict, Verdict::PossibleInfectionWarning);
        assert_eq!(rec.blank, vec![0, 1, 2]);
        assert_eq!(repair, None);
    }

    #[test]
    fn absent_digest_counts_as_mismatch() {
        // A session without a report is normally closed as a warning before
        // any queries fire; if one is ever decided, the absent digest must
        // read as a mismatch, never as agreement.
        let s = session_with(vec![SlotState::Got(p(1)); 3], None);
        let (rec, _) = decide(&s, 0);
        assert_eq!(rec.verdict, Verdict::ProverCorrupted);
    }

    #[test]
    fn blanks_are_repaired_from_the_elected_value() {
        let s = session_with(
            vec![
                SlotState::Got(p(1)),
                SlotState::Timeout,
                SlotState::Got(p(1)),
            ],
            Some(digest_for(p(1))),
        );
        let (rec, repair) = decide(&s, 0);
        assert_eq!(rec.verdict, Verdict::Healthy);
        assert_eq!(repair, Some((p(1), vec![1])));
    }

    #[test]
    fn single_copy_still_elects() {
        let s = session_with(
            vec![
                SlotState::NoProof,
                SlotState::Got(p(2)),
                SlotState::Timeout,
            ],
            Some(digest_for(p(2))),
        );
        let (rec, repair) = decide(&s, 0);
        assert_eq!(rec.verdict, Verdict::Healthy);
        assert_eq!(repair, Some((p(2), vec![0, 2])));
    }

    #[test]
    fn prover_selection_is_uniform() {
        // 16 equal bins over the key space; chi-square with 15 degrees of
        // freedom must stay under the 0.1% critical value 37.70.
        let mut rng = derive_rng(1234, 0, b"uniformity");
        let draws = 80_000usize;
        let mut bins = [0u64; 16];
        for _ in 0..draws {
            let k = draw_target(&mut rng);
            bins[(k.0 >> 60) as usize] += 1;
        }
        let expected = draws as f64 / 16.0;
        let chi2: f64 = bins
            .iter()
            .map(|&b| {
                let d = b as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 37.70, "chi-square {chi2} over critical value");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn slot_strategy() -> impl Strategy<Value = SlotState> {
            prop_oneof![
                Just(SlotState::NoProof),
                Just(SlotState::Timeout),
                (1u8..=4).prop_map(|t| SlotState::Got(p(t))),
            ]
        }

        proptest! {
            #[test]
            fn tally_agrees_with_oracle(slots in proptest::collection::vec(slot_strategy(), 1..8)) {
                let t = tally(&slots);
                let (elected, tie) = oracle(&slots);
                prop_assert_eq!(t.elected, elected);
                prop_assert_eq!(t.tie, tie);
            }

            /// Abstentions never flip an election among the cast votes.
            #[test]
            fn adding_blanks_never_changes_the_winner(
                slots in proptest::collection::vec(slot_strategy(), 1..6),
                extra_blanks in 1usize..4,
            ) {
                let before = tally(&slots);
                let mut padded = slots.clone();
                padded.extend(core::iter::repeat(SlotState::NoProof).take(extra_blanks));
                let after = tally(&padded);
                prop_assert_eq!(before.elected, after.elected);
                prop_assert_eq!(before.tie, after.tie);
            }
        }
    }
}
