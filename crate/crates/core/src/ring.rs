//! m-bit circular identifier space and per-overlay routing state.
//!
//! Identifiers live on a circle of size `2^m`. Every interval and distance
//! operation wraps modulo `2^m`. A key is owned by its *responsible node*:
//! the first member clockwise at or after the key. Routing state per overlay
//! is a predecessor, an ordered successor list of length `s`, and a finger
//! table whose logical slot `i` (1-based) points at the first live member at
//! or after `self + 2^(i-1)`; consecutive slots resolving to the same member
//! share one stored entry.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

/// Position on the identifier circle. The owning [`Space`] guarantees
/// `0 <= value < 2^m`; all arithmetic on positions goes through the space.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RingId(pub u64);

impl core::fmt::Debug for RingId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Circular interval endpoints: open or closed on each side.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Closure {
    OpenOpen,
    OpenClosed,
    ClosedOpen,
    ClosedClosed,
}

/// Errors from membership queries.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum RingError {
    /// A responsibility query ran against an overlay with no members.
    EmptyMembership,
}

impl core::fmt::Display for RingError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RingError::EmptyMembership => write!(f, "overlay has no members"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for RingError {}

/// The identifier circle of width `m` bits, `1 <= m <= 64`.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Space {
    m: u8,
}

impl Space {
    pub fn new(m: u8) -> Self {
        assert!(m >= 1 && m <= 64, "ring width must be in 1..=64");
        Space { m }
    }

    pub fn bits(&self) -> u8 {
        self.m
    }

    fn mask(&self) -> u64 {
        u64::MAX >> (64 - self.m as u32)
    }

    /// Truncates an arbitrary value onto the circle.
    pub fn id(&self, raw: u64) -> RingId {
        RingId(raw & self.mask())
    }

    /// Clockwise distance from `from` to `to` in `[0, 2^m)`.
    pub fn distance(&self, from: RingId, to: RingId) -> u64 {
        to.0.wrapping_sub(from.0) & self.mask()
    }

    /// Start position of finger slot `i` (1-based): `origin + 2^(i-1)`.
    pub fn finger_start(&self, origin: RingId, i: u8) -> RingId {
        debug_assert!(i >= 1 && i <= self.m);
        self.id(origin.0.wrapping_add(1u64.wrapping_shl(i as u32 - 1)))
    }

    /// Circular interval membership with wraparound.
    ///
    /// When `from == to` the interval spans the whole circle: the open-open
    /// case is everything except the shared endpoint, all other closures are
    /// the full circle.
    pub fn in_interval(&self, x: RingId, from: RingId, to: RingId, closure: Closure) -> bool {
        if from == to {
            return match closure {
                Closure::OpenOpen => x != from,
                _ => true,
            };
        }
        let dx = self.distance(from, x);
        let dt = self.distance(from, to);
        match closure {
            Closure::OpenOpen => dx > 0 && dx < dt,
            Closure::OpenClosed => dx > 0 && dx <= dt,
            Closure::ClosedOpen => dx < dt,
            Closure::ClosedClosed => dx <= dt,
        }
    }

    /// First member clockwise at or after `key` (the key's owner), by linear
    /// scan over an arbitrary member iterator.
    pub fn responsible_node<I>(&self, key: RingId, members: I) -> Result<RingId, RingError>
    where
        I: IntoIterator<Item = RingId>,
    {
        let mut best: Option<(u64, RingId)> = None;
        for member in members {
            let d = self.distance(key, member);
            match best {
                Some((bd, _)) if bd <= d => {}
                _ => best = Some((d, member)),
            }
        }
        best.map(|(_, id)| id).ok_or(RingError::EmptyMembership)
    }

    /// Same ownership rule over a sorted member slice, in `O(log n)`.
    pub fn responsible_in_sorted(&self, key: RingId, sorted: &[RingId]) -> Result<RingId, RingError> {
        if sorted.is_empty() {
            return Err(RingError::EmptyMembership);
        }
        debug_assert!(sorted.windows(2).all(|w| w[0] < w[1]));
        match sorted.binary_search(&key) {
            Ok(i) => Ok(sorted[i]),
            Err(i) if i == sorted.len() => Ok(sorted[0]),
            Err(i) => Ok(sorted[i]),
        }
    }
}

/// Anything usable as a routing-table entry: it has a ring position.
pub trait RingEntry: Clone {
    fn ring(&self) -> RingId;
}

impl RingEntry for RingId {
    fn ring(&self) -> RingId {
        *self
    }
}

impl<A: Clone> RingEntry for (RingId, A) {
    fn ring(&self) -> RingId {
        self.0
    }
}

/// Per-overlay routing state of one device.
///
/// The finger map stores only distinct targets; `slot_target` recomputes the
/// logical slot view on demand. Entries are routing hints, not authenticated
/// identities: end-to-end header encryption rejects traffic that reaches a
/// wrong device.
#[derive(Clone, Debug)]
pub struct OverlayRouting<E: RingEntry> {
    pub overlay_index: u8,
    pub space: Space,
    pub self_oid: RingId,
    pub predecessor: Option<E>,
    successors: Vec<E>,
    s: usize,
    fingers: BTreeMap<RingId, E>,
    next_refresh_slot: u8,
}

impl<E: RingEntry> OverlayRouting<E> {
    pub fn new(space: Space, overlay_index: u8, self_oid: RingId, s: usize) -> Self {
        assert!(s >= 1, "successor list length must be at least 1");
        OverlayRouting {
            overlay_index,
            space,
            self_oid,
            predecessor: None,
            successors: Vec::new(),
            s,
            fingers: BTreeMap::new(),
            next_refresh_slot: 0,
        }
    }

    pub fn successor(&self) -> Option<&E> {
        self.successors.first()
    }

    pub fn successors(&self) -> &[E] {
        &self.successors
    }

    pub fn max_successors(&self) -> usize {
        self.s
    }

    /// Replaces the whole list: `head` plus `tail` (the head's own successor
    /// list), truncated to `s` distinct entries, self excluded from the tail.
    pub fn set_successors(&mut self, head: E, tail: &[E]) {
        let mut list = Vec::with_capacity(self.s);
        list.push(head);
        for e in tail {
            if list.len() >= self.s {
                break;
            }
            if e.ring() != self.self_oid && list.iter().all(|x: &E| x.ring() != e.ring()) {
                list.push(e.clone());
            }
        }
        // Pruning is only needed when membership actually moved; the steady
        // state re-installs an identical list every period.
        let changed = list.len() != self.successors.len()
            || list
                .iter()
                .zip(self.successors.iter())
                .any(|(a, b)| a.ring() != b.ring());
        self.successors = list;
        if changed {
            self.prune_fingers();
        }
    }

    /// Pushes a new immediate successor in front of the current list.
    pub fn adopt_successor(&mut self, head: E) {
        let head_ring = head.ring();
        if self.successor().map(|e| e.ring()) == Some(head_ring) {
            return;
        }
        let mut list = Vec::with_capacity(self.s);
        list.push(head);
        for e in self.successors.iter() {
            if list.len() >= self.s {
                break;
            }
            if e.ring() != head_ring && e.ring() != self.self_oid {
                list.push(e.clone());
            }
        }
        self.successors = list;
        self.prune_fingers();
    }

    /// Drops a departed member from every table. Returns the new immediate
    /// successor, or `None` when the successor list is exhausted.
    pub fn evict(&mut self, dead: RingId) -> Option<&E> {
        self.successors.retain(|e| e.ring() != dead);
        self.fingers.remove(&dead);
        if let Some(p) = &self.predecessor {
            if p.ring() == dead {
                self.predecessor = None;
            }
        }
        self.prune_fingers();
        self.successor()
    }

    /// Records a verified-live member as a finger candidate; keeps only
    /// entries that serve at least one slot.
    pub fn learn(&mut self, entry: E) {
        if entry.ring() == self.self_oid {
            return;
        }
        // A re-learned known member cannot orphan any slot.
        if self.fingers.insert(entry.ring(), entry).is_none() {
            self.prune_fingers();
        }
    }

    /// Bulk finger install for externally computed tables; prunes once.
    pub fn install_fingers<I: IntoIterator<Item = E>>(&mut self, entries: I) {
        for e in entries {
            if e.ring() != self.self_oid {
                self.fingers.insert(e.ring(), e);
            }
        }
        self.prune_fingers();
    }

    /// The first known member at or after `start`, searching fingers and the
    /// successor list.
    fn first_at_or_after(&self, start: RingId) -> Option<RingId> {
        let mut best: Option<(u64, RingId)> = None;
        let candidates = self
            .fingers
            .keys()
            .copied()
            .chain(self.successors.iter().map(|e| e.ring()));
        for ring in candidates {
            let d = self.space.distance(start, ring);
            match best {
                Some((bd, _)) if bd <= d => {}
                _ => best = Some((d, ring)),
            }
        }
        best.map(|(_, r)| r)
    }

    /// Resolved target of logical finger slot `i` (1-based).
    pub fn slot_target(&self, i: u8) -> Option<RingId> {
        self.first_at_or_after(self.space.finger_start(self.self_oid, i))
    }

    /// Nearest known member clockwise of self, from any table. Recovery
    /// source when the successor list runs empty.
    pub fn nearest_known(&self) -> Option<&E> {
        let ring = self.first_at_or_after(RingId(self.self_oid.0.wrapping_add(1)))?;
        self.fingers
            .get(&ring)
            .or_else(|| self.successors.iter().find(|e| e.ring() == ring))
    }

    /// Round-robin slot whose refresh is due next.
    pub fn next_refresh_start(&mut self) -> RingId {
        let m = self.space.bits();
        let slot = (self.next_refresh_slot % m) + 1;
        self.next_refresh_slot = self.next_refresh_slot.wrapping_add(1) % m;
        self.space.finger_start(self.self_oid, slot)
    }

    fn prune_fingers(&mut self) {
        if self.fingers.is_empty() {
            return;
        }
        let mut used: alloc::collections::BTreeSet<RingId> = alloc::collections::BTreeSet::new();
        for i in 1..=self.space.bits() {
            if let Some(r) = self.slot_target(i) {
                used.insert(r);
            }
        }
        self.fingers.retain(|r, _| used.contains(r));
    }

    /// Distinct stored finger entries (the `f` term of the memory model).
    pub fn finger_entries(&self) -> impl Iterator<Item = &E> {
        self.fingers.values()
    }

    pub fn finger_count(&self) -> usize {
        self.fingers.len()
    }

    /// Next hop toward `target`: the known entry most closely preceding the
    /// target, falling back to the immediate successor.
    ///
    /// Repeated application reaches the target's responsible node: each hop
    /// lands strictly closer (clockwise) to the target, and the final hop is
    /// detected by the owner check `target in (pred, self]` at the receiver.
    pub fn lookup_next_hop(&self, target: RingId) -> Option<&E> {
        let mut best: Option<(u64, &E)> = None;
        for e in self.fingers.values().chain(self.successors.iter()) {
            // Strictly between self and target: candidates that already
            // passed the target would overshoot.
            if self
                .space
                .in_interval(e.ring(), self.self_oid, target, Closure::OpenOpen)
            {
                let d = self.space.distance(self.self_oid, e.ring());
                match best {
                    Some((bd, _)) if bd >= d => {}
                    _ => best = Some((d, e)),
                }
            }
        }
        match best {
            Some((_, e)) => Some(e),
            None => self.successor(),
        }
    }
}
