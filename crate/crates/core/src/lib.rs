//! Protocol core for a verifier-less swarm attestation network built on
//! parallel consistent-hashing overlays.
//!
//! Every device participates in `o` independent ring overlays. Its position
//! in each overlay is derived from a Diffie-Hellman public value that doubles
//! as an encryption identity, and its golden software measurement is
//! replicated once per overlay at the ring-responsible device. Any member can
//! attest any other by challenging it and electing the reference measurement
//! from the per-overlay replicas by plurality vote, so no central verifier
//! exists.
//!
//! Module map:
//!
//! - [`ring`]: identifier arithmetic, routing state, lookup.
//! - [`crypto`]: key agreement, ciphers, certificates, measurements.
//! - [`wire`]: bit-exact message codec (see `LAYOUT.md` at the repo root).
//! - [`node`]: per-device protocol engine (certification, join, stabilize,
//!   rectify, proof handoff, absence detection).
//! - [`attest`]: attestation sessions, plurality voting, recovery, reaction.
//! - [`simnet`]: deterministic discrete-event simulator with fault injection.
//!
//! The crate is `no_std` + `alloc` outside the `std` feature; the companion
//! `attestnet-sim` crate layers scenario files, metrics and a CLI on top.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod attest;
pub mod crypto;
pub mod node;
pub mod ring;
pub mod simnet;
pub mod wire;
