//! Key agreement, ciphers, certificates, nonces and software measurements.
//!
//! A device's overlay identity is a Diffie-Hellman public value
//! `OID = g^X mod N`; the value doubles as an encryption identity. Any two
//! members derive a pairwise key from their OIDs without a handshake, and the
//! message header addressed to `B` is encrypted under `H(B_OID)`, so holding
//! an overlay's OIDs is what makes a device able to talk at all.
//!
//! Two cipher suites share every byte layout:
//!
//! - the **test suite** (default in simulations): ChaCha8 stream cipher keyed
//!   through SHA-256, with an encrypt-then-MAC tag, and a 256-bit textbook-RSA
//!   scheme for certification. Fully deterministic under seeded RNGs.
//! - the **real suite** (`real-crypto` feature): ChaCha20-Poly1305 and
//!   RSA-2048, exercised at primitive level; see [`real`].
//!
//! Storage-facing material uses fixed-width records (64-byte device id,
//! 1218/294-byte private/public key records, 256-byte certificate record) so
//! the per-device memory accounting is byte-exact regardless of suite.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cell::RefCell;

use num_bigint::BigUint;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::ring::{RingId, Space};

/// Deterministic RNG used everywhere randomness is needed.
pub type DetRng = rand_chacha::ChaCha8Rng;

pub const DH_PUB_BYTES: usize = 56;
pub const SECRET_BYTES: usize = 32;
pub const SYM_KEY_BYTES: usize = 32;
pub const NONCE_BYTES: usize = 16;
pub const MAC_BYTES: usize = 16;
pub const PROOF_BYTES: usize = 128;
pub const DIGEST_BYTES: usize = 32;
pub const UID_BYTES: usize = 64;
pub const PRIV_RECORD_BYTES: usize = 1218;
pub const PUB_RECORD_BYTES: usize = 294;
pub const CERT_RECORD_BYTES: usize = 256;
/// Compact on-wire certificate: ring id, RSA modulus, expiry, CA id, signature.
pub const CERT_WIRE_BYTES: usize = 8 + 32 + 8 + 8 + 32;
/// Test-suite RSA block (256-bit modulus).
pub const RSA_BLOCK_BYTES: usize = 32;
/// Bytes added by [`asym_sign_encrypt`] on top of the plaintext.
pub const SEAL_OVERHEAD: usize = RSA_BLOCK_BYTES + MAC_BYTES + RSA_BLOCK_BYTES;

pub const RSA_E: u32 = 65537;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CryptoError {
    /// Peer public value outside the valid group range.
    MalformedPeer,
    /// Authentication tag mismatch: ciphertext manipulated or wrong key.
    Tamper,
    /// Signature did not verify against the claimed sender.
    BadSignature,
    /// Structurally invalid input (short buffer, bad padding).
    Malformed,
    /// Value does not fit the fixed wire width.
    Oversize,
}

impl core::fmt::Display for CryptoError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let s = match self {
            CryptoError::MalformedPeer => "peer value outside group range",
            CryptoError::Tamper => "authentication failure",
            CryptoError::BadSignature => "signature verification failure",
            CryptoError::Malformed => "malformed cryptographic input",
            CryptoError::Oversize => "value exceeds fixed wire width",
        };
        f.write_str(s)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CryptoError {}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CertError {
    /// Certificate names a different authority.
    UnknownCa,
    /// Authority signature invalid.
    BadSignature,
    /// Certificate validity window has passed.
    Expired,
}

impl core::fmt::Display for CertError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let s = match self {
            CertError::UnknownCa => "certificate from unknown authority",
            CertError::BadSignature => "certificate signature invalid",
            CertError::Expired => "certificate expired",
        };
        f.write_str(s)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CertError {}

// ---------------------------------------------------------------------------
// Fixed-width byte records
// ---------------------------------------------------------------------------

macro_rules! byte_record {
    ($(#[$doc:meta])* $name:ident, $len:expr) => {
        $(#[$doc])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8] {
                &self.0
            }

            pub fn from_slice(s: &[u8]) -> Result<Self, CryptoError> {
                if s.len() != $len {
                    return Err(CryptoError::Malformed);
                }
                let mut a = [0u8; $len];
                a.copy_from_slice(s);
                Ok($name(a))
            }
        }

        impl Default for $name {
            fn default() -> Self {
                $name([0u8; $len])
            }
        }

        impl core::fmt::Debug for $name {
            fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
                write!(f, concat!(stringify!($name), "({:02x}{:02x}..)"), self.0[0], self.0[1])
            }
        }
    };
}

byte_record!(
    /// Serialized DH public value, big-endian, left-padded to 56 bytes.
    DhPub,
    DH_PUB_BYTES
);
byte_record!(
    /// Symmetric key at cipher width.
    SymKey,
    SYM_KEY_BYTES
);
byte_record!(
    /// Message nonce.
    Nonce,
    NONCE_BYTES
);
byte_record!(
    /// Golden measurement of a monitored software region.
    Proof,
    PROOF_BYTES
);
byte_record!(
    /// Nonce-bound measurement digest carried in attestation reports.
    ReportDigest,
    DIGEST_BYTES
);
byte_record!(
    /// Device-lifetime identifier.
    Uid,
    UID_BYTES
);
byte_record!(
    /// Stored private-key record (content padded to the accounting width).
    PrivRecord,
    PRIV_RECORD_BYTES
);
byte_record!(
    /// Stored public-key record.
    PubRecord,
    PUB_RECORD_BYTES
);
byte_record!(
    /// Stored certificate record.
    CertRecord,
    CERT_RECORD_BYTES
);

/// DH exponent. Never serialized; debug output is redacted.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SecretX(pub(crate) [u8; SECRET_BYTES]);

impl core::fmt::Debug for SecretX {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("SecretX(<redacted>)")
    }
}

// ---------------------------------------------------------------------------
// Hashing and RNG derivation
// ---------------------------------------------------------------------------

pub fn sha256_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

fn trunc16(d: [u8; 32]) -> [u8; 16] {
    let mut out = [0u8; 16];
    out.copy_from_slice(&d[..16]);
    out
}

/// Independent deterministic RNG stream for `(seed, device, purpose)`.
pub fn derive_rng(seed: u64, device: u32, purpose: &[u8]) -> DetRng {
    let d = sha256_parts(&[b"rng", &seed.to_le_bytes(), &device.to_le_bytes(), purpose]);
    DetRng::from_seed(d)
}

pub fn fresh_nonce(rng: &mut impl RngCore) -> Nonce {
    let mut n = [0u8; NONCE_BYTES];
    rng.fill_bytes(&mut n);
    Nonce(n)
}

/// Ring position of an overlay identity: truncated hash of the public value,
/// so ring width and group size stay independent.
pub fn oid_ring(space: Space, oid: &DhPub) -> RingId {
    let d = sha256_parts(&[b"ring-oid", oid.as_bytes()]);
    space.id(u64::from_be_bytes(d[..8].try_into().unwrap()))
}

/// Ring position under which a device's proof is stored, identical in every
/// overlay.
pub fn uid_ring(space: Space, uid: &Uid) -> RingId {
    let d = sha256_parts(&[b"ring-uid", uid.as_bytes()]);
    space.id(u64::from_be_bytes(d[..8].try_into().unwrap()))
}

// ---------------------------------------------------------------------------
// Group parameters and key agreement
// ---------------------------------------------------------------------------

/// Shared group parameters: generator `g` and prime modulus `N`. Every device
/// of a network instance holds the same pair.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DhParams {
    pub g: BigUint,
    pub n: BigUint,
}

/// 448-bit safe prime for wire-bound identities under the real suite.
const WIRE_GROUP_448_HEX: &[u8] = b"a171fa6dab5ac67d860a304f283af299265e345011f9ced565238e8af5bd240ba171fa6dab5ac67d860a304f283af299265e345011faef87";

/// RFC 3526 group 14 (2048-bit MODP), for full-size key-agreement tests.
const MODP_2048_HEX: &[u8] = b"FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7EDEE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3BE39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

fn biguint_from_hex(h: &[u8]) -> BigUint {
    BigUint::parse_bytes(h, 16).expect("valid hex constant")
}

impl DhParams {
    pub fn new(g: BigUint, n: BigUint) -> Self {
        assert!(g > BigUint::from(1u8) && g < n, "generator outside (1, N)");
        DhParams { g, n }
    }

    /// Toy group from the worked key-agreement examples.
    pub fn tiny() -> Self {
        DhParams::new(BigUint::from(5u8), BigUint::from(23u8))
    }

    /// Default simulation group: the Mersenne prime 2^61 - 1. Small enough
    /// for fast exponentiation, large enough that identities never collide
    /// in practice.
    pub fn sim_default() -> Self {
        DhParams::new(BigUint::from(5u8), (BigUint::from(1u8) << 61) - 1u8)
    }

    /// 448-bit safe prime: the largest group whose elements fit the 56-byte
    /// wire field.
    pub fn wire448() -> Self {
        DhParams::new(BigUint::from(2u8), biguint_from_hex(WIRE_GROUP_448_HEX))
    }

    /// 2048-bit well-known group; too large for the wire identity field,
    /// used by primitive-level tests only.
    pub fn modp2048() -> Self {
        DhParams::new(BigUint::from(2u8), biguint_from_hex(MODP_2048_HEX))
    }

    /// Whether group elements fit the fixed 56-byte identity field.
    pub fn fits_wire(&self) -> bool {
        self.n.bits() <= (DH_PUB_BYTES * 8) as u64
    }
}

pub fn dh_pub_from_biguint(v: &BigUint) -> Result<DhPub, CryptoError> {
    let raw = v.to_bytes_be();
    if raw.len() > DH_PUB_BYTES {
        return Err(CryptoError::Oversize);
    }
    let mut out = [0u8; DH_PUB_BYTES];
    out[DH_PUB_BYTES - raw.len()..].copy_from_slice(&raw);
    Ok(DhPub(out))
}

pub fn dh_pub_to_biguint(v: &DhPub) -> BigUint {
    BigUint::from_bytes_be(v.as_bytes())
}

/// Raw public value for exponent bytes (big-endian), any group size.
pub fn dh_public_raw(params: &DhParams, x: &[u8]) -> BigUint {
    params.g.modpow(&BigUint::from_bytes_be(x), &params.n)
}

/// Raw shared secret `peer^x mod N`, any group size.
pub fn dh_shared_raw(params: &DhParams, x: &[u8], peer: &BigUint) -> BigUint {
    peer.modpow(&BigUint::from_bytes_be(x), &params.n)
}

/// Memo of pairwise keys already agreed with peers. Derivation is pure, so
/// the cache is invisible to everything but the clock; cleared when full.
pub struct PairCache(RefCell<BTreeMap<[u8; DH_PUB_BYTES], SymKey>>);

const PAIR_CACHE_MAX: usize = 8192;

impl PairCache {
    fn new() -> Self {
        PairCache(RefCell::new(BTreeMap::new()))
    }

    fn get(&self, peer: &DhPub) -> Option<SymKey> {
        self.0.borrow().get(&peer.0).cloned()
    }

    fn put(&self, peer: &DhPub, key: SymKey) {
        let mut m = self.0.borrow_mut();
        if m.len() >= PAIR_CACHE_MAX {
            m.clear();
        }
        m.insert(peer.0, key);
    }
}

impl Clone for PairCache {
    fn clone(&self) -> Self {
        PairCache::new()
    }
}

impl core::fmt::Debug for PairCache {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("PairCache(<redacted>)")
    }
}

/// Per-overlay identity keypair: exponent `X` and `OID = g^X mod N`.
#[derive(Clone, Debug)]
pub struct OidKeypair {
    secret: SecretX,
    pub public: DhPub,
    pairs: PairCache,
}

impl OidKeypair {
    /// Fresh keypair; a zero exponent is resampled.
    pub fn generate(params: &DhParams, rng: &mut impl RngCore) -> Self {
        assert!(params.fits_wire(), "group too large for wire identities");
        loop {
            let mut x = [0u8; SECRET_BYTES];
            rng.fill_bytes(&mut x);
            let xn = BigUint::from_bytes_be(&x);
            if xn == BigUint::from(0u8) || (&xn % (&params.n - 1u8)) == BigUint::from(0u8) {
                continue;
            }
            return OidKeypair::from_secret(params, x);
        }
    }

    /// Keypair from a forced exponent (tests and replayable setups).
    pub fn from_secret(params: &DhParams, x: [u8; SECRET_BYTES]) -> Self {
        let public = dh_pub_from_biguint(&dh_public_raw(params, &x)).expect("group fits wire");
        OidKeypair {
            secret: SecretX(x),
            public,
            pairs: PairCache::new(),
        }
    }

    pub fn secret_bytes_len(&self) -> usize {
        SECRET_BYTES
    }

    /// Pairwise key with a peer identity: `H(peer^X mod N)`. Symmetric in
    /// the two parties; memoized per peer.
    pub fn shared_key(&self, peer: &DhPub, params: &DhParams) -> Result<SymKey, CryptoError> {
        if let Some(k) = self.pairs.get(peer) {
            return Ok(k);
        }
        let p = dh_pub_to_biguint(peer);
        if p == BigUint::from(0u8) || p >= params.n {
            return Err(CryptoError::MalformedPeer);
        }
        let raw = p.modpow(&BigUint::from_bytes_be(&self.secret.0), &params.n);
        let mut padded = [0u8; DH_PUB_BYTES];
        let b = raw.to_bytes_be();
        padded[DH_PUB_BYTES - b.len()..].copy_from_slice(&b);
        let key = SymKey(sha256_parts(&[b"dh-shared", &padded]));
        self.pairs.put(peer, key.clone());
        Ok(key)
    }
}

/// Key every holder of an identity can derive; headers addressed to that
/// identity are sealed under it. Header confidentiality therefore rests on
/// OIDs circulating only among certified members.
pub fn header_key(oid: &DhPub) -> SymKey {
    SymKey(sha256_parts(&[b"header-key", oid.as_bytes()]))
}

// ---------------------------------------------------------------------------
// Authenticated symmetric encryption
// ---------------------------------------------------------------------------

/// Cipher suite selector. Both suites share byte layouts and overheads.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SuiteKind {
    #[default]
    Test,
    #[cfg(feature = "real-crypto")]
    Real,
}

fn test_keystream_xor(key: &SymKey, nonce: &Nonce, label: &[u8], data: &mut [u8]) {
    let seed = sha256_parts(&[b"stream", label, key.as_bytes(), nonce.as_bytes()]);
    let mut stream = DetRng::from_seed(seed);
    let mut block = [0u8; 64];
    let mut off = 0usize;
    while off < data.len() {
        stream.fill_bytes(&mut block);
        for (d, k) in data[off..].iter_mut().zip(block.iter()) {
            *d ^= k;
        }
        off += 64;
    }
}

fn test_mac(key: &SymKey, nonce: &Nonce, aad: &[u8], ct: &[u8]) -> [u8; MAC_BYTES] {
    let aad_len = (aad.len() as u64).to_le_bytes();
    trunc16(sha256_parts(&[b"mac", key.as_bytes(), nonce.as_bytes(), &aad_len, aad, ct]))
}

/// Encrypts and authenticates; output is `ciphertext || 16-byte tag`.
pub fn sym_seal(kind: SuiteKind, key: &SymKey, nonce: &Nonce, aad: &[u8], pt: &[u8]) -> Vec<u8> {
    match kind {
        SuiteKind::Test => {
            let mut out = Vec::with_capacity(pt.len() + MAC_BYTES);
            out.extend_from_slice(pt);
            test_keystream_xor(key, nonce, b"", &mut out);
            let mac = test_mac(key, nonce, aad, &out);
            out.extend_from_slice(&mac);
            out
        }
        #[cfg(feature = "real-crypto")]
        SuiteKind::Real => real::sym_seal(key, nonce, aad, pt),
    }
}

/// Inverse of [`sym_seal`]; tampering, a wrong key or wrong associated data
/// fail with [`CryptoError::Tamper`] and never yield plaintext.
pub fn sym_open(
    kind: SuiteKind,
    key: &SymKey,
    nonce: &Nonce,
    aad: &[u8],
    data: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if data.len() < MAC_BYTES {
        return Err(CryptoError::Malformed);
    }
    match kind {
        SuiteKind::Test => {
            let (ct, tag) = data.split_at(data.len() - MAC_BYTES);
            if test_mac(key, nonce, aad, ct) != tag {
                return Err(CryptoError::Tamper);
            }
            let mut pt = ct.to_vec();
            test_keystream_xor(key, nonce, b"", &mut pt);
            Ok(pt)
        }
        #[cfg(feature = "real-crypto")]
        SuiteKind::Real => real::sym_open(key, nonce, aad, data),
    }
}

// ---------------------------------------------------------------------------
// Test-suite RSA (256-bit textbook scheme)
// ---------------------------------------------------------------------------

fn random_below(rng: &mut impl RngCore, n: &BigUint) -> BigUint {
    let bytes = ((n.bits() + 7) / 8) as usize;
    let top_bits = (n.bits() % 8) as u32;
    loop {
        let mut buf = alloc::vec![0u8; bytes];
        rng.fill_bytes(&mut buf);
        if top_bits != 0 {
            buf[0] &= (1u8 << top_bits).wrapping_sub(1);
        }
        let v = BigUint::from_bytes_be(&buf);
        if v < *n {
            return v;
        }
    }
}

/// Miller-Rabin with random witnesses.
pub fn probably_prime(n: &BigUint, rng: &mut impl RngCore, rounds: u32) -> bool {
    let one = BigUint::from(1u8);
    let two = BigUint::from(2u8);
    if *n < two {
        return false;
    }
    if *n == two || *n == BigUint::from(3u8) {
        return true;
    }
    if (n % &two) == BigUint::from(0u8) {
        return false;
    }
    // n - 1 = d * 2^r
    let n_minus_1 = n - &one;
    let mut d = n_minus_1.clone();
    let mut r = 0u32;
    while (&d % &two) == BigUint::from(0u8) {
        d >>= 1;
        r += 1;
    }
    'witness: for _ in 0..rounds {
        let a = loop {
            let a = random_below(rng, n);
            if a >= two && a < n_minus_1 {
                break a;
            }
        };
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 0..r.saturating_sub(1) {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn gen_prime(rng: &mut impl RngCore, bits: usize) -> BigUint {
    assert!(bits % 8 == 0 && bits >= 16);
    loop {
        let mut buf = alloc::vec![0u8; bits / 8];
        rng.fill_bytes(&mut buf);
        buf[0] |= 0xc0; // keep products at full width
        let last = buf.len() - 1;
        buf[last] |= 1;
        let cand = BigUint::from_bytes_be(&buf);
        if probably_prime(&cand, rng, 24) {
            return cand;
        }
    }
}

fn modinv(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    // Extended Euclid over signed intermediates.
    use num_bigint::BigInt;
    let (mut old_r, mut r) = (BigInt::from(a.clone()), BigInt::from(m.clone()));
    let (mut old_s, mut s) = (BigInt::from(1), BigInt::from(0));
    while r != BigInt::from(0) {
        let q = &old_r / &r;
        let tmp = &old_r - &q * &r;
        old_r = core::mem::replace(&mut r, tmp);
        let tmp = &old_s - &q * &s;
        old_s = core::mem::replace(&mut s, tmp);
    }
    if old_r != BigInt::from(1) {
        return None;
    }
    let m_int = BigInt::from(m.clone());
    let inv = ((old_s % &m_int) + &m_int) % &m_int;
    inv.to_biguint()
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RsaPublic {
    pub n: BigUint,
}

#[derive(Clone)]
pub struct RsaPrivate {
    pub n: BigUint,
    d: BigUint,
    p: BigUint,
    q: BigUint,
}

impl core::fmt::Debug for RsaPrivate {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("RsaPrivate(<redacted>)")
    }
}

/// 256-bit keypair for the test suite.
pub fn rsa_keygen(rng: &mut impl RngCore) -> (RsaPrivate, RsaPublic) {
    let e = BigUint::from(RSA_E);
    loop {
        let p = gen_prime(rng, RSA_BLOCK_BYTES * 4);
        let q = gen_prime(rng, RSA_BLOCK_BYTES * 4);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let lambda = (&p - 1u8) * (&q - 1u8);
        if let Some(d) = modinv(&e, &lambda) {
            return (
                RsaPrivate {
                    n: n.clone(),
                    d,
                    p,
                    q,
                },
                RsaPublic { n },
            );
        }
    }
}

fn to_block(v: &BigUint) -> [u8; RSA_BLOCK_BYTES] {
    let raw = v.to_bytes_be();
    let mut out = [0u8; RSA_BLOCK_BYTES];
    out[RSA_BLOCK_BYTES - raw.len()..].copy_from_slice(&raw);
    out
}

/// Encapsulates a 16-byte session key to a public key; one fixed-size block.
pub fn rsa_encrypt_key(
    pk: &RsaPublic,
    key: &[u8; 16],
    rng: &mut impl RngCore,
) -> [u8; RSA_BLOCK_BYTES] {
    // 31-byte padded unit, always below a 256-bit modulus with its top bit
    // set: [0x01 | 13 random nonzero-free bytes | 0x00 | key16].
    let mut pt = [0u8; RSA_BLOCK_BYTES - 1];
    pt[0] = 0x01;
    rng.fill_bytes(&mut pt[1..14]);
    pt[14] = 0x00;
    pt[15..31].copy_from_slice(key);
    let m = BigUint::from_bytes_be(&pt);
    to_block(&m.modpow(&BigUint::from(RSA_E), &pk.n))
}

pub fn rsa_decrypt_key(sk: &RsaPrivate, block: &[u8; RSA_BLOCK_BYTES]) -> Result<[u8; 16], CryptoError> {
    let c = BigUint::from_bytes_be(block);
    if c >= sk.n {
        return Err(CryptoError::Malformed);
    }
    let m = c.modpow(&sk.d, &sk.n);
    let raw = m.to_bytes_be();
    if raw.len() != RSA_BLOCK_BYTES - 1 || raw[0] != 0x01 || raw[14] != 0x00 {
        return Err(CryptoError::Malformed);
    }
    let mut key = [0u8; 16];
    key.copy_from_slice(&raw[15..31]);
    Ok(key)
}

/// Signs a 32-byte digest (truncated into the modulus range).
pub fn rsa_sign(sk: &RsaPrivate, digest: &[u8; 32]) -> [u8; RSA_BLOCK_BYTES] {
    let m = BigUint::from_bytes_be(&digest[..RSA_BLOCK_BYTES - 1]);
    to_block(&m.modpow(&sk.d, &sk.n))
}

pub fn rsa_verify(pk: &RsaPublic, digest: &[u8; 32], sig: &[u8; RSA_BLOCK_BYTES]) -> bool {
    let s = BigUint::from_bytes_be(sig);
    if s >= pk.n {
        return false;
    }
    let m = s.modpow(&BigUint::from(RSA_E), &pk.n);
    m == BigUint::from_bytes_be(&digest[..RSA_BLOCK_BYTES - 1])
}

// ---------------------------------------------------------------------------
// Sign-then-encrypt seal (the certification double wrap)
// ---------------------------------------------------------------------------

fn seal_sym_key(session: &[u8; 16]) -> SymKey {
    SymKey(sha256_parts(&[b"seal-key", session]))
}

fn seal_nonce(block: &[u8; RSA_BLOCK_BYTES]) -> Nonce {
    Nonce(trunc16(sha256_parts(&[b"seal-nonce", block])))
}

/// Encrypts `pt` so only `recipient` can read it and any reader can attribute
/// it to `sender`: a hybrid public-key encryption whose whole ciphertext is
/// signed by the sender. Output length is `pt.len() + SEAL_OVERHEAD`.
pub fn asym_sign_encrypt(
    recipient: &RsaPublic,
    sender: &RsaPrivate,
    pt: &[u8],
    rng: &mut impl RngCore,
) -> Vec<u8> {
    let mut session = [0u8; 16];
    rng.fill_bytes(&mut session);
    let block = rsa_encrypt_key(recipient, &session, rng);
    let key = seal_sym_key(&session);
    let nonce = seal_nonce(&block);
    let mut ct = pt.to_vec();
    test_keystream_xor(&key, &nonce, b"seal", &mut ct);
    let mac = test_mac(&key, &nonce, b"seal", &ct);
    let mut blob = Vec::with_capacity(pt.len() + SEAL_OVERHEAD);
    blob.extend_from_slice(&block);
    blob.extend_from_slice(&ct);
    blob.extend_from_slice(&mac);
    let digest = sha256_parts(&[b"seal-sig", &blob]);
    blob.extend_from_slice(&rsa_sign(sender, &digest));
    blob
}

/// Inverse of [`asym_sign_encrypt`]. Fails with [`CryptoError::BadSignature`]
/// when the blob is not from `sender`, [`CryptoError::Tamper`] when the
/// recipient key is wrong or the body was manipulated.
pub fn asym_verify_decrypt(
    sender: &RsaPublic,
    recipient: &RsaPrivate,
    blob: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if blob.len() < SEAL_OVERHEAD {
        return Err(CryptoError::Malformed);
    }
    let (body, sig) = blob.split_at(blob.len() - RSA_BLOCK_BYTES);
    let digest = sha256_parts(&[b"seal-sig", body]);
    if !rsa_verify(sender, &digest, sig.try_into().unwrap()) {
        return Err(CryptoError::BadSignature);
    }
    let block: &[u8; RSA_BLOCK_BYTES] = body[..RSA_BLOCK_BYTES].try_into().unwrap();
    let session = rsa_decrypt_key(recipient, block).map_err(|_| CryptoError::Tamper)?;
    let key = seal_sym_key(&session);
    let nonce = seal_nonce(block);
    let (ct, mac) = body[RSA_BLOCK_BYTES..].split_at(body.len() - RSA_BLOCK_BYTES - MAC_BYTES);
    if test_mac(&key, &nonce, b"seal", ct) != mac {
        return Err(CryptoError::Tamper);
    }
    let mut pt = ct.to_vec();
    test_keystream_xor(&key, &nonce, b"seal", &mut pt);
    Ok(pt)
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

/// Depth-1 certificate: authority signs the subject's key and identity.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Certificate {
    pub subject_ring: RingId,
    pub subject_modulus: [u8; 32],
    pub expiry_us: u64,
    pub ca_id: u64,
    pub sig: [u8; RSA_BLOCK_BYTES],
}

impl Certificate {
    pub fn encode_wire(&self) -> [u8; CERT_WIRE_BYTES] {
        let mut out = [0u8; CERT_WIRE_BYTES];
        out[0..8].copy_from_slice(&self.subject_ring.0.to_le_bytes());
        out[8..40].copy_from_slice(&self.subject_modulus);
        out[40..48].copy_from_slice(&self.expiry_us.to_le_bytes());
        out[48..56].copy_from_slice(&self.ca_id.to_le_bytes());
        out[56..88].copy_from_slice(&self.sig);
        out
    }

    pub fn decode_wire(buf: &[u8]) -> Result<Self, CryptoError> {
        if buf.len() < CERT_WIRE_BYTES {
            return Err(CryptoError::Malformed);
        }
        Ok(Certificate {
            subject_ring: RingId(u64::from_le_bytes(buf[0..8].try_into().unwrap())),
            subject_modulus: buf[8..40].try_into().unwrap(),
            expiry_us: u64::from_le_bytes(buf[40..48].try_into().unwrap()),
            ca_id: u64::from_le_bytes(buf[48..56].try_into().unwrap()),
            sig: buf[56..88].try_into().unwrap(),
        })
    }

    /// Stored form: wire form padded to the 256-byte accounting width.
    pub fn to_record(&self) -> CertRecord {
        let mut r = [0u8; CERT_RECORD_BYTES];
        r[..CERT_WIRE_BYTES].copy_from_slice(&self.encode_wire());
        CertRecord(r)
    }

    pub fn from_record(r: &CertRecord) -> Result<Self, CryptoError> {
        Certificate::decode_wire(&r.0)
    }

    pub fn subject_public(&self) -> RsaPublic {
        RsaPublic {
            n: BigUint::from_bytes_be(&self.subject_modulus),
        }
    }

    fn signed_digest(&self) -> [u8; 32] {
        let w = self.encode_wire();
        sha256_parts(&[b"cert", &w[..56]])
    }
}

/// Certification authority: a keypair plus the id devices are provisioned
/// to trust.
#[derive(Clone, Debug)]
pub struct Authority {
    pub id: u64,
    pub public: RsaPublic,
    private: RsaPrivate,
}

impl Authority {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let (private, public) = rsa_keygen(rng);
        let id = u64::from_le_bytes(
            sha256_parts(&[b"ca-id", &to_block(&public.n)])[..8]
                .try_into()
                .unwrap(),
        );
        Authority {
            id,
            public,
            private,
        }
    }

    pub fn issue(&self, subject_ring: RingId, subject: &RsaPublic, expiry_us: u64) -> Certificate {
        let mut cert = Certificate {
            subject_ring,
            subject_modulus: to_block(&subject.n),
            expiry_us,
            ca_id: self.id,
            sig: [0u8; RSA_BLOCK_BYTES],
        };
        cert.sig = rsa_sign(&self.private, &cert.signed_digest());
        cert
    }
}

/// Full verification against the trusted authority and the clock.
pub fn verify_certificate(
    cert: &Certificate,
    ca_public: &RsaPublic,
    trusted_ca_id: u64,
    now_us: u64,
) -> Result<(), CertError> {
    if cert.ca_id != trusted_ca_id {
        return Err(CertError::UnknownCa);
    }
    if !rsa_verify(ca_public, &cert.signed_digest(), &cert.sig) {
        return Err(CertError::BadSignature);
    }
    if now_us >= cert.expiry_us {
        return Err(CertError::Expired);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Device credentials
// ---------------------------------------------------------------------------

/// Provisioned long-term material. The byte records are the stored forms the
/// memory accounting walks; their widths are part of the storage model.
#[derive(Clone, Debug)]
pub struct DeviceCredentials {
    pub uid: Uid,
    pub priv_record: PrivRecord,
    pub pub_record: PubRecord,
    pub cert_record: CertRecord,
    pub private: RsaPrivate,
    pub public: RsaPublic,
    pub certificate: Certificate,
}

fn encode_priv_record(sk: &RsaPrivate) -> PrivRecord {
    let mut r = [0u8; PRIV_RECORD_BYTES];
    r[0..32].copy_from_slice(&to_block(&sk.n));
    r[32..64].copy_from_slice(&to_block(&sk.d));
    let p = sk.p.to_bytes_be();
    let q = sk.q.to_bytes_be();
    r[64..64 + p.len()].copy_from_slice(&p);
    r[96..96 + q.len()].copy_from_slice(&q);
    PrivRecord(r)
}

fn encode_pub_record(pk: &RsaPublic) -> PubRecord {
    let mut r = [0u8; PUB_RECORD_BYTES];
    r[0..32].copy_from_slice(&to_block(&pk.n));
    r[32..36].copy_from_slice(&RSA_E.to_le_bytes());
    PubRecord(r)
}

impl DeviceCredentials {
    /// Full provisioning: fresh identifier and keypair, authority-signed
    /// certificate.
    pub fn provision(space: Space, ca: &Authority, expiry_us: u64, rng: &mut impl RngCore) -> Self {
        let mut uid = [0u8; UID_BYTES];
        rng.fill_bytes(&mut uid);
        let uid = Uid(uid);
        let (private, public) = rsa_keygen(rng);
        let certificate = ca.issue(uid_ring(space, &uid), &public, expiry_us);
        DeviceCredentials {
            uid,
            priv_record: encode_priv_record(&private),
            pub_record: encode_pub_record(&public),
            cert_record: certificate.to_record(),
            private,
            public,
            certificate,
        }
    }

    /// Provisioning with a shared keypair, for bulk-constructed networks that
    /// never run the certification exchange. Record widths stay authentic.
    pub fn provision_with_keys(
        space: Space,
        ca: &Authority,
        expiry_us: u64,
        private: RsaPrivate,
        public: RsaPublic,
        rng: &mut impl RngCore,
    ) -> Self {
        let mut uid = [0u8; UID_BYTES];
        rng.fill_bytes(&mut uid);
        let uid = Uid(uid);
        let certificate = ca.issue(uid_ring(space, &uid), &public, expiry_us);
        DeviceCredentials {
            uid,
            priv_record: encode_priv_record(&private),
            pub_record: encode_pub_record(&public),
            cert_record: certificate.to_record(),
            private,
            public,
            certificate,
        }
    }

    /// Bytes of long-term stored material; the device-independent part of
    /// the memory model.
    pub fn stored_bytes(&self) -> usize {
        self.uid.as_bytes().len()
            + self.priv_record.as_bytes().len()
            + self.pub_record.as_bytes().len()
            + self.cert_record.as_bytes().len()
    }
}

// ---------------------------------------------------------------------------
// Measurements
// ---------------------------------------------------------------------------

/// Golden measurement of a monitored region: a 128-byte digest record.
pub fn measure(region: &[u8]) -> Proof {
    let mut out = [0u8; PROOF_BYTES];
    for i in 0..4u8 {
        let d = sha256_parts(&[b"measure", &[i], region]);
        out[i as usize * 32..(i as usize + 1) * 32].copy_from_slice(&d);
    }
    Proof(out)
}

/// Nonce-bound digest a prover reports: binds the current measurement to the
/// challenge so stale reports never verify.
pub fn report_hash(proof: &Proof, nonce: &Nonce) -> ReportDigest {
    ReportDigest(sha256_parts(&[b"report", proof.as_bytes(), nonce.as_bytes()]))
}

#[cfg(feature = "real-crypto")]
pub mod real {
    //! Real-suite backends: ChaCha20-Poly1305 and RSA-2048. The wire layer
    //! runs either suite for symmetric framing; the asymmetric certification
    //! blobs of the real suite exceed the compact certification frames, so
    //! these primitives are exercised directly rather than through the codec.

    use super::*;
    use chacha20poly1305::aead::{Aead, KeyInit, Payload};
    use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce as ChaNonce};

    pub(super) fn sym_seal(key: &SymKey, nonce: &Nonce, aad: &[u8], pt: &[u8]) -> Vec<u8> {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(key.as_bytes()));
        cipher
            .encrypt(
                ChaNonce::from_slice(&nonce.as_bytes()[..12]),
                Payload { msg: pt, aad },
            )
            .expect("encryption is infallible for in-memory buffers")
    }

    pub(super) fn sym_open(
        key: &SymKey,
        nonce: &Nonce,
        aad: &[u8],
        data: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(key.as_bytes()));
        cipher
            .decrypt(
                ChaNonce::from_slice(&nonce.as_bytes()[..12]),
                Payload { msg: data, aad },
            )
            .map_err(|_| CryptoError::Tamper)
    }

    /// RSA-2048 keypair; deterministic under a seeded RNG.
    pub fn rsa2048_keygen(rng: &mut DetRng) -> (rsa::RsaPrivateKey, rsa::RsaPublicKey) {
        let sk = rsa::RsaPrivateKey::new(rng, 2048).expect("keygen");
        let pk = sk.to_public_key();
        (sk, pk)
    }

    /// Sign-then-encrypt composition mirrored from the test suite, over the
    /// real primitives.
    pub fn sign_encrypt(
        recipient: &rsa::RsaPublicKey,
        sender: &rsa::RsaPrivateKey,
        pt: &[u8],
        rng: &mut DetRng,
    ) -> Vec<u8> {
        let digest = sha256_parts(&[b"real-seal", pt]);
        let sig = sender
            .sign(rsa::Pkcs1v15Sign::new_unprefixed(), &digest)
            .expect("sign");
        let mut framed = Vec::with_capacity(pt.len() + sig.len() + 2);
        framed.extend_from_slice(&(sig.len() as u16).to_le_bytes());
        framed.extend_from_slice(&sig);
        framed.extend_from_slice(pt);
        // Hybrid: RSA-OAEP encapsulates a key for a ChaCha-sealed body.
        let mut session = [0u8; 32];
        rng.fill_bytes(&mut session);
        let encap = recipient
            .encrypt(rng, rsa::Oaep::new::<Sha256>(), &session)
            .expect("encrypt");
        let key = SymKey(session);
        let nonce = Nonce([0u8; NONCE_BYTES]);
        let body = sym_seal(&key, &nonce, b"", &framed);
        let mut blob = Vec::with_capacity(2 + encap.len() + body.len());
        blob.extend_from_slice(&(encap.len() as u16).to_le_bytes());
        blob.extend_from_slice(&encap);
        blob.extend_from_slice(&body);
        blob
    }

    pub fn verify_decrypt(
        sender: &rsa::RsaPublicKey,
        recipient: &rsa::RsaPrivateKey,
        blob: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        if blob.len() < 2 {
            return Err(CryptoError::Malformed);
        }
        let encap_len = u16::from_le_bytes(blob[0..2].try_into().unwrap()) as usize;
        if blob.len() < 2 + encap_len {
            return Err(CryptoError::Malformed);
        }
        let session = recipient
            .decrypt(rsa::Oaep::new::<Sha256>(), &blob[2..2 + encap_len])
            .map_err(|_| CryptoError::Tamper)?;
        let key = SymKey(session.as_slice().try_into().map_err(|_| CryptoError::Malformed)?);
        let nonce = Nonce([0u8; NONCE_BYTES]);
        let framed = sym_open(&key, &nonce, b"", &blob[2 + encap_len..])?;
        if framed.len() < 2 {
            return Err(CryptoError::Malformed);
        }
        let sig_len = u16::from_le_bytes(framed[0..2].try_into().unwrap()) as usize;
        if framed.len() < 2 + sig_len {
            return Err(CryptoError::Malformed);
        }
        let (sig, pt) = framed[2..].split_at(sig_len);
        let digest = sha256_parts(&[b"real-seal", pt]);
        sender
            .verify(rsa::Pkcs1v15Sign::new_unprefixed(), &digest, sig)
            .map_err(|_| CryptoError::BadSignature)?;
        Ok(pt.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rng(tag: &str) -> DetRng {
        derive_rng(7, 0, tag.as_bytes())
    }

    /// Brute-force modular exponentiation oracle for small parameters.
    fn naive_modexp(g: u64, x: u64, n: u64) -> u64 {
        let mut acc = 1u128;
        for _ in 0..x {
            acc = acc * g as u128 % n as u128;
        }
        acc as u64
    }

    #[test]
    fn forced_exponent_matches_brute_force() {
        let params = DhParams::tiny();
        let mut x = [0u8; SECRET_BYTES];
        x[SECRET_BYTES - 1] = 6;
        let kp = OidKeypair::from_secret(&params, x);
        assert_eq!(dh_pub_to_biguint(&kp.public), BigUint::from(naive_modexp(5, 6, 23)));
        assert_eq!(dh_pub_to_biguint(&kp.public), BigUint::from(8u8));

        x[SECRET_BYTES - 1] = 1;
        let kp = OidKeypair::from_secret(&params, x);
        assert_eq!(dh_pub_to_biguint(&kp.public), params.g);
    }

    #[test]
    fn identical_exponents_collide() {
        let params = DhParams::sim_default();
        let mut x = [0u8; SECRET_BYTES];
        x[0] = 0xab;
        let a = OidKeypair::from_secret(&params, x);
        let b = OidKeypair::from_secret(&params, x);
        assert_eq!(a.public, b.public);
    }

    #[test]
    fn worked_shared_secret_example() {
        // g=5, N=23: A_X=6 (OID 8), B_X=15 (OID 19); shared secret 2 both ways.
        let params = DhParams::tiny();
        let mut xa = [0u8; SECRET_BYTES];
        xa[SECRET_BYTES - 1] = 6;
        let mut xb = [0u8; SECRET_BYTES];
        xb[SECRET_BYTES - 1] = 15;
        let a = OidKeypair::from_secret(&params, xa);
        let b = OidKeypair::from_secret(&params, xb);
        assert_eq!(dh_pub_to_biguint(&b.public), BigUint::from(19u8));
        assert_eq!(naive_modexp(19, 6, 23), 2);
        assert_eq!(naive_modexp(8, 15, 23), 2);
        let kab = a.shared_key(&b.public, &params).unwrap();
        let kba = b.shared_key(&a.public, &params).unwrap();
        assert_eq!(kab, kba);
    }

    #[test]
    fn self_shared_key_is_well_defined() {
        let params = DhParams::sim_default();
        let kp = OidKeypair::generate(&params, &mut rng("self"));
        let k1 = kp.shared_key(&kp.public, &params).unwrap();
        let k2 = kp.shared_key(&kp.public, &params).unwrap();
        assert_eq!(k1, k2);
    }

    #[test]
    fn commutativity_over_random_pairs() {
        let params = DhParams::tiny();
        let mut r = rng("dh-commut");
        for _ in 0..1000 {
            let a = OidKeypair::generate(&params, &mut r);
            let b = OidKeypair::generate(&params, &mut r);
            // Oracle: both directions by brute-force exponentiation.
            let a_pub = dh_pub_to_biguint(&a.public).to_u64_digits()[0];
            let b_pub = dh_pub_to_biguint(&b.public).to_u64_digits()[0];
            let xa = BigUint::from_bytes_be(&a.secret.0) % 22u8;
            let xb = BigUint::from_bytes_be(&b.secret.0) % 22u8;
            let xa = xa.to_u64_digits().first().copied().unwrap_or(0);
            let xb = xb.to_u64_digits().first().copied().unwrap_or(0);
            assert_eq!(
                naive_modexp(b_pub, xa, 23),
                naive_modexp(a_pub, xb, 23),
                "Fermat: g^(xa*xb) both ways"
            );
            assert_eq!(
                a.shared_key(&b.public, &params).unwrap(),
                b.shared_key(&a.public, &params).unwrap()
            );
        }
    }

    #[test]
    fn peer_range_is_validated() {
        let params = DhParams::tiny();
        let kp = OidKeypair::generate(&params, &mut rng("range"));
        let zero = dh_pub_from_biguint(&BigUint::from(0u8)).unwrap();
        let big = dh_pub_from_biguint(&BigUint::from(23u8)).unwrap();
        assert_eq!(kp.shared_key(&zero, &params), Err(CryptoError::MalformedPeer));
        assert_eq!(kp.shared_key(&big, &params), Err(CryptoError::MalformedPeer));
    }

    #[test]
    fn zero_exponent_is_resampled() {
        struct ZeroFirst {
            inner: DetRng,
            first: bool,
        }
        impl RngCore for ZeroFirst {
            fn next_u32(&mut self) -> u32 {
                self.inner.next_u32()
            }
            fn next_u64(&mut self) -> u64 {
                self.inner.next_u64()
            }
            fn fill_bytes(&mut self, dest: &mut [u8]) {
                if self.first && dest.len() == SECRET_BYTES {
                    dest.fill(0);
                    self.first = false;
                } else {
                    self.inner.fill_bytes(dest);
                }
            }
            fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand_core::Error> {
                self.fill_bytes(dest);
                Ok(())
            }
        }
        let params = DhParams::sim_default();
        let mut z = ZeroFirst {
            inner: rng("zero"),
            first: true,
        };
        let kp = OidKeypair::generate(&params, &mut z);
        assert_ne!(dh_pub_to_biguint(&kp.public), BigUint::from(1u8));
        assert!(!z.first, "first draw consumed");
    }

    #[test]
    fn header_key_is_deterministic_and_distinct() {
        let params = DhParams::sim_default();
        let a = OidKeypair::generate(&params, &mut rng("hk-a"));
        let b = OidKeypair::generate(&params, &mut rng("hk-b"));
        assert_eq!(header_key(&a.public), header_key(&a.public));
        assert_ne!(header_key(&a.public), header_key(&b.public));
    }

    #[test]
    fn aead_roundtrip_and_negative_paths() {
        let key = SymKey(sha256_parts(&[b"k1"]));
        let other = SymKey(sha256_parts(&[b"k2"]));
        let nonce = Nonce([9u8; NONCE_BYTES]);
        for pt_len in [0usize, 1, 31, 32, 33, 300] {
            let pt = vec![0x5au8; pt_len];
            let sealed = sym_seal(SuiteKind::Test, &key, &nonce, b"aad", &pt);
            assert_eq!(sealed.len(), pt_len + MAC_BYTES);
            assert_eq!(
                sym_open(SuiteKind::Test, &key, &nonce, b"aad", &sealed).unwrap(),
                pt
            );
            // Single flipped bit anywhere must fail.
            let mut bad = sealed.clone();
            bad[pt_len / 2] ^= 0x40;
            assert_eq!(
                sym_open(SuiteKind::Test, &key, &nonce, b"aad", &bad),
                Err(CryptoError::Tamper)
            );
            assert_eq!(
                sym_open(SuiteKind::Test, &other, &nonce, b"aad", &sealed),
                Err(CryptoError::Tamper)
            );
            assert_eq!(
                sym_open(SuiteKind::Test, &key, &nonce, b"xxx", &sealed),
                Err(CryptoError::Tamper)
            );
        }
    }

    #[test]
    fn header_sealed_to_one_recipient_fails_elsewhere() {
        let params = DhParams::sim_default();
        let b = OidKeypair::generate(&params, &mut rng("hdr-b"));
        let c = OidKeypair::generate(&params, &mut rng("hdr-c"));
        let nonce = Nonce([1u8; NONCE_BYTES]);
        let sealed = sym_seal(SuiteKind::Test, &header_key(&b.public), &nonce, b"", b"header");
        assert!(sym_open(SuiteKind::Test, &header_key(&b.public), &nonce, b"", &sealed).is_ok());
        assert_eq!(
            sym_open(SuiteKind::Test, &header_key(&c.public), &nonce, b"", &sealed),
            Err(CryptoError::Tamper)
        );
    }

    #[test]
    fn rsa_roundtrips_and_rejects_wrong_keys() {
        let mut r = rng("rsa");
        let (sk1, pk1) = rsa_keygen(&mut r);
        let (sk2, pk2) = rsa_keygen(&mut r);
        let key = [0x42u8; 16];
        let block = rsa_encrypt_key(&pk1, &key, &mut r);
        assert_eq!(rsa_decrypt_key(&sk1, &block).unwrap(), key);
        assert!(rsa_decrypt_key(&sk2, &block).is_err());

        let digest = sha256_parts(&[b"msg"]);
        let sig = rsa_sign(&sk1, &digest);
        assert!(rsa_verify(&pk1, &digest, &sig));
        assert!(!rsa_verify(&pk2, &digest, &sig));
        assert!(!rsa_verify(&pk1, &sha256_parts(&[b"other"]), &sig));
    }

    #[test]
    fn seal_recovered_only_by_recipient_and_attributed_to_sender() {
        let mut r = rng("seal");
        let (n_priv, n_pub) = rsa_keygen(&mut r);
        let (u_priv, u_pub) = rsa_keygen(&mut r);
        let (e_priv, e_pub) = rsa_keygen(&mut r);
        let pt = b"identities and a nonce";
        let blob = asym_sign_encrypt(&u_pub, &n_priv, pt, &mut r);
        assert_eq!(blob.len(), pt.len() + SEAL_OVERHEAD);
        // Intended recipient, attributed to the right sender.
        assert_eq!(asym_verify_decrypt(&n_pub, &u_priv, &blob).unwrap(), pt);
        // Wrong claimed sender: attribution fails.
        assert_eq!(
            asym_verify_decrypt(&e_pub, &u_priv, &blob),
            Err(CryptoError::BadSignature)
        );
        // Wrong recipient: cannot recover.
        assert!(asym_verify_decrypt(&n_pub, &e_priv, &blob).is_err());
        // Manipulation fails closed.
        let mut bad = blob.clone();
        bad[RSA_BLOCK_BYTES + 3] ^= 1;
        assert!(asym_verify_decrypt(&n_pub, &u_priv, &bad).is_err());
        let _ = e_priv;
    }

    #[test]
    fn certificate_verification_paths() {
        let mut r = rng("cert");
        let ca = Authority::generate(&mut r);
        let other_ca = Authority::generate(&mut r);
        let (_, subject) = rsa_keygen(&mut r);
        let cert = ca.issue(RingId(7), &subject, 1_000_000);
        assert_eq!(verify_certificate(&cert, &ca.public, ca.id, 10), Ok(()));
        assert_eq!(
            verify_certificate(&cert, &other_ca.public, other_ca.id, 10),
            Err(CertError::UnknownCa)
        );
        // Same claimed id, wrong authority key.
        assert_eq!(
            verify_certificate(&cert, &other_ca.public, ca.id, 10),
            Err(CertError::BadSignature)
        );
        assert_eq!(
            verify_certificate(&cert, &ca.public, ca.id, 2_000_000),
            Err(CertError::Expired)
        );
        // Self-signed: subject signs its own binding.
        let fake = Authority::generate(&mut r);
        let forged = fake.issue(RingId(7), &subject, 1_000_000);
        assert!(verify_certificate(&forged, &ca.public, ca.id, 10).is_err());

        let rec = cert.to_record();
        assert_eq!(Certificate::from_record(&rec).unwrap(), cert);
        assert_eq!(cert.encode_wire().len(), CERT_WIRE_BYTES);
    }

    #[test]
    fn credential_records_have_accounting_widths() {
        let mut r = rng("creds");
        let ca = Authority::generate(&mut r);
        let creds = DeviceCredentials::provision(Space::new(64), &ca, u64::MAX, &mut r);
        assert_eq!(creds.uid.as_bytes().len(), 64);
        assert_eq!(creds.priv_record.as_bytes().len(), 1218);
        assert_eq!(creds.pub_record.as_bytes().len(), 294);
        assert_eq!(creds.cert_record.as_bytes().len(), 256);
        assert_eq!(creds.stored_bytes(), 1832);
        assert_eq!(
            verify_certificate(&creds.certificate, &ca.public, ca.id, 0),
            Ok(())
        );
    }

    #[test]
    fn measurement_is_deterministic_and_sensitive() {
        let region = vec![7u8; 64];
        let p1 = measure(&region);
        let p2 = measure(&region);
        assert_eq!(p1, p2);
        let mut tampered = region.clone();
        tampered[10] ^= 1;
        assert_ne!(measure(&tampered), p1);

        let n1 = Nonce([1u8; NONCE_BYTES]);
        let n2 = Nonce([2u8; NONCE_BYTES]);
        assert_eq!(report_hash(&p1, &n1), report_hash(&p1, &n1));
        assert_ne!(report_hash(&p1, &n1), report_hash(&p1, &n2));
    }

    #[test]
    fn group_constants_are_prime_and_sized() {
        let mut r = rng("prime");
        let sim = DhParams::sim_default();
        assert!(probably_prime(&sim.n, &mut r, 40));
        assert!(sim.fits_wire());

        let wire = DhParams::wire448();
        assert_eq!(wire.n.bits(), 448);
        assert!(wire.fits_wire());
        assert!(probably_prime(&wire.n, &mut r, 40));
        // Safe prime: (N-1)/2 prime as well.
        let q: BigUint = (&wire.n - 1u8) >> 1;
        assert!(probably_prime(&q, &mut r, 40));

        let modp = DhParams::modp2048();
        assert_eq!(modp.n.bits(), 2048);
        assert!(!modp.fits_wire());
    }

    #[test]
    fn wire448_key_agreement_roundtrip() {
        let params = DhParams::wire448();
        let a = OidKeypair::generate(&params, &mut rng("w448-a"));
        let b = OidKeypair::generate(&params, &mut rng("w448-b"));
        assert_eq!(
            a.shared_key(&b.public, &params).unwrap(),
            b.shared_key(&a.public, &params).unwrap()
        );
    }

    #[test]
    fn ring_derivations_are_stable() {
        let space = Space::new(16);
        let params = DhParams::sim_default();
        let kp = OidKeypair::generate(&params, &mut rng("ring"));
        assert_eq!(oid_ring(space, &kp.public), oid_ring(space, &kp.public));
        assert!(oid_ring(space, &kp.public).0 < (1 << 16));
        let uid = Uid([3u8; UID_BYTES]);
        assert_eq!(uid_ring(space, &uid), uid_ring(space, &uid));
    }

    #[test]
    fn deterministic_streams_are_reproducible_and_independent() {
        let mut a1 = derive_rng(1, 2, b"x");
        let mut a2 = derive_rng(1, 2, b"x");
        let mut b = derive_rng(1, 2, b"y");
        assert_eq!(a1.next_u64(), a2.next_u64());
        assert_ne!(a1.next_u64(), b.next_u64());
    }

    #[cfg(feature = "real-crypto")]
    mod real_suite {
        use super::*;

        #[test]
        fn chacha_shares_layout_and_fails_closed() {
            let key = SymKey(sha256_parts(&[b"real-k"]));
            let other = SymKey(sha256_parts(&[b"real-k2"]));
            let nonce = Nonce([3u8; NONCE_BYTES]);
            let pt = b"members only";
            let sealed = sym_seal(SuiteKind::Real, &key, &nonce, b"aad", pt);
            assert_eq!(sealed.len(), pt.len() + MAC_BYTES);
            assert_eq!(
                sym_open(SuiteKind::Real, &key, &nonce, b"aad", &sealed).unwrap(),
                pt
            );
            let mut bad = sealed.clone();
            bad[2] ^= 1;
            assert!(sym_open(SuiteKind::Real, &key, &nonce, b"aad", &bad).is_err());
            assert!(sym_open(SuiteKind::Real, &other, &nonce, b"aad", &sealed).is_err());
            assert!(sym_open(SuiteKind::Real, &key, &nonce, b"wrong", &sealed).is_err());
        }

        #[test]
        fn modp2048_key_agreement_commutes() {
            let params = DhParams::modp2048();
            let mut r = rng("modp");
            let mut xa = [0u8; SECRET_BYTES];
            let mut xb = [0u8; SECRET_BYTES];
            r.fill_bytes(&mut xa);
            r.fill_bytes(&mut xb);
            let pa = dh_public_raw(&params, &xa);
            let pb = dh_public_raw(&params, &xb);
            assert_eq!(
                dh_shared_raw(&params, &xa, &pb),
                dh_shared_raw(&params, &xb, &pa)
            );
        }

        #[test]
        fn rsa2048_sign_encrypt_roundtrip() {
            let mut r = rng("rsa2048");
            let (n_priv, n_pub) = real::rsa2048_keygen(&mut r);
            let (u_priv, u_pub) = real::rsa2048_keygen(&mut r);
            let pt = b"full-width certification payload";
            let blob = real::sign_encrypt(&u_pub, &n_priv, pt, &mut r);
            assert_eq!(
                real::verify_decrypt(&n_pub, &u_priv, &blob).unwrap(),
                pt
            );
            // Wrong claimed sender.
            assert_eq!(
                real::verify_decrypt(&u_pub, &u_priv, &blob),
                Err(CryptoError::BadSignature)
            );
            // Wrong recipient.
            assert!(real::verify_decrypt(&n_pub, &n_priv, &blob).is_err());
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn aead_roundtrip_fuzz(pt in proptest::collection::vec(any::<u8>(), 0..600),
                                   aad in proptest::collection::vec(any::<u8>(), 0..64),
                                   kseed in any::<u64>()) {
                let key = SymKey(sha256_parts(&[&kseed.to_le_bytes()]));
                let nonce = Nonce(trunc16(sha256_parts(&[b"n", &kseed.to_le_bytes()])));
                let sealed = sym_seal(SuiteKind::Test, &key, &nonce, &aad, &pt);
                prop_assert_eq!(sym_open(SuiteKind::Test, &key, &nonce, &aad, &sealed).unwrap(), pt);
            }

            /// A party without certified key material cannot craft anything
            /// that authenticates under a member's header key.
            #[test]
            fn random_blobs_never_authenticate(blob in proptest::collection::vec(any::<u8>(), 16..200),
                                               kseed in any::<u64>()) {
                let key = SymKey(sha256_parts(&[b"member", &kseed.to_le_bytes()]));
                let nonce = Nonce([0u8; NONCE_BYTES]);
                prop_assert!(sym_open(SuiteKind::Test, &key, &nonce, b"", &blob).is_err());
            }
        }
    }
}
