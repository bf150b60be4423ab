//! Signature shares and threshold aggregation.
//!
//! The protocol only needs three things from its signature scheme: a replica
//! can sign a message, anyone can check who signed what, and `threshold`
//! shares over the same message collapse into one constant-size aggregate.
//! [`ThresholdScheme`] captures exactly that. [`ClusterKeys`] is the mock
//! implementation used by the simulator: a share is the pair
//! `(signer, digest(message))` and verification is structural equality.
//!
//! Shares can only be minted through a [`SigningKey`], and signing keys are
//! only handed out by [`ClusterKeys::signing_key`]. Adversary code receives
//! the keys of the replicas it controls and nothing else, so within the
//! simulation no code path produces a verifying share for an honest replica
//! without that replica signing.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Digest, ReplicaId};

/// Lane seeds for [`digest_bytes`]. Arbitrary odd constants.
const LANE_SEEDS: [u64; 4] = [
    0x243f_6a88_85a3_08d3,
    0x1319_8a2e_0370_7345,
    0xa409_3822_299f_31d1,
    0x082e_fa98_ec4e_6c89,
];

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `bytes` into a 32-byte [`Digest`].
///
/// Four independently seeded 64-bit lanes absorb the input eight bytes at a
/// time and are finalised with a splitmix avalanche. Not cryptographic; it is
/// stable across platforms and collision-free at simulation scale.
pub fn digest_bytes(bytes: &[u8]) -> Digest {
    let mut lanes = LANE_SEEDS;
    let mut chunks = bytes.chunks_exact(8);
    for chunk in &mut chunks {
        let word = u64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        for (i, lane) in lanes.iter_mut().enumerate() {
            *lane = mix64(*lane ^ word.rotate_left(i as u32 * 16)).wrapping_add(LANE_SEEDS[i]);
        }
    }
    let rest = chunks.remainder();
    let mut tail = [0u8; 8];
    tail[..rest.len()].copy_from_slice(rest);
    let word = u64::from_le_bytes(tail) ^ ((rest.len() as u64) << 56);
    let len = bytes.len() as u64;
    let mut out = [0u8; 32];
    for (i, lane) in lanes.iter().enumerate() {
        let v = mix64(mix64(lane ^ word) ^ len.wrapping_mul(LANE_SEEDS[(i + 1) % 4]));
        out[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    Digest(out)
}

/// A single replica's signature over a message digest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SignatureShare {
    signer: ReplicaId,
    tag: Digest,
}

impl SignatureShare {
    pub fn signer(&self) -> ReplicaId {
        self.signer
    }

    pub fn tag(&self) -> Digest {
        self.tag
    }
}

/// Threshold aggregate of signature shares over one message.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AggregateSignature {
    signers: BTreeSet<ReplicaId>,
    tag: Digest,
}

impl AggregateSignature {
    pub fn signers(&self) -> &BTreeSet<ReplicaId> {
        &self.signers
    }

    pub fn tag(&self) -> Digest {
        self.tag
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("only {distinct} distinct signers, threshold is {threshold}")]
    InsufficientShares { distinct: usize, threshold: usize },
    #[error("shares sign different messages")]
    MixedTags,
    #[error("replica {0} is outside the cluster")]
    UnknownSigner(ReplicaId),
}

/// The secret half of a replica identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigningKey {
    id: ReplicaId,
}

impl SigningKey {
    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn sign(&self, message: &[u8]) -> SignatureShare {
        SignatureShare {
            signer: self.id,
            tag: digest_bytes(message),
        }
    }
}

/// Operations a threshold signature scheme must provide.
pub trait ThresholdScheme {
    fn verify_share(&self, share: &SignatureShare, message: &[u8], signer: ReplicaId) -> bool;

    fn aggregate(
        &self,
        shares: &[SignatureShare],
        threshold: usize,
    ) -> Result<AggregateSignature, CryptoError>;

    fn verify_aggregate(&self, aggregate: &AggregateSignature, message: &[u8]) -> bool;
}

/// Public key material for a cluster of `n = 3f + 1` replicas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterKeys {
    n: usize,
    f: usize,
    threshold: usize,
}

impl ClusterKeys {
    /// Keys with the standard `2f + 1` threshold.
    pub fn new(n: usize, f: usize) -> Self {
        Self::with_threshold(n, f, 2 * f + 1)
    }

    /// Keys with an explicit quorum threshold. Only mutation canaries should
    /// use anything but `2f + 1`.
    pub fn with_threshold(n: usize, f: usize, threshold: usize) -> Self {
        Self { n, f, threshold }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn contains(&self, id: ReplicaId) -> bool {
        (id.0 as usize) < self.n
    }

    pub fn signing_key(&self, id: ReplicaId) -> Result<SigningKey, CryptoError> {
        if self.contains(id) {
            Ok(SigningKey { id })
        } else {
            Err(CryptoError::UnknownSigner(id))
        }
    }

    pub fn replicas(&self) -> impl Iterator<Item = ReplicaId> {
        (0..self.n as u32).map(ReplicaId)
    }
}

impl ThresholdScheme for ClusterKeys {
    fn verify_share(&self, share: &SignatureShare, message: &[u8], signer: ReplicaId) -> bool {
        self.contains(signer) && share.signer == signer && share.tag == digest_bytes(message)
    }

    fn aggregate(
        &self,
        shares: &[SignatureShare],
        threshold: usize,
    ) -> Result<AggregateSignature, CryptoError> {
        let Some(first) = shares.first() else {
            return Err(CryptoError::InsufficientShares {
                distinct: 0,
                threshold,
            });
        };
        if shares.iter().any(|s| s.tag != first.tag) {
            return Err(CryptoError::MixedTags);
        }
        if let Some(bad) = shares.iter().find(|s| !self.contains(s.signer)) {
            return Err(CryptoError::UnknownSigner(bad.signer));
        }
        let signers: BTreeSet<ReplicaId> = shares.iter().map(|s| s.signer).collect();
        if signers.len() < threshold {
            return Err(CryptoError::InsufficientShares {
                distinct: signers.len(),
                threshold,
            });
        }
        Ok(AggregateSignature {
            signers,
            tag: first.tag,
        })
    }

    fn verify_aggregate(&self, aggregate: &AggregateSignature, message: &[u8]) -> bool {
        aggregate.signers.len() >= self.threshold
            && aggregate.signers.iter().all(|s| self.contains(*s))
            && aggregate.tag == digest_bytes(message)
    }
}
