//! Protocol data structures: views, certificates, blocks and the block store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{
    digest_bytes, AggregateSignature, ClusterKeys, SignatureShare, SigningKey, ThresholdScheme,
};

/// A protocol round. Genesis is view 0.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct View(pub u64);

impl View {
    pub const GENESIS: View = View(0);

    pub fn next(self) -> View {
        View(self.0 + 1)
    }

    /// Number of views from `earlier` up to `self`; zero if `earlier` is later.
    pub fn since(self, earlier: View) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    /// First four bytes as lowercase hex, used in traces and renderings.
    pub fn short(&self) -> String {
        self.0[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Canonical bytes: fixed field order, little-endian fixed-width integers,
/// length-prefixed byte strings.
pub fn canonical_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    bincode::serialize(value).expect("in-memory serialization cannot fail")
}

pub fn decode_canonical<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, DecodeError> {
    bincode::deserialize(bytes).map_err(|e| DecodeError(e.to_string()))
}

#[derive(Debug, Error)]
#[error("malformed canonical encoding: {0}")]
pub struct DecodeError(String);

/// The message a vote share signs.
pub fn vote_message(view: View, block: Digest) -> Vec<u8> {
    let mut m = Vec::with_capacity(44);
    m.extend_from_slice(b"VOTE");
    m.extend_from_slice(&view.0.to_le_bytes());
    m.extend_from_slice(&block.0);
    m
}

/// The message an empty share signs.
pub fn empty_message(view: View) -> Vec<u8> {
    let mut m = Vec::with_capacity(12);
    m.extend_from_slice(b"EMPT");
    m.extend_from_slice(&view.0.to_le_bytes());
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolVariant {
    /// Streamlined HotStuff-2 without the carry mechanism.
    #[serde(rename = "hotstuff2")]
    HotStuff2Baseline,
    #[serde(rename = "carry")]
    CarryTheTail,
}

impl fmt::Display for ProtocolVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolVariant::HotStuff2Baseline => "hotstuff2",
            ProtocolVariant::CarryTheTail => "carry",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("n = {n} but f = {f}; need n = 3f + 1")]
    BadReplicaCount { n: usize, f: usize },
    #[error("carry window must be at least 1")]
    ZeroWindow,
    #[error("quorum override {0} outside 1..=n")]
    BadQuorum(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n: usize,
    pub f: usize,
    /// Carry window: how many past views a NEW-VIEW message reports on.
    pub rho: u64,
    pub variant: ProtocolVariant,
    /// Replaces the `2f + 1` quorum. Mutation testing only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quorum_override: Option<usize>,
}

impl ProtocolConfig {
    pub fn new(f: usize, rho: u64, variant: ProtocolVariant) -> Self {
        Self {
            n: 3 * f + 1,
            f,
            rho,
            variant,
            quorum_override: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n != 3 * self.f + 1 {
            return Err(ConfigError::BadReplicaCount {
                n: self.n,
                f: self.f,
            });
        }
        if self.rho == 0 {
            return Err(ConfigError::ZeroWindow);
        }
        if let Some(q) = self.quorum_override {
            if q == 0 || q > self.n {
                return Err(ConfigError::BadQuorum(q));
            }
        }
        Ok(())
    }

    pub fn quorum(&self) -> usize {
        self.quorum_override.unwrap_or(2 * self.f + 1)
    }

    pub fn keys(&self) -> ClusterKeys {
        ClusterKeys::with_threshold(self.n, self.f, self.quorum())
    }

    pub fn is_carry(&self) -> bool {
        self.variant == ProtocolVariant::CarryTheTail
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoteShare {
    pub voter: ReplicaId,
    pub view: View,
    pub block: Digest,
    pub share: SignatureShare,
}

impl VoteShare {
    pub fn sign(key: &SigningKey, view: View, block: Digest) -> Self {
        Self {
            voter: key.id(),
            view,
            block,
            share: key.sign(&vote_message(view, block)),
        }
    }

    pub fn verify(&self, keys: &ClusterKeys) -> bool {
        keys.verify_share(&self.share, &vote_message(self.view, self.block), self.voter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmptyShare {
    pub voter: ReplicaId,
    pub view: View,
    pub share: SignatureShare,
}

impl EmptyShare {
    pub fn sign(key: &SigningKey, view: View) -> Self {
        Self {
            voter: key.id(),
            view,
            share: key.sign(&empty_message(view)),
        }
    }

    pub fn verify(&self, keys: &ClusterKeys) -> bool {
        keys.verify_share(&self.share, &empty_message(self.view), self.voter)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuorumCertificate {
    pub view: View,
    pub block: Digest,
    pub aggregate: AggregateSignature,
}

impl QuorumCertificate {
    /// Aggregates vote shares for `(view, block)`. Shares for anything else
    /// are ignored.
    pub fn from_votes<'a>(
        keys: &ClusterKeys,
        view: View,
        block: Digest,
        votes: impl IntoIterator<Item = &'a VoteShare>,
    ) -> Option<Self> {
        let shares: Vec<SignatureShare> = votes
            .into_iter()
            .filter(|v| v.view == view && v.block == block && v.verify(keys))
            .map(|v| v.share)
            .collect();
        let aggregate = keys.aggregate(&shares, keys.threshold()).ok()?;
        Some(Self {
            view,
            block,
            aggregate,
        })
    }

    /// The certificate for the genesis block, signed by every replica.
    pub fn genesis(keys: &ClusterKeys) -> Self {
        let genesis = Block::genesis(keys);
        Self::unanimous(keys, View::GENESIS, genesis.digest())
    }

    fn unanimous(keys: &ClusterKeys, view: View, block: Digest) -> Self {
        let msg = vote_message(view, block);
        let shares: Vec<_> = keys
            .replicas()
            .map(|r| keys.signing_key(r).expect("in range").sign(&msg))
            .collect();
        let aggregate = keys.aggregate(&shares, keys.n()).expect("all replicas signed");
        Self {
            view,
            block,
            aggregate,
        }
    }

    pub fn verify(&self, keys: &ClusterKeys) -> bool {
        keys.verify_aggregate(&self.aggregate, &vote_message(self.view, self.block))
    }

    pub fn signers(&self) -> &BTreeSet<ReplicaId> {
        self.aggregate.signers()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmptyCertificate {
    pub view: View,
    pub aggregate: AggregateSignature,
}

impl EmptyCertificate {
    pub fn from_shares<'a>(
        keys: &ClusterKeys,
        view: View,
        shares: impl IntoIterator<Item = &'a EmptyShare>,
    ) -> Option<Self> {
        let shares: Vec<SignatureShare> = shares
            .into_iter()
            .filter(|s| s.view == view && s.verify(keys))
            .map(|s| s.share)
            .collect();
        let aggregate = keys.aggregate(&shares, keys.threshold()).ok()?;
        Some(Self { view, aggregate })
    }

    pub fn verify(&self, keys: &ClusterKeys) -> bool {
        keys.verify_aggregate(&self.aggregate, &empty_message(self.view))
    }
}

/// Two vote-tag signatures by the same replica for different blocks of the
/// same view. When the signer is that view's leader the pair proves the
/// leader equivocated, so the view may be skipped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Equivocation {
    pub first: VoteShare,
    pub second: VoteShare,
}

impl Equivocation {
    /// Orders the pair canonically so equal evidence encodes identically.
    pub fn new(a: VoteShare, b: VoteShare) -> Self {
        if a <= b {
            Self {
                first: a,
                second: b,
            }
        } else {
            Self {
                first: b,
                second: a,
            }
        }
    }

    pub fn view(&self) -> View {
        self.first.view
    }

    /// Structural validity; the caller checks that the signer led the view.
    pub fn verify(&self, keys: &ClusterKeys) -> bool {
        self.first.voter == self.second.voter
            && self.first.view == self.second.view
            && self.first.block != self.second.block
            && self.first.verify(keys)
            && self.second.verify(keys)
    }
}

/// Everything in a block except the proposer's signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockBody {
    pub view: View,
    pub proposer: ReplicaId,
    pub payload: Vec<u8>,
    pub qc: QuorumCertificate,
    /// An uncertified tail carried forward in full.
    pub reinstated: Option<Arc<Block>>,
    pub empty_certs: Vec<EmptyCertificate>,
    pub faulty_view_evidence: Vec<Equivocation>,
}

impl BlockBody {
    pub fn digest(&self) -> Digest {
        digest_bytes(&canonical_bytes(self))
    }

    /// Signs the body. The proposer signature is the proposer's own vote
    /// share for the block.
    pub fn sign(self, key: &SigningKey) -> Block {
        let digest = self.digest();
        let proposer_share = key.sign(&vote_message(self.view, digest));
        Block {
            body: self,
            proposer_share,
            digest,
        }
    }
}

/// A signed, immutable block. Dereferences to its [`BlockBody`].
#[derive(Clone, Debug)]
pub struct Block {
    body: BlockBody,
    proposer_share: SignatureShare,
    digest: Digest,
}

impl Deref for Block {
    type Target = BlockBody;

    fn deref(&self) -> &BlockBody {
        &self.body
    }
}

impl PartialEq for Block {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest && self.proposer_share == other.proposer_share
    }
}

impl Eq for Block {}

impl Block {
    pub fn genesis(keys: &ClusterKeys) -> Block {
        let placeholder = QuorumCertificate::unanimous(keys, View::GENESIS, Digest::ZERO);
        BlockBody {
            view: View::GENESIS,
            proposer: ReplicaId(0),
            payload: Vec::new(),
            qc: placeholder,
            reinstated: None,
            empty_certs: Vec::new(),
            faulty_view_evidence: Vec::new(),
        }
        .sign(&keys.signing_key(ReplicaId(0)).expect("replica 0 exists"))
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn body(&self) -> &BlockBody {
        &self.body
    }

    pub fn proposer_share(&self) -> SignatureShare {
        self.proposer_share
    }

    /// The proposer's signature as a vote share.
    pub fn proposer_vote(&self) -> VoteShare {
        VoteShare {
            voter: self.proposer,
            view: self.view,
            block: self.digest,
            share: self.proposer_share,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.view == View::GENESIS
    }

    /// The block this one directly extends: the reinstated tail if present,
    /// otherwise the block certified by `qc`. Genesis has no parent.
    pub fn parent_digest(&self) -> Option<Digest> {
        if self.is_genesis() {
            None
        } else if let Some(r) = &self.reinstated {
            Some(r.digest())
        } else {
            Some(self.qc.block)
        }
    }

    /// Words this block occupies on the wire, payload excluded: two header
    /// words (view and proposer signature), one for the QC, one per empty
    /// certificate, two per equivocation pair, plus any reinstated chain.
    pub fn word_count(&self) -> usize {
        3 + self.empty_certs.len()
            + 2 * self.faulty_view_evidence.len()
            + self.reinstated.as_ref().map_or(0, |r| r.word_count())
    }

    /// Payload words (32 bytes each) including reinstated payloads.
    pub fn payload_words(&self) -> usize {
        self.payload.len().div_ceil(32) + self.reinstated.as_ref().map_or(0, |r| r.payload_words())
    }

    /// Stable, line-oriented rendering for counterexample output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out, 0);
        out
    }

    fn render_into(&self, out: &mut String, depth: usize) {
        use std::fmt::Write;
        let pad = "  ".repeat(depth);
        let _ = writeln!(
            out,
            "{pad}block {} view={} proposer={} payload={}B",
            self.digest.short(),
            self.view.0,
            self.proposer.0,
            self.payload.len()
        );
        let _ = writeln!(
            out,
            "{pad}  qc view={} block={} signers={:?}",
            self.qc.view.0,
            self.qc.block.short(),
            self.qc.signers().iter().map(|r| r.0).collect::<Vec<_>>()
        );
        for c in &self.empty_certs {
            let _ = writeln!(
                out,
                "{pad}  empty view={} signers={:?}",
                c.view.0,
                c.aggregate.signers().iter().map(|r| r.0).collect::<Vec<_>>()
            );
        }
        for e in &self.faulty_view_evidence {
            let _ = writeln!(
                out,
                "{pad}  equivocation view={} signer={} blocks={},{}",
                e.view().0,
                e.first.voter.0,
                e.first.block.short(),
                e.second.block.short()
            );
        }
        if let Some(r) = &self.reinstated {
            let _ = writeln!(out, "{pad}  reinstated:");
            r.render_into(out, depth + 2);
        }
    }
}

impl Serialize for Block {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            body: &'a BlockBody,
            proposer_share: &'a SignatureShare,
        }
        Wire {
            body: &self.body,
            proposer_share: &self.proposer_share,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            body: BlockBody,
            proposer_share: SignatureShare,
        }
        let w = Wire::deserialize(d)?;
        let digest = w.body.digest();
        Ok(Block {
            body: w.body,
            proposer_share: w.proposer_share,
            digest,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown block {0:?}")]
pub struct UnknownDigest(pub Digest);

/// Digest-indexed set of blocks a replica has seen, reinstated embeddings
/// included.
#[derive(Clone, Debug, Default)]
pub struct BlockStore {
    blocks: BTreeMap<Digest, Arc<Block>>,
}

impl BlockStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `block` and every block embedded in its reinstated chain.
    /// Returns true if anything new was stored.
    pub fn insert(&mut self, block: Arc<Block>) -> bool {
        let mut added = false;
        let mut next = Some(block);
        while let Some(b) = next {
            next = b.reinstated.clone();
            if !self.blocks.contains_key(&b.digest()) {
                self.blocks.insert(b.digest(), b);
                added = true;
            }
        }
        added
    }

    pub fn get(&self, digest: &Digest) -> Option<&Arc<Block>> {
        self.blocks.get(digest)
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.blocks.contains_key(digest)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.blocks.values()
    }
}

/// The `⪰` relation: whether `ancestor` is reachable from `descendant` by
/// following QC links and reinstated embeddings. Reflexive.
pub fn extends(
    store: &BlockStore,
    descendant: Digest,
    ancestor: Digest,
) -> Result<bool, UnknownDigest> {
    let start = store.get(&descendant).ok_or(UnknownDigest(descendant))?;
    let target = store.get(&ancestor).ok_or(UnknownDigest(ancestor))?;
    let target_view = target.view;
    let mut stack = vec![start.clone()];
    let mut seen = BTreeSet::new();
    while let Some(b) = stack.pop() {
        if b.digest() == ancestor {
            return Ok(true);
        }
        if b.view <= target_view || b.is_genesis() || !seen.insert(b.digest()) {
            continue;
        }
        if let Some(r) = &b.reinstated {
            stack.push(r.clone());
        }
        if let Some(p) = store.get(&b.qc.block) {
            stack.push(p.clone());
        }
    }
    Ok(false)
}

/// How leaders rotate across views.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Rotation {
    /// `leader(v) = v mod n`.
    #[default]
    RoundRobin,
    /// A fresh seeded permutation of the replicas for every block of `n` views.
    SeededRandom { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderSchedule {
    n: usize,
    rotation: Rotation,
}

impl LeaderSchedule {
    pub fn new(n: usize, rotation: Rotation) -> Self {
        assert!(n > 0, "empty cluster");
        Self { n, rotation }
    }

    pub fn round_robin(n: usize) -> Self {
        Self::new(n, Rotation::RoundRobin)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    pub fn leader(&self, view: View) -> ReplicaId {
        let n = self.n as u64;
        match self.rotation {
            Rotation::RoundRobin => ReplicaId((view.0 % n) as u32),
            Rotation::SeededRandom { seed } => {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let epoch = view.0 / n;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                    seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15),
                );
                let mut perm: Vec<u32> = (0..self.n as u32).collect();
                perm.shuffle(&mut rng);
                ReplicaId(perm[(view.0 % n) as usize])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn keys() -> ClusterKeys {
        ClusterKeys::new(4, 1)
    }

    fn qc_for(block: &Block) -> QuorumCertificate {
        let k = keys();
        let votes: Vec<_> = (0..3)
            .map(|i| VoteShare::sign(&k.signing_key(ReplicaId(i)).unwrap(), block.view, block.digest()))
            .collect();
        QuorumCertificate::from_votes(&k, block.view, block.digest(), &votes).unwrap()
    }

    fn child(view: u64, qc: QuorumCertificate, reinstated: Option<Arc<Block>>) -> Arc<Block> {
        let k = keys();
        let proposer = ReplicaId((view % 4) as u32);
        Arc::new(
            BlockBody {
                view: View(view),
                proposer,
                payload: vec![view as u8],
                qc,
                reinstated,
                empty_certs: vec![],
                faulty_view_evidence: vec![],
            }
            .sign(&k.signing_key(proposer).unwrap()),
        )
    }

    #[test]
    fn extends_direct_qc_link() {
        let g = Arc::new(Block::genesis(&keys()));
        let b4 = child(4, QuorumCertificate::genesis(&keys()), None);
        let b5 = child(5, qc_for(&b4), None);
        let mut store = BlockStore::new();
        for b in [&g, &b4, &b5] {
            store.insert(b.clone());
        }
        assert!(extends(&store, b5.digest(), b4.digest()).unwrap());
        assert!(!extends(&store, b4.digest(), b5.digest()).unwrap());
    }

    #[test]
    fn extends_is_reflexive() {
        let b = child(1, QuorumCertificate::genesis(&keys()), None);
        let mut store = BlockStore::new();
        store.insert(b.clone());
        assert!(extends(&store, b.digest(), b.digest()).unwrap());
    }

    // B_6 reinstates T_4, T_4.qc = QC(B_3); walking B_6 -> T_4 -> B_3.
    #[test]
    fn extends_through_reinstated_block() {
        let g = Arc::new(Block::genesis(&keys()));
        let b3 = child(3, QuorumCertificate::genesis(&keys()), None);
        let t4 = child(4, qc_for(&b3), None);
        let b6 = child(6, qc_for(&b3), Some(t4.clone()));
        let mut store = BlockStore::new();
        store.insert(g.clone());
        store.insert(b3.clone());
        store.insert(b6.clone());
        assert!(store.contains(&t4.digest()), "embedded block stored");
        assert!(extends(&store, b6.digest(), b3.digest()).unwrap());
        assert!(extends(&store, b6.digest(), t4.digest()).unwrap());
        assert!(extends(&store, b6.digest(), g.digest()).unwrap());
    }

    #[test]
    fn extends_unknown_digest() {
        let store = BlockStore::new();
        assert_eq!(
            extends(&store, Digest::ZERO, Digest::ZERO),
            Err(UnknownDigest(Digest::ZERO))
        );
    }

    #[test]
    fn block_round_trips_through_canonical_bytes() {
        let b3 = child(3, QuorumCertificate::genesis(&keys()), None);
        let b5 = child(5, qc_for(&b3), Some(child(4, qc_for(&b3), None)));
        let bytes = canonical_bytes(&*b5);
        let back: Block = decode_canonical(&bytes).unwrap();
        assert_eq!(back, *b5);
        assert_eq!(back.digest(), b5.digest());
    }

    #[test]
    fn word_count_counts_embedded_blocks() {
        let b3 = child(3, QuorumCertificate::genesis(&keys()), None);
        assert_eq!(b3.word_count(), 3);
        let b5 = child(5, qc_for(&b3), Some(child(4, qc_for(&b3), None)));
        assert_eq!(b5.word_count(), 6);
    }

    #[test]
    fn seeded_rotation_is_a_permutation_per_epoch() {
        let s = LeaderSchedule::new(7, Rotation::SeededRandom { seed: 3 });
        for epoch in 0..5u64 {
            let mut seen: Vec<u32> = (0..7).map(|i| s.leader(View(epoch * 7 + i)).0).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
        assert_eq!(LeaderSchedule::round_robin(4).leader(View(9)), ReplicaId(1));
    }

    #[test]
    fn config_requires_three_f_plus_one() {
        let mut c = ProtocolConfig::new(1, 6, ProtocolVariant::CarryTheTail);
        assert!(c.validate().is_ok());
        c.n = 5;
        assert!(c.validate().is_err());
        let z = ProtocolConfig::new(1, 0, ProtocolVariant::CarryTheTail);
        assert_eq!(z.validate(), Err(ConfigError::ZeroWindow));
    }
}
