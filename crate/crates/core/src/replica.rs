//! The per-replica state machine for both protocol variants.
//!
//! A replica is driven one event at a time: a proposal arrives, a NEW-VIEW
//! message arrives, the view expires, or (for leaders) the pacemaker says
//! enough time has passed. Votes are not sent on their own; they travel to
//! the next leader inside NEW-VIEW windows, where `2f + 1` matching votes
//! aggregate into a QC.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{ClusterKeys, SigningKey};
use crate::types::{
    Block, BlockBody, BlockStore, Digest, EmptyCertificate, EmptyShare, Equivocation,
    LeaderSchedule, ProtocolConfig, QuorumCertificate, ReplicaId, View, VoteShare,
};
use crate::validate::{validate_block, ValidationReport};

/// What a replica did in one view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowEntry {
    Vote(VoteShare),
    Empty(EmptyShare),
}

impl WindowEntry {
    pub fn view(&self) -> View {
        match self {
            WindowEntry::Vote(v) => v.view,
            WindowEntry::Empty(e) => e.view,
        }
    }

    pub fn voter(&self) -> ReplicaId {
        match self {
            WindowEntry::Vote(v) => v.voter,
            WindowEntry::Empty(e) => e.voter,
        }
    }

    pub fn as_vote(&self) -> Option<&VoteShare> {
        match self {
            WindowEntry::Vote(v) => Some(v),
            WindowEntry::Empty(_) => None,
        }
    }

    pub fn as_empty(&self) -> Option<&EmptyShare> {
        match self {
            WindowEntry::Empty(e) => Some(e),
            WindowEntry::Vote(_) => None,
        }
    }

    fn verify(&self, keys: &ClusterKeys) -> bool {
        match self {
            WindowEntry::Vote(v) => v.verify(keys),
            WindowEntry::Empty(e) => e.verify(keys),
        }
    }
}

/// Handover from a replica to the leader of `next_view`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewViewMessage {
    pub sender: ReplicaId,
    pub next_view: View,
    pub lock: QuorumCertificate,
    pub window: BTreeMap<View, WindowEntry>,
}

impl NewViewMessage {
    /// One word for the view, one for the lock, one per window slot.
    pub fn word_count(&self) -> usize {
        2 + self.window.len()
    }

    pub fn verify(&self, keys: &ClusterKeys) -> bool {
        self.lock.verify(keys)
            && self.lock.view < self.next_view
            && self.window.iter().all(|(view, e)| {
                e.view() == *view
                    && *view < self.next_view
                    && e.voter() == self.sender
                    && e.verify(keys)
            })
    }
}

/// Everything that travels between replicas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    Proposal(Arc<Block>),
    NewView(NewViewMessage),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Proposal(_) => "PROPOSAL",
            Message::NewView(_) => "NEW-VIEW",
        }
    }

    pub fn view(&self) -> View {
        match self {
            Message::Proposal(b) => b.view,
            Message::NewView(m) => m.next_view,
        }
    }

    pub fn word_count(&self) -> usize {
        match self {
            Message::Proposal(b) => b.word_count(),
            Message::NewView(m) => m.word_count(),
        }
    }

    pub fn payload_words(&self) -> usize {
        match self {
            Message::Proposal(b) => b.payload_words(),
            Message::NewView(_) => 0,
        }
    }

    /// The block a message is about: the proposal, or the lock's block.
    pub fn digest(&self) -> Digest {
        match self {
            Message::Proposal(b) => b.digest(),
            Message::NewView(m) => m.lock.block,
        }
    }
}

/// How a leader justifies the views between its QC and its proposal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReinstateDecision {
    /// The QC is for the immediately preceding view.
    FreshQc(QuorumCertificate),
    /// Carry the tail `block`, certifying the views above it.
    Reinstate {
        block: Arc<Block>,
        empty_certs: Vec<EmptyCertificate>,
        evidence: Vec<Equivocation>,
    },
    /// The QC is older than the carry window.
    NoCarry,
    /// Every skipped view is certified empty or shown faulty.
    FaultyViews {
        empty_certs: Vec<EmptyCertificate>,
        evidence: Vec<Equivocation>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("no vote, empty certificate or evidence available for {0}")]
pub struct MissingJustification(pub View);

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{replica} would commit {conflicting:?} at position {position}, which holds {existing:?}")]
pub struct SafetyViolation {
    pub replica: ReplicaId,
    pub position: usize,
    pub existing: Digest,
    pub conflicting: Digest,
}

/// The blocks and signature material a leader consults when justifying a
/// proposal.
pub struct LeaderContext<'a> {
    pub config: &'a ProtocolConfig,
    pub keys: &'a ClusterKeys,
    pub schedule: &'a LeaderSchedule,
    pub store: &'a BlockStore,
}

/// Decides what a leader of `v` must attach, given the NEW-VIEW messages it
/// collected and the highest QC it knows.
///
/// Walks down from `v - 1`. A view whose leader signed two different blocks
/// is covered by that evidence. Otherwise the first view holding a vote for a
/// known valid block extending `highest_qc` selects the tail to reinstate;
/// views above it need `2f + 1` empty shares.
pub fn select_reinstate<'m>(
    collected: impl IntoIterator<Item = &'m NewViewMessage>,
    highest_qc: &QuorumCertificate,
    v: View,
    ctx: &LeaderContext<'_>,
) -> Result<ReinstateDecision, MissingJustification> {
    let gap = v.since(highest_qc.view);
    if gap <= 1 {
        return Ok(ReinstateDecision::FreshQc(highest_qc.clone()));
    }
    if gap > ctx.config.rho {
        return Ok(ReinstateDecision::NoCarry);
    }
    let msgs: Vec<&NewViewMessage> = collected.into_iter().collect();
    let mut empty_certs = Vec::new();
    let mut evidence = Vec::new();
    for u in (highest_qc.view.0 + 1..v.0).rev().map(View) {
        let leader = ctx.schedule.leader(u);
        let mut votes: BTreeMap<Digest, BTreeSet<ReplicaId>> = BTreeMap::new();
        let mut leader_shares: BTreeMap<Digest, VoteShare> = BTreeMap::new();
        let mut empties: BTreeMap<ReplicaId, EmptyShare> = BTreeMap::new();
        for m in &msgs {
            match m.window.get(&u) {
                Some(WindowEntry::Vote(vs)) => {
                    votes.entry(vs.block).or_default().insert(vs.voter);
                    if vs.voter == leader {
                        leader_shares.insert(vs.block, *vs);
                    }
                }
                Some(WindowEntry::Empty(es)) => {
                    empties.insert(es.voter, *es);
                }
                None => {}
            }
        }
        for b in ctx.store.iter().filter(|b| b.view == u && b.proposer == leader) {
            let pv = b.proposer_vote();
            if pv.verify(ctx.keys) {
                leader_shares.entry(pv.block).or_insert(pv);
            }
        }
        if leader_shares.len() >= 2 {
            let mut it = leader_shares.into_values();
            let (a, b) = (it.next().expect("two"), it.next().expect("two"));
            evidence.push(Equivocation::new(a, b));
            continue;
        }
        let tail = votes
            .iter()
            .filter_map(|(d, voters)| {
                let b = ctx.store.get(d)?;
                let fits = b.qc == *highest_qc
                    && validate_block(b, ctx.config, ctx.keys, ctx.schedule).is_accept();
                fits.then_some((voters.len(), Reverse(*d), b))
            })
            .max_by_key(|(count, d, _)| (*count, *d))
            .map(|(_, _, b)| b.clone());
        if let Some(block) = tail {
            empty_certs.reverse();
            evidence.reverse();
            return Ok(ReinstateDecision::Reinstate {
                block,
                empty_certs,
                evidence,
            });
        }
        match EmptyCertificate::from_shares(ctx.keys, u, empties.values()) {
            Some(cert) => empty_certs.push(cert),
            None => return Err(MissingJustification(u)),
        }
    }
    empty_certs.reverse();
    evidence.reverse();
    Ok(ReinstateDecision::FaultyViews {
        empty_certs,
        evidence,
    })
}

/// Result of handing a proposal to a replica.
#[derive(Clone, Debug, Default)]
pub struct ProposalOutcome {
    pub vote: Option<VoteShare>,
    pub report: Option<ValidationReport>,
    pub commits: Vec<Arc<Block>>,
    pub violations: Vec<SafetyViolation>,
}

/// Result of a leader's attempt to propose.
#[derive(Clone, Debug, Default)]
pub struct ProposeAttempt {
    pub block: Option<Arc<Block>>,
    /// Set when the leader is ready but cannot justify some view.
    pub missing: Option<MissingJustification>,
}

#[derive(Clone, Debug)]
pub struct ReplicaState {
    id: ReplicaId,
    key: SigningKey,
    config: ProtocolConfig,
    keys: ClusterKeys,
    schedule: LeaderSchedule,
    current_view: View,
    lock: QuorumCertificate,
    high_qc: QuorumCertificate,
    votes: BTreeMap<View, WindowEntry>,
    store: BlockStore,
    ledger: Vec<Digest>,
    committed: BTreeSet<Digest>,
    certified: BTreeMap<Digest, QuorumCertificate>,
    pending_commits: Vec<QuorumCertificate>,
    collected: BTreeMap<View, BTreeMap<ReplicaId, NewViewMessage>>,
    proposed: BTreeSet<View>,
    signalled: BTreeSet<View>,
    rejected: Vec<(View, Digest, ValidationReport)>,
}

impl ReplicaState {
    pub fn new(id: ReplicaId, config: ProtocolConfig, schedule: LeaderSchedule) -> Self {
        let keys = config.keys();
        let key = keys.signing_key(id).expect("replica id within cluster");
        let genesis = Arc::new(Block::genesis(&keys));
        let genesis_qc = QuorumCertificate::genesis(&keys);
        let mut store = BlockStore::new();
        store.insert(genesis.clone());
        let mut votes = BTreeMap::new();
        votes.insert(
            View::GENESIS,
            WindowEntry::Vote(VoteShare::sign(&key, View::GENESIS, genesis.digest())),
        );
        let mut certified = BTreeMap::new();
        certified.insert(genesis.digest(), genesis_qc.clone());
        Self {
            id,
            key,
            config,
            keys,
            schedule,
            current_view: View(1),
            lock: genesis_qc.clone(),
            high_qc: genesis_qc,
            votes,
            store,
            ledger: vec![genesis.digest()],
            committed: [genesis.digest()].into_iter().collect(),
            certified,
            pending_commits: Vec::new(),
            collected: BTreeMap::new(),
            proposed: BTreeSet::new(),
            signalled: BTreeSet::new(),
            rejected: Vec::new(),
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn current_view(&self) -> View {
        self.current_view
    }

    pub fn lock(&self) -> &QuorumCertificate {
        &self.lock
    }

    pub fn high_qc(&self) -> &QuorumCertificate {
        &self.high_qc
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    /// Committed digests; position 0 is genesis.
    pub fn ledger(&self) -> &[Digest] {
        &self.ledger
    }

    pub fn entry(&self, view: View) -> Option<&WindowEntry> {
        self.votes.get(&view)
    }

    /// Every QC this replica has formed or learned.
    pub fn certified(&self) -> impl Iterator<Item = &QuorumCertificate> {
        self.certified.values()
    }

    pub fn rejected(&self) -> &[(View, Digest, ValidationReport)] {
        &self.rejected
    }

    pub fn collected(&self, view: View) -> impl Iterator<Item = &NewViewMessage> {
        self.collected.get(&view).into_iter().flat_map(|m| m.values())
    }

    pub fn is_leader(&self, view: View) -> bool {
        self.schedule.leader(view) == self.id
    }

    pub fn has_proposed(&self, view: View) -> bool {
        self.proposed.contains(&view)
    }

    /// Stores a block (and its embedded chain) and learns its QC.
    pub fn observe(&mut self, block: &Arc<Block>) -> (Vec<Arc<Block>>, Vec<SafetyViolation>) {
        self.store.insert(block.clone());
        self.learn_qc(block.qc.clone())
    }

    /// Handles a proposal. Votes when the block is valid, is for the current
    /// view, this replica has not acted in the view yet, and the block's QC is
    /// at least as high as the lock.
    pub fn on_proposal(&mut self, block: Arc<Block>) -> ProposalOutcome {
        let report = validate_block(&block, &self.config, &self.keys, &self.schedule);
        let mut out = ProposalOutcome::default();
        if !report.is_accept() {
            self.rejected.push((block.view, block.digest(), report.clone()));
            out.report = Some(report);
            return out;
        }
        let (commits, violations) = self.observe(&block);
        out.commits = commits;
        out.violations = violations;
        if block.view == self.current_view
            && !self.votes.contains_key(&block.view)
            && block.qc.view >= self.lock.view
        {
            let vote = VoteShare::sign(&self.key, block.view, block.digest());
            self.lock = block.qc.clone();
            self.votes.insert(block.view, WindowEntry::Vote(vote));
            out.vote = Some(vote);
        }
        out.report = Some(report);
        out
    }

    /// Records a vote without any checks. Only adversary-controlled replicas
    /// use this.
    pub fn force_vote(&mut self, block: &Arc<Block>) -> Option<VoteShare> {
        self.store.insert(block.clone());
        if self.votes.contains_key(&block.view) {
            return None;
        }
        let vote = VoteShare::sign(&self.key, block.view, block.digest());
        self.votes.insert(block.view, WindowEntry::Vote(vote));
        Some(vote)
    }

    /// Leaves the current view without having voted: records an empty share
    /// and produces the NEW-VIEW for the next view.
    pub fn on_timeout(&mut self) -> NewViewMessage {
        self.advance_to(self.current_view.next())
    }

    /// Leaves every view below `view`, recording empty shares where this
    /// replica did not vote, and produces the NEW-VIEW for `view`.
    pub fn advance_to(&mut self, view: View) -> NewViewMessage {
        let view = view.max(self.current_view.next());
        for u in self.current_view.0..view.0 {
            self.votes
                .entry(View(u))
                .or_insert_with(|| WindowEntry::Empty(EmptyShare::sign(&self.key, View(u))));
        }
        self.current_view = view;
        let keep_from = view.0.saturating_sub(self.config.rho + 1);
        self.votes.retain(|v, _| v.0 >= keep_from);
        self.collected.retain(|v, _| v.0 + 1 >= keep_from);
        self.build_new_view(view)
    }

    /// The handover for `next_view`: the lock plus one slot for each of the
    /// last `rho` views that exist (one slot in the baseline variant).
    pub fn build_new_view(&mut self, next_view: View) -> NewViewMessage {
        let span = if self.config.is_carry() {
            self.config.rho
        } else {
            1
        };
        let from = next_view.0.saturating_sub(span);
        let mut window = BTreeMap::new();
        for u in (from..next_view.0).map(View) {
            if u >= self.current_view {
                continue;
            }
            let entry = *self
                .votes
                .entry(u)
                .or_insert_with(|| WindowEntry::Empty(EmptyShare::sign(&self.key, u)));
            window.insert(u, entry);
        }
        NewViewMessage {
            sender: self.id,
            next_view,
            lock: self.lock.clone(),
            window,
        }
    }

    /// Collects a NEW-VIEW message addressed to this replica as leader, and
    /// learns any QC its lock or the collected votes establish.
    pub fn on_new_view(&mut self, msg: NewViewMessage) -> (Vec<Arc<Block>>, Vec<SafetyViolation>) {
        if !self.is_leader(msg.next_view)
            || msg.next_view < self.current_view
            || !msg.verify(&self.keys)
        {
            return (Vec::new(), Vec::new());
        }
        let next_view = msg.next_view;
        let lock = msg.lock.clone();
        let slot = self.collected.entry(next_view).or_default();
        if slot.contains_key(&msg.sender) {
            return (Vec::new(), Vec::new());
        }
        let voted: Vec<(View, Digest)> = msg
            .window
            .values()
            .filter_map(|e| e.as_vote().map(|v| (v.view, v.block)))
            .collect();
        slot.insert(msg.sender, msg);

        let (mut commits, mut violations) = self.learn_qc(lock);
        for (u, d) in voted {
            if self.certified.contains_key(&d) {
                continue;
            }
            let votes: Vec<VoteShare> = self
                .collected(next_view)
                .filter_map(|m| m.window.get(&u).and_then(|e| e.as_vote()).copied())
                .filter(|v| v.block == d)
                .collect();
            if let Some(qc) = QuorumCertificate::from_votes(&self.keys, u, d, &votes) {
                let (c, v) = self.learn_qc(qc);
                commits.extend(c);
                violations.extend(v);
            }
        }
        (commits, violations)
    }

    /// The Leader Proposal Rule. Proposes for the current view when this
    /// replica leads it and either holds a QC for the previous view, has
    /// heard from every replica, or has been told by the pacemaker that every
    /// honest replica has had time to report and a quorum did.
    pub fn try_propose(&mut self, pacemaker_signal: bool, payload: Vec<u8>) -> ProposeAttempt {
        let v = self.current_view;
        if !self.is_leader(v) || self.proposed.contains(&v) {
            return ProposeAttempt::default();
        }
        if pacemaker_signal {
            self.signalled.insert(v);
        }
        let count = self.collected.get(&v).map_or(0, |m| m.len());
        let fresh = self.high_qc.view.next() == v;
        let ready = fresh
            || count >= self.config.n
            || (self.signalled.contains(&v) && count >= self.config.quorum());
        if !ready {
            return ProposeAttempt::default();
        }

        let qc = self.high_qc.clone();
        let decision = if self.config.is_carry() {
            let ctx = LeaderContext {
                config: &self.config,
                keys: &self.keys,
                schedule: &self.schedule,
                store: &self.store,
            };
            match select_reinstate(self.collected(v), &qc, v, &ctx) {
                Ok(d) => d,
                Err(missing) => {
                    return ProposeAttempt {
                        block: None,
                        missing: Some(missing),
                    }
                }
            }
        } else {
            ReinstateDecision::NoCarry
        };
        let (reinstated, empty_certs, faulty_view_evidence) = match decision {
            ReinstateDecision::FreshQc(_) | ReinstateDecision::NoCarry => (None, vec![], vec![]),
            ReinstateDecision::Reinstate {
                block,
                empty_certs,
                evidence,
            } => (Some(block), empty_certs, evidence),
            ReinstateDecision::FaultyViews {
                empty_certs,
                evidence,
            } => (None, empty_certs, evidence),
        };
        let block = Arc::new(
            BlockBody {
                view: v,
                proposer: self.id,
                payload,
                qc,
                reinstated,
                empty_certs,
                faulty_view_evidence,
            }
            .sign(&self.key),
        );
        self.proposed.insert(v);
        ProposeAttempt {
            block: Some(block),
            missing: None,
        }
    }

    fn learn_qc(&mut self, qc: QuorumCertificate) -> (Vec<Arc<Block>>, Vec<SafetyViolation>) {
        if qc.view > self.high_qc.view {
            self.high_qc = qc.clone();
        }
        if !self.certified.contains_key(&qc.block) {
            self.certified.insert(qc.block, qc.clone());
            self.pending_commits.push(qc);
        }
        let mut commits = Vec::new();
        let mut violations = Vec::new();
        let pending = std::mem::take(&mut self.pending_commits);
        for qc in pending {
            match self.compute_commits(&qc) {
                Ok(blocks) => commits.extend(blocks),
                Err(CommitError::MissingBlock(_)) => self.pending_commits.push(qc),
                Err(CommitError::Conflict(v)) => violations.push(v),
            }
        }
        (commits, violations)
    }

    /// The Commit Rule. If `qc` certifies a block whose own QC is for the
    /// immediately preceding view, that parent and every uncommitted ancestor
    /// (reinstated blocks included) are appended to the ledger, oldest first.
    pub fn compute_commits(
        &mut self,
        qc: &QuorumCertificate,
    ) -> Result<Vec<Arc<Block>>, CommitError> {
        let child = self
            .store
            .get(&qc.block)
            .ok_or(CommitError::MissingBlock(qc.block))?
            .clone();
        if child.is_genesis() || child.qc.view.next() != child.view {
            return Ok(Vec::new());
        }
        let target = child.qc.block;
        if self.committed.contains(&target) {
            return Ok(Vec::new());
        }
        let mut path = Vec::new();
        let mut cursor = target;
        while !self.committed.contains(&cursor) {
            let b = self
                .store
                .get(&cursor)
                .ok_or(CommitError::MissingBlock(cursor))?
                .clone();
            let Some(parent) = b.parent_digest() else {
                break;
            };
            path.push(b);
            cursor = parent;
        }
        let tip = *self.ledger.last().expect("genesis");
        if cursor != tip {
            let position = self
                .ledger
                .iter()
                .position(|d| *d == cursor)
                .map_or(0, |p| p + 1);
            let conflicting = path.last().map_or(target, |b| b.digest());
            return Err(CommitError::Conflict(SafetyViolation {
                replica: self.id,
                position,
                existing: self.ledger.get(position).copied().unwrap_or(Digest::ZERO),
                conflicting,
            }));
        }
        path.reverse();
        for b in &path {
            self.ledger.push(b.digest());
            self.committed.insert(b.digest());
        }
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitError {
    #[error("block {0:?} not yet known")]
    MissingBlock(Digest),
    #[error(transparent)]
    Conflict(SafetyViolation),
}
