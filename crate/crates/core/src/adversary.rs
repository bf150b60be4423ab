//! Scripted Byzantine leaders and benign leader slowness.
//!
//! Byzantine replicas share everything they receive and may sign with any
//! coalition key, but never with an honest replica's key. When a Byzantine
//! replica leads a view its scripted [`Behavior`] decides what it sends.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::ClusterKeys;
use crate::pacemaker::Tick;
use crate::replica::NewViewMessage;
use crate::types::{
    Block, BlockBody, BlockStore, Digest, EmptyCertificate, EmptyShare, Equivocation,
    LeaderSchedule, ProtocolConfig, QuorumCertificate, ReplicaId, View, VoteShare,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "kebab-case")]
pub enum Behavior {
    /// Extend the QC below the highest honest tail, omitting the tail, with
    /// whatever justification the coalition can sign.
    TailFork,
    /// Reinstate a block from a view below the tail (default: the view just
    /// below it).
    SkipForward {
        #[serde(default)]
        target: Option<View>,
    },
    /// Reinstate a fabricated block from a view above the tail (default: the
    /// view just below the proposal).
    SkipBackward {
        #[serde(default)]
        target: Option<View>,
    },
    /// Send nothing.
    Silent,
    /// Send two different valid-looking proposals to the two halves of the
    /// cluster.
    Equivocate,
    /// Delay an honest leader's proposal: the k-th recipient, counting from
    /// the leader itself, receives it `k * extra` ticks late.
    Straggle { extra: Tick },
    /// Follow the protocol.
    Honest,
}

impl Behavior {
    pub fn name(&self) -> &'static str {
        match self {
            Behavior::TailFork => "tail-fork",
            Behavior::SkipForward { .. } => "skip-forward",
            Behavior::SkipBackward { .. } => "skip-backward",
            Behavior::Silent => "silent",
            Behavior::Equivocate => "equivocate",
            Behavior::Straggle { .. } => "straggle",
            Behavior::Honest => "honest",
        }
    }

    /// The behaviors a Byzantine leader can be scripted with.
    pub fn byzantine_menu() -> [Behavior; 6] {
        [
            Behavior::TailFork,
            Behavior::SkipForward { target: None },
            Behavior::SkipBackward { target: None },
            Behavior::Silent,
            Behavior::Equivocate,
            Behavior::Honest,
        ]
    }
}

/// Adversarial scheduling of one view's messages before GST.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRule {
    /// These replicas receive the view's proposal only at GST.
    #[serde(default)]
    pub late_proposal_to: Vec<ReplicaId>,
    /// NEW-VIEW messages for this view from these replicas arrive only at GST.
    #[serde(default)]
    pub late_new_view_from: Vec<ReplicaId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryScript {
    #[serde(default)]
    pub byzantine: BTreeSet<ReplicaId>,
    /// Behavior of Byzantine-led views without an explicit entry.
    #[serde(default = "default_behavior")]
    pub default: Behavior,
    #[serde(default)]
    pub views: BTreeMap<View, Behavior>,
    #[serde(default)]
    pub delivery: BTreeMap<View, DeliveryRule>,
}

fn default_behavior() -> Behavior {
    Behavior::Silent
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("{got} Byzantine replicas exceed f = {f}")]
    TooManyByzantine { got: usize, f: usize },
    #[error("replica {0} is outside the cluster")]
    UnknownReplica(ReplicaId),
    #[error("{0} is led by an honest replica; only straggle may bind it")]
    HonestLeaderScripted(View),
    #[error("{0} is led by a Byzantine replica; straggle only models honest slowness")]
    StraggleOnByzantine(View),
}

impl Default for AdversaryScript {
    fn default() -> Self {
        Self {
            byzantine: BTreeSet::new(),
            default: default_behavior(),
            views: BTreeMap::new(),
            delivery: BTreeMap::new(),
        }
    }
}

impl AdversaryScript {
    pub fn honest() -> Self {
        Self::default()
    }

    pub fn with_byzantine(ids: impl IntoIterator<Item = u32>, default: Behavior) -> Self {
        Self {
            byzantine: ids.into_iter().map(ReplicaId).collect(),
            default,
            ..Self::default()
        }
    }

    pub fn is_byzantine(&self, id: ReplicaId) -> bool {
        self.byzantine.contains(&id)
    }

    pub fn validate(&self, config: &ProtocolConfig, schedule: &LeaderSchedule) -> Result<(), ScriptError> {
        if self.byzantine.len() > config.f {
            return Err(ScriptError::TooManyByzantine {
                got: self.byzantine.len(),
                f: config.f,
            });
        }
        if let Some(r) = self.byzantine.iter().find(|r| r.0 as usize >= config.n) {
            return Err(ScriptError::UnknownReplica(*r));
        }
        for (view, b) in &self.views {
            let byz = self.is_byzantine(schedule.leader(*view));
            match b {
                Behavior::Straggle { .. } if byz => return Err(ScriptError::StraggleOnByzantine(*view)),
                Behavior::Straggle { .. } => {}
                _ if !byz => return Err(ScriptError::HonestLeaderScripted(*view)),
                _ => {}
            }
        }
        Ok(())
    }

    /// What the leader of `view` does: its scripted behavior if Byzantine,
    /// `Straggle` or `Honest` otherwise.
    pub fn behavior(&self, view: View, leader: ReplicaId) -> Behavior {
        match self.views.get(&view) {
            Some(b) => *b,
            None if self.is_byzantine(leader) => self.default,
            None => Behavior::Honest,
        }
    }
}

/// Everything the coalition knows when one of its members leads `view`.
pub struct CoalitionView<'a> {
    pub view: View,
    pub leader: ReplicaId,
    pub config: &'a ProtocolConfig,
    pub keys: &'a ClusterKeys,
    pub schedule: &'a LeaderSchedule,
    pub members: &'a BTreeSet<ReplicaId>,
    /// Union of the coalition's block stores.
    pub store: &'a BlockStore,
    /// NEW-VIEW messages the leader collected for `view`.
    pub inbox: Vec<&'a NewViewMessage>,
    /// The highest QC any member knows.
    pub high_qc: &'a QuorumCertificate,
    /// What an honest leader in the same position would propose.
    pub honest_proposal: Option<Arc<Block>>,
    pub payload: Vec<u8>,
}

/// A proposal addressed to some replicas.
pub type Dispatch = Vec<(ReplicaId, Arc<Block>)>;

/// Proposals the Byzantine leader of `ctx.view` sends under `behavior`.
pub fn act(behavior: Behavior, ctx: &CoalitionView<'_>) -> Dispatch {
    let everyone = || (0..ctx.config.n as u32).map(ReplicaId);
    let to_all = |b: Arc<Block>| everyone().map(|r| (r, b.clone())).collect::<Dispatch>();
    match behavior {
        Behavior::Silent => Vec::new(),
        Behavior::Honest | Behavior::Straggle { .. } => match &ctx.honest_proposal {
            Some(b) => to_all(b.clone()),
            None => to_all(fork_block(ctx, ctx.high_qc.clone(), None, &ctx.payload)),
        },
        Behavior::TailFork => {
            let qc = match honest_tail(ctx) {
                Some(t) => t.qc.clone(),
                None => ctx.high_qc.clone(),
            };
            to_all(fork_block(ctx, qc, None, &ctx.payload))
        }
        Behavior::SkipForward { target } => {
            let Some(t) = honest_tail(ctx) else {
                return to_all(fork_block(ctx, ctx.high_qc.clone(), None, &ctx.payload));
            };
            let target = target.unwrap_or(View(t.view.0.saturating_sub(1)));
            let qc = highest_qc_below(ctx, target);
            let tp = reinstate_at(ctx, target, &qc);
            to_all(fork_block(ctx, qc, Some(tp), &ctx.payload))
        }
        Behavior::SkipBackward { target } => {
            let Some(t) = honest_tail(ctx) else {
                return to_all(fork_block(ctx, ctx.high_qc.clone(), None, &ctx.payload));
            };
            let qc = t.qc.clone();
            if t.view.next() >= ctx.view {
                // Nothing lies between the tail and this view to hide behind.
                return to_all(fork_block(ctx, qc, None, &ctx.payload));
            }
            let target = target
                .filter(|v| *v > t.view && *v < ctx.view)
                .unwrap_or(View(ctx.view.0 - 1));
            let tp = reinstate_at(ctx, target, &qc);
            to_all(fork_block(ctx, qc, Some(tp), &ctx.payload))
        }
        Behavior::Equivocate => {
            let a = match &ctx.honest_proposal {
                Some(b) => b.clone(),
                None => fork_block(ctx, ctx.high_qc.clone(), None, &ctx.payload),
            };
            let mut body = a.body().clone();
            body.payload.push(0xee);
            let b = Arc::new(body.sign(&ctx.keys.signing_key(ctx.leader).expect("member")));
            let half = ctx.config.n as u32 / 2;
            everyone()
                .map(|r| (r, if r.0 < half { a.clone() } else { b.clone() }))
                .collect()
        }
    }
}

/// The highest-view block proposed by an honest leader below the current
/// view.
pub fn honest_tail<'a>(ctx: &'a CoalitionView<'_>) -> Option<&'a Arc<Block>> {
    ctx.store
        .iter()
        .filter(|b| !b.is_genesis() && b.view < ctx.view && !ctx.members.contains(&b.proposer))
        .max_by_key(|b| (b.view, b.digest()))
}

fn known_qcs<'a>(ctx: &'a CoalitionView<'_>) -> impl Iterator<Item = &'a QuorumCertificate> {
    ctx.store
        .iter()
        .map(|b| &b.qc)
        .chain(ctx.inbox.iter().map(|m| &m.lock))
        .chain(std::iter::once(ctx.high_qc))
}

fn highest_qc_below(ctx: &CoalitionView<'_>, view: View) -> QuorumCertificate {
    known_qcs(ctx)
        .filter(|q| q.view < view)
        .max_by_key(|q| (q.view, q.block))
        .cloned()
        .unwrap_or_else(|| QuorumCertificate::genesis(ctx.keys))
}

/// A block at `view` carrying `qc`: a real one if the coalition has it,
/// otherwise fabricated. Fabrication under an honest leader's name is
/// impossible, so such a block is signed by the acting leader and fails
/// validation.
fn reinstate_at(ctx: &CoalitionView<'_>, view: View, qc: &QuorumCertificate) -> Arc<Block> {
    if let Some(b) = ctx
        .store
        .iter()
        .filter(|b| b.view == view && b.qc == *qc)
        .min_by_key(|b| b.digest())
    {
        return b.clone();
    }
    let proposer = ctx.schedule.leader(view);
    let signer = if ctx.members.contains(&proposer) {
        proposer
    } else {
        ctx.leader
    };
    let body = BlockBody {
        view,
        proposer,
        payload: vec![0xfa, view.0 as u8],
        qc: qc.clone(),
        reinstated: None,
        empty_certs: justify(ctx, qc.view, view),
        faulty_view_evidence: fabricate_evidence(ctx, qc.view, view),
    };
    Arc::new(body.sign(&ctx.keys.signing_key(signer).expect("member")))
}

/// A proposal for the current view on `qc`, attaching whatever coverage the
/// coalition can produce for views not covered by `reinstated`.
fn fork_block(
    ctx: &CoalitionView<'_>,
    qc: QuorumCertificate,
    reinstated: Option<Arc<Block>>,
    payload: &[u8],
) -> Arc<Block> {
    let below = reinstated.as_ref().map(|r| r.view);
    let lo = below.unwrap_or(qc.view);
    let needs = ctx.config.is_carry() && ctx.view.since(qc.view) <= ctx.config.rho;
    let (certs, evidence) = if needs {
        (
            justify(ctx, lo, ctx.view),
            fabricate_evidence(ctx, lo, ctx.view),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let mut payload = payload.to_vec();
    payload.push(0xbd);
    let body = BlockBody {
        view: ctx.view,
        proposer: ctx.leader,
        payload,
        qc,
        reinstated,
        empty_certs: certs,
        faulty_view_evidence: evidence,
    };
    Arc::new(body.sign(&ctx.keys.signing_key(ctx.leader).expect("member")))
}

/// Empty certificates for views in `(lo, hi)` led by honest replicas, where
/// collected and coalition empty shares reach the quorum.
fn justify(ctx: &CoalitionView<'_>, lo: View, hi: View) -> Vec<EmptyCertificate> {
    let mut certs = Vec::new();
    for u in (lo.0 + 1..hi.0).map(View) {
        if ctx.members.contains(&ctx.schedule.leader(u)) {
            continue;
        }
        let mut shares: BTreeMap<ReplicaId, EmptyShare> = ctx
            .inbox
            .iter()
            .filter_map(|m| m.window.get(&u).and_then(|e| e.as_empty()).copied())
            .map(|s| (s.voter, s))
            .collect();
        for m in ctx.members {
            let key = ctx.keys.signing_key(*m).expect("member");
            shares.entry(*m).or_insert_with(|| EmptyShare::sign(&key, u));
        }
        if let Some(c) = EmptyCertificate::from_shares(ctx.keys, u, shares.values()) {
            certs.push(c);
        }
    }
    certs
}

/// Equivocation pairs for every coalition-led view in `(lo, hi)`.
fn fabricate_evidence(
    ctx: &CoalitionView<'_>,
    lo: View,
    hi: View,
) -> Vec<Equivocation> {
    (lo.0 + 1..hi.0)
        .map(View)
        .filter(|u| ctx.members.contains(&ctx.schedule.leader(*u)))
        .map(|u| {
            let key = ctx.keys.signing_key(ctx.schedule.leader(u)).expect("member");
            Equivocation::new(
                VoteShare::sign(&key, u, Digest([0xa1; 32])),
                VoteShare::sign(&key, u, Digest([0xb2; 32])),
            )
        })
        .collect()
}

/// Byzantine placements that maximise consecutive Byzantine leaders under
/// round-robin rotation: runs of `rho` adjacent ids separated by one honest
/// id, plus a final shorter run for the remainder. For `n = 4` every single
/// id is returned.
pub fn worst_case_placements(n: usize, f: usize, rho: u64) -> Vec<BTreeSet<ReplicaId>> {
    if f == 0 {
        return vec![BTreeSet::new()];
    }
    let run = (rho as usize).clamp(1, f);
    let mut base = BTreeSet::new();
    let mut id = 0usize;
    let mut left = f;
    while left > 0 {
        let take = run.min(left);
        for k in 0..take {
            base.insert(id + k);
        }
        id += take + 1;
        left -= take;
    }
    let shifts: Vec<usize> = if n <= 4 { (0..n).collect() } else { vec![0, 1] };
    shifts
        .into_iter()
        .map(|s| base.iter().map(|i| ReplicaId(((i + s + 1) % n) as u32)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ProtocolVariant;
    use crate::validate::{validate_block, Rejection};

    #[test]
    fn script_rejects_scripted_honest_leader() {
        let cfg = ProtocolConfig::new(1, 6, ProtocolVariant::CarryTheTail);
        let sched = LeaderSchedule::round_robin(4);
        let mut s = AdversaryScript::with_byzantine([3], Behavior::TailFork);
        s.views.insert(View(5), Behavior::Silent);
        assert_eq!(s.validate(&cfg, &sched), Err(ScriptError::HonestLeaderScripted(View(5))));
        s.views.clear();
        s.views.insert(View(5), Behavior::Straggle { extra: 3 });
        assert!(s.validate(&cfg, &sched).is_ok());
        let two = AdversaryScript::with_byzantine([1, 2], Behavior::Silent);
        assert!(two.validate(&cfg, &sched).is_err());
    }

    #[test]
    fn placements_form_runs() {
        let p = worst_case_placements(19, 6, 6);
        assert_eq!(p[0].len(), 6);
        let ids: Vec<u32> = p[0].iter().map(|r| r.0).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5, 6]);
        let p = worst_case_placements(10, 3, 2);
        let ids: Vec<u32> = p[0].iter().map(|r| r.0).collect();
        assert_eq!(ids, vec![1, 2, 4]);
        assert_eq!(worst_case_placements(4, 1, 6).len(), 4);
    }

    // Leader 0 proposes T at view 4 on QC(3); Byzantine leader 1 at view 5
    // tries to skip it. No honest replica signed an empty share for view 4.
    #[test]
    fn tail_fork_cannot_cover_the_tail() {
        let cfg = ProtocolConfig::new(1, 6, ProtocolVariant::CarryTheTail);
        let keys = cfg.keys();
        let sched = LeaderSchedule::round_robin(4);
        let sign = |i: u32| keys.signing_key(ReplicaId(i)).unwrap();
        let b3 = Arc::new(
            BlockBody {
                view: View(3),
                proposer: ReplicaId(3),
                payload: vec![],
                qc: QuorumCertificate::genesis(&keys),
                reinstated: None,
                empty_certs: vec![],
                faulty_view_evidence: vec![],
            }
            .sign(&sign(3)),
        );
        let votes: Vec<_> = (0..3).map(|i| VoteShare::sign(&sign(i), View(3), b3.digest())).collect();
        let q3 = QuorumCertificate::from_votes(&keys, View(3), b3.digest(), &votes).unwrap();
        let t4 = Arc::new(
            BlockBody {
                view: View(4),
                proposer: ReplicaId(0),
                payload: vec![4],
                qc: q3.clone(),
                reinstated: None,
                empty_certs: vec![],
                faulty_view_evidence: vec![],
            }
            .sign(&sign(0)),
        );
        let mut store = BlockStore::new();
        store.insert(b3);
        store.insert(t4);
        let members: BTreeSet<_> = [ReplicaId(1)].into_iter().collect();
        let ctx = CoalitionView {
            view: View(5),
            leader: ReplicaId(1),
            config: &cfg,
            keys: &keys,
            schedule: &sched,
            members: &members,
            store: &store,
            inbox: vec![],
            high_qc: &q3,
            honest_proposal: None,
            payload: vec![],
        };
        for behavior in [
            Behavior::TailFork,
            Behavior::SkipForward { target: None },
            Behavior::SkipBackward { target: None },
        ] {
            let out = act(behavior, &ctx);
            assert_eq!(out.len(), 4);
            let r = validate_block(&out[0].1, &cfg, &keys, &sched);
            assert!(!r.is_accept(), "{behavior:?} produced a valid block");
            if behavior == Behavior::TailFork {
                assert!(r.rejections.contains(&Rejection::UncoveredView(View(4))));
            }
        }
        let base = ProtocolConfig::new(1, 6, ProtocolVariant::HotStuff2Baseline);
        let ctx = CoalitionView { config: &base, ..ctx };
        let out = act(Behavior::TailFork, &ctx);
        assert!(validate_block(&out[0].1, &base, &keys, &sched).is_accept());
        assert_eq!(out[0].1.qc, q3);
    }
}
