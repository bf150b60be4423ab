//! Structural validation of proposals.
//!
//! A block is accepted when its QC verifies, it is signed by the scheduled
//! leader, and (under the carry variant, with the QC at most `rho` views
//! old) every view strictly between the QC and the block is accounted for
//! exactly once by the reinstated chain, an empty certificate, or proof that
//! the view's leader equivocated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{ClusterKeys, ThresholdScheme};
use crate::types::{vote_message, Block, LeaderSchedule, ProtocolConfig, ReplicaId, View};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Error)]
pub enum Rejection {
    #[error("quorum certificate does not verify")]
    BadQc,
    #[error("qc view is not below the block view")]
    QcNotBelowView,
    #[error("empty certificate for {0} does not verify")]
    BadEmptyCert(View),
    #[error("equivocation evidence for {0} is not a conflicting pair from that view's leader")]
    BadEvidence(View),
    #[error("{0} is neither extended, certified empty, nor proven faulty")]
    UncoveredView(View),
    #[error("{0} is accounted for more than once")]
    DuplicateCoverage(View),
    #[error("{0} lies outside the interval between qc and block")]
    CoverageOutOfRange(View),
    #[error("reinstated block does not carry the same qc as the block")]
    ReinstateNotExtendingQc,
    #[error("reinstated chain present where none is allowed, or nested too deep")]
    DepthExceeded,
    #[error("block for {view} proposed by {got}, leader is {expected}")]
    WrongProposer {
        view: View,
        expected: ReplicaId,
        got: ReplicaId,
    },
    #[error("proposer signature on the block at {0} does not verify")]
    BadProposerSignature(View),
    #[error("baseline block carries reinstated blocks, certificates or evidence")]
    UnexpectedCarry,
}

/// Every clause a block failed; empty means accept.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rejections: Vec<Rejection>,
}

impl ValidationReport {
    pub fn is_accept(&self) -> bool {
        self.rejections.is_empty()
    }

    fn reject(&mut self, r: Rejection) {
        if !self.rejections.contains(&r) {
            self.rejections.push(r);
        }
    }
}

pub fn validate_block(
    block: &Block,
    config: &ProtocolConfig,
    keys: &ClusterKeys,
    schedule: &LeaderSchedule,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_signed(block, keys, schedule, &mut report);
    if block.qc.view >= block.view {
        report.reject(Rejection::QcNotBelowView);
    }
    if !block.qc.verify(keys) {
        report.reject(Rejection::BadQc);
    }
    if !config.is_carry() {
        let carries = block.reinstated.is_some()
            || !block.empty_certs.is_empty()
            || !block.faulty_view_evidence.is_empty();
        if carries {
            report.reject(Rejection::UnexpectedCarry);
        }
        return report;
    }

    let gap = block.view.since(block.qc.view);
    let mut covered: BTreeMap<View, usize> = BTreeMap::new();
    check_attachments(block, keys, schedule, &mut covered, &mut report);

    let mut depth = 0u64;
    let mut next = block.reinstated.as_deref();
    while let Some(t) = next {
        depth += 1;
        if t.qc != block.qc {
            report.reject(Rejection::ReinstateNotExtendingQc);
        }
        check_signed(t, keys, schedule, &mut report);
        *covered.entry(t.view).or_default() += 1;
        check_attachments(t, keys, schedule, &mut covered, &mut report);
        next = t.reinstated.as_deref();
    }

    if gap > config.rho {
        if depth > 0 {
            report.reject(Rejection::DepthExceeded);
        }
        return report;
    }
    if depth > config.rho {
        report.reject(Rejection::DepthExceeded);
    }
    for (&view, &count) in &covered {
        if view <= block.qc.view || view >= block.view {
            report.reject(Rejection::CoverageOutOfRange(view));
        } else if count > 1 {
            report.reject(Rejection::DuplicateCoverage(view));
        }
    }
    for u in block.qc.view.0 + 1..block.view.0 {
        if !covered.contains_key(&View(u)) {
            report.reject(Rejection::UncoveredView(View(u)));
        }
    }
    report
}

fn check_signed(
    block: &Block,
    keys: &ClusterKeys,
    schedule: &LeaderSchedule,
    report: &mut ValidationReport,
) {
    let expected = schedule.leader(block.view);
    if block.proposer != expected {
        report.reject(Rejection::WrongProposer {
            view: block.view,
            expected,
            got: block.proposer,
        });
    }
    let msg = vote_message(block.view, block.digest());
    if !keys.verify_share(&block.proposer_share(), &msg, block.proposer) {
        report.reject(Rejection::BadProposerSignature(block.view));
    }
}

fn check_attachments(
    block: &Block,
    keys: &ClusterKeys,
    schedule: &LeaderSchedule,
    covered: &mut BTreeMap<View, usize>,
    report: &mut ValidationReport,
) {
    for cert in &block.empty_certs {
        if !cert.verify(keys) {
            report.reject(Rejection::BadEmptyCert(cert.view));
        }
        *covered.entry(cert.view).or_default() += 1;
    }
    for ev in &block.faulty_view_evidence {
        let view = ev.view();
        if !ev.verify(keys) || ev.first.voter != schedule.leader(view) {
            report.reject(Rejection::BadEvidence(view));
        }
        *covered.entry(view).or_default() += 1;
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::types::{
        BlockBody, EmptyCertificate, EmptyShare, Equivocation, ProtocolVariant, QuorumCertificate,
        VoteShare,
    };

    fn config(rho: u64) -> ProtocolConfig {
        ProtocolConfig::new(1, rho, ProtocolVariant::CarryTheTail)
    }

    fn keys() -> ClusterKeys {
        ClusterKeys::new(4, 1)
    }

    fn sched() -> LeaderSchedule {
        LeaderSchedule::round_robin(4)
    }

    fn make(view: u64, qc: QuorumCertificate, reinstated: Option<Arc<Block>>) -> Arc<Block> {
        make_full(view, qc, reinstated, vec![], vec![])
    }

    fn make_full(
        view: u64,
        qc: QuorumCertificate,
        reinstated: Option<Arc<Block>>,
        empties: Vec<u64>,
        evidence: Vec<Equivocation>,
    ) -> Arc<Block> {
        let k = keys();
        let leader = sched().leader(View(view));
        Arc::new(
            BlockBody {
                view: View(view),
                proposer: leader,
                payload: vec![],
                qc,
                reinstated,
                empty_certs: empties.into_iter().map(cert).collect(),
                faulty_view_evidence: evidence,
            }
            .sign(&k.signing_key(leader).unwrap()),
        )
    }

    fn cert(view: u64) -> EmptyCertificate {
        let k = keys();
        let shares: Vec<_> = (0..3)
            .map(|i| EmptyShare::sign(&k.signing_key(ReplicaId(i)).unwrap(), View(view)))
            .collect();
        EmptyCertificate::from_shares(&k, View(view), &shares).unwrap()
    }

    fn qc_for(b: &Block) -> QuorumCertificate {
        let k = keys();
        let votes: Vec<_> = (0..3)
            .map(|i| VoteShare::sign(&k.signing_key(ReplicaId(i)).unwrap(), b.view, b.digest()))
            .collect();
        QuorumCertificate::from_votes(&k, b.view, b.digest(), &votes).unwrap()
    }

    fn b3() -> Arc<Block> {
        make(3, QuorumCertificate::genesis(&keys()), None)
    }

    fn check(b: &Block, rho: u64) -> ValidationReport {
        validate_block(b, &config(rho), &keys(), &sched())
    }

    #[test]
    fn consecutive_views_accept() {
        let b4 = make(4, qc_for(&b3()), None);
        let b5 = make(5, qc_for(&b4), None);
        assert!(check(&b5, 6).is_accept());
    }

    #[test]
    fn reinstate_with_empty_certs_accepts() {
        let q = qc_for(&b3());
        let t4 = make(4, q.clone(), None);
        let b7 = make_full(7, q, Some(t4), vec![5, 6], vec![]);
        assert!(check(&b7, 6).is_accept(), "{:?}", check(&b7, 6));
    }

    #[test]
    fn missing_empty_cert_is_reported_by_view() {
        let b7 = make_full(7, qc_for(&b3()), None, vec![4, 6], vec![]);
        assert_eq!(
            check(&b7, 6).rejections,
            vec![Rejection::UncoveredView(View(5))]
        );
    }

    #[test]
    fn old_qc_needs_no_justification() {
        let b7 = make(7, qc_for(&b3()), None);
        assert!(check(&b7, 3).is_accept());
        assert!(!check(&b7, 4).is_accept());
    }

    #[test]
    fn reinstate_beyond_window_rejected() {
        let q = qc_for(&b3());
        let t4 = make(4, q.clone(), None);
        let b8 = make_full(8, q, Some(t4), vec![5, 6, 7], vec![]);
        assert!(check(&b8, 5).is_accept());
        assert!(check(&b8, 4).rejections.contains(&Rejection::DepthExceeded));
    }

    #[test]
    fn reinstated_block_with_other_qc_rejected() {
        let b4 = make(4, qc_for(&b3()), None);
        let t5 = make(5, qc_for(&b4), None);
        let b6 = make(6, qc_for(&b3()), Some(t5));
        let r = check(&b6, 6);
        assert!(r.rejections.contains(&Rejection::ReinstateNotExtendingQc));
    }

    #[test]
    fn double_coverage_rejected() {
        let q = qc_for(&b3());
        let t4 = make(4, q.clone(), None);
        let b6 = make_full(6, q, Some(t4), vec![4, 5], vec![]);
        assert_eq!(
            check(&b6, 6).rejections,
            vec![Rejection::DuplicateCoverage(View(4))]
        );
    }

    #[test]
    fn leader_equivocation_covers_its_view() {
        let k = keys();
        // view 5 is led by replica 1
        let l = k.signing_key(ReplicaId(1)).unwrap();
        let ev = Equivocation::new(
            VoteShare::sign(&l, View(5), crate::types::Digest([1; 32])),
            VoteShare::sign(&l, View(5), crate::types::Digest([2; 32])),
        );
        let b6 = make_full(6, qc_for(&make(4, qc_for(&b3()), None)), None, vec![], vec![ev]);
        assert!(check(&b6, 6).is_accept());

        let other = k.signing_key(ReplicaId(2)).unwrap();
        let bogus = Equivocation::new(
            VoteShare::sign(&other, View(5), crate::types::Digest([1; 32])),
            VoteShare::sign(&other, View(5), crate::types::Digest([2; 32])),
        );
        let b6 = make_full(6, qc_for(&make(4, qc_for(&b3()), None)), None, vec![], vec![bogus]);
        assert_eq!(
            check(&b6, 6).rejections,
            vec![Rejection::BadEvidence(View(5))]
        );
    }

    #[test]
    fn wrong_proposer_rejected() {
        let k = keys();
        let b = BlockBody {
            view: View(5),
            proposer: ReplicaId(2),
            payload: vec![],
            qc: QuorumCertificate::genesis(&k),
            reinstated: None,
            empty_certs: vec![],
            faulty_view_evidence: vec![],
        }
        .sign(&k.signing_key(ReplicaId(2)).unwrap());
        let r = validate_block(
            &b,
            &ProtocolConfig::new(1, 6, ProtocolVariant::HotStuff2Baseline),
            &k,
            &sched(),
        );
        assert!(matches!(r.rejections[0], Rejection::WrongProposer { .. }));
    }

    #[test]
    fn baseline_ignores_coverage() {
        let b7 = make(7, qc_for(&b3()), None);
        let cfg = ProtocolConfig::new(1, 6, ProtocolVariant::HotStuff2Baseline);
        assert!(validate_block(&b7, &cfg, &keys(), &sched()).is_accept());
    }

    #[test]
    fn baseline_rejects_carried_block() {
        let b6 = make(6, qc_for(&b3()), None);
        let b7 = make(7, qc_for(&b3()), Some(b6));
        let cfg = ProtocolConfig::new(1, 6, ProtocolVariant::HotStuff2Baseline);
        let report = validate_block(&b7, &cfg, &keys(), &sched());
        assert_eq!(report.rejections, vec![Rejection::UnexpectedCarry]);
    }
}
