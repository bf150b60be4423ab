//! What a run leaves behind, and the summary computed from it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::pacemaker::Tick;
use crate::replica::SafetyViolation;
use crate::types::{BlockStore, Digest, LeaderSchedule, ReplicaId, View};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub view: View,
    pub proposer: ReplicaId,
    pub digest: Digest,
    pub honest_leader: bool,
    /// Sent by an honest leader scripted to straggle.
    pub straggler: bool,
    pub sent_at: Tick,
}

/// A window entry as emitted on the wire by some replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EmittedEntry {
    Vote(Digest),
    Empty,
}

/// Raw observations collected while the world runs.
#[derive(Clone, Debug, Default)]
pub struct RunRecord {
    pub honest: BTreeSet<ReplicaId>,
    pub byzantine: BTreeSet<ReplicaId>,
    pub ledgers: BTreeMap<ReplicaId, Vec<Digest>>,
    /// Every lock an honest replica held, in order, as `(view, block)`.
    pub locks: BTreeMap<ReplicaId, Vec<(View, Digest)>>,
    /// Entries honest replicas emitted, per `(replica, view)`.
    pub emitted: BTreeMap<(ReplicaId, View), BTreeSet<EmittedEntry>>,
    pub proposals: BTreeMap<Digest, ProposalRecord>,
    pub votes: BTreeMap<Digest, BTreeSet<ReplicaId>>,
    /// Digests of blocks some honest replica voted for.
    pub honest_voted: BTreeSet<Digest>,
    /// Blocks certified by some QC an honest replica formed or learned.
    pub qcs: BTreeMap<View, BTreeSet<Digest>>,
    /// Union of the honest stores at the end of the run.
    pub blocks: BlockStore,
    /// Tick at which each view started for the whole honest set.
    pub view_start: BTreeMap<View, Tick>,
    /// `(leader view, view it could not justify)`.
    pub missing: Vec<(View, View)>,
    pub safety: Vec<SafetyViolation>,
    pub view_words: BTreeMap<View, u64>,
    pub max_handover_words: usize,
    pub max_proposal_words: usize,
    pub total_words: u64,
    pub payload_words: u64,
    pub rejected: u64,
    pub end_tick: Tick,
    pub completed: bool,
    pub deadlock: bool,
}

/// The summary printed by `run` and consumed by the checks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub protocol: String,
    pub n: usize,
    pub f: usize,
    pub rho: u64,
    pub views: u64,
    pub actual_faults: usize,
    /// Honest-leader proposals (stragglers excluded) that collected a quorum
    /// of votes.
    pub honest_proposals: u64,
    pub committed_honest_proposals: u64,
    pub forked_honest_tails: u64,
    pub in_flight_honest_proposals: u64,
    /// Forked honest proposals made after GST whose tail was not isolated.
    pub forked_non_isolated: u64,
    /// Proposals by straggling honest leaders, whatever their vote count.
    pub straggler_proposals: u64,
    pub straggler_committed: u64,
    pub straggler_forked: u64,
    pub byzantine_proposals: u64,
    /// Length of the longest honest ledger, genesis excluded.
    pub commits_total: u64,
    pub ledger_lengths: BTreeMap<ReplicaId, u64>,
    pub per_view_word_counts: BTreeMap<View, u64>,
    pub total_words: u64,
    pub payload_words: u64,
    pub max_handover_words: usize,
    pub max_proposal_words: usize,
    pub rejected_proposals: u64,
    pub missing_justifications: u64,
    pub safety_violations: Vec<String>,
    pub end_tick: Tick,
    pub completed: bool,
    pub deadlock: bool,
}

/// Whether the tail at view `t` is `rho`-isolated: with `x` the last
/// honest-led view before `t` and `y` the first after it, `y - x - 2 >= rho`.
pub fn is_isolated(
    schedule: &LeaderSchedule,
    byzantine: &BTreeSet<ReplicaId>,
    t: View,
    rho: u64,
) -> bool {
    let honest = |v: u64| !byzantine.contains(&schedule.leader(View(v)));
    let x = (1..t.0).rev().find(|v| honest(*v)).unwrap_or(0);
    let limit = t.0 + schedule.n() as u64 + rho + 1;
    let y = (t.0 + 1..=limit).find(|v| honest(*v)).unwrap_or(limit);
    y - x - 2 >= rho
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fate {
    Committed,
    Forked,
    InFlight,
}

impl RunRecord {
    /// The longest honest ledger.
    pub fn longest_ledger(&self) -> &[Digest] {
        self.ledgers
            .values()
            .max_by_key(|l| l.len())
            .map_or(&[], |l| l.as_slice())
    }

    pub fn quorum_voted(&self, digest: &Digest, quorum: usize) -> bool {
        self.votes.get(digest).map_or(0, |s| s.len()) >= quorum
    }

    /// Classifies a proposal against the longest honest ledger: committed if
    /// on it, forked if the ledger holds a block from a later view, otherwise
    /// still in flight.
    pub fn fate(&self, digest: &Digest) -> Fate {
        let ledger = self.longest_ledger();
        if ledger.contains(digest) {
            return Fate::Committed;
        }
        let Some(p) = self.proposals.get(digest) else {
            return Fate::InFlight;
        };
        let later = ledger
            .iter()
            .filter_map(|d| self.blocks.get(d))
            .any(|b| b.view > p.view);
        if later {
            Fate::Forked
        } else {
            Fate::InFlight
        }
    }

    pub fn metrics(
        &self,
        scenario: &super::ScenarioConfig,
        schedule: &LeaderSchedule,
    ) -> RunMetrics {
        let quorum = scenario.protocol.quorum();
        let gst = scenario.network.gst;
        let mut m = RunMetrics {
            seed: scenario.seed,
            protocol: scenario.protocol.variant.to_string(),
            n: scenario.protocol.n,
            f: scenario.protocol.f,
            rho: scenario.protocol.rho,
            views: scenario.views,
            actual_faults: self.byzantine.len(),
            honest_proposals: 0,
            committed_honest_proposals: 0,
            forked_honest_tails: 0,
            in_flight_honest_proposals: 0,
            forked_non_isolated: 0,
            straggler_proposals: 0,
            straggler_committed: 0,
            straggler_forked: 0,
            byzantine_proposals: 0,
            commits_total: self.longest_ledger().len().saturating_sub(1) as u64,
            ledger_lengths: self
                .ledgers
                .iter()
                .map(|(r, l)| (*r, l.len().saturating_sub(1) as u64))
                .collect(),
            per_view_word_counts: self.view_words.clone(),
            total_words: self.total_words,
            payload_words: self.payload_words,
            max_handover_words: self.max_handover_words,
            max_proposal_words: self.max_proposal_words,
            rejected_proposals: self.rejected,
            missing_justifications: self.missing.len() as u64,
            safety_violations: self.safety.iter().map(|v| format!("{v:?}")).collect(),
            end_tick: self.end_tick,
            completed: self.completed,
            deadlock: self.deadlock,
        };
        for p in self.proposals.values() {
            if !p.honest_leader {
                m.byzantine_proposals += 1;
                continue;
            }
            let fate = self.fate(&p.digest);
            if p.straggler {
                m.straggler_proposals += 1;
                match fate {
                    Fate::Committed => m.straggler_committed += 1,
                    Fate::Forked => m.straggler_forked += 1,
                    Fate::InFlight => {}
                }
                continue;
            }
            if !self.quorum_voted(&p.digest, quorum) {
                continue;
            }
            m.honest_proposals += 1;
            match fate {
                Fate::Committed => m.committed_honest_proposals += 1,
                Fate::InFlight => m.in_flight_honest_proposals += 1,
                Fate::Forked => {
                    m.forked_honest_tails += 1;
                    let after_gst = self
                        .view_start
                        .get(&p.view)
                        .is_some_and(|s| *s >= gst);
                    if after_gst
                        && !is_isolated(schedule, &self.byzantine, p.view, scenario.protocol.rho)
                    {
                        m.forked_non_isolated += 1;
                    }
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn byz(ids: &[u32]) -> BTreeSet<ReplicaId> {
        ids.iter().copied().map(ReplicaId).collect()
    }

    #[test]
    fn single_bad_leader_isolates_only_at_rho_one() {
        let s = LeaderSchedule::round_robin(4);
        // Leader 3 leads view 3; the tail at view 2 has one bad leader after it.
        assert!(is_isolated(&s, &byz(&[3]), View(2), 1));
        assert!(!is_isolated(&s, &byz(&[3]), View(2), 2));
        assert!(!is_isolated(&s, &byz(&[3]), View(1), 1));
    }

    #[test]
    fn bad_leaders_on_both_sides_count() {
        let s = LeaderSchedule::round_robin(7);
        // Views 2 and 4 are bad around the honest tail at view 3.
        assert!(is_isolated(&s, &byz(&[2, 4]), View(3), 2));
        assert!(!is_isolated(&s, &byz(&[2, 4]), View(3), 3));
    }
}
