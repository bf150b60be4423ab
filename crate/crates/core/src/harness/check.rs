//! Exhaustive small-scope checking.
//!
//! Every combination of Byzantine replica, behavior per Byzantine-led view
//! and pre-GST delivery choice per early view is run, and each run is
//! checked against the safety and liveness invariants. Violations carry a
//! scenario file that replays them.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::world::{run_scenario, RunOutcome};
use super::{PacemakerConfig, ScenarioConfig, ScenarioError};
use crate::adversary::{AdversaryScript, Behavior, DeliveryRule};
use crate::pacemaker::{PacemakerMode, Tick};
use crate::simnet::{DelayModel, NetworkConfig, PreGstPolicy};
use crate::types::{
    Block, Digest, ProtocolConfig, ProtocolVariant, ReplicaId, Rotation, View,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariant {
    /// Two QCs for the same view certify the same block.
    NoEquivocation,
    /// No replica ever finds a committed block conflicting with its ledger.
    UniqueCommit,
    /// Ledgers agree position by position.
    PositionAgreement,
    /// An honest lock never moves to a lower view.
    LockMonotonic,
    /// An honest replica emits at most one entry per view.
    VoteExclusivity,
    /// Blocks honest replicas voted for cover every view below them exactly
    /// once when the gap is small enough.
    Coverage,
    /// After GST, three consecutive honest leaders commit the first block.
    Liveness,
}

impl Invariant {
    pub const ALL: [Invariant; 7] = [
        Invariant::NoEquivocation,
        Invariant::UniqueCommit,
        Invariant::PositionAgreement,
        Invariant::LockMonotonic,
        Invariant::VoteExclusivity,
        Invariant::Coverage,
        Invariant::Liveness,
    ];
}

/// One pre-GST delivery choice for a view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeliveryChoice {
    OnTime,
    ProposalMissed(ReplicaId),
    NewViewLate(ReplicaId),
}

impl DeliveryChoice {
    fn rule(self) -> Option<DeliveryRule> {
        match self {
            DeliveryChoice::OnTime => None,
            DeliveryChoice::ProposalMissed(r) => Some(DeliveryRule {
                late_proposal_to: vec![r],
                ..DeliveryRule::default()
            }),
            DeliveryChoice::NewViewLate(r) => Some(DeliveryRule {
                late_new_view_from: vec![r],
                ..DeliveryRule::default()
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckBounds {
    pub f: usize,
    pub views: u64,
    pub rho: u64,
    pub variant: ProtocolVariant,
    pub quorum_override: Option<usize>,
    /// Candidate Byzantine replicas; each run picks one. Empty means all.
    pub byzantine: Vec<u32>,
    pub behaviors: Vec<Behavior>,
    /// Views `1..=pre_gst_views` get the delivery menu.
    pub pre_gst_views: u64,
    pub delta: Tick,
    pub base_timeout: Tick,
    /// Keep at most this many violations in the report.
    pub keep: usize,
}

impl Default for CheckBounds {
    fn default() -> Self {
        Self {
            f: 1,
            views: 8,
            rho: 2,
            variant: ProtocolVariant::CarryTheTail,
            quorum_override: None,
            byzantine: Vec::new(),
            behaviors: Behavior::byzantine_menu().to_vec(),
            pre_gst_views: 2,
            delta: 5,
            base_timeout: 20,
            keep: 16,
        }
    }
}

impl CheckBounds {
    pub fn n(&self) -> usize {
        3 * self.f + 1
    }

    /// Tick after which every view in the delivery menu has ended.
    pub fn gst(&self) -> Tick {
        self.pre_gst_views * self.base_timeout
    }

    fn byzantine_ids(&self) -> Vec<ReplicaId> {
        if self.byzantine.is_empty() {
            (0..self.n() as u32).map(ReplicaId).collect()
        } else {
            self.byzantine.iter().copied().map(ReplicaId).collect()
        }
    }

    fn delivery_menu(&self, v: View) -> Vec<DeliveryChoice> {
        let n = self.n() as u32;
        let leader = ReplicaId((v.0 % n as u64) as u32);
        let mut menu = vec![DeliveryChoice::OnTime];
        for r in (0..n).map(ReplicaId).filter(|r| *r != leader) {
            menu.push(DeliveryChoice::ProposalMissed(r));
        }
        for r in (0..n).map(ReplicaId).filter(|r| *r != leader) {
            menu.push(DeliveryChoice::NewViewLate(r));
        }
        menu
    }

    fn base_scenario(&self) -> ScenarioConfig {
        let mut protocol = ProtocolConfig::new(self.f, self.rho, self.variant);
        protocol.quorum_override = self.quorum_override;
        ScenarioConfig {
            protocol,
            network: NetworkConfig {
                gst: self.gst(),
                delta: self.delta,
                pre_gst_policy: PreGstPolicy::AdversaryScheduled,
                delay: DelayModel::Max,
            },
            pacemaker: PacemakerConfig {
                mode: PacemakerMode::Oracle,
                base_timeout: Some(self.base_timeout),
                ..PacemakerConfig::default()
            },
            views: self.views,
            rotation: Rotation::RoundRobin,
            adversary: AdversaryScript::default(),
            seed: 0,
            payload_bytes: 8,
        }
    }

    /// The enumeration, as one scenario per trace, in a fixed order.
    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        let base = self.base_scenario();
        let schedule = base.schedule();
        let menus: Vec<Vec<DeliveryChoice>> = (1..=self.pre_gst_views)
            .map(|v| self.delivery_menu(View(v)))
            .collect();
        let mut out = Vec::new();
        for byz in self.byzantine_ids() {
            let led: Vec<View> = (1..=self.views)
                .map(View)
                .filter(|v| schedule.leader(*v) == byz)
                .collect();
            for behaviors in product(self.behaviors.len(), led.len()) {
                for deliveries in product_of(&menus) {
                    let mut script = AdversaryScript {
                        byzantine: [byz].into_iter().collect(),
                        default: Behavior::Silent,
                        ..AdversaryScript::default()
                    };
                    for (v, b) in led.iter().zip(&behaviors) {
                        script.views.insert(*v, self.behaviors[*b]);
                    }
                    for (i, choice) in deliveries.iter().enumerate() {
                        if let Some(rule) = menus[i][*choice].rule() {
                            script.delivery.insert(View(i as u64 + 1), rule);
                        }
                    }
                    out.push(base.clone().with_adversary(script));
                }
            }
        }
        out
    }
}

/// Every vector of `len` indices below `k`.
fn product(k: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

fn product_of<T>(menus: &[Vec<T>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for m in menus {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..m.len()).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckViolation {
    pub invariant: Invariant,
    pub detail: String,
    /// A scenario file reproducing the trace.
    pub scenario: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub bounds: CheckBounds,
    pub traces: u64,
    pub exhausted: bool,
    pub violating_traces: u64,
    pub counts: BTreeMap<Invariant, u64>,
    pub violations: Vec<CheckViolation>,
}

impl CheckReport {
    pub fn is_clean(&self) -> bool {
        self.violating_traces == 0
    }
}

/// Runs the whole enumeration on the rayon pool.
pub fn exhaustive_check(bounds: &CheckBounds) -> Result<CheckReport, ScenarioError> {
    let scenarios = bounds.scenarios();
    let results: Vec<Vec<(Invariant, String)>> = scenarios
        .par_iter()
        .map(|s| run_scenario(s).map(|out| verify_run(s, &out)))
        .collect::<Result<_, _>>()?;
    let mut report = CheckReport {
        bounds: bounds.clone(),
        traces: scenarios.len() as u64,
        exhausted: true,
        violating_traces: 0,
        counts: BTreeMap::new(),
        violations: Vec::new(),
    };
    for (s, found) in scenarios.iter().zip(results) {
        if found.is_empty() {
            continue;
        }
        report.violating_traces += 1;
        for (inv, detail) in found {
            *report.counts.entry(inv).or_default() += 1;
            if report.violations.len() < bounds.keep {
                report.violations.push(CheckViolation {
                    invariant: inv,
                    detail,
                    scenario: s.to_toml(),
                });
            }
        }
    }
    Ok(report)
}

/// Checks one finished run against every invariant.
pub fn verify_run(cfg: &ScenarioConfig, out: &RunOutcome) -> Vec<(Invariant, String)> {
    let rec = &out.record;
    let mut found = Vec::new();

    // Every QC an honest replica formed, stored or locked on.
    let mut certified = rec.qcs.clone();
    for b in rec.blocks.iter().filter(|b| !b.is_genesis()) {
        certified.entry(b.qc.view).or_default().insert(b.qc.block);
    }
    for history in rec.locks.values() {
        for (v, d) in history {
            certified.entry(*v).or_default().insert(*d);
        }
    }
    for (v, ds) in &certified {
        if ds.len() > 1 {
            found.push((Invariant::NoEquivocation, format!("{} QCs at {v}", ds.len())));
        }
    }

    for s in &rec.safety {
        found.push((
            Invariant::UniqueCommit,
            format!("{} at position {}", s.replica, s.position),
        ));
    }

    let ledgers: Vec<(&ReplicaId, &Vec<Digest>)> = rec.ledgers.iter().collect();
    'pairs: for (i, (ra, a)) in ledgers.iter().enumerate() {
        for (rb, b) in &ledgers[i + 1..] {
            if let Some(k) = a.iter().zip(b.iter()).position(|(x, y)| x != y) {
                found.push((
                    Invariant::PositionAgreement,
                    format!("{ra} and {rb} differ at position {k}"),
                ));
                break 'pairs;
            }
        }
    }

    for (r, history) in &rec.locks {
        if history.windows(2).any(|w| w[1].0 < w[0].0) {
            found.push((Invariant::LockMonotonic, format!("{r} lowered its lock")));
        }
    }

    for ((r, v), entries) in &rec.emitted {
        if entries.len() > 1 {
            found.push((
                Invariant::VoteExclusivity,
                format!("{r} emitted {} entries at {v}", entries.len()),
            ));
        }
    }

    for d in &rec.honest_voted {
        let Some(b) = rec.blocks.get(d) else { continue };
        if let Err(why) = coverage_oracle(b, &cfg.protocol) {
            found.push((Invariant::Coverage, format!("{} at {}: {why}", d.short(), b.view)));
        }
    }

    found.extend(check_liveness(cfg, out));
    found
}

/// Independent statement of the justification rule for a voted block.
fn coverage_oracle(b: &Block, cfg: &ProtocolConfig) -> Result<(), String> {
    if !cfg.is_carry() {
        let plain = b.reinstated.is_none()
            && b.empty_certs.is_empty()
            && b.faulty_view_evidence.is_empty();
        return if plain {
            Ok(())
        } else {
            Err("carry fields in a baseline block".into())
        };
    }
    let low = b.qc.view.0;
    let high = b.view.0;
    if high - low > cfg.rho {
        return match b.reinstated {
            None => Ok(()),
            Some(_) => Err("reinstated beyond depth".into()),
        };
    }
    // The block and every block it reinstates each contribute their own
    // view (except the outer one), certificates and evidence.
    let mut seen: BTreeMap<u64, u32> = BTreeMap::new();
    let mut cursor = Some(b);
    while let Some(t) = cursor {
        if !std::ptr::eq(t, b) {
            if t.qc != b.qc {
                return Err(format!("reinstated {} does not share the QC", t.view));
            }
            *seen.entry(t.view.0).or_default() += 1;
        }
        for c in &t.empty_certs {
            *seen.entry(c.view.0).or_default() += 1;
        }
        for e in &t.faulty_view_evidence {
            *seen.entry(e.view().0).or_default() += 1;
        }
        cursor = t.reinstated.as_deref();
    }
    let expected: BTreeMap<u64, u32> = (low + 1..high).map(|u| (u, 1)).collect();
    if seen == expected {
        Ok(())
    } else {
        Err(format!("covered {seen:?}, needed {:?}", expected.keys().collect::<Vec<_>>()))
    }
}

/// Views whose messages the adversary cannot delay, starting after GST.
fn live_from(cfg: &ScenarioConfig) -> View {
    let last_scheduled = cfg.adversary.delivery.keys().last().map_or(0, |v| v.0);
    View(last_scheduled + 1)
}

fn check_liveness(cfg: &ScenarioConfig, out: &RunOutcome) -> Vec<(Invariant, String)> {
    let rec = &out.record;
    let mut found = Vec::new();
    if !rec.completed {
        found.push((Invariant::Liveness, format!("stopped at tick {}", rec.end_tick)));
        return found;
    }
    let schedule = cfg.schedule();
    let honest = |v: u64| !rec.byzantine.contains(&schedule.leader(View(v)));
    let committed: BTreeSet<Digest> = rec.ledgers.values().flatten().copied().collect();
    let first = live_from(cfg).0.max(1);
    for w in first..=cfg.views.saturating_sub(2) {
        if !(honest(w) && honest(w + 1) && honest(w + 2)) {
            continue;
        }
        let started = rec.view_start.get(&View(w)).copied();
        if started.is_none_or(|s| s < cfg.network.gst) {
            continue;
        }
        let ok = rec
            .proposals
            .values()
            .any(|p| p.view == View(w) && p.honest_leader && committed.contains(&p.digest));
        if !ok {
            found.push((
                Invariant::Liveness,
                format!("honest trio from v{w} did not commit its first block"),
            ));
        }
    }
    found
}
