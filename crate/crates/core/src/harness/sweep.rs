//! Fork-fraction sweeps and word-complexity audits.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{Fate, RunMetrics};
use super::world::run_scenario;
use super::{ScenarioConfig, ScenarioError};
use crate::adversary::{worst_case_placements, AdversaryScript, Behavior};
use crate::types::{LeaderSchedule, ProtocolVariant, ReplicaId, View};

/// One line of a sweep: a `(rho, placement)` pair and what it forked.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub protocol: String,
    pub n: usize,
    pub f: usize,
    pub rho: u64,
    pub placement: Vec<u32>,
    pub honest_proposals: u64,
    pub forked: u64,
}

impl SweepRow {
    pub fn fraction(&self) -> f64 {
        if self.honest_proposals == 0 {
            0.0
        } else {
            self.forked as f64 / self.honest_proposals as f64
        }
    }

    /// `forked / honest <= num / den`, compared without rounding.
    pub fn at_most(&self, num: u64, den: u64) -> bool {
        self.forked * den <= num * self.honest_proposals
    }

    pub const CSV_HEADER: &'static str = "protocol,n,f,rho,placement,honest_proposals,forked,fraction";

    pub fn csv(&self) -> String {
        let placement: Vec<String> = self.placement.iter().map(|r| r.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{:.6}",
            self.protocol,
            self.n,
            self.f,
            self.rho,
            placement.join(" "),
            self.honest_proposals,
            self.forked,
            self.fraction()
        )
    }
}

/// The strongest script for a placement: each run of consecutive Byzantine
/// leaders stays silent except its last leader, which tail-forks.
pub fn tail_fork_script(
    schedule: &LeaderSchedule,
    byzantine: &BTreeSet<ReplicaId>,
    views: u64,
    last: Behavior,
) -> AdversaryScript {
    let mut script = AdversaryScript {
        byzantine: byzantine.clone(),
        default: Behavior::Silent,
        ..AdversaryScript::default()
    };
    for v in 1..=views {
        let here = byzantine.contains(&schedule.leader(View(v)));
        let next = byzantine.contains(&schedule.leader(View(v + 1)));
        if here && !next {
            script.views.insert(View(v), last);
        }
    }
    script
}

/// Counts forks among honest proposals with a quorum of votes, skipping the
/// first and last rotation.
pub fn count_forks(cfg: &ScenarioConfig) -> Result<(u64, u64, RunMetrics), ScenarioError> {
    let out = run_scenario(cfg)?;
    let n = cfg.protocol.n as u64;
    let quorum = cfg.protocol.quorum();
    let mut honest = 0;
    let mut forked = 0;
    for p in out.record.proposals.values() {
        let middle = p.view.0 > n && p.view.0 + n <= cfg.views;
        if !p.honest_leader || p.straggler || !middle {
            continue;
        }
        if !out.record.quorum_voted(&p.digest, quorum) {
            continue;
        }
        honest += 1;
        if out.record.fate(&p.digest) == Fate::Forked {
            forked += 1;
        }
    }
    Ok((honest, forked, out.metrics))
}

/// Runs every worst-case placement for every `rho`, `rotations` full
/// rotations each, in parallel. Rows come back in `(rho, placement)` order.
pub fn fork_fraction_sweep(
    f: usize,
    rhos: &[u64],
    variant: ProtocolVariant,
    rotations: u64,
    seed: u64,
) -> Result<Vec<SweepRow>, ScenarioError> {
    let n = 3 * f + 1;
    let jobs: Vec<(u64, BTreeSet<ReplicaId>)> = rhos
        .iter()
        .flat_map(|rho| {
            worst_case_placements(n, f, *rho)
                .into_iter()
                .map(move |p| (*rho, p))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(rho, placement)| {
            let views = rotations * n as u64;
            let mut cfg = ScenarioConfig::honest(f, rho, variant, views).with_seed(seed);
            let schedule = cfg.schedule();
            cfg.adversary = tail_fork_script(&schedule, &placement, views, Behavior::TailFork);
            let (honest, forked, _) = count_forks(&cfg)?;
            Ok(SweepRow {
                protocol: variant.to_string(),
                n,
                f,
                rho,
                placement: placement.iter().map(|r| r.0).collect(),
                honest_proposals: honest,
                forked,
            })
        })
        .collect()
}

/// A view whose traffic exceeded the audit's per-view budget.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearityBreach {
    pub view: View,
    pub words: u64,
    pub bound: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditResult {
    pub max_handover_words: usize,
    pub new_view_bound: usize,
    pub per_view_bound: u64,
    pub breaches: Vec<LinearityBreach>,
}

impl AuditResult {
    pub fn ok(&self) -> bool {
        self.breaches.is_empty() && self.max_handover_words <= self.new_view_bound
    }
}

/// Checks every NEW-VIEW against `2 + slots` words and every view against
/// `c * n` words.
pub fn word_audit(metrics: &RunMetrics, c: u64) -> AuditResult {
    let slots = if metrics.protocol == ProtocolVariant::CarryTheTail.to_string() {
        metrics.rho as usize
    } else {
        1
    };
    let per_view_bound = c * metrics.n as u64;
    let breaches = metrics
        .per_view_word_counts
        .iter()
        .filter(|(_, w)| **w > per_view_bound)
        .map(|(v, w)| LinearityBreach {
            view: *v,
            words: *w,
            bound: per_view_bound,
        })
        .collect();
    AuditResult {
        max_handover_words: metrics.max_handover_words,
        new_view_bound: 2 + slots,
        per_view_bound,
        breaches,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest `|y - fit(x)| / y` over the points.
    pub max_relative_residual: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_linear(points: &[(f64, f64)]) -> Option<LinearFit> {
    let k = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_relative_residual = points
        .iter()
        .map(|(x, y)| ((y - (slope * x + intercept)) / y).abs())
        .fold(0.0, f64::max);
    Some(LinearFit {
        slope,
        intercept,
        max_relative_residual,
    })
}
