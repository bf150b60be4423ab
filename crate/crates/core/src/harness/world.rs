//! The simulated cluster: replicas, pacemakers, the network and the
//! adversary, driven to completion.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::{EmittedEntry, ProposalRecord, RunMetrics, RunRecord};
use super::{ScenarioConfig, ScenarioError};
use crate::adversary::{act, Behavior, CoalitionView};
use crate::crypto::ClusterKeys;
use crate::pacemaker::{AdvanceReason, PacemakerMode, PacemakerState, Tick};
use crate::replica::{Message, NewViewMessage, ReplicaState, SafetyViolation, WindowEntry};
use crate::simnet::{Event, Network};
use crate::types::{Block, BlockStore, LeaderSchedule, ReplicaId, View};
use crate::validate::validate_block;

#[derive(Clone, Debug)]
enum Timer {
    /// The replica's view expires.
    Expire(View),
    /// The leader may propose with a quorum of NEW-VIEWs.
    Signal(View),
    /// A delayed send by a straggling leader.
    Send { to: ReplicaId, block: Arc<Block> },
}

struct Node {
    state: ReplicaState,
    pm: PacemakerState,
    byzantine: bool,
    /// Proposals for views this replica has not entered yet.
    buffer: Vec<(ReplicaId, Message)>,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub record: RunRecord,
    /// Delivered messages, one line each: `tick from to kind words digest`.
    pub trace: Vec<String>,
}

pub struct World {
    cfg: ScenarioConfig,
    schedule: LeaderSchedule,
    keys: ClusterKeys,
    nodes: Vec<Node>,
    net: Network<Message, Timer>,
    local: VecDeque<(ReplicaId, ReplicaId, Message)>,
    /// Highest view whose start tick is known (Oracle mode).
    synced: View,
    exits: BTreeMap<View, BTreeSet<ReplicaId>>,
    rec: RunRecord,
    max_ticks: Tick,
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ScenarioError> {
        cfg.validate()?;
        let schedule = cfg.schedule();
        let keys = cfg.protocol.keys();
        let base = cfg.base_timeout();
        let nodes = (0..cfg.protocol.n as u32)
            .map(ReplicaId)
            .map(|id| Node {
                state: ReplicaState::new(id, cfg.protocol.clone(), schedule),
                pm: PacemakerState::new(cfg.pacemaker.mode, base, cfg.pacemaker.backoff),
                byzantine: cfg.adversary.is_byzantine(id),
                buffer: Vec::new(),
            })
            .collect::<Vec<_>>();
        let net = Network::new(cfg.network, cfg.seed)?;
        let mut rec = RunRecord {
            byzantine: cfg.adversary.byzantine.clone(),
            honest: nodes
                .iter()
                .filter(|n| !n.byzantine)
                .map(|n| n.state.id())
                .collect(),
            ..RunRecord::default()
        };
        for r in rec.honest.clone() {
            let lock = nodes[r.0 as usize].state.lock();
            rec.locks.insert(r, vec![(lock.view, lock.block)]);
        }
        let slack = match cfg.pacemaker.mode {
            PacemakerMode::Oracle => 4,
            PacemakerMode::Timeout => 64,
        };
        let max_ticks = cfg.network.gst + (cfg.views + 2) * base * slack;
        Ok(Self {
            cfg,
            schedule,
            keys,
            nodes,
            net,
            local: VecDeque::new(),
            synced: View(1),
            exits: BTreeMap::new(),
            rec,
            max_ticks,
        })
    }

    fn now(&self) -> Tick {
        self.net.now()
    }

    fn node(&self, r: ReplicaId) -> &Node {
        &self.nodes[r.0 as usize]
    }

    fn node_mut(&mut self, r: ReplicaId) -> &mut Node {
        &mut self.nodes[r.0 as usize]
    }

    fn is_byz(&self, r: ReplicaId) -> bool {
        self.node(r).byzantine
    }

    fn oracle(&self) -> bool {
        self.cfg.pacemaker.mode == PacemakerMode::Oracle
    }

    fn done(&self) -> bool {
        self.nodes
            .iter()
            .filter(|n| !n.byzantine)
            .all(|n| n.state.current_view().0 > self.cfg.views)
    }

    /// Runs until every honest replica has left the last view, the queue
    /// drains, or the tick budget runs out.
    pub fn run(mut self) -> RunOutcome {
        self.rec.view_start.insert(View(1), 0);
        self.schedule_view(View(1));
        for r in 0..self.nodes.len() as u32 {
            self.enter_view(ReplicaId(r), View(1));
        }
        self.drain();
        while !self.done() {
            if self.net.is_idle() {
                self.rec.deadlock = true;
                break;
            }
            if self.net.peek_time().is_some_and(|t| t > self.max_ticks) {
                break;
            }
            for ev in self.net.step() {
                match ev {
                    Event::Deliver(env) => self.local.push_back((env.from, env.to, env.payload)),
                    Event::Timer { replica, timer, .. } => self.on_timer(replica, timer),
                }
                self.drain();
                if self.done() {
                    break;
                }
            }
        }
        self.finish()
    }

    fn finish(mut self) -> RunOutcome {
        self.rec.completed = self.done();
        self.rec.end_tick = self.now();
        self.rec.total_words = self.net.words_sent();
        for n in self.nodes.iter().filter(|n| !n.byzantine) {
            self.rec
                .ledgers
                .insert(n.state.id(), n.state.ledger().to_vec());
            for b in n.state.store().iter() {
                self.rec.blocks.insert(b.clone());
            }
            for qc in n.state.certified() {
                self.rec.qcs.entry(qc.view).or_default().insert(qc.block);
            }
        }
        let metrics = self.rec.metrics(&self.cfg, &self.schedule);
        RunOutcome {
            metrics,
            record: self.rec,
            trace: self.net.trace().to_vec(),
        }
    }

    fn drain(&mut self) {
        while let Some((from, to, msg)) = self.local.pop_front() {
            self.deliver(from, to, msg);
        }
    }

    // ---- pacing -------------------------------------------------------

    /// Oracle mode: view `v` starts now for the whole cluster.
    fn schedule_view(&mut self, v: View) {
        if !self.oracle() {
            return;
        }
        let now = self.now();
        let base = self.cfg.base_timeout();
        for r in 0..self.nodes.len() as u32 {
            let r = ReplicaId(r);
            if !self.is_byz(r) {
                self.net.schedule_timer(r, now + base, Timer::Expire(v));
            }
        }
        let leader = self.schedule.leader(v);
        self.net
            .schedule_timer(leader, now + self.cfg.network.delta, Timer::Signal(v));
    }

    fn note_exit(&mut self, r: ReplicaId, view: View) {
        if self.is_byz(r) || !self.oracle() {
            return;
        }
        self.exits.entry(view).or_default().insert(r);
        let honest = self.rec.honest.len();
        while self.exits.get(&self.synced).map_or(0, |s| s.len()) == honest {
            let next = self.synced.next();
            self.synced = next;
            self.rec.view_start.insert(next, self.now());
            self.schedule_view(next);
            let lagging: Vec<ReplicaId> = self
                .nodes
                .iter()
                .filter(|n| n.byzantine && n.state.current_view() < next)
                .map(|n| n.state.id())
                .collect();
            for b in lagging {
                self.byz_advance(b, next);
            }
        }
    }

    fn enter_view(&mut self, r: ReplicaId, v: View) {
        let now = self.now();
        if !self.oracle() {
            let node = self.node(r);
            let deadline = node.pm.deadline();
            let wait = node.pm.leader_wait();
            self.net.schedule_timer(r, deadline, Timer::Expire(v));
            if self.schedule.leader(v) == r {
                self.net.schedule_timer(r, now + wait, Timer::Signal(v));
            }
        }
        if self.is_byz(r) {
            return;
        }
        if !self.oracle() {
            self.rec.view_start.entry(v).or_insert(now);
        }
        self.honest_try_propose(r, false);
        let node = self.node_mut(r);
        let (ready, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut node.buffer)
            .into_iter()
            .partition(|(_, m)| m.view() <= v);
        node.buffer = rest;
        self.local.extend(ready.into_iter().map(|(from, m)| (from, r, m)));
    }

    fn on_timer(&mut self, r: ReplicaId, timer: Timer) {
        match timer {
            Timer::Expire(v) => {
                if self.node(r).state.current_view() != v {
                    return;
                }
                if self.is_byz(r) {
                    self.byz_advance(r, v.next());
                } else {
                    self.honest_exit(r, AdvanceReason::Timeout);
                }
            }
            Timer::Signal(v) => {
                if self.is_byz(r) {
                    self.byz_lead(r, v);
                } else if self.node(r).state.current_view() == v {
                    self.honest_try_propose(r, true);
                }
            }
            Timer::Send { to, block } => self.send_proposal(r, to, block),
        }
    }

    // ---- sending ------------------------------------------------------

    fn send_proposal(&mut self, from: ReplicaId, to: ReplicaId, block: Arc<Block>) {
        if from == to {
            self.local.push_back((from, to, Message::Proposal(block)));
            return;
        }
        let v = block.view;
        let words = block.word_count();
        let late = self
            .cfg
            .adversary
            .delivery
            .get(&v)
            .is_some_and(|d| d.late_proposal_to.contains(&to));
        let requested = (late && self.now() < self.cfg.network.gst).then_some(self.cfg.network.gst);
        self.rec.payload_words += block.payload_words() as u64;
        self.rec.max_proposal_words = self.rec.max_proposal_words.max(words);
        *self.rec.view_words.entry(v).or_default() += words as u64;
        self.net
            .submit(from, to, Message::Proposal(block), requested)
            .expect("delivery requests are never in the past");
    }

    fn send_new_view(&mut self, from: ReplicaId, nv: NewViewMessage) {
        let v = nv.next_view;
        let to = self.schedule.leader(v);
        if to == from {
            self.local.push_back((from, to, Message::NewView(nv)));
            return;
        }
        let words = nv.word_count();
        let late = self
            .cfg
            .adversary
            .delivery
            .get(&v)
            .is_some_and(|d| d.late_new_view_from.contains(&from));
        let requested = (late && self.now() < self.cfg.network.gst).then_some(self.cfg.network.gst);
        self.rec.max_handover_words = self.rec.max_handover_words.max(words);
        *self.rec.view_words.entry(v).or_default() += words as u64;
        self.net
            .submit(from, to, Message::NewView(nv), requested)
            .expect("delivery requests are never in the past");
    }

    fn payload(&self, v: View) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ v.0.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut bytes = vec![0; self.cfg.payload_bytes];
        rng.fill_bytes(&mut bytes);
        bytes
    }

    fn record_proposal(&mut self, block: &Arc<Block>, straggler: bool) {
        let honest_leader = !self.is_byz(block.proposer);
        let now = self.now();
        self.rec
            .proposals
            .entry(block.digest())
            .or_insert(ProposalRecord {
                view: block.view,
                proposer: block.proposer,
                digest: block.digest(),
                honest_leader,
                straggler,
                sent_at: now,
            });
    }

    fn record_safety(&mut self, violations: Vec<SafetyViolation>) {
        self.rec.safety.extend(violations);
    }

    fn record_window(&mut self, r: ReplicaId, window: &BTreeMap<View, WindowEntry>) {
        if self.is_byz(r) {
            return;
        }
        for (u, e) in window {
            let tag = match e {
                WindowEntry::Vote(v) => EmittedEntry::Vote(v.block),
                WindowEntry::Empty(_) => EmittedEntry::Empty,
            };
            self.rec.emitted.entry((r, *u)).or_default().insert(tag);
        }
    }

    fn record_lock(&mut self, r: ReplicaId) {
        let lock = self.node(r).state.lock();
        let entry = (lock.view, lock.block);
        let history = self.rec.locks.entry(r).or_default();
        if history.last() != Some(&entry) {
            history.push(entry);
        }
    }

    // ---- honest replicas ----------------------------------------------

    fn honest_try_propose(&mut self, r: ReplicaId, signal: bool) {
        let v = self.node(r).state.current_view();
        if v.0 > self.cfg.views || self.schedule.leader(v) != r {
            return;
        }
        let payload = self.payload(v);
        let attempt = self.node_mut(r).state.try_propose(signal, payload);
        if let Some(m) = attempt.missing {
            if !self.rec.missing.contains(&(v, m.0)) {
                self.rec.missing.push((v, m.0));
            }
        }
        let Some(block) = attempt.block else {
            return;
        };
        let behavior = self.cfg.adversary.behavior(v, r);
        let straggle = match behavior {
            Behavior::Straggle { extra } => Some(extra),
            _ => None,
        };
        self.record_proposal(&block, straggle.is_some());
        let n = self.nodes.len() as u32;
        let now = self.now();
        for k in 0..n {
            let to = ReplicaId((r.0 + k) % n);
            match straggle {
                Some(extra) if k > 0 => self.net.schedule_timer(
                    r,
                    now + extra * k as u64,
                    Timer::Send {
                        to,
                        block: block.clone(),
                    },
                ),
                _ => self.send_proposal(r, to, block.clone()),
            }
        }
    }

    /// Leaves the current view (after voting or on expiry) and enters the
    /// next one.
    fn honest_exit(&mut self, r: ReplicaId, reason: AdvanceReason) {
        let from = self.node(r).state.current_view();
        let now = self.now();
        let node = self.node_mut(r);
        let nv = node.state.advance_to(from.next());
        node.pm.advance_view(reason, now);
        let entered = node.state.current_view();
        self.record_window(r, &nv.window);
        self.send_new_view(r, nv);
        self.note_exit(r, from);
        self.enter_view(r, entered);
    }

    /// Timeout mode: moves straight to `target` after learning the cluster
    /// is ahead.
    fn honest_jump(&mut self, r: ReplicaId, target: View, announce: bool) {
        let now = self.now();
        let node = self.node_mut(r);
        let nv = node.state.advance_to(target);
        node.pm.jump_to(target, AdvanceReason::QcFormed, now);
        self.record_window(r, &nv.window);
        if announce {
            self.send_new_view(r, nv);
        }
        self.enter_view(r, target);
    }

    fn deliver(&mut self, from: ReplicaId, to: ReplicaId, msg: Message) {
        if self.is_byz(to) {
            self.byz_deliver(to, msg);
            return;
        }
        let cur = self.node(to).state.current_view();
        match msg {
            Message::Proposal(block) => {
                if block.view > cur {
                    if self.oracle() {
                        self.node_mut(to).buffer.push((from, Message::Proposal(block)));
                        return;
                    }
                    let ok = block.view.0 <= self.cfg.views
                        && validate_block(&block, &self.cfg.protocol, &self.keys, &self.schedule)
                            .is_accept();
                    if !ok {
                        self.node_mut(to).buffer.push((from, Message::Proposal(block)));
                        return;
                    }
                    self.honest_jump(to, block.view, false);
                }
                let out = self.node_mut(to).state.on_proposal(block.clone());
                if out.report.as_ref().is_some_and(|r| !r.is_accept()) {
                    self.rec.rejected += 1;
                }
                self.record_safety(out.violations);
                self.record_lock(to);
                if let Some(vote) = out.vote {
                    self.rec.votes.entry(vote.block).or_default().insert(to);
                    self.rec.honest_voted.insert(vote.block);
                    self.rec
                        .emitted
                        .entry((to, vote.view))
                        .or_default()
                        .insert(EmittedEntry::Vote(vote.block));
                    self.node_mut(to).pm.reset_backoff();
                    self.honest_exit(to, AdvanceReason::QcFormed);
                }
            }
            Message::NewView(nv) => {
                let target = nv.next_view;
                let (_, violations) = self.node_mut(to).state.on_new_view(nv);
                self.record_safety(violations);
                if !self.oracle() && target > cur && target.0 <= self.cfg.views {
                    let heard = self.node(to).state.collected(target).count();
                    if heard > self.cfg.protocol.f {
                        self.honest_jump(to, target, true);
                        return;
                    }
                }
                if self.node(to).state.current_view() == target {
                    self.honest_try_propose(to, false);
                }
            }
        }
    }

    // ---- Byzantine replicas -------------------------------------------

    /// Moves a coalition member to `target`, sending its NEW-VIEW when the
    /// coalition leads or has just led.
    fn byz_advance(&mut self, r: ReplicaId, target: View) {
        let now = self.now();
        let node = self.node_mut(r);
        if node.state.current_view() >= target {
            return;
        }
        let nv = node.state.advance_to(target);
        node.pm.jump_to(target, AdvanceReason::SyncSignal, now);
        let prev = View(target.0.saturating_sub(1));
        if self.is_byz(self.schedule.leader(target)) || self.is_byz(self.schedule.leader(prev)) {
            self.send_new_view(r, nv);
        }
        self.enter_view(r, target);
    }

    fn byz_deliver(&mut self, r: ReplicaId, msg: Message) {
        match msg {
            Message::Proposal(block) => {
                let cur = self.node(r).state.current_view();
                if !self.is_byz(block.proposer) || block.view < cur {
                    let (_, _) = self.node_mut(r).state.observe(&block);
                    return;
                }
                if block.view > cur {
                    self.byz_advance(r, block.view);
                }
                if let Some(vote) = self.node_mut(r).state.force_vote(&block) {
                    self.rec.votes.entry(vote.block).or_default().insert(r);
                    self.byz_advance(r, block.view.next());
                }
            }
            Message::NewView(nv) => {
                let _ = self.node_mut(r).state.on_new_view(nv);
            }
        }
    }

    /// The Byzantine leader of `v` acts on its script.
    fn byz_lead(&mut self, r: ReplicaId, v: View) {
        if v.0 > self.cfg.views || self.node(r).state.current_view() > v {
            return;
        }
        self.byz_advance(r, v);
        let behavior = self.cfg.adversary.behavior(v, r);
        let members = self.cfg.adversary.byzantine.clone();
        let mut store = BlockStore::new();
        let mut high_qc = self.node(r).state.high_qc().clone();
        for m in &members {
            let s = &self.node(*m).state;
            for b in s.store().iter() {
                store.insert(b.clone());
            }
            if s.high_qc().view > high_qc.view {
                high_qc = s.high_qc().clone();
            }
        }
        let payload = self.payload(v);
        let honest_proposal = {
            let mut shadow = self.node(r).state.clone();
            shadow.try_propose(true, payload.clone()).block
        };
        let state = &self.node(r).state;
        let ctx = CoalitionView {
            view: v,
            leader: r,
            config: &self.cfg.protocol,
            keys: &self.keys,
            schedule: &self.schedule,
            members: &members,
            store: &store,
            inbox: state.collected(v).collect(),
            high_qc: &high_qc,
            honest_proposal,
            payload,
        };
        let dispatch = act(behavior, &ctx);
        for (to, block) in dispatch {
            self.record_proposal(&block, false);
            self.send_proposal(r, to, block);
        }
    }
}

/// Builds and runs a scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutcome, ScenarioError> {
    Ok(World::new(cfg.clone())?.run())
}
