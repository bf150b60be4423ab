//! Deterministic discrete-event network with partial synchrony.
//!
//! Before `gst` the adversary picks delivery ticks (or a bounded random
//! delay applies); from `gst` on every message arrives within `delta`.
//! Events sharing a tick are ordered by (messages before timers, recipient,
//! sender, sequence number), so a run is a pure function of its inputs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pacemaker::Tick;
use crate::replica::Message;
use crate::types::ReplicaId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SimClock {
    now: Tick,
}

impl SimClock {
    pub fn now(&self) -> Tick {
        self.now
    }

    fn advance_to(&mut self, t: Tick) {
        assert!(t >= self.now, "clock moved backwards: {} -> {t}", self.now);
        self.now = t;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PreGstPolicy {
    /// Delivery ticks come from the adversary; unscheduled messages use the
    /// post-GST delay model.
    #[default]
    AdversaryScheduled,
    /// Uniform delay in `[1, max]`.
    RandomBounded { max: Tick },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayModel {
    /// Every message takes exactly `delta`.
    Max,
    /// Uniform in `[1, delta]` from the seeded generator.
    #[default]
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub gst: Tick,
    pub delta: Tick,
    #[serde(default)]
    pub pre_gst_policy: PreGstPolicy,
    #[serde(default)]
    pub delay: DelayModel,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            gst: 0,
            delta: 5,
            pre_gst_policy: PreGstPolicy::AdversaryScheduled,
            delay: DelayModel::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("delta must be at least 1")]
    ZeroDelta,
    #[error("delivery at {deliver} precedes send at {send}")]
    DeliverBeforeSend { send: Tick, deliver: Tick },
    #[error("post-GST message sent at {send} delivered at {deliver}, bound is {bound}")]
    PostGstBound {
        send: Tick,
        deliver: Tick,
        bound: Tick,
    },
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.delta == 0 {
            return Err(NetError::ZeroDelta);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope<M> {
    pub from: ReplicaId,
    pub to: ReplicaId,
    pub payload: M,
    pub send_time: Tick,
    pub deliver_time: Tick,
    pub word_count: usize,
    pub seq: u64,
}

/// Anything the network can carry and account for.
pub trait WireMessage {
    fn kind(&self) -> &'static str;
    fn word_count(&self) -> usize;
    /// Short hex identifying the message content in traces.
    fn digest_prefix(&self) -> String;
}

impl WireMessage for Message {
    fn kind(&self) -> &'static str {
        Message::kind(self)
    }

    fn word_count(&self) -> usize {
        Message::word_count(self)
    }

    fn digest_prefix(&self) -> String {
        self.digest().short()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event<M, T> {
    Deliver(Envelope<M>),
    Timer {
        at: Tick,
        replica: ReplicaId,
        timer: T,
    },
}

type Key = (Tick, u8, ReplicaId, ReplicaId, u64);

/// The event queue, the clock and the delivery log.
#[derive(Clone, Debug)]
pub struct Network<M, T> {
    config: NetworkConfig,
    clock: SimClock,
    queue: BTreeMap<Key, Event<M, T>>,
    seq: u64,
    rng: ChaCha8Rng,
    trace: Vec<String>,
    words_sent: u64,
}

impl<M: WireMessage + Clone, T> Network<M, T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        Ok(Self {
            config,
            clock: SimClock::default(),
            queue: BTreeMap::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Vec::new(),
            words_sent: 0,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn words_sent(&self) -> u64 {
        self.words_sent
    }

    /// Delivered messages, one line each:
    /// `tick from to kind words digest`.
    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    fn default_delay(&mut self, send: Tick) -> Tick {
        if send < self.config.gst {
            if let PreGstPolicy::RandomBounded { max } = self.config.pre_gst_policy {
                return self.rng.gen_range(1..=max.max(1));
            }
        }
        match self.config.delay {
            DelayModel::Max => self.config.delta,
            DelayModel::Uniform => self.rng.gen_range(1..=self.config.delta),
        }
    }

    /// Enqueues a message sent now. `requested` is an adversary-chosen
    /// delivery tick: honoured before GST, clamped to `now + delta` after.
    pub fn submit(
        &mut self,
        from: ReplicaId,
        to: ReplicaId,
        payload: M,
        requested: Option<Tick>,
    ) -> Result<Tick, NetError> {
        let send = self.clock.now();
        let deliver = match requested {
            Some(d) if d < send => return Err(NetError::DeliverBeforeSend { send, deliver: d }),
            Some(d) if send >= self.config.gst => d.min(send + self.config.delta),
            Some(d) => d,
            None => send + self.default_delay(send),
        };
        let word_count = payload.word_count();
        self.words_sent += word_count as u64;
        let seq = self.seq;
        self.seq += 1;
        self.queue.insert(
            (deliver, 0, to, from, seq),
            Event::Deliver(Envelope {
                from,
                to,
                payload,
                send_time: send,
                deliver_time: deliver,
                word_count,
                seq,
            }),
        );
        Ok(deliver)
    }

    /// Schedules a timer for `replica` at tick `at` (never in the past).
    pub fn schedule_timer(&mut self, replica: ReplicaId, at: Tick, timer: T) {
        let at = at.max(self.clock.now());
        let seq = self.seq;
        self.seq += 1;
        self.queue
            .insert((at, 1, replica, replica, seq), Event::Timer { at, replica, timer });
    }

    /// Tick of the next event, if any.
    pub fn peek_time(&self) -> Option<Tick> {
        self.queue.keys().next().map(|k| k.0)
    }

    /// Advances the clock to the earliest pending tick and returns every event
    /// due then, in delivery order.
    pub fn step(&mut self) -> Vec<Event<M, T>> {
        let Some(t) = self.peek_time() else {
            return Vec::new();
        };
        self.clock.advance_to(t);
        let rest = self.queue.split_off(&(t + 1, 0, ReplicaId(0), ReplicaId(0), 0));
        let due = std::mem::replace(&mut self.queue, rest);
        let mut out = Vec::with_capacity(due.len());
        for (_, ev) in due {
            if let Event::Deliver(env) = &ev {
                if env.send_time >= self.config.gst {
                    assert!(
                        env.deliver_time <= env.send_time + self.config.delta,
                        "post-GST bound broken"
                    );
                }
                self.trace.push(format!(
                    "{} {} {} {} {} {}",
                    env.deliver_time,
                    env.from.0,
                    env.to.0,
                    env.payload.kind(),
                    env.word_count,
                    env.payload.digest_prefix()
                ));
            }
            out.push(ev);
        }
        out
    }
}
