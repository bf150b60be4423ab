//! View synchronization.
//!
//! `Oracle` lets the simulator start each view for every honest replica at
//! the same tick once all of them have left the previous one. `Timeout` is a
//! per-replica exponential backoff that resets whenever progress is seen.

use serde::{Deserialize, Serialize};

use crate::types::View;

pub type Tick = u64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PacemakerMode {
    #[default]
    Oracle,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvanceReason {
    QcFormed,
    Timeout,
    SyncSignal,
}

/// Backoff multiplier as a rational `num / den`, at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Backoff {
    pub num: u64,
    pub den: u64,
}

impl Backoff {
    pub const DOUBLE: Backoff = Backoff { num: 2, den: 1 };
}

impl Default for Backoff {
    fn default() -> Self {
        Self::DOUBLE
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacemakerState {
    pub mode: PacemakerMode,
    pub current_view: View,
    pub view_entry_time: Tick,
    pub base_timeout: Tick,
    pub backoff: Backoff,
    consecutive_timeouts: u32,
}

impl PacemakerState {
    pub fn new(mode: PacemakerMode, base_timeout: Tick, backoff: Backoff) -> Self {
        assert!(base_timeout > 0, "timeouts must be positive");
        assert!(
            backoff.den > 0 && backoff.num >= backoff.den,
            "backoff must be at least 1"
        );
        Self {
            mode,
            current_view: View(1),
            view_entry_time: 0,
            base_timeout,
            backoff,
            consecutive_timeouts: 0,
        }
    }

    pub fn consecutive_timeouts(&self) -> u32 {
        self.consecutive_timeouts
    }

    /// `base × backoff^k` for `k` consecutive timeouts, rounded down, never
    /// below one tick.
    pub fn current_timeout(&self) -> Tick {
        if self.mode == PacemakerMode::Oracle {
            return self.base_timeout;
        }
        let mut t = self.base_timeout as u128;
        for _ in 0..self.consecutive_timeouts {
            t = t * self.backoff.num as u128 / self.backoff.den as u128;
            if t > u64::MAX as u128 / 4 {
                break;
            }
        }
        (t as u64).max(1)
    }

    /// Moves to the next view, entered at `now`.
    pub fn advance_view(&mut self, reason: AdvanceReason, now: Tick) -> View {
        self.jump_to(self.current_view.next(), reason, now)
    }

    /// Moves directly to `view`; used when a replica learns it has fallen
    /// behind.
    pub fn jump_to(&mut self, view: View, reason: AdvanceReason, now: Tick) -> View {
        match reason {
            AdvanceReason::Timeout => self.consecutive_timeouts += 1,
            AdvanceReason::QcFormed => self.consecutive_timeouts = 0,
            AdvanceReason::SyncSignal => {}
        }
        self.current_view = view.max(self.current_view);
        self.view_entry_time = now;
        self.current_view
    }

    /// Notes progress without changing view.
    pub fn reset_backoff(&mut self) {
        self.consecutive_timeouts = 0;
    }

    pub fn should_exit(&self, now: Tick) -> bool {
        now.saturating_sub(self.view_entry_time) >= self.current_timeout()
    }

    /// Tick at which the current view expires.
    pub fn deadline(&self) -> Tick {
        self.view_entry_time + self.current_timeout()
    }

    /// How long a leader waits before treating the view as having given every
    /// honest replica time to report.
    pub fn leader_wait(&self) -> Tick {
        (self.current_timeout() / 2).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qc_resets_timeout() {
        let mut pm = PacemakerState::new(PacemakerMode::Timeout, 10, Backoff::DOUBLE);
        pm.current_view = View(4);
        pm.advance_view(AdvanceReason::Timeout, 0);
        assert_eq!(pm.advance_view(AdvanceReason::QcFormed, 5), View(6));
        assert_eq!(pm.current_timeout(), 10);
    }

    #[test]
    fn two_timeouts_quadruple() {
        let mut pm = PacemakerState::new(PacemakerMode::Timeout, 10, Backoff::DOUBLE);
        pm.current_view = View(4);
        pm.advance_view(AdvanceReason::Timeout, 10);
        let v = pm.advance_view(AdvanceReason::Timeout, 30);
        assert_eq!(v, View(6));
        assert_eq!(pm.current_timeout(), 40);
    }

    #[test]
    fn fractional_backoff_rounds_down() {
        let mut pm = PacemakerState::new(PacemakerMode::Timeout, 10, Backoff { num: 3, den: 2 });
        pm.advance_view(AdvanceReason::Timeout, 0);
        pm.advance_view(AdvanceReason::Timeout, 0);
        assert_eq!(pm.current_timeout(), 22);
    }

    #[test]
    fn exit_boundary_is_inclusive() {
        let pm = PacemakerState::new(PacemakerMode::Timeout, 10, Backoff::DOUBLE);
        assert!(pm.should_exit(10));
        assert!(!pm.should_exit(9));
    }

    #[test]
    fn oracle_timeout_is_fixed() {
        let mut pm = PacemakerState::new(PacemakerMode::Oracle, 20, Backoff::DOUBLE);
        pm.advance_view(AdvanceReason::Timeout, 0);
        pm.advance_view(AdvanceReason::SyncSignal, 50);
        assert_eq!(pm.current_view, View(3));
        assert_eq!(pm.deadline(), 70);
    }
}
