//! Ledger of real numbers exchanged between machines.
//!
//! Counting convention, with `m` machines and `N` samples:
//!
//! | Step | Direction | Floats |
//! |------|-----------|--------|
//! | 1 input broadcast (once) | local -> local | `(m - 1) N d` |
//! | 2 synthesis (once) | local -> global | `m N` |
//! | 4 local gradients | local -> global | `m N` |
//! | 5 global gradients | global -> local | `m N` |
//! | 6 corrections | local -> global | `m N` |
//! | 7 iterate blocks | global -> local | `N` |
//!
//! so each communication round moves `3 m N + N` reals.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Endpoint {
    Machine(usize),
    Coordinator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ProtocolStep {
    InputBroadcast,
    Synthesis,
    LocalGradient,
    GlobalGradient,
    Correction,
    Update,
}

impl ProtocolStep {
    pub fn number(self) -> u8 {
        match self {
            ProtocolStep::InputBroadcast => 1,
            ProtocolStep::Synthesis => 2,
            ProtocolStep::LocalGradient => 4,
            ProtocolStep::GlobalGradient => 5,
            ProtocolStep::Correction => 6,
            ProtocolStep::Update => 7,
        }
    }
}

impl fmt::Display for ProtocolStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} ({:?})", self.number(), self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    LocalToLocal,
    LocalToGlobal,
    GlobalToLocal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Message {
    /// 0 for the one-time setup steps, `l` for communication round `l`.
    pub round: usize,
    pub step: ProtocolStep,
    pub from: Endpoint,
    pub to: Endpoint,
    pub floats: u64,
}

impl Message {
    pub fn direction(&self) -> Direction {
        match (self.from, self.to) {
            (Endpoint::Coordinator, _) => Direction::GlobalToLocal,
            (_, Endpoint::Coordinator) => Direction::LocalToGlobal,
            _ => Direction::LocalToLocal,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CommLog {
    messages: Vec<Message>,
}

impl CommLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, round: usize, step: ProtocolStep, from: Endpoint, to: Endpoint, floats: usize) {
        self.messages.push(Message {
            round,
            step,
            from,
            to,
            floats: floats as u64,
        });
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn step_total(&self, round: usize, step: ProtocolStep) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.round == round && m.step == step)
            .map(|m| m.floats)
            .sum()
    }

    pub fn direction_total(&self, round: usize, direction: Direction) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.round == round && m.direction() == direction)
            .map(|m| m.floats)
            .sum()
    }

    /// Floats of communication round `round >= 1`.
    pub fn round_total(&self, round: usize) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.round == round)
            .map(|m| m.floats)
            .sum()
    }

    pub fn last_round(&self) -> usize {
        self.messages.iter().map(|m| m.round).max().unwrap_or(0)
    }
}

/// Closed-form float count of one communication round.
pub fn round_floats(m: usize, n: usize) -> u64 {
    (3 * m * n + n) as u64
}

/// Protocol floats after `rounds` rounds, excluding the input broadcast.
pub fn protocol_floats(m: usize, n: usize, rounds: usize) -> u64 {
    (m * n) as u64 + rounds as u64 * round_floats(m, n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommTotals {
    pub input_broadcast: u64,
    pub synthesis: u64,
    pub per_round: Vec<u64>,
    /// Cumulative protocol floats after each round, index 0 being setup.
    pub cumulative: Vec<u64>,
}

/// Per-round and cumulative counts, checked against the closed forms.
pub fn comm_totals(log: &CommLog, m: usize, n: usize, rounds: usize) -> Result<CommTotals> {
    let mismatch = |what: String, got: u64, want: u64| {
        Error::InvalidState(format!("{what}: ledger holds {got} floats, closed form gives {want}"))
    };
    let synthesis = log.step_total(0, ProtocolStep::Synthesis);
    if synthesis != (m * n) as u64 {
        return Err(mismatch("synthesis".into(), synthesis, (m * n) as u64));
    }
    let expected_steps = [
        (ProtocolStep::LocalGradient, (m * n) as u64),
        (ProtocolStep::GlobalGradient, (m * n) as u64),
        (ProtocolStep::Correction, (m * n) as u64),
        (ProtocolStep::Update, n as u64),
    ];
    let mut per_round = Vec::with_capacity(rounds);
    let mut cumulative = vec![synthesis];
    for round in 1..=rounds {
        for (step, want) in expected_steps {
            let got = log.step_total(round, step);
            if got != want {
                return Err(mismatch(format!("round {round}, {step}"), got, want));
            }
        }
        let total = log.round_total(round);
        if total != round_floats(m, n) {
            return Err(mismatch(format!("round {round}"), total, round_floats(m, n)));
        }
        per_round.push(total);
        cumulative.push(cumulative[round - 1] + total);
    }
    if log.last_round() > rounds {
        return Err(Error::InvalidState(format!(
            "ledger holds round {} but only {rounds} were expected",
            log.last_round()
        )));
    }
    Ok(CommTotals {
        input_broadcast: log.step_total(0, ProtocolStep::InputBroadcast),
        synthesis,
        per_round,
        cumulative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(round_floats(2, 10), 70);
        assert_eq!(round_floats(1, 10), 40);
        assert_eq!(protocol_floats(3, 12, 0), 36);
        assert_eq!(protocol_floats(3, 12, 2), 36 + 2 * (108 + 12));
    }

    #[test]
    fn mismatch_is_reported() {
        let mut log = CommLog::new();
        log.record(0, ProtocolStep::Synthesis, Endpoint::Machine(0), Endpoint::Coordinator, 5);
        assert!(comm_totals(&log, 1, 5, 0).is_ok());
        assert!(comm_totals(&log, 1, 5, 1).is_err());
        log.record(0, ProtocolStep::Synthesis, Endpoint::Machine(0), Endpoint::Coordinator, 1);
        assert!(comm_totals(&log, 1, 5, 0).is_err());
    }

    #[test]
    fn directions() {
        let m = Message {
            round: 1,
            step: ProtocolStep::Update,
            from: Endpoint::Coordinator,
            to: Endpoint::Machine(3),
            floats: 4,
        };
        assert_eq!(m.direction(), Direction::GlobalToLocal);
    }
}
