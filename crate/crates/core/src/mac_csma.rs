//! 802.11p CSMA/CA for periodic broadcast heartbeats.
//!
//! A node with a packet listens for one AIFS. If the channel stays idle the
//! packet goes out. If the channel is or becomes busy during AIFS, the node
//! draws one backoff (`slot_time * k`, `k` uniform on `0..=cw_min`), waits
//! for the channel to clear, listens for a fresh AIFS and then counts the
//! backoff down while the channel stays idle. Broadcasts have no ACKs, so
//! there is at most one backoff per packet and the window never doubles.
//! A newer heartbeat replaces a packet still waiting for access; the old
//! one is dropped.
//!
//! [`CsmaNode`] is driven by its owner through channel busy/idle edges and
//! expiry callbacks. It never looks at the clock on its own.

use rand::Rng;

use crate::config::{packet_airtime, TimingParams};
use crate::time::Nanos;

/// Phase names as seen from outside the state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsmaPhase {
    Idle,
    SensingAifs,
    Backoff,
    Transmitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingPacket {
    pub generated: Nanos,
    pub length: u32,
    /// Whether the packet counts toward statistics.
    pub measured: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    /// Idle channel observed since `since`; access at `expiry` unless it turns busy.
    Sensing { since: Nanos, expiry: Nanos },
    /// Waiting for the channel to go idle.
    Deferring,
    Transmitting { until: Nanos },
}

/// Request from the state machine to be called back at `at` with `token`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wakeup {
    pub at: Nanos,
    pub token: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransmitStart {
    pub packet: PendingPacket,
    pub start: Nanos,
    pub end: Nanos,
    pub access_delay: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacketOutcome {
    pub dropped: Option<PendingPacket>,
    pub wakeup: Option<Wakeup>,
}

#[derive(Debug, Clone)]
pub struct CsmaNode {
    state: State,
    pending: Option<PendingPacket>,
    backoff_drawn: bool,
    backoff_remaining: Nanos,
    backoff_draws: u32,
    token: u64,
}

impl Default for CsmaNode {
    fn default() -> Self {
        Self::new()
    }
}

impl CsmaNode {
    pub fn new() -> Self {
        Self {
            state: State::Idle,
            pending: None,
            backoff_drawn: false,
            backoff_remaining: Nanos::ZERO,
            backoff_draws: 0,
            token: 0,
        }
    }

    pub fn phase(&self) -> CsmaPhase {
        match self.state {
            State::Idle => CsmaPhase::Idle,
            State::Sensing { .. } if !self.backoff_drawn => CsmaPhase::SensingAifs,
            State::Sensing { .. } | State::Deferring => CsmaPhase::Backoff,
            State::Transmitting { .. } => CsmaPhase::Transmitting,
        }
    }

    pub fn pending(&self) -> Option<&PendingPacket> {
        self.pending.as_ref()
    }

    pub fn backoff_remaining(&self) -> Nanos {
        self.backoff_remaining
    }

    /// Backoff draws made for the packet currently pending (0 or 1).
    pub fn backoff_draws(&self) -> u32 {
        self.backoff_draws
    }

    /// Request time of the pending packet.
    pub fn access_request_time(&self) -> Option<Nanos> {
        self.pending.map(|p| p.generated)
    }

    /// A new heartbeat from the application.
    pub fn on_packet_generated<R: Rng + ?Sized>(
        &mut self,
        packet: PendingPacket,
        now: Nanos,
        busy: bool,
        rng: &mut R,
        t: &TimingParams,
    ) -> PacketOutcome {
        let dropped = self.pending.replace(packet);
        if let State::Transmitting { .. } = self.state {
            // Access starts when the current transmission ends.
            return PacketOutcome { dropped, wakeup: None };
        }
        self.reset_backoff();
        let wakeup = self.start_access(now, busy, rng, t);
        PacketOutcome { dropped, wakeup }
    }

    /// The channel went from idle to busy at `now`.
    pub fn on_channel_busy<R: Rng + ?Sized>(&mut self, now: Nanos, rng: &mut R, t: &TimingParams) {
        let State::Sensing { since, expiry } = self.state else {
            return;
        };
        if expiry == now {
            // Access is due this instant; simultaneous starts collide.
            return;
        }
        let aifs_end = since + t.aifs_ns();
        if now < aifs_end {
            if !self.backoff_drawn {
                self.backoff_remaining = draw_backoff(rng, t);
                self.backoff_drawn = true;
                self.backoff_draws += 1;
            }
        } else {
            let slot = t.slot();
            let whole = (now - aifs_end).0 / slot.0;
            self.backoff_remaining = self.backoff_remaining.saturating_sub(slot * whole);
        }
        self.token += 1;
        self.state = State::Deferring;
    }

    /// The channel went from busy to idle at `now`.
    pub fn on_channel_idle(&mut self, now: Nanos, t: &TimingParams) -> Option<Wakeup> {
        if self.state != State::Deferring {
            return None;
        }
        Some(self.begin_sensing(now, t))
    }

    /// Callback for a [`Wakeup`]; stale tokens are ignored.
    pub fn on_wakeup(&mut self, now: Nanos, token: u64, t: &TimingParams) -> Option<TransmitStart> {
        if token != self.token {
            return None;
        }
        let State::Sensing { expiry, .. } = self.state else {
            return None;
        };
        if expiry != now {
            return None;
        }
        let packet = self.pending.take().expect("sensing without a pending packet");
        let end = now + transmit_duration_csma(packet.length, t);
        self.state = State::Transmitting { until: end };
        self.token += 1;
        Some(TransmitStart {
            packet,
            start: now,
            end,
            access_delay: now - packet.generated,
        })
    }

    /// The node's own transmission finished.
    pub fn on_transmission_end<R: Rng + ?Sized>(
        &mut self,
        now: Nanos,
        busy: bool,
        rng: &mut R,
        t: &TimingParams,
    ) -> Option<Wakeup> {
        debug_assert!(matches!(self.state, State::Transmitting { until } if until == now));
        self.state = State::Idle;
        if self.pending.is_none() {
            return None;
        }
        self.reset_backoff();
        self.start_access(now, busy, rng, t)
    }

    /// Leaves the road: the pending packet, if any, is returned unsent.
    pub fn shutdown(&mut self) -> Option<PendingPacket> {
        self.token += 1;
        self.state = State::Idle;
        self.pending.take()
    }

    fn reset_backoff(&mut self) {
        self.backoff_drawn = false;
        self.backoff_remaining = Nanos::ZERO;
        self.backoff_draws = 0;
    }

    fn start_access<R: Rng + ?Sized>(&mut self, now: Nanos, busy: bool, rng: &mut R, t: &TimingParams) -> Option<Wakeup> {
        if busy {
            self.backoff_remaining = draw_backoff(rng, t);
            self.backoff_drawn = true;
            self.backoff_draws += 1;
            self.token += 1;
            self.state = State::Deferring;
            None
        } else {
            Some(self.begin_sensing(now, t))
        }
    }

    fn begin_sensing(&mut self, now: Nanos, t: &TimingParams) -> Wakeup {
        let expiry = now + t.aifs_ns() + self.backoff_remaining;
        self.token += 1;
        self.state = State::Sensing { since: now, expiry };
        Wakeup {
            at: expiry,
            token: self.token,
        }
    }
}

/// `slot_time * k` with `k` uniform on `0..=cw_min`.
pub fn draw_backoff<R: Rng + ?Sized>(rng: &mut R, t: &TimingParams) -> Nanos {
    let k = rng.random_range(0..=t.cw_min) as u64;
    t.slot() * k
}

/// Channel occupancy of one broadcast: preamble plus payload.
pub fn transmit_duration_csma(length: u32, t: &TimingParams) -> Nanos {
    Nanos::from_micros_f64(t.preamble + packet_airtime(length, t.transfer_rate))
}

/// Runs one packet against an externally given busy signal and returns when
/// it gains access, or `None` if the signal never leaves room for it.
///
/// `busy` holds half-open `[start, end)` intervals; they may overlap.
pub fn access_time_over<R: Rng + ?Sized>(
    arrival: Nanos,
    busy: &[(Nanos, Nanos)],
    rng: &mut R,
    t: &TimingParams,
) -> Option<Nanos> {
    let mut merged: Vec<(Nanos, Nanos)> = busy.iter().copied().filter(|(s, e)| e > s).collect();
    merged.sort();
    let mut intervals: Vec<(Nanos, Nanos)> = Vec::with_capacity(merged.len());
    for (s, e) in merged {
        match intervals.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => intervals.push((s, e)),
        }
    }
    let busy_at = |x: Nanos| intervals.iter().any(|&(s, e)| s <= x && x < e);
    let mut node = CsmaNode::new();
    let packet = PendingPacket {
        generated: arrival,
        length: 1,
        measured: false,
    };
    let mut wake = node.on_packet_generated(packet, arrival, busy_at(arrival), rng, t).wakeup;
    for &(s, e) in intervals.iter().filter(|(_, e)| *e > arrival) {
        if s > arrival {
            if let Some(w) = wake {
                if w.at <= s {
                    return node.on_wakeup(w.at, w.token, t).map(|tx| tx.start);
                }
            }
            node.on_channel_busy(s, rng, t);
            if let Some(w) = wake {
                if w.at == s {
                    return node.on_wakeup(w.at, w.token, t).map(|tx| tx.start);
                }
            }
        }
        wake = node.on_channel_idle(e, t);
    }
    wake.and_then(|w| node.on_wakeup(w.at, w.token, t)).map(|tx| tx.start)
}
