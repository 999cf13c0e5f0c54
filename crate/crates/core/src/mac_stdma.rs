//! Self-organizing TDMA over a perceived slot map.
//!
//! Frames are globally synchronized and split into equal slots. A node
//! listens for one frame, then reserves `report_rate` slots spaced a nominal
//! increment (NI) apart: each reservation lives inside a selection interval
//! (SI) of about 20% of NI around its nominal slot. A reservation is kept
//! for `n` frames (`n` uniform on 3..=8) and then re-selected inside the
//! same SI. When no slot in the SI is free the node shares the slot of the
//! farthest known owner, so channel access is never refused.
//!
//! Random draws are consumed in a fixed order, so a scripted [`SlotRng`]
//! replays a selection exactly: NSS offset, candidate index, tie coin (only
//! when two free slots are equally near), then the `n` counter.

use crate::channel::point_distance;
use crate::rng::SlotRng;
use crate::time::Nanos;

pub const N_REUSE_MIN: u8 = 3;
pub const N_REUSE_MAX: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlotView {
    Free,
    Occupied {
        owner: u32,
        position: (f64, f64),
        heard_at: Nanos,
    },
}

/// One node's view of slot usage in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotMap {
    own_id: u32,
    slots: Vec<SlotView>,
}

impl SlotMap {
    pub fn new(n_slots: usize, own_id: u32) -> Self {
        assert!(n_slots > 0);
        Self {
            own_id,
            slots: vec![SlotView::Free; n_slots],
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn raw(&self, slot: usize) -> SlotView {
        self.slots[slot]
    }

    /// The slot as perceived at `now`: entries of other owners not heard
    /// within the last frame read as free.
    pub fn view(&self, slot: usize, now: Nanos, frame: Nanos) -> SlotView {
        match self.slots[slot] {
            SlotView::Occupied { owner, heard_at, .. } if owner != self.own_id && now.saturating_sub(heard_at) > frame => {
                SlotView::Free
            }
            v => v,
        }
    }

    pub fn is_free(&self, slot: usize, now: Nanos, frame: Nanos) -> bool {
        matches!(self.view(slot, now, frame), SlotView::Free)
    }

    pub fn is_own(&self, slot: usize) -> bool {
        matches!(self.slots[slot], SlotView::Occupied { owner, .. } if owner == self.own_id)
    }

    /// Records a transmission heard in `slot`. Own reservations are never
    /// overwritten. Two senders heard in the same slot instant resolve to
    /// the one nearer `observer`.
    pub fn record_heard(&mut self, slot: usize, owner: u32, position: (f64, f64), at: Nanos, observer: (f64, f64)) {
        match self.slots[slot] {
            SlotView::Occupied { owner: o, .. } if o == self.own_id => {}
            SlotView::Occupied {
                position: prev,
                heard_at,
                ..
            } if heard_at == at && point_distance(observer, prev) <= point_distance(observer, position) => {}
            _ => {
                self.slots[slot] = SlotView::Occupied {
                    owner,
                    position,
                    heard_at: at,
                }
            }
        }
    }

    pub fn mark_own(&mut self, slot: usize, position: (f64, f64), now: Nanos) {
        self.slots[slot] = SlotView::Occupied {
            owner: self.own_id,
            position,
            heard_at: now,
        };
    }

    pub fn release(&mut self, slot: usize) {
        self.slots[slot] = SlotView::Free;
    }

    /// Turns stale entries of other owners into `Free`.
    pub fn age(&mut self, now: Nanos, frame: Nanos) {
        for i in 0..self.slots.len() {
            if self.is_free(i, now, frame) {
                self.slots[i] = SlotView::Free;
            }
        }
    }
}

/// `floor(n_slots / report_rate)`.
pub fn nominal_increment(n_slots: usize, report_rate: usize) -> usize {
    assert!(report_rate > 0 && report_rate <= n_slots);
    n_slots / report_rate
}

/// `round(0.2 * ni)`, at least one slot.
pub fn si_width(ni: usize) -> usize {
    ((0.2 * ni as f64).round() as usize).max(1)
}

/// Window of candidate slots around a nominal slot, wrapping modulo the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionInterval {
    pub center: usize,
    pub width: usize,
    pub n_slots: usize,
}

impl SelectionInterval {
    /// With an even width the extra slot goes after the center.
    pub fn around(center: usize, ni: usize, n_slots: usize) -> Self {
        Self {
            center: center % n_slots,
            width: si_width(ni).min(n_slots),
            n_slots,
        }
    }

    pub fn before(&self) -> usize {
        (self.width - 1) / 2
    }

    pub fn start(&self) -> usize {
        (self.center + self.n_slots - self.before() % self.n_slots) % self.n_slots
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        let start = self.start();
        (0..self.width).map(move |k| (start + k) % self.n_slots)
    }

    pub fn window(&self) -> Vec<usize> {
        self.slots().collect()
    }

    pub fn contains(&self, slot: usize) -> bool {
        self.offset_of(slot).is_some()
    }

    /// Position of `slot` inside the window.
    pub fn offset_of(&self, slot: usize) -> Option<usize> {
        let off = (slot + self.n_slots - self.start()) % self.n_slots;
        (off < self.width).then_some(off)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub slot: usize,
    pub stolen_from: Option<u32>,
}

/// Picks a transmission slot from `window` (non-empty, in window order).
///
/// A uniformly drawn candidate is kept if free; otherwise the nearest free
/// slot wins, a coin deciding between two equally near ones; with no free
/// slot the one whose owner was last heard farthest from `own_position`
/// is shared (ties to the lowest owner id).
pub fn select_nts<R: SlotRng + ?Sized>(
    window: &[usize],
    map: &SlotMap,
    own_position: (f64, f64),
    now: Nanos,
    frame: Nanos,
    rng: &mut R,
) -> Selection {
    assert!(!window.is_empty(), "empty selection interval");
    let pick = rng.below(window.len());
    let candidate = window[pick];
    if map.is_free(candidate, now, frame) {
        return Selection {
            slot: candidate,
            stolen_from: None,
        };
    }
    // Nearness is measured in position within the interval.
    let mut best: Option<(usize, usize)> = None;
    let mut tied: Option<usize> = None;
    for (i, &s) in window.iter().enumerate() {
        if !map.is_free(s, now, frame) {
            continue;
        }
        let d = i.abs_diff(pick);
        match best {
            Some((_, db)) if d > db => {}
            Some((_, db)) if d == db => tied = Some(s),
            _ => {
                best = Some((s, d));
                tied = None;
            }
        }
    }
    if let Some((b, _)) = best {
        let slot = match tied {
            Some(t) if rng.below(2) == 1 => t,
            _ => b,
        };
        return Selection { slot, stolen_from: None };
    }
    let mut victim: Option<(usize, u32, f64)> = None;
    for &s in window {
        if let SlotView::Occupied { owner, position, .. } = map.view(s, now, frame) {
            if owner == map.own_id {
                continue;
            }
            let d = point_distance(own_position, position);
            let better = match victim {
                None => true,
                Some((_, vo, vd)) => d > vd || (d == vd && owner < vo),
            };
            if better {
                victim = Some((s, owner, d));
            }
        }
    }
    match victim {
        Some((slot, owner, _)) => Selection {
            slot,
            stolen_from: Some(owner),
        },
        None => Selection {
            slot: candidate,
            stolen_from: None,
        },
    }
}

fn draw_reuse<R: SlotRng + ?Sized>(rng: &mut R) -> u8 {
    N_REUSE_MIN + rng.below((N_REUSE_MAX - N_REUSE_MIN + 1) as usize) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StdmaPhase {
    Initialization,
    NetworkEntry,
    FirstFrame,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reservation {
    pub nts: usize,
    /// Frames of use left before the reservation moves.
    pub n_remaining: u8,
    /// Nominal slot the reservation's SI is centered on.
    pub si_anchor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotAction {
    Keep,
    Reallocate,
    Steal(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContinuousOutcome {
    /// Slot the reservation will use next frame.
    pub slot: usize,
    pub action: SlotAction,
}

#[derive(Debug, Clone)]
pub struct StdmaNode {
    pub id: u32,
    pub phase: StdmaPhase,
    pub report_rate: usize,
    pub ni: usize,
    pub nss: usize,
    pub reservations: Vec<Reservation>,
    pub slot_map: SlotMap,
}

impl StdmaNode {
    pub fn new(id: u32, n_slots: usize, report_rate: usize) -> Self {
        Self {
            id,
            phase: StdmaPhase::Initialization,
            report_rate,
            ni: nominal_increment(n_slots, report_rate),
            nss: 0,
            reservations: Vec::with_capacity(report_rate),
            slot_map: SlotMap::new(n_slots, id),
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slot_map.n_slots()
    }

    pub fn selection_interval(&self, anchor: usize) -> SelectionInterval {
        SelectionInterval::around(anchor, self.ni, self.n_slots())
    }

    /// Applies heard transmissions, then ages the map.
    pub fn update_slot_map(&mut self, heard: &[Heard], own_position: (f64, f64), now: Nanos, frame: Nanos) {
        for h in heard {
            self.slot_map.record_heard(h.slot, h.owner, h.position, h.at, own_position);
        }
        self.slot_map.age(now, frame);
    }

    /// Chooses the nominal start slot and the first transmission slot after
    /// listening. `current_slot` is the slot starting now. NSS and the first
    /// slot are confined to the `ni - 1` slots from `current_slot` on, so the
    /// first packet waits less than one frame plus `ni` slot durations even
    /// though slot starts are spread slightly wider than a slot duration.
    pub fn network_entry<R: SlotRng + ?Sized>(
        &mut self,
        current_slot: usize,
        own_position: (f64, f64),
        now: Nanos,
        frame: Nanos,
        rng: &mut R,
    ) -> Selection {
        debug_assert_eq!(self.phase, StdmaPhase::Initialization);
        self.phase = StdmaPhase::NetworkEntry;
        let n = self.n_slots();
        let span = self.ni.saturating_sub(1).max(1);
        self.nss = (current_slot + rng.below(span)) % n;
        let si = self.selection_interval(self.nss);
        let window: Vec<usize> = si
            .slots()
            .filter(|&s| (s + n - current_slot) % n < span)
            .collect();
        let sel = select_nts(&window, &self.slot_map, own_position, now, frame, rng);
        let n_remaining = draw_reuse(rng);
        self.reservations.push(Reservation {
            nts: sel.slot,
            n_remaining,
            si_anchor: self.nss,
        });
        self.slot_map.mark_own(sel.slot, own_position, now);
        self.phase = StdmaPhase::FirstFrame;
        sel
    }

    /// Called at the node's newest transmission slot during the first frame.
    /// Returns the next reservation's selection, or `None` once all
    /// `report_rate` slots are reserved and the node turns continuous.
    pub fn first_frame_step<R: SlotRng + ?Sized>(
        &mut self,
        own_position: (f64, f64),
        now: Nanos,
        frame: Nanos,
        rng: &mut R,
    ) -> Option<Selection> {
        debug_assert_eq!(self.phase, StdmaPhase::FirstFrame);
        let last = self.reservations.last_mut().expect("first frame without reservations");
        last.n_remaining -= 1;
        if self.reservations.len() == self.report_rate {
            self.phase = StdmaPhase::Continuous;
            return None;
        }
        let anchor = (self.nss + self.reservations.len() * self.ni) % self.n_slots();
        let window = self.selection_interval(anchor).window();
        let sel = select_nts(&window, &self.slot_map, own_position, now, frame, rng);
        let n_remaining = draw_reuse(rng);
        self.reservations.push(Reservation {
            nts: sel.slot,
            n_remaining,
            si_anchor: anchor,
        });
        self.slot_map.mark_own(sel.slot, own_position, now);
        Some(sel)
    }

    /// Called when reservation `index` is used in continuous operation.
    pub fn continuous_step<R: SlotRng + ?Sized>(
        &mut self,
        index: usize,
        own_position: (f64, f64),
        now: Nanos,
        frame: Nanos,
        rng: &mut R,
    ) -> ContinuousOutcome {
        debug_assert_eq!(self.phase, StdmaPhase::Continuous);
        let res = &mut self.reservations[index];
        res.n_remaining -= 1;
        if res.n_remaining > 0 {
            return ContinuousOutcome {
                slot: res.nts,
                action: SlotAction::Keep,
            };
        }
        let (old, anchor) = (res.nts, res.si_anchor);
        if !self.reservations.iter().enumerate().any(|(i, r)| i != index && r.nts == old) {
            self.slot_map.release(old);
        }
        // The message moves to a new slot: the one being left is only a
        // candidate when the SI has no other.
        let mut window = self.selection_interval(anchor).window();
        if window.len() > 1 {
            window.retain(|&s| s != old);
        }
        let sel = select_nts(&window, &self.slot_map, own_position, now, frame, rng);
        let n_remaining = draw_reuse(rng);
        self.reservations[index] = Reservation {
            nts: sel.slot,
            n_remaining,
            si_anchor: anchor,
        };
        self.slot_map.mark_own(sel.slot, own_position, now);
        ContinuousOutcome {
            slot: sel.slot,
            action: match sel.stolen_from {
                Some(owner) => SlotAction::Steal(owner),
                None => SlotAction::Reallocate,
            },
        }
    }

    /// Whether every reservation's slot lies in its selection interval.
    pub fn reservations_in_si(&self) -> bool {
        self.reservations
            .iter()
            .all(|r| self.selection_interval(r.si_anchor).contains(r.nts))
    }
}

/// One transmission as heard by an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heard {
    pub slot: usize,
    pub owner: u32,
    pub position: (f64, f64),
    pub at: Nanos,
}

/// The slot map an observer builds from one frame of listening: every
/// in-range transmission marks its slot, everything else stays free.
pub fn observe_frame(
    n_slots: usize,
    observer_id: u32,
    observer_position: (f64, f64),
    range: f64,
    transmissions: &[Heard],
) -> SlotMap {
    let mut map = SlotMap::new(n_slots, observer_id);
    for h in transmissions {
        if h.owner != observer_id && point_distance(observer_position, h.position) <= range {
            map.record_heard(h.slot, h.owner, h.position, h.at, observer_position);
        }
    }
    map
}

/// Maps absolute slot numbers (`frame * n_slots + slot`) to time. Slots are
/// spread evenly over the frame, so their pitch is `frame / n_slots`
/// rounded down to the nanosecond, never shorter than the slot duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotClock {
    pub frame: Nanos,
    pub n_slots: usize,
}

impl SlotClock {
    pub fn start_of(&self, abs: u64) -> Nanos {
        let n = self.n_slots as u64;
        let f = abs / n;
        let i = abs % n;
        Nanos(f * self.frame.0 + i * self.frame.0 / n)
    }

    /// First absolute slot starting at or after `t`.
    pub fn first_at_or_after(&self, t: Nanos) -> u64 {
        let n = self.n_slots as u64;
        let f = t.0 / self.frame.0;
        let within = t.0 % self.frame.0;
        let mut i = (within * n) / self.frame.0;
        let mut abs = f * n + i;
        while self.start_of(abs) < t {
            i += 1;
            abs = f * n + i;
        }
        abs
    }

    /// Next absolute slot strictly after `after` whose in-frame index is `slot`.
    pub fn next_occurrence(&self, slot: usize, after: u64) -> u64 {
        let n = self.n_slots as u64;
        let base = after - after % n + slot as u64;
        if base > after {
            base
        } else {
            base + n
        }
    }

    pub fn slot_index(&self, abs: u64) -> usize {
        (abs % self.n_slots as u64) as usize
    }

    /// Longest gap between consecutive slot starts.
    pub fn max_pitch(&self) -> Nanos {
        Nanos(self.frame.0.div_ceil(self.n_slots as u64))
    }
}
