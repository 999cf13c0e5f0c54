//! Discrete-event run of one scenario under one MAC protocol.
//!
//! Positions, region membership and the neighbour index refresh at every
//! mobility tick; between ticks all distances use the tick snapshot. A CSMA
//! transmission keeps the set of nodes it holds busy ("audience"), which is
//! recomputed at ticks. STDMA transmissions in one slot are handled as a
//! batch so that transmitters never hear each other.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{point_distance, propagation_delay_ns, Geometry, NeighborIndex};
use crate::config::{ConfigError, MacProtocol, ScenarioConfig, TimingParams};
use crate::mac_csma::{CsmaNode, PendingPacket, TransmitStart};
use crate::mac_stdma::{SlotAction, SlotClock, StdmaNode, StdmaPhase};
use crate::metrics::{mac_to_mac_delay, MetricsReport, NodeStats, SlotTraceRow, VehicleTraceRow};
use crate::mobility::{
    advance, draw_packet_length, in_stats_region, schedule_next_arrival, spawn_vehicle, MobilityError, World,
};
use crate::rng::{stream_rng, Stream};
use crate::time::Nanos;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error("event queue ran dry at {at} before the end of the run")]
    QueueUnderflow { at: Nanos },
}

/// Period of position updates and neighbour-set refreshes.
pub fn mobility_tick_period(cfg: &ScenarioConfig) -> Nanos {
    Nanos::from_micros_f64(cfg.mobility_tick * 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Arrival { lane: usize },
    Tick,
    Heartbeat { node: u32 },
    Wakeup { node: u32, token: u64 },
    TxEnd { tx: u64 },
    NetworkEntry { node: u32 },
    Slot { abs: u64 },
    End,
}

struct StdmaState {
    mac: StdmaNode,
    listen_abs: u64,
    first_heartbeat: Nanos,
    first_sent: bool,
    /// `abs + 1` of the slot this node last transmitted in.
    sending_in: u64,
}

enum Mac {
    Csma(CsmaNode),
    Stdma(Box<StdmaState>),
}

struct Node {
    packet_length: u32,
    coords: (f64, f64),
    in_region: bool,
    /// In-range CSMA transmissions currently on the air.
    busy: u32,
    mac: Mac,
}

struct Ongoing {
    sender: u32,
    start_coords: (f64, f64),
    end: Nanos,
    audience: Vec<u32>,
    measured: bool,
    min_distance: f64,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    timing: TimingParams,
    geometry: Geometry,
    range: f64,
    now: Nanos,
    end: Nanos,
    warmup: Nanos,
    tick: Nanos,
    ticks: u64,
    interval: Nanos,
    decode: Nanos,
    next_trace: Option<Nanos>,

    queue: BinaryHeap<Reverse<(Nanos, u64, Event)>>,
    seq: u64,

    world: World,
    index: NeighborIndex,
    nodes: Vec<Option<Node>>,
    stats_slot: Vec<Option<usize>>,
    stats: Vec<NodeStats>,

    arrivals: Vec<ChaCha8Rng>,
    speeds: Vec<ChaCha8Rng>,
    lengths: ChaCha8Rng,
    offsets: ChaCha8Rng,
    backoff: ChaCha8Rng,
    selection: ChaCha8Rng,

    ongoing: BTreeMap<u64, Ongoing>,
    next_tx: u64,

    clock: SlotClock,
    n_slots: usize,
    slot_schedule: BTreeMap<u64, Vec<(u32, usize)>>,
    delay_bound: Nanos,
    /// Per node id, the last slot (abs + 1) in which it saw a reused slot.
    saw_reuse: Vec<u64>,

    report: MetricsReport,
}

/// Simulates `config` with master seed `seed`.
pub fn run(config: &ScenarioConfig, seed: u64) -> Result<MetricsReport, EngineError> {
    config.validate()?;
    let started = Instant::now();
    let mut sim = Sim::new(config, seed);
    sim.execute()?;
    let mut report = sim.finish();
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok(report)
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64) -> Self {
        let lanes = cfg.total_lanes();
        let n_slots = cfg.n_slots();
        let frame = cfg.frame();
        let ni = n_slots / cfg.report_rate().max(1);
        let mut report = MetricsReport::new(
            cfg.mac_protocol,
            cfg.max_packet_length(),
            cfg.heartbeat_rate,
            cfg.sensing_range,
        );
        report.seeds = vec![seed];
        report.config_hash = cfg.hash_hex();
        report.min_node_packets = cfg.min_node_packets;
        Self {
            cfg,
            timing: cfg.timing.clone(),
            geometry: Geometry {
                road_length: cfg.road_length,
                lane_width: cfg.lane_width,
            },
            range: cfg.sensing_range,
            now: Nanos::ZERO,
            end: Nanos::from_secs_f64(cfg.sim_duration),
            warmup: Nanos::from_secs_f64(cfg.warmup_secs()),
            tick: mobility_tick_period(cfg),
            ticks: 0,
            saw_reuse: Vec::new(),
            interval: cfg.heartbeat_interval(),
            decode: Nanos::from_micros_f64(cfg.decode_time),
            next_trace: cfg.vehicle_trace_period.map(|_| Nanos::ZERO),
            queue: BinaryHeap::new(),
            seq: 0,
            world: World::new(cfg.road_length),
            index: NeighborIndex::default(),
            nodes: Vec::new(),
            stats_slot: Vec::new(),
            stats: Vec::new(),
            arrivals: (0..lanes).map(|l| stream_rng(seed, Stream::Arrivals(l))).collect(),
            speeds: (0..lanes).map(|l| stream_rng(seed, Stream::Speeds(l))).collect(),
            lengths: stream_rng(seed, Stream::PacketLengths),
            offsets: stream_rng(seed, Stream::HeartbeatOffsets),
            backoff: stream_rng(seed, Stream::Backoff),
            selection: stream_rng(seed, Stream::StdmaSelection),
            ongoing: BTreeMap::new(),
            next_tx: 0,
            clock: SlotClock { frame, n_slots },
            n_slots,
            slot_schedule: BTreeMap::new(),
            delay_bound: frame + cfg.stdma_slot_duration() * ni as u64,
            report,
        }
    }

    fn push(&mut self, at: Nanos, ev: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq, ev)));
    }

    fn execute(&mut self) -> Result<(), EngineError> {
        for lane in 0..self.cfg.total_lanes() {
            let at = schedule_next_arrival(self.cfg.mean_interarrival, Nanos::ZERO, &mut self.arrivals[lane]);
            if at < self.end {
                self.push(at, Event::Arrival { lane });
            }
        }
        self.push(Nanos::ZERO, Event::Tick);
        self.push(self.end, Event::End);
        loop {
            let Some(Reverse((at, _, ev))) = self.queue.pop() else {
                return Err(EngineError::QueueUnderflow { at: self.now });
            };
            assert!(at >= self.now, "event at {at} dispatched after {}", self.now);
            self.now = at;
            match ev {
                Event::End => return Ok(()),
                Event::Arrival { lane } => self.on_arrival(lane)?,
                Event::Tick => self.on_tick(),
                Event::Heartbeat { node } => self.on_heartbeat(node),
                Event::Wakeup { node, token } => self.on_wakeup(node, token),
                Event::TxEnd { tx } => self.on_tx_end(tx),
                Event::NetworkEntry { node } => self.on_network_entry(node),
                Event::Slot { abs } => self.on_slot(abs),
            }
        }
    }

    fn node(&self, id: u32) -> Option<&Node> {
        self.nodes.get(id as usize).and_then(Option::as_ref)
    }

    fn measured(&self, node: &Node, generated: Nanos) -> bool {
        generated >= self.warmup && node.in_region
    }

    fn stats_for(&mut self, id: u32) -> &mut NodeStats {
        let i = id as usize;
        if self.stats_slot.len() <= i {
            self.stats_slot.resize(i + 1, None);
        }
        let slot = match self.stats_slot[i] {
            Some(s) => s,
            None => {
                self.stats.push(NodeStats::new(id));
                self.stats_slot[i] = Some(self.stats.len() - 1);
                self.stats.len() - 1
            }
        };
        &mut self.stats[slot]
    }

    fn rebuild_index(&mut self) {
        let nodes = &self.nodes;
        self.index.rebuild(
            nodes
                .iter()
                .enumerate()
                .filter_map(|(i, n)| n.as_ref().map(|n| (i as u32, n.coords))),
        );
    }

    fn on_arrival(&mut self, lane: usize) -> Result<(), EngineError> {
        let length = draw_packet_length(&self.cfg.packet_length_mix, &mut self.lengths);
        let v = spawn_vehicle(self.cfg, lane, self.now, &mut self.speeds[lane], length)?;
        let coords = self.geometry.coords(&v);
        let id = self.world.insert(v);
        let offset = self.offsets.random::<f64>() * self.cfg.initial_tx_delay_max * 1e-3;
        let first = self.now + Nanos::from_secs_f64(offset);
        let mac = match self.cfg.mac_protocol {
            MacProtocol::Csma => {
                if first < self.end {
                    self.push(first, Event::Heartbeat { node: id });
                }
                Mac::Csma(CsmaNode::new())
            }
            MacProtocol::Stdma => {
                let listen_abs = self.clock.first_at_or_after(first);
                let entry = self.clock.start_of(listen_abs + self.n_slots as u64);
                if entry < self.end {
                    self.push(entry, Event::NetworkEntry { node: id });
                }
                Mac::Stdma(Box::new(StdmaState {
                    mac: StdmaNode::new(id, self.n_slots, self.cfg.report_rate()),
                    listen_abs,
                    first_heartbeat: first,
                    first_sent: false,
                    sending_in: 0,
                }))
            }
        };
        let mut busy = 0;
        for o in self.ongoing.values_mut() {
            if o.end > self.now && point_distance(coords, o.start_coords) <= self.range {
                if let Err(pos) = o.audience.binary_search(&id) {
                    o.audience.insert(pos, id);
                }
                busy += 1;
            }
        }
        let node = Node {
            packet_length: length,
            coords,
            in_region: in_stats_region(0.0, self.cfg),
            busy,
            mac,
        };
        if self.nodes.len() <= id as usize {
            self.nodes.resize_with(id as usize + 1, || None);
        }
        self.nodes[id as usize] = Some(node);
        self.rebuild_index();
        let next = schedule_next_arrival(self.cfg.mean_interarrival, self.now, &mut self.arrivals[lane]);
        if next < self.end {
            self.push(next, Event::Arrival { lane });
        }
        Ok(())
    }

    fn on_tick(&mut self) {
        advance(&mut self.world, self.now);
        for v in &self.world.vehicles {
            let Some(node) = self.nodes.get_mut(v.id as usize).and_then(Option::as_mut) else {
                continue;
            };
            if v.alive {
                node.coords = self.geometry.coords(v);
                node.in_region = in_stats_region(v.position, self.cfg);
            } else {
                let node = self.nodes[v.id as usize].take().expect("departing node present");
                if let Mac::Csma(mut csma) = node.mac {
                    if csma.shutdown().is_some() {
                        self.report.conservation.pending += 1;
                    }
                }
            }
        }
        if let Some(next) = self.next_trace {
            if self.now >= next {
                for v in self.world.alive() {
                    self.report.vehicle_trace.push(VehicleTraceRow {
                        time: self.now,
                        node: v.id,
                        lane: v.lane,
                        position: v.position,
                    });
                }
                let period = Nanos::from_secs_f64(self.cfg.vehicle_trace_period.unwrap_or(1.0));
                self.next_trace = Some(next + period);
            }
        }
        self.world.prune();
        self.rebuild_index();
        self.refresh_audiences();

        if self.cfg.mac_protocol == MacProtocol::Stdma {
            let from = self.now.max(self.warmup);
            let to = (self.now + self.tick).min(self.end);
            if from < to {
                let slots = self.clock.first_at_or_after(to) - self.clock.first_at_or_after(from);
                let observers = self.nodes.iter().flatten().filter(|n| n.in_region).count() as u64;
                self.report.observed_slots += slots * observers;
            }
        }

        let per_second = (Nanos::from_secs_f64(1.0).0 / self.tick.0.max(1)).max(1);
        if self.now >= self.warmup && self.ticks % per_second == 0 {
            for (i, n) in self.nodes.iter().enumerate() {
                if let Some(n) = n.as_ref().filter(|n| n.in_region) {
                    self.report.neighbor_sum += self.index.count_within(n.coords, i as u32, self.range) as u64;
                    self.report.neighbor_samples += 1;
                }
            }
        }
        self.ticks += 1;
        let next = self.now + self.tick;
        if next < self.end {
            self.push(next, Event::Tick);
        }
    }

    /// Nodes that moved into or out of range of an ongoing transmission see
    /// their channel turn busy or idle.
    fn refresh_audiences(&mut self) {
        let ids: Vec<u64> = self.ongoing.keys().copied().collect();
        for tx in ids {
            let o = &self.ongoing[&tx];
            let center = self.node(o.sender).map_or(o.start_coords, |n| n.coords);
            let fresh = self.audience_of(center, o.sender);
            let old = std::mem::take(&mut self.ongoing.get_mut(&tx).expect("ongoing").audience);
            let (mut i, mut j) = (0, 0);
            while i < old.len() || j < fresh.len() {
                match (old.get(i), fresh.get(j)) {
                    (Some(a), Some(b)) if a == b => {
                        i += 1;
                        j += 1;
                    }
                    (Some(&a), Some(&b)) if a < b => {
                        self.release_busy(a);
                        i += 1;
                    }
                    (Some(&a), None) => {
                        self.release_busy(a);
                        i += 1;
                    }
                    (_, Some(&b)) => {
                        self.hold_busy(b);
                        j += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
            self.ongoing.get_mut(&tx).expect("ongoing").audience = fresh.into_iter().collect();
        }
    }

    fn audience_of(&self, center: (f64, f64), sender: u32) -> Vec<u32> {
        let mut ids = Vec::new();
        self.index.for_each_within(center, sender, self.range, |id, _| ids.push(id));
        ids.sort_unstable();
        ids
    }

    fn hold_busy(&mut self, id: u32) {
        let Some(node) = self.nodes.get_mut(id as usize).and_then(Option::as_mut) else {
            return;
        };
        node.busy += 1;
        if node.busy == 1 {
            if let Mac::Csma(csma) = &mut node.mac {
                csma.on_channel_busy(self.now, &mut self.backoff, &self.timing);
            }
        }
    }

    fn release_busy(&mut self, id: u32) {
        let Some(node) = self.nodes.get_mut(id as usize).and_then(Option::as_mut) else {
            return;
        };
        node.busy -= 1;
        if node.busy == 0 {
            if let Mac::Csma(csma) = &mut node.mac {
                if let Some(w) = csma.on_channel_idle(self.now, &self.timing) {
                    self.push(w.at, Event::Wakeup { node: id, token: w.token });
                }
            }
        }
    }

    fn on_heartbeat(&mut self, id: u32) {
        let now = self.now;
        let Some(node) = self.node(id) else {
            return;
        };
        let packet = PendingPacket {
            generated: now,
            length: node.packet_length,
            measured: self.measured(node, now),
        };
        let busy = node.busy > 0;
        let node = self.nodes[id as usize].as_mut().expect("checked above");
        let Mac::Csma(csma) = &mut node.mac else {
            unreachable!("heartbeat events are CSMA only");
        };
        let out = csma.on_packet_generated(packet, now, busy, &mut self.backoff, &self.timing);
        self.report.conservation.generated += 1;
        if packet.measured {
            self.stats_for(id).record_generated();
        }
        if let Some(dropped) = out.dropped {
            self.report.conservation.dropped += 1;
            if dropped.measured {
                self.stats_for(id).record_drop();
            }
        }
        if let Some(w) = out.wakeup {
            self.push(w.at, Event::Wakeup { node: id, token: w.token });
        }
        let next = now + self.interval;
        if next < self.end {
            self.push(next, Event::Heartbeat { node: id });
        }
    }

    fn on_wakeup(&mut self, id: u32, token: u64) {
        let Some(node) = self.nodes.get_mut(id as usize).and_then(Option::as_mut) else {
            return;
        };
        let Mac::Csma(csma) = &mut node.mac else {
            return;
        };
        if let Some(tx) = csma.on_wakeup(self.now, token, &self.timing) {
            let coords = node.coords;
            self.start_csma_tx(id, coords, tx);
        }
    }

    fn start_csma_tx(&mut self, id: u32, coords: (f64, f64), tx: TransmitStart) {
        self.report.conservation.transmitted += 1;
        let measured = tx.packet.measured;
        if measured {
            self.stats_for(id).record_transmit(tx.access_delay);
        }
        let mut audience = Vec::new();
        let mut distance_sum = 0.0;
        self.index.for_each_within(coords, id, self.range, |r, d| {
            audience.push(r);
            distance_sum += d;
        });
        audience.sort_unstable();
        for &r in &audience {
            self.hold_busy(r);
        }
        if measured && !audience.is_empty() {
            let prop = propagation_delay_ns(distance_sum / audience.len() as f64);
            let (d, _) = mac_to_mac_delay(tx.access_delay, prop, self.decode);
            self.report.mac_to_mac.record(d);
        }
        let mut min_distance = f64::INFINITY;
        for o in self.ongoing.values_mut() {
            if o.end > self.now {
                let d = point_distance(coords, o.start_coords);
                o.min_distance = o.min_distance.min(d);
                min_distance = min_distance.min(d);
            }
        }
        self.next_tx += 1;
        let key = self.next_tx;
        self.ongoing.insert(
            key,
            Ongoing {
                sender: id,
                start_coords: coords,
                end: tx.end,
                audience,
                measured,
                min_distance,
            },
        );
        self.push(tx.end, Event::TxEnd { tx: key });
    }

    fn on_tx_end(&mut self, key: u64) {
        let o = self.ongoing.remove(&key).expect("transmission ends once");
        if o.measured {
            self.report.concurrent_tx_min_distance.push(o.min_distance);
        }
        for &r in &o.audience {
            self.release_busy(r);
        }
        let now = self.now;
        let Some(node) = self.nodes.get_mut(o.sender as usize).and_then(Option::as_mut) else {
            return;
        };
        let busy = node.busy > 0;
        if let Mac::Csma(csma) = &mut node.mac {
            if let Some(w) = csma.on_transmission_end(now, busy, &mut self.backoff, &self.timing) {
                self.push(w.at, Event::Wakeup { node: o.sender, token: w.token });
            }
        }
    }

    fn schedule_slot(&mut self, abs: u64, node: u32, reservation: usize) {
        let at = self.clock.start_of(abs);
        let entry = self.slot_schedule.entry(abs).or_default();
        let fresh = entry.is_empty();
        entry.push((node, reservation));
        if fresh {
            self.push(at, Event::Slot { abs });
        }
    }

    fn trace(&mut self, abs: u64, node: u32, slot: usize, action: &'static str) {
        if self.cfg.slot_trace {
            self.report.slot_trace.push(SlotTraceRow {
                frame: abs / self.n_slots as u64,
                node,
                slot,
                action,
            });
        }
    }

    fn on_network_entry(&mut self, id: u32) {
        let (now, frame, n) = (self.now, self.clock.frame, self.n_slots);
        let Some(node) = self.nodes.get_mut(id as usize).and_then(Option::as_mut) else {
            return;
        };
        let coords = node.coords;
        let Mac::Stdma(st) = &mut node.mac else {
            unreachable!("network entry is STDMA only");
        };
        let cur_abs = st.listen_abs + n as u64;
        let cur = cur_abs as usize % n;
        let sel = st.mac.network_entry(cur, coords, now, frame, &mut self.selection);
        let abs = cur_abs + ((sel.slot + n - cur) % n) as u64;
        if sel.stolen_from.is_some() {
            self.report.stdma.steals += 1;
        }
        self.schedule_slot(abs, id, 0);
        self.trace(abs, id, sel.slot, if sel.stolen_from.is_some() { "steal" } else { "reallocate" });
    }

    fn on_slot(&mut self, abs: u64) {
        let batch = self.slot_schedule.remove(&abs).unwrap_or_default();
        let (now, frame, n) = (self.now, self.clock.frame, self.n_slots as u64);
        let slot = (abs % n) as usize;
        let mut sent: Vec<(u32, (f64, f64), bool, bool, Nanos)> = Vec::with_capacity(batch.len());
        let mut follow_ups: Vec<(u64, u32, usize, usize, &'static str)> = Vec::new();

        for (id, res) in batch {
            let warmup = self.warmup;
            let Some(node) = self.nodes.get_mut(id as usize).and_then(Option::as_mut) else {
                continue;
            };
            let (coords, in_region) = (node.coords, node.in_region);
            let Mac::Stdma(st) = &mut node.mac else {
                unreachable!("slot events are STDMA only");
            };
            st.sending_in = abs + 1;
            let r = st.mac.reservations[res];
            debug_assert_eq!(r.nts, slot);
            let si = st.mac.selection_interval(r.si_anchor);
            let offset = si.offset_of(r.nts).unwrap_or(0) as u64;
            let generated = if res == 0 && !st.first_sent {
                st.first_sent = true;
                st.first_heartbeat
            } else {
                self.clock.start_of(abs - offset)
            };
            let delay = now - generated;
            let measured = generated >= warmup && in_region;

            match st.mac.phase {
                StdmaPhase::FirstFrame => {
                    debug_assert_eq!(res + 1, st.mac.reservations.len());
                    follow_ups.push((abs + n, id, res, slot, "keep"));
                    match st.mac.first_frame_step(coords, now, frame, &mut self.selection) {
                        Some(sel) => {
                            let k = st.mac.reservations.len() - 1;
                            let si = st.mac.selection_interval(st.mac.reservations[k].si_anchor);
                            let start = self.clock.next_occurrence(si.start(), abs);
                            let at = start + si.offset_of(sel.slot).expect("selection inside SI") as u64;
                            let action = if sel.stolen_from.is_some() {
                                self.report.stdma.steals += 1;
                                "steal"
                            } else {
                                "reallocate"
                            };
                            follow_ups.push((at, id, k, sel.slot, action));
                        }
                        None => {
                            if st.mac.reservations.len() != st.mac.report_rate {
                                self.report.stdma.reservation_count_mismatch += 1;
                            }
                        }
                    }
                }
                _ => {
                    let out = st.mac.continuous_step(res, coords, now, frame, &mut self.selection);
                    let new_offset = si.offset_of(out.slot);
                    if new_offset.is_none() {
                        self.report.stdma.nts_outside_si += 1;
                    }
                    let at = abs - offset + n + new_offset.unwrap_or(0) as u64;
                    let action = match out.action {
                        SlotAction::Keep => "keep",
                        SlotAction::Reallocate => {
                            self.report.stdma.reallocations += 1;
                            "reallocate"
                        }
                        SlotAction::Steal(_) => {
                            self.report.stdma.reallocations += 1;
                            self.report.stdma.steals += 1;
                            "steal"
                        }
                    };
                    follow_ups.push((at, id, res, out.slot, action));
                }
            }

            let checks = &mut self.report.stdma;
            checks.transmissions += 1;
            checks.max_access_delay = checks.max_access_delay.max(delay);
            if delay > self.delay_bound {
                checks.delay_bound_exceeded += 1;
            }
            self.report.conservation.generated += 1;
            self.report.conservation.transmitted += 1;
            if measured {
                let s = self.stats_for(id);
                s.record_generated();
                s.record_transmit(delay);
            }
            sent.push((id, coords, measured, in_region, delay));
        }

        for (at, id, res, slot, action) in follow_ups {
            self.schedule_slot(at, id, res);
            self.trace(abs, id, slot, action);
        }

        // Everyone in range of a sender, except other senders, hears it.
        for &(id, coords, measured, _, delay) in &sent {
            let mut distance_sum = 0.0;
            let mut heard_by = 0usize;
            let nodes = &mut self.nodes;
            self.index.for_each_within(coords, id, self.range, |r, d| {
                let Some(listener) = nodes.get_mut(r as usize).and_then(Option::as_mut) else {
                    return;
                };
                let at = listener.coords;
                if let Mac::Stdma(st) = &mut listener.mac {
                    if st.sending_in == abs + 1 {
                        return;
                    }
                    st.mac.slot_map.record_heard(slot, id, coords, now, at);
                    distance_sum += d;
                    heard_by += 1;
                }
            });
            if measured && heard_by > 0 {
                let prop = propagation_delay_ns(distance_sum / heard_by as f64);
                let (d, _) = mac_to_mac_delay(delay, prop, self.decode);
                self.report.mac_to_mac.record(d);
            }
        }

        // A stats-region node sees the slot reused when two senders in range
        // of each other are both within its own range (it may be one of them).
        let mut nearest = vec![f64::INFINITY; sent.len()];
        let stamp = abs + 1;
        let counting = now >= self.warmup;
        for i in 0..sent.len() {
            for j in i + 1..sent.len() {
                let d = point_distance(sent[i].1, sent[j].1);
                if d > self.range {
                    continue;
                }
                nearest[i] = nearest[i].min(d);
                nearest[j] = nearest[j].min(d);
                if !counting {
                    continue;
                }
                let (a, b) = (sent[i].1, sent[j].1);
                let mut seen = 0u64;
                let nodes = &self.nodes;
                let marks = &mut self.saw_reuse;
                let range = self.range;
                let mut visit = |x: u32| {
                    let Some(node) = nodes.get(x as usize).and_then(Option::as_ref) else {
                        return;
                    };
                    if !node.in_region || point_distance(node.coords, b) > range {
                        return;
                    }
                    if marks.len() <= x as usize {
                        marks.resize(x as usize + 1, 0);
                    }
                    if marks[x as usize] != stamp {
                        marks[x as usize] = stamp;
                        seen += 1;
                    }
                };
                visit(sent[i].0);
                self.index.for_each_within(a, sent[i].0, range, |x, _| visit(x));
                self.report.reused_slots += seen;
            }
        }
        for (i, s) in sent.iter().enumerate() {
            if s.2 {
                self.report.slot_share_min_distance.push(nearest[i]);
            }
        }
    }

    fn finish(mut self) -> MetricsReport {
        for node in self.nodes.iter_mut().flatten() {
            if let Mac::Csma(csma) = &mut node.mac {
                if csma.pending().is_some() {
                    self.report.conservation.pending += 1;
                }
            }
        }
        for s in &mut self.stats {
            s.finish();
        }
        self.stats.sort_by_key(|s| s.id);
        self.report.nodes = self.stats;
        self.report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(protocol: MacProtocol) -> ScenarioConfig {
        ScenarioConfig {
            mac_protocol: protocol,
            road_length: 3000.0,
            sim_duration: 200.0,
            packet_length_mix: vec![(300, 1.0)],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn default_tick_is_100_ms() {
        assert_eq!(mobility_tick_period(&ScenarioConfig::default()), Nanos::from_millis(100));
    }

    #[test]
    fn csma_conserves_packets() {
        let r = run(&small(MacProtocol::Csma), 3).unwrap();
        assert!(r.conservation.generated > 0);
        assert!(r.conservation.holds(), "{:?}", r.conservation);
        for n in &r.nodes {
            assert!(n.pending() <= 1);
        }
    }

    #[test]
    fn stdma_never_drops_and_keeps_its_bounds() {
        let r = run(&small(MacProtocol::Stdma), 3).unwrap();
        assert!(r.stdma.transmissions > 0);
        assert_eq!(r.conservation.dropped, 0);
        assert!(r.conservation.holds());
        assert_eq!(r.stdma.violations(), 0, "{:?}", r.stdma);
    }

    #[test]
    fn same_seed_same_report() {
        for p in [MacProtocol::Csma, MacProtocol::Stdma] {
            let mut a = run(&small(p), 11).unwrap();
            let mut b = run(&small(p), 11).unwrap();
            a.wall_time_s = 0.0;
            b.wall_time_s = 0.0;
            assert!(a == b, "{p} differs between identical runs");
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ScenarioConfig {
            mobility_tick: 1e9,
            ..small(MacProtocol::Csma)
        };
        assert!(matches!(run(&cfg, 1), Err(EngineError::Config(_))));
    }
}
