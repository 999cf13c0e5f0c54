//! Vehicle arrivals and constant-speed kinematics on a straight highway.
//!
//! Vehicles enter each lane as a Poisson process, keep their lane and their
//! Gaussian-drawn speed for life, and leave when they pass the road end.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::config::{kmh_to_ms, ScenarioConfig};
use crate::time::Nanos;

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("lane {lane} out of range (road has {lanes} lanes)")]
    LaneOutOfRange { lane: usize, lanes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    /// `0..lanes_per_direction` travel forward, the rest in reverse.
    pub lane: usize,
    pub direction: Direction,
    /// Metres from the vehicle's own entry point, as of the world clock.
    pub position: f64,
    /// Metres per second.
    pub speed: f64,
    pub entry_time: Nanos,
    pub packet_length: u32,
    pub alive: bool,
}

impl Vehicle {
    /// Position at `t` (not earlier than the world clock it was last advanced to).
    pub fn position_at(&self, clock: Nanos, t: Nanos) -> f64 {
        let from = clock.max(self.entry_time);
        if t <= from {
            return self.position;
        }
        self.position + self.speed * (t - from).as_secs_f64()
    }
}

/// The set of vehicles on the road and the time their positions refer to.
#[derive(Debug, Clone)]
pub struct World {
    pub vehicles: Vec<Vehicle>,
    pub road_length: f64,
    pub clock: Nanos,
    next_id: u32,
}

impl World {
    pub fn new(road_length: f64) -> Self {
        Self {
            vehicles: Vec::new(),
            road_length,
            clock: Nanos::ZERO,
            next_id: 0,
        }
    }

    /// Next vehicle id that [`World::insert`] will assign.
    pub fn next_id(&self) -> u32 {
        self.next_id
    }

    /// Adds `v` with a fresh id and returns that id.
    pub fn insert(&mut self, mut v: Vehicle) -> u32 {
        v.id = self.next_id;
        self.next_id += 1;
        self.vehicles.push(v);
        self.next_id - 1
    }

    pub fn alive(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.iter().filter(|v| v.alive)
    }

    /// Drops dead vehicles from storage.
    pub fn prune(&mut self) {
        self.vehicles.retain(|v| v.alive);
    }
}

/// Entry time of the next vehicle in `lane`: `now` plus an exponential gap.
pub fn schedule_next_arrival<R: Rng + ?Sized>(mean_interarrival: f64, now: Nanos, rng: &mut R) -> Nanos {
    let gap = Exp::new(1.0 / mean_interarrival).expect("positive mean").sample(rng);
    now + Nanos::from_secs_f64(gap)
}

/// Gaussian speed for the lane's direction-relative index; non-positive draws are redrawn.
pub fn draw_speed<R: Rng + ?Sized>(mean_ms: f64, stddev_ms: f64, rng: &mut R) -> f64 {
    let normal = Normal::new(mean_ms, stddev_ms).expect("finite speed distribution");
    loop {
        let v = normal.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Picks a packet length from the configured vehicle mix.
pub fn draw_packet_length<R: Rng + ?Sized>(mix: &[(u32, f64)], rng: &mut R) -> u32 {
    if mix.len() == 1 {
        return mix[0].0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(bytes, frac) in mix {
        acc += frac;
        if u < acc {
            return bytes;
        }
    }
    mix[mix.len() - 1].0
}

/// A new vehicle at the entry of `lane`. The id is a placeholder until
/// the vehicle is inserted into a [`World`].
pub fn spawn_vehicle<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    lane: usize,
    now: Nanos,
    speed_rng: &mut R,
    packet_length: u32,
) -> Result<Vehicle, MobilityError> {
    let lanes = cfg.total_lanes();
    if lane >= lanes {
        return Err(MobilityError::LaneOutOfRange { lane, lanes });
    }
    let within = lane % cfg.lanes_per_direction;
    let direction = if lane < cfg.lanes_per_direction {
        Direction::Forward
    } else {
        Direction::Reverse
    };
    let speed = draw_speed(kmh_to_ms(cfg.lane_mean_speeds[within]), cfg.speed_stddev, speed_rng);
    Ok(Vehicle {
        id: u32::MAX,
        lane,
        direction,
        position: 0.0,
        speed,
        entry_time: now,
        packet_length,
        alive: true,
    })
}

/// Moves every live vehicle to time `to`; vehicles past the road end die.
pub fn advance(world: &mut World, to: Nanos) {
    assert!(to >= world.clock, "advance into the past: {to} < {}", world.clock);
    let clock = world.clock;
    let road = world.road_length;
    for v in world.vehicles.iter_mut().filter(|v| v.alive) {
        v.position = v.position_at(clock, to);
        if v.position > road {
            v.alive = false;
        }
    }
    world.clock = to;
}

/// Whether the vehicle's position lies in the measured stretch of road.
pub fn in_stats_region(position: f64, cfg: &ScenarioConfig) -> bool {
    let frac = position / cfg.road_length;
    frac >= cfg.stats_region.0 && frac < cfg.stats_region.1
}
