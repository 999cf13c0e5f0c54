//! Binary circular sensing model plus SNR/SINR and propagation helpers.
//!
//! Inside the sensing range a node senses and receives every transmission;
//! outside it hears nothing. The dB helpers are not used by the simulator.

use thiserror::Error;

use crate::mobility::{Direction, Vehicle};
use crate::time::Nanos;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("noise power must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("interference plus noise must be positive, got {0}")]
    NonPositiveDenominator(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingModel {
    pub range: f64,
}

/// Maps lane positions onto one shared plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub road_length: f64,
    pub lane_width: f64,
}

impl Geometry {
    /// `(x, y)`: x along the forward axis, y the lane's lateral offset.
    pub fn coords(&self, v: &Vehicle) -> (f64, f64) {
        let x = match v.direction {
            Direction::Forward => v.position,
            Direction::Reverse => self.road_length - v.position,
        };
        (x, v.lane as f64 * self.lane_width)
    }
}

pub fn distance(a: &Vehicle, b: &Vehicle, g: &Geometry) -> f64 {
    point_distance(g.coords(a), g.coords(b))
}

pub fn point_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Inclusive: a node exactly at the range boundary is in range.
pub fn within_range(a: &Vehicle, b: &Vehicle, m: &SensingModel, g: &Geometry) -> bool {
    distance(a, b, g) <= m.range
}

pub fn snr_db(power_rcvd_db: f64, noise: f64) -> Result<f64, ChannelError> {
    if noise <= 0.0 {
        return Err(ChannelError::NonPositiveNoise(noise));
    }
    Ok(power_rcvd_db - 10.0 * noise.log10())
}

pub fn sinr_db(power_rcvd_db: f64, power_interference: f64, noise: f64) -> Result<f64, ChannelError> {
    if noise <= 0.0 {
        return Err(ChannelError::NonPositiveNoise(noise));
    }
    let denom = power_interference + noise;
    if power_interference < 0.0 || denom <= 0.0 {
        return Err(ChannelError::NonPositiveDenominator(denom));
    }
    Ok(power_rcvd_db - 10.0 * denom.log10())
}

/// Free-space propagation time over `d` metres, in seconds.
pub fn propagation_delay(d: f64) -> f64 {
    assert!(d >= 0.0);
    d / SPEED_OF_LIGHT
}

pub fn propagation_delay_ns(d: f64) -> Nanos {
    Nanos::from_secs_f64(propagation_delay(d))
}

/// Positions of live nodes sorted along x, for range queries.
///
/// Rebuilt at each mobility tick so that neighbour sets only change there.
#[derive(Debug, Default, Clone)]
pub struct NeighborIndex {
    /// `(x, y, node)` sorted by x.
    entries: Vec<(f64, f64, u32)>,
}

impl NeighborIndex {
    pub fn rebuild(&mut self, points: impl Iterator<Item = (u32, (f64, f64))>) {
        self.entries.clear();
        self.entries.extend(points.map(|(id, (x, y))| (x, y, id)));
        self.entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Calls `f(node, distance)` for every indexed node other than `center_id`
    /// within `range` of `center`, in ascending x order.
    pub fn for_each_within(&self, center: (f64, f64), center_id: u32, range: f64, mut f: impl FnMut(u32, f64)) {
        let lo = self.entries.partition_point(|e| e.0 < center.0 - range);
        for &(x, y, id) in &self.entries[lo..] {
            if x > center.0 + range {
                break;
            }
            if id == center_id {
                continue;
            }
            let d = point_distance(center, (x, y));
            if d <= range {
                f(id, d);
            }
        }
    }

    pub fn count_within(&self, center: (f64, f64), center_id: u32, range: f64) -> usize {
        let mut n = 0;
        self.for_each_within(center, center_id, range, |_, _| n += 1);
        n
    }
}
