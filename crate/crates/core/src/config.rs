//! Scenario and timing parameters.
//!
//! A scenario is described by a flat TOML document whose keys match the
//! field names of [`ScenarioConfig`]. Omitted keys take the highway defaults
//! (12 km road, three lanes per direction, 3 s Poisson arrivals per lane).
//! Transmission times and STDMA slot counts are derived from the timing
//! parameters rather than tabulated.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::time::Nanos;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown protocol `{0}` (expected csma or stdma)")]
    UnknownProtocol(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// MAC/PHY timing constants. Durations are in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingParams {
    pub slot_time: f64,
    pub sifs: f64,
    pub aifs: f64,
    pub guard_time: f64,
    pub preamble: f64,
    /// Bits per second.
    pub transfer_rate: f64,
    /// Largest backoff multiplier; backoff is `slot_time * k`, `k` in `0..=cw_min`.
    pub cw_min: u32,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            slot_time: 9.0,
            sifs: 16.0,
            aifs: 34.0,
            guard_time: 3.0,
            preamble: 20.0,
            transfer_rate: 3e6,
            cw_min: 3,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("slot_time", self.slot_time),
            ("sifs", self.sifs),
            ("aifs", self.aifs),
            ("guard_time", self.guard_time),
            ("preamble", self.preamble),
            ("transfer_rate", self.transfer_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(key, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn slot(&self) -> Nanos {
        Nanos::from_micros_f64(self.slot_time)
    }

    pub fn aifs_ns(&self) -> Nanos {
        Nanos::from_micros_f64(self.aifs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacProtocol {
    Csma,
    Stdma,
}

impl std::str::FromStr for MacProtocol {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csma" => Ok(MacProtocol::Csma),
            "stdma" => Ok(MacProtocol::Stdma),
            _ => Err(ConfigError::UnknownProtocol(s.to_string())),
        }
    }
}

impl std::fmt::Display for MacProtocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MacProtocol::Csma => "csma",
            MacProtocol::Stdma => "stdma",
        })
    }
}

/// Every knob of a run.
///
/// Units: distances in m, `mean_interarrival`, `stdma_frame_duration`,
/// `sim_duration` and `warmup` in s, `lane_mean_speeds` in km/h,
/// `speed_stddev` in m/s, `heartbeat_rate` in Hz, `initial_tx_delay_max`
/// and `mobility_tick` in ms, `decode_time` in µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub road_length: f64,
    pub lanes_per_direction: usize,
    pub directions: usize,
    pub mean_interarrival: f64,
    pub lane_mean_speeds: Vec<f64>,
    pub speed_stddev: f64,
    pub sensing_range: f64,
    pub heartbeat_rate: f64,
    /// `(bytes, fraction of vehicles)` pairs.
    pub packet_length_mix: Vec<(u32, f64)>,
    pub mac_protocol: MacProtocol,
    pub stdma_frame_duration: f64,
    pub sim_duration: f64,
    /// Statistics start time; `None` derives `road_length / slowest lane speed`.
    pub warmup: Option<f64>,
    /// Fractions of road length bounding the measured region, `[start, end)`.
    pub stats_region: (f64, f64),
    pub initial_tx_delay_max: f64,
    pub rng_seed: u64,
    pub lane_width: f64,
    pub mobility_tick: f64,
    pub decode_time: f64,
    /// Nodes with fewer measured packets are ignored when picking best/worst.
    pub min_node_packets: u64,
    /// Sampling period (s) of the optional vehicle trace; `None` disables it.
    pub vehicle_trace_period: Option<f64>,
    /// Record the STDMA slot-occupancy trace.
    pub slot_trace: bool,
    pub timing: TimingParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            road_length: 12_000.0,
            lanes_per_direction: 3,
            directions: 2,
            mean_interarrival: 3.0,
            lane_mean_speeds: vec![83.0, 108.0, 130.0],
            speed_stddev: 1.0,
            sensing_range: 1000.0,
            heartbeat_rate: 10.0,
            packet_length_mix: vec![(100, 0.3), (300, 0.4), (500, 0.3)],
            mac_protocol: MacProtocol::Csma,
            stdma_frame_duration: 1.0,
            sim_duration: 5400.0,
            warmup: None,
            stats_region: (1.0 / 3.0, 2.0 / 3.0),
            initial_tx_delay_max: 100.0,
            rng_seed: 1,
            lane_width: 3.5,
            mobility_tick: 100.0,
            decode_time: 0.0,
            min_node_packets: 100,
            vehicle_trace_period: None,
            slot_trace: false,
            timing: TimingParams::default(),
        }
    }
}

/// Raw document form: all keys flat, timing keys alongside scenario keys.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FlatScenario {
    road_length: Option<f64>,
    lanes_per_direction: Option<usize>,
    directions: Option<usize>,
    mean_interarrival: Option<f64>,
    lane_mean_speeds: Option<Vec<f64>>,
    speed_stddev: Option<f64>,
    sensing_range: Option<f64>,
    heartbeat_rate: Option<f64>,
    packet_length_mix: Option<Vec<(i64, f64)>>,
    mac_protocol: Option<String>,
    stdma_frame_duration: Option<f64>,
    sim_duration: Option<f64>,
    warmup: Option<f64>,
    stats_region: Option<(f64, f64)>,
    initial_tx_delay_max: Option<f64>,
    rng_seed: Option<u64>,
    lane_width: Option<f64>,
    mobility_tick: Option<f64>,
    decode_time: Option<f64>,
    min_node_packets: Option<u64>,
    vehicle_trace_period: Option<f64>,
    slot_trace: Option<bool>,
    slot_time: Option<f64>,
    sifs: Option<f64>,
    aifs: Option<f64>,
    guard_time: Option<f64>,
    preamble: Option<f64>,
    transfer_rate: Option<f64>,
    cw_min: Option<i64>,
}

/// Parse a flat TOML document, fill defaults and validate.
pub fn load_config(source: &str) -> Result<ScenarioConfig, ConfigError> {
    let f: FlatScenario = toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut cfg = ScenarioConfig::default();
    macro_rules! take {
        ($($field:ident),*) => { $( if let Some(v) = f.$field { cfg.$field = v; } )* };
    }
    take!(
        road_length,
        lanes_per_direction,
        directions,
        mean_interarrival,
        lane_mean_speeds,
        speed_stddev,
        sensing_range,
        heartbeat_rate,
        stdma_frame_duration,
        sim_duration,
        stats_region,
        initial_tx_delay_max,
        rng_seed,
        lane_width,
        mobility_tick,
        decode_time,
        min_node_packets,
        slot_trace
    );
    cfg.warmup = f.warmup;
    cfg.vehicle_trace_period = f.vehicle_trace_period;
    if let Some(mix) = f.packet_length_mix {
        let mut out = Vec::with_capacity(mix.len());
        for (bytes, frac) in mix {
            if bytes <= 0 || bytes > u32::MAX as i64 {
                return Err(invalid("packet_length_mix", format!("byte count {bytes} must be positive")));
            }
            out.push((bytes as u32, frac));
        }
        cfg.packet_length_mix = out;
    }
    if let Some(p) = f.mac_protocol {
        cfg.mac_protocol = p.parse()?;
    }
    let t = &mut cfg.timing;
    if let Some(v) = f.slot_time {
        t.slot_time = v;
    }
    if let Some(v) = f.sifs {
        t.sifs = v;
    }
    if let Some(v) = f.aifs {
        t.aifs = v;
    }
    if let Some(v) = f.guard_time {
        t.guard_time = v;
    }
    if let Some(v) = f.preamble {
        t.preamble = v;
    }
    if let Some(v) = f.transfer_rate {
        t.transfer_rate = v;
    }
    if let Some(v) = f.cw_min {
        if v < 0 || v > u32::MAX as i64 {
            return Err(invalid("cw_min", format!("must be >= 0, got {v}")));
        }
        t.cw_min = v as u32;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Read and load a config file.
pub fn load_config_file(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_config(&text)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.timing.validate()?;
        let positive = [
            ("road_length", self.road_length),
            ("mean_interarrival", self.mean_interarrival),
            ("speed_stddev", self.speed_stddev),
            ("sensing_range", self.sensing_range),
            ("heartbeat_rate", self.heartbeat_rate),
            ("stdma_frame_duration", self.stdma_frame_duration),
            ("sim_duration", self.sim_duration),
            ("lane_width", self.lane_width),
            ("mobility_tick", self.mobility_tick),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(key, format!("must be positive, got {v}")));
            }
        }
        for (key, v) in [
            ("initial_tx_delay_max", self.initial_tx_delay_max),
            ("decode_time", self.decode_time),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(key, format!("must be non-negative, got {v}")));
            }
        }
        if self.lanes_per_direction == 0 {
            return Err(invalid("lanes_per_direction", "must be at least 1"));
        }
        if !(1..=2).contains(&self.directions) {
            return Err(invalid("directions", "must be 1 or 2"));
        }
        if self.lane_mean_speeds.len() != self.lanes_per_direction {
            return Err(invalid(
                "lane_mean_speeds",
                format!(
                    "expected {} entries, got {}",
                    self.lanes_per_direction,
                    self.lane_mean_speeds.len()
                ),
            ));
        }
        if let Some(s) = self.lane_mean_speeds.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(invalid("lane_mean_speeds", format!("speed {s} must be positive")));
        }
        if self.packet_length_mix.is_empty() {
            return Err(invalid("packet_length_mix", "must not be empty"));
        }
        if self.packet_length_mix.iter().any(|(b, f)| *b == 0 || !(f.is_finite() && *f >= 0.0)) {
            return Err(invalid("packet_length_mix", "byte counts must be positive and fractions non-negative"));
        }
        let total: f64 = self.packet_length_mix.iter().map(|(_, f)| f).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("packet_length_mix", format!("fractions sum to {total}, expected 1")));
        }
        let (a, b) = self.stats_region;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(invalid("stats_region", format!("need 0 <= start < end <= 1, got ({a}, {b})")));
        }
        if let Some(w) = self.warmup {
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid("warmup", format!("must be non-negative, got {w}")));
            }
        }
        if let Some(p) = self.vehicle_trace_period {
            if !(p.is_finite() && p > 0.0) {
                return Err(invalid("vehicle_trace_period", format!("must be positive, got {p}")));
            }
        }
        if self.mobility_tick * 1e-3 > self.sim_duration {
            return Err(invalid("mobility_tick", "longer than sim_duration"));
        }
        let frame = self.frame();
        let slot = self.stdma_slot_duration();
        if frame < slot {
            return Err(invalid("stdma_frame_duration", "shorter than one STDMA slot"));
        }
        let per_frame = self.report_rate();
        if per_frame == 0 || per_frame > self.n_slots() {
            return Err(invalid(
                "heartbeat_rate",
                format!("report rate {per_frame} must be in 1..={}", self.n_slots()),
            ));
        }
        Ok(())
    }

    /// Same contention geometry on a shorter road and a shorter run.
    pub fn scaled(&self, factor: f64) -> ScenarioConfig {
        let mut c = self.clone();
        c.road_length *= factor;
        c.sim_duration *= factor;
        c.warmup = c.warmup.map(|w| w * factor);
        c
    }

    pub fn total_lanes(&self) -> usize {
        self.lanes_per_direction * self.directions
    }

    pub fn warmup_secs(&self) -> f64 {
        self.warmup.unwrap_or_else(|| {
            let slowest = self.lane_mean_speeds.iter().cloned().fold(f64::INFINITY, f64::min);
            self.road_length / kmh_to_ms(slowest)
        })
    }

    pub fn max_packet_length(&self) -> u32 {
        self.packet_length_mix.iter().map(|(b, _)| *b).max().unwrap_or(0)
    }

    pub fn frame(&self) -> Nanos {
        Nanos::from_secs_f64(self.stdma_frame_duration)
    }

    /// STDMA slot duration: the transmission time of the longest configured
    /// packet, in whole microseconds.
    pub fn stdma_slot_duration(&self) -> Nanos {
        let t = stdma_tx_time(self.max_packet_length(), &self.timing);
        Nanos::from_micros(t.display_micros())
    }

    pub fn n_slots(&self) -> usize {
        slots_per_frame(self.frame(), self.stdma_slot_duration())
    }

    /// Transmissions per STDMA frame.
    pub fn report_rate(&self) -> usize {
        (self.heartbeat_rate * self.stdma_frame_duration).round() as usize
    }

    pub fn heartbeat_interval(&self) -> Nanos {
        Nanos::from_secs_f64(1.0 / self.heartbeat_rate)
    }

    pub fn to_toml(&self) -> String {
        let t = &self.timing;
        let flat = FlatScenario {
            road_length: Some(self.road_length),
            lanes_per_direction: Some(self.lanes_per_direction),
            directions: Some(self.directions),
            mean_interarrival: Some(self.mean_interarrival),
            lane_mean_speeds: Some(self.lane_mean_speeds.clone()),
            speed_stddev: Some(self.speed_stddev),
            sensing_range: Some(self.sensing_range),
            heartbeat_rate: Some(self.heartbeat_rate),
            packet_length_mix: Some(self.packet_length_mix.iter().map(|(b, f)| (*b as i64, *f)).collect()),
            mac_protocol: Some(self.mac_protocol.to_string()),
            stdma_frame_duration: Some(self.stdma_frame_duration),
            sim_duration: Some(self.sim_duration),
            warmup: self.warmup,
            stats_region: Some(self.stats_region),
            initial_tx_delay_max: Some(self.initial_tx_delay_max),
            rng_seed: Some(self.rng_seed),
            lane_width: Some(self.lane_width),
            mobility_tick: Some(self.mobility_tick),
            decode_time: Some(self.decode_time),
            min_node_packets: Some(self.min_node_packets),
            vehicle_trace_period: self.vehicle_trace_period,
            slot_trace: Some(self.slot_trace),
            slot_time: Some(t.slot_time),
            sifs: Some(t.sifs),
            aifs: Some(t.aifs),
            guard_time: Some(t.guard_time),
            preamble: Some(t.preamble),
            transfer_rate: Some(t.transfer_rate),
            cw_min: Some(t.cw_min as i64),
        };
        toml::to_string(&flat).expect("flat config serializes")
    }

    /// Short stable digest of the canonical serialization.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / 3.6
}

/// Airtime of `length` bytes at `rate` bit/s, in microseconds at full precision.
pub fn packet_airtime(length: u32, rate: f64) -> f64 {
    assert!(length > 0 && rate > 0.0, "packet_airtime needs positive length and rate");
    8.0 * length as f64 / rate * 1e6
}

/// AIFS + preamble + packet.
pub fn csma_tx_time(length: u32, t: &TimingParams) -> Nanos {
    Nanos::from_micros_f64(t.aifs + t.preamble + packet_airtime(length, t.transfer_rate))
}

/// Two guard times, two SIFS, preamble and packet.
pub fn stdma_tx_time(length: u32, t: &TimingParams) -> Nanos {
    Nanos::from_micros_f64(
        2.0 * t.guard_time + 2.0 * t.sifs + t.preamble + packet_airtime(length, t.transfer_rate),
    )
}

pub fn slots_per_frame(frame: Nanos, slot_duration: Nanos) -> usize {
    assert!(slot_duration.0 > 0 && frame >= slot_duration);
    (frame.0 / slot_duration.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = load_config("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.road_length, 12_000.0);
        assert_eq!(cfg.total_lanes(), 6);
        assert_eq!(cfg.lane_mean_speeds, vec![83.0, 108.0, 130.0]);
        assert_eq!(cfg.timing, TimingParams::default());
        assert_eq!(cfg.initial_tx_delay_max, 100.0);
        assert_eq!(cfg.stdma_frame_duration, 1.0);
    }

    #[test]
    fn fractions_over_one_rejected() {
        let err = load_config("packet_length_mix = [[100, 0.5], [300, 0.6]]").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "packet_length_mix"), "{err}");
    }

    #[test]
    fn table4_cell_document() {
        let cfg = load_config("heartbeat_rate = 10\npacket_length_mix = [[500, 1.0]]\nsensing_range = 1000").unwrap();
        assert_eq!(cfg.max_packet_length(), 500);
        assert_eq!(cfg.n_slots(), 718);
        assert_eq!(cfg.report_rate(), 10);
    }

    #[test]
    fn unknown_protocol_and_key() {
        assert!(matches!(load_config("mac_protocol = \"aloha\""), Err(ConfigError::UnknownProtocol(_))));
        assert!(matches!(load_config("bogus = 1"), Err(ConfigError::Parse(_))));
        assert_eq!(load_config("mac_protocol = \"STDMA\"").unwrap().mac_protocol, MacProtocol::Stdma);
    }

    #[test]
    fn invariant_violations_name_the_key() {
        for (doc, key) in [
            ("mean_interarrival = 0", "mean_interarrival"),
            ("lane_mean_speeds = [80, 90]", "lane_mean_speeds"),
            ("stats_region = [0.6, 0.4]", "stats_region"),
            ("packet_length_mix = [[0, 1.0]]", "packet_length_mix"),
            ("aifs = 0", "aifs"),
            ("cw_min = -1", "cw_min"),
            ("mobility_tick = 20000\nsim_duration = 10", "mobility_tick"),
            ("heartbeat_rate = 5000\npacket_length_mix = [[500, 1.0]]", "heartbeat_rate"),
        ] {
            match load_config(doc) {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key, "{doc}"),
                other => panic!("{doc}: expected invalid {key}, got {other:?}"),
            }
        }
    }

    #[test]
    fn airtime_examples() {
        assert!((packet_airtime(100, 3e6) - 266.666_666_7).abs() < 1e-6);
        assert_eq!(Nanos::from_micros_f64(packet_airtime(100, 3e6)).display_micros(), 267);
        assert!((packet_airtime(300, 3e6) - 800.0).abs() < 1e-9);
        assert!((packet_airtime(1, 8e6) - 1.0).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn zero_length_airtime_rejected() {
        packet_airtime(0, 3e6);
    }

    #[test]
    fn table3_transmission_times() {
        let t = TimingParams::default();
        let us = |n| csma_tx_time(n, &t).display_micros();
        assert_eq!([us(100), us(300), us(500)], [321, 854, 1387]);
        let us = |n| stdma_tx_time(n, &t).display_micros();
        assert_eq!([us(100), us(300), us(500)], [325, 858, 1391]);
    }

    #[test]
    fn table3_slot_counts() {
        let frame = Nanos::from_secs_f64(1.0);
        assert_eq!(slots_per_frame(frame, Nanos::from_micros(325)), 3076);
        assert_eq!(slots_per_frame(frame, Nanos::from_micros(858)), 1165);
        assert_eq!(slots_per_frame(frame, Nanos::from_micros(1391)), 718);
        assert_eq!(slots_per_frame(frame, frame), 1);
    }

    #[test]
    fn stdma_minus_csma_is_four_micros() {
        let t = TimingParams::default();
        for n in [1u32, 7, 100, 255, 300, 499, 500, 1500] {
            let d = stdma_tx_time(n, &t).0 as i64 - csma_tx_time(n, &t).0 as i64;
            assert_eq!(d, 4_000, "length {n}");
        }
    }

    #[test]
    fn load_is_idempotent() {
        let cfg = load_config("heartbeat_rate = 5\nsensing_range = 500\nwarmup = 12.5\nmac_protocol = \"stdma\"").unwrap();
        let again = load_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash_hex(), again.hash_hex());
    }

    #[test]
    fn scaling_keeps_density_knobs() {
        let cfg = ScenarioConfig::default().scaled(0.25);
        assert_eq!(cfg.road_length, 3000.0);
        assert_eq!(cfg.sim_duration, 1350.0);
        assert_eq!(cfg.mean_interarrival, 3.0);
        assert_eq!(cfg.sensing_range, 1000.0);
        assert!((cfg.warmup_secs() - 3000.0 / (83.0 / 3.6)).abs() < 1e-9);
    }
}
