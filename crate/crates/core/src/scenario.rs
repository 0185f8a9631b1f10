//! Scenario configuration: everything that determines a run.
//!
//! A scenario plus its seed fully determines the metrics output; equal
//! scenarios and seeds produce byte-identical metrics files.

use crate::channel::{Babble, FaultModel};
use crate::dpr::{MemoryMap, Region};
use crate::monitor::FlightEnvelope;
use crate::wire::ALLOWED_RECEIVER_COUNTS;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("invalid scenario: field {field}: {reason}")]
pub struct ConfigInvalid {
    pub field: String,
    pub reason: String,
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigInvalid {
    ConfigInvalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// A keyframe of the scripted flight path; positions between keyframes are
/// linearly interpolated, and the last keyframe holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathKeyframe {
    pub cycle: u64,
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    pub count: usize,
    /// Gaussian noise on each receiver's horizontal position, meters.
    #[serde(default)]
    pub noise_std_m: f64,
    /// Gaussian noise on altitude, meters.
    #[serde(default)]
    pub noise_std_alt_m: f64,
}

/// Per-channel fault model; the seed defaults to a value derived from the
/// scenario seed and the channel name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default)]
    pub bit_flip_probability: f64,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub duplicate_probability: f64,
    #[serde(default)]
    pub freeze: bool,
    #[serde(default)]
    pub babble: Option<Babble>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ChannelConfig {
    pub fn to_fault_model(&self, scenario_seed: u64, channel_name: &str) -> FaultModel {
        FaultModel {
            bit_flip_probability: self.bit_flip_probability,
            drop_probability: self.drop_probability,
            duplicate_probability: self.duplicate_probability,
            freeze: self.freeze,
            babble: self.babble.clone(),
            seed: self.seed.unwrap_or_else(|| derive_seed(scenario_seed, channel_name)),
        }
    }
}

/// FNV-1a over the channel name, mixed with the scenario seed.
pub fn derive_seed(scenario_seed: u64, name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    scenario_seed ^ hash
}

/// Timed fault events applied at the start of their cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimedEvent {
    /// From this cycle the channel re-delivers its last frame.
    Freeze { cycle: u64, channel: String },
}

/// A base-station downlink scripted for one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedDownlink {
    pub cycle: u64,
    pub source: crate::dpr::FunctionId,
    pub region_index: u32,
    #[serde(with = "crate::channel::hex_bytes")]
    pub payload: Vec<u8>,
    /// Flip one bit of the encoded frame to exercise the malformed path.
    #[serde(default)]
    pub corrupt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_epsilon_h")]
    pub epsilon_horizontal_m: f64,
    #[serde(default = "default_epsilon_v")]
    pub epsilon_vertical_m: f64,
    #[serde(default = "default_stale")]
    pub stale_threshold: u32,
    #[serde(default = "default_grace")]
    pub grace_cycles: u32,
}

fn default_epsilon_h() -> f64 {
    crate::monitor::DEFAULT_EPSILON_HORIZONTAL_M
}
fn default_epsilon_v() -> f64 {
    crate::monitor::DEFAULT_EPSILON_VERTICAL_M
}
fn default_stale() -> u32 {
    crate::dpr::DEFAULT_STALE_THRESHOLD
}
fn default_grace() -> u32 {
    crate::monitor::DEFAULT_GRACE_CYCLES
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            epsilon_horizontal_m: default_epsilon_h(),
            epsilon_vertical_m: default_epsilon_v(),
            stale_threshold: default_stale(),
            grace_cycles: default_grace(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub cycles: u64,
    /// Custom memory map; the default three-region map when omitted.
    #[serde(default)]
    pub memory_map: Option<Vec<Region>>,
    pub envelope: FlightEnvelope,
    pub receivers: ReceiverConfig,
    pub path: Vec<PathKeyframe>,
    /// Channel names: "gps0".."gpsN-1", "rfid", "radio".
    #[serde(default)]
    pub channels: BTreeMap<String, ChannelConfig>,
    #[serde(default)]
    pub events: Vec<TimedEvent>,
    #[serde(default)]
    pub downlinks: Vec<ScriptedDownlink>,
    #[serde(default = "default_true")]
    pub redundant_controller_present: bool,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_true() -> bool {
    true
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigInvalid> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| invalid("(parse)", e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.receivers.count).map(|k| format!("gps{k}")).collect();
        names.push("rfid".into());
        names.push("radio".into());
        names
    }

    pub fn memory_map(&self) -> Result<MemoryMap, ConfigInvalid> {
        match &self.memory_map {
            Some(regions) => MemoryMap::new(regions.clone())
                .map_err(|e| invalid("memory_map", e.to_string())),
            None => Ok(MemoryMap::default_map()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        if self.cycles == 0 {
            return Err(invalid("cycles", "must be nonzero"));
        }
        if !ALLOWED_RECEIVER_COUNTS.contains(&self.receivers.count) {
            return Err(invalid(
                "receivers.count",
                format!("{} not in {{1, 2, 3, 5}}", self.receivers.count),
            ));
        }
        if self.receivers.noise_std_m < 0.0 || self.receivers.noise_std_alt_m < 0.0 {
            return Err(invalid("receivers.noise_std_m", "must be non-negative"));
        }
        self.envelope
            .validate()
            .map_err(|e| invalid("envelope", e.to_string()))?;
        if self.path.is_empty() {
            return Err(invalid("path", "needs at least one keyframe"));
        }
        if self.path[0].cycle != 0 {
            return Err(invalid("path", "first keyframe must be at cycle 0"));
        }
        for pair in self.path.windows(2) {
            if pair[1].cycle <= pair[0].cycle {
                return Err(invalid("path", "keyframe cycles must be strictly increasing"));
            }
        }
        let known = self.channel_names();
        for (name, config) in &self.channels {
            if !known.contains(name) {
                return Err(invalid(
                    "channels",
                    format!("unknown channel {name:?} (known: {known:?})"),
                ));
            }
            config
                .to_fault_model(self.seed, name)
                .validate()
                .map_err(|e| invalid(&format!("channels.{name}"), e))?;
        }
        for event in &self.events {
            let TimedEvent::Freeze { cycle, channel } = event;
            if !known.contains(channel) {
                return Err(invalid("events", format!("unknown channel {channel:?}")));
            }
            if *cycle >= self.cycles {
                return Err(invalid("events", format!("cycle {cycle} beyond run length")));
            }
        }
        let map = self.memory_map()?;
        for downlink in &self.downlinks {
            if downlink.cycle >= self.cycles {
                return Err(invalid("downlinks", format!("cycle {} beyond run length", downlink.cycle)));
            }
            if downlink.region_index as usize >= map.regions.len() {
                return Err(invalid(
                    "downlinks",
                    format!("region_index {} out of range", downlink.region_index),
                ));
            }
        }
        if self.thresholds.stale_threshold == 0 {
            return Err(invalid("thresholds.stale_threshold", "must be nonzero"));
        }
        if self.thresholds.grace_cycles == 0 {
            return Err(invalid("thresholds.grace_cycles", "must be nonzero"));
        }
        Ok(())
    }

    /// True position at `cycle`: linear interpolation between keyframes,
    /// holding the last one.
    pub fn position_at(&self, cycle: u64) -> (f64, f64, f64) {
        let path = &self.path;
        if cycle >= path[path.len() - 1].cycle {
            let last = path[path.len() - 1];
            return (last.lat, last.lon, last.alt);
        }
        let idx = path.partition_point(|k| k.cycle <= cycle);
        let (a, b) = (path[idx - 1], path[idx]);
        let t = (cycle - a.cycle) as f64 / (b.cycle - a.cycle) as f64;
        (
            a.lat + (b.lat - a.lat) * t,
            a.lon + (b.lon - a.lon) * t,
            a.alt + (b.alt - a.alt) * t,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn minimal_json() -> String {
        r#"{
            "seed": 1,
            "cycles": 100,
            "envelope": {
                "vertices": [[47.0, 8.0], [47.0, 9.0], [48.0, 9.0], [48.0, 8.0]],
                "altitude_min_m": 0.0,
                "altitude_max_m": 500.0
            },
            "receivers": {"count": 3, "noise_std_m": 0.5, "noise_std_alt_m": 0.2},
            "path": [{"cycle": 0, "lat": 47.5, "lon": 8.5, "alt": 120.0}]
        }"#
        .to_string()
    }

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::from_json(&minimal_json()).unwrap();
        assert!(s.redundant_controller_present);
        assert_eq!(s.thresholds.grace_cycles, 20);
        assert_eq!(s.thresholds.stale_threshold, 3);
        assert_eq!(s.channel_names(), vec!["gps0", "gps1", "gps2", "rfid", "radio"]);
    }

    #[test]
    fn bad_receiver_count_names_the_field() {
        let text = minimal_json().replace("\"count\": 3", "\"count\": 4");
        let err = Scenario::from_json(&text).unwrap_err();
        assert_eq!(err.field, "receivers.count");
    }

    #[test]
    fn unknown_channel_rejected() {
        let mut s = Scenario::from_json(&minimal_json()).unwrap();
        s.channels.insert("bogus".into(), ChannelConfig::default());
        assert_eq!(s.validate().unwrap_err().field, "channels");
    }

    #[test]
    fn path_interpolates_and_holds() {
        let mut s = Scenario::from_json(&minimal_json()).unwrap();
        s.path = vec![
            PathKeyframe { cycle: 0, lat: 47.0, lon: 8.0, alt: 100.0 },
            PathKeyframe { cycle: 10, lat: 47.0, lon: 9.0, alt: 200.0 },
        ];
        assert_eq!(s.position_at(0), (47.0, 8.0, 100.0));
        assert_eq!(s.position_at(5), (47.0, 8.5, 150.0));
        assert_eq!(s.position_at(10), (47.0, 9.0, 200.0));
        assert_eq!(s.position_at(99), (47.0, 9.0, 200.0));
    }

    #[test]
    fn derived_seeds_differ_per_channel() {
        assert_ne!(derive_seed(1, "gps0"), derive_seed(1, "gps1"));
        assert_ne!(derive_seed(1, "rfid"), derive_seed(2, "rfid"));
    }
}
