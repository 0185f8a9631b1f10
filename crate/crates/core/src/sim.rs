//! Deterministic cycle-driven simulation of the whole system.
//!
//! One logical 10 ms tick drives the monitor and the hub in lockstep,
//! monitor first: world update → monitor cycle → hub cycle → base-station
//! intake. The base station is a sink that CRC-checks arriving frames and
//! counts results. All randomness is derived from the scenario seed, so a
//! run is a pure function of (scenario, seed).

use crate::channel::{Disposition, SerialChannel};
use crate::dpr::ActiveDpr;
use crate::hub::{encode_downlink, CommHub, HubEvent};
use crate::metrics::{Event, MetricsRecord, MetricsWriter};
use crate::monitor::{HorusMonitor, SafetyMode, CYCLE_MS};
use crate::scenario::{derive_seed, ConfigInvalid, Scenario, TimedEvent};
use crate::wire::{GpsPositionObject, GPS_ID_BASE, STATUS_VALID_FIX};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use thiserror::Error;

const METERS_PER_DEGREE: f64 = 111_320.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigInvalid),
    #[error("simulation invariant violated: {0}")]
    Invariant(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Exit status for a scenario that fails to parse or validate.
pub const EXIT_CONFIG_ERROR: i32 = 2;
/// Exit status for an internal invariant violation (a simulation bug).
pub const EXIT_INVARIANT_VIOLATION: i32 = 3;

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunSummary {
    pub cycles: u64,
    pub uplink_frames: u64,
    pub crc_failures: u64,
    pub safety_transitions: u64,
    pub denials: u64,
    pub final_mode: SafetyMode,
    pub base_station_frames_ok: u64,
    pub base_station_frames_bad: u64,
}

pub struct Simulation {
    scenario: Scenario,
    monitor: HorusMonitor,
    hub: CommHub,
    dpr: ActiveDpr,
    receiver_channels: Vec<SerialChannel>,
    receiver_cursors: Vec<usize>,
    rfid: SerialChannel,
    rfid_cursor: usize,
    radio: SerialChannel,
    radio_cursor: usize,
    world_rng: ChaCha8Rng,
    summary: RunSummary,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let map = scenario.memory_map()?;
        let thresholds = scenario.thresholds.clone();
        let mut monitor = HorusMonitor::new(
            scenario.envelope.clone(),
            scenario.redundant_controller_present,
            thresholds.grace_cycles,
            scenario.receivers.count,
            thresholds.stale_threshold,
        )
        .map_err(|e| ConfigInvalid {
            field: "envelope".into(),
            reason: e.to_string(),
        })?;
        monitor.epsilon_horizontal_m = thresholds.epsilon_horizontal_m;
        monitor.epsilon_vertical_m = thresholds.epsilon_vertical_m;

        let make_channel = |name: &str| {
            let config = scenario.channels.get(name).cloned().unwrap_or_default();
            SerialChannel::new(name, config.to_fault_model(scenario.seed, name))
        };
        let receiver_channels: Vec<SerialChannel> = (0..scenario.receivers.count)
            .map(|k| make_channel(&format!("gps{k}")))
            .collect();
        let n = receiver_channels.len();

        Ok(Simulation {
            monitor,
            hub: CommHub::default(),
            dpr: ActiveDpr::with_thresholds(map, CYCLE_MS, thresholds.stale_threshold),
            receiver_channels,
            receiver_cursors: vec![0; n],
            rfid: make_channel("rfid"),
            rfid_cursor: 0,
            radio: make_channel("radio"),
            radio_cursor: 0,
            world_rng: ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, "world")),
            summary: RunSummary {
                cycles: 0,
                uplink_frames: 0,
                crc_failures: 0,
                safety_transitions: 0,
                denials: 0,
                final_mode: SafetyMode::Nominal,
                base_station_frames_ok: 0,
                base_station_frames_bad: 0,
            },
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn dpr(&self) -> &ActiveDpr {
        &self.dpr
    }

    pub fn hub(&self) -> &CommHub {
        &self.hub
    }

    pub fn safety_mode(&self) -> SafetyMode {
        self.monitor.state.mode
    }

    fn normal_sample(&mut self) -> f64 {
        // Box-Muller from two uniform draws
        let u1: f64 = self.world_rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = self.world_rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn receiver_readings(&mut self, cycle: u64) -> Vec<GpsPositionObject> {
        let (lat, lon, alt) = self.scenario.position_at(cycle);
        let noise_h = self.scenario.receivers.noise_std_m;
        let noise_v = self.scenario.receivers.noise_std_alt_m;
        (0..self.scenario.receivers.count)
            .map(|k| {
                let dlat = self.normal_sample() * noise_h / METERS_PER_DEGREE;
                let dlon =
                    self.normal_sample() * noise_h / (METERS_PER_DEGREE * lat.to_radians().cos());
                let dalt = self.normal_sample() * noise_v;
                GpsPositionObject {
                    timestamp: (cycle as u32) * CYCLE_MS,
                    identifier: GPS_ID_BASE + k as u16,
                    status: STATUS_VALID_FIX,
                    latitude: lat + dlat,
                    longitude: lon + dlon,
                    altitude: alt + dalt,
                    ..GpsPositionObject::default()
                }
            })
            .collect()
    }

    fn emit_channel_faults<W: Write>(
        channel: &SerialChannel,
        cursor: &mut usize,
        cycle: u64,
        metrics: &mut MetricsWriter<W>,
    ) -> std::io::Result<()> {
        for record in &channel.log()[*cursor..] {
            if record.disposition != Disposition::Delivered || record.flipped_bits > 0 {
                metrics.emit(&MetricsRecord {
                    cycle,
                    event: Event::FaultInjected {
                        channel: channel.name.clone(),
                        disposition: record.disposition,
                        flipped_bits: record.flipped_bits,
                        bytes: record.bytes,
                    },
                })?;
            }
        }
        *cursor = channel.log_len();
        Ok(())
    }

    fn apply_timed_events(&mut self, cycle: u64) -> Result<(), SimError> {
        let events = self.scenario.events.clone();
        for event in events {
            let TimedEvent::Freeze { cycle: at, channel } = event;
            if at != cycle {
                continue;
            }
            let target = if channel == "rfid" {
                &mut self.rfid
            } else if channel == "radio" {
                &mut self.radio
            } else {
                let k: usize = channel["gps".len()..].parse().expect("validated name");
                &mut self.receiver_channels[k]
            };
            target.freeze_from(cycle).map_err(|e| {
                SimError::Config(ConfigInvalid {
                    field: "events".into(),
                    reason: e.to_string(),
                })
            })?;
        }
        Ok(())
    }

    fn step<W: Write>(
        &mut self,
        cycle: u64,
        metrics: &mut MetricsWriter<W>,
    ) -> Result<crate::hub::HubCycleReport, SimError> {
        self.apply_timed_events(cycle)?;

        // world update + monitor cycle
        let readings = self.receiver_readings(cycle);
        let outcome = self.monitor.cycle(
            &readings,
            &mut self.receiver_channels,
            &mut self.rfid,
            &mut self.dpr,
            cycle,
        );
        for (k, valid) in outcome.receiver_valid.iter().enumerate() {
            if !valid {
                self.summary.crc_failures += 1;
                metrics.emit(&MetricsRecord {
                    cycle,
                    event: Event::CrcFail {
                        location: "monitor".into(),
                        detail: format!("receiver gps{k} invalid this cycle"),
                    },
                })?;
            }
        }
        for (channel, cursor) in self
            .receiver_channels
            .iter()
            .zip(self.receiver_cursors.iter_mut())
        {
            Self::emit_channel_faults(channel, cursor, cycle, metrics)?;
        }
        Self::emit_channel_faults(&self.rfid, &mut self.rfid_cursor, cycle, metrics)?;
        if !outcome.actions.is_empty() {
            self.summary.safety_transitions += 1;
            metrics.emit(&MetricsRecord {
                cycle,
                event: Event::SafetyTransition {
                    mode: format!("{:?}", self.monitor.state.mode),
                    actions: outcome.actions.clone(),
                },
            })?;
        }

        // hub cycle, with at most one scripted downlink
        let downlink = self
            .scenario
            .downlinks
            .iter()
            .find(|d| d.cycle == cycle)
            .map(|d| {
                let mut frame = encode_downlink(d.source, d.region_index, &d.payload);
                if d.corrupt {
                    frame[0] ^= 0x80;
                }
                frame
            });
        let report = self.hub.cycle(&mut self.dpr, downlink.as_deref(), cycle);
        for event in &report.events {
            let record = match event {
                HubEvent::Denial {
                    source,
                    destination,
                    region,
                } => {
                    self.summary.denials += 1;
                    Event::Denial {
                        source: *source,
                        destination: *destination,
                        region: region.clone(),
                    }
                }
                HubEvent::MalformedDownlink { reason } => {
                    self.summary.crc_failures += 1;
                    Event::CrcFail {
                        location: "downlink".into(),
                        detail: reason.clone(),
                    }
                }
                HubEvent::DownlinkApplied { .. } => continue,
                HubEvent::StaleRegion { region } => Event::Stale {
                    region: region.clone(),
                },
                HubEvent::TimestampGap { region } => Event::Gap {
                    region: region.clone(),
                },
            };
            metrics.emit(&MetricsRecord {
                cycle,
                event: record,
            })?;
        }

        // base-station intake over the radio link
        for uplink in &report.uplinks {
            self.summary.uplink_frames += 1;
            metrics.emit(&MetricsRecord {
                cycle,
                event: Event::Uplink {
                    region: uplink.region.clone(),
                    source: uplink.source,
                    bytes: uplink.payload.len(),
                },
            })?;
            for delivered in self.radio.transmit(&uplink.payload, cycle) {
                self.base_station_intake(&uplink.region, &delivered, cycle, metrics)?;
            }
        }
        Self::emit_channel_faults(&self.radio, &mut self.radio_cursor, cycle, metrics)?;

        self.dpr.check_invariants().map_err(SimError::Invariant)?;
        self.summary.cycles = cycle + 1;
        Ok(report)
    }

    fn base_station_intake<W: Write>(
        &mut self,
        region: &str,
        bytes: &[u8],
        cycle: u64,
        metrics: &mut MetricsWriter<W>,
    ) -> Result<(), SimError> {
        let n = self.scenario.receivers.count;
        if region == "horus_profile" {
            match crate::wire::parse_profile(bytes, n) {
                Ok(parsed) if parsed.flags.iter().all(|&f| f) => {
                    self.summary.base_station_frames_ok += 1;
                }
                Ok(parsed) => {
                    self.summary.base_station_frames_bad += 1;
                    self.summary.crc_failures += 1;
                    let bad: Vec<usize> = parsed
                        .flags
                        .iter()
                        .enumerate()
                        .filter(|(_, &f)| !f)
                        .map(|(i, _)| i)
                        .collect();
                    metrics.emit(&MetricsRecord {
                        cycle,
                        event: Event::CrcFail {
                            location: "base_station".into(),
                            detail: format!("profile objects failed CRC: {bad:?}"),
                        },
                    })?;
                }
                Err(e) => {
                    self.summary.base_station_frames_bad += 1;
                    self.summary.crc_failures += 1;
                    metrics.emit(&MetricsRecord {
                        cycle,
                        event: Event::CrcFail {
                            location: "base_station".into(),
                            detail: e.to_string(),
                        },
                    })?;
                }
            }
        } else {
            // no object format defined for other regions; counted as-is
            self.summary.base_station_frames_ok += 1;
        }
        Ok(())
    }

    /// Runs the whole scenario, streaming metrics. Records appear in cycle
    /// order, one JSON object per line.
    pub fn run<W: Write>(&mut self, metrics: &mut MetricsWriter<W>) -> Result<RunSummary, SimError> {
        self.run_observed(metrics, |_, _| {})
    }

    /// Like [`Simulation::run`] but hands every hub-cycle report to the
    /// observer, e.g. to audit the per-cycle read budget.
    pub fn run_observed<W: Write, F>(
        &mut self,
        metrics: &mut MetricsWriter<W>,
        mut observe: F,
    ) -> Result<RunSummary, SimError>
    where
        F: FnMut(u64, &crate::hub::HubCycleReport),
    {
        for cycle in 0..self.scenario.cycles {
            let report = self.step(cycle, metrics)?;
            observe(cycle, &report);
        }
        self.summary.final_mode = self.monitor.state.mode;
        Ok(self.summary.clone())
    }
}

/// Convenience wrapper used by the CLI and tests: parse, run, write metrics.
pub fn run_scenario<W: Write>(
    scenario: Scenario,
    out: W,
) -> Result<(RunSummary, W), SimError> {
    let mut sim = Simulation::new(scenario)?;
    let mut metrics = MetricsWriter::new(out);
    let summary = sim.run(&mut metrics)?;
    Ok((summary, metrics.into_inner()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::PathKeyframe;

    fn base_scenario() -> Scenario {
        Scenario::from_json(
            r#"{
                "seed": 7,
                "cycles": 50,
                "envelope": {
                    "vertices": [[47.0, 8.0], [47.0, 9.0], [48.0, 9.0], [48.0, 8.0]],
                    "altitude_min_m": 0.0,
                    "altitude_max_m": 500.0
                },
                "receivers": {"count": 3, "noise_std_m": 0.5, "noise_std_alt_m": 0.2},
                "path": [{"cycle": 0, "lat": 47.5, "lon": 8.5, "alt": 120.0}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn nominal_run_is_quiet() {
        let (summary, out) = run_scenario(base_scenario(), Vec::new()).unwrap();
        assert_eq!(summary.cycles, 50);
        assert_eq!(summary.uplink_frames, 50);
        assert_eq!(summary.crc_failures, 0);
        assert_eq!(summary.safety_transitions, 0);
        assert_eq!(summary.base_station_frames_ok, 50);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 50, "only uplink events expected");
        assert!(text.lines().all(|l| l.contains("\"event\":\"uplink\"")));
    }

    #[test]
    fn same_seed_same_metrics_bytes() {
        let (_, a) = run_scenario(base_scenario(), Vec::new()).unwrap();
        let (_, b) = run_scenario(base_scenario(), Vec::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn envelope_exit_triggers_switch_then_cutoff() {
        let mut scenario = base_scenario();
        scenario.cycles = 60;
        scenario.path = vec![
            PathKeyframe { cycle: 0, lat: 47.5, lon: 8.5, alt: 120.0 },
            PathKeyframe { cycle: 19, lat: 47.5, lon: 8.5, alt: 120.0 },
            PathKeyframe { cycle: 20, lat: 50.0, lon: 8.5, alt: 120.0 },
        ];
        let (summary, out) = run_scenario(scenario, Vec::new()).unwrap();
        assert_eq!(summary.safety_transitions, 2);
        assert!(matches!(summary.final_mode, SafetyMode::Cutoff));
        let text = String::from_utf8(out).unwrap();
        let transitions: Vec<&str> = text
            .lines()
            .filter(|l| l.contains("safety_transition"))
            .collect();
        assert!(transitions[0].contains("\"cycle\":20"));
        assert!(transitions[0].contains("SwitchedRedundant"));
        assert!(transitions[1].contains("\"cycle\":40"));
        assert!(transitions[1].contains("Cutoff"));
    }

    #[test]
    fn frozen_rfid_goes_stale_and_faults_surface() {
        let mut scenario = base_scenario();
        scenario.events = vec![TimedEvent::Freeze {
            cycle: 10,
            channel: "rfid".into(),
        }];
        let (_, out) = run_scenario(scenario, Vec::new()).unwrap();
        let text = String::from_utf8(out).unwrap();
        let first_stale = text
            .lines()
            .find(|l| l.contains("\"event\":\"stale\""))
            .expect("stale event present");
        // freeze at 10: unchanged reads at cycles 10, 11, 12 reach the
        // threshold of 3
        assert!(first_stale.contains("\"cycle\":12"), "{first_stale}");
        assert!(text.contains("\"disposition\":\"frozen\""));
    }
}
