//! Flight-path safety monitor.
//!
//! Ingests N GPS receiver objects, derives the canonical reported position
//! by per-coordinate median voting, checks it against the configured flight
//! envelope and drives the safety state machine: switch to the redundant
//! flight controller on a breach, cut motors and trigger the parachute if
//! no redundancy exists or the redundant controller fails to recover within
//! the grace period.

use crate::channel::SerialChannel;
use crate::dpr::ActiveDpr;
use crate::wire::{
    self, GpsPositionObject, HorusProfile, ReportedPositionObject, GPS_ID_BASE,
    REPORTED_POSITION_ID, STATUS_RECEIVER_FAULT, STATUS_VALID_FIX,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Meters per degree of latitude (spherical approximation).
const METERS_PER_DEGREE: f64 = 111_320.0;

/// Default maximum pairwise horizontal deviation before receivers are
/// flagged as disagreeing, meters.
pub const DEFAULT_EPSILON_HORIZONTAL_M: f64 = 50.0;
/// Default maximum pairwise vertical deviation, meters.
pub const DEFAULT_EPSILON_VERTICAL_M: f64 = 10.0;
/// Default cycles the redundant controller gets to recover before cutoff.
pub const DEFAULT_GRACE_CYCLES: u32 = 20;
/// Monitor update period, milliseconds.
pub const CYCLE_MS: u32 = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MonitorError {
    #[error("no valid receiver in this cycle")]
    NoValidReceiver,
    #[error("flight envelope invalid: {0}")]
    BadEnvelope(String),
}

/// Closed horizontal polygon plus an altitude band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightEnvelope {
    /// Polygon vertices as (latitude, longitude) degrees.
    pub vertices: Vec<(f64, f64)>,
    pub altitude_min_m: f64,
    pub altitude_max_m: f64,
}

fn segments_properly_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    fn orient(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> f64 {
        (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)
    }
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0
}

impl FlightEnvelope {
    /// The polygon must have at least 3 vertices and be simple.
    pub fn validate(&self) -> Result<(), MonitorError> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(MonitorError::BadEnvelope(format!(
                "polygon needs >= 3 vertices, has {n}"
            )));
        }
        if self.altitude_min_m >= self.altitude_max_m {
            return Err(MonitorError::BadEnvelope(
                "altitude band is empty".into(),
            ));
        }
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            for j in i + 1..n {
                // skip adjacent edges (they share a vertex)
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let c = self.vertices[j];
                let d = self.vertices[(j + 1) % n];
                if segments_properly_intersect(a, b, c, d) {
                    return Err(MonitorError::BadEnvelope(format!(
                        "polygon self-intersects between edges {i} and {j}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn on_boundary(&self, lat: f64, lon: f64) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (ax, ay) = self.vertices[i];
            let (bx, by) = self.vertices[(i + 1) % n];
            let cross = (bx - ax) * (lon - ay) - (by - ay) * (lat - ax);
            if cross == 0.0 {
                let within_x = lat >= ax.min(bx) && lat <= ax.max(bx);
                let within_y = lon >= ay.min(by) && lon <= ay.max(by);
                if within_x && within_y {
                    return true;
                }
            }
        }
        false
    }

    /// Even-odd point-in-polygon with the boundary counting as inside: an
    /// on-fence reading must not trigger an irreversible cutoff.
    pub fn contains_horizontal(&self, lat: f64, lon: f64) -> bool {
        if self.on_boundary(lat, lon) {
            return true;
        }
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[j];
            if (yi > lon) != (yj > lon) {
                let x_cross = (xj - xi) * (lon - yi) / (yj - yi) + xi;
                if lat < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn contains(&self, lat: f64, lon: f64, alt: f64) -> bool {
        self.contains_horizontal(lat, lon)
            && alt >= self.altitude_min_m
            && alt <= self.altitude_max_m
    }
}

/// Result of the per-coordinate median vote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VoteResult {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub contributing: usize,
    /// Max pairwise deviation among contributing receivers exceeded epsilon.
    pub disagreement: bool,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Approximate horizontal distance in meters between two (lat, lon) points.
pub fn horizontal_distance_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let mean_lat = ((a.0 + b.0) / 2.0).to_radians();
    let dlat = (a.0 - b.0) * METERS_PER_DEGREE;
    let dlon = (a.1 - b.1) * METERS_PER_DEGREE * mean_lat.cos();
    (dlat * dlat + dlon * dlon).sqrt()
}

/// Per-coordinate median over receivers that are flagged valid upstream
/// (CRC and freshness) and report a valid fix.
pub fn derive_position(
    receivers: &[(GpsPositionObject, bool)],
    epsilon_horizontal_m: f64,
    epsilon_vertical_m: f64,
) -> Result<VoteResult, MonitorError> {
    let contributing: Vec<&GpsPositionObject> = receivers
        .iter()
        .filter(|(obj, valid)| *valid && obj.status & STATUS_VALID_FIX != 0)
        .map(|(obj, _)| obj)
        .collect();
    if contributing.is_empty() {
        return Err(MonitorError::NoValidReceiver);
    }

    let mut lats: Vec<f64> = contributing.iter().map(|o| o.latitude).collect();
    let mut lons: Vec<f64> = contributing.iter().map(|o| o.longitude).collect();
    let mut alts: Vec<f64> = contributing.iter().map(|o| o.altitude).collect();

    let mut disagreement = false;
    for i in 0..contributing.len() {
        for j in i + 1..contributing.len() {
            let a = contributing[i];
            let b = contributing[j];
            let horizontal =
                horizontal_distance_m((a.latitude, a.longitude), (b.latitude, b.longitude));
            let vertical = (a.altitude - b.altitude).abs();
            if horizontal > epsilon_horizontal_m || vertical > epsilon_vertical_m {
                disagreement = true;
            }
        }
    }

    Ok(VoteResult {
        latitude: median(&mut lats),
        longitude: median(&mut lons),
        altitude: median(&mut alts),
        contributing: contributing.len(),
        disagreement,
    })
}

/// Outcome of the envelope check fed into the state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeCheck {
    Inside,
    Outside,
    /// Monitoring fault (no valid receiver); escalates like a breach.
    Fault,
}

/// Safety modes; escalation is one-way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SafetyMode {
    Nominal,
    SwitchedRedundant,
    Cutoff,
}

/// Actions the monitor commands through its relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyAction {
    SwitchPwmRelay,
    CutMotors,
    TriggerParachute,
}

/// The safety state machine.
#[derive(Debug, Clone, Serialize)]
pub struct SafetyState {
    pub mode: SafetyMode,
    pub breach_counter: u32,
    pub redundant_controller_present: bool,
    pub parachute_triggered: bool,
    pub grace_cycles: u32,
}

impl SafetyState {
    pub fn new(redundant_controller_present: bool, grace_cycles: u32) -> Self {
        SafetyState {
            mode: SafetyMode::Nominal,
            breach_counter: 0,
            redundant_controller_present,
            parachute_triggered: false,
            grace_cycles,
        }
    }

    /// Advances the state machine by one check. Returns the actions
    /// commanded this step. Cutoff is absorbing.
    pub fn step(&mut self, check: EnvelopeCheck) -> Vec<SafetyAction> {
        if self.mode == SafetyMode::Cutoff {
            return Vec::new();
        }
        match check {
            EnvelopeCheck::Inside => {
                self.breach_counter = 0;
                Vec::new()
            }
            EnvelopeCheck::Outside | EnvelopeCheck::Fault => match self.mode {
                SafetyMode::Nominal => {
                    if self.redundant_controller_present {
                        self.mode = SafetyMode::SwitchedRedundant;
                        self.breach_counter = 0;
                        vec![SafetyAction::SwitchPwmRelay]
                    } else {
                        self.cutoff()
                    }
                }
                SafetyMode::SwitchedRedundant => {
                    self.breach_counter += 1;
                    if self.breach_counter >= self.grace_cycles {
                        self.cutoff()
                    } else {
                        Vec::new()
                    }
                }
                SafetyMode::Cutoff => unreachable!(),
            },
        }
    }

    fn cutoff(&mut self) -> Vec<SafetyAction> {
        self.mode = SafetyMode::Cutoff;
        self.parachute_triggered = true;
        vec![SafetyAction::CutMotors, SafetyAction::TriggerParachute]
    }
}

/// What one monitor cycle produced; consumed by the harness for metrics.
#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub timestamp: u32,
    pub receiver_valid: Vec<bool>,
    pub vote: Option<VoteResult>,
    pub check: EnvelopeCheck,
    pub actions: Vec<SafetyAction>,
    /// Profile block bytes delivered into the DPR this cycle (post-channel).
    pub dpr_writes: usize,
}

/// The monitor: autarkic, write-only towards the DPR.
pub struct HorusMonitor {
    pub envelope: FlightEnvelope,
    pub state: SafetyState,
    pub epsilon_horizontal_m: f64,
    pub epsilon_vertical_m: f64,
    receiver_trackers: Vec<crate::dpr::FreshnessTracker>,
    stale_threshold: u32,
}

impl HorusMonitor {
    pub fn new(
        envelope: FlightEnvelope,
        redundant_controller_present: bool,
        grace_cycles: u32,
        n_receivers: usize,
        stale_threshold: u32,
    ) -> Result<Self, MonitorError> {
        envelope.validate()?;
        Ok(HorusMonitor {
            envelope,
            state: SafetyState::new(redundant_controller_present, grace_cycles),
            epsilon_horizontal_m: DEFAULT_EPSILON_HORIZONTAL_M,
            epsilon_vertical_m: DEFAULT_EPSILON_VERTICAL_M,
            receiver_trackers: (0..n_receivers)
                .map(|_| crate::dpr::FreshnessTracker::new(CYCLE_MS, stale_threshold))
                .collect(),
            stale_threshold,
        })
    }

    /// One 10 ms tick: pull each receiver reading through its serial link,
    /// vote, build and serialize the profile, push it over the RFID channel
    /// into the DPR (write + rotate), then run the envelope check and the
    /// safety state machine.
    pub fn cycle(
        &mut self,
        readings: &[GpsPositionObject],
        receiver_channels: &mut [SerialChannel],
        rfid: &mut SerialChannel,
        dpr: &mut ActiveDpr,
        cycle: u64,
    ) -> CycleOutcome {
        assert_eq!(readings.len(), receiver_channels.len());
        let timestamp = (cycle as u32) * CYCLE_MS;
        let n = readings.len();

        // receive each reading over its link; CRC failure, missing delivery
        // or a frozen (stale) timestamp invalidates the slot
        let mut received: Vec<GpsPositionObject> = Vec::with_capacity(n);
        let mut valid: Vec<bool> = Vec::with_capacity(n);
        for (k, (reading, channel)) in readings.iter().zip(receiver_channels.iter_mut()).enumerate()
        {
            let frame = wire::encode_gps(reading);
            let deliveries = channel.transmit(&frame.bytes, cycle);
            let mut slot: Option<GpsPositionObject> = None;
            for delivered in &deliveries {
                if delivered.len() == wire::GPS_FRAME_LEN {
                    if let Ok(obj) = wire::decode_gps(delivered) {
                        slot = Some(obj);
                        break;
                    }
                }
            }
            match slot {
                Some(obj) => {
                    let (freshness, _) = self.receiver_trackers[k].observe(obj.timestamp);
                    let fresh = freshness == crate::dpr::Freshness::Fresh;
                    received.push(obj);
                    valid.push(fresh);
                }
                None => {
                    received.push(GpsPositionObject {
                        timestamp,
                        identifier: GPS_ID_BASE + k as u16,
                        status: STATUS_RECEIVER_FAULT,
                        ..GpsPositionObject::default()
                    });
                    valid.push(false);
                }
            }
        }

        let paired: Vec<(GpsPositionObject, bool)> = received
            .iter()
            .copied()
            .zip(valid.iter().copied())
            .collect();
        let vote = derive_position(&paired, self.epsilon_horizontal_m, self.epsilon_vertical_m);

        let reported_fields = match &vote {
            Ok(v) => GpsPositionObject {
                timestamp,
                identifier: REPORTED_POSITION_ID,
                status: STATUS_VALID_FIX,
                latitude: v.latitude,
                longitude: v.longitude,
                altitude: v.altitude,
                ..GpsPositionObject::default()
            },
            Err(_) => GpsPositionObject {
                timestamp,
                identifier: REPORTED_POSITION_ID,
                status: STATUS_RECEIVER_FAULT,
                ..GpsPositionObject::default()
            },
        };

        let profile = HorusProfile {
            reported: ReportedPositionObject {
                fields: reported_fields,
                position_crc: 0,
            },
            receivers: received,
        };
        let block = wire::serialize_profile(&profile);

        // write-only relationship to the DPR: transmit, then rotate per
        // accepted write
        let mut dpr_writes = 0;
        for delivered in rfid.transmit(&block.bytes, cycle) {
            if dpr.write("horus_profile", &delivered).is_ok() {
                dpr.rotate("horus_profile").expect("region exists");
                dpr_writes += 1;
            }
        }

        let (check, vote_result) = match vote {
            Ok(v) => {
                let inside = self.envelope.contains(v.latitude, v.longitude, v.altitude);
                (
                    if inside {
                        EnvelopeCheck::Inside
                    } else {
                        EnvelopeCheck::Outside
                    },
                    Some(v),
                )
            }
            Err(_) => (EnvelopeCheck::Fault, None),
        };
        let actions = self.state.step(check);

        CycleOutcome {
            timestamp,
            receiver_valid: valid,
            vote: vote_result,
            check,
            actions,
            dpr_writes,
        }
    }

    pub fn stale_threshold(&self) -> u32 {
        self.stale_threshold
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gps_at(lat: f64, lon: f64, alt: f64) -> GpsPositionObject {
        GpsPositionObject {
            timestamp: 10,
            identifier: GPS_ID_BASE,
            status: STATUS_VALID_FIX,
            latitude: lat,
            longitude: lon,
            altitude: alt,
            ..GpsPositionObject::default()
        }
    }

    fn square_envelope() -> FlightEnvelope {
        FlightEnvelope {
            vertices: vec![(47.0, 8.0), (47.0, 9.0), (48.0, 9.0), (48.0, 8.0)],
            altitude_min_m: 0.0,
            altitude_max_m: 500.0,
        }
    }

    #[test]
    fn three_identical_positions_vote_to_that_position() {
        let receivers: Vec<_> = (0..3).map(|_| (gps_at(47.5, 8.5, 100.0), true)).collect();
        let vote = derive_position(&receivers, 50.0, 10.0).unwrap();
        assert_eq!(vote.latitude, 47.5);
        assert_eq!(vote.longitude, 8.5);
        assert_eq!(vote.contributing, 3);
        assert!(!vote.disagreement);
    }

    #[test]
    fn median_picks_the_middle_latitude_and_flags_the_outlier() {
        let receivers = vec![
            (gps_at(47.0000, 8.5, 100.0), true),
            (gps_at(47.0001, 8.5, 100.0), true),
            (gps_at(47.5000, 8.5, 100.0), true),
        ];
        let vote = derive_position(&receivers, 50.0, 10.0).unwrap();
        assert_eq!(vote.latitude, 47.0001);
        assert!(vote.disagreement, "0.5 degree outlier exceeds 50 m");
    }

    #[test]
    fn single_receiver_passes_through() {
        let receivers = vec![(gps_at(47.2, 8.3, 120.0), true)];
        let vote = derive_position(&receivers, 50.0, 10.0).unwrap();
        assert_eq!((vote.latitude, vote.longitude, vote.altitude), (47.2, 8.3, 120.0));
        assert_eq!(vote.contributing, 1);
    }

    #[test]
    fn no_valid_receiver_is_a_fault() {
        let mut bad = gps_at(47.0, 8.0, 100.0);
        bad.status = 0; // no valid fix
        let receivers = vec![(bad, true), (gps_at(47.0, 8.0, 100.0), false)];
        assert_eq!(
            derive_position(&receivers, 50.0, 10.0),
            Err(MonitorError::NoValidReceiver)
        );
    }

    #[test]
    fn even_count_averages_the_middle_pair() {
        let receivers = vec![
            (gps_at(47.0, 8.0, 100.0), true),
            (gps_at(47.0002, 8.0, 102.0), true),
        ];
        let vote = derive_position(&receivers, 50.0, 10.0).unwrap();
        assert!((vote.latitude - 47.0001).abs() < 1e-12);
        assert!((vote.altitude - 101.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_centroid_is_inside() {
        let env = square_envelope();
        assert!(env.contains(47.5, 8.5, 250.0));
    }

    #[test]
    fn envelope_point_outside_vertex() {
        let env = square_envelope();
        assert!(!env.contains(49.0, 9.0, 250.0));
        assert!(!env.contains(47.5, 8.5, 600.0), "altitude above band");
    }

    #[test]
    fn envelope_edge_point_counts_as_inside() {
        let env = square_envelope();
        assert!(env.contains_horizontal(47.0, 8.5)); // on the southern edge
        assert!(env.contains_horizontal(47.0, 8.0)); // on a vertex
    }

    #[test]
    fn self_intersecting_polygon_rejected() {
        let env = FlightEnvelope {
            vertices: vec![(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)],
            altitude_min_m: 0.0,
            altitude_max_m: 100.0,
        };
        assert!(matches!(env.validate(), Err(MonitorError::BadEnvelope(_))));
    }

    #[test]
    fn nominal_breach_with_redundancy_switches() {
        let mut state = SafetyState::new(true, 20);
        let actions = state.step(EnvelopeCheck::Outside);
        assert_eq!(state.mode, SafetyMode::SwitchedRedundant);
        assert_eq!(actions, vec![SafetyAction::SwitchPwmRelay]);
        assert_eq!(state.breach_counter, 0);
    }

    #[test]
    fn nominal_breach_without_redundancy_cuts_off_with_parachute() {
        let mut state = SafetyState::new(false, 20);
        let actions = state.step(EnvelopeCheck::Outside);
        assert_eq!(state.mode, SafetyMode::Cutoff);
        assert!(state.parachute_triggered);
        assert_eq!(
            actions,
            vec![SafetyAction::CutMotors, SafetyAction::TriggerParachute]
        );
    }

    #[test]
    fn inside_keeps_nominal() {
        let mut state = SafetyState::new(true, 20);
        assert!(state.step(EnvelopeCheck::Inside).is_empty());
        assert_eq!(state.mode, SafetyMode::Nominal);
        assert_eq!(state.breach_counter, 0);
    }

    #[test]
    fn grace_period_expiry_escalates_to_cutoff() {
        let mut state = SafetyState::new(true, 20);
        state.step(EnvelopeCheck::Outside);
        for i in 1..20 {
            let actions = state.step(EnvelopeCheck::Outside);
            if i < 20 && state.mode == SafetyMode::SwitchedRedundant {
                assert!(actions.is_empty(), "step {i}");
            }
        }
        // 20th outside step after the switch reaches the grace limit
        let actions = state.step(EnvelopeCheck::Outside);
        assert_eq!(state.mode, SafetyMode::Cutoff);
        assert!(actions.contains(&SafetyAction::CutMotors));
    }

    #[test]
    fn no_reversion_from_switched_redundant() {
        let mut state = SafetyState::new(true, 20);
        state.step(EnvelopeCheck::Outside);
        state.step(EnvelopeCheck::Inside);
        assert_eq!(state.mode, SafetyMode::SwitchedRedundant);
        assert_eq!(state.breach_counter, 0);
    }

    #[test]
    fn cutoff_is_absorbing() {
        let mut state = SafetyState::new(false, 20);
        state.step(EnvelopeCheck::Outside);
        for check in [EnvelopeCheck::Inside, EnvelopeCheck::Outside, EnvelopeCheck::Fault] {
            assert!(state.step(check).is_empty());
            assert_eq!(state.mode, SafetyMode::Cutoff);
            assert!(state.parachute_triggered);
        }
    }

    #[test]
    fn fault_escalates_like_a_breach() {
        let mut state = SafetyState::new(true, 20);
        state.step(EnvelopeCheck::Fault);
        assert_eq!(state.mode, SafetyMode::SwitchedRedundant);
    }
}
