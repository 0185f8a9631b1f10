//! Flight-controller communication hub.
//!
//! Reads DPR regions at fixed intervals, forwards frames to the base
//! station without any processing beyond framing, writes base-station
//! downlink into the DPR, and enforces the criticality matrix. Per-cycle
//! work is a fixed byte budget independent of content or faults: every
//! failure becomes a logged event, never a retry.

use crate::crc::framing_crc;
use crate::dpr::{ActiveDpr, DprError, Freshness, FunctionId};
use crate::wire::{POSITION_CRC_OFFSET, POSITION_WORD_RANGE, REPORTED_FRAME_LEN};
use serde::Serialize;
use thiserror::Error;

/// Criticality of a communication relationship. Ordered for scheduling:
/// higher criticality is forwarded first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum CriticalityLevel {
    Forbidden,
    NonCritical,
    SafetyRelevant,
}

/// A transfer over a forbidden cell; must not occur and must be logged.
#[derive(Debug, PartialEq, Eq)]
pub struct Denied {
    pub source: FunctionId,
    pub destination: FunctionId,
}

impl core::fmt::Display for Denied {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "transfer {:?} -> {:?} is forbidden",
            self.source, self.destination
        )
    }
}

impl std::error::Error for Denied {}

/// The criticality matrix: (source, destination) -> level. Every undefined
/// cell, including all writes into the safety monitor and all self-writes,
/// is forbidden.
pub struct PermissionMatrix {
    cells: [[CriticalityLevel; 4]; 4],
}

impl Default for PermissionMatrix {
    fn default() -> Self {
        use CriticalityLevel::{NonCritical, SafetyRelevant};
        use FunctionId::{ActiveLoad, BaseStation, FlightController, Horus};
        let mut cells = [[CriticalityLevel::Forbidden; 4]; 4];
        let mut set = |src: FunctionId, dst: FunctionId, level| {
            cells[src.to_wire() as usize][dst.to_wire() as usize] = level;
        };
        set(BaseStation, FlightController, SafetyRelevant);
        set(BaseStation, ActiveLoad, NonCritical);
        set(Horus, BaseStation, SafetyRelevant);
        set(Horus, FlightController, SafetyRelevant);
        set(FlightController, BaseStation, SafetyRelevant);
        set(FlightController, ActiveLoad, NonCritical);
        set(ActiveLoad, BaseStation, NonCritical);
        set(ActiveLoad, FlightController, NonCritical);
        PermissionMatrix { cells }
    }
}

impl PermissionMatrix {
    pub fn level(&self, source: FunctionId, destination: FunctionId) -> CriticalityLevel {
        self.cells[source.to_wire() as usize][destination.to_wire() as usize]
    }

    /// Returns the cell's level; forbidden cells yield a denial carrying
    /// both endpoints.
    pub fn check(
        &self,
        source: FunctionId,
        destination: FunctionId,
    ) -> Result<CriticalityLevel, Denied> {
        match self.level(source, destination) {
            CriticalityLevel::Forbidden => Err(Denied {
                source,
                destination,
            }),
            level => Ok(level),
        }
    }
}

/// A region forwarded verbatim to the base station.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UplinkFrame {
    pub source: FunctionId,
    pub region: String,
    /// Byte-identical to the DPR read that produced it.
    #[serde(with = "crate::channel::hex_bytes")]
    pub payload: Vec<u8>,
    pub cycle: u64,
}

/// Downlink wire format: source function id (u32 LE), destination region
/// index (u32 LE), payload, framing CRC (u32 LE) over all preceding bytes.
pub fn encode_downlink(source: FunctionId, region_index: u32, payload: &[u8]) -> Vec<u8> {
    let mut frame = Vec::with_capacity(12 + payload.len());
    frame.extend_from_slice(&source.to_wire().to_le_bytes());
    frame.extend_from_slice(&region_index.to_le_bytes());
    frame.extend_from_slice(payload);
    let crc = framing_crc(&frame);
    frame.extend_from_slice(&crc.to_le_bytes());
    frame
}

/// Events a hub cycle can log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HubEvent {
    Denial {
        source: FunctionId,
        destination: FunctionId,
        region: String,
    },
    MalformedDownlink {
        reason: String,
    },
    DownlinkApplied {
        source: FunctionId,
        region: String,
        bytes: usize,
    },
    StaleRegion {
        region: String,
    },
    TimestampGap {
        region: String,
    },
}

/// What one hub cycle did: the fixed read budget, the uplink frames in
/// transmission order, and logged events.
#[derive(Debug, Clone)]
pub struct HubCycleReport {
    /// (region, bytes read) for every region read this cycle.
    pub reads: Vec<(String, usize)>,
    pub uplinks: Vec<UplinkFrame>,
    pub events: Vec<HubEvent>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PositionReadError {
    #[error("position data is stale")]
    StalePosition,
    #[error("position CRC mismatch")]
    PositionCrcMismatch,
    #[error("region never written")]
    NeverWritten,
    #[error(transparent)]
    Dpr(#[from] DprError),
}

/// The communication hub.
#[derive(Default)]
pub struct CommHub {
    matrix: PermissionMatrix,
}

impl CommHub {
    pub fn matrix(&self) -> &PermissionMatrix {
        &self.matrix
    }

    /// One hub interval: read every forwardable region exactly once (fixed
    /// byte budget), emit permitted regions as uplink frames ordered
    /// safety-relevant first then by region offset, and apply at most one
    /// downlink frame. A denied or malformed downlink is dropped whole.
    pub fn cycle(
        &mut self,
        dpr: &mut ActiveDpr,
        downlink: Option<&[u8]>,
        cycle: u64,
    ) -> HubCycleReport {
        let mut reads = Vec::new();
        let mut events = Vec::new();

        // regions the hub forwards: produced by another function for
        // forwarding, i.e. everything it does not itself produce
        let mut routes: Vec<(String, usize, FunctionId)> = dpr
            .map()
            .filter(|r| r.producer != FunctionId::FlightController)
            .map(|r| (r.name.clone(), r.offset, r.producer))
            .collect();
        routes.sort_by_key(|(_, offset, producer)| {
            (
                core::cmp::Reverse(self.matrix.level(*producer, FunctionId::BaseStation)),
                *offset,
            )
        });

        let mut uplinks = Vec::new();
        for (region, _, producer) in routes {
            let report = dpr.read(&region).expect("mapped region");
            reads.push((region.clone(), report.bytes.len()));
            match report.freshness {
                Freshness::Stale => events.push(HubEvent::StaleRegion {
                    region: region.clone(),
                }),
                Freshness::NeverWritten => continue,
                Freshness::Fresh => {}
            }
            if report.gap {
                events.push(HubEvent::TimestampGap {
                    region: region.clone(),
                });
            }
            // CRC policy: forward as-is, the base station checks
            match self.matrix.check(producer, FunctionId::BaseStation) {
                Ok(_) => uplinks.push(UplinkFrame {
                    source: producer,
                    region,
                    payload: report.bytes,
                    cycle,
                }),
                Err(denied) => events.push(HubEvent::Denial {
                    source: denied.source,
                    destination: denied.destination,
                    region,
                }),
            }
        }

        if let Some(frame) = downlink {
            self.apply_downlink(dpr, frame, &mut events);
        }

        HubCycleReport {
            reads,
            uplinks,
            events,
        }
    }

    fn apply_downlink(&self, dpr: &mut ActiveDpr, frame: &[u8], events: &mut Vec<HubEvent>) {
        if frame.len() < 12 {
            events.push(HubEvent::MalformedDownlink {
                reason: format!("frame too short ({} bytes)", frame.len()),
            });
            return;
        }
        let crc_at = frame.len() - 4;
        let stored = u32::from_le_bytes(frame[crc_at..].try_into().unwrap());
        if framing_crc(&frame[..crc_at]) != stored {
            events.push(HubEvent::MalformedDownlink {
                reason: "framing CRC mismatch".into(),
            });
            return;
        }
        let source_raw = u32::from_le_bytes(frame[0..4].try_into().unwrap());
        let Some(source) = FunctionId::from_wire(source_raw) else {
            events.push(HubEvent::MalformedDownlink {
                reason: format!("unknown source function {source_raw}"),
            });
            return;
        };
        let region_index = u32::from_le_bytes(frame[4..8].try_into().unwrap()) as usize;
        let Some(region) = dpr.region_by_index(region_index).cloned() else {
            events.push(HubEvent::MalformedDownlink {
                reason: format!("region index {region_index} out of range"),
            });
            return;
        };
        // writing into a region addresses the function that owns it
        if let Err(denied) = self.matrix.check(source, region.producer) {
            events.push(HubEvent::Denial {
                source: denied.source,
                destination: denied.destination,
                region: region.name.clone(),
            });
            return;
        }
        let payload = &frame[8..crc_at];
        match dpr.write(&region.name, payload) {
            Ok(()) => {
                dpr.rotate(&region.name).expect("region exists");
                events.push(HubEvent::DownlinkApplied {
                    source,
                    region: region.name.clone(),
                    bytes: payload.len(),
                });
            }
            Err(err) => events.push(HubEvent::MalformedDownlink {
                reason: err.to_string(),
            }),
        }
    }

    /// Extracts latitude/longitude from the reported-position bytes, but
    /// only if the position CRC verifies and the region is fresh. Inspects
    /// without advancing the freshness counter; the hub's per-cycle read is
    /// the one counted observation.
    pub fn read_position_for_control(
        &self,
        dpr: &ActiveDpr,
    ) -> Result<(f64, f64), PositionReadError> {
        let report = dpr.peek("horus_profile")?;
        match report.freshness {
            Freshness::NeverWritten => return Err(PositionReadError::NeverWritten),
            Freshness::Stale => return Err(PositionReadError::StalePosition),
            Freshness::Fresh => {}
        }
        let reported = &report.bytes[..REPORTED_FRAME_LEN];
        let stored = u32::from_le_bytes(
            reported[POSITION_CRC_OFFSET..POSITION_CRC_OFFSET + 4]
                .try_into()
                .unwrap(),
        );
        if crate::crc::position_crc(&reported[POSITION_WORD_RANGE]) != stored {
            return Err(PositionReadError::PositionCrcMismatch);
        }
        let lat = f64::from_le_bytes(reported[8..16].try_into().unwrap());
        let lon = f64::from_le_bytes(reported[16..24].try_into().unwrap());
        Ok((lat, lon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpr::MemoryMap;
    use crate::wire::{self, GpsPositionObject, HorusProfile, ReportedPositionObject};

    #[test]
    fn matrix_matches_the_criticality_table() {
        use CriticalityLevel::*;
        use FunctionId::*;
        let m = PermissionMatrix::default();
        let expected = [
            (BaseStation, FlightController, SafetyRelevant),
            (BaseStation, ActiveLoad, NonCritical),
            (Horus, BaseStation, SafetyRelevant),
            (Horus, FlightController, SafetyRelevant),
            (FlightController, BaseStation, SafetyRelevant),
            (FlightController, ActiveLoad, NonCritical),
            (ActiveLoad, BaseStation, NonCritical),
            (ActiveLoad, FlightController, NonCritical),
        ];
        let mut permitted = 0;
        for src in FunctionId::ALL {
            for dst in FunctionId::ALL {
                let level = m.level(src, dst);
                let defined = expected.iter().find(|(s, d, _)| *s == src && *d == dst);
                match defined {
                    Some((_, _, want)) => {
                        assert_eq!(level, *want, "{src:?}->{dst:?}");
                        permitted += 1;
                    }
                    None => assert_eq!(level, Forbidden, "{src:?}->{dst:?}"),
                }
            }
        }
        assert_eq!(permitted, 8);
    }

    #[test]
    fn base_station_cannot_write_to_the_monitor() {
        let m = PermissionMatrix::default();
        assert_eq!(
            m.check(FunctionId::BaseStation, FunctionId::Horus),
            Err(Denied {
                source: FunctionId::BaseStation,
                destination: FunctionId::Horus,
            })
        );
    }

    #[test]
    fn self_writes_denied() {
        let m = PermissionMatrix::default();
        for f in FunctionId::ALL {
            assert!(m.check(f, f).is_err(), "{f:?} self-write");
        }
    }

    #[test]
    fn criticality_ordering() {
        assert!(CriticalityLevel::Forbidden < CriticalityLevel::NonCritical);
        assert!(CriticalityLevel::NonCritical < CriticalityLevel::SafetyRelevant);
    }

    fn dpr_with_profile() -> ActiveDpr {
        let mut dpr = ActiveDpr::new(MemoryMap::default_map());
        let profile = HorusProfile {
            reported: ReportedPositionObject {
                fields: GpsPositionObject {
                    timestamp: 10,
                    identifier: wire::REPORTED_POSITION_ID,
                    status: wire::STATUS_VALID_FIX,
                    latitude: 47.4,
                    longitude: 8.6,
                    altitude: 300.0,
                    ..GpsPositionObject::default()
                },
                position_crc: 0,
            },
            receivers: vec![GpsPositionObject::default(); 3],
        };
        let block = wire::serialize_profile(&profile);
        dpr.write("horus_profile", &block.bytes).unwrap();
        dpr.rotate("horus_profile").unwrap();
        dpr
    }

    #[test]
    fn nominal_cycle_reads_fixed_budget_and_uplinks_profile() {
        let mut dpr = dpr_with_profile();
        let mut hub = CommHub::default();
        let report = hub.cycle(&mut dpr, None, 0);
        assert_eq!(
            report.reads,
            vec![
                ("horus_profile".to_string(), 244),
                ("active_hold".to_string(), 64)
            ]
        );
        assert_eq!(report.uplinks.len(), 1);
        let uplink = &report.uplinks[0];
        assert_eq!(uplink.region, "horus_profile");
        assert_eq!(uplink.source, FunctionId::Horus);
        assert_eq!(uplink.payload.len(), 244);
        // transparency: byte-identical to the region content
        assert_eq!(uplink.payload, dpr.peek("horus_profile").unwrap().bytes);
    }

    #[test]
    fn downlink_to_monitor_region_is_denied_with_zero_bytes_written() {
        let mut dpr = dpr_with_profile();
        let before = dpr.peek("horus_profile").unwrap().bytes;
        let mut hub = CommHub::default();
        let frame = encode_downlink(FunctionId::BaseStation, 0, &[0xab; 244]);
        let report = hub.cycle(&mut dpr, Some(&frame), 1);
        assert!(report.events.iter().any(|e| matches!(
            e,
            HubEvent::Denial {
                source: FunctionId::BaseStation,
                destination: FunctionId::Horus,
                ..
            }
        )));
        assert_eq!(dpr.peek("horus_profile").unwrap().bytes, before);
    }

    #[test]
    fn permitted_downlink_written_whole() {
        let mut dpr = dpr_with_profile();
        let mut hub = CommHub::default();
        let idx = 2; // "downlink" region, producer FlightController
        let frame = encode_downlink(FunctionId::BaseStation, idx, &[0x42; 64]);
        let report = hub.cycle(&mut dpr, Some(&frame), 1);
        assert!(report
            .events
            .iter()
            .any(|e| matches!(e, HubEvent::DownlinkApplied { bytes: 64, .. })));
        assert_eq!(dpr.peek("downlink").unwrap().bytes, vec![0x42; 64]);
    }

    #[test]
    fn corrupt_downlink_dropped_whole() {
        let mut dpr = dpr_with_profile();
        let before = dpr.peek("downlink").unwrap().bytes;
        let mut hub = CommHub::default();
        let mut frame = encode_downlink(FunctionId::BaseStation, 2, &[0x42; 64]);
        frame[20] ^= 0x08;
        let report = hub.cycle(&mut dpr, Some(&frame), 1);
        assert!(report
            .events
            .iter()
            .any(|e| matches!(e, HubEvent::MalformedDownlink { .. })));
        assert_eq!(dpr.peek("downlink").unwrap().bytes, before);
    }

    #[test]
    fn wrong_length_downlink_dropped_whole() {
        let mut dpr = dpr_with_profile();
        let mut hub = CommHub::default();
        let frame = encode_downlink(FunctionId::BaseStation, 2, &[0x42; 63]);
        let report = hub.cycle(&mut dpr, Some(&frame), 1);
        assert!(report
            .events
            .iter()
            .any(|e| matches!(e, HubEvent::MalformedDownlink { .. })));
        assert_eq!(dpr.peek("downlink").unwrap().bytes, vec![0u8; 64]);
    }

    #[test]
    fn read_position_for_control_happy_path() {
        let mut dpr = dpr_with_profile();
        let mut hub = CommHub::default();
        hub.cycle(&mut dpr, None, 0); // counted read establishes freshness
        let (lat, lon) = hub.read_position_for_control(&dpr).unwrap();
        assert_eq!((lat, lon), (47.4, 8.6));
    }

    #[test]
    fn read_position_never_written() {
        let dpr = ActiveDpr::new(MemoryMap::default_map());
        let hub = CommHub::default();
        assert_eq!(
            hub.read_position_for_control(&dpr).unwrap_err(),
            PositionReadError::NeverWritten
        );
    }

    #[test]
    fn read_position_detects_longitude_flip() {
        let mut dpr = dpr_with_profile();
        let hub = CommHub::default();
        let mut block = dpr.peek("horus_profile").unwrap().bytes;
        block[18] ^= 0x01; // inside longitude
        dpr.write("horus_profile", &block).unwrap();
        dpr.rotate("horus_profile").unwrap();
        assert_eq!(
            hub.read_position_for_control(&dpr).unwrap_err(),
            PositionReadError::PositionCrcMismatch
        );
    }

    #[test]
    fn read_position_stale_after_frozen_timestamp() {
        let mut dpr = dpr_with_profile();
        let mut hub = CommHub::default();
        // same content re-written: timestamp frozen
        let block = dpr.peek("horus_profile").unwrap().bytes;
        for _ in 0..4 {
            dpr.write("horus_profile", &block).unwrap();
            dpr.rotate("horus_profile").unwrap();
            hub.cycle(&mut dpr, None, 0);
        }
        assert_eq!(
            hub.read_position_for_control(&dpr).unwrap_err(),
            PositionReadError::StalePosition
        );
    }
}
