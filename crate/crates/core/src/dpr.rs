//! Active dual-ported-RAM emulation.
//!
//! The DPR is a predefined memory map of fixed regions. Each region is
//! backed by a modified triple buffer: one buffer is written into, one is
//! read from, and the third is scrubbed (overwritten with a constant) so
//! stale data can never be mistaken for fresh data. Rotation permutes the
//! roles write→read, scrub→write, read→scrub and completes the scrub of the
//! incoming scrub buffer before returning.
//!
//! Reads additionally track freshness: the timestamp word at region offset
//! 0 must advance every cycle; a constant timestamp means the transmitting
//! unit has failed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Value scrubbed buffers are filled with. Zero keeps never-written regions
/// unambiguous: no valid object has identifier 0x0000 at a zero timestamp.
pub const SCRUB_CONSTANT: u8 = 0x00;

/// Default expected timestamp increment per read, milliseconds.
pub const DEFAULT_EXPECTED_INCREMENT_MS: u32 = 10;
/// Default number of consecutive unchanged reads before a region is stale.
pub const DEFAULT_STALE_THRESHOLD: u32 = 3;

/// The on-board functions that produce and consume regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FunctionId {
    BaseStation,
    Horus,
    FlightController,
    ActiveLoad,
}

impl FunctionId {
    pub const ALL: [FunctionId; 4] = [
        FunctionId::BaseStation,
        FunctionId::Horus,
        FunctionId::FlightController,
        FunctionId::ActiveLoad,
    ];

    pub fn to_wire(self) -> u32 {
        match self {
            FunctionId::BaseStation => 0,
            FunctionId::Horus => 1,
            FunctionId::FlightController => 2,
            FunctionId::ActiveLoad => 3,
        }
    }

    pub fn from_wire(v: u32) -> Option<Self> {
        match v {
            0 => Some(FunctionId::BaseStation),
            1 => Some(FunctionId::Horus),
            2 => Some(FunctionId::FlightController),
            3 => Some(FunctionId::ActiveLoad),
            _ => None,
        }
    }
}

/// One fixed region of the memory map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub producer: FunctionId,
    pub consumer: FunctionId,
}

/// Ordered, non-overlapping set of regions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryMap {
    pub regions: Vec<Region>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DprError {
    #[error("unknown region {0:?}")]
    UnknownRegion(String),
    #[error("wrong payload length for region {region:?}: expected {expected}, got {actual}")]
    WrongLength {
        region: String,
        expected: usize,
        actual: usize,
    },
    #[error("buffer {buffer} of region {region:?} is in active role {role:?}")]
    RoleViolation {
        region: String,
        buffer: usize,
        role: Role,
    },
    #[error("memory map invalid: {0}")]
    BadMap(String),
}

impl MemoryMap {
    /// Builds a map, checking region invariants (non-empty, non-overlapping).
    pub fn new(regions: Vec<Region>) -> Result<Self, DprError> {
        if regions.is_empty() {
            return Err(DprError::BadMap("no regions".into()));
        }
        let mut sorted: Vec<&Region> = regions.iter().collect();
        sorted.sort_by_key(|r| r.offset);
        for pair in sorted.windows(2) {
            if pair[0].offset + pair[0].len > pair[1].offset {
                return Err(DprError::BadMap(format!(
                    "regions {:?} and {:?} overlap",
                    pair[0].name, pair[1].name
                )));
            }
        }
        for r in &regions {
            if r.len == 0 {
                return Err(DprError::BadMap(format!("region {:?} has zero length", r.name)));
            }
            if regions.iter().filter(|o| o.name == r.name).count() > 1 {
                return Err(DprError::BadMap(format!("duplicate region name {:?}", r.name)));
            }
        }
        Ok(MemoryMap { regions })
    }

    /// The default map: the monitor profile, the reserved active-hold
    /// region, and the base-station downlink region.
    pub fn default_map() -> Self {
        MemoryMap::new(vec![
            Region {
                name: "horus_profile".into(),
                offset: 0x0000,
                len: crate::wire::profile_len(3),
                producer: FunctionId::Horus,
                consumer: FunctionId::FlightController,
            },
            Region {
                name: "active_hold".into(),
                offset: 0x0100,
                len: 64,
                producer: FunctionId::ActiveLoad,
                consumer: FunctionId::FlightController,
            },
            Region {
                name: "downlink".into(),
                offset: 0x0180,
                len: 64,
                producer: FunctionId::FlightController,
                consumer: FunctionId::ActiveLoad,
            },
        ])
        .expect("default map is valid")
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn region_index(&self, name: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.name == name)
    }
}

/// Buffer roles of the triple buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Write,
    Read,
    Scrub,
}

/// Role assignment: which of the three buffers currently holds each role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Roles {
    pub write: usize,
    pub read: usize,
    pub scrub: usize,
}

impl Roles {
    /// The assignment is valid iff it is a bijection onto {0, 1, 2}.
    pub fn is_bijection(&self) -> bool {
        let mut seen = [false; 3];
        for idx in [self.write, self.read, self.scrub] {
            if idx > 2 || seen[idx] {
                return false;
            }
            seen[idx] = true;
        }
        true
    }

    pub fn role_of(&self, buffer: usize) -> Option<Role> {
        if buffer == self.write {
            Some(Role::Write)
        } else if buffer == self.read {
            Some(Role::Read)
        } else if buffer == self.scrub {
            Some(Role::Scrub)
        } else {
            None
        }
    }
}

/// Three equal-length buffers cycling through write/read/scrub roles.
#[derive(Debug, Clone)]
pub struct TripleBuffer {
    buffers: [Vec<u8>; 3],
    roles: Roles,
    /// Set when a buffer has held a write since its last scrub.
    written: [bool; 3],
    scrub_value: u8,
}

impl TripleBuffer {
    pub fn new(len: usize) -> Self {
        TripleBuffer {
            buffers: [
                vec![SCRUB_CONSTANT; len],
                vec![SCRUB_CONSTANT; len],
                vec![SCRUB_CONSTANT; len],
            ],
            roles: Roles {
                write: 0,
                read: 1,
                scrub: 2,
            },
            written: [false; 3],
            scrub_value: SCRUB_CONSTANT,
        }
    }

    pub fn roles(&self) -> Roles {
        self.roles
    }

    pub fn buffer(&self, idx: usize) -> &[u8] {
        &self.buffers[idx]
    }

    /// Stores `payload` whole into the write-role buffer.
    pub fn write(&mut self, payload: &[u8]) {
        debug_assert_eq!(payload.len(), self.buffers[0].len());
        self.buffers[self.roles.write].copy_from_slice(payload);
        self.written[self.roles.write] = true;
    }

    /// Copy of the read-role buffer, plus whether it has held data since
    /// its last scrub.
    pub fn read(&self) -> (&[u8], bool) {
        let idx = self.roles.read;
        (&self.buffers[idx], self.written[idx])
    }

    /// Rotates roles write→read, scrub→write, read→scrub and scrubs the new
    /// scrub buffer before returning.
    pub fn rotate(&mut self) -> Roles {
        let old = self.roles;
        self.roles = Roles {
            read: old.write,
            write: old.scrub,
            scrub: old.read,
        };
        self.scrub_index(self.roles.scrub);
        self.roles
    }

    fn scrub_index(&mut self, idx: usize) {
        self.buffers[idx].fill(self.scrub_value);
        self.written[idx] = false;
    }

    /// Scrubs buffer `idx`; refused while the buffer is in an active role.
    pub fn scrub(&mut self, idx: usize) -> Result<(), Role> {
        match self.roles.role_of(idx) {
            Some(Role::Scrub) | None => {
                self.scrub_index(idx);
                Ok(())
            }
            Some(active) => Err(active),
        }
    }
}

/// Freshness classification of a region read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Freshness {
    Fresh,
    Stale,
    NeverWritten,
}

/// Tracks the timestamp word across reads of one region.
#[derive(Debug, Clone)]
pub struct FreshnessTracker {
    last_timestamp: Option<u32>,
    unchanged_reads: u32,
    pub expected_increment: u32,
    pub stale_threshold: u32,
}

impl FreshnessTracker {
    pub fn new(expected_increment: u32, stale_threshold: u32) -> Self {
        FreshnessTracker {
            last_timestamp: None,
            unchanged_reads: 0,
            expected_increment,
            stale_threshold,
        }
    }

    /// Observes the timestamp of one read. Returns the freshness verdict and
    /// whether the increment skipped ahead of the expected step (a gap).
    pub fn observe(&mut self, timestamp: u32) -> (Freshness, bool) {
        let mut gap = false;
        match self.last_timestamp {
            Some(last) if last == timestamp => {
                self.unchanged_reads += 1;
            }
            Some(last) => {
                gap = timestamp.wrapping_sub(last) > self.expected_increment;
                self.unchanged_reads = 0;
            }
            None => {
                self.unchanged_reads = 0;
            }
        }
        self.last_timestamp = Some(timestamp);
        let verdict = if self.unchanged_reads >= self.stale_threshold {
            Freshness::Stale
        } else {
            Freshness::Fresh
        };
        (verdict, gap)
    }

    /// Current verdict without counting a read.
    pub fn current(&self) -> Freshness {
        if self.unchanged_reads >= self.stale_threshold {
            Freshness::Stale
        } else {
            Freshness::Fresh
        }
    }
}

/// Result of a counted region read.
#[derive(Debug, Clone)]
pub struct ReadReport {
    pub bytes: Vec<u8>,
    pub freshness: Freshness,
    /// Timestamp advanced by more than the expected increment.
    pub gap: bool,
}

struct RegionState {
    region: Region,
    buffer: TripleBuffer,
    tracker: FreshnessTracker,
}

/// The active DPR: one triple-buffered store per mapped region.
pub struct ActiveDpr {
    regions: Vec<RegionState>,
}

impl ActiveDpr {
    pub fn new(map: MemoryMap) -> Self {
        let regions = map
            .regions
            .into_iter()
            .map(|region| {
                let len = region.len;
                RegionState {
                    region,
                    buffer: TripleBuffer::new(len),
                    tracker: FreshnessTracker::new(
                        DEFAULT_EXPECTED_INCREMENT_MS,
                        DEFAULT_STALE_THRESHOLD,
                    ),
                }
            })
            .collect();
        ActiveDpr { regions }
    }

    pub fn with_thresholds(map: MemoryMap, expected_increment: u32, stale_threshold: u32) -> Self {
        let mut dpr = ActiveDpr::new(map);
        for state in &mut dpr.regions {
            state.tracker = FreshnessTracker::new(expected_increment, stale_threshold);
        }
        dpr
    }

    pub fn map(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().map(|s| &s.region)
    }

    fn state(&self, name: &str) -> Result<&RegionState, DprError> {
        self.regions
            .iter()
            .find(|s| s.region.name == name)
            .ok_or_else(|| DprError::UnknownRegion(name.to_string()))
    }

    fn state_mut(&mut self, name: &str) -> Result<&mut RegionState, DprError> {
        self.regions
            .iter_mut()
            .find(|s| s.region.name == name)
            .ok_or_else(|| DprError::UnknownRegion(name.to_string()))
    }

    pub fn region(&self, name: &str) -> Result<&Region, DprError> {
        self.state(name).map(|s| &s.region)
    }

    pub fn region_by_index(&self, idx: usize) -> Option<&Region> {
        self.regions.get(idx).map(|s| &s.region)
    }

    /// Stores `payload` whole into the region's write buffer. Rejected whole
    /// on a length mismatch; the region is left unchanged.
    pub fn write(&mut self, name: &str, payload: &[u8]) -> Result<(), DprError> {
        let state = self.state_mut(name)?;
        if payload.len() != state.region.len {
            return Err(DprError::WrongLength {
                region: name.to_string(),
                expected: state.region.len,
                actual: payload.len(),
            });
        }
        state.buffer.write(payload);
        Ok(())
    }

    /// Rotates the region's buffer roles; the incoming scrub buffer is fully
    /// scrubbed before this returns.
    pub fn rotate(&mut self, name: &str) -> Result<Roles, DprError> {
        Ok(self.state_mut(name)?.buffer.rotate())
    }

    /// Counted read: returns the read buffer and updates freshness from the
    /// timestamp word at region offset 0.
    pub fn read(&mut self, name: &str) -> Result<ReadReport, DprError> {
        let state = self.state_mut(name)?;
        let (bytes, has_data) = state.buffer.read();
        let bytes = bytes.to_vec();
        if !has_data {
            return Ok(ReadReport {
                bytes,
                freshness: Freshness::NeverWritten,
                gap: false,
            });
        }
        let timestamp = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let (freshness, gap) = state.tracker.observe(timestamp);
        Ok(ReadReport {
            bytes,
            freshness,
            gap,
        })
    }

    /// Uncounted inspection: current read buffer and freshness verdict
    /// without advancing the unchanged-read counter.
    pub fn peek(&self, name: &str) -> Result<ReadReport, DprError> {
        let state = self.state(name)?;
        let (bytes, has_data) = state.buffer.read();
        let freshness = if has_data {
            state.tracker.current()
        } else {
            Freshness::NeverWritten
        };
        Ok(ReadReport {
            bytes: bytes.to_vec(),
            freshness,
            gap: false,
        })
    }

    /// Scrubs buffer `buffer_idx` of a region; refused for active roles.
    pub fn scrub(&mut self, name: &str, buffer_idx: usize) -> Result<(), DprError> {
        let state = self.state_mut(name)?;
        state.buffer.scrub(buffer_idx).map_err(|role| DprError::RoleViolation {
            region: name.to_string(),
            buffer: buffer_idx,
            role,
        })
    }

    pub fn roles(&self, name: &str) -> Result<Roles, DprError> {
        Ok(self.state(name)?.buffer.roles())
    }

    /// Checks internal invariants; used by the harness to map a simulation
    /// bug onto a distinct exit status.
    pub fn check_invariants(&self) -> Result<(), String> {
        for state in &self.regions {
            let roles = state.buffer.roles();
            if !roles.is_bijection() {
                return Err(format!(
                    "region {:?}: role assignment {:?} is not a bijection",
                    state.region.name, roles
                ));
            }
            let scrub = state.buffer.buffer(roles.scrub);
            if !scrub.iter().all(|&b| b == SCRUB_CONSTANT) {
                return Err(format!(
                    "region {:?}: scrub buffer holds non-constant bytes",
                    state.region.name
                ));
            }
        }
        Ok(())
    }
}
