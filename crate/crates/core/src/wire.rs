//! Wire codec for the safety-monitor profile objects.
//!
//! Two object records exist: the GPS-Position object (60 bytes: 56 data
//! bytes plus a 4-byte framing CRC) and the Reported-Position object
//! (64 bytes: the same fields plus an extra mid-frame CRC covering only the
//! latitude and longitude bytes). A profile is the Reported-Position object
//! followed by N GPS objects, each keeping its own CRC footer so the block
//! can be forwarded or parsed per object.
//!
//! All scalars are little-endian. Float fields are raw IEEE-754 bit
//! patterns; NaN payloads survive a round trip untouched.

use crate::crc::{framing_crc, position_crc};
use serde::Serialize;
use thiserror::Error;

/// GPS-Position frame length: 56 data bytes + 4 CRC bytes.
pub const GPS_FRAME_LEN: usize = 60;
/// Data bytes of a GPS-Position frame (everything before the framing CRC).
pub const GPS_DATA_LEN: usize = 56;
/// Reported-Position frame length: 56 data bytes + two 4-byte CRCs.
pub const REPORTED_FRAME_LEN: usize = 64;
/// Bytes of a Reported-Position frame covered by the framing CRC.
pub const REPORTED_DATA_LEN: usize = 60;
/// Byte range of latitude‖longitude inside either object.
pub const POSITION_WORD_RANGE: core::ops::Range<usize> = 8..24;
/// Offset of the position CRC inside a Reported-Position frame.
pub const POSITION_CRC_OFFSET: usize = 24;

/// Identifier of the Reported-Position object.
pub const REPORTED_POSITION_ID: u16 = 0x0001;
/// Identifier of GPS receiver k is `GPS_ID_BASE + k`.
pub const GPS_ID_BASE: u16 = 0x0010;

/// Status word bit: receiver reports a valid fix.
pub const STATUS_VALID_FIX: u16 = 1 << 0;
/// Status word bit: receiver fault.
pub const STATUS_RECEIVER_FAULT: u16 = 1 << 1;

/// Receiver counts a profile may be configured with.
pub const ALLOWED_RECEIVER_COUNTS: [usize; 4] = [1, 2, 3, 5];

/// Serialized profile length for `n` receivers.
pub const fn profile_len(n_receivers: usize) -> usize {
    REPORTED_FRAME_LEN + GPS_FRAME_LEN * n_receivers
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("wrong frame length: expected {expected}, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("framing CRC mismatch, frame must be discarded")]
    CrcMismatch,
    #[error("framing CRC mismatch on Reported-Position frame")]
    CrcMismatchFrame,
    #[error("position CRC mismatch over latitude/longitude")]
    CrcMismatchPosition,
    #[error("receiver count {0} not supported (allowed: 1, 2, 3, 5)")]
    BadReceiverCount(usize),
}

/// One GPS receiver's values for a sampling period. Field order matches the
/// wire layout.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct GpsPositionObject {
    /// Milliseconds since monitor start; doubles as a frame counter.
    pub timestamp: u32,
    pub identifier: u16,
    pub status: u16,
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub pitch: f32,
    pub yaw: f32,
    pub roll: f32,
    pub x_acceleration: f32,
    pub y_acceleration: f32,
    pub z_acceleration: f32,
}

// Bit-pattern equality so NaN payloads compare like any other value.
impl PartialEq for GpsPositionObject {
    fn eq(&self, other: &Self) -> bool {
        self.timestamp == other.timestamp
            && self.identifier == other.identifier
            && self.status == other.status
            && self.latitude.to_bits() == other.latitude.to_bits()
            && self.longitude.to_bits() == other.longitude.to_bits()
            && self.altitude.to_bits() == other.altitude.to_bits()
            && self.pitch.to_bits() == other.pitch.to_bits()
            && self.yaw.to_bits() == other.yaw.to_bits()
            && self.roll.to_bits() == other.roll.to_bits()
            && self.x_acceleration.to_bits() == other.x_acceleration.to_bits()
            && self.y_acceleration.to_bits() == other.y_acceleration.to_bits()
            && self.z_acceleration.to_bits() == other.z_acceleration.to_bits()
    }
}
impl Eq for GpsPositionObject {}

/// The canonical position derived for a sampling period. Same fields as
/// [`GpsPositionObject`] plus the mid-frame CRC over latitude‖longitude.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReportedPositionObject {
    pub fields: GpsPositionObject,
    /// CRC over the 16 latitude‖longitude bytes, polynomial `0x9d7f97d6`.
    pub position_crc: u32,
}

/// Object kind tag attached to a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Gps,
    Reported,
    Profile { n_receivers: usize },
}

impl FrameKind {
    /// Frames are fixed-size and never empty.
    #[allow(clippy::len_without_is_empty)]
    pub const fn len(&self) -> usize {
        match self {
            FrameKind::Gps => GPS_FRAME_LEN,
            FrameKind::Reported => REPORTED_FRAME_LEN,
            FrameKind::Profile { n_receivers } => profile_len(*n_receivers),
        }
    }
}

/// A constant-sized frame with its kind tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameBytes {
    pub kind: FrameKind,
    pub bytes: Vec<u8>,
}

impl FrameBytes {
    fn new(kind: FrameKind, bytes: Vec<u8>) -> Self {
        debug_assert_eq!(bytes.len(), kind.len());
        FrameBytes { kind, bytes }
    }
}

/// A whole profile: the reported position plus N receiver objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorusProfile {
    pub reported: ReportedPositionObject,
    pub receivers: Vec<GpsPositionObject>,
}

/// Result of [`parse_profile`]: every slot decoded, with per-object
/// validity. `flags[0]` is the reported object, `flags[1 + k]` receiver k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileParse {
    pub profile: HorusProfile,
    pub flags: Vec<bool>,
}

fn put_common_fields(buf: &mut [u8], obj: &GpsPositionObject) {
    buf[0..4].copy_from_slice(&obj.timestamp.to_le_bytes());
    buf[4..6].copy_from_slice(&obj.identifier.to_le_bytes());
    buf[6..8].copy_from_slice(&obj.status.to_le_bytes());
    buf[8..16].copy_from_slice(&obj.latitude.to_le_bytes());
    buf[16..24].copy_from_slice(&obj.longitude.to_le_bytes());
}

fn put_tail_fields(buf: &mut [u8], obj: &GpsPositionObject) {
    // caller positions `buf` at the altitude field
    buf[0..8].copy_from_slice(&obj.altitude.to_le_bytes());
    buf[8..12].copy_from_slice(&obj.pitch.to_le_bytes());
    buf[12..16].copy_from_slice(&obj.yaw.to_le_bytes());
    buf[16..20].copy_from_slice(&obj.roll.to_le_bytes());
    buf[20..24].copy_from_slice(&obj.x_acceleration.to_le_bytes());
    buf[24..28].copy_from_slice(&obj.y_acceleration.to_le_bytes());
    buf[28..32].copy_from_slice(&obj.z_acceleration.to_le_bytes());
}

fn get_u16(buf: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(buf[at..at + 2].try_into().unwrap())
}
fn get_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}
fn get_f32(buf: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}
fn get_f64(buf: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

fn read_fields(buf: &[u8], tail_at: usize) -> GpsPositionObject {
    GpsPositionObject {
        timestamp: get_u32(buf, 0),
        identifier: get_u16(buf, 4),
        status: get_u16(buf, 6),
        latitude: get_f64(buf, 8),
        longitude: get_f64(buf, 16),
        altitude: get_f64(buf, tail_at),
        pitch: get_f32(buf, tail_at + 8),
        yaw: get_f32(buf, tail_at + 12),
        roll: get_f32(buf, tail_at + 16),
        x_acceleration: get_f32(buf, tail_at + 20),
        y_acceleration: get_f32(buf, tail_at + 24),
        z_acceleration: get_f32(buf, tail_at + 28),
    }
}

/// Encodes a GPS-Position object into its 60-byte frame.
pub fn encode_gps(obj: &GpsPositionObject) -> FrameBytes {
    let mut buf = vec![0u8; GPS_FRAME_LEN];
    put_common_fields(&mut buf, obj);
    put_tail_fields(&mut buf[24..56], obj);
    let crc = framing_crc(&buf[..GPS_DATA_LEN]);
    buf[56..60].copy_from_slice(&crc.to_le_bytes());
    FrameBytes::new(FrameKind::Gps, buf)
}

/// Decodes a 60-byte GPS-Position frame; the trailing CRC must verify.
pub fn decode_gps(frame: &[u8]) -> Result<GpsPositionObject, WireError> {
    if frame.len() != GPS_FRAME_LEN {
        return Err(WireError::WrongLength {
            expected: GPS_FRAME_LEN,
            actual: frame.len(),
        });
    }
    let stored = get_u32(frame, 56);
    if framing_crc(&frame[..GPS_DATA_LEN]) != stored {
        return Err(WireError::CrcMismatch);
    }
    Ok(read_fields(frame, 24))
}

/// Encodes a Reported-Position object into its 64-byte frame. Both CRC
/// fields are recomputed; the `position_crc` stored in `obj` is ignored.
pub fn encode_reported(obj: &ReportedPositionObject) -> FrameBytes {
    let mut buf = vec![0u8; REPORTED_FRAME_LEN];
    put_common_fields(&mut buf, &obj.fields);
    let pos_crc = position_crc(&buf[POSITION_WORD_RANGE]);
    buf[24..28].copy_from_slice(&pos_crc.to_le_bytes());
    put_tail_fields(&mut buf[28..60], &obj.fields);
    let crc = framing_crc(&buf[..REPORTED_DATA_LEN]);
    buf[60..64].copy_from_slice(&crc.to_le_bytes());
    FrameBytes::new(FrameKind::Reported, buf)
}

/// Decodes a 64-byte Reported-Position frame. Both the framing CRC and the
/// position CRC must verify; a position failure takes precedence in the
/// reported error.
pub fn decode_reported(frame: &[u8]) -> Result<ReportedPositionObject, WireError> {
    if frame.len() != REPORTED_FRAME_LEN {
        return Err(WireError::WrongLength {
            expected: REPORTED_FRAME_LEN,
            actual: frame.len(),
        });
    }
    let stored_pos = get_u32(frame, POSITION_CRC_OFFSET);
    if position_crc(&frame[POSITION_WORD_RANGE]) != stored_pos {
        return Err(WireError::CrcMismatchPosition);
    }
    let stored_frame = get_u32(frame, 60);
    if framing_crc(&frame[..REPORTED_DATA_LEN]) != stored_frame {
        return Err(WireError::CrcMismatchFrame);
    }
    Ok(ReportedPositionObject {
        fields: read_fields(frame, 28),
        position_crc: stored_pos,
    })
}

/// Serializes a whole profile: reported‖receivers[0]‖…‖receivers[N−1].
/// Each object keeps its own CRC footer.
pub fn serialize_profile(profile: &HorusProfile) -> FrameBytes {
    let n = profile.receivers.len();
    let mut bytes = Vec::with_capacity(profile_len(n));
    bytes.extend_from_slice(&encode_reported(&profile.reported).bytes);
    for receiver in &profile.receivers {
        bytes.extend_from_slice(&encode_gps(receiver).bytes);
    }
    FrameBytes::new(FrameKind::Profile { n_receivers: n }, bytes)
}

/// Parses a profile block. Every object slot is decoded independently; a
/// CRC failure marks only that slot invalid (its fields are still read
/// as-is). Only a wrong block length is an error.
pub fn parse_profile(block: &[u8], n_receivers: usize) -> Result<ProfileParse, WireError> {
    let expected = profile_len(n_receivers);
    if block.len() != expected {
        return Err(WireError::WrongLength {
            expected,
            actual: block.len(),
        });
    }
    let mut flags = Vec::with_capacity(1 + n_receivers);

    let reported_bytes = &block[..REPORTED_FRAME_LEN];
    let reported = match decode_reported(reported_bytes) {
        Ok(obj) => {
            flags.push(true);
            obj
        }
        Err(_) => {
            flags.push(false);
            ReportedPositionObject {
                fields: read_fields(reported_bytes, 28),
                position_crc: get_u32(reported_bytes, POSITION_CRC_OFFSET),
            }
        }
    };

    let mut receivers = Vec::with_capacity(n_receivers);
    for k in 0..n_receivers {
        let at = REPORTED_FRAME_LEN + k * GPS_FRAME_LEN;
        let obj_bytes = &block[at..at + GPS_FRAME_LEN];
        match decode_gps(obj_bytes) {
            Ok(obj) => {
                flags.push(true);
                receivers.push(obj);
            }
            Err(_) => {
                flags.push(false);
                receivers.push(read_fields(obj_bytes, 24));
            }
        }
    }

    Ok(ProfileParse {
        profile: HorusProfile { reported, receivers },
        flags,
    })
}
