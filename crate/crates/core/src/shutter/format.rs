//! Binary snapshot encoding: a 32-byte little-endian header followed by one
//! 16-byte `(pid, address)` record per cache line.
//!
//! | offset | size | field                               |
//! |--------|------|-------------------------------------|
//! | 0      | 4    | magic `CFSN`                        |
//! | 4      | 2    | version (1)                         |
//! | 6      | 2    | mode flags                          |
//! | 8      | 4    | cache size in bytes                 |
//! | 12     | 2    | ways                                |
//! | 14     | 2    | line size                           |
//! | 16     | 4    | sequence number                     |
//! | 20     | 1    | physical address bits               |
//! | 21     | 3    | reserved, zero                      |
//! | 24     | 8    | logical timestamp                   |

use std::collections::BTreeMap;

use super::{ModeFlags, Snapshot, SnapshotRecord, ShutterError};
use crate::cache::CacheGeometry;

pub const MAGIC: [u8; 4] = *b"CFSN";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 16;

/// Encoded size of a snapshot of `geom`.
pub fn encoded_len(geom: &CacheGeometry) -> usize {
    HEADER_LEN + RECORD_LEN * geom.lines() as usize
}

pub fn serialize(s: &Snapshot) -> Result<Vec<u8>, ShutterError> {
    s.check_shape()?;
    let g = &s.geometry;
    let narrow = |what: &str| ShutterError::Geometry(format!("{what} does not fit the header field"));
    let total = u32::try_from(g.total_size()).map_err(|_| narrow("cache size"))?;
    let ways = u16::try_from(g.ways()).map_err(|_| narrow("way count"))?;
    let line = u16::try_from(g.line_size()).map_err(|_| narrow("line size"))?;

    let mut out = Vec::with_capacity(encoded_len(g));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&s.flags.bits().to_le_bytes());
    out.extend_from_slice(&total.to_le_bytes());
    out.extend_from_slice(&ways.to_le_bytes());
    out.extend_from_slice(&line.to_le_bytes());
    out.extend_from_slice(&s.sequence.to_le_bytes());
    out.push(g.phys_addr_bits() as u8);
    out.extend_from_slice(&[0; 3]);
    out.extend_from_slice(&s.timestamp.to_le_bytes());
    for r in &s.records {
        out.extend_from_slice(&r.pid.to_le_bytes());
        out.extend_from_slice(&r.address.to_le_bytes());
    }
    Ok(out)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Decodes a snapshot. Sidecar layouts are not part of the binary form, so
/// the result has none.
pub fn deserialize(bytes: &[u8]) -> Result<Snapshot, ShutterError> {
    let err = |offset: usize, msg: &str| ShutterError::Format {
        offset,
        msg: msg.to_string(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(err(0, "bad magic"));
    }
    let version = u16_at(bytes, 4);
    if version != VERSION {
        return Err(err(4, &format!("unsupported version {version}")));
    }
    let flags = ModeFlags::from_bits(u16_at(bytes, 6)).ok_or_else(|| err(6, "unknown mode flag bits"))?;
    let geometry = CacheGeometry::new(
        u64::from(u32_at(bytes, 8)),
        u32::from(u16_at(bytes, 12)),
        u64::from(u16_at(bytes, 14)),
        u32::from(bytes[20]),
    )
    .map_err(|e| err(8, &format!("invalid geometry: {e}")))?;
    let sequence = u32_at(bytes, 16);
    if bytes[21..24] != [0; 3] {
        return Err(err(21, "reserved bytes are not zero"));
    }
    let timestamp = u64_at(bytes, 24);

    let expected = encoded_len(&geometry);
    if bytes.len() < expected {
        return Err(err(bytes.len(), "truncated record area"));
    }
    if bytes.len() > expected {
        return Err(err(expected, "trailing bytes after last record"));
    }
    let mut records = Vec::with_capacity(geometry.lines() as usize);
    for at in (HEADER_LEN..expected).step_by(RECORD_LEN) {
        let rec = SnapshotRecord {
            pid: u64_at(bytes, at),
            address: u64_at(bytes, at + 8),
        };
        if !rec.is_valid() && rec.address != 0 {
            return Err(err(at + 8, "invalid-line record with nonzero address"));
        }
        records.push(rec);
    }
    Ok(Snapshot {
        sequence,
        timestamp,
        flags,
        geometry,
        records,
        layouts: BTreeMap::new(),
    })
}
