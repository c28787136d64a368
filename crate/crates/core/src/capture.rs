// SPDX-License-Identifier: Apache-2.0

//! Packet capture files.
//!
//! ```text
//! file   = magic record*
//! magic  = "FOPCAP" 0x00 0x01
//! record = len u32 ‖ time_ms u64 ‖ tap u32 ‖ segment[len - 12]
//! ```
//!
//! Integers are big-endian. `segment` is the wire encoding of
//! [`Segment`](crate::sim::Segment).

use std::io::{self, Read, Write};

use crate::sim::{SimTime, TapId};

pub const MAGIC: [u8; 8] = *b"FOPCAP\x00\x01";

const HEADER_LEN: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptureRecord {
    pub time: SimTime,
    pub tap: TapId,
    pub bytes: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("not a capture file")]
    BadMagic,
    #[error("record {index} is truncated")]
    Truncated { index: usize },
    #[error("record {index} declares length {len}, below the {HEADER_LEN}-byte header")]
    ShortRecord { index: usize, len: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Capture {
    pub records: Vec<CaptureRecord>,
}

impl Capture {
    pub fn push(&mut self, time: SimTime, tap: TapId, bytes: Vec<u8>) {
        self.records.push(CaptureRecord { time, tap, bytes });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records seen by one tap, in capture order.
    pub fn tap(&self, tap: TapId) -> impl Iterator<Item = &CaptureRecord> {
        self.records.iter().filter(move |r| r.tap == tap)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&MAGIC)?;
        for r in &self.records {
            let len = u32::try_from(HEADER_LEN + r.bytes.len())
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "record too large"))?;
            w.write_all(&len.to_be_bytes())?;
            w.write_all(&r.time.as_ms().to_be_bytes())?;
            w.write_all(&r.tap.0.to_be_bytes())?;
            w.write_all(&r.bytes)?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CaptureError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CaptureError> {
        let body = buf.strip_prefix(&MAGIC[..]).ok_or(CaptureError::BadMagic)?;
        let mut records = Vec::new();
        let mut at = 0;
        while at < body.len() {
            let index = records.len();
            let len_bytes = body.get(at..at + 4).ok_or(CaptureError::Truncated { index })?;
            let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
            if len < HEADER_LEN {
                return Err(CaptureError::ShortRecord { index, len });
            }
            let rec = body
                .get(at + 4..at + 4 + len)
                .ok_or(CaptureError::Truncated { index })?;
            records.push(CaptureRecord {
                time: SimTime::from_ms(u64::from_be_bytes(rec[..8].try_into().unwrap())),
                tap: TapId(u32::from_be_bytes(rec[8..12].try_into().unwrap())),
                bytes: rec[HEADER_LEN..].to_vec(),
            });
            at += 4 + len;
        }
        Ok(Capture { records })
    }
}
