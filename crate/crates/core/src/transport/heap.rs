use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::sim::SimTime;

use super::PeId;

/// A written byte range in one PE's symmetric region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub len: u64,
    pub writer: PeId,
    pub tile: u64,
    pub written_at: SimTime,
}

/// Data regions and signal flag words of every PE, addressed by `(pe, offset)`.
#[derive(Debug, Clone, Default)]
pub struct SymmetricHeap {
    regions: BTreeMap<(PeId, u64), Extent>,
    flags: BTreeMap<(PeId, u64), SimTime>,
}

impl SymmetricHeap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a completed write of `len` bytes at `(pe, offset)`.
    pub fn write(
        &mut self,
        pe: PeId,
        offset: u64,
        len: u64,
        writer: PeId,
        tile: u64,
        at: SimTime,
    ) -> Result<()> {
        if let Some(prev) = self.regions.get(&(pe, offset)) {
            if prev.writer != writer || prev.tile != tile {
                return Err(SimError::model(format!(
                    "PE {pe} offset {offset} written by two different transfers"
                )));
            }
        }
        self.regions.insert(
            (pe, offset),
            Extent {
                len,
                writer,
                tile,
                written_at: at,
            },
        );
        Ok(())
    }

    /// Make flag `flag` on `pe` visible at `time`. Flags never move backwards.
    pub fn deliver_signal(&mut self, pe: PeId, flag: u64, time: SimTime) -> Result<()> {
        if let Some(&prev) = self.flags.get(&(pe, flag)) {
            if time < prev {
                return Err(SimError::model(format!(
                    "flag {flag} on PE {pe} set at {prev} ns and again earlier at {time} ns"
                )));
            }
        }
        self.flags.insert((pe, flag), time);
        Ok(())
    }

    pub fn flag(&self, pe: PeId, flag: u64) -> Option<SimTime> {
        self.flags.get(&(pe, flag)).copied()
    }

    pub fn extent(&self, pe: PeId, offset: u64) -> Option<&Extent> {
        self.regions.get(&(pe, offset))
    }

    pub fn total_bytes(&self) -> u64 {
        self.regions.values().map(|e| e.len).sum()
    }

    pub fn flags_set(&self) -> usize {
        self.flags.len()
    }

    /// Digest of delivered state (locations, lengths, writers, flags), independent of timing.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for ((pe, off), e) in &self.regions {
            h.update(b"R");
            for v in [*pe as u64, *off, e.len, e.writer as u64, e.tile] {
                h.update(v.to_le_bytes());
            }
        }
        for (pe, flag) in self.flags.keys() {
            h.update(b"F");
            h.update((*pe as u64).to_le_bytes());
            h.update(flag.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
