//! Error and bandwidth measurement.

use serde::Serialize;

use crate::codec::WireBreakdown;
use crate::error::{Error, Result};

/// `||estimate - truth||^2 / ||truth||^2` in double precision.
pub fn vnmse(estimate: &[f32], truth: &[f64]) -> Result<f64> {
    let (err, norm) = sums(estimate, truth)?;
    if norm == 0.0 {
        return Err(Error::InvalidArgument("vNMSE of a zero-norm reference".into()));
    }
    Ok(err / norm)
}

/// Mean squared error per coordinate.
pub fn mse(estimate: &[f32], truth: &[f64]) -> Result<f64> {
    let (err, _) = sums(estimate, truth)?;
    Ok(if truth.is_empty() { 0.0 } else { err / truth.len() as f64 })
}

fn sums(estimate: &[f32], truth: &[f64]) -> Result<(f64, f64)> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: estimate.len(),
        });
    }
    Ok(estimate.iter().zip(truth).fold((0.0, 0.0), |(e, n), (&x, &t)| {
        let d = x as f64 - t;
        (e + d * d, n + t * t)
    }))
}

/// Error of one reduce message against the exact partial sum it stands for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HopError {
    pub chunk: usize,
    pub sender: usize,
    /// Equal to `sender` for the sink's final compression.
    pub receiver: usize,
    pub hop_slot: u32,
    /// Workers whose data the message carries.
    pub subtree: usize,
    /// Summed squared error over the chunk, in the normalized domain.
    pub squared_error: f64,
    pub entries: usize,
}

impl HopError {
    pub fn mse(&self) -> f64 {
        if self.entries == 0 {
            0.0
        } else {
            self.squared_error / self.entries as f64
        }
    }
}

/// Bits moved in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct WireTotals {
    pub reduce_messages: u64,
    pub gather_messages: u64,
    pub header_bits: u64,
    pub scale_bits: u64,
    pub payload_bits: u64,
    /// Entries carried, summed over messages.
    pub entries: u64,
    /// First-phase statistics: 64 bits per super-group per hop.
    pub stats_bits: u64,
}

impl WireTotals {
    pub fn add_message(&mut self, b: &WireBreakdown, gather: bool) {
        if gather {
            self.gather_messages += 1;
        } else {
            self.reduce_messages += 1;
        }
        self.header_bits += b.header_bits;
        self.scale_bits += b.scale_bits;
        self.payload_bits += b.payload_bits;
        self.entries += b.entries;
    }

    /// Main-phase bits, headers included.
    pub fn message_bits(&self) -> u64 {
        self.header_bits + self.scale_bits + self.payload_bits
    }

    pub fn total_bits(&self) -> u64 {
        self.message_bits() + self.stats_bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BitsPerCoordinate {
    /// Payload and scale bits per entry of a single compressed message.
    pub per_representation: f64,
    /// Chunk headers per entry of a single compressed message.
    pub header_per_representation: f64,
    /// Everything sent in the round, statistics included, per gradient coordinate.
    pub per_round_total: f64,
    /// Statistics volume relative to sending the same entries as binary16.
    pub stats_fraction: f64,
}

pub fn bits_per_coordinate(wire: &WireTotals, d: usize) -> BitsPerCoordinate {
    let per = |bits: u64| {
        if wire.entries == 0 {
            0.0
        } else {
            bits as f64 / wire.entries as f64
        }
    };
    BitsPerCoordinate {
        per_representation: per(wire.scale_bits + wire.payload_bits),
        header_per_representation: per(wire.header_bits),
        per_round_total: if d == 0 { 0.0 } else { wire.total_bits() as f64 / d as f64 },
        stats_fraction: per(wire.stats_bits) / 16.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub vnmse: f64,
    pub mse: f64,
    pub bits: BitsPerCoordinate,
    pub per_hop: Vec<HopError>,
}

impl ErrorReport {
    pub fn new(estimate: &[f32], truth: &[f64], wire: &WireTotals, per_hop: Vec<HopError>) -> Result<Self> {
        Ok(Self {
            vnmse: vnmse(estimate, truth)?,
            mse: mse(estimate, truth)?,
            bits: bits_per_coordinate(wire, truth.len()),
            per_hop,
        })
    }
}
