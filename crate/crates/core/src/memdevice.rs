//! Content-dependent cell cost model and seeded soft-error injection.
//!
//! Stable patterns (`00`/`11`) program in one step: cheap, fast and immune
//! to soft errors. Intermediate patterns (`01`/`10`) need the second step:
//! they cost more energy and cycles and are the only cells the fault
//! injector may touch. Randomness is derived per cell from
//! `(seed, global cell index)`, so injection results are independent of
//! traversal and thread order.

use crate::codec::EncodedBuffer;
use crate::halffloat::{CellHistogram, HalfWord};
use crate::stream_rng;
use rand::RngExt;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Lower default endpoint of the modeled soft-error probability range.
pub const SOFT_ERROR_P_LOW: f64 = 0.015;
/// Upper default endpoint of the modeled soft-error probability range.
pub const SOFT_ERROR_P_HIGH: f64 = 0.02;

/// Errors for device-model operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("bit position {0} out of range (0..16)")]
    BadBitPosition(usize),
    #[error("fault probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("cost table line {line}: {reason}")]
    CostFileSyntax { line: usize, reason: String },
    #[error("unknown cost table key `{0}`")]
    UnknownCostKey(String),
    #[error("cost table invariant violated: {0}")]
    CostInvariant(String),
}

/// Per-cell read/write cost, split by pattern class.
///
/// Energies are nJ per cell, latencies cycles per cell. The intermediate
/// value of each pair must be at least the stable one: two-step patterns
/// are the slow, power-hungry ones.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct CostTable {
    pub read_energy_stable: f64,
    pub read_energy_intermediate: f64,
    pub write_energy_stable: f64,
    pub write_energy_intermediate: f64,
    pub read_latency_stable: u64,
    pub read_latency_intermediate: u64,
    pub write_latency_stable: u64,
    pub write_latency_intermediate: u64,
}

impl CostTable {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let energy_pairs = [
            (
                "read energy",
                self.read_energy_stable,
                self.read_energy_intermediate,
            ),
            (
                "write energy",
                self.write_energy_stable,
                self.write_energy_intermediate,
            ),
        ];
        for (name, stable, intermediate) in energy_pairs {
            if !(stable >= 0.0 && intermediate >= 0.0) {
                return Err(DeviceError::CostInvariant(format!("{name} is negative")));
            }
            if stable > intermediate {
                return Err(DeviceError::CostInvariant(format!(
                    "{name}: stable {stable} exceeds intermediate {intermediate}"
                )));
            }
        }
        let latency_pairs = [
            (
                "read latency",
                self.read_latency_stable,
                self.read_latency_intermediate,
            ),
            (
                "write latency",
                self.write_latency_stable,
                self.write_latency_intermediate,
            ),
        ];
        for (name, stable, intermediate) in latency_pairs {
            if stable > intermediate {
                return Err(DeviceError::CostInvariant(format!(
                    "{name}: stable {stable} exceeds intermediate {intermediate}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for CostTable {
    fn default() -> CostTable {
        default_cost_table()
    }
}

/// Default per-cell costs of the hybrid device model. The smaller value of
/// each pair charges stable-pattern cells, the larger one intermediate cells.
pub fn default_cost_table() -> CostTable {
    CostTable {
        read_energy_stable: 0.427,
        read_energy_intermediate: 0.579,
        write_energy_stable: 1.084,
        write_energy_intermediate: 2.653,
        read_latency_stable: 14,
        read_latency_intermediate: 20,
        write_latency_stable: 50,
        write_latency_intermediate: 95,
    }
}

/// Parses a `key=value` cost override file. Unset keys keep their default;
/// `#` starts a comment line. The alternative additive reading of the
/// two-step cost (soft + hard per intermediate cell) is expressible by
/// overriding the intermediate keys.
pub fn parse_cost_table(text: &str) -> Result<CostTable, DeviceError> {
    let mut table = default_cost_table();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| DeviceError::CostFileSyntax {
                line: lineno,
                reason: "expected key=value".into(),
            })?;
        let key = key.trim();
        let value = value.trim();
        let energy = |slot: &mut f64| -> Result<(), DeviceError> {
            *slot = value.parse().map_err(|_| DeviceError::CostFileSyntax {
                line: lineno,
                reason: format!("bad energy value `{value}`"),
            })?;
            Ok(())
        };
        let latency = |slot: &mut u64| -> Result<(), DeviceError> {
            *slot = value.parse().map_err(|_| DeviceError::CostFileSyntax {
                line: lineno,
                reason: format!("bad latency value `{value}`"),
            })?;
            Ok(())
        };
        match key {
            "read_energy_stable" => energy(&mut table.read_energy_stable)?,
            "read_energy_intermediate" => energy(&mut table.read_energy_intermediate)?,
            "write_energy_stable" => energy(&mut table.write_energy_stable)?,
            "write_energy_intermediate" => energy(&mut table.write_energy_intermediate)?,
            "read_latency_stable" => latency(&mut table.read_latency_stable)?,
            "read_latency_intermediate" => latency(&mut table.read_latency_intermediate)?,
            "write_latency_stable" => latency(&mut table.write_latency_stable)?,
            "write_latency_intermediate" => latency(&mut table.write_latency_intermediate)?,
            other => return Err(DeviceError::UnknownCostKey(other.into())),
        }
    }
    table.validate()?;
    Ok(table)
}

/// Soft-error probability and seed for deterministic injection.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct FaultSpec {
    pub p: f64,
    pub seed: u64,
}

impl FaultSpec {
    pub fn new(p: f64, seed: u64) -> Result<FaultSpec, DeviceError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(DeviceError::BadProbability(p));
        }
        Ok(FaultSpec { p, seed })
    }
}

/// Energy and latency totals of one full read plus one full write of a
/// buffer, with the pattern histogram they were derived from.
#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct EnergyReport {
    pub read_energy_nj: f64,
    pub write_energy_nj: f64,
    pub read_cycles: u64,
    pub write_cycles: u64,
    pub cell_histogram: CellHistogram,
}

/// Charges every stored cell its pattern-class cost. Metadata cells are out
/// of the model and charge nothing.
pub fn charge(buf: &EncodedBuffer, costs: &CostTable) -> EnergyReport {
    report_from_histogram(buf.cell_histogram(), costs)
}

/// Sequential reference for [`charge`].
pub fn charge_seq(buf: &EncodedBuffer, costs: &CostTable) -> EnergyReport {
    report_from_histogram(buf.cell_histogram_seq(), costs)
}

fn report_from_histogram(hist: CellHistogram, costs: &CostTable) -> EnergyReport {
    let stable = hist.stable() as f64;
    let intermediate = hist.intermediate() as f64;
    EnergyReport {
        read_energy_nj: stable * costs.read_energy_stable
            + intermediate * costs.read_energy_intermediate,
        write_energy_nj: stable * costs.write_energy_stable
            + intermediate * costs.write_energy_intermediate,
        read_cycles: hist.stable() * costs.read_latency_stable
            + hist.intermediate() * costs.read_latency_intermediate,
        write_cycles: hist.stable() * costs.write_latency_stable
            + hist.intermediate() * costs.write_latency_intermediate,
        cell_histogram: hist,
    }
}

fn inject_word(w: HalfWord, word_index: usize, spec: &FaultSpec) -> HalfWord {
    let mut bits = w.0;
    for cell in 0..8usize {
        let shift = 14 - 2 * cell;
        let pattern = (bits >> shift) & 0b11;
        if pattern == 0b01 || pattern == 0b10 {
            let mut rng = stream_rng(spec.seed, (word_index * 8 + cell) as u64);
            if rng.random::<f64>() < spec.p {
                // Exactly one of the two bits flips, chosen uniformly.
                let offset = rng.random::<bool>() as usize;
                bits ^= 1 << (shift + offset);
            }
        }
    }
    HalfWord(bits)
}

/// Flips each intermediate cell with probability `p`, toggling exactly one
/// of its two bits. Stable cells and metadata are immune.
pub fn inject_faults(buf: &EncodedBuffer, spec: &FaultSpec) -> EncodedBuffer {
    #[cfg(feature = "parallel")]
    {
        let words = buf
            .stored_words()
            .par_iter()
            .enumerate()
            .map(|(i, &w)| inject_word(w, i, spec))
            .collect();
        buf.with_words(words)
    }
    #[cfg(not(feature = "parallel"))]
    {
        inject_faults_seq(buf, spec)
    }
}

/// Sequential reference for [`inject_faults`].
pub fn inject_faults_seq(buf: &EncodedBuffer, spec: &FaultSpec) -> EncodedBuffer {
    let words = buf
        .stored_words()
        .iter()
        .enumerate()
        .map(|(i, &w)| inject_word(w, i, spec))
        .collect();
    buf.with_words(words)
}

/// Toggles a single bit; `position` is MSB-first (0 = sign).
pub fn flip_bit(h: HalfWord, position: usize) -> Result<HalfWord, DeviceError> {
    if position >= 16 {
        return Err(DeviceError::BadBitPosition(position));
    }
    Ok(HalfWord(h.0 ^ 1 << (15 - position)))
}
