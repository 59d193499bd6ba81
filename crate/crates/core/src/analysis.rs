//! Experiment drivers: bit-pattern census across systems and granularities,
//! single-bit-flip squared-error sweep, energy comparison against raw
//! storage, and the CSV schemas the CLI emits.

use crate::codec::{self, CodecError, SchemeSet};
use crate::halffloat::{half_to_real, real_to_half, CellHistogram, HalfWord};
use crate::memdevice::{self, CostTable};
use crate::stream_rng;
use rand::RngExt;
use std::fmt;
use std::io::{self, Write};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which storage system a census or energy row describes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SystemLabel {
    /// Reference system: plain sign-duplicated storage for the census, raw
    /// unprotected storage for the energy comparison.
    Baseline,
    /// Hybrid scheme selection at the given group size.
    Granularity(usize),
}

impl fmt::Display for SystemLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemLabel::Baseline => f.write_str("baseline"),
            SystemLabel::Granularity(g) => write!(f, "granularity_{g}"),
        }
    }
}

/// Cell pattern counts of one system over a weight set.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PatternCensus {
    pub system: SystemLabel,
    pub histogram: CellHistogram,
}

/// Pattern census of the sign-duplicated baseline plus the hybrid system at
/// each requested granularity. Counts come straight from the encoded
/// buffer's histogram, so census and energy accounting cannot drift apart.
pub fn census(
    weights: &[HalfWord],
    granularities: &[usize],
) -> Result<Vec<PatternCensus>, CodecError> {
    let mut out = Vec::with_capacity(granularities.len() + 1);
    let base = codec::encode_buffer(weights, 1, SchemeSet::no_change_only())?;
    out.push(PatternCensus {
        system: SystemLabel::Baseline,
        histogram: base.cell_histogram(),
    });
    for &g in granularities {
        let buf = codec::encode_buffer(weights, g, SchemeSet::all())?;
        out.push(PatternCensus {
            system: SystemLabel::Granularity(g),
            histogram: buf.cell_histogram(),
        });
    }
    Ok(out)
}

/// Mean squared error of flipping each bit position over a random sample of
/// weights in (-1, 1).
#[derive(Clone, PartialEq, Debug)]
pub struct SseSweep {
    /// Mean squared value difference per flipped bit position, MSB first.
    pub mean_sse: [f64; 16],
    /// Flips that produced non-finite values, excluded from the mean.
    pub overflow: [u64; 16],
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Default)]
struct SsePartial {
    sum: [f64; 16],
    overflow: [u64; 16],
}

/// Samples per deterministic accumulation chunk. Fixing the chunk layout
/// makes the final sums independent of thread count.
const SSE_CHUNK: usize = 8192;

fn sse_chunk(seed: u64, chunk: usize, len: usize) -> SsePartial {
    let mut rng = stream_rng(seed, chunk as u64);
    let mut part = SsePartial::default();
    for _ in 0..len {
        let x = rng.random::<f64>() * 2.0 - 1.0;
        let h = real_to_half(x).expect("|x| <= 1 is always representable");
        let base = half_to_real(h);
        for (pos, (sum, overflow)) in part.sum.iter_mut().zip(&mut part.overflow).enumerate() {
            let flipped = half_to_real(HalfWord(h.0 ^ 1 << (15 - pos)));
            if flipped.is_finite() {
                let diff = base - flipped;
                *sum += diff * diff;
            } else {
                *overflow += 1;
            }
        }
    }
    part
}

fn sse_assemble(partials: Vec<SsePartial>, n: usize, seed: u64) -> SseSweep {
    let mut sum = [0.0f64; 16];
    let mut overflow = [0u64; 16];
    for part in partials {
        for k in 0..16 {
            sum[k] += part.sum[k];
            overflow[k] += part.overflow[k];
        }
    }
    let mut mean_sse = [0.0f64; 16];
    for k in 0..16 {
        let included = n as u64 - overflow[k];
        if included > 0 {
            mean_sse[k] = sum[k] / included as f64;
        }
    }
    SseSweep {
        mean_sse,
        overflow,
        samples: n,
        seed,
    }
}

fn sse_chunk_lens(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n.div_ceil(SSE_CHUNK)).map(move |c| (c, SSE_CHUNK.min(n - c * SSE_CHUNK)))
}

/// Draws `n` values uniform in (-1, 1), converts each to half precision and
/// measures the squared value change of flipping every bit position.
pub fn sse_sweep(n: usize, seed: u64) -> SseSweep {
    assert!(n >= 1, "sample count must be positive");
    #[cfg(feature = "parallel")]
    {
        let chunks: Vec<(usize, usize)> = sse_chunk_lens(n).collect();
        let partials = chunks
            .into_par_iter()
            .map(|(c, len)| sse_chunk(seed, c, len))
            .collect();
        sse_assemble(partials, n, seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        sse_sweep_seq(n, seed)
    }
}

/// Sequential reference for [`sse_sweep`].
pub fn sse_sweep_seq(n: usize, seed: u64) -> SseSweep {
    assert!(n >= 1, "sample count must be positive");
    let partials = sse_chunk_lens(n)
        .map(|(c, len)| sse_chunk(seed, c, len))
        .collect();
    sse_assemble(partials, n, seed)
}

/// One system's totals in the energy comparison.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct EnergyRow {
    pub system: SystemLabel,
    pub read_energy_nj: f64,
    pub write_energy_nj: f64,
    pub read_cycles: u64,
    pub write_cycles: u64,
    /// Percent reduction vs. the raw baseline; positive means cheaper.
    pub delta_read_pct: f64,
    pub delta_write_pct: f64,
}

/// Charges the raw unprotected baseline and the hybrid system at each
/// granularity with the given cost table.
pub fn energy_comparison(
    weights: &[HalfWord],
    granularities: &[usize],
    costs: &CostTable,
) -> Result<Vec<EnergyRow>, CodecError> {
    let base = memdevice::charge(
        &codec::encode_buffer(weights, 1, SchemeSet::empty())?,
        costs,
    );
    let reduction = |baseline: f64, value: f64| {
        if baseline > 0.0 {
            100.0 * (baseline - value) / baseline
        } else {
            0.0
        }
    };
    let mut out = Vec::with_capacity(granularities.len() + 1);
    out.push(EnergyRow {
        system: SystemLabel::Baseline,
        read_energy_nj: base.read_energy_nj,
        write_energy_nj: base.write_energy_nj,
        read_cycles: base.read_cycles,
        write_cycles: base.write_cycles,
        delta_read_pct: 0.0,
        delta_write_pct: 0.0,
    });
    for &g in granularities {
        let report = memdevice::charge(&codec::encode_buffer(weights, g, SchemeSet::all())?, costs);
        out.push(EnergyRow {
            system: SystemLabel::Granularity(g),
            read_energy_nj: report.read_energy_nj,
            write_energy_nj: report.write_energy_nj,
            read_cycles: report.read_cycles,
            write_cycles: report.write_cycles,
            delta_read_pct: reduction(base.read_energy_nj, report.read_energy_nj),
            delta_write_pct: reduction(base.write_energy_nj, report.write_energy_nj),
        });
    }
    Ok(out)
}

/// Deterministic surrogate weight sample, uniform in (-1, 1).
pub fn sample_uniform_weights(n: usize, seed: u64) -> Vec<HalfWord> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = rng.random::<f64>() * 2.0 - 1.0;
            real_to_half(x).expect("|x| <= 1 is always representable")
        })
        .collect()
}

/// Writes `census.csv`: `system,p00,p01,p10,p11`.
pub fn write_census_csv(rows: &[PatternCensus], w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "system,p00,p01,p10,p11")?;
    for row in rows {
        let h = row.histogram;
        writeln!(w, "{},{},{},{},{}", row.system, h.p00, h.p01, h.p10, h.p11)?;
    }
    Ok(())
}

/// Writes `sse.csv`: `position,mean_sse,overflow_count`.
pub fn write_sse_csv(sweep: &SseSweep, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "position,mean_sse,overflow_count")?;
    for pos in 0..16 {
        writeln!(w, "{},{},{}", pos, sweep.mean_sse[pos], sweep.overflow[pos])?;
    }
    Ok(())
}

/// Writes `energy.csv`:
/// `system,read_nj,write_nj,read_cycles,write_cycles,delta_read_pct,delta_write_pct`.
pub fn write_energy_csv(rows: &[EnergyRow], w: &mut impl Write) -> io::Result<()> {
    writeln!(
        w,
        "system,read_nj,write_nj,read_cycles,write_cycles,delta_read_pct,delta_write_pct"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.system,
            r.read_energy_nj,
            r.write_energy_nj,
            r.read_cycles,
            r.write_cycles,
            r.delta_read_pct,
            r.delta_write_pct
        )?;
    }
    Ok(())
}
