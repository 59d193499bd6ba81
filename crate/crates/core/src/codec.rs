//! Sign-bit duplication, the three content reformation schemes, per-group
//! scheme selection with tri-level metadata, and the `MLCW` buffer format.
//!
//! Encoding a weight always starts by copying the sign bit into the unused
//! exponent MSB, which turns the leading cell into a stable `00`/`11` pair.
//! Each group of `granularity` weights is then stored under the single
//! reformation scheme that maximizes the group's stable-cell count:
//!
//! - `NoChange` writes the sign-protected word as is,
//! - `Rotate` rotates the 14 payload bits right by one (the sign pair stays),
//! - `Round` snaps the low nibble to the nearest of `0000`/`0011`/`1100`/`1111`.
//!
//! One tri-level metadata symbol per group records the choice; metadata is
//! modeled as error-free.

use crate::halffloat::{CellHistogram, HalfWord};
use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Group sizes the buffer format supports.
pub const GRANULARITIES: [usize; 5] = [1, 2, 4, 8, 16];

/// Errors for codec operations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    /// The word's exponent MSB is already set: the value is NaN, infinite or
    /// has magnitude >= 2, so there is no free slot for the sign backup.
    #[error("word {bits:#06x} is outside the encodable weight range")]
    Domain { bits: u16 },
    #[error("granularity {0} is not one of 1, 2, 4, 8, 16")]
    InvalidGranularity(usize),
    #[error("a non-empty scheme set must include the no-change scheme")]
    MissingNoChange,
}

/// A content reformation scheme; doubles as the tri-level metadata symbol.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
#[repr(u8)]
pub enum Scheme {
    NoChange = 0,
    Rotate = 1,
    Round = 2,
}

impl Scheme {
    /// All schemes in tie-break preference order: identity beats permutation
    /// beats the lossy rounding.
    pub const PREFERENCE: [Scheme; 3] = [Scheme::NoChange, Scheme::Rotate, Scheme::Round];

    pub fn metadata_byte(self) -> u8 {
        self as u8
    }

    pub fn from_metadata_byte(b: u8) -> Option<Scheme> {
        match b {
            0 => Some(Scheme::NoChange),
            1 => Some(Scheme::Rotate),
            2 => Some(Scheme::Round),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::NoChange => "nochange",
            Scheme::Rotate => "rotate",
            Scheme::Round => "round",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Scheme, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nochange" | "no-change" => Ok(Scheme::NoChange),
            "rotate" => Ok(Scheme::Rotate),
            "round" => Ok(Scheme::Round),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

/// Set of schemes a group selection may choose from.
///
/// The empty set is the unprotected sentinel: [`encode_buffer`] then bypasses
/// sign duplication entirely and stores raw words.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct SchemeSet(u8);

impl SchemeSet {
    pub fn empty() -> SchemeSet {
        SchemeSet(0)
    }

    /// All three schemes (the hybrid system).
    pub fn all() -> SchemeSet {
        SchemeSet(0b111)
    }

    /// Only the identity scheme: plain sign-duplicated storage.
    pub fn no_change_only() -> SchemeSet {
        SchemeSet::empty().with(Scheme::NoChange)
    }

    /// The two exactly invertible schemes.
    pub fn lossless() -> SchemeSet {
        SchemeSet::empty()
            .with(Scheme::NoChange)
            .with(Scheme::Rotate)
    }

    pub fn with(self, s: Scheme) -> SchemeSet {
        SchemeSet(self.0 | 1 << s as u8)
    }

    pub fn contains(self, s: Scheme) -> bool {
        self.0 & (1 << s as u8) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Member schemes in preference order.
    pub fn iter(self) -> impl Iterator<Item = Scheme> {
        Scheme::PREFERENCE
            .into_iter()
            .filter(move |&s| self.contains(s))
    }
}

impl fmt::Display for SchemeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        for (i, s) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// How one group's words are stored.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GroupMode {
    /// Sign-duplicated and reformed under the given scheme.
    Protected(Scheme),
    /// Raw words, no sign backup (metadata byte 0xFF).
    Unprotected,
}

impl GroupMode {
    pub fn metadata_byte(self) -> u8 {
        match self {
            GroupMode::Protected(s) => s.metadata_byte(),
            GroupMode::Unprotected => 0xFF,
        }
    }

    pub fn from_metadata_byte(b: u8) -> Option<GroupMode> {
        match b {
            0xFF => Some(GroupMode::Unprotected),
            _ => Scheme::from_metadata_byte(b).map(GroupMode::Protected),
        }
    }
}

/// Stored cell words plus one metadata symbol per group.
///
/// Groups are consecutive runs of `granularity` words; only the last group
/// may be shorter. This is what faults are injected into and what energy is
/// charged against.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EncodedBuffer {
    granularity: usize,
    modes: Vec<GroupMode>,
    words: Vec<HalfWord>,
}

impl EncodedBuffer {
    fn new(granularity: usize, modes: Vec<GroupMode>, words: Vec<HalfWord>) -> EncodedBuffer {
        debug_assert_eq!(modes.len(), words.len().div_ceil(granularity));
        EncodedBuffer {
            granularity,
            modes,
            words,
        }
    }

    /// Same granularity and metadata, different stored words. The fault
    /// injector uses this; metadata cells are modeled error-free.
    pub(crate) fn with_words(&self, words: Vec<HalfWord>) -> EncodedBuffer {
        assert_eq!(words.len(), self.words.len());
        EncodedBuffer::new(self.granularity, self.modes.clone(), words)
    }

    pub fn granularity(&self) -> usize {
        self.granularity
    }

    /// Total number of stored weights.
    pub fn count(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[GroupMode] {
        &self.modes
    }

    pub fn stored_words(&self) -> &[HalfWord] {
        &self.words
    }

    /// Groups in order as `(mode, stored words)`.
    pub fn groups(&self) -> impl Iterator<Item = (GroupMode, &[HalfWord])> {
        self.modes
            .iter()
            .copied()
            .zip(self.words.chunks(self.granularity))
    }

    /// Pattern histogram of all stored cells; the single source of truth for
    /// census and energy accounting. Metadata symbols are not cells.
    pub fn cell_histogram(&self) -> CellHistogram {
        #[cfg(feature = "parallel")]
        {
            self.words
                .par_chunks(4096)
                .map(CellHistogram::from_words)
                .reduce(CellHistogram::default, |mut a, b| {
                    a.merge(b);
                    a
                })
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.cell_histogram_seq()
        }
    }

    /// Sequential reference for [`EncodedBuffer::cell_histogram`].
    pub fn cell_histogram_seq(&self) -> CellHistogram {
        CellHistogram::from_words(&self.words)
    }
}

/// Copies the sign into the exponent MSB, making cell 0 a stable pair
/// (`00` positive, `11` negative).
pub fn duplicate_sign(h: HalfWord) -> Result<HalfWord, CodecError> {
    if h.exp_msb() != 0 {
        return Err(CodecError::Domain { bits: h.0 });
    }
    Ok(HalfWord(h.0 | (h.0 >> 15) << 14))
}

/// Result of undoing the sign duplication.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct StrippedWord {
    /// Recovered sign bit (bit 0 wins on disagreement).
    pub sign: u16,
    /// Word with the backup slot cleared back to zero.
    pub word: HalfWord,
    /// The two sign copies disagreed. Under the fault model the sign pair is
    /// stable and never flips, so this is a diagnostic, not a failure.
    pub mismatch: bool,
}

/// Recovers the original word from a sign-duplicated one.
pub fn strip_sign_duplicate(h: HalfWord) -> StrippedWord {
    StrippedWord {
        sign: h.sign_bit(),
        word: HalfWord(h.0 & !0x4000),
        mismatch: h.sign_bit() != h.exp_msb(),
    }
}

/// Rotates the 14 payload bits (bits 2-15) right by one; the sign pair in
/// cell 0 does not move.
pub fn rotate_payload_right(h: HalfWord) -> HalfWord {
    let payload = h.0 & 0x3FFF;
    HalfWord((h.0 & 0xC000) | (payload >> 1) | (payload & 1) << 13)
}

/// Exact inverse of [`rotate_payload_right`].
pub fn rotate_payload_left(h: HalfWord) -> HalfWord {
    let payload = h.0 & 0x3FFF;
    HalfWord((h.0 & 0xC000) | ((payload << 1) & 0x3FFF) | (payload >> 13))
}

/// Low-nibble replacement: each class of four values snaps to its cell-
/// friendly representative.
const ROUND_NIBBLE: [u16; 16] = [
    0b0000, 0b0000, 0b0000, 0b0000, // 0000..0011
    0b0011, 0b0011, 0b0011, 0b0011, // 0100..0111
    0b1100, 0b1100, 0b1100, 0b1100, // 1000..1011
    0b1111, 0b1111, 0b1111, 0b1111, // 1100..1111
];

/// Replaces bits 12-15 with the nearest stable-pair nibble.
pub fn round_tail(h: HalfWord) -> HalfWord {
    HalfWord((h.0 & 0xFFF0) | ROUND_NIBBLE[(h.0 & 0xF) as usize])
}

/// Number of stable (`00`/`11`) cells in the word, 0..=8.
pub fn stable_count(h: HalfWord) -> u32 {
    8 - ((h.0 ^ (h.0 >> 1)) & 0x5555).count_ones()
}

/// Sign-duplicates and then applies the scheme's transform.
pub fn apply_scheme(h: HalfWord, s: Scheme) -> Result<HalfWord, CodecError> {
    Ok(transform(duplicate_sign(h)?, s))
}

fn transform(stored: HalfWord, s: Scheme) -> HalfWord {
    match s {
        Scheme::NoChange => stored,
        Scheme::Rotate => rotate_payload_right(stored),
        Scheme::Round => round_tail(stored),
    }
}

/// Undoes a scheme application. `Round` is lossy by design: the returned
/// word is the rounded weight.
pub fn unapply_scheme(stored: HalfWord, s: Scheme) -> StrippedWord {
    match s {
        Scheme::NoChange | Scheme::Round => strip_sign_duplicate(stored),
        Scheme::Rotate => strip_sign_duplicate(rotate_payload_left(stored)),
    }
}

/// Picks the scheme maximizing the group's stable-cell count in stored form,
/// ties broken by [`Scheme::PREFERENCE`].
pub fn select_scheme(group: &[HalfWord]) -> Result<Scheme, CodecError> {
    select_scheme_among(group, SchemeSet::all())
}

/// [`select_scheme`] restricted to an enabled set.
pub fn select_scheme_among(group: &[HalfWord], enabled: SchemeSet) -> Result<Scheme, CodecError> {
    if !enabled.contains(Scheme::NoChange) {
        return Err(CodecError::MissingNoChange);
    }
    let mut best = Scheme::NoChange;
    let mut best_score = 0u32;
    let mut first = true;
    for s in enabled.iter() {
        let mut score = 0;
        for &w in group {
            score += stable_count(apply_scheme(w, s)?);
        }
        if first || score > best_score {
            best = s;
            best_score = score;
            first = false;
        }
    }
    Ok(best)
}

fn encode_group(
    group: &[HalfWord],
    enabled: SchemeSet,
    sign_protect: bool,
) -> Result<(GroupMode, Vec<HalfWord>), CodecError> {
    if enabled.is_empty() {
        return Ok((GroupMode::Unprotected, group.to_vec()));
    }
    if !sign_protect {
        // Ablation path: score and store without the sign backup.
        let mut best = Scheme::NoChange;
        let mut best_score = 0u32;
        let mut first = true;
        for s in enabled.iter() {
            let score = group.iter().map(|&w| stable_count(transform(w, s))).sum();
            if first || score > best_score {
                best = s;
                best_score = score;
                first = false;
            }
        }
        let stored = group.iter().map(|&w| transform(w, best)).collect();
        return Ok((GroupMode::Protected(best), stored));
    }
    let scheme = select_scheme_among(group, enabled)?;
    let stored = group
        .iter()
        .map(|&w| apply_scheme(w, scheme))
        .collect::<Result<_, _>>()?;
    Ok((GroupMode::Protected(scheme), stored))
}

/// Encodes weights into a stored buffer.
///
/// Weights are partitioned into consecutive groups of `granularity`; each
/// group gets the best scheme from `enabled`. An empty set is the
/// unprotected sentinel: raw words, no sign backup, metadata 0xFF.
pub fn encode_buffer(
    weights: &[HalfWord],
    granularity: usize,
    enabled: SchemeSet,
) -> Result<EncodedBuffer, CodecError> {
    encode_buffer_opts(weights, granularity, enabled, true)
}

/// Sequential reference for [`encode_buffer`].
pub fn encode_buffer_seq(
    weights: &[HalfWord],
    granularity: usize,
    enabled: SchemeSet,
) -> Result<EncodedBuffer, CodecError> {
    check_encode_args(weights, granularity, enabled)?;
    let groups = weights
        .chunks(granularity)
        .map(|g| encode_group(g, enabled, true))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(granularity, groups, weights.len()))
}

/// [`encode_buffer`] with the sign backup switchable, for ablation studies.
/// With `sign_protect` off, schemes are scored and applied on the raw words;
/// decoding such a buffer still recovers every weight of a lossless scheme
/// because the backup slot is zero in any valid weight.
pub fn encode_buffer_opts(
    weights: &[HalfWord],
    granularity: usize,
    enabled: SchemeSet,
    sign_protect: bool,
) -> Result<EncodedBuffer, CodecError> {
    check_encode_args(weights, granularity, enabled)?;
    #[cfg(feature = "parallel")]
    let groups = weights
        .par_chunks(granularity)
        .map(|g| encode_group(g, enabled, sign_protect))
        .collect::<Result<Vec<_>, _>>()?;
    #[cfg(not(feature = "parallel"))]
    let groups = weights
        .chunks(granularity)
        .map(|g| encode_group(g, enabled, sign_protect))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(granularity, groups, weights.len()))
}

fn check_encode_args(
    weights: &[HalfWord],
    granularity: usize,
    enabled: SchemeSet,
) -> Result<(), CodecError> {
    if !GRANULARITIES.contains(&granularity) {
        return Err(CodecError::InvalidGranularity(granularity));
    }
    if !enabled.is_empty() && !enabled.contains(Scheme::NoChange) {
        return Err(CodecError::MissingNoChange);
    }
    // Every weight must leave the backup slot free, unprotected mode included;
    // a magnitude >= 2 is never a valid weight.
    if let Some(bad) = weights.iter().find(|w| w.exp_msb() != 0) {
        return Err(CodecError::Domain { bits: bad.0 });
    }
    Ok(())
}

fn assemble(
    granularity: usize,
    groups: Vec<(GroupMode, Vec<HalfWord>)>,
    count: usize,
) -> EncodedBuffer {
    let mut modes = Vec::with_capacity(groups.len());
    let mut words = Vec::with_capacity(count);
    for (mode, stored) in groups {
        modes.push(mode);
        words.extend(stored);
    }
    EncodedBuffer::new(granularity, modes, words)
}

/// Decoded weights plus the sign-pair disagreement diagnostic.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Decoded {
    pub words: Vec<HalfWord>,
    /// Stored words whose two sign copies disagreed. Zero whenever the fault
    /// model's stable-cell immunity held.
    pub sign_mismatches: u64,
}

fn decode_group(mode: GroupMode, stored: &[HalfWord]) -> (Vec<HalfWord>, u64) {
    match mode {
        GroupMode::Unprotected => (stored.to_vec(), 0),
        GroupMode::Protected(s) => {
            let mut mismatches = 0;
            let words = stored
                .iter()
                .map(|&w| {
                    let u = unapply_scheme(w, s);
                    mismatches += u.mismatch as u64;
                    u.word
                })
                .collect();
            (words, mismatches)
        }
    }
}

/// Decodes every group back to weights, in order.
pub fn decode_buffer(buf: &EncodedBuffer) -> Decoded {
    #[cfg(feature = "parallel")]
    {
        let groups: Vec<_> = buf
            .modes
            .par_iter()
            .zip(buf.words.par_chunks(buf.granularity.max(1)))
            .map(|(&mode, stored)| decode_group(mode, stored))
            .collect();
        let mut out = Decoded {
            words: Vec::with_capacity(buf.count()),
            sign_mismatches: 0,
        };
        for (words, mismatches) in groups {
            out.words.extend(words);
            out.sign_mismatches += mismatches;
        }
        out
    }
    #[cfg(not(feature = "parallel"))]
    {
        decode_buffer_seq(buf)
    }
}

/// Sequential reference for [`decode_buffer`].
pub fn decode_buffer_seq(buf: &EncodedBuffer) -> Decoded {
    let mut out = Decoded {
        words: Vec::with_capacity(buf.count()),
        sign_mismatches: 0,
    };
    for (mode, stored) in buf.groups() {
        let (words, mismatches) = decode_group(mode, stored);
        out.words.extend(words);
        out.sign_mismatches += mismatches;
    }
    out
}

/// Metadata storage overhead ratio: 2 bits per group of `granularity`
/// 16-bit weights.
pub fn metadata_overhead(granularity: usize) -> f64 {
    assert!(granularity >= 1, "granularity must be positive");
    2.0 / (16.0 * granularity as f64)
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

/// Leading magic of an encoded buffer file.
pub const MAGIC: [u8; 4] = *b"MLCW";
/// Current format version byte.
pub const FORMAT_VERSION: u8 = 0x01;

/// Buffer (de)serialization errors.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not an MLCW buffer)")]
    BadMagic,
    #[error("unsupported format version {0:#04x}")]
    BadVersion(u8),
    #[error("invalid granularity byte {0}")]
    BadGranularity(u8),
    #[error("invalid metadata byte {0:#04x}")]
    BadMetadata(u8),
    #[error("trailing bytes after buffer payload")]
    TrailingData,
}

/// Writes the buffer: magic `MLCW`, version 0x01, granularity byte, weight
/// count as u32 LE, one metadata byte per group, stored words as u16 LE.
pub fn write_buffer(buf: &EncodedBuffer, w: &mut impl Write) -> Result<(), FormatError> {
    w.write_all(&MAGIC)?;
    w.write_all(&[FORMAT_VERSION, buf.granularity as u8])?;
    w.write_all(&(buf.count() as u32).to_le_bytes())?;
    for mode in &buf.modes {
        w.write_all(&[mode.metadata_byte()])?;
    }
    for word in &buf.words {
        w.write_all(&word.0.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a buffer written by [`write_buffer`], rejecting trailing bytes.
pub fn read_buffer(r: &mut impl Read) -> Result<EncodedBuffer, FormatError> {
    let mut head = [0u8; 10];
    r.read_exact(&mut head)?;
    if head[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if head[4] != FORMAT_VERSION {
        return Err(FormatError::BadVersion(head[4]));
    }
    let granularity = head[5] as usize;
    if !GRANULARITIES.contains(&granularity) {
        return Err(FormatError::BadGranularity(head[5]));
    }
    let count = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
    let group_count = count.div_ceil(granularity);

    let mut meta = vec![0u8; group_count];
    r.read_exact(&mut meta)?;
    let modes = meta
        .iter()
        .map(|&b| GroupMode::from_metadata_byte(b).ok_or(FormatError::BadMetadata(b)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut payload = vec![0u8; count * 2];
    r.read_exact(&mut payload)?;
    let words = payload
        .chunks_exact(2)
        .map(|b| HalfWord(u16::from_le_bytes([b[0], b[1]])))
        .collect();

    if r.read(&mut [0u8; 1])? != 0 {
        return Err(FormatError::TrailingData);
    }
    Ok(EncodedBuffer::new(granularity, modes, words))
}
