//! Bit-exact IEEE 754 half-precision words and their 2-bit cell view.
//!
//! A [`HalfWord`] is addressed most-significant-bit first: bit 0 is the sign,
//! bits 1-5 the exponent, bits 6-15 the mantissa. The word decomposes into
//! eight 2-bit cells; cell `k` holds bits `2k` and `2k+1`. For every finite
//! value with magnitude below 2 the exponent MSB (bit 1) is zero, which is
//! the slack the codec exploits.

use std::fmt;
use thiserror::Error;

/// Conversion failures for [`real_to_half`].
#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum HalfError {
    /// NaN or infinite input.
    #[error("value is not finite")]
    NotFinite,
    /// Finite input whose nearest half-precision value is infinite.
    #[error("value {0} overflows the half-precision range")]
    OutOfRange(f64),
}

/// A 16-bit half-precision word viewed as raw storage bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct HalfWord(pub u16);

/// Content of one 2-bit cell.
///
/// `P00`/`P11` program in one step and are immune in the soft-error model
/// (stable); `P01`/`P10` need the second programming step and are the
/// vulnerable, expensive patterns (intermediate).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum CellPattern {
    P00,
    P01,
    P10,
    P11,
}

impl CellPattern {
    /// Pattern for a 2-bit value (high bit first).
    pub fn from_bits(bits: u16) -> CellPattern {
        match bits & 0b11 {
            0b00 => CellPattern::P00,
            0b01 => CellPattern::P01,
            0b10 => CellPattern::P10,
            _ => CellPattern::P11,
        }
    }

    /// One-step patterns `00`/`11`.
    pub fn is_stable(self) -> bool {
        matches!(self, CellPattern::P00 | CellPattern::P11)
    }

    /// Two-step patterns `01`/`10`.
    pub fn is_intermediate(self) -> bool {
        !self.is_stable()
    }
}

impl HalfWord {
    /// Bit at MSB-first index `i` (0 = sign, 1 = exponent MSB, ...).
    pub fn bit(self, i: usize) -> u16 {
        assert!(i < 16, "bit index {i} out of range");
        (self.0 >> (15 - i)) & 1
    }

    /// Sign bit (bit 0).
    pub fn sign_bit(self) -> u16 {
        self.0 >> 15
    }

    /// Exponent MSB (bit 1), the backup slot for the sign.
    pub fn exp_msb(self) -> u16 {
        (self.0 >> 14) & 1
    }

    /// The eight cells, most significant pair first.
    pub fn cells(self) -> [CellPattern; 8] {
        let mut out = [CellPattern::P00; 8];
        for (k, cell) in out.iter_mut().enumerate() {
            *cell = CellPattern::from_bits(self.0 >> (14 - 2 * k));
        }
        out
    }

    /// Parses a cell-pair string such as `"00 01 11 00 01 01 00 11"`.
    /// Whitespace is optional; anything but 16 binary digits is rejected.
    pub fn from_pairs(s: &str) -> Option<HalfWord> {
        let mut bits = 0u16;
        let mut n = 0;
        for ch in s.chars() {
            match ch {
                '0' | '1' => {
                    if n == 16 {
                        return None;
                    }
                    bits = (bits << 1) | (ch == '1') as u16;
                    n += 1;
                }
                c if c.is_whitespace() => {}
                _ => return None,
            }
        }
        (n == 16).then_some(HalfWord(bits))
    }
}

impl fmt::Display for HalfWord {
    /// Cell-pair form, e.g. `00 01 11 00 01 01 00 11`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..8 {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{:02b}", (self.0 >> (14 - 2 * k)) & 0b11)?;
        }
        Ok(())
    }
}

impl fmt::Debug for HalfWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HalfWord({:#06x} = {self})", self.0)
    }
}

/// Nearest half-precision word, ties to even.
pub fn real_to_half(x: f64) -> Result<HalfWord, HalfError> {
    if !x.is_finite() {
        return Err(HalfError::NotFinite);
    }
    let sign = ((x.to_bits() >> 63) as u16) << 15;
    let mag = x.abs();
    if mag == 0.0 {
        return Ok(HalfWord(sign));
    }
    // Round-to-nearest maps anything from 65520 up to infinity.
    if mag >= 65520.0 {
        return Err(HalfError::OutOfRange(x));
    }
    if mag < 2f64.powi(-14) {
        // Subnormal range, in units of 2^-24. A result of 1024 lands on the
        // smallest normal encoding, which is exactly the bit pattern 0x0400.
        let q = (mag * 2f64.powi(24)).round_ties_even() as u16;
        return Ok(HalfWord(sign | q));
    }
    let e2 = ((mag.to_bits() >> 52) & 0x7FF) as i32 - 1023;
    // Power-of-two scaling is exact; one integer rounding decides the word.
    let scaled = (mag * 2f64.powi(10 - e2)).round_ties_even() as u32;
    let (exp, mant) = if scaled == 2048 {
        (e2 + 16, 0)
    } else {
        (e2 + 15, scaled - 1024)
    };
    debug_assert!((1..=30).contains(&exp));
    Ok(HalfWord(sign | ((exp as u16) << 10) | mant as u16))
}

/// Exact real value of a half word. Infinities map to `f64` infinities and
/// NaN payloads to `f64::NAN`, so non-finite inputs stay distinguishable.
pub fn half_to_real(h: HalfWord) -> f64 {
    let sign = if h.sign_bit() == 1 { -1.0 } else { 1.0 };
    let exp = (h.0 >> 10) & 0x1F;
    let mant = (h.0 & 0x3FF) as f64;
    match exp {
        0 => sign * mant * 2f64.powi(-24),
        31 => {
            if mant == 0.0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        _ => sign * (1.0 + mant / 1024.0) * 2f64.powi(exp as i32 - 15),
    }
}

/// Cell pattern counts over a sequence of stored words.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct CellHistogram {
    pub p00: u64,
    pub p01: u64,
    pub p10: u64,
    pub p11: u64,
}

impl CellHistogram {
    pub fn from_words(words: &[HalfWord]) -> CellHistogram {
        let mut h = CellHistogram::default();
        for &w in words {
            h.add_word(w);
        }
        h
    }

    pub fn add_word(&mut self, w: HalfWord) {
        for k in 0..8 {
            match (w.0 >> (14 - 2 * k)) & 0b11 {
                0b00 => self.p00 += 1,
                0b01 => self.p01 += 1,
                0b10 => self.p10 += 1,
                _ => self.p11 += 1,
            }
        }
    }

    pub fn merge(&mut self, other: CellHistogram) {
        self.p00 += other.p00;
        self.p01 += other.p01;
        self.p10 += other.p10;
        self.p11 += other.p11;
    }

    pub fn total(&self) -> u64 {
        self.p00 + self.p01 + self.p10 + self.p11
    }

    pub fn stable(&self) -> u64 {
        self.p00 + self.p11
    }

    pub fn intermediate(&self) -> u64 {
        self.p01 + self.p10
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(s: &str) -> HalfWord {
        HalfWord::from_pairs(s).expect("valid pair string")
    }

    #[test]
    fn one_is_a_power_of_two() {
        assert_eq!(real_to_half(1.0).unwrap(), HalfWord(0x3C00));
        assert_eq!(real_to_half(-1.0).unwrap(), HalfWord(0xBC00));
        assert_eq!(half_to_real(HalfWord(0x3C00)), 1.0);
        assert_eq!(half_to_real(HalfWord(0xBC00)), -1.0);
    }

    #[test]
    fn worked_example_weights() {
        assert_eq!(
            real_to_half(0.004222).unwrap(),
            pairs("00 01 11 00 01 01 00 11")
        );
        assert_eq!(
            real_to_half(0.020614).unwrap(),
            pairs("00 10 01 01 01 00 01 11")
        );
        assert_eq!(
            real_to_half(0.0004982).unwrap(),
            pairs("00 01 00 00 00 01 01 01")
        );
    }

    #[test]
    fn worked_example_value() {
        // 0 00111 0001010011 is (1 + 83/1024) * 2^-8.
        let v = half_to_real(pairs("00 01 11 00 01 01 00 11"));
        assert_eq!(v, 1.0810546875 * 2f64.powi(-8));
        assert!(v > 0.004221 && v < 0.004223);
    }

    #[test]
    fn cells_of_known_words() {
        use CellPattern::*;
        assert_eq!(HalfWord(0x0000).cells(), [P00; 8]);
        assert_eq!(HalfWord(0xFFFF).cells(), [P11; 8]);
        assert_eq!(
            pairs("00 10 01 01 01 00 01 11").cells(),
            [P00, P10, P01, P01, P01, P00, P01, P11]
        );
    }

    #[test]
    fn pattern_stability() {
        assert!(CellPattern::P00.is_stable());
        assert!(CellPattern::P11.is_stable());
        assert!(CellPattern::P01.is_intermediate());
        assert!(CellPattern::P10.is_intermediate());
    }

    #[test]
    fn signed_zero_round_trips() {
        assert_eq!(real_to_half(0.0).unwrap(), HalfWord(0x0000));
        assert_eq!(real_to_half(-0.0).unwrap(), HalfWord(0x8000));
        assert!(half_to_real(HalfWord(0x8000)).is_sign_negative());
    }

    #[test]
    fn subnormals_are_exact() {
        assert_eq!(half_to_real(HalfWord(0x0001)), 2f64.powi(-24));
        assert_eq!(real_to_half(2f64.powi(-24)).unwrap(), HalfWord(0x0001));
        // Largest subnormal and the normal right above it.
        assert_eq!(
            real_to_half(1023.0 * 2f64.powi(-24)).unwrap(),
            HalfWord(0x03FF)
        );
        assert_eq!(real_to_half(2f64.powi(-14)).unwrap(), HalfWord(0x0400));
    }

    #[test]
    fn ties_round_to_even_mantissa() {
        // 1 + 0.5/1024 sits between mantissa 0 and 1; even wins.
        assert_eq!(real_to_half(1.0 + 0.5 / 1024.0).unwrap(), HalfWord(0x3C00));
        // 1 + 1.5/1024 sits between mantissa 1 and 2; even wins again.
        assert_eq!(real_to_half(1.0 + 1.5 / 1024.0).unwrap(), HalfWord(0x3C02));
    }

    #[test]
    fn range_errors() {
        assert_eq!(real_to_half(f64::NAN), Err(HalfError::NotFinite));
        assert_eq!(real_to_half(f64::INFINITY), Err(HalfError::NotFinite));
        assert_eq!(real_to_half(65520.0), Err(HalfError::OutOfRange(65520.0)));
        assert_eq!(real_to_half(1e9), Err(HalfError::OutOfRange(1e9)));
        // Largest finite half survives.
        assert_eq!(real_to_half(65504.0).unwrap(), HalfWord(0x7BFF));
        assert_eq!(real_to_half(65519.9).unwrap(), HalfWord(0x7BFF));
    }

    #[test]
    fn non_finite_halves_report_distinctly() {
        assert_eq!(half_to_real(HalfWord(0x7C00)), f64::INFINITY);
        assert_eq!(half_to_real(HalfWord(0xFC00)), f64::NEG_INFINITY);
        assert!(half_to_real(HalfWord(0x7C01)).is_nan());
    }

    #[test]
    fn round_trip_is_exhaustive() {
        for bits in 0..=u16::MAX {
            let h = HalfWord(bits);
            let v = half_to_real(h);
            if !v.is_finite() {
                continue;
            }
            assert_eq!(real_to_half(v).unwrap(), h, "round trip of {h:?}");
        }
    }

    #[test]
    fn cells_are_a_bijection() {
        for bits in 0..=u16::MAX {
            let cells = HalfWord(bits).cells();
            let mut rebuilt = 0u16;
            for c in cells {
                let two = match c {
                    CellPattern::P00 => 0,
                    CellPattern::P01 => 1,
                    CellPattern::P10 => 2,
                    CellPattern::P11 => 3,
                };
                rebuilt = (rebuilt << 2) | two;
            }
            assert_eq!(rebuilt, bits);
        }
    }

    #[test]
    fn magnitude_below_two_never_uses_the_exponent_msb() {
        for bits in 0..=u16::MAX {
            let h = HalfWord(bits);
            let v = half_to_real(h);
            if v.is_finite() && v.abs() < 2.0 {
                assert_eq!(h.exp_msb(), 0, "{h:?} = {v}");
            }
        }
    }

    #[test]
    fn histogram_counts_cells() {
        let h = CellHistogram::from_words(&[
            HalfWord::from_pairs("00 01 11 00 01 01 00 11").unwrap(),
            HalfWord(0x0000),
        ]);
        assert_eq!(
            h,
            CellHistogram {
                p00: 11,
                p01: 3,
                p10: 0,
                p11: 2
            }
        );
        assert_eq!(h.total(), 16);
        assert_eq!(h.stable(), 13);
        assert_eq!(h.intermediate(), 3);
    }

    proptest! {
        #[test]
        fn pair_display_parses_back(bits in proptest::num::u16::ANY) {
            let h = HalfWord(bits);
            prop_assert_eq!(HalfWord::from_pairs(&h.to_string()), Some(h));
        }
    }
}
