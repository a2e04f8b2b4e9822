//! Fibonacci LFSR test pattern generator.
//!
//! Taps follow the usual polynomial notation: taps `{32, 22, 2, 1}` stand for
//! x^32 + x^22 + x^2 + x + 1. Tap `t` reads register bit `degree - t`, the
//! low bit is emitted before each shift, and the feedback enters at the top.

use thiserror::Error;

use crate::faultsim::Pattern;

pub const DEFAULT_DEGREE: u32 = 32;
pub const DEFAULT_TAPS: [u32; 4] = [32, 22, 2, 1];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TpgError {
    #[error("seed must be nonzero")]
    ZeroSeed,
    #[error("seed {seed:#x} does not fit in {degree} bits")]
    SeedOutOfRange { seed: u64, degree: u32 },
    #[error("tap set is empty")]
    EmptyTaps,
    #[error("tap {tap} outside 1..={degree}")]
    TapOutOfRange { tap: u32, degree: u32 },
    #[error("degree {0} outside 2..=64")]
    Degree(u32),
    #[error("cannot parse tap list `{0}`")]
    TapSyntax(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lfsr {
    degree: u32,
    taps: Vec<u32>,
    tap_mask: u64,
    state: u64,
    seed: u64,
}

impl Lfsr {
    pub fn new(degree: u32, taps: &[u32], seed: u64) -> Result<Self, TpgError> {
        if !(2..=64).contains(&degree) {
            return Err(TpgError::Degree(degree));
        }
        if taps.is_empty() {
            return Err(TpgError::EmptyTaps);
        }
        if let Some(&tap) = taps.iter().find(|&&t| t == 0 || t > degree) {
            return Err(TpgError::TapOutOfRange { tap, degree });
        }
        if seed == 0 {
            return Err(TpgError::ZeroSeed);
        }
        if degree < 64 && seed >> degree != 0 {
            return Err(TpgError::SeedOutOfRange { seed, degree });
        }
        let mut taps = taps.to_vec();
        taps.push(degree);
        taps.sort_unstable_by(|a, b| b.cmp(a));
        taps.dedup();
        let tap_mask = taps.iter().fold(0u64, |m, &t| m | 1 << (degree - t));
        Ok(Lfsr {
            degree,
            taps,
            tap_mask,
            state: seed,
            seed,
        })
    }

    /// Degree-32 generator with the default primitive polynomial.
    pub fn with_seed(seed: u32) -> Result<Self, TpgError> {
        Self::new(DEFAULT_DEGREE, &DEFAULT_TAPS, seed as u64)
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Tap positions, descending, always including the degree.
    pub fn taps(&self) -> &[u32] {
        &self.taps
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn step(&mut self) -> bool {
        let out = self.state & 1 == 1;
        let fb = (self.state & self.tap_mask).count_ones() as u64 & 1;
        self.state = (self.state >> 1) | (fb << (self.degree - 1));
        out
    }

    pub fn bits(&mut self, count: usize) -> Vec<bool> {
        (0..count).map(|_| self.step()).collect()
    }

    /// `pattern_count` patterns of `input_count` consecutive bits each.
    pub fn patterns(&mut self, input_count: usize, pattern_count: usize) -> Vec<Pattern> {
        (0..pattern_count).map(|_| self.bits(input_count)).collect()
    }

    /// Steps until the state returns to its starting value. Only sensible
    /// for small degrees.
    pub fn period(&self) -> u64 {
        let mut probe = self.clone();
        let start = probe.state;
        let mut n = 0u64;
        loop {
            probe.step();
            n += 1;
            if probe.state == start {
                return n;
            }
        }
    }
}

/// Polynomial choice shared by every session of a device; the seed varies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LfsrConfig {
    pub degree: u32,
    pub taps: Vec<u32>,
}

impl Default for LfsrConfig {
    fn default() -> Self {
        LfsrConfig {
            degree: DEFAULT_DEGREE,
            taps: DEFAULT_TAPS.to_vec(),
        }
    }
}

impl LfsrConfig {
    /// Degree is taken as the largest tap.
    pub fn from_taps(taps: &[u32]) -> Result<Self, TpgError> {
        let degree = *taps.iter().max().ok_or(TpgError::EmptyTaps)?;
        let cfg = LfsrConfig {
            degree,
            taps: taps.to_vec(),
        };
        cfg.generator(1)?;
        Ok(cfg)
    }

    pub fn generator(&self, seed: u64) -> Result<Lfsr, TpgError> {
        Lfsr::new(self.degree, &self.taps, seed)
    }

    /// Patterns for one test session.
    pub fn patterns(
        &self,
        seed: u64,
        input_count: usize,
        pattern_count: usize,
    ) -> Result<Vec<Pattern>, TpgError> {
        Ok(self.generator(seed)?.patterns(input_count, pattern_count))
    }
}

/// Runs a fresh generator and returns the pattern list. Deterministic in
/// `(degree, taps, seed, input_count, pattern_count)`.
pub fn gen_patterns(lfsr: &mut Lfsr, input_count: usize, pattern_count: usize) -> Vec<Pattern> {
    lfsr.patterns(input_count, pattern_count)
}

/// Parses `32,22,2,1` style tap lists.
pub fn parse_taps(s: &str) -> Result<Vec<u32>, TpgError> {
    let taps = s
        .split(',')
        .map(|t| t.trim().parse::<u32>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| TpgError::TapSyntax(s.to_string()))?;
    if taps.is_empty() {
        return Err(TpgError::EmptyTaps);
    }
    Ok(taps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction() {
        assert!(Lfsr::new(32, &[32, 22, 2, 1], 1).is_ok());
        assert!(Lfsr::new(4, &[4, 3], 0b0001).is_ok());
        assert_eq!(Lfsr::new(32, &DEFAULT_TAPS, 0), Err(TpgError::ZeroSeed));
        assert_eq!(
            Lfsr::new(4, &[4, 3], 16),
            Err(TpgError::SeedOutOfRange {
                seed: 16,
                degree: 4
            })
        );
        assert_eq!(Lfsr::new(4, &[], 1), Err(TpgError::EmptyTaps));
        assert_eq!(
            Lfsr::new(4, &[5], 1),
            Err(TpgError::TapOutOfRange { tap: 5, degree: 4 })
        );
        assert_eq!(Lfsr::new(1, &[1], 1), Err(TpgError::Degree(1)));
    }

    #[test]
    fn degree_is_implicit_tap() {
        let a = Lfsr::new(4, &[3], 5).unwrap();
        let b = Lfsr::new(4, &[4, 3], 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.taps(), &[4, 3]);
    }

    #[test]
    fn hand_stepped_degree_four() {
        // state 0001, taps {4,3} read bits 0 and 1
        // s=0001 out 1 fb 1 -> 1000
        // s=1000 out 0 fb 0 -> 0100
        // s=0100 out 0 fb 0 -> 0010
        // s=0010 out 0 fb 1 -> 1001
        // s=1001 out 1 fb 1 -> 1100
        // s=1100 out 0 fb 0 -> 0110
        // s=0110 out 0 fb 1 -> 1011
        // s=1011 out 1 fb 0 -> 0101
        let mut l = Lfsr::new(4, &[4, 3], 0b0001).unwrap();
        let p = gen_patterns(&mut l, 4, 2);
        assert_eq!(
            p,
            vec![
                vec![true, false, false, false],
                vec![true, false, false, true]
            ]
        );
        assert_eq!(l.state(), 0b0101);
    }

    #[test]
    fn zero_count_is_identity() {
        let mut l = Lfsr::with_seed(0xABCD).unwrap();
        assert!(l.bits(0).is_empty());
        assert_eq!(l.state(), 0xABCD);
    }

    #[test]
    fn small_periods() {
        assert_eq!(Lfsr::new(4, &[4, 3], 1).unwrap().period(), 15);
        assert_eq!(Lfsr::new(8, &[8, 6, 5, 4], 0x5A).unwrap().period(), 255);
        // x^4 + x^2 + 1 is not primitive
        assert!(Lfsr::new(4, &[4, 2], 1).unwrap().period() < 15);
    }

    #[test]
    fn pattern_arithmetic() {
        let mut a = Lfsr::with_seed(7).unwrap();
        let p = a.patterns(5, 7);
        assert_eq!(p.len(), 7);
        assert!(p.iter().all(|v| v.len() == 5));
        let mut b = Lfsr::with_seed(7).unwrap();
        b.bits(35);
        assert_eq!(a.state(), b.state());
        assert_eq!(p, Lfsr::with_seed(7).unwrap().patterns(5, 7));
    }

    #[test]
    fn tap_list_parsing() {
        assert_eq!(parse_taps("32,22, 2,1").unwrap(), vec![32, 22, 2, 1]);
        assert!(parse_taps("32,x").is_err());
    }
}
