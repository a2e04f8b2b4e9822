//! Built-in checks: published SHAKE128/cSHAKE128/KMAC128 sample vectors and
//! a brute-force SISR aliasing count against the closed form.

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::kmac::{cshake128, kmac128, shake128};
use crate::ora::{pa_sr, sisr_compact, SisrState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A published hash sample: function, message, customization, expected hex.
pub struct HashVector {
    pub name: &'static str,
    pub run: fn() -> String,
    pub expected: &'static str,
}

fn seq(n: usize) -> Vec<u8> {
    (0..n).map(|i| i as u8).collect()
}

fn kmac_key() -> Vec<u8> {
    (0x40..0x60).collect()
}

pub const HASH_VECTORS: &[HashVector] = &[
    HashVector {
        name: "SHAKE128 empty message",
        run: || shake128(b"", 256).unwrap().to_hex(),
        expected: "7f9c2ba4e88f827d616045507605853ed73b8093f6efbc88eb1a6eacfa66ef26",
    },
    HashVector {
        name: "SHAKE128 1600-bit 0xA3",
        run: || shake128(&[0xA3; 200], 256).unwrap().to_hex(),
        expected: "131ab8d2b594946b9c81333f9bb6e0ce75c3b93104fa3469d3917457385da037",
    },
    HashVector {
        name: "cSHAKE128 sample 1",
        run: || {
            cshake128(&seq(4), 256, b"", b"Email Signature")
                .unwrap()
                .to_hex()
        },
        expected: "c1c36925b6409a04f1b504fcbca9d82b4017277cb5ed2b2065fc1d3814d5aaf5",
    },
    HashVector {
        name: "cSHAKE128 sample 2",
        run: || {
            cshake128(&seq(200), 256, b"", b"Email Signature")
                .unwrap()
                .to_hex()
        },
        expected: "c5221d50e4f822d96a2e8881a961420f294b7b24fe3d2094baed2c6524cc166b",
    },
    HashVector {
        name: "KMAC128 sample 1",
        run: || kmac128(&kmac_key(), &seq(4), 256, b"").unwrap().to_hex(),
        expected: "e5780b0d3ea6f7d3a429c5706aa43a00fadbd7d49628839e3187243f456ee14e",
    },
    HashVector {
        name: "KMAC128 sample 2",
        run: || {
            kmac128(&kmac_key(), &seq(4), 256, b"My Tagged Application")
                .unwrap()
                .to_hex()
        },
        expected: "3b1fba963cd8b0b59e8c1a6d71888b7143651af8ba0a7070c0979e2811324aa5",
    },
    HashVector {
        name: "KMAC128 sample 3",
        run: || {
            kmac128(&kmac_key(), &seq(200), 256, b"My Tagged Application")
                .unwrap()
                .to_hex()
        },
        expected: "1f5b4e6cca02209e0dcb5ca635b89a15e271ecc760071dfd805faa38f9729230",
    },
];

/// Fraction of erroneous L-bit responses that an n-bit SISR maps onto the
/// golden signature, found by enumerating all 2^L responses.
pub fn sisr_aliasing_bruteforce(n: u32, l: u32, golden: u64) -> BigRational {
    let sig = |r: u64| {
        let mut s = SisrState::with_default_poly(n).expect("degree has a default polynomial");
        sisr_compact(&mut s, (0..l).rev().map(|i| r >> i & 1 == 1))
    };
    let g = sig(golden);
    let aliased = (0..1u64 << l)
        .filter(|&r| r != golden && sig(r) == g)
        .count();
    BigRational::new(BigInt::from(aliased), BigInt::from((1u64 << l) - 1))
}

pub fn run_all() -> Vec<CheckResult> {
    let mut out: Vec<CheckResult> = HASH_VECTORS
        .iter()
        .map(|v| {
            let got = (v.run)();
            CheckResult {
                name: v.name.to_string(),
                passed: got == v.expected,
                detail: got,
            }
        })
        .collect();
    for n in 2..=4u32 {
        for l in n + 1..=12 {
            let brute = sisr_aliasing_bruteforce(n, l, 0b1011 & ((1 << l) - 1));
            let closed = pa_sr(n as u64, l as u64).expect("l > n").0;
            out.push(CheckResult {
                name: format!("SISR n={n} L={l}"),
                passed: brute == closed,
                detail: format!("{brute} vs {closed}"),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn everything_passes() {
        for r in run_all() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn brute_force_small_case() {
        // x^2 + x + 1 over 3 bits: only 111 aliases with 000
        assert_eq!(
            sisr_aliasing_bruteforce(2, 3, 0),
            BigRational::new(1.into(), 7.into())
        );
    }
}
