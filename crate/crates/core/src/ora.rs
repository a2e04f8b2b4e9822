//! Output response analysis.
//!
//! The keyed signature path ([`Signer`]) packs a [`ResponseStream`] and runs
//! it through KMAC128. Serial and multiple-input signature registers are kept
//! as the linear baselines, together with the closed-form aliasing
//! probabilities and compaction rates for both kinds of compactor.

use std::fmt;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;
use thiserror::Error;

use crate::faultsim::{enumerate_faults, FaultSimError, FaultSimulator, Pattern, ResponseStream};
use crate::gf2;
use crate::kmac::{self, DeviceKey, KmacError, Signature};
use crate::netlist::Netlist;

pub const DEFAULT_DIGEST_BITS: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OraError {
    #[error("formula only holds for L > n (n = {n}, L = {l})")]
    InvalidDomain { n: u64, l: u64 },
    #[error("response length must be at least one bit")]
    EmptyResponse,
    #[error("digest length {0} must be a positive even number of bits")]
    DigestBits(u32),
    #[error("signature register width {0} outside 1..=64")]
    Width(u32),
    #[error("no built-in primitive polynomial of degree {0}")]
    NoDefaultPolynomial(u32),
    #[error("aliasing analysis needs at least one pattern")]
    EmptyPatterns,
    #[error(transparent)]
    Kmac(#[from] KmacError),
    #[error(transparent)]
    FaultSim(#[from] FaultSimError),
}

/// How a response is turned into a signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignatureScheme {
    /// SP 800-185 KMAC128 keyed with the device key.
    #[default]
    Kmac128,
    /// SHAKE128 over `key || message`, the literal prefix-MAC form.
    PrefixShake128,
}

impl SignatureScheme {
    pub fn name(self) -> &'static str {
        match self {
            SignatureScheme::Kmac128 => "kmac128",
            SignatureScheme::PrefixShake128 => "shake128-prefix",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kmac128" => Some(SignatureScheme::Kmac128),
            "shake128-prefix" => Some(SignatureScheme::PrefixShake128),
            _ => None,
        }
    }
}

/// Message fed to the hash: the MSB-first packed response followed by its
/// bit length as a big-endian u64.
pub fn pack_response(response: &ResponseStream) -> Vec<u8> {
    let mut msg = Vec::with_capacity(response.as_bytes().len() + 8);
    msg.extend_from_slice(response.as_bytes());
    msg.extend_from_slice(&(response.bit_length() as u64).to_be_bytes());
    msg
}

/// Device-side signature engine: key, digest size and scheme.
#[derive(Clone, Debug)]
pub struct Signer {
    key: DeviceKey,
    digest_bits: u32,
    scheme: SignatureScheme,
    customization: Vec<u8>,
}

impl Signer {
    pub fn new(key: DeviceKey, digest_bits: u32) -> Result<Self, OraError> {
        if digest_bits == 0 || !digest_bits.is_multiple_of(8) {
            return Err(KmacError::DigestBits(digest_bits).into());
        }
        Ok(Signer {
            key,
            digest_bits,
            scheme: SignatureScheme::Kmac128,
            customization: Vec::new(),
        })
    }

    pub fn with_scheme(mut self, scheme: SignatureScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// KMAC customization string. Ignored by the prefix scheme.
    pub fn with_customization(mut self, customization: impl Into<Vec<u8>>) -> Self {
        self.customization = customization.into();
        self
    }

    pub fn with_digest_bits(&self, digest_bits: u32) -> Result<Self, OraError> {
        if digest_bits == 0 || !digest_bits.is_multiple_of(8) {
            return Err(KmacError::DigestBits(digest_bits).into());
        }
        let mut s = self.clone();
        s.digest_bits = digest_bits;
        Ok(s)
    }

    pub fn digest_bits(&self) -> u32 {
        self.digest_bits
    }

    pub fn scheme(&self) -> SignatureScheme {
        self.scheme
    }

    pub fn sign(&self, response: &ResponseStream) -> Signature {
        let msg = pack_response(response);
        let key = self.key.expose();
        match self.scheme {
            SignatureScheme::Kmac128 => {
                kmac::kmac128(key, &msg, self.digest_bits, &self.customization)
            }
            SignatureScheme::PrefixShake128 => {
                let mut h = kmac::CShake128::shake();
                h.update(key);
                h.update(&msg);
                h.finalize(self.digest_bits)
            }
        }
        .expect("digest size validated at construction")
    }
}

pub fn sign_response(
    key: &DeviceKey,
    response: &ResponseStream,
    d: u32,
) -> Result<Signature, OraError> {
    Ok(Signer::new(key.clone(), d)?.sign(response))
}

/// Serial-input signature register: division of the response polynomial by
/// the characteristic polynomial, first bit highest degree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SisrState {
    width: u32,
    low: u64,
    register: u64,
}

fn check_width(width: u32) -> Result<(), OraError> {
    if (1..=64).contains(&width) {
        Ok(())
    } else {
        Err(OraError::Width(width))
    }
}

fn default_taps(width: u32) -> Result<&'static [u32], OraError> {
    gf2::PRIMITIVE_TAPS
        .get(width as usize)
        .filter(|t| !t.is_empty())
        .copied()
        .ok_or(OraError::NoDefaultPolynomial(width))
}

impl SisrState {
    pub fn new(width: u32, taps: &[u32]) -> Result<Self, OraError> {
        check_width(width)?;
        Ok(SisrState {
            width,
            low: gf2::low_terms(width, taps),
            register: 0,
        })
    }

    /// Uses the built-in primitive polynomial of degree `width` (1..=32).
    pub fn with_default_poly(width: u32) -> Result<Self, OraError> {
        check_width(width)?;
        Self::new(width, default_taps(width)?)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn register(&self) -> u64 {
        self.register
    }

    pub fn shift_in(&mut self, bit: bool) {
        self.register = gf2::mul_x(self.register, self.width, self.low) ^ bit as u64;
    }
}

pub fn sisr_compact(state: &mut SisrState, response: impl IntoIterator<Item = bool>) -> u64 {
    for b in response {
        state.shift_in(b);
    }
    state.register
}

/// Multiple-input signature register. Each clock multiplies the register by
/// x modulo the polynomial and XORs in an n-bit slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MisrState {
    width: u32,
    low: u64,
    register: u64,
}

impl MisrState {
    pub fn new(width: u32, taps: &[u32]) -> Result<Self, OraError> {
        check_width(width)?;
        Ok(MisrState {
            width,
            low: gf2::low_terms(width, taps),
            register: 0,
        })
    }

    pub fn with_default_poly(width: u32) -> Result<Self, OraError> {
        check_width(width)?;
        Self::new(width, default_taps(width)?)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn register(&self) -> u64 {
        self.register
    }

    pub fn clock(&mut self, slice: u64) {
        let mask = if self.width == 64 {
            !0
        } else {
            (1u64 << self.width) - 1
        };
        self.register = gf2::mul_x(self.register, self.width, self.low) ^ (slice & mask);
    }
}

/// Maps one pattern's outputs onto an n-bit slice: output `j` lands in
/// column `j mod n`, so narrow DUTs are zero-padded at the top and wide DUTs
/// are XOR-folded.
pub fn fold_slice(outputs: impl IntoIterator<Item = bool>, width: u32) -> u64 {
    outputs
        .into_iter()
        .enumerate()
        .filter(|(_, b)| *b)
        .fold(0u64, |acc, (j, _)| acc ^ 1 << (j as u64 % width as u64))
}

pub fn misr_compact(width: u32, taps: &[u32], slices: &[u64]) -> Result<u64, OraError> {
    let mut m = MisrState::new(width, taps)?;
    for &s in slices {
        m.clock(s);
    }
    Ok(m.register)
}

pub fn misr_compact_response(state: &mut MisrState, response: &ResponseStream) -> u64 {
    for p in 0..response.pattern_count() {
        state.clock(fold_slice(response.pattern_outputs(p), state.width));
    }
    state.register
}

/// Whether a linear-register signature actually compacts the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterSignatureValidity {
    Valid,
    /// L <= n: the register holds the response (or a trivially invertible
    /// image of it) rather than a compacted signature.
    ResponseRevealed,
}

pub fn register_signature_validity(n: u32, l: u64) -> RegisterSignatureValidity {
    if l > n as u64 {
        RegisterSignatureValidity::Valid
    } else {
        RegisterSignatureValidity::ResponseRevealed
    }
}

/// An exact probability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probability(pub BigRational);

impl Probability {
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(0.0)
    }

    pub fn ratio(&self) -> &BigRational {
        &self.0
    }

    /// `1 / 2^k` exactly.
    pub fn inverse_power_of_two(k: u64) -> Self {
        Probability(BigRational::new(BigInt::one(), BigInt::one() << k))
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}", self.to_f64())
    }
}

/// Aliasing probability of an n-bit SISR/MISR over an L-bit response:
/// (2^(L-n) - 1) / (2^L - 1).
pub fn pa_sr(n: u64, l: u64) -> Result<Probability, OraError> {
    if l <= n {
        return Err(OraError::InvalidDomain { n, l });
    }
    let one = BigInt::one();
    let num = (&one << (l - n)) - &one;
    let den = (&one << l) - &one;
    Ok(Probability(BigRational::new(num, den)))
}

/// Compaction rate 1 - n/L of a linear signature register.
pub fn cr_sr(n: u64, l: u64) -> Result<f64, OraError> {
    if l <= n {
        return Err(OraError::InvalidDomain { n, l });
    }
    Ok(1.0 - n as f64 / l as f64)
}

/// Aliasing probability of a d-bit keyed hash signature, 2^(-d/2).
pub fn pa_kmac(d: u32) -> Result<Probability, OraError> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(OraError::DigestBits(d));
    }
    Ok(Probability::inverse_power_of_two(d as u64 / 2))
}

/// Compaction rate 1 - d/L. Negative when the digest outgrows the response.
pub fn cr_kmac(d: u32, l: u64) -> Result<f64, OraError> {
    if l == 0 {
        return Err(OraError::EmptyResponse);
    }
    Ok(1.0 - d as f64 / l as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AliasingReport {
    pub circuit: String,
    pub po_count: usize,
    pub pattern_count: usize,
    pub response_length_bits: usize,
    pub compaction_rate: f64,
    pub faults_total: usize,
    pub faults_detected: usize,
    pub aliased_fault_ids: Vec<String>,
    pub aliasing_rate: f64,
}

/// Full stuck-at sweep: every fault is simulated, detected faults are
/// signed, and a detected fault whose signature equals the golden one is
/// counted as aliased.
pub fn aliasing_analysis(
    netlist: &Netlist,
    patterns: &[Pattern],
    signer: &Signer,
) -> Result<AliasingReport, OraError> {
    if patterns.is_empty() {
        return Err(OraError::EmptyPatterns);
    }
    let sim = FaultSimulator::new(netlist, patterns)?;
    let golden = sim.golden();
    let golden_sig = signer.sign(&golden);
    let faults = enumerate_faults(netlist);
    let outcome: Vec<(bool, bool)> = faults
        .par_iter()
        .map(|f| {
            if !sim.detects(f) {
                return (false, false);
            }
            (true, signer.sign(&sim.faulty(f)) == golden_sig)
        })
        .collect();
    let detected = outcome.iter().filter(|o| o.0).count();
    let aliased: Vec<String> = faults
        .iter()
        .zip(&outcome)
        .filter(|(_, o)| o.1)
        .map(|(f, _)| f.id().to_string())
        .collect();
    let l = golden.bit_length();
    Ok(AliasingReport {
        circuit: netlist.name().to_string(),
        po_count: netlist.output_count(),
        pattern_count: patterns.len(),
        response_length_bits: l,
        compaction_rate: cr_kmac(signer.digest_bits(), l as u64)?,
        faults_total: faults.len(),
        faults_detected: detected,
        aliasing_rate: aliasing_rate(aliased.len(), detected),
        aliased_fault_ids: aliased,
    })
}

/// Aliased over detected faults; zero when nothing was detected.
pub fn aliasing_rate(aliased: usize, detected: usize) -> f64 {
    if detected == 0 {
        0.0
    } else {
        aliased as f64 / detected as f64
    }
}

pub const CSV_HEADER: &str =
    "circuit,po_count,pattern_count,response_bits,compaction_rate_pct,aliasing_rate_pct";

pub fn reports_to_csv(reports: &[AliasingReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.2},{:.2}",
            r.circuit,
            r.po_count,
            r.pattern_count,
            r.response_length_bits,
            100.0 * r.compaction_rate,
            100.0 * r.aliasing_rate
        );
    }
    out
}

pub fn reports_to_table(reports: &[AliasingReport]) -> String {
    let header = [
        "circuit",
        "POs",
        "#patterns",
        "L",
        "CR %",
        "aliasing %",
        "detected/faults",
    ];
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            [
                r.circuit.clone(),
                r.po_count.to_string(),
                r.pattern_count.to_string(),
                r.response_length_bits.to_string(),
                format!("{:.2}", 100.0 * r.compaction_rate),
                format!("{:.2}", 100.0 * r.aliasing_rate),
                format!("{}/{}", r.faults_detected, r.faults_total),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for row in &rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultsim::simulate_batch;
    use crate::netlist::parse_bench;

    fn key() -> DeviceKey {
        DeviceKey::from_hex("0123456789abcdef").unwrap()
    }

    #[test]
    fn empty_response_is_signable() {
        let r = ResponseStream::from_bits(&[], 0, 3);
        let sig = sign_response(&key(), &r, 256).unwrap();
        assert_eq!(sig.bit_length(), 256);
        assert_eq!(pack_response(&r), vec![0; 8]);
        let direct = kmac::kmac128(key().expose(), &[0; 8], 256, b"").unwrap();
        assert_eq!(sig, direct);
    }

    #[test]
    fn length_trailer_separates_padding() {
        // "1" and "10" pack to the same octet; the trailer keeps them apart.
        let a = ResponseStream::from_bits(&[true], 1, 1);
        let b = ResponseStream::from_bits(&[true, false], 2, 1);
        assert_eq!(a.as_bytes(), b.as_bytes());
        assert_ne!(
            sign_response(&key(), &a, 256).unwrap(),
            sign_response(&key(), &b, 256).unwrap()
        );
    }

    #[test]
    fn keys_separate_signatures() {
        let n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = NAND(a, b)").unwrap();
        let r = simulate_batch(&n, &[vec![true, false], vec![true, true]]).unwrap();
        let other = DeviceKey::from_hex("0123456789abcdee").unwrap();
        assert_ne!(
            sign_response(&key(), &r, 256).unwrap(),
            sign_response(&other, &r, 256).unwrap()
        );
    }

    #[test]
    fn prefix_scheme_is_shake_of_key_and_message() {
        let r = ResponseStream::from_bits(&[true, true, false], 3, 1);
        let s = Signer::new(key(), 256)
            .unwrap()
            .with_scheme(SignatureScheme::PrefixShake128);
        let mut msg = key().expose().to_vec();
        msg.extend(pack_response(&r));
        assert_eq!(s.sign(&r), kmac::shake128(&msg, 256).unwrap());
    }

    #[test]
    fn sisr_zero_response() {
        let mut s = SisrState::with_default_poly(8).unwrap();
        assert_eq!(sisr_compact(&mut s, [false; 40]), 0);
    }

    #[test]
    fn sisr_short_response_is_the_response() {
        let mut s = SisrState::with_default_poly(8).unwrap();
        assert_eq!(sisr_compact(&mut s, [true, false, true]), 0b101);
        assert_eq!(
            register_signature_validity(8, 3),
            RegisterSignatureValidity::ResponseRevealed
        );
        assert_eq!(
            register_signature_validity(8, 9),
            RegisterSignatureValidity::Valid
        );
    }

    #[test]
    fn sisr_three_bit_classes() {
        let mut counts = std::collections::HashMap::new();
        for m in 0u32..32 {
            let mut s = SisrState::with_default_poly(3).unwrap();
            let sig = sisr_compact(&mut s, (0..5).rev().map(|i| (m >> i) & 1 == 1));
            *counts.entry(sig).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 8);
        assert!(counts.values().all(|&c| c == 4));
    }

    #[test]
    fn misr_linearity_and_identity() {
        let taps = [4, 3];
        assert_eq!(misr_compact(4, &taps, &[0, 0, 0]).unwrap(), 0);
        assert_eq!(misr_compact(4, &taps, &[0b1011]).unwrap(), 0b1011);
        let a = [0b0011, 0b1100, 0b0110];
        let b = [0b1001, 0b0001, 0b1111];
        let x: Vec<u64> = a.iter().zip(&b).map(|(p, q)| p ^ q).collect();
        assert_eq!(
            misr_compact(4, &taps, &x).unwrap(),
            misr_compact(4, &taps, &a).unwrap() ^ misr_compact(4, &taps, &b).unwrap()
        );
    }

    #[test]
    fn misr_hand_trace() {
        // x^4 + x^3 + 1, low terms 0b1001
        // clock 0b1010: 0000*x = 0000, ^1010 -> 1010
        // clock 0b0111: 1010*x = 0100 ^ 1001 = 1101, ^0111 -> 1010
        // clock 0b1100: 1010*x = 1101, ^1100 -> 0001
        assert_eq!(
            misr_compact(4, &[4, 3], &[0b1010, 0b0111, 0b1100]).unwrap(),
            0b0001
        );
    }

    #[test]
    fn misr_folding() {
        assert_eq!(fold_slice([true, false, true], 4), 0b0101);
        assert_eq!(
            fold_slice([true, false, false, false, true, true], 4),
            0b0010
        );
        let r = ResponseStream::from_bits(&[true, false, true, true, true, false], 2, 3);
        let mut m = MisrState::with_default_poly(4).unwrap();
        let expect = misr_compact(4, gf2::PRIMITIVE_TAPS[4], &[0b101, 0b011]).unwrap();
        assert_eq!(misr_compact_response(&mut m, &r), expect);
    }

    #[test]
    fn register_widths() {
        assert_eq!(SisrState::new(0, &[]).unwrap_err(), OraError::Width(0));
        assert_eq!(
            SisrState::with_default_poly(40).unwrap_err(),
            OraError::NoDefaultPolynomial(40)
        );
        assert!(MisrState::new(64, &[64, 4, 3, 1]).is_ok());
    }

    #[test]
    fn pa_sr_values() {
        let p = pa_sr(2, 4).unwrap();
        assert_eq!(p.0, BigRational::new(3.into(), 15.into()));
        assert!((p.to_f64() - 0.2).abs() < 1e-15);
        assert_eq!(pa_sr(4, 4), Err(OraError::InvalidDomain { n: 4, l: 4 }));
        for n in [1u64, 8, 16, 32] {
            let v = pa_sr(n, n + 64).unwrap().to_f64();
            assert!((v - 2f64.powi(-(n as i32))).abs() < 1e-9);
        }
        // large L stays exact and finite
        let big = pa_sr(128, 62160).unwrap().to_f64();
        assert_eq!(big, 2f64.powi(-128));
    }

    #[test]
    fn cr_values() {
        assert_eq!(cr_sr(8, 32).unwrap(), 0.75);
        assert!(cr_sr(8, 1 << 40).unwrap() > 0.999_999);
        assert_eq!(
            cr_sr(128, 128),
            Err(OraError::InvalidDomain { n: 128, l: 128 })
        );
        assert_eq!(cr_kmac(256, 256).unwrap(), 0.0);
        assert_eq!(
            format!("{:.2}", 100.0 * cr_kmac(256, 14).unwrap()),
            "-1728.57"
        );
        assert_eq!(
            format!("{:.2}", 100.0 * cr_kmac(256, 73677).unwrap()),
            "99.65"
        );
        assert_eq!(cr_kmac(256, 0), Err(OraError::EmptyResponse));
    }

    #[test]
    fn pa_kmac_values() {
        assert_eq!(
            pa_kmac(256).unwrap(),
            Probability::inverse_power_of_two(128)
        );
        assert_eq!(pa_kmac(256).unwrap().to_f64(), 2f64.powi(-128));
        assert_eq!(pa_kmac(512).unwrap().to_f64(), 2f64.powi(-256));
        assert_eq!(pa_kmac(2).unwrap().0, BigRational::new(1.into(), 2.into()));
        assert!(pa_kmac(0).is_err());
    }

    #[test]
    fn analysis_on_tiny_circuit() {
        let n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)")
            .unwrap()
            .with_name("and2");
        let p = vec![vec![true, true], vec![false, true], vec![true, false]];
        let r = aliasing_analysis(&n, &p, &Signer::new(key(), 256).unwrap()).unwrap();
        assert_eq!(r.faults_total, 10);
        assert_eq!(r.faults_detected, 10);
        assert!(r.aliased_fault_ids.is_empty());
        assert_eq!(r.response_length_bits, 3);
        assert_eq!(r.aliasing_rate, 0.0);
    }

    #[test]
    fn vacuous_aliasing_rate() {
        assert_eq!(aliasing_rate(0, 0), 0.0);
        assert_eq!(aliasing_rate(1, 4), 0.25);
        let n = parse_bench("INPUT(a)\nOUTPUT(y)\nb = NOT(a)\ny = OR(a, b)").unwrap();
        let signer = Signer::new(key(), 256).unwrap();
        assert_eq!(
            aliasing_analysis(&n, &[], &signer).unwrap_err(),
            OraError::EmptyPatterns
        );
    }

    #[test]
    fn report_formats() {
        let r = AliasingReport {
            circuit: "c17".into(),
            po_count: 2,
            pattern_count: 7,
            response_length_bits: 14,
            compaction_rate: cr_kmac(256, 14).unwrap(),
            faults_total: 46,
            faults_detected: 40,
            aliased_fault_ids: vec![],
            aliasing_rate: 0.0,
        };
        let csv = reports_to_csv(std::slice::from_ref(&r));
        assert_eq!(csv, format!("{CSV_HEADER}\nc17,2,7,14,-1728.57,0.00\n"));
        let table = reports_to_table(&[r]);
        assert!(table.lines().nth(1).unwrap().contains("-1728.57"));
    }
}
