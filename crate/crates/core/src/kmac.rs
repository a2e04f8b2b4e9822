//! Keccak-f[1600], SHAKE128, cSHAKE128 and KMAC128 (FIPS 202, SP 800-185).
//!
//! Everything here is the 128-bit security suite: rate 168 octets,
//! capacity 256 bits. Output lengths are whole octets.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Sponge rate of the 128-bit suite, in octets.
pub const RATE_128: usize = 168;

pub const ROUND_CONSTANTS: [u64; 24] = [
    0x0000_0000_0000_0001,
    0x0000_0000_0000_8082,
    0x8000_0000_0000_808A,
    0x8000_0000_8000_8000,
    0x0000_0000_0000_808B,
    0x0000_0000_8000_0001,
    0x8000_0000_8000_8081,
    0x8000_0000_0000_8009,
    0x0000_0000_0000_008A,
    0x0000_0000_0000_0088,
    0x0000_0000_8000_8009,
    0x0000_0000_8000_000A,
    0x0000_0000_8000_808B,
    0x8000_0000_0000_008B,
    0x8000_0000_0000_8089,
    0x8000_0000_0000_8003,
    0x8000_0000_0000_8002,
    0x8000_0000_0000_0080,
    0x0000_0000_0000_800A,
    0x8000_0000_8000_000A,
    0x8000_0000_8000_8081,
    0x8000_0000_0000_8080,
    0x0000_0000_8000_0001,
    0x8000_0000_8000_8008,
];

/// Rho rotation offsets, indexed `x + 5 * y`.
const RHO: [u32; 25] = [
    0, 1, 62, 28, 27, //
    36, 44, 6, 55, 20, //
    3, 10, 43, 25, 39, //
    41, 45, 15, 21, 8, //
    18, 2, 61, 56, 14,
];

const SUFFIX_SHAKE: u8 = 0x1F;
const SUFFIX_CSHAKE: u8 = 0x04;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KmacError {
    #[error("digest length {0} bits is not a positive multiple of 8")]
    DigestBits(u32),
    #[error("KMAC key is empty")]
    EmptyKey,
    #[error("device key has {0} octets, at least 8 are required")]
    ShortKey(usize),
    #[error("key file {path}: {msg}")]
    KeyFile { path: String, msg: String },
}

/// The 1600-bit Keccak state as 25 little-endian lanes, lane `(x, y)` at
/// index `x + 5 * y`.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct KeccakState {
    pub lanes: [u64; 25],
}

impl fmt::Debug for KeccakState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.lanes.iter().map(|l| format!("{l:016X}")))
            .finish()
    }
}

impl KeccakState {
    pub fn lane(&self, x: usize, y: usize) -> u64 {
        self.lanes[x + 5 * y]
    }

    pub fn permute(&mut self) {
        keccak_f1600(self)
    }

    fn xor_byte(&mut self, pos: usize, b: u8) {
        self.lanes[pos / 8] ^= (b as u64) << (8 * (pos % 8));
    }

    fn byte(&self, pos: usize) -> u8 {
        (self.lanes[pos / 8] >> (8 * (pos % 8))) as u8
    }
}

pub fn keccak_f1600(state: &mut KeccakState) {
    let a = &mut state.lanes;
    for rc in ROUND_CONSTANTS {
        // theta
        let mut c = [0u64; 5];
        for x in 0..5 {
            c[x] = a[x] ^ a[x + 5] ^ a[x + 10] ^ a[x + 15] ^ a[x + 20];
        }
        for x in 0..5 {
            let d = c[(x + 4) % 5] ^ c[(x + 1) % 5].rotate_left(1);
            for y in 0..5 {
                a[x + 5 * y] ^= d;
            }
        }
        // rho and pi
        let mut b = [0u64; 25];
        for x in 0..5 {
            for y in 0..5 {
                b[y + 5 * ((2 * x + 3 * y) % 5)] = a[x + 5 * y].rotate_left(RHO[x + 5 * y]);
            }
        }
        // chi
        for y in 0..5 {
            for x in 0..5 {
                a[x + 5 * y] = b[x + 5 * y] ^ (!b[(x + 1) % 5 + 5 * y] & b[(x + 2) % 5 + 5 * y]);
            }
        }
        // iota
        a[0] ^= rc;
    }
}

/// An incremental sponge over Keccak-f[1600] with a fixed rate and domain
/// separation suffix.
#[derive(Clone)]
pub struct Sponge {
    state: KeccakState,
    rate: usize,
    pos: usize,
    suffix: u8,
}

impl Sponge {
    pub fn new(rate: usize, suffix: u8) -> Self {
        assert!(rate > 0 && rate < 200);
        Sponge {
            state: KeccakState::default(),
            rate,
            pos: 0,
            suffix,
        }
    }

    pub fn update(&mut self, data: &[u8]) {
        for &b in data {
            self.state.xor_byte(self.pos, b);
            self.pos += 1;
            if self.pos == self.rate {
                self.state.permute();
                self.pos = 0;
            }
        }
    }

    /// Pads, then squeezes `out_len` octets.
    pub fn finalize(mut self, out_len: usize) -> Vec<u8> {
        self.state.xor_byte(self.pos, self.suffix);
        self.state.xor_byte(self.rate - 1, 0x80);
        self.state.permute();
        let mut out = Vec::with_capacity(out_len);
        let mut pos = 0;
        while out.len() < out_len {
            if pos == self.rate {
                self.state.permute();
                pos = 0;
            }
            out.push(self.state.byte(pos));
            pos += 1;
        }
        out
    }
}

/// SP 800-185 `left_encode`.
pub fn left_encode(x: u64) -> Vec<u8> {
    let bytes = x.to_be_bytes();
    let skip = bytes.iter().take_while(|&&b| b == 0).count().min(7);
    let mut out = vec![(8 - skip) as u8];
    out.extend_from_slice(&bytes[skip..]);
    out
}

/// SP 800-185 `right_encode`.
pub fn right_encode(x: u64) -> Vec<u8> {
    let bytes = x.to_be_bytes();
    let skip = bytes.iter().take_while(|&&b| b == 0).count().min(7);
    let mut out = bytes[skip..].to_vec();
    out.push((8 - skip) as u8);
    out
}

pub fn encode_string(s: &[u8]) -> Vec<u8> {
    let mut out = left_encode(8 * s.len() as u64);
    out.extend_from_slice(s);
    out
}

pub fn bytepad(x: &[u8], w: usize) -> Vec<u8> {
    let mut out = left_encode(w as u64);
    out.extend_from_slice(x);
    while !out.len().is_multiple_of(w) {
        out.push(0);
    }
    out
}

fn check_bits(d: u32) -> Result<usize, KmacError> {
    if d == 0 || !d.is_multiple_of(8) {
        return Err(KmacError::DigestBits(d));
    }
    Ok(d as usize / 8)
}

/// Incremental SHAKE128 / cSHAKE128.
#[derive(Clone)]
pub struct CShake128 {
    sponge: Sponge,
}

impl CShake128 {
    /// With both strings empty this is plain SHAKE128.
    pub fn new(function_name: &[u8], customization: &[u8]) -> Self {
        if function_name.is_empty() && customization.is_empty() {
            return Self::shake();
        }
        let mut sponge = Sponge::new(RATE_128, SUFFIX_CSHAKE);
        let mut prefix = encode_string(function_name);
        prefix.extend(encode_string(customization));
        sponge.update(&bytepad(&prefix, RATE_128));
        CShake128 { sponge }
    }

    pub fn shake() -> Self {
        CShake128 {
            sponge: Sponge::new(RATE_128, SUFFIX_SHAKE),
        }
    }

    pub fn update(&mut self, data: &[u8]) {
        self.sponge.update(data);
    }

    pub fn finalize(self, d: u32) -> Result<Signature, KmacError> {
        let len = check_bits(d)?;
        Ok(Signature::new(self.sponge.finalize(len)))
    }
}

/// Incremental KMAC128 with a fixed output length.
#[derive(Clone)]
pub struct Kmac128 {
    inner: CShake128,
}

impl Kmac128 {
    pub fn new(key: &[u8], customization: &[u8]) -> Result<Self, KmacError> {
        if key.is_empty() {
            return Err(KmacError::EmptyKey);
        }
        let mut inner = CShake128::new(b"KMAC", customization);
        inner.update(&bytepad(&encode_string(key), RATE_128));
        Ok(Kmac128 { inner })
    }

    pub fn update(&mut self, data: &[u8]) {
        self.inner.update(data);
    }

    pub fn finalize(mut self, d: u32) -> Result<Signature, KmacError> {
        check_bits(d)?;
        self.inner.update(&right_encode(d as u64));
        self.inner.finalize(d)
    }
}

pub fn shake128(message: &[u8], d: u32) -> Result<Signature, KmacError> {
    let mut h = CShake128::shake();
    h.update(message);
    h.finalize(d)
}

pub fn cshake128(
    message: &[u8],
    d: u32,
    function_name: &[u8],
    customization: &[u8],
) -> Result<Signature, KmacError> {
    let mut h = CShake128::new(function_name, customization);
    h.update(message);
    h.finalize(d)
}

pub fn kmac128(
    key: &[u8],
    message: &[u8],
    d: u32,
    customization: &[u8],
) -> Result<Signature, KmacError> {
    let mut h = Kmac128::new(key, customization)?;
    h.update(message);
    h.finalize(d)
}

/// A fixed-length digest. `bit_length() == 8 * digest.len()`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature {
    digest: Vec<u8>,
}

impl Signature {
    pub fn new(digest: Vec<u8>) -> Self {
        Signature { digest }
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        hex::decode(s).map(Signature::new)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.digest
    }

    pub fn bit_length(&self) -> u32 {
        8 * self.digest.len() as u32
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.digest)
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_hex())
    }
}

/// Minimum device key length in octets.
pub const MIN_KEY_OCTETS: usize = 8;

/// A device-unique secret. Never printed and never serialized.
#[derive(Clone, PartialEq, Eq)]
pub struct DeviceKey {
    bytes: Vec<u8>,
}

impl DeviceKey {
    pub fn new(bytes: Vec<u8>) -> Result<Self, KmacError> {
        if bytes.len() < MIN_KEY_OCTETS {
            return Err(KmacError::ShortKey(bytes.len()));
        }
        Ok(DeviceKey { bytes })
    }

    pub fn from_hex(s: &str) -> Result<Self, KmacError> {
        let bytes = hex::decode(s.trim()).map_err(|e| KmacError::KeyFile {
            path: String::new(),
            msg: e.to_string(),
        })?;
        Self::new(bytes)
    }

    /// Reads a key file: a single line of hex octets.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, KmacError> {
        let path = path.as_ref();
        let err = |msg: String| KmacError::KeyFile {
            path: path.display().to_string(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let line = lines.next().ok_or_else(|| err("empty key file".into()))?;
        if lines.next().is_some() {
            return Err(err("expected a single line of hex".into()));
        }
        let bytes = hex::decode(line).map_err(|e| err(e.to_string()))?;
        if bytes.len() < MIN_KEY_OCTETS {
            return Err(err(format!(
                "key has {} octets, at least {MIN_KEY_OCTETS} required",
                bytes.len()
            )));
        }
        Self::new(bytes)
    }

    pub fn expose(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_length(&self) -> usize {
        8 * self.bytes.len()
    }
}

impl fmt::Debug for DeviceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceKey(<{} bits redacted>)", self.bit_length())
    }
}

impl Drop for DeviceKey {
    fn drop(&mut self) {
        for b in self.bytes.iter_mut() {
            // SAFETY: b is a valid, aligned, exclusive reference.
            unsafe { std::ptr::write_volatile(b, 0) };
        }
    }
}
