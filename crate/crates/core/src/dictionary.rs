//! Golden references and fault dictionaries.
//!
//! A [`FaultDictionary`] belongs to one DUT and one signing configuration.
//! For every test session (seed, pattern count) it stores the golden
//! signature and one entry per class of detected faults that produce the
//! same faulty response. Raw responses are not stored unless explicitly
//! requested for debugging.
//!
//! # File format
//!
//! A pretty-printed JSON body followed by one trailer line:
//!
//! ```text
//! { "format_version": 1, "header": { ... }, "entries": [ ... ] }
//! checksum shake128-256 <64 hex digits>
//! ```
//!
//! The checksum is SHAKE128 (256-bit output) over the body bytes exactly as
//! written, i.e. everything before the newline that precedes the trailer.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faultsim::{enumerate_faults, FaultSimError, FaultSimulator, ResponseStream};
use crate::kmac::{self, Signature};
use crate::netlist::Netlist;
use crate::ora::{pack_response, OraError, Signer};
use crate::tpg::{LfsrConfig, TpgError};

pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_TAG: &str = "checksum shake128-256 ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DictionaryError {
    #[error("seed list is empty")]
    EmptySeeds,
    #[error("seed 0 would lock the LFSR")]
    ZeroSeed,
    #[error("seed {0:#010x} listed twice")]
    DuplicateSeed(u32),
    #[error("signature collision under seed {seed:#010x} between `{first}` and `{second}`")]
    Aliasing {
        seed: u32,
        first: String,
        second: String,
    },
    #[error("no session {0} in dictionary")]
    UnknownKey(String),
    #[error("malformed dictionary: {0}")]
    Malformed(String),
    #[error("unsupported dictionary format version {0}")]
    Version(u64),
    #[error("dictionary checksum missing or wrong")]
    Checksum,
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Tpg(#[from] TpgError),
    #[error(transparent)]
    FaultSim(#[from] FaultSimError),
    #[error(transparent)]
    Ora(#[from] OraError),
}

/// Identifies one test session configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DictionaryKey {
    pub dut_id: String,
    pub seed: u32,
    pub pattern_count: u32,
    pub digest_bits: u32,
}

impl std::fmt::Display for DictionaryKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/seed={:#010x}/patterns={}/d={}",
            self.dut_id, self.seed, self.pattern_count, self.digest_bits
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryKind {
    Golden,
    /// One class of faults sharing a faulty response, in enumeration order.
    Faults(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictionaryEntry {
    pub key: DictionaryKey,
    pub kind: EntryKind,
    pub signature: Signature,
    pub response_length_bits: u64,
    /// Only present when built with `embed_responses`.
    pub response: Option<String>,
}

impl DictionaryEntry {
    pub fn is_golden(&self) -> bool {
        self.kind == EntryKind::Golden
    }

    pub fn fault_ids(&self) -> &[String] {
        match &self.kind {
            EntryKind::Golden => &[],
            EntryKind::Faults(ids) => ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnosis {
    FaultFree,
    /// Candidate faults; the signature cannot tell them apart.
    Fault(Vec<String>),
    InvalidSignature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictionaryHeader {
    pub dut_id: String,
    pub digest_bits: u32,
    pub lfsr_taps: Vec<u32>,
    pub po_count: usize,
    pub signature_scheme: String,
}

/// Everything needed to (re)build a dictionary besides the netlist.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub dut_id: String,
    pub seeds: Vec<u32>,
    pub pattern_count: u32,
    pub lfsr: LfsrConfig,
    pub signer: Signer,
    pub embed_responses: bool,
}

impl BuildConfig {
    pub fn new(
        dut_id: impl Into<String>,
        seeds: Vec<u32>,
        pattern_count: u32,
        signer: Signer,
    ) -> Self {
        BuildConfig {
            dut_id: dut_id.into(),
            seeds,
            pattern_count,
            lfsr: LfsrConfig::default(),
            signer,
            embed_responses: false,
        }
    }

    fn key(&self, seed: u32) -> DictionaryKey {
        DictionaryKey {
            dut_id: self.dut_id.clone(),
            seed,
            pattern_count: self.pattern_count,
            digest_bits: self.signer.digest_bits(),
        }
    }

    fn check_seeds(&self) -> Result<(), DictionaryError> {
        if self.seeds.is_empty() {
            return Err(DictionaryError::EmptySeeds);
        }
        let mut seen = HashSet::new();
        for &s in &self.seeds {
            if s == 0 {
                return Err(DictionaryError::ZeroSeed);
            }
            if !seen.insert(s) {
                return Err(DictionaryError::DuplicateSeed(s));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct SessionIndex {
    golden: Option<usize>,
    by_signature: HashMap<Signature, usize>,
}

#[derive(Debug, Clone)]
pub struct FaultDictionary {
    header: DictionaryHeader,
    entries: Vec<DictionaryEntry>,
    sessions: Vec<DictionaryKey>,
    index: HashMap<DictionaryKey, SessionIndex>,
}

impl PartialEq for FaultDictionary {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.entries == other.entries
    }
}

impl FaultDictionary {
    /// Indexes entries, enforcing one golden entry per session and unique
    /// signatures within a session.
    pub fn new(
        header: DictionaryHeader,
        entries: Vec<DictionaryEntry>,
    ) -> Result<Self, DictionaryError> {
        let mut sessions = Vec::new();
        let mut index: HashMap<DictionaryKey, SessionIndex> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.key.dut_id != header.dut_id || e.key.digest_bits != header.digest_bits {
                return Err(DictionaryError::Malformed(format!(
                    "entry {i} does not match the header"
                )));
            }
            if e.signature.bit_length() != header.digest_bits {
                return Err(DictionaryError::Malformed(format!(
                    "entry {i} has a {}-bit signature",
                    e.signature.bit_length()
                )));
            }
            let slot = index.entry(e.key.clone()).or_insert_with(|| {
                sessions.push(e.key.clone());
                SessionIndex::default()
            });
            if let Some(prev) = slot.by_signature.insert(e.signature.clone(), i) {
                return Err(DictionaryError::Aliasing {
                    seed: e.key.seed,
                    first: describe(&entries[prev]),
                    second: describe(e),
                });
            }
            if e.is_golden() {
                if slot.golden.is_some() {
                    return Err(DictionaryError::Malformed(format!(
                        "two golden entries for {}",
                        e.key
                    )));
                }
                slot.golden = Some(i);
            }
        }
        if let Some(k) = sessions.iter().find(|k| index[*k].golden.is_none()) {
            return Err(DictionaryError::Malformed(format!(
                "no golden entry for {k}"
            )));
        }
        Ok(FaultDictionary {
            header,
            entries,
            sessions,
            index,
        })
    }

    pub fn header(&self) -> &DictionaryHeader {
        &self.header
    }

    pub fn dut_id(&self) -> &str {
        &self.header.dut_id
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }

    /// Session keys in the order they were built.
    pub fn sessions(&self) -> &[DictionaryKey] {
        &self.sessions
    }

    pub fn session_for_seed(&self, seed: u32) -> Option<&DictionaryKey> {
        self.sessions.iter().find(|k| k.seed == seed)
    }

    pub fn golden(&self, key: &DictionaryKey) -> Option<&DictionaryEntry> {
        self.index
            .get(key)
            .and_then(|s| s.golden)
            .map(|i| &self.entries[i])
    }

    pub fn lookup(
        &self,
        key: &DictionaryKey,
        observed: &Signature,
    ) -> Result<Diagnosis, DictionaryError> {
        let session = self
            .index
            .get(key)
            .ok_or_else(|| DictionaryError::UnknownKey(key.to_string()))?;
        Ok(
            match session
                .by_signature
                .get(observed)
                .map(|&i| &self.entries[i])
            {
                None => Diagnosis::InvalidSignature,
                Some(e) => match &e.kind {
                    EntryKind::Golden => Diagnosis::FaultFree,
                    EntryKind::Faults(ids) => Diagnosis::Fault(ids.clone()),
                },
            },
        )
    }

    pub fn to_file_string(&self) -> String {
        let body = FileBody {
            format_version: FORMAT_VERSION,
            header: FileHeader {
                dut_id: self.header.dut_id.clone(),
                digest_bits: self.header.digest_bits,
                lfsr_taps: self.header.lfsr_taps.clone(),
                po_count: self.header.po_count,
                signature_scheme: self.header.signature_scheme.clone(),
            },
            entries: self
                .entries
                .iter()
                .map(|e| FileEntry {
                    seed: e.key.seed,
                    pattern_count: e.key.pattern_count,
                    golden: e.is_golden(),
                    fault_ids: e.fault_ids().to_vec(),
                    signature_hex: e.signature.to_hex(),
                    response_bits: e.response_length_bits,
                    response: e.response.clone(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&body).expect("dictionary body serializes");
        format!("{text}\n{CHECKSUM_TAG}{}\n", checksum(text.as_bytes()))
    }

    pub fn from_file_str(text: &str) -> Result<Self, DictionaryError> {
        let trimmed = text.strip_suffix('\n').unwrap_or(text);
        let (body, trailer) = trimmed.rsplit_once('\n').ok_or(DictionaryError::Checksum)?;
        let stated = trailer
            .strip_prefix(CHECKSUM_TAG)
            .ok_or(DictionaryError::Checksum)?;

        let value: serde_json::Value =
            serde_json::from_str(body).map_err(|e| DictionaryError::Malformed(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| DictionaryError::Malformed("missing format_version".into()))?;
        if version != FORMAT_VERSION as u64 {
            return Err(DictionaryError::Version(version));
        }
        if stated.trim() != checksum(body.as_bytes()) {
            return Err(DictionaryError::Checksum);
        }
        let body: FileBody =
            serde_json::from_value(value).map_err(|e| DictionaryError::Malformed(e.to_string()))?;
        let h = body.header;
        let entries = body
            .entries
            .into_iter()
            .map(|e| {
                let signature = Signature::from_hex(&e.signature_hex)
                    .map_err(|err| DictionaryError::Malformed(format!("signature_hex: {err}")))?;
                let kind = match (e.golden, e.fault_ids.is_empty()) {
                    (true, true) => EntryKind::Golden,
                    (false, false) => EntryKind::Faults(e.fault_ids),
                    _ => {
                        return Err(DictionaryError::Malformed(
                            "golden flag and fault_ids disagree".into(),
                        ))
                    }
                };
                Ok(DictionaryEntry {
                    key: DictionaryKey {
                        dut_id: h.dut_id.clone(),
                        seed: e.seed,
                        pattern_count: e.pattern_count,
                        digest_bits: h.digest_bits,
                    },
                    kind,
                    signature,
                    response_length_bits: e.response_bits,
                    response: e.response,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        FaultDictionary::new(
            DictionaryHeader {
                dut_id: h.dut_id,
                digest_bits: h.digest_bits,
                lfsr_taps: h.lfsr_taps,
                po_count: h.po_count,
                signature_scheme: h.signature_scheme,
            },
            entries,
        )
    }
}

fn describe(e: &DictionaryEntry) -> String {
    match &e.kind {
        EntryKind::Golden => "GOLDEN".into(),
        EntryKind::Faults(ids) => ids.join("|"),
    }
}

fn checksum(bytes: &[u8]) -> String {
    kmac::shake128(bytes, 256)
        .expect("fixed digest size")
        .to_hex()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileBody {
    format_version: u32,
    header: FileHeader,
    entries: Vec<FileEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHeader {
    dut_id: String,
    digest_bits: u32,
    lfsr_taps: Vec<u32>,
    po_count: usize,
    signature_scheme: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEntry {
    seed: u32,
    pattern_count: u32,
    golden: bool,
    fault_ids: Vec<String>,
    signature_hex: String,
    response_bits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response: Option<String>,
}

pub fn save_dictionary(
    dict: &FaultDictionary,
    path: impl AsRef<Path>,
) -> Result<(), DictionaryError> {
    let path = path.as_ref();
    std::fs::write(path, dict.to_file_string()).map_err(|e| DictionaryError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<FaultDictionary, DictionaryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DictionaryError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    FaultDictionary::from_file_str(&text)
}

fn golden_entry<'a>(
    netlist: &'a Netlist,
    cfg: &BuildConfig,
    seed: u32,
) -> Result<(FaultSimulator<'a>, ResponseStream, DictionaryEntry), DictionaryError> {
    let patterns = cfg.lfsr.patterns(
        seed as u64,
        netlist.input_count(),
        cfg.pattern_count as usize,
    )?;
    let sim = FaultSimulator::new(netlist, &patterns)?;
    let golden = sim.golden();
    let entry = DictionaryEntry {
        key: cfg.key(seed),
        kind: EntryKind::Golden,
        signature: cfg.signer.sign(&golden),
        response_length_bits: golden.bit_length() as u64,
        response: cfg.embed_responses.then(|| golden.to_bit_string()),
    };
    Ok((sim, golden, entry))
}

/// One golden entry per seed: LFSR patterns, fault-free response, signature.
pub fn build_golden(
    netlist: &Netlist,
    cfg: &BuildConfig,
) -> Result<Vec<DictionaryEntry>, DictionaryError> {
    cfg.check_seeds()?;
    cfg.seeds
        .iter()
        .map(|&s| golden_entry(netlist, cfg, s).map(|(_, _, e)| e))
        .collect()
}

fn header(netlist: &Netlist, cfg: &BuildConfig) -> DictionaryHeader {
    let mut taps = cfg.lfsr.taps.clone();
    if !taps.contains(&cfg.lfsr.degree) {
        taps.insert(0, cfg.lfsr.degree);
    }
    DictionaryHeader {
        dut_id: cfg.dut_id.clone(),
        digest_bits: cfg.signer.digest_bits(),
        lfsr_taps: taps,
        po_count: netlist.output_count(),
        signature_scheme: cfg.signer.scheme().name().to_string(),
    }
}

/// A dictionary holding only golden entries, for on-chip pass/fail tests.
pub fn build_golden_dictionary(
    netlist: &Netlist,
    cfg: &BuildConfig,
) -> Result<FaultDictionary, DictionaryError> {
    FaultDictionary::new(header(netlist, cfg), build_golden(netlist, cfg)?)
}

/// Golden entry plus one entry per equivalence class of detected faults for
/// every seed. Undetected faults are left out. Any two classes (or a class
/// and the golden response) sharing a signature abort the build.
pub fn build_fault_dictionary(
    netlist: &Netlist,
    cfg: &BuildConfig,
) -> Result<FaultDictionary, DictionaryError> {
    cfg.check_seeds()?;
    let faults = enumerate_faults(netlist);
    let mut entries = Vec::new();
    for &seed in &cfg.seeds {
        let (sim, _, golden) = golden_entry(netlist, cfg, seed)?;
        // Response identity is tracked through an unkeyed 256-bit digest so
        // the sweep does not have to hold every faulty response in memory.
        let observed: Vec<Option<(Signature, Signature, Option<String>)>> = faults
            .par_iter()
            .map(|f| {
                sim.detects(f).then(|| {
                    let r = sim.faulty(f);
                    let id = kmac::shake128(&pack_response(&r), 256).expect("fixed digest size");
                    (
                        id,
                        cfg.signer.sign(&r),
                        cfg.embed_responses.then(|| r.to_bit_string()),
                    )
                })
            })
            .collect();
        let mut classes: Vec<DictionaryEntry> = Vec::new();
        let mut by_response: HashMap<Signature, usize> = HashMap::new();
        for (f, obs) in faults.iter().zip(observed) {
            let Some((resp_id, signature, response)) = obs else {
                continue;
            };
            match by_response.get(&resp_id) {
                Some(&c) => {
                    if let EntryKind::Faults(ids) = &mut classes[c].kind {
                        ids.push(f.id().to_string());
                    }
                }
                None => {
                    by_response.insert(resp_id, classes.len());
                    classes.push(DictionaryEntry {
                        key: cfg.key(seed),
                        kind: EntryKind::Faults(vec![f.id().to_string()]),
                        signature,
                        response_length_bits: golden.response_length_bits,
                        response,
                    });
                }
            }
        }
        entries.push(golden);
        entries.extend(classes);
    }
    FaultDictionary::new(header(netlist, cfg), entries)
}

pub fn lookup(
    dict: &FaultDictionary,
    key: &DictionaryKey,
    observed: &Signature,
) -> Result<Diagnosis, DictionaryError> {
    dict.lookup(key, observed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultsim::{simulate_faulty, Fault};
    use crate::kmac::DeviceKey;
    use crate::netlist::parse_bench;
    use crate::tpg::LfsrConfig;

    fn signer() -> Signer {
        Signer::new(DeviceKey::from_hex("a5a5a5a5a5a5a5a5").unwrap(), 256).unwrap()
    }

    fn c17() -> Netlist {
        Netlist::from_bench("c17", include_str!("../../../benchmarks/iscas85/c17.bench")).unwrap()
    }

    fn and2() -> Netlist {
        parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)")
            .unwrap()
            .with_name("and2")
    }

    #[test]
    fn golden_for_c17() {
        let cfg = BuildConfig::new("c17", vec![0xACE1], 7, signer());
        let g = build_golden(&c17(), &cfg).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g[0].is_golden());
        assert_eq!(g[0].response_length_bits, 14);
    }

    #[test]
    fn seed_validation() {
        let n = c17();
        let cfg = BuildConfig::new("c17", vec![5, 5], 7, signer());
        assert_eq!(
            build_golden(&n, &cfg).unwrap_err(),
            DictionaryError::DuplicateSeed(5)
        );
        let cfg = BuildConfig::new("c17", vec![], 7, signer());
        assert_eq!(
            build_golden(&n, &cfg).unwrap_err(),
            DictionaryError::EmptySeeds
        );
        let cfg = BuildConfig::new("c17", vec![0], 7, signer());
        assert_eq!(
            build_fault_dictionary(&n, &cfg).unwrap_err(),
            DictionaryError::ZeroSeed
        );
    }

    #[test]
    fn exhaustive_and_gate_dictionary() {
        // A degree-2 LFSR repeats 1,1,0 (period 3), so four 2-bit patterns
        // cover every input combination that exposes an AND-gate fault.
        let n = and2();
        let mut cfg = BuildConfig::new("and2", vec![1], 4, signer());
        cfg.lfsr = LfsrConfig::from_taps(&[2, 1]).unwrap();
        cfg.embed_responses = true;
        let patterns = cfg.lfsr.patterns(1, 2, 4).unwrap();
        for needed in [[true, true], [false, true], [true, false]] {
            assert!(patterns.contains(&needed.to_vec()), "{patterns:?}");
        }
        let d = build_fault_dictionary(&n, &cfg).unwrap();

        // brute-force oracle: group detected faults by faulty response
        let golden = crate::faultsim::simulate_batch(&n, &patterns).unwrap();
        let mut classes: Vec<(ResponseStream, Vec<String>)> = Vec::new();
        for f in enumerate_faults(&n) {
            let r = simulate_faulty(&n, &f, &patterns).unwrap();
            if r == golden {
                continue;
            }
            match classes.iter_mut().find(|(resp, _)| *resp == r) {
                Some((_, ids)) => ids.push(f.id().to_string()),
                None => classes.push((r, vec![f.id().to_string()])),
            }
        }
        let fault_entries: Vec<_> = d.entries().iter().filter(|e| !e.is_golden()).collect();
        assert_eq!(fault_entries.len(), classes.len());
        for (e, (resp, ids)) in fault_entries.iter().zip(&classes) {
            assert_eq!(e.fault_ids(), ids.as_slice());
            assert_eq!(e.response.as_deref(), Some(resp.to_bit_string().as_str()));
        }
        // a@sa0, y.in0@sa0 and y@sa0 all force y low
        assert!(fault_entries.iter().any(|e| e.fault_ids().len() > 1));
    }

    #[test]
    fn redundant_fault_is_omitted() {
        // y = a OR (NOT a) is constant 1; y@sa1 cannot be observed.
        let n = parse_bench("INPUT(a)\nOUTPUT(y)\nb = NOT(a)\ny = OR(a, b)").unwrap();
        let cfg = BuildConfig::new("taut", vec![3], 16, signer());
        let d = build_fault_dictionary(&n, &cfg).unwrap();
        let ids: Vec<&String> = d.entries().iter().flat_map(|e| e.fault_ids()).collect();
        assert!(!ids.iter().any(|id| *id == "y@sa1"));
        assert!(ids.iter().any(|id| *id == "y@sa0"));
    }

    #[test]
    fn buffer_chain_equivalence() {
        let n = parse_bench("INPUT(a)\nOUTPUT(z)\nb = BUFF(a)\nz = BUFF(b)").unwrap();
        let cfg = BuildConfig::new("chain", vec![9], 8, signer());
        let d = build_fault_dictionary(&n, &cfg).unwrap();
        let sa0: Vec<_> = d
            .entries()
            .iter()
            .filter(|e| e.fault_ids().contains(&"z@sa0".to_string()))
            .collect();
        assert_eq!(sa0.len(), 1);
        assert_eq!(
            sa0[0].fault_ids(),
            ["a@sa0", "b@sa0", "b.in0@sa0", "z@sa0", "z.in0@sa0"].map(String::from)
        );
        // 2 classes + golden
        assert_eq!(d.entries().len(), 3);
    }

    #[test]
    fn lookup_verdicts() {
        let n = c17();
        let cfg = BuildConfig::new("c17", vec![0xACE1, 0x1234], 7, signer());
        let d = build_fault_dictionary(&n, &cfg).unwrap();
        let key = d.session_for_seed(0x1234).unwrap().clone();
        let golden = d.golden(&key).unwrap().signature.clone();
        assert_eq!(d.lookup(&key, &golden).unwrap(), Diagnosis::FaultFree);

        let patterns = cfg.lfsr.patterns(0x1234, 5, 7).unwrap();
        let id = d
            .entries()
            .iter()
            .find(|e| e.key == key && !e.is_golden())
            .map(|e| e.fault_ids()[0].clone())
            .unwrap();
        let f = Fault::parse(&n, &id).unwrap();
        let sig = cfg
            .signer
            .sign(&simulate_faulty(&n, &f, &patterns).unwrap());
        match d.lookup(&key, &sig).unwrap() {
            Diagnosis::Fault(ids) => assert!(ids.contains(&id)),
            other => panic!("{other:?}"),
        }
        let random = Signature::new(
            kmac::shake128(b"not a response", 256)
                .unwrap()
                .as_bytes()
                .to_vec(),
        );
        assert_eq!(
            d.lookup(&key, &random).unwrap(),
            Diagnosis::InvalidSignature
        );

        let mut missing = key.clone();
        missing.seed = 77;
        assert!(matches!(
            d.lookup(&missing, &golden),
            Err(DictionaryError::UnknownKey(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let n = c17();
        let cfg = BuildConfig::new("c17", vec![1, 2], 7, signer());
        let d = build_fault_dictionary(&n, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c17.dict");
        save_dictionary(&d, &p).unwrap();
        assert_eq!(load_dictionary(&p).unwrap(), d);
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let d =
            build_fault_dictionary(&c17(), &BuildConfig::new("c17", vec![1], 7, signer())).unwrap();
        let text = d.to_file_string();
        for cut in [text.len() - 5, text.len() / 2, 10] {
            assert_eq!(
                FaultDictionary::from_file_str(&text[..cut]).unwrap_err(),
                DictionaryError::Checksum,
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn tampered_body_fails_checksum() {
        let d =
            build_fault_dictionary(&c17(), &BuildConfig::new("c17", vec![1], 7, signer())).unwrap();
        let text = d
            .to_file_string()
            .replacen("\"pattern_count\": 7", "\"pattern_count\": 8", 1);
        assert_eq!(
            FaultDictionary::from_file_str(&text).unwrap_err(),
            DictionaryError::Checksum
        );
    }

    #[test]
    fn unknown_version() {
        let d =
            build_fault_dictionary(&c17(), &BuildConfig::new("c17", vec![1], 7, signer())).unwrap();
        let text = d
            .to_file_string()
            .replacen("\"format_version\": 1", "\"format_version\": 9", 1);
        assert_eq!(
            FaultDictionary::from_file_str(&text).unwrap_err(),
            DictionaryError::Version(9)
        );
    }

    #[test]
    fn key_never_serialized() {
        let key = DeviceKey::from_hex("deadbeefcafef00d").unwrap();
        let s = Signer::new(key.clone(), 256).unwrap();
        let d = build_fault_dictionary(&c17(), &BuildConfig::new("c17", vec![1], 7, s)).unwrap();
        let text = d.to_file_string();
        assert!(!text.contains("deadbeefcafef00d"));
        let raw = text.as_bytes();
        assert!(!raw.windows(8).any(|w| w == key.expose()));
    }
}
