//! On-chip test orchestration: key, TPG, DUT, signature, dictionary lookup.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::dictionary::{load_dictionary, Diagnosis, DictionaryError, FaultDictionary};
use crate::faultsim::{Fault, FaultSimError, FaultSimulator};
use crate::kmac::{DeviceKey, KmacError, Signature};
use crate::netlist::{Netlist, NetlistError};
use crate::ora::{OraError, SignatureScheme, Signer, DEFAULT_DIGEST_BITS};
use crate::tpg::{LfsrConfig, TpgError};

#[derive(Debug, Error)]
pub enum TestflowError {
    #[error("unknown DUT `{0}`")]
    UnknownDut(String),
    #[error("no local dictionary for DUT `{0}`")]
    NoDictionary(String),
    #[error("seed {seed:#010x} is not in the dictionary for `{dut}`")]
    SeedNotInDictionary { dut: String, seed: u32 },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    FaultSim(#[from] FaultSimError),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error(transparent)]
    Ora(#[from] OraError),
    #[error(transparent)]
    Kmac(#[from] KmacError),
    #[error(transparent)]
    Tpg(#[from] TpgError),
}

/// A device under test, optionally carrying an injected defect.
#[derive(Debug, Clone)]
pub struct Dut {
    pub netlist: Arc<Netlist>,
    pub injected_fault: Option<Fault>,
}

impl Dut {
    pub fn new(netlist: Netlist) -> Self {
        Dut {
            netlist: Arc::new(netlist),
            injected_fault: None,
        }
    }
}

/// The device: its DUTs, its key (inside the signer), the TPG polynomial and
/// the locally stored dictionaries.
#[derive(Debug, Clone)]
pub struct SocConfig {
    pub duts: BTreeMap<String, Dut>,
    pub signer: Signer,
    pub lfsr: LfsrConfig,
    pub dictionaries: BTreeMap<String, FaultDictionary>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SocFile {
    duts: BTreeMap<String, PathBuf>,
    key_file: PathBuf,
    #[serde(default = "default_digest_bits")]
    digest_bits: u32,
    #[serde(default)]
    lfsr_taps: Option<Vec<u32>>,
    #[serde(default)]
    dictionaries: BTreeMap<String, PathBuf>,
    #[serde(default)]
    signature_scheme: Option<String>,
}

fn default_digest_bits() -> u32 {
    DEFAULT_DIGEST_BITS
}

impl SocConfig {
    pub fn new(signer: Signer) -> Self {
        SocConfig {
            duts: BTreeMap::new(),
            signer,
            lfsr: LfsrConfig::default(),
            dictionaries: BTreeMap::new(),
        }
    }

    pub fn add_dut(&mut self, dut_id: impl Into<String>, netlist: Netlist) {
        self.duts.insert(dut_id.into(), Dut::new(netlist));
    }

    pub fn add_dictionary(&mut self, dict: FaultDictionary) -> Result<(), TestflowError> {
        if !self.duts.contains_key(dict.dut_id()) {
            return Err(TestflowError::UnknownDut(dict.dut_id().to_string()));
        }
        let mut taps = self.lfsr.taps.clone();
        if !taps.contains(&self.lfsr.degree) {
            taps.push(self.lfsr.degree);
        }
        let mut theirs = dict.header().lfsr_taps.clone();
        taps.sort_unstable();
        theirs.sort_unstable();
        if taps != theirs {
            return Err(TestflowError::Config(format!(
                "dictionary for `{}` was built with LFSR taps {:?}",
                dict.dut_id(),
                dict.header().lfsr_taps
            )));
        }
        if dict.header().signature_scheme != self.signer.scheme().name() {
            return Err(TestflowError::Config(format!(
                "dictionary for `{}` uses signature scheme {}",
                dict.dut_id(),
                dict.header().signature_scheme
            )));
        }
        self.dictionaries.insert(dict.dut_id().to_string(), dict);
        Ok(())
    }

    /// Makes `dut_id` behave as if `fault_id` were present in silicon.
    pub fn inject_fault(&mut self, dut_id: &str, fault_id: &str) -> Result<(), TestflowError> {
        let dut = self
            .duts
            .get_mut(dut_id)
            .ok_or_else(|| TestflowError::UnknownDut(dut_id.to_string()))?;
        dut.injected_fault = Some(Fault::parse(&dut.netlist, fault_id)?);
        Ok(())
    }

    pub fn clear_faults(&mut self) {
        for d in self.duts.values_mut() {
            d.injected_fault = None;
        }
    }

    /// Loads a JSON SoC description. Relative paths resolve against the
    /// config file's directory; `key_override` replaces `key_file`.
    pub fn load(
        path: impl AsRef<Path>,
        key_override: Option<&Path>,
    ) -> Result<Self, TestflowError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TestflowError::Config(format!("{}: {e}", path.display())))?;
        let file: SocFile = serde_json::from_str(&text)
            .map_err(|e| TestflowError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };

        let key_path = key_override
            .map(Path::to_path_buf)
            .unwrap_or_else(|| resolve(&file.key_file));
        let key = DeviceKey::load(&key_path)?;
        let mut signer = Signer::new(key, file.digest_bits)?;
        if let Some(s) = &file.signature_scheme {
            let scheme = SignatureScheme::parse(s)
                .ok_or_else(|| TestflowError::Config(format!("unknown signature scheme `{s}`")))?;
            signer = signer.with_scheme(scheme);
        }
        let mut soc = SocConfig::new(signer);
        if let Some(taps) = &file.lfsr_taps {
            soc.lfsr = LfsrConfig::from_taps(taps)?;
        }
        for (id, bench) in &file.duts {
            let netlist = Netlist::load(resolve(bench))?.with_name(id.clone());
            soc.add_dut(id.clone(), netlist);
        }
        for (id, dict_path) in &file.dictionaries {
            let dict = load_dictionary(resolve(dict_path))?;
            if dict.dut_id() != id {
                return Err(TestflowError::Config(format!(
                    "dictionary listed under `{id}` belongs to `{}`",
                    dict.dut_id()
                )));
            }
            soc.add_dictionary(dict)?;
        }
        Ok(soc)
    }

    /// Runs the device side of one session: patterns from `seed`, DUT
    /// response (with any injected fault), keyed signature of `digest_bits`.
    pub fn sign_session(
        &self,
        dut_id: &str,
        seed: u32,
        pattern_count: u32,
        digest_bits: u32,
    ) -> Result<Signature, TestflowError> {
        let dut = self
            .duts
            .get(dut_id)
            .ok_or_else(|| TestflowError::UnknownDut(dut_id.to_string()))?;
        let patterns = self.lfsr.patterns(
            seed as u64,
            dut.netlist.input_count(),
            pattern_count as usize,
        )?;
        let sim = FaultSimulator::new(&dut.netlist, &patterns)?;
        let response = match &dut.injected_fault {
            Some(f) => sim.faulty(f),
            None => sim.golden(),
        };
        let signer = if digest_bits == self.signer.digest_bits() {
            self.signer.clone()
        } else {
            self.signer.with_digest_bits(digest_bits)?
        };
        Ok(signer.sign(&response))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestVerdict {
    pub dut_id: String,
    pub seed: u32,
    pub diagnosis: Diagnosis,
    pub signature: Signature,
    pub duration: Duration,
}

/// One on-chip test against the locally stored dictionary.
pub fn run_onchip_test(
    soc: &SocConfig,
    dut_id: &str,
    seed: u32,
) -> Result<TestVerdict, TestflowError> {
    let start = Instant::now();
    if !soc.duts.contains_key(dut_id) {
        return Err(TestflowError::UnknownDut(dut_id.to_string()));
    }
    let dict = soc
        .dictionaries
        .get(dut_id)
        .ok_or_else(|| TestflowError::NoDictionary(dut_id.to_string()))?;
    let key = dict
        .session_for_seed(seed)
        .ok_or_else(|| TestflowError::SeedNotInDictionary {
            dut: dut_id.to_string(),
            seed,
        })?;
    let signature = soc.sign_session(dut_id, seed, key.pattern_count, key.digest_bits)?;
    let diagnosis = dict.lookup(key, &signature)?;
    Ok(TestVerdict {
        dut_id: dut_id.to_string(),
        seed,
        diagnosis,
        signature,
        duration: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Availability {
    Idle,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleOutcome {
    Completed(TestVerdict),
    /// The DUT was busy (or its availability unknown); the test is deferred.
    Skipped {
        dut_id: String,
        seed: u32,
    },
    Failed {
        dut_id: String,
        seed: u32,
        error: String,
    },
}

/// Runs queued tests on idle DUTs only. Outcomes are reported in queue order.
/// Different DUTs are tested concurrently; tests of one DUT run in queue order.
pub fn schedule_tests(
    soc: &SocConfig,
    availability: &HashMap<String, Availability>,
    queue: &[(String, u32)],
) -> Vec<ScheduleOutcome> {
    let mut per_dut: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (dut, _)) in queue.iter().enumerate() {
        per_dut.entry(dut.as_str()).or_default().push(i);
    }
    let groups: Vec<(&str, Vec<usize>)> = per_dut.into_iter().collect();
    let mut results: Vec<(usize, ScheduleOutcome)> = groups
        .par_iter()
        .flat_map_iter(|(dut, idxs)| {
            let idle = availability.get(*dut) == Some(&Availability::Idle);
            idxs.iter()
                .map(|&i| {
                    let seed = queue[i].1;
                    let outcome = if !idle {
                        ScheduleOutcome::Skipped {
                            dut_id: dut.to_string(),
                            seed,
                        }
                    } else {
                        match run_onchip_test(soc, dut, seed) {
                            Ok(v) => ScheduleOutcome::Completed(v),
                            Err(e) => ScheduleOutcome::Failed {
                                dut_id: dut.to_string(),
                                seed,
                                error: e.to_string(),
                            },
                        }
                    };
                    (i, outcome)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, o)| o).collect()
}
