//! Fault-free and single stuck-at fault simulation.
//!
//! The fast path packs 64 patterns into one `u64` per net and re-simulates
//! the whole circuit once per fault (serial fault simulation, parallel
//! patterns). [`scalar`] keeps a one-pattern-at-a-time evaluator that the
//! tests use as the reference.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::netlist::{NetId, Netlist};

/// One input vector, bit `i` driving primary input `i`.
pub type Pattern = Vec<bool>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FaultSimError {
    #[error("pattern {index} has {got} bits, the circuit has {expected} inputs")]
    PatternWidth {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("unknown fault `{0}`")]
    UnknownFault(String),
    #[error("fault coverage needs at least one pattern")]
    EmptyPatterns,
    #[error("pattern file line {line}: {msg}")]
    PatternSyntax { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StuckAt {
    Zero,
    One,
}

impl StuckAt {
    fn word(self) -> u64 {
        match self {
            StuckAt::Zero => 0,
            StuckAt::One => !0,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            StuckAt::Zero => "sa0",
            StuckAt::One => "sa1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultSite {
    /// A whole net: primary input or gate output, seen by every reader.
    Net(NetId),
    /// One gate's view of its `pin`-th input (a fanout branch).
    Pin { gate: usize, pin: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fault {
    pub site: FaultSite,
    pub polarity: StuckAt,
    id: String,
}

impl Fault {
    pub fn new(
        netlist: &Netlist,
        site: FaultSite,
        polarity: StuckAt,
    ) -> Result<Self, FaultSimError> {
        let base = match site {
            FaultSite::Net(net) if net < netlist.net_count() => netlist.net_name(net).to_string(),
            FaultSite::Pin { gate, pin }
                if gate < netlist.gates().len() && pin < netlist.gates()[gate].inputs.len() =>
            {
                format!("{}.in{pin}", netlist.net_name(netlist.gates()[gate].output))
            }
            _ => return Err(FaultSimError::UnknownFault(format!("{site:?}"))),
        };
        Ok(Fault {
            site,
            polarity,
            id: format!("{base}@{}", polarity.suffix()),
        })
    }

    /// Parses `net@sa0`, `net@sa1` or `gate.inN@saX`, where `gate` names the
    /// gate's output net.
    pub fn parse(netlist: &Netlist, id: &str) -> Result<Self, FaultSimError> {
        let unknown = || FaultSimError::UnknownFault(id.to_string());
        let (site, pol) = id.rsplit_once('@').ok_or_else(unknown)?;
        let polarity = match pol {
            "sa0" => StuckAt::Zero,
            "sa1" => StuckAt::One,
            _ => return Err(unknown()),
        };
        if let Some(net) = netlist.net_id(site) {
            return Fault::new(netlist, FaultSite::Net(net), polarity);
        }
        let (gate_net, pin) = site.rsplit_once(".in").ok_or_else(unknown)?;
        let pin: usize = pin.parse().map_err(|_| unknown())?;
        let gate = netlist
            .net_id(gate_net)
            .and_then(|n| netlist.gate_driving(n))
            .ok_or_else(unknown)?;
        Fault::new(netlist, FaultSite::Pin { gate, pin }, polarity).map_err(|_| unknown())
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Primary-output responses of a pattern batch, pattern-major.
///
/// Bit `i * po_count + j` is output `j` under pattern `i`. Bits are packed
/// most-significant-first into octets; unused low bits of the last octet are
/// zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResponseStream {
    bytes: Vec<u8>,
    bit_length: usize,
    pattern_count: usize,
    po_count: usize,
}

impl ResponseStream {
    pub fn from_bits(bits: &[bool], pattern_count: usize, po_count: usize) -> Self {
        assert_eq!(bits.len(), pattern_count * po_count);
        let mut bytes = vec![0u8; bits.len().div_ceil(8)];
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
        ResponseStream {
            bytes,
            bit_length: bits.len(),
            pattern_count,
            po_count,
        }
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.bit_length);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.bit_length).map(|i| self.bit(i))
    }

    /// Output vector observed under pattern `p`.
    pub fn pattern_outputs(&self, p: usize) -> Vec<bool> {
        (0..self.po_count)
            .map(|j| self.bit(p * self.po_count + j))
            .collect()
    }

    /// MSB-first packed bits.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_length(&self) -> usize {
        self.bit_length
    }

    pub fn pattern_count(&self) -> usize {
        self.pattern_count
    }

    pub fn po_count(&self) -> usize {
        self.po_count
    }

    pub fn to_bit_string(&self) -> String {
        self.bits().map(|b| if b { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub total_faults: usize,
    pub detected_faults: usize,
    pub coverage: f64,
    pub undetected: Vec<String>,
}

/// Patterns packed for word-parallel evaluation, plus the fault-free
/// output words. Built once per pattern batch and shared across faults.
pub struct FaultSimulator<'a> {
    netlist: &'a Netlist,
    pattern_count: usize,
    /// `[block][input]`
    input_words: Vec<Vec<u64>>,
    /// `[block][output]`
    golden: Vec<Vec<u64>>,
}

impl<'a> FaultSimulator<'a> {
    pub fn new(netlist: &'a Netlist, patterns: &[Pattern]) -> Result<Self, FaultSimError> {
        let width = netlist.input_count();
        if let Some((index, p)) = patterns.iter().enumerate().find(|(_, p)| p.len() != width) {
            return Err(FaultSimError::PatternWidth {
                index,
                expected: width,
                got: p.len(),
            });
        }
        let input_words = patterns
            .chunks(64)
            .map(|chunk| {
                let mut words = vec![0u64; width];
                for (lane, p) in chunk.iter().enumerate() {
                    for (i, _) in p.iter().enumerate().filter(|(_, &b)| b) {
                        words[i] |= 1 << lane;
                    }
                }
                words
            })
            .collect();
        let mut sim = FaultSimulator {
            netlist,
            pattern_count: patterns.len(),
            input_words,
            golden: Vec::new(),
        };
        sim.golden = sim.output_words(None);
        Ok(sim)
    }

    pub fn netlist(&self) -> &Netlist {
        self.netlist
    }

    pub fn pattern_count(&self) -> usize {
        self.pattern_count
    }

    fn lane_mask(&self, block: usize) -> u64 {
        let lanes = (self.pattern_count - block * 64).min(64);
        if lanes == 64 {
            !0
        } else {
            (1u64 << lanes) - 1
        }
    }

    fn eval_block(&self, block: usize, fault: Option<&Fault>, values: &mut [u64]) {
        let nl = self.netlist;
        let (forced_net, pin_gate) = match fault {
            Some(f) => match f.site {
                FaultSite::Net(n) => (Some((n, f.polarity.word())), None),
                FaultSite::Pin { gate, pin } => (None, Some((gate, pin, f.polarity.word()))),
            },
            None => (None, None),
        };
        for (&net, &w) in nl.inputs().iter().zip(&self.input_words[block]) {
            values[net] = w;
        }
        if let Some((net, w)) = forced_net {
            values[net] = w;
        }
        let gates = nl.gates();
        for &g in nl.level_order() {
            let gate = &gates[g];
            let v = match pin_gate {
                Some((fg, pin, w)) if fg == g => {
                    gate.kind
                        .eval_words(gate.inputs.iter().enumerate().map(|(k, &i)| {
                            if k == pin {
                                w
                            } else {
                                values[i]
                            }
                        }))
                }
                _ => gate.kind.eval_words(gate.inputs.iter().map(|&i| values[i])),
            };
            values[gate.output] = v;
            if let Some((net, w)) = forced_net {
                if net == gate.output {
                    values[net] = w;
                }
            }
        }
    }

    fn output_words(&self, fault: Option<&Fault>) -> Vec<Vec<u64>> {
        let mut values = vec![0u64; self.netlist.net_count()];
        (0..self.input_words.len())
            .map(|b| {
                self.eval_block(b, fault, &mut values);
                self.netlist.outputs().iter().map(|&o| values[o]).collect()
            })
            .collect()
    }

    fn stream(&self, words: &[Vec<u64>]) -> ResponseStream {
        let po = self.netlist.output_count();
        let mut bits = Vec::with_capacity(self.pattern_count * po);
        for p in 0..self.pattern_count {
            let (block, lane) = (p / 64, p % 64);
            bits.extend(words[block].iter().map(|w| (w >> lane) & 1 == 1));
        }
        ResponseStream::from_bits(&bits, self.pattern_count, po)
    }

    pub fn golden(&self) -> ResponseStream {
        self.stream(&self.golden)
    }

    pub fn faulty(&self, fault: &Fault) -> ResponseStream {
        self.stream(&self.output_words(Some(fault)))
    }

    /// True if some pattern shows a different value on some output.
    pub fn detects(&self, fault: &Fault) -> bool {
        let mut values = vec![0u64; self.netlist.net_count()];
        (0..self.input_words.len()).any(|b| {
            self.eval_block(b, Some(fault), &mut values);
            let mask = self.lane_mask(b);
            self.netlist
                .outputs()
                .iter()
                .zip(&self.golden[b])
                .any(|(&o, &g)| (values[o] ^ g) & mask != 0)
        })
    }

    /// Faulty response for each fault that is detected, `None` otherwise.
    /// Results come back in the order of `faults`.
    pub fn sweep(&self, faults: &[Fault]) -> Vec<Option<ResponseStream>> {
        faults
            .par_iter()
            .map(|f| self.detects(f).then(|| self.faulty(f)))
            .collect()
    }
}

/// Fault-free outputs for a single pattern, in output declaration order.
pub fn simulate(netlist: &Netlist, pattern: &[bool]) -> Result<Vec<bool>, FaultSimError> {
    let stream = simulate_batch(netlist, &[pattern.to_vec()])?;
    Ok(stream.pattern_outputs(0))
}

pub fn simulate_batch(
    netlist: &Netlist,
    patterns: &[Pattern],
) -> Result<ResponseStream, FaultSimError> {
    Ok(FaultSimulator::new(netlist, patterns)?.golden())
}

pub fn simulate_faulty(
    netlist: &Netlist,
    fault: &Fault,
    patterns: &[Pattern],
) -> Result<ResponseStream, FaultSimError> {
    // Re-derive from the id so faults built against another netlist are rejected.
    let own = Fault::parse(netlist, fault.id())?;
    if own != *fault {
        return Err(FaultSimError::UnknownFault(fault.id().to_string()));
    }
    Ok(FaultSimulator::new(netlist, patterns)?.faulty(fault))
}

/// The uncollapsed fault universe: both polarities on every primary input
/// (declaration order), then for each gate in level order its output net
/// followed by each input pin. sa0 precedes sa1 at every site.
pub fn enumerate_faults(netlist: &Netlist) -> Vec<Fault> {
    let mut sites: Vec<FaultSite> = netlist
        .inputs()
        .iter()
        .map(|&n| FaultSite::Net(n))
        .collect();
    for &g in netlist.level_order() {
        let gate = &netlist.gates()[g];
        sites.push(FaultSite::Net(gate.output));
        sites.extend((0..gate.inputs.len()).map(|pin| FaultSite::Pin { gate: g, pin }));
    }
    sites
        .into_iter()
        .flat_map(|s| {
            [StuckAt::Zero, StuckAt::One]
                .map(|p| Fault::new(netlist, s, p).expect("site from netlist"))
        })
        .collect()
}

pub fn fault_coverage(
    netlist: &Netlist,
    patterns: &[Pattern],
) -> Result<CoverageReport, FaultSimError> {
    if patterns.is_empty() {
        return Err(FaultSimError::EmptyPatterns);
    }
    let sim = FaultSimulator::new(netlist, patterns)?;
    let faults = enumerate_faults(netlist);
    let detected: Vec<bool> = faults.par_iter().map(|f| sim.detects(f)).collect();
    let undetected: Vec<String> = faults
        .iter()
        .zip(&detected)
        .filter(|(_, &d)| !d)
        .map(|(f, _)| f.id().to_string())
        .collect();
    let total = faults.len();
    let det = total - undetected.len();
    Ok(CoverageReport {
        total_faults: total,
        detected_faults: det,
        coverage: if total == 0 {
            0.0
        } else {
            det as f64 / total as f64
        },
        undetected,
    })
}

/// Reads one pattern per line as a string of `0`/`1` characters. Blank lines
/// and `#` comments are skipped.
pub fn parse_patterns(text: &str, width: usize) -> Result<Vec<Pattern>, FaultSimError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| FaultSimError::PatternSyntax { line: idx + 1, msg };
        let bits = line
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(err(format!("unexpected character `{other}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if bits.len() != width {
            return Err(err(format!("expected {width} bits, found {}", bits.len())));
        }
        out.push(bits);
    }
    Ok(out)
}

pub fn format_patterns(patterns: &[Pattern]) -> String {
    patterns
        .iter()
        .map(|p| {
            p.iter()
                .map(|&b| if b { '1' } else { '0' })
                .collect::<String>()
                + "\n"
        })
        .collect()
}

/// One-pattern-at-a-time evaluation over `bool`s. Slow but obviously correct;
/// the word-parallel engine is checked against it.
pub mod scalar {
    use super::{Fault, FaultSite};
    use crate::netlist::Netlist;

    pub fn simulate(netlist: &Netlist, pattern: &[bool], fault: Option<&Fault>) -> Vec<bool> {
        assert_eq!(pattern.len(), netlist.input_count());
        let stuck = |f: &Fault| f.polarity == super::StuckAt::One;
        let mut values = vec![false; netlist.net_count()];
        for (&net, &b) in netlist.inputs().iter().zip(pattern) {
            values[net] = b;
        }
        if let Some(
            f @ Fault {
                site: FaultSite::Net(n),
                ..
            },
        ) = fault
        {
            if netlist.inputs().contains(n) {
                values[*n] = stuck(f);
            }
        }
        for &g in netlist.level_order() {
            let gate = &netlist.gates()[g];
            let mut ins: Vec<bool> = gate.inputs.iter().map(|&i| values[i]).collect();
            let mut out_forced = None;
            if let Some(f) = fault {
                match f.site {
                    FaultSite::Pin { gate: fg, pin } if fg == g => ins[pin] = stuck(f),
                    FaultSite::Net(n) if n == gate.output => out_forced = Some(stuck(f)),
                    _ => {}
                }
            }
            values[gate.output] = out_forced.unwrap_or_else(|| gate.kind.eval_bits(&ins));
        }
        netlist.outputs().iter().map(|&o| values[o]).collect()
    }
}
