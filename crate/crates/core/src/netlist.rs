//! ISCAS-85 `.bench` netlists as a levelized combinational gate graph.
//!
//! A [`Netlist`] is immutable once built. Net names are interned to dense
//! [`NetId`]s; gates are kept in source order and [`Netlist::level_order`]
//! holds a topological ordering of gate indices so a single forward pass
//! evaluates the whole circuit.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Dense index of a net inside one [`Netlist`].
pub type NetId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetlistError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown gate kind `{kind}`")]
    UnknownGate { line: usize, kind: String },
    #[error("line {line}: gate {kind} driving `{net}` has {got} inputs, {expected}")]
    Arity {
        line: usize,
        net: String,
        kind: GateKind,
        got: usize,
        expected: &'static str,
    },
    #[error("line {line}: net `{net}` has more than one driver")]
    DuplicateDriver { line: usize, net: String },
    #[error("undefined net `{net}`")]
    UndefinedNet { net: String },
    #[error("combinational cycle through net `{net}`")]
    Cycle { net: String },
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    And,
    Nand,
    Or,
    Nor,
    Xor,
    Xnor,
    Not,
    Buf,
}

impl GateKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_uppercase().as_str() {
            "AND" => GateKind::And,
            "NAND" => GateKind::Nand,
            "OR" => GateKind::Or,
            "NOR" => GateKind::Nor,
            "XOR" => GateKind::Xor,
            "XNOR" => GateKind::Xnor,
            "NOT" | "INV" => GateKind::Not,
            "BUF" | "BUFF" => GateKind::Buf,
            _ => return None,
        })
    }

    /// Keyword emitted by [`Netlist::to_bench`].
    pub fn keyword(self) -> &'static str {
        match self {
            GateKind::And => "AND",
            GateKind::Nand => "NAND",
            GateKind::Or => "OR",
            GateKind::Nor => "NOR",
            GateKind::Xor => "XOR",
            GateKind::Xnor => "XNOR",
            GateKind::Not => "NOT",
            GateKind::Buf => "BUFF",
        }
    }

    pub fn is_unary(self) -> bool {
        matches!(self, GateKind::Not | GateKind::Buf)
    }

    /// Evaluates the gate over 64 patterns at once, one per bit lane.
    #[inline]
    pub fn eval_words<I: Iterator<Item = u64>>(self, mut inputs: I) -> u64 {
        let first = inputs.next().unwrap_or(0);
        match self {
            GateKind::And => inputs.fold(first, |a, b| a & b),
            GateKind::Nand => !inputs.fold(first, |a, b| a & b),
            GateKind::Or => inputs.fold(first, |a, b| a | b),
            GateKind::Nor => !inputs.fold(first, |a, b| a | b),
            GateKind::Xor => inputs.fold(first, |a, b| a ^ b),
            GateKind::Xnor => !inputs.fold(first, |a, b| a ^ b),
            GateKind::Not => !first,
            GateKind::Buf => first,
        }
    }

    /// Single-pattern evaluation.
    pub fn eval_bits(self, inputs: &[bool]) -> bool {
        let and = || inputs.iter().all(|&b| b);
        let or = || inputs.iter().any(|&b| b);
        let parity = || inputs.iter().fold(false, |a, &b| a ^ b);
        match self {
            GateKind::And => and(),
            GateKind::Nand => !and(),
            GateKind::Or => or(),
            GateKind::Nor => !or(),
            GateKind::Xor => parity(),
            GateKind::Xnor => !parity(),
            GateKind::Not => !inputs[0],
            GateKind::Buf => inputs[0],
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gate {
    pub output: NetId,
    pub kind: GateKind,
    pub inputs: Vec<NetId>,
}

/// What drives a net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    Input(usize),
    Gate(usize),
}

#[derive(Debug, Clone)]
pub struct Netlist {
    name: String,
    net_names: Vec<String>,
    net_index: HashMap<String, NetId>,
    inputs: Vec<NetId>,
    outputs: Vec<NetId>,
    gates: Vec<Gate>,
    drivers: Vec<Option<Driver>>,
    level_order: Vec<usize>,
    levels: Vec<u32>,
}

impl PartialEq for Netlist {
    /// Structural identity: same nets by name, same ports, same gates in the
    /// same source order.
    fn eq(&self, other: &Self) -> bool {
        self.net_names == other.net_names
            && self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.gates == other.gates
    }
}

impl Eq for Netlist {}

/// Parses `.bench` text into a validated, levelized netlist.
pub fn parse_bench(text: &str) -> Result<Netlist, NetlistError> {
    Builder::default().parse(text)?.finish(String::new())
}

/// Recomputes `level_order` for a netlist whose structure has been validated.
pub fn levelize(mut netlist: Netlist) -> Result<Netlist, NetlistError> {
    let (order, levels) = compute_levels(&netlist)?;
    netlist.level_order = order;
    netlist.levels = levels;
    Ok(netlist)
}

impl Netlist {
    /// Parses `.bench` text and attaches a circuit name.
    pub fn from_bench(name: impl Into<String>, text: &str) -> Result<Self, NetlistError> {
        Builder::default().parse(text)?.finish(name.into())
    }

    /// Reads a `.bench` file; the circuit is named after the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetlistError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NetlistError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_bench(name, &text)
    }

    /// Builds a netlist from already-interned parts. Used by generators and tests.
    pub fn from_parts(
        name: impl Into<String>,
        net_names: Vec<String>,
        inputs: Vec<NetId>,
        outputs: Vec<NetId>,
        gates: Vec<Gate>,
    ) -> Result<Self, NetlistError> {
        let mut b = Builder::default();
        for n in &net_names {
            b.intern(n);
        }
        if b.names.len() != net_names.len() {
            return Err(NetlistError::Syntax {
                line: 0,
                msg: "duplicate net name".into(),
            });
        }
        b.inputs = inputs.into_iter().map(|i| (i, 0)).collect();
        b.outputs = outputs;
        b.gates = gates.into_iter().map(|g| (g, 0)).collect();
        b.finish(name.into())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn inputs(&self) -> &[NetId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NetId] {
        &self.outputs
    }

    /// Gates in source order.
    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Gate indices in evaluation order.
    pub fn level_order(&self) -> &[usize] {
        &self.level_order
    }

    /// Logic depth of each gate (1 for gates fed only by primary inputs).
    pub fn gate_level(&self, gate: usize) -> u32 {
        self.levels[gate]
    }

    pub fn net_count(&self) -> usize {
        self.net_names.len()
    }

    pub fn net_name(&self, net: NetId) -> &str {
        &self.net_names[net]
    }

    pub fn net_id(&self, name: &str) -> Option<NetId> {
        self.net_index.get(name).copied()
    }

    pub fn driver(&self, net: NetId) -> Option<Driver> {
        self.drivers[net]
    }

    /// Index of the gate driving `net`, if any.
    pub fn gate_driving(&self, net: NetId) -> Option<usize> {
        match self.drivers.get(net)? {
            Some(Driver::Gate(g)) => Some(*g),
            _ => None,
        }
    }

    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    /// Serializes back to `.bench`. Parsing the result yields an equal netlist.
    pub fn to_bench(&self) -> String {
        let mut out = String::new();
        if !self.name.is_empty() {
            out.push_str(&format!("# {}\n", self.name));
        }
        for &i in &self.inputs {
            out.push_str(&format!("INPUT({})\n", self.net_names[i]));
        }
        for &o in &self.outputs {
            out.push_str(&format!("OUTPUT({})\n", self.net_names[o]));
        }
        for g in &self.gates {
            let args: Vec<&str> = g
                .inputs
                .iter()
                .map(|&n| self.net_names[n].as_str())
                .collect();
            out.push_str(&format!(
                "{} = {}({})\n",
                self.net_names[g.output],
                g.kind,
                args.join(", ")
            ));
        }
        out
    }
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    index: HashMap<String, NetId>,
    inputs: Vec<(NetId, usize)>,
    outputs: Vec<NetId>,
    output_lines: Vec<usize>,
    gates: Vec<(Gate, usize)>,
}

impl Builder {
    fn intern(&mut self, name: &str) -> NetId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    fn parse(mut self, text: &str) -> Result<Self, NetlistError> {
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: &str| NetlistError::Syntax {
                line: line_no,
                msg: msg.to_string(),
            };
            if let Some((lhs, rhs)) = line.split_once('=') {
                let out = lhs.trim();
                if !is_ident(out) {
                    return Err(syntax("invalid net name on left of `=`"));
                }
                let (kind_s, args) =
                    split_call(rhs.trim()).ok_or_else(|| syntax("expected KIND(args)"))?;
                let kind = GateKind::parse(kind_s).ok_or_else(|| NetlistError::UnknownGate {
                    line: line_no,
                    kind: kind_s.to_string(),
                })?;
                let args =
                    split_args(args).ok_or_else(|| syntax("malformed gate argument list"))?;
                let expected = if kind.is_unary() {
                    (args.len() != 1).then_some("expected exactly 1")
                } else {
                    (args.len() < 2).then_some("expected at least 2")
                };
                if let Some(expected) = expected {
                    return Err(NetlistError::Arity {
                        line: line_no,
                        net: out.to_string(),
                        kind,
                        got: args.len(),
                        expected,
                    });
                }
                let output = self.intern(out);
                let inputs = args.iter().map(|a| self.intern(a)).collect();
                self.gates.push((
                    Gate {
                        output,
                        kind,
                        inputs,
                    },
                    line_no,
                ));
            } else {
                let (kw, args) = split_call(line)
                    .ok_or_else(|| syntax("expected INPUT(..), OUTPUT(..) or assignment"))?;
                let args = split_args(args).ok_or_else(|| syntax("malformed port declaration"))?;
                if args.len() != 1 {
                    return Err(syntax("port declarations take exactly one net"));
                }
                match kw.to_ascii_uppercase().as_str() {
                    "INPUT" => {
                        let id = self.intern(args[0]);
                        self.inputs.push((id, line_no));
                    }
                    "OUTPUT" => {
                        let id = self.intern(args[0]);
                        self.outputs.push(id);
                        self.output_lines.push(line_no);
                    }
                    _ => return Err(syntax(&format!("unknown declaration `{kw}`"))),
                }
            }
        }
        Ok(self)
    }

    fn finish(self, name: String) -> Result<Netlist, NetlistError> {
        let n = self.names.len();
        let mut drivers: Vec<Option<Driver>> = vec![None; n];
        for (pos, &(net, line)) in self.inputs.iter().enumerate() {
            if drivers[net].is_some() {
                return Err(NetlistError::DuplicateDriver {
                    line,
                    net: self.names[net].clone(),
                });
            }
            drivers[net] = Some(Driver::Input(pos));
        }
        for (gi, (gate, line)) in self.gates.iter().enumerate() {
            if drivers[gate.output].is_some() {
                return Err(NetlistError::DuplicateDriver {
                    line: *line,
                    net: self.names[gate.output].clone(),
                });
            }
            drivers[gate.output] = Some(Driver::Gate(gi));
        }
        for (gate, _) in &self.gates {
            for &i in &gate.inputs {
                if drivers[i].is_none() {
                    return Err(NetlistError::UndefinedNet {
                        net: self.names[i].clone(),
                    });
                }
            }
        }
        for &o in &self.outputs {
            if drivers[o].is_none() {
                return Err(NetlistError::UndefinedNet {
                    net: self.names[o].clone(),
                });
            }
        }
        let netlist = Netlist {
            name,
            net_names: self.names,
            net_index: self.index,
            inputs: self.inputs.into_iter().map(|(id, _)| id).collect(),
            outputs: self.outputs,
            gates: self.gates.into_iter().map(|(g, _)| g).collect(),
            drivers,
            level_order: Vec::new(),
            levels: Vec::new(),
        };
        levelize(netlist)
    }
}

/// Kahn's algorithm with a stable (level, source index) tie-break.
fn compute_levels(netlist: &Netlist) -> Result<(Vec<usize>, Vec<u32>), NetlistError> {
    let gates = &netlist.gates;
    let mut fanout: Vec<Vec<usize>> = vec![Vec::new(); gates.len()];
    let mut pending = vec![0usize; gates.len()];
    for (gi, g) in gates.iter().enumerate() {
        for &i in &g.inputs {
            if let Some(Driver::Gate(src)) = netlist.drivers[i] {
                fanout[src].push(gi);
                pending[gi] += 1;
            }
        }
    }
    let mut levels = vec![0u32; gates.len()];
    let mut frontier: Vec<usize> = (0..gates.len()).filter(|&g| pending[g] == 0).collect();
    for &g in &frontier {
        levels[g] = 1;
    }
    let mut visited = 0;
    while !frontier.is_empty() {
        visited += frontier.len();
        let mut next = Vec::new();
        for &g in &frontier {
            for &succ in &fanout[g] {
                levels[succ] = levels[succ].max(levels[g] + 1);
                pending[succ] -= 1;
                if pending[succ] == 0 {
                    next.push(succ);
                }
            }
        }
        frontier = next;
    }
    if visited < gates.len() {
        return Err(NetlistError::Cycle {
            net: netlist.net_names[cycle_net(netlist, &pending)].clone(),
        });
    }
    let mut order: Vec<usize> = (0..gates.len()).collect();
    order.sort_by_key(|&g| (levels[g], g));
    Ok((order, levels))
}

/// Walks back through unresolved drivers until a gate repeats; that gate's
/// output lies on a cycle.
fn cycle_net(netlist: &Netlist, pending: &[usize]) -> NetId {
    let mut seen = vec![false; netlist.gates.len()];
    let mut g = (0..pending.len())
        .find(|&g| pending[g] > 0)
        .expect("unresolved gate");
    loop {
        if seen[g] {
            return netlist.gates[g].output;
        }
        seen[g] = true;
        g = netlist.gates[g]
            .inputs
            .iter()
            .find_map(|&i| match netlist.drivers[i] {
                Some(Driver::Gate(src)) if pending[src] > 0 => Some(src),
                _ => None,
            })
            .expect("a pending gate has a pending driver");
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| !c.is_whitespace() && !matches!(c, '(' | ')' | ',' | '=' | '#'))
}

fn split_call(s: &str) -> Option<(&str, &str)> {
    let open = s.find('(')?;
    let inner = s[open + 1..].strip_suffix(')')?;
    let head = s[..open].trim();
    is_ident(head).then_some((head, inner))
}

fn split_args(s: &str) -> Option<Vec<&str>> {
    let args: Vec<&str> = s.split(',').map(str::trim).collect();
    args.iter().all(|a| is_ident(a)).then_some(args)
}
