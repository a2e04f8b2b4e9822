#![allow(dead_code)]

use std::path::PathBuf;

use kbist::netlist::parse_bench;
use kbist::{DeviceKey, Netlist, Signer};
use proptest::prelude::*;

/// Circuit, primary outputs, pattern count, response bits, CR %.
pub const TABLE: [(&str, usize, usize, u64, f64); 11] = [
    ("c17", 2, 7, 14, -1728.57),
    ("c432", 7, 63, 441, 41.95),
    ("c499", 32, 55, 1760, 85.45),
    ("c880", 26, 148, 3848, 93.35),
    ("c1355", 32, 100, 3200, 92.00),
    ("c1908", 25, 128, 3200, 92.00),
    ("c2670", 140, 444, 62160, 99.59),
    ("c3540", 22, 264, 5808, 95.59),
    ("c5315", 123, 599, 73677, 99.65),
    ("c6288", 32, 33, 1056, 75.76),
    ("c7552", 108, 455, 49140, 99.48),
];

pub const SEED: u32 = 0x9E37_79B9;
pub const KEY_HEX: &str = "5a17c0ffee0ddba11deadbeef0123456";

pub fn bench_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../benchmarks/iscas85")
        .join(format!("{name}.bench"))
}

pub fn circuit(name: &str) -> Netlist {
    Netlist::load(bench_path(name)).unwrap()
}

pub fn key() -> DeviceKey {
    DeviceKey::from_hex(KEY_HEX).unwrap()
}

pub fn signer() -> Signer {
    Signer::new(key(), 256).unwrap()
}

const KINDS: [&str; 8] = ["AND", "NAND", "OR", "NOR", "XOR", "XNOR", "NOT", "BUFF"];

/// Random acyclic netlists: every gate reads only earlier nets.
pub fn random_netlist() -> impl Strategy<Value = Netlist> {
    (1usize..=8, 1usize..=40)
        .prop_flat_map(|(inputs, gates)| {
            let gate = move |i: usize| {
                let avail = inputs + i;
                (0usize..KINDS.len(), prop::collection::vec(0..avail, 1..=4))
            };
            let gates_s: Vec<_> = (0..gates).map(gate).collect();
            (
                Just(inputs),
                gates_s,
                prop::collection::vec(any::<prop::sample::Index>(), 1..=4),
            )
        })
        .prop_map(|(inputs, gates, outs)| {
            let mut text = String::new();
            for i in 0..inputs {
                text += &format!("INPUT(i{i})\n");
            }
            let name = |n: usize| {
                if n < inputs {
                    format!("i{n}")
                } else {
                    format!("g{}", n - inputs)
                }
            };
            let total = inputs + gates.len();
            let mut outputs: Vec<usize> = outs.iter().map(|ix| ix.index(total)).collect();
            outputs.push(total - 1);
            outputs.sort_unstable();
            outputs.dedup();
            for o in outputs {
                text += &format!("OUTPUT({})\n", name(o));
            }
            for (g, (kind, mut args)) in gates.into_iter().enumerate() {
                let kind = KINDS[kind];
                if kind == "NOT" || kind == "BUFF" {
                    args.truncate(1);
                } else if args.len() == 1 {
                    args.push(args[0]);
                }
                let args: Vec<String> = args.into_iter().map(name).collect();
                text += &format!("g{g} = {kind}({})\n", args.join(", "));
            }
            parse_bench(&text).unwrap()
        })
}
