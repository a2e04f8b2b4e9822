//! Keyed-hash output response analysis for logic BIST.
//!
//! A device key and a KMAC128 signature replace the usual MISR: test
//! responses of a gate-level circuit are compacted into a device-specific
//! signature and diagnosed against a fault dictionary built from the
//! software model, either on the device or by a remote tester.
//!
//! ```
//! use kbist::{faultsim, kmac::DeviceKey, netlist::Netlist, ora::Signer, tpg::LfsrConfig};
//!
//! let c17 = Netlist::from_bench("c17", "
//! INPUT(1)\nINPUT(2)\nINPUT(3)\nINPUT(6)\nINPUT(7)
//! OUTPUT(22)\nOUTPUT(23)
//! 10 = NAND(1, 3)\n11 = NAND(3, 6)\n16 = NAND(2, 11)
//! 19 = NAND(11, 7)\n22 = NAND(10, 16)\n23 = NAND(16, 19)").unwrap();
//! let patterns = LfsrConfig::default().patterns(0xACE1, c17.input_count(), 7).unwrap();
//! let response = faultsim::simulate_batch(&c17, &patterns).unwrap();
//! let signer = Signer::new(DeviceKey::from_hex("000102030405060708090a0b").unwrap(), 256).unwrap();
//! assert_eq!(response.bit_length(), 14);
//! assert_eq!(signer.sign(&response).bit_length(), 256);
//! ```

pub mod dictionary;
pub mod faultsim;
pub mod gf2;
pub mod kmac;
pub mod netlist;
pub mod ora;
pub mod remote;
pub mod selftest;
pub mod testflow;
pub mod tpg;

pub use dictionary::{Diagnosis, DictionaryKey, FaultDictionary};
pub use faultsim::{Fault, FaultSimulator, Pattern, ResponseStream};
pub use kmac::{DeviceKey, Signature};
pub use netlist::Netlist;
pub use ora::{SignatureScheme, Signer};
pub use remote::ProtocolMessage;
pub use testflow::{SocConfig, TestVerdict};
pub use tpg::{Lfsr, LfsrConfig};
