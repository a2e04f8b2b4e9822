//! Python bindings for the kbist core crate.

use std::fmt::Display;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use kbist::dictionary::{self, BuildConfig, Diagnosis};
use kbist::faultsim::{self, Fault, FaultSimulator};
use kbist::kmac;
use kbist::ora::{self, SignatureScheme};
use kbist::tpg::LfsrConfig;

fn err<E: Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn lfsr_config(taps: Option<Vec<u32>>) -> PyResult<LfsrConfig> {
    match taps {
        Some(t) => LfsrConfig::from_taps(&t).map_err(err),
        None => Ok(LfsrConfig::default()),
    }
}

fn fraction<'py>(py: Python<'py>, p: &ora::Probability) -> PyResult<Bound<'py, PyAny>> {
    let int = py.import("builtins")?.getattr("int")?;
    let num = int.call1((p.ratio().numer().to_string(),))?;
    let den = int.call1((p.ratio().denom().to_string(),))?;
    py.import("fractions")?
        .getattr("Fraction")?
        .call1((num, den))
}

/// A levelized gate-level netlist.
#[pyclass(name = "Netlist", frozen)]
struct PyNetlist {
    inner: kbist::Netlist,
}

#[pymethods]
impl PyNetlist {
    #[staticmethod]
    fn from_bench(name: &str, text: &str) -> PyResult<Self> {
        Ok(PyNetlist {
            inner: kbist::Netlist::from_bench(name, text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyNetlist {
            inner: kbist::Netlist::load(path).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn input_count(&self) -> usize {
        self.inner.input_count()
    }

    #[getter]
    fn output_count(&self) -> usize {
        self.inner.output_count()
    }

    #[getter]
    fn gate_count(&self) -> usize {
        self.inner.gates().len()
    }

    fn to_bench(&self) -> String {
        self.inner.to_bench()
    }

    /// Uncollapsed stuck-at fault ids in enumeration order.
    fn faults(&self) -> Vec<String> {
        faultsim::enumerate_faults(&self.inner)
            .iter()
            .map(|f| f.id().to_string())
            .collect()
    }

    fn simulate(&self, patterns: Vec<Vec<bool>>) -> PyResult<PyResponse> {
        Ok(PyResponse {
            inner: faultsim::simulate_batch(&self.inner, &patterns).map_err(err)?,
        })
    }

    fn simulate_faulty(&self, fault_id: &str, patterns: Vec<Vec<bool>>) -> PyResult<PyResponse> {
        let f = Fault::parse(&self.inner, fault_id).map_err(err)?;
        let sim = FaultSimulator::new(&self.inner, &patterns).map_err(err)?;
        Ok(PyResponse {
            inner: sim.faulty(&f),
        })
    }

    /// Returns `(detected, total)`.
    fn coverage(&self, patterns: Vec<Vec<bool>>) -> PyResult<(usize, usize)> {
        let r = faultsim::fault_coverage(&self.inner, &patterns).map_err(err)?;
        Ok((r.detected_faults, r.total_faults))
    }

    fn __repr__(&self) -> String {
        format!(
            "Netlist({}, inputs={}, outputs={}, gates={})",
            self.inner.name(),
            self.inner.input_count(),
            self.inner.output_count(),
            self.inner.gates().len()
        )
    }
}

/// Pattern-major output response of a pattern batch.
#[pyclass(name = "ResponseStream", frozen)]
struct PyResponse {
    inner: faultsim::ResponseStream,
}

#[pymethods]
impl PyResponse {
    #[getter]
    fn bit_length(&self) -> usize {
        self.inner.bit_length()
    }

    #[getter]
    fn pattern_count(&self) -> usize {
        self.inner.pattern_count()
    }

    #[getter]
    fn po_count(&self) -> usize {
        self.inner.po_count()
    }

    fn bits(&self) -> Vec<bool> {
        self.inner.bits().collect()
    }

    fn packed<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.as_bytes())
    }

    fn __str__(&self) -> String {
        self.inner.to_bit_string()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Device-keyed signer. The key never leaves this object.
#[pyclass(name = "Signer", frozen)]
struct PySigner {
    inner: kbist::Signer,
}

#[pymethods]
impl PySigner {
    #[new]
    #[pyo3(signature = (key_hex, digest_bits = 256, scheme = "kmac128"))]
    fn new(key_hex: &str, digest_bits: u32, scheme: &str) -> PyResult<Self> {
        let key = kbist::DeviceKey::from_hex(key_hex).map_err(err)?;
        let scheme = SignatureScheme::parse(scheme)
            .ok_or_else(|| err(format!("unknown scheme `{scheme}`")))?;
        Ok(PySigner {
            inner: kbist::Signer::new(key, digest_bits)
                .map_err(err)?
                .with_scheme(scheme),
        })
    }

    #[staticmethod]
    fn from_key_file(path: &str, digest_bits: Option<u32>) -> PyResult<Self> {
        let key = kbist::DeviceKey::load(path).map_err(err)?;
        Ok(PySigner {
            inner: kbist::Signer::new(key, digest_bits.unwrap_or(ora::DEFAULT_DIGEST_BITS))
                .map_err(err)?,
        })
    }

    #[getter]
    fn digest_bits(&self) -> u32 {
        self.inner.digest_bits()
    }

    fn sign<'py>(&self, py: Python<'py>, response: &PyResponse) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.sign(&response.inner).as_bytes())
    }

    fn __repr__(&self) -> String {
        format!(
            "Signer({}, d={})",
            self.inner.scheme().name(),
            self.inner.digest_bits()
        )
    }
}

/// Golden and fault signatures per test session.
#[pyclass(name = "FaultDictionary", frozen)]
struct PyDictionary {
    inner: kbist::FaultDictionary,
}

#[pymethods]
impl PyDictionary {
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (netlist, dut_id, seeds, pattern_count, signer, golden_only = false, lfsr_taps = None))]
    fn build(
        py: Python<'_>,
        netlist: &PyNetlist,
        dut_id: &str,
        seeds: Vec<u32>,
        pattern_count: u32,
        signer: &PySigner,
        golden_only: bool,
        lfsr_taps: Option<Vec<u32>>,
    ) -> PyResult<Self> {
        let mut cfg = BuildConfig::new(dut_id, seeds, pattern_count, signer.inner.clone());
        cfg.lfsr = lfsr_config(lfsr_taps)?;
        let inner = py
            .detach(|| {
                if golden_only {
                    dictionary::build_golden_dictionary(&netlist.inner, &cfg)
                } else {
                    dictionary::build_fault_dictionary(&netlist.inner, &cfg)
                }
            })
            .map_err(err)?;
        Ok(PyDictionary { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDictionary {
            inner: dictionary::load_dictionary(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        dictionary::save_dictionary(&self.inner, path).map_err(err)
    }

    #[getter]
    fn dut_id(&self) -> &str {
        self.inner.dut_id()
    }

    #[getter]
    fn seeds(&self) -> Vec<u32> {
        self.inner.sessions().iter().map(|k| k.seed).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.entries().len()
    }

    /// Returns `("FAULT_FREE" | "FAULT" | "INVALID_SIGNATURE", fault_ids)`.
    fn lookup(&self, seed: u32, signature: &[u8]) -> PyResult<(&'static str, Vec<String>)> {
        let key = self
            .inner
            .session_for_seed(seed)
            .ok_or_else(|| err(format!("seed {seed:#010x} not in dictionary")))?;
        let sig = kmac::Signature::new(signature.to_vec());
        Ok(match self.inner.lookup(key, &sig).map_err(err)? {
            Diagnosis::FaultFree => ("FAULT_FREE", vec![]),
            Diagnosis::Fault(ids) => ("FAULT", ids),
            Diagnosis::InvalidSignature => ("INVALID_SIGNATURE", vec![]),
        })
    }
}

#[pyfunction]
#[pyo3(signature = (seed, input_count, pattern_count, lfsr_taps = None))]
fn lfsr_patterns(
    seed: u64,
    input_count: usize,
    pattern_count: usize,
    lfsr_taps: Option<Vec<u32>>,
) -> PyResult<Vec<Vec<bool>>> {
    lfsr_config(lfsr_taps)?
        .patterns(seed, input_count, pattern_count)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, digest_bits = 256))]
fn shake128<'py>(py: Python<'py>, data: &[u8], digest_bits: u32) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(
        py,
        kmac::shake128(data, digest_bits).map_err(err)?.as_bytes(),
    ))
}

#[pyfunction]
#[pyo3(signature = (key, data, digest_bits = 256, customization = b"".as_slice()))]
fn kmac128<'py>(
    py: Python<'py>,
    key: &[u8],
    data: &[u8],
    digest_bits: u32,
    customization: &[u8],
) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(
        py,
        kmac::kmac128(key, data, digest_bits, customization)
            .map_err(err)?
            .as_bytes(),
    ))
}

#[pyfunction]
fn pa_sr<'py>(py: Python<'py>, n: u64, l: u64) -> PyResult<Bound<'py, PyAny>> {
    fraction(py, &ora::pa_sr(n, l).map_err(err)?)
}

#[pyfunction]
fn pa_kmac<'py>(py: Python<'py>, d: u32) -> PyResult<Bound<'py, PyAny>> {
    fraction(py, &ora::pa_kmac(d).map_err(err)?)
}

#[pyfunction]
fn cr_sr(n: u64, l: u64) -> PyResult<f64> {
    ora::cr_sr(n, l).map_err(err)
}

#[pyfunction]
fn cr_kmac(d: u32, l: u64) -> PyResult<f64> {
    ora::cr_kmac(d, l).map_err(err)
}

/// Full stuck-at sweep; returns the report row as a dict.
#[pyfunction]
#[pyo3(signature = (netlist, pattern_count, seed, signer, lfsr_taps = None))]
fn analyze<'py>(
    py: Python<'py>,
    netlist: &PyNetlist,
    pattern_count: usize,
    seed: u64,
    signer: &PySigner,
    lfsr_taps: Option<Vec<u32>>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let patterns = lfsr_config(lfsr_taps)?
        .patterns(seed, netlist.inner.input_count(), pattern_count)
        .map_err(err)?;
    let r = py
        .detach(|| ora::aliasing_analysis(&netlist.inner, &patterns, &signer.inner))
        .map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("circuit", &r.circuit)?;
    d.set_item("po_count", r.po_count)?;
    d.set_item("pattern_count", r.pattern_count)?;
    d.set_item("response_bits", r.response_length_bits)?;
    d.set_item("compaction_rate", r.compaction_rate)?;
    d.set_item("faults_total", r.faults_total)?;
    d.set_item("faults_detected", r.faults_detected)?;
    d.set_item("aliased", r.aliased_fault_ids)?;
    d.set_item("aliasing_rate", r.aliasing_rate)?;
    Ok(d)
}

/// Runs the built-in checks; returns `[(name, passed)]`.
#[pyfunction]
fn selftest() -> Vec<(String, bool)> {
    kbist::selftest::run_all()
        .into_iter()
        .map(|r| (r.name, r.passed))
        .collect()
}

#[pymodule]
fn kbist_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetlist>()?;
    m.add_class::<PyResponse>()?;
    m.add_class::<PySigner>()?;
    m.add_class::<PyDictionary>()?;
    m.add_function(wrap_pyfunction!(lfsr_patterns, m)?)?;
    m.add_function(wrap_pyfunction!(shake128, m)?)?;
    m.add_function(wrap_pyfunction!(kmac128, m)?)?;
    m.add_function(wrap_pyfunction!(pa_sr, m)?)?;
    m.add_function(wrap_pyfunction!(pa_kmac, m)?)?;
    m.add_function(wrap_pyfunction!(cr_sr, m)?)?;
    m.add_function(wrap_pyfunction!(cr_kmac, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
