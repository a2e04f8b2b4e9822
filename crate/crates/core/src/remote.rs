//! Remote testing: a trusted tester holding the fault dictionary and a device
//! agent holding the key, talking a small framed protocol over TCP.
//!
//! Frame layout, big-endian:
//!
//! ```text
//! "KBST" | 0x01 | type | payload length (u32) | payload
//! ```
//!
//! Strings are u16-length-prefixed UTF-8.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::dictionary::{Diagnosis, DictionaryError, DictionaryKey, FaultDictionary};
use crate::kmac::Signature;
use crate::testflow::{SocConfig, TestflowError};

pub const MAGIC: [u8; 4] = *b"KBST";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub const TYPE_REQUEST: u8 = 1;
pub const TYPE_RESPONSE: u8 = 2;
pub const TYPE_DIAG: u8 = 3;
pub const TYPE_ERROR: u8 = 4;

pub const ERR_UNKNOWN_DUT: u16 = 1;
pub const ERR_MALFORMED: u16 = 2;
pub const ERR_BAD_REQUEST: u16 = 3;
pub const ERR_UNEXPECTED: u16 = 4;
pub const ERR_INTERNAL: u16 = 5;

/// Upper bound on patterns an agent will simulate for one request.
pub const MAX_AGENT_PATTERNS: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("payload length {0} exceeds limit")]
    LengthOverflow(u64),
    #[error("truncated frame")]
    Truncated,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("string of {0} bytes does not fit a frame field")]
    FieldTooLong(usize),
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("connection closed by peer")]
    Closed,
    #[error("peer reported error {code}: {detail}")]
    Peer { code: u16, detail: String },
    #[error("unexpected message: {0}")]
    Unexpected(&'static str),
    #[error("tester configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error(transparent)]
    Testflow(#[from] TestflowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    FaultFree = 0,
    Fault = 1,
    Invalid = 2,
}

impl Verdict {
    fn from_u8(v: u8) -> Result<Self, RemoteError> {
        match v {
            0 => Ok(Verdict::FaultFree),
            1 => Ok(Verdict::Fault),
            2 => Ok(Verdict::Invalid),
            _ => Err(RemoteError::Malformed(format!("verdict {v}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolMessage {
    TestRequest {
        dut_id: String,
        seed: u32,
        pattern_count: u32,
        digest_bits: u16,
    },
    TestResponse {
        signature: Vec<u8>,
    },
    DiagResult {
        verdict: Verdict,
        fault_ids: Vec<String>,
    },
    Error {
        code: u16,
        detail: String,
    },
}

impl ProtocolMessage {
    pub fn type_code(&self) -> u8 {
        match self {
            ProtocolMessage::TestRequest { .. } => TYPE_REQUEST,
            ProtocolMessage::TestResponse { .. } => TYPE_RESPONSE,
            ProtocolMessage::DiagResult { .. } => TYPE_DIAG,
            ProtocolMessage::Error { .. } => TYPE_ERROR,
        }
    }

    pub fn diag(diagnosis: &Diagnosis) -> Self {
        let (verdict, fault_ids) = match diagnosis {
            Diagnosis::FaultFree => (Verdict::FaultFree, vec![]),
            Diagnosis::Fault(ids) => (Verdict::Fault, ids.clone()),
            Diagnosis::InvalidSignature => (Verdict::Invalid, vec![]),
        };
        ProtocolMessage::DiagResult { verdict, fault_ids }
    }

    pub fn error(code: u16, detail: impl Into<String>) -> Self {
        ProtocolMessage::Error {
            code,
            detail: detail.into(),
        }
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), RemoteError> {
    let len = u16::try_from(s.len()).map_err(|_| RemoteError::FieldTooLong(s.len()))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn payload(msg: &ProtocolMessage) -> Result<Vec<u8>, RemoteError> {
    let mut p = Vec::new();
    match msg {
        ProtocolMessage::TestRequest {
            dut_id,
            seed,
            pattern_count,
            digest_bits,
        } => {
            put_str(&mut p, dut_id)?;
            p.extend_from_slice(&seed.to_be_bytes());
            p.extend_from_slice(&pattern_count.to_be_bytes());
            p.extend_from_slice(&digest_bits.to_be_bytes());
        }
        ProtocolMessage::TestResponse { signature } => {
            let len = u16::try_from(signature.len())
                .map_err(|_| RemoteError::FieldTooLong(signature.len()))?;
            p.extend_from_slice(&len.to_be_bytes());
            p.extend_from_slice(signature);
        }
        ProtocolMessage::DiagResult { verdict, fault_ids } => {
            p.push(*verdict as u8);
            let n = u16::try_from(fault_ids.len())
                .map_err(|_| RemoteError::FieldTooLong(fault_ids.len()))?;
            p.extend_from_slice(&n.to_be_bytes());
            for id in fault_ids {
                put_str(&mut p, id)?;
            }
        }
        ProtocolMessage::Error { code, detail } => {
            p.extend_from_slice(&code.to_be_bytes());
            put_str(&mut p, detail)?;
        }
    }
    if p.len() > MAX_PAYLOAD {
        return Err(RemoteError::LengthOverflow(p.len() as u64));
    }
    Ok(p)
}

pub fn encode(msg: &ProtocolMessage) -> Result<Vec<u8>, RemoteError> {
    let p = payload(msg)?;
    let mut frame = Vec::with_capacity(HEADER_LEN + p.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.type_code());
    frame.extend_from_slice(&(p.len() as u32).to_be_bytes());
    frame.extend_from_slice(&p);
    Ok(frame)
}

/// Validates a frame header and returns `(type, payload length)`.
fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(u8, usize), RemoteError> {
    let magic: [u8; 4] = h[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(RemoteError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(RemoteError::UnsupportedVersion(h[4]));
    }
    let len = u32::from_be_bytes(h[6..10].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(RemoteError::LengthOverflow(len as u64));
    }
    Ok((h[5], len))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RemoteError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(RemoteError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, RemoteError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, RemoteError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, RemoteError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, RemoteError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| RemoteError::Malformed(e.to_string()))
    }
}

fn decode_payload(kind: u8, p: &[u8]) -> Result<ProtocolMessage, RemoteError> {
    let mut c = Cursor { buf: p, pos: 0 };
    let msg = match kind {
        TYPE_REQUEST => ProtocolMessage::TestRequest {
            dut_id: c.str()?,
            seed: c.u32()?,
            pattern_count: c.u32()?,
            digest_bits: c.u16()?,
        },
        TYPE_RESPONSE => {
            let n = c.u16()? as usize;
            ProtocolMessage::TestResponse {
                signature: c.take(n)?.to_vec(),
            }
        }
        TYPE_DIAG => {
            let verdict = Verdict::from_u8(c.u8()?)?;
            let n = c.u16()?;
            let fault_ids = (0..n).map(|_| c.str()).collect::<Result<_, _>>()?;
            ProtocolMessage::DiagResult { verdict, fault_ids }
        }
        TYPE_ERROR => ProtocolMessage::Error {
            code: c.u16()?,
            detail: c.str()?,
        },
        other => return Err(RemoteError::UnknownType(other)),
    };
    if c.pos != p.len() {
        return Err(RemoteError::Malformed(format!(
            "{} trailing bytes",
            p.len() - c.pos
        )));
    }
    Ok(msg)
}

/// Decodes exactly one frame.
pub fn decode(frame: &[u8]) -> Result<ProtocolMessage, RemoteError> {
    let header: &[u8; HEADER_LEN] = frame
        .get(..HEADER_LEN)
        .ok_or(RemoteError::Truncated)?
        .try_into()
        .unwrap();
    let (kind, len) = parse_header(header)?;
    let body = &frame[HEADER_LEN..];
    if body.len() < len {
        return Err(RemoteError::Truncated);
    }
    if body.len() > len {
        return Err(RemoteError::Malformed(format!(
            "{} bytes after frame",
            body.len() - len
        )));
    }
    decode_payload(kind, body)
}

fn map_read_err(e: io::Error) -> RemoteError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => RemoteError::Timeout,
        io::ErrorKind::UnexpectedEof => RemoteError::Truncated,
        _ => RemoteError::Io(e),
    }
}

/// Reads one frame. A clean end of stream before the header is `Closed`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<ProtocolMessage, RemoteError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(RemoteError::Closed),
            Ok(0) => return Err(RemoteError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(map_read_err(e)),
        }
    }
    let (kind, len) = parse_header(&header)?;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(map_read_err)?;
    decode_payload(kind, &body)
}

pub fn write_frame<W: Write>(w: &mut W, msg: &ProtocolMessage) -> Result<(), RemoteError> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Stream wrapper that keeps a copy of every byte read and written.
#[derive(Debug)]
pub struct RecordingStream<S> {
    inner: S,
    transcript: Arc<Mutex<Vec<u8>>>,
}

impl<S> RecordingStream<S> {
    pub fn new(inner: S) -> Self {
        RecordingStream {
            inner,
            transcript: Arc::default(),
        }
    }

    /// Shared handle to the captured bytes.
    pub fn transcript(&self) -> Arc<Mutex<Vec<u8>>> {
        Arc::clone(&self.transcript)
    }
}

impl<S: Read> Read for RecordingStream<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.transcript.lock().unwrap().extend_from_slice(&buf[..n]);
        Ok(n)
    }
}

impl<S: Write> Write for RecordingStream<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.transcript.lock().unwrap().extend_from_slice(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub key: DictionaryKey,
    pub diagnosis: Diagnosis,
    pub signature: Signature,
}

#[derive(Debug, Clone)]
pub struct TesterConfig {
    pub response_timeout: Duration,
    /// Explicit seed schedule; `None` cycles through the dictionary sessions.
    pub seeds: Option<Vec<u32>>,
}

impl Default for TesterConfig {
    fn default() -> Self {
        TesterConfig {
            response_timeout: DEFAULT_TIMEOUT,
            seeds: None,
        }
    }
}

/// The trusted remote tester. Sessions share only the immutable dictionary
/// and the seed cursor.
#[derive(Debug)]
pub struct Tester {
    dict: FaultDictionary,
    schedule: Vec<DictionaryKey>,
    cursor: AtomicUsize,
    timeout: Duration,
    records: Mutex<Vec<SessionRecord>>,
}

impl Tester {
    pub fn new(dict: FaultDictionary, cfg: TesterConfig) -> Result<Self, RemoteError> {
        let schedule: Vec<DictionaryKey> = match &cfg.seeds {
            None => dict.sessions().to_vec(),
            Some(seeds) => seeds
                .iter()
                .map(|&s| {
                    dict.session_for_seed(s).cloned().ok_or_else(|| {
                        RemoteError::Config(format!("seed {s:#010x} is not in the dictionary"))
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        if schedule.is_empty() {
            return Err(RemoteError::Config("no sessions to schedule".into()));
        }
        if let Some(k) = schedule.iter().find(|k| k.digest_bits > u16::MAX as u32) {
            return Err(RemoteError::Config(format!(
                "digest length {} does not fit the wire format",
                k.digest_bits
            )));
        }
        Ok(Tester {
            dict,
            schedule,
            cursor: AtomicUsize::new(0),
            timeout: cfg.response_timeout,
            records: Mutex::default(),
        })
    }

    pub fn dictionary(&self) -> &FaultDictionary {
        &self.dict
    }

    pub fn response_timeout(&self) -> Duration {
        self.timeout
    }

    /// Completed sessions so far, in completion order.
    pub fn records(&self) -> Vec<SessionRecord> {
        self.records.lock().unwrap().clone()
    }

    fn next_session(&self) -> &DictionaryKey {
        let i = self.cursor.fetch_add(1, Ordering::Relaxed);
        &self.schedule[i % self.schedule.len()]
    }

    /// Runs one protocol session on an established stream. The caller is
    /// responsible for the stream's read timeout.
    pub fn run_session<S: Read + Write>(
        &self,
        stream: &mut S,
    ) -> Result<SessionRecord, RemoteError> {
        let key = self.next_session().clone();
        write_frame(
            stream,
            &ProtocolMessage::TestRequest {
                dut_id: key.dut_id.clone(),
                seed: key.seed,
                pattern_count: key.pattern_count,
                digest_bits: key.digest_bits as u16,
            },
        )?;
        let reply = match read_frame(stream) {
            Ok(m) => m,
            Err(e @ (RemoteError::Timeout | RemoteError::Closed | RemoteError::Io(_))) => {
                return Err(e)
            }
            Err(e) => {
                let _ = write_frame(
                    stream,
                    &ProtocolMessage::error(ERR_MALFORMED, e.to_string()),
                );
                return Err(e);
            }
        };
        let signature = match reply {
            ProtocolMessage::TestResponse { signature } => Signature::new(signature),
            ProtocolMessage::Error { code, detail } => {
                return Err(RemoteError::Peer { code, detail })
            }
            _ => {
                let _ = write_frame(
                    stream,
                    &ProtocolMessage::error(ERR_UNEXPECTED, "expected TEST_RESPONSE"),
                );
                return Err(RemoteError::Unexpected("expected TEST_RESPONSE"));
            }
        };
        let diagnosis = if signature.bit_length() != key.digest_bits {
            Diagnosis::InvalidSignature
        } else {
            self.dict.lookup(&key, &signature)?
        };
        write_frame(stream, &ProtocolMessage::diag(&diagnosis))?;
        log::info!("{key}: {diagnosis:?}");
        let record = SessionRecord {
            key,
            diagnosis,
            signature,
        };
        self.records.lock().unwrap().push(record.clone());
        Ok(record)
    }

    fn serve_connection(&self, mut stream: TcpStream) {
        let peer = stream
            .peer_addr()
            .map(|a| a.to_string())
            .unwrap_or_default();
        let setup = stream
            .set_nonblocking(false)
            .and_then(|_| stream.set_read_timeout(Some(self.timeout)));
        if let Err(e) = setup {
            log::warn!("{peer}: {e}");
            return;
        }
        if let Err(e) = self.run_session(&mut stream) {
            log::warn!("{peer}: session aborted: {e}");
        }
    }

    /// Accepts connections until `shutdown` is set or `max_sessions`
    /// connections have been handled. One session per connection; sessions
    /// run concurrently.
    pub fn serve(
        &self,
        listener: &TcpListener,
        shutdown: &AtomicBool,
        max_sessions: Option<usize>,
    ) -> io::Result<()> {
        listener.set_nonblocking(true)?;
        let mut accepted = 0usize;
        std::thread::scope(|scope| {
            while !shutdown.load(Ordering::Relaxed) && max_sessions.is_none_or(|m| accepted < m) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        accepted += 1;
                        scope.spawn(move || self.serve_connection(stream));
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        })
    }
}

/// Binds `endpoint` and serves until `shutdown` is set.
pub fn tester_serve(
    dictionary: FaultDictionary,
    endpoint: impl ToSocketAddrs,
    cfg: TesterConfig,
    shutdown: &AtomicBool,
) -> Result<(), RemoteError> {
    let tester = Tester::new(dictionary, cfg)?;
    let listener = TcpListener::bind(endpoint)?;
    log::info!("tester listening on {}", listener.local_addr()?);
    tester.serve(&listener, shutdown, None)?;
    Ok(())
}

/// What the agent saw during one session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentOutcome {
    pub requests_served: usize,
    pub result: Option<(Verdict, Vec<String>)>,
}

/// Device side of a session: answers requests until a diagnosis arrives or
/// the tester hangs up. Holds no state between sessions.
pub fn agent_session<S: Read + Write>(
    soc: &SocConfig,
    stream: &mut S,
) -> Result<AgentOutcome, RemoteError> {
    let mut outcome = AgentOutcome {
        requests_served: 0,
        result: None,
    };
    loop {
        let msg = match read_frame(stream) {
            Ok(m) => m,
            Err(RemoteError::Closed) => return Ok(outcome),
            Err(e @ (RemoteError::Timeout | RemoteError::Io(_))) => return Err(e),
            Err(e) => {
                let _ = write_frame(
                    stream,
                    &ProtocolMessage::error(ERR_MALFORMED, e.to_string()),
                );
                return Err(e);
            }
        };
        match msg {
            ProtocolMessage::TestRequest {
                dut_id,
                seed,
                pattern_count,
                digest_bits,
            } => {
                let reply = if !soc.duts.contains_key(&dut_id) {
                    ProtocolMessage::error(ERR_UNKNOWN_DUT, format!("unknown DUT `{dut_id}`"))
                } else if pattern_count == 0 || pattern_count > MAX_AGENT_PATTERNS {
                    ProtocolMessage::error(
                        ERR_BAD_REQUEST,
                        format!("pattern count {pattern_count}"),
                    )
                } else {
                    match soc.sign_session(&dut_id, seed, pattern_count, digest_bits as u32) {
                        Ok(sig) => ProtocolMessage::TestResponse {
                            signature: sig.as_bytes().to_vec(),
                        },
                        Err(TestflowError::Ora(e)) => {
                            ProtocolMessage::error(ERR_BAD_REQUEST, e.to_string())
                        }
                        Err(e) => ProtocolMessage::error(ERR_INTERNAL, e.to_string()),
                    }
                };
                if matches!(reply, ProtocolMessage::TestResponse { .. }) {
                    outcome.requests_served += 1;
                }
                write_frame(stream, &reply)?;
            }
            ProtocolMessage::DiagResult { verdict, fault_ids } => {
                log::info!("diagnosis: {verdict:?} {fault_ids:?}");
                outcome.result = Some((verdict, fault_ids));
                return Ok(outcome);
            }
            ProtocolMessage::Error { code, detail } => {
                return Err(RemoteError::Peer { code, detail })
            }
            ProtocolMessage::TestResponse { .. } => {
                let _ = write_frame(
                    stream,
                    &ProtocolMessage::error(ERR_UNEXPECTED, "agent does not accept TEST_RESPONSE"),
                );
                return Err(RemoteError::Unexpected("TEST_RESPONSE sent to agent"));
            }
        }
    }
}

/// Connects to a tester and runs one session. No retry.
pub fn agent_run(
    soc: &SocConfig,
    endpoint: impl ToSocketAddrs,
) -> Result<AgentOutcome, RemoteError> {
    let mut stream = TcpStream::connect(endpoint)?;
    agent_session(soc, &mut stream)
}
