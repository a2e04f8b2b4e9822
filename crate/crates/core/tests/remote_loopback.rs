mod common;

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::AtomicBool;
use std::thread;
use std::time::Duration;

use kbist::dictionary::{build_fault_dictionary, BuildConfig, Diagnosis, FaultDictionary};
use kbist::faultsim::simulate_batch;
use kbist::remote::{
    agent_session, encode, read_frame, write_frame, ProtocolMessage, RecordingStream, RemoteError,
    Tester, TesterConfig, Verdict, ERR_MALFORMED, ERR_UNKNOWN_DUT,
};
use kbist::testflow::SocConfig;
use kbist::tpg::LfsrConfig;

type SessionResult = Result<kbist::remote::SessionRecord, RemoteError>;

const SEEDS: [u32; 2] = [common::SEED, 0x7F4A_7C15];

fn dictionary() -> FaultDictionary {
    let cfg = BuildConfig::new("c17", SEEDS.to_vec(), 7, common::signer());
    build_fault_dictionary(&common::circuit("c17"), &cfg).unwrap()
}

fn soc() -> SocConfig {
    let mut soc = SocConfig::new(common::signer());
    soc.add_dut("c17", common::circuit("c17"));
    soc
}

fn tester(cfg: TesterConfig) -> Tester {
    Tester::new(dictionary(), cfg).unwrap()
}

/// One tester session against one agent session over TCP loopback.
fn loopback(tester: &Tester, soc: &SocConfig) -> (SessionResult, Option<(Verdict, Vec<String>)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::scope(|s| {
        let agent = s.spawn(move || {
            let mut stream = TcpStream::connect(addr).unwrap();
            agent_session(soc, &mut stream).ok().and_then(|o| o.result)
        });
        let (mut stream, _) = listener.accept().unwrap();
        stream
            .set_read_timeout(Some(Duration::from_secs(10)))
            .unwrap();
        let record = tester.run_session(&mut stream);
        drop(stream);
        (record, agent.join().unwrap())
    })
}

#[test]
fn golden_device_is_fault_free() {
    let t = tester(TesterConfig::default());
    let (rec, agent) = loopback(&t, &soc());
    assert_eq!(rec.unwrap().diagnosis, Diagnosis::FaultFree);
    assert_eq!(agent, Some((Verdict::FaultFree, vec![])));
}

#[test]
fn round_robin_over_sessions() {
    let t = tester(TesterConfig::default());
    let soc = soc();
    let seeds: Vec<u32> = (0..4)
        .map(|_| loopback(&t, &soc).0.unwrap().key.seed)
        .collect();
    assert_eq!(seeds, [SEEDS[0], SEEDS[1], SEEDS[0], SEEDS[1]]);
    assert_eq!(t.records().len(), 4);
}

#[test]
fn explicit_seed_schedule() {
    let t = tester(TesterConfig {
        seeds: Some(vec![SEEDS[1]]),
        ..TesterConfig::default()
    });
    assert_eq!(loopback(&t, &soc()).0.unwrap().key.seed, SEEDS[1]);
    assert!(Tester::new(
        dictionary(),
        TesterConfig {
            seeds: Some(vec![0x42]),
            ..TesterConfig::default()
        }
    )
    .is_err());
}

#[test]
fn every_detected_fault_is_diagnosed() {
    let dict = dictionary();
    let t = tester(TesterConfig {
        seeds: Some(vec![SEEDS[0]]),
        ..TesterConfig::default()
    });
    let key = dict.session_for_seed(SEEDS[0]).unwrap();
    let classes: Vec<&[String]> = dict
        .entries()
        .iter()
        .filter(|e| &e.key == key && !e.is_golden())
        .map(|e| e.fault_ids())
        .collect();
    assert!(!classes.is_empty());
    for class in classes {
        for id in class {
            let mut soc = soc();
            soc.inject_fault("c17", id).unwrap();
            let (rec, agent) = loopback(&t, &soc);
            assert_eq!(
                rec.unwrap().diagnosis,
                Diagnosis::Fault(class.to_vec()),
                "{id}"
            );
            assert_eq!(agent, Some((Verdict::Fault, class.to_vec())));
        }
    }
}

#[test]
fn wrong_key_gives_invalid_signature() {
    let t = tester(TesterConfig::default());
    let mut soc = soc();
    soc.signer = kbist::Signer::new(
        kbist::DeviceKey::from_hex("ffeeddccbbaa99887766554433221100").unwrap(),
        256,
    )
    .unwrap();
    let (rec, agent) = loopback(&t, &soc);
    assert_eq!(rec.unwrap().diagnosis, Diagnosis::InvalidSignature);
    assert_eq!(agent, Some((Verdict::Invalid, vec![])));
}

/// Stands in for a device that answers with arbitrary bytes.
fn scripted_agent(addr: std::net::SocketAddr, reply: ProtocolMessage) -> Option<ProtocolMessage> {
    let mut s = TcpStream::connect(addr).unwrap();
    read_frame(&mut s).unwrap();
    write_frame(&mut s, &reply).unwrap();
    read_frame(&mut s).ok()
}

fn against_script(t: &Tester, reply: ProtocolMessage) -> (SessionResult, Option<ProtocolMessage>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::scope(|s| {
        let agent = s.spawn(move || scripted_agent(addr, reply));
        let (mut stream, _) = listener.accept().unwrap();
        stream
            .set_read_timeout(Some(Duration::from_secs(10)))
            .unwrap();
        let rec = t.run_session(&mut stream);
        drop(stream);
        (rec, agent.join().unwrap())
    })
}

#[test]
fn garbage_and_short_signatures_are_invalid() {
    let t = tester(TesterConfig::default());
    for sig in [vec![0x5A; 32], vec![1, 2, 3]] {
        let (rec, diag) = against_script(&t, ProtocolMessage::TestResponse { signature: sig });
        assert_eq!(rec.unwrap().diagnosis, Diagnosis::InvalidSignature);
        assert_eq!(
            diag,
            Some(ProtocolMessage::DiagResult {
                verdict: Verdict::Invalid,
                fault_ids: vec![]
            })
        );
    }
}

#[test]
fn agent_error_aborts_session() {
    let t = tester(TesterConfig::default());
    let (rec, _) = against_script(&t, ProtocolMessage::error(ERR_UNKNOWN_DUT, "no"));
    assert!(matches!(
        rec,
        Err(RemoteError::Peer {
            code: ERR_UNKNOWN_DUT,
            ..
        })
    ));
    assert!(t.records().is_empty());
}

#[test]
fn malformed_reply_gets_error_frame() {
    let t = tester(TesterConfig::default());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (rec, answer) = thread::scope(|s| {
        let agent = s.spawn(move || {
            let mut s = TcpStream::connect(addr).unwrap();
            read_frame(&mut s).unwrap();
            s.write_all(b"XXXX\x01\x02\x00\x00\x00\x00").unwrap();
            read_frame(&mut s)
        });
        let (mut stream, _) = listener.accept().unwrap();
        let rec = t.run_session(&mut stream);
        drop(stream);
        (rec, agent.join().unwrap())
    });
    assert!(matches!(rec, Err(RemoteError::BadMagic(_))));
    assert!(matches!(
        answer,
        Ok(ProtocolMessage::Error {
            code: ERR_MALFORMED,
            ..
        })
    ));
}

#[test]
fn silent_agent_times_out() {
    let t = tester(TesterConfig::default());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let _client = TcpStream::connect(addr).unwrap();
    let (mut stream, _) = listener.accept().unwrap();
    stream
        .set_read_timeout(Some(Duration::from_millis(200)))
        .unwrap();
    assert!(matches!(
        t.run_session(&mut stream),
        Err(RemoteError::Timeout)
    ));
}

#[test]
fn agent_rejects_unknown_dut() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let soc = soc();
    thread::scope(|s| {
        let agent =
            s.spawn(|| agent_session(&soc, &mut TcpStream::connect(addr).unwrap()).unwrap());
        let (mut t, _) = listener.accept().unwrap();
        write_frame(
            &mut t,
            &ProtocolMessage::TestRequest {
                dut_id: "c9999".into(),
                seed: 1,
                pattern_count: 7,
                digest_bits: 256,
            },
        )
        .unwrap();
        let reply = read_frame(&mut t).unwrap();
        assert!(matches!(
            reply,
            ProtocolMessage::Error {
                code: ERR_UNKNOWN_DUT,
                ..
            }
        ));
        drop(t);
        let out = agent.join().unwrap();
        assert_eq!(out.requests_served, 0);
        assert_eq!(out.result, None);
    });
}

#[test]
fn agent_answers_each_request_once() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let soc = soc();
    thread::scope(|s| {
        let agent =
            s.spawn(|| agent_session(&soc, &mut TcpStream::connect(addr).unwrap()).unwrap());
        let (mut t, _) = listener.accept().unwrap();
        for d in [256u16, 128] {
            let req = ProtocolMessage::TestRequest {
                dut_id: "c17".into(),
                seed: common::SEED,
                pattern_count: 7,
                digest_bits: d,
            };
            write_frame(&mut t, &req).unwrap();
            match read_frame(&mut t).unwrap() {
                ProtocolMessage::TestResponse { signature } => {
                    assert_eq!(signature.len() * 8, d as usize)
                }
                other => panic!("{other:?}"),
            }
        }
        drop(t);
        assert_eq!(agent.join().unwrap().requests_served, 2);
    });
}

#[test]
fn agent_survives_tester_restart() {
    // A tester that vanishes mid-session must not poison the next session.
    let soc = soc();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::scope(|s| {
        let agent = s.spawn(|| agent_session(&soc, &mut TcpStream::connect(addr).unwrap()));
        let (mut t, _) = listener.accept().unwrap();
        let half = encode(&ProtocolMessage::TestRequest {
            dut_id: "c17".into(),
            seed: 1,
            pattern_count: 7,
            digest_bits: 256,
        })
        .unwrap();
        t.write_all(&half[..8]).unwrap();
        drop(t);
        assert!(agent.join().unwrap().is_err());
    });
    let t = tester(TesterConfig::default());
    assert_eq!(
        loopback(&t, &soc).0.unwrap().diagnosis,
        Diagnosis::FaultFree
    );
}

#[test]
fn serve_handles_concurrent_sessions() {
    let t = tester(TesterConfig::default());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let shutdown = AtomicBool::new(false);
    let soc = soc();
    thread::scope(|s| {
        let server = s.spawn(|| t.serve(&listener, &shutdown, Some(6)));
        let agents: Vec<_> = (0..6)
            .map(|_| s.spawn(|| kbist::remote::agent_run(&soc, addr).unwrap()))
            .collect();
        for a in agents {
            assert_eq!(a.join().unwrap().result, Some((Verdict::FaultFree, vec![])));
        }
        server.join().unwrap().unwrap();
    });
    assert_eq!(t.records().len(), 6);
}

#[test]
fn serve_stops_on_shutdown_flag() {
    let t = tester(TesterConfig::default());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let shutdown = AtomicBool::new(false);
    thread::scope(|s| {
        let server = s.spawn(|| t.serve(&listener, &shutdown, None));
        thread::sleep(Duration::from_millis(50));
        shutdown.store(true, std::sync::atomic::Ordering::Relaxed);
        server.join().unwrap().unwrap();
    });
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

#[test]
fn transcript_carries_no_key_or_response() {
    let soc = {
        let mut s = soc();
        s.inject_fault("c17", "N22@sa1").unwrap();
        s
    };
    let t = tester(TesterConfig::default());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let transcript = thread::scope(|s| {
        let agent = s.spawn(|| {
            let mut stream = RecordingStream::new(TcpStream::connect(addr).unwrap());
            let log = stream.transcript();
            agent_session(&soc, &mut stream).unwrap();
            log
        });
        let (mut stream, _) = listener.accept().unwrap();
        t.run_session(&mut stream).unwrap();
        drop(stream);
        agent.join().unwrap()
    });
    let bytes = transcript.lock().unwrap().clone();
    assert!(bytes.len() > 2 * kbist::remote::HEADER_LEN);

    let key = common::key();
    assert!(!contains(&bytes, key.expose()));
    assert!(!contains(&bytes, common::KEY_HEX.as_bytes()));
    let c17 = common::circuit("c17");
    let pats = LfsrConfig::default()
        .patterns(common::SEED as u64, 5, 7)
        .unwrap();
    let golden = simulate_batch(&c17, &pats).unwrap();
    let faulty = kbist::faultsim::simulate_faulty(
        &c17,
        &kbist::Fault::parse(&c17, "N22@sa1").unwrap(),
        &pats,
    )
    .unwrap();
    for r in [&golden, &faulty] {
        // the packed response is only two bytes; scan for the bit string too
        assert!(!contains(&bytes, r.to_bit_string().as_bytes()));
    }
    let mut cursor = &bytes[..];
    let mut frames = Vec::new();
    while !cursor.is_empty() {
        frames.push(read_frame(&mut cursor).unwrap());
    }
    assert_eq!(frames.len(), 3);
    assert!(matches!(frames[0], ProtocolMessage::TestRequest { .. }));
    assert!(matches!(frames[1], ProtocolMessage::TestResponse { .. }));
    assert!(matches!(frames[2], ProtocolMessage::DiagResult { .. }));
}

#[test]
fn recording_stream_is_transparent() {
    let mut r = RecordingStream::new(&b"abc"[..]);
    let mut buf = String::new();
    r.read_to_string(&mut buf).unwrap();
    assert_eq!(buf, "abc");
    assert_eq!(*r.transcript().lock().unwrap(), b"abc");
}
