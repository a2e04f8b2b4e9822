use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use kbist::dictionary::{
    build_fault_dictionary, build_golden_dictionary, load_dictionary, save_dictionary, BuildConfig,
    Diagnosis,
};
use kbist::faultsim::{fault_coverage, parse_patterns};
use kbist::ora::{
    aliasing_analysis, reports_to_csv, reports_to_table, SignatureScheme, Signer,
    DEFAULT_DIGEST_BITS,
};
use kbist::remote::{agent_run, Tester, TesterConfig, Verdict};
use kbist::testflow::{run_onchip_test, SocConfig};
use kbist::tpg::{parse_taps, LfsrConfig};
use kbist::{DeviceKey, Netlist};

/// Dictionary seeds used when none are given.
const DEFAULT_SEEDS: [u32; 4] = [0x9E37_79B9, 0x7F4A_7C15, 0x85EB_CA6B, 0xC2B2_AE35];

#[derive(Parser)]
#[command(
    name = "kbist",
    version,
    about = "Keyed-hash BIST: simulation, signatures, dictionaries and remote testing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and levelize a .bench netlist and print a summary
    Parse {
        bench: PathBuf,
        /// Print the normalized netlist instead of the summary
        #[arg(long)]
        emit: bool,
    },
    /// Stuck-at fault coverage of a pattern set
    Coverage {
        #[arg(long)]
        bench: PathBuf,
        /// Pattern file, one 0/1 string per line
        #[arg(long, conflicts_with_all = ["patterns", "seed"])]
        patterns_file: Option<PathBuf>,
        /// Number of LFSR patterns
        #[arg(long, required_unless_present = "patterns_file")]
        patterns: Option<u32>,
        #[arg(long, value_parser = parse_seed, default_value = "0x9e3779b9")]
        seed: u32,
        #[arg(long, value_parser = parse_tap_list)]
        lfsr_taps: Option<Vec<u32>>,
        /// List undetected faults
        #[arg(long)]
        list: bool,
    },
    /// Build a golden-only dictionary
    GenGolden(BuildArgs),
    /// Build a full fault dictionary
    BuildDict {
        #[command(flatten)]
        build: BuildArgs,
        /// Store raw responses alongside signatures (debugging only)
        #[arg(long)]
        embed_responses: bool,
    },
    /// Run one on-chip test against the SoC's local dictionary
    TestOnchip {
        #[arg(long)]
        soc: PathBuf,
        #[arg(long)]
        dut: String,
        #[arg(long, value_parser = parse_seed)]
        seed: u32,
        #[arg(long)]
        inject_fault: Option<String>,
        #[command(flatten)]
        key: KeyOverride,
    },
    /// Serve remote test sessions from a dictionary
    ServeTester {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        listen: String,
        /// Explicit seed schedule, e.g. 0x9e3779b9,0x7f4a7c15
        #[arg(long, value_delimiter = ',', value_parser = parse_seed)]
        seeds: Option<Vec<u32>>,
        /// Response timeout in seconds
        #[arg(long, default_value_t = 30)]
        timeout: u64,
        /// Exit after this many sessions
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Connect to a tester and answer one session
    RunAgent {
        #[arg(long)]
        soc: PathBuf,
        #[arg(long)]
        connect: String,
        /// Fault id to inject, applied to every DUT that has such a line
        #[arg(long)]
        inject_fault: Option<String>,
        #[command(flatten)]
        key: KeyOverride,
    },
    /// Compaction and aliasing report over one or more circuits
    Analyze {
        #[arg(long, required = true)]
        bench: Vec<PathBuf>,
        /// Pattern count per circuit, or a single count for all
        #[arg(long, required = true)]
        patterns: Vec<u32>,
        #[arg(long, value_parser = parse_seed, default_value = "0x9e3779b9")]
        seed: u32,
        #[arg(long, env = "KBIST_KEY_FILE")]
        key: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DIGEST_BITS)]
        digest_bits: u32,
        #[arg(long, value_parser = parse_tap_list)]
        lfsr_taps: Option<Vec<u32>>,
        #[arg(long)]
        csv: bool,
    },
    /// Check the hash implementation and SISR aliasing formula
    Selftest,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    bench: PathBuf,
    #[arg(long, env = "KBIST_KEY_FILE")]
    key: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the bench file stem
    #[arg(long)]
    dut_id: Option<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_seed)]
    seeds: Option<Vec<u32>>,
    #[arg(long)]
    patterns: u32,
    #[arg(long, default_value_t = DEFAULT_DIGEST_BITS)]
    digest_bits: u32,
    #[arg(long, value_parser = parse_tap_list)]
    lfsr_taps: Option<Vec<u32>>,
    #[arg(long, value_parser = parse_scheme, default_value = "kmac128")]
    scheme: SignatureScheme,
}

#[derive(Args)]
struct KeyOverride {
    /// Replaces the key file named in the SoC config
    #[arg(long, env = "KBIST_KEY_FILE")]
    key: Option<PathBuf>,
}

fn parse_seed(s: &str) -> Result<u32, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u32::from_str_radix(h, 16),
        None => s.parse(),
    };
    match r {
        Ok(0) => Err("seed must be nonzero".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_tap_list(s: &str) -> Result<Vec<u32>, String> {
    let taps = parse_taps(s).map_err(|e| e.to_string())?;
    LfsrConfig::from_taps(&taps).map_err(|e| e.to_string())?;
    Ok(taps)
}

fn parse_scheme(s: &str) -> Result<SignatureScheme, String> {
    SignatureScheme::parse(s)
        .ok_or_else(|| format!("unknown scheme `{s}` (kmac128, shake128-prefix)"))
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn lfsr(taps: &Option<Vec<u32>>) -> Res<LfsrConfig> {
    Ok(match taps {
        Some(t) => LfsrConfig::from_taps(t)?,
        None => LfsrConfig::default(),
    })
}

fn signer(key: &Path, digest_bits: u32, scheme: SignatureScheme) -> Res<Signer> {
    Ok(Signer::new(DeviceKey::load(key)?, digest_bits)?.with_scheme(scheme))
}

fn build(args: &BuildArgs, golden_only: bool, embed: bool) -> Res<()> {
    let netlist = Netlist::load(&args.bench)?;
    let dut_id = args
        .dut_id
        .clone()
        .unwrap_or_else(|| netlist.name().to_string());
    let seeds = args.seeds.clone().unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    let mut cfg = BuildConfig::new(
        dut_id,
        seeds,
        args.patterns,
        signer(&args.key, args.digest_bits, args.scheme)?,
    );
    cfg.lfsr = lfsr(&args.lfsr_taps)?;
    cfg.embed_responses = embed;
    let dict = if golden_only {
        build_golden_dictionary(&netlist, &cfg)?
    } else {
        build_fault_dictionary(&netlist, &cfg)?
    };
    save_dictionary(&dict, &args.out)?;
    println!(
        "{}: {} entries over {} sessions -> {}",
        dict.dut_id(),
        dict.entries().len(),
        dict.sessions().len(),
        args.out.display()
    );
    Ok(())
}

fn load_soc(path: &Path, key: &KeyOverride, inject: Option<&str>) -> Res<SocConfig> {
    let mut soc = SocConfig::load(path, key.key.as_deref())?;
    if let Some(id) = inject {
        let targets: Vec<String> = soc
            .duts
            .iter()
            .filter(|(_, d)| kbist::Fault::parse(&d.netlist, id).is_ok())
            .map(|(k, _)| k.clone())
            .collect();
        if targets.is_empty() {
            return Err(format!("fault `{id}` matches no DUT").into());
        }
        for t in targets {
            soc.inject_fault(&t, id)?;
        }
    }
    Ok(soc)
}

fn show_diagnosis(d: &Diagnosis) -> String {
    match d {
        Diagnosis::FaultFree => "FAULT_FREE".into(),
        Diagnosis::Fault(ids) => format!("FAULT {}", ids.join(" ")),
        Diagnosis::InvalidSignature => "INVALID_SIGNATURE".into(),
    }
}

fn run(cli: Cli) -> Res<()> {
    match cli.command {
        Command::Parse { bench, emit } => {
            let n = Netlist::load(&bench)?;
            if emit {
                print!("{}", n.to_bench());
            } else {
                let depth = (0..n.gates().len())
                    .map(|g| n.gate_level(g))
                    .max()
                    .unwrap_or(0);
                println!("circuit  {}", n.name());
                println!("inputs   {}", n.input_count());
                println!("outputs  {}", n.output_count());
                println!("gates    {}", n.gates().len());
                println!("depth    {depth}");
                println!("faults   {}", kbist::faultsim::enumerate_faults(&n).len());
            }
        }
        Command::Coverage {
            bench,
            patterns_file,
            patterns,
            seed,
            lfsr_taps,
            list,
        } => {
            let n = Netlist::load(&bench)?;
            let pats = match patterns_file {
                Some(p) => parse_patterns(
                    &std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?,
                    n.input_count(),
                )?,
                None => lfsr(&lfsr_taps)?.patterns(
                    seed as u64,
                    n.input_count(),
                    patterns.unwrap_or(0) as usize,
                )?,
            };
            let r = fault_coverage(&n, &pats)?;
            println!(
                "{}: {}/{} faults detected, coverage {:.2}%",
                n.name(),
                r.detected_faults,
                r.total_faults,
                r.coverage * 100.0
            );
            if list {
                for id in &r.undetected {
                    println!("undetected {id}");
                }
            }
        }
        Command::GenGolden(args) => build(&args, true, false)?,
        Command::BuildDict {
            build: args,
            embed_responses,
        } => build(&args, false, embed_responses)?,
        Command::TestOnchip {
            soc,
            dut,
            seed,
            inject_fault,
            key,
        } => {
            let soc = load_soc(&soc, &key, inject_fault.as_deref())?;
            let v = run_onchip_test(&soc, &dut, seed)?;
            println!(
                "{} seed={:#010x} {}",
                v.dut_id,
                v.seed,
                show_diagnosis(&v.diagnosis)
            );
            println!("signature {}", v.signature);
            log::info!("test took {:?}", v.duration);
        }
        Command::ServeTester {
            dict,
            listen,
            seeds,
            timeout,
            sessions,
        } => {
            let dict = load_dictionary(&dict)?;
            let tester = Tester::new(
                dict,
                TesterConfig {
                    response_timeout: Duration::from_secs(timeout),
                    seeds,
                },
            )?;
            let listener =
                std::net::TcpListener::bind(&listen).map_err(|e| format!("{listen}: {e}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            let shutdown = AtomicBool::new(false);
            tester.serve(&listener, &shutdown, sessions)?;
            for r in tester.records() {
                println!("{} {}", r.key, show_diagnosis(&r.diagnosis));
            }
        }
        Command::RunAgent {
            soc,
            connect,
            inject_fault,
            key,
        } => {
            let soc = load_soc(&soc, &key, inject_fault.as_deref())?;
            let out = agent_run(&soc, &connect)?;
            match out.result {
                Some((Verdict::FaultFree, _)) => println!("FAULT_FREE"),
                Some((Verdict::Fault, ids)) => println!("FAULT {}", ids.join(" ")),
                Some((Verdict::Invalid, _)) => println!("INVALID_SIGNATURE"),
                None => return Err("tester closed the session without a diagnosis".into()),
            }
        }
        Command::Analyze {
            bench,
            patterns,
            seed,
            key,
            digest_bits,
            lfsr_taps,
            csv,
        } => {
            if patterns.len() != 1 && patterns.len() != bench.len() {
                return Err(UsageError(format!(
                    "--patterns given {} times for {} circuits",
                    patterns.len(),
                    bench.len()
                ))
                .into());
            }
            let signer = signer(&key, digest_bits, SignatureScheme::Kmac128)?;
            let lfsr = lfsr(&lfsr_taps)?;
            let mut reports = Vec::new();
            for (i, path) in bench.iter().enumerate() {
                let n = Netlist::load(path)?;
                let count = patterns[if patterns.len() == 1 { 0 } else { i }];
                let pats = lfsr.patterns(seed as u64, n.input_count(), count as usize)?;
                reports.push(aliasing_analysis(&n, &pats, &signer)?);
            }
            if csv {
                print!("{}", reports_to_csv(&reports));
            } else {
                print!("{}", reports_to_table(&reports));
            }
        }
        Command::Selftest => {
            let results = kbist::selftest::run_all();
            let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
            for r in &results {
                println!("{} {}", if r.passed { "ok  " } else { "FAIL" }, r.name);
            }
            if !failed.is_empty() {
                return Err(format!("{} of {} checks failed", failed.len(), results.len()).into());
            }
        }
    }
    Ok(())
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
