//! Command-line harness: simulate single runs, enumerate universes,
//! run verification suites, analyze traces, evaluate knowledge queries
//! and render round diagrams.
//!
//! Exit codes: 0 success (all checks pass), 1 property violation,
//! 2 usage or configuration error, 3 internal fault, 4 run budget
//! exceeded.

use std::fs;
use std::ops::ControlFlow;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use silent_choir::analysis::{
    check_ac_universe, check_rank_bounds, message_chain_exists, metrics, rank_bound_check,
    silent_choir_check, ChainQuery, SuiteReport,
};
use silent_choir::diagram;
use silent_choir::enumerate::{
    EnumError, EnumerateOptions, RunUniverse, ValueFilter, DEFAULT_BUDGET,
};
use silent_choir::kernel::{
    execute, Context, DeliveryChoice, FailureEntry, FailureSpec, IdSet, KernelError, ProcessId,
    Run, SystemParams,
};
use silent_choir::knowledge::{
    check_commit_knowledge, check_lemma_suite, check_silent_choir, knows, lemma_instance_for, Fact,
    KnowledgeError,
};
use silent_choir::protocols::{check_b1_properties, protocol_by_name, Protocol};
use silent_choir::trace::{canonical_json, read_trace, spill_file_name, write_trace};

#[derive(Parser)]
#[command(
    name = "silent-choir",
    version,
    about = "Simulator and verifier for silence-based atomic commitment under crash failures"
)]
struct Cli {
    /// Flat key=value file supplying defaults for any long flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and print its metrics line.
    Simulate(SimulateArgs),
    /// Enumerate the run universe and execute verification suites.
    Verify(VerifyArgs),
    /// Analyze a canonical trace file; results print as JSON.
    Analyze(AnalyzeArgs),
    /// Evaluate a knowledge query on one run of an enumerated universe.
    Knowledge(KnowledgeArgs),
    /// Render a trace as an ASCII round/message diagram.
    Diagram(DiagramArgs),
    /// Enumerate a universe, optionally spilling traces to a directory.
    Enumerate(EnumerateArgs),
    /// Exhaustively check the consensus subroutine's contract.
    ConsensusCheck(ConsensusCheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ContextArg {
    #[value(name = "gamma-f")]
    GammaF,
    #[value(name = "gamma-tilde-f")]
    GammaTildeF,
}

#[derive(Args)]
struct SystemArgs {
    /// stealth | d2 | d1f1 | d15 | mutant-commit0 | mutant-d2-choir
    #[arg(long)]
    protocol: String,
    /// Process count.
    #[arg(long)]
    n: u8,
    /// Crash budget.
    #[arg(long)]
    f: u8,
    /// Failure context; defaults to the protocol's native one.
    #[arg(long, value_enum)]
    context: Option<ContextArg>,
    /// Round bound; defaults to the protocol's halting bound.
    #[arg(long)]
    horizon: Option<u8>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Initial values as a bit string, one bit per process.
    #[arg(long)]
    values: String,
    /// Crash: "p:round:mask" (mask = delivery bit string over receiver
    /// ids) or, under gamma-tilde-f, "p:round:len" / "p:round:len+d".
    #[arg(long = "fail", value_name = "SPEC")]
    fails: Vec<String>,
    /// Write the canonical trace here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Ac,
    Knowledge,
    Choir,
    Lemma4,
    Lemma,
    All,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, value_enum, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Print the reports as JSON instead of lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, value_name = "FILE")]
    trace: PathBuf,
    /// Silent-choir verdict for "i learned v_j by time m": `i,j,m`.
    #[arg(long, value_name = "i,j,m")]
    choir: Option<String>,
    /// Message-chain query from (i, mi) to (j, mj): `i,mi,j,mj`.
    #[arg(long, value_name = "i,mi,j,mj")]
    chain: Option<String>,
    /// Message-count bound check for chain rank k.
    #[arg(long, value_name = "k")]
    rank: Option<u8>,
    /// Message count plus decision and halt times.
    #[arg(long)]
    metrics: bool,
}

#[derive(Args)]
struct KnowledgeArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    values: String,
    #[arg(long = "fail", value_name = "SPEC")]
    fails: Vec<String>,
    /// The knowing process.
    #[arg(long)]
    i: u8,
    /// The time of the query.
    #[arg(long)]
    m: u8,
    /// Fact grammar: all1 | val j b | faulty j | chaincorrect j |
    /// not(..) | and(..,..) | or(..,..)
    #[arg(long)]
    fact: String,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
}

#[derive(Args)]
struct DiagramArgs {
    #[arg(long, value_name = "FILE")]
    trace: PathBuf,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Restrict the universe to one initial-value vector.
    #[arg(long)]
    values: Option<String>,
    /// Cap on the number of crashes (defaults to f).
    #[arg(long)]
    max_crashes: Option<u8>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Write every run as a canonical trace into this directory.
    #[arg(long, value_name = "DIR")]
    spill: Option<PathBuf>,
}

#[derive(Args)]
struct ConsensusCheckArgs {
    #[arg(long)]
    n: u8,
    #[arg(long)]
    tolerance: u8,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    #[arg(long)]
    json: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Failure {
        let code = match e {
            KernelError::InternalFault(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<EnumError> for Failure {
    fn from(e: EnumError) -> Failure {
        match e {
            EnumError::Budget { .. } => Failure {
                code: 4,
                message: e.to_string(),
            },
            EnumError::Kernel(k) => k.into(),
        }
    }
}

impl From<KnowledgeError> for Failure {
    fn from(e: KnowledgeError) -> Failure {
        match e {
            KnowledgeError::Enum(inner) => inner.into(),
            KnowledgeError::Kernel(inner) => inner.into(),
            other => Failure::usage(other.to_string()),
        }
    }
}

impl From<silent_choir::trace::TraceError> for Failure {
    fn from(e: silent_choir::trace::TraceError) -> Failure {
        Failure::usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let args = match merged_args() {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.code);
        }
    };
    let cli = Cli::parse_from(args);
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Folds `--config FILE` key=value entries into the argument list as
/// defaults: a key already given on the command line wins.
fn merged_args() -> Result<Vec<String>, Failure> {
    let argv: Vec<String> = std::env::args().collect();
    let config = argv
        .iter()
        .position(|a| a == "--config")
        .and_then(|i| argv.get(i + 1).cloned())
        .or_else(|| {
            argv.iter()
                .find_map(|a| a.strip_prefix("--config=").map(String::from))
        });
    let mut merged = argv.clone();
    if let Some(path) = config {
        let text = fs::read_to_string(&path)
            .map_err(|e| Failure::usage(format!("cannot read config {path}: {e}")))?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("config line is not key=value: {line:?}")))?;
            let flag = format!("--{}", key.trim());
            let given = argv
                .iter()
                .any(|a| a == &flag || a.starts_with(&format!("{flag}=")));
            if !given {
                merged.push(flag);
                merged.push(value.trim().to_string());
            }
        }
    }
    Ok(merged)
}

fn dispatch(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Knowledge(args) => cmd_knowledge(args),
        Command::Diagram(args) => cmd_diagram(args),
        Command::Enumerate(args) => cmd_enumerate(args),
        Command::ConsensusCheck(args) => cmd_consensus_check(args),
    }
}

impl SystemArgs {
    fn resolve(&self) -> Result<(Box<dyn Protocol>, SystemParams), Failure> {
        let protocol = protocol_by_name(&self.protocol)
            .ok_or_else(|| Failure::usage(format!("unknown protocol {:?}", self.protocol)))?;
        let context = match self.context {
            Some(ContextArg::GammaF) => Context::GammaF,
            Some(ContextArg::GammaTildeF) => Context::GammaTildeF,
            None => protocol.default_context(),
        };
        let params = SystemParams {
            n: self.n,
            f: self.f,
            context,
            horizon: self
                .horizon
                .unwrap_or_else(|| protocol.default_horizon(self.f)),
        };
        params.validate()?;
        protocol.check_params(&params).map_err(Failure::usage)?;
        Ok((protocol, params))
    }
}

fn parse_values(text: &str, n: u8) -> Result<Vec<bool>, Failure> {
    if text.len() != n as usize || text.chars().any(|c| c != '0' && c != '1') {
        return Err(Failure::usage(format!(
            "--values must be {n} bits of 0/1, got {text:?}"
        )));
    }
    Ok(text.chars().map(|c| c == '1').collect())
}

fn parse_fails(specs: &[String], params: &SystemParams) -> Result<FailureSpec, Failure> {
    let mut entries = Vec::new();
    for spec in specs {
        let parts: Vec<&str> = spec.split(':').collect();
        let [p, round, choice] = parts.as_slice() else {
            return Err(Failure::usage(format!(
                "--fail must be p:round:spec, got {spec:?}"
            )));
        };
        let process = ProcessId(
            p.parse()
                .map_err(|_| Failure::usage(format!("bad process in {spec:?}")))?,
        );
        let crash_round = round
            .parse()
            .map_err(|_| Failure::usage(format!("bad round in {spec:?}")))?;
        let delivery = match params.context {
            Context::GammaF => {
                if choice.len() != params.n as usize || choice.chars().any(|c| c != '0' && c != '1')
                {
                    return Err(Failure::usage(format!(
                        "delivery mask in {spec:?} must be {} bits over receiver ids",
                        params.n
                    )));
                }
                let mut ids = IdSet::EMPTY;
                for (r, c) in choice.chars().enumerate() {
                    if c == '1' {
                        ids.insert(ProcessId(r as u8));
                    }
                }
                DeliveryChoice::Subset(ids)
            }
            Context::GammaTildeF => {
                let (len_text, dbc) = match choice.strip_suffix("+d") {
                    Some(rest) => (rest, true),
                    None => (*choice, false),
                };
                let len = len_text
                    .parse()
                    .map_err(|_| Failure::usage(format!("bad prefix length in {spec:?}")))?;
                DeliveryChoice::Prefix {
                    len,
                    decide_before_crash: dbc,
                }
            }
        };
        entries.push(FailureEntry {
            process,
            crash_round,
            delivery,
        });
    }
    Ok(FailureSpec::new(entries))
}

fn metrics_line(run: &Run) -> String {
    let m = metrics(&run.record);
    let decide: Vec<String> = m
        .decision_times
        .iter()
        .map(|d| d.map_or("-".into(), |d| d.time.to_string()))
        .collect();
    let halt: Vec<String> = m
        .halt_times
        .iter()
        .map(|h| h.map_or("-".into(), |h| h.to_string()))
        .collect();
    format!(
        "messages={} decide={} halt={}",
        m.messages,
        decide.join(","),
        halt.join(",")
    )
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, Failure> {
    let (protocol, params) = args.system.resolve()?;
    let values = parse_values(&args.values, params.n)?;
    let failures = parse_fails(&args.fails, &params)?;
    let run = execute(protocol.as_ref(), &values, &failures, &params)?;
    if let Some(path) = &args.out {
        write_trace(path, &run.record)?;
    }
    println!("{}", metrics_line(&run));
    Ok(ExitCode::SUCCESS)
}

fn print_report(report: &SuiteReport) {
    println!("[{}] runs={}", report.suite, report.runs_checked);
    for class in &report.classes {
        match &class.first_witness {
            None => println!("  {}: ok", class.name),
            Some(w) => println!(
                "  {}: {} violations (first: {})",
                class.name, class.violations, w
            ),
        }
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Failure> {
    let (protocol, params) = args.system.resolve()?;
    let opts = EnumerateOptions {
        budget: args.budget,
        ..Default::default()
    };
    let universe = RunUniverse::new(protocol.as_ref(), params, opts)?;

    let mut reports: Vec<SuiteReport> = Vec::new();
    let mut notes: Vec<String> = Vec::new();
    let want = |s: Suite| args.suite == s || args.suite == Suite::All;
    if want(Suite::Ac) {
        reports.push(check_ac_universe(&universe)?);
    }
    if want(Suite::Knowledge) {
        reports.push(check_commit_knowledge(&universe)?);
    }
    if want(Suite::Choir) {
        reports.push(check_silent_choir(&universe)?);
    }
    if want(Suite::Lemma4) {
        reports.push(check_rank_bounds(&universe)?);
    }
    if want(Suite::Lemma) {
        match lemma_instance_for(&args.system.protocol, params.f, params.n) {
            Some(instance) => {
                let lemma = check_lemma_suite(&universe, &instance)?;
                if let Some(gap) = &lemma.singleton_knowledge_gap {
                    notes.push(format!("singleton knowledge gap: {gap}"));
                }
                reports.push(lemma.report);
            }
            None => notes.push(format!(
                "no silent-broadcast instance declared for {}",
                args.system.protocol
            )),
        }
    }

    let violations: u64 = reports.iter().map(|r| r.total_violations()).sum();
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&reports).expect("reports serialize")
        );
    } else {
        for report in &reports {
            print_report(report);
        }
        for note in &notes {
            println!("note: {note}");
        }
        println!("total violations: {violations}");
    }
    Ok(if violations == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn parse_tuple<const K: usize>(text: &str, what: &str) -> Result<[u8; K], Failure> {
    let parts: Vec<u8> = text
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::usage(format!("bad {what} argument {text:?}")))?;
    parts
        .try_into()
        .map_err(|_| Failure::usage(format!("{what} takes {K} comma-separated numbers")))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<ExitCode, Failure> {
    let record = read_trace(&args.trace)?;
    let picked = [
        args.choir.is_some(),
        args.chain.is_some(),
        args.rank.is_some(),
        args.metrics,
    ]
    .iter()
    .filter(|&&b| b)
    .count();
    if picked != 1 {
        return Err(Failure::usage(
            "pick exactly one of --choir, --chain, --rank, --metrics",
        ));
    }
    let json = if let Some(choir) = &args.choir {
        let [i, j, m] = parse_tuple::<3>(choir, "--choir")?;
        serde_json::to_value(silent_choir_check(&record, ProcessId(i), ProcessId(j), m))
    } else if let Some(chain) = &args.chain {
        let [i, mi, j, mj] = parse_tuple::<4>(chain, "--chain")?;
        let exists = message_chain_exists(
            &record,
            &ChainQuery {
                from: (ProcessId(i), mi),
                to: (ProcessId(j), mj),
            },
        );
        serde_json::to_value(serde_json::json!({ "chain_exists": exists }))
    } else if let Some(k) = args.rank {
        serde_json::to_value(rank_bound_check(&record, k))
    } else {
        serde_json::to_value(metrics(&record))
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&json.expect("analysis serializes")).unwrap()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_knowledge(args: KnowledgeArgs) -> Result<ExitCode, Failure> {
    let (protocol, params) = args.system.resolve()?;
    let values = parse_values(&args.values, params.n)?;
    let failures = parse_fails(&args.fails, &params)?;
    let fact = Fact::parse(&args.fact).map_err(|e| Failure::usage(e.to_string()))?;
    let opts = EnumerateOptions {
        budget: args.budget,
        ..Default::default()
    };
    let universe = RunUniverse::new(protocol.as_ref(), params, opts)?;
    let run = universe
        .find(&values, &failures)?
        .ok_or_else(|| Failure::usage("the given run is not a member of the universe"))?;
    let answer = knows(&universe, &run, ProcessId(args.i), args.m, &fact)?;
    println!("{}", answer.holds);
    println!("scanned={}", answer.scanned);
    Ok(ExitCode::SUCCESS)
}

fn cmd_diagram(args: DiagramArgs) -> Result<ExitCode, Failure> {
    let record = read_trace(&args.trace)?;
    print!("{}", diagram::render(&record));
    Ok(ExitCode::SUCCESS)
}

fn cmd_enumerate(args: EnumerateArgs) -> Result<ExitCode, Failure> {
    let (protocol, params) = args.system.resolve()?;
    let value_filter: Option<ValueFilter> = match &args.values {
        None => None,
        Some(text) => {
            let wanted = parse_values(text, params.n)?;
            Some(Box::new(move |v: &[bool]| v == wanted))
        }
    };
    let opts = EnumerateOptions {
        budget: args.budget,
        max_crashes: args.max_crashes,
        value_filter,
    };
    let universe = RunUniverse::new(protocol.as_ref(), params, opts)?;
    if let Some(dir) = &args.spill {
        fs::create_dir_all(dir).map_err(|e| Failure::usage(e.to_string()))?;
        let mut failure: Option<Failure> = None;
        let summary = universe.for_each(&mut |run| {
            let path = dir.join(spill_file_name(&run.record));
            match fs::write(&path, canonical_json(&run.record)) {
                Ok(()) => ControlFlow::Continue(()),
                Err(e) => {
                    failure = Some(Failure::usage(format!(
                        "cannot write {}: {e}",
                        path.display()
                    )));
                    ControlFlow::Break(())
                }
            }
        })?;
        if let Some(f) = failure {
            return Err(f);
        }
        println!("runs={}", summary.runs);
    } else {
        println!("runs={}", universe.cardinality()?);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_consensus_check(args: ConsensusCheckArgs) -> Result<ExitCode, Failure> {
    let report = check_b1_properties(args.n, args.tolerance, args.budget)?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        print_report(&report);
    }
    Ok(if report.clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
