use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use boqc::calculus::{lazy_schedule, LazyStep};
use boqc::graphstate::{
    find_flow, linearize, random, random_linear_extension, verify_flow, Flow, GraphError, NodeId,
    OracleGraph, SlotGraph, TieBreak, TotalOrder,
};
use boqc::protocol::{
    check_correctness, output_channel, pre_protocol, run_protocol, BobTranscript, CorrectnessReport, IoMode,
    KeyCoverage, ProtocolError, PublicInfo, Randomness, RunOutput, Seeds, Variant, World,
};
use boqc::security::{blindness_report, BlindnessReport, Enumeration};
use boqc::builtin;
use clap::{Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

mod scenario;

const PASS: u8 = 0;
const OTHER: u8 = 1;
const VALIDATION: u8 = 2;
const VIOLATION: u8 = 3;
const SIZE: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn other(message: String) -> Self {
        Failure { code: OTHER, message }
    }

    pub fn validation(message: String) -> Self {
        Failure {
            code: VALIDATION,
            message,
        }
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        let code = match e {
            ProtocolError::TooManyLeaves { .. } | ProtocolError::HistoryTooLong => SIZE,
            ProtocolError::StructuralMismatch(_) => VIOLATION,
            _ => VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Failure::validation(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Boqc,
    Boqco,
}

impl From<ProtocolArg> for Variant {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Boqc => Variant::Boqc,
            ProtocolArg::Boqco => Variant::Boqco,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "boqc", version, about = "Blind oracular quantum computation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Enumerate every key assignment and branch instead of sampling.
    #[arg(long, global = true, default_value_t = false)]
    exhaustive: bool,

    /// Number of sampled runs.
    #[arg(long, global = true)]
    shots: Option<u64>,

    #[arg(long, global = true, value_enum)]
    protocol: Option<ProtocolArg>,

    /// Input/output mode: cc, cq, qc or qq.
    #[arg(long, global = true, value_parser = parse_io)]
    io: Option<IoMode>,

    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,

    /// Server behaviour: honest, constant[:bit], angle-offset,
    /// random-report[:seed], hoarding:ids.
    #[arg(long, global = true)]
    bob: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario once; with --exhaustive also check it against the pattern.
    Run { scenario: String },
    /// Compare Bob's view of the protocol with the simulator's.
    Blindness {
        scenario: String,
        /// Fix every key and pad to zero in the real protocol.
        #[arg(long, default_value_t = false)]
        no_randomness: bool,
    },
    /// Live-qubit counts of the lazy schedule.
    LazyStats {
        /// Graph file or built-in name; omit with --random.
        graph: Option<String>,
        /// Check this many random flow graphs instead.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 12)]
        max_nodes: usize,
    },
    /// Find and check a flow for a graph.
    VerifyFlow { graph: String },
    /// Join an algorithm graph with an oracle graph.
    Join { spec: String },
}

fn parse_io(s: &str) -> Result<IoMode, String> {
    s.parse()
}

fn emit<T: Serialize>(report: &T, path: Option<&PathBuf>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Failure::other(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::other(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ExactCheck {
    distribution: BTreeMap<String, f64>,
    correctness: CorrectnessReport,
    pass: bool,
}

#[derive(Serialize)]
struct RunReport<'a> {
    scenario: &'a str,
    precision: u8,
    seed: u64,
    bob: String,
    nodes: usize,
    measurement_rounds: usize,
    #[serde(flatten)]
    output: RunOutput,
    bob_view: BobTranscript,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<ExactCheck>,
}

fn bits_key(bits: u64, nodes: &[NodeId]) -> String {
    nodes
        .iter()
        .enumerate()
        .map(|(j, _)| if bits >> j & 1 == 1 { '1' } else { '0' })
        .collect()
}

fn cmd_run(cli: &Cli, spec: &str) -> Result<u8, Failure> {
    let loaded = scenario::build(scenario::load_scenario(spec)?, cli.io)?;
    let file = &loaded.file;
    let variant = cli.protocol.map(Variant::from).or(file.protocol).unwrap_or(Variant::Boqc);
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let bob_name = cli.bob.clone().or(file.bob.clone()).unwrap_or_else(|| "honest".into());
    let bob = scenario::parse_bob(&bob_name).map_err(Failure::validation)?;
    let randomness = file.randomness.unwrap_or(Randomness::Uniform);
    let setup = &loaded.setup;
    let output = run_protocol(setup, variant, World::Real, bob.clone(), &Seeds::from_master(seed), randomness)?;
    let mut code = PASS;
    let exact = if cli.exhaustive || file.exhaustive == Some(true) {
        let sc = setup.scenario(variant, World::Real, bob.clone())?.with_randomness(randomness);
        let reference = setup.reference_output()?;
        let correctness = check_correctness(&sc, &reference, KeyCoverage::Exhaustive)?;
        let nodes = sc.classical_output_nodes();
        let channel = output_channel(&sc)?;
        let distribution = channel
            .blocks
            .iter()
            .map(|(&k, m)| (bits_key(k, &nodes), m.trace().re))
            .collect();
        let pass = correctness.within(1e-9);
        if !pass && bob_name == "honest" && randomness == Randomness::Uniform {
            code = VIOLATION;
        }
        Some(ExactCheck {
            distribution,
            correctness,
            pass,
        })
    } else {
        None
    };
    let report = RunReport {
        scenario: &loaded.name,
        precision: setup.public.b,
        seed,
        bob: bob.name(),
        nodes: setup.public.graph.vertex_count(),
        measurement_rounds: output.transcript.angle_messages().count(),
        bob_view: output.transcript.bob_view(),
        output,
        exact,
    };
    emit(&report, cli.report.as_ref())?;
    Ok(code)
}

#[derive(Serialize)]
struct BlindnessOutput<'a> {
    scenario: &'a str,
    #[serde(flatten)]
    report: BlindnessReport,
}

fn cmd_blindness(cli: &Cli, spec: &str, no_randomness: bool) -> Result<u8, Failure> {
    let loaded = scenario::build(scenario::load_scenario(spec)?, cli.io)?;
    let file = &loaded.file;
    let variant = cli.protocol.map(Variant::from).or(file.protocol).unwrap_or(Variant::Boqc);
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let bob_name = cli.bob.clone().or(file.bob.clone()).unwrap_or_else(|| "honest".into());
    let bob = scenario::parse_bob(&bob_name).map_err(Failure::validation)?;
    let randomness = if no_randomness {
        Randomness::Disabled
    } else {
        file.randomness.unwrap_or(Randomness::Uniform)
    };
    let enumeration = if cli.exhaustive || file.exhaustive == Some(true) {
        Enumeration::Exhaustive
    } else {
        Enumeration::Sampled {
            shots: cli.shots.or(file.shots).unwrap_or(10_000),
            seed,
        }
    };
    let report = blindness_report(&loaded.setup, variant, bob, enumeration, randomness)?;
    match &report.delta_chi_square_p {
        Some(p) => eprintln!(
            "smallest delta chi-square p-value {:.3e}: {}",
            p.values().copied().fold(1.0, f64::min),
            if report.pass { "pass" } else { "FAIL" }
        ),
        None => eprintln!(
            "classical tvd {:.3e}, quantum trace distance {:.3e}: {}",
            report.classical_tvd,
            report.quantum_trace_distance,
            if report.pass { "pass" } else { "FAIL" }
        ),
    }
    let pass = report.pass;
    emit(
        &BlindnessOutput {
            scenario: &loaded.name,
            report,
        },
        cli.report.as_ref(),
    )?;
    Ok(if pass { PASS } else { VIOLATION })
}

#[derive(Serialize)]
struct LazyStats {
    order: TotalOrder,
    steps: Vec<LazyStep>,
    peak: usize,
    bound: usize,
    holds: bool,
}

#[derive(Serialize)]
struct LazyRow {
    nodes: usize,
    outputs: usize,
    peak: usize,
    bound: usize,
    holds: bool,
}

#[derive(Serialize)]
struct LazySummary {
    graphs: Vec<LazyRow>,
    violations: usize,
}

fn lazy_stats(g: &boqc::graphstate::OpenGraph, order: TotalOrder) -> LazyStats {
    let steps = lazy_schedule(g, &order);
    let peak = steps.iter().map(|s| s.live_peak).max().unwrap_or(g.inputs().len());
    let bound = g.outputs().len() + 1;
    LazyStats {
        order,
        steps,
        peak,
        bound,
        holds: peak <= bound,
    }
}

fn cmd_lazy_stats(cli: &Cli, graph: Option<&str>, random_graphs: Option<usize>, max_nodes: usize) -> Result<u8, Failure> {
    if let Some(n) = random_graphs {
        let mut rng = StdRng::seed_from_u64(cli.seed.unwrap_or(0));
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let size = rng.gen_range(2..=max_nodes.max(2));
            let (g, f) = random::flow_graph(&mut rng, size, 2 * size);
            let order = random_linear_extension(&g, &f, &mut rng);
            let s = lazy_stats(&g, order);
            rows.push(LazyRow {
                nodes: size,
                outputs: g.outputs().len(),
                peak: s.peak,
                bound: s.bound,
                holds: s.holds,
            });
        }
        let violations = rows.iter().filter(|r| !r.holds).count();
        for r in &rows {
            eprintln!("n={:2} |O|={:2} peak={:2} bound={:2} {}", r.nodes, r.outputs, r.peak, r.bound, if r.holds { "ok" } else { "VIOLATION" });
        }
        emit(&LazySummary { graphs: rows, violations }, cli.report.as_ref())?;
        return Ok(if violations == 0 { PASS } else { VIOLATION });
    }
    let spec = graph.ok_or_else(|| Failure::validation("lazy-stats needs a graph or --random".into()))?;
    let (g, order, _) = scenario::load_graph(spec)?;
    let flow = find_flow(&g).ok_or_else(|| Failure::validation("graph has no flow".into()))?;
    let order = order.unwrap_or_else(|| linearize(&flow, TieBreak::AscendingId));
    order.check_consistent(&g, &flow)?;
    let s = lazy_stats(&g, order);
    for step in &s.steps {
        eprintln!("measure {:3}: prepared {:?}, live {} -> {}", step.node, step.prepared, step.live_peak, step.live_after);
    }
    eprintln!("peak {} bound {}: {}", s.peak, s.bound, if s.holds { "holds" } else { "VIOLATED" });
    let holds = s.holds;
    emit(&s, cli.report.as_ref())?;
    Ok(if holds { PASS } else { VIOLATION })
}

#[derive(Serialize)]
struct FlowReport {
    has_flow: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    flow: Option<Flow>,
    verified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<TotalOrder>,
    #[serde(skip_serializing_if = "Option::is_none")]
    order_consistent: Option<bool>,
}

fn cmd_verify_flow(cli: &Cli, spec: &str) -> Result<u8, Failure> {
    let (g, order, _) = scenario::load_graph(spec)?;
    let Some(flow) = find_flow(&g) else {
        emit(
            &FlowReport {
                has_flow: false,
                flow: None,
                verified: false,
                order: None,
                order_consistent: None,
            },
            cli.report.as_ref(),
        )?;
        eprintln!("graph has no flow");
        return Ok(VALIDATION);
    };
    let verified = verify_flow(&g, &flow);
    let order_consistent = order.as_ref().map(|o| o.check_consistent(&g, &flow).is_ok());
    emit(
        &FlowReport {
            has_flow: true,
            verified,
            order: order.or_else(|| Some(linearize(&flow, TieBreak::AscendingId))),
            order_consistent,
            flow: Some(flow),
        },
        cli.report.as_ref(),
    )?;
    Ok(match (verified, order_consistent) {
        (false, _) => VIOLATION,
        (_, Some(false)) => VALIDATION,
        _ => PASS,
    })
}

#[derive(Serialize, Deserialize)]
struct JoinFile {
    alice: SlotGraph,
    oscar: OracleGraph,
    connection: Vec<(NodeId, NodeId)>,
    b: u8,
}

#[derive(Serialize)]
struct JoinReport {
    public: PublicInfo,
    flow: Flow,
}

fn cmd_join(cli: &Cli, spec: &str) -> Result<u8, Failure> {
    let file = if spec == "grover2" && !std::path::Path::new(spec).exists() {
        JoinFile {
            alice: builtin::grover_alice(),
            oscar: builtin::grover_oracle(),
            connection: builtin::GROVER_CONNECTION.to_vec(),
            b: 4,
        }
    } else {
        let text = std::fs::read_to_string(spec).map_err(|e| Failure::other(format!("{spec}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{spec}: {e}")))?
    };
    let (public, flow) = pre_protocol(&file.alice, &file.oscar, &file.connection, file.b)?;
    emit(&JoinReport { public, flow }, cli.report.as_ref())?;
    Ok(PASS)
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Run { scenario } => cmd_run(cli, scenario),
        Command::Blindness {
            scenario,
            no_randomness,
        } => cmd_blindness(cli, scenario, *no_randomness),
        Command::LazyStats {
            graph,
            random,
            max_nodes,
        } => cmd_lazy_stats(cli, graph.as_deref(), *random, *max_nodes),
        Command::VerifyFlow { graph } => cmd_verify_flow(cli, graph),
        Command::Join { spec } => cmd_join(cli, spec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let code = match dispatch(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    eprintln!("elapsed {:.3}s", start.elapsed().as_secs_f64());
    ExitCode::from(code)
}
