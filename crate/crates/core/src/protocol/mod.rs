//! The three-party protocols. Alice (algorithm) and Oscar (oracle) share keys
//! up front and then talk only to Bob, who holds and measures the graph state.
//! BOQC prepares everything before entangling; BOQCo follows the lazy schedule.

mod bob;
mod engine;
mod transcript;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bob::*;
pub use engine::*;
pub use transcript::*;

use crate::angles::{AngleError, DyadicAngle};
use crate::calculus::{build_standard_pattern_ordered, cq_channel, Angles, CalculusError, Command};
use crate::graphstate::{
    join_graphs, linearize, verify_flow, Flow, GraphError, GraphFile, NodeId, NodeSet, OpenGraph, OracleGraph,
    SlotGraph, TieBreak, TotalOrder,
};
use crate::qsim::{CqState, DensityMatrix, QsimError, QuantumRegister, QubitId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error(transparent)]
    Angle(#[from] AngleError),
    #[error("the client's flow does not verify on the public graph")]
    InvalidFlow,
    #[error("io mode {mode} is not available: {reason}")]
    IoMode { mode: IoMode, reason: String },
    #[error("node {0} is both an input and a quantum output")]
    InputIsQuantumOutput(NodeId),
    #[error("no measurement angle for node {0}")]
    MissingAngle(NodeId),
    #[error("angle given for node {0}, which the client does not own")]
    ForeignAngle(NodeId),
    #[error("angle for node {node} has precision {found}, expected {expected}")]
    PrecisionMismatch { node: NodeId, expected: u8, found: u8 },
    #[error("classical input for node {0}, which is not a classical input of the algorithm client")]
    BadClassicalInput(NodeId),
    #[error("quantum input register: {0}")]
    QuantumInput(String),
    #[error("the lazy protocol needs a public total order")]
    MissingTotalOrder,
    #[error("{actor:?} acted on {qubit:?} held by {holder:?}")]
    Ownership {
        qubit: QubitId,
        holder: Option<Party>,
        actor: Party,
    },
    #[error("choose called with no pending choice")]
    NoPendingChoice,
    #[error("exhaustive enumeration needs about {estimate:.3e} leaves, above the cap of {cap:.3e}")]
    TooManyLeaves { estimate: f64, cap: f64 },
    #[error("packed history exceeds 128 bits")]
    HistoryTooLong,
    #[error("views are not comparable: {0}")]
    StructuralMismatch(String),
}

/// Input/output type: first letter input, second output; `q` means quantum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoMode {
    Cc,
    Cq,
    Qc,
    Qq,
}

impl IoMode {
    pub const ALL: [IoMode; 4] = [IoMode::Cc, IoMode::Cq, IoMode::Qc, IoMode::Qq];

    pub fn quantum_input(self) -> bool {
        matches!(self, IoMode::Qc | IoMode::Qq)
    }

    pub fn quantum_output(self) -> bool {
        matches!(self, IoMode::Cq | IoMode::Qq)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IoMode::Cc => "cc",
            IoMode::Cq => "cq",
            IoMode::Qc => "qc",
            IoMode::Qq => "qq",
        }
    }
}

impl fmt::Display for IoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IoMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IoMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown io mode {s:?}, expected one of cc, cq, qc, qq"))
    }
}

/// What Bob is told before the protocol starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicInfo {
    /// Carries `(G, Ĩ, Õ)`, `V_A` and `V_O`.
    pub graph: OpenGraph,
    /// The partial order as measurement layers.
    pub layers: Vec<NodeSet>,
    pub order: Option<TotalOrder>,
    pub b: u8,
}

#[derive(Serialize, Deserialize)]
struct PublicJson {
    graph: GraphFile,
    layers: Vec<NodeSet>,
}

impl Serialize for PublicInfo {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PublicJson {
            graph: GraphFile::from_graph(&self.graph, self.order.as_ref(), self.b),
            layers: self.layers.clone(),
        }
        .serialize(s)
    }
}

impl PublicInfo {
    pub fn new(graph: OpenGraph, flow: &Flow, order: Option<TotalOrder>, b: u8) -> Result<Self, ProtocolError> {
        DyadicAngle::zero(b)?;
        if !verify_flow(&graph, flow) {
            return Err(ProtocolError::InvalidFlow);
        }
        if let Some(o) = &order {
            o.check_consistent(&graph, flow)?;
        }
        Ok(PublicInfo {
            graph,
            layers: flow.layers.clone(),
            order,
            b,
        })
    }

    /// Layers flattened with ascending ids inside each layer.
    pub fn default_order(&self) -> TotalOrder {
        TotalOrder::new(self.layers.iter().flat_map(|l| l.iter().copied()).collect())
    }

    pub fn order_or_default(&self) -> TotalOrder {
        self.order.clone().unwrap_or_else(|| self.default_order())
    }

    pub fn io_mode(&self) -> IoMode {
        match (
            self.graph.quantum_inputs().is_empty(),
            self.graph.quantum_outputs().is_empty(),
        ) {
            (true, true) => IoMode::Cc,
            (true, false) => IoMode::Cq,
            (false, true) => IoMode::Qc,
            (false, false) => IoMode::Qq,
        }
    }

    /// Marks all inputs (outputs) quantum when the mode asks for it.
    pub fn with_io_mode(&self, mode: IoMode) -> Result<Self, ProtocolError> {
        let g = &self.graph;
        let unavailable = |reason: String| ProtocolError::IoMode { mode, reason };
        let qi: NodeSet = if mode.quantum_input() { g.inputs().clone() } else { NodeSet::new() };
        let qo: NodeSet = if mode.quantum_output() { g.outputs().clone() } else { NodeSet::new() };
        if let Some(v) = qi.intersection(g.oscar_nodes()).next() {
            return Err(unavailable(format!("input {v} belongs to the oracle client")));
        }
        if let Some(v) = qo.intersection(g.oscar_nodes()).next() {
            return Err(unavailable(format!("output {v} belongs to the oracle client")));
        }
        if let Some(&v) = qo.intersection(g.inputs()).next() {
            return Err(ProtocolError::InputIsQuantumOutput(v));
        }
        let mut out = self.clone();
        out.graph = g.clone().with_quantum_io(qi, qo)?;
        Ok(out)
    }
}

/// Joins the two clients' graphs, finds the flow and fixes the public order.
pub fn pre_protocol(
    alice: &SlotGraph,
    oscar: &OracleGraph,
    connection: &[(NodeId, NodeId)],
    b: u8,
) -> Result<(PublicInfo, Flow), ProtocolError> {
    let (g, flow) = join_graphs(alice, oscar, connection)?;
    let order = linearize(&flow, TieBreak::AscendingId);
    let public = PublicInfo::new(g, &flow, Some(order), b)?;
    Ok((public, flow))
}

/// Alice's private inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AliceInput {
    pub flow: Flow,
    /// Angles on her nodes; unmeasured defaults to `0` for classical outputs.
    pub phi: Angles,
    /// Bits `c_i` for her classical inputs; missing bits are `0`.
    pub classical: BTreeMap<NodeId, u8>,
    /// `Node(i)` for every `i ∈ Ĩ`, plus optional reference qubits.
    pub quantum: Option<QuantumRegister>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OscarInput {
    pub psi: Angles,
}

/// A validated protocol instance, independent of variant and world.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSetup {
    pub public: PublicInfo,
    pub alice: AliceInput,
    pub oscar: OscarInput,
}

impl ProtocolSetup {
    pub fn new(public: PublicInfo, alice: AliceInput, oscar: OscarInput) -> Result<Self, ProtocolError> {
        let g = &public.graph;
        let b = public.b;
        if !verify_flow(g, &alice.flow) {
            return Err(ProtocolError::InvalidFlow);
        }
        if let Some(o) = &public.order {
            o.check_consistent(g, &alice.flow)?;
        }
        for (angles, owned) in [(&alice.phi, g.alice_nodes()), (&oscar.psi, g.oscar_nodes())] {
            for (&v, a) in angles {
                if !owned.contains(&v) {
                    return Err(ProtocolError::ForeignAngle(v));
                }
                if a.b() != b {
                    return Err(ProtocolError::PrecisionMismatch {
                        node: v,
                        expected: b,
                        found: a.b(),
                    });
                }
            }
        }
        for v in g.non_outputs() {
            if !alice.phi.contains_key(&v) && !oscar.psi.contains_key(&v) {
                return Err(ProtocolError::MissingAngle(v));
            }
        }
        if let Some(&v) = g.inputs().intersection(g.quantum_outputs()).next() {
            return Err(ProtocolError::InputIsQuantumOutput(v));
        }
        for (&v, &c) in &alice.classical {
            let ok = g.is_input(v) && g.alice_nodes().contains(&v) && !g.quantum_inputs().contains(&v);
            if !ok || c > 1 {
                return Err(ProtocolError::BadClassicalInput(v));
            }
        }
        match &alice.quantum {
            None if !g.quantum_inputs().is_empty() => {
                return Err(ProtocolError::QuantumInput("missing for quantum inputs".into()));
            }
            None => {}
            Some(_) if g.quantum_inputs().is_empty() => {
                return Err(ProtocolError::QuantumInput("given but the graph has no quantum inputs".into()));
            }
            Some(reg) => {
                let nodes: NodeSet = reg
                    .labels()
                    .iter()
                    .filter_map(|l| match l {
                        QubitId::Node(v) => Some(*v),
                        _ => None,
                    })
                    .collect();
                if &nodes != g.quantum_inputs() {
                    return Err(ProtocolError::QuantumInput(format!(
                        "holds nodes {nodes:?}, expected {:?}",
                        g.quantum_inputs()
                    )));
                }
                if reg.labels().iter().any(|l| !matches!(l, QubitId::Node(_) | QubitId::Reference(_))) {
                    return Err(ProtocolError::QuantumInput("only node and reference qubits allowed".into()));
                }
            }
        }
        Ok(ProtocolSetup { public, alice, oscar })
    }

    pub fn io_mode(&self) -> IoMode {
        self.public.io_mode()
    }

    /// Every angle of the computation, `0` on unset outputs.
    pub fn angles(&self) -> Result<Angles, ProtocolError> {
        let zero = DyadicAngle::zero(self.public.b)?;
        Ok(self
            .public
            .graph
            .vertices()
            .map(|v| {
                let a = self.alice.phi.get(&v).or_else(|| self.oscar.psi.get(&v)).copied().unwrap_or(zero);
                (v, a)
            })
            .collect())
    }

    pub fn classical_output_nodes(&self) -> Vec<NodeId> {
        let g = &self.public.graph;
        g.outputs().difference(g.quantum_outputs()).copied().collect()
    }

    /// Labels of Alice's quantum output: `Õ` ascending, then references.
    pub fn output_labels(&self) -> Vec<QubitId> {
        let mut labels: Vec<QubitId> = self.public.graph.quantum_outputs().iter().map(|&o| QubitId::Node(o)).collect();
        if let Some(reg) = &self.alice.quantum {
            let mut refs: Vec<QubitId> = reg.labels().iter().copied().filter(|l| !matches!(l, QubitId::Node(_))).collect();
            refs.sort();
            labels.extend(refs);
        }
        labels
    }

    /// The input as a plain pattern sees it: quantum inputs as given,
    /// classical bits as `|+_{cπ}⟩`, the oracle client's inputs as `|+⟩`.
    pub fn pattern_input(&self) -> Result<QuantumRegister, ProtocolError> {
        let g = &self.public.graph;
        let mut reg = self.alice.quantum.clone().unwrap_or_default();
        let zero = DyadicAngle::zero(self.public.b)?;
        for &v in g.inputs() {
            if !g.quantum_inputs().contains(&v) {
                let c = self.alice.classical.get(&v).copied().unwrap_or(0);
                reg.alloc_plus(QubitId::Node(v), zero.add_pi(c))?;
            }
        }
        Ok(reg)
    }

    /// Alice's output as produced by the flow pattern with explicit
    /// corrections, classical outputs measured at their angles.
    pub fn reference_output(&self) -> Result<CqState<u64>, ProtocolError> {
        let g = &self.public.graph;
        let theta = self.angles()?;
        let order = self.public.order_or_default();
        let mut p = build_standard_pattern_ordered(g, &self.alice.flow, &order, &theta)?;
        let classical = self.classical_output_nodes();
        for &o in &classical {
            p.commands.push(Command::Measure {
                node: o,
                angle: theta[&o],
                x_signals: NodeSet::new(),
                z_signals: NodeSet::new(),
            });
        }
        p.outputs = g.quantum_outputs().clone();
        Ok(cq_channel(&p, self.pattern_input()?, &classical, &self.output_labels())?)
    }

    pub fn scenario(&self, variant: Variant, world: World, bob: Arc<dyn BobStrategy>) -> Result<Scenario, ProtocolError> {
        Scenario::new(self, variant, world, bob)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub variant: Variant,
    pub world: World,
    pub io_mode: IoMode,
    /// Alice's decoded bits on `O ∖ Õ`.
    pub classical: BTreeMap<NodeId, u8>,
    /// Alice's quantum output on `Õ` and references.
    pub quantum: Option<DensityMatrix>,
    pub probability: f64,
    pub live_peak: usize,
    pub capabilities: BTreeMap<Party, Vec<Capability>>,
    pub transcript: Transcript,
}

pub fn run_protocol(
    setup: &ProtocolSetup,
    variant: Variant,
    world: World,
    bob: Arc<dyn BobStrategy>,
    seeds: &Seeds,
    randomness: Randomness,
) -> Result<RunOutput, ProtocolError> {
    let sc = setup
        .scenario(variant, world, bob)?
        .with_randomness(randomness)
        .with_transcript(true);
    let mut st = run_sampled(&sc, seeds)?;
    let quantum = st.alice_state(&sc)?;
    let capabilities = [Party::Alice, Party::Oscar, Party::Bob]
        .into_iter()
        .map(|p| (p, st.capabilities(p)))
        .collect();
    Ok(RunOutput {
        variant,
        world,
        io_mode: setup.io_mode(),
        classical: st.alice_classical(&sc),
        quantum,
        probability: st.weight(),
        live_peak: st.live_peak(),
        capabilities,
        transcript: st.take_transcript().unwrap_or_default(),
    })
}

pub fn run_boqc(setup: &ProtocolSetup, bob: Arc<dyn BobStrategy>, seeds: &Seeds) -> Result<RunOutput, ProtocolError> {
    run_protocol(setup, Variant::Boqc, World::Real, bob, seeds, Randomness::Uniform)
}

pub fn run_boqco(setup: &ProtocolSetup, bob: Arc<dyn BobStrategy>, seeds: &Seeds) -> Result<RunOutput, ProtocolError> {
    run_protocol(setup, Variant::Boqco, World::Real, bob, seeds, Randomness::Uniform)
}

/// How key and pad values are covered when checking correctness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyCoverage {
    Exhaustive,
    /// This many random key assignments, each with every outcome branch.
    Sampled { assignments: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectnessReport {
    pub leaves: u64,
    pub key_assignments: usize,
    /// Largest `1 − F` between a leaf's output and the reference block.
    pub max_infidelity: f64,
    /// Largest deviation of a conditional output probability, per key assignment.
    pub max_probability_error: f64,
}

impl CorrectnessReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_infidelity <= tol && self.max_probability_error <= tol
    }
}

/// Runs the scenario over every outcome branch and checks, separately for
/// each key assignment, that Alice's output equals `reference`.
pub fn check_correctness(
    sc: &Scenario,
    reference: &CqState<u64>,
    coverage: KeyCoverage,
) -> Result<CorrectnessReport, ProtocolError> {
    let labels = sc.alice_labels();
    let mut joint: HashMap<(u128, u64), f64> = HashMap::new();
    let mut per_key: HashMap<u128, f64> = HashMap::new();
    let mut leaves = 0u64;
    let mut max_infidelity: f64 = 0.0;
    let mut visit = |v: Visit, st: &RunState| -> Result<(), ProtocolError> {
        if v != Visit::Leaf {
            return Ok(());
        }
        leaves += 1;
        let key = st.key_assignment();
        if key.overflow {
            return Err(ProtocolError::HistoryTooLong);
        }
        let bits = st.alice_bits(sc);
        let w = st.weight();
        *joint.entry((key.bits, bits)).or_default() += w;
        *per_key.entry(key.bits).or_default() += w;
        if !labels.is_empty() && !sc.classical_only {
            let amps = st.register().state_in_order(&labels)?;
            if let Some(block) = reference.blocks.get(&bits) {
                let tr = block.trace().re;
                if tr > 1e-12 {
                    let psi = nalgebra::DVector::from_column_slice(&amps);
                    let f = (psi.adjoint() * block * &psi)[(0, 0)].re / tr;
                    max_infidelity = max_infidelity.max(1.0 - f);
                }
            }
        }
        Ok(())
    };
    let mut assignments = 1;
    match coverage {
        KeyCoverage::Exhaustive => explore_all(sc, &mut visit)?,
        KeyCoverage::Sampled { assignments: n, seed } => {
            let mut rng = StdRng::seed_from_u64(seed);
            assignments = n;
            for _ in 0..n {
                let mut table: HashMap<(ChoiceKind, NodeId), u32> = HashMap::new();
                let mut policy = |cp: &ChoicePoint| {
                    cp.kind
                        .is_key()
                        .then(|| *table.entry((cp.kind, cp.node)).or_insert_with(|| cp.options.sample(&mut rng)))
                };
                explore(sc, &mut policy, &mut visit)?;
            }
        }
    }
    let mut max_probability_error: f64 = 0.0;
    for (&key, &pk) in &per_key {
        for (&bits, block) in &reference.blocks {
            let got = joint.get(&(key, bits)).copied().unwrap_or(0.0) / pk;
            max_probability_error = max_probability_error.max((got - block.trace().re).abs());
        }
    }
    for (&(key, bits), &w) in &joint {
        if !reference.blocks.contains_key(&bits) {
            max_probability_error = max_probability_error.max(w / per_key[&key]);
        }
    }
    if coverage == KeyCoverage::Exhaustive {
        assignments = per_key.len();
    }
    Ok(CorrectnessReport {
        leaves,
        key_assignments: assignments,
        max_infidelity,
        max_probability_error,
    })
}

/// Alice's output averaged over every branch of the scenario.
pub fn output_channel(sc: &Scenario) -> Result<CqState<u64>, ProtocolError> {
    let labels = sc.alice_labels();
    let mut out = CqState::new(labels.clone());
    explore_all(sc, &mut |v, st| {
        if v == Visit::Leaf {
            let bits = st.alice_bits(sc);
            if labels.is_empty() {
                out.add_pure(bits, &[num_complex::Complex64::new(1.0, 0.0)], st.weight());
            } else {
                let rho = st.register().reduced_density(&labels)?;
                out.add_density(bits, &rho.data, st.weight());
            }
        }
        Ok(())
    })?;
    Ok(out)
}
