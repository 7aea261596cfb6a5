//! The protocol as a resumable step script. A run stops at every random or
//! quantum choice; drivers either sample the choice or fork the state and
//! follow every branch.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::bob::{BobStrategy, PackedBits};
use super::transcript::{Message, Party, Transcript};
use super::{ProtocolError, ProtocolSetup};
use crate::angles::DyadicAngle;
use crate::graphstate::{assignment_sets, NodeId, OpenGraph, TotalOrder};
use crate::qsim::{DensityMatrix, QuantumRegister, QubitId, ZERO_PROBABILITY};

/// Exhaustive exploration refuses scenarios whose tree has more leaves.
pub const MAX_EXHAUSTIVE_LEAVES: f64 = 134_217_728.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Boqc,
    Boqco,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum World {
    /// The concrete protocol.
    Real,
    /// The ideal resource with the simulator on Bob's interface.
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Randomness {
    Uniform,
    /// All keys and pads fixed to zero: plain delegated 1WQC.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Capability {
    /// Client prepares `|+_θ⟩` and sends it.
    C1,
    /// Client receives output qubits and Pauli-corrects them.
    C2,
    /// Client pads an arbitrary input state and sends it.
    C3,
    /// Server receives qubits, entangles and measures in the xy-plane.
    S1,
    /// Server prepares `|+⟩` for outputs and sends them.
    S2,
    /// Server receives arbitrary input states.
    S3,
}

impl Capability {
    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    const ALL: [Capability; 6] = [
        Capability::C1,
        Capability::C2,
        Capability::C3,
        Capability::S1,
        Capability::S2,
        Capability::S3,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChoiceKind {
    KeyT,
    KeyR,
    PadAlice,
    PadOscar,
    BobOutcome,
    SimDelta,
    IdealT,
    IdealR,
}

impl ChoiceKind {
    pub fn is_key(self) -> bool {
        matches!(self, ChoiceKind::KeyT | ChoiceKind::KeyR | ChoiceKind::PadAlice | ChoiceKind::PadOscar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Options {
    Uniform(u32),
    Born([f64; 2]),
}

impl Options {
    pub fn len(&self) -> u32 {
        match self {
            Options::Uniform(n) => *n,
            Options::Born(_) => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn probability(&self, v: u32) -> f64 {
        match self {
            Options::Uniform(n) => 1.0 / f64::from(*n),
            Options::Born(p) => p[v as usize & 1],
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> u32 {
        match self {
            Options::Uniform(n) => rng.gen_range(0..*n),
            Options::Born(p) => u32::from(rng.gen::<f64>() >= p[0]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoicePoint {
    pub kind: ChoiceKind,
    pub node: NodeId,
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Choice(ChoicePoint),
    /// Bob has just received a batch of qubits; index into the scenario's batches.
    Snapshot(usize),
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    DrawT(usize),
    DrawPad(usize),
    ClientSend(usize),
    SimSend(usize),
    IdealTeleport(usize),
    BobPrepare(usize),
    Snapshot(usize),
    Entangle(usize, usize),
    DrawR(usize),
    SendAngle(usize),
    SimDelta(usize),
    BobMeasure(usize),
    BobReport(usize),
    Decode(usize),
    IdealMeasureR(usize),
    OutputTransfer(usize),
    OutputCorrect(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pending {
    T(usize),
    Pad(usize),
    R(usize),
    Delta(usize),
    Outcome(usize, DyadicAngle),
    IdealT(usize),
    IdealR(usize, QubitId),
}

/// Per-node protocol variables of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeState {
    pub r: u8,
    pub t: u8,
    pub pad: DyadicAngle,
    /// The owner's angle after input-pad updates, before signal corrections.
    pub angle: DyadicAngle,
    pub corrected: DyadicAngle,
    pub s_alice: u8,
    pub s_oscar: u8,
    pub delta: DyadicAngle,
    pub outcome: Option<u8>,
    pub reported: [u8; 2],
    pub holder: Option<Party>,
}

/// A compiled protocol instance: one setup, variant, world and Bob.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub variant: Variant,
    pub world: World,
    pub randomness: Randomness,
    pub record: bool,
    /// Skip all amplitude work; measurement outcomes become fair coins.
    pub classical_only: bool,
    pub(crate) bob: Arc<dyn BobStrategy>,
    pub(crate) b: u8,
    pub(crate) ids: Vec<NodeId>,
    pub(crate) owner: Vec<Party>,
    pub(crate) input: Vec<bool>,
    pub(crate) qin: Vec<bool>,
    pub(crate) qout: Vec<bool>,
    pub(crate) finv: Vec<Option<usize>>,
    pub(crate) zsrc: Vec<Vec<usize>>,
    pub(crate) nbrs: Vec<Vec<usize>>,
    pub(crate) input_nbrs: Vec<Vec<usize>>,
    pub(crate) angle0: Vec<DyadicAngle>,
    pub(crate) cbit: Vec<u8>,
    pub(crate) steps: Vec<Step>,
    pub(crate) batches: Vec<Vec<usize>>,
    pub(crate) output_batches: Vec<Vec<usize>>,
    pub(crate) out_classical: Vec<usize>,
    pub(crate) out_quantum: Vec<usize>,
    pub(crate) refs: Vec<QubitId>,
    pub(crate) initial: QuantumRegister,
}

impl Scenario {
    pub fn new(
        setup: &ProtocolSetup,
        variant: Variant,
        world: World,
        bob: Arc<dyn BobStrategy>,
    ) -> Result<Self, ProtocolError> {
        let g = &setup.public.graph;
        let total = match (&setup.public.order, variant) {
            (Some(o), _) => o.clone(),
            (None, Variant::Boqc) => setup.public.default_order(),
            (None, Variant::Boqco) => return Err(ProtocolError::MissingTotalOrder),
        };
        let ids: Vec<NodeId> = g.vertices().collect();
        let idx: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let dense = |vs: &mut dyn Iterator<Item = NodeId>| -> Vec<usize> { vs.map(|v| idx[&v]).collect() };
        let fl = &setup.alice.flow;
        let finv_map = fl.inverse_map();
        let b = setup.public.b;
        let zero = DyadicAngle::zero(b)?;

        let mut sc = Scenario {
            variant,
            world,
            randomness: Randomness::Uniform,
            record: false,
            classical_only: false,
            bob,
            b,
            owner: ids
                .iter()
                .map(|v| if g.oscar_nodes().contains(v) { Party::Oscar } else { Party::Alice })
                .collect(),
            input: ids.iter().map(|&v| g.is_input(v)).collect(),
            qin: ids.iter().map(|v| g.quantum_inputs().contains(v)).collect(),
            qout: ids.iter().map(|v| g.quantum_outputs().contains(v)).collect(),
            finv: ids.iter().map(|v| finv_map.get(v).map(|u| idx[u])).collect(),
            zsrc: ids.iter().map(|&v| dense(&mut fl.z_sources(g, v).into_iter())).collect(),
            nbrs: ids.iter().map(|&v| dense(&mut g.neighbors(v).iter().copied())).collect(),
            input_nbrs: ids
                .iter()
                .map(|&v| dense(&mut g.neighbors(v).iter().copied().filter(|&u| g.is_input(u))))
                .collect(),
            angle0: ids
                .iter()
                .map(|v| {
                    setup
                        .alice
                        .phi
                        .get(v)
                        .or_else(|| setup.oscar.psi.get(v))
                        .copied()
                        .unwrap_or(zero)
                })
                .collect(),
            cbit: ids.iter().map(|v| setup.alice.classical.get(v).copied().unwrap_or(0) & 1).collect(),
            steps: Vec::new(),
            batches: Vec::new(),
            output_batches: Vec::new(),
            out_classical: Vec::new(),
            out_quantum: Vec::new(),
            refs: Vec::new(),
            initial: QuantumRegister::new(),
            ids,
        };
        sc.out_classical = (0..sc.ids.len())
            .filter(|&i| g.is_output(sc.ids[i]) && !sc.qout[i])
            .collect();
        sc.out_quantum = (0..sc.ids.len()).filter(|&i| sc.qout[i]).collect();

        if let Some(reg) = &setup.alice.quantum {
            let mut reg = reg.clone();
            let mut refs: Vec<QubitId> = reg
                .labels()
                .iter()
                .copied()
                .filter(|l| !matches!(l, QubitId::Node(_)))
                .collect();
            refs.sort();
            sc.refs = refs;
            if world == World::Ideal {
                for &v in g.quantum_inputs() {
                    reg.relabel(QubitId::Node(v), QubitId::Held(v))?;
                }
            }
            sc.initial = reg;
        }

        let order: Vec<usize> = total.iter().map(|v| idx[&v]).collect();
        sc.compile(g, &total, &order);
        Ok(sc)
    }

    fn compile(&mut self, g: &OpenGraph, total: &TotalOrder, order: &[usize]) {
        let real = self.world == World::Real;
        let mut steps = Vec::new();
        let send = |steps: &mut Vec<Step>, sc: &Scenario, k: usize| {
            if sc.qout[k] {
                steps.push(Step::BobPrepare(k));
            } else if real {
                if sc.qin[k] {
                    steps.push(Step::DrawT(k));
                }
                steps.push(Step::DrawPad(k));
                steps.push(Step::ClientSend(k));
            } else {
                steps.push(Step::SimSend(k));
                if sc.qin[k] {
                    steps.push(Step::IdealTeleport(k));
                }
            }
        };
        let round = |steps: &mut Vec<Step>, i: usize| {
            if real {
                steps.extend([Step::DrawR(i), Step::SendAngle(i), Step::BobMeasure(i), Step::BobReport(i), Step::Decode(i)]);
            } else {
                steps.extend([Step::SimDelta(i), Step::BobMeasure(i), Step::BobReport(i), Step::IdealMeasureR(i)]);
            }
        };
        match self.variant {
            Variant::Boqc => {
                let measured: Vec<usize> = order.iter().copied().filter(|&i| !self.qout[i]).collect();
                for &i in &measured {
                    send(&mut steps, self, i);
                }
                for &i in order.iter().filter(|&&i| self.qout[i]) {
                    send(&mut steps, self, i);
                }
                steps.push(Step::Snapshot(self.batches.len()));
                self.batches.push(measured.clone());
                for (a, c) in g.edges() {
                    steps.push(Step::Entangle(self.index(a), self.index(c)));
                }
                for &i in &measured {
                    round(&mut steps, i);
                }
                let outs: Vec<usize> = order.iter().copied().filter(|&i| self.qout[i]).collect();
                if !outs.is_empty() {
                    steps.push(Step::OutputTransfer(self.output_batches.len()));
                    self.output_batches.push(outs.clone());
                    steps.extend(outs.iter().map(|&o| Step::OutputCorrect(o)));
                }
            }
            Variant::Boqco => {
                let sets = assignment_sets(g, total);
                let pos: Vec<usize> = {
                    let mut p = vec![0; order.len()];
                    for (n, &i) in order.iter().enumerate() {
                        p[i] = n;
                    }
                    p
                };
                for (n, &i) in order.iter().enumerate() {
                    let mut batch: Vec<usize> = sets[&self.ids[i]].iter().map(|&v| self.index(v)).collect();
                    if n == 0 {
                        batch.extend((0..self.ids.len()).filter(|&k| self.input[k]));
                        batch.sort_unstable();
                        batch.dedup();
                    }
                    for &k in &batch {
                        send(&mut steps, self, k);
                    }
                    steps.push(Step::Snapshot(self.batches.len()));
                    self.batches.push(batch.into_iter().filter(|&k| !self.qout[k]).collect());
                    for &j in &self.nbrs[i] {
                        if pos[j] > n {
                            steps.push(Step::Entangle(i, j));
                        }
                    }
                    if self.qout[i] {
                        steps.push(Step::OutputTransfer(self.output_batches.len()));
                        self.output_batches.push(vec![i]);
                        steps.push(Step::OutputCorrect(i));
                    } else {
                        round(&mut steps, i);
                    }
                }
            }
        }
        self.steps = steps;
    }

    pub fn with_randomness(mut self, r: Randomness) -> Self {
        self.randomness = r;
        self
    }

    pub fn with_transcript(mut self, record: bool) -> Self {
        self.record = record;
        self
    }

    pub fn with_classical_only(mut self, on: bool) -> Self {
        self.classical_only = on;
        self
    }

    fn index(&self, v: NodeId) -> usize {
        self.ids.binary_search(&v).expect("node of the compiled graph")
    }

    pub fn bob(&self) -> &dyn BobStrategy {
        self.bob.as_ref()
    }

    pub fn precision(&self) -> u8 {
        self.b
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.ids
    }

    /// Node ids Bob receives in each snapshot batch (client-sent only).
    pub fn batch_nodes(&self, k: usize) -> Vec<NodeId> {
        self.batches[k].iter().map(|&i| self.ids[i]).collect()
    }

    pub fn snapshot_count(&self) -> usize {
        self.batches.len()
    }

    pub fn measured_nodes(&self) -> Vec<NodeId> {
        (0..self.ids.len()).filter(|&i| !self.qout[i]).map(|i| self.ids[i]).collect()
    }

    /// `O ∖ Õ` in ascending id: the bits of Alice's classical output key.
    pub fn classical_output_nodes(&self) -> Vec<NodeId> {
        self.out_classical.iter().map(|&i| self.ids[i]).collect()
    }

    /// Alice's quantum output labels: `Õ` ascending, then references.
    pub fn alice_labels(&self) -> Vec<QubitId> {
        self.out_quantum
            .iter()
            .map(|&i| QubitId::Node(self.ids[i]))
            .chain(self.refs.iter().copied())
            .collect()
    }

    /// Upper bound on the number of leaves of the full choice tree.
    pub fn leaf_estimate(&self) -> f64 {
        let uniform = self.randomness == Randomness::Uniform;
        let pad = f64::from(1u32 << self.b);
        self.steps
            .iter()
            .map(|s| match s {
                Step::DrawT(_) | Step::DrawR(_) if uniform => 2.0,
                Step::DrawPad(_) if uniform => pad,
                Step::SimDelta(_) => pad,
                Step::BobMeasure(_) | Step::IdealTeleport(_) | Step::IdealMeasureR(_) => 2.0,
                _ => 1.0,
            })
            .product()
    }

    /// Number of key, pad and simulator-angle assignments.
    pub fn key_space(&self) -> f64 {
        let uniform = self.randomness == Randomness::Uniform;
        let pad = f64::from(1u32 << self.b);
        self.steps
            .iter()
            .map(|s| match s {
                Step::DrawT(_) | Step::DrawR(_) if uniform => 2.0,
                Step::DrawPad(_) if uniform => pad,
                Step::SimDelta(_) => pad,
                _ => 1.0,
            })
            .product()
    }

    pub fn start(&self) -> RunState {
        let zero = DyadicAngle::zero(self.b).expect("validated precision");
        let nodes = (0..self.ids.len())
            .map(|i| NodeState {
                r: 0,
                t: 0,
                pad: zero,
                angle: self.angle0[i],
                corrected: self.angle0[i],
                s_alice: 0,
                s_oscar: 0,
                delta: zero,
                outcome: None,
                reported: [0, 0],
                holder: (self.qin[i] && self.world == World::Real).then_some(Party::Alice),
            })
            .collect();
        let live = (0..self.ids.len()).filter(|&i| self.qin[i]).count();
        RunState {
            pc: 0,
            pending: None,
            reg: if self.classical_only { QuantumRegister::new() } else { self.initial.clone() },
            weight: 1.0,
            nodes,
            view: PackedBits::default(),
            keys: PackedBits::default(),
            caps: [0; 3],
            live,
            live_peak: live,
            transcript: self.record.then(Box::default),
        }
    }
}

/// The mutable state of one run, cheap to clone at branch points.
#[derive(Debug, Clone)]
pub struct RunState {
    pc: usize,
    pending: Option<Pending>,
    reg: QuantumRegister,
    weight: f64,
    nodes: Vec<NodeState>,
    view: PackedBits,
    keys: PackedBits,
    caps: [u8; 3],
    live: usize,
    live_peak: usize,
    transcript: Option<Box<Transcript>>,
}

fn party_slot(p: Party) -> Option<usize> {
    match p {
        Party::Alice => Some(0),
        Party::Oscar => Some(1),
        Party::Bob => Some(2),
        _ => None,
    }
}

impl RunState {
    pub fn register(&self) -> &QuantumRegister {
        &self.reg
    }

    /// Probability of the path taken so far.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn view(&self) -> PackedBits {
        self.view
    }

    /// The keys and pads drawn so far, packed in drawing order.
    pub fn key_assignment(&self) -> PackedBits {
        self.keys
    }

    pub fn node_states(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn live_peak(&self) -> usize {
        self.live_peak
    }

    pub fn transcript(&self) -> Option<&Transcript> {
        self.transcript.as_deref()
    }

    pub fn take_transcript(&mut self) -> Option<Transcript> {
        self.transcript.take().map(|t| *t)
    }

    pub fn capabilities(&self, p: Party) -> Vec<Capability> {
        let mask = party_slot(p).map_or(0, |s| self.caps[s]);
        Capability::ALL.into_iter().filter(|c| mask & c.bit() != 0).collect()
    }

    /// Alice's decoded bits on `O ∖ Õ`, little-endian in ascending id.
    pub fn alice_bits(&self, sc: &Scenario) -> u64 {
        sc.out_classical
            .iter()
            .enumerate()
            .fold(0, |k, (j, &i)| k | (u64::from(self.nodes[i].s_alice) << j))
    }

    pub fn alice_classical(&self, sc: &Scenario) -> BTreeMap<NodeId, u8> {
        sc.out_classical.iter().map(|&i| (sc.ids[i], self.nodes[i].s_alice)).collect()
    }

    /// Node qubits currently in Bob's hands, ascending.
    pub fn bob_labels(&self, sc: &Scenario) -> Vec<QubitId> {
        (0..sc.ids.len())
            .filter(|&i| self.nodes[i].holder == Some(Party::Bob))
            .map(|i| QubitId::Node(sc.ids[i]))
            .collect()
    }

    pub fn alice_state(&self, sc: &Scenario) -> Result<Option<DensityMatrix>, ProtocolError> {
        let labels = sc.alice_labels();
        if labels.is_empty() || sc.classical_only {
            return Ok(None);
        }
        Ok(Some(self.reg.reduced_density(&labels)?))
    }

    fn grant(&mut self, p: Party, c: Capability) {
        if let Some(s) = party_slot(p) {
            self.caps[s] |= c.bit();
        }
    }

    fn log(&mut self, from: Party, to: Party, m: Message) {
        if let Some(t) = self.transcript.as_mut() {
            t.push(from, to, m);
        }
    }

    fn note(&mut self, s: String) {
        if let Some(t) = self.transcript.as_mut() {
            t.notes.push(s);
        }
    }

    fn angle(sc: &Scenario, k: u32) -> DyadicAngle {
        DyadicAngle::new(k, sc.b).expect("choice within range")
    }

    fn require_bob(&self, sc: &Scenario, i: usize) -> Result<(), ProtocolError> {
        match self.nodes[i].holder {
            Some(Party::Bob) => Ok(()),
            holder => Err(ProtocolError::Ownership {
                qubit: QubitId::Node(sc.ids[i]),
                holder,
                actor: Party::Bob,
            }),
        }
    }

    fn quantum(&self, sc: &Scenario) -> bool {
        !sc.classical_only
    }

    fn signal(&self, sc: &Scenario, owner: usize, j: usize) -> u8 {
        match sc.owner[owner] {
            Party::Oscar => self.nodes[j].s_oscar,
            _ => self.nodes[j].s_alice,
        }
    }

    /// `(−1)^{s_{f⁻¹(i)}} θ_i + z(i)π` with the owner's copy of the signals.
    fn corrected_angle(&self, sc: &Scenario, i: usize) -> DyadicAngle {
        let sx = sc.finv[i].map_or(0, |j| self.signal(sc, i, j));
        let sz = sc.zsrc[i].iter().fold(0, |a, &j| a ^ self.signal(sc, i, j));
        self.nodes[i].angle.correct(sx, sz)
    }

    /// Input pad `t` conjugates the node's own angle and shifts its neighbours by `tπ`.
    fn absorb_t(&mut self, sc: &Scenario, i: usize, t: u8) {
        if t & 1 == 1 {
            self.nodes[i].angle = self.nodes[i].angle.neg();
            for &j in &sc.nbrs[i] {
                self.nodes[j].angle = self.nodes[j].angle.add_pi(1);
            }
        }
    }

    fn alloc_node(&mut self, sc: &Scenario, i: usize, theta: DyadicAngle) -> Result<(), ProtocolError> {
        if self.quantum(sc) {
            self.reg.alloc_plus(QubitId::Node(sc.ids[i]), theta)?;
        }
        self.live += 1;
        self.live_peak = self.live_peak.max(self.live);
        Ok(())
    }

    fn ask(&mut self, sc: &Scenario, p: Pending) -> Result<Event, ProtocolError> {
        self.pending = Some(p);
        Ok(Event::Choice(self.choice_point(sc, p)?))
    }

    fn choice_point(&self, sc: &Scenario, p: Pending) -> Result<ChoicePoint, ProtocolError> {
        let pads = Options::Uniform(1 << sc.b);
        let born = |f: &dyn Fn() -> Result<[f64; 2], crate::qsim::QsimError>| -> Result<Options, ProtocolError> {
            if sc.classical_only {
                Ok(Options::Uniform(2))
            } else {
                Ok(Options::Born(f()?))
            }
        };
        let (kind, i, options) = match p {
            Pending::T(i) => (ChoiceKind::KeyT, i, Options::Uniform(2)),
            Pending::R(i) => (ChoiceKind::KeyR, i, Options::Uniform(2)),
            Pending::Pad(i) => {
                let kind = if sc.owner[i] == Party::Oscar { ChoiceKind::PadOscar } else { ChoiceKind::PadAlice };
                (kind, i, pads)
            }
            Pending::Delta(i) => (ChoiceKind::SimDelta, i, pads),
            Pending::Outcome(i, theta) => {
                let q = QubitId::Node(sc.ids[i]);
                (ChoiceKind::BobOutcome, i, born(&|| self.reg.branch_probabilities(q, theta))?)
            }
            Pending::IdealT(i) => {
                let q = QubitId::Partner(sc.ids[i]);
                (ChoiceKind::IdealT, i, born(&|| self.reg.z_probabilities(q))?)
            }
            Pending::IdealR(i, q) => (ChoiceKind::IdealR, i, born(&|| self.reg.z_probabilities(q))?),
        };
        Ok(ChoicePoint {
            kind,
            node: sc.ids[i],
            options,
        })
    }

    /// Runs until the next choice, snapshot or the end of the script.
    pub fn advance(&mut self, sc: &Scenario) -> Result<Event, ProtocolError> {
        if let Some(p) = self.pending {
            return Ok(Event::Choice(self.choice_point(sc, p)?));
        }
        let uniform = sc.randomness == Randomness::Uniform;
        while self.pc < sc.steps.len() {
            let step = sc.steps[self.pc];
            self.pc += 1;
            match step {
                Step::DrawT(i) => {
                    if uniform {
                        return self.ask(sc, Pending::T(i));
                    }
                }
                Step::DrawPad(i) => {
                    if uniform {
                        return self.ask(sc, Pending::Pad(i));
                    }
                }
                Step::DrawR(i) => {
                    if uniform {
                        return self.ask(sc, Pending::R(i));
                    }
                }
                Step::ClientSend(i) => self.client_send(sc, i)?,
                Step::SimSend(i) => {
                    let v = sc.ids[i];
                    if self.quantum(sc) {
                        self.reg.alloc_epr(QubitId::Partner(v), QubitId::Node(v))?;
                    }
                    self.live += 1;
                    self.live_peak = self.live_peak.max(self.live);
                    self.nodes[i].holder = Some(Party::Bob);
                    self.log(sc.owner[i], Party::Bob, Message::QubitToBob { node: v, qubit: QubitId::Node(v) });
                }
                Step::IdealTeleport(i) => {
                    let v = sc.ids[i];
                    if self.quantum(sc) {
                        self.reg.apply_cnot(QubitId::Held(v), QubitId::Partner(v))?;
                    }
                    return self.ask(sc, Pending::IdealT(i));
                }
                Step::BobPrepare(i) => {
                    self.alloc_node(sc, i, DyadicAngle::zero(sc.b)?)?;
                    self.nodes[i].holder = Some(Party::Bob);
                    self.grant(Party::Bob, Capability::S2);
                }
                Step::Snapshot(k) => return Ok(Event::Snapshot(k)),
                Step::Entangle(i, j) => {
                    self.require_bob(sc, i)?;
                    self.require_bob(sc, j)?;
                    if self.quantum(sc) {
                        self.reg.apply_cz(QubitId::Node(sc.ids[i]), QubitId::Node(sc.ids[j]))?;
                    }
                    self.grant(Party::Bob, Capability::S1);
                }
                Step::SendAngle(i) => {
                    let corrected = self.corrected_angle(sc, i);
                    let n = &mut self.nodes[i];
                    n.corrected = corrected;
                    n.delta = corrected.add_pi(n.r).add(n.pad)?;
                    let delta = n.delta;
                    self.view.push(u32::from(sc.b), u64::from(delta.k()));
                    self.log(sc.owner[i], Party::Bob, Message::AngleToBob { node: sc.ids[i], delta });
                }
                Step::SimDelta(i) => return self.ask(sc, Pending::Delta(i)),
                Step::BobMeasure(i) => {
                    self.require_bob(sc, i)?;
                    let v = sc.ids[i];
                    match sc.bob.measurement_angle(v, self.nodes[i].delta, self.view) {
                        Some(theta) => {
                            self.grant(Party::Bob, Capability::S1);
                            return self.ask(sc, Pending::Outcome(i, theta));
                        }
                        None => {
                            self.nodes[i].outcome = None;
                            self.note(format!("bob kept qubit {v} instead of measuring it"));
                        }
                    }
                }
                Step::BobReport(i) => {
                    let v = sc.ids[i];
                    let rep = sc.bob.report(v, self.nodes[i].delta, self.nodes[i].outcome, self.view);
                    let rep = [rep[0] & 1, rep[1] & 1];
                    self.nodes[i].reported = rep;
                    self.view.push(1, u64::from(rep[0]));
                    self.view.push(1, u64::from(rep[1]));
                    self.log(Party::Bob, Party::Alice, Message::OutcomeFromBob { node: v, s_tilde: rep[0] });
                    self.log(Party::Bob, Party::Oscar, Message::OutcomeFromBob { node: v, s_tilde: rep[1] });
                    if rep[0] != rep[1] {
                        self.note(format!("bob reported different bits for {v}"));
                    }
                }
                Step::Decode(i) => {
                    let n = &mut self.nodes[i];
                    n.s_alice = n.reported[0] ^ n.r;
                    n.s_oscar = n.reported[1] ^ n.r;
                }
                Step::IdealMeasureR(i) => {
                    let v = sc.ids[i];
                    let corrected = self.corrected_angle(sc, i);
                    self.nodes[i].corrected = corrected;
                    let target = if sc.qin[i] { QubitId::Held(v) } else { QubitId::Partner(v) };
                    if self.quantum(sc) {
                        let delta = self.nodes[i].delta;
                        let alpha = if sc.qin[i] && self.nodes[i].t == 1 {
                            corrected.sub(delta)?
                        } else {
                            delta.sub(corrected)?.add_pi(sc.cbit[i])
                        };
                        self.reg.apply_z_rotation(target, alpha)?;
                        self.reg.apply_h(target)?;
                    }
                    return self.ask(sc, Pending::IdealR(i, target));
                }
                Step::OutputTransfer(k) => {
                    let to = if sc.world == World::Real { Party::Alice } else { Party::Ideal };
                    let batch = &sc.output_batches[k];
                    for &o in batch {
                        self.require_bob(sc, o)?;
                        let (x, z) = sc.bob.output_tamper(sc.ids[o], self.view);
                        if (x | z) & 1 == 1 {
                            self.note(format!("bob tampered with output {}", sc.ids[o]));
                            if self.quantum(sc) {
                                self.reg.apply_correction(QubitId::Node(sc.ids[o]), x & 1, z & 1)?;
                            }
                        }
                        self.nodes[o].holder = Some(to);
                    }
                    self.grant(Party::Bob, Capability::S2);
                    let nodes: Vec<NodeId> = batch.iter().map(|&o| sc.ids[o]).collect();
                    let qubits = nodes.iter().map(|&o| QubitId::Node(o)).collect();
                    self.log(Party::Bob, Party::Alice, Message::OutputQubits { nodes, qubits });
                }
                Step::OutputCorrect(o) => {
                    let sx = sc.finv[o].map_or(0, |j| self.nodes[j].s_alice) ^ self.nodes[o].t;
                    let sz = sc.zsrc[o].iter().fold(0, |a, &j| a ^ self.nodes[j].s_alice)
                        ^ sc.input_nbrs[o].iter().fold(0, |a, &j| a ^ self.nodes[j].t);
                    if self.quantum(sc) {
                        self.reg.apply_correction(QubitId::Node(sc.ids[o]), sx, sz)?;
                    }
                    self.nodes[o].holder = Some(Party::Alice);
                    self.grant(Party::Alice, Capability::C2);
                }
            }
        }
        self.finish(sc);
        Ok(Event::Done)
    }

    fn client_send(&mut self, sc: &Scenario, i: usize) -> Result<(), ProtocolError> {
        let v = sc.ids[i];
        let owner = sc.owner[i];
        let pad = self.nodes[i].pad;
        if sc.qin[i] {
            if self.nodes[i].holder != Some(owner) {
                return Err(ProtocolError::Ownership {
                    qubit: QubitId::Node(v),
                    holder: self.nodes[i].holder,
                    actor: owner,
                });
            }
            let t = self.nodes[i].t;
            if self.quantum(sc) {
                self.reg.apply_pad(QubitId::Node(v), pad, t)?;
            }
            self.absorb_t(sc, i, t);
            self.grant(owner, Capability::C3);
            self.grant(Party::Bob, Capability::S3);
        } else {
            self.alloc_node(sc, i, pad.add_pi(sc.cbit[i]))?;
            self.grant(owner, Capability::C1);
            self.grant(Party::Bob, Capability::S1);
        }
        self.nodes[i].holder = Some(Party::Bob);
        self.log(owner, Party::Bob, Message::QubitToBob { node: v, qubit: QubitId::Node(v) });
        Ok(())
    }

    /// Resolves the pending choice with option `value`.
    pub fn choose(&mut self, sc: &Scenario, value: u32) -> Result<(), ProtocolError> {
        let p = self.pending.take().ok_or(ProtocolError::NoPendingChoice)?;
        let half = |w: &mut f64| *w *= 0.5;
        match p {
            Pending::T(i) => {
                self.nodes[i].t = (value & 1) as u8;
                half(&mut self.weight);
                self.keys.push(1, u64::from(value & 1));
            }
            Pending::R(i) => {
                self.nodes[i].r = (value & 1) as u8;
                half(&mut self.weight);
                self.keys.push(1, u64::from(value & 1));
            }
            Pending::Pad(i) => {
                self.nodes[i].pad = Self::angle(sc, value);
                self.weight /= f64::from(1u32 << sc.b);
                self.keys.push(u32::from(sc.b), u64::from(value));
            }
            Pending::Delta(i) => {
                let delta = Self::angle(sc, value);
                self.nodes[i].delta = delta;
                self.weight /= f64::from(1u32 << sc.b);
                self.view.push(u32::from(sc.b), u64::from(value));
                self.log(sc.owner[i], Party::Bob, Message::AngleToBob { node: sc.ids[i], delta });
            }
            Pending::Outcome(i, theta) => {
                let s = (value & 1) as u8;
                if self.quantum(sc) {
                    self.weight *= self.reg.project(QubitId::Node(sc.ids[i]), theta, s)?;
                } else {
                    half(&mut self.weight);
                }
                self.nodes[i].outcome = Some(s);
                self.nodes[i].holder = None;
                self.live -= 1;
            }
            Pending::IdealT(i) => {
                let t = (value & 1) as u8;
                if self.quantum(sc) {
                    self.weight *= self.reg.project_z(QubitId::Partner(sc.ids[i]), t)?;
                } else {
                    half(&mut self.weight);
                }
                self.nodes[i].t = t;
                self.absorb_t(sc, i, t);
            }
            Pending::IdealR(i, q) => {
                let r = (value & 1) as u8;
                if self.quantum(sc) {
                    self.weight *= self.reg.project_z(q, r)?;
                } else {
                    half(&mut self.weight);
                }
                let n = &mut self.nodes[i];
                n.r = r;
                n.s_alice = n.reported[0] ^ r;
                n.s_oscar = n.reported[1] ^ r;
            }
        }
        Ok(())
    }

    fn finish(&mut self, sc: &Scenario) {
        let Some(t) = self.transcript.as_mut() else { return };
        let s = &mut t.secrets;
        *s = Default::default();
        for (i, n) in self.nodes.iter().enumerate() {
            let v = sc.ids[i];
            if sc.qout[i] {
                continue;
            }
            s.r.insert(v, n.r);
            s.pads.insert(v, n.pad);
            s.corrected_angles.insert(v, n.corrected);
            s.signals_alice.insert(v, n.s_alice);
            s.signals_oscar.insert(v, n.s_oscar);
            if sc.qin[i] {
                s.t.insert(v, n.t);
            }
        }
    }
}

/// Independent seeded streams, one per kind of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Seeds {
    pub keys: u64,
    pub alice_pads: u64,
    pub oscar_pads: u64,
    pub outcomes: u64,
    pub simulator: u64,
    pub ideal: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        Seeds {
            keys: rng.gen(),
            alice_pads: rng.gen(),
            oscar_pads: rng.gen(),
            outcomes: rng.gen(),
            simulator: rng.gen(),
            ideal: rng.gen(),
        }
    }
}

struct Streams {
    keys: StdRng,
    alice: StdRng,
    oscar: StdRng,
    outcomes: StdRng,
    simulator: StdRng,
    ideal: StdRng,
}

impl Streams {
    fn new(s: &Seeds) -> Self {
        Streams {
            keys: StdRng::seed_from_u64(s.keys),
            alice: StdRng::seed_from_u64(s.alice_pads),
            oscar: StdRng::seed_from_u64(s.oscar_pads),
            outcomes: StdRng::seed_from_u64(s.outcomes),
            simulator: StdRng::seed_from_u64(s.simulator),
            ideal: StdRng::seed_from_u64(s.ideal),
        }
    }

    fn stream(&mut self, kind: ChoiceKind) -> &mut StdRng {
        match kind {
            ChoiceKind::KeyT | ChoiceKind::KeyR => &mut self.keys,
            ChoiceKind::PadAlice => &mut self.alice,
            ChoiceKind::PadOscar => &mut self.oscar,
            ChoiceKind::BobOutcome => &mut self.outcomes,
            ChoiceKind::SimDelta => &mut self.simulator,
            ChoiceKind::IdealT | ChoiceKind::IdealR => &mut self.ideal,
        }
    }
}

/// One complete run with every choice sampled from its own stream.
pub fn run_sampled(sc: &Scenario, seeds: &Seeds) -> Result<RunState, ProtocolError> {
    let mut streams = Streams::new(seeds);
    let mut st = sc.start();
    loop {
        match st.advance(sc)? {
            Event::Done => return Ok(st),
            Event::Snapshot(_) => {}
            Event::Choice(cp) => {
                let v = cp.options.sample(streams.stream(cp.kind));
                st.choose(sc, v)?;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visit {
    Snapshot(usize),
    Leaf,
}

/// Depth-first walk of the choice tree. `policy` returns `Some(v)` to take a
/// single option or `None` to follow every option of positive probability.
pub fn explore(
    sc: &Scenario,
    policy: &mut dyn FnMut(&ChoicePoint) -> Option<u32>,
    visit: &mut dyn FnMut(Visit, &RunState) -> Result<(), ProtocolError>,
) -> Result<(), ProtocolError> {
    explore_from(sc, sc.start(), policy, visit)
}

/// [`explore`] over the whole tree, refusing trees above the size cap.
pub fn explore_all(
    sc: &Scenario,
    visit: &mut dyn FnMut(Visit, &RunState) -> Result<(), ProtocolError>,
) -> Result<(), ProtocolError> {
    let estimate = sc.leaf_estimate();
    if estimate > MAX_EXHAUSTIVE_LEAVES {
        return Err(ProtocolError::TooManyLeaves {
            estimate,
            cap: MAX_EXHAUSTIVE_LEAVES,
        });
    }
    explore(sc, &mut |_| None, visit)
}

fn explore_from(
    sc: &Scenario,
    mut st: RunState,
    policy: &mut dyn FnMut(&ChoicePoint) -> Option<u32>,
    visit: &mut dyn FnMut(Visit, &RunState) -> Result<(), ProtocolError>,
) -> Result<(), ProtocolError> {
    loop {
        match st.advance(sc)? {
            Event::Done => return visit(Visit::Leaf, &st),
            Event::Snapshot(k) => visit(Visit::Snapshot(k), &st)?,
            Event::Choice(cp) => {
                if let Some(v) = policy(&cp) {
                    st.choose(sc, v)?;
                    continue;
                }
                let n = cp.options.len();
                let live = |v: u32| cp.options.probability(v) > ZERO_PROBABILITY;
                let last = (0..n).rev().find(|&v| live(v)).ok_or(ProtocolError::NoPendingChoice)?;
                for v in (0..last).filter(|&v| live(v)) {
                    let mut fork = st.clone();
                    fork.choose(sc, v)?;
                    explore_from(sc, fork, policy, visit)?;
                }
                st.choose(sc, last)?;
            }
        }
    }
}
