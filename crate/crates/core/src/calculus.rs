//! Measurement patterns: the standard flow pattern, its pre-correction form,
//! the lazy interleaving, execution, channels and the realized isometry.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angles::DyadicAngle;
use crate::graphstate::{
    assignment_sets, linearize, verify_flow, Flow, GraphError, NodeId, NodeSet, OpenGraph, TieBreak,
    TotalOrder,
};
use crate::qsim::{
    CqState, DensityMatrix, OutcomeSource, QsimError, QuantumRegister, QubitId, ZERO_PROBABILITY,
};

/// Cap on enumerated measurement branches, `2^14`.
pub const MAX_BRANCH_MEASUREMENTS: usize = 14;

/// Cap on graph size for isometry extraction.
pub const MAX_ISOMETRY_NODES: usize = 20;

pub type Angles = BTreeMap<NodeId, DyadicAngle>;

/// Measurement outcomes by node.
pub type Signals = BTreeMap<NodeId, u8>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum Command {
    Prepare {
        node: NodeId,
        angle: DyadicAngle,
    },
    Entangle {
        a: NodeId,
        b: NodeId,
    },
    Measure {
        node: NodeId,
        angle: DyadicAngle,
        x_signals: NodeSet,
        z_signals: NodeSet,
    },
    CorrectX {
        node: NodeId,
        signals: NodeSet,
    },
    CorrectZ {
        node: NodeId,
        signals: NodeSet,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub commands: Vec<Command>,
    pub inputs: NodeSet,
    pub outputs: NodeSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunnabilityError {
    #[error("command {index} depends on the outcome of {node}, which is not measured yet")]
    SignalNotMeasured { index: usize, node: NodeId },
    #[error("command {index} acts on {node}, which is unprepared or already measured")]
    Unavailable { index: usize, node: NodeId },
    #[error("command {index} prepares {node} twice")]
    DoublePrepare { index: usize, node: NodeId },
    #[error("measured nodes differ from the non-outputs")]
    MeasuredSet,
    #[error("prepared nodes differ from the non-inputs")]
    PreparedSet,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalculusError {
    #[error("no measurement angle for node {0}")]
    MissingAngle(NodeId),
    #[error("flow does not satisfy the flow conditions")]
    InvalidFlow,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("pattern is not runnable: {0}")]
    NotRunnable(#[from] RunnabilityError),
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error("input register lacks qubit for input node {0}")]
    MissingInput(NodeId),
    #[error("{measured} measurements exceed the branch cap of 2^{cap}")]
    TooManyBranches { measured: usize, cap: usize },
    #[error("graph with {0} nodes exceeds the isometry size cap")]
    TooLarge(usize),
}

fn angle_of(theta: &Angles, i: NodeId) -> Result<DyadicAngle, CalculusError> {
    theta.get(&i).copied().ok_or(CalculusError::MissingAngle(i))
}

fn prepare_all(g: &OpenGraph, commands: &mut Vec<Command>, b: u8) -> Result<(), CalculusError> {
    let zero = DyadicAngle::zero(b).map_err(|_| CalculusError::MissingAngle(0))?;
    for v in g.non_inputs() {
        commands.push(Command::Prepare { node: v, angle: zero });
    }
    for (a, c) in g.edges() {
        commands.push(Command::Entangle { a, b: c });
    }
    Ok(())
}

fn precision(theta: &Angles) -> u8 {
    theta.values().next().map_or(1, |a| a.b())
}

fn measured_in_order(g: &OpenGraph, order: &TotalOrder) -> Vec<NodeId> {
    order.iter().filter(|&v| !g.is_output(v)).collect()
}

fn check_inputs(g: &OpenGraph, fl: &Flow, theta: &Angles) -> Result<(), CalculusError> {
    if !verify_flow(g, fl) {
        return Err(CalculusError::InvalidFlow);
    }
    for v in g.non_outputs() {
        angle_of(theta, v)?;
    }
    Ok(())
}

/// The flow pattern with explicit byproduct corrections after every
/// measurement, measurements in ascending-id linearization of the layers.
pub fn build_standard_pattern(g: &OpenGraph, fl: &Flow, theta: &Angles) -> Result<Pattern, CalculusError> {
    build_standard_pattern_ordered(g, fl, &linearize(fl, TieBreak::AscendingId), theta)
}

pub fn build_standard_pattern_ordered(
    g: &OpenGraph,
    fl: &Flow,
    order: &TotalOrder,
    theta: &Angles,
) -> Result<Pattern, CalculusError> {
    check_inputs(g, fl, theta)?;
    order.check_consistent(g, fl)?;
    let mut commands = Vec::new();
    prepare_all(g, &mut commands, precision(theta))?;
    for i in measured_in_order(g, order) {
        commands.push(Command::Measure {
            node: i,
            angle: angle_of(theta, i)?,
            x_signals: NodeSet::new(),
            z_signals: NodeSet::new(),
        });
        let fi = fl.f[&i];
        commands.push(Command::CorrectX {
            node: fi,
            signals: NodeSet::from([i]),
        });
        for &k in g.neighbors(fi) {
            if k != i {
                commands.push(Command::CorrectZ {
                    node: k,
                    signals: NodeSet::from([i]),
                });
            }
        }
    }
    Ok(Pattern {
        commands,
        inputs: g.inputs().clone(),
        outputs: g.outputs().clone(),
    })
}

/// Signals that must be absorbed before touching node `i`:
/// `({f⁻¹(i)}, {k : k ≠ i, i ∈ N(f(k))})`.
pub fn pre_corrections(g: &OpenGraph, fl: &Flow, i: NodeId) -> (NodeSet, NodeSet) {
    let x = fl.inverse(i).into_iter().collect();
    (x, fl.z_sources(g, i))
}

/// Corrections folded into each measurement angle, outputs corrected last.
pub fn build_p2_pattern(g: &OpenGraph, fl: &Flow, theta: &Angles) -> Result<Pattern, CalculusError> {
    build_p2_pattern_ordered(g, fl, &linearize(fl, TieBreak::AscendingId), theta)
}

pub fn build_p2_pattern_ordered(
    g: &OpenGraph,
    fl: &Flow,
    order: &TotalOrder,
    theta: &Angles,
) -> Result<Pattern, CalculusError> {
    check_inputs(g, fl, theta)?;
    order.check_consistent(g, fl)?;
    let mut commands = Vec::new();
    prepare_all(g, &mut commands, precision(theta))?;
    for i in measured_in_order(g, order) {
        let (x_signals, z_signals) = pre_corrections(g, fl, i);
        commands.push(Command::Measure {
            node: i,
            angle: angle_of(theta, i)?,
            x_signals,
            z_signals,
        });
    }
    for &o in g.outputs() {
        push_output_corrections(g, fl, o, &mut commands);
    }
    Ok(Pattern {
        commands,
        inputs: g.inputs().clone(),
        outputs: g.outputs().clone(),
    })
}

fn push_output_corrections(g: &OpenGraph, fl: &Flow, o: NodeId, commands: &mut Vec<Command>) {
    let (x, z) = pre_corrections(g, fl, o);
    if !x.is_empty() {
        commands.push(Command::CorrectX { node: o, signals: x });
    }
    if !z.is_empty() {
        commands.push(Command::CorrectZ { node: o, signals: z });
    }
}

/// The lazy interleaving: for each node in `order`, prepare `A(i)`, entangle
/// `i` with its later neighbours, then measure `i` (or correct it if it is an
/// output).
pub fn build_lazy_pattern(
    g: &OpenGraph,
    fl: &Flow,
    order: &TotalOrder,
    theta: &Angles,
) -> Result<Pattern, CalculusError> {
    check_inputs(g, fl, theta)?;
    order.check_consistent(g, fl)?;
    let zero = DyadicAngle::zero(precision(theta)).map_err(|_| CalculusError::MissingAngle(0))?;
    let pos = order.positions();
    let sets = assignment_sets(g, order);
    let mut commands = Vec::new();
    for i in order.iter() {
        for &k in &sets[&i] {
            commands.push(Command::Prepare { node: k, angle: zero });
        }
        for &j in g.neighbors(i) {
            if pos[&j] > pos[&i] {
                commands.push(Command::Entangle { a: i, b: j });
            }
        }
        if g.is_output(i) {
            push_output_corrections(g, fl, i, &mut commands);
        } else {
            let (x_signals, z_signals) = pre_corrections(g, fl, i);
            commands.push(Command::Measure {
                node: i,
                angle: angle_of(theta, i)?,
                x_signals,
                z_signals,
            });
        }
    }
    Ok(Pattern {
        commands,
        inputs: g.inputs().clone(),
        outputs: g.outputs().clone(),
    })
}

impl Pattern {
    pub fn entangle_edges(&self) -> Vec<(NodeId, NodeId)> {
        self.commands
            .iter()
            .filter_map(|c| match *c {
                Command::Entangle { a, b } => Some((a.min(b), a.max(b))),
                _ => None,
            })
            .collect()
    }

    pub fn measured_nodes(&self) -> Vec<NodeId> {
        self.commands
            .iter()
            .filter_map(|c| match c {
                Command::Measure { node, .. } => Some(*node),
                _ => None,
            })
            .collect()
    }
}

/// Checks (R0) signal dependencies are measured earlier, (R1) commands only
/// touch live qubits, (R2) exactly the non-outputs are measured and exactly
/// the non-inputs prepared.
pub fn check_runnable(p: &Pattern) -> Result<(), RunnabilityError> {
    let mut live: NodeSet = p.inputs.clone();
    let mut prepared = NodeSet::new();
    let mut measured = NodeSet::new();
    let signals_ok = |index: usize, s: &NodeSet, measured: &NodeSet| {
        s.iter()
            .find(|n| !measured.contains(n))
            .map_or(Ok(()), |&node| Err(RunnabilityError::SignalNotMeasured { index, node }))
    };
    let need = |index: usize, node: NodeId, live: &NodeSet| {
        if live.contains(&node) {
            Ok(())
        } else {
            Err(RunnabilityError::Unavailable { index, node })
        }
    };
    for (index, c) in p.commands.iter().enumerate() {
        match c {
            Command::Prepare { node, .. } => {
                if prepared.contains(node) || live.contains(node) || measured.contains(node) {
                    return Err(RunnabilityError::DoublePrepare { index, node: *node });
                }
                prepared.insert(*node);
                live.insert(*node);
            }
            Command::Entangle { a, b } => {
                need(index, *a, &live)?;
                need(index, *b, &live)?;
            }
            Command::Measure {
                node,
                x_signals,
                z_signals,
                ..
            } => {
                need(index, *node, &live)?;
                signals_ok(index, x_signals, &measured)?;
                signals_ok(index, z_signals, &measured)?;
                live.remove(node);
                measured.insert(*node);
            }
            Command::CorrectX { node, signals } | Command::CorrectZ { node, signals } => {
                need(index, *node, &live)?;
                signals_ok(index, signals, &measured)?;
            }
        }
    }
    let all: NodeSet = p.inputs.union(&prepared).copied().chain(measured.iter().copied()).collect();
    let non_outputs: NodeSet = all.difference(&p.outputs).copied().collect();
    if measured != non_outputs {
        return Err(RunnabilityError::MeasuredSet);
    }
    let non_inputs: NodeSet = all.difference(&p.inputs).copied().collect();
    if prepared != non_inputs {
        return Err(RunnabilityError::PreparedSet);
    }
    Ok(())
}

fn parity(signals: &Signals, nodes: &NodeSet) -> u8 {
    nodes.iter().fold(0, |acc, n| acc ^ signals.get(n).copied().unwrap_or(0))
}

fn check_input_register(p: &Pattern, input: &QuantumRegister) -> Result<(), CalculusError> {
    for &i in &p.inputs {
        if !input.contains(QubitId::Node(i)) {
            return Err(CalculusError::MissingInput(i));
        }
    }
    Ok(())
}

/// Applies one non-measurement command.
fn apply(reg: &mut QuantumRegister, c: &Command, signals: &Signals) -> Result<(), QsimError> {
    match c {
        Command::Prepare { node, angle } => reg.alloc_plus(QubitId::Node(*node), *angle),
        Command::Entangle { a, b } => reg.apply_cz(QubitId::Node(*a), QubitId::Node(*b)),
        Command::CorrectX { node, signals: s } => reg.apply_correction(QubitId::Node(*node), parity(signals, s), 0),
        Command::CorrectZ { node, signals: s } => reg.apply_correction(QubitId::Node(*node), 0, parity(signals, s)),
        Command::Measure { .. } => unreachable!("measurements are handled by the caller"),
    }
}

fn adapted(angle: DyadicAngle, x: &NodeSet, z: &NodeSet, signals: &Signals) -> DyadicAngle {
    angle.correct(parity(signals, x), parity(signals, z))
}

/// Executes a runnable pattern on a register holding `Node(i)` for every
/// input (and possibly reference qubits). Returns the final register, the
/// signals and the probability of the realized branch.
pub fn run_pattern(
    p: &Pattern,
    input: QuantumRegister,
    source: &mut dyn OutcomeSource,
) -> Result<(QuantumRegister, Signals, f64), CalculusError> {
    check_runnable(p)?;
    check_input_register(p, &input)?;
    let mut reg = input;
    let mut signals = Signals::new();
    let mut prob = 1.0;
    for c in &p.commands {
        if let Command::Measure {
            node,
            angle,
            x_signals,
            z_signals,
        } = c
        {
            let delta = adapted(*angle, x_signals, z_signals, &signals);
            let m = reg.measure_angle(QubitId::Node(*node), delta, source)?;
            prob *= m.probability;
            signals.insert(*node, m.outcome);
        } else {
            apply(&mut reg, c, &signals)?;
        }
    }
    Ok((reg, signals, prob))
}

/// Depth-first walk over every measurement branch with nonzero probability.
pub fn for_each_branch(
    p: &Pattern,
    input: QuantumRegister,
    visit: &mut dyn FnMut(&QuantumRegister, &Signals, f64),
) -> Result<(), CalculusError> {
    check_runnable(p)?;
    check_input_register(p, &input)?;
    let measured = p.measured_nodes().len();
    if measured > MAX_BRANCH_MEASUREMENTS {
        return Err(CalculusError::TooManyBranches {
            measured,
            cap: MAX_BRANCH_MEASUREMENTS,
        });
    }
    walk(p, 0, input, Signals::new(), 1.0, visit)
}

fn walk(
    p: &Pattern,
    mut pc: usize,
    mut reg: QuantumRegister,
    signals: Signals,
    prob: f64,
    visit: &mut dyn FnMut(&QuantumRegister, &Signals, f64),
) -> Result<(), CalculusError> {
    while pc < p.commands.len() {
        let c = &p.commands[pc];
        pc += 1;
        if let Command::Measure {
            node,
            angle,
            x_signals,
            z_signals,
        } = c
        {
            let q = QubitId::Node(*node);
            let delta = adapted(*angle, x_signals, z_signals, &signals);
            let probs = reg.branch_probabilities(q, delta)?;
            for outcome in 0..2u8 {
                let pb = probs[usize::from(outcome)];
                if pb <= ZERO_PROBABILITY {
                    continue;
                }
                let mut r = reg.clone();
                r.project(q, delta, outcome)?;
                let mut s = signals.clone();
                s.insert(*node, outcome);
                walk(p, pc, r, s, prob * pb, visit)?;
            }
            return Ok(());
        }
        apply(&mut reg, c, &signals)?;
    }
    visit(&reg, &signals, prob);
    Ok(())
}

/// Labels of what a pattern leaves behind: outputs in ascending id, then any
/// other qubits of the input register (references) in label order.
pub fn output_labels(p: &Pattern, input: &QuantumRegister) -> Vec<QubitId> {
    let mut labels: Vec<QubitId> = p.outputs.iter().map(|&o| QubitId::Node(o)).collect();
    let mut extra: Vec<QubitId> = input
        .labels()
        .iter()
        .copied()
        .filter(|l| !matches!(l, QubitId::Node(n) if p.inputs.contains(n)))
        .collect();
    extra.sort();
    labels.extend(extra);
    labels
}

/// Branch-averaged output, keyed by the outcomes of `classical` nodes (packed
/// little-endian in the given order) and restricted to `quantum` labels.
pub fn cq_channel(
    p: &Pattern,
    input: QuantumRegister,
    classical: &[NodeId],
    quantum: &[QubitId],
) -> Result<CqState<u64>, CalculusError> {
    let mut out = CqState::new(quantum.to_vec());
    let mut err = None;
    for_each_branch(p, input, &mut |reg, signals, prob| {
        let key = classical
            .iter()
            .enumerate()
            .fold(0u64, |k, (j, n)| k | (u64::from(signals.get(n).copied().unwrap_or(0)) << j));
        match reg.state_in_order(quantum) {
            Ok(amps) => out.add_pure(key, &amps, prob),
            Err(e) => err = Some(e),
        }
    })?;
    match err {
        Some(e) => Err(e.into()),
        None => Ok(out),
    }
}

/// Output density matrix averaged over all branches.
pub fn channel_of_pattern(p: &Pattern, input: QuantumRegister) -> Result<DensityMatrix, CalculusError> {
    let labels = output_labels(p, &input);
    Ok(cq_channel(p, input, &[], &labels)?.average())
}

/// `2^{|O^c|/2} ⊗_{i∈O^c}⟨+_{θ_i}| E_G N⁰_{I^c}` as a `2^|O| × 2^|I|` matrix;
/// bit `j` of a row (column) index is the `j`-th output (input) in ascending id.
pub fn isometry_matrix(g: &OpenGraph, theta: &Angles) -> Result<DMatrix<Complex64>, CalculusError> {
    let n = g.vertex_count();
    if n > MAX_ISOMETRY_NODES {
        return Err(CalculusError::TooLarge(n));
    }
    let inputs: Vec<NodeId> = g.inputs().iter().copied().collect();
    let outputs: Vec<QubitId> = g.outputs().iter().map(|&o| QubitId::Node(o)).collect();
    let measured = g.non_outputs();
    for &v in &measured {
        angle_of(theta, v)?;
    }
    let b = precision(theta);
    let zero = DyadicAngle::zero(b).map_err(|_| CalculusError::MissingAngle(0))?;
    let scale = 2f64.powf(measured.len() as f64 / 2.0);
    let mut m = DMatrix::<Complex64>::zeros(1 << outputs.len(), 1 << inputs.len());
    for col in 0..1usize << inputs.len() {
        let mut reg = QuantumRegister::new();
        for (j, &i) in inputs.iter().enumerate() {
            let one = (col >> j) & 1 == 1;
            let (a0, a1) = if one { (0.0, 1.0) } else { (1.0, 0.0) };
            reg.alloc_state(QubitId::Node(i), Complex64::new(a0, 0.0), Complex64::new(a1, 0.0))?;
        }
        for v in g.non_inputs() {
            reg.alloc_plus(QubitId::Node(v), zero)?;
        }
        for (a, c) in g.edges() {
            reg.apply_cz(QubitId::Node(a), QubitId::Node(c))?;
        }
        for &v in &measured {
            let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            let th = theta[&v];
            reg.contract(QubitId::Node(v), h, h * crate::qsim::phase(th).conj())?;
        }
        let amps = reg.state_in_order(&outputs)?;
        for (row, a) in amps.into_iter().enumerate() {
            m[(row, col)] = a * scale;
        }
    }
    Ok(m)
}

/// Live qubit count after every command, starting from the inputs.
pub fn live_qubit_profile(p: &Pattern) -> Vec<usize> {
    let mut live = p.inputs.len();
    let mut out = vec![live];
    for c in &p.commands {
        match c {
            Command::Prepare { .. } => live += 1,
            Command::Measure { .. } => live -= 1,
            _ => continue,
        }
        out.push(live);
    }
    out
}

/// Peak number of simultaneously live qubits.
pub fn max_concurrent_qubits(p: &Pattern) -> usize {
    live_qubit_profile(p).into_iter().max().unwrap_or(0)
}

/// One step of the lazy schedule, for reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LazyStep {
    pub node: NodeId,
    pub prepared: NodeSet,
    pub live_peak: usize,
    pub live_after: usize,
}

/// Bookkeeping-only walk of the lazy schedule: what is prepared before each
/// node and how many qubits are alive.
pub fn lazy_schedule(g: &OpenGraph, order: &TotalOrder) -> Vec<LazyStep> {
    let sets = assignment_sets(g, order);
    let mut live = g.inputs().len();
    order
        .iter()
        .map(|i| {
            let prepared = sets[&i].clone();
            live += prepared.len();
            let peak = live;
            if !g.is_output(i) {
                live -= 1;
            }
            LazyStep {
                node: i,
                prepared,
                live_peak: peak,
                live_after: live,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstate::find_flow;
    use crate::qsim::ForcedOutcomes;

    fn a(k: u32) -> DyadicAngle {
        DyadicAngle::new(k, 3).unwrap()
    }

    fn set(v: &[NodeId]) -> NodeSet {
        v.iter().copied().collect()
    }

    fn path() -> (OpenGraph, Flow) {
        let g = OpenGraph::new([1, 2, 3], [(1, 2), (2, 3)], [1], [3]).unwrap();
        let f = find_flow(&g).unwrap();
        (g, f)
    }

    fn lazy7() -> (OpenGraph, Flow) {
        let g = OpenGraph::new(
            1..=7,
            [(1, 3), (2, 3), (2, 4), (4, 6), (4, 5), (3, 5), (3, 7), (6, 7)],
            [1, 2],
            [5, 6, 7],
        )
        .unwrap();
        let f = find_flow(&g).unwrap();
        (g, f)
    }

    fn grover_graph() -> (OpenGraph, Flow) {
        let g = OpenGraph::new(
            1..=8,
            [(2, 3), (1, 4), (3, 4), (5, 6), (6, 7), (5, 8), (7, 2), (8, 1)],
            [5, 6],
            [3, 4],
        )
        .unwrap();
        let f = find_flow(&g).unwrap();
        (g, f)
    }

    fn angles(nodes: impl IntoIterator<Item = NodeId>, k: impl Fn(NodeId) -> u32) -> Angles {
        nodes.into_iter().map(|n| (n, a(k(n)))).collect()
    }

    fn zero_input(g: &OpenGraph) -> QuantumRegister {
        let mut r = QuantumRegister::new();
        for &i in g.inputs() {
            r.alloc_zero(QubitId::Node(i)).unwrap();
        }
        r
    }

    #[test]
    fn path_standard_pattern_shape() {
        let (g, f) = path();
        let p = build_standard_pattern(&g, &f, &angles([1, 2], |_| 0)).unwrap();
        let z = a(0);
        assert_eq!(
            p.commands,
            vec![
                Command::Prepare { node: 2, angle: z },
                Command::Prepare { node: 3, angle: z },
                Command::Entangle { a: 1, b: 2 },
                Command::Entangle { a: 2, b: 3 },
                Command::Measure { node: 1, angle: z, x_signals: set(&[]), z_signals: set(&[]) },
                Command::CorrectX { node: 2, signals: set(&[1]) },
                Command::CorrectZ { node: 3, signals: set(&[1]) },
                Command::Measure { node: 2, angle: z, x_signals: set(&[]), z_signals: set(&[]) },
                Command::CorrectX { node: 3, signals: set(&[2]) },
            ]
        );
        check_runnable(&p).unwrap();
    }

    #[test]
    fn grover_corrections_follow_the_hand_flow() {
        let (g, f) = grover_graph();
        let theta = angles(g.non_outputs(), |n| n % 8);
        let p1 = build_standard_pattern(&g, &f, &theta).unwrap();
        let after_m1: Vec<&Command> = p1
            .commands
            .iter()
            .skip_while(|c| !matches!(c, Command::Measure { node: 1, .. }))
            .skip(1)
            .take(2)
            .collect();
        assert_eq!(after_m1[0], &Command::CorrectX { node: 4, signals: set(&[1]) });
        assert_eq!(after_m1[1], &Command::CorrectZ { node: 3, signals: set(&[1]) });

        let p2 = build_p2_pattern(&g, &f, &theta).unwrap();
        let tail: Vec<&Command> = p2.commands.iter().rev().take(4).collect();
        assert!(tail.contains(&&Command::CorrectX { node: 3, signals: set(&[2]) }));
        assert!(tail.contains(&&Command::CorrectZ { node: 3, signals: set(&[1, 7]) }));
        assert!(tail.contains(&&Command::CorrectX { node: 4, signals: set(&[1]) }));
        assert!(tail.contains(&&Command::CorrectZ { node: 4, signals: set(&[2, 8]) }));
        for c in &p2.commands {
            if let Command::Measure { node: 5 | 6, x_signals, .. } = c {
                assert!(x_signals.is_empty());
            }
        }
    }

    #[test]
    fn lazy7_pattern_steps() {
        let (g, f) = lazy7();
        let order = linearize(&f, TieBreak::AscendingId);
        assert_eq!(order.as_slice(), &[1, 2, 3, 4, 5, 6, 7]);
        let theta = angles(g.non_outputs(), |n| n);
        let p = build_lazy_pattern(&g, &f, &order, &theta).unwrap();
        check_runnable(&p).unwrap();
        assert_eq!(
            &p.commands[..3],
            &[
                Command::Prepare { node: 3, angle: a(0) },
                Command::Entangle { a: 1, b: 3 },
                Command::Measure { node: 1, angle: a(1), x_signals: set(&[]), z_signals: set(&[]) },
            ]
        );
        let m3 = p.commands.iter().position(|c| matches!(c, Command::Measure { node: 3, .. })).unwrap();
        assert_eq!(
            &p.commands[m3 - 4..=m3],
            &[
                Command::Prepare { node: 5, angle: a(0) },
                Command::Prepare { node: 7, angle: a(0) },
                Command::Entangle { a: 3, b: 5 },
                Command::Entangle { a: 3, b: 7 },
                Command::Measure { node: 3, angle: a(3), x_signals: set(&[1]), z_signals: set(&[]) },
            ]
        );
        let corr: Vec<&Command> = p.commands.iter().filter(|c| matches!(c, Command::CorrectX { .. } | Command::CorrectZ { .. })).collect();
        assert_eq!(
            corr,
            vec![
                &Command::CorrectZ { node: 5, signals: set(&[1, 2]) },
                &Command::CorrectX { node: 6, signals: set(&[4]) },
                &Command::CorrectZ { node: 6, signals: set(&[2, 3]) },
                &Command::CorrectX { node: 7, signals: set(&[3]) },
                &Command::CorrectZ { node: 7, signals: set(&[1, 4]) },
            ]
        );
        assert_eq!(max_concurrent_qubits(&p), 4);
    }

    #[test]
    fn lazy_peaks() {
        let (g, f) = path();
        let order = linearize(&f, TieBreak::AscendingId);
        let p = build_lazy_pattern(&g, &f, &order, &angles([1, 2], |_| 0)).unwrap();
        assert_eq!(max_concurrent_qubits(&p), 2);
        let (g, f) = grover_graph();
        let order = linearize(&f, TieBreak::AscendingId);
        let p = build_lazy_pattern(&g, &f, &order, &angles(g.non_outputs(), |_| 1)).unwrap();
        assert_eq!(max_concurrent_qubits(&p), 3);
        let steps = lazy_schedule(&g, &order);
        assert_eq!(steps.iter().map(|s| s.live_peak).max(), Some(3));
    }

    #[test]
    fn lazy_rejects_inconsistent_order() {
        let (g, f) = path();
        let bad = TotalOrder::new(vec![2, 1, 3]);
        assert!(matches!(
            build_lazy_pattern(&g, &f, &bad, &angles([1, 2], |_| 0)),
            Err(CalculusError::Graph(GraphError::OrderInconsistent(1, 2)))
        ));
    }

    #[test]
    fn missing_angle() {
        let (g, f) = path();
        assert_eq!(
            build_standard_pattern(&g, &f, &angles([1], |_| 0)).unwrap_err(),
            CalculusError::MissingAngle(2)
        );
    }

    #[test]
    fn runnability_violations() {
        let (g, f) = path();
        let mut p = build_p2_pattern(&g, &f, &angles([1, 2], |_| 0)).unwrap();
        p.commands.swap(4, 5); // measure 2 before 1: node 2 depends on s1
        assert!(matches!(check_runnable(&p), Err(RunnabilityError::SignalNotMeasured { node: 1, .. })));
        let mut p = build_p2_pattern(&g, &f, &angles([1, 2], |_| 0)).unwrap();
        p.commands.remove(0);
        assert!(matches!(check_runnable(&p), Err(RunnabilityError::Unavailable { node: 2, .. })));
        let mut p = build_p2_pattern(&g, &f, &angles([1, 2], |_| 0)).unwrap();
        p.commands.retain(|c| !matches!(c, Command::Measure { node: 2, .. }));
        assert!(check_runnable(&p).is_err());
    }

    #[test]
    fn path_wire_is_identity_at_zero_angles() {
        let (g, f) = path();
        let theta = angles([1, 2], |_| 0);
        let v = isometry_matrix(&g, &theta).unwrap();
        // J(0)J(0) = HH = I up to global phase.
        let phase = v[(0, 0)];
        assert!((phase.norm() - 1.0).abs() < 1e-12);
        assert!(v[(0, 1)].norm() < 1e-12 && v[(1, 0)].norm() < 1e-12);
        assert!((v[(1, 1)] - phase).norm() < 1e-12);

        let p = build_standard_pattern(&g, &f, &theta).unwrap();
        let (out, _, prob) = run_pattern(&p, zero_input(&g), &mut ForcedOutcomes::all(0)).unwrap();
        assert!((prob - 0.25).abs() < 1e-12);
        let mut expect = QuantumRegister::new();
        expect.alloc_zero(QubitId::Node(3)).unwrap();
        assert!(out.fidelity(&expect).unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn grover_extreme_branches_agree() {
        let (g, f) = grover_graph();
        let theta = angles(g.non_outputs(), |n| (3 * n) % 8);
        let p = build_standard_pattern(&g, &f, &theta).unwrap();
        let (zeros, _, _) = run_pattern(&p, zero_input(&g), &mut ForcedOutcomes::all(0)).unwrap();
        let (ones, _, p1) = run_pattern(&p, zero_input(&g), &mut ForcedOutcomes::all(1)).unwrap();
        assert!((p1 - 1.0 / 64.0).abs() < 1e-9);
        assert!(zeros.fidelity(&ones).unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn isometry_property_grover() {
        let (g, _) = grover_graph();
        let theta = angles(g.non_outputs(), |n| (5 * n + 1) % 8);
        let v = isometry_matrix(&g, &theta).unwrap();
        let vv = v.adjoint() * &v;
        let id = DMatrix::<Complex64>::identity(vv.nrows(), vv.ncols());
        assert!((vv - id).norm() < 1e-9);
    }

    #[test]
    fn pattern_json_dump() {
        let (g, f) = path();
        let p = build_p2_pattern(&g, &f, &angles([1, 2], |_| 0)).unwrap();
        let s = serde_json::to_string(&p.commands[0]).unwrap();
        assert_eq!(s, r#"{"op":"Prepare","node":2,"angle":{"k":0,"b":3}}"#);
        let back: Pattern = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
