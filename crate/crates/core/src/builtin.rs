//! Fixed graphs and setup generators shared by the CLI and the test suites.

use std::collections::BTreeMap;

use rand::Rng;

use crate::angles::DyadicAngle;
use crate::calculus::Angles;
use crate::graphstate::{find_flow, Flow, NodeId, NodeSet, OpenGraph, OracleGraph, Slot, SlotGraph};
use crate::protocol::{pre_protocol, AliceInput, IoMode, OscarInput, ProtocolError, ProtocolSetup, PublicInfo};
use crate::qsim::{QuantumRegister, QubitId};

fn set(v: &[NodeId]) -> NodeSet {
    v.iter().copied().collect()
}

/// The path `1 – 2 – 3` with `I = {1}`, `O = {3}`.
pub fn path_graph() -> (OpenGraph, Flow) {
    let g = OpenGraph::new([1, 2, 3], [(1, 2), (2, 3)], [1], [3]).expect("path graph");
    let f = find_flow(&g).expect("path graph has flow");
    (g, f)
}

/// The two-qubit Grover algorithm graph with a single oracle slot.
pub fn grover_alice() -> SlotGraph {
    SlotGraph {
        vertices: set(&[1, 2, 3, 4]),
        edges: vec![(2, 3), (1, 4), (3, 4)],
        inputs: set(&[1, 2]),
        outputs: set(&[3, 4]),
        quantum_inputs: NodeSet::new(),
        quantum_outputs: NodeSet::new(),
        slots: vec![Slot {
            attachments: set(&[1, 2]),
        }],
    }
}

pub fn grover_oracle() -> OracleGraph {
    OracleGraph {
        vertices: set(&[5, 6, 7, 8]),
        edges: vec![(5, 6), (6, 7), (5, 8)],
        inputs: set(&[5, 6]),
        outputs: set(&[7, 8]),
    }
}

pub const GROVER_CONNECTION: [(NodeId, NodeId); 2] = [(7, 2), (8, 1)];

/// The joined eight-node Grover graph and its flow.
pub fn grover(b: u8) -> Result<(PublicInfo, Flow), ProtocolError> {
    pre_protocol(&grover_alice(), &grover_oracle(), &GROVER_CONNECTION, b)
}

/// The flow of the joined Grover graph written out by hand, one node per
/// layer at the end.
pub fn grover_hand_flow() -> Flow {
    Flow {
        f: [(5, 8), (6, 7), (7, 2), (8, 1), (1, 4), (2, 3)].into_iter().collect(),
        layers: vec![set(&[5, 6]), set(&[7, 8]), set(&[1, 2]), set(&[3]), set(&[4])],
    }
}

/// The seven-node graph used to illustrate the lazy schedule.
pub fn lazy_example() -> (OpenGraph, Flow) {
    let g = OpenGraph::new(
        1..=7,
        [(1, 3), (2, 3), (2, 4), (4, 6), (4, 5), (3, 5), (3, 7), (6, 7)],
        [1, 2],
        [5, 6, 7],
    )
    .expect("lazy example graph");
    let f = find_flow(&g).expect("lazy example has flow");
    (g, f)
}

/// Deterministic stand-in angles `k = id mod 2^b`.
pub fn placeholder_angles(nodes: impl IntoIterator<Item = NodeId>, b: u8) -> Angles {
    let m = 1u32 << b;
    nodes
        .into_iter()
        .map(|v| (v, DyadicAngle::new(v % m, b).expect("in range")))
        .collect()
}

fn random_angles<R: Rng + ?Sized>(nodes: &NodeSet, b: u8, rng: &mut R) -> Angles {
    nodes
        .iter()
        .map(|&v| (v, DyadicAngle::new(rng.gen_range(0..1u32 << b), b).expect("in range")))
        .collect()
}

/// A setup with the given angles split by ownership, all-zero classical input
/// and, for quantum input, `|+⟩` on every input.
pub fn setup_with_angles(
    public: &PublicInfo,
    flow: &Flow,
    mode: IoMode,
    angles: &Angles,
) -> Result<ProtocolSetup, ProtocolError> {
    let public = public.with_io_mode(mode)?;
    let g = &public.graph;
    let owned = |nodes: &NodeSet| -> Angles {
        angles
            .iter()
            .filter(|(v, _)| nodes.contains(v) && !g.quantum_outputs().contains(v))
            .map(|(&v, &a)| (v, a))
            .collect()
    };
    let quantum = if g.quantum_inputs().is_empty() {
        None
    } else {
        let mut reg = QuantumRegister::new();
        for &v in g.quantum_inputs() {
            reg.alloc_plus(QubitId::Node(v), DyadicAngle::zero(public.b)?)?;
        }
        Some(reg)
    };
    let alice = AliceInput {
        flow: flow.clone(),
        phi: owned(g.alice_nodes()),
        classical: BTreeMap::new(),
        quantum,
    };
    let oscar = OscarInput {
        psi: owned(g.oscar_nodes()),
    };
    ProtocolSetup::new(public, alice, oscar)
}

/// Random angles on every measured node, random classical input bits, and for
/// quantum input a random pure state on the inputs entangled with
/// `references` reference qubits.
pub fn random_setup<R: Rng + ?Sized>(
    public: &PublicInfo,
    flow: &Flow,
    mode: IoMode,
    references: u32,
    rng: &mut R,
) -> Result<ProtocolSetup, ProtocolError> {
    let public = public.with_io_mode(mode)?;
    let g = &public.graph;
    let measured = |nodes: &NodeSet| -> NodeSet { nodes.difference(g.quantum_outputs()).copied().collect() };
    let phi = random_angles(&measured(g.alice_nodes()), public.b, rng);
    let psi = random_angles(&measured(g.oscar_nodes()), public.b, rng);
    let classical = g
        .inputs()
        .iter()
        .filter(|v| g.alice_nodes().contains(v) && !g.quantum_inputs().contains(v))
        .map(|&v| (v, rng.gen_range(0..2u8)))
        .collect();
    let quantum = if g.quantum_inputs().is_empty() {
        None
    } else {
        let labels: Vec<QubitId> = g
            .quantum_inputs()
            .iter()
            .map(|&v| QubitId::Node(v))
            .chain((0..references).map(QubitId::Reference))
            .collect();
        Some(QuantumRegister::random(labels, rng)?)
    };
    let alice = AliceInput {
        flow: flow.clone(),
        phi,
        classical,
        quantum,
    };
    ProtocolSetup::new(public, alice, OscarInput { psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstate::{linearize, verify_flow, TieBreak};

    #[test]
    fn grover_join_matches_hand_flow() {
        let (public, flow) = grover(4).unwrap();
        assert!(verify_flow(&public.graph, &grover_hand_flow()));
        assert_eq!(flow.f, grover_hand_flow().f);
        assert_eq!(public.graph.inputs(), &set(&[5, 6]));
        assert_eq!(public.graph.outputs(), &set(&[3, 4]));
        assert_eq!(
            linearize(&grover_hand_flow(), TieBreak::AscendingId).as_slice(),
            &[5, 6, 7, 8, 1, 2, 3, 4]
        );
    }

    #[test]
    fn placeholder_angles_wrap() {
        let a = placeholder_angles([1, 5, 17], 2);
        assert_eq!(a[&5].k(), 1);
        assert_eq!(a[&17].k(), 1);
    }
}
