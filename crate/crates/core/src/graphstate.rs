//! Open graphs with flow, their orderings, the lazy assignment sets and the
//! pre-protocol graph join.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;
pub type NodeSet = BTreeSet<NodeId>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(NodeId, NodeId),
    #[error("node {0} is not a vertex of the graph")]
    UnknownNode(NodeId),
    #[error("input set is empty")]
    EmptyInputs,
    #[error("output set is empty")]
    EmptyOutputs,
    #[error("quantum input {0} is not an input node")]
    QuantumInputNotInput(NodeId),
    #[error("quantum output {0} is not an output node")]
    QuantumOutputNotOutput(NodeId),
    #[error("node {0} is owned by the oracle client but carries quantum input or output")]
    OracleQuantumIo(NodeId),
    #[error("client ownership must partition the vertices (node {0})")]
    OwnershipNotPartition(NodeId),
    #[error("oracle graph has {components} components but the algorithm graph has {slots} slots")]
    ComponentCountMismatch { slots: usize, components: usize },
    #[error("connection pair ({0}, {1}) does not link an oracle node to an algorithm node")]
    BadConnectionPair(NodeId, NodeId),
    #[error("connection does not map oracle components onto slots one-to-one")]
    SlotMismatch,
    #[error("joined graph has no flow")]
    InvalidConnection,
    #[error("node ids of the two graphs overlap at {0}")]
    OverlappingIds(NodeId),
    #[error("total order is not a permutation of the vertices")]
    OrderNotPermutation,
    #[error("total order is inconsistent with the flow: {0} must precede {1}")]
    OrderInconsistent(NodeId, NodeId),
    #[error("graph file: {0}")]
    File(String),
}

/// An open graph `(G, I, O)` together with the quantum I/O markers and the
/// split of its vertices between the algorithm client and the oracle client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenGraph {
    adjacency: BTreeMap<NodeId, NodeSet>,
    inputs: NodeSet,
    outputs: NodeSet,
    quantum_inputs: NodeSet,
    quantum_outputs: NodeSet,
    alice_nodes: NodeSet,
    oscar_nodes: NodeSet,
}

impl OpenGraph {
    /// Builds a graph owned entirely by the algorithm client with classical I/O.
    pub fn new(
        vertices: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
        inputs: impl IntoIterator<Item = NodeId>,
        outputs: impl IntoIterator<Item = NodeId>,
    ) -> Result<Self, GraphError> {
        let mut adjacency: BTreeMap<NodeId, NodeSet> =
            vertices.into_iter().map(|v| (v, NodeSet::new())).collect();
        for (a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            for v in [a, b] {
                if !adjacency.contains_key(&v) {
                    return Err(GraphError::UnknownNode(v));
                }
            }
            if !adjacency.get_mut(&a).unwrap().insert(b) {
                return Err(GraphError::DuplicateEdge(a, b));
            }
            adjacency.get_mut(&b).unwrap().insert(a);
        }
        let alice_nodes: NodeSet = adjacency.keys().copied().collect();
        let g = OpenGraph {
            adjacency,
            inputs: inputs.into_iter().collect(),
            outputs: outputs.into_iter().collect(),
            quantum_inputs: NodeSet::new(),
            quantum_outputs: NodeSet::new(),
            alice_nodes,
            oscar_nodes: NodeSet::new(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_quantum_io(
        mut self,
        quantum_inputs: impl IntoIterator<Item = NodeId>,
        quantum_outputs: impl IntoIterator<Item = NodeId>,
    ) -> Result<Self, GraphError> {
        self.quantum_inputs = quantum_inputs.into_iter().collect();
        self.quantum_outputs = quantum_outputs.into_iter().collect();
        self.validate()?;
        Ok(self)
    }

    /// Assigns the given vertices to the oracle client; the rest stay with the
    /// algorithm client.
    pub fn with_oscar_nodes(
        mut self,
        oscar_nodes: impl IntoIterator<Item = NodeId>,
    ) -> Result<Self, GraphError> {
        self.oscar_nodes = oscar_nodes.into_iter().collect();
        self.alice_nodes = self
            .vertices()
            .filter(|v| !self.oscar_nodes.contains(v))
            .collect();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.inputs.is_empty() {
            return Err(GraphError::EmptyInputs);
        }
        if self.outputs.is_empty() {
            return Err(GraphError::EmptyOutputs);
        }
        for v in self
            .inputs
            .iter()
            .chain(&self.outputs)
            .chain(&self.alice_nodes)
            .chain(&self.oscar_nodes)
        {
            if !self.contains(*v) {
                return Err(GraphError::UnknownNode(*v));
            }
        }
        for &v in &self.quantum_inputs {
            if !self.inputs.contains(&v) {
                return Err(GraphError::QuantumInputNotInput(v));
            }
            if self.oscar_nodes.contains(&v) {
                return Err(GraphError::OracleQuantumIo(v));
            }
        }
        for &v in &self.quantum_outputs {
            if !self.outputs.contains(&v) {
                return Err(GraphError::QuantumOutputNotOutput(v));
            }
            if self.oscar_nodes.contains(&v) {
                return Err(GraphError::OracleQuantumIo(v));
            }
        }
        for v in self.vertices() {
            if self.alice_nodes.contains(&v) == self.oscar_nodes.contains(&v) {
                return Err(GraphError::OwnershipNotPartition(v));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.adjacency.contains_key(&v)
    }

    /// Each undirected edge once, as `(smaller, larger)`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(&a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency.get(&a).is_some_and(|ns| ns.contains(&b))
    }

    /// Open neighbourhood. Panics on unknown nodes; callers validate first.
    pub fn neighbors(&self, v: NodeId) -> &NodeSet {
        &self.adjacency[&v]
    }

    pub fn closed_neighborhood(&self, v: NodeId) -> NodeSet {
        let mut n = self.neighbors(v).clone();
        n.insert(v);
        n
    }

    pub fn inputs(&self) -> &NodeSet {
        &self.inputs
    }

    pub fn outputs(&self) -> &NodeSet {
        &self.outputs
    }

    pub fn quantum_inputs(&self) -> &NodeSet {
        &self.quantum_inputs
    }

    pub fn quantum_outputs(&self) -> &NodeSet {
        &self.quantum_outputs
    }

    pub fn alice_nodes(&self) -> &NodeSet {
        &self.alice_nodes
    }

    pub fn oscar_nodes(&self) -> &NodeSet {
        &self.oscar_nodes
    }

    pub fn is_input(&self, v: NodeId) -> bool {
        self.inputs.contains(&v)
    }

    pub fn is_output(&self, v: NodeId) -> bool {
        self.outputs.contains(&v)
    }

    /// `O^c`, the measured nodes of the underlying computation.
    pub fn non_outputs(&self) -> NodeSet {
        self.vertices().filter(|v| !self.is_output(*v)).collect()
    }

    /// `I^c`, the nodes that are freshly prepared.
    pub fn non_inputs(&self) -> NodeSet {
        self.vertices().filter(|v| !self.is_input(*v)).collect()
    }

    /// Connected components, each as a sorted node set, ordered by smallest id.
    pub fn components(&self) -> Vec<NodeSet> {
        components(&self.adjacency)
    }
}

fn components(adjacency: &BTreeMap<NodeId, NodeSet>) -> Vec<NodeSet> {
    let mut seen = NodeSet::new();
    let mut out = Vec::new();
    for &start in adjacency.keys() {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = NodeSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(v) = queue.pop_front() {
            comp.insert(v);
            for &w in &adjacency[&v] {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// A causal flow: the correction map `f : O^c → I^c` and the induced partial
/// order, stored as strata in measurement order (earliest first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub f: BTreeMap<NodeId, NodeId>,
    pub layers: Vec<NodeSet>,
}

impl Flow {
    pub fn get(&self, v: NodeId) -> Option<NodeId> {
        self.f.get(&v).copied()
    }

    /// `f⁻¹(v)`, if `v` is in the image of `f`.
    pub fn inverse(&self, v: NodeId) -> Option<NodeId> {
        self.f.iter().find(|(_, &t)| t == v).map(|(&s, _)| s)
    }

    pub fn inverse_map(&self) -> BTreeMap<NodeId, NodeId> {
        self.f.iter().map(|(&s, &t)| (t, s)).collect()
    }

    pub fn layer_index(&self) -> BTreeMap<NodeId, usize> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |&v| (v, i)))
            .collect()
    }

    /// Nodes whose measurement sends a Z byproduct onto `v`:
    /// `{k ∈ O^c : k ≠ v, v ∈ N(f(k))}`.
    pub fn z_sources(&self, g: &OpenGraph, v: NodeId) -> NodeSet {
        self.f
            .iter()
            .filter(|(&k, &fk)| k != v && g.neighbors(fk).contains(&v))
            .map(|(&k, _)| k)
            .collect()
    }

    /// The precedence pairs `(earlier, later)` required by the flow axioms.
    pub fn precedences(&self, g: &OpenGraph) -> Vec<(NodeId, NodeId)> {
        let mut pairs = Vec::new();
        for (&j, &fj) in &self.f {
            pairs.push((j, fj));
            for &k in g.neighbors(fj) {
                if k != j {
                    pairs.push((j, k));
                }
            }
        }
        pairs
    }
}

/// Checks the flow axioms: `f` is defined exactly on `O^c` with values in
/// `I^c`, `(j, f(j))` is an edge, and both `f(j)` and every other neighbour of
/// `f(j)` lie in a strictly later layer than `j`. Layers must cover `V` once.
pub fn verify_flow(g: &OpenGraph, fl: &Flow) -> bool {
    let mut layer_of = BTreeMap::new();
    for (i, layer) in fl.layers.iter().enumerate() {
        for &v in layer {
            if !g.contains(v) || layer_of.insert(v, i).is_some() {
                return false;
            }
        }
    }
    if layer_of.len() != g.vertex_count() {
        return false;
    }
    let domain: NodeSet = fl.f.keys().copied().collect();
    if domain != g.non_outputs() {
        return false;
    }
    fl.f.iter().all(|(&j, &fj)| {
        g.contains(fj)
            && !g.is_input(fj)
            && g.has_edge(j, fj)
            && layer_of[&fj] > layer_of[&j]
            && g
                .neighbors(fj)
                .iter()
                .filter(|&&k| k != j)
                .all(|k| layer_of[k] > layer_of[&j])
    })
}

/// Polynomial causal-flow search: peel layers backwards from the outputs,
/// assigning `f(u) = v` whenever a processed non-input corrector `v` has a
/// single unprocessed neighbour `u`. Deterministic in the node ids.
pub fn find_flow(g: &OpenGraph) -> Option<Flow> {
    let mut processed: NodeSet = g.outputs().clone();
    let mut correctors: NodeSet = g.outputs().difference(g.inputs()).copied().collect();
    let mut f = BTreeMap::new();
    let mut depth_layers = vec![g.outputs().clone()];
    loop {
        let mut layer = NodeSet::new();
        let mut used = NodeSet::new();
        for &v in &correctors {
            let mut open = g.neighbors(v).iter().filter(|u| !processed.contains(u));
            if let (Some(&u), None) = (open.next(), open.next()) {
                if layer.insert(u) {
                    f.insert(u, v);
                    used.insert(v);
                }
            }
        }
        if layer.is_empty() {
            if processed.len() == g.vertex_count() {
                depth_layers.reverse();
                return Some(Flow {
                    f,
                    layers: depth_layers,
                });
            }
            return None;
        }
        processed.extend(layer.iter().copied());
        correctors = correctors
            .difference(&used)
            .copied()
            .chain(layer.iter().copied().filter(|v| !g.is_input(*v)))
            .collect();
        depth_layers.push(layer);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieBreak {
    #[default]
    AscendingId,
    DescendingId,
}

/// A linear order on all vertices, earliest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TotalOrder(Vec<NodeId>);

impl TotalOrder {
    pub fn new(order: Vec<NodeId>) -> Self {
        TotalOrder(order)
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.iter().copied()
    }

    pub fn positions(&self) -> BTreeMap<NodeId, usize> {
        self.0.iter().enumerate().map(|(i, &v)| (v, i)).collect()
    }

    /// Checks that the order is a permutation of `V` and respects every
    /// precedence the flow imposes.
    pub fn check_consistent(&self, g: &OpenGraph, fl: &Flow) -> Result<(), GraphError> {
        let pos = self.positions();
        if pos.len() != self.0.len()
            || pos.len() != g.vertex_count()
            || !g.vertices().all(|v| pos.contains_key(&v))
        {
            return Err(GraphError::OrderNotPermutation);
        }
        for (a, b) in fl.precedences(g) {
            if pos[&a] >= pos[&b] {
                return Err(GraphError::OrderInconsistent(a, b));
            }
        }
        Ok(())
    }

    /// Whether the order visits the flow's layers one after another.
    pub fn respects_layers(&self, fl: &Flow) -> bool {
        let layer = fl.layer_index();
        self.0
            .windows(2)
            .all(|w| match (layer.get(&w[0]), layer.get(&w[1])) {
                (Some(a), Some(b)) => a <= b,
                _ => false,
            })
    }
}

pub fn linearize(fl: &Flow, tie_break: TieBreak) -> TotalOrder {
    let mut order = Vec::new();
    for layer in &fl.layers {
        match tie_break {
            TieBreak::AscendingId => order.extend(layer.iter().copied()),
            TieBreak::DescendingId => order.extend(layer.iter().rev().copied()),
        }
    }
    TotalOrder(order)
}

/// A uniformly chosen topological order of the flow's precedence relation
/// (random Kahn). Not restricted to layer-by-layer orders.
pub fn random_linear_extension<R: Rng + ?Sized>(g: &OpenGraph, fl: &Flow, rng: &mut R) -> TotalOrder {
    let mut succ: BTreeMap<NodeId, NodeSet> = g.vertices().map(|v| (v, NodeSet::new())).collect();
    let mut indegree: BTreeMap<NodeId, usize> = g.vertices().map(|v| (v, 0)).collect();
    for (a, b) in fl.precedences(g) {
        if succ.get_mut(&a).unwrap().insert(b) {
            *indegree.get_mut(&b).unwrap() += 1;
        }
    }
    let mut ready: Vec<NodeId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&v, _)| v)
        .collect();
    let mut order = Vec::with_capacity(g.vertex_count());
    while !ready.is_empty() {
        let pick = rng.gen_range(0..ready.len());
        let v = ready.swap_remove(pick);
        order.push(v);
        for &w in &succ[&v] {
            let d = indegree.get_mut(&w).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(w);
            }
        }
    }
    TotalOrder(order)
}

/// `A(i) = N[i] ∖ (I ∪ ⋃_{j<i} N[j])` under the given total order.
pub fn assignment_set(g: &OpenGraph, order: &TotalOrder, i: NodeId) -> Result<NodeSet, GraphError> {
    if !g.contains(i) {
        return Err(GraphError::UnknownNode(i));
    }
    let mut taken: NodeSet = g.inputs().clone();
    for j in order.iter() {
        if j == i {
            return Ok(g
                .closed_neighborhood(i)
                .difference(&taken)
                .copied()
                .collect());
        }
        taken.extend(g.closed_neighborhood(j));
    }
    Err(GraphError::UnknownNode(i))
}

/// All assignment sets at once, keyed by node.
pub fn assignment_sets(g: &OpenGraph, order: &TotalOrder) -> BTreeMap<NodeId, NodeSet> {
    let mut taken: NodeSet = g.inputs().clone();
    let mut out = BTreeMap::new();
    for i in order.iter() {
        let n = g.closed_neighborhood(i);
        out.insert(i, n.difference(&taken).copied().collect());
        taken.extend(n);
    }
    out
}

/// Placeholder for one oracle query in the algorithm client's graph: the
/// algorithm nodes the oracle component attaches to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub attachments: NodeSet,
}

/// The algorithm client's graph before the oracle is plugged in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotGraph {
    pub vertices: NodeSet,
    pub edges: Vec<(NodeId, NodeId)>,
    pub inputs: NodeSet,
    pub outputs: NodeSet,
    #[serde(default)]
    pub quantum_inputs: NodeSet,
    #[serde(default)]
    pub quantum_outputs: NodeSet,
    #[serde(default)]
    pub slots: Vec<Slot>,
}

/// The oracle client's graph, one connected component per query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleGraph {
    pub vertices: NodeSet,
    pub edges: Vec<(NodeId, NodeId)>,
    pub inputs: NodeSet,
    pub outputs: NodeSet,
}

/// Replaces each slot of `alice` with one component of `oscar`, wiring the
/// `(oscar node, alice node)` pairs of `connection`. Inputs and outputs of the
/// result are those of both graphs minus the wired nodes. Fails unless the
/// joined graph has a flow.
pub fn join_graphs(
    alice: &SlotGraph,
    oscar: &OracleGraph,
    connection: &[(NodeId, NodeId)],
) -> Result<(OpenGraph, Flow), GraphError> {
    if let Some(&v) = alice.vertices.intersection(&oscar.vertices).next() {
        return Err(GraphError::OverlappingIds(v));
    }
    let mut oscar_adj: BTreeMap<NodeId, NodeSet> =
        oscar.vertices.iter().map(|&v| (v, NodeSet::new())).collect();
    for &(a, b) in &oscar.edges {
        for v in [a, b] {
            if !oscar_adj.contains_key(&v) {
                return Err(GraphError::UnknownNode(v));
            }
        }
        oscar_adj.get_mut(&a).unwrap().insert(b);
        oscar_adj.get_mut(&b).unwrap().insert(a);
    }
    let comps = if oscar.vertices.is_empty() {
        Vec::new()
    } else {
        components(&oscar_adj)
    };
    if comps.len() != alice.slots.len() {
        return Err(GraphError::ComponentCountMismatch {
            slots: alice.slots.len(),
            components: comps.len(),
        });
    }
    for &(o, a) in connection {
        if !oscar.vertices.contains(&o) || !alice.vertices.contains(&a) {
            return Err(GraphError::BadConnectionPair(o, a));
        }
    }
    let mut used_components = BTreeSet::new();
    for slot in &alice.slots {
        let pairs: Vec<_> = connection
            .iter()
            .filter(|(_, a)| slot.attachments.contains(a))
            .collect();
        let covered: NodeSet = pairs.iter().map(|(_, a)| *a).collect();
        if covered != slot.attachments || pairs.is_empty() {
            return Err(GraphError::SlotMismatch);
        }
        let comp_of = |o: NodeId| comps.iter().position(|c| c.contains(&o)).unwrap();
        let c = comp_of(pairs[0].0);
        if pairs.iter().any(|(o, _)| comp_of(*o) != c) || !used_components.insert(c) {
            return Err(GraphError::SlotMismatch);
        }
    }
    let claimed: NodeSet = alice.slots.iter().flat_map(|s| s.attachments.iter().copied()).collect();
    if connection.iter().any(|(_, a)| !claimed.contains(a)) {
        return Err(GraphError::SlotMismatch);
    }

    let wired: NodeSet = connection.iter().flat_map(|&(o, a)| [o, a]).collect();
    let vertices: Vec<NodeId> = alice.vertices.iter().chain(&oscar.vertices).copied().collect();
    let edges = alice
        .edges
        .iter()
        .chain(&oscar.edges)
        .chain(connection.iter())
        .copied();
    let inputs = alice.inputs.iter().chain(&oscar.inputs).filter(|v| !wired.contains(v)).copied();
    let outputs = alice
        .outputs
        .iter()
        .chain(&oscar.outputs)
        .filter(|v| !wired.contains(v))
        .copied();
    let g = OpenGraph::new(vertices, edges, inputs, outputs)?
        .with_oscar_nodes(oscar.vertices.iter().copied())?
        .with_quantum_io(alice.quantum_inputs.iter().copied(), alice.quantum_outputs.iter().copied())?;
    let flow = find_flow(&g).ok_or(GraphError::InvalidConnection)?;
    Ok((g, flow))
}

/// On-disk graph description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFile {
    pub vertices: Vec<NodeId>,
    pub edges: Vec<[NodeId; 2]>,
    #[serde(rename = "I")]
    pub inputs: Vec<NodeId>,
    #[serde(rename = "O")]
    pub outputs: Vec<NodeId>,
    #[serde(rename = "tilde_I", default)]
    pub quantum_inputs: Vec<NodeId>,
    #[serde(rename = "tilde_O", default)]
    pub quantum_outputs: Vec<NodeId>,
    #[serde(rename = "V_A", default)]
    pub alice_nodes: Option<Vec<NodeId>>,
    #[serde(rename = "V_O", default)]
    pub oscar_nodes: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_order: Option<Vec<NodeId>>,
    pub b: u8,
}

impl GraphFile {
    pub fn from_graph(g: &OpenGraph, order: Option<&TotalOrder>, b: u8) -> Self {
        GraphFile {
            vertices: g.vertices().collect(),
            edges: g.edges().map(|(a, c)| [a, c]).collect(),
            inputs: g.inputs().iter().copied().collect(),
            outputs: g.outputs().iter().copied().collect(),
            quantum_inputs: g.quantum_inputs().iter().copied().collect(),
            quantum_outputs: g.quantum_outputs().iter().copied().collect(),
            alice_nodes: Some(g.alice_nodes().iter().copied().collect()),
            oscar_nodes: g.oscar_nodes().iter().copied().collect(),
            total_order: order.map(|o| o.as_slice().to_vec()),
            b,
        }
    }

    pub fn to_graph(&self) -> Result<(OpenGraph, Option<TotalOrder>), GraphError> {
        let g = OpenGraph::new(
            self.vertices.iter().copied(),
            self.edges.iter().map(|e| (e[0], e[1])),
            self.inputs.iter().copied(),
            self.outputs.iter().copied(),
        )?
        .with_oscar_nodes(self.oscar_nodes.iter().copied())?
        .with_quantum_io(self.quantum_inputs.iter().copied(), self.quantum_outputs.iter().copied())?;
        if let Some(va) = &self.alice_nodes {
            let declared: NodeSet = va.iter().copied().collect();
            if &declared != g.alice_nodes() {
                let bad = declared
                    .symmetric_difference(g.alice_nodes())
                    .next()
                    .copied()
                    .unwrap_or_default();
                return Err(GraphError::OwnershipNotPartition(bad));
            }
        }
        Ok((g, self.total_order.clone().map(TotalOrder)))
    }
}

/// Random open graphs that are guaranteed to carry a flow, for property tests
/// and batch statistics.
pub mod random {
    use super::*;

    /// Builds `chains` disjoint paths over a shuffled id set of size `n`, then
    /// adds random extra edges as long as a flow survives. Chain heads become
    /// inputs (at least one), chain tails outputs.
    pub fn flow_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, extra_edge_attempts: usize) -> (OpenGraph, Flow) {
        assert!(n >= 1);
        let mut ids: Vec<NodeId> = (1..=n as NodeId).collect();
        ids.shuffle(rng);
        let max_chains = n.clamp(1, 3);
        let chains = rng.gen_range(1..=max_chains);
        let mut cuts: Vec<usize> = (1..n).collect();
        cuts.shuffle(rng);
        let mut cuts: Vec<usize> = cuts.into_iter().take(chains - 1).collect();
        cuts.sort_unstable();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(n);
        let mut edges = BTreeSet::new();
        let mut inputs = NodeSet::new();
        let mut outputs = NodeSet::new();
        for w in bounds.windows(2) {
            let chain = &ids[w[0]..w[1]];
            for p in chain.windows(2) {
                edges.insert((p[0].min(p[1]), p[0].max(p[1])));
            }
            if inputs.is_empty() || rng.gen_bool(0.75) {
                inputs.insert(chain[0]);
            }
            outputs.insert(*chain.last().unwrap());
        }
        let build = |edges: &BTreeSet<(NodeId, NodeId)>| {
            OpenGraph::new(ids.iter().copied(), edges.iter().copied(), inputs.clone(), outputs.clone())
                .expect("generated graph is well formed")
        };
        let mut g = build(&edges);
        let mut flow = find_flow(&g).expect("disjoint paths carry a flow");
        for _ in 0..extra_edge_attempts {
            let a = ids[rng.gen_range(0..n)];
            let b = ids[rng.gen_range(0..n)];
            if a == b || edges.contains(&(a.min(b), a.max(b))) {
                continue;
            }
            edges.insert((a.min(b), a.max(b)));
            let candidate = build(&edges);
            match find_flow(&candidate) {
                Some(fl) => {
                    g = candidate;
                    flow = fl;
                }
                None => {
                    edges.remove(&(a.min(b), a.max(b)));
                }
            }
        }
        (g, flow)
    }

    /// Any simple graph on `1..=n` with random non-empty I and O.
    pub fn open_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, edge_probability: f64) -> OpenGraph {
        let ids: Vec<NodeId> = (1..=n as NodeId).collect();
        let mut edges = Vec::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if rng.gen_bool(edge_probability) {
                    edges.push((a, b));
                }
            }
        }
        let pick = |rng: &mut R| {
            let mut s: NodeSet = ids.iter().copied().filter(|_| rng.gen_bool(0.3)).collect();
            if s.is_empty() {
                s.insert(ids[rng.gen_range(0..n)]);
            }
            s
        };
        let inputs = pick(rng);
        let outputs = pick(rng);
        OpenGraph::new(ids.iter().copied(), edges, inputs, outputs).expect("generated graph is well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> OpenGraph {
        OpenGraph::new([1, 2, 3], [(1, 2), (2, 3)], [1], [3]).unwrap()
    }

    fn set(v: &[NodeId]) -> NodeSet {
        v.iter().copied().collect()
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert_eq!(
            OpenGraph::new([1, 2], [(1, 1)], [1], [2]).unwrap_err(),
            GraphError::SelfLoop(1)
        );
        assert_eq!(
            OpenGraph::new([1, 2], [(1, 2), (2, 1)], [1], [2]).unwrap_err(),
            GraphError::DuplicateEdge(2, 1)
        );
        assert_eq!(
            OpenGraph::new([1, 2], [(1, 2)], [], [2]).unwrap_err(),
            GraphError::EmptyInputs
        );
        assert_eq!(
            OpenGraph::new([1, 2], [(1, 3)], [1], [2]).unwrap_err(),
            GraphError::UnknownNode(3)
        );
        let g = OpenGraph::new([1, 2], [(1, 2)], [1], [2]).unwrap();
        assert_eq!(
            g.clone().with_quantum_io([2], []).unwrap_err(),
            GraphError::QuantumInputNotInput(2)
        );
        assert_eq!(
            g.with_oscar_nodes([1]).unwrap().with_quantum_io([1], []).unwrap_err(),
            GraphError::OracleQuantumIo(1)
        );
    }

    #[test]
    fn path_flow() {
        let g = path();
        let fl = find_flow(&g).unwrap();
        assert_eq!(fl.f, BTreeMap::from([(1, 2), (2, 3)]));
        assert_eq!(fl.layers, vec![set(&[1]), set(&[2]), set(&[3])]);
        assert!(verify_flow(&g, &fl));

        let bad = Flow {
            f: BTreeMap::from([(1, 3)]),
            layers: vec![set(&[1]), set(&[2]), set(&[3])],
        };
        assert!(!verify_flow(&g, &bad));
    }

    #[test]
    fn degenerate_single_node() {
        let g = OpenGraph::new([1], [], [1], [1]).unwrap();
        let fl = find_flow(&g).unwrap();
        assert!(fl.f.is_empty());
        assert_eq!(fl.layers, vec![set(&[1])]);
        assert!(verify_flow(&g, &fl));
    }

    #[test]
    fn no_flow_when_outputs_cannot_correct() {
        // Two inputs feeding a single output: f cannot be injective.
        let g = OpenGraph::new([1, 2, 3], [(1, 3), (2, 3)], [1, 2], [3]).unwrap();
        assert!(find_flow(&g).is_none());
    }

    #[test]
    fn single_layer_linearizes_by_id() {
        let fl = Flow {
            f: BTreeMap::new(),
            layers: vec![set(&[3, 1, 2])],
        };
        assert_eq!(linearize(&fl, TieBreak::AscendingId).as_slice(), &[1, 2, 3]);
        assert_eq!(linearize(&fl, TieBreak::DescendingId).as_slice(), &[3, 2, 1]);
    }

    #[test]
    fn assignment_set_unknown_node() {
        let g = path();
        let order = linearize(&find_flow(&g).unwrap(), TieBreak::AscendingId);
        assert_eq!(assignment_set(&g, &order, 9).unwrap_err(), GraphError::UnknownNode(9));
        assert_eq!(assignment_set(&g, &order, 1).unwrap(), set(&[2]));
        assert_eq!(assignment_set(&g, &order, 2).unwrap(), set(&[3]));
        assert_eq!(assignment_set(&g, &order, 3).unwrap(), set(&[]));
    }

    #[test]
    fn inconsistent_order_detected() {
        let g = path();
        let fl = find_flow(&g).unwrap();
        let bad = TotalOrder::new(vec![2, 1, 3]);
        assert_eq!(bad.check_consistent(&g, &fl).unwrap_err(), GraphError::OrderInconsistent(1, 2));
        let short = TotalOrder::new(vec![1, 2]);
        assert_eq!(short.check_consistent(&g, &fl).unwrap_err(), GraphError::OrderNotPermutation);
    }

    #[test]
    fn graph_file_round_trip() {
        let g = path().with_oscar_nodes([2]).unwrap().with_quantum_io([1], [3]).unwrap();
        let file = GraphFile::from_graph(&g, None, 3);
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains(r#""I":[1]"#) && json.contains(r#""tilde_O":[3]"#));
        let back: GraphFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_graph().unwrap().0, g);
    }

    #[test]
    fn random_flow_graphs_have_flows() {
        use rand::SeedableRng;
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for n in 1..=12 {
            let (g, fl) = random::flow_graph(&mut rng, n, 2 * n);
            assert!(verify_flow(&g, &fl));
        }
    }
}
