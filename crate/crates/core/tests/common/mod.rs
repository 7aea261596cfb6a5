//! Independent oracles for the integration suites: brute-force flow
//! existence and a direct sum-over-assignments formula for the isometry.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use boqc::angles::DyadicAngle;
use boqc::calculus::Angles;
use boqc::graphstate::{random, Flow, NodeId, OpenGraph};
use boqc::qsim::{QuantumRegister, QubitId};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::Rng;

/// Whether some `f : O^c → I^c` along edges makes the precedence relation
/// `j ≺ f(j)`, `j ≺ k` for `k ∈ N(f(j)) ∖ {j}` acyclic. Tries every `f`.
pub fn brute_force_has_flow(g: &OpenGraph) -> bool {
    let measured: Vec<NodeId> = g.non_outputs().into_iter().collect();
    let options: Vec<Vec<NodeId>> = measured
        .iter()
        .map(|&j| g.neighbors(j).iter().copied().filter(|&v| !g.is_input(v)).collect())
        .collect();
    if options.iter().any(Vec::is_empty) {
        return false;
    }
    let mut pick = vec![0usize; measured.len()];
    loop {
        let f: BTreeMap<NodeId, NodeId> = measured
            .iter()
            .zip(&pick)
            .zip(&options)
            .map(|((&j, &p), o)| (j, o[p]))
            .collect();
        if acyclic(g, &f) {
            return true;
        }
        let mut i = 0;
        loop {
            if i == pick.len() {
                return false;
            }
            pick[i] += 1;
            if pick[i] < options[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

fn acyclic(g: &OpenGraph, f: &BTreeMap<NodeId, NodeId>) -> bool {
    let mut succ: BTreeMap<NodeId, BTreeSet<NodeId>> = g.vertices().map(|v| (v, BTreeSet::new())).collect();
    for (&j, &fj) in f {
        succ.get_mut(&j).unwrap().insert(fj);
        for &k in g.neighbors(fj) {
            if k != j {
                succ.get_mut(&j).unwrap().insert(k);
            }
        }
    }
    if succ.iter().any(|(v, s)| s.contains(v)) {
        return false;
    }
    let mut indeg: BTreeMap<NodeId, usize> = g.vertices().map(|v| (v, 0)).collect();
    for s in succ.values() {
        for w in s {
            *indeg.get_mut(w).unwrap() += 1;
        }
    }
    let mut ready: Vec<NodeId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&v, _)| v).collect();
    let mut seen = 0;
    while let Some(v) = ready.pop() {
        seen += 1;
        for w in &succ[&v] {
            let d = indeg.get_mut(w).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(*w);
            }
        }
    }
    seen == g.vertex_count()
}

/// `V[y, x] = 2^{-|I^c|/2} Σ_z (−1)^{Σ_E z_a z_b} Π_{v ∈ O^c} e^{−iθ_v z_v}`
/// over assignments `z` with `z|_I = x`, `z|_O = y`. Bit `j` of `x` (`y`) is
/// the `j`-th input (output) in ascending id.
pub fn isometry_oracle(g: &OpenGraph, theta: &Angles) -> DMatrix<Complex64> {
    let verts: Vec<NodeId> = g.vertices().collect();
    let idx: BTreeMap<NodeId, usize> = verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let inputs: Vec<usize> = g.inputs().iter().map(|v| idx[v]).collect();
    let outputs: Vec<usize> = g.outputs().iter().map(|v| idx[v]).collect();
    let edges: Vec<(usize, usize)> = g.edges().map(|(a, b)| (idx[&a], idx[&b])).collect();
    let measured: Vec<(usize, f64)> = g
        .non_outputs()
        .iter()
        .map(|v| (idx[v], theta[v].to_radians()))
        .collect();
    let non_inputs = verts.len() - inputs.len();
    let scale = 2f64.powf(-(non_inputs as f64) / 2.0);
    let mut m = DMatrix::<Complex64>::zeros(1 << outputs.len(), 1 << inputs.len());
    for z in 0usize..1 << verts.len() {
        let bit = |i: usize| (z >> i) & 1;
        let x = inputs.iter().enumerate().fold(0, |acc, (j, &i)| acc | bit(i) << j);
        let y = outputs.iter().enumerate().fold(0, |acc, (j, &i)| acc | bit(i) << j);
        let parity = edges.iter().map(|&(a, b)| bit(a) & bit(b)).sum::<usize>() & 1;
        let phase: f64 = measured.iter().map(|&(i, th)| -th * bit(i) as f64).sum();
        let sign = if parity == 1 { -1.0 } else { 1.0 };
        m[(y, x)] += Complex64::from_polar(sign * scale, phase);
    }
    m
}

/// `(V ⊗ I)|ψ⟩` for a register over the inputs and reference qubits; the
/// result is ordered outputs ascending, then references ascending.
pub fn apply_isometry(g: &OpenGraph, v: &DMatrix<Complex64>, input: &QuantumRegister) -> DVector<Complex64> {
    let refs = references(input);
    let mut order: Vec<QubitId> = g.inputs().iter().map(|&i| QubitId::Node(i)).collect();
    order.extend(refs.iter().copied());
    let amps = input.state_in_order(&order).expect("input register over inputs and references");
    let din = 1usize << g.inputs().len();
    let psi = DMatrix::from_column_slice(din, amps.len() / din, &amps);
    let out = v * psi;
    DVector::from_column_slice(out.as_slice())
}

pub fn references(reg: &QuantumRegister) -> Vec<QubitId> {
    let mut r: Vec<QubitId> = reg
        .labels()
        .iter()
        .copied()
        .filter(|l| matches!(l, QubitId::Reference(_)))
        .collect();
    r.sort();
    r
}

pub fn random_angles(g: &OpenGraph, b: u8, rng: &mut StdRng) -> Angles {
    g.non_outputs()
        .into_iter()
        .map(|v| (v, DyadicAngle::new(rng.gen_range(0..1u32 << b), b).unwrap()))
        .collect()
}

/// A random pure state on the graph's inputs and `refs` reference qubits.
pub fn random_input(g: &OpenGraph, refs: u32, rng: &mut StdRng) -> QuantumRegister {
    let labels = g
        .inputs()
        .iter()
        .map(|&v| QubitId::Node(v))
        .chain((0..refs).map(QubitId::Reference))
        .collect();
    QuantumRegister::random(labels, rng).unwrap()
}

/// A flow graph with `1..=max_n` nodes and a few extra edges.
pub fn random_flow_graph(rng: &mut StdRng, max_n: usize) -> (OpenGraph, Flow) {
    let n = rng.gen_range(1..=max_n);
    random::flow_graph(rng, n, 2 * n)
}

/// Graphs for the flow-existence comparison, mixing arbitrary open graphs with
/// graphs known to carry a flow.
pub fn random_open_graph(rng: &mut StdRng, max_n: usize) -> OpenGraph {
    if rng.gen_bool(0.5) {
        random_flow_graph(rng, max_n).0
    } else {
        let n = rng.gen_range(1..=max_n);
        let p = rng.gen_range(0.15..0.6);
        random::open_graph(rng, n, p)
    }
}

pub fn fidelity(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
    a.dotc(b).norm_sqr() / (a.norm_squared() * b.norm_squared())
}
