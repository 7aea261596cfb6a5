//! Bob's view of the protocol collected over every key assignment (or over
//! sampled runs), and the distance between the real protocol and the ideal
//! resource driven by the simulator.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::graphstate::NodeId;
use crate::protocol::{
    explore, explore_all, run_protocol, BobStrategy, BobTranscript, ChoiceKind, ChoicePoint, IoMode, ProtocolError,
    ProtocolSetup, Randomness, RunOutput, RunState, Scenario, Seeds, Variant, Visit, World, MAX_EXHAUSTIVE_LEAVES,
};
use crate::qsim::{CqState, DensityMatrix, QubitId};

/// Largest joint state of Bob's qubits kept per receipt batch.
pub const JOINT_QUBIT_CAP: usize = 12;

/// Distances at or below this count as equal in exhaustive mode.
pub const VIEW_TOLERANCE: f64 = 1e-9;

/// Sampled mode passes when every δ chi-square p-value is at least this.
pub const SAMPLED_P_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Enumeration {
    Exhaustive,
    Sampled { shots: u64, seed: u64 },
}

/// Everything crossing Bob's interface, aggregated over the runs of one
/// scenario, together with Alice's output.
#[derive(Debug, Clone)]
pub struct BobView {
    pub variant: Variant,
    pub world: World,
    pub bob: String,
    pub enumeration: Enumeration,
    pub precision: u8,
    pub leaves: u64,
    pub live_peak: usize,
    /// Per receipt batch, the qubits Bob holds keyed by his classical view so
    /// far; `None` above [`JOINT_QUBIT_CAP`] and in sampled mode.
    pub snapshots: Vec<Option<CqState<u128>>>,
    /// Averaged state of each client-sent qubit as Bob receives it.
    pub received: BTreeMap<NodeId, DensityMatrix>,
    /// Marginal distribution of each `δ` over `Ω`.
    pub deltas: BTreeMap<NodeId, Vec<f64>>,
    /// Leaves per `δ` value; only meaningful for sampled runs.
    pub delta_counts: BTreeMap<NodeId, Vec<u64>>,
    /// Final view and Alice's classical output, with Alice's quantum output
    /// and whatever Bob kept.
    pub joint: CqState<(u128, u64)>,
}

impl BobView {
    /// Distribution of Bob's final classical view alone.
    pub fn classical(&self) -> HashMap<u128, f64> {
        let mut out = HashMap::new();
        for ((view, _), m) in &self.joint.blocks {
            *out.entry(*view).or_default() += m.trace().re;
        }
        out
    }

    /// Largest trace distance of a received qubit from `I/2`.
    pub fn max_pad_deviation(&self) -> f64 {
        self.received
            .values()
            .map(|rho| rho.trace_distance(&DensityMatrix::maximally_mixed(rho.labels.clone())))
            .fold(0.0, f64::max)
    }

    /// Whether every `δ` marginal is uniform within `tol`.
    pub fn deltas_uniform(&self, tol: f64) -> bool {
        let u = 1.0 / f64::from(1u32 << self.precision);
        self.deltas.values().all(|h| h.iter().all(|p| (p - u).abs() <= tol))
    }

    /// Chi-square goodness-of-fit p-value of each `δ` count histogram
    /// against the uniform distribution.
    pub fn delta_p_values(&self) -> BTreeMap<NodeId, f64> {
        self.delta_counts.iter().map(|(&v, c)| (v, uniform_p_value(c))).collect()
    }
}

pub fn uniform_p_value(counts: &[u64]) -> f64 {
    let n = counts.len();
    let total: u64 = counts.iter().sum();
    if n < 2 || total == 0 {
        return 1.0;
    }
    let e = total as f64 / n as f64;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let chi = ChiSquared::new((n - 1) as f64).expect("positive degrees of freedom");
    1.0 - chi.cdf(stat)
}

struct Collector<'a> {
    sc: &'a Scenario,
    view: BobView,
    snapshot_labels: Vec<Option<Vec<QubitId>>>,
    measured: Vec<(usize, NodeId)>,
}

impl<'a> Collector<'a> {
    fn new(sc: &'a Scenario, enumeration: Enumeration) -> Self {
        let omega = 1usize << sc.precision();
        let measured: Vec<(usize, NodeId)> = sc
            .nodes()
            .iter()
            .enumerate()
            .filter(|(_, v)| sc.measured_nodes().contains(v))
            .map(|(i, &v)| (i, v))
            .collect();
        Collector {
            sc,
            view: BobView {
                variant: sc.variant,
                world: sc.world,
                bob: sc.bob().name(),
                enumeration,
                precision: sc.precision(),
                leaves: 0,
                live_peak: 0,
                snapshots: vec![None; sc.snapshot_count()],
                received: BTreeMap::new(),
                deltas: measured.iter().map(|&(_, v)| (v, vec![0.0; omega])).collect(),
                delta_counts: measured.iter().map(|&(_, v)| (v, vec![0; omega])).collect(),
                joint: CqState::new(Vec::new()),
            },
            snapshot_labels: vec![None; sc.snapshot_count()],
            measured,
        }
    }

    fn visit(&mut self, v: Visit, st: &RunState, w: f64) -> Result<(), ProtocolError> {
        let sc = self.sc;
        let history = st.view();
        if history.overflow {
            return Err(ProtocolError::HistoryTooLong);
        }
        match v {
            Visit::Snapshot(k) => {
                let reg = st.register();
                for node in sc.batch_nodes(k) {
                    let q = QubitId::Node(node);
                    let rho = reg.reduced_density(&[q])?;
                    self.view
                        .received
                        .entry(node)
                        .or_insert_with(|| DensityMatrix::zeros(vec![q]))
                        .add_weighted(&rho, w);
                }
                let labels = st.bob_labels(sc);
                match &self.snapshot_labels[k] {
                    None => self.snapshot_labels[k] = Some(labels.clone()),
                    Some(l) if *l != labels => {
                        return Err(ProtocolError::StructuralMismatch(format!(
                            "bob holds different qubits at receipt {k}"
                        )))
                    }
                    Some(_) => {}
                }
                if self.view.enumeration == Enumeration::Exhaustive && labels.len() <= JOINT_QUBIT_CAP {
                    let rho = reg.reduced_density(&labels)?;
                    self.view.snapshots[k]
                        .get_or_insert_with(|| CqState::new(labels))
                        .add_density(history.bits, &rho.data, w);
                }
            }
            Visit::Leaf => {
                self.view.leaves += 1;
                self.view.live_peak = self.view.live_peak.max(st.live_peak());
                let nodes = st.node_states();
                for &(i, node) in &self.measured {
                    let d = nodes[i].delta.k() as usize;
                    self.view.deltas.get_mut(&node).expect("measured node")[d] += w;
                    self.view.delta_counts.get_mut(&node).expect("measured node")[d] += 1;
                }
                let mut labels = sc.alice_labels();
                labels.extend(st.bob_labels(sc));
                if self.view.leaves == 1 {
                    self.view.joint = CqState::new(labels.clone());
                } else if self.view.joint.labels != labels {
                    return Err(ProtocolError::StructuralMismatch(
                        "final qubits differ between branches".into(),
                    ));
                }
                let key = (history.bits, st.alice_bits(sc));
                if labels.is_empty() {
                    let one = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
                    self.view.joint.add_density(key, &one, w);
                } else {
                    let rho = st.register().reduced_density(&labels)?;
                    self.view.joint.add_density(key, &rho.data, w);
                }
            }
        }
        Ok(())
    }
}

/// Collects Bob's view of `sc` over the whole choice tree or over `shots`
/// sampled runs.
pub fn collect_view(sc: &Scenario, enumeration: Enumeration) -> Result<BobView, ProtocolError> {
    let mut c = Collector::new(sc, enumeration);
    match enumeration {
        Enumeration::Exhaustive => explore_all(sc, &mut |v, st| c.visit(v, st, st.weight()))?,
        Enumeration::Sampled { shots, seed } => {
            let mut rng = StdRng::seed_from_u64(seed);
            let w = 1.0 / shots as f64;
            for _ in 0..shots {
                explore(sc, &mut |cp| Some(cp.options.sample(&mut rng)), &mut |v, st| c.visit(v, st, w))?;
            }
        }
    }
    Ok(c.view)
}

pub fn real_view(
    setup: &ProtocolSetup,
    variant: Variant,
    bob: Arc<dyn BobStrategy>,
    enumeration: Enumeration,
    randomness: Randomness,
) -> Result<BobView, ProtocolError> {
    let sc = setup.scenario(variant, World::Real, bob)?.with_randomness(randomness);
    collect_view(&sc, enumeration)
}

pub fn ideal_view(
    setup: &ProtocolSetup,
    variant: Variant,
    bob: Arc<dyn BobStrategy>,
    enumeration: Enumeration,
) -> Result<BobView, ProtocolError> {
    let sc = setup.scenario(variant, World::Ideal, bob)?;
    collect_view(&sc, enumeration)
}

/// Exact count of key assignments giving each `δ`, with every measurement
/// outcome fixed to 0.
pub fn delta_counts(sc: &Scenario) -> Result<BTreeMap<NodeId, Vec<u64>>, ProtocolError> {
    let estimate = sc.key_space();
    if estimate > MAX_EXHAUSTIVE_LEAVES {
        return Err(ProtocolError::TooManyLeaves {
            estimate,
            cap: MAX_EXHAUSTIVE_LEAVES,
        });
    }
    let sc = sc.clone().with_classical_only(true);
    let mut c = Collector::new(&sc, Enumeration::Exhaustive);
    let mut fix = |cp: &ChoicePoint| match cp.kind {
        ChoiceKind::BobOutcome | ChoiceKind::IdealT | ChoiceKind::IdealR => Some(0),
        _ => None,
    };
    explore(&sc, &mut fix, &mut |v, st| match v {
        Visit::Leaf => {
            let nodes = st.node_states();
            for &(i, node) in &c.measured {
                c.view.delta_counts.get_mut(&node).expect("measured node")[nodes[i].delta.k() as usize] += 1;
            }
            Ok(())
        }
        Visit::Snapshot(_) => Ok(()),
    })?;
    Ok(c.view.delta_counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViewDistance {
    pub classical_tvd: f64,
    pub quantum_trace_distance: f64,
}

impl ViewDistance {
    pub fn within(&self, tol: f64) -> bool {
        self.classical_tvd <= tol && self.quantum_trace_distance <= tol
    }
}

/// Total variation distance of Bob's classical views, and the largest trace
/// distance between the classical-quantum states at any receipt or at the end.
pub fn compare_views(real: &BobView, ideal: &BobView) -> Result<ViewDistance, ProtocolError> {
    let mismatch = |m: &str| Err(ProtocolError::StructuralMismatch(m.into()));
    if real.precision != ideal.precision {
        return mismatch("views at different precision");
    }
    if real.snapshots.len() != ideal.snapshots.len() {
        return mismatch("different number of receipt batches");
    }
    if real.joint.labels != ideal.joint.labels {
        return mismatch("different final qubits");
    }
    if real.deltas.keys().ne(ideal.deltas.keys()) {
        return mismatch("different measured nodes");
    }
    let mut quantum = real.joint.trace_distance(&ideal.joint);
    for (a, b) in real.snapshots.iter().zip(&ideal.snapshots) {
        match (a, b) {
            (Some(a), Some(b)) if a.labels == b.labels => quantum = quantum.max(a.trace_distance(b)),
            (None, None) => {}
            _ => return mismatch("different qubits at a receipt"),
        }
    }
    let x = real.classical();
    let y = ideal.classical();
    let mut tvd = 0.0;
    for (k, p) in &x {
        tvd += (p - y.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, q) in &y {
        if !x.contains_key(k) {
            tvd += q.abs();
        }
    }
    Ok(ViewDistance {
        classical_tvd: tvd / 2.0,
        quantum_trace_distance: quantum,
    })
}

#[derive(Debug, Clone)]
pub struct WorldComparison {
    pub real: BobView,
    pub ideal: BobView,
    pub distance: ViewDistance,
}

/// Real protocol (with the given randomness) against the ideal resource
/// with the simulator, for the same Bob.
pub fn compare_worlds(
    setup: &ProtocolSetup,
    variant: Variant,
    bob: Arc<dyn BobStrategy>,
    enumeration: Enumeration,
    randomness: Randomness,
) -> Result<WorldComparison, ProtocolError> {
    let real = real_view(setup, variant, bob.clone(), enumeration, randomness)?;
    let ideal = ideal_view(setup, variant, bob, enumeration)?;
    let distance = compare_views(&real, &ideal)?;
    Ok(WorldComparison { real, ideal, distance })
}

/// One run of the ideal resource with the simulator in front of Bob.
pub fn run_simulator_boqc(
    setup: &ProtocolSetup,
    bob: Arc<dyn BobStrategy>,
    seeds: &Seeds,
) -> Result<(RunOutput, BobTranscript), ProtocolError> {
    let out = run_protocol(setup, Variant::Boqc, World::Ideal, bob, seeds, Randomness::Uniform)?;
    let view = out.transcript.bob_view();
    Ok((out, view))
}

/// [`run_simulator_boqc`] on the lazy schedule.
pub fn run_simulator_boqco(
    setup: &ProtocolSetup,
    bob: Arc<dyn BobStrategy>,
    seeds: &Seeds,
) -> Result<(RunOutput, BobTranscript), ProtocolError> {
    let out = run_protocol(setup, Variant::Boqco, World::Ideal, bob, seeds, Randomness::Uniform)?;
    let view = out.transcript.bob_view();
    Ok((out, view))
}

#[derive(Debug, Clone, Serialize)]
pub struct BlindnessReport {
    pub variant: Variant,
    pub io_mode: IoMode,
    pub bob: String,
    pub enumeration: Enumeration,
    pub randomness: Randomness,
    pub precision: u8,
    pub leaves_real: u64,
    pub leaves_ideal: u64,
    pub classical_tvd: f64,
    pub quantum_trace_distance: f64,
    pub tolerance: f64,
    pub delta_histograms: BTreeMap<NodeId, Vec<f64>>,
    pub delta_uniform: bool,
    pub delta_chi_square_p: Option<BTreeMap<NodeId, f64>>,
    pub received_states: BTreeMap<NodeId, DensityMatrix>,
    pub max_pad_deviation: f64,
    pub live_peak_real: usize,
    pub live_peak_ideal: usize,
    pub pass: bool,
}

pub fn blindness_report(
    setup: &ProtocolSetup,
    variant: Variant,
    bob: Arc<dyn BobStrategy>,
    enumeration: Enumeration,
    randomness: Randomness,
) -> Result<BlindnessReport, ProtocolError> {
    let cmp = compare_worlds(setup, variant, bob, enumeration, randomness)?;
    let real = &cmp.real;
    let (uniform, p_values, pass) = match enumeration {
        Enumeration::Exhaustive => {
            let u = real.deltas_uniform(1e-12);
            (u, None, cmp.distance.within(VIEW_TOLERANCE))
        }
        Enumeration::Sampled { .. } => {
            let p = real.delta_p_values();
            let ok = p.values().all(|&x| x >= SAMPLED_P_THRESHOLD);
            (ok, Some(p), ok)
        }
    };
    Ok(BlindnessReport {
        variant,
        io_mode: setup.io_mode(),
        bob: real.bob.clone(),
        enumeration,
        randomness,
        precision: real.precision,
        leaves_real: real.leaves,
        leaves_ideal: cmp.ideal.leaves,
        classical_tvd: cmp.distance.classical_tvd,
        quantum_trace_distance: cmp.distance.quantum_trace_distance,
        tolerance: VIEW_TOLERANCE,
        delta_histograms: real.deltas.clone(),
        delta_uniform: uniform,
        delta_chi_square_p: p_values,
        received_states: real.received.clone(),
        max_pad_deviation: real.max_pad_deviation(),
        live_peak_real: real.live_peak,
        live_peak_ideal: cmp.ideal.live_peak,
        pass,
    })
}

#[cfg(test)]
mod tests;
