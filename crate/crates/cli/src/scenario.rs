//! Scenario files and the built-in scenarios.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use boqc::angles::DyadicAngle;
use boqc::builtin;
use boqc::calculus::Angles;
use boqc::graphstate::{find_flow, linearize, GraphFile, NodeId, NodeSet, OpenGraph, TieBreak, TotalOrder};
use boqc::protocol::{
    AliceInput, AngleOffset, BobStrategy, ConstantReport, Hoarding, HonestBob, IoMode, OscarInput, ProtocolSetup,
    PublicInfo, RandomReport, Randomness, Variant,
};
use boqc::qsim::{QuantumRegister, QubitId};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const BUILTINS: [&str; 3] = ["grover2", "lazy7", "path"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    Path(PathBuf),
    Inline(GraphFile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    pub graph: GraphSource,
    /// Algorithm client's angles as integers `k` (angle `kπ/2^(b-1)`); nodes
    /// left out get `k = id mod 2^b`.
    #[serde(default)]
    pub phi: BTreeMap<NodeId, u32>,
    /// Oracle client's angles, same convention.
    #[serde(default)]
    pub psi: BTreeMap<NodeId, u32>,
    #[serde(default)]
    pub classical_input: BTreeMap<NodeId, u8>,
    #[serde(default)]
    pub io_mode: Option<IoMode>,
    #[serde(default)]
    pub protocol: Option<Variant>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Random quantum input with this many reference qubits; `|+⟩` on every
    /// input when absent.
    #[serde(default)]
    pub random_input_references: Option<u32>,
    #[serde(default)]
    pub bob: Option<String>,
    #[serde(default)]
    pub randomness: Option<Randomness>,
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub exhaustive: Option<bool>,
}

/// A scenario after validation.
pub struct Loaded {
    pub name: String,
    pub file: ScenarioFile,
    pub setup: ProtocolSetup,
}

pub fn parse_bob(s: &str) -> Result<Arc<dyn BobStrategy>, String> {
    let (head, arg) = match s.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (s, None),
    };
    let num = |a: Option<&str>, default: u64| -> Result<u64, String> {
        a.map_or(Ok(default), |x| x.parse().map_err(|_| format!("bad number {x:?} in bob {s:?}")))
    };
    Ok(match head {
        "honest" => Arc::new(HonestBob),
        "constant" => Arc::new(ConstantReport((num(arg, 0)? & 1) as u8)),
        "angle-offset" => Arc::new(AngleOffset),
        "random-report" => Arc::new(RandomReport { seed: num(arg, 0)? }),
        "hoarding" => {
            let nodes: Result<NodeSet, _> = arg.unwrap_or("").split(',').filter(|x| !x.is_empty()).map(NodeId::from_str).collect();
            Arc::new(Hoarding {
                nodes: nodes.map_err(|_| format!("bad node list in bob {s:?}"))?,
            })
        }
        _ => {
            return Err(format!(
                "unknown bob {s:?}; expected honest, constant[:bit], angle-offset, random-report[:seed] or hoarding:ids"
            ))
        }
    })
}

fn builtin_file(name: &str) -> Option<ScenarioFile> {
    let (g, order, b, io, protocol) = match name {
        "grover2" => {
            let (public, _) = builtin::grover(4).ok()?;
            (public.graph, public.order, 4, IoMode::Cq, Variant::Boqc)
        }
        "lazy7" => {
            let (g, f) = builtin::lazy_example();
            let order = linearize(&f, TieBreak::AscendingId);
            (g, Some(order), 2, IoMode::Cq, Variant::Boqco)
        }
        "path" => {
            let (g, f) = builtin::path_graph();
            let order = linearize(&f, TieBreak::AscendingId);
            (g, Some(order), 2, IoMode::Cc, Variant::Boqc)
        }
        _ => return None,
    };
    Some(ScenarioFile {
        name: Some(name.to_string()),
        graph: GraphSource::Inline(GraphFile::from_graph(&g, order.as_ref(), b)),
        phi: BTreeMap::new(),
        psi: BTreeMap::new(),
        classical_input: BTreeMap::new(),
        io_mode: Some(io),
        protocol: Some(protocol),
        seed: None,
        random_input_references: None,
        bob: None,
        randomness: None,
        shots: None,
        exhaustive: None,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::other(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

/// Reads a graph file, or a built-in name.
pub fn load_graph(spec: &str) -> Result<(OpenGraph, Option<TotalOrder>, u8), Failure> {
    if !Path::new(spec).exists() {
        if let Some(f) = builtin_file(spec) {
            if let GraphSource::Inline(gf) = f.graph {
                let (g, order) = gf.to_graph().map_err(Failure::from)?;
                return Ok((g, order, gf.b));
            }
        }
    }
    let gf: GraphFile = read_json(Path::new(spec))?;
    let (g, order) = gf.to_graph().map_err(Failure::from)?;
    Ok((g, order, gf.b))
}

/// Reads a scenario file, or a built-in name.
pub fn load_scenario(spec: &str) -> Result<ScenarioFile, Failure> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(f) = builtin_file(spec) {
            return Ok(f);
        }
        return Err(Failure::other(format!("{spec}: no such file (built-ins: {})", BUILTINS.join(", "))));
    }
    let mut file: ScenarioFile = read_json(path)?;
    if let GraphSource::Path(p) = &file.graph {
        let resolved = if p.is_relative() {
            path.parent().unwrap_or(Path::new(".")).join(p)
        } else {
            p.clone()
        };
        file.graph = GraphSource::Inline(read_json(&resolved)?);
    }
    if file.name.is_none() {
        file.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    Ok(file)
}

fn angles(
    given: &BTreeMap<NodeId, u32>,
    owned: &NodeSet,
    measured: &NodeSet,
    b: u8,
) -> Result<Angles, Failure> {
    let defaults = builtin::placeholder_angles(owned.intersection(measured).copied(), b);
    let mut out = Angles::new();
    for (&v, &k) in given {
        out.insert(v, DyadicAngle::new(k, b).map_err(|e| Failure::validation(format!("angle of node {v}: {e}")))?);
    }
    for (v, a) in defaults {
        out.entry(v).or_insert(a);
    }
    Ok(out)
}

/// Validates a scenario, with the command-line overrides applied.
pub fn build(file: ScenarioFile, io: Option<IoMode>) -> Result<Loaded, Failure> {
    let GraphSource::Inline(gf) = &file.graph else {
        return Err(Failure::validation("graph path was not resolved".into()));
    };
    let (g, order) = gf.to_graph().map_err(Failure::from)?;
    let b = gf.b;
    let flow = find_flow(&g).ok_or_else(|| Failure::validation("graph has no flow".into()))?;
    let order = order.unwrap_or_else(|| linearize(&flow, TieBreak::AscendingId));
    let mut public = PublicInfo::new(g, &flow, Some(order), b).map_err(Failure::from)?;
    if let Some(mode) = io.or(file.io_mode) {
        public = public.with_io_mode(mode).map_err(Failure::from)?;
    }
    let g = &public.graph;
    let measured: NodeSet = g.vertices().filter(|v| !g.quantum_outputs().contains(v)).collect();
    let phi = angles(&file.phi, g.alice_nodes(), &measured, b)?;
    let psi = angles(&file.psi, g.oscar_nodes(), &measured, b)?;
    let quantum = if g.quantum_inputs().is_empty() {
        None
    } else if let Some(refs) = file.random_input_references {
        let labels = g
            .quantum_inputs()
            .iter()
            .map(|&v| QubitId::Node(v))
            .chain((0..refs).map(QubitId::Reference))
            .collect();
        let mut rng = StdRng::seed_from_u64(file.seed.unwrap_or(0));
        Some(QuantumRegister::random(labels, &mut rng).map_err(|e| Failure::validation(e.to_string()))?)
    } else {
        let mut reg = QuantumRegister::new();
        for &v in g.quantum_inputs() {
            reg.alloc_plus(QubitId::Node(v), DyadicAngle::zero(b).map_err(|e| Failure::validation(e.to_string()))?)
                .map_err(|e| Failure::validation(e.to_string()))?;
        }
        Some(reg)
    };
    let alice = AliceInput {
        flow,
        phi,
        classical: file.classical_input.clone(),
        quantum,
    };
    let setup = ProtocolSetup::new(public, alice, OscarInput { psi }).map_err(Failure::from)?;
    Ok(Loaded {
        name: file.name.clone().unwrap_or_else(|| "scenario".into()),
        file,
        setup,
    })
}
