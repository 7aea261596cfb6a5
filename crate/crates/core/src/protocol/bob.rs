//! Server behaviours. Every hook is a deterministic function of what Bob has
//! seen so far, so the real and the ideal world can be paired branch by branch.

use std::fmt;

use crate::angles::DyadicAngle;
use crate::graphstate::{NodeId, NodeSet};

/// Bob's classical history packed little-endian: per measurement round the
/// angle `δ` (b bits), then the two reported bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackedBits {
    pub bits: u128,
    pub len: u32,
    pub overflow: bool,
}

impl PackedBits {
    pub fn push(&mut self, width: u32, value: u64) {
        if self.overflow || self.len + width > 128 {
            self.overflow = true;
            return;
        }
        self.bits |= u128::from(value) << self.len;
        self.len += width;
    }
}

pub trait BobStrategy: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// Angle Bob actually measures qubit `node` at; `None` keeps the qubit.
    fn measurement_angle(&self, _node: NodeId, delta: DyadicAngle, _history: PackedBits) -> Option<DyadicAngle> {
        Some(delta)
    }

    /// Bits reported to Alice and to Oscar.
    fn report(&self, _node: NodeId, _delta: DyadicAngle, outcome: Option<u8>, _history: PackedBits) -> [u8; 2] {
        let s = outcome.unwrap_or(0);
        [s, s]
    }

    /// Pauli `X^x Z^z` applied to an output qubit before returning it.
    fn output_tamper(&self, _node: NodeId, _history: PackedBits) -> (u8, u8) {
        (0, 0)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HonestBob;

impl BobStrategy for HonestBob {
    fn name(&self) -> String {
        "honest".into()
    }
}

/// Reports the same bit every round, whatever it measured.
#[derive(Debug, Clone, Copy)]
pub struct ConstantReport(pub u8);

impl BobStrategy for ConstantReport {
    fn name(&self) -> String {
        format!("constant-{}", self.0)
    }

    fn report(&self, _: NodeId, _: DyadicAngle, _: Option<u8>, _: PackedBits) -> [u8; 2] {
        [self.0 & 1, self.0 & 1]
    }
}

/// Measures at `δ + π` and reports honestly.
#[derive(Debug, Clone, Copy, Default)]
pub struct AngleOffset;

impl BobStrategy for AngleOffset {
    fn name(&self) -> String {
        "angle-offset".into()
    }

    fn measurement_angle(&self, _: NodeId, delta: DyadicAngle, _: PackedBits) -> Option<DyadicAngle> {
        Some(delta.add_pi(1))
    }
}

/// Reports pseudo-random bits hashed from the history, independent of what
/// was measured; the two clients may get different bits.
#[derive(Debug, Clone, Copy)]
pub struct RandomReport {
    pub seed: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl BobStrategy for RandomReport {
    fn name(&self) -> String {
        format!("random-report-{}", self.seed)
    }

    fn report(&self, node: NodeId, _: DyadicAngle, _: Option<u8>, h: PackedBits) -> [u8; 2] {
        let z = mix(self.seed ^ mix(u64::from(node)) ^ mix(h.bits as u64) ^ mix((h.bits >> 64) as u64 ^ 0x9e37));
        [(z & 1) as u8, ((z >> 1) & 1) as u8]
    }
}

/// Never measures the listed qubits and reports 0 for them.
#[derive(Debug, Clone, Default)]
pub struct Hoarding {
    pub nodes: NodeSet,
}

impl BobStrategy for Hoarding {
    fn name(&self) -> String {
        format!("hoarding-{:?}", self.nodes)
    }

    fn measurement_angle(&self, node: NodeId, delta: DyadicAngle, _: PackedBits) -> Option<DyadicAngle> {
        (!self.nodes.contains(&node)).then_some(delta)
    }
}

type AngleHook = Box<dyn Fn(NodeId, DyadicAngle, PackedBits) -> Option<DyadicAngle> + Send + Sync>;
type ReportHook = Box<dyn Fn(NodeId, DyadicAngle, Option<u8>, PackedBits) -> [u8; 2] + Send + Sync>;
type OutputHook = Box<dyn Fn(NodeId, PackedBits) -> (u8, u8) + Send + Sync>;

/// A Bob assembled from closures; unset hooks behave honestly.
#[derive(Default)]
pub struct CustomBob {
    name: String,
    angle: Option<AngleHook>,
    report: Option<ReportHook>,
    output: Option<OutputHook>,
}

impl CustomBob {
    pub fn new(name: impl Into<String>) -> Self {
        CustomBob {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn on_measure(
        mut self,
        f: impl Fn(NodeId, DyadicAngle, PackedBits) -> Option<DyadicAngle> + Send + Sync + 'static,
    ) -> Self {
        self.angle = Some(Box::new(f));
        self
    }

    pub fn on_report(
        mut self,
        f: impl Fn(NodeId, DyadicAngle, Option<u8>, PackedBits) -> [u8; 2] + Send + Sync + 'static,
    ) -> Self {
        self.report = Some(Box::new(f));
        self
    }

    pub fn on_output(mut self, f: impl Fn(NodeId, PackedBits) -> (u8, u8) + Send + Sync + 'static) -> Self {
        self.output = Some(Box::new(f));
        self
    }
}

impl fmt::Debug for CustomBob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomBob").field("name", &self.name).finish()
    }
}

impl BobStrategy for CustomBob {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn measurement_angle(&self, node: NodeId, delta: DyadicAngle, h: PackedBits) -> Option<DyadicAngle> {
        match &self.angle {
            Some(f) => f(node, delta, h),
            None => Some(delta),
        }
    }

    fn report(&self, node: NodeId, delta: DyadicAngle, outcome: Option<u8>, h: PackedBits) -> [u8; 2] {
        match &self.report {
            Some(f) => f(node, delta, outcome, h),
            None => HonestBob.report(node, delta, outcome, h),
        }
    }

    fn output_tamper(&self, node: NodeId, h: PackedBits) -> (u8, u8) {
        match &self.output {
            Some(f) => f(node, h),
            None => (0, 0),
        }
    }
}
