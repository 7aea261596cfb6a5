use rand::rngs::StdRng;
use rand::SeedableRng;

use super::*;
use crate::builtin::{lazy_example, path_graph, random_setup};
use crate::graphstate::{linearize, TieBreak};
use crate::protocol::{AngleOffset, ConstantReport, CustomBob, HonestBob, Hoarding, PublicInfo, RandomReport};

fn path_setup(mode: IoMode, seed: u64) -> ProtocolSetup {
    let (g, f) = path_graph();
    let order = linearize(&f, TieBreak::AscendingId);
    let public = PublicInfo::new(g, &f, Some(order), 2).unwrap();
    random_setup(&public, &f, mode, 1, &mut StdRng::seed_from_u64(seed)).unwrap()
}

fn bobs() -> Vec<Arc<dyn BobStrategy>> {
    vec![
        Arc::new(HonestBob),
        Arc::new(ConstantReport(0)),
        Arc::new(AngleOffset),
        Arc::new(RandomReport { seed: 4 }),
        Arc::new(Hoarding {
            nodes: [2].into_iter().collect(),
        }),
        Arc::new(
            CustomBob::new("adaptive")
                .on_measure(|_, d, h| Some(d.add_pi((h.bits & 1) as u8)))
                .on_report(|_, _, o, h| [o.unwrap_or(0), (h.bits.count_ones() & 1) as u8])
                .on_output(|_, h| ((h.bits >> 1) as u8 & 1, 1)),
        ),
    ]
}

#[test]
fn path_views_match_the_simulator() {
    for mode in IoMode::ALL {
        let s = path_setup(mode, 3);
        for variant in [Variant::Boqc, Variant::Boqco] {
            for bob in bobs() {
                let name = bob.name();
                let c = compare_worlds(&s, variant, bob, Enumeration::Exhaustive, Randomness::Uniform).unwrap();
                assert!(c.distance.within(1e-9), "{mode} {variant:?} {name}: {:?}", c.distance);
                assert!(c.real.deltas_uniform(1e-12), "{mode} {variant:?} {name}");
                assert!(c.ideal.deltas_uniform(1e-12));
                assert!(c.real.max_pad_deviation() <= 1e-10, "{mode} {variant:?} {name}");
                assert!((c.real.joint.total_trace() - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn disabled_randomness_is_detected() {
    let s = path_setup(IoMode::Cc, 3);
    let c = compare_worlds(&s, Variant::Boqc, Arc::new(HonestBob), Enumeration::Exhaustive, Randomness::Disabled)
        .unwrap();
    assert!(c.distance.classical_tvd > 0.1, "{:?}", c.distance);
    assert!(!c.real.deltas_uniform(1e-12));
    let r = blindness_report(&s, Variant::Boqc, Arc::new(HonestBob), Enumeration::Exhaustive, Randomness::Disabled)
        .unwrap();
    assert!(!r.pass);
}

#[test]
fn a_view_is_at_distance_zero_from_itself() {
    let s = path_setup(IoMode::Qq, 8);
    let v = real_view(&s, Variant::Boqco, Arc::new(HonestBob), Enumeration::Exhaustive, Randomness::Uniform).unwrap();
    let d = compare_views(&v, &v).unwrap();
    assert_eq!(d.classical_tvd, 0.0);
    assert!(d.quantum_trace_distance < 1e-12);
}

#[test]
fn incompatible_views_are_rejected() {
    let (g, f) = lazy_example();
    let order = linearize(&f, TieBreak::AscendingId);
    let public = PublicInfo::new(g, &f, Some(order), 2).unwrap();
    let s = random_setup(&public, &f, IoMode::Cq, 0, &mut StdRng::seed_from_u64(1)).unwrap();
    let a = real_view(&s, Variant::Boqc, Arc::new(HonestBob), Enumeration::Exhaustive, Randomness::Uniform).unwrap();
    let b = real_view(&s, Variant::Boqco, Arc::new(HonestBob), Enumeration::Exhaustive, Randomness::Uniform).unwrap();
    assert!(matches!(compare_views(&a, &b), Err(ProtocolError::StructuralMismatch(_))));
}

#[test]
fn lazy_example_views_match() {
    let (g, f) = lazy_example();
    let order = linearize(&f, TieBreak::AscendingId);
    let public = PublicInfo::new(g, &f, Some(order), 2).unwrap();
    let s = random_setup(&public, &f, IoMode::Cq, 0, &mut StdRng::seed_from_u64(2)).unwrap();
    let c = compare_worlds(&s, Variant::Boqco, Arc::new(HonestBob), Enumeration::Exhaustive, Randomness::Uniform)
        .unwrap();
    assert!(c.distance.within(1e-9), "{:?}", c.distance);
    assert_eq!(c.real.live_peak, 4);
    assert!(c.ideal.live_peak <= c.real.live_peak);
}

#[test]
fn simulated_transcript_has_the_real_shape() {
    let s = path_setup(IoMode::Qq, 5);
    let shape = |t: &BobTranscript| -> Vec<(String, NodeId)> {
        t.envelopes
            .iter()
            .map(|e| {
                let (tag, node) = match &e.message {
                    crate::protocol::Message::QubitToBob { node, .. } => ("qubit", *node),
                    crate::protocol::Message::AngleToBob { node, .. } => ("angle", *node),
                    crate::protocol::Message::OutcomeFromBob { node, .. } => ("outcome", *node),
                    crate::protocol::Message::OutputQubits { nodes, .. } => ("output", nodes[0]),
                };
                (format!("{tag} {:?}->{:?}", e.from, e.to), node)
            })
            .collect()
    };
    for variant in [Variant::Boqc, Variant::Boqco] {
        let seeds = Seeds::from_master(1);
        let (out, view) = match variant {
            Variant::Boqc => run_simulator_boqc(&s, Arc::new(HonestBob), &seeds),
            Variant::Boqco => run_simulator_boqco(&s, Arc::new(HonestBob), &seeds),
        }
        .unwrap();
        assert_eq!(out.world, World::Ideal);
        let real = run_protocol(&s, variant, World::Real, Arc::new(HonestBob), &Seeds::from_master(1), Randomness::Uniform)
            .unwrap();
        assert_eq!(shape(&view), shape(&real.transcript.bob_view()));
    }
}

#[test]
fn delta_counts_are_exactly_uniform() {
    let s = path_setup(IoMode::Cq, 1);
    for world in [World::Real, World::Ideal] {
        let sc = s.scenario(Variant::Boqc, world, Arc::new(HonestBob)).unwrap();
        let counts = delta_counts(&sc).unwrap();
        assert_eq!(counts.len(), 2);
        for c in counts.values() {
            assert!(c.iter().all(|&n| n == c[0] && n > 0), "{world:?} {c:?}");
        }
    }
    let sc = s
        .scenario(Variant::Boqc, World::Real, Arc::new(HonestBob))
        .unwrap()
        .with_randomness(Randomness::Disabled);
    let counts = delta_counts(&sc).unwrap();
    assert!(counts.values().all(|c| c.iter().filter(|&&n| n > 0).count() == 1));
}

#[test]
fn sampled_mode_reports_p_values() {
    let s = path_setup(IoMode::Cc, 9);
    let e = Enumeration::Sampled { shots: 4000, seed: 2 };
    let r = blindness_report(&s, Variant::Boqco, Arc::new(HonestBob), e, Randomness::Uniform).unwrap();
    let p = r.delta_chi_square_p.as_ref().unwrap();
    assert_eq!(p.len(), 3);
    assert!(r.pass, "{p:?}");
    assert_eq!(r.leaves_real, 4000);
    let bad = blindness_report(&s, Variant::Boqco, Arc::new(HonestBob), e, Randomness::Disabled).unwrap();
    assert!(!bad.pass);
}

#[test]
fn p_value_extremes() {
    assert!(uniform_p_value(&[250, 250, 250, 250]) > 0.99);
    assert!(uniform_p_value(&[1000, 0, 0, 0]) < 1e-10);
}
