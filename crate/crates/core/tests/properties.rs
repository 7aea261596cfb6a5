mod common;

use boqc::calculus::{
    build_lazy_pattern, build_p2_pattern, build_standard_pattern, channel_of_pattern, for_each_branch,
    isometry_matrix, lazy_schedule, output_labels,
};
use boqc::graphstate::{assignment_sets, find_flow, random_linear_extension, verify_flow, NodeSet};
use boqc::qsim::DensityMatrix;
use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn find_flow_matches_brute_force(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = random_open_graph(&mut rng, 7);
        let found = find_flow(&g);
        prop_assert_eq!(found.is_some(), brute_force_has_flow(&g));
        if let Some(fl) = found {
            prop_assert!(verify_flow(&g, &fl));
        }
    }

    #[test]
    fn assignment_sets_partition_non_inputs(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (g, fl) = random_flow_graph(&mut rng, 12);
        let order = random_linear_extension(&g, &fl, &mut rng);
        prop_assert!(order.check_consistent(&g, &fl).is_ok());
        let sets = assignment_sets(&g, &order);
        let mut union = NodeSet::new();
        for (i, a) in &sets {
            prop_assert!(union.is_disjoint(a), "A({}) overlaps an earlier set", i);
            union.extend(a.iter().copied());
            if let Some(fi) = fl.get(*i) {
                prop_assert!(a.contains(&fi), "f({}) = {} not in A({})", i, fi, i);
            }
        }
        prop_assert_eq!(union, g.non_inputs());
    }

    #[test]
    fn lazy_peak_within_outputs_plus_one(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (g, fl) = random_flow_graph(&mut rng, 12);
        let order = random_linear_extension(&g, &fl, &mut rng);
        let peak = lazy_schedule(&g, &order).iter().map(|s| s.live_peak).max().unwrap_or(0);
        prop_assert!(peak <= g.outputs().len() + 1, "peak {} with |O| = {}", peak, g.outputs().len());
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn branches_agree_with_the_isometry(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (g, fl) = random_flow_graph(&mut rng, 7);
        let b = rng.gen_range(1..=3);
        let theta = random_angles(&g, b, &mut rng);
        let input = random_input(&g, 1, &mut rng);
        let v = isometry_oracle(&g, &theta);
        let expected = apply_isometry(&g, &v, &input);
        let p = build_standard_pattern(&g, &fl, &theta).unwrap();
        let labels = output_labels(&p, &input);
        let measured = g.non_outputs().len();
        let mut branches = 0usize;
        let mut worst: f64 = 0.0;
        let mut prob_err: f64 = 0.0;
        for_each_branch(&p, input, &mut |reg, _, prob| {
            branches += 1;
            let got = nalgebra::DVector::from_vec(reg.state_in_order(&labels).unwrap());
            worst = worst.max(1.0 - fidelity(&got, &expected));
            prob_err = prob_err.max((prob - 0.5f64.powi(measured as i32)).abs());
        }).unwrap();
        prop_assert_eq!(branches, 1usize << measured);
        prop_assert!(worst < 1e-9, "infidelity {}", worst);
        prop_assert!(prob_err < 1e-9, "probability error {}", prob_err);
    }

    #[test]
    fn isometry_is_isometric(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (g, _) = random_flow_graph(&mut rng, 8);
        let theta = random_angles(&g, 3, &mut rng);
        let v = isometry_matrix(&g, &theta).unwrap();
        let oracle = isometry_oracle(&g, &theta);
        prop_assert!((&v - &oracle).camax() < 1e-9);
        let gram = v.adjoint() * &v;
        let id = DMatrix::<Complex64>::identity(gram.nrows(), gram.ncols());
        prop_assert!((gram - id).camax() < 1e-9);
    }

    #[test]
    fn standard_p2_and_lazy_channels_agree(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (g, fl) = random_flow_graph(&mut rng, 7);
        let theta = random_angles(&g, 2, &mut rng);
        let input = random_input(&g, 1, &mut rng);
        let order = random_linear_extension(&g, &fl, &mut rng);
        let v = isometry_oracle(&g, &theta);
        let psi = apply_isometry(&g, &v, &input);
        let std = channel_of_pattern(&build_standard_pattern(&g, &fl, &theta).unwrap(), input.clone()).unwrap();
        let expected = DensityMatrix::from_pure(std.labels.clone(), psi.as_slice());
        let p2 = channel_of_pattern(&build_p2_pattern(&g, &fl, &theta).unwrap(), input.clone()).unwrap();
        let lazy = channel_of_pattern(&build_lazy_pattern(&g, &fl, &order, &theta).unwrap(), input).unwrap();
        prop_assert!(std.trace_distance(&expected) <= 1e-9);
        prop_assert!(p2.trace_distance(&std) <= 1e-9);
        prop_assert!(lazy.trace_distance(&std) <= 1e-9);
    }
}
