use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use massive_attractor::affine::{
    affine_kth_root, build_box_spec, build_g, planar_rotation, AffineMap,
};
use massive_attractor::fiber::{torus_delta, FiberArc, FiberParams};
use massive_attractor::lab::{density_certificate, occupancy_run, OccupancyGrid, OccupancyOptions};
use massive_attractor::region::{certify_covered, Parallelotope, RegionUnion};
use massive_attractor::system::{
    base_map, preimage_branch, CircleArcPair, DynamicalSystem, SkewSystem, State,
};

fn fast_skew() -> &'static SkewSystem {
    static SKEW: OnceLock<SkewSystem> = OnceLock::new();
    SKEW.get_or_init(|| {
        let fiber = FiberArc::build(&FiberParams::new(1, 0.9, 0.2, 0.025)).unwrap();
        SkewSystem::new(CircleArcPair::standard(3).unwrap(), Arc::new(fiber))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kth_root_powers_back(t in 0.0f64..=1.0, k in 1u32..=24, n in 2usize..=4) {
        let spec = build_box_spec(n, 0.9).unwrap();
        let g = build_g(&spec, t);
        let e = affine_kth_root(&g, k).unwrap();
        prop_assert!(e.power(k).distance(&g).unwrap() < 1e-9);
        prop_assert!((e.operator_norm() - 0.9f64.powf(1.0 / k as f64)).abs() < 1e-12);
    }

    #[test]
    fn planar_root_matches_angle_division(angle in -3.0f64..3.0, k in 1u32..=16, scale in 0.5f64..1.0) {
        let g = AffineMap::linear_only(planar_rotation(angle) * scale).unwrap();
        let e = affine_kth_root(&g, k).unwrap();
        let expected = planar_rotation(angle / k as f64) * scale.powf(1.0 / k as f64);
        prop_assert!((e.linear() - expected).abs().max() < 1e-12);
    }

    #[test]
    fn shrunk_piece_is_inside_and_close(
        a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0,
        delta in 0.0f64..0.05,
        u in -1.0f64..1.0, v in -1.0f64..1.0,
    ) {
        let linear = DMatrix::from_row_slice(2, 2, &[1.0 + a * 0.3, b * 0.3, c * 0.3, 1.0 + d * 0.3]);
        let frame = AffineMap::new(linear.clone(), DVector::from_vec(vec![0.2, -0.1])).unwrap();
        let piece = Parallelotope::from_frame(frame);
        if let Some(inner) = piece.shrunk(delta) {
            // Points of the inner body sit at least delta from every facet.
            let x = inner.frame().apply(&DVector::from_vec(vec![u, v])).unwrap();
            prop_assert!(piece.contains(&x));
            let inv = linear.try_inverse().unwrap();
            let local = &inv * (&x - piece.center());
            for i in 0..2 {
                let row_norm = inv.row(i).norm();
                prop_assert!((1.0 - local[i].abs()) / row_norm >= delta - 1e-12);
            }
        }
    }

    #[test]
    fn covered_targets_lie_in_the_pieces(
        cx in -0.3f64..0.3, cy in -0.3f64..0.3, r in 0.05f64..0.6,
        u in -1.0f64..1.0, v in -1.0f64..1.0,
    ) {
        let spec = build_box_spec(2, 0.9).unwrap();
        let b = Parallelotope::axis_box(&[0.0, 0.0], &spec.radii).unwrap();
        let pieces = RegionUnion::new(vec![
            b.mapped(&build_g(&spec, 0.0)).unwrap(),
            b.mapped(&build_g(&spec, 1.0)).unwrap(),
        ]).unwrap();
        let target = Parallelotope::axis_box(&[cx, cy], &[r, 0.6 * r]).unwrap();
        let cert = certify_covered(&target, &pieces, 0.01, 8);
        if cert.covered {
            let x = target.frame().apply(&DVector::from_vec(vec![u, v])).unwrap();
            prop_assert!(pieces.contains(&x));
        }
    }

    #[test]
    fn preimages_land_in_their_arc(phi in 0.0f64..1.0, branch in 0usize..2) {
        let arcs = CircleArcPair::standard(3).unwrap();
        let pre = preimage_branch(&arcs, phi, branch);
        prop_assert!(arcs.contains(branch, pre));
        prop_assert!(torus_delta(base_map(3, pre), phi).abs() < 1e-14);
    }

    #[test]
    fn fiber_maps_keep_a_check_invariant(phi in 0.0f64..1.0, u in -1.0f64..1.0) {
        let skew = fast_skew();
        let r = skew.fiber().r_check();
        let mut out = [0.0];
        skew.fiber_map(phi, &[0.5 + r * u], &mut out);
        prop_assert!(skew.fiber().radius_of(&out) < r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn batch_occupancy_equals_merged_halves(split in 1usize..6, seed in 0u64..1000) {
        let sys = DynamicalSystem::Skew(fast_skew().clone());
        let opts = |starts| OccupancyOptions {
            starts,
            steps: 300,
            burn_in: 20,
            dims: vec![16, 16],
            seed,
            window: None,
        };
        let batch = occupancy_run(&sys, &opts(6)).unwrap();
        // Streams are indexed by start, so the first `split` starts are a prefix of the batch.
        let head = occupancy_run(&sys, &opts(split)).unwrap();
        let whole_minus_head: Vec<u64> = batch.counts.iter().zip(&head.counts).map(|(a, b)| a - b).collect();
        prop_assert_eq!(batch.count_sum(), 6 * 280);
        prop_assert_eq!(whole_minus_head.iter().sum::<u64>(), (6 - split as u64) * 280);
        let mut text = Vec::new();
        batch.write_ogrid(&mut text).unwrap();
        let back = OccupancyGrid::read_ogrid(text.as_slice()).unwrap();
        prop_assert_eq!(back.counts, batch.counts);
    }

    #[test]
    fn density_refinement_is_monotone(phi in 0.0f64..1.0, n in 2u32..8, extra in 1u32..5) {
        let skew = fast_skew();
        let seed: Vec<f64> = skew.fiber().region().pieces()[0].center().iter().copied().collect();
        let coarse = density_certificate(skew, phi, n, &seed, 0).unwrap();
        let fine = density_certificate(skew, phi, n + extra, &seed, 0).unwrap();
        let slack = coarse.lambda_eff.powi(n as i32) * coarse.diameter_a_hat;
        prop_assert!(fine.covering_radius <= coarse.covering_radius + slack);
        prop_assert!(coarse.passed && fine.passed);
    }

    #[test]
    fn solenoid_projects_onto_skew(phi in 0.0f64..1.0, u in -1.0f64..1.0, zr in -1.0f64..1.0) {
        let skew = fast_skew().clone();
        let sol = DynamicalSystem::Solenoid(
            massive_attractor::system::SolenoidSystem::new(
                massive_attractor::system::PhaseMap::Skew(skew.clone()), 2.0, 0.25,
            ).unwrap(),
        );
        let skew = DynamicalSystem::Skew(skew);
        let x = [0.5 + 0.2 * u];
        let mut a = State::new(phi, &x);
        let mut b = State::with_disk(phi, [zr, 0.0], &x);
        for _ in 0..50 {
            a = skew.step(&a);
            b = sol.step(&b);
            prop_assert_eq!((a.phi, a.x), (b.phi, b.x));
            prop_assert!((b.z[0].powi(2) + b.z[1].powi(2)).sqrt() <= 2.0);
        }
    }
}
