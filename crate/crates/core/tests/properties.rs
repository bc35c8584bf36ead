//! Property tests for the structural invariants: randomized domains,
//! coefficients, and point sets.

use flowmorph::basis::{max_normal_trace, tensorize_time, BasisRef, TangentialPolyBasis};
use flowmorph::compositional::{bijectivity_check, DisplacementModel, JacobianPenalty};
use flowmorph::geometry::{PointClass, PolygonalDomain, Triangulation};
use flowmorph::poly::Poly;
use flowmorph::targets::{PointwiseTarget, WeightMode};
use flowmorph::vectorflow::{integrate_flow, FlowParams, VelocityModel};
use flowmorph::Vec2;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::sync::Arc;

fn rectangle_strategy() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (
        -2.0..2.0f64,
        0.3..3.0f64,
        -2.0..2.0f64,
        0.3..3.0f64,
    )
        .prop_map(|(a, w, c, h)| (a, a + w, c, c + h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quadrature_weights_sum_to_area(
        (a, b, c, d) in rectangle_strategy(),
        order in 1usize..=5,
        nx in 1usize..=5,
        ny in 1usize..=5,
    ) {
        let domain = PolygonalDomain::rectangle(a, b, c, d).unwrap();
        let tri = Triangulation::structured_rectangle(&domain, nx, ny).unwrap();
        let total: f64 = tri.quadrature(order).unwrap().iter().map(|q| q.weight).sum();
        let area = (b - a) * (d - c);
        prop_assert!(((total - area) / area).abs() < 1e-12);
    }

    #[test]
    fn quadrature_points_classify_inside(
        (a, b, c, d) in rectangle_strategy(),
        order in 1usize..=5,
    ) {
        let domain = PolygonalDomain::rectangle(a, b, c, d).unwrap();
        let tri = Triangulation::structured_rectangle(&domain, 3, 2).unwrap();
        for q in tri.quadrature(order).unwrap() {
            prop_assert_ne!(domain.classify(q.point, 1e-9), PointClass::Exterior);
        }
    }

    #[test]
    fn convex_polygon_normal_closure(radii in proptest::collection::vec(0.3..2.0f64, 5..12)) {
        // Random convex polygon: sorted angles with random radii.
        let n = radii.len();
        let vertices: Vec<Vec2> = radii
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                Vec2::new(r * theta.cos(), r * theta.sin())
            })
            .collect();
        let domain = PolygonalDomain::new(vertices, vec![]).unwrap();
        let closure: Vec2 = domain
            .facets()
            .iter()
            .map(|f| f.normal * f.length())
            .sum();
        prop_assert!(closure.norm() < 1e-12);
    }

    #[test]
    fn tangency_holds_on_random_rectangles(
        (a, b, c, d) in rectangle_strategy(),
        degree in 0usize..=2,
        temporal in 0usize..=2,
    ) {
        let domain = PolygonalDomain::rectangle(a, b, c, d).unwrap();
        let spatial: BasisRef = Arc::new(TangentialPolyBasis::new(&domain, degree).unwrap());
        let st = tensorize_time(spatial, temporal).unwrap();
        let times = [0.0, 0.25, 0.5, 0.75, 1.0];
        prop_assert!(max_normal_trace(&st, &domain, 20, &times) <= 1e-10);
    }

    #[test]
    fn cm_facet_preservation(coeffs in proptest::collection::vec(-0.2..0.2f64, 8)) {
        // Images of facet points stay on the same facet's supporting line.
        let sq = PolygonalDomain::unit_square();
        let basis: BasisRef = Arc::new(TangentialPolyBasis::new(&sq, 1).unwrap());
        let model = DisplacementModel::new(
            basis,
            DVector::from_vec(coeffs),
            sq.clone(),
            None,
        )
        .unwrap();
        for (f, facet) in sq.facets().iter().enumerate() {
            for s in [0.1, 0.35, 0.6, 0.85] {
                let x = facet.point_at(s);
                let image = model.map_polytope_point(x);
                let off_line = (image - facet.start).dot(&facet.normal).abs();
                prop_assert!(off_line <= 1e-10, "facet {f}: {off_line}");
            }
        }
    }

    #[test]
    fn penalty_zero_iff_min_jacobian_feasible(eps in -2.5..2.5f64) {
        // Analytic family det = 1 + eps (1 - 2 x1); sampled minimum
        // 1 - |eps| is attained on the boundary, which both the penalty
        // samples and the bijectivity grid contain.
        let sq = PolygonalDomain::unit_square();
        let basis: BasisRef = Arc::new(
            TangentialPolyBasis::from_members(
                &sq,
                vec![(0, Poly::bubble(0.0, 1.0), Poly::constant(1.0))],
            )
            .unwrap(),
        );
        let model = DisplacementModel::new(
            basis,
            DVector::from_vec(vec![eps]),
            sq.clone(),
            None,
        )
        .unwrap();
        let tri = Triangulation::structured_rectangle(&sq, 4, 4).unwrap();
        let threshold = 0.01;
        let penalty = JacobianPenalty::with_boundary_samples(
            threshold,
            &tri.quadrature(3).unwrap(),
            &sq,
            20,
        )
        .unwrap();
        let (value, _) = penalty.value_and_gradient(&model);
        let min_j = model
            .jacobian_field(&penalty.points())
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(value == 0.0, min_j >= threshold);
        // The analytic minimum 1 - |eps| is sampled exactly at a corner.
        prop_assert!((min_j - (1.0 - eps.abs())).abs() < 1e-12);
        // Verdict agrees with the sign of the analytic minimum.
        let verdict = bijectivity_check(&model, 50, &[], 1e-6);
        if 1.0 - eps.abs() > 1e-3 {
            prop_assert!(verdict.is_bijective());
        }
        if 1.0 - eps.abs() < 0.0 {
            prop_assert!(!verdict.is_bijective());
        }
    }

    #[test]
    fn em_weights_stay_stochastic(
        jitter in proptest::collection::vec((-0.05..0.05f64, -0.05..0.05f64), 4),
        sigma in 0.05..2.0f64,
    ) {
        // Row normalization is unconditional for any sigma.
        let anchors = [
            Vec2::new(0.2, 0.2),
            Vec2::new(0.8, 0.2),
            Vec2::new(0.8, 0.8),
            Vec2::new(0.2, 0.8),
        ];
        let sources: Vec<Vec2> = anchors
            .iter()
            .zip(&jitter)
            .map(|(a, &(dx, dy))| a + Vec2::new(dx, dy))
            .collect();
        let targets: Vec<Vec2> = sources
            .iter()
            .map(|p| Vec2::new(1.0 - p.x, p.y))
            .collect();
        let row = PointwiseTarget::uniform(
            sources.clone(),
            targets.clone(),
            WeightMode::RowStochastic,
        )
        .unwrap();
        let p = row.em_update_weights(&sources, sigma).unwrap();
        for i in 0..p.nrows() {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-8);
        }
        prop_assert!(p.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));

        // Sinkhorn balances both margins when the kernel is well scaled;
        // at tiny bandwidths it may stop at the iteration cap instead.
        let sigma = sigma.max(0.3);
        let doubly = PointwiseTarget::uniform(sources.clone(), targets, WeightMode::DoublyStochastic)
            .unwrap();
        let p = doubly.em_update_weights(&sources, sigma).unwrap();
        for i in 0..p.nrows() {
            let rs: f64 = p.row(i).iter().sum();
            let cs: f64 = p.column(i).iter().sum();
            prop_assert!((rs - 1.0).abs() < 1e-7 && (cs - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn pointwise_value_nonnegative_and_weight_rows_validated(
        images in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 4),
    ) {
        let sources = vec![
            Vec2::new(0.2, 0.2),
            Vec2::new(0.8, 0.2),
            Vec2::new(0.8, 0.8),
            Vec2::new(0.2, 0.8),
        ];
        let target = PointwiseTarget::uniform(
            sources.clone(),
            sources,
            WeightMode::RowStochastic,
        )
        .unwrap();
        let pts: Vec<Vec2> = images.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        prop_assert!(target.eval(&pts).unwrap() >= 0.0);
        // A non-stochastic weight matrix is rejected.
        let bad = DMatrix::from_element(4, 4, 0.3);
        let rebuilt = PointwiseTarget::new(
            target.sources().to_vec(),
            target.targets().to_vec(),
            bad,
            WeightMode::RowStochastic,
        );
        prop_assert!(rebuilt.is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flow_identity_for_any_step_count(steps in 1usize..40) {
        let sq = PolygonalDomain::unit_square();
        let spatial: BasisRef = Arc::new(TangentialPolyBasis::new(&sq, 1).unwrap());
        let model = VelocityModel::zero(spatial);
        let seeds = vec![Vec2::new(0.3, 0.7), Vec2::new(0.9, 0.1), Vec2::new(0.5, 0.5)];
        let sol = integrate_flow(&model, &sq, &seeds, FlowParams::new(steps)).unwrap();
        for (i, &seed) in seeds.iter().enumerate() {
            prop_assert_eq!(sol.endpoint(i), seed);
        }
    }

    #[test]
    fn flow_jacobian_positive_for_random_coefficients(
        coeffs in proptest::collection::vec(-0.4..0.4f64, 8),
    ) {
        let sq = PolygonalDomain::unit_square();
        let spatial: BasisRef = Arc::new(TangentialPolyBasis::new(&sq, 1).unwrap());
        let model = VelocityModel::new(spatial, DVector::from_vec(coeffs)).unwrap();
        let seeds = vec![Vec2::new(0.25, 0.4), Vec2::new(0.7, 0.65)];
        let sol = flowmorph::vectorflow::integrate_flow_gradient(
            &model,
            &sq,
            &seeds,
            FlowParams::new(200),
        )
        .unwrap();
        for g in sol.endpoint_gradients().unwrap() {
            prop_assert!(g.determinant() > 0.0);
        }
        for l in sol.endpoint_log_jacobians().unwrap() {
            prop_assert!(l.exp() > 0.0);
        }
    }
}
