use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use udset::dimension::empirical_box_count;
use udset::geometry::{
    build_direction_net, complete_frame, cube_contains, cube_cover, random_unit, segment_distance, separated_points,
    Direction, Point, Segment,
};
use udset::hierarchy::{Construction, ConstructionOptions};
use udset::lemmas::{delta_thresholds, LemmaParams};
use udset::params::{validate_schedule, ParamSchedule, ScheduleDoc};
use udset::probes::porosity_scan;
use udset::setmodel::{sample_points, verify_witness, WitnessChain};

fn unit(angle: f64) -> Direction<f64> {
    Direction(Point(vec![angle.cos(), angle.sin()]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn width_ratio_is_q_to_minus_s(q in 1.01f64..1.99, a in 1i64..4, b in 3i64..8) {
        let doc = ScheduleDoc { q, ..ScheduleDoc::desk() };
        let doc: ScheduleDoc = serde_json::from_value({
            let mut v = serde_json::to_value(&doc).unwrap();
            v["s"] = serde_json::json!({"kind": "affine", "a": a, "b": b});
            v
        }).unwrap();
        let s = ParamSchedule::new(doc).unwrap();
        for k in 2..=s.horizon() {
            let r = s.width(k).unwrap().1 / s.width(k - 1).unwrap().1;
            let want = q.powi(-(s.s(k) as i32));
            prop_assert!((r / want - 1.0).abs() < 1e-12);
            prop_assert_eq!(s.exponent(k), s.exponent(k - 1) + s.s(k));
        }
    }

    #[test]
    fn validation_is_pure(q in 1.01f64..1.99) {
        let doc = ScheduleDoc { q, ..ScheduleDoc::desk() };
        prop_assert_eq!(validate_schedule(&doc, 3).unwrap(), validate_schedule(&doc, 3).unwrap());
    }

    #[test]
    fn cube_cover_contains_the_tube(
        angle in 0.0f64..std::f64::consts::TAU,
        half in 0.05f64..2.0,
        w_frac in 0.002f64..0.24,
        seed in any::<u64>(),
    ) {
        let seg = Segment::new(Point(vec![0.3, -0.2]), unit(angle), half);
        let w = w_frac * 2.0 * half;
        let cubes = cube_cover(&seg, &w).unwrap();
        let n = cubes.len() as f64;
        prop_assert_eq!(n, (2.0 * half / (2.0 * w)).ceil() + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let tau = half * rand::Rng::gen_range(&mut rng, -1.0..=1.0);
            let u = random_unit(&mut rng, 2);
            let r = w * rand::Rng::gen::<f64>(&mut rng).sqrt();
            let x = seg.at(&tau).add(&Point(vec![u[0] * r, u[1] * r]));
            prop_assert!(segment_distance(&x, &seg) <= w * (1.0 + 1e-12));
            prop_assert!(cubes.iter().any(|c| cube_contains(c, &x)));
        }
    }

    #[test]
    fn frame_is_orthonormal_and_led_by_e(seed in any::<u64>(), d in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Direction(Point(random_unit(&mut rng, d)));
        let f = complete_frame(&e);
        prop_assert_eq!(f.len(), d);
        prop_assert_eq!(&f[0], &e);
        for i in 0..d {
            for j in 0..d {
                let dot = f[i].v().dot(f[j].v());
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn separated_points_are_maximal(half in 0.1f64..3.0, frac in 0.01f64..1.0) {
        let seg = Segment::new(Point(vec![0.0, 0.0]), unit(0.7), half);
        let h = frac * 2.0 * half;
        let pts = separated_points(&seg, &h).unwrap();
        prop_assert!(pts[0].dist(&seg.start()) < 1e-12);
        prop_assert!(pts.last().unwrap().dist(&seg.end()) < 1e-12);
        for w in pts.windows(2) {
            let g = w[0].dist(&w[1]);
            prop_assert!(g >= h * (1.0 - 1e-12) && g < 2.0 * h);
        }
    }

    #[test]
    fn box_counts_grow_as_scales_shrink(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..500).map(|_| random_unit(&mut rng, 2)).collect();
        let scales: Vec<f64> = (1..7).map(|j| 0.5f64.powi(j)).collect();
        let r = empirical_box_count(&pts, &scales, None).unwrap();
        prop_assert!(r.counts.windows(2).all(|c| c[1] >= c[0]));
    }

    #[test]
    fn porosity_more_probes_never_lower(extra in 1u64..200, seed in any::<u64>()) {
        let seg: Vec<Vec<f64>> = (0..=400).map(|i| vec![i as f64 / 400.0, (i as f64 * 0.05).sin() * 0.1]).collect();
        let x = seg[200].clone();
        let radii = [0.02, 0.05, 0.1];
        let a = porosity_scan(&seg, &x, &radii, (0.01, 1.0), 1, 30, seed).unwrap();
        let b = porosity_scan(&seg, &x, &radii, (0.01, 1.0), 1, 30 + extra, seed).unwrap();
        prop_assert!(a.per_radius.iter().zip(&b.per_radius).all(|(s, t)| t >= s));
        prop_assert!(b.per_radius.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn thresholds_do_not_depend_on_q(lambda in 0.0f64..0.35, psi_frac in 0.0f64..1.0, eta in 0.01f64..0.5) {
        let psi = 0.6 + psi_frac * (0.4 - lambda) * 0.999;
        let p = LemmaParams::new(lambda, psi, eta).unwrap();
        let base = ParamSchedule::lemma_feasible();
        let v: Vec<_> = [1.1, 1.5, 1.9]
            .iter()
            .map(|&q| delta_thresholds(p, &base.with_q(q).unwrap()).ok().map(|t| t.verdict()))
            .collect();
        prop_assert_eq!(&v[0], &v[1]);
        prop_assert_eq!(&v[1], &v[2]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn chains_stay_valid_for_larger_lambda(seed in any::<u64>(), lambda in 0.0f64..1.0) {
        let con = Construction::f64(ParamSchedule::toy(), ConstructionOptions::toy()).unwrap();
        for (_, ch) in sample_points(&con, lambda, 3, 20, seed).unwrap() {
            prop_assert!(verify_witness(&con, &ch).unwrap().ok);
            for bigger in [lambda, (lambda + 1.0) / 2.0, 1.0] {
                let c = WitnessChain { lambda: bigger, ..ch.clone() };
                prop_assert!(verify_witness(&con, &c).unwrap().ok);
            }
            let back = WitnessChain::from_json(&ch.to_json().unwrap(), &0.0).unwrap();
            prop_assert_eq!(back, ch);
        }
    }

    #[test]
    fn construction_is_deterministic(seed in any::<u64>()) {
        let a = Construction::f64(ParamSchedule::toy(), ConstructionOptions::toy()).unwrap();
        let b = Construction::f64(ParamSchedule::toy(), ConstructionOptions::toy()).unwrap();
        let pa = sample_points(&a, 1.0, 3, 5, seed).unwrap();
        let pb = sample_points(&b, 1.0, 3, 5, seed).unwrap();
        prop_assert_eq!(pa, pb);
    }
}

#[test]
fn direction_nets_are_separated_and_bounded() {
    for (d, s) in [(2, 5u64), (2, 40), (3, 4), (3, 6)] {
        let net = build_direction_net(d, s, 0).unwrap();
        let m: Vec<Vec<f64>> = (0..net.len()).map(|i| net.member_f64(i)).collect();
        for i in 0..m.len() {
            let n: f64 = m[i].iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            for j in 0..i {
                let g: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                assert!(g >= 1.0 / s as f64 - 1e-12, "d={d} s={s}: members {i},{j} at {g}");
            }
        }
        assert!((m.len() as u64) <= s.pow(2 * d as u32));
    }
}

#[test]
fn direction_net_covers_the_circle() {
    let s = 12;
    let net = build_direction_net(2, s, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100_000 {
        let e = random_unit(&mut rng, 2);
        let i = net.nearest_index(&e);
        let m = net.member_f64(i);
        let g = ((m[0] - e[0]).powi(2) + (m[1] - e[1]).powi(2)).sqrt();
        assert!(g < 1.0 / s as f64);
    }
}
