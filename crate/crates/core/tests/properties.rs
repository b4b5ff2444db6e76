use anchorview::critic::{CritiqueScore, EvaluationContext, RuleCritic};
use anchorview::geometry::{look_at, pose_to_spherical, project_point, rad, spherical_to_pose, CameraIntrinsics, SphericalCoord, Vec3, WORLD_UP};
use anchorview::intent::parse_intent_rules;
use anchorview::objective::{Objective, Region, RegionConstraint, Weights};
use anchorview::reflect::{gen_candidates, ReflectorConfig};
use anchorview::render::{decode_ppm, encode_ppm, Image};
use anchorview::scene::{extract_structured_inputs, Scene, SceneObject};
use anchorview::solver::solve_distance;
use proptest::prelude::*;

fn two_objects() -> Scene {
    let cup = SceneObject::new("cup", "coffee cup", Vec3::new(0.0, 0.0, 0.05), 0.1, Some(0.04), None, vec![]).unwrap();
    let can = SceneObject::new("can", "soda can", Vec3::new(0.25, 0.3, 0.06), 0.12, Some(0.03), None, vec![]).unwrap();
    Scene::new([0, 0, 0], vec![cup, can]).unwrap()
}

fn coord() -> impl Strategy<Value = SphericalCoord> {
    (0.05f64..50.0, -3.1f64..3.1, -79.0f64..79.0, prop::array::uniform3(-5.0f64..5.0))
        .prop_map(|(r, t, p, a)| SphericalCoord::new(r, t, rad(p), Vec3::from(a)).unwrap())
}

fn region() -> impl Strategy<Value = Region> {
    prop_oneof![
        (0u8..3, 0u8..3).prop_map(|(row, col)| Region::Grid { row, col }),
        (any::<bool>(), any::<bool>()).prop_map(|(upper, right)| Region::Quadrant { upper, right }),
        Just(Region::LookingRoom),
    ]
}

proptest! {
    #[test]
    fn spherical_pose_round_trip(sc in coord()) {
        let pose = spherical_to_pose(&sc).unwrap();
        let back = pose_to_spherical(&pose, &sc.anchor()).unwrap();
        prop_assert!(back.approx_eq(&sc, 1e-9));
        prop_assert!(pose.orthonormality_error() < 1e-9);
        prop_assert!(pose.roll_residual() < 1e-9);
    }

    #[test]
    fn look_at_centres_its_target(
        p in prop::array::uniform3(-3.0f64..3.0),
        d in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let (p, t) = (Vec3::from(p), Vec3::from(p) + Vec3::from(d));
        let horiz = (t - p).xy().norm();
        prop_assume!(horiz > 0.2 * (t - p).norm() && (t - p).norm() > 0.05);
        let pose = look_at(&p, &t, &WORLD_UP).unwrap();
        let k = CameraIntrinsics::default();
        let (u, v, z) = project_point(&k, &pose, &t).unwrap();
        prop_assert!((u - k.cx).abs() < 1e-9 && (v - k.cy).abs() < 1e-9);
        prop_assert!((z - (t - p).norm()).abs() < 1e-9);
    }

    #[test]
    fn distance_law_inverts(rho0 in 0.01f64..1e3, s in 0.01f64..100.0) {
        let rho = solve_distance(rho0, s).unwrap();
        prop_assert!((rho * s - rho0).abs() <= 1e-12 * rho0.max(1.0));
    }

    #[test]
    fn candidates_respect_bounds(sc in coord()) {
        let cfg = ReflectorConfig::default();
        let c = gen_candidates(&sc, &cfg);
        prop_assert_eq!(c.len(), 7);
        for (x, _) in &c {
            prop_assert!(x.rho() >= cfg.min_rho);
            prop_assert!(x.phi().abs() <= rad(80.0) + 1e-12);
        }
    }

    #[test]
    fn rule_score_stays_in_range(
        pos in prop::array::uniform3(-3.0f64..3.0),
        target in (40.0f64..600.0, 40.0f64..440.0),
        scale in prop::option::of(0.01f64..1.0),
        regions in prop::collection::vec(region(), 0..3),
    ) {
        let scene = two_objects();
        let pos = Vec3::from(pos);
        prop_assume!((pos - Vec3::new(0.0, 0.0, 0.05)).xy().norm() > 0.1);
        let pose = look_at(&pos, &Vec3::new(0.0, 0.0, 0.05), &WORLD_UP).unwrap();
        let objective = Objective {
            anchor_id: "cup".into(),
            target_center: [target.0, target.1],
            target_scale: scale,
            secondary: regions.into_iter().map(|region| RegionConstraint { object_id: "can".into(), region }).collect(),
            weights: Weights::default(),
        };
        let z = extract_structured_inputs(&scene, &pose, &CameraIntrinsics::default());
        let ctx = EvaluationContext { instruction: "", scene: &scene, pose: &pose, structured: &z };
        let v = RuleCritic::new(objective).evaluate(&ctx).unwrap().value();
        prop_assert!((1.0..=5.0).contains(&v));
    }

    #[test]
    fn scaling_weights_keeps_the_score(
        pos in prop::array::uniform3(-3.0f64..3.0),
        w in prop::array::uniform3(0.05f64..2.0),
        factor in 0.1f64..10.0,
    ) {
        let scene = two_objects();
        let pos = Vec3::from(pos);
        prop_assume!((pos - Vec3::new(0.0, 0.0, 0.05)).xy().norm() > 0.1);
        let pose = look_at(&pos, &Vec3::new(0.1, 0.1, 0.05), &WORLD_UP).unwrap();
        let objective = |k: f64| Objective {
            anchor_id: "cup".into(),
            target_center: [300.0, 260.0],
            target_scale: Some(0.2),
            secondary: vec![RegionConstraint { object_id: "can".into(), region: Region::Quadrant { upper: true, right: true } }],
            weights: Weights { center: k * w[0], scale: k * w[1], region: k * w[2] },
        };
        let z = extract_structured_inputs(&scene, &pose, &CameraIntrinsics::default());
        let ctx = EvaluationContext { instruction: "", scene: &scene, pose: &pose, structured: &z };
        let a = RuleCritic::new(objective(1.0)).evaluate(&ctx).unwrap().value();
        let b = RuleCritic::new(objective(factor)).evaluate(&ctx).unwrap().value();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn parser_is_deterministic_and_total(text in "[ a-zA-Z0-9,.'-]{0,60}") {
        let scene = two_objects();
        let pose = look_at(&Vec3::new(0.1, -1.2, 0.5), &Vec3::new(0.1, 0.1, 0.05), &WORLD_UP).unwrap();
        let z = extract_structured_inputs(&scene, &pose, &CameraIntrinsics::default());
        let first = parse_intent_rules(&text, &z);
        let second = parse_intent_rules(&text, &z);
        prop_assert_eq!(format!("{first:?}"), format!("{second:?}"));
        if let Ok((g, anchor)) = first {
            prop_assert!(scene.object(&anchor).is_some());
            prop_assert!(g.validate(&CameraIntrinsics::default()).is_ok());
        }
    }

    #[test]
    fn ppm_round_trip(w in 1u32..12, h in 1u32..12, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..(w * h * 3) as u64).map(|i| (seed.wrapping_mul(i + 1) >> 13) as u8).collect();
        let img = Image::from_raw(w, h, pixels).unwrap();
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn region_text_round_trip(r in region()) {
        prop_assert_eq!(r.to_string().parse::<Region>().unwrap(), r);
    }

    #[test]
    fn scores_outside_range_are_rejected(v in prop_oneof![-100.0f64..0.999, 5.001f64..100.0]) {
        prop_assert!(CritiqueScore::new(v, "").is_err());
    }
}
