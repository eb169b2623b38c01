use coach_core::arena::{Arena, RobotAction};
use coach_core::features::{
    color_channels, extract_features, max_pool, render_scene, sum_pool, Ball, Cylinder, FeatureConfig, Plane, Scene,
    SceneImage, BALL_PINK, CYLINDER_ORANGE, FEATURE_LEN, N_SCALES,
};
use proptest::prelude::*;

fn ball_scene(cx: f64, cy: f64, radius: f64) -> Scene {
    Scene { ball: Some(Ball { cx, cy, radius }), ..Scene::empty() }
}

/// Features of one (channel, scale) block.
fn block(f: &[f64], channel: usize, scale: usize) -> &[f64] {
    let start = (channel * N_SCALES + scale) * 7;
    &f[start..start + 7]
}

#[test]
fn default_pipeline_shape() {
    let img = render_scene(&ball_scene(30.0, 40.0, 6.0)).unwrap();
    let f = extract_features::<f64>(&img, &FeatureConfig::default()).unwrap();
    assert_eq!(f.len(), FEATURE_LEN);
    assert_eq!(FEATURE_LEN, 42);
    assert_eq!(max_pool(&Plane::<f64>::zeros(8, 8)).unwrap().len(), 7);
}

#[test]
fn pink_and_orange_stay_apart() {
    let cfg = FeatureConfig::default();
    let mut img = SceneImage::new(8, 8, [0, 0, 0]).unwrap();
    img.set_pixel(0, 0, BALL_PINK);
    img.set_pixel(1, 0, CYLINDER_ORANGE);
    let [ball, cyl] = color_channels::<f64>(&img, &cfg).unwrap();
    assert!((ball.get(0, 0) - 1.0).abs() < 1e-12);
    assert!(cyl.get(0, 0) < 0.1);
    assert!(ball.get(1, 0) < 0.1);
}

#[test]
fn nearer_ball_never_weakens_coarse_features() {
    let cfg = FeatureConfig::default();
    let radii = [2.0, 3.5, 5.0, 7.0, 10.0, 14.0];
    let feats: Vec<Vec<f64>> = radii
        .iter()
        .map(|&r| extract_features(&render_scene(&ball_scene(32.0, 44.0, r)).unwrap(), &cfg).unwrap())
        .collect();
    for w in feats.windows(2) {
        for scale in 0..N_SCALES {
            for (a, b) in block(&w[0], 0, scale).iter().zip(block(&w[1], 0, scale)) {
                assert!(b >= a);
            }
        }
    }
}

#[test]
fn scales_separate_distance() {
    // far, mid and near renders of the same ball
    let cfg = FeatureConfig::default();
    let peak = |r: f64| -> Vec<f64> {
        let f = extract_features::<f64>(&render_scene(&ball_scene(36.0, 44.0, r)).unwrap(), &cfg).unwrap();
        (0..N_SCALES).map(|s| block(&f, 0, s).iter().copied().fold(0.0, f64::max)).collect()
    };
    let (far, mid, near) = (peak(1.0), peak(2.0), peak(12.0));
    // far: only the finest scale reacts noticeably and nothing saturates
    assert!(far[0] > 0.0 && far[0] < 1.0 && far[2] < far[0]);
    // mid: finest saturates, coarser ones do not
    assert!(mid[0] == 1.0 && mid[1] < 1.0 && mid[2] < 1.0);
    // near: the two finest saturate and the coarsest is larger than before
    assert!(near[0] == 1.0 && near[1] == 1.0 && near[2] > mid[2]);
    for s in 0..N_SCALES {
        assert!(far[s] <= mid[s] && mid[s] <= near[s]);
    }
}

#[test]
fn pipeline_is_pure() {
    let scene = Scene {
        ball: Some(Ball { cx: 12.0, cy: 50.0, radius: 4.0 }),
        cylinder: Some(Cylinder { cx: 45.0, base_y: 48.0, width: 10.0, height: 24.0 }),
        ..Scene::empty()
    };
    let a = extract_features::<f64>(&render_scene(&scene).unwrap(), &FeatureConfig::default()).unwrap();
    let b = extract_features::<f64>(&render_scene(&scene).unwrap(), &FeatureConfig::default()).unwrap();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert!(block(&a, 1, 0).iter().any(|&v| v > 0.0));
}

#[test]
fn arena_frames_feed_the_pipeline() {
    let mut arena = Arena::default();
    let cfg = FeatureConfig::default();
    for a in [RobotAction::Forward, RobotAction::RotateCw, RobotAction::Stay, RobotAction::RotateCcw] {
        arena.step(a);
        let f = extract_features::<f64>(&arena.render().unwrap(), &cfg).unwrap();
        assert_eq!(f.len(), FEATURE_LEN);
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_in_unit_interval(
        bx in 0.0f64..64.0, by in 0.0f64..64.0, br in 0.5f64..20.0,
        cx in 0.0f64..64.0, cb in 10.0f64..64.0, cw in 1.0f64..30.0, ch in 1.0f64..40.0,
        with_ball in any::<bool>(), with_cyl in any::<bool>(),
    ) {
        let scene = Scene {
            ball: with_ball.then_some(Ball { cx: bx, cy: by, radius: br }),
            cylinder: with_cyl.then_some(Cylinder { cx, base_y: cb, width: cw, height: ch }),
            ..Scene::empty()
        };
        let f = extract_features::<f64>(&render_scene(&scene).unwrap(), &FeatureConfig::default()).unwrap();
        prop_assert_eq!(f.len(), FEATURE_LEN);
        prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sum_pool_is_linear(a in prop::collection::vec(0.0f64..1.0, 64 * 64), b in prop::collection::vec(0.0f64..1.0, 64 * 64)) {
        let pa = Plane { width: 64, height: 64, data: a.clone() };
        let pb = Plane { width: 64, height: 64, data: b.clone() };
        let sum = Plane { width: 64, height: 64, data: a.iter().zip(&b).map(|(x, y)| x + y).collect() };
        let (sa, sb, ss) = (sum_pool(&pa).unwrap(), sum_pool(&pb).unwrap(), sum_pool(&sum).unwrap());
        for i in 0..64 {
            prop_assert!((ss.data[i] - sa.data[i] - sb.data[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn colour_response_is_per_pixel(x in 0usize..64, y in 0usize..64, u in 0usize..64, v in 0usize..64) {
        let cfg = FeatureConfig::default();
        let mut one = SceneImage::new(64, 64, [0, 0, 0]).unwrap();
        one.set_pixel(x, y, BALL_PINK);
        let mut two = SceneImage::new(64, 64, [0, 0, 0]).unwrap();
        two.set_pixel(u, v, BALL_PINK);
        let (c1, c2) = (color_channels::<f64>(&one, &cfg).unwrap(), color_channels::<f64>(&two, &cfg).unwrap());
        prop_assert_eq!(c1[0].get(x, y), c2[0].get(u, v));
    }
}
