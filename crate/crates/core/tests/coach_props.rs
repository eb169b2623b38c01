use coach_core::coach::{CoachConfig, CoachLearner, FeedbackEvent, TraceId};
use coach_core::policy::{BiasMode, ParamPolicy, UpdateMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn short() -> TraceId {
    TraceId::from("short")
}

#[test]
fn single_trace_without_delay_is_the_plain_update_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (dim, k, alpha) = (6, 4, 0.3);
    let start: Vec<f64> = (0..dim * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let base = ParamPolicy::new(dim, k, BiasMode::Off, UpdateMode::LikelihoodRatio).with_params(start).unwrap();
    let mut coach = CoachLearner::new(base.clone(), CoachConfig::single_trace(alpha, 0.0)).unwrap();
    let mut plain = base;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = rng.gen_range(0..k);
        let f = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(-4.0..4.0) };
        coach.record(x.clone(), a).unwrap();
        coach.coach_step(f, &short()).unwrap();
        if f != 0.0 {
            plain.apply_feedback_update(&x, a, f, alpha).unwrap();
        }
        assert_eq!(coach.policy().params(), plain.params());
    }
}

#[test]
fn two_step_unroll_with_decay() {
    let (alpha, lambda) = (0.1, 0.95);
    let p = ParamPolicy::<f64>::new(2, 2, BiasMode::Off, UpdateMode::LikelihoodRatio);
    let mut coach = CoachLearner::new(p.clone(), CoachConfig::single_trace(alpha, lambda)).unwrap();
    let x = vec![1.0, 0.5];
    let g = p.score(&x, 0).unwrap();

    coach.record(x.clone(), 0).unwrap();
    coach.coach_step(0.0, &short()).unwrap();
    // the policy has not moved, so the second score equals the first
    coach.record(x.clone(), 0).unwrap();
    coach.coach_step(1.0, &short()).unwrap();

    let expected: Vec<f64> = g.iter().map(|gi| alpha * (lambda * gi + gi)).collect();
    for (got, want) in coach.policy().params().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn zero_feedback_for_many_steps_keeps_parameters() {
    let p = ParamPolicy::<f64>::new(3, 3, BiasMode::Off, UpdateMode::PreferenceDirect);
    let mut coach = CoachLearner::new(p.clone(), CoachConfig::default()).unwrap();
    for t in 0..100 {
        coach.record(vec![1.0, (t % 5) as f64, -1.0], t % 3).unwrap();
        coach.step_with_events(&[]).unwrap();
    }
    assert_eq!(coach.policy().params(), p.params());
    assert!(coach.traces().iter().all(|t| t.e.iter().any(|&v| v != 0.0)));
}

#[test]
fn summed_feedback_in_one_cycle() {
    let p = ParamPolicy::<f64>::new(1, 2, BiasMode::Off, UpdateMode::LikelihoodRatio);
    let cfg = CoachConfig { delay_steps: 0, ..CoachConfig::default() };
    let mut a = CoachLearner::new(p.clone(), cfg.clone()).unwrap();
    let mut b = CoachLearner::new(p, cfg).unwrap();
    a.record(vec![1.0], 0).unwrap();
    b.record(vec![1.0], 0).unwrap();
    let agg = a.step_with_events(&[FeedbackEvent::new(1.0, 0.0), FeedbackEvent::new(1.0, 0.01)]).unwrap();
    assert_eq!((agg.value, agg.count), (2.0, 2));
    b.coach_step(2.0, &short()).unwrap();
    assert_eq!(a.policy().params(), b.policy().params());
}

#[test]
fn delay_credits_the_pair_d_steps_back() {
    let p = ParamPolicy::<f64>::new(3, 2, BiasMode::Off, UpdateMode::LikelihoodRatio);
    let mut cfg = CoachConfig::single_trace(1.0, 0.0);
    cfg.delay_steps = 2;
    let mut coach = CoachLearner::new(p, cfg).unwrap();
    let xs = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    for (i, x) in xs.iter().enumerate() {
        coach.record(x.clone(), 0).unwrap();
        coach.coach_step(if i == 2 { 1.0 } else { 0.0 }, &short()).unwrap();
    }
    // only the first state's weights moved
    let pi0 = coach.policy().action_distribution(&xs[0]).unwrap();
    assert!(pi0[0] > 0.5);
    assert_eq!(coach.policy().action_distribution(&xs[2]).unwrap(), vec![0.5, 0.5]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_norm_is_bounded(seed in any::<u64>(), lambda in 0.0f64..0.99, steps in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dim, k) = (4, 3);
        let p = ParamPolicy::<f64>::new(dim, k, BiasMode::Off, UpdateMode::LikelihoodRatio);
        let mut coach = CoachLearner::new(p, CoachConfig::single_trace(0.05, lambda)).unwrap();
        let mut max_g = 0.0f64;
        for _ in 0..steps {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = rng.gen_range(0..k);
            let g = coach.policy().score(&x, a).unwrap();
            max_g = max_g.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
            coach.record(x, a).unwrap();
            coach.coach_step(rng.gen_range(-1.0..1.0), &short()).unwrap();
            let n = coach.traces().norm(&short()).unwrap();
            prop_assert!(n <= max_g / (1.0 - lambda) + 1e-12);
        }
    }

    #[test]
    fn feedback_free_intervals_are_neutral(seed in any::<u64>(), d in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = ParamPolicy::new(2, 4, BiasMode::Off, UpdateMode::PreferenceDirect).with_params(start).unwrap();
        let cfg = CoachConfig { delay_steps: d, ..CoachConfig::default() };
        let mut coach = CoachLearner::new(p.clone(), cfg).unwrap();
        for _ in 0..50 {
            coach.record(vec![rng.gen(), rng.gen()], rng.gen_range(0..4)).unwrap();
            coach.step_with_events(&[]).unwrap();
        }
        prop_assert_eq!(coach.policy().params(), p.params());
    }
}
