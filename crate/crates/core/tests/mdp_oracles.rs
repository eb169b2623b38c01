use coach_core::grid::{build_dog_grid, Cell, GridConfig, Move};
use coach_core::mdp::{
    action_values, advantage, evaluate_policy, optimal_actions, policy_residual, td_error, value_iteration, Mdp,
    TabularPolicy, ValueTable,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_policy(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> TabularPolicy<f64> {
    let rows = (0..n_states)
        .map(|_| {
            let w: Vec<f64> = (0..n_actions).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        })
        .collect();
    TabularPolicy::from_rows(rows).unwrap()
}

/// Solves `(I - gamma P_pi) V = R_pi` directly.
fn linear_solve(mdp: &Mdp<f64>, pi: &TabularPolicy<f64>) -> Vec<f64> {
    let n = mdp.n_states();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        if mdp.is_terminal(s) {
            continue;
        }
        for a in 0..mdp.n_actions() {
            let p = pi.prob(s, a);
            for o in mdp.outcomes(s, a) {
                m[(s, o.next)] -= mdp.gamma() * p * o.prob;
                r[s] += p * o.prob * o.reward;
            }
        }
    }
    m.lu().solve(&r).expect("non-singular").iter().copied().collect()
}

#[test]
fn evaluation_matches_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(n, k, gamma) in &[(4, 2, 0.9), (10, 3, 0.95), (30, 5, 0.99), (1, 1, 0.5)] {
        let mdp = Mdp::random(n, k, gamma, &mut rng).unwrap();
        let pi = random_policy(&mut rng, n, k);
        let v = evaluate_policy(&mdp, &pi, 1e-10).unwrap();
        let exact = linear_solve(&mdp, &pi);
        for s in 0..n {
            assert!((v.get(s) - exact[s]).abs() < 1e-6, "n={n} s={s}: {} vs {}", v.get(s), exact[s]);
        }
    }
}

#[test]
fn evaluation_on_the_grid_matches_linear_solve() {
    let (mdp, _) = build_dog_grid::<f64>(&GridConfig::default()).unwrap();
    let pi = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let v = evaluate_policy(&mdp, &pi, 1e-10).unwrap();
    let exact = linear_solve(&mdp, &pi);
    for s in 0..mdp.n_states() {
        assert!((v.get(s) - exact[s]).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn advantage_identities(seed in any::<u64>(), n in 1usize..=20, k in 1usize..=5, gamma in 0.0f64..0.97) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = Mdp::random(n, k, gamma, &mut rng).unwrap();
        let pi = random_policy(&mut rng, n, k);
        let v = evaluate_policy(&mdp, &pi, 1e-12).unwrap();
        let q = action_values(&mdp, &pi, &v).unwrap();
        let a = advantage(&q, &pi).unwrap();
        for s in 0..n {
            let mixed: f64 = (0..k).map(|b| pi.prob(s, b) * a.get(s, b)).sum();
            prop_assert!(mixed.abs() < 1e-9);
            let vq: f64 = (0..k).map(|b| pi.prob(s, b) * q.get(s, b)).sum();
            prop_assert!((vq - v.get(s)).abs() < 1e-9);
            for b in 0..k {
                let expected_td: f64 = mdp
                    .outcomes(s, b)
                    .iter()
                    .map(|o| o.prob * td_error(&v, o.reward, s, o.next, mdp.gamma()))
                    .sum();
                prop_assert!((expected_td - a.get(s, b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn evaluation_is_a_fixed_point(seed in any::<u64>(), n in 1usize..=15, k in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = Mdp::random(n, k, 0.9, &mut rng).unwrap();
        let pi = random_policy(&mut rng, n, k);
        let v = evaluate_policy(&mdp, &pi, 1e-10).unwrap();
        prop_assert!(policy_residual(&mdp, &pi, &v.0) <= 1e-10);
    }

    #[test]
    fn gamma_zero_gives_expected_reward(seed in any::<u64>(), n in 1usize..=10, k in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = Mdp::random(n, k, 0.0, &mut rng).unwrap();
        let pi = random_policy(&mut rng, n, k);
        let v = evaluate_policy(&mdp, &pi, 1e-12).unwrap();
        for s in 0..n {
            let r: f64 = (0..k).map(|a| pi.prob(s, a) * mdp.expected_reward(s, a)).sum();
            prop_assert!((v.get(s) - r).abs() < 1e-12);
        }
    }
}

/// No single-state action swap improves any state's value.
fn assert_non_improvable(mdp: &Mdp<f64>) {
    let (_, pi) = value_iteration(mdp, 1e-11).unwrap();
    let base_actions = pi.greedy_actions();
    let base = evaluate_policy(mdp, &pi, 1e-11).unwrap();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let mut actions = base_actions.clone();
            actions[s] = a;
            let swapped = TabularPolicy::deterministic(mdp.n_actions(), &actions).unwrap();
            let v = evaluate_policy(mdp, &swapped, 1e-11).unwrap();
            for t in 0..mdp.n_states() {
                assert!(v.get(t) <= base.get(t) + 1e-7, "swap ({s}, {a}) improves state {t}");
            }
        }
    }
}

#[test]
fn value_iteration_is_non_improvable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(n, k) in &[(3, 2), (12, 4), (40, 3)] {
        assert_non_improvable(&Mdp::random(n, k, 0.9, &mut rng).unwrap());
    }
    let (grid, _) = build_dog_grid::<f64>(&GridConfig::default()).unwrap();
    assert_non_improvable(&grid);
}

/// Discounted return of walking `path` (a list of cells after the start).
fn path_return(world_cfg: &GridConfig, path: &[Cell]) -> f64 {
    let mut g = 0.0;
    let mut discount = 1.0;
    for c in path {
        let r = if *c == world_cfg.goal {
            world_cfg.goal_reward
        } else if world_cfg.penalty_cells.contains(c) {
            world_cfg.penalty_reward
        } else {
            world_cfg.step_reward
        };
        g += discount * r;
        discount *= world_cfg.gamma;
    }
    g
}

fn enumerate_simple_paths(cfg: &GridConfig, at: Cell, visited: &mut Vec<Cell>, best: &mut (f64, Vec<Cell>)) {
    if at == cfg.goal {
        let g = path_return(cfg, visited);
        if g > best.0 {
            *best = (g, visited.clone());
        }
        return;
    }
    let (x, y) = at;
    let mut next = Vec::new();
    if y + 1 < cfg.height {
        next.push((x, y + 1));
    }
    if y > 0 {
        next.push((x, y - 1));
    }
    if x > 0 {
        next.push((x - 1, y));
    }
    if x + 1 < cfg.width {
        next.push((x + 1, y));
    }
    for c in next {
        if c == cfg.start || visited.contains(&c) {
            continue;
        }
        visited.push(c);
        enumerate_simple_paths(cfg, c, visited, best);
        visited.pop();
    }
}

#[test]
fn optimal_grid_path_is_the_best_simple_path_and_avoids_penalties() {
    let cfg = GridConfig::default();
    let (mdp, world) = build_dog_grid::<f64>(&cfg).unwrap();
    let (v, pi) = value_iteration(&mdp, 1e-12).unwrap();

    let mut best = (f64::NEG_INFINITY, Vec::new());
    enumerate_simple_paths(&cfg, cfg.start, &mut Vec::new(), &mut best);
    assert!(best.1.iter().all(|c| !cfg.penalty_cells.contains(c)));
    assert!((v.get(world.start_state()) - best.0).abs() < 1e-9);

    let walk = world.rollout(&pi, 50);
    assert_eq!(walk.last(), Some(&cfg.goal));
    assert!(walk.iter().all(|c| !world.is_penalty(*c)));
    assert_eq!(walk.len() - 1, best.1.len());
}

#[test]
fn grid_moves_and_walls() {
    let (mdp, world) = build_dog_grid::<f64>(&GridConfig::default()).unwrap();
    assert_eq!((mdp.n_states(), mdp.n_actions()), (25, 4));
    let up = mdp.outcomes(world.state((3, 0)), Move::Up.index());
    assert_eq!(up.len(), 1);
    assert_eq!(world.cell(up[0].next), (3, 1));
    let left = mdp.outcomes(world.state((0, 0)), Move::Left.index());
    assert_eq!(world.cell(left[0].next), (0, 0));
}

/// Uniform random walk estimate of `Q(start, a)`.
fn monte_carlo_q(mdp: &Mdp<f64>, start: usize, a: usize, rollouts: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let gamma = mdp.gamma();
    let horizon = (1e-12f64.ln() / gamma.ln()).ceil() as usize;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..rollouts {
        let mut s = start;
        let mut action = a;
        let mut g = 0.0;
        let mut discount = 1.0;
        for _ in 0..horizon {
            let o = mdp.sample(s, action, rng.gen());
            g += discount * o.reward;
            discount *= gamma;
            s = o.next;
            if mdp.is_terminal(s) {
                break;
            }
            action = rng.gen_range(0..mdp.n_actions());
        }
        sum += g;
        sum_sq += g * g;
    }
    let n = rollouts as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn start_state_values_match_monte_carlo() {
    let (mdp, world) = build_dog_grid::<f64>(&GridConfig::default()).unwrap();
    let pi = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let v = evaluate_policy(&mdp, &pi, 1e-12).unwrap();
    let q = action_values(&mdp, &pi, &v).unwrap();
    let adv = advantage(&q, &pi).unwrap();
    let s0 = world.start_state();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let estimates: Vec<(f64, f64)> = (0..4).map(|a| monte_carlo_q(&mdp, s0, a, 100_000, &mut rng)).collect();
    let v_mc: f64 = estimates.iter().map(|e| e.0).sum::<f64>() / 4.0;
    for (a, &(mean, se)) in estimates.iter().enumerate() {
        assert!((mean - q.get(s0, a)).abs() < 3.0 * se, "Q({a}) {mean} +- {se} vs {}", q.get(s0, a));
        // A = Q - mean Q; its standard error is bounded by the sum of both
        let se_adv = se + estimates.iter().map(|e| e.1).sum::<f64>() / 4.0;
        assert!((mean - v_mc - adv.get(s0, a)).abs() < 3.0 * se_adv);
    }
}

#[test]
fn optimal_action_sets_include_ties() {
    let (mdp, world) = build_dog_grid::<f64>(&GridConfig::default()).unwrap();
    let (v, _) = value_iteration(&mdp, 1e-12).unwrap();
    // left and right from the start lead to mirror-image six-step routes
    let at_start = optimal_actions(&mdp, &v, world.start_state(), 1e-12);
    assert_eq!(at_start, vec![Move::Left.index(), Move::Right.index()]);
    let zero = ValueTable::zeros(mdp.n_states());
    assert_eq!(optimal_actions(&mdp, &zero, world.state((0, 0)), 1e-12).len(), 4);
}
