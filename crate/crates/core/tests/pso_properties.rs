use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ooc_core::optimization::{pso_minimize, Dimension, PsoConfig, SearchSpace};

fn boxed(bounds: &[(f64, f64)]) -> SearchSpace {
    SearchSpace::new(
        bounds
            .iter()
            .enumerate()
            .map(|(i, (lo, hi))| Dimension::new(format!("x{i}"), *lo, *hi))
            .collect(),
    )
    .unwrap()
}

fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter()
            .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos())
            .sum::<f64>()
}

#[test]
fn history_monotone_and_positions_in_box_over_100_seeds() {
    let space = boxed(&[(-5.12, 5.12), (-1.0, 3.0), (0.0, 1e-3)]);
    for seed in 0..100u64 {
        let seen = Mutex::new(Vec::new());
        let f = |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            rastrigin(&[x[0], x[1], x[2] * 1e3])
        };
        let cfg = PsoConfig { seed, ..Default::default() };
        let r = pso_minimize(f, &space, &cfg).unwrap();
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]), "seed {seed}");
        let seen = seen.into_inner().unwrap();
        assert_eq!(seen.len(), r.evaluations);
        assert!(seen.iter().all(|x| space.contains(x)), "seed {seed}");
        assert!(space.contains(&r.best_position));
    }
}

#[test]
fn convex_quadratic_is_solved_for_most_seeds() {
    let space = boxed(&[(-10.0, 10.0), (-10.0, 10.0), (-10.0, 10.0)]);
    let solved = (0..100u64)
        .filter(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let target: Vec<f64> = (0..3).map(|_| rng.gen_range(-9.0..9.0)).collect();
            let weight: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..5.0)).collect();
            let f = |x: &[f64]| (0..3).map(|i| weight[i] * (x[i] - target[i]).powi(2)).sum::<f64>();
            let r = pso_minimize(f, &space, &PsoConfig { seed: *seed, ..Default::default() }).unwrap();
            r.best_cost < 1e-4
        })
        .count();
    assert!(solved >= 95, "{solved}/100");
}
