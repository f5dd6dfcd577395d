use aimd_core::cost::{Cost, CostFunction};
use aimd_core::oracle::{
    kkt_residual, solve_projected_gradient, solve_projected_gradient_from, solve_separable,
    total_cost,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAPS: [f64; 3] = [32.0, 20.0, 25.0];

fn instance(rng: &mut ChaCha8Rng, n: usize) -> Vec<CostFunction> {
    (0..n).map(|_| CostFunction::sample(rng)).collect()
}

/// Uniform random point of the product of scaled simplices.
fn random_feasible(rng: &mut ChaCha8Rng, n: usize, caps: &[f64]) -> Vec<Vec<f64>> {
    let mut x = vec![vec![0.0; caps.len()]; n];
    for (j, &c) in caps.iter().enumerate() {
        let w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
        let s: f64 = w.iter().sum();
        for (row, wi) in x.iter_mut().zip(&w) {
            row[j] = c * wi / s;
        }
    }
    x
}

/// First two resources of a family member.
struct TwoResource(CostFunction);

impl Cost for TwoResource {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.component(0, x[0]) + self.0.component(1, x[1])
    }
    fn partial(&self, x: &[f64], j: usize) -> f64 {
        self.0.marginal(j, x[j])
    }
    fn is_separable(&self) -> bool {
        true
    }
}

#[test]
fn solvers_agree_and_dominate_random_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let n = rng.random_range(2..=10);
        let fs = instance(&mut rng, n);
        let sep = solve_separable(&fs, &CAPS, 1e-12).unwrap();
        let pg = solve_projected_gradient(&fs, &CAPS, 1e-10, 200_000).unwrap();
        assert!(pg.certified, "pg residual {}", pg.kkt_residual);
        for (a, b) in sep.x_star.iter().flatten().zip(pg.x_star.iter().flatten()) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
        let best = sep.total_cost(&fs);
        for _ in 0..100 {
            let y = random_feasible(&mut rng, n, &CAPS);
            assert!(best <= total_cost(&fs, &y));
        }
    }
}

#[test]
fn multistart_reaches_the_same_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let n = rng.random_range(2..=8);
        let fs = instance(&mut rng, n);
        let tol = 1e-10;
        let a = solve_projected_gradient_from(&fs, &CAPS, random_feasible(&mut rng, n, &CAPS), tol, 200_000)
            .unwrap();
        let b = solve_projected_gradient_from(&fs, &CAPS, random_feasible(&mut rng, n, &CAPS), tol, 200_000)
            .unwrap();
        assert!(a.certified && b.certified);
        for (u, v) in a.x_star.iter().flatten().zip(b.x_star.iter().flatten()) {
            assert!((u - v).abs() <= 1e-5, "{u} vs {v}");
        }
    }
}

#[test]
fn doubling_capacity_never_shrinks_an_allocation() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let doubled: Vec<f64> = CAPS.iter().map(|c| 2.0 * c).collect();
    for _ in 0..10 {
        let n = rng.random_range(2..=10);
        let fs = instance(&mut rng, n);
        let base = solve_separable(&fs, &CAPS, 1e-12).unwrap();
        let big = solve_separable(&fs, &doubled, 1e-12).unwrap();
        for (a, b) in base.x_star.iter().flatten().zip(big.x_star.iter().flatten()) {
            assert!(b + 1e-9 >= *a);
        }
    }
}

#[test]
fn optimum_has_derivative_consensus() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let fs = instance(&mut rng, 60);
    let sol = solve_separable(&fs, &CAPS, 1e-12).unwrap();
    for j in 0..3 {
        let sum: f64 = sol.x_star.iter().map(|r| r[j]).sum();
        assert!((sum - CAPS[j]).abs() <= 1e-10 * CAPS[j]);
        for (f, x) in fs.iter().zip(&sol.x_star) {
            assert!((f.partial(x, j) - sol.mu[j]).abs() <= 1e-6 * sol.mu[j]);
        }
    }
    assert!(kkt_residual(&fs, &sol.x_star, &CAPS) <= 1e-6);
}

/// Exhaustive search on a 10⁻² lattice. Costs are separable, so each
/// resource is searched on its own.
fn grid_search(fs: &[TwoResource], caps: &[f64]) -> Vec<Vec<f64>> {
    let h = 1e-2;
    let mut best = vec![vec![0.0; caps.len()]; fs.len()];
    for (j, &c) in caps.iter().enumerate() {
        let steps = (c / h).round() as usize;
        let mut best_val = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let x = [a as f64 * h, b as f64 * h, c - (a + b) as f64 * h];
                let val: f64 = fs.iter().zip(x).map(|(f, t)| f.0.component(j, t)).sum();
                if val < best_val {
                    best_val = val;
                    for (row, t) in best.iter_mut().zip(x) {
                        row[j] = t;
                    }
                }
            }
        }
    }
    best
}

#[test]
fn projected_gradient_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let caps = [1.5, 1.2];
    for _ in 0..5 {
        let fs: Vec<TwoResource> = (0..3).map(|_| TwoResource(CostFunction::sample(&mut rng))).collect();
        let pg = solve_projected_gradient(&fs, &caps, 1e-9, 100_000).unwrap();
        let grid = grid_search(&fs, &caps);
        for (a, b) in pg.x_star.iter().flatten().zip(grid.iter().flatten()) {
            assert!((a - b).abs() <= 2e-2, "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn identical_devices_split_evenly(seed: u64, n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = CostFunction::sample(&mut rng);
        let fs = vec![f; n];
        let sol = solve_separable(&fs, &CAPS, 1e-12).unwrap();
        for row in &sol.x_star {
            for (j, c) in CAPS.iter().enumerate() {
                prop_assert!((row[j] - c / n as f64).abs() <= 1e-9 * c);
            }
        }
    }
}
