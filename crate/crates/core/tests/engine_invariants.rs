use aimd_core::config::cloudlet_config;
use aimd_core::engine::{init_world, run, Trace};
use aimd_core::{Config, Mode};
use proptest::prelude::*;

fn short(n: usize, steps: u64, seed: u64) -> Config {
    cloudlet_config(n, steps, seed)
}

/// Between events total demand grows by exactly `n·α` per step, and after
/// an event it can only shrink.
fn check_sum_dynamics(trace: &Trace, config: &Config) {
    let n = config.n as f64;
    let totals = &trace.series.totals;
    for (k, pair) in totals.windows(2).enumerate() {
        let s = &trace.events.get(k as u64).expect("event entry").bits;
        for (j, p) in config.params().iter().enumerate() {
            let delta = pair[1][j] - pair[0][j];
            if s[j] {
                assert!(delta <= 1e-9, "k={k} j={j}: grew by {delta} after an event");
            } else {
                let expected = n * p.alpha;
                assert!((delta - expected).abs() <= 1e-9 * pair[1][j].max(1.0), "k={k} j={j}: {delta} vs {expected}");
            }
        }
    }
}

#[test]
fn sum_dynamics_hold_in_both_modes() {
    let config = short(12, 3000, 4);
    for mode in [Mode::Deterministic, Mode::Stochastic] {
        check_sum_dynamics(&run(&config, mode).unwrap(), &config);
    }
}

#[test]
fn events_fire_exactly_when_totals_exceed_the_threshold() {
    let config = short(8, 2000, 5);
    let trace = run(&config, Mode::Deterministic).unwrap();
    for (k, totals) in trace.series.totals.iter().enumerate().skip(1) {
        let bits = &trace.events.get(k as u64).unwrap().bits;
        for (j, p) in config.params().iter().enumerate() {
            assert_eq!(bits[j], totals[j] > p.gamma_cap * p.capacity, "k={k} j={j}");
        }
    }
}

#[test]
fn lower_gamma_lowers_the_peak() {
    let mut config = short(20, 4000, 6);
    let full = run(&config, Mode::Deterministic).unwrap();
    for r in &mut config.resources {
        r.gamma_cap = 0.9;
    }
    let reduced = run(&config, Mode::Deterministic).unwrap();
    let peak = |t: &Trace, j: usize| t.series.totals.iter().map(|r| r[j]).fold(f64::MIN, f64::max);
    for (j, r) in config.resources.iter().enumerate() {
        let bound = 0.9 * r.capacity + config.n as f64 * r.alpha;
        assert!(peak(&reduced, j) <= bound + 1e-9);
        assert!(peak(&reduced, j) < peak(&full, j));
    }
}

#[test]
fn consensus_spread_shrinks_over_the_run() {
    let config = cloudlet_config(60, 30000, 1);
    for mode in [Mode::Deterministic, Mode::Stochastic] {
        let trace = run(&config, mode).unwrap();
        let s = &trace.series.spread;
        for j in 0..3 {
            assert!(s[30000][j] < s[1000][j], "{mode:?} resource {j}: {} vs {}", s[30000][j], s[1000][j]);
        }
    }
}

#[test]
fn averages_match_the_mean_of_traced_allocations() {
    let mut config = short(3, 200, 7);
    config.trace_stride = Some(1);
    let trace = run(&config, Mode::Stochastic).unwrap();
    let width = trace.rows[0].x.len();
    let mut sum = vec![0.0; width];
    for (k, row) in trace.rows.iter().enumerate() {
        for (s, x) in sum.iter_mut().zip(&row.x) {
            *s += x;
        }
        for (s, xb) in sum.iter().zip(&row.x_bar) {
            let direct = s / (k + 1) as f64;
            assert!((direct - xb).abs() <= 1e-12 * direct.abs().max(1e-12), "k={k}");
        }
    }
}

#[test]
fn stepping_by_hand_matches_run() {
    let config = short(5, 50, 8);
    let trace = run(&config, Mode::Stochastic).unwrap();
    let mut w = init_world(&config, Mode::Stochastic).unwrap();
    for _ in 0..50 {
        w = w.step().unwrap();
    }
    assert_eq!(w.k, trace.final_state.k);
    for (a, b) in w.devices.iter().zip(&trace.final_state.devices) {
        assert_eq!(a.x, b.x);
        assert_eq!(a.x_bar, b.x_bar);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn runs_are_pure_functions_of_config(seed in 0..=i64::MAX as u64, n in 1usize..6) {
        let config = short(n, 300, seed);
        for mode in [Mode::Deterministic, Mode::Stochastic] {
            let a = run(&config, mode).unwrap();
            let b = run(&config, mode).unwrap();
            prop_assert_eq!(&a.rows, &b.rows);
            prop_assert_eq!(a.events.entries(), b.events.entries());
        }
    }

    #[test]
    fn sum_dynamics_hold_for_random_populations(seed in 0..=i64::MAX as u64, n in 1usize..10) {
        let config = short(n, 800, seed);
        check_sum_dynamics(&run(&config, Mode::Stochastic).unwrap(), &config);
    }
}
