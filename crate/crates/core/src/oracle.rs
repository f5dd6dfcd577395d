//! Centralized solvers for the social-cost problem
//!
//!   minimize Σ_i f_i(x_i)  s.t.  Σ_i x_i^j = C^j,  x ≥ 0,
//!
//! used as ground truth for the distributed runs.

use serde::{Deserialize, Serialize};

use crate::cost::Cost;
use crate::error::{Error, Result};

/// n×m, row-major by device.
pub type Allocation = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalAllocation {
    pub x_star: Allocation,
    /// Common marginal cost per resource.
    pub mu: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: u64,
    /// False when the solver stopped before reaching its tolerance.
    pub certified: bool,
}

impl OptimalAllocation {
    pub fn total_cost<C: Cost>(&self, functions: &[C]) -> f64 {
        total_cost(functions, &self.x_star)
    }
}

pub fn total_cost<C: Cost>(functions: &[C], x: &[Vec<f64>]) -> f64 {
    functions.iter().zip(x).map(|(f, xi)| f.value(xi)).sum()
}

fn check_inputs<C: Cost>(functions: &[C], capacities: &[f64]) -> Result<()> {
    if functions.is_empty() {
        return Err(Error::EmptyFunctions);
    }
    let m = capacities.len();
    if let Some(f) = functions.iter().find(|f| f.dim() != m) {
        return Err(Error::LengthMismatch {
            expected: m,
            got: f.dim(),
        });
    }
    if let Some(c) = capacities.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::Domain(format!("capacities must be positive, got {c}")));
    }
    Ok(())
}

/// Scalar marginal `∂_j f(t e_j)` of a separable function.
fn marginal<C: Cost>(f: &C, j: usize, t: f64, scratch: &mut [f64]) -> f64 {
    scratch[j] = t;
    let g = f.partial(scratch, j);
    scratch[j] = 0.0;
    g
}

/// Demand of one device at multiplier `mu`: the `t ∈ [0, cap]` with
/// `∂_j f(t) = mu`, clipped to the interval ends.
fn demand_at<C: Cost>(f: &C, j: usize, mu: f64, cap: f64, tol: f64, scratch: &mut [f64]) -> f64 {
    if marginal(f, j, 0.0, scratch) >= mu {
        return 0.0;
    }
    if marginal(f, j, cap, scratch) <= mu {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if marginal(f, j, mid, scratch) < mu {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Per-resource bisection on the common marginal μ^j, with an inner
/// bisection inverting each device's marginal cost.
pub fn solve_separable<C: Cost>(
    functions: &[C],
    capacities: &[f64],
    tol: f64,
) -> Result<OptimalAllocation> {
    check_inputs(functions, capacities)?;
    if functions.iter().any(|f| !f.is_separable()) {
        return Err(Error::NonSeparable);
    }
    let n = functions.len();
    let m = capacities.len();
    let mut x_star = vec![vec![0.0; m]; n];
    let mut mu = vec![0.0; m];
    let mut iterations = 0;
    let mut scratch = vec![0.0; m];

    for (j, &cap) in capacities.iter().enumerate() {
        let inner_tol = tol * cap * 1e-3;
        let mut demand = |mu: f64, out: &mut Vec<f64>| -> f64 {
            out.clear();
            out.extend(
                functions
                    .iter()
                    .map(|f| demand_at(f, j, mu, cap, inner_tol, &mut scratch)),
            );
            out.iter().sum()
        };
        let mut xs = Vec::with_capacity(n);

        let mut hi = 1.0;
        let mut expansions = 0;
        while demand(hi, &mut xs) < cap {
            hi *= 2.0;
            expansions += 1;
            if expansions > 1100 || !hi.is_finite() {
                return Err(Error::BracketExpansion { resource: j });
            }
        }
        let mut lo = 0.0;
        let mut mid = hi;
        let mut total = demand(mid, &mut xs);
        for _ in 0..500 {
            iterations += 1;
            mid = 0.5 * (lo + hi);
            total = demand(mid, &mut xs);
            if (total - cap).abs() <= tol * cap {
                break;
            }
            if total < cap {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        if (total - cap).abs() > tol * cap.max(1.0) * 10.0 {
            return Err(Error::BracketExpansion { resource: j });
        }
        mu[j] = mid;
        for (row, &v) in x_star.iter_mut().zip(&xs) {
            row[j] = v;
        }
    }
    let kkt = kkt_residual(functions, &x_star, capacities);
    Ok(OptimalAllocation {
        x_star,
        mu,
        kkt_residual: kkt,
        iterations,
        certified: true,
    })
}

/// Max over resources of the relative feasibility gap and the normalized
/// derivative spread `(max − min) / mean` among devices holding more than a
/// negligible share. A device at zero whose marginal sits below that range
/// also counts, since it should be taking some of the resource.
pub fn kkt_residual<C: Cost>(functions: &[C], x: &[Vec<f64>], capacities: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, &cap) in capacities.iter().enumerate() {
        let sum: f64 = x.iter().map(|xi| xi[j]).sum();
        worst = worst.max((sum - cap).abs() / cap);

        let threshold = 1e-9 * cap;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut total = 0.0;
        let mut active = 0usize;
        for (f, xi) in functions.iter().zip(x) {
            if xi[j] > threshold {
                let g = f.partial(xi, j);
                lo = lo.min(g);
                hi = hi.max(g);
                total += g;
                active += 1;
            }
        }
        if active == 0 {
            continue;
        }
        let mean = total / active as f64;
        if mean <= 0.0 {
            continue;
        }
        worst = worst.max((hi - lo) / mean);
        for (f, xi) in functions.iter().zip(x) {
            if xi[j] <= threshold {
                let g = f.partial(xi, j);
                if g < lo {
                    worst = worst.max((lo - g) / mean);
                }
            }
        }
    }
    worst
}

/// Euclidean projection of `v` onto `{y ≥ 0, Σ y = total}`.
pub fn project_scaled_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - total) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&u| (u - theta).max(0.0)).collect()
}

fn project(x: &mut [Vec<f64>], capacities: &[f64]) {
    let mut col = Vec::with_capacity(x.len());
    for (j, &cap) in capacities.iter().enumerate() {
        col.clear();
        col.extend(x.iter().map(|xi| xi[j]));
        for (xi, v) in x.iter_mut().zip(project_scaled_simplex(&col, cap)) {
            xi[j] = v;
        }
    }
}

fn gradient<C: Cost>(functions: &[C], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    functions
        .iter()
        .zip(x)
        .map(|(f, xi)| (0..xi.len()).map(|j| f.partial(xi, j)).collect())
        .collect()
}

fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(u, v)| u * v))
        .sum()
}

/// Projected gradient from the equal split `C^j / n`.
pub fn solve_projected_gradient<C: Cost>(
    functions: &[C],
    capacities: &[f64],
    tol: f64,
    max_iters: u64,
) -> Result<OptimalAllocation> {
    check_inputs(functions, capacities)?;
    let n = functions.len() as f64;
    let start = vec![capacities.iter().map(|c| c / n).collect(); functions.len()];
    solve_projected_gradient_from(functions, capacities, start, tol, max_iters)
}

const NONMONOTONE_MEMORY: usize = 10;
/// Gradient with the per-resource mean removed. Feasible directions sum to
/// zero over devices, so this changes no inner product in exact arithmetic
/// but keeps the large common marginal cost out of the rounding.
fn center(grad: &Allocation) -> Allocation {
    let n = grad.len() as f64;
    let m = grad.first().map_or(0, Vec::len);
    let means: Vec<f64> = (0..m).map(|j| grad.iter().map(|g| g[j]).sum::<f64>() / n).collect();
    grad.iter()
        .map(|g| g.iter().zip(&means).map(|(a, b)| a - b).collect())
        .collect()
}

const NOISE: f64 = 1e-12;
const ARMIJO: f64 = 1e-4;
const STEP_MIN: f64 = 1e-14;
const STEP_MAX: f64 = 1e14;

/// Spectral projected gradient: Barzilai–Borwein step lengths with a
/// nonmonotone backtracking line search, projecting each resource column
/// onto its scaled simplex. Stops when the KKT residual drops to `tol`.
pub fn solve_projected_gradient_from<C: Cost>(
    functions: &[C],
    capacities: &[f64],
    start: Allocation,
    tol: f64,
    max_iters: u64,
) -> Result<OptimalAllocation> {
    check_inputs(functions, capacities)?;
    if start.len() != functions.len() {
        return Err(Error::LengthMismatch {
            expected: functions.len(),
            got: start.len(),
        });
    }
    let mut x = start;
    project(&mut x, capacities);
    let mut fx = total_cost(functions, &x);
    let mut grad = gradient(functions, &x);
    let mut history = vec![fx];
    let gnorm = dot(&grad, &grad).sqrt();
    let mut step = if gnorm > 0.0 { 1.0 / gnorm } else { 1.0 };

    let mut iterations = 0;
    let mut residual = kkt_residual(functions, &x, capacities);
    while residual > tol && iterations < max_iters {
        let centered = center(&grad);
        let mut trial: Allocation = x
            .iter()
            .zip(&centered)
            .map(|(xi, gi)| xi.iter().zip(gi).map(|(a, g)| a - step * g).collect())
            .collect();
        project(&mut trial, capacities);
        let dir: Allocation = trial
            .iter()
            .zip(&x)
            .map(|(t, xi)| t.iter().zip(xi).map(|(a, b)| a - b).collect())
            .collect();
        let slope = dot(&centered, &dir);
        if slope >= 0.0 {
            break;
        }
        let f_ref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut next;
        let mut f_next;
        loop {
            next = x
                .iter()
                .zip(&dir)
                .map(|(xi, di)| xi.iter().zip(di).map(|(a, d)| (a + t * d).max(0.0)).collect::<Vec<_>>())
                .collect::<Allocation>();
            f_next = total_cost(functions, &next);
            if f_next <= f_ref + ARMIJO * t * slope || t < 1e-12 {
                break;
            }
            // Close to the optimum the predicted decrease drops below the
            // rounding error of the objective. Fall back to the sign of the
            // directional derivative, which for a convex cost still certifies
            // that the step did not pass the line minimum.
            if (f_next - fx).abs() <= NOISE * fx.abs().max(1.0)
                && dot(&center(&gradient(functions, &next)), &dir) <= 0.0
            {
                break;
            }
            t *= 0.5;
        }
        let grad_next = gradient(functions, &next);
        let s: Allocation = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u - v).collect())
            .collect();
        let y: Allocation = grad_next
            .iter()
            .zip(&grad)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u - v).collect())
            .collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(STEP_MIN, STEP_MAX)
        } else {
            STEP_MAX
        };
        x = next;
        fx = f_next;
        grad = grad_next;
        history.push(fx);
        if history.len() > NONMONOTONE_MEMORY {
            history.remove(0);
        }
        iterations += 1;
        residual = kkt_residual(functions, &x, capacities);
    }

    let mu = (0..capacities.len())
        .map(|j| {
            let (sum, count) = x
                .iter()
                .zip(&grad)
                .filter(|(xi, _)| xi[j] > 1e-9 * capacities[j])
                .fold((0.0, 0usize), |(s, c), (_, g)| (s + g[j], c + 1));
            if count > 0 {
                sum / count as f64
            } else {
                0.0
            }
        })
        .collect();
    Ok(OptimalAllocation {
        x_star: x,
        mu,
        kkt_residual: residual,
        iterations,
        certified: residual <= tol,
    })
}
