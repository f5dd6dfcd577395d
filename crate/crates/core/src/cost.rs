//! Private device cost functions.
//!
//! The built-in family is a three-branch polynomial over (RAM, CPU, storage).
//! Every branch is a sum of per-resource terms, so each partial derivative
//! depends on its own coordinate only. Partials are hand-derived.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of resources the built-in family is defined over.
pub const FAMILY_DIM: usize = 3;

/// Inclusive coefficient ranges for (a, b, c, d).
pub const COEFF_RANGES: [(u32, u32); 4] = [(1, 25), (1, 20), (1, 15), (1, 10)];

/// A differentiable cost over `dim()` resources.
pub trait Cost: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn partial(&self, x: &[f64], j: usize) -> f64;

    /// True when `partial(x, j)` depends on `x[j]` alone.
    fn is_separable(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CostCase {
    Case1,
    Case2,
    Case3,
}

impl CostCase {
    pub const ALL: [CostCase; 3] = [CostCase::Case1, CostCase::Case2, CostCase::Case3];

    pub fn index(self) -> u8 {
        match self {
            CostCase::Case1 => 1,
            CostCase::Case2 => 2,
            CostCase::Case3 => 3,
        }
    }
}

impl TryFrom<u8> for CostCase {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(CostCase::Case1),
            2 => Ok(CostCase::Case2),
            3 => Ok(CostCase::Case3),
            other => Err(format!("case must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<CostCase> for u8 {
    fn from(c: CostCase) -> u8 {
        c.index()
    }
}

impl fmt::Display for CostCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case{}", self.index())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub d: u32,
}

impl CostCoefficients {
    pub fn as_array(&self) -> [u32; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Names of coefficients outside their sampling range.
    pub fn out_of_range(&self) -> Vec<&'static str> {
        ["a", "b", "c", "d"]
            .into_iter()
            .zip(self.as_array())
            .zip(COEFF_RANGES)
            .filter(|((_, v), (lo, hi))| v < lo || v > hi)
            .map(|((name, _), _)| name)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostFunction {
    #[serde(rename = "case")]
    pub case_id: CostCase,
    #[serde(flatten)]
    pub coeffs: CostCoefficients,
}

impl CostFunction {
    pub fn new(case_id: CostCase, a: u32, b: u32, c: u32, d: u32) -> Result<Self> {
        let coeffs = CostCoefficients { a, b, c, d };
        let bad = coeffs.out_of_range();
        if !bad.is_empty() {
            return Err(Error::Domain(format!(
                "coefficients out of range: {}",
                bad.join(", ")
            )));
        }
        Ok(CostFunction { case_id, coeffs })
    }

    /// Draws the branch and then a, b, c, d from the same stream.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let case_id = CostCase::ALL[rng.random_range(0..3)];
        let [a, b, c, d] = COEFF_RANGES.map(|(lo, hi)| rng.random_range(lo..=hi));
        CostFunction {
            case_id,
            coeffs: CostCoefficients { a, b, c, d },
        }
    }

    /// Checked evaluation.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_point(x)?;
        Ok(self.value(x))
    }

    /// Checked partial derivative with respect to resource `j` (zero-based).
    pub fn partial_derivative(&self, x: &[f64], j: usize) -> Result<f64> {
        if j >= FAMILY_DIM {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: FAMILY_DIM,
            });
        }
        check_point(x)?;
        Ok(self.marginal(j, x[j]))
    }

    /// Per-resource term of the separable sum.
    pub fn component(&self, j: usize, t: f64) -> f64 {
        let CostCoefficients { a, b, c, d } = self.coeffs;
        let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
        let t2 = t * t;
        let t4 = t2 * t2;
        match (self.case_id, j) {
            (CostCase::Case1, 0) => a * (t2 + 0.5 * t4),
            (CostCase::Case1, 1) => b * (2.0 * t4 + 0.5 * t4 * t2),
            (CostCase::Case1, 2) => c * (t2 + 0.25 * t4) + 0.125 * d * t4 * t4,
            (CostCase::Case2, 0) => a * t2,
            (CostCase::Case2, 1) => b * (t2 + 0.5 * t4),
            (CostCase::Case2, 2) => 1.5 * c * t4,
            (CostCase::Case3, 0) => a * t4 * t2 / 3.0,
            (CostCase::Case3, 1) => b * t2 + d * t4 * t2 / 6.0,
            (CostCase::Case3, 2) => c * t2 + 0.125 * d * t4,
            _ => panic!("resource index {j} out of range"),
        }
    }

    /// Derivative of [`component`](Self::component) in `t`.
    pub fn marginal(&self, j: usize, t: f64) -> f64 {
        let CostCoefficients { a, b, c, d } = self.coeffs;
        let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
        let t2 = t * t;
        let t3 = t2 * t;
        match (self.case_id, j) {
            (CostCase::Case1, 0) => a * (2.0 * t + 2.0 * t3),
            (CostCase::Case1, 1) => b * (8.0 * t3 + 3.0 * t3 * t2),
            (CostCase::Case1, 2) => c * (2.0 * t + t3) + d * t3 * t3 * t,
            (CostCase::Case2, 0) => 2.0 * a * t,
            (CostCase::Case2, 1) => b * (2.0 * t + 2.0 * t3),
            (CostCase::Case2, 2) => 6.0 * c * t3,
            (CostCase::Case3, 0) => 2.0 * a * t3 * t2,
            (CostCase::Case3, 1) => 2.0 * b * t + d * t3 * t2,
            (CostCase::Case3, 2) => 2.0 * c * t + 0.5 * d * t3,
            _ => panic!("resource index {j} out of range"),
        }
    }
}

impl Cost for CostFunction {
    fn dim(&self) -> usize {
        FAMILY_DIM
    }

    /// Allocations shorter than [`FAMILY_DIM`] are read as the restriction of
    /// the cost to the leading resources.
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().take(FAMILY_DIM).enumerate().map(|(j, &t)| self.component(j, t)).sum()
    }

    fn partial(&self, x: &[f64], j: usize) -> f64 {
        self.marginal(j, x[j])
    }

    fn is_separable(&self) -> bool {
        true
    }
}

impl<C: Cost + ?Sized> Cost for &C {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn partial(&self, x: &[f64], j: usize) -> f64 {
        (**self).partial(x, j)
    }
    fn is_separable(&self) -> bool {
        (**self).is_separable()
    }
}

impl<C: Cost + ?Sized> Cost for Box<C> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn partial(&self, x: &[f64], j: usize) -> f64 {
        (**self).partial(x, j)
    }
    fn is_separable(&self) -> bool {
        (**self).is_separable()
    }
}

fn check_point(x: &[f64]) -> Result<()> {
    if x.len() != FAMILY_DIM {
        return Err(Error::LengthMismatch {
            expected: FAMILY_DIM,
            got: x.len(),
        });
    }
    if let Some((j, v)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Domain(format!(
            "allocation component {j} must be nonnegative, got {v}"
        )));
    }
    Ok(())
}

/// Samples one cost function from `seed`.
pub fn sample_cost_function(seed: u64, m: usize) -> Result<CostFunction> {
    if m != FAMILY_DIM {
        return Err(Error::UnsupportedFamily(format!(
            "the polynomial family needs exactly {FAMILY_DIM} resources, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(CostFunction::sample(&mut rng))
}

/// Per-device functions for a population of `n`; device `i` reads its own stream.
pub fn sample_population(seed: u64, n: usize, m: usize) -> Result<Vec<CostFunction>> {
    if m != FAMILY_DIM {
        return Err(Error::UnsupportedFamily(format!(
            "the polynomial family needs exactly {FAMILY_DIM} resources, got {m}"
        )));
    }
    Ok((0..n)
        .map(|i| CostFunction::sample(&mut crate::seeds::cost_stream(seed, i)))
        .collect())
}

/// Closed interval per axis.
pub type AxisBox = [(f64, f64)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Partial derivative not strictly positive.
    Positivity,
    /// Partial derivative decreased along its own axis.
    Monotonicity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub resource: usize,
    pub point: Vec<f64>,
    pub derivative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub checked: usize,
    pub first_violation: Option<Violation>,
}

impl RegularityReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Samples `samples` points in `bounds` and checks that every partial is
/// positive and nondecreasing along its own axis.
pub fn verify_regularity<C: Cost + ?Sized>(
    f: &C,
    bounds: &AxisBox,
    samples: usize,
) -> RegularityReport {
    let m = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a551);
    let mut checked = 0;
    for _ in 0..samples {
        let x: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        for j in 0..m {
            checked += 1;
            let g = f.partial(&x, j);
            if !(g > 0.0) {
                return RegularityReport {
                    checked,
                    first_violation: Some(Violation {
                        kind: ViolationKind::Positivity,
                        resource: j,
                        point: x,
                        derivative: g,
                    }),
                };
            }
            let mut y = x.clone();
            let (_, hi) = bounds[j];
            y[j] = x[j] + (hi - x[j]) * rng.random::<f64>();
            let g_up = f.partial(&y, j);
            if g_up < g * (1.0 - 1e-12) {
                return RegularityReport {
                    checked,
                    first_violation: Some(Violation {
                        kind: ViolationKind::Monotonicity,
                        resource: j,
                        point: y,
                        derivative: g_up,
                    }),
                };
            }
        }
    }
    RegularityReport {
        checked,
        first_violation: None,
    }
}

/// Smallest `x_j / ∂_j f(x)` over all functions and a regular grid on
/// `bounds`, times `safety`. Grid points with a zero partial are skipped.
pub fn estimate_gamma<C: Cost>(
    functions: &[C],
    bounds: &AxisBox,
    grid: usize,
    safety: f64,
) -> Result<Vec<f64>> {
    let first = functions.first().ok_or(Error::EmptyFunctions)?;
    let m = first.dim();
    if let Some(f) = functions.iter().find(|f| f.dim() != m) {
        return Err(Error::LengthMismatch {
            expected: m,
            got: f.dim(),
        });
    }
    if bounds.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            got: bounds.len(),
        });
    }
    if grid < 2 {
        return Err(Error::Domain(format!("grid needs at least 2 points, got {grid}")));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::Domain(format!("safety factor must be in (0, 1], got {safety}")));
    }
    if let Some((j, _)) = bounds
        .iter()
        .enumerate()
        .find(|(_, &(lo, hi))| !(lo > 0.0) || !(hi >= lo))
    {
        return Err(Error::Domain(format!(
            "axis {j} must be a positive interval"
        )));
    }

    let axis = |j: usize, s: usize| {
        let (lo, hi) = bounds[j];
        lo + (hi - lo) * s as f64 / (grid - 1) as f64
    };
    let mut gamma = vec![f64::INFINITY; m];
    let total = grid.pow(m as u32);
    let mut x = vec![0.0; m];
    for f in functions {
        for flat in 0..total {
            let mut rest = flat;
            for (j, xj) in x.iter_mut().enumerate() {
                *xj = axis(j, rest % grid);
                rest /= grid;
            }
            for j in 0..m {
                let g = f.partial(&x, j);
                if g > 0.0 {
                    gamma[j] = gamma[j].min(x[j] / g);
                }
            }
        }
    }
    Ok(gamma.into_iter().map(|g| g * safety).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cf(case: CostCase, a: u32, b: u32, c: u32, d: u32) -> CostFunction {
        CostFunction::new(case, a, b, c, d).unwrap()
    }

    struct Scalar<F: Fn(f64) -> f64 + Send + Sync, G: Fn(f64) -> f64 + Send + Sync>(F, G);

    impl<F, G> Cost for Scalar<F, G>
    where
        F: Fn(f64) -> f64 + Send + Sync,
        G: Fn(f64) -> f64 + Send + Sync,
    {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64]) -> f64 {
            (self.0)(x[0])
        }
        fn partial(&self, x: &[f64], _j: usize) -> f64 {
            (self.1)(x[0])
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = sample_cost_function(42, 3).unwrap();
        let g = sample_cost_function(42, 3).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn sampling_rejects_other_dimensions() {
        assert!(matches!(
            sample_cost_function(1, 2),
            Err(Error::UnsupportedFamily(_))
        ));
        assert!(sample_population(1, 4, 5).is_err());
    }

    #[test]
    fn sampled_coefficients_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5000 {
            let f = CostFunction::sample(&mut rng);
            assert!(f.coeffs.out_of_range().is_empty(), "{f:?}");
        }
    }

    #[test]
    fn case_frequencies_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            counts[CostFunction::sample(&mut rng).case_id.index() as usize - 1] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn evaluate_known_values() {
        let f = cf(CostCase::Case2, 1, 1, 1, 1);
        assert_eq!(f.evaluate(&[1.0, 1.0, 1.0]).unwrap(), 4.0);
        let f = cf(CostCase::Case1, 2, 1, 1, 8);
        assert_eq!(f.evaluate(&[1.0, 1.0, 1.0]).unwrap(), 7.75);
        for case in CostCase::ALL {
            assert_eq!(cf(case, 25, 20, 15, 10).evaluate(&[0.0; 3]).unwrap(), 0.0);
        }
    }

    #[test]
    fn evaluate_rejects_negative_and_short_input() {
        let f = cf(CostCase::Case3, 1, 1, 1, 1);
        assert!(matches!(f.evaluate(&[1.0, -0.1, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(
            f.evaluate(&[1.0, 1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(f.evaluate(&[f64::NAN, 1.0, 1.0]).is_err());
    }

    #[test]
    fn partial_known_values() {
        let f = cf(CostCase::Case2, 1, 3, 3, 3);
        assert_eq!(f.partial_derivative(&[1.0, 0.5, 0.5], 0).unwrap(), 2.0);
        let f = cf(CostCase::Case3, 4, 1, 2, 6);
        assert_eq!(f.partial_derivative(&[0.3, 1.0, 0.7], 1).unwrap(), 8.0);
        assert!(matches!(
            f.partial_derivative(&[1.0; 3], 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn sampled_functions_are_regular() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bounds = [(0.01, 3.0); 3];
        for _ in 0..30 {
            let f = CostFunction::sample(&mut rng);
            let report = verify_regularity(&f, &bounds, 1000);
            assert!(report.passed(), "{f:?}: {report:?}");
            assert_eq!(report.checked, 3000);
        }
    }

    #[test]
    fn decreasing_function_fails_positivity() {
        let f = Scalar(|x| -x, |_| -1.0);
        let report = verify_regularity(&f, &[(0.01, 3.0)], 10);
        let v = report.first_violation.unwrap();
        assert_eq!(v.kind, ViolationKind::Positivity);
        assert_eq!(report.checked, 1);
    }

    #[test]
    fn constant_function_fails() {
        let f = Scalar(|_| 5.0, |_| 0.0);
        let report = verify_regularity(&f, &[(0.01, 3.0)], 10);
        assert!(!report.passed());
    }

    #[test]
    fn concave_increasing_function_fails_monotonicity() {
        let f = Scalar(|x: f64| x.sqrt(), |x: f64| 0.5 / x.sqrt());
        let report = verify_regularity(&f, &[(0.01, 3.0)], 100);
        assert_eq!(
            report.first_violation.unwrap().kind,
            ViolationKind::Monotonicity
        );
    }

    #[test]
    fn gamma_of_square_is_half() {
        let f = Scalar(|x| x * x, |x| 2.0 * x);
        let gamma = estimate_gamma(&[f], &[(0.1, 2.0)], 25, 1.0).unwrap();
        assert!((gamma[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gamma_is_min_over_union() {
        let bounds = [(0.1, 2.0); 3];
        let f = cf(CostCase::Case1, 3, 4, 5, 6);
        let g = cf(CostCase::Case3, 7, 2, 9, 1);
        let gf = estimate_gamma(&[f], &bounds, 6, 1.0).unwrap();
        let gg = estimate_gamma(&[g], &bounds, 6, 1.0).unwrap();
        let both = estimate_gamma(&[f, g], &bounds, 6, 1.0).unwrap();
        for j in 0..3 {
            assert_eq!(both[j], gf[j].min(gg[j]));
        }
        let half = estimate_gamma(&[f, g], &bounds, 6, 0.5).unwrap();
        assert_eq!(half[1], both[1] * 0.5);
    }

    #[test]
    fn gamma_bounds_scaling_factor_on_grid() {
        let bounds = [(0.2, 1.5); 3];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fs: Vec<_> = (0..5).map(|_| CostFunction::sample(&mut rng)).collect();
        let gamma = estimate_gamma(&fs, &bounds, 5, 0.9).unwrap();
        for f in &fs {
            for s in 0..5 {
                let t = 0.2 + 1.3 * s as f64 / 4.0;
                for (j, gj) in gamma.iter().enumerate() {
                    assert!(gj * f.marginal(j, t) / t <= 0.9 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn gamma_errors() {
        let none: [CostFunction; 0] = [];
        assert!(matches!(
            estimate_gamma(&none, &[(0.1, 1.0); 3], 4, 1.0),
            Err(Error::EmptyFunctions)
        ));
        let f = cf(CostCase::Case1, 1, 1, 1, 1);
        assert!(estimate_gamma(&[f], &[(0.0, 1.0); 3], 4, 1.0).is_err());
        assert!(estimate_gamma(&[f], &[(0.1, 1.0); 3], 1, 1.0).is_err());
        assert!(estimate_gamma(&[f], &[(0.1, 1.0); 2], 4, 1.0).is_err());
    }

    #[test]
    fn serde_shape() {
        let f = cf(CostCase::Case3, 1, 2, 3, 4);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"case":3,"a":1,"b":2,"c":3,"d":4}"#);
        let back: CostFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<CostFunction>(r#"{"case":4,"a":1,"b":2,"c":3,"d":4}"#).is_err());
    }
}
