//! Control unit: one capacity-event bit per resource, and the bit count
//! broadcast so far.

use serde::{Deserialize, Serialize};

use crate::aimd::ResourceParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityEventVector {
    pub k: u64,
    pub bits: Vec<bool>,
}

impl CapacityEventVector {
    pub fn zeros(k: u64, m: usize) -> Self {
        CapacityEventVector {
            k,
            bits: vec![false; m],
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }
}

/// `S_j = 1` iff `totals[j] > gamma_cap_j · C_j`.
pub fn evaluate_capacity_events(totals: &[f64], params: &[ResourceParams]) -> Result<Vec<bool>> {
    if totals.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            got: totals.len(),
        });
    }
    Ok(totals
        .iter()
        .zip(params)
        .map(|(&t, p)| t > p.threshold())
        .collect())
}

/// Event vectors for steps `0..=last`, plus running per-resource 1-bit totals.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    m: usize,
    entries: Vec<CapacityEventVector>,
    /// `cumulative[k][j]` = number of ones on resource j in steps `0..=k`.
    cumulative: Vec<Vec<u64>>,
}

impl EventLog {
    /// Starts the log with the all-zero `S(0)`.
    pub fn new(m: usize) -> Self {
        EventLog {
            m,
            entries: vec![CapacityEventVector::zeros(0, m)],
            cumulative: vec![vec![0; m]],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn last_step(&self) -> u64 {
        (self.entries.len() - 1) as u64
    }

    pub fn entries(&self) -> &[CapacityEventVector] {
        &self.entries
    }

    pub fn get(&self, k: u64) -> Option<&CapacityEventVector> {
        self.entries.get(k as usize)
    }

    /// Appends `S(last + 1)`.
    pub fn push(&mut self, bits: Vec<bool>) -> Result<()> {
        if bits.len() != self.m {
            return Err(Error::LengthMismatch {
                expected: self.m,
                got: bits.len(),
            });
        }
        let k = self.entries.len() as u64;
        let prev = self.cumulative.last().expect("log is never empty");
        let next = prev
            .iter()
            .zip(&bits)
            .map(|(&c, &b)| c + b as u64)
            .collect();
        self.cumulative.push(next);
        self.entries.push(CapacityEventVector { k, bits });
        Ok(())
    }

    /// Per-resource counts of ones in steps `0..=upto_k`.
    pub fn per_resource_bits(&self, upto_k: u64) -> Result<&[u64]> {
        self.cumulative
            .get(upto_k as usize)
            .map(Vec::as_slice)
            .ok_or(Error::StepOutOfRange {
                requested: upto_k,
                last: self.last_step(),
            })
    }

    /// Total ones broadcast in steps `0..=upto_k`.
    pub fn communication_overhead(&self, upto_k: u64) -> Result<u64> {
        Ok(self.per_resource_bits(upto_k)?.iter().sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(capacity: f64, gamma_cap: f64) -> ResourceParams {
        ResourceParams {
            capacity,
            alpha: 0.1,
            beta: 0.5,
            gamma_cap,
            normalization: 0.01,
        }
    }

    #[test]
    fn capacity_examples() {
        let p = [params(32.0, 1.0), params(20.0, 1.0), params(25.0, 1.0)];
        assert_eq!(
            evaluate_capacity_events(&[32.01, 19.0, 24.0], &p).unwrap(),
            [true, false, false]
        );
        assert_eq!(
            evaluate_capacity_events(&[32.0, 20.0, 25.0], &p).unwrap(),
            [false, false, false]
        );
        assert_eq!(
            evaluate_capacity_events(&[18.5], &[params(20.0, 0.9)]).unwrap(),
            [true]
        );
        assert!(matches!(
            evaluate_capacity_events(&[1.0, 2.0], &p),
            Err(Error::LengthMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn overhead_examples() {
        let mut log = EventLog::new(3);
        assert_eq!(log.get(0).unwrap().bits, [false; 3]);
        log.push(vec![true, false, true]).unwrap();
        assert_eq!(log.communication_overhead(1).unwrap(), 2);
        assert_eq!(log.per_resource_bits(1).unwrap(), [1, 0, 1]);
        assert!(matches!(
            log.communication_overhead(2),
            Err(Error::StepOutOfRange { requested: 2, last: 1 })
        ));
        assert!(log.push(vec![true]).is_err());

        let mut zeros = EventLog::new(2);
        for _ in 0..50 {
            zeros.push(vec![false, false]).unwrap();
        }
        assert_eq!(zeros.communication_overhead(50).unwrap(), 0);
        assert_eq!(zeros.entries().last().unwrap().k, 50);
    }

    proptest! {
        #[test]
        fn permuting_resources_permutes_bits(
            totals in proptest::collection::vec(0.0..50.0f64, 4),
            caps in proptest::collection::vec(1.0..50.0f64, 4),
        ) {
            let p: Vec<_> = caps.iter().map(|&c| params(c, 0.9)).collect();
            let s = evaluate_capacity_events(&totals, &p).unwrap();
            let perm = [2usize, 0, 3, 1];
            let pt: Vec<_> = perm.iter().map(|&i| totals[i]).collect();
            let pp: Vec<_> = perm.iter().map(|&i| p[i]).collect();
            let ps = evaluate_capacity_events(&pt, &pp).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(ps[k], s[i]);
            }
        }

        #[test]
        fn raising_totals_never_clears_a_bit(
            totals in proptest::collection::vec(0.0..50.0f64, 3),
            bump in proptest::collection::vec(0.0..5.0f64, 3),
        ) {
            let p = [params(20.0, 1.0), params(30.0, 0.8), params(10.0, 0.5)];
            let before = evaluate_capacity_events(&totals, &p).unwrap();
            let raised: Vec<_> = totals.iter().zip(&bump).map(|(t, b)| t + b).collect();
            let after = evaluate_capacity_events(&raised, &p).unwrap();
            for j in 0..3 {
                prop_assert!(!before[j] || after[j]);
            }
        }

        #[test]
        fn overhead_monotone_and_bounded(bits in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 3), 0..60)) {
            let mut log = EventLog::new(3);
            for b in bits {
                log.push(b).unwrap();
            }
            let mut prev = 0;
            for k in 0..=log.last_step() {
                let o = log.communication_overhead(k).unwrap();
                prop_assert!(o >= prev);
                prop_assert!(o <= 3 * (k + 1));
                prev = o;
            }
        }
    }
}
