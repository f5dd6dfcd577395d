//! Synchronous-round simulation of n devices sharing m resources.
//!
//! Round order: devices react to `S(k)` (λ from the averages held at k),
//! averages update, then the control unit turns the new totals into `S(k+1)`.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aimd::{ClampCounts, DeviceState, Mode, ResourceParams};
use crate::config::Config;
use crate::control::{evaluate_capacity_events, CapacityEventVector, EventLog};
use crate::cost::{Cost, CostFunction};
use crate::error::{Error, Result};
use crate::seeds;

/// Steps below this are always traced under the default policy.
pub const DENSE_TRACE_STEPS: u64 = 1000;
/// Stride after [`DENSE_TRACE_STEPS`] under the default policy.
pub const SPARSE_TRACE_STRIDE: u64 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub devices: Vec<DeviceState>,
    pub params: Vec<ResourceParams>,
    /// `S(k)`, consumed by the next step.
    pub events: CapacityEventVector,
    pub mode: Mode,
    pub k: u64,
    pub seed: u64,
    pub clamps: ClampCounts,
    /// Back-off coin streams, `streams[i][j]`.
    streams: Vec<Vec<ChaCha8Rng>>,
}

impl WorldState {
    pub fn new(
        costs: Vec<CostFunction>,
        params: Vec<ResourceParams>,
        mode: Mode,
        seed: u64,
    ) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::EmptyFunctions);
        }
        let m = params.len();
        if m == 0 {
            return Err(Error::LengthMismatch {
                expected: 1,
                got: 0,
            });
        }
        let streams = (0..costs.len())
            .map(|i| (0..m).map(|j| seeds::backoff_stream(seed, i, j, m)).collect())
            .collect();
        let devices = costs
            .into_iter()
            .enumerate()
            .map(|(i, f)| DeviceState::new(i, m, f))
            .collect();
        Ok(WorldState {
            devices,
            params,
            events: CapacityEventVector::zeros(0, m),
            mode,
            k: 0,
            seed,
            clamps: ClampCounts::default(),
            streams,
        })
    }

    pub fn n(&self) -> usize {
        self.devices.len()
    }

    pub fn m(&self) -> usize {
        self.params.len()
    }

    pub fn totals(&self) -> Vec<f64> {
        column_sums(self.devices.iter().map(|d| d.x.as_slice()), self.m())
    }

    pub fn average_totals(&self) -> Vec<f64> {
        column_sums(self.devices.iter().map(|d| d.x_bar.as_slice()), self.m())
    }

    /// `∂_j f_i(x̄_i)` for every device, row-major.
    pub fn gradients_at_average(&self) -> Vec<f64> {
        self.devices
            .iter()
            .flat_map(|d| (0..self.m()).map(move |j| d.cost.partial(&d.x_bar, j)))
            .collect()
    }

    /// Overrides `S(k)`; used to drive a step with a chosen event vector.
    pub fn with_events(mut self, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != self.m() {
            return Err(Error::LengthMismatch {
                expected: self.m(),
                got: bits.len(),
            });
        }
        self.events.bits = bits;
        Ok(self)
    }

    /// Advances one round and returns the new state.
    pub fn step(&self) -> Result<WorldState> {
        let mut clamps = self.clamps;
        let mut streams = self.streams.clone();
        let devices = self
            .devices
            .iter()
            .zip(streams.iter_mut())
            .map(|(d, s)| d.step(&self.events.bits, &self.params, self.mode, s, &mut clamps))
            .collect::<Result<Vec<_>>>()?;
        let totals = column_sums(devices.iter().map(|d| d.x.as_slice()), self.m());
        let bits = evaluate_capacity_events(&totals, &self.params)?;
        Ok(WorldState {
            devices,
            params: self.params.clone(),
            events: CapacityEventVector {
                k: self.k + 1,
                bits,
            },
            mode: self.mode,
            k: self.k + 1,
            seed: self.seed,
            clamps,
            streams,
        })
    }
}

fn column_sums<'a>(rows: impl Iterator<Item = &'a [f64]>, m: usize) -> Vec<f64> {
    let mut sums = vec![0.0; m];
    for row in rows {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums
}

pub fn init_world(config: &Config, mode: Mode) -> Result<WorldState> {
    config.validate()?;
    WorldState::new(config.cost_functions()?, config.params(), mode, config.seed)
}

pub fn step_world(w: &WorldState) -> Result<WorldState> {
    w.step()
}

/// Which steps land in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceStride {
    /// Every step below `dense_until`, then every `every`-th.
    Tiered { dense_until: u64, every: u64 },
    Every(u64),
}

impl Default for TraceStride {
    fn default() -> Self {
        TraceStride::Tiered {
            dense_until: DENSE_TRACE_STEPS,
            every: SPARSE_TRACE_STRIDE,
        }
    }
}

impl TraceStride {
    pub fn from_option(stride: Option<u64>) -> Self {
        stride.map(TraceStride::Every).unwrap_or_default()
    }

    /// The first and last steps are always recorded.
    pub fn records(&self, k: u64, last: u64) -> bool {
        if k == 0 || k == last {
            return true;
        }
        match *self {
            TraceStride::Tiered { dense_until, every } => k < dense_until || k.is_multiple_of(every),
            TraceStride::Every(every) => k.is_multiple_of(every),
        }
    }
}

/// One recorded step; matrices are n×m, row-major by device.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub x: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Scalar series captured at every step `0..=K`; metrics are computed from
/// these, never from the strided rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepSeries {
    /// `Σ_i x_i^j(k)`
    pub totals: Vec<Vec<f64>>,
    /// `Σ_i x̄_i^j(k)`
    pub average_totals: Vec<Vec<f64>>,
    /// `max_i − min_i` of `∂_j f_i(x̄_i(k))`
    pub spread: Vec<Vec<f64>>,
    /// Mean over devices of `∂_j f_i(x̄_i(k))`
    pub mean_grad: Vec<Vec<f64>>,
    /// `Σ_i f_i(x̄_i(k))`
    pub average_cost: Vec<f64>,
    /// `Σ_i f_i(x_i(k))`
    pub instant_cost: Vec<f64>,
}

impl StepSeries {
    fn record(&mut self, w: &WorldState) {
        let m = w.m();
        let grads = w.gradients_at_average();
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        let mut sum = vec![0.0; m];
        for row in grads.chunks(m) {
            for j in 0..m {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
                sum[j] += row[j];
            }
        }
        self.totals.push(w.totals());
        self.average_totals.push(w.average_totals());
        self.spread.push(hi.iter().zip(&lo).map(|(h, l)| h - l).collect());
        self.mean_grad
            .push(sum.iter().map(|s| s / w.n() as f64).collect());
        self.average_cost
            .push(w.devices.iter().map(|d| d.cost.value(&d.x_bar)).sum());
        self.instant_cost
            .push(w.devices.iter().map(|d| d.cost.value(&d.x)).sum());
    }

    /// Spread divided by the mean derivative (0 where the mean is 0).
    pub fn normalized_spread(&self, k: usize, j: usize) -> f64 {
        let mean = self.mean_grad[k][j];
        if mean > 0.0 {
            self.spread[k][j] / mean
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub n: usize,
    pub m: usize,
    pub steps: u64,
    pub stride: TraceStride,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub meta: TraceMeta,
    pub costs: Vec<CostFunction>,
    pub params: Vec<ResourceParams>,
    pub rows: Vec<TraceRow>,
    pub events: EventLog,
    pub series: StepSeries,
    pub clamps: ClampCounts,
    pub final_state: WorldState,
    pub wall_time_secs: f64,
}

impl Trace {
    /// Final averages as an n×m matrix.
    pub fn final_averages(&self) -> Vec<Vec<f64>> {
        self.final_state
            .devices
            .iter()
            .map(|d| d.x_bar.clone())
            .collect()
    }

    /// Per-resource event counts over steps `0..=k`.
    pub fn event_bits(&self, k: u64) -> Result<Vec<u64>> {
        self.events.per_resource_bits(k).map(<[u64]>::to_vec)
    }
}

fn snapshot(w: &WorldState) -> TraceRow {
    TraceRow {
        step: w.k,
        x: w.devices.iter().flat_map(|d| d.x.iter().copied()).collect(),
        x_bar: w.devices.iter().flat_map(|d| d.x_bar.iter().copied()).collect(),
        grad: w.gradients_at_average(),
    }
}

/// Runs `config.steps` rounds in the given mode.
pub fn run(config: &Config, mode: Mode) -> Result<Trace> {
    let world = init_world(config, mode)?;
    let meta = TraceMeta {
        config_hash: config.hash(),
        seed: config.seed,
        mode,
        n: config.n,
        m: config.m(),
        steps: config.steps,
        stride: TraceStride::from_option(config.trace_stride),
    };
    run_world(world, meta)
}

/// Runs from an initialized world for `meta.steps` rounds.
pub fn run_world(mut world: WorldState, meta: TraceMeta) -> Result<Trace> {
    let started = Instant::now();
    let last = meta.steps;
    let mut rows = Vec::new();
    let mut series = StepSeries::default();
    let mut events = EventLog::new(world.m());

    series.record(&world);
    rows.push(snapshot(&world));
    for _ in 0..last {
        world = world.step()?;
        events.push(world.events.bits.clone())?;
        series.record(&world);
        if meta.stride.records(world.k, last) {
            rows.push(snapshot(&world));
        }
    }
    Ok(Trace {
        costs: world.devices.iter().map(|d| d.cost).collect(),
        params: world.params.clone(),
        clamps: world.clamps,
        meta,
        rows,
        events,
        series,
        final_state: world,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aimd::EPS_LAMBDA;
    use crate::config::cloudlet_config;
    use crate::cost::CostCase;

    fn params(capacity: f64, alpha: f64, beta: f64) -> ResourceParams {
        ResourceParams {
            capacity,
            alpha,
            beta,
            gamma_cap: 1.0,
            normalization: 1.0 / 90.0,
        }
    }

    #[test]
    fn init_is_all_zero() {
        let c = cloudlet_config(60, 10, 3);
        let w = init_world(&c, Mode::Deterministic).unwrap();
        assert_eq!(w.n(), 60);
        assert_eq!(w.m(), 3);
        assert!(w.devices.iter().all(|d| d.x == [0.0; 3] && d.x_bar == [0.0; 3]));
        assert_eq!(w.events.bits, [false; 3]);
        assert_eq!(w, init_world(&c, Mode::Deterministic).unwrap());
    }

    #[test]
    fn single_device_single_resource_world() {
        let f = CostFunction::new(CostCase::Case2, 1, 1, 1, 1).unwrap();
        let w = WorldState::new(vec![f], vec![params(1.0, 0.1, 0.5)], Mode::Deterministic, 0)
            .unwrap();
        assert_eq!((w.n(), w.m()), (1, 1));
        let w = w.step().unwrap();
        assert_eq!(w.devices[0].x, [0.1]);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = cloudlet_config(6, 10, 3);
        c.resources[1].beta = 1.5;
        assert!(matches!(
            init_world(&c, Mode::Deterministic),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn first_step_is_additive() {
        let c = cloudlet_config(5, 10, 3);
        let w = init_world(&c, Mode::Stochastic).unwrap().step().unwrap();
        for d in &w.devices {
            assert_eq!(d.x, [0.025, 0.02, 0.0225]);
        }
    }

    #[test]
    fn forced_event_scales_uniformly() {
        let c = cloudlet_config(4, 10, 3);
        let mut w = init_world(&c, Mode::Deterministic).unwrap();
        for _ in 0..5 {
            w = w.step().unwrap();
        }
        // Huge Γ forces every λ to the upper clamp.
        for p in &mut w.params {
            p.normalization = 1e9;
        }
        let before = w.clone();
        let after = w.with_events(vec![true; 3]).unwrap().step().unwrap();
        let lambda = 1.0 - EPS_LAMBDA;
        for (d0, d1) in before.devices.iter().zip(&after.devices) {
            for j in 0..3 {
                let beta = before.params[j].beta;
                let expected = (lambda * beta + 1.0 - lambda) * d0.x[j];
                assert!((d1.x[j] - expected).abs() < 1e-15);
            }
        }
        assert_eq!(after.clamps.high, 12);
    }

    #[test]
    fn degenerate_average_aborts() {
        let c = cloudlet_config(2, 10, 3);
        let w = init_world(&c, Mode::Deterministic)
            .unwrap()
            .with_events(vec![true, false, false])
            .unwrap();
        assert!(matches!(
            w.step(),
            Err(Error::DegenerateAverage { resource: 0, step: 0, .. })
        ));
    }

    /// Hand-computed replay with n = 2, m = 1, C = 1, α = 0.3, β = 0.5,
    /// Γ = 1/90, f₁ = x² and f₂ = 2x² (case 2 with a = 1, 2). Two additive
    /// steps take the total to 1.2, then three back-offs follow.
    #[test]
    fn hand_replay_five_steps() {
        let f1 = CostFunction::new(CostCase::Case2, 1, 1, 1, 1).unwrap();
        let f2 = CostFunction::new(CostCase::Case2, 2, 1, 1, 1).unwrap();
        let gamma = 1.0 / 90.0;
        let (alpha, beta) = (0.3, 0.5);
        let mut w = WorldState::new(vec![f1, f2], vec![params(1.0, alpha, beta)], Mode::Deterministic, 0)
            .unwrap();
        w.params[0].normalization = gamma;

        // Hand-computed states after each step.
        // λ_i = Γ·2a_i·x̄/x̄ = 2a_i/90: λ₁ = 1/45, λ₂ = 2/45.
        let l1: f64 = 2.0 / 90.0;
        let l2: f64 = 4.0 / 90.0;
        let md = |x: f64, l: f64| (l * beta + 1.0 - l) * x;
        let mut expect_x = vec![[0.0f64, 0.0f64]];
        let mut expect_s = vec![false];
        // k=1, k=2: AI from S(0)=S(1)=0
        expect_x.push([0.3, 0.3]);
        expect_s.push(false); // 0.6 ≤ 1
        expect_x.push([0.6, 0.6]);
        expect_s.push(true); // 1.2 > 1
        // k=3: MD
        let x3 = [md(0.6, l1), md(0.6, l2)];
        expect_x.push(x3);
        expect_s.push(x3[0] + x3[1] > 1.0);
        // k=4: MD again, totals still above 1
        let x4 = [md(x3[0], l1), md(x3[1], l2)];
        expect_x.push(x4);
        expect_s.push(x4[0] + x4[1] > 1.0);
        // k=5
        let x5 = [md(x4[0], l1), md(x4[1], l2)];
        expect_x.push(x5);
        assert!(expect_s[3] && expect_s[4]);

        let mut avg = [0.0f64; 2];
        for k in 1..=5usize {
            w = w.step().unwrap();
            for i in 0..2 {
                avg[i] = (k as f64 * avg[i] + expect_x[k][i]) / (k as f64 + 1.0);
                assert!((w.devices[i].x[0] - expect_x[k][i]).abs() < 1e-15, "k={k} i={i}");
                assert!((w.devices[i].x_bar[0] - avg[i]).abs() < 1e-15, "k={k} i={i}");
            }
            if k < expect_s.len() {
                assert_eq!(w.events.bits[0], expect_s[k], "k={k}");
            }
            assert_eq!(w.k, k as u64);
        }
    }

    #[test]
    fn stride_policy() {
        let s = TraceStride::default();
        assert!(s.records(0, 5000));
        assert!(s.records(999, 5000));
        assert!(!s.records(1001, 5000));
        assert!(s.records(1010, 5000));
        assert!(s.records(4999, 4999));
        let e = TraceStride::Every(7);
        assert!(e.records(14, 100) && !e.records(15, 100) && e.records(100, 100));
    }

    #[test]
    fn one_step_trace_has_two_rows() {
        let c = cloudlet_config(3, 1, 1);
        let t = run(&c, Mode::Deterministic).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].step, 0);
        assert_eq!(t.rows[1].step, 1);
        assert_eq!(t.series.totals.len(), 2);
        assert_eq!(t.events.last_step(), 1);
    }

    #[test]
    fn series_cover_every_step() {
        let mut c = cloudlet_config(6, 1500, 1);
        c.trace_stride = None;
        let t = run(&c, Mode::Stochastic).unwrap();
        assert_eq!(t.series.spread.len(), 1501);
        // 1000 dense rows (0..1000) + 1000,1010,...,1500
        assert_eq!(t.rows.len(), 1000 + 51);
    }

    #[test]
    fn modes_agree_until_first_event() {
        let c = cloudlet_config(10, 400, 5);
        let d = run(&c, Mode::Deterministic).unwrap();
        let s = run(&c, Mode::Stochastic).unwrap();
        let first = (0..=400u64)
            .find(|&k| d.events.get(k).unwrap().count_ones() > 0)
            .expect("some event fires");
        for (rd, rs) in d.rows.iter().zip(&s.rows).take_while(|(r, _)| r.step <= first) {
            assert_eq!(rd, rs);
        }
    }

    #[test]
    fn one_device_spread_is_zero() {
        let c = cloudlet_config(1, 300, 5);
        let t = run(&c, Mode::Deterministic).unwrap();
        assert!(t.series.spread.iter().flatten().all(|&s| s == 0.0));
    }
}
