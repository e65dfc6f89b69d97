//! Discrete-event simulation of the four closed-loop scenarios.
//!
//! The plant is advanced *exactly* between events by zero-order-hold
//! discretization; randomness enters only through the seeded delay draws,
//! so a (config, seed) pair reproduces a bit-identical result.

pub mod continuous;
pub mod rng;
mod sampled;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matexp::{zoh_discretize, ZohPair};
use crate::model::{DelayProfile, EventTimeline, LtiPlant, Scenario, TriggerParams};
use rng::SplitMix64;

pub use continuous::{run_continuous, ContinuousSim};
pub use sampled::{run_sampled, run_unpredicted};

/// State-norm bound beyond which a run is truncated and marked diverged.
pub(crate) const DIVERGENCE_BOUND: f64 = 1e100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Simulation horizon, seconds.
    pub horizon: f64,
    /// Initial plant state.
    pub x0: Vec<f64>,
    pub seed: u64,
    /// Trajectory sampling grid step.
    pub log_step: f64,
}

impl SimConfig {
    pub fn new(horizon: f64, x0: Vec<f64>, seed: u64) -> Result<Self> {
        let c = Self { horizon, x0, seed, log_step: 0.01 };
        c.validate()?;
        Ok(c)
    }

    pub fn with_log_step(mut self, log_step: f64) -> Result<Self> {
        self.log_step = log_step;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidParam("horizon must be > 0".into()));
        }
        if !(self.log_step > 0.0) {
            return Err(Error::InvalidParam("log_step must be > 0".into()));
        }
        if self.x0.is_empty() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("x0 must be nonempty and finite".into()));
        }
        Ok(())
    }

    pub fn x0_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }
}

/// What a trajectory row records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Uniform log-grid sample.
    Grid,
    /// Sensor sampling instant `s_k`.
    Measure,
    /// Controller update instant `ξ_k`.
    Control,
    /// Actuator update instant `t_k`.
    Actuate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: DVector<f64>,
    pub z: Option<DVector<f64>>,
    /// Input applied at the actuators at this instant (right limit).
    pub u: DVector<f64>,
    pub kind: RowKind,
    /// True on `Control` rows whose value was transmitted.
    pub transmitted: bool,
}

/// One controller evaluation: the computed value, the held value after the
/// trigger decision, and (once it arrives) the plant state at the actuator
/// update instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerRecord {
    pub k: usize,
    pub xi: f64,
    pub u: DVector<f64>,
    pub u_hat: DVector<f64>,
    pub transmitted: bool,
    /// Predicted state `z(s_k)` (absent for the predictor-less baseline).
    pub z_pred: Option<DVector<f64>>,
    pub arrival_t: Option<f64>,
    /// Plant state at the actuator update instant, when it occurred within
    /// the horizon.
    pub arrival_x: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub scenario: Scenario,
    pub rows: Vec<TrajectoryRow>,
    pub timeline: EventTimeline,
    pub triggers: Vec<TriggerRecord>,
    /// Control values transmitted controller -> actuators.
    pub scs: usize,
    /// Measurements sent sensor -> controller (zero in the continuous
    /// scenarios, where measurements stream without a network).
    pub measurements_sent: usize,
    pub diverged: bool,
    pub warnings: Vec<String>,
    pub log_step: f64,
}

impl SimResult {
    /// The uniform log-grid rows, in time order.
    pub fn grid_rows(&self) -> impl Iterator<Item = &TrajectoryRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Grid)
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.rows.last().map(|r| &r.x)
    }

    /// Triggering errors `û(ξ_k) - u(ξ_k)`, one per controller evaluation.
    pub fn trigger_errors(&self) -> Vec<DVector<f64>> {
        self.triggers.iter().map(|r| &r.u_hat - &r.u).collect()
    }

    /// Error signal indexed by controller intervals: `û(ξ_k) - u(ξ_k)` for
    /// `t ∈ [ξ_k, ξ_{k+1})`, zero before `ξ_0`.
    pub fn error_at_controller(&self, t: f64) -> Option<DVector<f64>> {
        let idx = self.triggers.partition_point(|r| r.xi <= t);
        if idx == 0 {
            return None;
        }
        let r = &self.triggers[idx - 1];
        Some(&r.u_hat - &r.u)
    }

    /// Error signal indexed by actuation intervals: `û(ξ_k) - u(ξ_k)` for
    /// `t ∈ [t_k, t_{k+1})`, zero before `t_0`.
    pub fn error_at_actuator(&self, t: f64) -> Option<DVector<f64>> {
        let mut out = None;
        for r in &self.triggers {
            match r.arrival_t {
                Some(at) if at <= t => out = Some(&r.u_hat - &r.u),
                _ => {}
            }
        }
        out
    }

    /// Trajectory CSV: `t,x1..xn,z1..zn,u1..um,transmitted` over the log
    /// grid plus all event instants.
    pub fn trajectory_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.x.len());
        let m = self.rows.first().map_or(0, |r| r.u.len());
        let mut s = String::from("t");
        for i in 1..=n {
            s.push_str(&format!(",x{i}"));
        }
        for i in 1..=n {
            s.push_str(&format!(",z{i}"));
        }
        for i in 1..=m {
            s.push_str(&format!(",u{i}"));
        }
        s.push_str(",transmitted\n");
        for r in &self.rows {
            s.push_str(&format!("{}", r.t));
            for v in r.x.iter() {
                s.push_str(&format!(",{v}"));
            }
            match &r.z {
                Some(z) => {
                    for v in z.iter() {
                        s.push_str(&format!(",{v}"));
                    }
                }
                None => s.push_str(&",".repeat(n)),
            }
            for v in r.u.iter() {
                s.push_str(&format!(",{v}"));
            }
            s.push_str(if r.transmitted { ",1\n" } else { ",0\n" });
        }
        s
    }

    /// Timeline CSV: `k,s,eta,mu,xi,t,transmitted`.
    pub fn timeline_csv(&self) -> String {
        let mut s = String::from("k,s,eta,mu,xi,t,transmitted\n");
        for k in 0..self.timeline.len() {
            let transmitted =
                self.triggers.iter().find(|r| r.k == k).map_or(false, |r| r.transmitted);
            s.push_str(&format!(
                "{k},{},{},{},{},{},{}\n",
                self.timeline.s[k],
                self.timeline.eta[k],
                self.timeline.mu[k],
                self.timeline.xi[k],
                self.timeline.t[k],
                transmitted as u8,
            ));
        }
        s
    }
}

/// Realized delay timeline: uniform sampling at the maximum rate
/// `s_k = k h`, i.i.d. uniform delay draws, update times clamped
/// nondecreasing.
pub fn generate_timeline(profile: &DelayProfile, horizon: f64, seed: u64) -> EventTimeline {
    let mut rng = SplitMix64::new(seed);
    let count = (horizon / profile.h + 1e-9).floor() as usize + 1;
    let mut tl = EventTimeline {
        s: Vec::with_capacity(count),
        eta: Vec::with_capacity(count),
        mu: Vec::with_capacity(count),
        xi: Vec::with_capacity(count),
        t: Vec::with_capacity(count),
    };
    for k in 0..count {
        let s = k as f64 * profile.h;
        let eta = rng.next_f64() * profile.eta_max;
        let mu = rng.next_f64() * profile.mu_max;
        let xi_raw = s + profile.r0 + eta;
        let xi = tl.xi.last().map_or(xi_raw, |&prev: &f64| xi_raw.max(prev));
        let t_raw = xi + profile.r1 + mu;
        let t = tl.t.last().map_or(t_raw, |&prev: &f64| t_raw.max(prev));
        tl.s.push(s);
        tl.eta.push(eta);
        tl.mu.push(mu);
        tl.xi.push(xi);
        tl.t.push(t);
    }
    tl
}

/// Transmit decision: the value is sent iff the event-triggering inequality
/// `(û_prev - u)ᵀ Ω (û_prev - u) <= σ uᵀ Ω u` is violated (strictly).
pub fn trigger_decide(
    params: &TriggerParams,
    u_hat_prev: &DVector<f64>,
    u_k: &DVector<f64>,
) -> bool {
    let d = u_hat_prev - u_k;
    let lhs = (d.transpose() * &params.omega * &d)[(0, 0)];
    let rhs = params.sigma * (u_k.transpose() * &params.omega * u_k)[(0, 0)];
    lhs > rhs
}

/// First instant `ξ >= ξ_k + wait` where the switching trigger fires:
/// scans in steps `wait/50`, then bisects the sign change of
/// `g(ξ) = (u(ξ_k) - u(ξ))ᵀ Ω (u(ξ_k) - u(ξ)) - σ u(ξ)ᵀ Ω u(ξ)`
/// down to an interval of `1e-9 * wait`. Returns `f64::INFINITY` when the
/// trigger stays silent up to `horizon`.
///
/// Violation is taken as `g > 0` (strict), so a constant `u` — in
/// particular the origin — never re-transmits.
pub fn detect_switch_event(
    u_of: &mut dyn FnMut(f64) -> DVector<f64>,
    xi_k: f64,
    params: &TriggerParams,
    horizon: f64,
) -> f64 {
    let u_sent = u_of(xi_k);
    let mut g = |xi: f64, u_of: &mut dyn FnMut(f64) -> DVector<f64>| -> f64 {
        let u = u_of(xi);
        let d = &u_sent - &u;
        let lhs = (d.transpose() * &params.omega * &d)[(0, 0)];
        let rhs = params.sigma * (u.transpose() * &params.omega * &u)[(0, 0)];
        lhs - rhs
    };
    let start = xi_k + params.wait;
    if start > horizon {
        return f64::INFINITY;
    }
    if g(start, u_of) > 0.0 {
        return start;
    }
    let step = params.wait / 50.0;
    let mut prev = start;
    loop {
        let next = prev + step;
        if next > horizon {
            return f64::INFINITY;
        }
        if g(next, u_of) > 0.0 {
            // bisect (prev, next]
            let (mut lo, mut hi) = (prev, next);
            while hi - lo > 1e-9 * params.wait {
                let mid = 0.5 * (lo + hi);
                if g(mid, u_of) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return hi;
        }
        prev = next;
    }
}

/// Fits `log ||x(t)||` over the second half of the horizon by least squares
/// and returns `(-slope) - alpha`: a nonnegative margin means the state
/// decays at least as fast as `e^{-alpha t}`.
pub fn fit_decay(result: &SimResult, alpha: f64) -> f64 {
    let t_end = result.rows.last().map_or(0.0, |r| r.t);
    let t_lo = t_end / 2.0;
    let pts: Vec<(f64, f64)> = result
        .grid_rows()
        .filter(|r| r.t >= t_lo)
        .map(|r| (r.t, r.x.norm().max(1e-300).ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    -slope - alpha
}

/// Exact inter-event propagation with memoized ZOH pairs (event gaps
/// repeat: the log grid is uniform and sampling is periodic).
pub(crate) struct Propagator {
    plant: LtiPlant,
    cache: HashMap<u64, ZohPair>,
}

impl Propagator {
    pub fn new(plant: LtiPlant) -> Self {
        Self { plant, cache: HashMap::new() }
    }

    pub fn advance(&mut self, x: &mut DVector<f64>, gap: f64, u: &DVector<f64>) -> Result<()> {
        if gap == 0.0 {
            return Ok(());
        }
        let key = gap.to_bits();
        if !self.cache.contains_key(&key) {
            let pair = zoh_discretize(&self.plant, gap)?;
            self.cache.insert(key, pair);
        }
        let pair = &self.cache[&key];
        *x = &pair.ad * &*x + &pair.bd * u;
        Ok(())
    }
}
