//! Core domain types shared by every module: the plant, the delay
//! structure of the two networks, trigger parameters and realized event
//! timelines. All types are immutable value objects.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear time-invariant plant `ẋ(t) = A x(t) + B u(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "B must have {} rows, got {}",
                a.nrows(),
                b.nrows()
            )));
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::Dimension("n >= 1 and m >= 1 required".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("plant matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension m.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

/// State-feedback gain `u = K x`, of shape m x n.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain {
    k: DMatrix<f64>,
}

impl Gain {
    pub fn new(k: DMatrix<f64>) -> Self {
        Self { k }
    }

    /// Checks that the gain matches the plant dimensions.
    pub fn for_plant(k: DMatrix<f64>, plant: &LtiPlant) -> Result<Self> {
        if k.nrows() != plant.m() || k.ncols() != plant.n() {
            return Err(Error::Dimension(format!(
                "K must be {}x{}, got {}x{}",
                plant.m(),
                plant.n(),
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }
}

/// Delay structure of the two networks.
///
/// Measurements sampled at `s_k` (with `s_{k+1} - s_k <= h`) reach the
/// controller at `ξ_k = s_k + r0 + η_k`; control values sent at `ξ_k` reach
/// the actuators at `t_k = ξ_k + r1 + μ_k`. The transport parts `r0`, `r1`
/// are known constants, `η_k ∈ [0, eta_max]` and `μ_k ∈ [0, mu_max]` are
/// unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayProfile {
    pub r0: f64,
    pub r1: f64,
    pub eta_max: f64,
    pub mu_max: f64,
    /// Maximum sampling interval, > 0.
    pub h: f64,
}

/// Worst-case delay bounds derived from a [`DelayProfile`], never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayBounds {
    /// `h + eta_max`: bound on the sampling-induced delay seen by the
    /// predictor loop.
    pub tau_bar: f64,
    /// `r0 + r1 + h + eta_max + mu_max`: total worst-case loop delay.
    pub tau_max: f64,
    /// `h + mu_max`: bound on the waiting-time delay of the switching loop.
    pub tau_tilde: f64,
}

impl DelayProfile {
    pub fn new(r0: f64, r1: f64, eta_max: f64, mu_max: f64, h: f64) -> Result<Self> {
        let p = Self { r0, r1, eta_max, mu_max, h };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.r0, self.r1, self.eta_max, self.mu_max, self.h];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParam(
                "delay profile entries must be finite and nonnegative".into(),
            ));
        }
        if self.h <= 0.0 {
            return Err(Error::InvalidParam("sampling interval h must be > 0".into()));
        }
        Ok(())
    }

    /// The derived bounds `(tau_bar, tau_max, tau_tilde)`.
    pub fn derived_bounds(&self) -> DelayBounds {
        DelayBounds {
            tau_bar: self.h + self.eta_max,
            tau_max: self.r0 + self.r1 + self.h + self.eta_max + self.mu_max,
            tau_tilde: self.h + self.mu_max,
        }
    }

    /// `h + eta_max <= r0 + r1`, required by the sampled-loop certificates
    /// ([`crate::lmi::build_lemma1`], [`crate::lmi::build_prop1`]).
    pub fn validate_assumption(&self) -> bool {
        self.h + self.eta_max <= self.r0 + self.r1
    }
}

/// Event-trigger parameters: a control value is transmitted only when its
/// weighted relative change exceeds the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerParams {
    /// Positive-semidefinite weight, m x m.
    pub omega: DMatrix<f64>,
    /// Relative threshold in [0, 1). `sigma = 0` means every value is sent.
    pub sigma: f64,
    /// Waiting time of the switching trigger; equals the sampling interval
    /// in sampled scenarios.
    pub wait: f64,
}

impl TriggerParams {
    pub fn new(omega: DMatrix<f64>, sigma: f64, wait: f64) -> Result<Self> {
        if !omega.is_square() {
            return Err(Error::Dimension("omega must be square".into()));
        }
        let sym_err = (&omega - omega.transpose()).norm();
        if sym_err > 1e-10 * omega.norm().max(1.0) {
            return Err(Error::InvalidParam("omega must be symmetric".into()));
        }
        let eigs = omega.clone().symmetric_eigenvalues();
        let spectral = eigs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        // Symmetric eigensolvers return tiny negative eigenvalues for PSD
        // inputs; tolerate -1e-12 relative to the spectral norm.
        if eigs.iter().any(|&e| e < -1e-12 * spectral.max(1.0)) {
            return Err(Error::InvalidParam("omega must be positive semidefinite".into()));
        }
        if !(0.0..1.0).contains(&sigma) {
            return Err(Error::InvalidParam(format!("sigma must be in [0,1), got {sigma}")));
        }
        if !(wait > 0.0) || !wait.is_finite() {
            return Err(Error::InvalidParam("wait must be positive".into()));
        }
        Ok(Self { omega, sigma, wait })
    }

    /// `sigma = 0` with identity weight: every computed value is sent.
    pub fn always_transmit(m: usize, wait: f64) -> Self {
        Self { omega: DMatrix::identity(m, m), sigma: 0.0, wait }
    }
}

/// The four closed-loop configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Sampled measurements, predictor control, every value sent.
    SampledPredictor,
    /// Sampled measurements, predictor control, event-triggered sending.
    SampledEventTriggered,
    /// Continuous measurements (no sensor network), periodic sending.
    ContinuousPredictor,
    /// Continuous measurements, waiting time then continuous trigger.
    SwitchingEventTriggered,
}

impl Scenario {
    /// Continuous scenarios assume the sensors are collocated with the
    /// controller (`r0 = eta_max = 0`).
    pub fn requires_collocated_sensors(&self) -> bool {
        matches!(self, Scenario::ContinuousPredictor | Scenario::SwitchingEventTriggered)
    }

    pub fn check_profile(&self, profile: &DelayProfile) -> Result<()> {
        if self.requires_collocated_sensors() && (profile.r0 != 0.0 || profile.eta_max != 0.0) {
            return Err(Error::Precondition(format!(
                "{self:?} requires r0 = eta_max = 0, got r0={}, eta_max={}",
                profile.r0, profile.eta_max
            )));
        }
        Ok(())
    }
}

/// A realized delay timeline: sampling instants `s_k`, delay draws
/// `η_k`, `μ_k`, controller update times `ξ_k` and actuator update times
/// `t_k`, with `ξ` and `t` clamped nondecreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTimeline {
    pub s: Vec<f64>,
    /// Raw draws; the effective sensor delay after clamping is
    /// `xi[k] - s[k] - r0`.
    pub eta: Vec<f64>,
    /// Raw draws; the effective actuation delay after clamping is
    /// `t[k] - xi[k] - r1`.
    pub mu: Vec<f64>,
    pub xi: Vec<f64>,
    pub t: Vec<f64>,
}

impl EventTimeline {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Sensor delay actually experienced by sample k (after clamping).
    pub fn eta_effective(&self, k: usize, r0: f64) -> f64 {
        self.xi[k] - self.s[k] - r0
    }

    /// Actuation delay actually experienced by sample k (after clamping).
    pub fn mu_effective(&self, k: usize, r1: f64) -> f64 {
        self.t[k] - self.xi[k] - r1
    }

    /// Checks the timeline invariants against its profile.
    pub fn validate(&self, profile: &DelayProfile) -> Result<()> {
        let n = self.len();
        for v in [&self.eta, &self.mu, &self.xi, &self.t] {
            if v.len() != n {
                return Err(Error::Dimension("timeline field lengths differ".into()));
            }
        }
        let tol = 1e-12;
        for k in 0..n {
            if k > 0 {
                if self.s[k] <= self.s[k - 1] {
                    return Err(Error::Internal(format!("s not increasing at k={k}")));
                }
                if self.s[k] - self.s[k - 1] > profile.h + tol {
                    return Err(Error::Internal(format!("sampling gap > h at k={k}")));
                }
                if self.xi[k] < self.xi[k - 1] {
                    return Err(Error::Internal(format!("xi decreasing at k={k}")));
                }
                if self.t[k] < self.t[k - 1] {
                    return Err(Error::Internal(format!("t decreasing at k={k}")));
                }
            }
            if self.xi[k] < self.s[k] + profile.r0 - tol {
                return Err(Error::Internal(format!("xi[{k}] < s[{k}] + r0")));
            }
            if self.t[k] < self.xi[k] + profile.r1 - tol {
                return Err(Error::Internal(format!("t[{k}] < xi[{k}] + r1")));
            }
        }
        Ok(())
    }
}

/// Column vector helper used across the crate.
pub(crate) fn col(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
