//! Continuous-measurement scenarios: the controller sees `x(t)` directly
//! (`r0 = eta_max = 0`), runs the predictor ODE in real time, and sends
//! `u(ξ_k) = K z(ξ_k)` through the actuation network.
//!
//! Transmission instants come from the switching trigger: after each send
//! the controller waits `h`, then monitors the trigger function
//! continuously. The plant is still advanced exactly (its input is
//! piecewise constant); only `z` needs numerical integration, with RK4
//! steps split at actuator-arrival instants so the right-hand side stays
//! smooth inside every step.

use nalgebra::DVector;
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{EventTimeline, Gain, LtiPlant, Scenario, TriggerParams};
use crate::predictor::{ContinuousDynamics, PredictorState};

use super::rng::SplitMix64;
use super::{
    detect_switch_event, Propagator, RowKind, SimConfig, SimResult, TrajectoryRow, TriggerRecord,
    DIVERGENCE_BOUND,
};

struct Arrival {
    t: f64,
    u: DVector<f64>,
    z_xi: DVector<f64>,
}

/// Driver for the continuous scenarios, exposed separately from
/// [`run_continuous`] so callers can inspect the predictor state mid-run.
pub struct ContinuousSim {
    gain: Gain,
    dynamics: ContinuousDynamics,
    predictor: PredictorState,
    x: DVector<f64>,
    tnow: f64,
    applied: DVector<f64>,
    latched: Option<DVector<f64>>,
    arrivals: VecDeque<Arrival>,
    prop: Propagator,
    rows: Vec<TrajectoryRow>,
    next_grid: usize,
    log_step: f64,
    t_end: f64,
    diverged: bool,
}

impl ContinuousSim {
    pub fn new(
        plant: &LtiPlant,
        gain: &Gain,
        r1: f64,
        wait: f64,
        config: &SimConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.x0.len() != plant.n() {
            return Err(Error::Dimension(format!("x0 must have length {}", plant.n())));
        }
        if !(r1 >= 0.0) || !(wait > 0.0) {
            return Err(Error::InvalidParam("need r1 >= 0 and wait > 0".into()));
        }
        let dynamics = ContinuousDynamics::new(plant, gain, r1)?;
        let dt = if r1 > 0.0 { wait.min(r1) / 200.0 } else { wait / 200.0 };
        let x0 = config.x0_vector();
        let predictor = PredictorState::new(plant, &x0, r1, dt)?;
        Ok(Self {
            gain: gain.clone(),
            dynamics,
            predictor,
            x: x0,
            tnow: 0.0,
            applied: DVector::zeros(plant.m()),
            latched: None,
            arrivals: VecDeque::new(),
            prop: Propagator::new(plant.clone()),
            rows: Vec::new(),
            next_grid: 0,
            log_step: config.log_step,
            t_end: config.horizon,
            diverged: false,
        })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn t(&self) -> f64 {
        self.tnow
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn predictor(&self) -> &PredictorState {
        &self.predictor
    }

    /// `u(ξ) = K z(ξ)`; `ξ` must not exceed the integration front.
    pub fn u_at(&self, xi: f64) -> DVector<f64> {
        self.gain.k() * self.predictor.z_at(xi)
    }

    fn next_grid_time(&self) -> Option<f64> {
        let t = self.next_grid as f64 * self.log_step;
        (t <= self.t_end + 1e-12).then_some(t)
    }

    /// Applies due arrivals and log rows at the current front, in that
    /// order (rows record the right limit of the actuated input).
    fn settle_front(&mut self) {
        while self.arrivals.front().map_or(false, |a| a.t <= self.tnow) {
            let a = self.arrivals.pop_front().expect("nonempty");
            self.applied = a.u;
            self.latched = Some(a.z_xi);
            self.rows.push(TrajectoryRow {
                t: self.tnow,
                x: self.x.clone(),
                z: Some(self.predictor.z().clone()),
                u: self.applied.clone(),
                kind: RowKind::Actuate,
                transmitted: false,
            });
        }
        while self.next_grid_time().map_or(false, |g| g <= self.tnow) {
            self.rows.push(TrajectoryRow {
                t: self.next_grid as f64 * self.log_step,
                x: self.x.clone(),
                z: Some(self.predictor.z().clone()),
                u: self.applied.clone(),
                kind: RowKind::Grid,
                transmitted: false,
            });
            self.next_grid += 1;
        }
    }

    /// Integrates plant and predictor up to `target`, handling arrival
    /// events and grid logging on the way.
    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        if self.diverged {
            self.tnow = self.tnow.max(target);
            return Ok(());
        }
        loop {
            self.settle_front();
            if self.tnow >= target {
                return Ok(());
            }
            let mut stop = target;
            if let Some(a) = self.arrivals.front() {
                stop = stop.min(a.t);
            }
            if let Some(g) = self.next_grid_time() {
                stop = stop.min(g);
            }
            let gap = stop - self.tnow;
            let nsub = (gap / self.predictor.dt()).ceil().max(1.0) as usize;
            let sub = gap / nsub as f64;
            for _ in 0..nsub {
                self.predictor.step(&self.dynamics, self.latched.as_ref(), sub)?;
            }
            self.prop.advance(&mut self.x, gap, &self.applied)?;
            self.tnow = stop;
            if self.x.norm() > DIVERGENCE_BOUND || self.predictor.z().norm() > DIVERGENCE_BOUND {
                self.diverged = true;
                self.tnow = self.tnow.max(target);
                return Ok(());
            }
        }
    }
}

/// Runs [`Scenario::ContinuousPredictor`] (σ = 0: one send per waiting
/// period) or [`Scenario::SwitchingEventTriggered`].
pub fn run_continuous(
    plant: &LtiPlant,
    gain: &Gain,
    r1: f64,
    mu_max: f64,
    trigger: &TriggerParams,
    scenario: Scenario,
    config: &SimConfig,
) -> Result<SimResult> {
    if !matches!(scenario, Scenario::ContinuousPredictor | Scenario::SwitchingEventTriggered) {
        return Err(Error::Precondition(format!(
            "run_continuous expects a continuous scenario, got {scenario:?}"
        )));
    }
    if !(mu_max >= 0.0) {
        return Err(Error::InvalidParam("mu_max must be >= 0".into()));
    }
    let mut sim = ContinuousSim::new(plant, gain, r1, trigger.wait, config)?;
    let mut rng = SplitMix64::new(config.seed);
    let t_end = config.horizon;
    let mut warnings = Vec::new();
    if t_end < r1 {
        warnings.push(format!("horizon {t_end} is shorter than the transport delay {r1}"));
    }

    let mut timeline =
        EventTimeline { s: Vec::new(), eta: Vec::new(), mu: Vec::new(), xi: Vec::new(), t: Vec::new() };
    let mut triggers: Vec<TriggerRecord> = Vec::new();
    let mut scs = 0usize;
    let mut xi_k = 0.0f64;
    let mut prev_arrival = 0.0f64;

    loop {
        sim.advance_to(xi_k)?;
        if sim.diverged() {
            break;
        }
        let k = triggers.len();
        let z_xi = sim.predictor.z_at(xi_k);
        let u_k = sim.gain.k() * &z_xi;
        // one delay draw per transmission, in transmission order
        let mu_k = rng.next_f64() * mu_max;
        let t_k = (xi_k + r1 + mu_k).max(prev_arrival);
        prev_arrival = t_k;
        scs += 1;
        timeline.s.push(xi_k);
        timeline.eta.push(0.0);
        timeline.mu.push(mu_k);
        timeline.xi.push(xi_k);
        timeline.t.push(t_k);
        triggers.push(TriggerRecord {
            k,
            xi: xi_k,
            u: u_k.clone(),
            u_hat: u_k.clone(),
            transmitted: true,
            z_pred: Some(z_xi.clone()),
            arrival_t: (t_k <= t_end).then_some(t_k),
            arrival_x: None,
        });
        if t_k <= t_end {
            sim.arrivals.push_back(Arrival { t: t_k, u: u_k, z_xi });
        }
        sim.rows.push(TrajectoryRow {
            t: xi_k,
            x: sim.x.clone(),
            z: Some(sim.predictor.z().clone()),
            u: sim.applied.clone(),
            kind: RowKind::Control,
            transmitted: true,
        });

        let next = {
            let sim_ref = &mut sim;
            let mut u_of = |xi: f64| -> DVector<f64> {
                sim_ref.advance_to(xi).expect("predictor integration failed");
                sim_ref.u_at(xi)
            };
            detect_switch_event(&mut u_of, xi_k, trigger, t_end)
        };
        if sim.diverged() {
            break;
        }
        if !next.is_finite() || next > t_end {
            sim.advance_to(t_end)?;
            break;
        }
        xi_k = next;
    }
    if sim.diverged() {
        warnings.push(format!("state norm exceeded {DIVERGENCE_BOUND:e}; run truncated"));
    }

    // fill in the plant state at arrival instants from the logged rows
    for rec in &mut triggers {
        if let Some(at) = rec.arrival_t {
            if let Some(row) = sim.rows.iter().find(|r| r.kind == RowKind::Actuate && r.t == at) {
                rec.arrival_x = Some(row.x.clone());
            }
        }
    }

    let mut rows = sim.rows;
    rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(row_rank(a.kind).cmp(&row_rank(b.kind))));

    Ok(SimResult {
        scenario,
        rows,
        timeline,
        triggers,
        scs,
        measurements_sent: 0,
        diverged: sim.diverged,
        warnings,
        log_step: config.log_step,
    })
}

fn row_rank(kind: RowKind) -> u8 {
    match kind {
        RowKind::Measure => 0,
        RowKind::Control => 1,
        RowKind::Actuate => 2,
        RowKind::Grid => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{pendulum, PendulumSpec};

    fn cfg(horizon: f64, seed: u64) -> SimConfig {
        SimConfig::new(horizon, vec![0.98, 0.0, 0.2, 0.0], seed).unwrap()
    }

    #[test]
    fn periodic_send_count_matches_waiting_time() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let trigger = TriggerParams::always_transmit(1, 0.105);
        let r = run_continuous(
            &plant,
            &gain,
            0.2,
            0.01,
            &trigger,
            Scenario::ContinuousPredictor,
            &cfg(20.0, 1),
        )
        .unwrap();
        // sigma = 0: one send per waiting period, floor(20/0.105) + 1
        assert_eq!(r.scs, 191);
        assert!(!r.diverged);
        // state decays under the certified parameters
        assert!(r.final_state().unwrap().norm() < 0.2);
    }

    #[test]
    fn zero_gain_sends_once() {
        let (plant, _) = pendulum(&PendulumSpec::default());
        let gain = Gain::new(nalgebra::DMatrix::zeros(1, 4));
        let trigger = TriggerParams::new(nalgebra::dmatrix![1.0], 0.13, 0.105).unwrap();
        let r = run_continuous(
            &plant,
            &gain,
            0.2,
            0.01,
            &trigger,
            Scenario::SwitchingEventTriggered,
            &cfg(2.0, 9),
        )
        .unwrap();
        assert_eq!(r.scs, 1);
        // u ≡ 0: plant runs open loop
        let open = crate::matexp::expm(plant.a(), 2.0).unwrap() * cfg(2.0, 9).x0_vector();
        let x_end = r.final_state().unwrap();
        assert!((x_end - &open).norm() / open.norm() < 1e-9);
    }

    #[test]
    fn switching_trigger_sends_fewer_than_periodic() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let periodic = run_continuous(
            &plant,
            &gain,
            0.2,
            0.01,
            &TriggerParams::always_transmit(1, 0.105),
            Scenario::ContinuousPredictor,
            &cfg(20.0, 4),
        )
        .unwrap();
        let switching = run_continuous(
            &plant,
            &gain,
            0.2,
            0.01,
            &TriggerParams::new(nalgebra::dmatrix![1.0], 0.13, 0.105).unwrap(),
            Scenario::SwitchingEventTriggered,
            &cfg(20.0, 4),
        )
        .unwrap();
        assert!(switching.scs < periodic.scs);
        assert!(!switching.diverged);
        assert!(switching.final_state().unwrap().norm() < 0.5);
    }

    #[test]
    fn deterministic_given_seed() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let trigger = TriggerParams::new(nalgebra::dmatrix![1.0], 0.13, 0.105).unwrap();
        let run = || {
            run_continuous(
                &plant,
                &gain,
                0.2,
                0.01,
                &trigger,
                Scenario::SwitchingEventTriggered,
                &cfg(6.0, 11),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_sampled_scenarios() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let trigger = TriggerParams::always_transmit(1, 0.105);
        assert!(run_continuous(
            &plant,
            &gain,
            0.2,
            0.01,
            &trigger,
            Scenario::SampledPredictor,
            &cfg(1.0, 1)
        )
        .is_err());
    }
}
