//! Event loop for the sampled scenarios: measurements at `s_k`, controller
//! updates at `ξ_k`, actuator updates at `t_k`, with the plant advanced
//! exactly between events.
//!
//! Controller updates with `ξ_k` beyond the horizon are still evaluated for
//! their transmit decision — a value is "sent" per measurement taken within
//! the horizon — so the σ = 0 loop sends exactly one value per sample.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DelayProfile, Gain, LtiPlant, Scenario, TriggerParams};
use crate::predictor::{ControlHistory, SampledPredictor};

use super::{
    generate_timeline, trigger_decide, Propagator, RowKind, SimConfig, SimResult, TrajectoryRow,
    TriggerRecord, DIVERGENCE_BOUND,
};

#[derive(Clone, Copy, PartialEq)]
enum ControllerKind {
    /// `u(ξ_k) = K z(s_k)` with the delay-compensating predictor.
    Predictor,
    /// `u(ξ_k) = K x(s_k)`: the predictor-less baseline.
    Direct,
}

/// Runs [`Scenario::SampledPredictor`] or
/// [`Scenario::SampledEventTriggered`].
///
/// The control history feeding the predictor stores the transmitted value
/// `û(ξ_k)` when `mu_max = 0` (where it reproduces the actuated input
/// exactly) and the computed value `u(ξ_k)` otherwise (where folding in the
/// trigger error would contaminate the prediction at three different lags).
pub fn run_sampled(
    plant: &LtiPlant,
    gain: &Gain,
    profile: &DelayProfile,
    trigger: &TriggerParams,
    scenario: Scenario,
    config: &SimConfig,
) -> Result<SimResult> {
    if !matches!(scenario, Scenario::SampledPredictor | Scenario::SampledEventTriggered) {
        return Err(Error::Precondition(format!(
            "run_sampled expects a sampled scenario, got {scenario:?}"
        )));
    }
    run_loop(plant, gain, profile, trigger, scenario, config, ControllerKind::Predictor)
}

/// Baseline without prediction: the controller sends `K x(s_k)` and every
/// value is transmitted. Used for the instability comparison.
pub fn run_unpredicted(
    plant: &LtiPlant,
    gain: &Gain,
    profile: &DelayProfile,
    config: &SimConfig,
) -> Result<SimResult> {
    let trigger = TriggerParams::always_transmit(plant.m(), profile.h);
    run_loop(
        plant,
        gain,
        profile,
        &trigger,
        Scenario::SampledPredictor,
        config,
        ControllerKind::Direct,
    )
}

fn run_loop(
    plant: &LtiPlant,
    gain: &Gain,
    profile: &DelayProfile,
    trigger: &TriggerParams,
    scenario: Scenario,
    config: &SimConfig,
    kind: ControllerKind,
) -> Result<SimResult> {
    config.validate()?;
    profile.validate()?;
    let (n, m) = (plant.n(), plant.m());
    if config.x0.len() != n {
        return Err(Error::Dimension(format!("x0 must have length {n}")));
    }
    let t_end = config.horizon;
    let mut warnings = Vec::new();
    if t_end < profile.r0 + profile.r1 {
        warnings.push(format!(
            "horizon {t_end} is shorter than the transport delay {}; nothing arrives in time",
            profile.r0 + profile.r1
        ));
    }
    if kind == ControllerKind::Direct {
        warnings.push("predictor-less baseline: z trajectory not defined".into());
    }

    let tl = generate_timeline(profile, t_end, config.seed);
    let kmax = tl.len();
    let predictor = SampledPredictor::new(plant.clone(), gain.clone(), profile.r0, profile.r1)?;

    // Action stream: (time, tie-priority, index). Ties are processed
    // measurement, controller, actuator, then log row.
    #[derive(Clone, Copy)]
    struct Action {
        time: f64,
        prio: u8,
        idx: usize,
    }
    let jmax = (t_end / config.log_step + 1e-9).floor() as usize;
    let mut actions = Vec::with_capacity(3 * kmax + jmax + 2);
    for k in 0..kmax {
        actions.push(Action { time: tl.s[k], prio: 0, idx: k });
        actions.push(Action { time: tl.xi[k], prio: 1, idx: k });
        if tl.t[k] <= t_end {
            actions.push(Action { time: tl.t[k], prio: 2, idx: k });
        }
    }
    for j in 0..=jmax {
        actions.push(Action { time: j as f64 * config.log_step, prio: 3, idx: j });
    }
    if (jmax as f64) * config.log_step < t_end - 1e-12 {
        actions.push(Action { time: t_end, prio: 3, idx: jmax + 1 });
    }
    actions.sort_by(|a, b| {
        a.time.total_cmp(&b.time).then(a.prio.cmp(&b.prio)).then(a.idx.cmp(&b.idx))
    });

    let mut prop = Propagator::new(plant.clone());
    let mut x = config.x0_vector();
    let mut tnow = 0.0;
    let mut applied = DVector::zeros(m);
    let mut u_hat_prev = DVector::zeros(m);
    let mut history = ControlHistory::new();
    let mut measured: Vec<Option<DVector<f64>>> = vec![None; kmax];
    let mut pending: Vec<Option<DVector<f64>>> = vec![None; kmax];
    let mut triggers: Vec<TriggerRecord> = Vec::with_capacity(kmax);
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    let mut scs = 0usize;
    let mut diverged = false;

    for act in &actions {
        let t_evt = act.time.min(t_end);
        if t_evt > tnow {
            prop.advance(&mut x, t_evt - tnow, &applied)?;
            tnow = t_evt;
            if x.norm() > DIVERGENCE_BOUND {
                diverged = true;
                warnings.push(format!("state norm exceeded {DIVERGENCE_BOUND:e} at t={tnow}; run truncated"));
                break;
            }
        }
        match act.prio {
            0 => {
                let k = act.idx;
                measured[k] = Some(x.clone());
                rows.push(TrajectoryRow {
                    t: tl.s[k],
                    x: x.clone(),
                    z: None,
                    u: applied.clone(),
                    kind: RowKind::Measure,
                    transmitted: false,
                });
            }
            1 => {
                let k = act.idx;
                let x_sk = measured[k]
                    .as_ref()
                    .ok_or_else(|| Error::Internal(format!("controller before sample {k}")))?;
                let (z_pred, u_k) = match kind {
                    ControllerKind::Predictor => {
                        let (z, u) = predictor.predict(x_sk, tl.s[k], &history)?;
                        (Some(z), u)
                    }
                    ControllerKind::Direct => (None, gain.k() * x_sk),
                };
                let transmitted = trigger_decide(trigger, &u_hat_prev, &u_k);
                let u_hat = if transmitted { u_k.clone() } else { u_hat_prev.clone() };
                if transmitted {
                    scs += 1;
                }
                let v = if profile.mu_max == 0.0 { u_hat.clone() } else { u_k.clone() };
                history.append(tl.xi[k], v)?;
                pending[k] = Some(u_hat.clone());
                triggers.push(TriggerRecord {
                    k,
                    xi: tl.xi[k],
                    u: u_k,
                    u_hat: u_hat.clone(),
                    transmitted,
                    z_pred,
                    arrival_t: None,
                    arrival_x: None,
                });
                u_hat_prev = u_hat;
                if tl.xi[k] <= t_end {
                    rows.push(TrajectoryRow {
                        t: tl.xi[k],
                        x: x.clone(),
                        z: None,
                        u: applied.clone(),
                        kind: RowKind::Control,
                        transmitted,
                    });
                }
            }
            2 => {
                let k = act.idx;
                applied = pending[k]
                    .clone()
                    .ok_or_else(|| Error::Internal(format!("actuation before controller {k}")))?;
                let rec = &mut triggers[k];
                rec.arrival_t = Some(tl.t[k]);
                rec.arrival_x = Some(x.clone());
                rows.push(TrajectoryRow {
                    t: tl.t[k],
                    x: x.clone(),
                    z: None,
                    u: applied.clone(),
                    kind: RowKind::Actuate,
                    transmitted: false,
                });
            }
            _ => {
                rows.push(TrajectoryRow {
                    t: t_evt,
                    x: x.clone(),
                    z: None,
                    u: applied.clone(),
                    kind: RowKind::Grid,
                    transmitted: false,
                });
            }
        }
    }

    let mut result = SimResult {
        scenario,
        rows,
        timeline: tl,
        triggers,
        scs,
        measurements_sent: kmax,
        diverged,
        warnings,
        log_step: config.log_step,
    };
    if kind == ControllerKind::Predictor && !diverged {
        attach_predictor_state(&mut result, plant, profile, &history, predictor.exp_transport(), &config.x0_vector())?;
    }
    Ok(result)
}

/// Fills the `z` column of every row by integrating the predictor-state
/// dynamics
/// `ż = A z + B v(t + r0) + e^{A(r0+r1)} B [û_app(t) - v(t - r1)]`
/// exactly: both inputs are piecewise constant, so the trajectory is a
/// chain of zero-order holds split at every input breakpoint.
fn attach_predictor_state(
    result: &mut SimResult,
    plant: &LtiPlant,
    profile: &DelayProfile,
    history: &ControlHistory,
    exp_transport: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<()> {
    let (n, m) = (plant.n(), plant.m());
    let mut big_b = DMatrix::zeros(n, 2 * m);
    big_b.view_mut((0, 0), (n, m)).copy_from(plant.b());
    big_b.view_mut((0, m), (n, m)).copy_from(&(exp_transport * plant.b()));
    let aug = LtiPlant::new(plant.a().clone(), big_b)?;
    let mut prop = Propagator::new(aug);

    // actuated value as a function of time
    let arrivals: Vec<(f64, DVector<f64>)> = result
        .triggers
        .iter()
        .filter_map(|r| r.arrival_t.map(|t| (t, r.u_hat.clone())))
        .collect();
    let applied_at = |t: f64| -> DVector<f64> {
        let idx = arrivals.partition_point(|(at, _)| *at <= t);
        if idx == 0 {
            DVector::zeros(m)
        } else {
            arrivals[idx - 1].1.clone()
        }
    };
    let value_or_zero = |v: Option<&DVector<f64>>| -> DVector<f64> {
        v.cloned().unwrap_or_else(|| DVector::zeros(m))
    };
    let w_at = |t: f64| -> DVector<f64> {
        let v_fwd = value_or_zero(history.value_at(t + profile.r0));
        let v_bwd = value_or_zero(history.value_at(t - profile.r1));
        let mut w = DVector::zeros(2 * m);
        w.rows_mut(0, m).copy_from(&v_fwd);
        w.rows_mut(m, m).copy_from(&(applied_at(t) - v_bwd));
        w
    };

    let mut breakpoints: Vec<f64> = Vec::new();
    for k in 0..result.timeline.len() {
        breakpoints.push(result.timeline.xi[k] - profile.r0);
        breakpoints.push(result.timeline.xi[k] + profile.r1);
    }
    breakpoints.extend(arrivals.iter().map(|(t, _)| *t));
    breakpoints.retain(|t| *t > 0.0);
    breakpoints.sort_by(|a, b| a.total_cmp(b));
    breakpoints.dedup();

    let mut z = exp_transport * x0;
    let mut tz = 0.0;
    let mut bp = 0usize;
    for row in &mut result.rows {
        while bp < breakpoints.len() && breakpoints[bp] < row.t {
            if breakpoints[bp] > tz {
                let w = w_at(tz);
                prop.advance(&mut z, breakpoints[bp] - tz, &w)?;
                tz = breakpoints[bp];
            }
            bp += 1;
        }
        if row.t > tz {
            let w = w_at(tz);
            prop.advance(&mut z, row.t - tz, &w)?;
            tz = row.t;
        }
        row.z = Some(z.clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{pendulum, PendulumSpec};
    use crate::model::DelayProfile;
    use nalgebra::dvector;

    fn bench_setup() -> (LtiPlant, Gain) {
        pendulum(&PendulumSpec::default())
    }

    fn cfg(horizon: f64, seed: u64) -> SimConfig {
        SimConfig::new(horizon, vec![0.98, 0.0, 0.2, 0.0], seed).unwrap()
    }

    #[test]
    fn equilibrium_stays_at_zero_and_never_transmits() {
        let (plant, _) = bench_setup();
        let gain = Gain::new(DMatrix::zeros(1, 4));
        let profile = DelayProfile::new(0.2, 0.2, 0.01, 0.01, 0.1).unwrap();
        let trigger = TriggerParams::always_transmit(1, 0.1);
        let config = SimConfig::new(2.0, vec![0.0; 4], 3).unwrap();
        let r = run_sampled(&plant, &gain, &profile, &trigger, Scenario::SampledPredictor, &config)
            .unwrap();
        // û(ξ_{-1}) = 0 = u(ξ_0): the very first comparison already keeps
        assert_eq!(r.scs, 0);
        assert!(r.rows.iter().all(|row| row.x.norm() == 0.0));
    }

    #[test]
    fn sigma_zero_transmits_once_per_sample() {
        let (plant, gain) = bench_setup();
        let profile = DelayProfile::new(0.2, 0.2, 0.01, 0.01, 0.0369).unwrap();
        let trigger = TriggerParams::always_transmit(1, profile.h);
        let r = run_sampled(&plant, &gain, &profile, &trigger, Scenario::SampledPredictor, &cfg(20.0, 1))
            .unwrap();
        assert_eq!(r.measurements_sent, 543);
        assert_eq!(r.scs, 543);
        assert!(!r.diverged);
    }

    #[test]
    fn deterministic_given_seed() {
        let (plant, gain) = bench_setup();
        let profile = DelayProfile::new(0.2, 0.2, 0.01, 0.01, 0.05).unwrap();
        let trigger = TriggerParams::new(nalgebra::dmatrix![1.0], 0.02, profile.h).unwrap();
        let run = || {
            run_sampled(
                &plant,
                &gain,
                &profile,
                &trigger,
                Scenario::SampledEventTriggered,
                &cfg(5.0, 77),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn event_trigger_never_sends_more_than_periodic() {
        let (plant, gain) = bench_setup();
        let profile = DelayProfile::new(0.2, 0.2, 0.01, 0.01, 0.0315).unwrap();
        for seed in 1..=5 {
            let periodic = run_sampled(
                &plant,
                &gain,
                &profile,
                &TriggerParams::always_transmit(1, profile.h),
                Scenario::SampledPredictor,
                &cfg(10.0, seed),
            )
            .unwrap();
            let et = run_sampled(
                &plant,
                &gain,
                &profile,
                &TriggerParams::new(nalgebra::dmatrix![1.0], 0.01, profile.h).unwrap(),
                Scenario::SampledEventTriggered,
                &cfg(10.0, seed),
            )
            .unwrap();
            assert!(et.scs <= periodic.scs);
            assert!(et.scs <= et.measurements_sent);
        }
    }

    #[test]
    fn short_horizon_warns_but_runs() {
        let (plant, gain) = bench_setup();
        let profile = DelayProfile::new(0.2, 0.2, 0.0, 0.0, 0.05).unwrap();
        let trigger = TriggerParams::always_transmit(1, profile.h);
        let r = run_sampled(
            &plant,
            &gain,
            &profile,
            &trigger,
            Scenario::SampledPredictor,
            &SimConfig::new(0.3, vec![0.98, 0.0, 0.2, 0.0], 1).unwrap(),
        )
        .unwrap();
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn unpredicted_zero_start_stays_zero() {
        let (plant, gain) = bench_setup();
        let profile = DelayProfile::new(0.1, 0.1, 0.0, 0.0, 0.0369).unwrap();
        let config = SimConfig::new(2.0, vec![0.0; 4], 5).unwrap();
        let r = run_unpredicted(&plant, &gain, &profile, &config).unwrap();
        assert!(r.rows.iter().all(|row| row.x.norm() == 0.0));
        assert!(!r.diverged);
    }

    #[test]
    fn unpredicted_small_delay_small_h_is_stable() {
        // h -> 0, no delays: classical continuous feedback, A+BK Hurwitz
        let (plant, gain) = bench_setup();
        let cl = plant.a() + plant.b() * gain.k();
        assert!(cl.complex_eigenvalues().iter().all(|e| e.re < 0.0));
        let profile = DelayProfile::new(0.0, 0.0, 0.0, 0.0, 1e-3).unwrap();
        let config = SimConfig::new(10.0, vec![0.98, 0.0, 0.2, 0.0], 2).unwrap();
        let r = run_unpredicted(&plant, &gain, &profile, &config).unwrap();
        let x_end = r.final_state().unwrap().norm();
        assert!(x_end < dvector![0.98, 0.0, 0.2, 0.0].norm());
    }

    #[test]
    fn rejects_continuous_scenarios() {
        let (plant, gain) = bench_setup();
        let profile = DelayProfile::new(0.0, 0.2, 0.0, 0.01, 0.105).unwrap();
        let trigger = TriggerParams::always_transmit(1, profile.h);
        assert!(run_sampled(
            &plant,
            &gain,
            &profile,
            &trigger,
            Scenario::ContinuousPredictor,
            &cfg(1.0, 1)
        )
        .is_err());
    }
}
