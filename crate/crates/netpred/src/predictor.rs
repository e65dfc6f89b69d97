//! The predictor state `z`: forward prediction of the plant state over the
//! known transport delay `r0 + r1`.
//!
//! Two forms are implemented. The sampled form evaluates the convolution of
//! the piecewise-constant control history exactly, panel by panel. The
//! continuous form advances `z` through its delay differential equation with
//! fixed-step RK4 and an interpolated history read.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matexp::{expm, input_integral};
use crate::model::{Gain, LtiPlant};

/// Piecewise-constant control signal: value of segment k holds on
/// `[start_k, start_{k+1})`, and zero before the first start.
///
/// Equal start times are allowed (they arise when network-delay clamping
/// produces simultaneous controller updates); the later entry wins on
/// lookup.
#[derive(Debug, Clone, Default)]
pub struct ControlHistory {
    starts: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl ControlHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Appends a segment starting at `start`. Start times must be
    /// nondecreasing.
    pub fn append(&mut self, start: f64, value: DVector<f64>) -> Result<()> {
        if let Some(&last) = self.starts.last() {
            if start < last {
                return Err(Error::HistoryOrder { last, got: start });
            }
        }
        self.starts.push(start);
        self.values.push(value);
        Ok(())
    }

    /// Value at `theta`: the last segment with start <= theta, or zero
    /// (represented as `None`) before the first segment.
    pub fn value_at(&self, theta: f64) -> Option<&DVector<f64>> {
        let idx = self.starts.partition_point(|&s| s <= theta);
        if idx == 0 {
            None
        } else {
            Some(&self.values[idx - 1])
        }
    }

    /// Maximal constant-value panels covering `[a, b)`: returns
    /// `(lo, hi, value)` triples in order; `value = None` encodes zero.
    /// Zero-width panels from duplicate start times are dropped.
    pub fn panels(&self, a: f64, b: f64) -> Vec<(f64, f64, Option<&DVector<f64>>)> {
        let mut cuts = vec![a];
        let lo = self.starts.partition_point(|&s| s <= a);
        let hi = self.starts.partition_point(|&s| s < b);
        cuts.extend_from_slice(&self.starts[lo..hi]);
        cuts.push(b);
        let mut out = Vec::with_capacity(cuts.len());
        for w in cuts.windows(2) {
            if w[1] > w[0] {
                out.push((w[0], w[1], self.value_at(w[0])));
            }
        }
        out
    }
}

/// Sampled predictor: evaluates `z(s_k)` from a measured state and the
/// control history, with no quadrature error.
#[derive(Debug, Clone)]
pub struct SampledPredictor {
    plant: LtiPlant,
    gain: Gain,
    r0: f64,
    r1: f64,
    /// Cached `e^{A(r0 + r1)}`.
    exp_transport: DMatrix<f64>,
}

impl SampledPredictor {
    pub fn new(plant: LtiPlant, gain: Gain, r0: f64, r1: f64) -> Result<Self> {
        let exp_transport = expm(plant.a(), r0 + r1)?;
        Ok(Self { plant, gain, r0, r1, exp_transport })
    }

    pub fn exp_transport(&self) -> &DMatrix<f64> {
        &self.exp_transport
    }

    /// The predicted state
    /// `z(s_k) = e^{A(r0+r1)} x(s_k) + ∫ e^{A(s_k+r0-θ)} B v(θ) dθ`
    /// with the integral over `[s_k - r1, s_k + r0)`, split exactly at the
    /// history's segment boundaries.
    pub fn predict_state(
        &self,
        x_sk: &DVector<f64>,
        s_k: f64,
        history: &ControlHistory,
    ) -> Result<DVector<f64>> {
        let (a, b) = (s_k - self.r1, s_k + self.r0);
        let mut z = &self.exp_transport * x_sk;
        for (lo, hi, v) in history.panels(a, b) {
            if let Some(v) = v {
                if v.iter().any(|c| *c != 0.0) {
                    z += input_integral(&self.plant, lo, hi, b)? * v;
                }
            }
        }
        Ok(z)
    }

    /// The control value `u(ξ_k) = K z(s_k)`.
    ///
    /// The integration window `[ξ_k - η_k - r0 - r1, ξ_k - η_k)` collapses
    /// to `[s_k - r1, s_k + r0)` because `ξ_k - η_k = s_k + r0`, so the
    /// sensor-delay draw never enters explicitly.
    pub fn predict(
        &self,
        x_sk: &DVector<f64>,
        s_k: f64,
        history: &ControlHistory,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let z = self.predict_state(x_sk, s_k, history)?;
        let u = self.gain.k() * &z;
        Ok((z, u))
    }
}

/// Coefficients of the continuous predictor dynamics
/// `ż(t) = (A + BK) z(t) + e^{A r1} B K [w - z(t - r1)]`,
/// where `w` is the last control value to have reached the actuators
/// (zero before the first arrival).
#[derive(Debug, Clone)]
pub struct ContinuousDynamics {
    pub closed_loop: DMatrix<f64>,
    /// `e^{A r1} B K`
    pub delayed_gain: DMatrix<f64>,
    pub r1: f64,
}

impl ContinuousDynamics {
    pub fn new(plant: &LtiPlant, gain: &Gain, r1: f64) -> Result<Self> {
        let bk = plant.b() * gain.k();
        Ok(Self {
            closed_loop: plant.a() + &bk,
            delayed_gain: expm(plant.a(), r1)? * &bk,
            r1,
        })
    }
}

/// Predictor state for the continuous scenarios: current `z`, plus a
/// timestamped history covering at least `[t - r1, t]` for the delayed read.
#[derive(Debug, Clone)]
pub struct PredictorState {
    t: f64,
    z: DVector<f64>,
    /// Nominal integration step; actual steps may be shortened to land
    /// exactly on actuator-arrival instants.
    dt: f64,
    r1: f64,
    hist: VecDeque<(f64, DVector<f64>)>,
}

impl PredictorState {
    /// Starts at `t = 0` with `z(0) = e^{A r1} x(0)` and `z(θ) = 0` for
    /// `θ < 0`.
    pub fn new(plant: &LtiPlant, x0: &DVector<f64>, r1: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParam(format!("predictor step must be > 0, got {dt}")));
        }
        let z0 = expm(plant.a(), r1)? * x0;
        let mut hist = VecDeque::new();
        hist.push_back((0.0, z0.clone()));
        Ok(Self { t: 0.0, z: z0, dt, r1, hist })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `z(time)` by linear interpolation in the stored history; zero before
    /// t = 0. `time` must lie in `[t - r1 - dt, t]` (up to roundoff).
    pub fn z_at(&self, time: f64) -> DVector<f64> {
        let n = self.z.len();
        if time < 0.0 {
            return DVector::zeros(n);
        }
        debug_assert!(
            time <= self.t + 1e-12 && time >= self.hist.front().map(|e| e.0).unwrap_or(0.0) - 1e-12,
            "history read at {time} outside [{:?}, {}]",
            self.hist.front().map(|e| e.0),
            self.t
        );
        if time >= self.t {
            return self.z.clone();
        }
        // first index with node time > `time` (VecDeque indexing is O(1))
        let mut lo = 0usize;
        let mut hi = self.hist.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.hist[mid].0 <= time {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo == 0 {
            return self.hist[0].1.clone();
        }
        if lo >= self.hist.len() {
            return self.hist[self.hist.len() - 1].1.clone();
        }
        let (t0, z0) = &self.hist[lo - 1];
        let (t1, z1) = &self.hist[lo];
        if t1 == t0 {
            return z1.clone();
        }
        let w = (time - t0) / (t1 - t0);
        z0 * (1.0 - w) + z1 * w
    }

    /// One RK4 step of size `step <= dt`. `latched` is the transmitted
    /// `z(ξ_k)` currently active at the actuators, or `None` before the
    /// first arrival.
    pub fn step(
        &mut self,
        dynamics: &ContinuousDynamics,
        latched: Option<&DVector<f64>>,
        step: f64,
    ) -> Result<()> {
        if !(step > 0.0) {
            return Err(Error::InvalidParam(format!("step must be > 0, got {step}")));
        }
        let n = self.z.len();
        let zero = DVector::zeros(n);
        let w = latched.unwrap_or(&zero);
        let f = |state: &DVector<f64>, time: f64| -> DVector<f64> {
            &dynamics.closed_loop * state
                + &dynamics.delayed_gain * (w - self.z_at(time - dynamics.r1))
        };
        let t = self.t;
        let k1 = f(&self.z, t);
        let k2 = f(&(&self.z + &k1 * (step / 2.0)), t + step / 2.0);
        let k3 = f(&(&self.z + &k2 * (step / 2.0)), t + step / 2.0);
        let k4 = f(&(&self.z + &k3 * step), t + step);
        self.z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
        self.t += step;
        self.hist.push_back((self.t, self.z.clone()));
        // keep a little slack behind t - r1 for interpolation at the stages
        let keep_from = self.t - self.r1 - 4.0 * self.dt;
        while self.hist.len() > 2 && self.hist[1].0 < keep_from {
            self.hist.pop_front();
        }
        Ok(())
    }

    /// Relative disagreement between the ODE-integrated `z(t)` and the
    /// integral definition
    /// `z(t) = e^{A r1} x(t) + ∫_{t-r1}^{t} e^{A(t-θ)} B v(θ) dθ`,
    /// with `v = K z` read from this state's own history and the integral
    /// evaluated by trapezoid on the history nodes. The stretch of the
    /// window before t = 0, where v vanishes identically, is excluded
    /// exactly rather than quadratured.
    pub fn consistency_residual(
        &self,
        plant: &LtiPlant,
        gain: &Gain,
        measured_x: &DVector<f64>,
    ) -> Result<f64> {
        let t = self.t;
        let lo = (t - self.r1).max(0.0);
        let mut z_int = expm(plant.a(), self.r1)? * measured_x;
        if t > lo {
            let slice = self.hist.as_slices();
            let nodes: Vec<&(f64, DVector<f64>)> =
                slice.0.iter().chain(slice.1.iter()).filter(|(s, _)| *s >= lo && *s <= t).collect();
            let integrand = |theta: f64, z: &DVector<f64>| -> Result<DVector<f64>> {
                Ok(expm(plant.a(), t - theta)? * (plant.b() * (gain.k() * z)))
            };
            let mut prev_theta = lo;
            let mut prev_f = integrand(lo, &self.z_at(lo))?;
            for (theta, z) in nodes {
                if *theta <= prev_theta {
                    continue;
                }
                let f = integrand(*theta, z)?;
                z_int += (&prev_f + &f) * (0.5 * (theta - prev_theta));
                prev_theta = *theta;
                prev_f = f;
            }
            if t > prev_theta {
                let f = integrand(t, &self.z)?;
                z_int += (&prev_f + &f) * (0.5 * (t - prev_theta));
            }
        }
        Ok((&self.z - &z_int).norm() / z_int.norm().max(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{pendulum, PendulumSpec};
    use crate::matexp::riemann_oracle;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn history_lookup_semantics() {
        let mut h = ControlHistory::new();
        h.append(0.3, dvector![1.0]).unwrap();
        assert!(h.value_at(0.2).is_none());
        // left-closed: the value holds from its start time
        assert_eq!(h.value_at(0.3).unwrap(), &dvector![1.0]);
        h.append(0.5, dvector![2.0]).unwrap();
        // equal start times: later entry wins
        h.append(0.5, dvector![3.0]).unwrap();
        assert_eq!(h.value_at(0.5).unwrap(), &dvector![3.0]);
        assert_eq!(h.value_at(0.49).unwrap(), &dvector![1.0]);
        assert!(h.append(0.4, dvector![9.0]).is_err());
    }

    #[test]
    fn history_panels_against_brute_force_scan() {
        let mut h = ControlHistory::new();
        for (s, v) in [(0.1, 1.0), (0.25, -2.0), (0.25, 4.0), (0.6, 0.5)] {
            h.append(s, dvector![v]).unwrap();
        }
        let (a, b) = (0.0, 0.7);
        let panels = h.panels(a, b);
        // panels tile [a, b)
        assert_eq!(panels.first().unwrap().0, a);
        assert_eq!(panels.last().unwrap().1, b);
        for w in panels.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        // brute force: sample densely and compare against the panel value
        let steps = 7000;
        for i in 0..steps {
            let theta = a + (b - a) * (i as f64 + 0.5) / steps as f64;
            let expected = h.value_at(theta).cloned().unwrap_or_else(|| dvector![0.0]);
            let panel = panels.iter().find(|(lo, hi, _)| *lo <= theta && theta < *hi).unwrap();
            let got = panel.2.cloned().unwrap_or_else(|| dvector![0.0]);
            assert_eq!(got, expected, "at theta={theta}");
        }
    }

    #[test]
    fn predict_with_empty_history_is_pure_transport() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let pred = SampledPredictor::new(plant, gain, 0.2, 0.2).unwrap();
        let x = dvector![0.98, 0.0, 0.2, 0.0];
        let (z, u) = pred.predict(&x, 0.0, &ControlHistory::new()).unwrap();
        assert_eq!(z, pred.exp_transport() * &x);
        let (_, gain) = pendulum(&PendulumSpec::default());
        assert_eq!(u, gain.k() * &z);
    }

    #[test]
    fn predict_scalar_integrator_closed_form() {
        // A = 0, B = 1, K = -1, r0 = r1 = 0.5, v ≡ 1 on the window:
        // z = x + ∫ 1 dθ = x + 1, u = -(x + 1)
        let plant = LtiPlant::new(dmatrix![0.0], dmatrix![1.0]).unwrap();
        let gain = Gain::new(dmatrix![-1.0]);
        let pred = SampledPredictor::new(plant, gain, 0.5, 0.5).unwrap();
        let mut h = ControlHistory::new();
        h.append(-10.0, dvector![1.0]).unwrap();
        let (_, u) = pred.predict(&dvector![2.0], 5.0, &h).unwrap();
        assert!((u[0] - (-3.0)).abs() < 1e-12);
    }

    #[test]
    fn predict_matches_riemann_oracle_per_panel() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let (r0, r1) = (0.2, 0.2);
        let pred = SampledPredictor::new(plant.clone(), gain, r0, r1).unwrap();
        let s_k = 1.0;
        let mut h = ControlHistory::new();
        h.append(0.7, dvector![0.8]).unwrap();
        h.append(0.95, dvector![-0.3]).unwrap();
        h.append(1.1, dvector![0.1]).unwrap();
        let x = dvector![0.5, -0.2, 0.1, 0.3];
        let z = pred.predict_state(&x, s_k, &h).unwrap();

        // oracle: midpoint quadrature of each constant panel
        let b_end = s_k + r0;
        let mut z_oracle = pred.exp_transport() * &x;
        for (lo, hi, v) in h.panels(s_k - r1, b_end) {
            if let Some(v) = v {
                z_oracle += riemann_oracle(&plant, lo, hi, b_end, 100_000).unwrap() * v;
            }
        }
        assert!((&z - &z_oracle).norm() / z_oracle.norm() < 1e-8);
    }

    #[test]
    fn predict_linear_in_state_and_history() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let pred = SampledPredictor::new(plant, gain, 0.2, 0.2).unwrap();
        let mut h1 = ControlHistory::new();
        let mut h2 = ControlHistory::new();
        for (s, v) in [(0.6, 0.4), (0.9, -0.7)] {
            h1.append(s, dvector![v]).unwrap();
            h2.append(s, dvector![2.0 * v]).unwrap();
        }
        let x = dvector![0.3, 0.1, -0.2, 0.05];
        let (_, u1) = pred.predict(&x, 1.0, &h1).unwrap();
        let (_, u2) = pred.predict(&(&x * 2.0), 1.0, &h2).unwrap();
        assert!((&u2 - &u1 * 2.0).norm() <= 1e-12 * u1.norm().max(1.0));
    }

    #[test]
    fn continuous_step_delay_free_collapse() {
        // r1 = 0 and latched = z(t): ż = (A+BK) z
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let dynamics = ContinuousDynamics::new(&plant, &gain, 0.0).unwrap();
        let x0 = dvector![0.98, 0.0, 0.2, 0.0];
        let dt = 1e-3;
        let mut st = PredictorState::new(&plant, &x0, 0.0, dt).unwrap();
        let latched = st.z().clone();
        st.step(&dynamics, Some(&latched), dt).unwrap();
        let exact = expm(&dynamics.closed_loop, dt).unwrap() * &x0;
        // one classical RK4 step: local error O(dt^5)
        assert!((st.z() - &exact).norm() < 10.0 * dt.powi(5) * x0.norm());
        assert!(st.step(&dynamics, None, -0.1).is_err());
    }

    #[test]
    fn continuous_step_zero_is_equilibrium() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let dynamics = ContinuousDynamics::new(&plant, &gain, 0.2).unwrap();
        let mut st = PredictorState::new(&plant, &DVector::zeros(4), 0.2, 1e-3).unwrap();
        let zero = DVector::zeros(4);
        for _ in 0..50 {
            st.step(&dynamics, Some(&zero), 1e-3).unwrap();
        }
        assert_eq!(st.z(), &zero);
    }

    #[test]
    fn consistency_residual_zero_at_start() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let x0 = dvector![0.98, 0.0, 0.2, 0.0];
        let st = PredictorState::new(&plant, &x0, 0.2, 1e-3).unwrap();
        assert_eq!(st.consistency_residual(&plant, &gain, &x0).unwrap(), 0.0);

        let st0 = PredictorState::new(&plant, &DVector::zeros(4), 0.2, 1e-3).unwrap();
        assert_eq!(st0.consistency_residual(&plant, &gain, &DVector::zeros(4)).unwrap(), 0.0);
    }
}
