//! Inverted pendulum on a cart: the benchmark plant, and the strategy
//! comparison table (certified sampling periods and sent-signal counts for
//! each control strategy).

use nalgebra::{dmatrix, DMatrix};
use serde::{Deserialize, Serialize};

use crate::model::{Gain, LtiPlant};

/// Physical constants of the cart-pendulum linearization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumSpec {
    /// Cart mass, kg.
    pub cart_mass: f64,
    /// Bob mass, kg.
    pub bob_mass: f64,
    /// Arm length, m.
    pub arm_length: f64,
    /// Gravitational acceleration, m/s^2.
    pub gravity: f64,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        Self { cart_mass: 10.0, bob_mass: 1.0, arm_length: 3.0, gravity: 10.0 }
    }
}

/// Linearized cart-pendulum plant with its stabilizing gain.
///
/// State is `(cart position, cart velocity, bob angle, bob angular
/// velocity)`; the open loop is unstable, `A + BK` is Hurwitz.
pub fn pendulum(spec: &PendulumSpec) -> (LtiPlant, Gain) {
    let (cart, bob, l, g) = (spec.cart_mass, spec.bob_mass, spec.arm_length, spec.gravity);
    let a = dmatrix![
        0.0, 1.0, 0.0,            0.0;
        0.0, 0.0, -bob * g / cart, 0.0;
        0.0, 0.0, 0.0,            1.0;
        0.0, 0.0, g / l,          0.0
    ];
    let b = DMatrix::from_column_slice(4, 1, &[0.0, 1.0 / cart, 0.0, -1.0 / (cart * l)]);
    let plant = LtiPlant::new(a, b).expect("pendulum matrices are well formed");
    let gain = Gain::new(DMatrix::from_row_slice(1, 4, &[2.0, 12.0, 378.0, 210.0]));
    (plant, gain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_matrix_entries() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let a = plant.a();
        assert_eq!(a[(1, 2)], -1.0);
        assert_eq!(a[(3, 2)], 10.0 / 3.0);
        assert_eq!(plant.b()[(1, 0)], 0.1);
        assert_eq!(plant.b()[(3, 0)], -1.0 / 30.0);
        assert_eq!(gain.k().as_slice(), &[2.0, 12.0, 378.0, 210.0]);
    }

    #[test]
    fn open_loop_unstable_closed_loop_stable() {
        let (plant, gain) = pendulum(&PendulumSpec::default());
        let open = plant.a().complex_eigenvalues();
        assert!(open.iter().any(|e| e.re > 1e-9));
        let closed = (plant.a() + plant.b() * gain.k()).complex_eigenvalues();
        assert!(closed.iter().all(|e| e.re < 0.0));
    }
}
