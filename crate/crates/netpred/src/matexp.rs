//! Matrix-exponential kernels: `e^{At}`, zero-order-hold discretization and
//! the input-convolution integrals the predictor needs.
//!
//! All integrals go through an augmented-block exponential (Van Loan's
//! construction) instead of closed forms with `A^{-1}`: the benchmark plant
//! has a singular `A`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::LtiPlant;

/// `e^{At}` by scaling-and-squaring with Padé approximation.
pub fn expm(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if t == 0.0 {
        return Ok(DMatrix::identity(a.nrows(), a.nrows()));
    }
    Ok((a * t).exp())
}

/// Exact one-step discretization of `ẋ = Ax + Bu` with `u` held constant:
/// `x(t + delta) = Ad x(t) + Bd u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZohPair {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub delta: f64,
}

/// `Ad = e^{A delta}`, `Bd = ∫_0^delta e^{As} B ds`, via one augmented-block
/// exponential.
pub fn zoh_discretize(plant: &LtiPlant, delta: f64) -> Result<ZohPair> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParam(format!("zoh step must be >= 0, got {delta}")));
    }
    let (n, m) = (plant.n(), plant.m());
    if delta == 0.0 {
        return Ok(ZohPair { ad: DMatrix::identity(n, n), bd: DMatrix::zeros(n, m), delta });
    }
    let (ad, bd) = oriented_zoh(plant, delta);
    Ok(ZohPair { ad, bd, delta })
}

/// Top blocks of `exp([[A, B], [0, 0]] * delta)`: `(e^{A delta}, ∫_0^delta
/// e^{As} B ds)`. Valid for either sign of `delta` (oriented integral).
fn oriented_zoh(plant: &LtiPlant, delta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (plant.n(), plant.m());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(plant.a());
    aug.view_mut((0, n), (n, m)).copy_from(plant.b());
    let e = (aug * delta).exp();
    (e.view((0, 0), (n, n)).into(), e.view((0, n), (n, m)).into())
}

/// `∫_a^b e^{A(c - θ)} B dθ` for `a <= b`.
///
/// Multiplying by a constant input gives that input's exact contribution to
/// the predictor integral over the panel `[a, b)`.
pub fn input_integral(plant: &LtiPlant, a: f64, b: f64, c: f64) -> Result<DMatrix<f64>> {
    if a > b {
        return Err(Error::InvalidParam(format!("empty panel: a={a} > b={b}")));
    }
    let (n, m) = (plant.n(), plant.m());
    if a == b {
        return Ok(DMatrix::zeros(n, m));
    }
    // ∫_a^b e^{A(c-θ)} B dθ = e^{A(c-b)} ∫_0^{b-a} e^{As} B ds
    let (_, f) = oriented_zoh(plant, b - a);
    Ok(expm(plant.a(), c - b)? * f)
}

/// Midpoint-rule approximation of [`input_integral`], used as an independent
/// verification oracle in tests.
pub fn riemann_oracle(plant: &LtiPlant, a: f64, b: f64, c: f64, panels: usize) -> Result<DMatrix<f64>> {
    if panels == 0 {
        return Err(Error::InvalidParam("riemann_oracle needs panels >= 1".into()));
    }
    let (n, m) = (plant.n(), plant.m());
    if a == b {
        return Ok(DMatrix::zeros(n, m));
    }
    let w = (b - a) / panels as f64;
    // e^{A(c - θ_i)} at midpoints θ_i = a + (i + 1/2) w, marched by the
    // constant factor e^{-Aw}; re-anchored with a fresh exponential every
    // block to keep rounding drift negligible at 1e5 panels.
    let step = expm(plant.a(), -w)?;
    let mut sum = DMatrix::zeros(n, m);
    let mut carrier = DMatrix::identity(n, n);
    let anchor_every = 256;
    let mut anchor = expm(plant.a(), c - a - 0.5 * w)?;
    for i in 0..panels {
        if i % anchor_every == 0 && i > 0 {
            anchor = expm(plant.a(), c - (a + (i as f64 + 0.5) * w))?;
            carrier = DMatrix::identity(n, n);
        }
        sum += &anchor * &carrier * plant.b();
        carrier = &carrier * &step;
    }
    Ok(sum * w)
}
