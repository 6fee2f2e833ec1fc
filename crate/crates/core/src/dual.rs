//! Forward-mode dual numbers, used as an independent check on the
//! closed-form reservoir tangent.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::reservoir::EsnWeights;

/// `value + tangent·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub value: f64,
    pub tangent: f64,
}

impl Dual {
    pub const fn new(value: f64, tangent: f64) -> Self {
        Self { value, tangent }
    }

    pub const fn constant(value: f64) -> Self {
        Self { value, tangent: 0.0 }
    }

    pub fn scale(self, c: f64) -> Self {
        Self::new(c * self.value, c * self.tangent)
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        Self::new(t, self.tangent * (1.0 - t * t))
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.value * rhs.value, self.value * rhs.tangent + self.tangent * rhs.value)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.tangent)
    }
}

/// One reservoir update evaluated in dual arithmetic. Seeding the tangents
/// with `(xdot, rdot_prev)` yields the directional derivative of the
/// update along the input signal.
pub fn reservoir_step_dual(weights: &EsnWeights, r_prev: &[Dual], x: &[Dual]) -> Result<Vec<Dual>> {
    let n_r = weights.n_reservoir();
    let n_x = weights.n_inputs();
    if r_prev.len() != n_r {
        return Err(Error::DimensionMismatch {
            context: "dual reservoir step",
            expected: n_r,
            got: r_prev.len(),
        });
    }
    if x.len() != n_x {
        return Err(Error::DimensionMismatch {
            context: "dual reservoir step",
            expected: n_x,
            got: x.len(),
        });
    }
    let bias = Dual::constant(weights.b_in());
    Ok((0..n_r)
        .map(|i| {
            let mut acc = Dual::constant(0.0);
            for (j, a) in weights.w_in().row(i) {
                acc = acc + Dual::constant(a) * if j < n_x { x[j] } else { bias };
            }
            for (j, a) in weights.w().row(i) {
                acc = acc + Dual::constant(a) * r_prev[j];
            }
            acc.tanh()
        })
        .collect())
}
