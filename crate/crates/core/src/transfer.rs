//! Neuron transfer functions `x = f(u)`.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransferFunction<T> {
    /// `f(x) = 1` for `x >= 0`, else `0`.
    Heaviside,
    /// `f(x) = e^{gx} / (1 + e^{gx})`.
    Logistic { gain: T },
}

impl<T: Scalar> Default for TransferFunction<T> {
    fn default() -> Self {
        TransferFunction::Logistic { gain: T::one() }
    }
}

impl<T: Scalar> TransferFunction<T> {
    pub fn logistic(gain: T) -> Self {
        TransferFunction::Logistic { gain }
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        match *self {
            TransferFunction::Heaviside => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            TransferFunction::Logistic { gain } => logistic(gain * x),
        }
    }

    /// Derivative; zero almost everywhere for the step function.
    #[inline]
    pub fn derivative(&self, x: T) -> T {
        match *self {
            TransferFunction::Heaviside => T::zero(),
            TransferFunction::Logistic { gain } => {
                let f = logistic(gain * x);
                gain * f * (T::one() - f)
            }
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, TransferFunction::Logistic { .. })
    }

    /// Inverse of the argument scale over which `f` changes; a step has no
    /// finite scale and reports one.
    pub fn steepness(&self) -> T {
        match *self {
            TransferFunction::Heaviside => T::one(),
            TransferFunction::Logistic { gain } => gain.abs(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> TransferFunction<U> {
        match *self {
            TransferFunction::Heaviside => TransferFunction::Heaviside,
            TransferFunction::Logistic { gain } => TransferFunction::Logistic {
                gain: U::of(gain.as_f64()),
            },
        }
    }
}

/// Overflow-free standard logistic function.
#[inline]
pub fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logistic_reference_values() {
        let f = TransferFunction::<f64>::logistic(1.0);
        assert_eq!(f.eval(0.0), 0.5);
        assert_eq!(f.eval(1e6), 1.0);
        assert_eq!(f.eval(-1e6), 0.0);
        let e = (-2.0f64).exp();
        assert!((f.eval(-2.0) - e / (1.0 + e)).abs() < 1e-16);
    }

    #[test]
    fn heaviside_is_right_continuous() {
        let f = TransferFunction::<f64>::Heaviside;
        assert_eq!(f.eval(-0.1), 0.0);
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(3.0), 1.0);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let f = TransferFunction::<f64>::logistic(1.0);
        for k in 0..20 {
            let x = -6.0 + 12.0 * k as f64 / 19.0;
            let h = 1e-5;
            let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
            let exact = f.eval(x) * (1.0 - f.eval(x));
            assert_eq!(f.derivative(x), exact);
            assert!(((fd - exact) / exact).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn works_in_single_precision() {
        let f = TransferFunction::<f32>::logistic(2.0);
        assert_eq!(f.eval(0.0), 0.5f32);
        assert!(f.eval(1.0) > 0.88 && f.eval(1.0) < 0.881);
    }

    proptest! {
        #[test]
        fn logistic_symmetric_and_bounded(x in -50.0f64..50.0, g in 0.1f64..10.0) {
            let f = TransferFunction::logistic(g);
            let (a, b) = (f.eval(x), f.eval(-x));
            prop_assert!((a + b - 1.0).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn logistic_increasing(x in -20.0f64..20.0, dx in 1e-2f64..1.0) {
            let f = TransferFunction::logistic(1.0);
            prop_assert!(f.eval(x + dx) > f.eval(x));
        }
    }
}
