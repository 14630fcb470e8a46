//! Scalar boundary functions `(g, f, h)` for the mask-based parameterization.
//!
//! Every set satisfies `g(1) = f(0) = h(0) = h(1) = 0` and `g(0) = f(1) = 1`.
//! The trigonometric sets are written so those endpoint values are exact in
//! floating point: `cos(pi t / 2)` is evaluated as `sin(pi (1 - t) / 2)` and
//! `sin(pi t)` as `sin(pi min(t, 1 - t))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::flow::check_time;
use crate::scalar::Scalar;

const ENDPOINT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    #[default]
    StandardCosine,
    OffsetCosine,
    Quadratic,
    SquareRoot,
    Linear,
}

impl BoundaryKind {
    pub const ALL: [BoundaryKind; 5] = [
        BoundaryKind::StandardCosine,
        BoundaryKind::OffsetCosine,
        BoundaryKind::Quadratic,
        BoundaryKind::SquareRoot,
        BoundaryKind::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::StandardCosine => "standard_cosine",
            BoundaryKind::OffsetCosine => "offset_cosine",
            BoundaryKind::Quadratic => "quadratic",
            BoundaryKind::SquareRoot => "square_root",
            BoundaryKind::Linear => "linear",
        }
    }
}

impl fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundaryKind {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        BoundaryKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FlowError::InvalidArgument(format!("unknown boundary function set `{s}`")))
    }
}

/// `(g(t), f(t), h(t))` at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryValues<T> {
    pub g: T,
    pub f: T,
    pub h: T,
}

/// A validated boundary function set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryFunctionSet {
    kind: BoundaryKind,
}

impl BoundaryFunctionSet {
    /// Builds the set and checks its endpoint constraints numerically.
    pub fn new(kind: BoundaryKind) -> Result<Self> {
        let set = Self { kind };
        set.verify_endpoints()?;
        Ok(set)
    }

    pub fn kind(&self) -> BoundaryKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn eval<T: Scalar>(&self, t: T) -> Result<BoundaryValues<T>> {
        check_time(t)?;
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked<T: Scalar>(&self, t: T) -> BoundaryValues<T> {
        let one = T::one();
        let half_pi = T::lit(std::f64::consts::FRAC_PI_2);
        let pi = T::lit(std::f64::consts::PI);
        match self.kind {
            BoundaryKind::StandardCosine => BoundaryValues {
                g: (half_pi * (one - t)).sin(),
                f: (half_pi * t).sin(),
                h: (pi * t.min(one - t)).sin(),
            },
            BoundaryKind::OffsetCosine => {
                let c = (half_pi * (one - t)).sin();
                BoundaryValues {
                    g: c,
                    f: one - c,
                    h: (pi * t.min(one - t)).sin(),
                }
            }
            BoundaryKind::Quadratic => {
                let t2 = t * t;
                BoundaryValues {
                    g: one - t2,
                    f: t2,
                    h: t2 * (one - t2),
                }
            }
            BoundaryKind::SquareRoot => {
                let r = t.sqrt();
                BoundaryValues {
                    g: one - r,
                    f: r,
                    h: r * (one - r),
                }
            }
            BoundaryKind::Linear => BoundaryValues {
                g: one - t,
                f: t,
                h: t * (one - t),
            },
        }
    }

    fn verify_endpoints(&self) -> Result<()> {
        let at0 = self.eval_unchecked(0.0f64);
        let at1 = self.eval_unchecked(1.0f64);
        let checks = [
            ("g(1)", at1.g, 0.0),
            ("f(0)", at0.f, 0.0),
            ("h(0)", at0.h, 0.0),
            ("h(1)", at1.h, 0.0),
            ("g(0)", at0.g, 1.0),
            ("f(1)", at1.f, 1.0),
        ];
        for (label, got, want) in checks {
            if (got - want).abs() > ENDPOINT_TOLERANCE {
                return Err(FlowError::BoundaryConstraint {
                    name: self.name().to_string(),
                    detail: format!("{label} = {got}, expected {want}"),
                });
            }
        }
        Ok(())
    }
}

pub fn eval_boundary_functions<T: Scalar>(set: &BoundaryFunctionSet, t: T) -> Result<BoundaryValues<T>> {
    set.eval(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn eval(kind: BoundaryKind, t: f64) -> BoundaryValues<f64> {
        BoundaryFunctionSet::new(kind).unwrap().eval(t).unwrap()
    }

    #[test]
    fn standard_cosine_values() {
        assert_eq!(
            eval(BoundaryKind::StandardCosine, 0.0),
            BoundaryValues { g: 1.0, f: 0.0, h: 0.0 }
        );
        let v = eval(BoundaryKind::StandardCosine, 0.5);
        assert!((v.g - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((v.f - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((v.h - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_values() {
        assert_eq!(
            eval(BoundaryKind::Linear, 0.25),
            BoundaryValues { g: 0.75, f: 0.25, h: 0.1875 }
        );
    }

    #[test]
    fn every_set_is_exact_at_the_endpoints() {
        for kind in BoundaryKind::ALL {
            assert_eq!(eval(kind, 0.0), BoundaryValues { g: 1.0, f: 0.0, h: 0.0 }, "{kind}");
            assert_eq!(eval(kind, 1.0), BoundaryValues { g: 0.0, f: 1.0, h: 0.0 }, "{kind}");
        }
    }

    #[test]
    fn stable_forms_match_textbook_formulas() {
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let s = eval(BoundaryKind::StandardCosine, t);
            assert!((s.g - (PI * t / 2.0).cos()).abs() < 1e-15);
            assert!((s.h - (PI * t).sin()).abs() < 1e-15);
            let o = eval(BoundaryKind::OffsetCosine, t);
            assert!((o.f - (1.0 - (PI * t / 2.0).cos())).abs() < 1e-15);
            let q = eval(BoundaryKind::Quadratic, t);
            assert!((q.h - t * t * (1.0 - t * t)).abs() < 1e-15);
            let r = eval(BoundaryKind::SquareRoot, t);
            assert!((r.h - t.sqrt() * (1.0 - t.sqrt())).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let set = BoundaryFunctionSet::new(BoundaryKind::Linear).unwrap();
        assert!(matches!(set.eval(1.5), Err(FlowError::TimeOutOfRange(_))));
        assert!(matches!(set.eval(-1e-9), Err(FlowError::TimeOutOfRange(_))));
    }

    #[test]
    fn names_round_trip() {
        for kind in BoundaryKind::ALL {
            assert_eq!(kind.name().parse::<BoundaryKind>().unwrap(), kind);
        }
        assert!("cosine".parse::<BoundaryKind>().is_err());
    }
}
