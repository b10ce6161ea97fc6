//! Inputs and outcomes shared by the reference interpreter and both VMs.

use serde::{Deserialize, Serialize};

use crate::minic::{Signature, Ty};

/// Maximum buffer length accepted by the calling convention.
pub const MAX_BUFFER_LEN: usize = 64;

/// Default execution budget for the interpreter and the VMs.
pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scalar {
    Int(i64),
    Float(f64),
}

impl Scalar {
    /// Bit-level equality with every NaN treated as the same value.
    pub fn same(&self, other: &Scalar) -> bool {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (Scalar::Float(a), Scalar::Float(b)) => {
                (a.is_nan() && b.is_nan()) || a.to_bits() == b.to_bits()
            }
            _ => false,
        }
    }

    pub fn zero_of(ty: &Ty) -> Scalar {
        match ty.resolve() {
            Ty::Float => Scalar::Float(0.0),
            _ => Scalar::Int(0),
        }
    }

    pub fn matches(&self, ty: &Ty) -> bool {
        matches!(
            (self, ty.resolve()),
            (Scalar::Int(_), Ty::Int) | (Scalar::Float(_), Ty::Float)
        )
    }
}

/// Arguments for one call: scalar parameters in order, then one buffer per
/// pointer parameter in order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Inputs {
    pub scalars: Vec<Scalar>,
    pub buffers: Vec<Vec<Scalar>>,
}

impl Inputs {
    /// Whether arity, element kinds and buffer lengths fit `sig`.
    pub fn fits(&self, sig: &Signature) -> bool {
        let scalars: Vec<&Ty> = sig.scalar_params().collect();
        let ptrs: Vec<Ty> = sig.pointer_params().filter_map(Ty::elem).collect();
        scalars.len() == self.scalars.len()
            && ptrs.len() == self.buffers.len()
            && scalars.iter().zip(&self.scalars).all(|(t, v)| v.matches(t))
            && ptrs.iter().zip(&self.buffers).all(|(t, b)| {
                (1..=MAX_BUFFER_LEN).contains(&b.len()) && b.iter().all(|v| v.matches(t))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrapReason {
    DivByZero,
    OutOfBounds,
    InvalidOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutcomeKind {
    Returned(Option<Scalar>),
    Trap(TrapReason),
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    /// Buffer contents after the call; absent on `StepLimit`.
    pub final_buffers: Option<Vec<Vec<Scalar>>>,
}

impl Outcome {
    pub fn returned(v: Option<Scalar>, buffers: Vec<Vec<Scalar>>) -> Outcome {
        Outcome { kind: OutcomeKind::Returned(v), final_buffers: Some(buffers) }
    }

    pub fn trap(reason: TrapReason, buffers: Vec<Vec<Scalar>>) -> Outcome {
        Outcome { kind: OutcomeKind::Trap(reason), final_buffers: Some(buffers) }
    }

    pub fn step_limit() -> Outcome {
        Outcome { kind: OutcomeKind::StepLimit, final_buffers: None }
    }

    /// Outcome equality: kind, returned value and final buffers, with floats
    /// compared bit-for-bit after NaN canonicalization.
    pub fn equivalent(&self, other: &Outcome) -> bool {
        let kind_eq = match (&self.kind, &other.kind) {
            (OutcomeKind::Returned(None), OutcomeKind::Returned(None)) => true,
            (OutcomeKind::Returned(Some(a)), OutcomeKind::Returned(Some(b))) => a.same(b),
            (OutcomeKind::Trap(a), OutcomeKind::Trap(b)) => a == b,
            (OutcomeKind::StepLimit, OutcomeKind::StepLimit) => true,
            _ => false,
        };
        kind_eq
            && match (&self.final_buffers, &other.final_buffers) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    a.len() == b.len()
                        && a.iter().zip(b).all(|(x, y)| {
                            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.same(q))
                        })
                }
                _ => false,
            }
    }

    pub fn is_step_limit(&self) -> bool {
        self.kind == OutcomeKind::StepLimit
    }
}

/// Integer view used on entry: 64-bit input values wrap to 32 bits.
pub(crate) fn wrap_i32(v: i64) -> i32 {
    v as i32
}

/// `(double)` to `(int)` conversion: truncation toward zero, saturating,
/// NaN maps to zero.
pub(crate) fn f2i(v: f64) -> i32 {
    v as i32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_payloads_compare_equal() {
        let a = Scalar::Float(f64::NAN);
        let b = Scalar::Float(f64::from_bits(0x7ff8_0000_0000_0001));
        assert!(a.same(&b));
        assert!(!Scalar::Float(0.0).same(&Scalar::Float(-0.0)));
        assert!(!Scalar::Int(0).same(&Scalar::Float(0.0)));
    }

    #[test]
    fn step_limit_has_no_buffers() {
        let s = Outcome::step_limit();
        assert!(s.equivalent(&Outcome::step_limit()));
        assert!(!s.equivalent(&Outcome::returned(None, vec![])));
    }

    #[test]
    fn float_to_int_saturates() {
        assert_eq!(f2i(1e20), i32::MAX);
        assert_eq!(f2i(-2.9), -2);
        assert_eq!(f2i(f64::NAN), 0);
    }
}
