//! Exact arithmetic over the dyadic angle set `{π·k / 2^(b-1) : 0 ≤ k < 2^b}`.
//!
//! Angles are stored as an integer index `k` together with the precision `b`;
//! radians only appear at the simulator boundary through [`DyadicAngle::to_radians`].

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported precision. Keeps `2^b` comfortably inside `u32`.
pub const MAX_PRECISION: u8 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AngleError {
    #[error("precision mismatch: {left} bits vs {right} bits")]
    PrecisionMismatch { left: u8, right: u8 },
    #[error("precision must be in 1..={MAX_PRECISION}, got {0}")]
    InvalidPrecision(u8),
    #[error("index {k} out of range for precision {b}")]
    IndexOutOfRange { k: u32, b: u8 },
}

/// An element of the finite angle set fixed by a precision of `b` bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawAngle", into = "RawAngle")]
pub struct DyadicAngle {
    k: u32,
    b: u8,
}

#[derive(Serialize, Deserialize)]
struct RawAngle {
    k: u32,
    b: u8,
}

impl TryFrom<RawAngle> for DyadicAngle {
    type Error = AngleError;

    fn try_from(raw: RawAngle) -> Result<Self, Self::Error> {
        DyadicAngle::new(raw.k, raw.b)
    }
}

impl From<DyadicAngle> for RawAngle {
    fn from(a: DyadicAngle) -> Self {
        RawAngle { k: a.k, b: a.b }
    }
}

fn check_precision(b: u8) -> Result<(), AngleError> {
    if b == 0 || b > MAX_PRECISION {
        Err(AngleError::InvalidPrecision(b))
    } else {
        Ok(())
    }
}

impl DyadicAngle {
    pub fn new(k: u32, b: u8) -> Result<Self, AngleError> {
        check_precision(b)?;
        if u64::from(k) >= 1u64 << b {
            return Err(AngleError::IndexOutOfRange { k, b });
        }
        Ok(Self { k, b })
    }

    /// Reduces an arbitrary integer index modulo `2^b`.
    pub fn wrapping(k: i64, b: u8) -> Result<Self, AngleError> {
        check_precision(b)?;
        let m = 1i64 << b;
        Ok(Self {
            k: k.rem_euclid(m) as u32,
            b,
        })
    }

    pub fn zero(b: u8) -> Result<Self, AngleError> {
        Self::new(0, b)
    }

    pub fn pi(b: u8) -> Result<Self, AngleError> {
        check_precision(b)?;
        Ok(Self { k: 1 << (b - 1), b })
    }

    pub fn k(self) -> u32 {
        self.k
    }

    pub fn b(self) -> u8 {
        self.b
    }

    /// Number of elements in the angle set, `2^b`.
    pub fn modulus(self) -> u32 {
        1 << self.b
    }

    fn mask(self) -> u32 {
        self.modulus() - 1
    }

    fn same_precision(self, other: Self) -> Result<(), AngleError> {
        if self.b != other.b {
            Err(AngleError::PrecisionMismatch {
                left: self.b,
                right: other.b,
            })
        } else {
            Ok(())
        }
    }

    pub fn add(self, other: Self) -> Result<Self, AngleError> {
        self.same_precision(other)?;
        Ok(Self {
            k: (self.k + other.k) & self.mask(),
            b: self.b,
        })
    }

    pub fn sub(self, other: Self) -> Result<Self, AngleError> {
        self.same_precision(other)?;
        Ok(self.add_unchecked(other.neg()))
    }

    fn add_unchecked(self, other: Self) -> Self {
        Self {
            k: (self.k + other.k) & self.mask(),
            b: self.b,
        }
    }

    pub fn neg(self) -> Self {
        Self {
            k: self.k.wrapping_neg() & self.mask(),
            b: self.b,
        }
    }

    /// Adds `bit·π`.
    pub fn add_pi(self, bit: u8) -> Self {
        if bit & 1 == 1 {
            Self {
                k: (self.k + (1 << (self.b - 1))) & self.mask(),
                b: self.b,
            }
        } else {
            self
        }
    }

    /// Absorbs the Pauli byproducts `X^sx Z^sz` into a measurement angle:
    /// `(-1)^sx · θ + sz·π`.
    pub fn correct(self, sx: u8, sz: u8) -> Self {
        let signed = if sx & 1 == 1 { self.neg() } else { self };
        signed.add_pi(sz)
    }

    pub fn to_radians(self) -> f64 {
        PI * f64::from(self.k) / f64::from(1u32 << (self.b - 1))
    }

    /// Every angle of precision `b`, in index order.
    pub fn all(b: u8) -> Result<impl Iterator<Item = DyadicAngle>, AngleError> {
        check_precision(b)?;
        Ok((0..1u32 << b).map(move |k| DyadicAngle { k, b }))
    }
}

/// Free-function form of [`DyadicAngle::correct`].
pub fn correct_angle(theta: DyadicAngle, sx: u8, sz: u8) -> DyadicAngle {
    theta.correct(sx, sz)
}

impl fmt::Debug for DyadicAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}π/{}", self.k, 1u32 << (self.b - 1))
    }
}

impl fmt::Display for DyadicAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn a(k: u32, b: u8) -> DyadicAngle {
        DyadicAngle::new(k, b).unwrap()
    }

    #[test]
    fn addition_examples() {
        assert_eq!(a(3, 4).add(a(5, 4)).unwrap(), a(8, 4));
        assert_eq!(a(0, 4).add(a(7, 4)).unwrap(), a(7, 4));
        assert_eq!(a(12, 4).add(a(12, 4)).unwrap(), a(8, 4));
    }

    #[test]
    fn mismatched_precision_is_rejected() {
        let err = a(1, 3).add(a(1, 4)).unwrap_err();
        assert_eq!(err, AngleError::PrecisionMismatch { left: 3, right: 4 });
        assert!(a(1, 3).sub(a(1, 2)).is_err());
    }

    #[test]
    fn construction_bounds() {
        assert!(DyadicAngle::new(16, 4).is_err());
        assert!(DyadicAngle::new(0, 0).is_err());
        assert_eq!(DyadicAngle::wrapping(-3, 4).unwrap(), a(13, 4));
        assert_eq!(DyadicAngle::pi(4).unwrap(), a(8, 4));
    }

    #[test]
    fn correction_examples() {
        assert_eq!(correct_angle(a(3, 4), 1, 0), a(13, 4));
        assert_eq!(correct_angle(a(3, 4), 0, 1), a(11, 4));
        assert_eq!(correct_angle(a(5, 4), 0, 0), a(5, 4));
    }

    #[test]
    fn radians_examples() {
        assert_eq!(a(0, 4).to_radians(), 0.0);
        assert!((a(8, 4).to_radians() - PI).abs() < 1e-15);
        assert!((a(4, 4).to_radians() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn json_shape() {
        let s = serde_json::to_string(&a(5, 4)).unwrap();
        assert_eq!(s, r#"{"k":5,"b":4}"#);
        let back: DyadicAngle = serde_json::from_str(&s).unwrap();
        assert_eq!(back, a(5, 4));
        assert!(serde_json::from_str::<DyadicAngle>(r#"{"k":16,"b":4}"#).is_err());
    }

    #[test]
    fn phases_sum_to_zero() {
        for b in 1..=8 {
            let total: Complex64 = DyadicAngle::all(b)
                .unwrap()
                .map(|x| Complex64::from_polar(1.0, x.to_radians()))
                .sum();
            assert!(total.norm() < 1e-12, "b={b}: {total}");
        }
    }

    #[test]
    fn translation_preserves_uniformity() {
        for b in 1..=6u8 {
            for c in DyadicAngle::all(b).unwrap() {
                let mut counts = vec![0u32; 1 << b];
                for x in DyadicAngle::all(b).unwrap() {
                    counts[x.add(c).unwrap().k() as usize] += 1;
                }
                assert!(counts.iter().all(|&n| n == 1));
            }
        }
    }

    fn angle(b: u8) -> impl Strategy<Value = DyadicAngle> {
        (0..1u32 << b).prop_map(move |k| DyadicAngle::new(k, b).unwrap())
    }

    proptest! {
        #[test]
        fn ring_laws(b in 1u8..=10, seed in any::<u64>()) {
            let m = 1u64 << b;
            let x = a((seed % m) as u32, b);
            let y = a(((seed >> 20) % m) as u32, b);
            let z = a(((seed >> 40) % m) as u32, b);
            prop_assert_eq!(x.add(y).unwrap(), y.add(x).unwrap());
            prop_assert_eq!(x.add(y).unwrap().add(z).unwrap(), x.add(y.add(z).unwrap()).unwrap());
            prop_assert_eq!(x.add(DyadicAngle::zero(b).unwrap()).unwrap(), x);
            prop_assert_eq!(x.neg().neg(), x);
            prop_assert_eq!(x.sub(x).unwrap(), DyadicAngle::zero(b).unwrap());
        }

        #[test]
        fn x_correction_is_an_involution(theta in angle(5), sx in 0u8..2) {
            prop_assert_eq!(theta.correct(sx, 0).correct(sx, 0), theta);
        }
    }
}
