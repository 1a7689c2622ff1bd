//! Geometry of the side-1 torus: points live in `[-1/2, 1/2)^D` and all
//! displacements use the minimal image.

use crate::error::{Error, Result};

/// Point (or displacement) on the `D`-dimensional torus of side one.
///
/// Every coordinate is kept in `[-1/2, 1/2)`; ties at `±1/2` map to `-1/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusVector<const D: usize>(pub [f64; D]);

/// Reduce one coordinate into `[-1/2, 1/2)`.
#[inline]
pub fn wrap_coord(x: f64) -> f64 {
    let w = x - (x + 0.5).floor();
    // (x + 0.5).floor() can land w exactly on 1/2 through rounding
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

impl<const D: usize> TorusVector<D> {
    /// Wrap raw coordinates onto the torus. Rejects non-finite input.
    pub fn wrap(raw: [f64; D]) -> Result<Self> {
        if raw.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate in {raw:?}"
            )));
        }
        Ok(Self::wrap_finite(raw))
    }

    /// Wrap coordinates known to be finite (hot path).
    #[inline]
    pub fn wrap_finite(raw: [f64; D]) -> Self {
        let mut out = [0.0; D];
        for (o, &c) in out.iter_mut().zip(raw.iter()) {
            debug_assert!(c.is_finite());
            *o = wrap_coord(c);
        }
        Self(out)
    }

    pub fn zero() -> Self {
        Self([0.0; D])
    }

    #[inline]
    pub fn coords(&self) -> &[f64; D] {
        &self.0
    }

    /// Minimal-image displacement `self - other` as a torus vector.
    #[inline]
    pub fn displacement_from(&self, other: &Self) -> Self {
        let mut d = [0.0; D];
        for i in 0..D {
            d[i] = wrap_coord(self.0[i] - other.0[i]);
        }
        Self(d)
    }

    /// Distance from 0 on the torus (Euclidean norm of the wrapped vector).
    #[inline]
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Minimal-image Euclidean distance to `other`.
    #[inline]
    pub fn distance(&self, other: &Self) -> f64 {
        self.displacement_from(other).norm()
    }

    /// Translate by `delta` (Euclidean vector), wrapping back onto the torus.
    #[inline]
    pub fn translate(&self, delta: &[f64; D]) -> Self {
        let mut out = [0.0; D];
        for i in 0..D {
            out[i] = wrap_coord(self.0[i] + delta[i]);
        }
        Self(out)
    }

    /// Minimal-norm Euclidean representative of `self - other`.
    ///
    /// When the minimal-norm lift is not unique (a coordinate difference of
    /// exactly 1/2), the representative minimizing `tie_break · eta` is
    /// chosen; this is a null event in simulation but keeps the map
    /// deterministic.
    pub fn euclidean_rep(&self, other: &Self, tie_break: &[f64; D]) -> [f64; D] {
        let mut eta = [0.0; D];
        for i in 0..D {
            let w = wrap_coord(self.0[i] - other.0[i]);
            eta[i] = if w == -0.5 && tie_break[i] < 0.0 {
                0.5
            } else {
                w
            };
        }
        eta
    }
}

/// Euclidean dot product of two `D`-vectors.
#[inline]
pub fn dot<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean norm of a `D`-vector.
#[inline]
pub fn norm_sq<const D: usize>(a: &[f64; D]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Oracle: minimal distance over all integer shifts in {-3..3}^D.
    fn shift_oracle<const D: usize>(a: [f64; D], b: [f64; D]) -> f64 {
        fn rec<const D: usize>(i: usize, diff: &mut [f64; D], best: &mut f64) {
            if i == D {
                let n = diff.iter().map(|c| c * c).sum::<f64>().sqrt();
                if n < *best {
                    *best = n;
                }
                return;
            }
            let base = diff[i];
            for k in -3..=3 {
                diff[i] = base + k as f64;
                rec::<D>(i + 1, diff, best);
            }
            diff[i] = base;
        }
        let mut diff = [0.0; D];
        for i in 0..D {
            diff[i] = a[i] - b[i];
        }
        let mut best = f64::INFINITY;
        rec::<D>(0, &mut diff, &mut best);
        best
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(TorusVector::wrap([0.75]).unwrap().0, [-0.25]);
        assert_eq!(TorusVector::wrap([0.0, 0.0]).unwrap().0, [0.0, 0.0]);
        let w = TorusVector::wrap([1.3, -2.6]).unwrap();
        // oracle: brute-force integer shifts into [-1/2, 1/2)
        for (got, raw) in w.0.iter().zip([1.3, -2.6]) {
            let mut expect = f64::NAN;
            for k in -3..=3 {
                let c = raw + k as f64;
                if (-0.5..0.5).contains(&c) {
                    expect = c;
                }
            }
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
        assert!((w.0[0] - 0.3).abs() < 1e-12 && (w.0[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(TorusVector::wrap([f64::NAN, 0.0]).is_err());
        assert!(TorusVector::wrap([f64::INFINITY]).is_err());
    }

    #[test]
    fn half_ties_map_to_negative_half() {
        assert_eq!(wrap_coord(0.5), -0.5);
        assert_eq!(wrap_coord(-0.5), -0.5);
        assert_eq!(wrap_coord(1.5), -0.5);
    }

    #[test]
    fn distance_wraparound() {
        let a = TorusVector([0.4]);
        let b = TorusVector([-0.4]);
        assert!((a.distance(&b) - 0.2).abs() < 1e-15);
        assert_eq!(a.distance(&a), 0.0);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let w = TorusVector::wrap([x, y]).unwrap();
            let ww = TorusVector::wrap(w.0).unwrap();
            prop_assert_eq!(w.0, ww.0);
            prop_assert!(w.0.iter().all(|c| (-0.5..0.5).contains(c)));
        }

        #[test]
        fn distance_matches_shift_oracle(
            a in prop::array::uniform3(-0.5f64..0.5),
            b in prop::array::uniform3(-0.5f64..0.5),
        ) {
            let ta = TorusVector(a);
            let tb = TorusVector(b);
            let d = ta.distance(&tb);
            prop_assert!((d - shift_oracle(a, b)).abs() < 1e-12);
            prop_assert!((d - tb.distance(&ta)).abs() < 1e-15);
            prop_assert!(d <= 3f64.sqrt() / 2.0 + 1e-15);
        }

        #[test]
        fn triangle_inequality(
            a in prop::array::uniform2(-0.5f64..0.5),
            b in prop::array::uniform2(-0.5f64..0.5),
            c in prop::array::uniform2(-0.5f64..0.5),
        ) {
            let (ta, tb, tc) = (TorusVector(a), TorusVector(b), TorusVector(c));
            prop_assert!(ta.distance(&tc) <= ta.distance(&tb) + tb.distance(&tc) + 1e-12);
        }
    }
}
