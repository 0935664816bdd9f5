//! Riemann-sphere and parameter-space geometry.
//!
//! Distances on the sphere use the chordal metric
//! `σ(x, y) = |x − y| / √((1 + |x|²)(1 + |y|²))`, which has diameter 1
//! (antipodal points such as `0` and `∞` are at distance exactly 1). It is
//! bi-Lipschitz equivalent to the Fubini–Study distance, so every growth rate
//! computed from it is unchanged by the choice.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A point of the affine chart of the sphere.
pub type ComplexPoint<T> = Complex<T>;

/// A point of the Riemann sphere: a finite complex number or `∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpherePoint<T> {
    Finite(Complex<T>),
    Infinity,
}

impl<T: Real> SpherePoint<T> {
    /// Wraps a complex value, mapping non-finite or clamped values to `∞`.
    #[inline]
    pub fn from_complex(z: Complex<T>) -> Self {
        if z.re.is_finite() && z.im.is_finite() && z.norm() <= T::clamp_radius() {
            SpherePoint::Finite(z)
        } else {
            SpherePoint::Infinity
        }
    }

    #[inline]
    pub fn is_infinite(&self) -> bool {
        matches!(self, SpherePoint::Infinity)
    }

    #[inline]
    pub fn finite(&self) -> Option<Complex<T>> {
        match self {
            SpherePoint::Finite(z) => Some(*z),
            SpherePoint::Infinity => None,
        }
    }

    /// Modulus in the affine chart (`+∞` at infinity).
    #[inline]
    pub fn modulus(&self) -> T {
        match self {
            SpherePoint::Finite(z) => z.norm(),
            SpherePoint::Infinity => T::infinity(),
        }
    }

    /// Image on the unit sphere of ℝ³ under inverse stereographic projection.
    /// Euclidean chord lengths there are exactly twice the chordal distance.
    #[inline]
    pub fn embed(&self) -> [T; 3] {
        match self {
            SpherePoint::Finite(z) => {
                let r2 = z.norm_sqr();
                let s = T::one() / (T::one() + r2);
                let two = T::lit(2.0);
                [two * z.re * s, two * z.im * s, (r2 - T::one()) * s]
            }
            SpherePoint::Infinity => [T::zero(), T::zero(), T::one()],
        }
    }
}

impl<T: Real> From<Complex<T>> for SpherePoint<T> {
    fn from(z: Complex<T>) -> Self {
        SpherePoint::from_complex(z)
    }
}

/// Chordal distance on the Riemann sphere, in `[0, 1]`.
#[inline]
pub fn chordal_dist<T: Real>(x: &SpherePoint<T>, y: &SpherePoint<T>) -> T {
    match (x, y) {
        (SpherePoint::Infinity, SpherePoint::Infinity) => T::zero(),
        (SpherePoint::Finite(z), SpherePoint::Infinity)
        | (SpherePoint::Infinity, SpherePoint::Finite(z)) => {
            T::one() / (T::one() + z.norm_sqr()).sqrt()
        }
        (SpherePoint::Finite(a), SpherePoint::Finite(b)) => {
            let num = (*a - *b).norm();
            let den = ((T::one() + a.norm_sqr()) * (T::one() + b.norm_sqr())).sqrt();
            if den.is_finite() {
                return num / den;
            }
            // Huge moduli overflow the product. z ↦ 1/z is an isometry, so
            // either invert both points or only the far one.
            let one = Complex::new(T::one(), T::zero());
            let (near, far) = if a.norm() <= b.norm() { (a, b) } else { (b, a) };
            let w = invert(*far);
            if near.norm() >= T::one() {
                let v = invert(*near);
                (v - w).norm() / ((T::one() + v.norm_sqr()) * (T::one() + w.norm_sqr())).sqrt()
            } else {
                (*near * w - one).norm()
                    / ((T::one() + near.norm_sqr()) * (T::one() + w.norm_sqr())).sqrt()
            }
        }
    }
}

/// `1/z` without forming `|z|²`, which overflows for huge moduli.
#[inline]
fn invert<T: Real>(z: Complex<T>) -> Complex<T> {
    let r = z.norm();
    (z / r).conj() / r
}

/// A point of parameter space ℂ^dim, `dim ∈ {1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameter<T> {
    coords: [Complex<T>; 2],
    dim: usize,
}

impl<T: Real> Parameter<T> {
    pub fn one(c: Complex<T>) -> Self {
        Parameter {
            coords: [c, Complex::new(T::zero(), T::zero())],
            dim: 1,
        }
    }

    pub fn two(a: Complex<T>, b: Complex<T>) -> Self {
        Parameter {
            coords: [a, b],
            dim: 2,
        }
    }

    /// Real-coordinate constructor for the common one-dimensional case.
    pub fn from_re_im(re: T, im: T) -> Self {
        Self::one(Complex::new(re, im))
    }

    pub fn from_slice(coords: &[Complex<T>]) -> Result<Self> {
        match coords {
            [c] => Ok(Self::one(*c)),
            [a, b] => Ok(Self::two(*a, *b)),
            _ => Err(Error::InvalidParameter(format!(
                "parameter dimension must be 1 or 2, got {}",
                coords.len()
            ))),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn coords(&self) -> &[Complex<T>] {
        &self.coords[..self.dim]
    }

    #[inline]
    pub fn coord(&self, i: usize) -> Complex<T> {
        self.coords()[i]
    }

    pub fn is_finite(&self) -> bool {
        self.coords()
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Euclidean distance between parameters of equal dimension.
pub fn param_dist<T: Real>(a: &Parameter<T>, b: &Parameter<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(param_dist_unchecked(a, b))
}

#[inline]
pub(crate) fn param_dist_unchecked<T: Real>(a: &Parameter<T>, b: &Parameter<T>) -> T {
    a.coords()
        .iter()
        .zip(b.coords())
        .map(|(x, y)| (*x - *y).norm_sqr())
        .sum::<T>()
        .sqrt()
}

/// Axis-aligned rectangle `[re_min, re_max] × [im_min, im_max]` of ℂ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        let r = Rect {
            re_min,
            re_max,
            im_min,
            im_max,
        };
        r.validate()?;
        Ok(r)
    }

    /// Square of half-width `r` centred at `c`.
    pub fn around(c: Complex<f64>, r: f64) -> Self {
        Rect {
            re_min: c.re - r,
            re_max: c.re + r,
            im_min: c.im - r,
            im_max: c.im + r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.re_min, self.re_max, self.im_min, self.im_max]
            .iter()
            .all(|v| v.is_finite())
            && self.re_min < self.re_max
            && self.im_min < self.im_max;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRegion(format!("{self:?}")))
        }
    }

    pub fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    pub fn height(&self) -> f64 {
        self.im_max - self.im_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, c: Complex<f64>) -> bool {
        c.re >= self.re_min && c.re <= self.re_max && c.im >= self.im_min && c.im <= self.im_max
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fp(re: f64, im: f64) -> SpherePoint<f64> {
        SpherePoint::Finite(Complex::new(re, im))
    }

    #[test]
    fn chordal_examples() {
        assert_eq!(chordal_dist(&fp(0.0, 0.0), &fp(0.0, 0.0)), 0.0);
        assert_eq!(chordal_dist(&fp(0.0, 0.0), &SpherePoint::Infinity), 1.0);
        assert_abs_diff_eq!(
            chordal_dist(&fp(0.0, 0.0), &fp(1.0, 0.0)),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert_eq!(
            chordal_dist::<f64>(&SpherePoint::Infinity, &SpherePoint::Infinity),
            0.0
        );
    }

    #[test]
    fn chordal_is_half_the_embedded_chord() {
        let a = fp(0.3, -1.2);
        let b = fp(-2.0, 0.7);
        let (x, y) = (a.embed(), b.embed());
        let chord = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
        assert_abs_diff_eq!(chord / 2.0, chordal_dist(&a, &b), epsilon = 1e-14);
    }

    #[test]
    fn huge_moduli_do_not_overflow() {
        let a = fp(1e200, 0.0);
        let b = fp(2e200, 0.0);
        let d = chordal_dist(&a, &b);
        assert_abs_diff_eq!(d, 0.5e-200, epsilon = 1e-210);
        assert_abs_diff_eq!(chordal_dist(&a, &fp(0.0, 0.0)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn from_complex_clamps() {
        let z = SpherePoint::from_complex(Complex::new(1e151, 0.0));
        assert!(z.is_infinite());
        let z = SpherePoint::from_complex(Complex::new(f64::NAN, 0.0));
        assert!(z.is_infinite());
    }

    #[test]
    fn param_dist_examples() {
        let o = Parameter::from_re_im(0.0, 0.0);
        assert_eq!(param_dist(&o, &o).unwrap(), 0.0);
        assert_eq!(
            param_dist(&o, &Parameter::from_re_im(3.0, 4.0)).unwrap(),
            5.0
        );
        let z = Complex::new(0.0, 0.0);
        let w = Complex::new(1.0, 0.0);
        let d = param_dist(&Parameter::two(z, z), &Parameter::two(w, w)).unwrap();
        assert_abs_diff_eq!(d, 2f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(
            param_dist(&o, &Parameter::two(z, z)),
            Err(Error::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn rect_validation() {
        assert!(Rect::new(0.0, 1.0, 0.0, 1.0).is_ok());
        assert!(Rect::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(Rect::new(0.0, f64::NAN, 0.0, 1.0).is_err());
    }

    fn arb_point() -> impl Strategy<Value = SpherePoint<f64>> {
        prop_oneof![
            9 => (-50.0f64..50.0, -50.0f64..50.0).prop_map(|(a, b)| fp(a, b)),
            1 => Just(SpherePoint::Infinity),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn chordal_metric_axioms(x in arb_point(), y in arb_point(), z in arb_point()) {
            let dxy = chordal_dist(&x, &y);
            prop_assert!((0.0..=1.0 + 1e-15).contains(&dxy));
            prop_assert_eq!(chordal_dist(&x, &x), 0.0);
            prop_assert!((dxy - chordal_dist(&y, &x)).abs() <= 1e-15);
            prop_assert!(chordal_dist(&x, &z) <= dxy + chordal_dist(&y, &z) + 1e-12);
        }
    }
}
