//! Critically marked polynomial families and the built-in catalog.
//!
//! A family is a holomorphic map `λ ↦ f_λ` together with holomorphic maps
//! `λ ↦ c_j(λ)` following the critical points. Marked-point indices are
//! zero-based throughout the API.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sphere::{Parameter, SpherePoint};

/// A holomorphic family of polynomials with holomorphically marked critical
/// points. Every built-in family fixes `∞`.
pub trait MarkedFamily: Send + Sync {
    fn degree(&self) -> u32;

    fn dim_lambda(&self) -> usize;

    fn num_marked(&self) -> usize;

    /// Local degree minus one of `f_λ` at the marked point `j`, i.e. the
    /// number of critical points it stands for.
    fn multiplicity(&self, j: usize) -> u32;

    /// `f_λ(z)` in the affine chart.
    fn eval_affine<T: Real>(&self, p: &Parameter<T>, z: Complex<T>) -> Complex<T>;

    /// `∂f_λ/∂z`.
    fn deriv<T: Real>(&self, p: &Parameter<T>, z: Complex<T>) -> Complex<T>;

    /// `∂f_λ(z)/∂λ_k` for the parameter coordinate `k`.
    fn param_deriv<T: Real>(&self, p: &Parameter<T>, z: Complex<T>, k: usize) -> Complex<T>;

    /// The marked critical point `c_j(λ)`.
    fn marked_affine<T: Real>(&self, j: usize, p: &Parameter<T>) -> Complex<T>;

    /// `∂c_j/∂λ_k`.
    fn marked_param_deriv<T: Real>(&self, j: usize, p: &Parameter<T>, k: usize) -> Complex<T>;

    /// Radius beyond which every orbit of `f_λ` escapes to `∞`.
    fn escape_radius<T: Real>(&self, p: &Parameter<T>) -> T;

    /// Stable string identifier, parseable back through [`Family::from_str`].
    fn id(&self) -> String;

    /// `f_λ` on the sphere. Values past the clamp radius become `∞`.
    fn eval<T: Real>(&self, p: &Parameter<T>, z: &SpherePoint<T>) -> SpherePoint<T> {
        match z {
            SpherePoint::Infinity => SpherePoint::Infinity,
            SpherePoint::Finite(z) => SpherePoint::from_complex(self.eval_affine(p, *z)),
        }
    }

    fn marked_point<T: Real>(&self, j: usize, p: &Parameter<T>) -> SpherePoint<T> {
        SpherePoint::from_complex(self.marked_affine(j, p))
    }
}

/// `f_λ(z) = z^d + λ`, one marked critical point `c ≡ 0` of multiplicity `d − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unicritical {
    degree: u32,
}

impl Unicritical {
    pub fn new(degree: u32) -> Result<Self> {
        if degree < 2 {
            return Err(Error::InvalidDegree(degree));
        }
        Ok(Unicritical { degree })
    }
}

impl MarkedFamily for Unicritical {
    fn degree(&self) -> u32 {
        self.degree
    }

    fn dim_lambda(&self) -> usize {
        1
    }

    fn num_marked(&self) -> usize {
        1
    }

    fn multiplicity(&self, _j: usize) -> u32 {
        self.degree - 1
    }

    #[inline]
    fn eval_affine<T: Real>(&self, p: &Parameter<T>, z: Complex<T>) -> Complex<T> {
        z.powu(self.degree) + p.coord(0)
    }

    #[inline]
    fn deriv<T: Real>(&self, _p: &Parameter<T>, z: Complex<T>) -> Complex<T> {
        z.powu(self.degree - 1) * T::from_usize_lossy(self.degree as usize)
    }

    fn param_deriv<T: Real>(&self, _p: &Parameter<T>, _z: Complex<T>, _k: usize) -> Complex<T> {
        Complex::new(T::one(), T::zero())
    }

    fn marked_affine<T: Real>(&self, _j: usize, _p: &Parameter<T>) -> Complex<T> {
        Complex::new(T::zero(), T::zero())
    }

    fn marked_param_deriv<T: Real>(&self, _j: usize, _p: &Parameter<T>, _k: usize) -> Complex<T> {
        Complex::new(T::zero(), T::zero())
    }

    fn escape_radius<T: Real>(&self, p: &Parameter<T>) -> T {
        T::lit(2.0).max(p.coord(0).norm() + T::one())
    }

    fn id(&self) -> String {
        format!("unicritical:{}", self.degree)
    }
}

/// `f_{(a,b)}(z) = z³ − 3a²z + b`, marked critical points `c₀ = a`, `c₁ = −a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CubicTwoCritical;

impl MarkedFamily for CubicTwoCritical {
    fn degree(&self) -> u32 {
        3
    }

    fn dim_lambda(&self) -> usize {
        2
    }

    fn num_marked(&self) -> usize {
        2
    }

    fn multiplicity(&self, _j: usize) -> u32 {
        1
    }

    #[inline]
    fn eval_affine<T: Real>(&self, p: &Parameter<T>, z: Complex<T>) -> Complex<T> {
        let a = p.coord(0);
        z * z * z - a * a * z * T::lit(3.0) + p.coord(1)
    }

    #[inline]
    fn deriv<T: Real>(&self, p: &Parameter<T>, z: Complex<T>) -> Complex<T> {
        let a = p.coord(0);
        (z * z - a * a) * T::lit(3.0)
    }

    fn param_deriv<T: Real>(&self, p: &Parameter<T>, z: Complex<T>, k: usize) -> Complex<T> {
        match k {
            0 => -(p.coord(0) * z) * T::lit(6.0),
            _ => Complex::new(T::one(), T::zero()),
        }
    }

    fn marked_affine<T: Real>(&self, j: usize, p: &Parameter<T>) -> Complex<T> {
        if j == 0 {
            p.coord(0)
        } else {
            -p.coord(0)
        }
    }

    fn marked_param_deriv<T: Real>(&self, j: usize, _p: &Parameter<T>, k: usize) -> Complex<T> {
        let one = Complex::new(T::one(), T::zero());
        match (j, k) {
            (0, 0) => one,
            (_, 0) => -one,
            _ => Complex::new(T::zero(), T::zero()),
        }
    }

    fn escape_radius<T: Real>(&self, p: &Parameter<T>) -> T {
        let a2 = p.coord(0).norm_sqr();
        let b = p.coord(1).norm();
        T::lit(2.0).max((T::lit(3.0) * a2 + b + T::lit(2.0)).sqrt())
    }

    fn id(&self) -> String {
        "cubic2c".to_string()
    }
}

/// Built-in family catalog, selectable by identifier (`"unicritical:d"`,
/// `"cubic2c"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Unicritical(Unicritical),
    CubicTwoCritical(CubicTwoCritical),
}

/// `z ↦ z^d + λ`.
pub fn make_unicritical(d: u32) -> Result<Family> {
    Ok(Family::Unicritical(Unicritical::new(d)?))
}

/// `z ↦ z³ − 3a²z + b` with both critical points marked.
pub fn make_cubic_two_critical() -> Family {
    Family::CubicTwoCritical(CubicTwoCritical)
}

macro_rules! dispatch {
    ($self:ident, $f:ident => $e:expr) => {
        match $self {
            Family::Unicritical($f) => $e,
            Family::CubicTwoCritical($f) => $e,
        }
    };
}

impl MarkedFamily for Family {
    fn degree(&self) -> u32 {
        dispatch!(self, f => f.degree())
    }

    fn dim_lambda(&self) -> usize {
        dispatch!(self, f => f.dim_lambda())
    }

    fn num_marked(&self) -> usize {
        dispatch!(self, f => f.num_marked())
    }

    fn multiplicity(&self, j: usize) -> u32 {
        dispatch!(self, f => f.multiplicity(j))
    }

    #[inline]
    fn eval_affine<T: Real>(&self, p: &Parameter<T>, z: Complex<T>) -> Complex<T> {
        dispatch!(self, f => f.eval_affine(p, z))
    }

    #[inline]
    fn deriv<T: Real>(&self, p: &Parameter<T>, z: Complex<T>) -> Complex<T> {
        dispatch!(self, f => f.deriv(p, z))
    }

    fn param_deriv<T: Real>(&self, p: &Parameter<T>, z: Complex<T>, k: usize) -> Complex<T> {
        dispatch!(self, f => f.param_deriv(p, z, k))
    }

    fn marked_affine<T: Real>(&self, j: usize, p: &Parameter<T>) -> Complex<T> {
        dispatch!(self, f => f.marked_affine(j, p))
    }

    fn marked_param_deriv<T: Real>(&self, j: usize, p: &Parameter<T>, k: usize) -> Complex<T> {
        dispatch!(self, f => f.marked_param_deriv(j, p, k))
    }

    fn escape_radius<T: Real>(&self, p: &Parameter<T>) -> T {
        dispatch!(self, f => f.escape_radius(p))
    }

    fn id(&self) -> String {
        dispatch!(self, f => f.id())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "cubic2c" {
            return Ok(make_cubic_two_critical());
        }
        if let Some(d) = s.strip_prefix("unicritical:") {
            let d: u32 = d.parse().map_err(|_| Error::UnknownFamily(s.to_string()))?;
            return make_unicritical(d);
        }
        Err(Error::UnknownFamily(s.to_string()))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn unicritical_examples() {
        let f = make_unicritical(2).unwrap();
        let p = Parameter::from_re_im(1.0, 0.0);
        assert_eq!(
            f.eval(&p, &SpherePoint::Finite(c(2.0, 0.0))),
            SpherePoint::Finite(c(5.0, 0.0))
        );
        for lam in [c(0.3, -2.0), c(-2.0, 0.0)] {
            assert_eq!(
                f.marked_point(0, &Parameter::one(lam)),
                SpherePoint::Finite(c(0.0, 0.0))
            );
        }
        let f3 = make_unicritical(3).unwrap();
        assert_eq!(
            f3.deriv(&Parameter::from_re_im(0.7, 0.1), c(1.0, 0.0)),
            c(3.0, 0.0)
        );
        assert_eq!(f.escape_radius(&Parameter::from_re_im(3.0, 4.0)), 6.0);
        assert_eq!(f.escape_radius(&Parameter::from_re_im(0.5, 0.0)), 2.0);
    }

    #[test]
    fn invalid_degree() {
        assert_eq!(make_unicritical(1), Err(Error::InvalidDegree(1)));
        assert_eq!(make_unicritical(0), Err(Error::InvalidDegree(0)));
    }

    #[test]
    fn cubic_examples() {
        let f = make_cubic_two_critical();
        let o = Parameter::two(c(0.0, 0.0), c(0.0, 0.0));
        assert_eq!(f.eval_affine(&o, c(2.0, 0.0)), c(8.0, 0.0));
        let p = Parameter::two(c(1.0, 0.0), c(0.0, 0.0));
        assert_eq!(f.marked_affine(0, &p), c(1.0, 0.0));
        assert_eq!(f.deriv(&p, c(1.0, 0.0)), c(0.0, 0.0));
        assert_eq!(f.marked_affine(1, &p), c(-1.0, 0.0));
        assert_eq!(f.dim_lambda(), 2);
        assert_eq!(f.num_marked(), 2);
    }

    #[test]
    fn identifiers_round_trip() {
        for id in ["unicritical:2", "unicritical:5", "cubic2c"] {
            let f: Family = id.parse().unwrap();
            assert_eq!(f.id(), id);
        }
        assert!(matches!(
            "unicritical:1".parse::<Family>(),
            Err(Error::InvalidDegree(1))
        ));
        assert!(matches!(
            "quartic".parse::<Family>(),
            Err(Error::UnknownFamily(_))
        ));
        assert!(matches!(
            "unicritical:x".parse::<Family>(),
            Err(Error::UnknownFamily(_))
        ));
    }

    #[test]
    fn infinity_is_fixed() {
        let f = make_unicritical(2).unwrap();
        let p = Parameter::from_re_im(0.1, 0.0);
        assert!(f.eval(&p, &SpherePoint::Infinity).is_infinite());
        assert!(f
            .eval(&p, &SpherePoint::Finite(c(1e100, 0.0)))
            .is_infinite());
    }

    fn random_param(f: &Family, rng: &mut ChaCha8Rng) -> Parameter<f64> {
        let mut z = || c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        if f.dim_lambda() == 1 {
            Parameter::one(z())
        } else {
            let a = z();
            Parameter::two(a, z())
        }
    }

    #[test]
    fn marked_points_are_critical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fams = [
            make_unicritical(2).unwrap(),
            make_unicritical(3).unwrap(),
            make_unicritical(5).unwrap(),
            make_cubic_two_critical(),
        ];
        for f in fams {
            for _ in 0..1000 {
                let p = random_param(&f, &mut rng);
                for j in 0..f.num_marked() {
                    let cj = f.marked_affine(j, &p);
                    assert!(f.deriv(&p, cj).norm() < 1e-9, "{} at {:?}", f, p);
                }
            }
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let f = make_cubic_two_critical();
        let p = Parameter::two(c(0.31, -0.2), c(0.05, 0.4));
        let z = SpherePoint::Finite(c(0.7, 0.9));
        let a = f.eval(&p, &z);
        let b = f.eval(&p, &z);
        assert_eq!(a, b);
    }

    /// Centered finite differences: derivative consistency and the
    /// Cauchy–Riemann equations for `eval` and `deriv`.
    #[test]
    fn holomorphy_by_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        let fams = [
            make_unicritical(2).unwrap(),
            make_unicritical(4).unwrap(),
            make_cubic_two_critical(),
        ];
        for f in fams {
            for _ in 0..200 {
                let p = random_param(&f, &mut rng);
                let z = c(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
                let g = |w: Complex<f64>| f.eval_affine(&p, w);
                let dx = (g(z + c(h, 0.0)) - g(z - c(h, 0.0))) / (2.0 * h);
                let dy = (g(z + c(0.0, h)) - g(z - c(0.0, h))) / (2.0 * h);
                // u_x = v_y, u_y = -v_x
                let cr = (dx.re - dy.im).abs() + (dy.re + dx.im).abs();
                assert!(cr < 1e-6, "CR residual {cr}");
                assert!((dx - f.deriv(&p, z)).norm() < 1e-6);
                let d = |w: Complex<f64>| f.deriv(&p, w);
                let ddx = (d(z + c(h, 0.0)) - d(z - c(h, 0.0))) / (2.0 * h);
                let ddy = (d(z + c(0.0, h)) - d(z - c(0.0, h))) / (2.0 * h);
                assert!((ddx.re - ddy.im).abs() + (ddy.re + ddx.im).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn parameter_derivatives_match_differences() {
        let f = make_cubic_two_critical();
        let p = Parameter::two(c(0.4, 0.1), c(-0.3, 0.2));
        let z = c(0.6, -0.5);
        let h = 1e-6;
        let pa = Parameter::two(p.coord(0) + c(h, 0.0), p.coord(1));
        let ma = Parameter::two(p.coord(0) - c(h, 0.0), p.coord(1));
        let num = (f.eval_affine(&pa, z) - f.eval_affine(&ma, z)) / (2.0 * h);
        assert_abs_diff_eq!((num - f.param_deriv(&p, z, 0)).norm(), 0.0, epsilon = 1e-8);
        let num_c = (f.marked_affine(1, &pa) - f.marked_affine(1, &ma)) / (2.0 * h);
        assert_abs_diff_eq!(
            (num_c - f.marked_param_deriv(1, &p, 0)).norm(),
            0.0,
            epsilon = 1e-8
        );
    }

    #[test]
    fn escape_radius_is_escaping() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for f in [
            make_unicritical(2).unwrap(),
            make_unicritical(3).unwrap(),
            make_cubic_two_critical(),
        ] {
            for _ in 0..500 {
                let p = random_param(&f, &mut rng);
                let r = f.escape_radius(&p) * 1.0001;
                let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let z = Complex::from_polar(r, th);
                assert!(f.eval_affine(&p, z).norm() > r);
            }
        }
    }
}
