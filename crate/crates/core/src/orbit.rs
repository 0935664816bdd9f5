//! Critical orbits, escape-rate Green functions and Lyapunov quantities.

use std::io::Write;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::MarkedFamily;
use crate::scalar::Real;
use crate::sphere::{Parameter, SpherePoint};

/// Iteration cap for Green-function evaluation.
pub const GREEN_ITERATION_CAP: usize = 2000;

/// Default additive tolerance for Green-function evaluation.
pub const DEFAULT_GREEN_TOL: f64 = 1e-10;

/// Precomputed critical orbits `f^i_λ(c_j(λ))`, `0 ≤ i < depth`, for a list
/// of parameters.
#[derive(Debug, Clone)]
pub struct OrbitTable<T> {
    family_id: String,
    params: Vec<Parameter<T>>,
    depth: usize,
    num_marked: usize,
    points: Vec<SpherePoint<T>>,
    escaped_at: Vec<Option<usize>>,
}

impl<T: Real> OrbitTable<T> {
    pub fn family_id(&self) -> &str {
        &self.family_id
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_marked(&self) -> usize {
        self.num_marked
    }

    /// Orbit of marked point `j` at parameter index `p`.
    #[inline]
    pub fn orbit(&self, p: usize, j: usize) -> &[SpherePoint<T>] {
        let start = (p * self.num_marked + j) * self.depth;
        &self.points[start..start + self.depth]
    }

    #[inline]
    pub fn point(&self, p: usize, j: usize, i: usize) -> SpherePoint<T> {
        self.orbit(p, j)[i]
    }

    /// First iterate index whose modulus exceeds the escape radius.
    pub fn escaped_at(&self, p: usize, j: usize) -> Option<usize> {
        self.escaped_at[p * self.num_marked + j]
    }

    pub(crate) fn check_index(&self, p: usize) -> Result<()> {
        if p >= self.len() {
            Err(Error::IndexOutOfRange {
                index: p,
                len: self.len(),
            })
        } else {
            Ok(())
        }
    }

    pub(crate) fn check_depth(&self, n: usize) -> Result<()> {
        if n > self.depth {
            Err(Error::DepthExceeded {
                requested: n,
                available: self.depth,
            })
        } else {
            Ok(())
        }
    }

    /// Debug dump, one row per orbit point:
    /// `param_index,j,i,re,im,escaped`. Points at infinity print `inf`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "param_index,j,i,re,im,escaped")?;
        for p in 0..self.len() {
            for j in 0..self.num_marked {
                let esc = self.escaped_at(p, j);
                for (i, z) in self.orbit(p, j).iter().enumerate() {
                    let escaped = u8::from(esc.is_some_and(|e| i >= e));
                    match z {
                        SpherePoint::Finite(z) => {
                            writeln!(w, "{p},{j},{i},{},{},{escaped}", z.re, z.im)?
                        }
                        SpherePoint::Infinity => writeln!(w, "{p},{j},{i},inf,inf,{escaped}")?,
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds the orbit table of every marked point over `params` to depth `n`.
/// Rows are computed in parallel; each row depends only on its parameter.
pub fn orbit_table<F: MarkedFamily, T: Real>(
    fam: &F,
    params: &[Parameter<T>],
    n: usize,
) -> Result<OrbitTable<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("orbit depth must be >= 1".into()));
    }
    if params.is_empty() {
        return Err(Error::InvalidArgument("parameter list is empty".into()));
    }
    if let Some(p) = params.iter().find(|p| p.dim() != fam.dim_lambda()) {
        return Err(Error::DimensionMismatch {
            left: p.dim(),
            right: fam.dim_lambda(),
        });
    }
    let k = fam.num_marked();
    type Row<T> = (Vec<SpherePoint<T>>, Vec<Option<usize>>);
    let rows: Vec<Row<T>> = params
        .par_iter()
        .map(|p| {
            let radius = fam.escape_radius(p);
            let mut pts = Vec::with_capacity(k * n);
            let mut esc = Vec::with_capacity(k);
            for j in 0..k {
                let mut z = fam.marked_point(j, p);
                let mut escaped = None;
                for i in 0..n {
                    if escaped.is_none() && z.modulus() > radius {
                        escaped = Some(i);
                    }
                    pts.push(z);
                    if i + 1 < n {
                        z = fam.eval(p, &z);
                    }
                }
                esc.push(escaped);
            }
            (pts, esc)
        })
        .collect();
    let mut points = Vec::with_capacity(params.len() * k * n);
    let mut escaped_at = Vec::with_capacity(params.len() * k);
    for (pts, esc) in rows {
        points.extend(pts);
        escaped_at.extend(esc);
    }
    Ok(OrbitTable {
        family_id: fam.id(),
        params: params.to_vec(),
        depth: n,
        num_marked: k,
        points,
        escaped_at,
    })
}

/// Result of a Green-function evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenValue<T> {
    pub value: T,
    /// Set when the iteration cap was hit with the orbit still close to the
    /// escape radius, so the returned `0` may be an underestimate.
    pub low_confidence: bool,
    /// Index of the first iterate beyond the escape radius.
    pub escape_time: Option<usize>,
}

/// Fiberwise escape rate `G_λ(z) = lim d^{-n} log⁺|f^n_λ(z)|`.
///
/// Once the orbit leaves the escape radius at step `m`, the value is
/// `d^{-m} log|z_m|` plus the telescoping corrections
/// `d^{-(i+1)} log|f(z_i)/z_i^d|`, summed until they drop below `tol`.
pub fn green_function<F: MarkedFamily, T: Real>(
    fam: &F,
    p: &Parameter<T>,
    z: &SpherePoint<T>,
    tol: T,
) -> Result<GreenValue<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be > 0, got {tol}"
        )));
    }
    let z = match z {
        SpherePoint::Infinity => {
            return Ok(GreenValue {
                value: T::infinity(),
                low_confidence: false,
                escape_time: Some(0),
            })
        }
        SpherePoint::Finite(z) => *z,
    };
    Ok(green_affine(fam, p, z, tol, GREEN_ITERATION_CAP))
}

pub(crate) fn green_affine<F: MarkedFamily, T: Real>(
    fam: &F,
    p: &Parameter<T>,
    mut z: Complex<T>,
    tol: T,
    cap: usize,
) -> GreenValue<T> {
    let radius = fam.escape_radius(p);
    let d = T::from_usize_lossy(fam.degree() as usize);
    let inv_d = d.recip();
    let mut scale = T::one();
    for m in 0..=cap {
        let r = z.norm();
        if r > radius {
            return GreenValue {
                value: refine_escaped(fam, p, z, scale, d, tol),
                low_confidence: false,
                escape_time: Some(m),
            };
        }
        if m == cap {
            break;
        }
        z = fam.eval_affine(p, z);
        scale *= inv_d;
    }
    GreenValue {
        value: T::zero(),
        low_confidence: z.norm() >= radius * T::lit(0.5),
        escape_time: None,
    }
}

fn refine_escaped<F: MarkedFamily, T: Real>(
    fam: &F,
    p: &Parameter<T>,
    mut z: Complex<T>,
    mut scale: T,
    d: T,
    tol: T,
) -> T {
    let ln_cut = T::max_value().ln() / (d * T::lit(2.0));
    let mut value = scale * z.norm().ln();
    // Bounded by the doubly exponential growth of |z|; 64 is never reached.
    for _ in 0..64 {
        let ln_r = z.norm().ln();
        if ln_r > ln_cut || scale == T::zero() {
            break;
        }
        let next = fam.eval_affine(p, z);
        let correction = next.norm().ln() - d * ln_r;
        scale /= d;
        let term = scale * correction;
        value += term;
        z = next;
        if term.abs() * T::lit(2.0) < tol * T::lit(1e-3) {
            break;
        }
    }
    value
}

/// Value of the Lyapunov potential together with a confidence flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue<T> {
    pub value: T,
    pub low_confidence: bool,
}

/// Lyapunov exponent of `f_λ` for its maximal-entropy measure, through the
/// polynomial formula `L(λ) = log d + Σ_j m_j G_λ(c_j(λ))`.
pub fn lyapunov_l<F: MarkedFamily, T: Real>(
    fam: &F,
    p: &Parameter<T>,
    tol: T,
) -> Result<LyapunovValue<T>> {
    let mut value = T::from_usize_lossy(fam.degree() as usize).ln();
    let mut low_confidence = false;
    for j in 0..fam.num_marked() {
        let g = green_function(fam, p, &fam.marked_point(j, p), tol)?;
        value += T::from_usize_lossy(fam.multiplicity(j) as usize) * g.value;
        low_confidence |= g.low_confidence;
    }
    Ok(LyapunovValue {
        value,
        low_confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExponentStatus {
    Finite,
    /// The orbit landed exactly on a critical point (value `−∞`).
    Degenerate,
    /// The orbit reached `∞` (value `+∞`).
    Escaped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentEstimate<T> {
    pub value: T,
    pub status: ExponentStatus,
}

/// Finite-`n` critical Lyapunov exponent `(1/n) log |(f^n_λ)'(f_λ(c_j))|`,
/// accumulated as a running sum of `log|f'|` along the orbit.
pub fn critical_lyapunov_exponent<F: MarkedFamily, T: Real>(
    fam: &F,
    p: &Parameter<T>,
    j: usize,
    n: usize,
) -> Result<ExponentEstimate<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if j >= fam.num_marked() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: fam.num_marked(),
        });
    }
    let mut z = fam.eval(p, &fam.marked_point(j, p));
    let mut sum = T::zero();
    for _ in 0..n {
        let w = match z {
            SpherePoint::Infinity => {
                return Ok(ExponentEstimate {
                    value: T::infinity(),
                    status: ExponentStatus::Escaped,
                })
            }
            SpherePoint::Finite(w) => w,
        };
        let df = fam.deriv(p, w).norm();
        if df == T::zero() {
            return Ok(ExponentEstimate {
                value: T::neg_infinity(),
                status: ExponentStatus::Degenerate,
            });
        }
        if !df.is_finite() {
            return Ok(ExponentEstimate {
                value: T::infinity(),
                status: ExponentStatus::Escaped,
            });
        }
        sum += df.ln();
        z = fam.eval(p, &z);
    }
    Ok(ExponentEstimate {
        value: sum / T::from_usize_lossy(n),
        status: ExponentStatus::Finite,
    })
}

/// Monte Carlo estimate of `∫ log|f'_λ| dμ_λ` along a random backward orbit
/// of `z ↦ z^d + λ`. Independent of the Green-function route; used to
/// cross-check [`lyapunov_l`].
pub fn lyapunov_backward_mc(degree: u32, lambda: Complex<f64>, samples: usize, seed: u64) -> f64 {
    let d = degree as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn_in = 1000;
    let mut z = Complex::new(1.3, 0.7);
    let mut acc = 0.0;
    for step in 0..burn_in + samples {
        let w = z - lambda;
        let k = rng.gen_range(0..degree) as f64;
        let root = Complex::from_polar(
            w.norm().powf(1.0 / d),
            (w.arg() + std::f64::consts::TAU * k) / d,
        );
        z = root;
        if step >= burn_in {
            acc += d.ln() + (d - 1.0) * z.norm().ln();
        }
    }
    acc / samples as f64
}
