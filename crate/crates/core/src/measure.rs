//! The bifurcation measure `μ_bif = ddᶜL` on a one-dimensional parameter
//! grid, with round-ball and Bowen-ball mass queries.
//!
//! Cell masses come from a discrete Laplacian of the Lyapunov potential,
//! clamped at zero (ddᶜL is a positive measure, so negative values are
//! discretization noise) and normalized to total mass one. Stencils are
//! applied to the excess `L − log d = Σ m_j G(c_j)`, which is the same
//! function up to a constant but keeps more significant digits near `∂M`.

use std::io::{BufRead, Write};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{Family, MarkedFamily};
use crate::orbit::{green_affine, orbit_table, OrbitTable, GREEN_ITERATION_CAP};
use crate::scalar::Real;
use crate::sphere::{chordal_dist, param_dist_unchecked, Parameter, Rect, SpherePoint};

/// Smallest accepted grid resolution per side.
pub const MIN_RESOLUTION: usize = 64;

/// Discrete Laplacian used to turn the potential into cell masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    FivePoint,
    /// Isotropic nine-point stencil; needs square cells.
    #[default]
    NinePoint,
}

/// A rectangle divided into `nx × ny` cells, indexed row-major with the
/// real part varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub region: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(region: Rect, nx: usize, ny: usize) -> Result<Self> {
        region.validate()?;
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(
                "grid resolution must be positive".into(),
            ));
        }
        Ok(GridSpec { region, nx, ny })
    }

    pub fn hx(&self) -> f64 {
        self.region.width() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.region.height() / self.ny as f64
    }

    /// Larger of the two cell side lengths.
    pub fn cell_size(&self) -> f64 {
        self.hx().max(self.hy())
    }

    pub fn is_square(&self) -> bool {
        (self.hx() - self.hy()).abs() <= 1e-9 * self.cell_size()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.nx + col
    }

    #[inline]
    pub fn col_row(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    /// Centre of cell `(col, row)`; also accepts the ghost ring at `-1` and
    /// `nx`/`ny`.
    #[inline]
    pub fn center(&self, col: isize, row: isize) -> Complex<f64> {
        Complex::new(
            self.region.re_min + (col as f64 + 0.5) * self.hx(),
            self.region.im_min + (row as f64 + 0.5) * self.hy(),
        )
    }

    pub fn centers(&self) -> Vec<Complex<f64>> {
        (0..self.len())
            .map(|k| {
                let (c, r) = self.col_row(k);
                self.center(c as isize, r as isize)
            })
            .collect()
    }

    /// Cell containing `c`, if inside the region.
    pub fn cell_of(&self, c: Complex<f64>) -> Option<(usize, usize)> {
        if !self.region.contains(c) {
            return None;
        }
        let col = (((c.re - self.region.re_min) / self.hx()) as usize).min(self.nx - 1);
        let row = (((c.im - self.region.im_min) / self.hy()) as usize).min(self.ny - 1);
        Some((col, row))
    }

    /// Grid parameters in cell order, for building orbit tables.
    pub fn parameters<T: Real>(&self) -> Vec<Parameter<T>> {
        self.centers()
            .into_iter()
            .map(|c| Parameter::from_re_im(T::lit(c.re), T::lit(c.im)))
            .collect()
    }
}

/// The Lyapunov potential `L` sampled at cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField<T> {
    pub spec: GridSpec,
    pub values: Vec<T>,
}

/// Grid realization of `μ_bif`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureGrid<T> {
    pub family_id: String,
    pub spec: GridSpec,
    pub stencil: Stencil,
    pub tol: T,
    pub potential: PotentialField<T>,
    /// Normalized cell masses, summing to `total_mass`.
    pub cell_mass: Vec<T>,
    pub total_mass: T,
    /// Clamped positive mass before normalization, `Σ max(ΔL, 0)·h²/(2π)`.
    pub raw_mass: T,
    /// Negative Laplacian mass removed by clamping, relative to `raw_mass`.
    pub clamped_fraction: T,
    /// Mean normalized magnitude of the clamped negative cells.
    pub noise_level: T,
    /// A cell belongs to the numerical support when its mass exceeds this.
    pub support_threshold: T,
    /// Cells whose Green value came back low-confidence.
    pub quality_flags: Vec<bool>,
    pub warnings: Vec<String>,
}

/// Multiplier applied to the noise level to get the support threshold.
pub const SUPPORT_NOISE_FACTOR: f64 = 10.0;

fn excess_potential<F: MarkedFamily, T: Real>(fam: &F, c: Complex<T>, tol: T) -> (T, bool) {
    let p = Parameter::one(c);
    let mut sum = T::zero();
    let mut low = false;
    for j in 0..fam.num_marked() {
        let z = fam.marked_affine(j, &p);
        let g = green_affine(fam, &p, z, tol, GREEN_ITERATION_CAP);
        sum += T::from_usize_lossy(fam.multiplicity(j) as usize) * g.value;
        low |= g.low_confidence;
    }
    (sum, low)
}

/// Stencil sum `ΔL·hx·hy` at the centre of a padded array of width `w`.
#[inline]
fn stencil_at<T: Real>(v: &[T], w: usize, k: usize, stencil: Stencil, aspect: T) -> T {
    let c = v[k];
    let (e, west, n, s) = (v[k + 1], v[k - 1], v[k + w], v[k - w]);
    match stencil {
        Stencil::FivePoint => (e + west - c - c) * aspect.recip() + (n + s - c - c) * aspect,
        Stencil::NinePoint => {
            let diag = v[k + w + 1] + v[k + w - 1] + v[k - w + 1] + v[k - w - 1];
            (T::lit(4.0) * (e + west + n + s) + diag - T::lit(20.0) * c) / T::lit(6.0)
        }
    }
}

/// Clamped raw masses `max(stencil, 0)/(2π)` and negative parts for the
/// interior of a padded `(nx+2) × (ny+2)` array.
fn raw_masses<T: Real>(
    padded: &[T],
    nx: usize,
    ny: usize,
    stencil: Stencil,
    aspect: T,
) -> (Vec<T>, Vec<T>) {
    let w = nx + 2;
    let two_pi = T::TAU();
    let mut pos = Vec::with_capacity(nx * ny);
    let mut neg = Vec::with_capacity(nx * ny);
    for row in 0..ny {
        for col in 0..nx {
            let k = (row + 1) * w + col + 1;
            let v = stencil_at(padded, w, k, stencil, aspect) / two_pi;
            pos.push(v.max(T::zero()));
            neg.push((-v).max(T::zero()));
        }
    }
    (pos, neg)
}

/// Builds the measure grid of a one-parameter polynomial family.
pub fn build_measure_grid<F: MarkedFamily, T: Real>(
    fam: &F,
    spec: GridSpec,
    tol: T,
    stencil: Stencil,
) -> Result<MeasureGrid<T>> {
    if fam.dim_lambda() != 1 {
        return Err(Error::UnsupportedFamily);
    }
    if spec.nx < MIN_RESOLUTION || spec.ny < MIN_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "resolution {}x{} below the minimum {MIN_RESOLUTION} per side",
            spec.nx, spec.ny
        )));
    }
    if stencil == Stencil::NinePoint && !spec.is_square() {
        return Err(Error::InvalidRegion(
            "nine-point stencil needs square cells (width/nx = height/ny)".into(),
        ));
    }
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be > 0, got {tol}"
        )));
    }
    let (nx, ny) = (spec.nx, spec.ny);
    let w = nx + 2;
    // Evaluate on the grid plus a one-cell ghost ring.
    let padded: Vec<(T, bool)> = (0..(nx + 2) * (ny + 2))
        .into_par_iter()
        .map(|k| {
            let c = spec.center((k % w) as isize - 1, (k / w) as isize - 1);
            excess_potential(fam, Complex::new(T::lit(c.re), T::lit(c.im)), tol)
        })
        .collect();
    let excess: Vec<T> = padded.iter().map(|x| x.0).collect();
    let aspect = T::lit(spec.hx() / spec.hy());
    let (pos, neg) = raw_masses(&excess, nx, ny, stencil, aspect);

    let log_d = T::from_usize_lossy(fam.degree() as usize).ln();
    let mut values = Vec::with_capacity(spec.len());
    let mut quality_flags = Vec::with_capacity(spec.len());
    for row in 0..ny {
        for col in 0..nx {
            let (g, low) = padded[(row + 1) * w + col + 1];
            values.push(log_d + g);
            quality_flags.push(low);
        }
    }

    let raw_mass: T = pos.iter().copied().sum();
    if !(raw_mass > T::zero()) {
        return Err(Error::ZeroMass);
    }
    let neg_mass: T = neg.iter().copied().sum();
    let cell_mass: Vec<T> = pos.iter().map(|&m| m / raw_mass).collect();
    let total_mass: T = cell_mass.iter().copied().sum();
    // Mean rather than median: the clamped values are bimodal, a floor of
    // rounding noise in harmonic regions plus stencil oscillation next to
    // the boundary, and only the latter sets the scale of positive noise.
    let negative_cells = neg.iter().filter(|&&m| m > T::zero()).count();
    let noise_level = if negative_cells == 0 {
        T::zero()
    } else {
        neg_mass / raw_mass / T::from_usize_lossy(negative_cells)
    };
    let clamped_fraction = neg_mass / raw_mass;
    let mut warnings = Vec::new();
    let flagged = quality_flags.iter().filter(|&&f| f).count();
    if flagged * 100 > spec.len() {
        warnings.push(format!(
            "{flagged} of {} cells have low-confidence Green values",
            spec.len()
        ));
    }
    if clamped_fraction > T::lit(0.01) {
        warnings.push(format!(
            "clamped negative mass fraction {clamped_fraction} exceeds 1%"
        ));
    }
    Ok(MeasureGrid {
        family_id: fam.id(),
        spec,
        stencil,
        tol,
        potential: PotentialField { spec, values },
        cell_mass,
        total_mass,
        raw_mass,
        clamped_fraction,
        noise_level,
        support_threshold: noise_level * T::lit(SUPPORT_NOISE_FACTOR),
        quality_flags,
        warnings,
    })
}

impl<T: Real> MeasureGrid<T> {
    pub fn family(&self) -> Result<Family> {
        self.family_id.parse()
    }

    fn check_family<F: MarkedFamily>(&self, fam: &F) -> Result<()> {
        if fam.id() != self.family_id {
            return Err(Error::InvalidArgument(format!(
                "grid was built for {}, got {}",
                self.family_id,
                fam.id()
            )));
        }
        Ok(())
    }

    /// Orbit table over the cell centres, in cell order.
    pub fn orbit_table<F: MarkedFamily>(&self, fam: &F, depth: usize) -> Result<OrbitTable<T>> {
        self.check_family(fam)?;
        orbit_table(fam, &self.spec.parameters(), depth)
    }

    /// Mass of a set of cells given as a mask.
    pub fn mask_mass(&self, mask: &[bool]) -> T {
        self.cell_mass
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .sum()
    }

    /// Cells whose mass exceeds the support threshold.
    pub fn support_mask(&self) -> Vec<bool> {
        self.cell_mass
            .iter()
            .map(|&m| m > self.support_threshold)
            .collect()
    }
}

/// `μ(B(center, r))`, summing cells whose centres lie within `r`.
pub fn ball_mass<T: Real>(grid: &MeasureGrid<T>, center: &Parameter<T>, r: T) -> Result<T> {
    let guard = 2.0 * grid.spec.cell_size();
    if !(r.as_f64() >= guard) {
        return Err(Error::BelowResolution {
            radius: r.as_f64(),
            guard,
        });
    }
    let c = center.coord(0);
    let (cx, cy, rr) = (c.re.as_f64(), c.im.as_f64(), r.as_f64());
    let spec = &grid.spec;
    let col_lo = ((cx - rr - spec.region.re_min) / spec.hx())
        .floor()
        .max(0.0) as usize;
    let col_hi =
        (((cx + rr - spec.region.re_min) / spec.hx()).ceil().max(0.0) as usize).min(spec.nx);
    let row_lo = ((cy - rr - spec.region.im_min) / spec.hy())
        .floor()
        .max(0.0) as usize;
    let row_hi =
        (((cy + rr - spec.region.im_min) / spec.hy()).ceil().max(0.0) as usize).min(spec.ny);
    let mut sum = T::zero();
    for row in row_lo..row_hi {
        for col in col_lo..col_hi {
            let z = spec.center(col as isize, row as isize);
            if (z.re - cx).hypot(z.im - cy) <= rr {
                sum += grid.cell_mass[spec.index(col, row)];
            }
        }
    }
    Ok(sum)
}

fn check_bowen_epsilon(eps: f64, cell: f64) -> Result<()> {
    let guard = 4.0 * cell;
    if !(eps >= guard) {
        return Err(Error::BelowResolution { radius: eps, guard });
    }
    Ok(())
}

/// Orbit rows of `λ` as the table would store them.
fn orbit_of<T: Real>(fam: &Family, lambda: &Parameter<T>, n: usize) -> Vec<Vec<SpherePoint<T>>> {
    (0..fam.num_marked())
        .map(|j| {
            let mut z = fam.marked_point(j, lambda);
            (0..n)
                .map(|_| {
                    let cur = z;
                    z = fam.eval(lambda, &z);
                    cur
                })
                .collect()
        })
        .collect()
}

/// `μ(B_{d̃_n}(λ, ε))` with Bowen-ball membership decided at cell centres.
///
/// `table` must be the orbit table over this grid's cells (see
/// [`MeasureGrid::orbit_table`]). Once the ball shrinks below a cell this
/// degenerates to the mass of a single cell; see
/// [`bowen_profile_refined`] for the resolution-independent variant.
pub fn bowen_ball_mass<T: Real>(
    grid: &MeasureGrid<T>,
    table: &OrbitTable<T>,
    lambda: &Parameter<T>,
    n: usize,
    eps: T,
) -> Result<T> {
    check_bowen_epsilon(eps.as_f64(), grid.spec.cell_size())?;
    if table.len() != grid.spec.len() {
        return Err(Error::DimensionMismatch {
            left: table.len(),
            right: grid.spec.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    table.check_depth(n)?;
    let fam = grid.family()?;
    let orbit = orbit_of(&fam, lambda, n);
    let mut sum = T::zero();
    for (q, &m) in grid.cell_mass.iter().enumerate() {
        if m == T::zero() || param_dist_unchecked(&table.params()[q], lambda) >= eps {
            continue;
        }
        let inside = orbit.iter().enumerate().all(|(j, row)| {
            let other = table.orbit(q, j);
            (0..n).all(|i| chordal_dist(&other[i], &row[i]) < eps)
        });
        if inside {
            sum += m;
        }
    }
    Ok(sum)
}

/// Cells per side of the zoom windows used by the refined estimators.
pub const DEFAULT_WINDOW_CELLS: usize = 48;

/// First depth at which `q` leaves the `d̃`-ball of radius `eps` around the
/// orbit `center` (`0` if the parameters themselves are `eps` apart,
/// `n_max` if it never leaves).
fn exit_time<T: Real>(
    fam: &Family,
    q: &Parameter<T>,
    lambda: &Parameter<T>,
    center: &[Vec<SpherePoint<T>>],
    eps: T,
    n_max: usize,
) -> usize {
    if param_dist_unchecked(q, lambda) >= eps {
        return 0;
    }
    let mut exit = n_max;
    for (j, row) in center.iter().enumerate() {
        let mut z = fam.marked_point(j, q);
        for (i, c) in row.iter().enumerate().take(exit) {
            if chordal_dist(&z, c) >= eps {
                exit = i;
                break;
            }
            z = fam.eval(q, &z);
        }
    }
    exit
}

/// Masses on a square lattice `origin + (a, b)·s`, `a ∈ [a0, a1)`,
/// `b ∈ [b0, b1)`, normalized by the grid's raw mass.
fn lattice_masses<T: Real>(
    grid: &MeasureGrid<T>,
    fam: &Family,
    origin: Complex<f64>,
    s: f64,
    (a0, a1): (i64, i64),
    (b0, b1): (i64, i64),
) -> Vec<(Complex<f64>, T)> {
    let (nx, ny) = ((a1 - a0) as usize, (b1 - b0) as usize);
    let w = nx + 2;
    let point = |k: usize| {
        let a = a0 - 1 + (k % w) as i64;
        let b = b0 - 1 + (k / w) as i64;
        origin + Complex::new(a as f64 * s, b as f64 * s)
    };
    let excess: Vec<T> = (0..(nx + 2) * (ny + 2))
        .into_par_iter()
        .map(|k| {
            let c = point(k);
            excess_potential(fam, Complex::new(T::lit(c.re), T::lit(c.im)), grid.tol).0
        })
        .collect();
    let (pos, _) = raw_masses(&excess, nx, ny, grid.stencil, T::one());
    (0..nx * ny)
        .map(|k| {
            let (col, row) = (k % nx, k / nx);
            (point((row + 1) * w + col + 1), pos[k] / grid.raw_mass)
        })
        .collect()
}

/// `μ(B_{d̃_n}(λ, ε))` for `n = 1..=n_max`, each evaluated on its own zoom
/// window of `window` cells per side.
///
/// The window for depth `n + 1` is the bounding box of the depth-`n` ball,
/// padded by 1.5 cells. Lattices are anchored at `λ` so the centre is
/// always a member. Masses use the same stencil and normalization as the
/// grid, so they agree with [`bowen_ball_mass`] while the ball spans many
/// grid cells and keep resolving it after it shrinks below one.
pub fn bowen_profile_refined<T: Real>(
    grid: &MeasureGrid<T>,
    lambda: &Parameter<T>,
    n_max: usize,
    eps: T,
    window: usize,
) -> Result<Vec<T>> {
    if n_max == 0 || window < 4 {
        return Err(Error::InvalidArgument(
            "need n_max >= 1 and window >= 4".into(),
        ));
    }
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be > 0, got {eps}"
        )));
    }
    if grid.stencil == Stencil::FivePoint && !grid.spec.is_square() {
        return Err(Error::InvalidRegion(
            "refined windows need square cells".into(),
        ));
    }
    let fam = grid.family()?;
    let center_orbit = orbit_of(&fam, lambda, n_max);
    let origin = Complex::new(lambda.coord(0).re.as_f64(), lambda.coord(0).im.as_f64());
    let e = eps.as_f64();
    let (mut x0, mut x1, mut y0, mut y1) =
        (origin.re - e, origin.re + e, origin.im - e, origin.im + e);
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let s = (x1 - x0).max(y1 - y0) / window as f64;
        let span = |lo: f64, hi: f64, o: f64| {
            (
                ((lo - o) / s).floor() as i64,
                ((hi - o) / s).ceil() as i64 + 1,
            )
        };
        let cells = lattice_masses(
            grid,
            &fam,
            origin,
            s,
            span(x0, x1, origin.re),
            span(y0, y1, origin.im),
        );
        let exits: Vec<usize> = cells
            .par_iter()
            .map(|(c, _)| {
                let q = Parameter::from_re_im(T::lit(c.re), T::lit(c.im));
                exit_time(&fam, &q, lambda, &center_orbit, eps, n_max)
            })
            .collect();
        let mut mass = T::zero();
        let (mut bx0, mut bx1, mut by0, mut by1) = (origin.re, origin.re, origin.im, origin.im);
        for ((c, m), &ex) in cells.iter().zip(&exits) {
            if ex >= n {
                mass += *m;
                bx0 = bx0.min(c.re);
                bx1 = bx1.max(c.re);
                by0 = by0.min(c.im);
                by1 = by1.max(c.im);
            }
        }
        out.push(mass);
        let pad = 1.5 * s;
        (x0, x1, y0, y1) = (bx0 - pad, bx1 + pad, by0 - pad, by1 + pad);
    }
    Ok(out)
}

/// Refinement depth for [`sample_measure`]: each level halves the scale, so
/// unit-size cells reach the resolution limit of `f64` parameters. Shallower
/// samples sit far enough outside the locus that critical orbits escape
/// within a few dozen iterations.
pub const DEFAULT_SAMPLE_LEVELS: usize = 40;

/// Systematic sample of cell indices from the cell-mass CDF: one uniform
/// offset `u`, then points `(k + u)/count`.
pub fn systematic_cells<T: Real>(grid: &MeasureGrid<T>, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let mut cdf = Vec::with_capacity(grid.cell_mass.len());
    let mut acc = 0.0;
    for &m in &grid.cell_mass {
        acc += m.as_f64();
        cdf.push(acc);
    }
    let total = acc;
    (0..count)
        .map(|k| {
            let target = (k as f64 + u) / count as f64 * total;
            cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
        })
        .collect()
}

/// Draws `count` parameters distributed like `μ_bif`.
///
/// Cells are chosen by systematic sampling of the grid CDF; each draw is
/// then refined over `levels` levels. At each level a window of ± the
/// current cell size around the current point is split into 4 × 4 children
/// and one is chosen with probability proportional to its clamped
/// Laplacian mass. The window reaches into neighbouring cells because the
/// coarse mass often sits on a cell next to the true boundary.
pub fn sample_measure<T: Real>(
    grid: &MeasureGrid<T>,
    count: usize,
    seed: u64,
    levels: usize,
) -> Result<Vec<Parameter<T>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if !grid.spec.is_square() {
        return Err(Error::InvalidRegion(
            "refined sampling needs square cells".into(),
        ));
    }
    let fam = grid.family()?;
    let cells = systematic_cells(grid, count, seed);
    const CHILDREN: usize = 4;
    let points = cells
        .par_iter()
        .enumerate()
        .map(|(k, &cell)| {
            let (col, row) = grid.spec.col_row(cell);
            let mut c = grid.spec.center(col as isize, row as isize);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let mut s = grid.spec.cell_size();
            for _ in 0..levels {
                let child = 2.0 * s / CHILDREN as f64;
                let origin = c - Complex::new(1.5 * child, 1.5 * child);
                let masses = lattice_masses(grid, &fam, origin, child, (0, 4), (0, 4));
                let total: f64 = masses.iter().map(|(_, m)| m.as_f64()).sum();
                if !(total > 0.0) {
                    break;
                }
                let mut target = rng.gen::<f64>() * total;
                let mut pick = masses.len() - 1;
                for (i, (_, m)) in masses.iter().enumerate() {
                    target -= m.as_f64();
                    if target < 0.0 {
                        pick = i;
                        break;
                    }
                }
                c = masses[pick].0;
                s = child;
            }
            Parameter::from_re_im(T::lit(c.re), T::lit(c.im))
        })
        .collect();
    Ok(points)
}

/// Trims `k_mask` by discarding the lightest cells (ties by index) while
/// the discarded total stays below `kappa`.
pub fn kappa_trim<T: Real>(grid: &MeasureGrid<T>, k_mask: &[bool], kappa: T) -> Result<Vec<bool>> {
    if k_mask.len() != grid.cell_mass.len() {
        return Err(Error::DimensionMismatch {
            left: k_mask.len(),
            right: grid.cell_mass.len(),
        });
    }
    let mass = grid.mask_mass(k_mask);
    if !(kappa > T::zero() && kappa < mass) {
        return Err(Error::KappaOutOfRange {
            kappa: kappa.as_f64(),
            mass: mass.as_f64(),
        });
    }
    let mut order: Vec<usize> = (0..k_mask.len()).filter(|&i| k_mask[i]).collect();
    order.sort_by(|&a, &b| {
        grid.cell_mass[a]
            .partial_cmp(&grid.cell_mass[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut mask = k_mask.to_vec();
    let mut discarded = T::zero();
    for i in order {
        let next = discarded + grid.cell_mass[i];
        if next >= kappa {
            break;
        }
        discarded = next;
        mask[i] = false;
    }
    Ok(mask)
}

/// Escape-time membership in the connectedness locus at each cell centre:
/// the marked orbits stay within the escape radius for `cap` iterations.
pub fn escape_time_membership<F: MarkedFamily>(fam: &F, spec: &GridSpec, cap: usize) -> Vec<bool> {
    spec.parameters::<f64>()
        .par_iter()
        .map(|p| {
            let r = fam.escape_radius(p);
            (0..fam.num_marked()).all(|j| {
                let mut z = fam.marked_affine(j, p);
                for _ in 0..cap {
                    if z.norm() > r {
                        return false;
                    }
                    z = fam.eval_affine(p, z);
                }
                true
            })
        })
        .collect()
}

/// Cells whose 3 × 3 neighbourhood contains both members and non-members.
pub fn boundary_mask(spec: &GridSpec, membership: &[bool]) -> Vec<bool> {
    (0..spec.len())
        .map(|k| {
            let (col, row) = spec.col_row(k);
            let mut seen = [false; 2];
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (c, r) = (col as i64 + dc, row as i64 + dr);
                    if c >= 0 && r >= 0 && (c as usize) < spec.nx && (r as usize) < spec.ny {
                        seen[membership[spec.index(c as usize, r as usize)] as usize] = true;
                    }
                }
            }
            seen[0] && seen[1]
        })
        .collect()
}

/// Distance-estimator reading of the escape-time picture: exterior cell
/// centres whose estimated distance to the connectedness locus,
/// `2 |z_n| log|z_n| / |∂_λ z_n|` at the first escaping marked orbit, is
/// below the cell diagonal. Catches filaments that fall between centres.
pub fn distance_estimate_mask<F: MarkedFamily>(fam: &F, spec: &GridSpec, cap: usize) -> Vec<bool> {
    let reach = spec.hx().hypot(spec.hy());
    spec.parameters::<f64>()
        .par_iter()
        .map(|p| {
            (0..fam.num_marked()).any(|j| {
                let mut z = fam.marked_affine(j, p);
                let mut dz = fam.marked_param_deriv(j, p, 0);
                for _ in 0..cap {
                    if z.norm() > 1e10 {
                        let r = z.norm();
                        return 2.0 * r * r.ln() / dz.norm() < reach;
                    }
                    dz = fam.deriv(p, z) * dz + fam.param_deriv(p, z, 0);
                    z = fam.eval_affine(p, z);
                }
                false
            })
        })
        .collect()
}

/// Escape-time boundary of the connectedness locus: member cells with a
/// non-member neighbour, plus exterior cells the distance estimator puts
/// within one cell diagonal.
pub fn escape_time_boundary<F: MarkedFamily>(fam: &F, spec: &GridSpec, cap: usize) -> Vec<bool> {
    let member = escape_time_membership(fam, spec, cap);
    let near = distance_estimate_mask(fam, spec, cap);
    boundary_mask(spec, &member)
        .into_iter()
        .zip(near)
        .map(|(a, b)| a || b)
        .collect()
}

/// Dilates a cell mask by `radius` cells (Chebyshev distance).
pub fn dilate(spec: &GridSpec, mask: &[bool], radius: usize) -> Vec<bool> {
    let r = radius as i64;
    (0..spec.len())
        .map(|k| {
            let (col, row) = spec.col_row(k);
            (-r..=r).any(|dr| {
                (-r..=r).any(|dc| {
                    let (c, rw) = (col as i64 + dc, row as i64 + dr);
                    c >= 0
                        && rw >= 0
                        && (c as usize) < spec.nx
                        && (rw as usize) < spec.ny
                        && mask[spec.index(c as usize, rw as usize)]
                })
            })
        })
        .collect()
}

/// Fraction of `support` cells lying within `radius` cells of `reference`.
pub fn support_overlap(
    spec: &GridSpec,
    support: &[bool],
    reference: &[bool],
    radius: usize,
) -> f64 {
    let near = dilate(spec, reference, radius);
    let total = support.iter().filter(|&&s| s).count();
    if total == 0 {
        return 0.0;
    }
    let hits = support.iter().zip(&near).filter(|(&s, &n)| s && n).count();
    hits as f64 / total as f64
}

/// Metadata that accompanies the cell CSV and allows a bit-exact reload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub family: String,
    pub region: Rect,
    pub nx: usize,
    pub ny: usize,
    pub stencil: Stencil,
    pub tol: f64,
    pub raw_mass: f64,
    pub total_mass: f64,
    pub clamped_fraction: f64,
    pub noise_level: f64,
    pub support_threshold: f64,
    pub warnings: Vec<String>,
}

impl MeasureGrid<f64> {
    pub fn header(&self) -> GridHeader {
        GridHeader {
            family: self.family_id.clone(),
            region: self.spec.region,
            nx: self.spec.nx,
            ny: self.spec.ny,
            stencil: self.stencil,
            tol: self.tol,
            raw_mass: self.raw_mass,
            total_mass: self.total_mass,
            clamped_fraction: self.clamped_fraction,
            noise_level: self.noise_level,
            support_threshold: self.support_threshold,
            warnings: self.warnings.clone(),
        }
    }

    /// Writes `i,j,re,im,potential,mass,quality_flag`, one row per cell
    /// (`i` = column, `j` = row). Each `preamble` line is emitted first as a
    /// `#` comment.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: &[String]) -> std::io::Result<()> {
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "i,j,re,im,potential,mass,quality_flag")?;
        for k in 0..self.spec.len() {
            let (i, j) = self.spec.col_row(k);
            let c = self.spec.center(i as isize, j as isize);
            writeln!(
                w,
                "{i},{j},{},{},{},{},{}",
                c.re,
                c.im,
                self.potential.values[k],
                self.cell_mass[k],
                u8::from(self.quality_flags[k])
            )?;
        }
        Ok(())
    }

    /// Reloads a grid written by [`Self::write_csv`] and [`Self::header`].
    pub fn read_csv<R: BufRead>(header: &GridHeader, reader: R) -> Result<Self> {
        let spec = GridSpec::new(header.region, header.nx, header.ny)?;
        let bad = |msg: String| Error::InvalidArgument(format!("measure CSV: {msg}"));
        let mut values = vec![0.0; spec.len()];
        let mut cell_mass = vec![0.0; spec.len()];
        let mut quality_flags = vec![false; spec.len()];
        let mut seen = 0;
        for line in reader.lines() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.starts_with('#') || line.starts_with("i,") || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
            let idx = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
            let (i, j) = (idx(f[0])?, idx(f[1])?);
            if i >= spec.nx || j >= spec.ny {
                return Err(bad(format!("cell ({i}, {j}) outside the grid")));
            }
            let k = spec.index(i, j);
            values[k] = num(f[4])?;
            cell_mass[k] = num(f[5])?;
            quality_flags[k] = f[6] == "1";
            seen += 1;
        }
        if seen != spec.len() {
            return Err(bad(format!("expected {} rows, got {seen}", spec.len())));
        }
        Ok(MeasureGrid {
            family_id: header.family.clone(),
            spec,
            stencil: header.stencil,
            tol: header.tol,
            potential: PotentialField { spec, values },
            cell_mass,
            total_mass: header.total_mass,
            raw_mass: header.raw_mass,
            clamped_fraction: header.clamped_fraction,
            noise_level: header.noise_level,
            support_threshold: header.support_threshold,
            quality_flags,
            warnings: header.warnings.clone(),
        })
    }
}
