//! Estimators for bifurcation entropy, Brin–Katok local entropy, pointwise
//! dimension and graph-volume growth.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::MarkedFamily;
use crate::measure::{
    ball_mass, bowen_ball_mass, bowen_profile_refined, kappa_trim, sample_measure, MeasureGrid,
    DEFAULT_WINDOW_CELLS,
};
use crate::metric::{packing_curve, DistanceKind, SampleCloud};
use crate::orbit::{orbit_table, OrbitTable};
use crate::scalar::Real;
use crate::sphere::{Parameter, Rect};

/// A cell counts as saturated once it selects this fraction of the cloud.
pub const SATURATION_FRACTION: f64 = 0.5;

/// Largest relative deviation of a local slope from the window fit.
pub const SLOPE_VARIATION: f64 = 0.1;

/// Absolute floor for the slope-variation test, so flat curves qualify.
const SLOPE_VARIATION_FLOOR: f64 = 0.02;

/// Fits (A) and (B) disagreeing by more than this flag the report.
pub const DISCORDANCE_TOLERANCE: f64 = 0.1;

/// Ordinary least-squares slope and intercept.
pub fn least_squares(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Median and interquartile range (linear interpolation between ranks).
pub fn median_iqr(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let r = p * (v.len() - 1) as f64;
        let (lo, hi) = (r.floor() as usize, r.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (r - lo as f64)
    };
    Some((q(0.5), q(0.75) - q(0.25)))
}

/// Growth-rate fit of `log N` against `n` for one `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub epsilon: f64,
    /// Fitted window `[n_lo, n_hi]`, absent when no window qualifies.
    pub window: Option<(usize, usize)>,
    pub slope: Option<f64>,
    /// Root-mean-square residual of the fit.
    pub residual: Option<f64>,
}

/// Separated-set counts and fitted growth rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub kind: DistanceKind,
    pub n_list: Vec<usize>,
    pub epsilon_list: Vec<f64>,
    /// `counts[i][j] = N(n_list[i], epsilon_list[j])`.
    pub counts: Vec<Vec<usize>>,
    pub saturated: Vec<Vec<bool>>,
    pub cloud_size: usize,
    /// Fit (A): per-ε slopes in `n`.
    pub slope_per_epsilon: Vec<SlopeFit>,
    /// Fit (A) at the smallest ε with a qualifying window.
    pub h_a: Option<f64>,
    /// Fit (B): ε-profile removed per `n`, then the trend in `n`.
    pub h_b: Option<f64>,
    /// Reported entropy (fit (A), clamped at 0).
    pub extrapolated_h: Option<f64>,
    pub discordant: bool,
    /// No qualifying window at any ε; the cloud is too coarse.
    pub inconclusive: bool,
}

impl EntropyReport {
    /// One row per `(n, ε)` cell: `n,epsilon,count,saturated`.
    pub fn write_csv<W: std::io::Write>(
        &self,
        mut w: W,
        preamble: &[String],
    ) -> std::io::Result<()> {
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "n,epsilon,count,saturated")?;
        for (i, n) in self.n_list.iter().enumerate() {
            for (j, e) in self.epsilon_list.iter().enumerate() {
                writeln!(
                    w,
                    "{n},{e},{},{}",
                    self.counts[i][j],
                    u8::from(self.saturated[i][j])
                )?;
            }
        }
        Ok(())
    }
}

fn is_saturated(count: usize, cloud: usize) -> bool {
    count > 1 && count as f64 >= SATURATION_FRACTION * cloud as f64
}

/// Longest run of consecutive admissible `n` whose local slopes all stay
/// within the variation bound of the run's least-squares slope. Ties go to
/// the run at larger `n`.
fn fit_window(ns: &[f64], logs: &[f64], admissible: &[bool]) -> Option<(usize, usize, f64, f64)> {
    let m = ns.len();
    let mut best: Option<(usize, usize, f64, f64)> = None;
    for lo in 0..m {
        for hi in (lo + 2)..m {
            if !admissible[lo..=hi].iter().all(|&a| a) {
                break;
            }
            let (slope, icept) = match least_squares(&ns[lo..=hi], &logs[lo..=hi]) {
                Some(f) => f,
                None => continue,
            };
            let bound = (SLOPE_VARIATION * slope.abs()).max(SLOPE_VARIATION_FLOOR);
            let steady = (lo..hi).all(|k| {
                let local = (logs[k + 1] - logs[k]) / (ns[k + 1] - ns[k]);
                (local - slope).abs() <= bound
            });
            if !steady {
                continue;
            }
            let better = match best {
                None => true,
                Some((blo, bhi, _, _)) => hi - lo >= bhi - blo,
            };
            if better {
                let rms = (ns[lo..=hi]
                    .iter()
                    .zip(&logs[lo..=hi])
                    .map(|(x, y)| (y - slope * x - icept).powi(2))
                    .sum::<f64>()
                    / (hi - lo + 1) as f64)
                    .sqrt();
                best = Some((lo, hi, slope, rms));
            }
        }
    }
    best
}

/// Fits (A) and (B) on a count matrix.
pub fn fit_counts(
    kind: DistanceKind,
    n_list: &[usize],
    epsilon_list: &[f64],
    counts: Vec<Vec<usize>>,
    cloud_size: usize,
) -> EntropyReport {
    let saturated: Vec<Vec<bool>> = counts
        .iter()
        .map(|row| row.iter().map(|&c| is_saturated(c, cloud_size)).collect())
        .collect();
    let ns: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    let mut slope_per_epsilon = Vec::new();
    let mut windows = Vec::new();
    for (j, &eps) in epsilon_list.iter().enumerate() {
        let logs: Vec<f64> = counts
            .iter()
            .map(|row| (row[j].max(1) as f64).ln())
            .collect();
        let admissible: Vec<bool> = (0..n_list.len())
            .map(|i| counts[i][j] > 0 && !saturated[i][j])
            .collect();
        let fit = fit_window(&ns, &logs, &admissible);
        if let Some((lo, hi, _, _)) = fit {
            windows.push((lo, hi));
        }
        slope_per_epsilon.push(SlopeFit {
            epsilon: eps,
            window: fit.map(|(lo, hi, _, _)| (n_list[lo], n_list[hi])),
            slope: fit.map(|f| f.2),
            residual: fit.map(|f| f.3),
        });
    }
    let h_a = slope_per_epsilon
        .iter()
        .filter(|f| f.slope.is_some())
        .min_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
        .and_then(|f| f.slope);

    // Fit (B): log N(n, ε) = α_n + D·log(1/ε) over the admissible cells in
    // the union of the (A) windows, then the slope of α_n against n.
    let h_b = windows
        .iter()
        .map(|w| w.0)
        .min()
        .zip(windows.iter().map(|w| w.1).max())
        .and_then(|(lo, hi)| {
            let mut per_n = Vec::new();
            for i in lo..=hi {
                let cells: Vec<(f64, f64)> = epsilon_list
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| counts[i][j] > 0 && !saturated[i][j])
                    .map(|(j, &e)| ((1.0 / e).ln(), (counts[i][j] as f64).ln()))
                    .collect();
                if !cells.is_empty() {
                    per_n.push((ns[i], cells));
                }
            }
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (_, cells) in &per_n {
                let k = cells.len() as f64;
                let mx = cells.iter().map(|c| c.0).sum::<f64>() / k;
                let my = cells.iter().map(|c| c.1).sum::<f64>() / k;
                for (x, y) in cells {
                    sxy += (x - mx) * (y - my);
                    sxx += (x - mx).powi(2);
                }
            }
            let d = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            let (xs, alphas): (Vec<f64>, Vec<f64>) = per_n
                .iter()
                .map(|(n, cells)| {
                    let k = cells.len() as f64;
                    let a = cells.iter().map(|(x, y)| y - d * x).sum::<f64>() / k;
                    (*n, a)
                })
                .unzip();
            least_squares(&xs, &alphas).map(|f| f.0)
        });

    let trivial = counts.iter().flatten().all(|&c| c <= 1);
    let (extrapolated_h, inconclusive) = if trivial {
        (Some(0.0), false)
    } else {
        (h_a.map(|h| h.max(0.0)), h_a.is_none())
    };
    let h_b = if trivial { Some(0.0) } else { h_b };
    let discordant = match (h_a, h_b) {
        (Some(a), Some(b)) => (a - b).abs() > DISCORDANCE_TOLERANCE,
        _ => false,
    };
    EntropyReport {
        kind,
        n_list: n_list.to_vec(),
        epsilon_list: epsilon_list.to_vec(),
        counts,
        saturated,
        cloud_size,
        slope_per_epsilon,
        h_a,
        h_b,
        extrapolated_h,
        discordant,
        inconclusive,
    }
}

fn check_lists(n_list: &[usize], epsilon_list: &[f64]) -> Result<()> {
    if n_list.is_empty() || epsilon_list.is_empty() {
        return Err(Error::InvalidArgument(
            "n_list and epsilon_list must be nonempty".into(),
        ));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
        return Err(Error::InvalidArgument(
            "n_list must be positive and increasing".into(),
        ));
    }
    if epsilon_list.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument("epsilon values must be > 0".into()));
    }
    Ok(())
}

/// Topological bifurcation entropy of the cloud's region from the packing
/// curve `N(n, ε)`.
pub fn estimate_h_bif<F: MarkedFamily, T: Real>(
    fam: &F,
    cloud: &SampleCloud<T>,
    n_list: &[usize],
    epsilon_list: &[f64],
    kind: DistanceKind,
) -> Result<EntropyReport> {
    check_lists(n_list, epsilon_list)?;
    let table = orbit_table(fam, cloud.params(), *n_list.last().unwrap())?;
    report_on_table(&table, cloud, n_list, epsilon_list, kind)
}

/// As [`estimate_h_bif`] on a precomputed orbit table of the cloud.
pub fn report_on_table<T: Real>(
    table: &OrbitTable<T>,
    cloud: &SampleCloud<T>,
    n_list: &[usize],
    epsilon_list: &[f64],
    kind: DistanceKind,
) -> Result<EntropyReport> {
    check_lists(n_list, epsilon_list)?;
    let eps: Vec<T> = epsilon_list.iter().map(|&e| T::lit(e)).collect();
    let counts = packing_curve(table, cloud, n_list, &eps, kind)?;
    Ok(fit_counts(
        kind,
        n_list,
        epsilon_list,
        counts,
        cloud.active_len(),
    ))
}

/// Metric bifurcation entropy for one trimming level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa: f64,
    pub retained_mass: f64,
    pub report: EntropyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntropyReport {
    pub per_kappa: Vec<KappaReport>,
    /// Mean of the estimates at the two smallest κ.
    pub plateau: Option<f64>,
}

/// Metric bifurcation entropy of `μ_bif` on the cells of `k_mask`.
///
/// Each cloud point inherits the grid cell it lies in; for every κ the
/// packing is restricted to points whose cell survives [`kappa_trim`].
#[allow(clippy::too_many_arguments)]
pub fn estimate_h_metric<T: Real>(
    grid: &MeasureGrid<T>,
    table: &OrbitTable<T>,
    cloud: &SampleCloud<T>,
    k_mask: &[bool],
    kappa_list: &[f64],
    n_list: &[usize],
    epsilon_list: &[f64],
    kind: DistanceKind,
) -> Result<MetricEntropyReport> {
    check_lists(n_list, epsilon_list)?;
    if !(grid.mask_mass(k_mask).as_f64() > 0.0) {
        return Err(Error::ZeroMass);
    }
    let cells: Vec<Option<usize>> = cloud
        .params()
        .iter()
        .map(|p| {
            let c = p.coord(0);
            grid.spec
                .cell_of(Complex::new(c.re.as_f64(), c.im.as_f64()))
                .map(|(col, row)| grid.spec.index(col, row))
        })
        .collect();
    let mut per_kappa = Vec::new();
    for &kappa in kappa_list {
        let trimmed = kappa_trim(grid, k_mask, T::lit(kappa))?;
        let mask: Vec<bool> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| cloud.is_active(i) && c.is_some_and(|k| trimmed[k]))
            .collect();
        let restricted = cloud.clone().with_mask(mask)?;
        let report = report_on_table(table, &restricted, n_list, epsilon_list, kind)?;
        per_kappa.push(KappaReport {
            kappa,
            retained_mass: grid.mask_mass(&trimmed).as_f64(),
            report,
        });
    }
    let mut by_kappa: Vec<&KappaReport> = per_kappa.iter().collect();
    by_kappa.sort_by(|a, b| a.kappa.total_cmp(&b.kappa));
    let smallest: Vec<f64> = by_kappa
        .iter()
        .take(2)
        .filter_map(|r| r.report.extrapolated_h)
        .collect();
    let plateau =
        (!smallest.is_empty()).then(|| smallest.iter().sum::<f64>() / smallest.len() as f64);
    Ok(MetricEntropyReport { per_kappa, plateau })
}

/// How Bowen-ball masses are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallMethod {
    /// Cell-centre membership on the measure grid.
    CellRepresentative,
    /// Zoom windows of the given number of cells per side.
    Refined { window: usize },
}

impl Default for BallMethod {
    fn default() -> Self {
        BallMethod::Refined {
            window: DEFAULT_WINDOW_CELLS,
        }
    }
}

/// Per-sample Brin–Katok slopes and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrinKatokReport {
    pub epsilon: f64,
    pub n_list: Vec<usize>,
    pub samples: Vec<[f64; 2]>,
    /// Fitted slope of `−log μ(B_n)` against `n`, `None` when a ball came
    /// back empty.
    pub slopes: Vec<Option<f64>>,
    pub median: Option<f64>,
    pub iqr: Option<f64>,
    /// Samples whose Bowen-ball queries were refused or empty.
    pub skipped: usize,
}

/// Brin–Katok local entropy at `μ_bif`-distributed parameters.
pub fn brin_katok_sample<T: Real>(
    grid: &MeasureGrid<T>,
    samples: &[Parameter<T>],
    n_list: &[usize],
    epsilon: f64,
    method: BallMethod,
) -> Result<BrinKatokReport> {
    check_lists(n_list, &[epsilon])?;
    let n_max = *n_list.last().unwrap();
    let table = match method {
        BallMethod::CellRepresentative => Some(grid.orbit_table(&grid.family()?, n_max)?),
        BallMethod::Refined { .. } => None,
    };
    let eps = T::lit(epsilon);
    let slopes: Vec<Option<f64>> = samples
        .par_iter()
        .map(|p| {
            let masses: Option<Vec<f64>> = match (method, &table) {
                (BallMethod::Refined { window }, _) => {
                    bowen_profile_refined(grid, p, n_max, eps, window)
                        .ok()
                        .map(|m| n_list.iter().map(|&n| m[n - 1].as_f64()).collect())
                }
                (BallMethod::CellRepresentative, Some(t)) => n_list
                    .iter()
                    .map(|&n| bowen_ball_mass(grid, t, p, n, eps).ok().map(|m| m.as_f64()))
                    .collect(),
                _ => None,
            };
            let masses = masses?;
            if masses.iter().any(|&m| !(m > 0.0)) {
                return None;
            }
            let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
            let ys: Vec<f64> = masses.iter().map(|m| -m.ln()).collect();
            least_squares(&xs, &ys).map(|f| f.0)
        })
        .collect();
    let finite: Vec<f64> = slopes.iter().flatten().copied().collect();
    let summary = median_iqr(&finite);
    Ok(BrinKatokReport {
        epsilon,
        n_list: n_list.to_vec(),
        samples: samples
            .iter()
            .map(|p| [p.coord(0).re.as_f64(), p.coord(0).im.as_f64()])
            .collect(),
        skipped: slopes.iter().filter(|s| s.is_none()).count(),
        slopes,
        median: summary.map(|s| s.0),
        iqr: summary.map(|s| s.1),
    })
}

/// Draws `count` parameters from `μ_bif` (see [`sample_measure`]) and runs
/// [`brin_katok_sample`] on them.
pub fn brin_katok<T: Real>(
    grid: &MeasureGrid<T>,
    count: usize,
    seed: u64,
    levels: usize,
    n_list: &[usize],
    epsilon: f64,
    method: BallMethod,
) -> Result<BrinKatokReport> {
    let samples = sample_measure(grid, count, seed, levels)?;
    brin_katok_sample(grid, &samples, n_list, epsilon, method)
}

/// Local dimension estimate at one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub center: [f64; 2],
    pub radii: Vec<f64>,
    pub masses: Vec<f64>,
    pub dimension: f64,
}

/// Least-squares slope of `log μ(B(λ, r))` against `log r`.
pub fn pointwise_dimension<T: Real>(
    grid: &MeasureGrid<T>,
    lambda: &Parameter<T>,
    r_list: &[f64],
) -> Result<DimensionReport> {
    if r_list.len() < 2 {
        return Err(Error::InvalidArgument("need at least two radii".into()));
    }
    let c = lambda.coord(0);
    if !grid
        .spec
        .region
        .contains(Complex::new(c.re.as_f64(), c.im.as_f64()))
    {
        return Err(Error::InvalidArgument(
            "centre lies outside the grid".into(),
        ));
    }
    let masses = r_list
        .iter()
        .map(|&r| ball_mass(grid, lambda, T::lit(r)).map(|m| m.as_f64()))
        .collect::<Result<Vec<f64>>>()?;
    if masses.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::UndefinedDimension);
    }
    let xs: Vec<f64> = r_list.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = masses.iter().map(|m| m.ln()).collect();
    let (dimension, _) = least_squares(&xs, &ys).ok_or(Error::UndefinedDimension)?;
    Ok(DimensionReport {
        center: [c.re.as_f64(), c.im.as_f64()],
        radii: r_list.to_vec(),
        masses,
        dimension,
    })
}

/// A compact parameter set: a rectangle, optionally cut down to a disk or
/// an annulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Rect {
        rect: Rect,
    },
    Disk {
        center: [f64; 2],
        radius: f64,
    },
    Annulus {
        center: [f64; 2],
        inner: f64,
        outer: f64,
    },
}

impl Region {
    pub fn bounding_rect(&self) -> Rect {
        match *self {
            Region::Rect { rect } => rect,
            Region::Disk { center, radius } => {
                Rect::around(Complex::new(center[0], center[1]), radius)
            }
            Region::Annulus { center, outer, .. } => {
                Rect::around(Complex::new(center[0], center[1]), outer)
            }
        }
    }

    pub fn contains(&self, c: Complex<f64>) -> bool {
        match *self {
            Region::Rect { rect } => rect.contains(c),
            Region::Disk { center, radius } => {
                (c - Complex::new(center[0], center[1])).norm() <= radius
            }
            Region::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = (c - Complex::new(center[0], center[1])).norm();
                r >= inner && r <= outer
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Region::Rect { rect } => return rect.validate(),
            Region::Disk { radius, center } => radius > 0.0 && center.iter().all(|v| v.is_finite()),
            Region::Annulus {
                inner,
                outer,
                center,
            } => inner >= 0.0 && outer > inner && center.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRegion(format!("{self:?}")))
        }
    }

    /// Uniform grid cloud: `nx × ny` cell centres of the bounding box that
    /// fall inside the region.
    pub fn grid_cloud<T: Real>(&self, nx: usize, ny: usize) -> Result<SampleCloud<T>> {
        self.validate()?;
        SampleCloud::grid_where(self.bounding_rect(), nx, ny, |c| self.contains(c))
    }

    /// `μ_bif`-distributed cloud: `count` draws from the measure restricted
    /// to the region's cells, keeping the refined points that stay inside.
    pub fn measure_cloud<T: Real>(
        &self,
        grid: &MeasureGrid<T>,
        count: usize,
        seed: u64,
        levels: usize,
    ) -> Result<SampleCloud<T>> {
        self.validate()?;
        let mut restricted = grid.clone();
        let centers = grid.spec.centers();
        for (m, c) in restricted.cell_mass.iter_mut().zip(&centers) {
            if !self.contains(*c) {
                *m = T::zero();
            }
        }
        if !(restricted.mask_mass(&vec![true; centers.len()]) > T::zero()) {
            return Err(Error::ZeroMass);
        }
        let params: Vec<Parameter<T>> = sample_measure(&restricted, count, seed, levels)?
            .into_iter()
            .filter(|p| {
                let c = p.coord(0);
                self.contains(Complex::new(c.re.as_f64(), c.im.as_f64()))
            })
            .collect();
        SampleCloud::new(params, self.bounding_rect())
    }
}

/// Graph-volume growth `V(n) = area(K) + Σ_{ℓ<n} ∫_K |∂_λ a_ℓ|²_sph dA`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrowthReport {
    pub area: f64,
    /// `terms[ℓ] = ∫_K |∂_λ a_ℓ|²/(1 + |a_ℓ|²)² dA`.
    pub terms: Vec<f64>,
    /// `volumes[n - 1] = V(n)`, `n = 1..=n_max`.
    pub volumes: Vec<f64>,
    /// `(1/n) log V(n)`.
    pub rates: Vec<f64>,
    /// Slope of `log terms[ℓ]` over the upper half of the `ℓ` range, the
    /// exponential growth rate of `V`.
    pub fitted_rate: f64,
    /// Quadrature nodes where the derivative overflowed and was dropped.
    pub overflow_nodes: usize,
}

/// Midpoint-rule evaluation of [`VolumeGrowthReport`] on a
/// `resolution × resolution` lattice over the region's bounding box.
/// Derivatives follow `∂a_{ℓ+1} = f'(a_ℓ)·∂a_ℓ + ∂_λ f(a_ℓ)`.
pub fn graph_volume_growth<F: MarkedFamily>(
    fam: &F,
    region: &Region,
    n_max: usize,
    resolution: usize,
) -> Result<VolumeGrowthReport> {
    if fam.dim_lambda() != 1 || fam.num_marked() != 1 {
        return Err(Error::UnsupportedFamily);
    }
    if n_max == 0 || resolution == 0 {
        return Err(Error::InvalidArgument(
            "n_max and resolution must be positive".into(),
        ));
    }
    region.validate()?;
    let rect = region.bounding_rect();
    let (hx, hy) = (
        rect.width() / resolution as f64,
        rect.height() / resolution as f64,
    );
    let cell = hx * hy;
    let rows: Vec<(Vec<f64>, usize, f64)> = (0..resolution)
        .into_par_iter()
        .map(|row| {
            let mut terms = vec![0.0; n_max];
            let mut overflow = 0;
            let mut area = 0.0;
            for col in 0..resolution {
                let c = Complex::new(
                    rect.re_min + (col as f64 + 0.5) * hx,
                    rect.im_min + (row as f64 + 0.5) * hy,
                );
                if !region.contains(c) {
                    continue;
                }
                area += cell;
                let p = Parameter::one(c);
                let mut a = fam.marked_affine(0, &p);
                let mut da = fam.marked_param_deriv(0, &p, 0);
                for term in terms.iter_mut() {
                    // Escaped orbits contribute |∂a|²/|a|⁴, negligible from here on.
                    if a.norm() > 1e100 {
                        break;
                    }
                    let w = sphere_density(a, da);
                    if w.is_finite() {
                        *term += w * cell;
                    } else {
                        overflow += 1;
                    }
                    da = fam.deriv(&p, a) * da + fam.param_deriv(&p, a, 0);
                    a = fam.eval_affine(&p, a);
                }
            }
            (terms, overflow, area)
        })
        .collect();
    let mut terms = vec![0.0; n_max];
    let mut overflow_nodes = 0;
    let mut area = 0.0;
    for (t, o, a) in rows {
        for (acc, v) in terms.iter_mut().zip(t) {
            *acc += v;
        }
        overflow_nodes += o;
        area += a;
    }
    Ok(volume_report(area, terms, overflow_nodes))
}

/// `|∂a|²/(1 + |a|²)²`; NaN when the derivative overflowed.
fn sphere_density(a: Complex<f64>, da: Complex<f64>) -> f64 {
    let r = a.norm();
    let s = da.norm() / (1.0 + r * r);
    if s.is_finite() {
        s * s
    } else {
        f64::NAN
    }
}

fn volume_report(area: f64, terms: Vec<f64>, overflow_nodes: usize) -> VolumeGrowthReport {
    let mut volumes = Vec::with_capacity(terms.len());
    let mut v = area;
    volumes.push(v);
    for t in &terms[..terms.len() - 1] {
        v += t;
        volumes.push(v);
    }
    let rates: Vec<f64> = volumes
        .iter()
        .enumerate()
        .map(|(i, v)| v.ln() / (i + 1) as f64)
        .collect();
    let lo = terms.len() / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (lo..terms.len())
        .filter(|&l| terms[l] > 0.0)
        .map(|l| (l as f64, terms[l].ln()))
        .unzip();
    let fitted_rate = least_squares(&xs, &ys).map_or(0.0, |f| f.0.max(0.0));
    VolumeGrowthReport {
        area,
        terms,
        volumes,
        rates,
        fitted_rate,
        overflow_nodes,
    }
}
