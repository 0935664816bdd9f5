//! n-bifurcation pseudometrics and greedy separated-set packing.

use std::collections::HashMap;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orbit::OrbitTable;
use crate::scalar::Real;
use crate::sphere::{chordal_dist, param_dist_unchecked, Parameter, Rect};

/// Which pseudometric a packing uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    /// `d_n`: critical-orbit distance only.
    Plain,
    /// `d̃_n = max(d_n, |λ − λ'|)`.
    Tilde,
}

/// `d_n(λ_p, λ_q) = max_j max_{i<n} σ(f^i_{λ_p}(c_j), f^i_{λ_q}(c_j))`.
pub fn bif_dist<T: Real>(table: &OrbitTable<T>, p: usize, q: usize, n: usize) -> Result<T> {
    table.check_index(p)?;
    table.check_index(q)?;
    table.check_depth(n)?;
    Ok(orbit_dist(table, p, q, n))
}

/// `d̃_n(λ_p, λ_q) = max(d_n(λ_p, λ_q), |λ_p − λ_q|)`.
pub fn bif_dist_tilde<T: Real>(table: &OrbitTable<T>, p: usize, q: usize, n: usize) -> Result<T> {
    let d = bif_dist(table, p, q, n)?;
    Ok(d.max(param_dist_unchecked(&table.params()[p], &table.params()[q])))
}

fn orbit_dist<T: Real>(table: &OrbitTable<T>, p: usize, q: usize, n: usize) -> T {
    let mut best = T::zero();
    for j in 0..table.num_marked() {
        let (a, b) = (table.orbit(p, j), table.orbit(q, j));
        for i in 0..n {
            best = best.max(chordal_dist(&a[i], &b[i]));
        }
    }
    best
}

/// Whether `dist(p, q) < eps`, exiting as soon as some term reaches `eps`.
#[inline]
fn is_close<T: Real>(
    table: &OrbitTable<T>,
    p: usize,
    q: usize,
    n: usize,
    eps: T,
    kind: DistanceKind,
) -> bool {
    if kind == DistanceKind::Tilde
        && param_dist_unchecked(&table.params()[p], &table.params()[q]) >= eps
    {
        return false;
    }
    for j in 0..table.num_marked() {
        let (a, b) = (table.orbit(p, j), table.orbit(q, j));
        // Late iterates separate first, so scan backwards.
        for i in (0..n).rev() {
            if chordal_dist(&a[i], &b[i]) >= eps {
                return false;
            }
        }
    }
    true
}

/// A finite, ordered sample of a parameter region, optionally restricted to
/// a subset by a mask.
#[derive(Debug, Clone)]
pub struct SampleCloud<T> {
    params: Vec<Parameter<T>>,
    region: Rect,
    mask: Option<Vec<bool>>,
}

impl<T: Real> SampleCloud<T> {
    pub fn new(params: Vec<Parameter<T>>, region: Rect) -> Result<Self> {
        region.validate()?;
        Ok(SampleCloud {
            params,
            region,
            mask: None,
        })
    }

    /// Cell centres of an `nx × ny` grid over `region`, row-major with the
    /// real part varying fastest.
    pub fn grid(region: Rect, nx: usize, ny: usize) -> Result<Self> {
        Self::grid_where(region, nx, ny, |_| true)
    }

    /// Grid cell centres that satisfy `keep`, in row-major order.
    pub fn grid_where(
        region: Rect,
        nx: usize,
        ny: usize,
        keep: impl Fn(Complex<f64>) -> bool,
    ) -> Result<Self> {
        region.validate()?;
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(
                "grid resolution must be positive".into(),
            ));
        }
        let hx = region.width() / nx as f64;
        let hy = region.height() / ny as f64;
        let mut params = Vec::new();
        for row in 0..ny {
            for col in 0..nx {
                let c = Complex::new(
                    region.re_min + (col as f64 + 0.5) * hx,
                    region.im_min + (row as f64 + 0.5) * hy,
                );
                if keep(c) {
                    params.push(Parameter::from_re_im(T::lit(c.re), T::lit(c.im)));
                }
            }
        }
        Ok(SampleCloud {
            params,
            region,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                left: mask.len(),
                right: self.params.len(),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn region(&self) -> &Rect {
        &self.region
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    #[inline]
    pub fn is_active(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    /// Number of points that survive the mask.
    pub fn active_len(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_active(i)).count()
    }
}

/// A maximal ε-separated subset of a masked cloud.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PackingResult<T> {
    pub n: usize,
    pub epsilon: T,
    pub selected: Vec<usize>,
    pub count: usize,
}

fn check_packing_input<T: Real>(
    table: &OrbitTable<T>,
    cloud: &SampleCloud<T>,
    n: usize,
    eps: T,
) -> Result<()> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be > 0, got {eps}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    table.check_depth(n)?;
    if table.len() != cloud.len() {
        return Err(Error::DimensionMismatch {
            left: table.len(),
            right: cloud.len(),
        });
    }
    Ok(())
}

type BucketKey = (i64, i64, i64);

/// Spatial hash on a quantity that every close pair must share up to one
/// bucket: the sphere embedding of one iterate (chord `= 2σ`), or the
/// parameter itself for the tilde metric. The hashed quantity is the one
/// that spreads the active cloud over the most buckets.
struct Pruner<'a, T> {
    table: &'a OrbitTable<T>,
    /// Iterate index to hash, or `None` for the parameter.
    source: Option<usize>,
    inv_size: f64,
    buckets: HashMap<BucketKey, Vec<usize>>,
}

impl<'a, T: Real> Pruner<'a, T> {
    fn new(
        table: &'a OrbitTable<T>,
        cloud: &SampleCloud<T>,
        n: usize,
        eps: f64,
        kind: DistanceKind,
    ) -> Self {
        // Slightly oversized buckets so rounding never splits a close pair
        // across non-adjacent buckets.
        let pad = 1.0 + 1e-9;
        let mut candidates: Vec<Option<usize>> = (0..n).rev().map(Some).collect();
        if kind == DistanceKind::Tilde {
            candidates.push(None);
        }
        let active: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.is_active(i)).collect();
        let mut best = Pruner {
            table,
            source: candidates[0],
            inv_size: 0.0,
            buckets: HashMap::new(),
        };
        let mut best_spread = 0;
        for source in candidates {
            let size = if source.is_some() { 2.0 * eps } else { eps };
            let probe = Pruner {
                table,
                source,
                inv_size: 1.0 / (size * pad),
                buckets: HashMap::new(),
            };
            let spread = active
                .iter()
                .map(|&p| probe.key(p))
                .collect::<std::collections::HashSet<_>>()
                .len();
            if spread > best_spread {
                best_spread = spread;
                best = probe;
            }
        }
        best
    }

    fn key(&self, p: usize) -> BucketKey {
        let v = match self.source {
            None => {
                let params = &self.table.params()[p];
                let c0 = params.coord(0);
                let c1 = if params.dim() > 1 {
                    params.coord(1).re.as_f64()
                } else {
                    0.0
                };
                [c0.re.as_f64(), c0.im.as_f64(), c1]
            }
            Some(i) => self.table.point(p, 0, i).embed().map(|x| x.as_f64()),
        };
        let q = |x: f64| (x * self.inv_size).floor() as i64;
        (q(v[0]), q(v[1]), q(v[2]))
    }

    fn insert(&mut self, p: usize) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(p);
    }

    fn neighbours(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        let (a, b, c) = self.key(p);
        (-1..=1)
            .flat_map(move |da| (-1..=1).flat_map(move |db| (-1..=1).map(move |dc| (da, db, dc))))
            .filter_map(move |(da, db, dc)| self.buckets.get(&(a + da, b + db, c + dc)))
            .flatten()
            .copied()
    }
}

/// Greedy maximal ε-separated subset of the masked cloud: scan in cloud
/// order and keep each point farther than `eps` from everything kept so far.
pub fn greedy_separated<T: Real>(
    table: &OrbitTable<T>,
    cloud: &SampleCloud<T>,
    n: usize,
    eps: T,
    kind: DistanceKind,
) -> Result<PackingResult<T>> {
    check_packing_input(table, cloud, n, eps)?;
    let mut pruner = Pruner::new(table, cloud, n, eps.as_f64(), kind);
    let mut selected = Vec::new();
    for q in 0..cloud.len() {
        if !cloud.is_active(q) {
            continue;
        }
        if pruner
            .neighbours(q)
            .all(|s| !is_close(table, s, q, n, eps, kind))
        {
            pruner.insert(q);
            selected.push(q);
        }
    }
    Ok(PackingResult {
        n,
        epsilon: eps,
        count: selected.len(),
        selected,
    })
}

/// Reference implementation of [`greedy_separated`] without pruning.
pub fn greedy_separated_naive<T: Real>(
    table: &OrbitTable<T>,
    cloud: &SampleCloud<T>,
    n: usize,
    eps: T,
    kind: DistanceKind,
) -> Result<PackingResult<T>> {
    check_packing_input(table, cloud, n, eps)?;
    let mut selected: Vec<usize> = Vec::new();
    for q in (0..cloud.len()).filter(|&q| cloud.is_active(q)) {
        if selected
            .iter()
            .all(|&s| !is_close(table, s, q, n, eps, kind))
        {
            selected.push(q);
        }
    }
    Ok(PackingResult {
        n,
        epsilon: eps,
        count: selected.len(),
        selected,
    })
}

/// Counts `N(n, ε)` indexed `[n_index][eps_index]`; cells run in parallel.
pub fn packing_curve<T: Real>(
    table: &OrbitTable<T>,
    cloud: &SampleCloud<T>,
    n_list: &[usize],
    eps_list: &[T],
    kind: DistanceKind,
) -> Result<Vec<Vec<usize>>> {
    let cells: Vec<(usize, T)> = n_list
        .iter()
        .flat_map(|&n| eps_list.iter().map(move |&e| (n, e)))
        .collect();
    let counts = cells
        .par_iter()
        .map(|&(n, e)| greedy_separated(table, cloud, n, e, kind).map(|r| r.count))
        .collect::<Result<Vec<_>>>()?;
    Ok(counts
        .chunks(eps_list.len().max(1))
        .map(|c| c.to_vec())
        .take(n_list.len())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{make_cubic_two_critical, make_unicritical};
    use crate::orbit::orbit_table;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_cloud() -> (OrbitTable<f64>, SampleCloud<f64>) {
        let f = make_unicritical(2).unwrap();
        let ps: Vec<_> = (0..=10)
            .map(|k| Parameter::from_re_im(k as f64 / 10.0, 0.0))
            .collect();
        let t = orbit_table(&f, &ps, 3).unwrap();
        let c = SampleCloud::new(ps, Rect::new(0.0, 1.0, -0.1, 0.1).unwrap()).unwrap();
        (t, c)
    }

    fn random_table(seed: u64, size: usize, depth: usize) -> OrbitTable<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps: Vec<_> = (0..size)
            .map(|_| Parameter::from_re_im(rng.gen_range(-2.1..0.6), rng.gen_range(-1.2..1.2)))
            .collect();
        orbit_table(&make_unicritical(2).unwrap(), &ps, depth).unwrap()
    }

    fn cloud_of(t: &OrbitTable<f64>) -> SampleCloud<f64> {
        SampleCloud::new(
            t.params().to_vec(),
            Rect::new(-2.5, 1.5, -1.5, 1.5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn bif_dist_examples() {
        let f = make_unicritical(2).unwrap();
        let ps = [
            Parameter::from_re_im(0.0, 0.0),
            Parameter::from_re_im(0.1, 0.0),
        ];
        let t = orbit_table(&f, &ps, 4).unwrap();
        assert_eq!(bif_dist(&t, 1, 1, 4).unwrap(), 0.0);
        assert_eq!(bif_dist(&t, 0, 1, 1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            bif_dist(&t, 0, 1, 2).unwrap(),
            0.1 / 1.01f64.sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(bif_dist(&t, 0, 1, 2).unwrap(), 0.0995037, epsilon = 1e-7);
        assert_eq!(bif_dist_tilde(&t, 0, 0, 3).unwrap(), 0.0);
        assert_abs_diff_eq!(bif_dist_tilde(&t, 0, 1, 1).unwrap(), 0.1, epsilon = 1e-15);
        assert!(matches!(
            bif_dist(&t, 0, 2, 1),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            bif_dist(&t, 0, 1, 5),
            Err(Error::DepthExceeded { .. })
        ));
    }

    #[test]
    fn multi_marked_distance_takes_max_over_marked_points() {
        let f = make_cubic_two_critical();
        let c = |a: f64, b: f64| Complex::new(a, b);
        let ps = [
            Parameter::two(c(0.3, 0.0), c(0.1, 0.1)),
            Parameter::two(c(0.35, 0.0), c(0.1, 0.1)),
        ];
        let t = orbit_table(&f, &ps, 5).unwrap();
        let d = bif_dist(&t, 0, 1, 5).unwrap();
        let per_j = |j: usize| {
            (0..5)
                .map(|i| chordal_dist(&t.point(0, j, i), &t.point(1, j, i)))
                .fold(0.0, f64::max)
        };
        assert_eq!(d, per_j(0).max(per_j(1)));
        assert!(per_j(0) > 0.0 && per_j(1) > 0.0);
    }

    #[test]
    fn greedy_interval_example() {
        let (t, c) = line_cloud();
        let r = greedy_separated(&t, &c, 1, 0.3, DistanceKind::Tilde).unwrap();
        assert_eq!(r.selected, vec![0, 3, 6, 9]);
        assert_eq!(r.count, 4);
        let r = greedy_separated(&t, &c, 1, 5.0, DistanceKind::Tilde).unwrap();
        assert_eq!(r.count, 1);
    }

    #[test]
    fn greedy_empty_mask_gives_zero() {
        let (t, c) = line_cloud();
        let c = c.with_mask(vec![false; 11]).unwrap();
        assert_eq!(
            greedy_separated(&t, &c, 2, 0.1, DistanceKind::Plain)
                .unwrap()
                .count,
            0
        );
    }

    #[test]
    fn greedy_rejects_bad_input() {
        let (t, c) = line_cloud();
        assert!(greedy_separated(&t, &c, 1, 0.0, DistanceKind::Plain).is_err());
        assert!(greedy_separated(&t, &c, 4, 0.1, DistanceKind::Plain).is_err());
        assert!(c.clone().with_mask(vec![true; 3]).is_err());
    }

    #[test]
    fn greedy_count_grows_with_depth_on_mandelbrot_window() {
        let region = Rect::new(-2.5, 1.5, -1.5, 1.5).unwrap();
        let cloud = SampleCloud::<f64>::grid(region, 200, 200).unwrap();
        let t = orbit_table(&make_unicritical(2).unwrap(), cloud.params(), 10).unwrap();
        let n2 = greedy_separated(&t, &cloud, 2, 0.1, DistanceKind::Plain)
            .unwrap()
            .count;
        let n10 = greedy_separated(&t, &cloud, 10, 0.1, DistanceKind::Plain)
            .unwrap()
            .count;
        assert!(n10 > n2, "{n10} vs {n2}");
    }

    #[test]
    fn pruned_greedy_matches_naive_scan() {
        for seed in 0..6 {
            let t = random_table(seed, 600, 8);
            let cloud = cloud_of(&t);
            for kind in [DistanceKind::Plain, DistanceKind::Tilde] {
                for n in [1, 2, 5, 8] {
                    for eps in [0.02, 0.1, 0.3] {
                        let a = greedy_separated(&t, &cloud, n, eps, kind).unwrap();
                        let b = greedy_separated_naive(&t, &cloud, n, eps, kind).unwrap();
                        assert_eq!(a, b, "seed {seed} n {n} eps {eps} {kind:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn packing_is_separated_and_maximal() {
        let t = random_table(11, 400, 6);
        let cloud = cloud_of(&t);
        let mask: Vec<bool> = (0..400).map(|i| i % 3 != 0).collect();
        let cloud = cloud.with_mask(mask).unwrap();
        let r = greedy_separated(&t, &cloud, 6, 0.15, DistanceKind::Plain).unwrap();
        for (a, &p) in r.selected.iter().enumerate() {
            assert!(cloud.is_active(p));
            for &q in &r.selected[a + 1..] {
                assert!(bif_dist(&t, p, q, 6).unwrap() >= 0.15);
            }
        }
        for q in (0..400).filter(|&q| cloud.is_active(q)) {
            assert!(r
                .selected
                .iter()
                .any(|&s| bif_dist(&t, s, q, 6).unwrap() < 0.15));
        }
    }

    #[test]
    fn packing_curve_shape_and_monotonicity() {
        let region = Rect::new(-2.2, 0.6, -1.2, 1.2).unwrap();
        let cloud = SampleCloud::<f64>::grid(region, 70, 60).unwrap();
        let t = orbit_table(&make_unicritical(2).unwrap(), cloud.params(), 8).unwrap();
        let ns = [1, 2, 4, 6, 8];
        let es = [0.05, 0.1, 0.2, 0.4];
        let m = packing_curve(&t, &cloud, &ns, &es, DistanceKind::Tilde).unwrap();
        assert_eq!(m.len(), ns.len());
        for (a, row) in m.iter().enumerate() {
            assert_eq!(row.len(), es.len());
            assert_eq!(
                row[1],
                greedy_separated(&t, &cloud, ns[a], es[1], DistanceKind::Tilde)
                    .unwrap()
                    .count
            );
            for b in 0..es.len() - 1 {
                // Guaranteed for greedy packings: a maximal ε-separated set
                // covers, and no ε-ball holds two 2ε-separated points.
                assert!(row[b] >= row[b + 1]);
                if a + 1 < ns.len() {
                    assert!(m[a + 1][b] >= row[b + 1]);
                    // Holds for optimal packings; observed for greedy here.
                    assert!(m[a + 1][b] >= row[b]);
                }
            }
        }
    }

    /// Minimum number of open ε-balls centred at cloud points covering the
    /// cloud, and maximum ε-separated subset, by exhaustive search.
    fn brute_force(t: &OrbitTable<f64>, n: usize, eps: f64) -> (usize, usize) {
        let m = t.len();
        let close = |p: usize, q: usize| bif_dist(t, p, q, n).unwrap() < eps;
        let mut min_cover = m;
        let mut max_pack = 0;
        for set in 1u32..(1 << m) {
            let members: Vec<usize> = (0..m).filter(|&i| set >> i & 1 == 1).collect();
            let size = members.len();
            if size < min_cover && (0..m).all(|q| members.iter().any(|&s| close(s, q))) {
                min_cover = size;
            }
            if size > max_pack
                && members
                    .iter()
                    .enumerate()
                    .all(|(a, &p)| members[a + 1..].iter().all(|&q| !close(p, q)))
            {
                max_pack = size;
            }
        }
        (min_cover, max_pack)
    }

    #[test]
    fn greedy_sandwich_against_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..40 {
            let size = rng.gen_range(6..=15);
            let t = random_table(1000 + trial, size, 8);
            let cloud = cloud_of(&t);
            let n = rng.gen_range(1..=8);
            let eps = rng.gen_range(0.05..0.6);
            let g = |e: f64| {
                greedy_separated(&t, &cloud, n, e, DistanceKind::Plain)
                    .unwrap()
                    .count
            };
            let (cover, pack) = brute_force(&t, n, eps);
            assert!(g(2.0 * eps) <= cover, "trial {trial}");
            assert!(cover <= g(eps), "trial {trial}");
            assert!(g(eps) <= pack, "trial {trial}");
        }
    }

    fn arb_triple_table() -> impl Strategy<Value = (OrbitTable<f64>, usize)> {
        (
            prop::array::uniform3((-2.2f64..0.8, -1.3f64..1.3)),
            1usize..=12,
        )
            .prop_map(|(pts, n)| {
                let ps: Vec<_> = pts
                    .iter()
                    .map(|&(a, b)| Parameter::from_re_im(a, b))
                    .collect();
                (
                    orbit_table(&make_unicritical(2).unwrap(), &ps, 12).unwrap(),
                    n,
                )
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn bif_dist_pseudometric((t, n) in arb_triple_table()) {
            for dist in [bif_dist::<f64>, bif_dist_tilde::<f64>] {
                let d = |p, q| dist(&t, p, q, n).unwrap();
                prop_assert_eq!(d(0, 0), 0.0);
                prop_assert!(d(0, 1) >= 0.0);
                prop_assert_eq!(d(0, 1), d(1, 0));
                prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
            }
        }

        #[test]
        fn bif_dist_monotone_in_n((t, n) in arb_triple_table()) {
            if n < 12 {
                prop_assert!(bif_dist(&t, 0, 1, n + 1).unwrap() >= bif_dist(&t, 0, 1, n).unwrap());
            }
            let tilde = bif_dist_tilde(&t, 0, 1, n).unwrap();
            let plain = bif_dist(&t, 0, 1, n).unwrap();
            let param = param_dist_unchecked(&t.params()[0], &t.params()[1]);
            prop_assert_eq!(tilde, plain.max(param));
        }
    }
}
