//! One-dimensional K-means over the flat weight vector, plus the codebook
//! primitives built on it: nearest-center lookup by binary search,
//! snapping, compression to indices and decompression.

use log::warn;

use crate::error::{Error, Result};
use crate::model::FlatParams;

/// Sorted, finite, non-empty array of cluster centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook(Vec<f64>);

impl Codebook {
    pub fn new(centers: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Argument("codebook needs at least one center".into()));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::CorruptMessage(
                "codebook center is not finite".into(),
            ));
        }
        if centers.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::CorruptMessage("codebook is not sorted".into()));
        }
        Ok(Codebook(centers))
    }

    /// Sorts the centers before validating them.
    pub fn from_unsorted(mut centers: Vec<f64>) -> Result<Self> {
        centers.sort_by(f64::total_cmp);
        Codebook::new(centers)
    }

    pub fn centers(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the closest center. An exact midpoint goes to the lower
    /// center; among equal centers the lowest index wins.
    pub fn nearest(&self, x: f64) -> usize {
        let c = &self.0;
        let hi = c.partition_point(|&v| v < x);
        let pick = if hi == 0 {
            0
        } else if hi == c.len() {
            c.len() - 1
        } else if x - c[hi - 1] <= c[hi] - x {
            hi - 1
        } else {
            hi
        };
        c.partition_point(|&v| v < c[pick])
    }
}

/// Per-weight indices into a codebook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedWeights(Vec<u32>);

impl CompressedWeights {
    pub fn new(indices: Vec<u32>) -> Self {
        CompressedWeights(indices)
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterMethod {
    /// Globally optimal contiguous partition of the sorted values.
    #[default]
    Exact,
    /// Lloyd iterations from evenly spaced quantiles.
    Lloyd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub method: ClusterMethod,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 64,
            max_iterations: 25,
            rel_tolerance: 1e-6,
            method: ClusterMethod::Exact,
        }
    }
}

impl KMeansConfig {
    pub fn with_k(k: usize) -> Self {
        KMeansConfig {
            k,
            ..KMeansConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("clusters", "K must be at least 1"));
        }
        if self.k > u32::MAX as usize {
            return Err(Error::config("clusters", "K does not fit the index width"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("kmeans_max_iterations", "must be at least 1"));
        }
        if self.rel_tolerance.is_nan() || self.rel_tolerance < 0.0 {
            return Err(Error::config("kmeans_tolerance", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub codebook: Codebook,
    pub weights: CompressedWeights,
    /// Sum of squared distances from each value to its assigned center.
    pub inertia: f64,
    /// True when fewer distinct values than requested clusters were present.
    pub shrunk: bool,
    /// Lloyd only: inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeansFit {
    pub fn snapped(&self) -> FlatParams {
        decompress_unchecked(&self.weights, &self.codebook)
    }
}

/// Clusters every value of `values` into at most `cfg.k` centers.
pub fn kmeans_fit(values: &FlatParams, cfg: &KMeansConfig) -> Result<KMeansFit> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::Argument("cannot cluster an empty vector".into()));
    }
    let mut sorted = values.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let (distinct, counts) = distinct_with_counts(&sorted);

    let shrunk = distinct.len() < cfg.k;
    let (centers, history) = if distinct.len() <= cfg.k {
        if shrunk {
            warn!(
                "requested {} clusters but only {} distinct values; codebook shrunk",
                cfg.k,
                distinct.len()
            );
        }
        (distinct, Vec::new())
    } else {
        match cfg.method {
            ClusterMethod::Exact => (exact_centers(&distinct, &counts, cfg.k), Vec::new()),
            ClusterMethod::Lloyd => lloyd(&sorted, cfg),
        }
    };

    let codebook = Codebook::new(centers)?;
    let weights = compress(values, &codebook);
    let inertia = inertia(values, &codebook, &weights);
    Ok(KMeansFit {
        codebook,
        weights,
        inertia,
        shrunk,
        inertia_history: history,
    })
}

pub fn nearest_center(cb: &Codebook, x: f64) -> usize {
    cb.nearest(x)
}

/// Replaces each weight with its nearest center.
pub fn snap(params: &FlatParams, cb: &Codebook) -> FlatParams {
    let c = cb.centers();
    FlatParams::from_vec_unchecked(
        params
            .as_slice()
            .iter()
            .map(|&x| c[cb.nearest(x)])
            .collect(),
    )
}

pub fn compress(params: &FlatParams, cb: &Codebook) -> CompressedWeights {
    CompressedWeights(
        params
            .as_slice()
            .iter()
            .map(|&x| cb.nearest(x) as u32)
            .collect(),
    )
}

pub fn decompress(cw: &CompressedWeights, cb: &Codebook) -> Result<FlatParams> {
    if let Some(&bad) = cw.indices().iter().find(|&&i| i as usize >= cb.len()) {
        return Err(Error::CorruptMessage(format!(
            "index {bad} out of range for codebook of {}",
            cb.len()
        )));
    }
    Ok(decompress_unchecked(cw, cb))
}

fn decompress_unchecked(cw: &CompressedWeights, cb: &Codebook) -> FlatParams {
    let c = cb.centers();
    FlatParams::from_vec_unchecked(cw.indices().iter().map(|&i| c[i as usize]).collect())
}

/// Multiset union of all centers, sorted; duplicates are kept.
pub fn concat_sorted(codebooks: &[Codebook]) -> Result<Codebook> {
    if codebooks.is_empty() {
        return Err(Error::Argument("no codebooks to concatenate".into()));
    }
    let centers: Vec<f64> = codebooks
        .iter()
        .flat_map(|cb| cb.centers().iter().copied())
        .collect();
    Codebook::from_unsorted(centers)
}

pub fn inertia(values: &FlatParams, cb: &Codebook, cw: &CompressedWeights) -> f64 {
    values
        .as_slice()
        .iter()
        .zip(cw.indices())
        .map(|(&x, &i)| {
            let d = x - cb.centers()[i as usize];
            d * d
        })
        .sum()
}

fn distinct_with_counts(sorted: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut values: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for &x in sorted {
        match values.last() {
            Some(&last) if last == x => *counts.last_mut().unwrap() += 1,
            _ => {
                values.push(x);
                counts.push(1);
            }
        }
    }
    (values, counts)
}

/// Weighted prefix sums over distinct sorted values, centered on the mean
/// to keep the within-segment variance formula well conditioned.
struct Prefix {
    w: Vec<f64>,
    s: Vec<f64>,
    q: Vec<f64>,
}

impl Prefix {
    fn new(values: &[f64], counts: &[usize]) -> Self {
        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        let mean = values
            .iter()
            .zip(counts)
            .map(|(&v, &c)| v * c as f64)
            .sum::<f64>()
            / total;
        let n = values.len();
        let mut w = vec![0.0; n + 1];
        let mut s = vec![0.0; n + 1];
        let mut q = vec![0.0; n + 1];
        for i in 0..n {
            let c = counts[i] as f64;
            let x = values[i] - mean;
            w[i + 1] = w[i] + c;
            s[i + 1] = s[i] + c * x;
            q[i + 1] = q[i] + c * x * x;
        }
        Prefix { w, s, q }
    }

    /// Within-segment sum of squares for distinct values [a, b).
    fn cost(&self, a: usize, b: usize) -> f64 {
        let w = self.w[b] - self.w[a];
        if w == 0.0 {
            return 0.0;
        }
        let s = self.s[b] - self.s[a];
        (self.q[b] - self.q[a] - s * s / w).max(0.0)
    }
}

/// Optimal contiguous partition of `values` into exactly `k` segments by
/// dynamic programming with divide-and-conquer over the monotone split
/// points. Requires `values.len() > k`.
fn exact_centers(values: &[f64], counts: &[usize], k: usize) -> Vec<f64> {
    let n = values.len();
    let prefix = Prefix::new(values, counts);
    let mut prev: Vec<f64> = (0..=n).map(|i| prefix.cost(0, i)).collect();
    // split[layer][i]: start of the last segment in the best layer+1 split of [0, i)
    let mut split: Vec<Vec<u32>> = Vec::with_capacity(k);
    split.push(vec![0; n + 1]);
    for layer in 1..k {
        let mut cur = vec![f64::INFINITY; n + 1];
        let mut arg = vec![0u32; n + 1];
        solve_layer(
            &prefix,
            &prev,
            &mut cur,
            &mut arg,
            layer + 1,
            n,
            layer,
            n - 1,
        );
        prev = cur;
        split.push(arg);
    }

    let mut bounds = vec![n];
    let mut end = n;
    for layer in (1..k).rev() {
        end = split[layer][end] as usize;
        bounds.push(end);
    }
    bounds.push(0);
    bounds.reverse();

    bounds
        .windows(2)
        .map(|seg| segment_mean(&values[seg[0]..seg[1]], &counts[seg[0]..seg[1]]))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn solve_layer(
    prefix: &Prefix,
    prev: &[f64],
    cur: &mut [f64],
    arg: &mut [u32],
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
) {
    if lo > hi {
        return;
    }
    let mid = (lo + hi) / 2;
    let mut best = f64::INFINITY;
    let mut best_j = opt_lo;
    let last = opt_hi.min(mid - 1);
    for (j, &before) in prev.iter().enumerate().take(last + 1).skip(opt_lo) {
        let v = before + prefix.cost(j, mid);
        if v < best {
            best = v;
            best_j = j;
        }
    }
    cur[mid] = best;
    arg[mid] = best_j as u32;
    if mid > lo {
        solve_layer(prefix, prev, cur, arg, lo, mid - 1, opt_lo, best_j);
    }
    solve_layer(prefix, prev, cur, arg, mid + 1, hi, best_j, opt_hi);
}

fn segment_mean(values: &[f64], counts: &[usize]) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    let w: f64 = counts.iter().map(|&c| c as f64).sum();
    let mean = values
        .iter()
        .zip(counts)
        .map(|(&v, &c)| v * c as f64)
        .sum::<f64>()
        / w;
    mean.clamp(values[0], values[values.len() - 1])
}

/// Lloyd's algorithm on sorted values with more than `cfg.k` distinct entries.
fn lloyd(sorted: &[f64], cfg: &KMeansConfig) -> (Vec<f64>, Vec<f64>) {
    let n = sorted.len();
    let k = cfg.k;
    let range = sorted[n - 1] - sorted[0];
    let mut centers: Vec<f64> = (0..k)
        .map(|j| sorted[(((2 * j + 1) * n) / (2 * k)).min(n - 1)])
        .collect();
    let mut history = Vec::with_capacity(cfg.max_iterations);
    let mut assign = vec![0usize; n];

    for _ in 0..cfg.max_iterations {
        let cost = assign_sorted(sorted, &centers, &mut assign);
        history.push(cost);
        if reseed_empty(sorted, &mut centers, &assign) {
            continue;
        }
        let updated = cluster_means(sorted, &assign, k);
        let moved = centers
            .iter()
            .zip(&updated)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        centers = updated;
        if moved <= cfg.rel_tolerance * range {
            break;
        }
    }

    // A reseed on the final iteration can leave a cluster empty; repair, then
    // drop anything still unused so every center owns at least one value.
    for _ in 0..k {
        assign_sorted(sorted, &centers, &mut assign);
        if !reseed_empty(sorted, &mut centers, &assign) {
            break;
        }
    }
    assign_sorted(sorted, &centers, &mut assign);
    let mut used = vec![false; k];
    assign.iter().for_each(|&a| used[a] = true);
    let centers = centers
        .into_iter()
        .zip(used)
        .filter_map(|(c, u)| u.then_some(c))
        .collect();
    (centers, history)
}

fn assign_sorted(sorted: &[f64], centers: &[f64], assign: &mut [usize]) -> f64 {
    let cb = Codebook(centers.to_vec());
    let mut cost = 0.0;
    for (a, &x) in assign.iter_mut().zip(sorted) {
        *a = cb.nearest(x);
        let d = x - centers[*a];
        cost += d * d;
    }
    cost
}

fn cluster_means(sorted: &[f64], assign: &[usize], k: usize) -> Vec<f64> {
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0usize; k];
    for (&x, &a) in sorted.iter().zip(assign) {
        sum[a] += x;
        cnt[a] += 1;
    }
    let mut means: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect();
    means.sort_by(f64::total_cmp);
    means
}

/// Moves every empty cluster onto the value farthest from its current
/// center. Returns whether anything was reseeded.
fn reseed_empty(sorted: &[f64], centers: &mut [f64], assign: &[usize]) -> bool {
    let mut cnt = vec![0usize; centers.len()];
    assign.iter().for_each(|&a| cnt[a] += 1);
    let empty: Vec<usize> = (0..centers.len()).filter(|&j| cnt[j] == 0).collect();
    if empty.is_empty() {
        return false;
    }
    let mut by_distance: Vec<usize> = (0..sorted.len()).collect();
    by_distance.sort_by(|&a, &b| {
        let da = (sorted[a] - centers[assign[a]]).abs();
        let db = (sorted[b] - centers[assign[b]]).abs();
        db.total_cmp(&da).then(a.cmp(&b))
    });
    let mut taken: Vec<f64> = Vec::new();
    let mut candidates = by_distance.into_iter().map(|i| sorted[i]);
    for j in empty {
        if let Some(v) = candidates.find(|v| !taken.contains(v) && !centers.contains(v)) {
            centers[j] = v;
            taken.push(v);
        }
    }
    centers.sort_by(f64::total_cmp);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(v: &[f64]) -> FlatParams {
        FlatParams::new(v.to_vec()).unwrap()
    }

    fn cb(v: &[f64]) -> Codebook {
        Codebook::new(v.to_vec()).unwrap()
    }

    #[test]
    fn two_point_masses() {
        for method in [ClusterMethod::Exact, ClusterMethod::Lloyd] {
            let cfg = KMeansConfig {
                k: 2,
                method,
                ..KMeansConfig::default()
            };
            let fit = kmeans_fit(&fp(&[0.0, 0.0, 10.0, 10.0]), &cfg).unwrap();
            assert_eq!(fit.codebook.centers(), &[0.0, 10.0]);
            assert_eq!(fit.weights.indices(), &[0, 0, 1, 1]);
            assert_eq!(fit.inertia, 0.0);
        }
    }

    #[test]
    fn single_cluster_is_mean() {
        for method in [ClusterMethod::Exact, ClusterMethod::Lloyd] {
            let cfg = KMeansConfig {
                k: 1,
                method,
                ..KMeansConfig::default()
            };
            let fit = kmeans_fit(&fp(&[1.0, 2.0, 3.0, 4.0]), &cfg).unwrap();
            assert_eq!(fit.codebook.centers(), &[2.5]);
        }
    }

    #[test]
    fn k_equals_p_is_lossless() {
        let v = [0.3, -1.2, 4.5, 0.1];
        let fit = kmeans_fit(&fp(&v), &KMeansConfig::with_k(4)).unwrap();
        assert_eq!(fit.codebook.centers(), &[-1.2, 0.1, 0.3, 4.5]);
        assert_eq!(fit.inertia, 0.0);
        assert!(!fit.shrunk);
        assert_eq!(fit.snapped(), fp(&v));
    }

    #[test]
    fn too_many_clusters_shrinks() {
        let fit = kmeans_fit(&fp(&[1.0, 1.0, 2.0]), &KMeansConfig::with_k(5)).unwrap();
        assert!(fit.shrunk);
        assert_eq!(fit.codebook.centers(), &[1.0, 2.0]);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            kmeans_fit(&FlatParams::zeros(0), &KMeansConfig::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn nearest_rules() {
        let c = cb(&[0.0, 1.0, 2.0]);
        assert_eq!(nearest_center(&c, 1.4), 1);
        assert_eq!(nearest_center(&c, -5.0), 0);
        assert_eq!(nearest_center(&c, 9.0), 2);
        assert_eq!(nearest_center(&cb(&[0.0, 1.0]), 0.5), 0);
        assert_eq!(nearest_center(&cb(&[0.0, 1.0, 1.0, 2.0]), 1.2), 1);
        assert_eq!(nearest_center(&cb(&[1.0, 1.0, 1.0]), 1.0), 0);
    }

    #[test]
    fn snap_and_compress_examples() {
        let c = cb(&[0.0, 1.0, 2.0]);
        let s = snap(&fp(&[0.1, 0.9, 2.2]), &c);
        assert_eq!(s, fp(&[0.0, 1.0, 2.0]));
        assert_eq!(snap(&s, &c), s);
        assert_eq!(snap(&fp(&[5.0, -3.0]), &cb(&[0.7])), fp(&[0.7, 0.7]));

        let c = cb(&[0.0, 2.0]);
        let cw = compress(&fp(&[0.1, 1.9]), &c);
        assert_eq!(cw.indices(), &[0, 1]);
        assert_eq!(decompress(&cw, &c).unwrap(), snap(&fp(&[0.1, 1.9]), &c));
        let exact = fp(&[2.0, 0.0, 2.0]);
        assert_eq!(decompress(&compress(&exact, &c), &c).unwrap(), exact);
    }

    #[test]
    fn decompress_examples() {
        let c = cb(&[-1.0, 3.0]);
        let out = decompress(&CompressedWeights::new(vec![0, 1, 1]), &c).unwrap();
        assert_eq!(out, fp(&[-1.0, 3.0, 3.0]));
        let out = decompress(&CompressedWeights::new(vec![0, 0]), &c).unwrap();
        assert_eq!(out, fp(&[-1.0, -1.0]));
        assert!(matches!(
            decompress(&CompressedWeights::new(vec![2]), &c),
            Err(Error::CorruptMessage(_))
        ));
    }

    #[test]
    fn concat_examples() {
        let out = concat_sorted(&[cb(&[0.0, 2.0]), cb(&[1.0, 3.0])]).unwrap();
        assert_eq!(out.centers(), &[0.0, 1.0, 2.0, 3.0]);
        let out = concat_sorted(&[cb(&[1.0, 1.0]), cb(&[1.0])]).unwrap();
        assert_eq!(out.centers(), &[1.0, 1.0, 1.0]);
        let single = cb(&[-2.0, 5.0]);
        assert_eq!(
            concat_sorted(std::slice::from_ref(&single)).unwrap(),
            single
        );
        assert!(concat_sorted(&[]).is_err());
    }

    #[test]
    fn codebook_rejects_unsorted_or_nan() {
        assert!(Codebook::new(vec![1.0, 0.0]).is_err());
        assert!(Codebook::new(vec![f64::NAN]).is_err());
        assert!(Codebook::new(vec![]).is_err());
    }

    #[test]
    fn lloyd_reseeds_duplicate_initial_centers() {
        // quantile init lands twice on 0.0
        let v = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 5.0];
        let cfg = KMeansConfig {
            k: 3,
            method: ClusterMethod::Lloyd,
            ..KMeansConfig::default()
        };
        let fit = kmeans_fit(&fp(&v), &cfg).unwrap();
        assert_eq!(fit.codebook.centers(), &[0.0, 1.0, 5.0]);
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn exact_beats_or_matches_lloyd() {
        let v: Vec<f64> = (0..200)
            .map(|i| ((i * 37 % 101) as f64).sin() * 3.0)
            .collect();
        let p = fp(&v);
        for k in [2, 5, 16] {
            let exact = kmeans_fit(&p, &KMeansConfig::with_k(k)).unwrap();
            let lloyd = kmeans_fit(
                &p,
                &KMeansConfig {
                    k,
                    method: ClusterMethod::Lloyd,
                    ..KMeansConfig::default()
                },
            )
            .unwrap();
            assert!(exact.inertia <= lloyd.inertia + 1e-9);
            assert_eq!(exact.codebook.len(), k);
        }
    }
}
