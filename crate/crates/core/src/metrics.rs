//! Cloud-level evaluation: standardized sliced W1 between sample clouds,
//! per-sample distance to the target manifold, and an exact small-n W2
//! built on a minimum-cost assignment solver.

use serde::{Deserialize, Serialize};

use crate::data::{floral_curve_polar, unrotate, ManifoldKind, ManifoldSpec};
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, norm, Matrix};
use crate::rng::{chacha, derive_seed, unit_direction};
use crate::scalar::Scalar;

/// Reference coordinates whose standard deviation falls below this are
/// centered but not rescaled.
const SD_FLOOR: f64 = 1e-12;

/// Size cap for the exact assignment solver (O(n^3) worst case).
pub const EXACT_W2_CAP: usize = 4096;

/// Vertices per petal when the floral curves are discretized into
/// polylines for distance queries.
const PETAL_VERTICES: usize = 10_000;

/// Default number of random projection directions.
pub const DEFAULT_N_PROJECTIONS: usize = 128;

/// Default number of independent evaluation runs.
pub const DEFAULT_N_RUNS: usize = 5;

/// Exact 1D Wasserstein-1 distance between two empirical measures with
/// equal mass per point. Sizes may differ; the quantile functions are
/// integrated over the merged grid, with breakpoints `i/n` and `j/m`
/// compared in integer arithmetic so no segment is split or dropped.
pub fn w1_1d<F: Scalar>(a: &[F], b: &[F]) -> Result<F> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("w1_1d needs nonempty samples"));
    }
    for (k, v) in a.iter().chain(b.iter()).enumerate() {
        if !v.is_finite() {
            return Err(Error::non_finite("w1_1d input", k));
        }
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
    let (n, m) = (xs.len(), ys.len());
    // Positions are tracked in units of 1/(n*m).
    let nm = F::from_f64(n as f64 * m as f64);
    let mut total = F::zero();
    let mut prev: u128 = 0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let bx = (i as u128 + 1) * m as u128;
        let by = (j as u128 + 1) * n as u128;
        let q = bx.min(by);
        let w = F::from_f64((q - prev) as f64) / nm;
        total += w * (xs[i] - ys[j]).abs();
        prev = q;
        if bx == q {
            i += 1;
        }
        if by == q {
            j += 1;
        }
    }
    Ok(total)
}

/// Sliced W1 without standardization: mean over `n_proj` uniform
/// directions of the exact 1D W1 between the projected clouds. Symmetric
/// in its arguments for a fixed seed.
pub fn sliced_w1<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>, n_proj: usize, seed: u64) -> Result<F> {
    if a.cols() != b.cols() {
        return Err(Error::shape("sliced_w1 clouds", a.cols(), b.cols()));
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::invalid("sliced_w1 needs at least 2 rows per cloud"));
    }
    if n_proj == 0 {
        return Err(Error::invalid("sliced_w1 needs at least one projection"));
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::non_finite("sliced_w1 input", 0));
    }
    let d = a.cols();
    let mut acc = F::zero();
    for k in 0..n_proj {
        // One derived seed per direction, so projections are independent
        // tasks that could run in parallel without changing the result.
        let mut rng = chacha(derive_seed(seed, "projection", k as u64));
        let dir: Vec<F> = unit_direction(&mut rng, d);
        let pa: Vec<F> = a.iter_rows().map(|r| dot(r, &dir)).collect();
        let pb: Vec<F> = b.iter_rows().map(|r| dot(r, &dir)).collect();
        acc += w1_1d(&pa, &pb)?;
    }
    Ok(acc / F::from_usize(n_proj))
}

/// Standardized sliced W1. Both clouds are mapped through the same
/// per-coordinate affine transform fit on the reference cloud `b`
/// (subtract its mean, divide by its standard deviation); coordinates of
/// `b` with near-zero spread are centered only. The result is the mean
/// over `n_proj` random directions of the exact 1D W1.
pub fn sliced_w1_std<F: Scalar>(
    a: &Matrix<F>,
    b: &Matrix<F>,
    n_proj: usize,
    seed: u64,
) -> Result<F> {
    if a.cols() != b.cols() {
        return Err(Error::shape("sliced_w1_std clouds", a.cols(), b.cols()));
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::non_finite("sliced_w1_std input", 0));
    }
    let mean = b.col_mean();
    let sd = b.col_std();
    let floor = F::from_f64(SD_FLOOR);
    if sd.iter().all(|s| *s < floor) {
        return Err(Error::invalid(
            "sliced_w1_std: reference cloud is constant in every coordinate",
        ));
    }
    let scale: Vec<F> = sd
        .iter()
        .map(|s| if *s < floor { F::one() } else { *s })
        .collect();
    let apply = |m: &Matrix<F>| {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (x, (mu, sc)) in out.row_mut(r).iter_mut().zip(mean.iter().zip(&scale)) {
                *x = (*x - *mu) / *sc;
            }
        }
        out
    };
    sliced_w1(&apply(a), &apply(b), n_proj, seed)
}

/// Squared distance from `p` to the segment `[a, b]` in the plane.
fn point_segment_dist_sq<F: Scalar>(p: (F, F), a: (F, F), b: (F, F)) -> F {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let mut t = if len_sq > F::zero() {
        ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq
    } else {
        F::zero()
    };
    t = t.max(F::zero()).min(F::one());
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    let (ex, ey) = (p.0 - cx, p.1 - cy);
    ex * ex + ey * ey
}

/// Vertices of the noiseless curve of one petal, densely sampled.
fn petal_polyline<F: Scalar>(
    petals: usize,
    r_in: F,
    r_out: F,
    twist: F,
    petal: usize,
) -> Vec<(F, F)> {
    let steps = PETAL_VERTICES - 1;
    (0..PETAL_VERTICES)
        .map(|k| {
            let t = F::from_usize(k) / F::from_usize(steps);
            let (r, theta) = floral_curve_polar(petals, r_in, r_out, twist, petal, t);
            let (s, c) = theta.sin_cos();
            (r * c, r * s)
        })
        .collect()
}

/// Per-sample Euclidean distance from each row of `x` to the manifold
/// described by `spec`. Sphere and torus distances use the closed-form
/// projection onto a product of spheres/circles; floral distances are
/// measured to dense polylines along the petal curves.
pub fn dist_manifold<F: Scalar>(x: &Matrix<F>, spec: &ManifoldSpec<F>) -> Result<Vec<F>> {
    if x.cols() != spec.dim() {
        return Err(Error::shape("dist_manifold cloud", spec.dim(), x.cols()));
    }
    if !x.all_finite() {
        return Err(Error::non_finite("dist_manifold input", 0));
    }
    match &spec.kind {
        ManifoldKind::Sphere { d, .. } => {
            let head = *d + 1;
            Ok(x
                .iter_rows()
                .map(|row| {
                    let du = norm(&row[..head]) - F::one();
                    let tail = dot(&row[head..], &row[head..]);
                    (du * du + tail).sqrt()
                })
                .collect())
        }
        ManifoldKind::Torus { d, rotation, .. } => {
            let back = unrotate(x, rotation);
            Ok(back
                .iter_rows()
                .map(|row| {
                    let mut acc = F::zero();
                    for i in 0..*d {
                        let p = &row[2 * i..2 * i + 2];
                        let dp = norm(p) - F::one();
                        acc += dp * dp;
                    }
                    acc += dot(&row[2 * *d..], &row[2 * *d..]);
                    acc.sqrt()
                })
                .collect())
        }
        ManifoldKind::Floral {
            petals,
            r_in,
            r_out,
            twist,
            ..
        } => {
            let curves: Vec<Vec<(F, F)>> = (0..*petals)
                .map(|p| petal_polyline(*petals, *r_in, *r_out, *twist, p))
                .collect();
            Ok(x
                .iter_rows()
                .map(|row| {
                    let p = (row[0], row[1]);
                    let mut best = F::infinity();
                    for curve in &curves {
                        for seg in curve.windows(2) {
                            let d2 = point_segment_dist_sq(p, seg[0], seg[1]);
                            if d2 < best {
                                best = d2;
                            }
                        }
                    }
                    best.sqrt()
                })
                .collect())
        }
    }
}

/// Exact minimum-cost assignment on a dense square cost matrix via the
/// Hungarian method with potentials and shortest augmenting paths,
/// O(n^3). Returns the column assigned to each row.
fn solve_assignment<F: Scalar>(cost: &Matrix<F>) -> Vec<usize> {
    let n = cost.rows();
    const FREE: usize = usize::MAX;
    let mut u = vec![F::zero(); n];
    let mut v = vec![F::zero(); n + 1];
    // owner[j] is the row currently matched to column j; index n is the
    // virtual column that seeds each augmentation.
    let mut owner = vec![FREE; n + 1];
    for i in 0..n {
        owner[n] = i;
        let mut j0 = n;
        let mut min_slack = vec![F::infinity(); n];
        let mut parent = vec![n; n];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = cost.row(i0);
            let mut delta = F::infinity();
            let mut j1 = n;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let slack = row[j] - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    parent[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            u[owner[n]] += delta;
            v[n] -= delta;
            j0 = j1;
            if owner[j0] == FREE {
                break;
            }
        }
        // Flip the alternating path back to the virtual column.
        loop {
            let j_prev = parent[j0];
            owner[j0] = owner[j_prev];
            j0 = j_prev;
            if j0 == n {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 0..n {
        perm[owner[j]] = j;
    }
    perm
}

/// Exact W2 between two equal-size clouds: the square root of the mean
/// squared distance under the optimal one-to-one matching, solved by an
/// exact assignment algorithm on the squared-distance matrix.
pub fn exact_w2<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>) -> Result<F> {
    if a.rows() != b.rows() {
        return Err(Error::shape("exact_w2 sizes", a.rows(), b.rows()));
    }
    if a.cols() != b.cols() {
        return Err(Error::shape("exact_w2 dims", a.cols(), b.cols()));
    }
    let n = a.rows();
    if n == 0 {
        return Err(Error::invalid("exact_w2 needs nonempty clouds"));
    }
    if n > EXACT_W2_CAP {
        return Err(Error::invalid(format!(
            "exact_w2 size {n} exceeds the cap of {EXACT_W2_CAP}"
        )));
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::non_finite("exact_w2 input", 0));
    }
    let mut cost = Matrix::zeros(n, n);
    for i in 0..n {
        let ra = a.row(i);
        let out = cost.row_mut(i);
        for j in 0..n {
            out[j] = dist_sq(ra, b.row(j));
        }
    }
    let perm = solve_assignment(&cost);
    let mut total = F::zero();
    for (i, &j) in perm.iter().enumerate() {
        total += cost.row(i)[j];
    }
    Ok((total / F::from_usize(n)).sqrt())
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted<F: Scalar>(sorted: &[F], p: F) -> F {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * F::from_usize(n - 1);
    let lo = pos.floor().to_f64().unwrap() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - F::from_usize(lo);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Metrics of a single generated cloud against a reference cloud and the
/// manifold it was drawn from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudMetrics<F> {
    pub w1_slice_std: F,
    /// Mean distance to the manifold over samples.
    pub dist_mean: F,
    pub dist_median: F,
    pub dist_q90: F,
}

/// Evaluates one generated cloud: standardized sliced W1 against the
/// reference, plus summary statistics of the per-sample manifold distance.
pub fn evaluate_cloud<F: Scalar>(
    generated: &Matrix<F>,
    reference: &Matrix<F>,
    spec: &ManifoldSpec<F>,
    n_proj: usize,
    seed: u64,
) -> Result<CloudMetrics<F>> {
    let w1 = sliced_w1_std(generated, reference, n_proj, seed)?;
    let mut dists = dist_manifold(generated, spec)?;
    dists.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
    let mean = dists.iter().fold(F::zero(), |acc, d| acc + *d) / F::from_usize(dists.len());
    Ok(CloudMetrics {
        w1_slice_std: w1,
        dist_mean: mean,
        dist_median: quantile_sorted(&dists, F::from_f64(0.5)),
        dist_q90: quantile_sorted(&dists, F::from_f64(0.9)),
    })
}

/// Mean and spread of one quantity across independent runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanSd<F> {
    pub mean: F,
    /// Sample standard deviation across runs; absent for a single run.
    pub sd: Option<F>,
}

fn mean_sd<F: Scalar>(vals: &[F]) -> MeanSd<F> {
    let n = vals.len();
    let mean = vals.iter().fold(F::zero(), |acc, v| acc + *v) / F::from_usize(n);
    let sd = if n >= 2 {
        let ss = vals.iter().fold(F::zero(), |acc, v| {
            let d = *v - mean;
            acc + d * d
        });
        Some((ss / F::from_usize(n - 1)).sqrt())
    } else {
        None
    };
    MeanSd { mean, sd }
}

/// Evaluation aggregated across independent runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport<F> {
    pub w1_slice_std: MeanSd<F>,
    /// Per-run sample means of the manifold distance, aggregated.
    pub dist_manifold: MeanSd<F>,
    pub n_projections: usize,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
}

impl<F: Scalar> MetricReport<F> {
    /// Aggregates per-run metrics; `seeds` lists one entry per run.
    pub fn from_runs(
        runs: &[CloudMetrics<F>],
        n_projections: usize,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::invalid("metric report needs at least one run"));
        }
        if seeds.len() != runs.len() {
            return Err(Error::shape("metric report seeds", runs.len(), seeds.len()));
        }
        let w1: Vec<F> = runs.iter().map(|r| r.w1_slice_std).collect();
        let dist: Vec<F> = runs.iter().map(|r| r.dist_mean).collect();
        Ok(MetricReport {
            w1_slice_std: mean_sd(&w1),
            dist_manifold: mean_sd(&dist),
            n_projections,
            n_runs: runs.len(),
            seeds,
        })
    }
}
