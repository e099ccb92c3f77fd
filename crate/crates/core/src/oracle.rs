//! Exact and Monte Carlo evaluation of the true conditional velocity field,
//! plus the squared-discrepancy probe used to compare a trained model
//! against it.
//!
//! For a target measure with atoms `y_j` and weights `w_j`, the velocity of
//! the linear interpolation path at `(x, t)` is
//!
//! ```text
//! v(x,t) = (sum_j p_j(x,t) y_j - x) / (1 - t),
//! p_j ∝ w_j * exp(-|x - t y_j|^2 / (2 (1-t)^2)),
//! ```
//!
//! the posterior-weighted atom mean pulled toward `x`. The exponent scale
//! `(1-t)^-2` overflows naive arithmetic long before the early-stopping
//! time, so the weights are always computed in the log domain with a
//! max shift.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, Matrix};
use crate::rng::{chacha, normal_vec, uniform, Chacha};
use crate::scalar::Scalar;

/// Discrete target measure: `m` support points with probability weights.
#[derive(Debug, Clone)]
pub struct AtomicTarget<F> {
    atoms: Matrix<F>,
    weights: Vec<F>,
    cumulative: Vec<F>,
}

impl<F: Scalar> AtomicTarget<F> {
    /// Validates atoms (finite, at least one) and weights (nonnegative,
    /// summing to 1 within 1e-12).
    pub fn new(atoms: Matrix<F>, weights: Vec<F>) -> Result<Self> {
        if atoms.rows() == 0 {
            return Err(Error::invalid("target needs at least one atom".to_string()));
        }
        if weights.len() != atoms.rows() {
            return Err(Error::shape("atom weights", atoms.rows(), weights.len()));
        }
        if !atoms.all_finite() {
            return Err(Error::invalid("atoms must be finite".to_string()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < F::zero()) {
            return Err(Error::invalid("weights must be finite and nonnegative".to_string()));
        }
        let total: F = weights.iter().copied().sum();
        if (total - F::one()).abs() > F::from_f64(1e-12) {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = F::zero();
        for w in &weights {
            acc += *w;
            cumulative.push(acc);
        }
        Ok(AtomicTarget {
            atoms,
            weights,
            cumulative,
        })
    }

    /// Equal-weight target on the rows of `atoms`.
    pub fn uniform(atoms: Matrix<F>) -> Result<Self> {
        let m = atoms.rows();
        let w = F::one() / F::from_usize(m.max(1));
        AtomicTarget::new(atoms, vec![w; m])
    }

    pub fn atoms(&self) -> &Matrix<F> {
        &self.atoms
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.atoms.cols()
    }

    /// Draws one atom index by weight.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: F = uniform(rng, F::zero(), F::one());
        self.cumulative
            .partition_point(|c| *c <= u)
            .min(self.weights.len() - 1)
    }
}

/// Probability weights from unnormalized log weights, via max shift:
/// `p_j = exp(l_j - max) / sum exp(l_i - max)`. Adding any constant to all
/// log weights leaves the result unchanged; the maximum always maps to
/// `exp(0)`, so the normalizer never underflows.
pub fn softmax_from_log<F: Scalar>(logw: &[F]) -> Vec<F> {
    assert!(!logw.is_empty(), "softmax of empty slice");
    let mut max = logw[0];
    for l in logw {
        if *l > max {
            max = *l;
        }
    }
    let mut p: Vec<F> = logw.iter().map(|l| (*l - max).exp()).collect();
    let total: F = p.iter().copied().sum();
    for q in &mut p {
        *q /= total;
    }
    p
}

/// Closed-form conditional velocity of the interpolation path for an atomic
/// target. `t` must be below 1.
pub fn exact_velocity<F: Scalar>(target: &AtomicTarget<F>, x: &[F], t: F) -> Result<Vec<F>> {
    if t >= F::one() {
        return Err(Error::invalid(format!("exact velocity needs t < 1, got {t}")));
    }
    if x.len() != target.dim() {
        return Err(Error::shape("query point", target.dim(), x.len()));
    }
    let s = F::one() - t;
    let inv = F::one() / (F::from_usize(2) * s * s);
    let logw: Vec<F> = target
        .weights
        .iter()
        .zip(target.atoms.iter_rows())
        .map(|(w, y)| {
            let mut d2 = F::zero();
            for (xi, yi) in x.iter().zip(y) {
                let d = *xi - t * *yi;
                d2 = d.mul_add(d, d2);
            }
            w.ln() - d2 * inv
        })
        .collect();
    let p = softmax_from_log(&logw);
    let mut v = vec![F::zero(); x.len()];
    for (pj, y) in p.iter().zip(target.atoms.iter_rows()) {
        for (vi, yi) in v.iter_mut().zip(y) {
            *vi = pj.mul_add(*yi, *vi);
        }
    }
    for (vi, xi) in v.iter_mut().zip(x) {
        *vi = (*vi - *xi) / s;
    }
    Ok(v)
}

/// Self-normalized Monte Carlo estimate of the conditional velocity for a
/// general target: draws `m` points from the target sampler and reuses the
/// atomic closed form on their empirical measure. No density evaluation is
/// needed because the draws already carry the target weighting.
pub fn mc_velocity<F: Scalar>(
    mut sampler: impl FnMut() -> Vec<F>,
    x: &[F],
    t: F,
    m: usize,
) -> Result<Vec<F>> {
    if m < 1 {
        return Err(Error::invalid("mc velocity needs m >= 1".to_string()));
    }
    let rows: Vec<Vec<F>> = (0..m).map(|_| sampler()).collect();
    let target = AtomicTarget::uniform(Matrix::from_rows(&rows))?;
    exact_velocity(&target, x, t)
}

/// Mean squared field discrepancy over one time slab.
///
/// Samples `t ~ Unif(slab)` and `x` from the exact path marginal (fresh
/// source point interpolated against a fresh target atom), then averages
/// `|field(x,t) - exact(x,t)|^2`. Returns `(mean, standard error)`.
pub fn velocity_mse<F: Scalar>(
    mut field: impl FnMut(&[F], F) -> Vec<F>,
    target: &AtomicTarget<F>,
    slab: (F, F),
    n_mc: usize,
    seed: u64,
) -> Result<(F, F)> {
    let (lo, hi) = slab;
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty slab ({lo}, {hi})")));
    }
    if lo < F::zero() || hi >= F::one() {
        return Err(Error::invalid(format!("slab ({lo}, {hi}) outside [0, 1)")));
    }
    if n_mc < 1 {
        return Err(Error::invalid("velocity mse needs n_mc >= 1".to_string()));
    }
    let dim = target.dim();
    let mut rng: Chacha = chacha(seed);
    let mut sq = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let t: F = uniform(&mut rng, lo, hi);
        let x1 = target.atoms.row(target.sample_index(&mut rng)).to_vec();
        let x0: Vec<F> = normal_vec(&mut rng, dim);
        let x: Vec<F> = x0
            .iter()
            .zip(&x1)
            .map(|(a, b)| t.mul_add(*b - *a, *a))
            .collect();
        let got = field(&x, t);
        let want = exact_velocity(target, &x, t)?;
        sq.push(dist_sq(&got, &want));
    }
    let n = F::from_usize(n_mc);
    let mean: F = sq.iter().copied().sum::<F>() / n;
    let stderr = if n_mc < 2 {
        F::zero()
    } else {
        let var: F = sq.iter().map(|d| (*d - mean) * (*d - mean)).sum::<F>()
            / (n * (n - F::one()));
        var.sqrt()
    };
    Ok((mean, stderr))
}

/// Per-slab field-discrepancy report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VelocityProbe<F> {
    pub slabs: Vec<(F, F)>,
    pub n_mc: usize,
    pub seed: u64,
    /// `(mean, standard error)` per slab, aligned with `slabs`.
    pub estimates: Vec<(F, F)>,
}

/// Runs [`velocity_mse`] over several slabs with per-slab derived seeds.
pub fn probe_velocity_mse<F: Scalar>(
    mut field: impl FnMut(&[F], F) -> Vec<F>,
    target: &AtomicTarget<F>,
    slabs: &[(F, F)],
    n_mc: usize,
    seed: u64,
) -> Result<VelocityProbe<F>> {
    let mut estimates = Vec::with_capacity(slabs.len());
    for (k, slab) in slabs.iter().enumerate() {
        let sub = crate::rng::derive_seed(seed, "velocity-probe", k as u64);
        estimates.push(velocity_mse(&mut field, target, *slab, n_mc, sub)?);
    }
    Ok(VelocityProbe {
        slabs: slabs.to_vec(),
        n_mc,
        seed,
        estimates,
    })
}

impl<F: Scalar> VelocityProbe<F> {
    /// CSV rows `t_lo,t_hi,mse,stderr,n_mc,seed` with a header line.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t_lo,t_hi,mse,stderr,n_mc,seed")?;
        for ((lo, hi), (mse, se)) in self.slabs.iter().zip(&self.estimates) {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                lo.to_f64().unwrap_or(f64::NAN),
                hi.to_f64().unwrap_or(f64::NAN),
                mse.to_f64().unwrap_or(f64::NAN),
                se.to_f64().unwrap_or(f64::NAN),
                self.n_mc,
                self.seed
            )?;
        }
        Ok(())
    }
}
