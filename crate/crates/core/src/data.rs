//! Seeded generators for the three synthetic targets (sphere, torus,
//! floral) and the standard Gaussian source, plus the manifold metadata
//! evaluation needs.
//!
//! Generation is a pure function of the spec: the same `(spec, n)` yields a
//! bit-identical matrix within one build. Rows are drawn in order from a
//! single stream; parallel generation must split seeds explicitly (see
//! [`crate::rng::derive_seed`]).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, matmul_nt, Matrix};
use crate::rng::{chacha, normal_vec, standard_normal, uniform};
use crate::scalar::Scalar;

/// Distribution of the torus phase offset. The default is the two-point
/// set {-1, +1}; a continuous variant on the interval [-1, 1] exists
/// because set braces and interval brackets are easy to conflate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhaseDist {
    #[default]
    TwoPoint,
    Interval,
}

/// Target family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "F: Scalar")]
pub enum ManifoldKind<F> {
    /// Projected Gaussian on the unit d-sphere, zero-padded into
    /// `ambient_dim` coordinates: rows are `(Z/|Z|, 0, ..., 0)` with
    /// `Z ~ N(gamma, I)` in d+1 dimensions.
    Sphere {
        d: usize,
        ambient_dim: usize,
        gamma: Vec<F>,
    },
    /// Rotated d-torus: angles `theta_i = phi + gamma1*i + eps_i` with
    /// `eps_i ~ N(-gamma1, sigma1^2)`, embedded as interleaved
    /// (cos, sin) pairs, zero-padded, then right-multiplied by the
    /// transpose of `rotation`.
    Torus {
        d: usize,
        ambient_dim: usize,
        gamma1: F,
        sigma1: F,
        rotation: Matrix<F>,
        #[serde(default)]
        phase: PhaseDist,
    },
    /// Planar flower of `petals` spiral segments: petal `i` traces
    /// `r(t) = r_in + t (r_out - r_in)` at angle
    /// `theta_i(t) = 2 pi i / petals + 2 pi twist t`, with Gaussian angular
    /// (`sigma_theta`) and isotropic positional (`sigma_r`) noise.
    Floral {
        petals: usize,
        r_in: F,
        r_out: F,
        twist: F,
        sigma_r: F,
        sigma_theta: F,
    },
}

/// A target description plus the seed that makes sampling deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ManifoldSpec<F> {
    pub kind: ManifoldKind<F>,
    pub seed: u64,
}

/// Max absolute entry of `O^T O - I`; 0 for a perfectly orthogonal matrix.
pub fn orthogonality_defect<F: Scalar>(o: &Matrix<F>) -> F {
    let mut worst = F::zero();
    for i in 0..o.cols() {
        for j in 0..o.cols() {
            let mut acc = F::zero();
            for k in 0..o.rows() {
                acc = o.row(k)[i].mul_add(o.row(k)[j], acc);
            }
            let target = if i == j { F::one() } else { F::zero() };
            let d = (acc - target).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

impl<F: Scalar> ManifoldSpec<F> {
    pub fn sphere(d: usize, ambient_dim: usize, gamma: Vec<F>, seed: u64) -> Result<Self> {
        let spec = ManifoldSpec {
            kind: ManifoldKind::Sphere { d, ambient_dim, gamma },
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn torus(
        d: usize,
        ambient_dim: usize,
        gamma1: F,
        sigma1: F,
        rotation: Matrix<F>,
        seed: u64,
    ) -> Result<Self> {
        let spec = ManifoldSpec {
            kind: ManifoldKind::Torus {
                d,
                ambient_dim,
                gamma1,
                sigma1,
                rotation,
                phase: PhaseDist::TwoPoint,
            },
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn floral(
        petals: usize,
        r_in: F,
        r_out: F,
        twist: F,
        sigma_r: F,
        sigma_theta: F,
        seed: u64,
    ) -> Result<Self> {
        let spec = ManifoldSpec {
            kind: ManifoldKind::Floral { petals, r_in, r_out, twist, sigma_r, sigma_theta },
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ManifoldKind::Sphere { d, ambient_dim, gamma } => {
                if *d < 1 {
                    return Err(Error::invalid("sphere needs d >= 1".to_string()));
                }
                if *ambient_dim < d + 1 {
                    return Err(Error::shape("sphere ambient dim", d + 1, *ambient_dim));
                }
                if gamma.len() != d + 1 {
                    return Err(Error::shape("sphere center", d + 1, gamma.len()));
                }
                if gamma.iter().any(|g| !g.is_finite()) {
                    return Err(Error::invalid("sphere center must be finite".to_string()));
                }
            }
            ManifoldKind::Torus { d, ambient_dim, gamma1, sigma1, rotation, .. } => {
                if *d < 1 {
                    return Err(Error::invalid("torus needs d >= 1".to_string()));
                }
                if *ambient_dim < 2 * d {
                    return Err(Error::shape("torus ambient dim", 2 * d, *ambient_dim));
                }
                if !gamma1.is_finite() || !sigma1.is_finite() || *sigma1 < F::zero() {
                    return Err(Error::invalid("torus angle parameters must be finite, sigma1 >= 0".to_string()));
                }
                if rotation.rows() != *ambient_dim || rotation.cols() != *ambient_dim {
                    return Err(Error::shape("torus rotation", *ambient_dim, rotation.rows()));
                }
                let defect = orthogonality_defect(rotation);
                if defect > F::from_f64(1e-10) {
                    return Err(Error::invalid(format!(
                        "torus rotation is not orthogonal (defect {defect})"
                    )));
                }
            }
            ManifoldKind::Floral { petals, r_in, r_out, twist, sigma_r, sigma_theta } => {
                if *petals < 2 {
                    return Err(Error::invalid("floral needs at least 2 petals".to_string()));
                }
                if !(*r_in > F::zero() && r_out > r_in) {
                    return Err(Error::invalid(format!(
                        "floral radii need 0 < r_in < r_out, got ({r_in}, {r_out})"
                    )));
                }
                if !(*twist > F::zero() && *twist < F::one()) {
                    return Err(Error::invalid(format!("floral twist must lie in (0, 1), got {twist}")));
                }
                if *sigma_r < F::zero() || *sigma_theta < F::zero() {
                    return Err(Error::invalid("floral noise scales must be >= 0".to_string()));
                }
            }
        }
        Ok(())
    }

    /// Ambient dimension of generated rows.
    pub fn dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::Sphere { ambient_dim, .. } => *ambient_dim,
            ManifoldKind::Torus { ambient_dim, .. } => *ambient_dim,
            ManifoldKind::Floral { .. } => 2,
        }
    }

    /// Draws `n` rows from whichever family the spec describes.
    pub fn sample(&self, n: usize) -> Result<Matrix<F>> {
        self.validate()?;
        match &self.kind {
            ManifoldKind::Sphere { .. } => sample_sphere(self, n),
            ManifoldKind::Torus { .. } => sample_torus(self, n),
            ManifoldKind::Floral { .. } => sample_floral(self, n),
        }
    }
}

/// Rows `(Z/|Z|, 0, ..., 0)` with `Z ~ N(gamma, I_{d+1})`; the trailing
/// padding is exactly zero.
pub fn sample_sphere<F: Scalar>(spec: &ManifoldSpec<F>, n: usize) -> Result<Matrix<F>> {
    let ManifoldKind::Sphere { d, ambient_dim, gamma } = &spec.kind else {
        return Err(Error::invalid("sample_sphere needs a sphere spec".to_string()));
    };
    let mut rng = chacha(spec.seed);
    let mut out = Matrix::zeros(n, *ambient_dim);
    for i in 0..n {
        loop {
            let mut z: Vec<F> = normal_vec(&mut rng, d + 1);
            for (zj, gj) in z.iter_mut().zip(gamma) {
                *zj += *gj;
            }
            let norm = dot(&z, &z).sqrt();
            if norm > F::zero() {
                let row = out.row_mut(i);
                for (j, zj) in z.iter().enumerate() {
                    row[j] = *zj / norm;
                }
                break;
            }
            // A zero draw has probability zero; redraw keeps the map total.
        }
    }
    Ok(out)
}

/// Torus rows: per row draw the phase, then `theta_i = phi + gamma1*i +
/// eps_i` for i = 1..=d with `eps_i ~ N(-gamma1, sigma1^2)`, embed as
/// interleaved cosines and sines, zero-pad, and rotate by right-multiplying
/// with the transpose of the spec's orthogonal matrix.
pub fn sample_torus<F: Scalar>(spec: &ManifoldSpec<F>, n: usize) -> Result<Matrix<F>> {
    let ManifoldKind::Torus { d, ambient_dim, gamma1, sigma1, rotation, phase } = &spec.kind
    else {
        return Err(Error::invalid("sample_torus needs a torus spec".to_string()));
    };
    let mut rng = chacha(spec.seed);
    let mut flat = Vec::with_capacity(n * ambient_dim);
    for _ in 0..n {
        let phi: F = match phase {
            PhaseDist::TwoPoint => {
                if uniform::<f64, _>(&mut rng, 0.0, 1.0) < 0.5 {
                    -F::one()
                } else {
                    F::one()
                }
            }
            PhaseDist::Interval => uniform(&mut rng, -F::one(), F::one()),
        };
        for i in 1..=*d {
            let eps = *sigma1 * standard_normal::<F, _>(&mut rng) - *gamma1;
            let theta = phi + *gamma1 * F::from_usize(i) + eps;
            let (s, c) = theta.sin_cos();
            flat.push(c);
            flat.push(s);
        }
        flat.extend(std::iter::repeat(F::zero()).take(ambient_dim - 2 * d));
    }
    let axis_aligned = Matrix::from_flat(n, *ambient_dim, flat);
    Ok(matmul_nt(&axis_aligned, rotation))
}

/// Undoes the torus rotation: returns `X * O`, whose rows are back in the
/// axis-aligned frame where consecutive coordinate pairs lie on circles.
pub fn unrotate<F: Scalar>(x: &Matrix<F>, rotation: &Matrix<F>) -> Matrix<F> {
    let mut out = Matrix::zeros(x.rows(), rotation.cols());
    for i in 0..x.rows() {
        let xi = x.row(i);
        let row = out.row_mut(i);
        for j in 0..rotation.cols() {
            let mut acc = F::zero();
            for (k, xk) in xi.iter().enumerate() {
                acc = xk.mul_add(rotation.row(k)[j], acc);
            }
            row[j] = acc;
        }
    }
    out
}

/// Polar coordinates `(r, theta)` of the noiseless petal curve at position
/// `t` in `[0, 1]` along petal `petal`.
pub fn floral_curve_polar<F: Scalar>(
    petals: usize,
    r_in: F,
    r_out: F,
    twist: F,
    petal: usize,
    t: F,
) -> (F, F) {
    let two_pi = F::from_f64(std::f64::consts::TAU);
    let theta = two_pi * F::from_usize(petal) / F::from_usize(petals) + two_pi * twist * t;
    let r = r_in + t * (r_out - r_in);
    (r, theta)
}

/// Floral rows in the plane: uniform petal, uniform position along it,
/// Gaussian angular jitter, plus isotropic positional noise.
pub fn sample_floral<F: Scalar>(spec: &ManifoldSpec<F>, n: usize) -> Result<Matrix<F>> {
    let ManifoldKind::Floral { petals, r_in, r_out, twist, sigma_r, sigma_theta } = &spec.kind
    else {
        return Err(Error::invalid("sample_floral needs a floral spec".to_string()));
    };
    let mut rng = chacha(spec.seed);
    let mut flat = Vec::with_capacity(n * 2);
    for _ in 0..n {
        // Draw order per row is fixed: petal, position, angle noise, then
        // the two positional noise coordinates.
        let petal = rng.gen_range(0..*petals);
        let t: F = uniform(&mut rng, F::zero(), F::one());
        let z1: F = standard_normal(&mut rng);
        let z2: F = standard_normal(&mut rng);
        let z3: F = standard_normal(&mut rng);
        let (r, base) = floral_curve_polar(*petals, *r_in, *r_out, *twist, petal, t);
        let theta = base + *sigma_theta * z1;
        let (s, c) = theta.sin_cos();
        flat.push(r * c + *sigma_r * z2);
        flat.push(r * s + *sigma_r * z3);
    }
    Ok(Matrix::from_flat(n, 2, flat))
}

/// Haar-distributed orthogonal matrix: QR of a seeded Gaussian square
/// matrix via modified Gram-Schmidt with a re-orthogonalization pass,
/// signs fixed so the R diagonal is positive.
pub fn random_orthogonal<F: Scalar>(dim: usize, seed: u64) -> Result<Matrix<F>> {
    if dim < 1 {
        return Err(Error::invalid("orthogonal matrix needs dim >= 1".to_string()));
    }
    let mut rng = chacha(seed);
    // Columns of a Gaussian matrix, orthonormalized left to right.
    let mut cols: Vec<Vec<F>> = (0..dim).map(|_| normal_vec(&mut rng, dim)).collect();
    for j in 0..dim {
        // Two projection sweeps keep the defect near machine precision.
        for _ in 0..2 {
            for k in 0..j {
                let proj = dot(&cols[j], &cols[k]);
                let prev = cols[k].clone();
                for (cj, pk) in cols[j].iter_mut().zip(&prev) {
                    *cj = (-proj).mul_add(*pk, *cj);
                }
            }
        }
        let norm = dot(&cols[j], &cols[j]).sqrt();
        if !(norm > F::from_f64(1e-12)) {
            // Probability-zero degeneracy; restart from a perturbed seed.
            return random_orthogonal(dim, seed.wrapping_add(0x9e37_79b9));
        }
        // Dividing by the residual norm IS the positive-R-diagonal
        // convention, which makes the factor exactly Haar; no extra sign
        // correction may be applied on top of it.
        for c in cols[j].iter_mut() {
            *c /= norm;
        }
    }
    let mut out = Matrix::zeros(dim, dim);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..dim {
            out.row_mut(i)[j] = col[i];
        }
    }
    Ok(out)
}

/// `n` i.i.d. standard normal rows in `dim` coordinates.
pub fn sample_source<F: Scalar>(dim: usize, n: usize, seed: u64) -> Matrix<F> {
    let mut rng = chacha(seed);
    let mut flat = Vec::with_capacity(n * dim);
    for _ in 0..n {
        flat.extend(normal_vec::<F, _>(&mut rng, dim));
    }
    Matrix::from_flat(n, dim, flat)
}
