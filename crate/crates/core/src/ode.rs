//! Fixed-step ODE integration of a velocity field from `t = 0` to
//! `t = 1 - t_lower` on designed time grids.
//!
//! Grids are fixed up front (no adaptive stepping) so runs are exactly
//! reproducible. The quadratic grid concentrates nodes near the terminal
//! time, where the learned field varies fastest; the early-stopping cap
//! `1 - t_lower` keeps integration away from the terminal-time blowup of
//! conditional velocities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

/// Time nodes `0 = s_0 < s_1 < ... < s_N <= 1 - t_lower` plus the scheme
/// used to step between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerGrid<F> {
    nodes: Vec<F>,
    pub scheme: Scheme,
}

impl<F: Scalar> SamplerGrid<F> {
    /// Validates and wraps explicit nodes: strictly increasing, starting at
    /// 0, ending at or below 1.
    pub fn new(nodes: Vec<F>, scheme: Scheme) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("grid needs at least two nodes".to_string()));
        }
        if nodes[0] != F::zero() {
            return Err(Error::invalid("grid must start at 0".to_string()));
        }
        if *nodes.last().unwrap() > F::one() {
            return Err(Error::invalid("grid must end at or below 1".to_string()));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("grid nodes must be strictly increasing".to_string()));
            }
        }
        Ok(SamplerGrid { nodes, scheme })
    }

    pub fn nodes(&self) -> &[F] {
        &self.nodes
    }

    pub fn end_time(&self) -> F {
        *self.nodes.last().unwrap()
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }
}

/// Quadratic grid `s_i = 1 - (1 - i/N)^2` for `i = 0..=N`, truncated at
/// `1 - t_lower`: trailing nodes beyond the cap are dropped and the cap is
/// appended when not already the last node (up to a 1e-12 tolerance that
/// avoids degenerate zero-length final steps). Spacing shrinks toward the
/// terminal time. Defaults to Euler; override with [`SamplerGrid::with_scheme`].
pub fn quadratic_grid<F: Scalar>(n: usize, t_lower: F) -> Result<SamplerGrid<F>> {
    if n < 1 {
        return Err(Error::invalid("quadratic grid needs N >= 1".to_string()));
    }
    if t_lower < F::zero() || t_lower >= F::one() {
        return Err(Error::invalid(format!("t_lower must lie in [0, 1), got {t_lower}")));
    }
    let cap = F::one() - t_lower;
    let nf = F::from_usize(n);
    let mut nodes = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let u = F::one() - F::from_usize(i) / nf;
        let s = F::one() - u * u;
        if s > cap {
            break;
        }
        nodes.push(s);
    }
    let tol = F::from_f64(1e-12);
    match nodes.last() {
        Some(&last) if (cap - last).abs() <= tol => {}
        _ => nodes.push(cap),
    }
    SamplerGrid::new(nodes, Scheme::Euler)
}

/// Uniform grid with `n` steps from 0 to `t_end`.
pub fn uniform_grid<F: Scalar>(n: usize, t_end: F, scheme: Scheme) -> Result<SamplerGrid<F>> {
    if n < 1 {
        return Err(Error::invalid("uniform grid needs N >= 1".to_string()));
    }
    let nf = F::from_usize(n);
    let nodes = (0..=n).map(|i| t_end * F::from_usize(i) / nf).collect();
    SamplerGrid::new(nodes, scheme)
}

fn step<F: Scalar>(
    v: &mut impl FnMut(&[F], F) -> Vec<F>,
    x: &[F],
    t0: F,
    t1: F,
    scheme: Scheme,
) -> Vec<F> {
    let h = t1 - t0;
    match scheme {
        Scheme::Euler => {
            let k = v(x, t0);
            x.iter().zip(&k).map(|(xi, ki)| h.mul_add(*ki, *xi)).collect()
        }
        Scheme::Rk4 => {
            let half = F::from_f64(0.5);
            let sixth = h / F::from_usize(6);
            let two = F::from_usize(2);
            let mid = t0 + half * h;
            let k1 = v(x, t0);
            let x2: Vec<F> = x.iter().zip(&k1).map(|(xi, ki)| (half * h).mul_add(*ki, *xi)).collect();
            let k2 = v(&x2, mid);
            let x3: Vec<F> = x.iter().zip(&k2).map(|(xi, ki)| (half * h).mul_add(*ki, *xi)).collect();
            let k3 = v(&x3, mid);
            let x4: Vec<F> = x.iter().zip(&k3).map(|(xi, ki)| h.mul_add(*ki, *xi)).collect();
            let k4 = v(&x4, t1);
            (0..x.len())
                .map(|j| x[j] + sixth * (k1[j] + two * k2[j] + two * k3[j] + k4[j]))
                .collect()
        }
    }
}

/// Integrates one starting point across the whole grid, returning the state
/// at every node (so `trajectory.len() == nodes.len()` and
/// `trajectory[0] == x0`). Fails with the node index if the state leaves
/// the finite range.
pub fn integrate<F: Scalar>(
    mut v: impl FnMut(&[F], F) -> Vec<F>,
    x0: &[F],
    grid: &SamplerGrid<F>,
) -> Result<Vec<Vec<F>>> {
    let nodes = grid.nodes();
    let mut trajectory = Vec::with_capacity(nodes.len());
    trajectory.push(x0.to_vec());
    for i in 0..nodes.len() - 1 {
        let x = trajectory.last().unwrap();
        let next = step(&mut v, x, nodes[i], nodes[i + 1], grid.scheme);
        if !next.iter().all(|c| c.is_finite()) {
            return Err(Error::non_finite("trajectory", i + 1));
        }
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Integrates a batch of starting points (one per row) with a batched field
/// evaluator, returning only the final states. Equivalent to calling
/// [`integrate`] per row; the batched form exists so model evaluation can
/// amortize its matrix products across samples.
pub fn integrate_batch<F: Scalar>(
    mut v: impl FnMut(&Matrix<F>, F) -> Matrix<F>,
    x0s: &Matrix<F>,
    grid: &SamplerGrid<F>,
) -> Result<Matrix<F>> {
    let nodes = grid.nodes();
    let mut x = x0s.clone();
    let half = F::from_f64(0.5);
    let two = F::from_usize(2);
    for i in 0..nodes.len() - 1 {
        let (t0, t1) = (nodes[i], nodes[i + 1]);
        let h = t1 - t0;
        match grid.scheme {
            Scheme::Euler => {
                let k = v(&x, t0);
                for (xi, ki) in x.data_mut().iter_mut().zip(k.data()) {
                    *xi = h.mul_add(*ki, *xi);
                }
            }
            Scheme::Rk4 => {
                let mid = t0 + half * h;
                let k1 = v(&x, t0);
                let mut stage = x.clone();
                shift(&mut stage, &x, &k1, half * h);
                let k2 = v(&stage, mid);
                shift(&mut stage, &x, &k2, half * h);
                let k3 = v(&stage, mid);
                shift(&mut stage, &x, &k3, h);
                let k4 = v(&stage, t1);
                let sixth = h / F::from_usize(6);
                for (((xi, a), b), (c, d)) in x
                    .data_mut()
                    .iter_mut()
                    .zip(k1.data())
                    .zip(k4.data())
                    .zip(k2.data().iter().zip(k3.data()))
                {
                    *xi += sixth * (*a + two * *c + two * *d + *b);
                }
            }
        }
        if !x.all_finite() {
            return Err(Error::non_finite("trajectory batch", i + 1));
        }
    }
    Ok(x)
}

fn shift<F: Scalar>(out: &mut Matrix<F>, base: &Matrix<F>, k: &Matrix<F>, c: F) {
    for ((o, b), ki) in out.data_mut().iter_mut().zip(base.data()).zip(k.data()) {
        *o = c.mul_add(*ki, *b);
    }
}

/// Least-squares slope of `log(err)` against `log(n)`; used by the
/// convergence-order tests.
pub fn log_log_slope(ns: &[f64], errs: &[f64]) -> f64 {
    assert_eq!(ns.len(), errs.len());
    let n = ns.len() as f64;
    let xs: Vec<f64> = ns.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist_sq;

    #[test]
    fn quadratic_grid_matches_hand_values() {
        let g = quadratic_grid::<f64>(2, 0.0).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.75, 1.0]);

        let g = quadratic_grid::<f64>(4, 1.0 / 16.0).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.4375, 0.75, 0.9375]);
    }

    #[test]
    fn quadratic_grid_spacing_shrinks_toward_one() {
        let g = quadratic_grid::<f64>(250, 0.0).unwrap();
        assert_eq!(g.nodes().len(), 251);
        let mut prev_gap = f64::INFINITY;
        for w in g.nodes().windows(2) {
            let gap = w[1] - w[0];
            assert!(gap < prev_gap, "spacing must shrink");
            prev_gap = gap;
        }
    }

    #[test]
    fn quadratic_grid_caps_at_early_stopping_time() {
        let t_lower = 1e-3;
        let g = quadratic_grid::<f64>(500, t_lower).unwrap();
        assert!((g.end_time() - (1.0 - t_lower)).abs() < 1e-15);
        for w in g.nodes().windows(2) {
            assert!(w[1] > w[0]);
        }
        // The recipe case: t_lower = (1/N)^2 coincides with the last regular
        // node, so no extra node is appended.
        let g = quadratic_grid::<f64>(250, 1.0 / (250.0 * 250.0)).unwrap();
        assert_eq!(g.nodes().len(), 250);
    }

    #[test]
    fn grid_validation_rejects_bad_nodes() {
        assert!(SamplerGrid::new(vec![0.0], Scheme::Euler).is_err());
        assert!(SamplerGrid::new(vec![0.1, 0.5], Scheme::Euler).is_err());
        assert!(SamplerGrid::new(vec![0.0, 0.5, 0.5], Scheme::Euler).is_err());
        assert!(SamplerGrid::new(vec![0.0, 1.5], Scheme::Euler).is_err());
        assert!(SamplerGrid::new(vec![0.0, 0.5, 1.0], Scheme::Rk4).is_ok());
    }

    #[test]
    fn zero_field_keeps_state_constant() {
        let grid = quadratic_grid::<f64>(16, 0.01).unwrap();
        let x0 = [1.5, -2.0];
        let traj = integrate(|_, _| vec![0.0, 0.0], &x0, &grid).unwrap();
        assert_eq!(traj.len(), grid.nodes().len());
        for x in traj {
            assert_eq!(x, vec![1.5, -2.0]);
        }
    }

    #[test]
    fn single_atom_field_follows_the_linear_path_exactly() {
        // v(x,t) = (y0-x)/(1-t) has solution x(t) = t*y0 + (1-t)*x0; all four
        // RK4 stages evaluate to the same vector, so the discrete path lands
        // on the exact solution at every node up to rounding.
        let y0 = [2.0, -1.0, 0.5];
        let x0 = [-0.3, 0.8, 1.1];
        let t_lower = 1e-3;
        let grid = quadratic_grid::<f64>(500, t_lower).unwrap().with_scheme(Scheme::Rk4);
        let v = |x: &[f64], t: f64| -> Vec<f64> {
            x.iter().zip(&y0).map(|(xi, yi)| (yi - xi) / (1.0 - t)).collect()
        };
        let traj = integrate(v, &x0, &grid).unwrap();
        for (x, &s) in traj.iter().zip(grid.nodes()) {
            for j in 0..3 {
                let want = s * y0[j] + (1.0 - s) * x0[j];
                assert!((x[j] - want).abs() < 1e-6, "node t={s}: {} vs {want}", x[j]);
            }
        }
    }

    #[test]
    fn convergence_orders_match_the_schemes() {
        // Exponential flow: v(x,t) = x, exact endpoint e * x0 at time 1.
        let x0 = [1.0, -0.5];
        let exact: Vec<f64> = x0.iter().map(|x| x * std::f64::consts::E).collect();
        for (scheme, order) in [(Scheme::Euler, 1.0), (Scheme::Rk4, 4.0)] {
            let mut ns = Vec::new();
            let mut errs = Vec::new();
            for n in [8usize, 16, 32, 64, 128] {
                let grid = uniform_grid(n, 1.0, scheme).unwrap();
                let traj = integrate(|x: &[f64], _| x.to_vec(), &x0, &grid).unwrap();
                let err = dist_sq(traj.last().unwrap(), &exact).sqrt();
                ns.push(n as f64);
                errs.push(err);
            }
            for w in errs.windows(2) {
                assert!(w[1] < w[0], "{scheme:?}: error must shrink with N");
            }
            let slope = -log_log_slope(&ns, &errs);
            assert!(
                (slope - order).abs() <= 0.3,
                "{scheme:?}: slope {slope} vs order {order}"
            );
        }
    }

    #[test]
    fn forward_then_negated_field_returns_to_start() {
        let x0 = [0.7, -1.3];
        let grid = uniform_grid(500, 1.0, Scheme::Rk4).unwrap();
        let fwd = integrate(|x: &[f64], _| x.to_vec(), &x0, &grid).unwrap();
        let back = integrate(
            |x: &[f64], _| x.iter().map(|xi| -xi).collect(),
            fwd.last().unwrap(),
            &grid,
        )
        .unwrap();
        let err = dist_sq(back.last().unwrap(), &x0).sqrt();
        assert!(err < 1e-6, "round trip error {err}");
    }

    #[test]
    fn batch_integration_equals_per_point_integration() {
        let grid = quadratic_grid::<f64>(40, 1e-4).unwrap().with_scheme(Scheme::Rk4);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![0.3 * i as f64 - 0.7, 0.1 * i as f64])
            .collect();
        let x0s = Matrix::from_rows(&rows);
        // A mildly nonlinear autonomous field exercising all stages.
        let point = |x: &[f64], t: f64| -> Vec<f64> {
            vec![x[1] * (1.0 + t), -x[0] + 0.1 * x[1] * x[1]]
        };
        let batch = |xs: &Matrix<f64>, t: f64| -> Matrix<f64> {
            let rows: Vec<Vec<f64>> = (0..xs.rows()).map(|r| point(xs.row(r), t)).collect();
            Matrix::from_rows(&rows)
        };
        let finals = integrate_batch(batch, &x0s, &grid).unwrap();
        for (r, row) in rows.iter().enumerate() {
            let traj = integrate(point, row, &grid).unwrap();
            assert_eq!(finals.row(r), traj.last().unwrap().as_slice());
        }
    }

    #[test]
    fn non_finite_state_reports_node_index() {
        let grid = uniform_grid(4, 1.0, Scheme::Euler).unwrap();
        let v = |x: &[f64], t: f64| -> Vec<f64> {
            if t >= 0.5 {
                vec![f64::NAN; x.len()]
            } else {
                vec![0.0; x.len()]
            }
        };
        let err = integrate(v, &[1.0], &grid).unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, 3),
            other => panic!("unexpected error {other}"),
        }
    }
}
