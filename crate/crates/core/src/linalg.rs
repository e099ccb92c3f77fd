//! Dense row-major matrices and the handful of kernels the MLP needs.
//!
//! A [`Matrix`] is a point cloud (one row per sample) or a weight block
//! (one row per output unit). The multiply kernels are written with fixed
//! iteration order so results are bit-identical from run to run, and with
//! enough manual unrolling that LLVM vectorizes them on the host target.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    /// Builds from a flat row-major buffer. `data.len()` must be `rows*cols`.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "flat buffer length {} does not match {rows}x{cols}",
            data.len()
        );
        Matrix { rows, cols, data }
    }

    /// Builds from rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows: {} vs {cols}", r.len());
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// First `k` rows as a new matrix. `k` must not exceed `rows`.
    pub fn head(&self, k: usize) -> Matrix<F> {
        assert!(k <= self.rows, "head({k}) on {} rows", self.rows);
        Matrix {
            rows: k,
            cols: self.cols,
            data: self.data[..k * self.cols].to_vec(),
        }
    }

    /// Rows selected by index, in order (duplicates allowed).
    pub fn gather(&self, idx: &[usize]) -> Matrix<F> {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    /// Per-column means.
    pub fn col_mean(&self) -> Vec<F> {
        let mut mean = vec![F::zero(); self.cols];
        for r in self.iter_rows() {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += *x;
            }
        }
        let n = F::from_usize(self.rows.max(1));
        for m in &mut mean {
            *m /= n;
        }
        mean
    }

    /// Per-column population standard deviations.
    pub fn col_std(&self) -> Vec<F> {
        let mean = self.col_mean();
        let mut var = vec![F::zero(); self.cols];
        for r in self.iter_rows() {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                let d = *x - *m;
                *v += d * d;
            }
        }
        let n = F::from_usize(self.rows.max(1));
        var.into_iter().map(|v| (v / n).sqrt()).collect()
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Writes one comma-separated row per sample, full round-trip precision,
    /// no header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in 0..self.rows {
            let row = self.row(r);
            for (j, x) in row.iter().enumerate() {
                if j > 0 {
                    out.write_all(b",")?;
                }
                write!(out, "{}", x.to_f64().unwrap_or(f64::NAN))?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a headerless numeric CSV; every row must have the same width.
    pub fn read_csv(path: &Path) -> Result<Matrix<F>> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut width = 0usize;
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|e| {
                    Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
                data.push(F::from_f64(v));
                width += 1;
            }
            match cols {
                None => cols = Some(width),
                Some(c) if c != width => {
                    return Err(Error::shape(
                        format!("{}:{}", path.display(), lineno + 1),
                        c,
                        width,
                    ))
                }
                _ => {}
            }
            rows += 1;
        }
        Ok(Matrix {
            rows,
            cols: cols.unwrap_or(0),
            data,
        })
    }
}

/// Dot product with a 32-lane accumulator block so the reduction runs as
/// independent FMA chains. Fixed order: bit-identical across runs.
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    const L: usize = 32;
    let mut acc = [F::zero(); L];
    let mut ca = a.chunks_exact(L);
    let mut cb = b.chunks_exact(L);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..L {
            acc[l] = xa[l].mul_add(xb[l], acc[l]);
        }
    }
    let mut tail = F::zero();
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        tail = xa.mul_add(*xb, tail);
    }
    let mut s = tail;
    for lane in acc {
        s += lane;
    }
    s
}

/// `y += a * x`, elementwise.
pub fn axpy<F: Scalar>(y: &mut [F], a: F, x: &[F]) {
    assert_eq!(y.len(), x.len(), "axpy length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = a.mul_add(*xi, *yi);
    }
}

/// Squared Euclidean norm of the difference.
pub fn dist_sq<F: Scalar>(a: &[F], b: &[F]) -> F {
    assert_eq!(a.len(), b.len(), "dist_sq length mismatch");
    let mut s = F::zero();
    for (xa, xb) in a.iter().zip(b) {
        let d = *xa - *xb;
        s = d.mul_add(d, s);
    }
    s
}

/// Euclidean norm.
pub fn norm<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// `C = A * B^T` for `A: m x k`, `B: n x k` (both row-major), so
/// `C[i][j] = <A.row(i), B.row(j)>`. This is the forward-pass shape:
/// activations times a weight block stored one output unit per row.
pub fn matmul_nt<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    assert_eq!(a.cols(), b.cols(), "matmul_nt inner dimension");
    let mut c = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ar = a.row(i);
        let cr = c.row_mut(i);
        for j in 0..b.rows() {
            cr[j] = dot(ar, b.row(j));
        }
    }
    c
}

/// `C = A^T * B` for `A: k x m`, `B: k x n`, so `C[i][j] = sum_r A[r][i]*B[r][j]`.
/// Used for weight gradients: upstream^T times layer inputs.
pub fn matmul_tn<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    assert_eq!(a.rows(), b.rows(), "matmul_tn outer dimension");
    let mut c = Matrix::zeros(a.cols(), b.cols());
    for r in 0..a.rows() {
        let ar = a.row(r);
        let br = b.row(r);
        for i in 0..a.cols() {
            axpy(c.row_mut(i), ar[i], br);
        }
    }
    c
}

/// `C = A * B` for `A: m x k`, `B: k x n`. Used for input gradients:
/// upstream times the weight block.
pub fn matmul_nn<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    assert_eq!(a.cols(), b.rows(), "matmul_nn inner dimension");
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        let ar = a.row(i);
        let cr = c.row_mut(i);
        for (r, coeff) in ar.iter().enumerate() {
            axpy(cr, *coeff, b.row(r));
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_flat(rows, cols, data)
    }

    fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn dot_matches_naive_across_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in [0, 1, 7, 31, 32, 33, 64, 100, 257] {
            let a: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = dot(&a, &b);
            let want = naive_dot(&a, &b);
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "len {len}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn matmuls_match_triple_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, k, n) = (5, 37, 4);
        let a = random_matrix(&mut rng, m, k);
        let bt = random_matrix(&mut rng, n, k);
        let c = matmul_nt(&a, &bt);
        for i in 0..m {
            for j in 0..n {
                let want = naive_dot(a.row(i), bt.row(j));
                assert!((c.row(i)[j] - want).abs() < 1e-12);
            }
        }

        let g = random_matrix(&mut rng, m, n);
        let x = random_matrix(&mut rng, m, k);
        let dw = matmul_tn(&g, &x);
        assert_eq!((dw.rows(), dw.cols()), (n, k));
        for i in 0..n {
            for j in 0..k {
                let want: f64 = (0..m).map(|r| g.row(r)[i] * x.row(r)[j]).sum();
                assert!((dw.row(i)[j] - want).abs() < 1e-12);
            }
        }

        let b = random_matrix(&mut rng, n, k);
        let c2 = matmul_nn(&g, &b);
        assert_eq!((c2.rows(), c2.cols()), (m, k));
        for i in 0..m {
            for j in 0..k {
                let want: f64 = (0..n).map(|r| g.row(i)[r] * b.row(r)[j]).sum();
                assert!((c2.row(i)[j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 17, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        m.write_csv(&path).unwrap();
        let back = Matrix::<f64>::read_csv(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn read_csv_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        assert!(Matrix::<f64>::read_csv(&path).is_err());
    }

    #[test]
    fn gather_and_head_take_expected_rows() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let g = m.gather(&[2, 0, 2]);
        assert_eq!(g.row(0), &[5.0, 6.0]);
        assert_eq!(g.row(1), &[1.0, 2.0]);
        assert_eq!(g.row(2), &[5.0, 6.0]);
        let h = m.head(2);
        assert_eq!(h.rows(), 2);
        assert_eq!(h.row(1), &[3.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "ragged")]
    fn from_rows_panics_on_ragged_input() {
        let _ = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]);
    }

    #[test]
    fn column_stats() {
        let m: Matrix<f64> = Matrix::from_rows(&[vec![1.0, -1.0], vec![3.0, -1.0]]);
        assert_eq!(m.col_mean(), vec![2.0, -1.0]);
        let sd = m.col_std();
        assert!((sd[0] - 1.0).abs() < 1e-15);
        assert_eq!(sd[1], 0.0);
    }

    /// Not a correctness test: prints kernel throughput. Run manually with
    /// `cargo test -p maniflow --release kernel_throughput -- --ignored --nocapture`.
    #[test]
    #[ignore]
    fn kernel_throughput() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = 2048;
        let (inp, out) = (256, 256);
        let x = random_matrix(&mut rng, batch, inp);
        let w = random_matrix(&mut rng, out, inp);
        let start = std::time::Instant::now();
        let reps = 20;
        let mut sink = 0.0;
        for _ in 0..reps {
            let y = matmul_nt(&x, &w);
            sink += y.row(0)[0];
        }
        let secs = start.elapsed().as_secs_f64();
        let flops = 2.0 * (batch * inp * out * reps) as f64;
        println!("matmul_nt: {:.2} Gflop/s (sink {sink})", flops / secs / 1e9);
    }
}
