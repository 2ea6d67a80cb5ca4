//! Thin strided-GEMM wrapper plus the row-wise kernels shared by the batch
//! and incremental forward passes.

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
    pub offset: usize,
}

impl Layout {
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            rs: cols,
            cs: 1,
            offset: 0,
        }
    }

    /// `cols` columns starting at column `col` of a row-major matrix with `stride` columns.
    pub fn column_block(rows: usize, cols: usize, stride: usize, col: usize) -> Self {
        Self {
            rows,
            cols,
            rs: stride,
            cs: 1,
            offset: col,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            offset: self.offset,
        }
    }

    fn fits(&self, len: usize) -> bool {
        self.rows == 0 || self.cols == 0 || self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < len
    }
}

/// `c = alpha * a @ b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(alpha: f64, a: &[f64], la: Layout, b: &[f64], lb: Layout, beta: f64, c: &mut [f64], lc: Layout) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension");
    assert_eq!(lc.rows, la.rows, "gemm output rows");
    assert_eq!(lc.cols, lb.cols, "gemm output cols");
    assert!(
        la.fits(a.len()) && lb.fits(b.len()) && lc.fits(c.len()),
        "gemm operand out of bounds"
    );
    if lc.rows == 0 || lc.cols == 0 {
        return;
    }
    if la.cols == 0 {
        for i in 0..lc.rows {
            for j in 0..lc.cols {
                let x = &mut c[lc.offset + i * lc.rs + j * lc.cs];
                *x = if beta == 0.0 { 0.0 } else { beta * *x };
            }
        }
        return;
    }
    // SAFETY: every operand's strided extent was bounds-checked above and `c`
    // is a unique borrow, so the kernel reads and writes only valid memory.
    unsafe {
        matrixmultiply::dgemm(
            la.rows,
            la.cols,
            lb.cols,
            alpha,
            a.as_ptr().add(la.offset),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr().add(lb.offset),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

/// `out = x @ w (+ bias)` for dense row-major `x: [m, k]`, `w: [k, n]`.
pub(crate) fn linear(x: &[f64], w: &[f64], bias: Option<&[f64]>, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(n) {
            row.copy_from_slice(b);
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    gemm(
        1.0,
        x,
        Layout::dense(m, k),
        w,
        Layout::dense(k, n),
        beta,
        &mut out,
        Layout::dense(m, n),
    );
    out
}

/// Backward of `y = x @ w + b`: accumulates `dw += x^T dy`, `db += colsum(dy)`
/// and returns `dx = dy @ w^T`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    gemm(
        1.0,
        x,
        Layout::dense(m, k).t(),
        dy,
        Layout::dense(m, n),
        1.0,
        dw,
        Layout::dense(k, n),
    );
    if let Some(db) = db {
        for row in dy.chunks_exact(n) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
    }
    let mut dx = vec![0.0; m * k];
    gemm(
        1.0,
        dy,
        Layout::dense(m, n),
        w,
        Layout::dense(k, n).t(),
        0.0,
        &mut dx,
        Layout::dense(m, k),
    );
    dx
}

/// `out += x @ w` for a single row vector.
pub(crate) fn vecmat_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let n = out.len();
    debug_assert_eq!(w.len(), x.len() * n);
    for (xi, row) in x.iter().zip(w.chunks_exact(n)) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Returns `(y, xhat, rstd)`.
pub(crate) fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / dim;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().sum::<f64>() / dim as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for j in 0..dim {
            let h = (xr[j] - mean) * s;
            xhat[r * dim + j] = h;
            y[r * dim + j] = gain[j] * h + bias[j];
        }
    }
    (y, xhat, rstd)
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    dim: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; dim];
    for (r, &s) in rstd.iter().enumerate() {
        let span = r * dim..(r + 1) * dim;
        let (dyr, hr) = (&dy[span.clone()], &xhat[span.clone()]);
        let mut mean_d = 0.0;
        let mut mean_dh = 0.0;
        for j in 0..dim {
            dgain[j] += dyr[j] * hr[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_d += dxhat[j];
            mean_dh += dxhat[j] * hr[j];
        }
        mean_d /= dim as f64;
        mean_dh /= dim as f64;
        for (j, out) in dx[span].iter_mut().enumerate() {
            *out = s * (dxhat[j] - mean_d - hr[j] * mean_dh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// tanh-approximated GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// In-place numerically stable softmax.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (5, 3, 4);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let want = naive(&a, &b, m, k, n);
        for (x, y) in linear(&a, &b, None, m, k, n).iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // (b^T)^T through a transposed layout
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm(
            1.0,
            &a,
            Layout::dense(m, k),
            &bt,
            Layout::dense(n, k).t(),
            0.0,
            &mut c,
            Layout::dense(m, n),
        );
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
