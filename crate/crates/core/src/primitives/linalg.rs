//! Dense kernels over row-major `f64` slices.

/// A strided view of a matrix: `a[i * rs + j * cs]`.
#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows x cols` block with leading dimension `ld`.
    pub fn rows(data: &'a [f64], ld: usize) -> Self {
        View { data, rs: ld, cs: 1 }
    }

    /// The transpose of a row-major block with leading dimension `ld`.
    pub fn cols(data: &'a [f64], ld: usize) -> Self {
        View { data, rs: 1, cs: ld }
    }

    pub fn t(self) -> Self {
        View { data: self.data, rs: self.cs, cs: self.rs }
    }
}

/// `C = beta * C + A B` where `A` is `m x k`, `B` is `k x n` and `C` is a
/// row-major `m x n` block with leading dimension `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_into(m: usize, k: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64], ldc: usize) {
    gemm_strided(m, k, n, a, b, beta, c, ldc, 1);
}

/// `C = beta * C + A B` with an arbitrarily strided output `c[i * rsc + j * csc]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_strided(m: usize, k: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64], rsc: usize, csc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(a.data.len() > (m - 1) * a.rs + (k - 1) * a.cs);
    assert!(b.data.len() > (k - 1) * b.rs + (n - 1) * b.cs);
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `x (m x k) @ w (k x n)`, both row-major.
pub fn matmul(x: &[f64], w: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm_into(m, k, n, View::rows(x, k), View::rows(w, n), 0.0, &mut out, n);
    out
}

/// `out += x (m x k) @ w (k x n)`.
pub fn matmul_acc(x: &[f64], w: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm_into(m, k, n, View::rows(x, k), View::rows(w, n), 1.0, out, n);
}

/// `dy (m x n) @ w^T` where `w` is `k x n`: the input gradient of `x @ w`.
pub fn matmul_bt(dy: &[f64], w: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    gemm_into(m, n, k, View::rows(dy, n), View::cols(w, n), 0.0, &mut out, k);
    out
}

/// `dy (m x n) @ w^T` accumulated into `out (m x k)`.
pub fn matmul_bt_acc(dy: &[f64], w: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm_into(m, n, k, View::rows(dy, n), View::cols(w, n), 1.0, out, k);
}

/// `dw += x^T (k x m) @ dy (m x n)`: the weight gradient of `x @ w`.
pub fn matmul_at_acc(x: &[f64], dy: &[f64], m: usize, k: usize, n: usize, dw: &mut [f64]) {
    gemm_into(k, m, n, View::cols(x, k), View::rows(dy, n), 1.0, dw, n);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of `silu` at `x`.
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// In-place softmax of a row; returns the log of the normalizer.
pub fn softmax_row(row: &mut [f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
    m + s.ln()
}

pub fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
