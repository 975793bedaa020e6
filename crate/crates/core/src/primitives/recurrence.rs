//! Linear attention and the outer-product head state.
//!
//! With a state `X` of shape `(M, P)` updated as `X <- X + k_t v_t^T`, the
//! readout is `y_t = X_t^T q_t` where `X_t` already includes step `t`.
//! Equivalently `y_t = sum_{s <= t} (q_t . k_s) v_s`, which is the parallel
//! (masked quadratic) form.

use super::linalg::matmul;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Recurrent,
    Parallel,
}

fn as_matrix(x: &Tensor, name: &str) -> Result<(usize, usize)> {
    match x.shape[..] {
        [t] => Ok((t, 1)),
        [t, m] => Ok((t, m)),
        _ => Err(Error::shape(format!("{name} must be (T) or (T, M), got {:?}", x.shape))),
    }
}

/// Linear attention over per-step scalars (`(T)`) or vectors (`q, k: (T, M)`,
/// `v: (T, P)`). Output has the shape of `v`.
pub fn linear_attention(q: &Tensor, k: &Tensor, v: &Tensor, mode: Mode) -> Result<Tensor> {
    let (t, m) = as_matrix(q, "q")?;
    let (tk, mk) = as_matrix(k, "k")?;
    let (tv, p) = as_matrix(v, "v")?;
    if t != tk || t != tv {
        return Err(Error::shape(format!("sequence lengths differ: q {t}, k {tk}, v {tv}")));
    }
    if m != mk {
        return Err(Error::shape(format!("q and k widths differ: {m} vs {mk}")));
    }
    let y = match mode {
        Mode::Recurrent => recurrent(&q.data, &k.data, &v.data, t, m, p).0,
        Mode::Parallel => {
            let kt: Vec<f64> = (0..m * t).map(|i| k.data[(i % t) * m + i / t]).collect();
            let mut scores = matmul(&q.data, &kt, t, m, t);
            for i in 0..t {
                scores[i * t + i + 1..(i + 1) * t].iter_mut().for_each(|s| *s = 0.0);
            }
            matmul(&scores, &v.data, t, t, p)
        }
    };
    Tensor::new(v.shape.clone(), y)
}

fn recurrent(q: &[f64], k: &[f64], v: &[f64], t: usize, m: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m * p];
    let mut y = vec![0.0; t * p];
    for s in 0..t {
        for i in 0..m {
            let ki = k[s * m + i];
            for j in 0..p {
                x[i * p + j] += ki * v[s * p + j];
            }
        }
        for i in 0..m {
            let qi = q[s * m + i];
            for j in 0..p {
                y[s * p + j] += x[i * p + j] * qi;
            }
        }
    }
    (y, x)
}

/// Runs one head of the outer-product state update over `(T, M)` inputs.
/// Returns the readouts `(T, M)` and the final `(M, M)` state.
pub fn headed_state_update(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let (t, m) = as_matrix(q, "q")?;
    for (x, n) in [(k, "k"), (v, "v")] {
        if as_matrix(x, n)? != (t, m) {
            return Err(Error::shape(format!("{n} has shape {:?}, expected ({t}, {m})", x.shape)));
        }
    }
    let (y, x) = recurrent(&q.data, &k.data, &v.data, t, m, m);
    Ok((Tensor::new(q.shape.clone(), y)?, Tensor::new(vec![m, m], x)?))
}

/// Number of state entries held by one head of width `m`.
pub fn head_state_size(m: usize) -> usize {
    m * m
}
