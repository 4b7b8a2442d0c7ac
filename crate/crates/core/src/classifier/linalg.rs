//! Row-major dense helpers used by the model code.

/// `a (rows × inner) · b (inner × cols)`.
pub fn matmul(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &mut out[i * cols..(i + 1) * cols];
        for k in 0..inner {
            let aik = a[i * inner + k];
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in row.iter_mut().zip(&b[k * cols..(k + 1) * cols]) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `out += aᵀ (inner × rows)ᵀ · b (inner × cols)`, i.e. `out (rows × cols) += Σ_k a[k][i] b[k][j]`.
pub fn add_at_b(out: &mut [f64], a: &[f64], inner: usize, rows: usize, b: &[f64], cols: usize) {
    for k in 0..inner {
        for i in 0..rows {
            let aki = a[k * rows + i];
            if aki == 0.0 {
                continue;
            }
            for (o, &bkj) in out[i * cols..(i + 1) * cols]
                .iter_mut()
                .zip(&b[k * cols..(k + 1) * cols])
            {
                *o += aki * bkj;
            }
        }
    }
}

/// `a (rows × inner) · bᵀ` where `b` is `cols × inner`.
pub fn matmul_bt(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = dot(
                &a[i * inner..(i + 1) * inner],
                &b[j * inner..(j + 1) * inner],
            );
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against target `y`, computed from the logit.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// In-place numerically stable softmax.
pub fn softmax(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
