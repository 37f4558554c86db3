//! Raw `f32` loops shared by the tape's forward and backward rules.

/// `out[m,n] += a[m,k] · b[k,n]`.
pub fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// `da[m,k] += dc[m,n] · b[k,n]ᵀ`.
pub(crate) fn matmul_grad_lhs(dc: &[f32], b: &[f32], da: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            da[i * k + p] += dot(dc_row, b_row);
        }
    }
}

/// `db[k,n] += a[m,k]ᵀ · dc[m,n]`.
pub(crate) fn matmul_grad_rhs(a: &[f32], dc: &[f32], db: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let db_row = &mut db[p * n..(p + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(dc_row) {
                *d += a_ip * g;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent partial sums so the loop vectorises.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    acc.iter().sum::<f32>() + tail
}

/// Max-subtracted softmax over consecutive rows of length `n`.
pub fn softmax_rows(x: &[f32], out: &mut [f32], n: usize) {
    for (row, out_row) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for (o, &v) in out_row.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        out_row.iter_mut().for_each(|o| *o *= inv);
    }
}
