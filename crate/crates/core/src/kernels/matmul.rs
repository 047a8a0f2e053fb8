use crate::par;

/// `out += op(a) * op(b)` for row-major `op(a): m x k`, `op(b): k x n`.
///
/// `ta`/`tb` mean the stored operand is the transpose (`k x m` / `n x k`).
pub fn gemm_acc(
    out: &mut [f64],
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..][..n];
        match tb {
            false => {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    if av == 0.0 {
                        continue;
                    }
                    for (o, bv) in row.iter_mut().zip(&b[p * n..][..n]) {
                        *o += av * bv;
                    }
                }
            }
            true => {
                for (j, o) in row.iter_mut().enumerate() {
                    let bj = &b[j * k..][..k];
                    let mut acc = 0.0;
                    if ta {
                        for p in 0..k {
                            acc += a[p * m + i] * bj[p];
                        }
                    } else {
                        acc = a[i * k..][..k].iter().zip(bj).map(|(x, y)| x * y).sum();
                    }
                    *o += acc;
                }
            }
        }
    }
}

/// Affine map over rows: `y[r, o] = bias[o] + sum_i x[r, i] * w[o, i]`.
pub fn linear_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    din: usize,
    dout: usize,
) -> Vec<f64> {
    let rows = x.len() / din;
    let mut y = vec![0.0; rows * dout];
    par::for_each_chunk(&mut y, dout, |r, yr| {
        let xr = &x[r * din..][..din];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wo = &w[o * din..][..din];
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for (xi, wi) in xr.iter().zip(wo) {
                acc += xi * wi;
            }
            *yo = acc;
        }
    });
    y
}

pub fn linear_backward_input(dy: &[f64], w: &[f64], din: usize, dout: usize) -> Vec<f64> {
    let rows = dy.len() / dout;
    let mut dx = vec![0.0; rows * din];
    par::for_each_chunk(&mut dx, din, |r, dxr| {
        gemm_acc(dxr, &dy[r * dout..][..dout], false, w, false, 1, dout, din);
    });
    dx
}

/// Weight gradient `[dout, din]`; rows summed in ascending order.
pub fn linear_backward_weight(dy: &[f64], x: &[f64], din: usize, dout: usize) -> Vec<f64> {
    let rows = dy.len() / dout;
    let mut dw = vec![0.0; dout * din];
    par::for_each_chunk(&mut dw, din, |o, dwo| {
        for r in 0..rows {
            let g = dy[r * dout + o];
            if g == 0.0 {
                continue;
            }
            for (d, xi) in dwo.iter_mut().zip(&x[r * din..][..din]) {
                *d += g * xi;
            }
        }
    });
    dw
}

pub fn column_sums(dy: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in dy.chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}
