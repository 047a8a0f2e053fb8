//! Primitive operations recorded on a [`Tape`].

use std::rc::Rc;

use super::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::kernels::conv::{self, Padding, SpectralConvGeom};
use crate::kernels::{matmul, norm, softmax};
use crate::par;
use crate::tensor::Tensor;

/// Batch statistics observed by a train-mode batch norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a> {
    /// Normalize with batch statistics (biased variance).
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

fn rc(v: &Var) -> Rc<Tensor> {
    Rc::clone(&v.value)
}

fn expect_rank(op: &str, v: &Var, rank: usize) -> Result<()> {
    if v.shape().len() != rank {
        return Err(shape_err(format!(
            "{op}: expected rank {rank}, got shape {:?}",
            v.shape()
        )));
    }
    Ok(())
}

fn expect_shape(op: &str, what: &str, v: &Var, shape: &[usize]) -> Result<()> {
    if v.shape() != shape {
        return Err(shape_err(format!(
            "{op}: {what} must have shape {shape:?}, got {:?}",
            v.shape()
        )));
    }
    Ok(())
}

fn same_shape(op: &str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    /// Dilated convolution along the spectral axis with zero padding
    /// `rate * (K - 1) / 2`, preserving the band count.
    ///
    /// `x: [B, Cin, S, H, W]`, `weight: [Cout, Cin, K]` (K odd), `bias: [Cout]`.
    pub fn atrous_conv_spectral(
        &mut self,
        x: &Var,
        weight: &Var,
        bias: &Var,
        rate: usize,
    ) -> Result<Var> {
        self.spectral_conv(x, weight, bias, rate, Padding::Zero)
    }

    pub fn spectral_conv(
        &mut self,
        x: &Var,
        weight: &Var,
        bias: &Var,
        rate: usize,
        padding: Padding,
    ) -> Result<Var> {
        const OP: &str = "atrous_conv_spectral";
        expect_rank(OP, x, 5)?;
        expect_rank(OP, weight, 3)?;
        let (xs, ws) = (x.shape(), weight.shape());
        if ws[1] != xs[1] {
            return Err(shape_err(format!(
                "{OP}: weight expects {} input channels, input has {}",
                ws[1], xs[1]
            )));
        }
        if ws[2] % 2 == 0 {
            return Err(shape_err(format!(
                "{OP}: kernel length {} must be odd",
                ws[2]
            )));
        }
        if rate == 0 {
            return Err(shape_err(format!("{OP}: dilation rate must be >= 1")));
        }
        expect_shape(OP, "bias", bias, &[ws[0]])?;
        let geom = SpectralConvGeom {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            bands: xs[2],
            plane: xs[3] * xs[4],
            taps: ws[2],
            rate,
            padding,
        };
        self.conv_node(
            OP,
            geom,
            x,
            weight,
            bias,
            vec![xs[0], ws[0], xs[2], xs[3], xs[4]],
        )
    }

    /// Per-location channel mixing: `weight: [Cout, Cin]`, `bias: [Cout]`.
    pub fn conv_pointwise(&mut self, x: &Var, weight: &Var, bias: &Var) -> Result<Var> {
        const OP: &str = "conv_pointwise";
        expect_rank(OP, x, 5)?;
        expect_rank(OP, weight, 2)?;
        let (xs, ws) = (x.shape(), weight.shape());
        if ws[1] != xs[1] {
            return Err(shape_err(format!(
                "{OP}: weight expects {} input channels, input has {}",
                ws[1], xs[1]
            )));
        }
        expect_shape(OP, "bias", bias, &[ws[0]])?;
        let geom = SpectralConvGeom {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            bands: 1,
            plane: xs[2] * xs[3] * xs[4],
            taps: 1,
            rate: 1,
            padding: Padding::Zero,
        };
        self.conv_node(
            OP,
            geom,
            x,
            weight,
            bias,
            vec![xs[0], ws[0], xs[2], xs[3], xs[4]],
        )
    }

    fn conv_node(
        &mut self,
        name: &'static str,
        geom: SpectralConvGeom,
        x: &Var,
        weight: &Var,
        bias: &Var,
        out_shape: Vec<usize>,
    ) -> Result<Var> {
        let out = conv::forward(&geom, x.data(), weight.data(), bias.data());
        let (xv, wv) = (rc(x), rc(weight));
        self.record(
            name,
            Tensor::from_parts(out_shape, out),
            &[x, weight, bias],
            move |dy, needs| {
                let dx = needs[0].then(|| conv::backward_input(&geom, dy, wv.data()));
                let (dw, db) = if needs[1] || needs[2] {
                    let (dw, db) = conv::backward_params(&geom, dy, xv.data());
                    (Some(dw), Some(db))
                } else {
                    (None, None)
                };
                vec![dx, dw, db]
            },
        )
    }

    /// Per-channel batch normalization of `[B, C, ...]`; statistics run over
    /// every non-channel axis. Train mode also returns the batch statistics
    /// so the caller can update running averages.
    pub fn batch_norm(
        &mut self,
        x: &Var,
        gamma: &Var,
        beta: &Var,
        mode: BnMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        const OP: &str = "batch_norm";
        let xs = x.shape();
        if xs.len() < 2 {
            return Err(shape_err(format!("{OP}: need [B, C, ...], got {xs:?}")));
        }
        let (batch, channels) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        expect_shape(OP, "gamma", gamma, &[channels])?;
        expect_shape(OP, "beta", beta, &[channels])?;
        let shape = xs.to_vec();
        match mode {
            BnMode::Train => {
                if batch * inner < 2 {
                    return Err(Error::DegenerateBatch(batch * inner));
                }
                let (mean, var) = norm::channel_stats(x.data(), batch, channels, inner);
                let (y, xhat) = norm::normalize(
                    x.data(),
                    batch,
                    channels,
                    inner,
                    &mean,
                    &var,
                    gamma.data(),
                    beta.data(),
                    eps,
                );
                let gv = rc(gamma);
                let var_saved = var.clone();
                let out = self.record(
                    OP,
                    Tensor::from_parts(shape, y),
                    &[x, gamma, beta],
                    move |dy, needs| {
                        let dx = needs[0].then(|| {
                            norm::backward_train_input(
                                dy,
                                &xhat,
                                batch,
                                channels,
                                inner,
                                &var_saved,
                                gv.data(),
                                eps,
                            )
                        });
                        let (dbeta, dgamma) = norm::param_grads(dy, &xhat, batch, channels, inner);
                        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
                    },
                )?;
                Ok((out, Some(BatchStats { mean, var })))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(shape_err(format!(
                        "{OP}: running statistics must have {channels} entries"
                    )));
                }
                let (y, xhat) = norm::normalize(
                    x.data(),
                    batch,
                    channels,
                    inner,
                    mean,
                    var,
                    gamma.data(),
                    beta.data(),
                    eps,
                );
                let gv = rc(gamma);
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let out = self.record(
                    OP,
                    Tensor::from_parts(shape, y),
                    &[x, gamma, beta],
                    move |dy, needs| {
                        let dx = needs[0].then(|| {
                            let mut dx = vec![0.0; dy.len()];
                            for (i, d) in dx.iter_mut().enumerate() {
                                let c = (i / inner) % channels;
                                *d = gv.data()[c] * inv[c] * dy[i];
                            }
                            dx
                        });
                        let (dbeta, dgamma) = norm::param_grads(dy, &xhat, batch, channels, inner);
                        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
                    },
                )?;
                Ok((out, None))
            }
        }
    }

    /// `x` if `x >= 0`, else `slope * x`. `slope` must lie in `[0, 1)`.
    pub fn leaky_relu(&mut self, x: &Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::Config(format!(
                "leaky_relu slope {slope} outside [0, 1)"
            )));
        }
        let y: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let xv = rc(x);
        self.record(
            "leaky_relu",
            Tensor::from_parts(x.shape().to_vec(), y),
            &[x],
            move |dy, _| {
                let dx = xv
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v >= 0.0 { g } else { slope * g })
                    .collect();
                vec![Some(dx)]
            },
        )
    }

    pub fn relu(&mut self, x: &Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: &Var) -> Result<Var> {
        let y: Vec<f64> = x.data().iter().map(|&v| sigmoid(v)).collect();
        let yv = Rc::new(y.clone());
        self.record(
            "sigmoid",
            Tensor::from_parts(x.shape().to_vec(), y),
            &[x],
            move |dy, _| {
                vec![Some(
                    yv.iter().zip(dy).map(|(s, g)| g * s * (1.0 - s)).collect(),
                )]
            },
        )
    }

    /// Mean over the spectral axis: `[B, C, S, H, W] -> [B, C, 1, H, W]`.
    pub fn adaptive_avg_pool_spectral(&mut self, x: &Var) -> Result<Var> {
        const OP: &str = "adaptive_avg_pool_spectral";
        expect_rank(OP, x, 5)?;
        let s = x.shape();
        let (bc, bands, plane) = (s[0] * s[1], s[2], s[3] * s[4]);
        let mut y = vec![0.0; bc * plane];
        for i in 0..bc {
            let out = &mut y[i * plane..][..plane];
            for band in x.data()[i * bands * plane..][..bands * plane].chunks(plane) {
                out.iter_mut().zip(band).for_each(|(o, v)| *o += v);
            }
            out.iter_mut().for_each(|o| *o /= bands as f64);
        }
        let shape = vec![s[0], s[1], 1, s[3], s[4]];
        self.record(OP, Tensor::from_parts(shape, y), &[x], move |dy, _| {
            let mut dx = vec![0.0; bc * bands * plane];
            for i in 0..bc {
                let g = &dy[i * plane..][..plane];
                for band in dx[i * bands * plane..][..bands * plane].chunks_mut(plane) {
                    band.iter_mut()
                        .zip(g)
                        .for_each(|(d, v)| *d = v / bands as f64);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Broadcasts a single-band tensor `[B, C, 1, H, W]` to `bands` bands.
    pub fn repeat_spectral(&mut self, x: &Var, bands: usize) -> Result<Var> {
        const OP: &str = "repeat_spectral";
        expect_rank(OP, x, 5)?;
        let s = x.shape();
        if s[2] != 1 || bands == 0 {
            return Err(shape_err(format!(
                "{OP}: need one band and bands >= 1, got {s:?}"
            )));
        }
        let (bc, plane) = (s[0] * s[1], s[3] * s[4]);
        let mut y = Vec::with_capacity(bc * bands * plane);
        for src in x.data().chunks(plane) {
            for _ in 0..bands {
                y.extend_from_slice(src);
            }
        }
        let shape = vec![s[0], s[1], bands, s[3], s[4]];
        self.record(OP, Tensor::from_parts(shape, y), &[x], move |dy, _| {
            let mut dx = vec![0.0; bc * plane];
            for i in 0..bc {
                let out = &mut dx[i * plane..][..plane];
                for band in dy[i * bands * plane..][..bands * plane].chunks(plane) {
                    out.iter_mut().zip(band).for_each(|(o, v)| *o += v);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, x: &Var) -> Result<Var> {
        let n = *x
            .shape()
            .last()
            .ok_or_else(|| shape_err("softmax: empty shape"))?;
        let y = softmax::softmax_rows(x.data(), n);
        let yv = Rc::new(y.clone());
        self.record(
            "softmax",
            Tensor::from_parts(x.shape().to_vec(), y),
            &[x],
            move |dy, _| vec![Some(softmax::softmax_rows_backward(&yv, dy, n))],
        )
    }

    /// Affine map over the last axis: `weight: [Dout, Din]`, `bias: [Dout]`.
    pub fn linear(&mut self, x: &Var, weight: &Var, bias: Option<&Var>) -> Result<Var> {
        const OP: &str = "linear";
        expect_rank(OP, weight, 2)?;
        let (dout, din) = (weight.shape()[0], weight.shape()[1]);
        if x.shape().last() != Some(&din) {
            return Err(shape_err(format!(
                "{OP}: input last axis {:?} does not match weight input width {din}",
                x.shape()
            )));
        }
        if let Some(b) = bias {
            expect_shape(OP, "bias", b, &[dout])?;
        }
        let y = matmul::linear_forward(x.data(), weight.data(), bias.map(|b| b.data()), din, dout);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let (xv, wv) = (rc(x), rc(weight));
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record(
            OP,
            Tensor::from_parts(shape, y),
            &inputs,
            move |dy, needs| {
                let mut out = vec![
                    needs[0].then(|| matmul::linear_backward_input(dy, wv.data(), din, dout)),
                    needs[1].then(|| matmul::linear_backward_weight(dy, xv.data(), din, dout)),
                ];
                if needs.len() == 3 {
                    out.push(needs[2].then(|| matmul::column_sums(dy, dout)));
                }
                out
            },
        )
    }

    /// Mean over rows of `-log softmax(logits)[label]`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: &Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "cross_entropy";
        expect_rank(OP, logits, 2)?;
        let (rows, classes) = (logits.shape()[0], logits.shape()[1]);
        if labels.len() != rows {
            return Err(shape_err(format!(
                "{OP}: {rows} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label {
                label: bad,
                classes,
            });
        }
        let mut loss = 0.0;
        for (row, &l) in logits.data().chunks(classes).zip(labels) {
            loss += softmax::log_sum_exp(row) - row[l];
        }
        loss /= rows as f64;
        let lv = rc(logits);
        let labels = labels.to_vec();
        self.record(OP, Tensor::scalar(loss), &[logits], move |dy, _| {
            let mut dx = softmax::softmax_rows(lv.data(), classes);
            let scale = dy[0] / rows as f64;
            for (row, &l) in dx.chunks_mut(classes).zip(&labels) {
                row[l] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![Some(dx)]
        })
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("add", a, b)?;
        let y = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.record(
            "add",
            Tensor::from_parts(a.shape().to_vec(), y),
            &[a, b],
            |dy, needs| vec![needs[0].then(|| dy.to_vec()), needs[1].then(|| dy.to_vec())],
        )
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("sub", a, b)?;
        let y = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        self.record(
            "sub",
            Tensor::from_parts(a.shape().to_vec(), y),
            &[a, b],
            |dy, needs| {
                vec![
                    needs[0].then(|| dy.to_vec()),
                    needs[1].then(|| dy.iter().map(|g| -g).collect()),
                ]
            },
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("mul", a, b)?;
        let y = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let (av, bv) = (rc(a), rc(b));
        self.record(
            "mul",
            Tensor::from_parts(a.shape().to_vec(), y),
            &[a, b],
            move |dy, needs| {
                vec![
                    needs[0].then(|| dy.iter().zip(bv.data()).map(|(g, v)| g * v).collect()),
                    needs[1].then(|| dy.iter().zip(av.data()).map(|(g, v)| g * v).collect()),
                ]
            },
        )
    }

    pub fn scale(&mut self, x: &Var, c: f64) -> Result<Var> {
        let y = x.data().iter().map(|v| v * c).collect();
        self.record(
            "scale",
            Tensor::from_parts(x.shape().to_vec(), y),
            &[x],
            move |dy, _| vec![Some(dy.iter().map(|g| g * c).collect())],
        )
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: &Var) -> Result<Var> {
        let n = x.value.numel();
        let total = x.data().iter().sum();
        self.record("sum", Tensor::scalar(total), &[x], move |dy, _| {
            vec![Some(vec![dy[0]; n])]
        })
    }

    /// Batched matrix product `[Ba, M, K] x [Bb, K, N] -> [B, M, N]`.
    ///
    /// A batch extent of 1 broadcasts. With `transpose_b` the second operand
    /// is stored as `[Bb, N, K]`.
    pub fn bmm(&mut self, a: &Var, b: &Var, transpose_b: bool) -> Result<Var> {
        const OP: &str = "bmm";
        expect_rank(OP, a, 3)?;
        expect_rank(OP, b, 3)?;
        let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let (bb, kb, n) = match transpose_b {
            false => (b.shape()[0], b.shape()[1], b.shape()[2]),
            true => (b.shape()[0], b.shape()[2], b.shape()[1]),
        };
        if k != kb {
            return Err(shape_err(format!(
                "{OP}: inner extents differ ({:?} x {:?}, transpose_b={transpose_b})",
                a.shape(),
                b.shape()
            )));
        }
        let batch = ba.max(bb);
        if (ba != 1 && ba != batch) || (bb != 1 && bb != batch) {
            return Err(shape_err(format!(
                "{OP}: batch extents {ba} and {bb} do not broadcast"
            )));
        }
        let (ad, bd) = (a.data(), b.data());
        let mut y = vec![0.0; batch * m * n];
        par::for_each_chunk(&mut y, m * n, |i, out| {
            let ai = if ba == 1 { 0 } else { i };
            let bi = if bb == 1 { 0 } else { i };
            matmul::gemm_acc(
                out,
                &ad[ai * m * k..][..m * k],
                false,
                &bd[bi * k * n..][..k * n],
                transpose_b,
                m,
                k,
                n,
            );
        });
        let (av, bv) = (rc(a), rc(b));
        self.record(
            OP,
            Tensor::from_parts(vec![batch, m, n], y),
            &[a, b],
            move |dy, needs| {
                let mut da = needs[0].then(|| vec![0.0; ba * m * k]);
                let mut db = needs[1].then(|| vec![0.0; bb * k * n]);
                for i in 0..batch {
                    let ai = if ba == 1 { 0 } else { i };
                    let bi = if bb == 1 { 0 } else { i };
                    let g = &dy[i * m * n..][..m * n];
                    let a_i = &av.data()[ai * m * k..][..m * k];
                    let b_i = &bv.data()[bi * k * n..][..k * n];
                    if let Some(da) = &mut da {
                        // dA = dY * op(B)^T
                        matmul::gemm_acc(
                            &mut da[ai * m * k..][..m * k],
                            g,
                            false,
                            b_i,
                            !transpose_b,
                            m,
                            n,
                            k,
                        );
                    }
                    if let Some(db) = &mut db {
                        let out = &mut db[bi * k * n..][..k * n];
                        match transpose_b {
                            false => matmul::gemm_acc(out, a_i, true, g, false, k, m, n),
                            true => matmul::gemm_acc(out, g, true, a_i, false, n, m, k),
                        }
                    }
                }
                vec![da, db]
            },
        )
    }

    /// Multiplies every row of the last axis by `v: [D]`.
    pub fn mul_last(&mut self, x: &Var, v: &Var) -> Result<Var> {
        const OP: &str = "mul_last";
        expect_rank(OP, v, 1)?;
        let d = v.shape()[0];
        if x.shape().last() != Some(&d) {
            return Err(shape_err(format!("{OP}: {:?} vs vector of {d}", x.shape())));
        }
        let y = x
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(v.data()).map(|(a, b)| a * b))
            .collect();
        let (xv, vv) = (rc(x), rc(v));
        self.record(
            OP,
            Tensor::from_parts(x.shape().to_vec(), y),
            &[x, v],
            move |dy, needs| {
                let dx = needs[0].then(|| {
                    dy.chunks(d)
                        .flat_map(|row| row.iter().zip(vv.data()).map(|(a, b)| a * b))
                        .collect()
                });
                let dv = needs[1].then(|| {
                    let mut dv = vec![0.0; d];
                    for (g, xr) in dy.chunks(d).zip(xv.data().chunks(d)) {
                        for j in 0..d {
                            dv[j] += g[j] * xr[j];
                        }
                    }
                    dv
                });
                vec![dx, dv]
            },
        )
    }

    /// Weighted L1 feature difference between node sets:
    /// `e[b, i, j] = sum_k w[k] * |p[b, i, k] - q[b, j, k]|`.
    pub fn pairwise_abs_diff(&mut self, p: &Var, q: &Var, w: &Var) -> Result<Var> {
        const OP: &str = "pairwise_abs_diff";
        expect_rank(OP, p, 3)?;
        same_shape(OP, p, q)?;
        let (batch, n, d) = (p.shape()[0], p.shape()[1], p.shape()[2]);
        expect_shape(OP, "weight", w, &[d])?;
        let (pd, qd, wd) = (p.data(), q.data(), w.data());
        let mut y = vec![0.0; batch * n * n];
        par::for_each_chunk(&mut y, n, |row, out| {
            let (b, i) = (row / n, row % n);
            let pi = &pd[(b * n + i) * d..][..d];
            for (j, o) in out.iter_mut().enumerate() {
                let qj = &qd[(b * n + j) * d..][..d];
                *o = (0..d).map(|k| wd[k] * (pi[k] - qj[k]).abs()).sum();
            }
        });
        let (pv, qv, wv) = (rc(p), rc(q), rc(w));
        self.record(
            OP,
            Tensor::from_parts(vec![batch, n, n], y),
            &[p, q, w],
            move |dy, needs| {
                let mut dp = vec![0.0; batch * n * d];
                let mut dq = vec![0.0; batch * n * d];
                let mut dw = vec![0.0; d];
                for b in 0..batch {
                    for i in 0..n {
                        for j in 0..n {
                            let g = dy[(b * n + i) * n + j];
                            for k in 0..d {
                                let diff =
                                    pv.data()[(b * n + i) * d + k] - qv.data()[(b * n + j) * d + k];
                                let sign = if diff > 0.0 {
                                    1.0
                                } else if diff < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                };
                                dp[(b * n + i) * d + k] += g * wv.data()[k] * sign;
                                dq[(b * n + j) * d + k] -= g * wv.data()[k] * sign;
                                dw[k] += g * diff.abs();
                            }
                        }
                    }
                }
                vec![
                    needs[0].then_some(dp),
                    needs[1].then_some(dq),
                    needs[2].then_some(dw),
                ]
            },
        )
    }

    /// Averages the spectral axis and lays pixels out as graph nodes:
    /// `[B, C, S, H, W] -> [B, H*W, C]`, node index `r * W + c`.
    pub fn collapse_spectrum(&mut self, x: &Var) -> Result<Var> {
        const OP: &str = "collapse_spectrum";
        expect_rank(OP, x, 5)?;
        let s = x.shape();
        let (batch, ch, bands, plane) = (s[0], s[1], s[2], s[3] * s[4]);
        let mut y = vec![0.0; batch * plane * ch];
        for b in 0..batch {
            for c in 0..ch {
                let src = &x.data()[(b * ch + c) * bands * plane..][..bands * plane];
                for p in 0..plane {
                    let mut acc = 0.0;
                    for band in 0..bands {
                        acc += src[band * plane + p];
                    }
                    y[(b * plane + p) * ch + c] = acc / bands as f64;
                }
            }
        }
        self.record(
            OP,
            Tensor::from_parts(vec![batch, plane, ch], y),
            &[x],
            move |dy, _| {
                let mut dx = vec![0.0; batch * ch * bands * plane];
                for b in 0..batch {
                    for c in 0..ch {
                        let dst = &mut dx[(b * ch + c) * bands * plane..][..bands * plane];
                        for p in 0..plane {
                            let g = dy[(b * plane + p) * ch + c] / bands as f64;
                            for band in 0..bands {
                                dst[band * plane + p] = g;
                            }
                        }
                    }
                }
                vec![Some(dx)]
            },
        )
    }

    /// Mean over the node axis: `[B, N, D] -> [B, D]`.
    pub fn mean_nodes(&mut self, x: &Var) -> Result<Var> {
        const OP: &str = "mean_nodes";
        expect_rank(OP, x, 3)?;
        let (batch, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut y = vec![0.0; batch * d];
        for b in 0..batch {
            let out = &mut y[b * d..][..d];
            for row in x.data()[b * n * d..][..n * d].chunks(d) {
                out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            out.iter_mut().for_each(|o| *o /= n as f64);
        }
        self.record(
            OP,
            Tensor::from_parts(vec![batch, d], y),
            &[x],
            move |dy, _| {
                let mut dx = Vec::with_capacity(batch * n * d);
                for b in 0..batch {
                    for _ in 0..n {
                        dx.extend(dy[b * d..][..d].iter().map(|g| g / n as f64));
                    }
                }
                vec![Some(dx)]
            },
        )
    }

    /// Concatenates two `[R, D1]`, `[R, D2]` tensors along the last axis.
    pub fn concat_last(&mut self, a: &Var, b: &Var) -> Result<Var> {
        const OP: &str = "concat_last";
        expect_rank(OP, a, 2)?;
        expect_rank(OP, b, 2)?;
        let (rows, da, db) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        if b.shape()[0] != rows {
            return Err(shape_err(format!(
                "{OP}: row counts {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut y = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            y.extend_from_slice(&a.data()[r * da..][..da]);
            y.extend_from_slice(&b.data()[r * db..][..db]);
        }
        self.record(
            OP,
            Tensor::from_parts(vec![rows, da + db], y),
            &[a, b],
            move |dy, needs| {
                let mut ga = Vec::with_capacity(rows * da);
                let mut gb = Vec::with_capacity(rows * db);
                for row in dy.chunks(da + db) {
                    ga.extend_from_slice(&row[..da]);
                    gb.extend_from_slice(&row[da..]);
                }
                vec![needs[0].then_some(ga), needs[1].then_some(gb)]
            },
        )
    }

    /// Channel-gated blend `g * f + (1 - g) * m` with `g: [B, D]` broadcast
    /// over the nodes of `f, m: [B, N, D]`.
    pub fn gate_mix(&mut self, g: &Var, f: &Var, m: &Var) -> Result<Var> {
        const OP: &str = "gate_mix";
        expect_rank(OP, g, 2)?;
        expect_rank(OP, f, 3)?;
        same_shape(OP, f, m)?;
        let (batch, n, d) = (f.shape()[0], f.shape()[1], f.shape()[2]);
        expect_shape(OP, "gate", g, &[batch, d])?;
        let gate = move |i: usize, gd: &[f64]| gd[(i / (n * d)) * d + i % d];
        let y = (0..batch * n * d)
            .map(|i| {
                let gi = gate(i, g.data());
                gi * f.data()[i] + (1.0 - gi) * m.data()[i]
            })
            .collect();
        let (gv, fv, mv) = (rc(g), rc(f), rc(m));
        self.record(
            OP,
            Tensor::from_parts(f.shape().to_vec(), y),
            &[g, f, m],
            move |dy, needs| {
                let dg = needs[0].then(|| {
                    let mut dg = vec![0.0; batch * d];
                    for (i, gy) in dy.iter().enumerate() {
                        dg[(i / (n * d)) * d + i % d] += gy * (fv.data()[i] - mv.data()[i]);
                    }
                    dg
                });
                let df =
                    needs[1].then(|| (0..dy.len()).map(|i| dy[i] * gate(i, gv.data())).collect());
                let dm = needs[2].then(|| {
                    (0..dy.len())
                        .map(|i| dy[i] * (1.0 - gate(i, gv.data())))
                        .collect()
                });
                vec![dg, df, dm]
            },
        )
    }

    /// Picks node `index` from `[B, N, D]`, giving `[B, D]`.
    pub fn select_node(&mut self, x: &Var, index: usize) -> Result<Var> {
        const OP: &str = "select_node";
        expect_rank(OP, x, 3)?;
        let (batch, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if index >= n {
            return Err(shape_err(format!("{OP}: node {index} out of {n}")));
        }
        let y = (0..batch)
            .flat_map(|b| x.data()[(b * n + index) * d..][..d].iter().copied())
            .collect();
        self.record(
            OP,
            Tensor::from_parts(vec![batch, d], y),
            &[x],
            move |dy, _| {
                let mut dx = vec![0.0; batch * n * d];
                for b in 0..batch {
                    dx[(b * n + index) * d..][..d].copy_from_slice(&dy[b * d..][..d]);
                }
                vec![Some(dx)]
            },
        )
    }

    pub fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != x.value.numel() {
            return Err(shape_err(format!("reshape: {:?} -> {shape:?}", x.shape())));
        }
        self.record(
            "reshape",
            Tensor::from_parts(shape.to_vec(), x.data().to_vec()),
            &[x],
            |dy, _| vec![Some(dy.to_vec())],
        )
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
