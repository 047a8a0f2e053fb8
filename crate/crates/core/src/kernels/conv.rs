//! Convolution along the spectral axis of `[B, C, S, H, W]` tensors.
//!
//! The kernel spans `K` taps along `S` and a single pixel spatially, so every
//! spatial location is an independent 1-D signal. Spatial pixels are laid out
//! contiguously (`plane = H * W`) and processed as one row per band.

use crate::par;

/// Boundary handling along the spectral axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `rate * (K - 1) / 2` on both ends.
    Zero,
    /// Wrap-around indexing; used to check shift equivariance.
    Circular,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub bands: usize,
    pub plane: usize,
    pub taps: usize,
    pub rate: usize,
    pub padding: Padding,
}

impl SpectralConvGeom {
    pub fn pad(&self) -> usize {
        self.rate * (self.taps - 1) / 2
    }

    /// Source band feeding output band `s` through tap `k`, if it exists.
    #[inline]
    pub fn source(&self, s: usize, k: usize) -> Option<usize> {
        let t = (s + self.rate * k) as isize - self.pad() as isize;
        match self.padding {
            Padding::Zero => (t >= 0 && (t as usize) < self.bands).then_some(t as usize),
            Padding::Circular => Some(t.rem_euclid(self.bands as isize) as usize),
        }
    }

    fn volume(&self) -> usize {
        self.bands * self.plane
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.cout * self.volume()
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn forward(g: &SpectralConvGeom, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let vol = g.volume();
    let mut out = vec![0.0; g.output_len()];
    par::for_each_chunk(&mut out, vol, |idx, y| {
        let (b, co) = (idx / g.cout, idx % g.cout);
        y.fill(bias[co]);
        for ci in 0..g.cin {
            let xs = &x[(b * g.cin + ci) * vol..][..vol];
            for k in 0..g.taps {
                let wv = w[(co * g.cin + ci) * g.taps + k];
                if wv == 0.0 {
                    continue;
                }
                for s in 0..g.bands {
                    if let Some(t) = g.source(s, k) {
                        axpy(
                            &mut y[s * g.plane..][..g.plane],
                            wv,
                            &xs[t * g.plane..][..g.plane],
                        );
                    }
                }
            }
        }
    });
    out
}

pub fn backward_input(g: &SpectralConvGeom, dy: &[f64], w: &[f64]) -> Vec<f64> {
    let vol = g.volume();
    let mut dx = vec![0.0; g.batch * g.cin * vol];
    par::for_each_chunk(&mut dx, vol, |idx, dxs| {
        let (b, ci) = (idx / g.cin, idx % g.cin);
        for co in 0..g.cout {
            let dys = &dy[(b * g.cout + co) * vol..][..vol];
            for k in 0..g.taps {
                let wv = w[(co * g.cin + ci) * g.taps + k];
                for s in 0..g.bands {
                    if let Some(t) = g.source(s, k) {
                        axpy(
                            &mut dxs[t * g.plane..][..g.plane],
                            wv,
                            &dys[s * g.plane..][..g.plane],
                        );
                    }
                }
            }
        }
    });
    dx
}

/// Gradients of the weight `[cout, cin, taps]` and bias `[cout]`.
pub fn backward_params(g: &SpectralConvGeom, dy: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let vol = g.volume();
    let row = g.cin * g.taps + 1;
    let mut packed = vec![0.0; g.cout * row];
    par::for_each_chunk(&mut packed, row, |co, out| {
        let (dw, db) = out.split_at_mut(g.cin * g.taps);
        for b in 0..g.batch {
            let dys = &dy[(b * g.cout + co) * vol..][..vol];
            db[0] += dys.iter().sum::<f64>();
            for ci in 0..g.cin {
                let xs = &x[(b * g.cin + ci) * vol..][..vol];
                for k in 0..g.taps {
                    let mut acc = 0.0;
                    for s in 0..g.bands {
                        if let Some(t) = g.source(s, k) {
                            let yrow = &dys[s * g.plane..][..g.plane];
                            let xrow = &xs[t * g.plane..][..g.plane];
                            acc += yrow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    dw[ci * g.taps + k] += acc;
                }
            }
        }
    });
    let mut dw = Vec::with_capacity(g.cout * g.cin * g.taps);
    let mut db = Vec::with_capacity(g.cout);
    for chunk in packed.chunks(row) {
        dw.extend_from_slice(&chunk[..row - 1]);
        db.push(chunk[row - 1]);
    }
    (dw, db)
}
