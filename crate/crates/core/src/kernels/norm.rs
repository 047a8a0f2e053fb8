//! Per-channel batch normalization over `[B, C, inner]` layouts.

/// Batch mean and biased variance per channel, two-pass, fixed order.
pub fn channel_stats(
    x: &[f64],
    batch: usize,
    channels: usize,
    inner: usize,
) -> (Vec<f64>, Vec<f64>) {
    let count = (batch * inner) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut sum = 0.0;
        for b in 0..batch {
            sum += x[(b * channels + c) * inner..][..inner].iter().sum::<f64>();
        }
        let mu = sum / count;
        let mut sq = 0.0;
        for b in 0..batch {
            sq += x[(b * channels + c) * inner..][..inner]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
        mean[c] = mu;
        var[c] = sq / count;
    }
    (mean, var)
}

/// Normalizes with the given statistics. Returns `(y, x_hat)`.
pub fn normalize(
    x: &[f64],
    batch: usize,
    channels: usize,
    inner: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let inv = 1.0 / (var[c] + eps).sqrt();
            let off = (b * channels + c) * inner;
            for i in off..off + inner {
                let h = (x[i] - mean[c]) * inv;
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat)
}

/// Input gradient for train mode, where the statistics depend on `x`:
/// `dx = gamma * inv_std * (dy - mean(dy) - x_hat * mean(dy * x_hat))`.
pub fn backward_train_input(
    dy: &[f64],
    xhat: &[f64],
    batch: usize,
    channels: usize,
    inner: usize,
    var: &[f64],
    gamma: &[f64],
    eps: f64,
) -> Vec<f64> {
    let count = (batch * inner) as f64;
    let (sum_dy, sum_dy_xhat) = param_grads(dy, xhat, batch, channels, inner);
    let mut dx = vec![0.0; dy.len()];
    for b in 0..batch {
        for c in 0..channels {
            let scale = gamma[c] / (var[c] + eps).sqrt();
            let mdy = sum_dy[c] / count;
            let mdyx = sum_dy_xhat[c] / count;
            let off = (b * channels + c) * inner;
            for i in off..off + inner {
                dx[i] = scale * (dy[i] - mdy - xhat[i] * mdyx);
            }
        }
    }
    dx
}

/// Returns `(d_beta, d_gamma)` = `(sum dy, sum dy * x_hat)` per channel.
pub fn param_grads(
    dy: &[f64],
    xhat: &[f64],
    batch: usize,
    channels: usize,
    inner: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dbeta = vec![0.0; channels];
    let mut dgamma = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * inner;
            for i in off..off + inner {
                dbeta[c] += dy[i];
                dgamma[c] += dy[i] * xhat[i];
            }
        }
    }
    (dbeta, dgamma)
}
