use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};

const BUMPS: usize = 2;

/// Parameters of a synthetic Voronoi scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub classes: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
    /// Multiplier on the spectral bump widths.
    pub context_scale: f64,
    pub seed: u64,
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 || self.classes > u16::MAX as usize {
            return fail(format!("classes: need at least 2, got {}", self.classes));
        }
        if self.bands < 8 {
            return fail(format!("bands: need at least 8, got {}", self.bands));
        }
        if self.height * self.width < self.classes {
            return fail(format!(
                "height/width: a {}x{} scene cannot hold {} classes",
                self.height, self.width, self.classes
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!(
                "noise_sigma: must be finite and >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.context_scale > 0.0 && self.context_scale.is_finite()) {
            return fail(format!(
                "context_scale: must be positive, got {}",
                self.context_scale
            ));
        }
        Ok(())
    }
}

fn draw_signatures(p: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..p.classes)
        .map(|_| {
            let bumps: Vec<(f64, f64, f64)> = (0..BUMPS)
                .map(|_| {
                    let center = rng.random::<f64>() * p.bands as f64;
                    let width = p.context_scale * (1.0 + rng.random::<f64>());
                    let amplitude = 0.5 + rng.random::<f64>();
                    (center, width, amplitude)
                })
                .collect();
            (0..p.bands)
                .map(|s| {
                    bumps
                        .iter()
                        .map(|&(mu, sd, a)| a * (-0.5 * ((s as f64 - mu) / sd).powi(2)).exp())
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Noise-free class spectra of the scene `synth_scene(p)` generates.
pub fn class_signatures(p: &SynthParams) -> Result<Vec<Vec<f64>>> {
    p.validate()?;
    Ok(draw_signatures(p, &mut ChaCha8Rng::seed_from_u64(p.seed)))
}

/// Builds a scene of one Voronoi cell per class. Each class spectrum is a sum
/// of Gaussian bumps; i.i.d. Gaussian noise is added per value. Every pixel
/// is labeled.
pub fn synth_scene(p: &SynthParams) -> Result<(HsiCube, LabelMap)> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let signatures = draw_signatures(p, &mut rng);
    let (h, w) = (p.height, p.width);
    let seeds: Vec<(f64, f64)> = sample(&mut rng, h * w, p.classes)
        .into_iter()
        .map(|i| ((i / w) as f64, (i % w) as f64))
        .collect();
    let classes: Vec<u16> = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            let d = |&(sr, sc): &(f64, f64)| (r - sr).powi(2) + (c - sc).powi(2);
            let nearest = (0..seeds.len())
                .min_by(|&a, &b| d(&seeds[a]).total_cmp(&d(&seeds[b])).then(a.cmp(&b)))
                .unwrap_or(0);
            (nearest + 1) as u16
        })
        .collect();
    let mut values = Vec::with_capacity(p.bands * h * w);
    for s in 0..p.bands {
        values.extend(classes.iter().map(|&k| signatures[k as usize - 1][s]));
    }
    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma)
            .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
        values
            .iter_mut()
            .for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok((
        HsiCube::new(p.bands, h, w, values)?,
        LabelMap::new(h, w, classes)?,
    ))
}
