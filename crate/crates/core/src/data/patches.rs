use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reflects an index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`). Reflection repeats for offsets wider than `n`.
pub fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Spectral patches with their center-pixel labels.
#[derive(Debug, Clone)]
pub struct PatchBatch {
    /// `[B, 1, S, P, P]`.
    pub inputs: Tensor,
    /// Center class minus one.
    pub labels: Vec<usize>,
    pub centers: Vec<(usize, usize)>,
}

/// Mirror-padded `P x P` windows around `coords`, shaped `[B, 1, S, P, P]`.
pub fn extract_inputs(cube: &HsiCube, coords: &[(usize, usize)], patch: usize) -> Result<Tensor> {
    if patch % 2 == 0 {
        return Err(Error::Config(format!(
            "patch: side must be odd, got {patch}"
        )));
    }
    if coords.is_empty() {
        return Err(Error::Split("no pixels to extract".into()));
    }
    let (s, h, w) = (cube.bands(), cube.height(), cube.width());
    let half = (patch / 2) as isize;
    let mut data = Vec::with_capacity(coords.len() * s * patch * patch);
    for &(r, c) in coords {
        if r >= h || c >= w {
            return Err(Error::Split(format!(
                "pixel ({r},{c}) lies outside the {h}x{w} scene"
            )));
        }
        let rows: Vec<usize> = (-half..=half)
            .map(|d| mirror_index(r as isize + d, h))
            .collect();
        let cols: Vec<usize> = (-half..=half)
            .map(|d| mirror_index(c as isize + d, w))
            .collect();
        for b in 0..s {
            let band = cube.band(b);
            for &rr in &rows {
                data.extend(cols.iter().map(|&cc| band[rr * w + cc]));
            }
        }
    }
    Tensor::new(&[coords.len(), 1, s, patch, patch], data)
}

/// Patches around labeled pixels, with `label = class - 1`.
pub fn extract_patches(
    cube: &HsiCube,
    labels: &LabelMap,
    coords: &[(usize, usize)],
    patch: usize,
) -> Result<PatchBatch> {
    if labels.height() != cube.height() || labels.width() != cube.width() {
        return Err(Error::Format("label map and cube dimensions differ".into()));
    }
    let inputs = extract_inputs(cube, coords, patch)?;
    let labels = coords
        .iter()
        .map(|&(r, c)| match labels.get(r, c) {
            0 => Err(Error::Split(format!("pixel ({r},{c}) is unlabeled"))),
            k => Ok(k as usize - 1),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchBatch {
        inputs,
        labels,
        centers: coords.to_vec(),
    })
}
