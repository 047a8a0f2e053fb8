use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{parse_key_values, read_file, write_file, LabelMap};
use crate::error::{Error, Result};

const VARIANCE_FLOOR: f64 = 1e-8;

/// Raw raster layout on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interleave {
    /// Band-sequential: `[band][row][col]`.
    Bsq,
    /// Band-interleaved-by-pixel: `[row][col][band]`.
    Bip,
}

impl FromStr for Interleave {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bsq" => Ok(Interleave::Bsq),
            "bip" => Ok(Interleave::Bip),
            other => Err(Error::Format(format!(
                "unknown interleave `{other}` (expected bsq or bip)"
            ))),
        }
    }
}

impl fmt::Display for Interleave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interleave::Bsq => "bsq",
            Interleave::Bip => "bip",
        })
    }
}

/// A `bands x height x width` radiance cube, stored band-sequential.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    bands: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl HsiCube {
    pub fn new(bands: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::Format(format!(
                "cube extents must be positive, got {bands}x{height}x{width}"
            )));
        }
        if values.len() != bands * height * width {
            return Err(Error::Format(format!(
                "cube {bands}x{height}x{width} needs {} values, got {}",
                bands * height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "cube value {} at index {i} is not finite",
                values[i]
            )));
        }
        Ok(Self {
            bands,
            height,
            width,
            values,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.values[(band * self.height + row) * self.width + col]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.values[band * self.height * self.width..][..self.height * self.width]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, row, col)).collect()
    }
}

/// Writes the text header and the raw little-endian `f32` data.
pub fn save_cube(
    cube: &HsiCube,
    header_path: &Path,
    data_path: &Path,
    interleave: Interleave,
) -> Result<()> {
    let header = format!(
        "bands = {}\nheight = {}\nwidth = {}\ndtype = f32le\ninterleave = {interleave}\n",
        cube.bands, cube.height, cube.width
    );
    write_file(header_path, header.as_bytes())?;
    let mut bytes = Vec::with_capacity(cube.values.len() * 4);
    let (h, w) = (cube.height, cube.width);
    let mut push = |v: f64| bytes.extend_from_slice(&(v as f32).to_le_bytes());
    match interleave {
        Interleave::Bsq => cube.values.iter().for_each(|&v| push(v)),
        Interleave::Bip => {
            for r in 0..h {
                for c in 0..w {
                    for b in 0..cube.bands {
                        push(cube.get(b, r, c));
                    }
                }
            }
        }
    }
    write_file(data_path, &bytes)
}

struct Header {
    bands: usize,
    height: usize,
    width: usize,
    interleave: Interleave,
}

fn parse_header(path: &Path) -> Result<Header> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::Format(format!("{}: header is not UTF-8", path.display())))?;
    let (mut bands, mut height, mut width, mut dtype, mut interleave) =
        (None, None, None, None, None);
    let dim = |k: &str, v: &str| {
        v.parse::<usize>().ok().filter(|&d| d > 0).ok_or_else(|| {
            Error::Format(format!(
                "{}: `{k}` must be a positive integer, got `{v}`",
                path.display()
            ))
        })
    };
    for (k, v) in parse_key_values(&text, path)? {
        match k.as_str() {
            "bands" => bands = Some(dim(&k, &v)?),
            "height" => height = Some(dim(&k, &v)?),
            "width" => width = Some(dim(&k, &v)?),
            "dtype" => dtype = Some(v),
            "interleave" => interleave = Some(v.parse::<Interleave>()?),
            other => {
                return Err(Error::Format(format!(
                    "{}: unknown header key `{other}`",
                    path.display()
                )))
            }
        }
    }
    let missing = |k: &str| Error::Format(format!("{}: header lacks `{k}`", path.display()));
    match dtype.as_deref() {
        Some("f32le") => {}
        Some(other) => {
            return Err(Error::Format(format!(
                "unsupported dtype `{other}` (only f32le)"
            )))
        }
        None => return Err(missing("dtype")),
    }
    Ok(Header {
        bands: bands.ok_or_else(|| missing("bands"))?,
        height: height.ok_or_else(|| missing("height"))?,
        width: width.ok_or_else(|| missing("width"))?,
        interleave: interleave.ok_or_else(|| missing("interleave"))?,
    })
}

/// Reads a cube written in either interleave; values are widened to `f64`
/// without normalization.
pub fn load_cube(header_path: &Path, data_path: &Path) -> Result<HsiCube> {
    let h = parse_header(header_path)?;
    let bytes = read_file(data_path)?;
    let n = h.bands * h.height * h.width;
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {}x{}x{} f32 values, found {}",
            data_path.display(),
            n * 4,
            h.bands,
            h.height,
            h.width,
            bytes.len()
        )));
    }
    let raw: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let values = match h.interleave {
        Interleave::Bsq => raw,
        Interleave::Bip => {
            let mut v = vec![0.0; n];
            for r in 0..h.height {
                for c in 0..h.width {
                    for b in 0..h.bands {
                        v[(b * h.height + r) * h.width + c] = raw[(r * h.width + c) * h.bands + b];
                    }
                }
            }
            v
        }
    };
    HsiCube::new(h.bands, h.height, h.width, values)
}

/// Standardizes every band with the mean and standard deviation of its
/// labeled pixels. Unlabeled pixels are transformed but not counted.
pub fn normalize_bands(cube: &HsiCube, labels: &LabelMap) -> Result<HsiCube> {
    if labels.height() != cube.height || labels.width() != cube.width {
        return Err(Error::Format(format!(
            "labels are {}x{} but cube is {}x{}",
            labels.height(),
            labels.width(),
            cube.height,
            cube.width
        )));
    }
    let mask: Vec<bool> = labels.classes().iter().map(|&c| c != 0).collect();
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Format(
            "no labeled pixels to compute band statistics".into(),
        ));
    }
    let mut values = Vec::with_capacity(cube.values.len());
    for b in 0..cube.bands {
        let band = cube.band(b);
        let labeled = || band.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v);
        let mean = labeled().sum::<f64>() / count as f64;
        let var = labeled().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        let std = var.max(VARIANCE_FLOOR).sqrt();
        values.extend(band.iter().map(|v| (v - mean) / std));
    }
    HsiCube::new(cube.bands, cube.height, cube.width, values)
}
