use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};

/// Per-pixel class annotation; 0 marks an unlabeled pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: Vec<u16>,
    num_classes: usize,
}

impl LabelMap {
    /// Builds a map whose class count is the largest label present. Every
    /// class in `1..=C` must occur at least once.
    pub fn new(height: usize, width: usize, classes: Vec<u16>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(Error::Format(format!(
                "label map {height}x{width} needs {} entries, got {}",
                height * width,
                classes.len()
            )));
        }
        let num_classes = classes.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; num_classes + 1];
        classes.iter().for_each(|&c| seen[c as usize] = true);
        if let Some(missing) = (1..=num_classes).find(|&c| !seen[c]) {
            return Err(Error::Format(format!(
                "class {missing} has no pixels (labels must cover 1..={num_classes})"
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
            num_classes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classes(&self) -> &[u16] {
        &self.classes
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.classes[row * self.width + col]
    }

    /// Row-major coordinates of every labeled pixel.
    pub fn labeled(&self) -> Vec<(usize, usize)> {
        (0..self.height * self.width)
            .filter(|&i| self.classes[i] != 0)
            .map(|i| (i / self.width, i % self.width))
            .collect()
    }
}

/// Reads raw little-endian `u16` labels, row-major `height x width`.
pub fn load_labels(path: &Path, height: usize, width: usize) -> Result<LabelMap> {
    let bytes = read_file(path)?;
    if bytes.len() != height * width * 2 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {height}x{width} u16 labels, found {}",
            path.display(),
            height * width * 2,
            bytes.len()
        )));
    }
    let classes = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    LabelMap::new(height, width, classes)
}

pub fn save_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = labels
        .classes
        .iter()
        .flat_map(|c| c.to_le_bytes())
        .collect();
    write_file(path, &bytes)
}
