//! Hyperspectral cube and label ingestion, splits, patches and synthetic scenes.

mod cube;
mod labels;
mod patches;
mod split;
mod synth;

pub use cube::{load_cube, normalize_bands, save_cube, HsiCube, Interleave};
pub use labels::{load_labels, save_labels, LabelMap};
pub use patches::{extract_inputs, extract_patches, mirror_index, PatchBatch};
pub use split::{make_split, PerClass, Role, Sample, SplitSpec};
pub use synth::{class_signatures, synth_scene, SynthParams};

use std::path::Path;

use crate::error::{Error, Result};

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub(crate) fn parse_key_values(text: &str, source: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format(format!(
                "{}:{}: expected `key = value`, got `{line}`",
                source.display(),
                n + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
