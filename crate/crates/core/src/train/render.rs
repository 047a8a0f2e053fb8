use std::path::Path;

use crate::error::{Error, Result};

/// Class `c >= 1` is drawn as `PALETTE[(c - 1) % 21]`; label 0 is black.
pub const PALETTE: [[u8; 3]; 21] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
    [255, 255, 255],
];

pub fn class_color(class: u16) -> [u8; 3] {
    match class {
        0 => [0, 0, 0],
        c => PALETTE[(c as usize - 1) % PALETTE.len()],
    }
}

/// Binary PPM of a row-major class map.
pub fn encode_ppm(height: usize, width: usize, classes: &[u16]) -> Result<Vec<u8>> {
    if classes.len() != height * width {
        return Err(Error::Format(format!(
            "map of {height}x{width} needs {} classes, got {}",
            height * width,
            classes.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(3 * classes.len());
    for &c in classes {
        out.extend_from_slice(&class_color(c));
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, height: usize, width: usize, classes: &[u16]) -> Result<()> {
    let bytes = encode_ppm(height, width, classes)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a PPM written by [`encode_ppm`] back into `(height, width, pixels)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let bad = |m: &str| Error::Format(format!("ppm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields
            .push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("only binary P6 with maxval 255 is supported"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != 3 * width * height {
        return Err(bad(&format!(
            "expected {} pixel bytes, found {}",
            3 * width * height,
            body.len()
        )));
    }
    let pixels = body.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
    Ok((height, width, pixels))
}

/// Inverse palette lookup; black maps to 0. Colors shared by several
/// classes (beyond 21) resolve to the lowest class.
pub fn color_class(color: [u8; 3]) -> Option<u16> {
    if color == [0, 0, 0] {
        return Some(0);
    }
    PALETTE
        .iter()
        .position(|&p| p == color)
        .map(|i| i as u16 + 1)
}
