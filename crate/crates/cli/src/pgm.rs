//! 16-bit binary PGM (P5) export of single bands, for inspection only.

use std::fs;
use std::path::Path;

use scsc_core::Tensor;

use crate::error::{CliError, CliResult};

/// Encodes band `band` of a `[C, h, w]` tensor, mapping `[0, 1]` linearly
/// onto `0..=65535` (values outside are clipped).
pub fn encode_pgm(image: &Tensor, band: usize) -> CliResult<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    if band >= c {
        return Err(CliError::Usage(format!("band {} out of range (tensor has {})", band, c)));
    }
    let mut out = format!("P5\n{} {}\n65535\n", w, h).into_bytes();
    out.reserve(2 * h * w);
    for &v in image.channel(band) {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm(image: &Tensor, band: usize, path: &Path) -> CliResult<()> {
    fs::write(path, encode_pgm(image, band)?).map_err(|e| CliError::io(path, e))
}
