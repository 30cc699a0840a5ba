//! Spectrogram images.
//!
//! One pixel per STFT bin: width is the frame count, height the number of
//! frequency bins, row 0 the highest frequency. Levels are dB relative to a
//! full-scale sinusoid (`sum(w) / 2`), clipped to `[-80, 0]` and coloured
//! with a fixed viridis-like table.

use std::io::BufWriter;
use std::path::Path;

use crate::dsp::{self, AudioClip, MagnitudeSpectrogram, StftConfig};
use crate::Error;

pub const DB_FLOOR: f64 = -80.0;

/// Viridis control points at equal spacing over `[0, 1]`.
const COLORMAP: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

/// Colour for a level in `[0, 1]`, linearly interpolated between control points.
pub fn colormap(level: f64) -> [u8; 3] {
    let x = level.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let i = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    std::array::from_fn(|c| (f64::from(a[c]) + f * (f64::from(b[c]) - f64::from(a[c]))).round() as u8)
}

/// dB levels clipped to `[DB_FLOOR, 0]`, same layout as the magnitudes.
pub fn db_levels(mag: &MagnitudeSpectrogram) -> Vec<f64> {
    let window = mag.config.window.coefficients(mag.config.window_size);
    let full_scale = window.iter().sum::<f64>() / 2.0;
    let tiny = full_scale * 10f64.powf(DB_FLOOR / 20.0) * 1e-3;
    mag.bins
        .data
        .iter()
        .map(|&m| (20.0 * ((m + tiny) / full_scale).log10()).clamp(DB_FLOOR, 0.0))
        .collect()
}

/// RGB pixels, row-major, `rows = freq bins`, `cols = frames`.
pub fn render(mag: &MagnitudeSpectrogram) -> (u32, u32, Vec<u8>) {
    let (rows, cols) = mag.shape();
    let levels = db_levels(mag);
    let mut pixels = Vec::with_capacity(rows * cols * 3);
    for y in 0..rows {
        let bin = rows - 1 - y;
        for t in 0..cols {
            let level = (levels[bin * cols + t] - DB_FLOOR) / -DB_FLOOR;
            pixels.extend_from_slice(&colormap(level));
        }
    }
    (cols as u32, rows as u32, pixels)
}

pub fn write_png(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<(), Error> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Balanced);
    let fail = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(fail)?;
    writer.write_image_data(pixels).map_err(fail)?;
    writer.finish().map_err(fail)
}

/// Renders one clip to `path`; returns the image size.
pub fn plot_clip(clip: &AudioClip, stft: &StftConfig, path: &Path) -> Result<(u32, u32), Error> {
    let mag = dsp::magnitude(&dsp::stft(clip, stft)?)?;
    let (w, h, pixels) = render(&mag);
    write_png(path, w, h, &pixels)?;
    Ok((w, h))
}
