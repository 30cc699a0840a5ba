use super::{DspError, Grid, MagnitudeSpectrogram};

/// Lowest frequency of the logarithmic grid.
pub const WARP_MIN_FREQ_HZ: f64 = 32.0;

/// Mapping tables between a linear STFT frequency axis and a logarithmic grid
/// spanning [`WARP_MIN_FREQ_HZ`, Nyquist].
///
/// Each log bin is a triangular average of the linear bins around it, with
/// half-widths equal to the distance to the neighbouring log bins but never
/// narrower than one linear bin. Where the log grid is sparser than the linear
/// one this is a triangular filterbank; where it is denser it reduces to linear
/// interpolation between the two neighbouring linear bins. Rows are normalised,
/// so constant spectra map to constant spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFreqWarp {
    pub linear_bins: usize,
    pub bin_hz: f64,
    /// Centre frequency of every log bin.
    pub log_freqs: Vec<f64>,
    /// `forward[j]` lists `(linear_bin, weight)` pairs, weights summing to 1.
    pub forward: Vec<Vec<(usize, f64)>>,
    /// `inverse[k]` interpolates linear bin `k` from two log bins.
    pub inverse: Vec<[(usize, f64); 2]>,
}

impl LogFreqWarp {
    pub fn new(linear_bins: usize, sample_rate: u32, window_size: usize, out_bins: usize) -> Result<Self, DspError> {
        if out_bins < 2 {
            return Err(DspError::InvalidArgument(format!(
                "log-frequency warp needs at least 2 bins, got {out_bins}"
            )));
        }
        if linear_bins < 2 {
            return Err(DspError::InvalidArgument("need at least 2 linear bins".into()));
        }
        let bin_hz = sample_rate as f64 / window_size as f64;
        let nyquist = (linear_bins - 1) as f64 * bin_hz;
        if nyquist <= WARP_MIN_FREQ_HZ {
            return Err(DspError::InvalidArgument(format!(
                "nyquist {nyquist} Hz is below the warp floor of {WARP_MIN_FREQ_HZ} Hz"
            )));
        }
        let ratio = nyquist / WARP_MIN_FREQ_HZ;
        let log_freqs: Vec<f64> = (0..out_bins)
            .map(|j| WARP_MIN_FREQ_HZ * ratio.powf(j as f64 / (out_bins - 1) as f64))
            .collect();

        let forward = (0..out_bins)
            .map(|j| {
                let centre = log_freqs[j];
                let left_gap = if j > 0 {
                    centre - log_freqs[j - 1]
                } else {
                    log_freqs[1] - log_freqs[0]
                };
                let right_gap = if j + 1 < out_bins {
                    log_freqs[j + 1] - centre
                } else {
                    centre - log_freqs[j - 1]
                };
                let left = left_gap.max(bin_hz);
                let right = right_gap.max(bin_hz);
                let lo = ((centre - left) / bin_hz).floor().max(0.0) as usize;
                let hi = (((centre + right) / bin_hz).ceil() as usize).min(linear_bins - 1);
                let mut row: Vec<(usize, f64)> = (lo..=hi)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f <= centre {
                            1.0 - (centre - f) / left
                        } else {
                            1.0 - (f - centre) / right
                        };
                        (w > 1e-12).then_some((k, w))
                    })
                    .collect();
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                row.iter_mut().for_each(|(_, w)| *w /= total);
                row
            })
            .collect();

        let inverse = (0..linear_bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                if f <= log_freqs[0] {
                    [(0, 1.0), (0, 0.0)]
                } else if f >= log_freqs[out_bins - 1] {
                    [(out_bins - 1, 1.0), (out_bins - 1, 0.0)]
                } else {
                    let j = log_freqs.partition_point(|&g| g <= f) - 1;
                    let frac = (f - log_freqs[j]) / (log_freqs[j + 1] - log_freqs[j]);
                    [(j, 1.0 - frac), (j + 1, frac)]
                }
            })
            .collect();

        Ok(Self {
            linear_bins,
            bin_hz,
            log_freqs,
            forward,
            inverse,
        })
    }

    pub fn out_bins(&self) -> usize {
        self.log_freqs.len()
    }

    /// Linear rows -> log rows, frame by frame.
    pub fn warp(&self, linear: &Grid) -> Result<Grid, DspError> {
        if linear.rows != self.linear_bins {
            return Err(DspError::ShapeMismatch {
                expected: (self.linear_bins, linear.cols),
                got: linear.shape(),
            });
        }
        let cols = linear.cols;
        let mut out = Grid::zeros(self.out_bins(), cols);
        for (j, row) in self.forward.iter().enumerate() {
            let dst = &mut out.data[j * cols..(j + 1) * cols];
            for &(k, w) in row {
                let src = &linear.data[k * cols..(k + 1) * cols];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
            }
        }
        Ok(out)
    }

    /// Log rows -> linear rows.
    pub fn unwarp(&self, warped: &Grid) -> Result<Grid, DspError> {
        if warped.rows != self.out_bins() {
            return Err(DspError::ShapeMismatch {
                expected: (self.out_bins(), warped.cols),
                got: warped.shape(),
            });
        }
        let cols = warped.cols;
        let mut out = Grid::zeros(self.linear_bins, cols);
        for (k, pair) in self.inverse.iter().enumerate() {
            let dst = &mut out.data[k * cols..(k + 1) * cols];
            for &(j, w) in pair {
                if w == 0.0 {
                    continue;
                }
                let src = &warped.data[j * cols..(j + 1) * cols];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
            }
        }
        Ok(out)
    }

    /// Trapezoidal bandwidth (Hz) of every log bin, for integrating a warped
    /// spectrum over frequency.
    pub fn bandwidths(&self) -> Vec<f64> {
        let f = &self.log_freqs;
        let n = f.len();
        (0..n)
            .map(|j| {
                let lo = if j > 0 { (f[j] + f[j - 1]) / 2.0 } else { f[0] };
                let hi = if j + 1 < n { (f[j] + f[j + 1]) / 2.0 } else { f[n - 1] };
                hi - lo
            })
            .collect()
    }
}

/// Resamples the frequency axis of `mag` onto `out_bins` log-spaced bins.
pub fn log_freq_warp(
    mag: &MagnitudeSpectrogram,
    out_bins: usize,
) -> Result<(MagnitudeSpectrogram, LogFreqWarp), DspError> {
    let tables = LogFreqWarp::new(mag.bins.rows, mag.sample_rate, mag.config.window_size, out_bins)?;
    let bins = tables.warp(&mag.bins)?;
    Ok((
        MagnitudeSpectrogram {
            bins,
            config: mag.config,
            sample_rate: mag.sample_rate,
        },
        tables,
    ))
}
