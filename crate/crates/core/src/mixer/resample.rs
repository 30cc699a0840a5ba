//! Blackman-windowed sinc resampling.

use std::f64::consts::PI;

use super::MixerError;
use crate::dsp::{AudioClip, DspError};

/// Zero crossings of the sinc kept on each side of the centre tap.
const ZERO_CROSSINGS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on `[-1, 1]`.
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let x = PI * (u + 1.0);
        0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
    }
}

/// Resamples to `target_rate`. Output length is `round(len * target / source)`;
/// taps are normalised by their in-range sum so DC passes unchanged, including
/// at the edges.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, MixerError> {
    if target_rate == 0 || clip.sample_rate == 0 {
        return Err(MixerError::InvalidConfig("sample rates must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    if clip.is_empty() {
        return Err(DspError::EmptyClip.into());
    }
    let ratio = f64::from(target_rate) / f64::from(clip.sample_rate);
    let out_len = ((clip.len() as f64) * ratio).round() as usize;
    // Cutoff relative to the input Nyquist; below 1 when downsampling.
    let cutoff = ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let n = clip.len() as isize;
    let samples = (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            let mut norm = 0.0;
            for i in lo..=hi {
                let d = t - i as f64;
                let w = cutoff * sinc(cutoff * d) * blackman(d / half_width);
                acc += w * clip.samples[i as usize];
                norm += w;
            }
            if norm.abs() > 1e-12 {
                acc / norm
            } else {
                0.0
            }
        })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: target_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{magnitude, stft, StftConfig};

    fn sine(freq: f64, rate: u32, len: usize) -> AudioClip {
        let samples = (0..len)
            .map(|i| (2.0 * PI * freq * i as f64 / f64::from(rate)).sin())
            .collect();
        AudioClip::new(samples, rate).unwrap()
    }

    fn peak_frequency(clip: &AudioClip) -> f64 {
        let cfg = StftConfig::default();
        let mag = magnitude(&stft(clip, &cfg).unwrap()).unwrap();
        let (bins, frames) = mag.shape();
        let mid = frames / 2;
        let k = (0..bins)
            .max_by(|&a, &b| mag.bins.get(a, mid).total_cmp(&mag.bins.get(b, mid)))
            .unwrap();
        k as f64 * f64::from(clip.sample_rate) / cfg.window_size as f64
    }

    #[test]
    fn equal_rates_return_input() {
        let c = sine(440.0, 16_000, 1_000);
        assert_eq!(resample(&c, 16_000).unwrap(), c);
    }

    #[test]
    fn output_length_is_rounded_ratio() {
        let c = sine(100.0, 44_100, 44_101);
        assert_eq!(
            resample(&c, 16_000).unwrap().len(),
            (44_101.0f64 * 16_000.0 / 44_100.0).round() as usize
        );
        let c = sine(100.0, 8_000, 999);
        assert_eq!(resample(&c, 16_000).unwrap().len(), 1_998);
    }

    #[test]
    fn tone_frequency_is_preserved() {
        let c = sine(440.0, 48_000, 48_000);
        let r = resample(&c, 16_000).unwrap();
        let bin_hz = 16_000.0 / 512.0;
        assert!((peak_frequency(&r) - 440.0).abs() <= bin_hz);
        let up = resample(&sine(1_000.0, 8_000, 8_000), 16_000).unwrap();
        assert!((peak_frequency(&up) - 1_000.0).abs() <= bin_hz);
    }

    #[test]
    fn tone_amplitude_and_phase_match_analytic_resample() {
        // Interior samples of a downsampled low tone agree with the tone sampled
        // directly at the target rate.
        let r = resample(&sine(440.0, 48_000, 48_000), 16_000).unwrap();
        let direct = sine(440.0, 16_000, 16_000);
        let worst = (200..15_800)
            .map(|i| (r.samples[i] - direct.samples[i]).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn dc_is_preserved() {
        let c = AudioClip::new(vec![0.25; 4_410], 44_100).unwrap();
        for rate in [8_000, 16_000, 96_000] {
            let r = resample(&c, rate).unwrap();
            assert!(r.samples.iter().all(|v| (v - 0.25).abs() < 1e-3), "rate {rate}");
        }
    }

    #[test]
    fn removes_content_above_new_nyquist() {
        let c = sine(7_000.0, 48_000, 48_000);
        let r = resample(&c, 8_000).unwrap();
        // 7 kHz lies above the 4 kHz output Nyquist.
        let interior = &r.samples[500..7_500];
        let rms = (interior.iter().map(|v| v * v).sum::<f64>() / interior.len() as f64).sqrt();
        assert!(rms < 1e-2, "{rms}");
    }

    #[test]
    fn rejects_zero_rate() {
        assert!(resample(&sine(1.0, 8_000, 10), 0).is_err());
    }
}
