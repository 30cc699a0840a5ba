use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AudioClip, ComplexSpectrogram, DspError, Grid, MagnitudeSpectrogram, StftConfig};
use crate::separator::SeparationMask;

fn reflect_pad(signal: &[f64], pad: usize) -> Vec<f64> {
    let len = signal.len();
    let mut out = Vec::with_capacity(len + 2 * pad);
    out.extend((1..=pad).rev().map(|i| signal[i]));
    out.extend_from_slice(signal);
    out.extend((1..=pad).map(|i| signal[len - 1 - i]));
    out
}

/// Short-time Fourier transform with centred, reflect-padded frames.
pub fn stft(clip: &AudioClip, config: &StftConfig) -> Result<ComplexSpectrogram, DspError> {
    config.validate()?;
    if clip.samples.is_empty() {
        return Err(DspError::EmptyClip);
    }
    if clip.samples.iter().any(|s| !s.is_finite()) {
        return Err(DspError::NonFinite("audio samples"));
    }
    let n = config.window_size;
    let mut signal = clip.samples.clone();
    if signal.len() < n {
        signal.resize(n, 0.0);
    }
    let padded = reflect_pad(&signal, n / 2);
    let frames = config.frames_for(clip.samples.len());
    let freq_bins = config.freq_bins();
    let window = config.window.coefficients(n);

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut bins = vec![Complex64::new(0.0, 0.0); freq_bins * frames];
    for t in 0..frames {
        let start = t * config.hop_size;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..freq_bins {
            bins[k * frames + t] = buf[k];
        }
    }
    Ok(ComplexSpectrogram {
        freq_bins,
        frames,
        bins,
        config: *config,
        sample_rate: clip.sample_rate,
        signal_len: clip.samples.len(),
    })
}

/// Weighted overlap-add resynthesis. Each frame is windowed again and the sum
/// is normalised by the accumulated squared window, which inverts [`stft`]
/// exactly wherever at least one frame covers a sample.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioClip, DspError> {
    let config = &spec.config;
    config.validate()?;
    if spec.freq_bins != config.freq_bins() {
        return Err(DspError::ConfigMismatch(format!(
            "{} frequency bins for window {}",
            spec.freq_bins, config.window_size
        )));
    }
    if spec.frames != config.frames_for(spec.signal_len) || spec.signal_len == 0 {
        return Err(DspError::ConfigMismatch(format!(
            "{} frames for a {}-sample signal at hop {}",
            spec.frames, spec.signal_len, config.hop_size
        )));
    }
    if spec.bins.len() != spec.freq_bins * spec.frames {
        return Err(DspError::ConfigMismatch("bin buffer length".into()));
    }
    if spec.sample_rate == 0 {
        return Err(DspError::InvalidArgument("sample rate must be positive".into()));
    }

    let n = config.window_size;
    let pad = n / 2;
    let len = spec.signal_len.max(n);
    let mut out = vec![0.0; len + 2 * pad];
    let mut norm = vec![0.0; len + 2 * pad];
    let window = config.window.coefficients(n);

    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    for t in 0..spec.frames {
        for k in 0..spec.freq_bins {
            buf[k] = spec.get(k, t);
        }
        // The imaginary parts of DC and Nyquist are discarded by the real
        // output, matching a real inverse transform.
        for k in spec.freq_bins..n {
            buf[k] = buf[n - k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * config.hop_size;
        for i in 0..n {
            let w = window[i];
            out[start + i] += buf[i].re / n as f64 * w;
            norm[start + i] += w * w;
        }
    }
    let floor = 1e-10 * norm.iter().fold(0.0f64, |m, &v| m.max(v));
    let samples = out
        .iter()
        .zip(&norm)
        .skip(pad)
        .take(spec.signal_len)
        .map(|(&v, &w)| if w > floor { v / w } else { 0.0 })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
    })
}

pub fn magnitude(spec: &ComplexSpectrogram) -> Result<MagnitudeSpectrogram, DspError> {
    if spec.bins.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(DspError::NonFinite("spectrogram"));
    }
    let data = spec.bins.iter().map(|c| c.norm()).collect();
    Ok(MagnitudeSpectrogram {
        bins: Grid {
            rows: spec.freq_bins,
            cols: spec.frames,
            data,
        },
        config: spec.config,
        sample_rate: spec.sample_rate,
    })
}

/// Entrywise `ln(m + eps)`.
pub fn log_compress(mag: &MagnitudeSpectrogram, eps: f64) -> Result<Grid, DspError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(DspError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    Ok(mag.bins.map(|m| (m + eps).ln()))
}

/// Scales every bin's magnitude by the mask and keeps the mixture phase.
pub fn apply_mask(mix: &ComplexSpectrogram, mask: &SeparationMask) -> Result<ComplexSpectrogram, DspError> {
    if mask.values.shape() != mix.shape() {
        return Err(DspError::ShapeMismatch {
            expected: mix.shape(),
            got: mask.values.shape(),
        });
    }
    let bins = mix.bins.iter().zip(&mask.values.data).map(|(c, &g)| c * g).collect();
    Ok(ComplexSpectrogram { bins, ..mix.clone() })
}

/// Ratio between one-sided STFT energy and signal energy for a
/// constant-overlap-add configuration: `N * sum(w^2) / hop`.
///
/// Non-DC, non-Nyquist bins count twice in the one-sided sum.
pub fn window_energy_gain(config: &StftConfig) -> f64 {
    let w = config.window.coefficients(config.window_size);
    let sum_sq: f64 = w.iter().map(|v| v * v).sum();
    config.window_size as f64 * sum_sq / config.hop_size as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::WindowKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn noise(len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 16_000).unwrap()
    }

    fn interior_rel_err(a: &[f64], b: &[f64], edge: usize) -> f64 {
        let range = edge..a.len() - edge;
        let num: f64 = range.clone().map(|i| (a[i] - b[i]).powi(2)).sum();
        let den: f64 = range.map(|i| b[i].powi(2)).sum();
        (num / den).sqrt()
    }

    fn naive_dft(frame: &[f64], k: usize) -> Complex64 {
        let n = frame.len();
        frame
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let phi = -2.0 * PI * (k * i) as f64 / n as f64;
                Complex64::new(x * phi.cos(), x * phi.sin())
            })
            .sum()
    }

    #[test]
    fn zero_clip_gives_zero_spectrogram_of_expected_shape() {
        let cfg = StftConfig::default();
        let spec = stft(&AudioClip::silence(16_000, 16_000), &cfg).unwrap();
        assert_eq!(spec.shape(), (257, 1 + 16_000 / 256));
        assert!(spec.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn bin_centred_sine_concentrates_energy() {
        let cfg = StftConfig {
            window_size: 256,
            hop_size: 128,
            window: WindowKind::Rectangular,
            log_epsilon: 1e-10,
        };
        let sr = 16_000;
        let k = 10;
        let f = k as f64 * sr as f64 / 256.0;
        let clip = AudioClip::new(
            (0..4096).map(|i| (2.0 * PI * f * i as f64 / sr as f64).sin()).collect(),
            sr,
        )
        .unwrap();
        let spec = stft(&clip, &cfg).unwrap();
        // interior frames only: edge frames see reflected, phase-broken data
        for t in 2..spec.frames - 2 {
            let start = t * 128 - 128;
            let frame = &clip.samples[start..start + 256];
            let total: f64 = (0..spec.freq_bins).map(|b| spec.get(b, t).norm_sqr()).sum();
            assert!(spec.get(k, t).norm_sqr() >= 0.99 * total);
            let oracle = naive_dft(frame, k);
            assert!((oracle - spec.get(k, t)).norm() < 1e-8 * oracle.norm());
        }
    }

    #[test]
    fn impulse_first_frame_matches_window_dft() {
        // Frame 0 is centred on sample 0: the impulse lands at offset N/2 of the
        // frame, so |X_k| = w[N/2] for every k.
        let cfg = StftConfig::new(64, 32);
        let mut samples = vec![0.0; 640];
        samples[0] = 1.0;
        let spec = stft(&AudioClip::new(samples, 8000).unwrap(), &cfg).unwrap();
        let w = cfg.window.coefficients(64);
        let mut frame = vec![0.0; 64];
        frame[32] = w[32];
        for k in 0..spec.freq_bins {
            let oracle = naive_dft(&frame, k).norm();
            assert!((spec.get(k, 0).norm() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_white_noise_and_sine() {
        let cfg = StftConfig::default();
        let clip = noise(16_000, 3);
        let back = istft(&stft(&clip, &cfg).unwrap()).unwrap();
        assert_eq!(back.len(), clip.len());
        assert!(interior_rel_err(&back.samples, &clip.samples, 256) < 1e-6);

        let sine = AudioClip::new(
            (0..16_000)
                .map(|i| 0.5 * (2.0 * PI * 440.0 * i as f64 / 16_000.0).sin())
                .collect(),
            16_000,
        )
        .unwrap();
        let back = istft(&stft(&sine, &cfg).unwrap()).unwrap();
        assert!(interior_rel_err(&back.samples, &sine.samples, 256) < 1e-6);
    }

    #[test]
    fn zero_spectrogram_resynthesises_to_silence() {
        let cfg = StftConfig::default();
        let spec = stft(&noise(4000, 1), &cfg).unwrap().zeros_like();
        assert!(istft(&spec).unwrap().samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn short_clip_is_zero_padded_to_one_window() {
        let cfg = StftConfig::default();
        let clip = noise(100, 5);
        let spec = stft(&clip, &cfg).unwrap();
        assert_eq!(spec.frames, 1 + 512 / 256);
        let back = istft(&spec).unwrap();
        assert_eq!(back.len(), 100);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = StftConfig::default();
        assert!(matches!(
            stft(
                &AudioClip {
                    samples: vec![],
                    sample_rate: 16_000
                },
                &cfg
            ),
            Err(DspError::EmptyClip)
        ));
        let bad = AudioClip {
            samples: vec![0.0, f64::NAN],
            sample_rate: 16_000,
        };
        assert!(matches!(stft(&bad, &cfg), Err(DspError::NonFinite(_))));
        let not_cola = StftConfig::new(512, 200);
        assert!(matches!(not_cola.validate(), Err(DspError::InvalidConfig(_))));
        let mut spec = stft(&noise(2000, 2), &cfg).unwrap();
        spec.config.window_size = 1024;
        assert!(matches!(istft(&spec), Err(DspError::ConfigMismatch(_))));
    }

    #[test]
    fn parseval_energy_consistency() {
        let cfg = StftConfig::default();
        let clip = noise(64_000, 9);
        let spec = stft(&clip, &cfg).unwrap();
        let mut one_sided = 0.0;
        for k in 0..spec.freq_bins {
            let weight = if k == 0 || k == spec.freq_bins - 1 { 1.0 } else { 2.0 };
            for t in 0..spec.frames {
                one_sided += weight * spec.get(k, t).norm_sqr();
            }
        }
        let ratio = one_sided / window_energy_gain(&cfg) / clip.energy();
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn magnitude_and_log_compress() {
        let cfg = StftConfig::new(8, 4);
        let mut spec = stft(&AudioClip::silence(16, 8000), &cfg).unwrap();
        spec.bins[0] = Complex64::new(3.0, 4.0);
        let mag = magnitude(&spec).unwrap();
        assert_eq!(mag.bins.data[0], 5.0);
        assert!(mag.bins.data[1..].iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for c in spec.bins.iter_mut() {
            *c = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        }
        let mag = magnitude(&spec).unwrap();
        for (c, m) in spec.bins.iter().zip(&mag.bins.data) {
            let expected = (c.re * c.re + c.im * c.im).sqrt();
            assert!((*m - expected).abs() <= 1e-15 * expected);
        }

        let zero = MagnitudeSpectrogram::new(Grid::zeros(3, 2), cfg, 8000).unwrap();
        assert!(log_compress(&zero, 1.0).unwrap().data.iter().all(|&v| v == 0.0));
        let e1 = MagnitudeSpectrogram::new(Grid::filled(3, 2, std::f64::consts::E - 1.0), cfg, 8000).unwrap();
        assert!(log_compress(&e1, 1.0)
            .unwrap()
            .data
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-15));
        let logged = log_compress(&mag, 1e-3).unwrap();
        for (m, l) in mag.bins.data.iter().zip(&logged.data) {
            assert_eq!(*l, (m + 1e-3).ln());
        }
        assert!(log_compress(&mag, 0.0).is_err());
    }

    #[test]
    fn mask_application() {
        let cfg = StftConfig::default();
        let spec = stft(&noise(4000, 8), &cfg).unwrap();
        let (f, t) = spec.shape();
        let ones = SeparationMask::new(Grid::filled(f, t, 1.0)).unwrap();
        assert_eq!(apply_mask(&spec, &ones).unwrap(), spec);
        let zeros = SeparationMask::new(Grid::zeros(f, t)).unwrap();
        assert!(apply_mask(&spec, &zeros).unwrap().bins.iter().all(|c| c.norm() == 0.0));
        let half = SeparationMask::new(Grid::filled(f, t, 0.5)).unwrap();
        let out = apply_mask(&spec, &half).unwrap();
        for (a, b) in out.bins.iter().zip(&spec.bins) {
            assert!((a.norm() - 0.5 * b.norm()).abs() < 1e-12);
            if b.norm() > 1e-9 {
                assert!((a.arg() - b.arg()).abs() < 1e-12);
            }
        }
        let wrong = SeparationMask::new(Grid::zeros(f - 1, t)).unwrap();
        assert!(matches!(apply_mask(&spec, &wrong), Err(DspError::ShapeMismatch { .. })));
    }

    #[test]
    fn stft_is_deterministic() {
        let cfg = StftConfig::default();
        let clip = noise(5000, 11);
        assert_eq!(stft(&clip, &cfg).unwrap(), stft(&clip, &cfg).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn round_trip_interior(seed in any::<u64>(), len in 1024usize..6000) {
                let cfg = StftConfig::new(256, 64);
                let clip = noise(len, seed);
                let back = istft(&stft(&clip, &cfg).unwrap()).unwrap();
                prop_assert!(interior_rel_err(&back.samples, &clip.samples, 128) < 1e-6);
            }

            #[test]
            fn mask_linearity(seed in any::<u64>(), a in 0.0f64..0.5, b in 0.0f64..0.5) {
                let cfg = StftConfig::new(64, 32);
                let spec = stft(&noise(512, seed), &cfg).unwrap();
                let (f, t) = spec.shape();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                let p1 = Grid::from_vec(f, t, (0..f * t).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
                let p2 = Grid::from_vec(f, t, (0..f * t).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
                let combo = Grid::from_vec(f, t, p1.data.iter().zip(&p2.data).map(|(x, y)| a * x + b * y).collect()).unwrap();
                let m1 = apply_mask(&spec, &SeparationMask::new(p1).unwrap()).unwrap();
                let m2 = apply_mask(&spec, &SeparationMask::new(p2).unwrap()).unwrap();
                let mc = apply_mask(&spec, &SeparationMask::new(combo).unwrap()).unwrap();
                for i in 0..mc.bins.len() {
                    let lhs = mc.bins[i].norm();
                    let rhs = a * m1.bins[i].norm() + b * m2.bins[i].norm();
                    prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
                }
            }
        }
    }
}
