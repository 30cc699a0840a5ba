use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, DspError};

const I16_SCALE: f64 = 32768.0;

fn wav_err(path: &Path, source: hound::Error) -> DspError {
    DspError::Wav {
        path: path.display().to_string(),
        source,
    }
}

/// Rounds a sample to 16-bit PCM, clipping to the representable range.
pub fn quantize_i16(x: f64) -> i16 {
    (x * I16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

pub fn dequantize_i16(q: i16) -> f64 {
    q as f64 / I16_SCALE
}

/// Reads any integer or float WAV. Multichannel input is averaged to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, DspError> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
    };
    if channels > 1 {
        log::warn!("{}: averaging {} channels to mono", path.display(), channels);
    }
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

fn pcm16_spec(sample_rate: u32) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

/// Writes 16-bit little-endian mono PCM.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), DspError> {
    let quantized: Vec<i16> = clip.samples.iter().map(|&s| quantize_i16(s)).collect();
    write_wav_i16(path, &quantized, clip.sample_rate)
}

pub fn write_wav_i16(path: impl AsRef<Path>, samples: &[i16], sample_rate: u32) -> Result<(), DspError> {
    let path = path.as_ref();
    let mut writer = WavWriter::create(path, pcm16_spec(sample_rate)).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        writer.write_sample(s).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
