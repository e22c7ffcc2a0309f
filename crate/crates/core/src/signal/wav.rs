use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{linear_resample, SignalError, Waveform};

fn map_hound(err: hound::Error) -> SignalError {
    match err {
        hound::Error::IoError(e) => SignalError::Io(e.to_string()),
        hound::Error::Unsupported => {
            SignalError::UnsupportedFormat("only uncompressed PCM or IEEE float WAV is supported".into())
        }
        hound::Error::FormatError(msg) => SignalError::Io(format!("corrupt WAV: {msg}")),
        other => SignalError::Io(other.to_string()),
    }
}

/// Format tag of the first `fmt ` chunk, if the RIFF header can be walked.
fn format_tag(path: &Path) -> Option<u16> {
    let bytes = std::fs::read(path).ok()?;
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().ok()?) as usize;
        if id == b"fmt " && pos + 10 <= bytes.len() {
            return Some(u16::from_le_bytes([bytes[pos + 8], bytes[pos + 9]]));
        }
        pos += 8 + size + (size & 1);
    }
    None
}

/// Loads a WAV file as mono audio at `target_rate`.
///
/// Multichannel input is averaged to mono; a rate mismatch is resolved by
/// linear interpolation to `round(len * target_rate / source_rate)` samples.
pub fn load_wav(path: impl AsRef<Path>, target_rate: u32) -> Result<Waveform, SignalError> {
    if target_rate == 0 {
        return Err(SignalError::InvalidArgument("target rate must be positive".into()));
    }
    let reader = WavReader::open(path.as_ref()).map_err(|e| match format_tag(path.as_ref()) {
        Some(tag) if !matches!(tag, 1 | 3 | 0xFFFE) => {
            SignalError::UnsupportedFormat(format!("WAV format tag {tag:#06x} is not PCM"))
        }
        _ => map_hound(e),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => {
            reader.into_samples::<f32>().collect::<Result<_, _>>().map_err(map_hound)?
        }
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(map_hound)?
        }
    };
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    let samples = if spec.sample_rate == target_rate || mono.is_empty() {
        mono
    } else {
        let target_len =
            (mono.len() as f64 * target_rate as f64 / spec.sample_rate as f64).round() as usize;
        linear_resample(&mono, target_len.max(1))?
    };
    Waveform::new(samples, target_rate)
}

/// Writes mono 16-bit PCM, clipping to [-1, 1].
pub fn save_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<(), SignalError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    for &s in wave.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}
