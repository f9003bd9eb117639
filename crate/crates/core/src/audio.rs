//! PCM audio primitives.
//!
//! Every audio path in the system carries mono, 16-bit little-endian PCM. The
//! microphone path runs at 16 kHz in 20 ms chunks (320 samples, 640 bytes) and
//! the synthesis path at 24 kHz.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sample rate of the microphone / STT path.
pub const MIC_SAMPLE_RATE_HZ: u32 = 16_000;
/// Sample rate of the TTS / playback path.
pub const TTS_SAMPLE_RATE_HZ: u32 = 24_000;
/// Duration of one client audio chunk.
pub const CLIENT_CHUNK_MS: u32 = 20;
/// Size in bytes of one client audio chunk (20 ms at 16 kHz, int16).
pub const CLIENT_CHUNK_BYTES: usize = 640;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AudioError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed WAV field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
}

/// PCM 16-bit little-endian mono at a given sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioFormat {
    pub sample_rate_hz: u32,
}

impl AudioFormat {
    pub const BIT_DEPTH: u16 = 16;
    pub const CHANNELS: u16 = 1;

    pub const MIC: AudioFormat = AudioFormat {
        sample_rate_hz: MIC_SAMPLE_RATE_HZ,
    };
    pub const TTS: AudioFormat = AudioFormat {
        sample_rate_hz: TTS_SAMPLE_RATE_HZ,
    };

    pub fn new(sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self { sample_rate_hz })
    }

    /// Number of samples covering `ms` milliseconds, truncated.
    pub fn samples_for_ms(&self, ms: u32) -> usize {
        (u64::from(self.sample_rate_hz) * u64::from(ms) / 1000) as usize
    }
}

/// A chunk of mono int16 PCM with its capture timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFrame {
    pub samples: Vec<i16>,
    pub sample_rate_hz: u32,
    /// Milliseconds since the start of the owning stream.
    pub timestamp_ms: f64,
}

impl AudioFrame {
    pub fn new(samples: Vec<i16>, sample_rate_hz: u32, timestamp_ms: f64) -> Self {
        Self {
            samples,
            sample_rate_hz,
            timestamp_ms,
        }
    }

    /// Always 1; both directions are mono.
    pub fn channels(&self) -> u16 {
        AudioFormat::CHANNELS
    }

    pub fn format(&self) -> AudioFormat {
        AudioFormat {
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn duration_ms(&self) -> f64 {
        if self.sample_rate_hz == 0 {
            return 0.0;
        }
        self.samples.len() as f64 * 1000.0 / f64::from(self.sample_rate_hz)
    }

    pub fn byte_len(&self) -> usize {
        self.samples.len() * 2
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        samples_to_le_bytes(&self.samples)
    }

    /// Decode little-endian int16 bytes. Odd lengths are rejected.
    pub fn from_le_bytes(bytes: &[u8], sample_rate_hz: u32, timestamp_ms: f64) -> Result<Self, AudioError> {
        Ok(Self::new(le_bytes_to_samples(bytes)?, sample_rate_hz, timestamp_ms))
    }
}

pub fn samples_to_le_bytes(samples: &[i16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn le_bytes_to_samples(bytes: &[u8]) -> Result<Vec<i16>, AudioError> {
    if !bytes.len().is_multiple_of(2) {
        return Err(AudioError::InvalidArgument(format!(
            "PCM int16 payload has odd length {}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect())
}

/// Split `samples` into frames of `chunk_ms`. The final frame may be short;
/// it is emitted rather than dropped so the split is lossless.
pub fn chunk_stream(samples: &[i16], format: AudioFormat, chunk_ms: u32) -> Result<Vec<AudioFrame>, AudioError> {
    if chunk_ms == 0 {
        return Err(AudioError::InvalidArgument("chunk_ms must be positive".into()));
    }
    if format.sample_rate_hz == 0 {
        return Err(AudioError::InvalidArgument("sample rate must be positive".into()));
    }
    let per_chunk = format.samples_for_ms(chunk_ms);
    if per_chunk == 0 {
        return Err(AudioError::InvalidArgument(format!(
            "{chunk_ms} ms at {} Hz is shorter than one sample",
            format.sample_rate_hz
        )));
    }
    let step_ms = per_chunk as f64 * 1000.0 / f64::from(format.sample_rate_hz);
    Ok(samples
        .chunks(per_chunk)
        .enumerate()
        .map(|(i, c)| AudioFrame::new(c.to_vec(), format.sample_rate_hz, i as f64 * step_ms))
        .collect())
}

/// Linear-interpolation sample-rate conversion.
///
/// Output index `i` reads input position `i * from_hz / to_hz`; positions past
/// the last input sample clamp to it. Interpolated values round half away
/// from zero. Output length is `round(len * to_hz / from_hz)`.
pub fn resample_linear(samples: &[i16], from_hz: u32, to_hz: u32) -> Result<Vec<i16>, AudioError> {
    if from_hz == 0 || to_hz == 0 {
        return Err(AudioError::InvalidArgument("sample rates must be positive".into()));
    }
    if from_hz == to_hz || samples.is_empty() {
        return Ok(samples.to_vec());
    }
    let n = samples.len() as u128;
    let (from, to) = (u128::from(from_hz), u128::from(to_hz));
    let out_len = ((2 * n * to + from) / (2 * from)) as usize;
    let last = samples.len() - 1;
    let step = f64::from(from_hz) / f64::from(to_hz);

    let out = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let idx = pos.floor() as usize;
            if idx >= last {
                return samples[last];
            }
            let frac = pos - idx as f64;
            let a = f64::from(samples[idx]);
            let b = f64::from(samples[idx + 1]);
            (a + (b - a) * frac).round() as i16
        })
        .collect();
    Ok(out)
}

const WAV_HEADER_LEN: usize = 44;

/// Encode mono int16 PCM as a canonical 44-byte-header RIFF/WAVE file.
pub fn write_wav(format: AudioFormat, samples: &[i16]) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let byte_rate = format.sample_rate_hz * 2;
    let mut buf = Vec::with_capacity(WAV_HEADER_LEN + samples.len() * 2);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_len).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes()); // PCM
    buf.extend_from_slice(&AudioFormat::CHANNELS.to_le_bytes());
    buf.extend_from_slice(&format.sample_rate_hz.to_le_bytes());
    buf.extend_from_slice(&byte_rate.to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes()); // block align
    buf.extend_from_slice(&AudioFormat::BIT_DEPTH.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    buf.extend_from_slice(&samples_to_le_bytes(samples));
    buf
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode a RIFF/WAVE file holding 16-bit mono PCM. Unknown chunks between
/// `fmt ` and `data` are skipped.
pub fn read_wav(bytes: &[u8]) -> Result<(AudioFormat, Vec<i16>), AudioError> {
    let fmt_err = |field: &'static str, reason: &str| AudioError::Format {
        field,
        reason: reason.to_string(),
    };
    if bytes.len() < WAV_HEADER_LEN {
        return Err(fmt_err(
            "header",
            &format!("{} bytes is shorter than a WAV header", bytes.len()),
        ));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(fmt_err("riff_id", "expected `RIFF`"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(fmt_err("wave_id", "expected `WAVE`"));
    }

    let mut pos = 12;
    let mut format: Option<AudioFormat> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(fmt_err("fmt_size", "fmt chunk too short"));
                }
                let audio_format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if audio_format != 1 {
                    return Err(AudioError::UnsupportedEncoding(format!(
                        "audio_format {audio_format} (only PCM = 1)"
                    )));
                }
                if bits != AudioFormat::BIT_DEPTH {
                    return Err(AudioError::UnsupportedEncoding(format!(
                        "bits_per_sample {bits} (only 16)"
                    )));
                }
                if channels != AudioFormat::CHANNELS {
                    return Err(fmt_err(
                        "channels",
                        &format!("{channels} channels, only mono is supported"),
                    ));
                }
                if rate == 0 {
                    return Err(fmt_err("sample_rate", "zero sample rate"));
                }
                format = Some(AudioFormat { sample_rate_hz: rate });
            }
            b"data" => {
                let format = format.ok_or_else(|| fmt_err("fmt", "data chunk before fmt chunk"))?;
                if body + size > bytes.len() {
                    return Err(fmt_err("data_size", "data chunk runs past end of file"));
                }
                let samples = le_bytes_to_samples(&bytes[body..body + size])
                    .map_err(|_| fmt_err("data_size", "odd data length"))?;
                return Ok((format, samples));
            }
            _ => {}
        }
        // chunks are padded to even sizes
        pos = body + size + (size & 1);
    }
    Err(fmt_err("data", "no data chunk"))
}
