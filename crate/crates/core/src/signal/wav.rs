//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads PCM 8/16/24/32-bit integer and 32/64-bit float data (plain or
//! `WAVE_FORMAT_EXTENSIBLE`), downmixing multichannel files by averaging.
//! Writes mono float-32 or PCM-16.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::resample::resample;
use super::Waveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xfffe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleFormat {
    #[default]
    Float32,
    Pcm16,
}

struct Fmt {
    code: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a WAV file at its native sample rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes, path)
}

/// Reads a WAV file and resamples it to `rate` if needed.
pub fn load_wav(path: impl AsRef<Path>, rate: u32) -> Result<Waveform> {
    let w = read_wav(path.as_ref())?;
    if w.rate == rate {
        return Ok(w);
    }
    let samples = resample(&w.samples, w.rate, rate)?;
    Waveform::new(samples, rate).map_err(|e| Error::ingestion(path.as_ref(), 0, e.to_string()))
}

fn parse_wav(b: &[u8], path: &Path) -> Result<Waveform> {
    let err = |offset: usize, msg: &str| Error::ingestion(path, offset as u64, msg);
    if b.len() < 12 {
        return Err(err(0, "file too short for a RIFF header"));
    }
    if &b[0..4] != b"RIFF" {
        return Err(err(0, "missing RIFF tag"));
    }
    if &b[8..12] != b"WAVE" {
        return Err(err(8, "missing WAVE tag"));
    }

    let mut fmt: Option<Fmt> = None;
    let mut data: Option<(usize, usize)> = None;
    let mut pos = 12;
    while pos + 8 <= b.len() {
        let id = &b[pos..pos + 4];
        let size = u32_at(b, pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(size).filter(|e| *e <= b.len());
        match id {
            b"fmt " => {
                if size < 16 || end.is_none() {
                    return Err(err(pos, "truncated fmt chunk"));
                }
                let mut code = u16_at(b, body);
                let bits = u16_at(b, body + 14);
                if code == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(err(body, "truncated extensible fmt chunk"));
                    }
                    code = u16_at(b, body + 24);
                }
                fmt = Some(Fmt {
                    code,
                    channels: u16_at(b, body + 2),
                    rate: u32_at(b, body + 4),
                    bits,
                });
            }
            b"data" => {
                // Tolerate a data size running past EOF (streamed writers).
                data = Some((body, end.unwrap_or(b.len())));
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| err(12, "no fmt chunk"))?;
    let (start, end) = data.ok_or_else(|| err(12, "no data chunk"))?;
    if fmt.channels == 0 {
        return Err(err(22, "zero channels"));
    }
    if fmt.rate == 0 {
        return Err(err(24, "zero sample rate"));
    }
    let width = match (fmt.code, fmt.bits) {
        (FORMAT_PCM, 8 | 16 | 24 | 32) | (FORMAT_FLOAT, 32 | 64) => fmt.bits as usize / 8,
        (FORMAT_PCM | FORMAT_FLOAT, bits) => {
            return Err(err(34, &format!("unsupported bit depth {bits}")));
        }
        (code, _) => return Err(err(20, &format!("unsupported codec 0x{code:04x}"))),
    };
    let frame = width * fmt.channels as usize;
    let frames = (end - start) / frame;
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0.0;
        for c in 0..fmt.channels as usize {
            let at = start + f * frame + c * width;
            let s = &b[at..at + width];
            acc += match (fmt.code, width) {
                (FORMAT_PCM, 1) => (s[0] as f64 - 128.0) / 128.0,
                (FORMAT_PCM, 2) => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
                (FORMAT_PCM, 3) => {
                    (i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8) as f64 / 8_388_608.0
                }
                (FORMAT_PCM, 4) => i32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64 / 2_147_483_648.0,
                (FORMAT_FLOAT, 4) => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
                _ => f64::from_le_bytes(s.try_into().expect("8-byte sample")),
            };
        }
        let v = acc / fmt.channels as f64;
        if !v.is_finite() || v.abs() > Waveform::HEADROOM {
            return Err(err(start + f * frame, "sample outside the supported range"));
        }
        samples.push(v);
    }
    Waveform::new(samples, fmt.rate).map_err(|e| err(start, &e.to_string()))
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(w, format)).map_err(|e| Error::io(path, e))
}

pub fn encode_wav(w: &Waveform, format: SampleFormat) -> Vec<u8> {
    let (code, bits) = match format {
        SampleFormat::Float32 => (FORMAT_FLOAT, 32u16),
        SampleFormat::Pcm16 => (FORMAT_PCM, 16u16),
    };
    let width = bits as u32 / 8;
    let data_len = w.samples.len() as u32 * width;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.rate.to_le_bytes());
    out.extend_from_slice(&(w.rate * width).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        match format {
            SampleFormat::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
            SampleFormat::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
    }
    out
}
