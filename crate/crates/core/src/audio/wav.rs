//! RIFF/WAVE reading and writing (PCM 16-bit and IEEE float 32-bit).

use super::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

fn bad(chunk: &str, reason: impl Into<String>) -> Error {
    Error::WavParse { chunk: chunk.into(), reason: reason.into() }
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

struct Format {
    tag: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

/// Decodes a WAV file; multi-channel audio is averaged to mono and
/// integer samples are divided by 32768. The source id is left empty.
pub fn parse_wav<T: Scalar>(bytes: &[u8]) -> Result<Waveform<T>> {
    if bytes.len() < 12 {
        return Err(bad("RIFF", format!("header needs 12 bytes, file has {}", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(bad("RIFF", "missing RIFF signature"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(bad("RIFF", "form type is not WAVE"));
    }
    let mut pos = 12;
    let mut fmt: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = String::from_utf8_lossy(&bytes[pos..pos + 4]).into_owned();
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        let Some(body_end) = body_end else {
            // Writers that stream often leave a bogus data size; accept what is present.
            if id == "data" {
                data = Some(&bytes[body_start..]);
                break;
            }
            return Err(bad(&id, format!("declares {size} bytes, only {} remain", bytes.len() - body_start)));
        };
        let body = &bytes[body_start..body_end];
        match id.as_str() {
            "fmt " => {
                if body.len() < 16 {
                    return Err(bad("fmt ", format!("chunk is {} bytes, at least 16 required", body.len())));
                }
                let mut tag = u16_at(body, 0);
                if tag == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(bad("fmt ", "extensible format without sub-format"));
                    }
                    tag = u16_at(body, 24);
                }
                let f = Format { tag, channels: u16_at(body, 2), rate: u32_at(body, 4), bits: u16_at(body, 14) };
                if f.channels == 0 {
                    return Err(bad("fmt ", "zero channels"));
                }
                if f.rate == 0 {
                    return Err(bad("fmt ", "zero sample rate"));
                }
                fmt = Some(f);
            }
            "data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| bad("fmt ", "no fmt chunk before end of file"))?;
    let data = data.ok_or_else(|| bad("data", "no data chunk"))?;
    let width = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        (tag, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {tag} with {bits} bits per sample (supported: PCM 16-bit, float 32-bit)"
            )))
        }
    };
    let ch = fmt.channels as usize;
    let frame = width * ch;
    if data.len() % frame != 0 {
        log::warn!("data chunk has {} trailing bytes; ignored", data.len() % frame);
    }
    let frames = data.len() / frame;
    if frames == 0 {
        return Err(bad("data", "no sample frames"));
    }
    let inv_ch = 1.0 / ch as f64;
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let base = f * frame;
        let mut acc = 0.0f64;
        for c in 0..ch {
            let i = base + c * width;
            acc += match width {
                2 => i16::from_le_bytes([data[i], data[i + 1]]) as f64 / 32768.0,
                _ => f32::from_le_bytes([data[i], data[i + 1], data[i + 2], data[i + 3]]) as f64,
            };
        }
        let v = acc * inv_ch;
        if !v.is_finite() {
            return Err(bad("data", format!("non-finite sample at frame {f}")));
        }
        samples.push(T::of(v));
    }
    Ok(Waveform { samples, sample_rate: fmt.rate, source_id: String::new() })
}

/// Mono WAV encoding. PCM samples are rounded to the nearest step and clamped.
pub fn encode_wav<T: Scalar>(w: &Waveform<T>, format: SampleFormat) -> Vec<u8> {
    let (tag, width) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 2u16),
        SampleFormat::Float32 => (FORMAT_FLOAT, 4u16),
    };
    let data_len = w.samples.len() * width as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * width as u32).to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&(width * 8).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &w.samples {
        match format {
            SampleFormat::Pcm16 => {
                let q = (s.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            SampleFormat::Float32 => out.extend_from_slice(&s.as_f32().to_le_bytes()),
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16(channels: u16, rate: u32, frames: &[i16]) -> Vec<u8> {
        let data_len = frames.len() * 2;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        b.extend_from_slice(&(2 * channels).to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data_len as u32).to_le_bytes());
        for s in frames {
            b.extend_from_slice(&s.to_le_bytes());
        }
        b
    }

    #[test]
    fn silent_second() {
        let w = parse_wav::<f64>(&pcm16(1, 16_000, &vec![0; 16_000])).unwrap();
        assert_eq!(w.sample_rate, 16_000);
        assert_eq!(w.samples.len(), 16_000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_sample() {
        let w = parse_wav::<f64>(&pcm16(1, 8_000, &[32767, -32768])).unwrap();
        assert_eq!(w.samples, vec![32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn opposite_stereo_channels_cancel() {
        let frames: Vec<i16> = (0..200).map(|i| if i % 2 == 0 { 16384 } else { -16384 }).collect();
        let w = parse_wav::<f64>(&pcm16(2, 8_000, &frames)).unwrap();
        assert_eq!(w.samples.len(), 100);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut b = pcm16(1, 8_000, &[100, 200]);
        let mut list = b"LIST".to_vec();
        list.extend_from_slice(&3u32.to_le_bytes());
        list.extend_from_slice(b"abc\0");
        b.splice(12..12, list);
        let w = parse_wav::<f32>(&b).unwrap();
        assert_eq!(w.samples.len(), 2);
    }

    #[test]
    fn errors_name_the_chunk() {
        let good = pcm16(1, 8_000, &[1, 2, 3]);
        let mut no_riff = good.clone();
        no_riff[0] = b'X';
        assert!(matches!(parse_wav::<f32>(&no_riff), Err(Error::WavParse { chunk, .. }) if chunk == "RIFF"));
        let mut short_fmt = good.clone();
        short_fmt[16..20].copy_from_slice(&8u32.to_le_bytes());
        assert!(matches!(parse_wav::<f32>(&short_fmt), Err(Error::WavParse { chunk, .. }) if chunk == "fmt "));
        let mut bits = good.clone();
        bits[34] = 24;
        assert!(matches!(parse_wav::<f32>(&bits), Err(Error::UnsupportedFormat(_))));
        let mut alaw = good;
        alaw[20] = 6;
        assert!(matches!(parse_wav::<f32>(&alaw), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(parse_wav::<f32>(&good_header_only()), Err(Error::WavParse { chunk, .. }) if chunk == "data"));
    }

    fn good_header_only() -> Vec<u8> {
        let mut b = pcm16(1, 8_000, &[]);
        b.truncate(36);
        b
    }

    #[test]
    fn float_round_trip_is_exact() {
        let w = Waveform { samples: vec![0.25f32, -0.5, 0.123456], sample_rate: 32_000, source_id: String::new() };
        let back = parse_wav::<f32>(&encode_wav(&w, SampleFormat::Float32)).unwrap();
        assert_eq!(back.samples, w.samples);
        assert_eq!(back.sample_rate, 32_000);
    }
}
