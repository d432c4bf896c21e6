//! PCM input and output: mono 16-bit WAV and raw little-endian float32.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pcm {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Pcm {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a mono 16-bit PCM WAV file, scaling samples to [-1, 1).
pub fn read_wav(path: &Path) -> Result<Pcm> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Data(format!(
            "{}: expected mono 16-bit integer PCM, got {} ch / {} bit",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok(Pcm {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes mono 16-bit PCM. Samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, pcm: &Pcm) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: pcm.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &pcm.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Reads headerless little-endian float32 samples at a declared rate.
pub fn read_raw_f32(path: &Path, sample_rate: u32) -> Result<Pcm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Pcm {
        samples,
        sample_rate,
    })
}

pub fn write_raw_f32(path: &Path, samples: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = samples.iter().flat_map(|&s| (s as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let pcm = Pcm {
            samples: (0..1000).map(|i| (i as f64 * 0.01).sin() * 0.8).collect(),
            sample_rate: 16000,
        };
        write_wav(&path, &pcm).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.samples.len(), 1000);
        for (a, b) in pcm.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn raw_f32_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.f32");
        write_raw_f32(&path, &[0.5, -0.25, 1.0]).unwrap();
        let back = read_raw_f32(&path, 8000).unwrap();
        assert_eq!(back.samples, vec![0.5, -0.25, 1.0]);
        std::fs::write(&path, [0u8; 5]).unwrap();
        assert!(read_raw_f32(&path, 8000).is_err());
    }
}
