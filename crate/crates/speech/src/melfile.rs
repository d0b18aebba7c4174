//! Mel-spectrogram files.
//!
//! Binary layout, little-endian: the magic `CSMEL1\0\0`, frame count (u32),
//! bin count (u32), then `frames × bins` f32 values in row-major order.
//! The text export has one frame per line.

use std::fs;
use std::path::Path;

use comedic_core::Matrix;

use crate::error::{Result, SpeechError};

pub const MEL_MAGIC: &[u8; 8] = b"CSMEL1\0\0";

pub fn encode_mel(mel: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + mel.len() * 4);
    out.extend_from_slice(MEL_MAGIC);
    out.extend_from_slice(&(mel.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(mel.cols() as u32).to_le_bytes());
    for &v in mel.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_mel(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let bad = |message: &str| SpeechError::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MEL_MAGIC {
        return Err(bad("not a mel file"));
    }
    let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != frames * bins * 4 {
        return Err(bad("payload size does not match the header"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Matrix::from_vec(frames, bins, data))
}

pub fn write_mel(path: &Path, mel: &Matrix) -> Result<()> {
    fs::write(path, encode_mel(mel)).map_err(|e| SpeechError::io(path, e))
}

pub fn read_mel(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| SpeechError::io(path, e))?;
    decode_mel(&bytes, path)
}

/// Whitespace-separated values, one frame per line.
pub fn mel_to_text(mel: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..mel.rows() {
        let line: Vec<String> = mel.row(r).iter().map(|v| format!("{:.6}", *v as f32)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_f32_exact() {
        let mel = Matrix::from_vec(3, 2, vec![0.1, -2.5, 3.0, 1e-5, -11.5, 7.25]);
        let back = decode_mel(&encode_mel(&mel), Path::new("x")).unwrap();
        for (a, b) in mel.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let bytes = encode_mel(&mel);
        assert!(decode_mel(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode_mel(b"nope", Path::new("x")).is_err());
        assert_eq!(mel_to_text(&mel).lines().count(), 3);
    }
}
