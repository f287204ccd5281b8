//! EMB1 embedding files.
//!
//! Binary layout, all little endian: the magic `EMB1`, `rows: u32`,
//! `cols: u32`, then `rows * cols` `f32` values in row-major order. A JSON
//! text form `{"rows": r, "cols": c, "data": [...]}` is accepted on input and
//! recognised by its first non-blank byte being `{`.

use std::fs;
use std::path::Path;

use orthoprompt::EmbeddingMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Binary,
    Json,
}

impl Encoding {
    /// `.json` paths get the text form, anything else the binary one.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Encoding::Json,
            _ => Encoding::Binary,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TextMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix, CliError> {
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
    if bytes.starts_with(MAGIC) {
        decode_binary(bytes, path)
    } else if first == Some(&b'{') {
        decode_json(bytes, path)
    } else {
        Err(CliError::format(path, "not an EMB1 file (bad magic)"))
    }
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix, CliError> {
    if bytes.len() < HEADER_LEN {
        return Err(CliError::format(path, "truncated EMB1 header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let rows = word(4) as usize;
    let cols = word(8) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| CliError::format(path, "EMB1 shape overflows"))?;
    if bytes.len() != expected {
        return Err(CliError::format(
            path,
            format!(
                "EMB1 payload for {rows}x{cols} needs {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    build(rows, cols, data, path)
}

fn decode_json(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix, CliError> {
    let text: TextMatrix = serde_json::from_slice(bytes)
        .map_err(|e| CliError::format(path, format!("invalid JSON matrix: {e}")))?;
    build(text.rows, text.cols, text.data, path)
}

fn build(
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    path: &Path,
) -> Result<EmbeddingMatrix, CliError> {
    EmbeddingMatrix::new(rows, cols, data).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn encode(m: &EmbeddingMatrix, encoding: Encoding) -> Vec<u8> {
    match encoding {
        Encoding::Binary => {
            let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
            out.extend_from_slice(MAGIC);
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out
        }
        Encoding::Json => {
            let text = TextMatrix {
                rows: m.rows(),
                cols: m.cols(),
                data: m.as_slice().to_vec(),
            };
            let mut out = serde_json::to_vec(&text).expect("matrix serializes");
            out.push(b'\n');
            out
        }
    }
}

pub fn read(path: &Path) -> Result<EmbeddingMatrix, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, m: &EmbeddingMatrix) -> Result<(), CliError> {
    if m.rows() > u32::MAX as usize || m.cols() > u32::MAX as usize {
        return Err(CliError::format(path, "matrix too large for EMB1"));
    }
    if Encoding::for_path(path) == Encoding::Binary
        && m.as_slice().iter().any(|v| !(*v as f32).is_finite())
    {
        return Err(CliError::format(path, "values overflow f32"));
    }
    fs::write(path, encode(m, Encoding::for_path(path))).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.emb")
    }

    #[test]
    fn binary_round_trip_is_exact_for_f32_values() {
        let m = EmbeddingMatrix::from_rows(&[[1.0, -0.5, 0.25], [3.0, 0.0, -7.125]]).unwrap();
        let bytes = encode(&m, Encoding::Binary);
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(bytes.len(), 12 + 6 * 4);
        let back = decode(&bytes, p()).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back, Encoding::Binary), bytes);
    }

    #[test]
    fn json_form_is_detected() {
        let back = decode(b"  \n{\"rows\":1,\"cols\":2,\"data\":[1.0,1.0]}", p()).unwrap();
        assert_eq!(back.as_slice(), &[1.0, 1.0]);
        let m = EmbeddingMatrix::from_rows(&[[0.1, 0.2]]).unwrap();
        assert_eq!(decode(&encode(&m, Encoding::Json), p()).unwrap(), m);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(decode(b"EMB2\0\0\0\0", p()).is_err());
        assert!(decode(b"EMB1\x01\0\0\0", p()).is_err());
        let mut short = encode(&EmbeddingMatrix::zeros(2, 2).unwrap(), Encoding::Binary);
        short.pop();
        assert!(decode(&short, p()).is_err());
        let mut nan = encode(&EmbeddingMatrix::zeros(1, 1).unwrap(), Encoding::Binary);
        nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&nan, p()).is_err());
        assert!(decode(b"{\"rows\":1,\"cols\":2,\"data\":[1.0]}", p()).is_err());
        assert!(decode(b"", p()).is_err());
    }
}
