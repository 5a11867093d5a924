//! Base64 packing of complex matrices for the JSON cache containers.
//!
//! Layout: row-major, each entry as little-endian `f64` real part followed by
//! little-endian `f64` imaginary part (16 bytes per entry), standard base64
//! alphabet with padding.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;

pub fn encode_matrix(m: &ComplexMatrix) -> String {
    let mut bytes = Vec::with_capacity(m.len() * 16);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let c = m[(i, j)];
            bytes.extend_from_slice(&c.re.to_le_bytes());
            bytes.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    STANDARD.encode(bytes)
}

pub fn decode_matrix(text: &str, rows: usize, cols: usize) -> Result<ComplexMatrix> {
    let bytes = STANDARD.decode(text).map_err(|e| Error::Parse(format!("bad base64 matrix payload: {e}")))?;
    if bytes.len() != rows * cols * 16 {
        return Err(Error::ShapeMismatch(format!(
            "payload holds {} bytes, expected {} for {rows}x{cols}",
            bytes.len(),
            rows * cols * 16
        )));
    }
    let mut m = ComplexMatrix::zeros(rows, cols);
    for (idx, chunk) in bytes.chunks_exact(16).enumerate() {
        let re = f64::from_le_bytes(chunk[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(chunk[8..].try_into().expect("8 bytes"));
        m[(idx / cols, idx % cols)] = Complex64::new(re, im);
    }
    Ok(m)
}
