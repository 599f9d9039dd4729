//! Formatting, hashing, and small file helpers shared by the run writers.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lossless decimal rendering: 17 significant digits in scientific notation.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a sequence of floats by bit pattern.
pub fn hash_f64s<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        for v in part {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a numeric CSV table with a header row. Returns the header and rows.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_numeric_csv(&text).map_err(|msg| Error::InvalidData(format!("{}: {msg}", path.display())))
}

pub fn parse_numeric_csv(text: &str) -> std::result::Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines.next().ok_or("empty table")?;
    let header: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if row.len() != header.len() {
            return Err(format!(
                "line {}: {} columns, header has {}",
                lineno + 1,
                row.len(),
                header.len()
            ));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt17(1.5), "1.5000000000000000e0");
    }

    #[test]
    fn numeric_csv() {
        let (h, rows) = parse_numeric_csv("a,b\n# note\n1,2\n3.5,-4e-1\n").unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.5, -0.4]]);
        assert!(parse_numeric_csv("a,b\n1\n").is_err());
        assert!(parse_numeric_csv("a\nzz\n").is_err());
    }

    #[test]
    fn float_hash_sensitive_to_bits() {
        let a = hash_f64s([&[1.0, 2.0][..]]);
        let b = hash_f64s([&[1.0, 2.0 + f64::EPSILON * 2.0][..]]);
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }
}
