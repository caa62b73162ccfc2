//! Tensor files.
//!
//! Text: first line `rows cols`, then one line per row of whitespace
//! separated values. Binary: `u32` rows and `u32` cols (little-endian),
//! then `rows * cols` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::blockquant::Tensor2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorEncoding {
    Text,
    Binary,
}

impl TensorEncoding {
    /// `.bin`/`.f32` files are binary, everything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("f32") => TensorEncoding::Binary,
            _ => TensorEncoding::Text,
        }
    }
}

pub fn parse_text(src: &str) -> Result<Tensor2D> {
    let mut lines = src
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, 1, "missing `rows cols` header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(Error::parse(hline + 1, 1, "header must be `rows cols`"));
    }
    let dim = |s: &str, col: usize| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(hline + 1, col, format!("bad dimension {s:?}")))
    };
    let rows = dim(dims[0], 1)?;
    let cols = dim(dims[1], 2)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0;
    for (i, line) in lines {
        let before = data.len();
        for (j, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(i + 1, j + 1, format!("bad number {tok:?}")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::parse(
                i + 1,
                1,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(Error::parse(
            hline + 1,
            1,
            format!("header declares {rows} rows, found {seen_rows}"),
        ));
    }
    Tensor2D::new(rows, cols, data)
}

pub fn to_text(t: &Tensor2D) -> String {
    let mut out = format!("{} {}\n", t.rows(), t.cols());
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_binary(bytes: &[u8]) -> Result<Tensor2D> {
    if bytes.len() < 8 {
        return Err(Error::parse(1, 1, "binary tensor shorter than its 8-byte header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(Error::parse(
            1,
            9,
            format!(
                "{rows}x{cols} tensor needs {} payload bytes, found {}",
                rows * cols * 4,
                body.len()
            ),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor2D::new(rows, cols, data)
}

/// Values are narrowed to `f32`.
pub fn to_binary(t: &Tensor2D) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.data().len());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn read_tensor(path: &Path) -> Result<Tensor2D> {
    match TensorEncoding::from_path(path) {
        TensorEncoding::Binary => parse_binary(&fs::read(path)?),
        TensorEncoding::Text => parse_text(&fs::read_to_string(path)?),
    }
}

pub fn write_tensor(path: &Path, t: &Tensor2D) -> Result<()> {
    match TensorEncoding::from_path(path) {
        TensorEncoding::Binary => fs::write(path, to_binary(t))?,
        TensorEncoding::Text => fs::write(path, to_text(t))?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let t = Tensor2D::new(2, 3, vec![0.1, -2.5, 1e-30, 3.0, 7.25, -0.0]).unwrap();
        let back = parse_text(&to_text(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn binary_layout() {
        let t = Tensor2D::new(1, 2, vec![1.0, -2.0]).unwrap();
        let b = to_binary(&t);
        assert_eq!(&b[..8], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[8..12], &1.0f32.to_le_bytes());
        assert_eq!(parse_binary(&b).unwrap(), t);
        assert!(parse_binary(&b[..10]).is_err());
    }

    #[test]
    fn text_diagnostics() {
        let err = parse_text("2 2\n1 2\n3 x\n").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                line: 3,
                column: 2,
                message: "bad number \"x\"".into()
            }
        );
        assert!(matches!(parse_text("2 2\n1 2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_text("2 2\n1 2 3\n1 2\n"), Err(Error::Parse { line: 2, .. })));
    }
}
