//! Binary PGM images, headerless CSV matrices, and basis tiling.

use std::fs;
use std::path::Path;

use crate::denoise::Image;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn pgm_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Pgm {
        offset,
        message: message.into(),
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(pgm_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| pgm_err(start, format!("{what} out of range")))
    }
}

/// Parses an 8-bit binary PGM (`P5`, maxval 255) into `[0, 1]` intensities.
pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    if !bytes.starts_with(b"P5") {
        return Err(pgm_err(0, "missing P5 magic number"));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    if !bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(pgm_err(2, "expected whitespace after magic number"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(pgm_err(
            maxval_at,
            format!("unsupported maxval {maxval}, expected 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(pgm_err(maxval_at, "image dimensions must be positive"));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(pgm_err(
            cur.pos,
            "expected a single whitespace byte before pixel data",
        ));
    }
    let data_start = cur.pos + 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| pgm_err(maxval_at, "image dimensions overflow"))?;
    let available = bytes.len() - data_start;
    if available < n {
        return Err(pgm_err(
            bytes.len(),
            format!("truncated pixel data: expected {n} bytes, found {available}"),
        ));
    }
    if available > n {
        return Err(pgm_err(data_start + n, "trailing bytes after pixel data"));
    }
    let pixels = bytes[data_start..]
        .iter()
        .map(|&v| f64::from(v) / 255.0)
        .collect();
    Image::new(width, height, pixels)
}

/// Encodes `img` as binary PGM, clamping to `[0, 1]` and rounding to 8 bits.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.pixels()
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
    );
    out
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    parse_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

fn csv_err(line: u64, message: impl Into<String>) -> Error {
    Error::Csv {
        line,
        message: message.into(),
    }
}

/// Parses a headerless, comma-separated matrix; each record is one row.
pub fn parse_matrix_csv(text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(csv_err(
                    line,
                    format!("expected {c} fields, found {}", record.len()),
                ));
            }
            _ => {}
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                csv_err(line, format!("field {} is not a number: '{field}'", k + 1))
            })?;
            if !v.is_finite() {
                return Err(csv_err(line, format!("field {} is not finite", k + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| csv_err(1, "no data rows"))?;
    Matrix::from_vec(rows, cols, data)
}

/// Formats `m` as CSV with shortest round-trip float representations.
/// A matrix without columns formats as the empty string.
pub fn format_matrix_csv(m: &Matrix) -> String {
    if m.cols() == 0 {
        return String::new();
    }
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for i in 0..m.rows() {
        writer
            .write_record(m.row(i).iter().map(|v| v.to_string()))
            .expect("writing to memory");
    }
    String::from_utf8(writer.into_inner().expect("writing to memory")).expect("ascii output")
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    parse_matrix_csv(&fs::read_to_string(path)?)
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, format_matrix_csv(m))?;
    Ok(())
}

/// Lays out basis columns as `patch_size × patch_size` tiles in selection
/// order, left to right then top to bottom, separated by one-pixel white
/// borders. Each tile is min-max normalized on its own; a constant tile is
/// mid-gray. An empty basis yields a single gray tile.
pub fn tile_basis(basis: &Matrix, patch_size: usize) -> Result<Image> {
    let p = patch_size;
    if p == 0 || basis.rows() != p * p {
        return Err(Error::dims(format!(
            "basis with {} rows cannot be shown as {p}x{p} tiles",
            basis.rows()
        )));
    }
    let k = basis.cols().max(1);
    let grid_cols = (k as f64).sqrt().ceil() as usize;
    let grid_rows = k.div_ceil(grid_cols);
    let width = grid_cols * (p + 1) + 1;
    let height = grid_rows * (p + 1) + 1;
    let mut pixels = vec![1.0; width * height];
    for t in 0..k {
        let tile = if basis.cols() == 0 {
            vec![0.5; p * p]
        } else {
            let col = basis.column(t);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                col.iter().map(|v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.5; p * p]
            }
        };
        let r0 = (t / grid_cols) * (p + 1) + 1;
        let c0 = (t % grid_cols) * (p + 1) + 1;
        for dr in 0..p {
            let dst = (r0 + dr) * width + c0;
            pixels[dst..dst + p].copy_from_slice(&tile[dr * p..dr * p + p]);
        }
    }
    Image::new(width, height, pixels)
}
