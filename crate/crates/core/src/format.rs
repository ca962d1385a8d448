//! Plain-text dense matrix format.
//!
//! ```text
//! # optional comment lines
//! 2 3
//! 1 2 3
//! 4 5 6
//! ```
//!
//! The first non-comment line holds `<rows> <cols>`, followed by `rows` lines
//! of `cols` numbers. Values are written with 17 significant digits so a
//! write/read cycle reproduces every `f64` exactly. Several blocks may be
//! concatenated in one file (used for trajectories).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{GcdeError, Result};
use crate::linalg::Matrix;

/// Formats one value with 17 significant digits.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_matrix_string(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.len() * 24 + 16);
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|&x| format_value(x)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, write_matrix_string(m)).map_err(|source| GcdeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = read_to_string(path)?;
    parse_matrix(&text, path)
}

/// Reads every matrix block in the file.
pub fn read_matrices(path: &Path) -> Result<Vec<Matrix>> {
    let text = read_to_string(path)?;
    parse_matrices(&text, path)
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| GcdeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses exactly one matrix block; trailing data is an error.
pub fn parse_matrix(text: &str, origin: &Path) -> Result<Matrix> {
    let mut lines = content_lines(text);
    let m = parse_block(&mut lines, origin)?.ok_or_else(|| GcdeError::Parse {
        path: origin.to_path_buf(),
        line: 1,
        msg: "no matrix header found".into(),
    })?;
    if let Some((line, _)) = lines.next() {
        return Err(GcdeError::Parse {
            path: origin.to_path_buf(),
            line,
            msg: "unexpected data after matrix".into(),
        });
    }
    Ok(m)
}

pub fn parse_matrices(text: &str, origin: &Path) -> Result<Vec<Matrix>> {
    let mut lines = content_lines(text);
    let mut out = Vec::new();
    while let Some(m) = parse_block(&mut lines, origin)? {
        out.push(m);
    }
    Ok(out)
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_block<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    origin: &Path,
) -> Result<Option<Matrix>> {
    let err = |line: usize, msg: String| GcdeError::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let Some((header_line, header)) = lines.next() else {
        return Ok(None);
    };
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(err(header_line, format!("expected '<rows> <cols>', got '{header}'")));
    }
    let parse_dim = |s: &str| -> Result<usize> {
        match s.parse::<usize>() {
            Ok(d) if d > 0 => Ok(d),
            _ => Err(err(header_line, format!("invalid dimension '{s}'"))),
        }
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;

    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| err(header_line, format!("expected {rows} rows, found {r}")))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(line_no, format!("invalid number '{tok}'")))?;
            data.push(v);
        }
        let got = data.len() - before;
        if got != cols {
            return Err(err(line_no, format!("expected {cols} values, found {got}")));
        }
    }
    Matrix::new(rows, cols, data).map(Some)
}
