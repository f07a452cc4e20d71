use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Milliseconds between consecutive frames after any subsampling.
pub const FRAME_PERIOD_MS: f64 = 40.0;

/// Time-major matrix: one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FrameMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(Error::shape(format!("frame matrix {rows}x{cols} cannot hold {} values", data.len())));
        }
        Ok(FrameMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("rows of differing width"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<FrameMatrix> {
        if len == 0 || start + len > self.rows {
            return Err(Error::shape(format!("rows {start}..{} out of range for {} frames", start + len, self.rows)));
        }
        Self::new(len, self.cols, self.data[start * self.cols..(start + len) * self.cols].to_vec())
    }

    /// Keep every `step`-th frame, starting with the first.
    pub fn subsample(&self, step: usize) -> FrameMatrix {
        if step <= 1 {
            return self.clone();
        }
        let data: Vec<f64> = (0..self.rows).step_by(step).flat_map(|r| self.row(r).to_vec()).collect();
        FrameMatrix { rows: data.len() / self.cols, cols: self.cols, data }
    }

    /// Parse comma-separated reals, one frame per line. Blank lines are
    /// skipped; line numbers in errors are 1-based file lines.
    pub fn parse(bytes: &[u8]) -> Result<FrameMatrix> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
            line: 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count(),
            message: "invalid UTF-8".into(),
        })?;
        let mut cols = None;
        let mut rows = 0;
        let mut data = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let before = data.len();
            for token in line.split(',') {
                let token = token.trim();
                let value: f64 = token
                    .parse()
                    .map_err(|_| Error::Parse { line: line_no, message: format!("invalid number '{token}'") })?;
                if !value.is_finite() {
                    return Err(Error::Parse { line: line_no, message: format!("non-finite value '{token}'") });
                }
                data.push(value);
            }
            let width = data.len() - before;
            match cols {
                None => cols = Some(width),
                Some(c) if c != width => {
                    return Err(Error::Parse { line: line_no, message: format!("expected {c} values, got {width}") })
                }
                _ => {}
            }
            rows += 1;
        }
        let Some(cols) = cols else {
            return Err(Error::Parse { line: 1, message: "empty file".into() });
        };
        FrameMatrix::new(rows, cols, data)
    }

    /// Inverse of [`FrameMatrix::parse`]; values use the shortest
    /// representation that reads back bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 12);
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                write!(out, "{v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> Result<FrameMatrix> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse { line, message: format!("{message} ({})", path.display()) },
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// One recorded motion of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrial {
    pub frames: FrameMatrix,
    pub action: String,
    pub subject: String,
    pub trial: String,
    pub frame_period_ms: f64,
}

impl RawTrial {
    pub fn parse(bytes: &[u8], subject: &str, action: &str, trial: &str) -> Result<RawTrial> {
        Ok(RawTrial {
            frames: FrameMatrix::parse(bytes)?,
            action: action.to_string(),
            subject: subject.to_string(),
            trial: trial.to_string(),
            frame_period_ms: FRAME_PERIOD_MS,
        })
    }

    pub fn width(&self) -> usize {
        self.frames.cols()
    }
}
