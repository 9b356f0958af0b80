//! Forward evaluation of the S4D, S6 and B2S6 recurrent units.
//!
//! Every unit maps an `L x d` real sequence to an `L x d` real sequence. Each
//! channel runs its own diagonal recurrence with `x_0 = 0`; complex states are
//! read out through their real part.

mod b2s6;
mod quadratic;
mod s4d;
mod s6;
mod scan;

pub use b2s6::{b2s6_scan, B2S6Block, B2S6Params};
pub use quadratic::{quadratic_encoder, QuadraticEncoder};
pub use s4d::{s4d_scan, S4DParams};
pub use s6::{s6_scan, S6Params};
pub use scan::{selective_recurrence, ScanMode};

pub(crate) use scan::{Channel, Rows, ZohCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::C64;

/// An `L x d` real sequence stored row-major (one row per position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    len: usize,
    width: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn new(len: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || width == 0 {
            return Err(Error::Shape(format!("sequence must be non-empty, got {len}x{width}")));
        }
        if data.len() != len * width {
            return Err(Error::shape(format!("{} values for {len}x{width}", len * width), data.len()));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("sequence entry {v} is not finite")));
        }
        Ok(Self { len, width, data })
    }

    pub fn zeros(len: usize, width: usize) -> Self {
        Self {
            len,
            width,
            data: vec![0.0; len * width],
        }
    }

    /// A width-1 sequence.
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        Self::new(len, 1, values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), width, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Position `k` (0-based).
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.len - 1)
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.width + i]
    }

    /// Channel `i` as a contiguous vector over positions.
    pub fn channel(&self, i: usize) -> Vec<f64> {
        (0..self.len).map(|k| self.get(k, i)).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            len: self.len,
            width: self.width,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub(crate) fn from_channels(len: usize, channels: &[Vec<f64>]) -> Self {
        let width = channels.len();
        let mut data = vec![0.0; len * width];
        for (i, ch) in channels.iter().enumerate() {
            for (k, v) in ch.iter().enumerate() {
                data[k * width + i] = *v;
            }
        }
        Self { len, width, data }
    }
}

/// Whether a unit's state-side parameters live in the real or complex field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    #[default]
    Complex,
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// `self * v` for a real vector `v`.
    pub fn mul_real(&self, v: &[f64]) -> Vec<C64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, x)| a * x).sum())
            .collect()
    }

    /// `v^T * self` for a real vector `v`.
    pub fn left_mul_real(&self, v: &[f64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        for (r, &x) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * x;
            }
        }
        out
    }

    pub(crate) fn check(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if self.rows != rows || self.cols != cols || self.data.len() != rows * cols {
            return Err(Error::Config(format!(
                "{what} must be {rows}x{cols}, got {}x{} ({} entries)",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn drop_imaginary(&mut self) {
        for z in &mut self.data {
            z.im = 0.0;
        }
    }
}

/// Evaluation options shared by the three scans.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub mode: ScanMode,
    /// Materialize the hidden states (`L x n` per channel).
    pub keep_states: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub y: Sequence,
    /// Per channel, row-major `L x n` states, when requested.
    pub states: Option<Vec<Vec<C64>>>,
}

/// Which recurrent unit a parameter set describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    S4d,
    S6,
    B2s6,
}

impl UnitKind {
    pub fn name(&self) -> &'static str {
        match self {
            UnitKind::S4d => "s4d",
            UnitKind::S6 => "s6",
            UnitKind::B2s6 => "b2s6",
        }
    }
}

impl std::str::FromStr for UnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s4d" => Ok(UnitKind::S4d),
            "s6" | "mamba" => Ok(UnitKind::S6),
            "b2s6" => Ok(UnitKind::B2s6),
            other => Err(Error::Config(format!("unknown unit '{other}'"))),
        }
    }
}

impl std::fmt::Display for UnitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of any of the three units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Unit {
    S4d(S4DParams),
    S6(S6Params),
    B2s6(B2S6Params),
}

impl Unit {
    pub fn kind(&self) -> UnitKind {
        match self {
            Unit::S4d(_) => UnitKind::S4d,
            Unit::S6(_) => UnitKind::S6,
            Unit::B2s6(_) => UnitKind::B2s6,
        }
    }

    /// Channel count `d`.
    pub fn width(&self) -> usize {
        match self {
            Unit::S4d(p) => p.width(),
            Unit::S6(p) => p.width(),
            Unit::B2s6(p) => p.width(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Unit::S4d(p) => p.a.len(),
            Unit::S6(p) => p.a.len(),
            Unit::B2s6(p) => p.a.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Unit::S4d(p) => p.validate(),
            Unit::S6(p) => p.validate(),
            Unit::B2s6(p) => p.validate(),
        }
    }

    pub fn scan(&self, u: &Sequence) -> Result<Sequence> {
        match self {
            Unit::S4d(p) => s4d_scan(p, u),
            Unit::S6(p) => s6_scan(p, u),
            Unit::B2s6(p) => b2s6_scan(p, u),
        }
    }

    pub fn scan_with(&self, u: &Sequence, opts: ScanOptions) -> Result<ScanOutput> {
        match self {
            Unit::S4d(p) => p.scan_with(u, opts),
            Unit::S6(p) => p.scan_with(u, opts),
            Unit::B2s6(p) => p.scan_with(u, opts),
        }
    }

    /// Zero the imaginary parts of every real-typed parameter.
    pub fn enforce_field(&mut self) {
        match self {
            Unit::S4d(p) => p.enforce_field(),
            Unit::S6(p) => p.enforce_field(),
            Unit::B2s6(p) => p.enforce_field(),
        }
    }
}

pub(crate) fn check_width(u: &Sequence, d: usize) -> Result<()> {
    if u.width() != d {
        return Err(Error::shape(format!("input width {d}"), u.width()));
    }
    Ok(())
}

pub(crate) fn check_len(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Config(format!("{what} must have {n} entries, got {}", v.len())));
    }
    Ok(())
}

pub(crate) fn drop_imaginary(v: &mut [C64]) {
    for z in v {
        z.im = 0.0;
    }
}
