//! Neighboring pixel relationships.
//!
//! An image is tiled into non-overlapping `l × l` grids anchored at the
//! top-left corner. Inside each grid the members are enumerated row-major as
//! `w_1 .. w_{l·l}` and every member is replaced by its difference to a pivot:
//! a chosen member `w_j`, the grid mean, or the grid maximum. Generator
//! up-sampling layers make members of one grid strongly dependent, which is
//! what the resulting map exposes.

mod format;
mod image;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::format::{read_npr, read_npr_file, write_npr, write_npr_file, NPR_MAGIC};
pub use self::image::ImageTensor;

/// Rounds a `[0, 1]` value to the nearest 8-bit level, back in `[0, 1]`.
pub fn quantize_unit(v: f32) -> f32 {
    self::image::quantize(v) as f32 / 255.0
}

/// Grid side used when nothing else is requested.
pub const DEFAULT_GRID_SIDE: usize = 2;
/// 1-based pivot member used when nothing else is requested.
pub const DEFAULT_PIVOT_INDEX: usize = 1;

/// Pivot subtracted from every member of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pivot {
    /// 1-based row-major member index.
    Index(usize),
    Avg,
    Max,
}

impl fmt::Display for Pivot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pivot::Index(j) => write!(f, "index:{j}"),
            Pivot::Avg => f.write_str("avg"),
            Pivot::Max => f.write_str("max"),
        }
    }
}

impl FromStr for Pivot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "avg" | "mean" => Ok(Pivot::Avg),
            "max" => Ok(Pivot::Max),
            other => {
                let idx = other.strip_prefix("index:").unwrap_or(other);
                idx.parse::<usize>()
                    .map(Pivot::Index)
                    .map_err(|_| Error::Config(format!("unknown pivot '{s}' (index:J, avg, max)")))
            }
        }
    }
}

/// Grid side and pivot choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct GridSpec {
    side: usize,
    pivot: Pivot,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    l: usize,
    pivot: Pivot,
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        GridSpec::new(raw.l, raw.pivot)
    }
}

impl From<GridSpec> for RawGrid {
    fn from(g: GridSpec) -> Self {
        RawGrid {
            l: g.side,
            pivot: g.pivot,
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            side: DEFAULT_GRID_SIDE,
            pivot: Pivot::Index(DEFAULT_PIVOT_INDEX),
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l={} pivot={}", self.side, self.pivot)
    }
}

impl GridSpec {
    pub fn new(side: usize, pivot: Pivot) -> Result<Self> {
        if !(2..=3).contains(&side) {
            return Err(Error::Config(format!("grid side must be 2 or 3, got {side}")));
        }
        if let Pivot::Index(j) = pivot {
            if j == 0 || j > side * side {
                return Err(Error::Config(format!(
                    "pivot index {j} outside 1..={} for a {side}x{side} grid",
                    side * side
                )));
            }
        }
        Ok(Self { side, pivot })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pivot(&self) -> Pivot {
        self.pivot
    }

    /// One-byte pivot code of the NPR1 format: `j` for `Index(j)`, 254 for
    /// the mean, 255 for the maximum.
    pub fn pivot_code(&self) -> u8 {
        match self.pivot {
            Pivot::Index(j) => j as u8,
            Pivot::Avg => 254,
            Pivot::Max => 255,
        }
    }

    pub fn from_codes(side: u8, code: u8) -> Result<Self> {
        let pivot = match code {
            254 => Pivot::Avg,
            255 => Pivot::Max,
            j => Pivot::Index(j as usize),
        };
        Self::new(side as usize, pivot)
    }

    /// The twelve configurations compared in the grid/pivot ablation:
    /// sides 2 and 3, each with pivots `w_1..w_4`, mean and max.
    pub fn ablation_variants() -> Vec<GridSpec> {
        let mut out = Vec::with_capacity(12);
        for side in [2, 3] {
            for pivot in [
                Pivot::Index(1),
                Pivot::Index(2),
                Pivot::Index(3),
                Pivot::Index(4),
                Pivot::Avg,
                Pivot::Max,
            ] {
                out.push(GridSpec { side, pivot });
            }
        }
        out
    }

    /// Largest size not exceeding `n` that the grid tiles exactly.
    pub fn divisible(&self, n: usize) -> usize {
        n - n % self.side
    }
}

/// Per-grid pixel differences, same layout as the cropped source image.
#[derive(Debug, Clone, PartialEq)]
pub struct NprMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    grid: GridSpec,
}

impl NprMap {
    pub fn from_parts(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        grid: GridSpec,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!("NPR maps have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} map needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if height % grid.side() != 0 || width % grid.side() != 0 {
            return Err(Error::Shape(format!(
                "{height}x{width} map is not tiled by {}x{} grids",
                grid.side(),
                grid.side()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("NPR map".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            grid,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, grid: GridSpec) -> Result<Self> {
        Self::from_parts(height, width, channels, vec![0.0; height * width * channels], grid)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Planar `C × H × W` copy of the map, the detector's input layout.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    /// Mean absolute value over all elements.
    pub fn mean_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs() as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Computes the NPR map of `image`.
///
/// Images whose sides are not multiples of the grid side are first
/// center-cropped to the largest multiple.
pub fn extract_npr(image: &ImageTensor, grid: GridSpec) -> Result<NprMap> {
    let l = grid.side();
    let (h, w) = (grid.divisible(image.height()), grid.divisible(image.width()));
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "{}x{} image is smaller than one {l}x{l} grid",
            image.height(),
            image.width()
        )));
    }
    let cropped;
    let image = if (h, w) == (image.height(), image.width()) {
        image
    } else {
        cropped = image.center_crop(h, w)?;
        &cropped
    };
    let c = image.channels();
    let src = image.data();
    let (gh, gw) = (h / l, w / l);

    // Pivot per (grid row, grid col, channel), laid out like a small image.
    let mut pivots = vec![0.0f32; gh * gw * c];
    match grid.pivot() {
        Pivot::Index(j) => {
            let (dy, dx) = ((j - 1) / l, (j - 1) % l);
            for gy in 0..gh {
                for gx in 0..gw {
                    let s = ((gy * l + dy) * w + gx * l + dx) * c;
                    let d = (gy * gw + gx) * c;
                    pivots[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        Pivot::Max => {
            pivots.fill(f32::NEG_INFINITY);
            for (y, row) in src.chunks_exact(w * c).enumerate() {
                let prow = &mut pivots[(y / l) * gw * c..(y / l + 1) * gw * c];
                for (x, px) in row.chunks_exact(c).enumerate() {
                    let p = &mut prow[(x / l) * c..(x / l + 1) * c];
                    for (pv, &v) in p.iter_mut().zip(px) {
                        *pv = pv.max(v);
                    }
                }
            }
        }
        Pivot::Avg => {
            let mut sums = vec![0.0f64; gh * gw * c];
            for (y, row) in src.chunks_exact(w * c).enumerate() {
                let srow = &mut sums[(y / l) * gw * c..(y / l + 1) * gw * c];
                for (x, px) in row.chunks_exact(c).enumerate() {
                    let s = &mut srow[(x / l) * c..(x / l + 1) * c];
                    for (sv, &v) in s.iter_mut().zip(px) {
                        *sv += v as f64;
                    }
                }
            }
            let n = (l * l) as f64;
            for (p, s) in pivots.iter_mut().zip(&sums) {
                *p = (s / n) as f32;
            }
        }
    }

    let mut data = Vec::with_capacity(src.len());
    for (y, row) in src.chunks_exact(w * c).enumerate() {
        let prow = &pivots[(y / l) * gw * c..(y / l + 1) * gw * c];
        for (x, px) in row.chunks_exact(c).enumerate() {
            let p = &prow[(x / l) * c..(x / l + 1) * c];
            data.extend(px.iter().zip(p).map(|(&v, &pv)| v - pv));
        }
    }
    NprMap::from_parts(h, w, c, data, grid)
}

/// Absolute NPR values of one channel, min-max normalized to `[0, 1]`.
///
/// A channel whose magnitudes are all equal maps to an all-zero image.
pub fn npr_heatmap(npr: &NprMap, channel: usize) -> Result<ImageTensor> {
    if channel >= npr.channels() {
        return Err(Error::Config(format!(
            "channel {channel} out of range for {}-channel NPR map",
            npr.channels()
        )));
    }
    let mags: Vec<f32> = npr
        .data()
        .iter()
        .skip(channel)
        .step_by(npr.channels())
        .map(|v| v.abs())
        .collect();
    let (lo, hi) = mags
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let data = if range > 0.0 {
        mags.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; mags.len()]
    };
    ImageTensor::new(npr.height(), npr.width(), 1, data)
}

/// Element-wise `a − b` of two maps extracted with the same grid.
pub fn npr_difference(a: &NprMap, b: &NprMap) -> Result<NprMap> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(Error::Shape(format!(
            "NPR maps differ in shape: {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    if a.grid != b.grid {
        return Err(Error::Config(format!(
            "NPR maps use different grids: {} vs {}",
            a.grid, b.grid
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    NprMap::from_parts(a.height, a.width, a.channels, data, a.grid)
}
