use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::shapes::{Placement, ShapeSpec};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::Readings;

/// Supersamples per cell along each axis.
pub const SUPERSAMPLE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadingMode {
    /// 1 where at least half of the cell is covered, else 0.
    Binary,
    /// Covered fraction of the cell.
    Fractional,
    /// Covered fraction times mass per unit area.
    Pressure,
}

impl fmt::Display for ReadingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadingMode::Binary => "binary",
            ReadingMode::Fractional => "fractional",
            ReadingMode::Pressure => "pressure",
        })
    }
}

impl FromStr for ReadingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(ReadingMode::Binary),
            "fractional" => Ok(ReadingMode::Fractional),
            "pressure" => Ok(ReadingMode::Pressure),
            other => Err(Error::Config(format!(
                "unknown reading mode '{other}' (expected binary, fractional or pressure)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub readings: Readings,
    /// Set when the footprint does not touch any cell.
    pub empty: bool,
}

/// Per-cell coverage fraction by `16 x 16` supersampling.
pub fn coverage(shape: &ShapeSpec, placement: &Placement, height: usize, width: usize) -> Result<Readings> {
    let fp = shape.placed(placement)?;
    let (lo, hi) = fp.bounds();
    let mut out = Readings::zeros(height, width);
    let clamp = |v: f64, n: usize| -> usize { v.floor().clamp(0.0, n as f64) as usize };
    let (c0, c1) = (clamp(lo.x, width), clamp(hi.x + 1.0, width));
    let (r0, r1) = (clamp(lo.y, height), clamp(hi.y + 1.0, height));
    let step = 1.0 / SUPERSAMPLE as f64;
    let total = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for row in r0..r1 {
        for col in c0..c1 {
            let mut hits = 0usize;
            for j in 0..SUPERSAMPLE {
                let y = row as f64 + (j as f64 + 0.5) * step;
                for i in 0..SUPERSAMPLE {
                    let x = col as f64 + (i as f64 + 0.5) * step;
                    if fp.contains(Point2::new(x, y)) {
                        hits += 1;
                    }
                }
            }
            out.set(row, col, hits as f64 / total);
        }
    }
    Ok(out)
}

pub fn rasterize_footprint(
    shape: &ShapeSpec,
    placement: &Placement,
    height: usize,
    width: usize,
    mode: ReadingMode,
) -> Result<Raster> {
    let mut readings = coverage(shape, placement, height, width)?;
    let empty = readings.values().iter().all(|&f| f == 0.0);
    let density = shape.mass / shape.area();
    for v in readings.values_mut() {
        *v = match mode {
            ReadingMode::Binary => {
                if *v >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            ReadingMode::Fractional => *v,
            ReadingMode::Pressure => *v * density,
        };
    }
    Ok(Raster { readings, empty })
}
