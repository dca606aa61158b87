use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::raster::{rasterize_footprint, ReadingMode};
use super::shapes::{true_center, Placement, ShapeSpec};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::Readings;
use crate::rng::{mix_all, seeded};

const FIXED_COLUMNS: [&str; 6] = ["grid_h", "grid_w", "mode", "cx", "cy", "shape"];

/// Placement attempts before accepting a footprint that misses every cell.
const MAX_PLACEMENT_TRIES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub readings: Readings,
    /// Geometric center of the footprint, tile units.
    pub true_center: Point2,
    pub shape: String,
    /// Known for generated samples; not stored in dataset files.
    pub placement: Option<Placement>,
    pub mode: ReadingMode,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.readings.height()
    }

    pub fn width(&self) -> usize {
        self.readings.width()
    }
}

/// Places one shape with its centroid uniform over the grid and a uniform rotation.
pub fn sample_placement(shape: &ShapeSpec, height: usize, width: usize, seed: u64, mode: ReadingMode) -> Result<Sample> {
    let mut rng = seeded(seed);
    let local = shape.centroid();
    let mut last = None;
    for _ in 0..MAX_PLACEMENT_TRIES {
        let target = Point2::new(rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64));
        let rotation = rng.gen_range(0.0..std::f64::consts::TAU);
        let placement = Placement {
            translation: target - local,
            rotation,
        };
        let raster = rasterize_footprint(shape, &placement, height, width, mode)?;
        let sample = Sample {
            readings: raster.readings,
            true_center: true_center(shape, &placement)?,
            shape: shape.name.clone(),
            placement: Some(placement),
            mode,
        };
        if !raster.empty && sample.readings.values().iter().any(|&v| v != 0.0) {
            return Ok(sample);
        }
        last = Some(sample);
    }
    Ok(last.expect("at least one attempt"))
}

/// `positions_per_shape` random placements of every shape, shape-major order.
/// Sample `j` of shape `s` uses seed `mix(seed, s, j)`.
pub fn generate_dataset(
    shapes: &[ShapeSpec],
    positions_per_shape: usize,
    height: usize,
    width: usize,
    mode: ReadingMode,
    seed: u64,
) -> Result<Vec<Sample>> {
    if height == 0 || width == 0 {
        return Err(Error::Config("grid dimensions must be positive".into()));
    }
    (0..shapes.len() * positions_per_shape)
        .into_par_iter()
        .map(|k| {
            let (s, j) = (k / positions_per_shape, k % positions_per_shape);
            sample_placement(&shapes[s], height, width, mix_all(seed, &[s as u64, j as u64]), mode)
        })
        .collect()
}

/// Writes `grid_h,grid_w,mode,cx,cy,shape,r0c0,r0c1,...`, one sample per line.
pub fn save_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    if let Some(first) = samples.first() {
        for r in 0..first.height() {
            for c in 0..first.width() {
                header.push(format!("r{r}c{c}"));
            }
        }
    }
    w.write_record(&header)?;
    for s in samples {
        let mut rec = vec![
            s.height().to_string(),
            s.width().to_string(),
            s.mode.to_string(),
            s.true_center.x.to_string(),
            s.true_center.y.to_string(),
            s.shape.clone(),
        ];
        rec.extend(s.readings.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    if !header.is_empty() {
        let got: Vec<&str> = header.iter().take(FIXED_COLUMNS.len()).collect();
        if got != FIXED_COLUMNS {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header starting {}, got {}", FIXED_COLUMNS.join(","), got.join(",")),
            });
        }
    }
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() < FIXED_COLUMNS.len() {
            return Err(err(format!("expected at least {} fields, got {}", FIXED_COLUMNS.len(), rec.len())));
        }
        let h: usize = rec[0].parse().map_err(|e| err(format!("grid_h '{}': {e}", &rec[0])))?;
        let w: usize = rec[1].parse().map_err(|e| err(format!("grid_w '{}': {e}", &rec[1])))?;
        let mode: ReadingMode = rec[2].parse().map_err(|e: Error| err(e.to_string()))?;
        let num = |idx: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[idx].parse().map_err(|e| err(format!("{name} '{}': {e}", &rec[idx])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("{name} is not finite")))
            }
        };
        let cx = num(3, "cx")?;
        let cy = num(4, "cy")?;
        let n = rec.len() - FIXED_COLUMNS.len();
        if n != h * w {
            return Err(err(format!("{h}x{w} grid needs {} readings, got {n}", h * w)));
        }
        let values = (0..n)
            .map(|k| num(FIXED_COLUMNS.len() + k, "reading"))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            readings: Readings::new(h, w, values)?,
            true_center: Point2::new(cx, cy),
            shape: rec[5].to_string(),
            placement: None,
            mode,
        });
    }
    Ok(samples)
}
