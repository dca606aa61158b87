//! Per-sensor polynomial calibration and a synthetic sensor response model.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::grid::Readings;
use crate::rng::{seeded, Rng};

pub const DEFAULT_DEGREE: usize = 3;

/// `c0 + c1 x + ... + cd x^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Config("polynomial needs at least one coefficient".into()));
        }
        if !coeffs.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("polynomial coefficients".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn identity() -> Self {
        Self { coeffs: vec![0.0, 1.0] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub curve: Polynomial,
    pub residual_rms: f64,
}

/// Least-squares fit of `force = p(raw)` with `degree + 1` coefficients.
pub fn fit_calibration(pairs: &[(f64, f64)], degree: usize) -> Result<CalibrationFit> {
    let mut distinct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return Err(Error::RankDeficient(format!(
            "degree {degree} needs {} distinct raw values, got {}",
            degree + 1,
            distinct.len()
        )));
    }
    if !pairs.iter().all(|(x, y)| x.is_finite() && y.is_finite()) {
        return Err(Error::NonFinite("calibration pairs".into()));
    }
    let n = pairs.len();
    let design = DMatrix::from_fn(n, degree + 1, |i, j| pairs[i].0.powi(j as i32));
    let target = DVector::from_iterator(n, pairs.iter().map(|p| p.1));
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * (n.max(degree + 1) as f64) * f64::EPSILON;
    if svd.rank(tol) < degree + 1 {
        return Err(Error::RankDeficient("design matrix is numerically singular".into()));
    }
    let coeffs = svd
        .solve(&target, tol)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &design * &coeffs - &target;
    let residual_rms = (resid.norm_squared() / n as f64).sqrt();
    Ok(CalibrationFit {
        curve: Polynomial::new(coeffs.iter().copied().collect())?,
        residual_rms,
    })
}

/// One curve per sensor cell, row-major; `None` marks an uncharacterized cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    height: usize,
    width: usize,
    curves: Vec<Option<Polynomial>>,
}

impl CalibrationTable {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            curves: vec![None; height * width],
        }
    }

    pub fn uniform(height: usize, width: usize, curve: Polynomial) -> Self {
        Self {
            height,
            width,
            curves: vec![Some(curve); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&Polynomial> {
        self.curves[row * self.width + col].as_ref()
    }

    pub fn set(&mut self, row: usize, col: usize, curve: Polynomial) {
        self.curves[row * self.width + col] = Some(curve);
    }

    /// CSV with header `row,col,c0,...,cd`; `d` is the highest degree present.
    pub fn save(&self, path: &Path) -> Result<()> {
        let degree = self.curves.iter().flatten().map(|c| c.degree()).max().unwrap_or(0);
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["row".to_string(), "col".to_string()];
        header.extend((0..=degree).map(|i| format!("c{i}")));
        w.write_record(&header)?;
        for row in 0..self.height {
            for col in 0..self.width {
                if let Some(c) = self.get(row, col) {
                    let mut rec = vec![row.to_string(), col.to_string()];
                    rec.extend((0..=degree).map(|i| c.coeffs.get(i).copied().unwrap_or(0.0).to_string()));
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a calibration CSV for a grid of the given size.
    pub fn load(path: &Path, height: usize, width: usize) -> Result<Self> {
        let mut table = Self::empty(height, width);
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            if rec.len() < 3 {
                return Err(parse_err(format!("expected row,col and at least one coefficient, got {} fields", rec.len())));
            }
            let row: usize = rec[0].trim().parse().map_err(|e| parse_err(format!("row: {e}")))?;
            let col: usize = rec[1].trim().parse().map_err(|e| parse_err(format!("col: {e}")))?;
            if row >= height || col >= width {
                return Err(parse_err(format!("cell ({row}, {col}) outside {height}x{width} grid")));
            }
            let coeffs = rec
                .iter()
                .skip(2)
                .map(|f| f.trim().parse::<f64>().map_err(|e| parse_err(format!("coefficient '{f}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            table.set(row, col, Polynomial::new(coeffs).map_err(|e| parse_err(e.to_string()))?);
        }
        Ok(table)
    }
}

/// Evaluates each cell's curve on its reading.
pub fn apply_calibration(readings: &Readings, table: &CalibrationTable) -> Result<Readings> {
    if (readings.height(), readings.width()) != (table.height, table.width) {
        return Err(shape_err(
            "apply_calibration grid",
            (table.height, table.width),
            (readings.height(), readings.width()),
        ));
    }
    let mut out = readings.clone();
    let w = readings.width();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        let curve = table.curves[i].as_ref().ok_or(Error::MissingCurve { row: i / w, col: i % w })?;
        *v = curve.eval(*v);
    }
    Ok(out)
}

/// Synthetic per-cell sensor response `raw = g f + q f^2` with cell-specific
/// gain `g` and mild curvature `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    height: usize,
    width: usize,
    responses: Vec<Polynomial>,
}

impl SensorArray {
    pub fn random(height: usize, width: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let responses = (0..height * width)
            .map(|_| {
                let gain = rng.gen_range(0.7..1.3);
                let curvature = rng.gen_range(-0.08..0.08);
                Polynomial {
                    coeffs: vec![0.0, gain, curvature],
                }
            })
            .collect();
        Self {
            height,
            width,
            responses,
        }
    }

    pub fn response(&self, row: usize, col: usize) -> &Polynomial {
        &self.responses[row * self.width + col]
    }

    /// Raw readings the array produces for the given per-cell forces.
    pub fn measure(&self, force: &Readings) -> Result<Readings> {
        if (force.height(), force.width()) != (self.height, self.width) {
            return Err(shape_err(
                "SensorArray::measure",
                (self.height, self.width),
                (force.height(), force.width()),
            ));
        }
        let mut out = force.clone();
        for (v, p) in out.values_mut().iter_mut().zip(&self.responses) {
            *v = p.eval(*v);
        }
        Ok(out)
    }

    /// Loads every cell at each force level, records noisy raw values, and
    /// fits a raw-to-force curve per cell.
    pub fn characterize(&self, levels: &[f64], noise_std: f64, degree: usize, rng: &mut Rng) -> Result<CalibrationTable> {
        let mut table = CalibrationTable::empty(self.height, self.width);
        for row in 0..self.height {
            for col in 0..self.width {
                let resp = self.response(row, col);
                let pairs: Vec<(f64, f64)> = levels
                    .iter()
                    .map(|&f| {
                        let z: f64 = rng.sample(StandardNormal);
                        (resp.eval(f) + noise_std * z, f)
                    })
                    .collect();
                table.set(row, col, fit_calibration(&pairs, degree)?.curve);
            }
        }
        Ok(table)
    }
}
