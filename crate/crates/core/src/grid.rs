//! Agent state layout and readout.
//!
//! Every agent (grid cell) carries `C = 3 + k` channels in the fixed order
//! `[V, Ex, Ey, H0 .. H(k-1)]`. `V` is the sensor reading, `(Ex, Ey)` the
//! agent's estimate of the object center stored as an offset from its own
//! cell center in tile units, and `H` are free hidden channels.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::geom::Point2;
use crate::nn::Tensor3;

/// Distance between adjacent sensor centers on the reference hardware, in mm.
pub const HARDWARE_PITCH_MM: f64 = 37.5;

pub const DEFAULT_HIDDEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    hidden: usize,
}

impl ChannelLayout {
    pub const SENSOR: usize = 0;
    pub const EST_X: usize = 1;
    pub const EST_Y: usize = 2;
    pub const HIDDEN_START: usize = 3;

    pub fn new(hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("at least one hidden channel is required".into()));
        }
        Ok(Self { hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Total channels `C`.
    pub fn channels(&self) -> usize {
        Self::HIDDEN_START + self.hidden
    }

    /// Channels the update network may write: estimate plus hidden.
    pub fn writable(&self) -> usize {
        self.channels() - 1
    }
}

impl Default for ChannelLayout {
    fn default() -> Self {
        Self { hidden: DEFAULT_HIDDEN }
    }
}

/// An `H x W` array of sensor readings, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readings {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Readings {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(shape_err("Readings", height * width, values.len()));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }
}

/// Center of the cell at `(row, col)` in tile units.
pub fn cell_center(row: usize, col: usize) -> Point2 {
    Point2::new(col as f64 + 0.5, row as f64 + 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    tensor: Tensor3,
    layout: ChannelLayout,
    /// Physical distance between adjacent cell centers; 1.0 means tile units.
    pub pitch: f64,
}

/// The empty state for `readings`: `V` = readings, `E` = 0, `H` = 0.
pub fn init_grid(readings: &Readings, layout: ChannelLayout) -> Result<StateGrid> {
    if let Some(i) = readings.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "sensor reading at row {}, col {}",
            i / readings.width.max(1),
            i % readings.width.max(1)
        )));
    }
    let mut tensor = Tensor3::zeros(layout.channels(), readings.height, readings.width);
    tensor
        .plane_mut(ChannelLayout::SENSOR)
        .copy_from_slice(&readings.values);
    Ok(StateGrid {
        tensor,
        layout,
        pitch: 1.0,
    })
}

impl StateGrid {
    pub fn from_tensor(tensor: Tensor3, layout: ChannelLayout) -> Result<Self> {
        if tensor.channels() != layout.channels() {
            return Err(shape_err("StateGrid channels", layout.channels(), tensor.channels()));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFinite("state tensor".into()));
        }
        Ok(Self {
            tensor,
            layout,
            pitch: 1.0,
        })
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    pub(crate) fn tensor_mut(&mut self) -> &mut Tensor3 {
        &mut self.tensor
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn height(&self) -> usize {
        self.tensor.height()
    }

    pub fn width(&self) -> usize {
        self.tensor.width()
    }

    pub fn cells(&self) -> usize {
        self.tensor.plane_len()
    }

    pub fn sensor(&self) -> &[f64] {
        self.tensor.plane(ChannelLayout::SENSOR)
    }

    /// Estimate offset `(Ex, Ey)` of one cell.
    pub fn offset(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.tensor.at(ChannelLayout::EST_X, row, col),
            self.tensor.at(ChannelLayout::EST_Y, row, col),
        )
    }

    pub fn set_offset(&mut self, row: usize, col: usize, e: Point2) {
        *self.tensor.at_mut(ChannelLayout::EST_X, row, col) = e.x;
        *self.tensor.at_mut(ChannelLayout::EST_Y, row, col) = e.y;
    }

    /// Per-agent global estimate in tile units, row-major.
    pub fn global_estimates(&self) -> Vec<Point2> {
        let w = self.width();
        let ex = self.tensor.plane(ChannelLayout::EST_X);
        let ey = self.tensor.plane(ChannelLayout::EST_Y);
        ex.iter()
            .zip(ey)
            .enumerate()
            .map(|(i, (&dx, &dy))| cell_center(i / w, i % w) + Point2::new(dx, dy))
            .collect()
    }

    /// Unweighted consensus over all agents, in tile units.
    pub fn mean_estimate(&self) -> Point2 {
        let n = self.cells() as f64;
        let (sx, sy) = self
            .global_estimates()
            .into_iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point2::new(sx / n, sy / n)
    }

    /// Converts a tile-unit point to physical units using this grid's pitch.
    pub fn to_physical(&self, p: Point2) -> Point2 {
        p.scale(self.pitch)
    }
}
