//! Synthetic scenarios: object footprints, rasterized sensor readings,
//! analytic ground truth, sensor faults and noise, and calibration math.

mod calibration;
mod corruption;
mod dataset;
mod raster;
mod shapes;

pub use calibration::{
    apply_calibration, fit_calibration, CalibrationFit, CalibrationTable, Polynomial, SensorArray, DEFAULT_DEGREE,
};
pub use corruption::{fault_count, inject_faults, inject_noise};
pub use dataset::{generate_dataset, load_dataset, sample_placement, save_dataset, Sample};
pub use raster::{coverage, rasterize_footprint, Raster, ReadingMode, SUPERSAMPLE};
pub use shapes::{default_shapes, polygon_centroid, true_center, Footprint, Geometry, Placement, ShapeSpec};
