//! Seeded sweeps over sensor faults, signal noise and grid size, the
//! two-distribution performance comparison, and their CSV/SVG/manifest output.
//!
//! Every random draw is keyed by `(seed, condition index, trial index)`, so
//! results do not depend on the worker count or on which other conditions run.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{cnn_forward, CnnModel};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::{Readings, HARDWARE_PITCH_MM};
use crate::nca::{NcaModel, RolloutConfig};
use crate::rng::{mix_all, seeded};
use crate::stats::{mann_whitney_u, MannWhitney, Summary};
use crate::training::{eval_seed, evaluate_one, Checkpoint, CheckpointModel};
use crate::world::{generate_dataset, inject_faults, inject_noise, ReadingMode, Sample, ShapeSpec};

const KEY_FAULT: u64 = 11;
const KEY_NOISE: u64 = 12;
const KEY_SCALE: u64 = 13;

pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_SCALE_SIZES: [usize; 5] = [4, 8, 16, 32, 64];
pub const FULL_SCALE_SIZES: [usize; 6] = [4, 8, 16, 32, 64, 100];

/// Fault fractions 0.0, 0.1, ..., 0.9.
pub fn fault_levels() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

/// Noise levels 0.0, 0.1, ..., 1.0.
pub fn noise_levels() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// A trained estimator of either kind.
#[derive(Debug, Clone, Copy)]
pub enum ModelRef<'a> {
    Nca { model: &'a NcaModel, rollout: RolloutConfig },
    Centralized(&'a CnnModel),
}

impl<'a> ModelRef<'a> {
    pub fn from_checkpoint(ckpt: &'a Checkpoint) -> Self {
        match &ckpt.content {
            CheckpointModel::Nca { model, rollout, .. } => ModelRef::Nca {
                model,
                rollout: *rollout,
            },
            CheckpointModel::Centralized { model, .. } => ModelRef::Centralized(model),
        }
    }

    /// Distance between the estimate from `readings` and `truth`. The NCA
    /// rollout draws from `seed`; the CNN is deterministic and ignores it.
    pub fn error(&self, readings: &Readings, truth: Point2, seed: u64) -> Result<f64> {
        match *self {
            ModelRef::Nca { model, rollout } => {
                let sample = Sample {
                    readings: readings.clone(),
                    true_center: truth,
                    shape: String::new(),
                    placement: None,
                    mode: ReadingMode::Binary,
                };
                evaluate_one(model, &sample, &rollout, seed)
            }
            ModelRef::Centralized(model) => Ok(cnn_forward(readings, model)?.distance(truth)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    /// Numeric axis value; `None` for categorical conditions.
    pub value: Option<f64>,
    /// Per-trial errors in trial order, tiles.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Condition {
    pub fn new(label: impl Into<String>, value: Option<f64>, errors: Vec<f64>) -> Self {
        let s = Summary::of(&errors).unwrap_or(Summary {
            n: 0,
            mean: f64::NAN,
            std: f64::NAN,
        });
        Self {
            label: label.into(),
            value,
            errors,
            mean: s.mean,
            std: s.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub conditions: Vec<Condition>,
    pub trials: usize,
    pub seed: u64,
}

impl SweepResult {
    pub fn means(&self) -> Vec<f64> {
        self.conditions.iter().map(|c| c.mean).collect()
    }

    pub fn condition(&self, label: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.label == label)
    }
}

fn level_label(v: f64) -> String {
    format!("{v}")
}

/// Runs `trials` trials per level. Trial `t` uses test sample `t mod n`, its
/// rollout seed is the same as in [`crate::training::evaluate`], and the
/// corruption stream is keyed by `(seed, key, level index, t)`.
fn corruption_sweep<F>(
    model: ModelRef<'_>,
    test: &[Sample],
    levels: &[f64],
    trials: usize,
    seed: u64,
    axis: &str,
    key: u64,
    corrupt: F,
) -> Result<SweepResult>
where
    F: Fn(&Readings, f64, &mut crate::rng::Rng) -> Result<Readings> + Sync,
{
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let conditions = levels
        .iter()
        .enumerate()
        .map(|(ci, &level)| {
            let errors = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let sample = &test[t % test.len()];
                    let mut rng = seeded(mix_all(seed, &[key, ci as u64, t as u64]));
                    let readings = corrupt(&sample.readings, level, &mut rng)?;
                    model.error(&readings, sample.true_center, eval_seed(seed, t))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Condition::new(level_label(level), Some(level), errors))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: axis.into(),
        conditions,
        trials,
        seed,
    })
}

/// Error versus fraction of dead (zero-reading) sensors.
pub fn exp_fault(model: ModelRef<'_>, test: &[Sample], fractions: &[f64], trials: usize, seed: u64) -> Result<SweepResult> {
    corruption_sweep(model, test, fractions, trials, seed, "fault_fraction", KEY_FAULT, |r, f, rng| {
        inject_faults(r, f, rng).map(|(out, _)| out)
    })
}

/// Error versus signal-relative noise level.
pub fn exp_noise(model: ModelRef<'_>, test: &[Sample], levels: &[f64], trials: usize, seed: u64) -> Result<SweepResult> {
    corruption_sweep(model, test, levels, trials, seed, "noise_level", KEY_NOISE, inject_noise)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub sizes: Vec<usize>,
    pub positions_per_shape: usize,
    /// When set, rollout step bounds are multiplied by `size / reference`.
    pub step_reference: Option<usize>,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            sizes: DEFAULT_SCALE_SIZES.to_vec(),
            positions_per_shape: 20,
            step_reference: None,
        }
    }
}

/// Evaluates one NCA model on fresh binary data at every square grid size.
/// Fixed-input models are rejected.
pub fn exp_scale(model: ModelRef<'_>, shapes: &[ShapeSpec], cfg: &ScaleConfig, seed: u64) -> Result<SweepResult> {
    let (nca, rollout) = match model {
        ModelRef::Nca { model, rollout } => (model, rollout),
        ModelRef::Centralized(cnn) => {
            let (h, w) = cnn.input_dims();
            let size = cfg.sizes.iter().copied().find(|&s| (s, s) != (h, w)).unwrap_or(h + 1);
            return Err(Error::FixedInputSize {
                trained_h: h,
                trained_w: w,
                got_h: size,
                got_w: size,
            });
        }
    };
    if shapes.is_empty() || cfg.positions_per_shape == 0 {
        return Err(Error::Config("scale sweep needs at least one shape and position".into()));
    }
    let conditions = cfg
        .sizes
        .iter()
        .map(|&size| {
            let size_seed = mix_all(seed, &[KEY_SCALE, size as u64]);
            let data = generate_dataset(shapes, cfg.positions_per_shape, size, size, ReadingMode::Binary, size_seed)?;
            let rollout = match cfg.step_reference {
                Some(r) if r > 0 => rollout.scaled_steps(size as f64 / r as f64),
                _ => rollout,
            };
            let m = ModelRef::Nca { model: nca, rollout };
            let errors = data
                .par_iter()
                .enumerate()
                .map(|(i, s)| m.error(&s.readings, s.true_center, eval_seed(size_seed, i)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Condition::new(size.to_string(), Some(size as f64), errors))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: "grid_size".into(),
        conditions,
        trials: shapes.len() * cfg.positions_per_shape,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceResult {
    /// Errors in tiles, one condition per dataset variant.
    pub sweep: SweepResult,
    pub pitch_mm: f64,
    pub test: MannWhitney,
}

impl PerformanceResult {
    pub fn errors_mm(&self, index: usize) -> Vec<f64> {
        self.sweep.conditions[index].errors.iter().map(|e| e * self.pitch_mm).collect()
    }
}

/// Evaluates two (model, test set) pairs and compares their error
/// distributions with a two-sided Mann-Whitney U test.
pub fn exp_performance(
    a: (&str, ModelRef<'_>, &[Sample]),
    b: (&str, ModelRef<'_>, &[Sample]),
    pitch_mm: Option<f64>,
    seed: u64,
) -> Result<PerformanceResult> {
    let run = |model: ModelRef<'_>, data: &[Sample]| -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Config("test set is empty".into()));
        }
        data.par_iter()
            .enumerate()
            .map(|(i, s)| model.error(&s.readings, s.true_center, eval_seed(seed, i)))
            .collect()
    };
    let ea = run(a.1, a.2)?;
    let eb = run(b.1, b.2)?;
    let test = mann_whitney_u(&ea, &eb);
    Ok(PerformanceResult {
        sweep: SweepResult {
            axis: "dataset".into(),
            trials: ea.len().max(eb.len()),
            conditions: vec![Condition::new(a.0, None, ea), Condition::new(b.0, None, eb)],
            seed,
        },
        pitch_mm: pitch_mm.unwrap_or(HARDWARE_PITCH_MM),
        test,
    })
}

/// CSV with header `condition,trial,error`, one row per trial.
pub fn write_results(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["condition", "trial", "error"])?;
    for c in &result.conditions {
        for (t, e) in c.errors.iter().enumerate() {
            w.write_record([c.label.as_str(), &t.to_string(), &e.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a results CSV back into `(condition, trial, error)` rows.
pub fn read_results(path: &Path) -> Result<Vec<(String, usize, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        if rec.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", rec.len())));
        }
        let trial = rec[1].parse().map_err(|e| parse_err(format!("trial: {e}")))?;
        let error = rec[2].parse().map_err(|e| parse_err(format!("error: {e}")))?;
        rows.push((rec[0].to_string(), trial, error));
    }
    Ok(rows)
}

/// SVG line plot of per-condition mean error with a shaded ±1 std band.
pub fn render_plot(result: &SweepResult, path: &Path) -> Result<()> {
    std::fs::write(path, plot_svg(result))?;
    Ok(())
}

pub fn plot_svg(result: &SweepResult) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;
    let pts: Vec<(f64, f64)> = result
        .conditions
        .iter()
        .filter(|c| c.mean.is_finite())
        .map(|c| (c.mean, if c.std.is_finite() { c.std } else { 0.0 }))
        .collect();
    let y_max = pts.iter().map(|(m, s)| m + s).fold(0.0_f64, f64::max).max(1e-9) * 1.1;
    let n = result.conditions.len();
    let x_of = |i: usize| {
        if n <= 1 {
            L + (W - L - R) / 2.0
        } else {
            L + (W - L - R) * i as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| T + (H - T - B) * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - B,
        W - R,
        H - B
    );
    let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            L - 6.0,
            y + 4.0
        );
    }
    let finite: Vec<(usize, &Condition)> =
        result.conditions.iter().enumerate().filter(|(_, c)| c.mean.is_finite()).collect();
    if !finite.is_empty() {
        let std_of = |c: &Condition| if c.std.is_finite() { c.std } else { 0.0 };
        let mut band: Vec<String> = finite
            .iter()
            .map(|(i, c)| format!("{:.2},{:.2}", x_of(*i), y_of(c.mean + std_of(c))))
            .collect();
        band.extend(
            finite
                .iter()
                .rev()
                .map(|(i, c)| format!("{:.2},{:.2}", x_of(*i), y_of((c.mean - std_of(c)).max(0.0)))),
        );
        let _ = writeln!(s, r##"<polygon points="{}" fill="#4c72b0" fill-opacity="0.25"/>"##, band.join(" "));
        let line: Vec<String> = finite
            .iter()
            .map(|(i, c)| format!("{:.2},{:.2}", x_of(*i), y_of(c.mean)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#4c72b0" stroke-width="2"/>"##,
            line.join(" ")
        );
        for (i, c) in &finite {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#4c72b0"/>"##,
                x_of(*i),
                y_of(c.mean)
            );
        }
    }
    for (i, c) in result.conditions.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x_of(i),
            H - B + 16.0,
            xml_escape(&c.label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
        L + (W - L - R) / 2.0,
        H - 10.0,
        xml_escape(&result.axis)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">mean error (tiles)</text>"#,
        H / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Provenance record written next to experiment outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub seed: u64,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
    /// Output file names relative to the manifest directory.
    pub artifacts: Vec<String>,
    /// Headline numbers of the run, command specific.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
