//! The shared update rule and the asynchronous rollout loop.
//!
//! One step computes a residual for every cell from the full time-`t`
//! snapshot, then a per-cell Bernoulli mask decides which cells commit it:
//!
//! ```text
//! features = [conv3x3(S) | sobel(S)]          (3C channels)
//! r        = W_out · relu(W_proc · features)  (C-1 channels: E and H)
//! S'[E,H]  = S[E,H] + mask · r                (V is never written)
//! ```

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::geom::Point2;
use crate::grid::{ChannelLayout, StateGrid};
use crate::nn::{
    conv_backward_accumulate, conv_forward_into, relu_gate, relu_in_place, sobel_backward_accumulate,
    sobel_forward_into, ConvParams, ParamBlock, Tensor3,
};
use crate::rng::Rng;

pub const DEFAULT_PROCESSING_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcaModel {
    layout: ChannelLayout,
    perception: ConvParams,
    processing: ConvParams,
    output: ConvParams,
}

impl NcaModel {
    /// Random perception and processing kernels with zero biases; the output
    /// layer starts at exactly zero so the untrained model is the identity.
    pub fn new(layout: ChannelLayout, processing_width: usize, rng: &mut Rng) -> Result<Self> {
        let c = layout.channels();
        Ok(Self {
            layout,
            perception: ConvParams::uniform(c, c, 3, rng)?,
            processing: ConvParams::uniform(processing_width, 3 * c, 1, rng)?,
            output: ConvParams::zeros(layout.writable(), processing_width, 1)?,
        })
    }

    /// All parameters zero.
    pub fn zeros(layout: ChannelLayout, processing_width: usize) -> Self {
        let c = layout.channels();
        Self {
            layout,
            perception: ConvParams::zeros(c, c, 3).expect("valid kernel size"),
            processing: ConvParams::zeros(processing_width, 3 * c, 1).expect("valid kernel size"),
            output: ConvParams::zeros(layout.writable(), processing_width, 1).expect("valid kernel size"),
        }
    }

    pub fn from_layers(
        layout: ChannelLayout,
        perception: ConvParams,
        processing: ConvParams,
        output: ConvParams,
    ) -> Result<Self> {
        let m = Self {
            layout,
            perception,
            processing,
            output,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks that every layer is consistent with the channel layout.
    pub fn validate(&self) -> Result<()> {
        let c = self.layout.channels();
        let f = self.processing.out_channels();
        let expect = [
            ("perception", &self.perception, (c, c, 3)),
            ("processing", &self.processing, (f, 3 * c, 1)),
            ("output", &self.output, (self.layout.writable(), f, 1)),
        ];
        for (name, p, (o, i, k)) in expect {
            let got = (p.out_channels(), p.in_channels(), p.kernel_size());
            if got != (o, i, k) {
                return Err(Error::ShapeMismatch {
                    context: "NcaModel layer",
                    expected: format!("{name} {:?}", (o, i, k)),
                    actual: format!("{got:?}"),
                });
            }
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("{name} layer parameters")));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn processing_width(&self) -> usize {
        self.processing.out_channels()
    }

    pub fn perception(&self) -> &ConvParams {
        &self.perception
    }

    pub fn processing(&self) -> &ConvParams {
        &self.processing
    }

    pub fn output(&self) -> &ConvParams {
        &self.output
    }

    pub fn output_mut(&mut self) -> &mut ConvParams {
        &mut self.output
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout, self.processing_width())
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.perception.kernel(),
            self.perception.bias(),
            self.processing.kernel(),
            self.processing.bias(),
            self.output.kernel(),
            self.output.bias(),
        ]
    }

    pub fn param_blocks_mut(&mut self) -> Vec<ParamBlock<'_>> {
        let NcaModel {
            perception,
            processing,
            output,
            ..
        } = self;
        let (pk, pb) = perception.parts_mut();
        let (qk, qb) = processing.parts_mut();
        let (ok, ob) = output.parts_mut();
        vec![
            ParamBlock { name: "perception.kernel", values: pk },
            ParamBlock { name: "perception.bias", values: pb },
            ParamBlock { name: "processing.kernel", values: qk },
            ParamBlock { name: "processing.bias", values: qb },
            ParamBlock { name: "output.kernel", values: ok },
            ParamBlock { name: "output.bias", values: ob },
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape_err("NcaModel::set_flat", self.param_count(), flat.len()));
        }
        let mut rest = flat;
        for block in self.param_blocks_mut() {
            let (head, tail) = rest.split_at(block.values.len());
            block.values.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Adds `other`'s parameters into `self` elementwise.
    pub(crate) fn add_assign(&mut self, other: &NcaModel) {
        for (dst, src) in self.param_blocks_mut().into_iter().zip(other.param_slices()) {
            for (d, s) in dst.values.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for block in self.param_blocks_mut() {
            for v in block.values.iter_mut() {
                *v *= s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub steps_min: usize,
    pub steps_max: usize,
    /// Probability that a cell commits its residual in a given step.
    pub fire_rate: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            steps_min: 15,
            steps_max: 30,
            fire_rate: 0.5,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_min > self.steps_max {
            return Err(Error::Config(format!(
                "steps_min {} exceeds steps_max {}",
                self.steps_min, self.steps_max
            )));
        }
        if !(self.fire_rate > 0.0 && self.fire_rate <= 1.0) {
            return Err(Error::Config(format!(
                "fire rate must be in (0, 1], got {}",
                self.fire_rate
            )));
        }
        Ok(())
    }

    /// Multiplies both step bounds by `factor`, rounding up.
    pub fn scaled_steps(&self, factor: f64) -> Self {
        Self {
            steps_min: (self.steps_min as f64 * factor).ceil() as usize,
            steps_max: (self.steps_max as f64 * factor).ceil() as usize,
            ..*self
        }
    }
}

/// Per-cell Bernoulli(`p`) fire mask, drawn in row-major order.
pub fn sample_fire_mask(cells: usize, p: f64, rng: &mut Rng) -> Vec<bool> {
    (0..cells).map(|_| rng.gen::<f64>() < p).collect()
}

/// Perception features: learned 3x3 conv (C channels) then depthwise Sobel (2C).
pub fn perceive(grid: &StateGrid, model: &NcaModel) -> Result<Tensor3> {
    check_grid(grid, model)?;
    let (c, h, w) = grid.tensor().shape();
    let mut feats = Tensor3::zeros(3 * c, h, w);
    perceive_into(grid.tensor().data(), h, w, model, feats.data_mut());
    Ok(feats)
}

fn check_grid(grid: &StateGrid, model: &NcaModel) -> Result<()> {
    if grid.layout() != model.layout {
        return Err(shape_err(
            "grid channel layout",
            model.layout.channels(),
            grid.layout().channels(),
        ));
    }
    Ok(())
}

fn perceive_into(state: &[f64], h: usize, w: usize, model: &NcaModel, feats: &mut [f64]) {
    let c = model.layout.channels();
    let n = h * w;
    let (conv_part, sobel_part) = feats.split_at_mut(c * n);
    conv_forward_into(state, h, w, &model.perception, conv_part);
    sobel_forward_into(state, c, h, w, sobel_part);
}

/// Scratch and (optionally) recorded activations for one step.
#[derive(Debug, Clone)]
struct StepRecord {
    state: Vec<f64>,
    feats: Vec<f64>,
    pre: Vec<f64>,
    mask: Vec<bool>,
}

/// Computes the residual for every cell from `state` and commits it where `mask` is set.
fn step_in_place(
    state: &mut [f64],
    h: usize,
    w: usize,
    model: &NcaModel,
    mask: &[bool],
    feats: &mut Vec<f64>,
    pre: &mut Vec<f64>,
    hidden: &mut Vec<f64>,
    resid: &mut Vec<f64>,
) {
    let n = h * w;
    let c = model.layout.channels();
    let f = model.processing_width();
    feats.resize(3 * c * n, 0.0);
    pre.resize(f * n, 0.0);
    hidden.resize(f * n, 0.0);
    resid.resize((c - 1) * n, 0.0);

    perceive_into(state, h, w, model, feats);
    conv_forward_into(feats, h, w, &model.processing, pre);
    hidden.copy_from_slice(pre);
    relu_in_place(hidden);
    conv_forward_into(hidden, h, w, &model.output, resid);

    for (ch, r_plane) in resid.chunks_exact(n).enumerate() {
        let s_plane = &mut state[(ch + 1) * n..(ch + 2) * n];
        for ((s, &r), &fire) in s_plane.iter_mut().zip(r_plane).zip(mask) {
            if fire {
                *s += r;
            }
        }
    }
}

/// One asynchronous update with an explicit fire mask (one flag per cell, row-major).
pub fn update_step_masked(grid: &StateGrid, model: &NcaModel, mask: &[bool]) -> Result<StateGrid> {
    check_grid(grid, model)?;
    if mask.len() != grid.cells() {
        return Err(shape_err("fire mask", grid.cells(), mask.len()));
    }
    let mut next = grid.clone();
    let (h, w) = (grid.height(), grid.width());
    let mut bufs = Buffers::default();
    bufs.step(next.tensor_mut().data_mut(), h, w, model, mask);
    Ok(next)
}

/// One asynchronous update; each cell fires with probability `fire_rate`.
pub fn update_step(grid: &StateGrid, model: &NcaModel, fire_rate: f64, rng: &mut Rng) -> Result<StateGrid> {
    let mask = sample_fire_mask(grid.cells(), fire_rate, rng);
    update_step_masked(grid, model, &mask)
}

#[derive(Default)]
struct Buffers {
    feats: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    resid: Vec<f64>,
}

impl Buffers {
    fn step(&mut self, state: &mut [f64], h: usize, w: usize, model: &NcaModel, mask: &[bool]) {
        step_in_place(
            state,
            h,
            w,
            model,
            mask,
            &mut self.feats,
            &mut self.pre,
            &mut self.hidden,
            &mut self.resid,
        );
    }
}

/// Runs `steps ~ U[steps_min, steps_max]` updates. Returns the final grid and the step count.
pub fn rollout(grid: &StateGrid, model: &NcaModel, cfg: &RolloutConfig, rng: &mut Rng) -> Result<(StateGrid, usize)> {
    rollout_observed(grid, model, cfg, rng, |_, _| {})
}

/// [`rollout`] that calls `observe(step, grid)` after every update.
pub fn rollout_observed<F>(
    grid: &StateGrid,
    model: &NcaModel,
    cfg: &RolloutConfig,
    rng: &mut Rng,
    mut observe: F,
) -> Result<(StateGrid, usize)>
where
    F: FnMut(usize, &StateGrid),
{
    check_grid(grid, model)?;
    let steps = rng.gen_range(cfg.steps_min..=cfg.steps_max);
    let mut state = grid.clone();
    let (h, w) = (grid.height(), grid.width());
    let mut bufs = Buffers::default();
    for t in 0..steps {
        let mask = sample_fire_mask(h * w, cfg.fire_rate, rng);
        bufs.step(state.tensor_mut().data_mut(), h, w, model, &mask);
        observe(t + 1, &state);
    }
    Ok((state, steps))
}

/// Activations of a rollout, kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct Tape {
    height: usize,
    width: usize,
    steps: Vec<StepRecord>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Backpropagates `grad_final` (dL/dS at the last step) through every
    /// recorded step, adding parameter gradients into `grads`. Fire masks are
    /// treated as constants. Returns dL/dS at the initial state.
    pub fn backward(&self, model: &NcaModel, grad_final: &Tensor3, grads: &mut NcaModel) -> Result<Tensor3> {
        let c = model.layout.channels();
        let f = model.processing_width();
        let (h, w) = (self.height, self.width);
        let n = h * w;
        grad_final.check_shape("Tape::backward grad", (c, h, w))?;
        if grads.layout != model.layout || grads.processing_width() != f {
            return Err(shape_err("gradient accumulator", (c, f), (grads.layout.channels(), grads.processing_width())));
        }

        let mut g_state = grad_final.data().to_vec();
        let mut g_resid = vec![0.0; (c - 1) * n];
        let mut hidden = vec![0.0; f * n];
        let mut g_hidden = vec![0.0; f * n];
        let mut g_feats = vec![0.0; 3 * c * n];

        let NcaModel {
            perception: gp,
            processing: gq,
            output: go,
            ..
        } = grads;
        let (gpk, gpb) = gp.parts_mut();
        let (gqk, gqb) = gq.parts_mut();
        let (gok, gob) = go.parts_mut();

        for rec in self.steps.iter().rev() {
            // Residual gradient: only fired cells passed r through.
            for (ch, plane) in g_resid.chunks_exact_mut(n).enumerate() {
                let src = &g_state[(ch + 1) * n..(ch + 2) * n];
                for ((g, &s), &fire) in plane.iter_mut().zip(src).zip(&rec.mask) {
                    *g = if fire { s } else { 0.0 };
                }
            }
            hidden.copy_from_slice(&rec.pre);
            relu_in_place(&mut hidden);

            g_hidden.fill(0.0);
            conv_backward_accumulate(&g_resid, &hidden, h, w, &model.output, Some(&mut g_hidden), gok, gob);
            relu_gate(&mut g_hidden, &rec.pre);

            g_feats.fill(0.0);
            conv_backward_accumulate(&g_hidden, &rec.feats, h, w, &model.processing, Some(&mut g_feats), gqk, gqb);

            // dS_t = dS_{t+1} (identity path) + perception contributions.
            let (g_conv, g_sobel) = g_feats.split_at(c * n);
            conv_backward_accumulate(g_conv, &rec.state, h, w, &model.perception, Some(&mut g_state), gpk, gpb);
            sobel_backward_accumulate(g_sobel, c, h, w, &mut g_state);
        }
        Tensor3::from_vec(c, h, w, g_state)
    }
}

/// [`rollout`] that also records a [`Tape`]. Consumes the RNG identically.
pub fn rollout_taped(
    grid: &StateGrid,
    model: &NcaModel,
    cfg: &RolloutConfig,
    rng: &mut Rng,
) -> Result<(StateGrid, Tape)> {
    check_grid(grid, model)?;
    let steps = rng.gen_range(cfg.steps_min..=cfg.steps_max);
    let n = grid.cells();
    let masks: Vec<Vec<bool>> = (0..steps)
        .map(|_| sample_fire_mask(n, cfg.fire_rate, rng))
        .collect();
    rollout_with_masks(grid, model, &masks)
}

/// Deterministic taped rollout with one explicit mask per step.
pub fn rollout_with_masks(grid: &StateGrid, model: &NcaModel, masks: &[Vec<bool>]) -> Result<(StateGrid, Tape)> {
    check_grid(grid, model)?;
    let (h, w) = (grid.height(), grid.width());
    let mut state = grid.clone();
    let mut bufs = Buffers::default();
    let mut steps = Vec::with_capacity(masks.len());
    for mask in masks {
        if mask.len() != h * w {
            return Err(shape_err("fire mask", h * w, mask.len()));
        }
        let before = state.tensor().data().to_vec();
        bufs.step(state.tensor_mut().data_mut(), h, w, model, mask);
        steps.push(StepRecord {
            state: before,
            feats: bufs.feats.clone(),
            pre: bufs.pre.clone(),
            mask: mask.clone(),
        });
    }
    Ok((
        state,
        Tape {
            height: h,
            width: w,
            steps,
        },
    ))
}

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub mean_estimate: Point2,
    /// Per-cell `(Ex, Ey)` offsets, row-major.
    pub offsets: Vec<[f64; 2]>,
}

impl TraceRecord {
    pub fn capture(step: usize, grid: &StateGrid) -> Self {
        let w = grid.width();
        let offsets = (0..grid.cells())
            .map(|i| {
                let e = grid.offset(i / w, i % w);
                [e.x, e.y]
            })
            .collect();
        Self {
            step,
            mean_estimate: grid.mean_estimate(),
            offsets,
        }
    }
}

/// Rolls out and writes one JSON object per line: the initial state (step 0) then every update.
pub fn write_trace<W: Write>(
    grid: &StateGrid,
    model: &NcaModel,
    cfg: &RolloutConfig,
    rng: &mut Rng,
    mut out: W,
) -> Result<(StateGrid, usize)> {
    serde_json::to_writer(&mut out, &TraceRecord::capture(0, grid))?;
    out.write_all(b"\n")?;
    let mut failure = None;
    let result = rollout_observed(grid, model, cfg, rng, |t, g| {
        if failure.is_some() {
            return;
        }
        let line = serde_json::to_writer(&mut out, &TraceRecord::capture(t, g))
            .map_err(Error::from)
            .and_then(|_| out.write_all(b"\n").map_err(Error::from));
        if let Err(e) = line {
            failure = Some(e);
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(result),
    }
}
