//! Centralized comparator: a CNN that sees the whole sensor grid and regresses
//! the object center directly. Its input size is fixed at construction.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::geom::Point2;
use crate::grid::Readings;
use crate::nn::{
    adam_step, conv_backward_accumulate, conv_forward_into, relu_gate, relu_in_place, AdamConfig, AdamState,
    ConvParams, ParamBlock,
};
use crate::rng::{mix_all, seeded, Rng};
use crate::training::{CurvePoint, Evaluation};
use crate::world::Sample;

pub const CONV1_CHANNELS: usize = 16;
pub const CONV2_CHANNELS: usize = 32;
pub const FC1_WIDTH: usize = 128;
pub const FC2_WIDTH: usize = 64;

/// Fully connected layer, `weight` is `outputs x inputs` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn uniform(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        let bound = (6.0 / inputs as f64).sqrt();
        for w in &mut d.weight {
            *w = rng.gen_range(-bound..bound);
        }
        d
    }

    pub fn from_parts(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(shape_err("Dense", (outputs, inputs), (weight.len(), bias.len())));
        }
        Ok(Self {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn forward(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *yo = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates weight/bias gradients into `grads`, writes `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Dense, dx: &mut [f64]) {
        dx.fill(0.0);
        for (o, &g) in dy.iter().enumerate() {
            grads.bias[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grads.weight[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    height: usize,
    width: usize,
    conv1: ConvParams,
    conv2: ConvParams,
    fc1: Dense,
    fc2: Dense,
    fc3: Dense,
}

/// Activations saved by the forward pass.
struct Cache {
    x: Vec<f64>,
    pre1: Vec<f64>,
    a1: Vec<f64>,
    pre2: Vec<f64>,
    a2: Vec<f64>,
    pre3: Vec<f64>,
    a3: Vec<f64>,
    pre4: Vec<f64>,
    a4: Vec<f64>,
    out: [f64; 2],
}

impl CnnModel {
    pub fn zeros(height: usize, width: usize) -> Self {
        let flat = CONV2_CHANNELS * height * width;
        Self {
            height,
            width,
            conv1: ConvParams::zeros(CONV1_CHANNELS, 1, 3).expect("valid"),
            conv2: ConvParams::zeros(CONV2_CHANNELS, CONV1_CHANNELS, 3).expect("valid"),
            fc1: Dense::zeros(flat, FC1_WIDTH),
            fc2: Dense::zeros(FC1_WIDTH, FC2_WIDTH),
            fc3: Dense::zeros(FC2_WIDTH, 2),
        }
    }

    /// He-uniform weights; the output bias starts at the grid center.
    pub fn new(height: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        let flat = CONV2_CHANNELS * height * width;
        let mut conv1 = ConvParams::uniform(CONV1_CHANNELS, 1, 3, rng)?;
        let mut conv2 = ConvParams::uniform(CONV2_CHANNELS, CONV1_CHANNELS, 3, rng)?;
        // ConvParams::uniform uses 1/sqrt(fan_in); widen to He scale for ReLU.
        for w in conv1.kernel_mut().iter_mut().chain(conv2.kernel_mut().iter_mut()) {
            *w *= 6f64.sqrt();
        }
        let mut fc3 = Dense::uniform(FC2_WIDTH, 2, rng);
        fc3.bias = vec![width as f64 / 2.0, height as f64 / 2.0];
        Ok(Self {
            height,
            width,
            conv1,
            conv2,
            fc1: Dense::uniform(flat, FC1_WIDTH, rng),
            fc2: Dense::uniform(FC1_WIDTH, FC2_WIDTH, rng),
            fc3,
        })
    }

    pub fn from_layers(
        height: usize,
        width: usize,
        conv1: ConvParams,
        conv2: ConvParams,
        fc1: Dense,
        fc2: Dense,
        fc3: Dense,
    ) -> Result<Self> {
        let m = Self {
            height,
            width,
            conv1,
            conv2,
            fc1,
            fc2,
            fc3,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let convs = [
            ("conv1", &self.conv1, (CONV1_CHANNELS, 1)),
            ("conv2", &self.conv2, (CONV2_CHANNELS, CONV1_CHANNELS)),
        ];
        for (name, c, (o, i)) in convs {
            if (c.out_channels(), c.in_channels(), c.kernel_size()) != (o, i, 3) {
                return Err(Error::ShapeMismatch {
                    context: "CnnModel layer",
                    expected: format!("{name} ({o}, {i}, 3)"),
                    actual: format!("{:?}", (c.out_channels(), c.in_channels(), c.kernel_size())),
                });
            }
        }
        let flat = CONV2_CHANNELS * self.height * self.width;
        let dense = [
            ("fc1", &self.fc1, (flat, FC1_WIDTH)),
            ("fc2", &self.fc2, (FC1_WIDTH, FC2_WIDTH)),
            ("fc3", &self.fc3, (FC2_WIDTH, 2)),
        ];
        for (name, d, (i, o)) in dense {
            if (d.inputs, d.outputs) != (i, o) || d.weight.len() != i * o || d.bias.len() != o {
                return Err(Error::ShapeMismatch {
                    context: "CnnModel layer",
                    expected: format!("{name} ({i} -> {o})"),
                    actual: format!("({} -> {})", d.inputs, d.outputs),
                });
            }
        }
        if !self.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("CNN parameters".into()));
        }
        Ok(())
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.conv1.kernel(),
            self.conv1.bias(),
            self.conv2.kernel(),
            self.conv2.bias(),
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
            &self.fc3.weight,
            &self.fc3.bias,
        ]
    }

    pub fn param_blocks_mut(&mut self) -> Vec<ParamBlock<'_>> {
        let (c1k, c1b) = self.conv1.parts_mut();
        let (c2k, c2b) = self.conv2.parts_mut();
        vec![
            ParamBlock { name: "conv1.kernel", values: c1k },
            ParamBlock { name: "conv1.bias", values: c1b },
            ParamBlock { name: "conv2.kernel", values: c2k },
            ParamBlock { name: "conv2.bias", values: c2b },
            ParamBlock { name: "fc1.weight", values: &mut self.fc1.weight },
            ParamBlock { name: "fc1.bias", values: &mut self.fc1.bias },
            ParamBlock { name: "fc2.weight", values: &mut self.fc2.weight },
            ParamBlock { name: "fc2.bias", values: &mut self.fc2.bias },
            ParamBlock { name: "fc3.weight", values: &mut self.fc3.weight },
            ParamBlock { name: "fc3.bias", values: &mut self.fc3.bias },
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape_err("CnnModel::set_flat", self.param_count(), flat.len()));
        }
        let mut rest = flat;
        for block in self.param_blocks_mut() {
            let (head, tail) = rest.split_at(block.values.len());
            block.values.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.height, self.width)
    }

    fn add_assign(&mut self, other: &CnnModel) {
        for (dst, src) in self.param_blocks_mut().into_iter().zip(other.param_slices()) {
            for (d, s) in dst.values.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn check_dims(&self, readings: &Readings) -> Result<()> {
        if (readings.height(), readings.width()) != (self.height, self.width) {
            return Err(Error::FixedInputSize {
                trained_h: self.height,
                trained_w: self.width,
                got_h: readings.height(),
                got_w: readings.width(),
            });
        }
        Ok(())
    }

    fn forward_cached(&self, readings: &Readings) -> Result<Cache> {
        self.check_dims(readings)?;
        let (h, w) = (self.height, self.width);
        let n = h * w;
        let x = readings.values().to_vec();
        let mut pre1 = vec![0.0; CONV1_CHANNELS * n];
        conv_forward_into(&x, h, w, &self.conv1, &mut pre1);
        let mut a1 = pre1.clone();
        relu_in_place(&mut a1);
        let mut pre2 = vec![0.0; CONV2_CHANNELS * n];
        conv_forward_into(&a1, h, w, &self.conv2, &mut pre2);
        let mut a2 = pre2.clone();
        relu_in_place(&mut a2);
        let mut pre3 = vec![0.0; FC1_WIDTH];
        self.fc1.forward(&a2, &mut pre3);
        let mut a3 = pre3.clone();
        relu_in_place(&mut a3);
        let mut pre4 = vec![0.0; FC2_WIDTH];
        self.fc2.forward(&a3, &mut pre4);
        let mut a4 = pre4.clone();
        relu_in_place(&mut a4);
        let mut out = [0.0; 2];
        self.fc3.forward(&a4, &mut out);
        Ok(Cache {
            x,
            pre1,
            a1,
            pre2,
            a2,
            pre3,
            a3,
            pre4,
            a4,
            out,
        })
    }

    /// Accumulates parameter gradients for output gradient `d_out` into `grads`.
    fn backward(&self, cache: &Cache, d_out: [f64; 2], grads: &mut CnnModel) {
        let (h, w) = (self.height, self.width);
        let mut d4 = vec![0.0; FC2_WIDTH];
        self.fc3.backward(&cache.a4, &d_out, &mut grads.fc3, &mut d4);
        relu_gate(&mut d4, &cache.pre4);
        let mut d3 = vec![0.0; FC1_WIDTH];
        self.fc2.backward(&cache.a3, &d4, &mut grads.fc2, &mut d3);
        relu_gate(&mut d3, &cache.pre3);
        let mut d2 = vec![0.0; cache.a2.len()];
        self.fc1.backward(&cache.a2, &d3, &mut grads.fc1, &mut d2);
        relu_gate(&mut d2, &cache.pre2);
        let mut d1 = vec![0.0; cache.a1.len()];
        let (k2, b2) = grads.conv2.parts_mut();
        conv_backward_accumulate(&d2, &cache.a1, h, w, &self.conv2, Some(&mut d1), k2, b2);
        relu_gate(&mut d1, &cache.pre1);
        let (k1, b1) = grads.conv1.parts_mut();
        conv_backward_accumulate(&d1, &cache.x, h, w, &self.conv1, None, k1, b1);
    }

    /// Squared-distance loss of one sample and its parameter gradient.
    pub fn loss_and_grad(&self, sample: &Sample) -> Result<(f64, CnnModel)> {
        let cache = self.forward_cached(&sample.readings)?;
        let dx = cache.out[0] - sample.true_center.x;
        let dy = cache.out[1] - sample.true_center.y;
        let mut grads = self.zeros_like();
        self.backward(&cache, [2.0 * dx, 2.0 * dy], &mut grads);
        Ok((dx * dx + dy * dy, grads))
    }
}

/// Predicted center in tile units. Fails for any grid size other than the one
/// the model was built for.
pub fn cnn_forward(readings: &Readings, model: &CnnModel) -> Result<Point2> {
    let out = model.forward_cached(readings)?.out;
    Ok(Point2::new(out[0], out[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CnnOutcome {
    pub model: CnnModel,
    pub curve: Vec<CurvePoint>,
}

/// Mini-batch Adam on squared distance. Batch gradients are summed in batch order.
pub fn cnn_train(train_set: &[Sample], cfg: &CnnTrainConfig) -> Result<CnnOutcome> {
    let first = train_set
        .first()
        .ok_or_else(|| Error::Config("training set is empty".into()))?;
    let mut model = CnnModel::new(first.height(), first.width(), &mut seeded(mix_all(cfg.seed, &[1])))?;
    cnn_train_from(&mut model, train_set, cfg).map(|curve| CnnOutcome { model, curve })
}

pub fn cnn_train_from(model: &mut CnnModel, train_set: &[Sample], cfg: &CnnTrainConfig) -> Result<Vec<CurvePoint>> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let batch_size = cfg.batch_size.min(train_set.len());
    let lens: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(cfg.adam, &lens);
    let scale = 1.0 / batch_size as f64;
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = seeded(mix_all(cfg.seed, &[2, step as u64]));
        let batch = sample_indices(&mut rng, train_set.len(), batch_size).into_vec();
        let results = batch
            .par_iter()
            .map(|&i| model.loss_and_grad(&train_set[i]))
            .collect::<Result<Vec<_>>>()?;
        let mut total = model.zeros_like();
        let mut loss = 0.0;
        let mut metric = 0.0;
        for (l, g) in &results {
            loss += l * scale;
            metric += l.sqrt() * scale;
            total.add_assign(g);
        }
        for block in total.param_blocks_mut() {
            for v in block.values.iter_mut() {
                *v *= scale;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("CNN training loss at step {step}")));
        }
        let grads = total.param_slices();
        adam_step(&mut adam, &mut model.param_blocks_mut(), &grads)?;
        curve.push(CurvePoint {
            step,
            loss,
            metric,
        });
    }
    Ok(curve)
}

pub fn cnn_evaluate(model: &CnnModel, dataset: &[Sample]) -> Result<Evaluation> {
    let errors = dataset
        .par_iter()
        .map(|s| cnn_forward(&s.readings, model).map(|p| p.distance(s.true_center)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation::from_errors(errors))
}
