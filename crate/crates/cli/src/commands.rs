//! Subcommand execution.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use nca_sense::baseline::{cnn_train, CnnTrainConfig};
use nca_sense::experiments::{
    exp_fault, exp_noise, exp_performance, exp_scale, fault_levels, file_sha256, noise_levels, render_plot,
    write_results, Condition, Manifest, ModelRef, ScaleConfig, SweepResult, FULL_SCALE_SIZES,
};
use nca_sense::nca::{write_trace, RolloutConfig};
use nca_sense::rng::{mix_all, seeded};
use nca_sense::training::{
    eval_seed, load_checkpoint, save_checkpoint, split_dataset, train, write_curve, Checkpoint, CheckpointModel,
    EarlyStop, TrainConfig,
};
use nca_sense::world::{
    apply_calibration, default_shapes, generate_dataset, load_dataset, save_dataset, Sample, SensorArray, ShapeSpec,
    DEFAULT_DEGREE,
};
use nca_sense::{init_grid, Error};

use crate::args::{Cli, Command, ExpCommand};
use crate::config::{
    load_config_file, resolve, BaselineCfg, Common, EvalCfg, GenConfig, PerfCfg, ScaleCfg, SweepCfg, TrainCfg,
};
use crate::CliError;

const MANIFEST: &str = "manifest.json";
const KEY_SENSOR: u64 = 101;
const KEY_CHARACTERIZE: u64 = 102;

/// Output directory plus the bookkeeping needed for its manifest.
struct Run {
    dir: PathBuf,
    command: String,
    seed: u64,
    config: Value,
    artifacts: Vec<String>,
    checkpoint_sha256: Option<String>,
    results: Option<Value>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records a file written into the run directory.
    fn wrote(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    fn manifest(&self, error: Option<String>) -> Manifest {
        Manifest {
            command: self.command.clone(),
            status: if error.is_some() { "failed" } else { "ok" }.into(),
            seed: self.seed,
            config: self.config.clone(),
            checkpoint_sha256: self.checkpoint_sha256.clone(),
            artifacts: self.artifacts.clone(),
            results: self.results.clone(),
            error,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn layer<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).expect("argument structs serialize")
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.global.config {
        Some(p) => load_config_file(p)?,
        None => Map::new(),
    };
    let global = layer(&cli.global);
    match cli.command {
        Command::Gen(a) => {
            let cfg: GenConfig = resolve(base, &[global, layer(&a)])?;
            let shapes = parse_shapes(&cfg.shapes)?;
            if cfg.n == 0 {
                return Err(usage("--n must be positive"));
            }
            if !(cfg.split > 0.0 && cfg.split < 1.0) {
                return Err(usage("--split must be in (0, 1)"));
            }
            execute("gen", &cfg.common, &cfg, |run| cmd_gen(run, &cfg, &shapes))
        }
        Command::Train(a) => {
            let cfg: TrainCfg = resolve(base, &[global, layer(&a)])?;
            let data = required(&cfg.data, "data")?.to_path_buf();
            let tc = train_config(&cfg);
            tc.validate().map_err(|e| usage(e.to_string()))?;
            execute("train", &cfg.common, &cfg, |run| cmd_train(run, &data, &tc))
        }
        Command::Eval(a) => {
            let cfg: EvalCfg = resolve(base, &[global, layer(&a)])?;
            let ckpt = required(&cfg.ckpt, "ckpt")?.to_path_buf();
            let data = required(&cfg.data, "data")?.to_path_buf();
            execute("eval", &cfg.common, &cfg, |run| cmd_eval(run, &cfg, &ckpt, &data))
        }
        Command::Baseline(a) => {
            let cfg: BaselineCfg = resolve(base, &[global, layer(&a)])?;
            let data = required(&cfg.data, "data")?.to_path_buf();
            if cfg.batch == 0 {
                return Err(usage("--batch must be positive"));
            }
            let tc = CnnTrainConfig {
                steps: cfg.steps,
                batch_size: cfg.batch,
                adam: nca_sense::nn::AdamConfig {
                    lr: cfg.lr,
                    ..Default::default()
                },
                seed: cfg.common.seed,
            };
            execute("baseline", &cfg.common, &cfg, |run| cmd_baseline(run, &data, &tc))
        }
        Command::Exp(ExpCommand::Perf(a)) => {
            let cfg: PerfCfg = resolve(base, &[global, layer(&a)])?;
            required(&cfg.ckpt, "ckpt")?;
            required(&cfg.data, "data")?;
            execute("exp-perf", &cfg.common, &cfg, |run| cmd_perf(run, &cfg))
        }
        Command::Exp(ExpCommand::Fault(a)) => {
            let cfg: SweepCfg = resolve(base, &[global, layer(&a)])?;
            sweep_command("exp-fault", cfg, fault_levels())
        }
        Command::Exp(ExpCommand::Noise(a)) => {
            let cfg: SweepCfg = resolve(base, &[global, layer(&a)])?;
            sweep_command("exp-noise", cfg, noise_levels())
        }
        Command::Exp(ExpCommand::Scale(a)) => {
            let cfg: ScaleCfg = resolve(base, &[global, layer(&a)])?;
            let ckpt = required(&cfg.ckpt, "ckpt")?.to_path_buf();
            let mut sizes = cfg.sizes.clone();
            if cfg.full && !sizes.contains(&100) {
                sizes.push(FULL_SCALE_SIZES[FULL_SCALE_SIZES.len() - 1]);
            }
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(usage("--sizes must be a non-empty list of positive sizes"));
            }
            if cfg.positions == 0 || cfg.reference_size == 0 {
                return Err(usage("--positions and --reference-size must be positive"));
            }
            let sc = ScaleConfig {
                sizes,
                positions_per_shape: cfg.positions,
                step_reference: cfg.scale_steps.then_some(cfg.reference_size),
            };
            execute("exp-scale", &cfg.common, &cfg, |run| cmd_scale(run, &ckpt, &sc))
        }
    }
}

fn sweep_command(slug: &str, cfg: SweepCfg, default_levels: Vec<f64>) -> Result<(), CliError> {
    let ckpt = required(&cfg.ckpt, "ckpt")?.to_path_buf();
    let data = required(&cfg.data, "data")?.to_path_buf();
    let levels = if cfg.levels.is_empty() { default_levels } else { cfg.levels.clone() };
    if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(usage("--levels must lie in [0, 1]"));
    }
    if cfg.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let noise = slug == "exp-noise";
    execute(slug, &cfg.common, &cfg, |run| {
        let ckpt_obj = read_checkpoint(run, &ckpt)?;
        let test = load_dataset(&data)?;
        let model = ModelRef::from_checkpoint(&ckpt_obj);
        let result = if noise {
            exp_noise(model, &test, &levels, cfg.trials, cfg.common.seed)?
        } else {
            exp_fault(model, &test, &levels, cfg.trials, cfg.common.seed)?
        };
        write_sweep(run, &result, cfg.common.pitch)
    })
}

/// Validates shared options, prepares the pool and output directory, runs
/// `body`, and writes the manifest whether or not `body` succeeds.
fn execute<C, F>(slug: &str, common: &Common, cfg: &C, body: F) -> Result<(), CliError>
where
    C: Serialize,
    F: FnOnce(&mut Run) -> Result<(), Error>,
{
    common.validate()?;
    // A second build in the same process fails harmlessly; the first pool stays.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(common.jobs).build_global();
    let dir = common.out_dir(slug);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(e.into()))?;
    let mut run = Run {
        dir,
        command: slug.replacen('-', " ", 1),
        seed: common.seed,
        config: serde_json::to_value(cfg).expect("configs serialize"),
        artifacts: Vec::new(),
        checkpoint_sha256: None,
        results: None,
    };
    let outcome = body(&mut run);
    let manifest = run.manifest(outcome.as_ref().err().map(|e| e.to_string()));
    manifest.write(&run.path(MANIFEST))?;
    outcome.map_err(CliError::Runtime)?;
    println!("{}", run.dir.join(MANIFEST).display());
    Ok(())
}

fn parse_shapes(spec: &str) -> Result<Vec<ShapeSpec>, CliError> {
    let all = default_shapes();
    if spec.trim() == "default" {
        return Ok(all);
    }
    spec.split(',')
        .map(|name| {
            let name = name.trim();
            all.iter().find(|s| s.name == name).cloned().ok_or_else(|| {
                let known: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
                usage(format!("unknown shape '{name}' (known: default, {})", known.join(", ")))
            })
        })
        .collect()
}

fn train_config(cfg: &TrainCfg) -> TrainConfig {
    TrainConfig {
        pool_size: cfg.pool,
        batch_size: cfg.batch,
        total_steps: cfg.steps,
        rollout: RolloutConfig {
            steps_min: cfg.steps_min,
            steps_max: cfg.steps_max,
            fire_rate: cfg.fire_rate,
        },
        adam: nca_sense::nn::AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        seed: cfg.common.seed,
        mode: cfg.common.mode,
        hidden_channels: cfg.hidden,
        processing_width: cfg.width,
        grad_clip: cfg.grad_clip.filter(|&c| c != 0.0),
        early_stop: cfg.early_stop.then(EarlyStop::default),
        ..TrainConfig::default()
    }
}

fn cmd_gen(run: &mut Run, cfg: &GenConfig, shapes: &[ShapeSpec]) -> Result<(), Error> {
    let c = &cfg.common;
    let (h, w) = (c.grid.height, c.grid.width);
    let data = generate_dataset(shapes, cfg.n, h, w, c.mode, c.seed)?;
    let (train_set, test_set) = split_dataset(&data, cfg.split, c.seed)?;
    for (name, set) in [("dataset.csv", &data), ("train.csv", &train_set), ("test.csv", &test_set)] {
        save_dataset(set, &run.path(name))?;
        run.wrote(name);
    }
    if cfg.calibration {
        let array = SensorArray::random(h, w, mix_all(c.seed, &[KEY_SENSOR]));
        let peak = data
            .iter()
            .flat_map(|s| s.readings.values().iter().copied())
            .fold(0.0_f64, f64::max);
        let peak = if peak > 0.0 { peak } else { 1.0 };
        let levels: Vec<f64> = (0..=10).map(|i| peak * i as f64 / 10.0).collect();
        let table = array.characterize(&levels, 0.01 * peak, DEFAULT_DEGREE, &mut seeded(mix_all(c.seed, &[KEY_CHARACTERIZE])))?;
        table.save(&run.path("calibration.csv"))?;
        run.wrote("calibration.csv");
        for (split, set) in [("train", &train_set), ("test", &test_set)] {
            let raw = set
                .iter()
                .map(|s| {
                    Ok(Sample {
                        readings: array.measure(&s.readings)?,
                        ..s.clone()
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let calibrated = raw
                .iter()
                .map(|s| {
                    Ok(Sample {
                        readings: apply_calibration(&s.readings, &table)?,
                        ..s.clone()
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            for (variant, samples) in [("uncalibrated", &raw), ("calibrated", &calibrated)] {
                let name = format!("{variant}_{split}.csv");
                save_dataset(samples, &run.path(&name))?;
                run.wrote(&name);
            }
        }
    }
    run.results = Some(json!({
        "samples": data.len(),
        "train": train_set.len(),
        "test": test_set.len(),
    }));
    Ok(())
}

fn load_uniform_dataset(path: &Path) -> Result<Vec<Sample>, Error> {
    let data = load_dataset(path)?;
    let first = data
        .first()
        .ok_or_else(|| Error::Config(format!("dataset {} is empty", path.display())))?;
    let dims = (first.height(), first.width());
    if let Some(s) = data.iter().find(|s| (s.height(), s.width()) != dims) {
        return Err(Error::Config(format!(
            "dataset {} mixes grid sizes {:?} and {:?}",
            path.display(),
            dims,
            (s.height(), s.width())
        )));
    }
    Ok(data)
}

fn cmd_train(run: &mut Run, data: &Path, cfg: &TrainConfig) -> Result<(), Error> {
    let train_set = load_uniform_dataset(data)?;
    match train(&train_set, cfg) {
        Ok(out) => {
            write_curve(&out.curve, &run.path("curve.csv"))?;
            run.wrote("curve.csv");
            let last = out.curve.last().copied();
            save_checkpoint(&Checkpoint::nca(out.model, cfg.clone(), out.curve), &run.path("model.ckpt"))?;
            run.wrote("model.ckpt");
            run.results = Some(json!({
                "steps_run": last.map_or(0, |p| p.step + 1),
                "final_loss": last.map(|p| p.loss),
                "final_metric": last.map(|p| p.metric),
            }));
            Ok(())
        }
        Err(Error::Diverged { step, checkpoint }) => {
            save_checkpoint(&checkpoint, &run.path("model.partial.ckpt"))?;
            run.wrote("model.partial.ckpt");
            Err(Error::NonFinite(format!(
                "training diverged at step {step}; last finite model saved as model.partial.ckpt"
            )))
        }
        Err(e) => Err(e),
    }
}

fn cmd_baseline(run: &mut Run, data: &Path, cfg: &CnnTrainConfig) -> Result<(), Error> {
    let train_set = load_uniform_dataset(data)?;
    let out = cnn_train(&train_set, cfg)?;
    write_curve(&out.curve, &run.path("curve.csv"))?;
    run.wrote("curve.csv");
    let last = out.curve.last().copied();
    save_checkpoint(&Checkpoint::centralized(out.model, cfg.clone(), out.curve), &run.path("model.ckpt"))?;
    run.wrote("model.ckpt");
    run.results = Some(json!({ "final_loss": last.map(|p| p.loss), "final_metric": last.map(|p| p.metric) }));
    Ok(())
}

fn read_checkpoint(run: &mut Run, path: &Path) -> Result<Checkpoint, Error> {
    let ckpt = load_checkpoint(path)?;
    run.checkpoint_sha256 = Some(file_sha256(path)?);
    Ok(ckpt)
}

fn summary_json(c: &Condition, pitch: f64) -> Value {
    json!({
        "label": c.label,
        "n": c.errors.len(),
        "mean_tiles": c.mean,
        "std_tiles": c.std,
        "mean_mm": c.mean * pitch,
        "std_mm": c.std * pitch,
    })
}

fn write_sweep(run: &mut Run, result: &SweepResult, pitch: f64) -> Result<(), Error> {
    write_results(result, &run.path("results.csv"))?;
    run.wrote("results.csv");
    render_plot(result, &run.path("plot.svg"))?;
    run.wrote("plot.svg");
    run.results = Some(json!({
        "axis": result.axis,
        "trials": result.trials,
        "conditions": result.conditions.iter().map(|c| summary_json(c, pitch)).collect::<Vec<_>>(),
    }));
    Ok(())
}

fn cmd_eval(run: &mut Run, cfg: &EvalCfg, ckpt_path: &Path, data: &Path) -> Result<(), Error> {
    let ckpt = read_checkpoint(run, ckpt_path)?;
    let test = load_dataset(data)?;
    let model = ModelRef::from_checkpoint(&ckpt);
    let seed = cfg.common.seed;
    use rayon::prelude::*;
    let errors = test
        .par_iter()
        .enumerate()
        .map(|(i, s)| model.error(&s.readings, s.true_center, eval_seed(seed, i)))
        .collect::<Result<Vec<_>, Error>>()?;
    let result = SweepResult {
        axis: "dataset".into(),
        trials: errors.len(),
        conditions: vec![Condition::new("test", None, errors)],
        seed,
    };
    write_results(&result, &run.path("errors.csv"))?;
    run.wrote("errors.csv");
    if cfg.trace {
        match (&ckpt.content, test.first()) {
            (CheckpointModel::Nca { model, rollout, .. }, Some(s)) => {
                let file = std::io::BufWriter::new(std::fs::File::create(run.path("trace.jsonl"))?);
                let grid = init_grid(&s.readings, model.layout())?;
                write_trace(&grid, model, rollout, &mut seeded(eval_seed(seed, 0)), file)?;
                run.wrote("trace.jsonl");
            }
            (CheckpointModel::Centralized { .. }, _) => {
                return Err(Error::Unsupported("traces exist only for NCA checkpoints".into()));
            }
            (_, None) => {}
        }
    }
    run.results = Some(summary_json(&result.conditions[0], cfg.common.pitch));
    Ok(())
}

fn cmd_perf(run: &mut Run, cfg: &PerfCfg) -> Result<(), Error> {
    let path_a = cfg.ckpt.as_deref().expect("checked");
    let data_a = cfg.data.as_deref().expect("checked");
    let ckpt_a = read_checkpoint(run, path_a)?;
    let ckpt_b = match &cfg.ckpt_b {
        Some(p) => load_checkpoint(p)?,
        None => ckpt_a.clone(),
    };
    let set_a = load_dataset(data_a)?;
    let set_b = match &cfg.data_b {
        Some(p) => load_dataset(p)?,
        None => set_a.clone(),
    };
    let r = exp_performance(
        (&cfg.label_a, ModelRef::from_checkpoint(&ckpt_a), &set_a),
        (&cfg.label_b, ModelRef::from_checkpoint(&ckpt_b), &set_b),
        Some(cfg.common.pitch),
        cfg.common.seed,
    )?;
    write_sweep(run, &r.sweep, cfg.common.pitch)?;
    if let Some(Value::Object(m)) = run.results.as_mut() {
        m.insert(
            "mann_whitney".into(),
            json!({
                "u": r.test.u,
                "p_two_sided": r.test.p_two_sided,
                "exact": r.test.exact,
            }),
        );
    }
    Ok(())
}

fn cmd_scale(run: &mut Run, ckpt_path: &Path, cfg: &ScaleConfig) -> Result<(), Error> {
    let ckpt = read_checkpoint(run, ckpt_path)?;
    let result = exp_scale(ModelRef::from_checkpoint(&ckpt), &default_shapes(), cfg, run.seed)?;
    write_sweep(run, &result, nca_sense::grid::HARDWARE_PITCH_MM)
}
