//! Adam optimization with linear warmup, the training loop, and
//! checkpointing.
//!
//! Everything is keyed by the run seed: parameter init, epoch shuffles, and
//! batch composition derive from counters, so a checkpoint at step k resumed
//! in sequential mode continues bitwise identically.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{CaeError, Result};
use crate::model::{
    config_from_records, read_records, write_records, CaeModel, ParamId, ParamStore,
};
use crate::rng::{stream_rng, Stream};
use crate::tensor::RealTensor;
use rand::seq::SliceRandom;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub eval_interval: u64,
    pub val_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch_size: 64,
            peak_lr: 1e-3,
            warmup_steps: 500,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            checkpoint_interval: 2_500,
            eval_interval: 500,
            val_images: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.steps {
            return Err(CaeError::InvalidArgument(format!(
                "warmup ({}) exceeds total steps ({})",
                self.warmup_steps, self.steps
            )));
        }
        if self.batch_size < 2 {
            return Err(CaeError::InvalidArgument(
                "batch size must be >= 2 for train-mode batch norm".into(),
            ));
        }
        Ok(())
    }
}

/// Linear warmup to the peak rate: lr = peak * min(1, step / warmup).
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    assert!(step >= 1, "steps are 1-indexed");
    if cfg.warmup_steps == 0 || step >= cfg.warmup_steps {
        cfg.peak_lr
    } else {
        cfg.peak_lr * step as f64 / cfg.warmup_steps as f64
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<RealTensor>,
    pub v: Vec<RealTensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<RealTensor> = params.iter().map(|(_, t)| RealTensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected update over the given (parameter, gradient) pairs.
/// Rejects non-finite gradients before touching any state.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[(ParamId, RealTensor)],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (id, g) in grads {
        if !g.all_finite() {
            return Err(CaeError::Numeric(format!(
                "non-finite gradient for parameter {}",
                store.name(*id)
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (id, g) in grads {
        let i = id.index();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let theta = store.get_mut(*id).data_mut();
        for ((m, v), (theta, &g)) in m.iter_mut().zip(v.iter_mut()).zip(theta.iter_mut().zip(g.iter())) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Batch composition for a 1-indexed step: epoch-wise permutations derived
/// from (seed, epoch), consumed in fixed-size slices, wrapping into the next
/// epoch's permutation as needed.
pub fn batch_indices(seed: u64, n: usize, batch: usize, step: u64) -> Vec<usize> {
    assert!(n > 0 && step >= 1);
    let mut offset = (step - 1) as u128 * batch as u128;
    let mut out = Vec::with_capacity(batch);
    while out.len() < batch {
        let epoch = (offset / n as u128) as u64;
        let within = (offset % n as u128) as usize;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch));
        let take = (batch - out.len()).min(n - within);
        out.extend_from_slice(&perm[within..within + take]);
        offset += take as u128;
    }
    out
}

/// Validation reconstruction error in eval mode over the first `limit`
/// images.
pub fn validation_mse(model: &CaeModel, data: &Dataset, limit: usize) -> Result<f64> {
    let n = data.len().min(limit);
    if n == 0 {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for start in (0..n).step_by(64) {
        let indices: Vec<usize> = (start..(start + 64).min(n)).collect();
        let batch = data.batch(&indices);
        let out = model.forward(&batch)?;
        let mse: f64 = out
            .x_hat
            .iter()
            .zip(batch.iter())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>()
            / batch.len() as f64;
        total += mse * indices.len() as f64;
        count += indices.len();
    }
    Ok(total / count as f64)
}

pub struct TrainOutcome {
    pub final_checkpoint: Option<PathBuf>,
    pub first_train_mse: f64,
    pub last_train_mse: f64,
}

/// Save model + optimizer state + step counter as one record file.
pub fn save_checkpoint(
    model: &CaeModel,
    state: &AdamState,
    step: u64,
    path: &Path,
) -> Result<()> {
    let mut records = model.collect_records();
    records.push(("step".into(), RealTensor::scalar(step as f64)));
    for (i, (name, _)) in model.params().iter().enumerate() {
        records.push((format!("adam.m.{name}"), state.m[i].clone()));
        records.push((format!("adam.v.{name}"), state.v[i].clone()));
    }
    write_records(path, &records)
}

/// Load a checkpoint: the rebuilt model, optimizer state, and step counter.
pub fn load_checkpoint(path: &Path) -> Result<(CaeModel, AdamState, u64)> {
    let records = read_records(path)?;
    let cfg = config_from_records(&records)?;
    let mut model = CaeModel::build(cfg)?;
    model.apply_records(&records)?;
    let mut state = AdamState::new(model.params());
    let mut step = 0u64;
    for (name, value) in &records {
        if name == "step" {
            step = value.data()[0] as u64;
        } else if let Some(pname) = name.strip_prefix("adam.m.") {
            let id = model.params().index_of(pname).ok_or_else(|| {
                CaeError::Format(format!("moment record for unknown parameter {pname}"))
            })?;
            state.m[id.index()] = value.clone();
        } else if let Some(pname) = name.strip_prefix("adam.v.") {
            let id = model.params().index_of(pname).ok_or_else(|| {
                CaeError::Format(format!("moment record for unknown parameter {pname}"))
            })?;
            state.v[id.index()] = value.clone();
        }
    }
    state.step = step;
    Ok((model, state, step))
}

/// Run the training loop from `start_step + 1` to `cfg.steps`.
///
/// When `out_dir` is set, writes periodic checkpoints, a final checkpoint,
/// and an append-only `metrics.csv` (step, train_mse, val_mse, lr, wall_ms).
/// A non-finite loss or gradient aborts with the last good checkpoint left
/// in place.
pub fn train_loop(
    model: &mut CaeModel,
    train_data: &Dataset,
    val_data: Option<&Dataset>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<(AdamState, u64)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(CaeError::InvalidArgument("training dataset is empty".into()));
    }
    let (mut state, start_step) = match resume {
        Some((state, step)) => (state, step),
        None => (AdamState::new(model.params()), 0),
    };

    let mut metrics = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("metrics.csv"))?;
            if f.metadata()?.len() == 0 {
                writeln!(f, "step,train_mse,val_mse,lr,wall_ms")?;
            }
            Some(f)
        }
        None => None,
    };

    let started = Instant::now();
    let mut first_mse = f64::NAN;
    let mut last_mse = f64::NAN;
    let n = train_data.len();

    for step in start_step + 1..=cfg.steps {
        let indices = batch_indices(cfg.seed, n, cfg.batch_size, step);
        let batch = train_data.batch(&indices);

        let mut tape = Tape::new();
        let binding = model.params().bind(&mut tape);
        let fv = model.forward_train(&mut tape, &binding, &batch, 0.0)?;
        let loss = tape.mse_loss(fv.x_hat, &batch)?;
        let train_mse = tape.value(loss).data()[0];
        if !train_mse.is_finite() {
            return Err(CaeError::Numeric(format!(
                "loss became non-finite at step {step}; last good checkpoint retained"
            )));
        }
        if first_mse.is_nan() {
            first_mse = train_mse;
        }
        last_mse = train_mse;

        tape.backward(loss)?;
        let grads: Vec<(ParamId, RealTensor)> = model
            .params()
            .ids()
            .map(|id| (id, tape.grad_or_zeros(binding[id.index()])))
            .collect();
        drop(tape);
        let lr = lr_at(step, cfg);
        adam_step(model.params_mut(), &grads, &mut state, lr, cfg)?;

        let val_mse = if step % cfg.eval_interval == 0 || step == cfg.steps {
            match val_data {
                Some(v) => Some(validation_mse(model, v, cfg.val_images)?),
                None => None,
            }
        } else {
            None
        };
        if let Some(f) = metrics.as_mut() {
            let val_str = val_mse.map(|v| format!("{v}")).unwrap_or_default();
            writeln!(
                f,
                "{step},{train_mse},{val_str},{lr},{}",
                started.elapsed().as_millis()
            )?;
        }
        if let Some(dir) = out_dir {
            if step % cfg.checkpoint_interval == 0 && step != cfg.steps {
                save_checkpoint(model, &state, step, &dir.join(format!("checkpoint-{step:08}.cae")))?;
            }
        }
    }

    let final_checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join("checkpoint-final.cae");
            save_checkpoint(model, &state, cfg.steps, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        final_checkpoint,
        first_train_mse: first_mse,
        last_train_mse: last_mse,
    })
}
