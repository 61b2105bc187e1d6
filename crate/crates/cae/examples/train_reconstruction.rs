//! Short reconstruction training run with checkpointing and resume.
//!
//! Sixty steps are enough to watch the loss fall and to demonstrate the
//! training API; real object discovery needs the full 10,000-step schedule
//! (see the `cae train` subcommand).
//!
//! ```bash
//! cargo run --release --example train_reconstruction
//! ```

use cae::data::{Dataset, DatasetSpec, DatasetVariant, Split};
use cae::model::{CaeConfig, CaeModel};
use cae::train::{load_checkpoint, train_loop, TrainConfig};

fn main() -> cae::Result<()> {
    let spec = DatasetSpec::new(DatasetVariant::TwoShapes, Split::Train, 0).with_count(256);
    let data = Dataset::generate(&spec, None)?;

    let cfg = TrainConfig {
        steps: 60,
        batch_size: 16,
        warmup_steps: 30,
        seed: 0,
        eval_interval: 20,
        checkpoint_interval: 30,
        ..TrainConfig::default()
    };
    let out_dir = std::env::temp_dir().join("cae-example-run");
    let _ = std::fs::remove_dir_all(&out_dir);

    let mut model = CaeModel::build(CaeConfig { seed: 0, ..CaeConfig::default() })?;
    println!("model has {} trainable scalars", model.param_count());
    let outcome = train_loop(&mut model, &data, Some(&data), &cfg, Some(&out_dir), None)?;
    println!(
        "trained {} steps: mse {:.4} -> {:.4}",
        cfg.steps, outcome.first_train_mse, outcome.last_train_mse
    );

    // Resume from the midpoint checkpoint; the final checkpoint must come
    // out byte-identical.
    let (mut resumed, state, step) = load_checkpoint(&out_dir.join("checkpoint-00000030.cae"))?;
    let resume_dir = std::env::temp_dir().join("cae-example-resume");
    let _ = std::fs::remove_dir_all(&resume_dir);
    train_loop(&mut resumed, &data, None, &cfg, Some(&resume_dir), Some((state, step)))?;
    let a = std::fs::read(out_dir.join("checkpoint-final.cae"))?;
    let b = std::fs::read(resume_dir.join("checkpoint-final.cae"))?;
    assert_eq!(a, b);
    println!("resume from step {step} reproduced the final checkpoint byte for byte");
    println!("metrics: {}", out_dir.join("metrics.csv").display());
    Ok(())
}
