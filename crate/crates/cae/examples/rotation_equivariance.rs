//! Rotating every input phase by a constant rotates every output phase by
//! the same constant and leaves magnitudes untouched — for any parameters.
//!
//! ```bash
//! cargo run --release --example rotation_equivariance
//! ```

use cae::eval::equivariance_harness;
use cae::model::{CaeConfig, CaeModel};

fn main() -> cae::Result<()> {
    let mut model = CaeModel::build(CaeConfig { seed: 7, ..CaeConfig::default() })?;
    // Generic phase biases; the all-zero init pins activations to the real
    // axis where the pixelwise phase metric is ill-conditioned.
    model.randomize_phase_biases(7);

    let points = equivariance_harness(&model, 8, 8, 7)?;
    println!("{:>10} {:>14} {:>14}", "alpha", "mag_err", "phase_err");
    for p in &points {
        println!("{:>10.6} {:>14.3e} {:>14.3e}", p.alpha, p.mag_err, p.phase_err);
    }
    let worst = points.iter().fold(0.0f64, |m, p| m.max(p.mag_err).max(p.phase_err));
    println!("worst error across all shifts: {worst:.3e}");
    Ok(())
}
