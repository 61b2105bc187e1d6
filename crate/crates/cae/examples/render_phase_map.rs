//! Render a model's output phase map and predicted segmentation as PPM
//! panels (hue = phase, brightness = magnitude).
//!
//! ```bash
//! cargo run --release --example render_phase_map
//! ```

use cae::data::{generate_sample, DatasetSpec, DatasetVariant, Split};
use cae::eval::{kmeans, phase_features, render};
use cae::model::{CaeConfig, CaeModel};
use cae::rng::derive_seed;

fn main() -> cae::Result<()> {
    let spec = DatasetSpec::new(DatasetVariant::ThreeShapes, Split::Test, 5).with_count(1);
    let sample = generate_sample(&spec, 0, None)?;

    let mut model = CaeModel::build(CaeConfig { seed: 5, ..CaeConfig::default() })?;
    model.randomize_phase_biases(5);
    let batch = sample.image.reshaped(&[1, 1, 32, 32])?;
    let out = model.forward(&batch)?;

    let dir = std::env::temp_dir().join("cae-example-render");
    std::fs::create_dir_all(&dir)?;
    render::render_gray(&sample.image, &dir.join("input.ppm"))?;
    render::render_gray(&out.x_hat, &dir.join("recon.ppm"))?;
    render::render_phase_map(&out.out_phase, &out.out_mag, &dir.join("phase.ppm"))?;

    let features = phase_features(&out.out_phase, &out.out_mag)?;
    let km = kmeans(&features, sample.n_objects + 1, derive_seed(5, 0))?;
    render::render_clusters(&km.assignments, &km.centroids, 32, 32, &dir.join("pred.ppm"))?;

    println!("wrote input/recon/phase/pred panels under {}", dir.display());
    println!("(an untrained model shows no object structure yet; train with `cae train` first)");
    Ok(())
}
