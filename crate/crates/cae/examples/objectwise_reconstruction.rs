//! Cluster latent phase features and fine-tune the decoder to reconstruct
//! one object per cluster (API demonstration at toy scale).
//!
//! ```bash
//! cargo run --release --example objectwise_reconstruction
//! ```

use cae::data::{Dataset, DatasetSpec, DatasetVariant, Split};
use cae::eval::{objectwise_finetune, render, ObjectwiseConfig};
use cae::model::{CaeConfig, CaeModel};

fn main() -> cae::Result<()> {
    let spec = DatasetSpec::new(DatasetVariant::TwoShapes, Split::Train, 2).with_count(32);
    let data = Dataset::generate(&spec, None)?;
    let model = CaeModel::build(CaeConfig { seed: 2, ..CaeConfig::default() })?;

    // Toy scale: 20 decoder steps. The reference protocol fine-tunes a
    // trained model for 10,000 steps (see the `cae objectwise` subcommand).
    let cfg = ObjectwiseConfig {
        steps: 20,
        batch_size: 8,
        max_images: 32,
        seed: 2,
        ..Default::default()
    };
    let out = objectwise_finetune(&model, &data, &cfg, 2)?;

    let dir = std::env::temp_dir().join("cae-example-objectwise");
    std::fs::create_dir_all(&dir)?;
    for s in &out.samples {
        println!(
            "image {}: {} latent clusters matched to output clusters {:?}",
            s.index,
            s.cluster_recons.len(),
            s.matched_output_cluster
        );
        for (c, recon) in s.cluster_recons.iter().enumerate() {
            let mean: f64 = recon.iter().sum::<f64>() / recon.len() as f64;
            println!("  cluster {c}: mean reconstruction intensity {mean:.4}");
            render::render_gray(recon, &dir.join(format!("img{}-cluster{c}.ppm", s.index)))?;
        }
    }
    println!("panels under {}", dir.display());
    Ok(())
}
