//! Phase discretization: map phases onto the unit disc, cluster with
//! k-means, and score the segmentation with ARI.
//!
//! ```bash
//! cargo run --release --example cluster_phases
//! ```

use cae::eval::{ari, kmeans, phase_features};
use cae::rng::{stream_rng, Stream};
use cae::tensor::RealTensor;
use rand::Rng;
use std::f64::consts::TAU;

fn main() -> cae::Result<()> {
    // Synthetic "output" of a well-trained model on a two-object image:
    // object pixels carry strong magnitudes at object-specific phases,
    // background pixels have weak magnitudes and random phases.
    let mut rng = stream_rng(1, Stream::Noise, 0);
    let n = 1024;
    let mut phases = Vec::with_capacity(n);
    let mut mags = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let (phase, mag, label) = match i % 8 {
            0 | 1 => (0.3 + rng.gen_range(-0.1..0.1), rng.gen_range(0.5..1.0), 1u8),
            2 | 3 => (2.5 + rng.gen_range(-0.1..0.1), rng.gen_range(0.5..1.0), 2),
            _ => (rng.gen_range(0.0..TAU), rng.gen_range(0.0..0.05), 0),
        };
        phases.push(phase);
        mags.push(mag);
        truth.push(label);
    }

    let features = phase_features(
        &RealTensor::from_vec(&[n], phases)?,
        &RealTensor::from_vec(&[n], mags)?,
    )?;
    // Strong features sit on the unit circle, weak ones near the origin.
    let km = kmeans(&features, 3, 0)?;
    println!(
        "clustered {n} phase features into 3 groups; centroids: {:?}",
        km.centroids
            .iter()
            .map(|c| (c[0] * 100.0).round() / 100.0)
            .zip(km.centroids.iter().map(|c| (c[1] * 100.0).round() / 100.0))
            .collect::<Vec<_>>()
    );
    println!("ARI including background: {:.4}", ari(&km.assignments, &truth, true)?);
    println!("ARI objects only:         {:.4}", ari(&km.assignments, &truth, false)?);
    Ok(())
}
