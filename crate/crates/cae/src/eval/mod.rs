//! Evaluation: phase discretization, ARI metrics, the rotation-equivariance
//! harness, object-wise reconstruction fine-tuning, and phase-map rendering.

pub mod ari;
pub mod kmeans;
pub mod render;

pub use ari::{ari, overlap_pixels};
pub use kmeans::{kmeans, KMeansResult};

use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{CaeError, Result};
use crate::layers::ComplexVar;
use crate::model::{CaeModel, ParamId};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::tensor::RealTensor;
use crate::train::{adam_step, AdamState, TrainConfig};
use rand::Rng;

/// Magnitude below which phase features are pulled toward the origin.
pub const MAG_THRESHOLD: f64 = 0.1;
/// Rescale factor for small-magnitude features.
pub const MAG_RESCALE: f64 = 10.0;

/// Map phases onto the closed unit disc: features with magnitude at least
/// 0.1 land on the unit circle; smaller ones are scaled by 10 m so they stay
/// near the origin (they tend to form their own background cluster).
pub fn phase_features(phases: &RealTensor, mags: &RealTensor) -> Result<Vec<[f64; 2]>> {
    if phases.shape() != mags.shape() {
        return Err(CaeError::ShapeMismatch(format!(
            "phases {:?} vs magnitudes {:?}",
            phases.shape(),
            mags.shape()
        )));
    }
    if mags.iter().any(|&m| m < 0.0) {
        return Err(CaeError::InvalidArgument(
            "phase features need nonnegative magnitudes".into(),
        ));
    }
    Ok(phases
        .iter()
        .zip(mags.iter())
        .map(|(&p, &m)| {
            let r = if m >= MAG_THRESHOLD { 1.0 } else { MAG_RESCALE * m };
            [r * p.cos(), r * p.sin()]
        })
        .collect())
}

/// Per-image evaluation results.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub ari_with_bg: f64,
    pub ari_no_bg: f64,
    pub assignments: Vec<u8>,
}

/// Dataset-level evaluation report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mse: f64,
    pub ari_with_bg: f64,
    pub ari_no_bg: f64,
    pub n_images: usize,
    pub n_excluded_overlap_pixels: usize,
    pub per_image: Vec<ImageEval>,
}

impl EvalReport {
    /// JSON with a fixed key order; byte-identical for identical results.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        s.push_str(&format!("  \"mse\": {},\n", self.mse));
        s.push_str(&format!("  \"ari_with_bg\": {},\n", self.ari_with_bg));
        s.push_str(&format!("  \"ari_no_bg\": {},\n", self.ari_no_bg));
        s.push_str(&format!("  \"n_images\": {},\n", self.n_images));
        s.push_str(&format!(
            "  \"n_excluded_overlap_pixels\": {},\n",
            self.n_excluded_overlap_pixels
        ));
        s.push_str("  \"images\": [\n");
        for (i, img) in self.per_image.iter().enumerate() {
            let assignments: String = img
                .assignments
                .iter()
                .map(|&a| char::from_digit(a as u32 % 10, 10).unwrap())
                .collect();
            s.push_str(&format!(
                "    {{\"ari_with_bg\": {}, \"ari_no_bg\": {}, \"assignments\": \"{}\"}}{}\n",
                img.ari_with_bg,
                img.ari_no_bg,
                assignments,
                if i + 1 == self.per_image.len() { "" } else { "," }
            ));
        }
        s.push_str("  ]\n}\n");
        s
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn slice_plane(batch: &RealTensor, i: usize) -> RealTensor {
    let s = batch.shape();
    let hw: usize = s[2] * s[3];
    RealTensor::from_vec(&[1, s[2], s[3]], batch.data()[i * hw..(i + 1) * hw].to_vec())
        .expect("plane slice")
}

/// Evaluate a model over a dataset: reconstruction MSE, and per image the
/// output-phase clustering (k = objects + 1) scored as ARI with and without
/// background. Overlap pixels are always excluded. Deterministic given the
/// seed.
pub fn evaluate(model: &CaeModel, data: &Dataset, seed: u64) -> Result<EvalReport> {
    evaluate_with_phase(model, data, seed, 0.0)
}

/// [`evaluate`] with a uniform input-phase offset; segmentations are
/// invariant to the offset because only relative phases matter.
pub fn evaluate_with_phase(
    model: &CaeModel,
    data: &Dataset,
    seed: u64,
    phase: f64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(CaeError::InvalidArgument("evaluation dataset is empty".into()));
    }
    let n = data.len();
    let mut per_image: Vec<ImageEval> = Vec::with_capacity(n);
    let mut sq_err_sum = 0.0;
    let mut px_count = 0usize;
    let mut overlap_total = 0usize;

    for start in (0..n).step_by(64) {
        let indices: Vec<usize> = (start..(start + 64).min(n)).collect();
        let batch = data.batch(&indices);
        let out = model.forward_with_phase(&batch, phase)?;
        sq_err_sum += out
            .x_hat
            .iter()
            .zip(batch.iter())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>();
        px_count += batch.len();

        let evals: Result<Vec<ImageEval>> = indices
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let mags = slice_plane(&out.out_mag, j);
                let phases = slice_plane(&out.out_phase, j);
                let features = phase_features(&phases, &mags)?;
                let k = data.n_objects(i) + 1;
                let km = kmeans(&features, k, derive_seed(seed, i as u64))?;
                let truth = data.labels(i);
                Ok(ImageEval {
                    ari_with_bg: ari(&km.assignments, truth, true)?,
                    ari_no_bg: ari(&km.assignments, truth, false)?,
                    assignments: km.assignments.iter().map(|&a| a as u8).collect(),
                })
            })
            .collect();
        per_image.extend(evals?);
        for &i in &indices {
            overlap_total += overlap_pixels(data.labels(i));
        }
    }

    let mean = |f: fn(&ImageEval) -> f64| per_image.iter().map(f).sum::<f64>() / n as f64;
    Ok(EvalReport {
        mse: sq_err_sum / px_count as f64,
        ari_with_bg: mean(|e| e.ari_with_bg),
        ari_no_bg: mean(|e| e.ari_no_bg),
        n_images: n,
        n_excluded_overlap_pixels: overlap_total,
        per_image,
    })
}

/// Equivariance error of one phase-shift test point.
#[derive(Debug, Clone, Copy)]
pub struct EquivariancePoint {
    pub alpha: f64,
    pub mag_err: f64,
    pub phase_err: f64,
}

/// Distance on the circle: |d| folded into [0, pi].
pub fn wrapped_distance(d: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = d.rem_euclid(tau);
    r.min(tau - r)
}

/// Core comparison: run `forward(images, alpha)` for each alpha, compare
/// output magnitudes with the alpha = 0 baseline, and compare output phases
/// after subtracting the expected shift (wraparound-aware).
pub fn equivariance_errors<F>(
    forward: &F,
    images: &RealTensor,
    alphas: &[f64],
) -> Result<Vec<EquivariancePoint>>
where
    F: Fn(&RealTensor, f64) -> Result<(RealTensor, RealTensor)>,
{
    let (base_mag, base_phase) = forward(images, 0.0)?;
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let (mag, phase) = forward(images, alpha)?;
        let mag_err = mag
            .iter()
            .zip(base_mag.iter())
            .map(|(&a, &b)| (a - b).abs())
            .sum::<f64>()
            / mag.len() as f64;
        let phase_err = phase
            .iter()
            .zip(base_phase.iter())
            .map(|(&a, &b)| wrapped_distance(a - b - alpha))
            .sum::<f64>()
            / phase.len() as f64;
        out.push(EquivariancePoint {
            alpha,
            mag_err,
            phase_err,
        });
    }
    Ok(out)
}

/// Standard harness: uniform-noise images through the model at evenly
/// spaced input phase shifts.
pub fn equivariance_harness(
    model: &CaeModel,
    n_images: usize,
    n_alphas: usize,
    seed: u64,
) -> Result<Vec<EquivariancePoint>> {
    let size = model.config.image_size;
    let mut rng = stream_rng(seed, Stream::Noise, 0);
    let images = RealTensor::from_vec(
        &[n_images, 1, size, size],
        (0..n_images * size * size).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )?;
    let alphas: Vec<f64> = (0..n_alphas)
        .map(|k| std::f64::consts::TAU * k as f64 / n_alphas as f64)
        .collect();
    equivariance_errors(
        &|x: &RealTensor, alpha: f64| {
            let out = model.forward_with_phase(x, alpha)?;
            Ok((out.out_mag, out.out_phase))
        },
        &images,
        &alphas,
    )
}

#[derive(Debug, Clone)]
pub struct ObjectwiseConfig {
    pub steps: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Cap on how many dataset images participate in fine-tuning.
    pub max_images: usize,
}

impl Default for ObjectwiseConfig {
    fn default() -> Self {
        ObjectwiseConfig {
            steps: 10_000,
            lr: 5e-5,
            batch_size: 64,
            seed: 0,
            max_images: usize::MAX,
        }
    }
}

/// Cached per-image clustering from the frozen encoder.
struct ImageClusters {
    latent_re: RealTensor,
    latent_im: RealTensor,
    latent_labels: Vec<usize>,
    /// Latent cluster -> output-space cluster with the nearest centroid.
    matched: Vec<usize>,
    output_labels: Vec<usize>,
    k: usize,
}

/// Object-wise reconstructions for one image after fine-tuning.
pub struct ObjectwiseSample {
    pub index: usize,
    /// One reconstruction per latent cluster (latent masked to the cluster).
    pub cluster_recons: Vec<RealTensor>,
    /// Output-space cluster matched to each latent cluster.
    pub matched_output_cluster: Vec<usize>,
    /// Output-space segmentation from the original model.
    pub output_labels: Vec<usize>,
    pub full_recon: RealTensor,
    pub zero_recon: RealTensor,
}

pub struct ObjectwiseOutput {
    pub model: CaeModel,
    pub samples: Vec<ObjectwiseSample>,
}

fn nearest_centroid(c: [f64; 2], candidates: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &q) in candidates.iter().enumerate() {
        let d = (c[0] - q[0]).powi(2) + (c[1] - q[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Cluster the latent features of a trained model, then fine-tune the
/// decoder (and output head) to reconstruct single objects from
/// cluster-masked latents.
///
/// Targets come from the frozen model itself: each latent cluster is matched
/// to the output-space cluster with the nearest phase centroid, and the
/// target is the input image restricted to that cluster's pixels (background
/// elsewhere). The unmasked latent paired with the full image joins the
/// training mix so full reconstructions stay intact.
pub fn objectwise_finetune(
    model: &CaeModel,
    data: &Dataset,
    cfg: &ObjectwiseConfig,
    n_render: usize,
) -> Result<ObjectwiseOutput> {
    if data.is_empty() {
        return Err(CaeError::InvalidArgument("fine-tuning dataset is empty".into()));
    }
    let n_fine = data.len().min(cfg.max_images);
    let latent_dim = model.config.latent_dim;

    // Freeze the segmentation: one forward pass per image.
    let mut clusters: Vec<ImageClusters> = Vec::with_capacity(n_fine);
    for start in (0..n_fine).step_by(64) {
        let indices: Vec<usize> = (start..(start + 64).min(n_fine)).collect();
        let batch = data.batch(&indices);
        let out = model.forward(&batch)?;
        let z = out.latent();
        for (j, &i) in indices.iter().enumerate() {
            let k = data.n_objects(i) + 1;
            let lat_mag = RealTensor::from_vec(
                &[latent_dim],
                out.latent_mag.data()[j * latent_dim..(j + 1) * latent_dim].to_vec(),
            )?;
            let lat_phase = RealTensor::from_vec(
                &[latent_dim],
                out.latent_phase.data()[j * latent_dim..(j + 1) * latent_dim].to_vec(),
            )?;
            let lat_feats = phase_features(&lat_phase, &lat_mag)?;
            let lat_km = kmeans(&lat_feats, k, derive_seed(cfg.seed, 2 * i as u64))?;

            let mags = slice_plane(&out.out_mag, j);
            let phases = slice_plane(&out.out_phase, j);
            let out_feats = phase_features(&phases, &mags)?;
            let out_km = kmeans(&out_feats, k, derive_seed(cfg.seed, 2 * i as u64 + 1))?;

            let matched: Vec<usize> = lat_km
                .centroids
                .iter()
                .map(|&c| nearest_centroid(c, &out_km.centroids))
                .collect();
            clusters.push(ImageClusters {
                latent_re: RealTensor::from_vec(
                    &[latent_dim],
                    z.re.data()[j * latent_dim..(j + 1) * latent_dim].to_vec(),
                )?,
                latent_im: RealTensor::from_vec(
                    &[latent_dim],
                    z.im.data()[j * latent_dim..(j + 1) * latent_dim].to_vec(),
                )?,
                latent_labels: lat_km.assignments,
                matched,
                output_labels: out_km.assignments,
                k,
            });
        }
    }

    // Decoder-only fine-tuning.
    let mut tuned = model.clone();
    let decoder_ids: Vec<ParamId> = tuned.decoder_param_ids();
    let mut state = AdamState::new(tuned.params());
    let hyper = TrainConfig {
        peak_lr: cfg.lr,
        ..TrainConfig::default()
    };
    let size = model.config.image_size;
    let hw = size * size;

    for step in 1..=cfg.steps {
        let mut rng = stream_rng(cfg.seed, Stream::Finetune, step);
        let mut re = Vec::with_capacity(cfg.batch_size * latent_dim);
        let mut im = Vec::with_capacity(cfg.batch_size * latent_dim);
        let mut target = Vec::with_capacity(cfg.batch_size * hw);
        for _ in 0..cfg.batch_size {
            let i = rng.gen_range(0..n_fine);
            let cl = &clusters[i];
            let choice = rng.gen_range(0..=cl.k);
            let image = data.image(i);
            let bg = data.background(i);
            if choice == cl.k {
                re.extend_from_slice(cl.latent_re.data());
                im.extend_from_slice(cl.latent_im.data());
                target.extend(image.iter().copied());
            } else {
                for d in 0..latent_dim {
                    let keep = cl.latent_labels[d] == choice;
                    re.push(if keep { cl.latent_re.data()[d] } else { 0.0 });
                    im.push(if keep { cl.latent_im.data()[d] } else { 0.0 });
                }
                let want = cl.matched[choice];
                for (px, &lab) in image.iter().zip(cl.output_labels.iter()) {
                    target.push(if lab == want { *px } else { bg });
                }
            }
        }
        let re = RealTensor::from_vec(&[cfg.batch_size, latent_dim], re)?;
        let im = RealTensor::from_vec(&[cfg.batch_size, latent_dim], im)?;
        let target = RealTensor::from_vec(&[cfg.batch_size, 1, size, size], target)?;

        let mut tape = Tape::new();
        let binding = tuned.params().bind(&mut tape);
        let latent = ComplexVar {
            re: tape.leaf(re),
            im: tape.leaf(im),
        };
        let (_, x_hat) = tuned.decode_train(&mut tape, &binding, latent)?;
        let loss = tape.mse_loss(x_hat, &target)?;
        if !tape.value(loss).data()[0].is_finite() {
            return Err(CaeError::Numeric(format!(
                "fine-tuning loss became non-finite at step {step}"
            )));
        }
        tape.backward(loss)?;
        let grads: Vec<(ParamId, RealTensor)> = decoder_ids
            .iter()
            .map(|&id| (id, tape.grad_or_zeros(binding[id.index()])))
            .collect();
        drop(tape);
        adam_step(tuned.params_mut(), &grads, &mut state, cfg.lr, &hyper)?;
    }

    // Render per-object reconstructions for the first few images.
    let mut samples = Vec::new();
    for (i, cl) in clusters.iter().enumerate().take(n_render) {
        let mut cluster_recons = Vec::with_capacity(cl.k);
        for c in 0..cl.k {
            let mut re = cl.latent_re.clone();
            let mut im = cl.latent_im.clone();
            for d in 0..latent_dim {
                if cl.latent_labels[d] != c {
                    re.data_mut()[d] = 0.0;
                    im.data_mut()[d] = 0.0;
                }
            }
            let re = re.reshaped(&[1, latent_dim])?;
            let im = im.reshaped(&[1, latent_dim])?;
            cluster_recons.push(tuned.decode_image(&re, &im)?);
        }
        let full = tuned.decode_image(
            &cl.latent_re.reshaped(&[1, latent_dim])?,
            &cl.latent_im.reshaped(&[1, latent_dim])?,
        )?;
        let zero = tuned.decode_image(
            &RealTensor::zeros(&[1, latent_dim]),
            &RealTensor::zeros(&[1, latent_dim]),
        )?;
        samples.push(ObjectwiseSample {
            index: i,
            cluster_recons,
            matched_output_cluster: cl.matched.clone(),
            output_labels: cl.output_labels.clone(),
            full_recon: full,
            zero_recon: zero,
        });
    }

    Ok(ObjectwiseOutput {
        model: tuned,
        samples,
    })
}
