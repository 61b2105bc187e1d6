//! Acceptance suite: one test per release criterion, each printing a
//! `criterion N: PASS` line. Run with `--nocapture` to see them.
//!
//! Criteria 5-8 train real models for hours and are `#[ignore]`d; run them
//! explicitly with `cargo test --release --test acceptance -- --ignored`.

use cae::autodiff::{grad_check, Tape};
use cae::data::{Dataset, DatasetSpec, DatasetVariant, Split};
use cae::eval::{ari, equivariance_harness, evaluate, kmeans};
use cae::layers::{apply_weights_complex, bias_and_gate, complex_layer, AblationFlags, ComplexVar, NormCtx, RealOp};
use cae::model::{CaeConfig, CaeModel};
use cae::rng::{stream_rng, Stream};
use cae::tensor::RealTensor;
use cae::train::{train_loop, TrainConfig};
use rand::Rng;
use std::time::Instant;

fn randt(shape: &[usize], seed: u64) -> RealTensor {
    let mut rng = stream_rng(seed, Stream::Noise, 1234);
    let n = shape.iter().product();
    RealTensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn all_coords(params: &[RealTensor]) -> Vec<(usize, usize)> {
    params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ei| (pi, ei)))
        .collect()
}

/// Per-coordinate error minimized over several step sizes. A finite
/// difference window that straddles a relu kink reports a spurious error
/// that disappears once the window shrinks past the kink; a genuine
/// gradient bug stays put at every step size.
fn grad_check_multi_h<B>(builder: B, params: &[RealTensor], coords: &[(usize, usize)]) -> f64
where
    B: Fn(&mut Tape, &[cae::autodiff::Var]) -> cae::Result<cae::autodiff::Var>,
{
    let mut worst: f64 = 0.0;
    for &coord in coords {
        let mut best = f64::INFINITY;
        for h in [1e-5, 1e-6, 1e-7] {
            best = best.min(grad_check(&builder, params, h, &[coord]).unwrap());
            if best < 1e-6 {
                break;
            }
        }
        worst = worst.max(best);
    }
    worst
}

/// Criterion 1: analytic gradients of every primitive, one full complex
/// layer, and the full model match central finite differences within 1e-4.
#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let tol = 1e-4;
    let mut stages: Vec<(String, f64)> = Vec::new();

    // Primitives, each probed at every coordinate away from kinks.
    let x = randt(&[2, 3, 5, 5], 1).map(|v| v + 2.5);
    let conv_params = vec![x.clone(), randt(&[4, 3, 3, 3], 2), randt(&[4], 3)];
    stages.push((
        "conv2d".into(),
        grad_check(
            |tape, v| {
                let y = tape.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                let t = RealTensor::zeros(tape.value(y).shape());
                tape.mse_loss(y, &t)
            },
            &conv_params,
            1e-5,
            &all_coords(&conv_params),
        )
        .unwrap(),
    ));

    let tin = vec![x, randt(&[3, 4, 3, 3], 4), randt(&[4], 5)];
    stages.push((
        "conv_transpose2d".into(),
        grad_check(
            |tape, v| {
                let y = tape.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 1)?;
                let t = RealTensor::zeros(tape.value(y).shape());
                tape.mse_loss(y, &t)
            },
            &tin,
            1e-5,
            &all_coords(&tin),
        )
        .unwrap(),
    ));

    let lin = vec![randt(&[3, 6], 6), randt(&[4, 6], 7), randt(&[4], 8)];
    stages.push((
        "linear".into(),
        grad_check(
            |tape, v| {
                let y = tape.linear(v[0], v[1], Some(v[2]))?;
                let t = RealTensor::zeros(tape.value(y).shape());
                tape.mse_loss(y, &t)
            },
            &lin,
            1e-5,
            &all_coords(&lin),
        )
        .unwrap(),
    ));

    let bn = vec![randt(&[4, 3, 4, 4], 9), randt(&[3], 10).map(|v| v + 1.5), randt(&[3], 11)];
    for train in [true, false] {
        stages.push((
            format!("batch_norm(train={train})"),
            grad_check(
                |tape, v| {
                    let mut bufs = cae::autodiff::BnBuffers::new(3);
                    let y = if train {
                        tape.batch_norm_train(v[0], v[1], v[2], &mut bufs)?
                    } else {
                        tape.batch_norm_eval(v[0], v[1], v[2], &bufs)?
                    };
                    let t = RealTensor::zeros(tape.value(y).shape());
                    tape.mse_loss(y, &t)
                },
                &bn,
                1e-5,
                &all_coords(&bn),
            )
            .unwrap(),
        ));
    }

    let ln = vec![randt(&[3, 6], 12), randt(&[6], 13).map(|v| v + 1.5), randt(&[6], 14)];
    stages.push((
        "layer_norm".into(),
        grad_check(
            |tape, v| {
                let y = tape.layer_norm(v[0], v[1], v[2])?;
                let t = RealTensor::zeros(tape.value(y).shape());
                tape.mse_loss(y, &t)
            },
            &ln,
            1e-5,
            &all_coords(&ln),
        )
        .unwrap(),
    ));

    let pw = vec![randt(&[8], 15).map(|v| v + 3.0), randt(&[8], 16).map(|v| v + 2.0)];
    let pw_coords = all_coords(&pw);
    let pw_names = [
        "relu", "sigmoid", "sqrt_eps", "atan2", "magnitude", "polar", "div_max_clamp_mix", "sub_mul_reshape_sum",
    ];
    for (mode, name) in pw_names.iter().enumerate() {
        stages.push((
            format!("pointwise/{name}"),
            grad_check(
                |tape, v| {
                    let y = match mode {
                        0 => tape.relu(v[0]),
                        1 => tape.sigmoid(v[0]),
                        2 => tape.sqrt_eps(v[0]),
                        3 => tape.atan2(v[0], v[1])?,
                        4 => tape.magnitude(v[0], v[1])?,
                        5 => {
                            let re = tape.polar_re(v[0], v[1])?;
                            let im = tape.polar_im(v[0], v[1])?;
                            tape.add(re, im)?
                        }
                        6 => {
                            let q = tape.div(v[0], v[1])?;
                            let m = tape.max_scalar(q, 1.0);
                            let s = tape.scale(m, 0.2);
                            let c = tape.clamp01(s);
                            tape.mix_half(c, v[1])?
                        }
                        _ => {
                            let d = tape.sub(v[0], v[1])?;
                            let p = tape.mul(d, v[1])?;
                            let r = tape.reshape(p, &[2, 4])?;
                            tape.sum(r)
                        }
                    };
                    if tape.value(y).len() == 1 {
                        return Ok(y);
                    }
                    let t = RealTensor::filled(tape.value(y).shape(), 0.3);
                    tape.mse_loss(y, &t)
                },
                &pw,
                1e-6,
                &pw_coords,
            )
            .unwrap(),
        ));
    }

    let rot = vec![randt(&[2, 3], 17), randt(&[2, 3], 18), randt(&[3], 19)];
    stages.push((
        "rot_chan".into(),
        grad_check(
            |tape, v| {
                let re = tape.rot_chan_re(v[0], v[1], v[2])?;
                let im = tape.rot_chan_im(v[0], v[1], v[2])?;
                let y = tape.mul(re, im)?;
                let t = RealTensor::filled(tape.value(y).shape(), 0.1);
                tape.mse_loss(y, &t)
            },
            &rot,
            1e-6,
            &all_coords(&rot),
        )
        .unwrap(),
    ));

    // One full complex layer (weights, both biases, gating, activation).
    // Beta shifted positive so the batch-normalized magnitudes stay clear of
    // the relu kink at the probe points.
    let z_re = randt(&[2, 3, 6, 6], 20).map(|v| v + 2.0);
    let z_im = randt(&[2, 3, 6, 6], 21);
    let layer_params = vec![
        randt(&[4, 3, 3, 3], 22),
        randt(&[4], 23),
        randt(&[4], 24),
        randt(&[4], 25).map(|v| v + 1.5),
        randt(&[4], 26).map(|v| v + 3.0),
    ];
    stages.push((
        "complex_layer".into(),
        grad_check_multi_h(
            |tape, v| {
                let z = ComplexVar {
                    re: tape.leaf(z_re.clone()),
                    im: tape.leaf(z_im.clone()),
                };
                let mut bufs = cae::autodiff::BnBuffers::new(4);
                let out = complex_layer(
                    tape,
                    RealOp::Conv { stride: 1, pad: 1 },
                    v[0],
                    v[1],
                    v[2],
                    NormCtx::BatchTrain { gamma: v[3], beta: v[4], bufs: &mut bufs },
                    &z,
                    None,
                    false,
                    AblationFlags::default(),
                )?;
                let t_re = RealTensor::zeros(tape.value(out.z.re).shape());
                let l1 = tape.mse_loss(out.z.re, &t_re)?;
                let l2 = tape.mse_loss(out.z.im, &t_re)?;
                tape.add(l1, l2)
            },
            &layer_params,
            &all_coords(&layer_params),
        ),
    ));

    // Full model on a 2-image batch, 32 sampled parameter coordinates.
    // Phase biases are randomized so the activations are generically
    // complex: at the all-zero init they sit exactly on the real axis, where
    // weighted sums cross zero freely and the intentionally clamped
    // magnitude gradient at |psi| < 1e-4 shows up as finite-difference
    // disagreement (see CaeModel::randomize_phase_biases).
    let mut model = CaeModel::build(CaeConfig { seed: 3, ..CaeConfig::default() }).unwrap();
    model.randomize_phase_biases(3);
    let params: Vec<RealTensor> = model.params().iter().map(|(_, t)| t.clone()).collect();
    let mut rng = stream_rng(77, Stream::Noise, 0);
    let batch = RealTensor::from_vec(
        &[2, 1, 32, 32],
        (0..2 * 1024).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let coords: Vec<(usize, usize)> = (0..32)
        .map(|_| {
            let pi = rng.gen_range(0..params.len());
            let ei = rng.gen_range(0..params[pi].len());
            (pi, ei)
        })
        .collect();
    let full_err = grad_check_multi_h(
        |tape, vars| {
            let mut m = model.clone();
            let fv = m.forward_train(tape, vars, &batch, 0.0)?;
            tape.mse_loss(fv.x_hat, &batch)
        },
        &params,
        &coords,
    );
    stages.push(("full_model".into(), full_err));

    let secs = started.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for (name, err) in &stages {
        println!("  grad check {name}: {err:.3e}");
        worst = worst.max(*err);
    }
    assert!(worst < tol, "max relative gradient error {worst}");
    assert!(secs < 300.0, "gradient checks took {secs}s");
    println!(
        "criterion 1: PASS - max relative gradient error {worst:.3e} (full model {full_err:.3e}) in {secs:.1}s"
    );
}

/// Criterion 2: the gating identity on 1,000 constructed instances — a
/// maximally out-of-phase input contributes nothing to m_z, within 1e-12.
#[test]
fn criterion_2_gating_identity() {
    let started = Instant::now();
    let mut rng = stream_rng(2024, Stream::Noise, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..8usize);
        let phi1: f64 = rng.gen_range(-3.0..3.0);
        // Draw until the in-phase dot product has a healthy margin.
        let (w1, m1, s) = loop {
            let w1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m1: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
            let s: f64 = w1.iter().zip(&m1).map(|(w, m)| w * m).sum();
            if s >= 1.2 {
                break (w1, m1, s);
            }
        };
        let w2: f64 = rng.gen_range(0.1..1.0);
        let c: f64 = rng.gen_range(0.0..s - 1.0);
        let m2 = c / w2;

        let m_z = |include: bool| -> f64 {
            let cols = if include { n + 1 } else { n };
            let mut tape = Tape::new();
            let mut re = Vec::with_capacity(cols);
            let mut im = Vec::with_capacity(cols);
            for i in 0..n {
                re.push(m1[i] * phi1.cos());
                im.push(m1[i] * phi1.sin());
            }
            if include {
                re.push(m2 * (phi1 + std::f64::consts::PI).cos());
                im.push(m2 * (phi1 + std::f64::consts::PI).sin());
            }
            let z = ComplexVar {
                re: tape.leaf(RealTensor::from_vec(&[1, cols], re).unwrap()),
                im: tape.leaf(RealTensor::from_vec(&[1, cols], im).unwrap()),
            };
            let mut weights = w1.clone();
            if include {
                weights.push(w2);
            }
            let w = tape.leaf(RealTensor::from_vec(&[1, cols], weights).unwrap());
            let b_m = tape.leaf(RealTensor::zeros(&[1]));
            let b_phi = tape.leaf(RealTensor::zeros(&[1]));
            let psi = apply_weights_complex(&mut tape, RealOp::Linear, w, &z).unwrap();
            let (m_z, _) = bias_and_gate(
                &mut tape,
                RealOp::Linear,
                w,
                b_m,
                b_phi,
                &psi,
                &z,
                AblationFlags::default(),
            )
            .unwrap();
            tape.value(m_z).data()[0]
        };

        let diff = (m_z(true) - m_z(false)).abs();
        worst = worst.max(diff);
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(worst < 1e-12, "worst gating discrepancy {worst}");
    assert!(secs < 60.0, "gating identity took {secs}s");
    println!("criterion 2: PASS - worst m_z discrepancy {worst:.3e} over 1000 instances in {secs:.1}s");
}

/// Criterion 3: global rotation equivariance on a random-init model with
/// generic phase biases: 64 noise images, 16 phase shifts, magnitude and
/// wraparound phase errors below 1e-6, exactly zero at alpha = 0.
#[test]
fn criterion_3_rotation_equivariance() {
    let started = Instant::now();
    let mut model = CaeModel::build(CaeConfig { seed: 11, ..CaeConfig::default() }).unwrap();
    model.randomize_phase_biases(11);
    let points = equivariance_harness(&model, 64, 16, 11).unwrap();
    assert_eq!(points.len(), 16);
    assert_eq!(points[0].alpha, 0.0);
    assert_eq!(points[0].mag_err, 0.0, "alpha=0 magnitude error must be exactly zero");
    assert_eq!(points[0].phase_err, 0.0, "alpha=0 phase error must be exactly zero");
    let worst_mag = points.iter().fold(0.0f64, |m, p| m.max(p.mag_err));
    let worst_phase = points.iter().fold(0.0f64, |m, p| m.max(p.phase_err));
    let secs = started.elapsed().as_secs_f64();
    assert!(worst_mag < 1e-6, "magnitude equivariance error {worst_mag}");
    assert!(worst_phase < 1e-6, "phase equivariance error {worst_phase}");
    assert!(secs < 300.0, "equivariance harness took {secs}s");
    println!(
        "criterion 3: PASS - worst magnitude err {worst_mag:.3e}, worst phase err {worst_phase:.3e} in {secs:.1}s"
    );
}

/// Independent pair-counting Rand index over all retained pixel pairs.
fn ari_pair_oracle(pred: &[usize], truth: &[u8], include_bg: bool) -> f64 {
    let retained: Vec<usize> = (0..pred.len())
        .filter(|&i| truth[i].count_ones() <= 1 && (include_bg || truth[i] != 0))
        .collect();
    let (mut n11, mut n00, mut n10, mut n01) = (0f64, 0f64, 0f64, 0f64);
    for (a, &i) in retained.iter().enumerate() {
        for &j in retained.iter().skip(a + 1) {
            match (truth[i] == truth[j], pred[i] == pred[j]) {
                (true, true) => n11 += 1.0,
                (false, false) => n00 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
            }
        }
    }
    let denom = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * (n11 * n00 - n10 * n01) / denom
    }
}

/// Criterion 4: metric oracles — ARI against the O(n^2) pair-counting
/// oracle, k-means against exhaustive best clustering on planted instances.
#[test]
fn criterion_4_metric_oracles() {
    let mut rng = stream_rng(404, Stream::Noise, 3);
    let mut checked = 0;
    for _ in 0..200 {
        let n = rng.gen_range(10..=50);
        let truth: Vec<u8> = (0..n)
            .map(|_| match rng.gen_range(0..5u8) {
                0 => 0,
                1 => 1,
                2 => 2,
                3 => 4,
                _ => 0b11,
            })
            .collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4usize)).collect();
        for include_bg in [true, false] {
            let retained = truth
                .iter()
                .filter(|l| l.count_ones() <= 1 && (include_bg || **l != 0))
                .count();
            if retained < 2 {
                continue;
            }
            let fast = ari(&pred, &truth, include_bg).unwrap();
            let slow = ari_pair_oracle(&pred, &truth, include_bg);
            assert!((fast - slow).abs() < 1e-12, "ARI {fast} vs oracle {slow}");
            checked += 1;
        }
    }
    assert!(checked > 300, "only {checked} ARI instances checked");

    // Planted 12-point 3-cluster instances vs exhaustive enumeration.
    let mut km_checked = 0;
    for seed in 0..5u64 {
        let mut rng = stream_rng(seed, Stream::KMeans, 9);
        let centers = [[1.0, 0.0], [-0.5, 0.85], [-0.4, -0.9]];
        let mut points = Vec::new();
        for c in &centers {
            for _ in 0..4 {
                points.push([
                    c[0] + rng.gen_range(-0.05..0.05),
                    c[1] + rng.gen_range(-0.05..0.05),
                ]);
            }
        }
        let sse = |assign: &[usize]| -> f64 {
            let mut sums = vec![[0.0f64; 2]; 3];
            let mut counts = [0usize; 3];
            for (i, &a) in assign.iter().enumerate() {
                sums[a][0] += points[i][0];
                sums[a][1] += points[i][1];
                counts[a] += 1;
            }
            let mut total = 0.0;
            for (i, &a) in assign.iter().enumerate() {
                if counts[a] > 0 {
                    let c = [sums[a][0] / counts[a] as f64, sums[a][1] / counts[a] as f64];
                    total += (points[i][0] - c[0]).powi(2) + (points[i][1] - c[1]).powi(2);
                }
            }
            total
        };
        let mut best_cost = f64::INFINITY;
        let mut assign = vec![0usize; 12];
        loop {
            best_cost = best_cost.min(sse(&assign));
            let mut i = 0;
            while i < 12 {
                assign[i] += 1;
                if assign[i] < 3 {
                    break;
                }
                assign[i] = 0;
                i += 1;
            }
            if i == 12 {
                break;
            }
        }
        let km = kmeans(&points, 3, seed).unwrap();
        let got = sse(&km.assignments);
        assert!(
            (got - best_cost).abs() < 1e-12,
            "k-means cost {got} vs exhaustive optimum {best_cost}"
        );
        km_checked += 1;
    }
    println!(
        "criterion 4: PASS - {checked} ARI instances match the pair oracle, {km_checked} planted k-means instances match exhaustive optima"
    );
}

fn fallback_datasets(variant: DatasetVariant, data_seed: u64) -> (Dataset, Dataset, Dataset) {
    let train = Dataset::generate(
        &DatasetSpec::new(variant, Split::Train, data_seed).with_count(5_000),
        None,
    )
    .unwrap();
    let val = Dataset::generate(
        &DatasetSpec::new(variant, Split::Val, data_seed).with_count(1_000),
        None,
    )
    .unwrap();
    let test = Dataset::generate(
        &DatasetSpec::new(variant, Split::Test, data_seed).with_count(1_000),
        None,
    )
    .unwrap();
    (train, val, test)
}

fn train_and_eval(
    variant: DatasetVariant,
    flags: AblationFlags,
    seed: u64,
    steps: u64,
    datasets: &(Dataset, Dataset, Dataset),
) -> (f64, f64, f64) {
    let cfg = TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    };
    let model_cfg = CaeConfig {
        flags,
        seed,
        ..CaeConfig::default()
    };
    let mut model = CaeModel::build(model_cfg).unwrap();
    train_loop(&mut model, &datasets.0, Some(&datasets.1), &cfg, None, None).unwrap();
    let report = evaluate(&model, &datasets.2, seed).unwrap();
    println!(
        "  [{} seed {seed}] mse {:.4e} ari+bg {:.4} ari-bg {:.4}",
        variant.name(),
        report.mse,
        report.ari_with_bg,
        report.ari_no_bg
    );
    (report.mse, report.ari_with_bg, report.ari_no_bg)
}

/// Criterion 5: end-to-end reproduction on the two-shape dataset at the
/// sanctioned reduced data size (5,000 train / 1,000 test, architecture and
/// 10,000-step schedule unchanged): test MSE <= 1e-3 and both ARI scores
/// >= 0.95 on at least 2 of 3 seeds.
#[test]
#[ignore = "trains three full models (hours); run with -- --ignored"]
fn criterion_5_two_shapes_end_to_end() {
    let datasets = fallback_datasets(DatasetVariant::TwoShapes, 0);
    let mut passes = 0;
    for seed in [0u64, 1, 2] {
        let (mse, ari_bg, ari_no_bg) =
            train_and_eval(DatasetVariant::TwoShapes, AblationFlags::default(), seed, 10_000, &datasets);
        if mse <= 1e-3 && ari_no_bg >= 0.95 && ari_bg >= 0.95 {
            passes += 1;
        }
    }
    assert!(passes >= 2, "only {passes}/3 seeds passed");
    println!("criterion 5: PASS - {passes}/3 seeds reached mse <= 1e-3 and ARI >= 0.95");
}

/// Criterion 6: component-removal directionality under identical training:
/// no-phase-bias and no-gating collapse (ARI-BG <= 0.5), the full model
/// exceeds 0.95, no-output-head stays >= 0.8; no-batchnorm is reported
/// without a gate.
#[test]
#[ignore = "trains five full models (hours); run with -- --ignored"]
fn criterion_6_ablation_directionality() {
    let datasets = fallback_datasets(DatasetVariant::TwoShapes, 0);
    let seed = 0u64;
    let run = |flags: AblationFlags| {
        train_and_eval(DatasetVariant::TwoShapes, flags, seed, 10_000, &datasets).2
    };
    let full = run(AblationFlags::default());
    let no_phase = run(AblationFlags { disable_phase_bias: true, ..Default::default() });
    let no_chi = run(AblationFlags { disable_chi: true, ..Default::default() });
    let no_fout = run(AblationFlags { disable_f_out: true, ..Default::default() });
    let no_bn = run(AblationFlags { disable_batchnorm: true, ..Default::default() });
    println!("  ablations: full {full:.3} -b_phi {no_phase:.3} -chi {no_chi:.3} -f_out {no_fout:.3} -batchnorm {no_bn:.3} (reported, ungated)");
    assert!(full > 0.95, "full model ARI-BG {full}");
    assert!(no_phase <= 0.5, "-b_phi ARI-BG {no_phase}");
    assert!(no_chi <= 0.5, "-chi ARI-BG {no_chi}");
    assert!(no_fout >= 0.8, "-f_out ARI-BG {no_fout}");
    println!("criterion 6: PASS - ablation directionality holds");
}

/// Criterion 7: the digit-plus-shape dataset at 10,000 steps reaches
/// ARI-BG >= 0.85 on at least 2 of 3 seeds. Needs the four standard IDX
/// files; point CAE_MNIST_DIR at them.
#[test]
#[ignore = "needs IDX digit files and hours of training; run with -- --ignored"]
fn criterion_7_mnist_and_shape() {
    let Some(dir) = std::env::var_os("CAE_MNIST_DIR") else {
        println!("criterion 7: SKIPPED - set CAE_MNIST_DIR to a directory with train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte");
        return;
    };
    let dir = std::path::PathBuf::from(dir);
    let train_store = cae::data::mnist::load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )
    .unwrap();
    let test_store = cae::data::mnist::load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )
    .unwrap();
    let variant = DatasetVariant::MnistAndShape;
    let train = Dataset::generate(
        &DatasetSpec::new(variant, Split::Train, 0).with_count(5_000),
        Some(&train_store),
    )
    .unwrap();
    let val = Dataset::generate(
        &DatasetSpec::new(variant, Split::Val, 0).with_count(1_000),
        Some(&train_store),
    )
    .unwrap();
    let test = Dataset::generate(
        &DatasetSpec::new(variant, Split::Test, 0).with_count(1_000),
        Some(&test_store),
    )
    .unwrap();
    let datasets = (train, val, test);
    let mut passes = 0;
    for seed in [0u64, 1, 2] {
        let (_, _, ari_no_bg) =
            train_and_eval(variant, AblationFlags::default(), seed, 10_000, &datasets);
        if ari_no_bg >= 0.85 {
            passes += 1;
        }
    }
    assert!(passes >= 2, "only {passes}/3 seeds passed");
    println!("criterion 7: PASS - {passes}/3 seeds reached ARI-BG >= 0.85");
}

/// Criterion 8: the three-shape dataset at 100,000 steps (extended,
/// non-gating): if run, ARI-BG >= 0.95.
#[test]
#[ignore = "trains for 100k steps (about a day); run with -- --ignored"]
fn criterion_8_three_shapes_long() {
    let datasets = fallback_datasets(DatasetVariant::ThreeShapes, 0);
    let (_, _, ari_no_bg) = train_and_eval(
        DatasetVariant::ThreeShapes,
        AblationFlags::default(),
        0,
        100_000,
        &datasets,
    );
    assert!(ari_no_bg >= 0.95, "3-shape ARI-BG {ari_no_bg}");
    println!("criterion 8: PASS - ARI-BG {ari_no_bg:.3}");
}

/// Criterion 9: byte-identical datasets, checkpoints and evaluation reports
/// for identical commands and seeds in sequential mode.
#[test]
fn criterion_9_determinism() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        // Datasets.
        let spec = DatasetSpec::new(DatasetVariant::TwoShapesRandBg, Split::Train, 5).with_count(64);
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.caed"), dir.path().join("b.caed"));
        Dataset::generate(&spec, None).unwrap().write(&p1).unwrap();
        Dataset::generate(&spec, None).unwrap().write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap(), "dataset files differ");

        // Checkpoints after a short training run.
        let data = Dataset::load(&p1).unwrap();
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 4,
            warmup_steps: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = |name: &str| {
            let out = dir.path().join(name);
            let mut model = CaeModel::build(CaeConfig { seed: 9, ..CaeConfig::default() }).unwrap();
            train_loop(&mut model, &data, None, &cfg, Some(&out), None).unwrap();
            (std::fs::read(out.join("checkpoint-final.cae")).unwrap(), model)
        };
        let (bytes1, model) = run("r1");
        let (bytes2, _) = run("r2");
        assert_eq!(bytes1, bytes2, "checkpoints differ");

        // Evaluation reports.
        let r1 = evaluate(&model, &data, 3).unwrap().to_json();
        let r2 = evaluate(&model, &data, 3).unwrap().to_json();
        assert_eq!(r1, r2, "evaluation reports differ");
    });
    println!("criterion 9: PASS - datasets, checkpoints and reports are byte-identical");
}
