//! Verify analytic gradients against central finite differences, from a
//! single linear layer up to a full complex layer.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use cae::autodiff::{grad_check, BnBuffers};
use cae::layers::{complex_layer, AblationFlags, ComplexVar, NormCtx, RealOp};
use cae::rng::{stream_rng, Stream};
use cae::tensor::RealTensor;
use rand::Rng;

fn randt(shape: &[usize], seed: u64) -> RealTensor {
    let mut rng = stream_rng(seed, Stream::Noise, 0);
    let n = shape.iter().product();
    RealTensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> cae::Result<()> {
    // Linear layer: exact to finite-difference resolution.
    let params = vec![randt(&[3, 5], 1), randt(&[2, 5], 2), randt(&[2], 3)];
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ei| (pi, ei)))
        .collect();
    let err = grad_check(
        |tape, v| {
            let y = tape.linear(v[0], v[1], Some(v[2]))?;
            Ok(tape.sum(y))
        },
        &params,
        1e-5,
        &coords,
    )?;
    println!("linear layer, {} coordinates: max relative error {err:.3e}", coords.len());

    // One full complex layer: weights, both biases, gating, normalization,
    // phase-preserving activation.
    let z_re = randt(&[2, 3, 6, 6], 10).map(|v| v + 2.0);
    let z_im = randt(&[2, 3, 6, 6], 11);
    let layer_params = vec![
        randt(&[4, 3, 3, 3], 12),
        randt(&[4], 13),
        randt(&[4], 14),
        randt(&[4], 15).map(|v| v + 1.5),
        randt(&[4], 16).map(|v| v + 3.0),
    ];
    let coords: Vec<(usize, usize)> = layer_params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ei| (pi, ei)))
        .collect();
    let err = grad_check(
        |tape, v| {
            let z = ComplexVar {
                re: tape.leaf(z_re.clone()),
                im: tape.leaf(z_im.clone()),
            };
            let mut bufs = BnBuffers::new(4);
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
            let t = RealTensor::zeros(tape.value(out.z.re).shape());
            let l1 = tape.mse_loss(out.z.re, &t)?;
            let l2 = tape.mse_loss(out.z.im, &t)?;
            tape.add(l1, l2)
        },
        &layer_params,
        1e-6,
        &coords,
    )?;
    println!("complex layer, {} coordinates: max relative error {err:.3e}", coords.len());
    Ok(())
}
