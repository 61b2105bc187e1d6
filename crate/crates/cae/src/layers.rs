//! Complex layers.
//!
//! A complex layer wraps one real weight tensor and applies it three times
//! with shared parameters: to the real part, to the imaginary part, and to
//! the input magnitudes (the gating path). Separate per-channel biases shift
//! the resulting magnitudes and phases, and the activation transforms
//! magnitudes only, so phases pass through untouched. Every step is built
//! from tape primitives, which keeps the whole layer differentiable and
//! equivariant to global phase rotations.

use crate::autodiff::{BnBuffers, Tape, Var};
use crate::error::Result;

/// A complex-valued activation on the tape: paired real/imaginary nodes.
#[derive(Debug, Clone, Copy)]
pub struct ComplexVar {
    pub re: Var,
    pub im: Var,
}

/// Output of a complex layer: the rectangular activation plus the polar
/// planes it was assembled from. The phase plane stays well defined even at
/// positions whose magnitude was clamped to zero; it is only built when
/// requested, since only the latent and final layers' phases are consumed.
#[derive(Debug, Clone, Copy)]
pub struct ComplexLayerOut {
    pub z: ComplexVar,
    pub mag: Var,
    /// |z| of the rectangular output, carried so the next layer's gating
    /// path does not need to recompute it.
    pub z_mag: Var,
    pub phase: Option<Var>,
}

/// Which real layer a complex layer wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealOp {
    Conv { stride: usize, pad: usize },
    ConvTranspose { stride: usize, pad: usize, output_pad: usize },
    Linear,
}

impl RealOp {
    pub fn apply(&self, tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        match *self {
            RealOp::Conv { stride, pad } => tape.conv2d(x, w, b, stride, pad),
            RealOp::ConvTranspose {
                stride,
                pad,
                output_pad,
            } => tape.conv_transpose2d(x, w, b, stride, pad, output_pad),
            RealOp::Linear => tape.linear(x, w, b),
        }
    }
}

/// Switches for the model-sensitivity variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    pub disable_phase_bias: bool,
    pub disable_chi: bool,
    pub disable_batchnorm: bool,
    pub disable_f_out: bool,
}

/// Normalization context for the activation: conv layers use batch norm,
/// linear layers use layer norm.
pub enum NormCtx<'a> {
    BatchTrain {
        gamma: Var,
        beta: Var,
        bufs: &'a mut BnBuffers,
    },
    BatchEval {
        gamma: Var,
        beta: Var,
        bufs: &'a BnBuffers,
    },
    Layer {
        gamma: Var,
        beta: Var,
    },
}

/// Apply the shared weights separately to the real and imaginary parts
/// (bias-free; biases enter through [`bias_and_gate`]).
pub fn apply_weights_complex(
    tape: &mut Tape,
    op: RealOp,
    w: Var,
    z: &ComplexVar,
) -> Result<ComplexVar> {
    Ok(ComplexVar {
        re: op.apply(tape, z.re, w, None)?,
        im: op.apply(tape, z.im, w, None)?,
    })
}

/// Magnitude/phase biases plus the gating path:
/// m_psi = |psi| + b_m, phi_psi = arg(psi) + b_phi,
/// chi = f_w(|z_in|) + b_m, m_z = 0.5 m_psi + 0.5 chi.
#[allow(clippy::too_many_arguments)]
pub fn bias_and_gate(
    tape: &mut Tape,
    op: RealOp,
    w: Var,
    b_m: Var,
    b_phi: Var,
    psi: &ComplexVar,
    z_in: &ComplexVar,
    flags: AblationFlags,
) -> Result<(Var, Var)> {
    let m_psi = tape.magnitude(psi.re, psi.im)?;
    let m_psi = tape.add_bias(m_psi, b_m)?;

    let mut phi_psi = tape.atan2(psi.im, psi.re)?;
    if !flags.disable_phase_bias {
        phi_psi = tape.add_bias(phi_psi, b_phi)?;
    }

    let m_z = if flags.disable_chi {
        m_psi
    } else {
        let z_mag = tape.magnitude(z_in.re, z_in.im)?;
        let chi = op.apply(tape, z_mag, w, None)?;
        let chi = tape.add_bias(chi, b_m)?;
        tape.mix_half(m_psi, chi)?
    };
    Ok((m_z, phi_psi))
}

/// Phase-preserving activation: z_out = relu(norm(m_z)) * e^{i phi_psi}.
/// The relu keeps magnitudes nonnegative, so no phase flips occur.
///
/// The rectangular output is assembled by rescaling and rotating psi itself
/// (mag * rot_{b_phi}(psi) / |psi|) rather than by cos/sin of the recovered
/// angle. Both routes agree wherever |psi| exceeds the direction floor, but
/// rescaling keeps floating-point errors relative instead of amplifying
/// angular noise at near-cancelled activations; below the floor the output
/// is attenuated toward zero, where the angle is undefined anyway.
pub fn complex_activation(
    tape: &mut Tape,
    m_z: Var,
    phi_psi: Var,
    psi: &ComplexVar,
    b_phi: Var,
    norm: NormCtx<'_>,
    flags: AblationFlags,
) -> Result<ComplexLayerOut> {
    let normalized = if flags.disable_batchnorm {
        m_z
    } else {
        match norm {
            NormCtx::BatchTrain { gamma, beta, bufs } => {
                tape.batch_norm_train(m_z, gamma, beta, bufs)?
            }
            NormCtx::BatchEval { gamma, beta, bufs } => {
                tape.batch_norm_eval(m_z, gamma, beta, bufs)?
            }
            NormCtx::Layer { gamma, beta } => tape.layer_norm(m_z, gamma, beta)?,
        }
    };
    let mag = tape.relu(normalized);
    let r = tape.magnitude(psi.re, psi.im)?;
    let r_safe = tape.max_scalar(r, crate::autodiff::DIR_FLOOR);
    let gain = tape.div(mag, r_safe)?;
    let (dir_re, dir_im) = if flags.disable_phase_bias {
        (psi.re, psi.im)
    } else {
        (
            tape.rot_chan_re(psi.re, psi.im, b_phi)?,
            tape.rot_chan_im(psi.re, psi.im, b_phi)?,
        )
    };
    let re = tape.mul(gain, dir_re)?;
    let im = tape.mul(gain, dir_im)?;
    let z_mag = tape.mul(gain, r)?;
    Ok(ComplexLayerOut {
        z: ComplexVar { re, im },
        mag,
        z_mag,
        phase: Some(phi_psi),
    })
}

/// Full complex layer: weights, biases and gating, then the activation.
///
/// `z_in_mag` carries |z_in| from the previous layer when available;
/// `want_phase` controls whether the atan2 phase channel is materialized.
#[allow(clippy::too_many_arguments)]
pub fn complex_layer(
    tape: &mut Tape,
    op: RealOp,
    w: Var,
    b_m: Var,
    b_phi: Var,
    norm: NormCtx<'_>,
    z_in: &ComplexVar,
    z_in_mag: Option<Var>,
    want_phase: bool,
    flags: AblationFlags,
) -> Result<ComplexLayerOut> {
    let psi = apply_weights_complex(tape, op, w, z_in)?;

    // Eqs. 3-4 inline, sharing |psi| with the activation's rescale.
    let r = tape.magnitude(psi.re, psi.im)?;
    let m_psi = tape.add_bias(r, b_m)?;
    let m_z = if flags.disable_chi {
        m_psi
    } else {
        let z_mag = match z_in_mag {
            Some(m) => m,
            None => tape.magnitude(z_in.re, z_in.im)?,
        };
        let chi = op.apply(tape, z_mag, w, None)?;
        let chi = tape.add_bias(chi, b_m)?;
        tape.mix_half(m_psi, chi)?
    };
    let phase = if want_phase {
        let mut phi = tape.atan2(psi.im, psi.re)?;
        if !flags.disable_phase_bias {
            phi = tape.add_bias(phi, b_phi)?;
        }
        Some(phi)
    } else {
        None
    };

    // Eq. 5 with the shared |psi|.
    let normalized = if flags.disable_batchnorm {
        m_z
    } else {
        match norm {
            NormCtx::BatchTrain { gamma, beta, bufs } => {
                tape.batch_norm_train(m_z, gamma, beta, bufs)?
            }
            NormCtx::BatchEval { gamma, beta, bufs } => {
                tape.batch_norm_eval(m_z, gamma, beta, bufs)?
            }
            NormCtx::Layer { gamma, beta } => tape.layer_norm(m_z, gamma, beta)?,
        }
    };
    let mag = tape.relu(normalized);
    let r_safe = tape.max_scalar(r, crate::autodiff::DIR_FLOOR);
    let gain = tape.div(mag, r_safe)?;
    let (dir_re, dir_im) = if flags.disable_phase_bias {
        (psi.re, psi.im)
    } else {
        (
            tape.rot_chan_re(psi.re, psi.im, b_phi)?,
            tape.rot_chan_im(psi.re, psi.im, b_phi)?,
        )
    };
    let re = tape.mul(gain, dir_re)?;
    let im = tape.mul(gain, dir_im)?;
    let z_mag = tape.mul(gain, r)?;
    Ok(ComplexLayerOut {
        z: ComplexVar { re, im },
        mag,
        z_mag,
        phase,
    })
}
