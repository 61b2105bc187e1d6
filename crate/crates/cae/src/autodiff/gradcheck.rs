//! Central finite-difference gradient verification.

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::RealTensor;

/// Differences below this are inside central-difference resolution
/// (cancellation noise of order ulp(loss) / 2h) and count as exact.
pub const FD_RESOLUTION: f64 = 1e-9;

/// Compare analytic gradients against central finite differences.
///
/// `builder` receives a fresh tape and one leaf per entry of `params` and
/// must return the scalar loss node. `coords` selects the
/// (parameter, element) coordinates to probe; evaluation points should stay
/// away from relu kinks and near-zero complex magnitudes, where the loss is
/// not differentiable or the stabilized gradients intentionally deviate.
///
/// Returns max over coords of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// with differences below [`FD_RESOLUTION`] counted as zero.
pub fn grad_check<B>(
    builder: B,
    params: &[RealTensor],
    h: f64,
    coords: &[(usize, usize)],
) -> Result<f64>
where
    B: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "grad_check needs a positive step");

    let eval = |p: &[RealTensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = p.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = builder(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    // Analytic gradients once.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = builder(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<RealTensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
    drop(tape);

    let mut max_rel: f64 = 0.0;
    for &(pi, ei) in coords {
        let mut plus = params.to_vec();
        plus[pi].data_mut()[ei] += h;
        let mut minus = params.to_vec();
        minus[pi].data_mut()[ei] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let a = analytic[pi].data()[ei];
        if (a - numeric).abs() <= FD_RESOLUTION {
            continue;
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
