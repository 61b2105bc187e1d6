//! Dense real and complex tensors.
//!
//! `RealTensor` is a row-major contiguous block of `f64` with an explicit
//! shape; `ComplexTensor` pairs two equally shaped real planes. These types
//! are the substrate for the model: all activations, parameters and images
//! live here. Values are immutable once returned and safe to share across
//! threads.

use crate::error::{CaeError, Result};

pub const POLAR_EPS: f64 = 1e-12;

/// Row-major dense tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        RealTensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        RealTensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CaeError::ShapeMismatch(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(RealTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        RealTensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret the same data under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        RealTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(RealTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(CaeError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// Complex tensor in rectangular form: paired real/imaginary planes.
///
/// Magnitude is nonnegative by construction of every exported operation.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    pub re: RealTensor,
    pub im: RealTensor,
}

impl ComplexTensor {
    pub fn new(re: RealTensor, im: RealTensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(CaeError::ShapeMismatch(format!(
                "re {:?} vs im {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        ComplexTensor {
            re: RealTensor::zeros(shape),
            im: RealTensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    /// Exact elementwise magnitude sqrt(re^2 + im^2), no stabilizer.
    pub fn magnitude(&self) -> RealTensor {
        self.re
            .zip_map(&self.im, |re, im| re.hypot(im))
            .expect("re/im shapes are equal by construction")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.add(&other.re)?,
            im: self.im.add(&other.im)?,
        })
    }

    /// Elementwise complex product (ac - bd) + (ad + bc)i.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        let re = self
            .re
            .zip_map(&other.re, |a, c| a * c)?
            .zip_map(&self.im.mul(&other.im)?, |ac, bd| ac - bd)?;
        let im = self
            .re
            .mul(&other.im)?
            .zip_map(&self.im.mul(&other.re)?, |ad, bc| ad + bc)?;
        Ok(ComplexTensor { re, im })
    }

    pub fn scale(&self, c: f64) -> Self {
        ComplexTensor {
            re: self.re.scale(c),
            im: self.im.scale(c),
        }
    }
}

/// Build a complex tensor from magnitude and phase planes:
/// re = mag cos(phase), im = mag sin(phase).
pub fn from_polar(mag: &RealTensor, phase: &RealTensor) -> Result<ComplexTensor> {
    if mag.shape() != phase.shape() {
        return Err(CaeError::ShapeMismatch(format!(
            "mag {:?} vs phase {:?}",
            mag.shape(),
            phase.shape()
        )));
    }
    if mag.iter().any(|&m| m < 0.0) {
        return Err(CaeError::InvalidArgument(
            "from_polar requires nonnegative magnitudes".into(),
        ));
    }
    let re = mag.zip_map(phase, |m, p| m * p.cos())?;
    let im = mag.zip_map(phase, |m, p| m * p.sin())?;
    Ok(ComplexTensor { re, im })
}

/// Split a complex tensor into magnitude and phase planes.
///
/// The magnitude is sqrt(max(re^2 + im^2, eps)) so the function is total and
/// exact whenever |z|^2 >= eps; the phase is atan2(im, re) normalized to
/// (-pi, pi] with atan2(0, 0) = 0.
pub fn polar_decompose(z: &ComplexTensor, eps: f64) -> (RealTensor, RealTensor) {
    assert!(eps > 0.0, "polar_decompose needs a positive stabilizer");
    let mag = z
        .re
        .zip_map(&z.im, |re, im| (re * re + im * im).max(eps).sqrt())
        .expect("re/im shapes are equal by construction");
    let phase = z
        .re
        .zip_map(&z.im, |re, im| {
            if re == 0.0 && im == 0.0 {
                0.0
            } else {
                let p = im.atan2(re);
                if p <= -std::f64::consts::PI {
                    std::f64::consts::PI
                } else {
                    p
                }
            }
        })
        .expect("re/im shapes are equal by construction");
    (mag, phase)
}

/// Rotate every element counter-clockwise by `alpha`: multiply by
/// cos(alpha) + sin(alpha) i. Magnitudes are unchanged, phases shift by alpha.
pub fn rotate_global(z: &ComplexTensor, alpha: f64) -> ComplexTensor {
    let (c, s) = (alpha.cos(), alpha.sin());
    let re = z
        .re
        .zip_map(&z.im, |re, im| re * c - im * s)
        .expect("re/im shapes are equal by construction");
    let im = z
        .re
        .zip_map(&z.im, |re, im| re * s + im * c)
        .expect("re/im shapes are equal by construction");
    ComplexTensor { re, im }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: Vec<f64>, im: Vec<f64>) -> ComplexTensor {
        let n = re.len();
        ComplexTensor::new(
            RealTensor::from_vec(&[n], re).unwrap(),
            RealTensor::from_vec(&[n], im).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn from_polar_basic_angles() {
        let z = from_polar(
            &RealTensor::from_vec(&[1], vec![1.0]).unwrap(),
            &RealTensor::from_vec(&[1], vec![0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(z.re.data()[0], 1.0);
        assert_eq!(z.im.data()[0], 0.0);

        let z = from_polar(
            &RealTensor::from_vec(&[1], vec![2.0]).unwrap(),
            &RealTensor::from_vec(&[1], vec![PI / 2.0]).unwrap(),
        )
        .unwrap();
        assert!(z.re.data()[0].abs() < 1e-12);
        assert!((z.im.data()[0] - 2.0).abs() < 1e-12);

        let z = from_polar(
            &RealTensor::from_vec(&[1], vec![0.5]).unwrap(),
            &RealTensor::from_vec(&[1], vec![PI]).unwrap(),
        )
        .unwrap();
        assert!((z.re.data()[0] + 0.5).abs() < 1e-12);
        assert!(z.im.data()[0].abs() < 1e-12);
    }

    #[test]
    fn from_polar_rejects_bad_input() {
        let mag = RealTensor::from_vec(&[1], vec![-1.0]).unwrap();
        let phase = RealTensor::from_vec(&[1], vec![0.0]).unwrap();
        assert!(from_polar(&mag, &phase).is_err());
        let mag2 = RealTensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        assert!(from_polar(&mag2, &phase).is_err());
    }

    #[test]
    fn polar_decompose_345_triangle() {
        let z = c(vec![3.0], vec![4.0]);
        let (mag, phase) = polar_decompose(&z, POLAR_EPS);
        assert!((mag.data()[0] - 5.0).abs() < 1e-9);
        assert!((phase.data()[0] - 4.0f64.atan2(3.0)).abs() < 1e-15);
    }

    #[test]
    fn polar_decompose_origin_and_branch() {
        let z = c(vec![0.0], vec![0.0]);
        let (mag, phase) = polar_decompose(&z, POLAR_EPS);
        assert_eq!(mag.data()[0], POLAR_EPS.sqrt());
        assert_eq!(phase.data()[0], 0.0);

        let z = c(vec![-1.0], vec![0.0]);
        let (_, phase) = polar_decompose(&z, POLAR_EPS);
        assert_eq!(phase.data()[0], PI);
        // -0.0 imaginary part must stay on the (-pi, pi] branch.
        let z = c(vec![-1.0], vec![-0.0]);
        let (_, phase) = polar_decompose(&z, POLAR_EPS);
        assert_eq!(phase.data()[0], PI);
    }

    #[test]
    fn rotate_quarter_turn() {
        let z = c(vec![1.0], vec![0.0]);
        let r = rotate_global(&z, PI / 2.0);
        assert!(r.re.data()[0].abs() < 1e-15);
        assert!((r.im.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rotate_by_zero_is_identity() {
        let z = c(vec![0.3, -1.5], vec![2.0, 0.25]);
        let r = rotate_global(&z, 0.0);
        for i in 0..2 {
            assert!((r.re.data()[i] - z.re.data()[i]).abs() < 1e-15);
            assert!((r.im.data()[i] - z.im.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn complex_elementwise_cases() {
        // (1+2i)(3+0i) = 3+6i
        let p = c(vec![1.0], vec![2.0]).mul(&c(vec![3.0], vec![0.0])).unwrap();
        assert_eq!((p.re.data()[0], p.im.data()[0]), (3.0, 6.0));
        // (1+1i)+(1-1i) = 2+0i
        let s = c(vec![1.0], vec![1.0]).add(&c(vec![1.0], vec![-1.0])).unwrap();
        assert_eq!((s.re.data()[0], s.im.data()[0]), (2.0, 0.0));
        // opposing phases cancel
        let s = c(vec![1.0], vec![0.0]).add(&c(vec![-1.0], vec![0.0])).unwrap();
        assert_eq!((s.re.data()[0], s.im.data()[0]), (0.0, 0.0));
    }

    #[test]
    fn real_elementwise_shape_errors() {
        let a = RealTensor::zeros(&[2, 2]);
        let b = RealTensor::zeros(&[4]);
        assert!(a.add(&b).is_err());
        assert!(a.mul(&b).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_polar(re in -10.0f64..10.0, im in -10.0f64..10.0) {
            let z = c(vec![re], vec![im]);
            prop_assume!(re.hypot(im) >= 1e-3);
            let (mag, phase) = polar_decompose(&z, POLAR_EPS);
            let back = from_polar(&mag, &phase).unwrap();
            let scale = re.hypot(im);
            prop_assert!((back.re.data()[0] - re).abs() / scale < 1e-9);
            prop_assert!((back.im.data()[0] - im).abs() / scale < 1e-9);
        }

        #[test]
        fn rotation_preserves_magnitude(re in -5.0f64..5.0, im in -5.0f64..5.0,
                                        alpha in -7.0f64..7.0) {
            let z = c(vec![re], vec![im]);
            let r = rotate_global(&z, alpha);
            let m0 = z.magnitude();
            let m1 = r.magnitude();
            prop_assert!((m0.data()[0] - m1.data()[0]).abs() <= 1e-12 * (1.0 + m0.data()[0]));
        }

        #[test]
        fn rotation_inverts(re in -5.0f64..5.0, im in -5.0f64..5.0, alpha in -7.0f64..7.0) {
            let z = c(vec![re], vec![im]);
            let back = rotate_global(&rotate_global(&z, alpha), -alpha);
            prop_assert!((back.re.data()[0] - re).abs() < 1e-12 * (1.0 + re.abs() + im.abs()));
            prop_assert!((back.im.data()[0] - im).abs() < 1e-12 * (1.0 + re.abs() + im.abs()));
        }

        #[test]
        fn destructive_interference(m in 0.0f64..10.0, phi in -7.0f64..7.0) {
            let mag = RealTensor::from_vec(&[1], vec![m]).unwrap();
            let a = from_polar(&mag, &RealTensor::from_vec(&[1], vec![phi]).unwrap()).unwrap();
            let b = from_polar(&mag, &RealTensor::from_vec(&[1], vec![phi + std::f64::consts::PI]).unwrap()).unwrap();
            let sum = a.add(&b).unwrap();
            prop_assert!(sum.magnitude().data()[0] < 1e-12 * m.max(1e-300));
        }
    }
}
