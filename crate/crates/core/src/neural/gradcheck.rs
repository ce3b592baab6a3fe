//! Central finite-difference gradient checks in 64-bit.

use rand::Rng;

use crate::neural::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor so vanishing gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;
const SAMPLES: usize = 24;

pub fn random_tensor<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor { dims: dims.to_vec(), data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn numeric_partial(x: &Tensor<f64>, index: usize, f: &impl Fn(&Tensor<f64>) -> f64) -> f64 {
    let mut xp = x.clone();
    xp.data[index] += FD_STEP;
    let fp = f(&xp);
    xp.data[index] = x.data[index] - FD_STEP;
    let fm = f(&xp);
    (fp - fm) / (2.0 * FD_STEP)
}

/// Largest relative error over randomly sampled coordinates (all of them for small tensors).
pub fn max_relative_error<R: Rng + ?Sized>(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> f64,
    rng: &mut R,
) -> f64 {
    assert_eq!(x.dims, analytic.dims, "gradient shape");
    let indices: Vec<usize> = if x.len() <= SAMPLES {
        (0..x.len()).collect()
    } else {
        (0..SAMPLES).map(|_| rng.random_range(0..x.len())).collect()
    };
    indices
        .into_iter()
        .map(|i| relative_error(analytic.data[i], numeric_partial(x, i, &f)))
        .fold(0.0, f64::max)
}

/// Panics with `label` if the analytic gradient disagrees with finite differences.
pub fn check_gradient<R: Rng + ?Sized>(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> f64,
    rng: &mut R,
    label: &str,
) {
    let err = max_relative_error(x, analytic, f, rng);
    assert!(err < REL_TOL, "{label}: relative error {err:e}");
}
