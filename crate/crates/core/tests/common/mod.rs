#![allow(dead_code)]

pub mod gradcheck;

use cdtl::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_H: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(g: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| g.random_range(-1.0..1.0)).collect()
}

pub fn random_tensor(g: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(g, n)).unwrap()
}

/// `|a − n| / max(|a|, |n|, 1e-3)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Central differences of `f` around `x` with step [`FD_H`], compared with
/// `analytic` element-wise.
pub fn fd_check(what: &str, x: &Tensor<f64>, analytic: &[f64], f: impl Fn(&Tensor<f64>) -> f64) {
    fd_check_where(what, x, analytic, f, |_| true);
}

/// As [`fd_check`], skipping elements whose `±h` perturbation fails `valid`
/// (a kink lies inside the difference interval). Returns the skip count.
pub fn fd_check_where(
    what: &str,
    x: &Tensor<f64>,
    analytic: &[f64],
    f: impl Fn(&Tensor<f64>) -> f64,
    valid: impl Fn(&Tensor<f64>) -> bool,
) -> usize {
    assert_eq!(analytic.len(), x.len(), "{what}: gradient length");
    let mut skipped = 0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_H;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_H;
        if !(valid(&plus) && valid(&minus)) {
            skipped += 1;
            continue;
        }
        let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_H);
        let err = relative_error(a, numeric);
        assert!(
            err < FD_TOL,
            "{what}[{i}]: analytic {a} vs numeric {numeric} (relative error {err:e})",
        );
    }
    skipped
}
