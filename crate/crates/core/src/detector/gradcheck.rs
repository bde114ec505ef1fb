//! Central-difference checks for the analytic loss gradients.

use ndarray::Array3;

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn numeric_gradient<F>(f: F, x: &Array3<f64>, h: f64) -> Array3<f64>
where
    F: Fn(&Array3<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Array3::zeros(x.raw_dim());
    for (idx, g) in grad.indexed_iter_mut() {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        *g = (up - down) / (2.0 * h);
    }
    grad
}

/// Central-difference partial derivative of `f` along one entry of `x`.
pub fn numeric_partial<F>(f: F, x: &Array3<f64>, idx: (usize, usize, usize), h: f64) -> f64
where
    F: Fn(&Array3<f64>) -> f64,
{
    let mut probe = x.clone();
    probe[idx] = x[idx] + h;
    let up = f(&probe);
    probe[idx] = x[idx] - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

/// Largest relative error between `analytic` and the central-difference
/// gradient of `f`.
pub fn max_relative_error<F>(f: F, x: &Array3<f64>, analytic: &Array3<f64>, h: f64) -> f64
where
    F: Fn(&Array3<f64>) -> f64,
{
    let numeric = numeric_gradient(f, x, h);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| relative_error(a, n, 1e-5))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{
        direction_ce, direction_ce_grad, focal_loss, focal_loss_grad, make_targets, masked_l1, masked_l1_grad,
    };
    use crate::segment::{encode_general, SemLs};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize, usize), lo: f64, hi: f64, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(shape, |_| rng.random_range(lo..hi))
    }

    #[test]
    fn focal_gradient_matches() {
        let segs = [
            SemLs::from_coords(4.0, 4.0, 20.0, 12.0, 0).unwrap(),
            SemLs::from_coords(26.0, 6.0, 10.0, 28.0, 1).unwrap(),
        ];
        let anns: Vec<_> = segs.iter().map(encode_general).collect();
        let t = make_targets(&anns, 2, 32, 32, 4).unwrap();
        let pred = random((2, 8, 8), 0.05, 0.95, 7);
        let (_, grad) = focal_loss_grad(&pred, &t).unwrap();
        let err = max_relative_error(|p| focal_loss(p, &t).unwrap(), &pred, &grad, 1e-6);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn direction_ce_gradient_matches() {
        let logits = random((2, 6, 6), -3.0, 3.0, 11);
        let mut mask = Array2::zeros((6, 6));
        let mut target = Array3::zeros((1, 6, 6));
        for (i, (y, x)) in [(0, 0), (1, 4), (3, 3), (5, 2)].into_iter().enumerate() {
            mask[[y, x]] = 1.0;
            target[[0, y, x]] = (i % 2) as f64;
        }
        let (_, grad) = direction_ce_grad(&logits, &target, &mask, 4).unwrap();
        let err = max_relative_error(|l| direction_ce(l, &target, &mask, 4).unwrap(), &logits, &grad, 1e-6);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn l1_gradient_matches_away_from_kinks() {
        let target = random((2, 5, 5), 0.0, 1.0, 3);
        // residuals stay within [0.1, 0.5], away from the kink
        let pred = target.mapv(|t| t + 0.3) + random((2, 5, 5), -0.2, 0.2, 4);
        let mut mask = Array2::zeros((5, 5));
        mask[[1, 1]] = 1.0;
        mask[[2, 4]] = 1.0;
        mask[[4, 0]] = 1.0;
        let grad = masked_l1_grad(&pred, &target, &mask, 3).unwrap();
        let err = max_relative_error(|p| masked_l1(p, &target, &mask, 3).unwrap(), &pred, &grad, 1e-6);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn partial_matches_full_gradient() {
        let x = random((2, 3, 4), -1.0, 1.0, 5);
        let f = |a: &Array3<f64>| a.iter().map(|v| v.powi(3)).sum::<f64>();
        let full = numeric_gradient(f, &x, 1e-5);
        assert_eq!(numeric_partial(f, &x, (1, 2, 3), 1e-5), full[[1, 2, 3]]);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-5), 0.0);
        assert!((relative_error(1e-7, 0.0, 1e-5) - 1e-2).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0, 1e-5) - 0.5).abs() < 1e-15);
    }
}
