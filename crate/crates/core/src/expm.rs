//! Dense matrix exponential for small matrices (Krylov projections and the
//! few-level amplitude models).

use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64 as C64;

/// Coefficients of the diagonal [6/6] Padé approximant of `exp`.
const PADE6: [f64; 7] = [
    1.0,
    1.0 / 2.0,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

fn inf_norm(a: &Mat<C64>) -> f64 {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(A)` by scaling and squaring with a [6/6] Padé approximant.
///
/// After scaling `‖A‖∞ ≤ 1/2`, where the approximant's truncation error is
/// below double precision.
pub fn expm(a: &Mat<C64>) -> Mat<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let norm = inf_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = C64::new(0.5f64.powi(squarings), 0.0);
    let x = Mat::<C64>::from_fn(n, n, |i, j| a[(i, j)] * scale);

    let id = Mat::<C64>::identity(n, n);
    let mut power = id.clone();
    let mut num = Mat::<C64>::zeros(n, n);
    let mut den = Mat::<C64>::zeros(n, n);
    for (k, c) in PADE6.iter().enumerate() {
        if k > 0 {
            power = &power * &x;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        num += Mat::<C64>::from_fn(n, n, |i, j| power[(i, j)] * *c);
        den += Mat::<C64>::from_fn(n, n, |i, j| power[(i, j)] * (*c * sign));
    }
    let mut e = den.partial_piv_lu().solve(&num);
    for _ in 0..squarings {
        e = &e * &e;
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_exponential() {
        let a = Mat::<C64>::from_fn(3, 3, |i, j| {
            if i == j {
                C64::new(-(i as f64) * 3.0, i as f64 * 10.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let e = expm(&a);
        for i in 0..3 {
            let expect = a[(i, i)].exp();
            assert!((e[(i, i)] - expect).norm() < 1e-13 * expect.norm().max(1.0));
        }
    }

    #[test]
    fn rotation_generator() {
        // exp([[0, -t], [t, 0]]) = [[cos t, -sin t], [sin t, cos t]]
        let t = 7.3;
        let a = Mat::<C64>::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => C64::new(-t, 0.0),
            (1, 0) => C64::new(t, 0.0),
            _ => C64::new(0.0, 0.0),
        });
        let e = expm(&a);
        assert!((e[(0, 0)].re - t.cos()).abs() < 1e-13);
        assert!((e[(1, 0)].re - t.sin()).abs() < 1e-13);
        assert!((e[(0, 1)].re + t.sin()).abs() < 1e-13);
    }

    #[test]
    fn nilpotent_is_exact_polynomial() {
        let a = Mat::<C64>::from_fn(3, 3, |i, j| {
            if j == i + 1 {
                C64::new(2.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let e = expm(&a);
        assert!((e[(0, 2)].re - 2.0).abs() < 1e-14);
        assert!((e[(0, 1)].re - 2.0).abs() < 1e-14);
    }
}
