//! Anisotropic Matérn-5/2 kernel with unit variance.

const SQRT5: f64 = 2.236_067_977_499_79;

#[inline]
pub fn scaled_distance(a: &[f64], b: &[f64], inv_l2: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_l2)
        .map(|((x, y), w)| (x - y) * (x - y) * w)
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub fn matern52_r(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[inline]
pub fn matern52(a: &[f64], b: &[f64], inv_l2: &[f64]) -> f64 {
    matern52_r(scaled_distance(a, b, inv_l2))
}

/// `dk/dlog(l_m) / (dx_m^2 / l_m^2)`, the radial part shared by all dimensions.
#[inline]
pub fn matern52_dlog_factor(r: f64) -> f64 {
    let s = SQRT5 * r;
    5.0 / 3.0 * (1.0 + s) * (-s).exp()
}

pub fn inverse_squares(lengthscales: &[f64]) -> Vec<f64> {
    lengthscales.iter().map(|l| 1.0 / (l * l)).collect()
}

/// Symmetric Gram matrix in column-major order.
pub fn gram(points: &[Vec<f64>], inv_l2: &[f64]) -> Vec<f64> {
    let n = points.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for l in i + 1..n {
            let v = matern52(&points[i], &points[l], inv_l2);
            k[l * n + i] = v;
            k[i * n + l] = v;
        }
    }
    k
}
