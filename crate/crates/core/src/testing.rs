//! Finite-difference oracles shared by unit, integration and acceptance tests.
//!
//! These helpers only ever evaluate the function under test; they never
//! call into an analytic gradient path.

/// Central differences of a scalar function at `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian of a vector function: `out[j][i] = d f_j / d x_i`.
pub fn central_jacobian(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        cols.push(up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect::<Vec<_>>());
    }
    let m = cols.first().map_or(0, |c| c.len());
    (0..m).map(|j| cols.iter().map(|c| c[j]).collect()).collect()
}

/// Largest element-wise relative error `|a - n| / max(|a|, |n|, 1e-6)`.
///
/// The floor keeps entries that are analytically zero from dominating on
/// finite-difference round-off.
pub fn max_rel_err<T: crate::Scalar>(analytic: &[T], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, &n)| {
            let a = a.as_f64();
            (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}
