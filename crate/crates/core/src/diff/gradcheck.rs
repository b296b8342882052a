//! Central finite-difference checks for analytic gradients.

use super::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` at `x` along coordinate `index`.
pub fn central_difference(f: &impl Fn(&Tensor) -> f64, x: &Tensor, index: usize, step: f64) -> f64 {
    let mut probe = x.clone();
    let base = x.data()[index];
    probe.data_mut()[index] = base + step;
    let up = f(&probe);
    probe.data_mut()[index] = base - step;
    let down = f(&probe);
    (up - down) / (2.0 * step)
}

/// Largest relative error between `analytic` and central differences over all coordinates of `x`.
pub fn max_relative_error(
    f: &impl Fn(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    step: f64,
    floor: f64,
) -> f64 {
    (0..x.len())
        .map(|i| relative_error(analytic.data()[i], central_difference(f, x, i, step), floor))
        .fold(0.0, f64::max)
}
