/// Compares a reverse-mode gradient against central differences.
///
/// `loss` maps a parameter vector to `(value, gradient)`; only the value is
/// used at the perturbed points. Returns the largest coordinate-wise
/// `|g_ad - g_fd| / max(GRADIENT_FLOOR, |g_ad| + |g_fd|)`.
///
/// ReLU networks are only piecewise smooth: if `params` lies within `h` of
/// a kink, central differences straddle it and disagree with the one-sided
/// analytic gradient.
/// Gradients smaller than this are treated as zero when forming relative
/// errors. Central differences of an O(1) loss carry rounding noise around
/// `1e-16 / h`, so an analytically zero coordinate reads as `~1e-11`.
pub const GRADIENT_FLOOR: f64 = 1e-6;

pub fn gradient_check<F>(mut loss: F, params: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(params);
    assert_eq!(
        analytic.len(),
        params.len(),
        "gradient length must match the parameter count"
    );
    let mut probe = params.to_vec();
    let mut worst = 0.0_f64;
    for (i, &g_ad) in analytic.iter().enumerate() {
        let original = probe[i];
        probe[i] = original + h;
        let (plus, _) = loss(&probe);
        probe[i] = original - h;
        let (minus, _) = loss(&probe);
        probe[i] = original;
        let g_fd = (plus - minus) / (2.0 * h);
        let denom = (g_ad.abs() + g_fd.abs()).max(GRADIENT_FLOOR);
        worst = worst.max((g_ad - g_fd).abs() / denom);
    }
    worst
}
