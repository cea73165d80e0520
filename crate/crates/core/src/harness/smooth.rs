use crate::error::{Error, Result};

/// Trailing moving average: entry `t` is the mean of the last
/// `min(bandwidth, t + 1)` inputs up to and including `t`.
pub fn smooth(values: &[f64], bandwidth: usize) -> Result<Vec<f64>> {
    if bandwidth == 0 {
        return Err(Error::param("smoothing bandwidth must be at least 1"));
    }
    Ok((0..values.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(bandwidth);
            let window = &values[start..=t];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect())
}
