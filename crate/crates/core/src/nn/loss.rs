use crate::error::{Error, Result};

/// Mean of squared differences over all entries.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    Ok(mse_unchecked(x, y))
}

/// `d mse / d x`.
pub fn mse_grad(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check(x, y)?;
    let s = 2.0 / x.len() as f64;
    Ok(x.iter().zip(y).map(|(a, b)| s * (a - b)).collect())
}

pub fn mse_with_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    Ok((mse(x, y)?, mse_grad(x, y)?))
}

#[inline]
pub(crate) fn mse_unchecked(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// Adds `weight * d mse / d x` into `out` and returns `mse`.
#[inline]
pub(crate) fn mse_acc_grad(x: &[f64], y: &[f64], weight: f64, out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let s = 2.0 * weight / n;
    let mut total = 0.0;
    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
        let d = a - b;
        total += d * d;
        *o += s * d;
    }
    total / n
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::Input("mse of empty arrays".into()));
    }
    Ok(())
}
