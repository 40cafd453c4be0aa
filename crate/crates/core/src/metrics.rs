//! Reconstruction metrics in decibels.

use crate::error::{Error, Result};

/// Ceiling reported for (near) exact reconstructions.
pub const DB_CAP: f64 = 150.0;

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|a| a * a).sum::<f64>().sqrt()
}

fn check_len(x: &[f64], xhat: &[f64]) -> Result<()> {
    if x.len() != xhat.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: xhat.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    Ok(())
}

fn residual(x: &[f64], xhat: &[f64]) -> f64 {
    norm(x.iter().zip(xhat).map(|(a, b)| a - b))
}

/// `20 log10(||x|| / ||x - xhat||)`, capped at [`DB_CAP`].
pub fn sdr(x: &[f64], xhat: &[f64]) -> Result<f64> {
    check_len(x, xhat)?;
    let nx = norm(x.iter().copied());
    if nx == 0.0 {
        return Err(Error::InvalidInput("SDR reference signal is zero".into()));
    }
    let r = residual(x, xhat);
    if r <= 1e-15 * nx {
        return Ok(DB_CAP);
    }
    Ok((20.0 * (nx / r).log10()).min(DB_CAP))
}

/// `20 log10(1 / ||x - xhat||)` without per-sample normalisation.
pub fn psnr(x: &[f64], xhat: &[f64]) -> Result<f64> {
    check_len(x, xhat)?;
    let r = residual(x, xhat);
    if r <= 1e-15 {
        return Ok(DB_CAP);
    }
    Ok((-20.0 * r.log10()).min(DB_CAP))
}

/// Conventional PSNR for a unit peak: `10 log10(1 / MSE)`.
pub fn psnr_per_pixel(x: &[f64], xhat: &[f64]) -> Result<f64> {
    check_len(x, xhat)?;
    let mse = residual(x, xhat).powi(2) / x.len() as f64;
    if mse <= 1e-30 {
        return Ok(DB_CAP);
    }
    Ok((-10.0 * mse.log10()).min(DB_CAP))
}

/// `max - min`.
pub fn dynamic_range(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(hi - lo)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no values to summarise".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sdr_examples() {
        let x = [3.0, 4.0];
        assert_relative_eq!(sdr(&x, &[0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(sdr(&x, &[3.0, 3.5]).unwrap(), 20.0, epsilon = 1e-12);
        assert_eq!(sdr(&x, &x).unwrap(), DB_CAP);
        assert!(sdr(&[0.0, 0.0], &x).is_err());
        assert!(sdr(&x, &[1.0]).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert_relative_eq!(psnr(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(psnr(&[0.01, 0.0], &[0.0, 0.0]).unwrap(), 40.0, epsilon = 1e-12);
        let a = psnr(&[0.05, 0.0], &[0.0, 0.0]).unwrap();
        let b = psnr(&[0.5, 0.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(a - b, 20.0, epsilon = 1e-12);
        assert_eq!(psnr(&[0.3], &[0.3]).unwrap(), DB_CAP);
        assert_relative_eq!(psnr_per_pixel(&[0.1; 4], &[0.0; 4]).unwrap(), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn dynamic_range_examples() {
        assert_eq!(dynamic_range(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(dynamic_range(&[0.0, 3.0]).unwrap(), 3.0);
        assert!(dynamic_range(&[]).is_err());
    }

    #[test]
    fn identity_baseline_below_exact() {
        let x = [0.2, 1.7, -2.5, 0.9];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.clamp(-1.0, 1.0)).collect();
        assert!(sdr(&x, &y).unwrap() <= sdr(&x, &x).unwrap());
    }

    proptest! {
        #[test]
        fn sdr_scale_invariant_psnr_not(
            x in prop::collection::vec(-5.0f64..5.0, 8),
            e in prop::collection::vec(-0.5f64..0.5, 8),
            g in 0.1f64..10.0,
        ) {
            let xhat: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + b).collect();
            prop_assume!(norm(x.iter().copied()) > 1e-3 && norm(e.iter().copied()) > 1e-3);
            let xs: Vec<f64> = x.iter().map(|v| g * v).collect();
            let hs: Vec<f64> = xhat.iter().map(|v| g * v).collect();
            let a = sdr(&x, &xhat).unwrap();
            let b = sdr(&xs, &hs).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            let pa = psnr(&x, &xhat).unwrap();
            let pb = psnr(&xs, &hs).unwrap();
            prop_assert!(((pa - pb) - 20.0 * g.log10()).abs() <= 1e-9);
        }

        #[test]
        fn dynamic_range_homogeneous(x in prop::collection::vec(-5.0f64..5.0, 1..20), g in 0.01f64..100.0) {
            let xs: Vec<f64> = x.iter().map(|v| g * v).collect();
            let a = dynamic_range(&x).unwrap();
            prop_assert!((dynamic_range(&xs).unwrap() - g * a).abs() <= 1e-12 * (1.0 + g * a));
        }
    }
}
