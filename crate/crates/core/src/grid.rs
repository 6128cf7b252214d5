//! Time and control grids.

use crate::error::{Result, SpecError};

/// `n` log-spaced points from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && max.is_finite()) {
        return Err(SpecError::Argument(format!("log grid needs 0 < min <= max, got [{min}, {max}]")));
    }
    match n {
        0 => Err(SpecError::Argument("grid must have at least one point".into())),
        1 => Ok(vec![min]),
        _ => {
            let (lo, hi) = (min.ln(), max.ln());
            let step = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| (lo + step * i as f64).exp()).collect();
            v[0] = min;
            v[n - 1] = max;
            Ok(v)
        }
    }
}

/// Checks that a time grid is nonempty, positive and strictly increasing.
pub fn validate_time_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(SpecError::Argument("time grid is empty".into()));
    }
    if times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(SpecError::Argument("time grid must be positive and finite".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SpecError::Argument("time grid must be strictly increasing".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let g = log_grid(1e3, 1e6, 40).unwrap();
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], 1e3);
        assert_eq!(g[39], 1e6);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(log_grid(5.0, 9.0, 1).unwrap(), vec![5.0]);
        assert!(log_grid(0.0, 1.0, 3).is_err());
        assert!(log_grid(1.0, 2.0, 0).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(validate_time_grid(&[]).is_err());
        assert!(validate_time_grid(&[1.0, 1.0]).is_err());
        assert!(validate_time_grid(&[0.0, 1.0]).is_err());
        assert!(validate_time_grid(&[0.5]).is_ok());
    }
}
