use crate::error::{Error, Result};

/// Poly decay: `base_lr * (1 - iter / max_iter)^power`, defined for `iter <= max_iter`.
pub fn poly_lr(iter: usize, base_lr: f64, max_iter: usize, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::Argument("max_iter must be at least 1".into()));
    }
    if iter > max_iter {
        return Err(Error::Argument(format!("iteration {iter} is past max_iter {max_iter}")));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(poly_lr(0, 2.5e-5, 110_000, 0.9).unwrap(), 2.5e-5);
        assert_eq!(poly_lr(110_000, 2.5e-5, 110_000, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn past_the_end_is_an_error() {
        assert!(matches!(poly_lr(11, 1.0, 10, 0.9), Err(Error::Argument(_))));
        assert!(poly_lr(0, 1.0, 0, 0.9).is_err());
    }

    #[test]
    fn strictly_decreasing() {
        let lrs: Vec<f64> = (0..=500).map(|i| poly_lr(i, 0.01, 500, 0.9).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }
}
