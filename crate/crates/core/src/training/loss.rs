use super::TrainError;

/// Stable per-element BCE on a logit: `max(x, 0) − x·y + ln(1 + e^{−|x|})`.
fn bce_term(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

fn sigmoid64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_targets(logits: &[f32], targets: &[f32]) -> Result<(), TrainError> {
    if logits.len() != targets.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if let Some(bad) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(TrainError::NonBinaryTarget(*bad));
    }
    Ok(())
}

/// Summed binary cross-entropy between `σ(logits)` and binary `targets`.
pub fn bce_loss(logits: &[f32], targets: &[f32]) -> Result<f64, TrainError> {
    check_targets(logits, targets)?;
    Ok(logits
        .iter()
        .zip(targets)
        .map(|(&x, &y)| bce_term(x as f64, y as f64))
        .sum())
}

/// Gradient of [`bce_loss`] with respect to each logit: `σ(x) − y`.
pub fn bce_grad(logits: &[f32], targets: &[f32]) -> Result<Vec<f32>, TrainError> {
    check_targets(logits, targets)?;
    Ok(logits
        .iter()
        .zip(targets)
        .map(|(&x, &y)| (sigmoid64(x as f64) - y as f64) as f32)
        .collect())
}

/// Zero-target BCE: `−Σ ln(1 − σ(x))`, driving a decoder to output nothing.
pub fn adversarial_zero_loss(logits: &[f32]) -> f64 {
    logits.iter().map(|&x| bce_term(x as f64, 0.0)).sum()
}

/// Gradient of [`adversarial_zero_loss`]: `σ(x)`.
pub fn adversarial_zero_grad(logits: &[f32]) -> Vec<f32> {
    logits.iter().map(|&x| sigmoid64(x as f64) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_values() {
        let l = bce_loss(&[0.0; 4], &[1.0; 4]).unwrap();
        assert!((l - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 2.7726).abs() < 1e-4);
        assert!(bce_loss(&[50.0, -50.0], &[1.0, 0.0]).unwrap() < 1e-20);
        assert!(adversarial_zero_loss(&[-50.0; 3]) < 1e-20);
        assert!((adversarial_zero_loss(&[0.0; 4]) - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            bce_loss(&[0.0], &[1.0, 0.0]),
            Err(TrainError::ShapeMismatch(_))
        ));
        assert!(matches!(
            bce_loss(&[0.0], &[0.5]),
            Err(TrainError::NonBinaryTarget(_))
        ));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let l = bce_loss(&[1e4, -1e4], &[0.0, 1.0]).unwrap();
        assert!((l - 2e4).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn zero_loss_is_bce_against_zeros(xs in proptest::collection::vec(-30f32..30.0, 1..64)) {
            let zeros = vec![0.0; xs.len()];
            prop_assert_eq!(adversarial_zero_loss(&xs), bce_loss(&xs, &zeros).unwrap());
            prop_assert_eq!(adversarial_zero_grad(&xs), bce_grad(&xs, &zeros).unwrap());
        }

        #[test]
        fn loss_is_nonnegative(xs in proptest::collection::vec(-30f32..30.0, 1..32), bits in any::<u32>()) {
            let ys: Vec<f32> = (0..xs.len()).map(|i| ((bits >> (i % 32)) & 1) as f32).collect();
            prop_assert!(bce_loss(&xs, &ys).unwrap() >= 0.0);
        }
    }
}
