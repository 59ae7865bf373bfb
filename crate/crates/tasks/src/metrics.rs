//! Losses and evaluation metrics.

use misac_chansim::{sum_rate, ScenarioConfig};
use misac_core::{Scalar, Tape, Var};
use num_complex::Complex64;

use crate::error::{Result, TaskError};

/// Floor reported for a zero-error NMSE.
pub const NMSE_FLOOR_DB: f64 = -200.0;

/// Mean `-log softmax(logits)[label]` over rows, in log-space.
pub fn cross_entropy_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    Ok(tape.cross_entropy(logits, labels)?)
}

/// Mean of squared differences over all elements.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &[T]) -> Result<Var> {
    Ok(tape.mse(pred, target)?)
}

/// `10 log10(Σ‖pred - target‖² / Σ‖target‖²)`, floored at -200 dB.
pub fn nmse_db(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(TaskError::Domain(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let energy: f64 = targets.iter().map(|t| t * t).sum();
    if !(energy > 0.0) {
        return Err(TaskError::Domain("NMSE of zero-energy targets is undefined".into()));
    }
    let err: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    if err == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (err / energy).log10()).max(NMSE_FLOOR_DB))
}

/// Position of `label` when row entries are ranked by value, ties toward the
/// lower index.
fn rank(row: &[f64], label: usize) -> usize {
    let v = row[label];
    row.iter().enumerate().filter(|&(j, &x)| x > v || (x == v && j < label)).count()
}

/// Fraction of rows whose label is among the `k` largest logits.
pub fn topk_accuracy(logits: &[f64], classes: usize, labels: &[usize], k: usize) -> Result<f64> {
    if k == 0 || classes == 0 {
        return Err(TaskError::Domain(format!("top-k needs k >= 1 and classes >= 1, got k={k}, classes={classes}")));
    }
    if logits.len() != classes * labels.len() {
        return Err(TaskError::Domain(format!("{} logits for {} rows of {classes}", logits.len(), labels.len())));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(TaskError::Domain(format!("label {l} out of range for {classes} classes")));
    }
    let hits = logits.chunks(classes).zip(labels).filter(|(row, &l)| rank(row, l) < k).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Row-wise argmax, ties toward the lower index.
pub fn argmax_rows(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| row.iter().enumerate().fold(0, |best, (j, &x)| if x > row[best] { j } else { best }))
        .collect()
}

/// Mean Euclidean distance between 3-D points stored row-wise.
pub fn mean_euclidean_error(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || !preds.len().is_multiple_of(3) || preds.is_empty() {
        return Err(TaskError::Domain(format!("expected matching 3-D rows, got {} and {}", preds.len(), targets.len())));
    }
    let n = preds.len() / 3;
    let total: f64 = preds.chunks(3).zip(targets.chunks(3)).map(|(p, t)| distance3(p, t)).sum();
    Ok(total / n as f64)
}

/// Mean squared Euclidean distance between 3-D points stored row-wise.
pub fn mean_squared_distance(preds: &[f64], targets: &[f64]) -> f64 {
    let n = (preds.len() / 3).max(1);
    preds.chunks(3).zip(targets.chunks(3)).map(|(p, t)| distance3(p, t).powi(2)).sum::<f64>() / n as f64
}

fn distance3(p: &[f64], t: &[f64]) -> f64 {
    ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)).sqrt()
}

/// Single-link rate with beam `chosen` over the rate with beam `best`, both
/// transmitted at full power.
pub fn sum_rate_ratio(h: &[Complex64], codebook: &[Vec<Complex64>], chosen: usize, best: usize, scenario: &ScenarioConfig) -> Result<f64> {
    let p = scenario.max_power_w.sqrt();
    let rate = |b: usize| -> Result<f64> {
        let v: Vec<Complex64> = codebook[b].iter().map(|x| x * p).collect();
        Ok(sum_rate(&[h.to_vec()], &[v], scenario.noise_power_w, scenario.max_power_w)?)
    };
    let best_rate = rate(best)?;
    if !(best_rate > 0.0) {
        return Err(TaskError::Domain("reference beam achieves zero rate".into()));
    }
    Ok(rate(chosen)? / best_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(&[1, 32], vec![0.0; 32]).unwrap();
        let loss = cross_entropy_loss(&mut tape, l, &[7]).unwrap();
        assert!((tape.scalar(loss) - 32f64.ln()).abs() < 1e-15);
        assert!((tape.scalar(loss) - 3.4657).abs() < 1e-4);
    }

    #[test]
    fn confident_logits_give_zero_loss() {
        let mut tape = Tape::<f64>::new();
        let mut v = vec![0.0; 8];
        v[2] = 1000.0;
        let l = tape.constant(&[1, 8], v).unwrap();
        let loss = cross_entropy_loss(&mut tape, l, &[2]).unwrap();
        assert!(tape.scalar(loss).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_is_an_index_error() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(&[1, 4], vec![0.0; 4]).unwrap();
        assert!(matches!(cross_entropy_loss(&mut tape, l, &[4]), Err(TaskError::Core(misac_core::CoreError::Index(_)))));
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let zero = mse_loss(&mut tape, p, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let one = mse_loss(&mut tape, p, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tape.scalar(zero), 0.0);
        assert_eq!(tape.scalar(one), 1.0);
        assert!(mse_loss(&mut tape, p, &[0.0; 3]).is_err());
    }

    #[test]
    fn nmse_examples() {
        let t = [1.0, -2.0, 3.0];
        assert_eq!(nmse_db(&t, &t).unwrap(), NMSE_FLOOR_DB);
        assert!(nmse_db(&[0.0; 3], &t).unwrap().abs() < 1e-12);
        let p: Vec<f64> = t.iter().map(|x| x * 1.01).collect();
        assert!((nmse_db(&p, &t).unwrap() + 40.0).abs() < 1e-9);
        assert!(matches!(nmse_db(&[1.0], &[0.0]), Err(TaskError::Domain(_))));
    }

    #[test]
    fn topk_examples() {
        let logits = [0.1, 0.5, 0.2, 0.9, 0.3, 0.0];
        assert_eq!(topk_accuracy(&logits, 3, &[1, 0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&logits, 3, &[0, 1], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&logits, 3, &[0, 2], 3).unwrap(), 1.0);
        // Tie: the lower index wins the top slot.
        assert_eq!(topk_accuracy(&[1.0, 1.0], 2, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&[1.0, 1.0], 2, &[1], 1).unwrap(), 0.0);
        assert_eq!(argmax_rows(&[1.0, 1.0, 0.5, 2.0], 2), vec![0, 1]);
    }

    #[test]
    fn euclidean_error_example() {
        let e = mean_euclidean_error(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[3.0, 4.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(e, 2.5);
        assert_eq!(mean_squared_distance(&[0.0, 0.0, 0.0], &[3.0, 4.0, 0.0]), 25.0);
    }

    proptest! {
        #[test]
        fn topk_is_monotone_in_k(logits in prop::collection::vec(-3.0f64..3.0, 40), labels in prop::collection::vec(0usize..8, 5)) {
            let mut last = 0.0;
            for k in 1..=8 {
                let a = topk_accuracy(&logits, 8, &labels, k).unwrap();
                prop_assert!(a >= last);
                last = a;
            }
            prop_assert_eq!(last, 1.0);
        }

        #[test]
        fn cross_entropy_is_nonnegative(logits in prop::collection::vec(-50.0f64..50.0, 6), label in 0usize..6) {
            let mut tape = Tape::<f64>::new();
            let l = tape.constant(&[1, 6], logits).unwrap();
            let loss = cross_entropy_loss(&mut tape, l, &[label]).unwrap();
            prop_assert!(tape.scalar(loss) >= 0.0);
        }
    }
}
