use crate::error::{invalid, Result};
use crate::numeric::{sigmoid, softmax_rows, Tensor};

/// Hazard clamp used inside the survival likelihood.
pub const HAZARD_CLAMP: f64 = 1e-7;

/// Cross-entropy of `logits` against `class`.
pub fn loss_classification(logits: &[f64], class: usize) -> Result<f64> {
    Ok(classification_grad(logits, class)?.0)
}

/// Cross-entropy and its gradient with respect to the logits.
pub fn classification_grad(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    if class >= logits.len() {
        return invalid(format!("class {class} with {} logits", logits.len()));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let probs = softmax_rows(&Tensor::row(logits.to_vec())).into_data();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(i, p)| p - (i == class) as u8 as f64)
        .collect();
    Ok((lse - logits[class], grad))
}

/// Squared error of the difference output against `target - rho`.
pub fn loss_regression(pred_diff: f64, target: f64, rho: f64) -> f64 {
    (pred_diff - (target - rho)).powi(2)
}

pub fn regression_grad(pred_diff: f64, target: f64, rho: f64) -> (f64, f64) {
    let e = pred_diff - (target - rho);
    (e * e, 2.0 * e)
}

fn check_survival(k: usize, y: usize, beta: f64) -> Result<()> {
    if y == 0 || y > k {
        return invalid(format!("interval {y} outside [1, {k}]"));
    }
    if !(0.0..=1.0).contains(&beta) {
        return invalid(format!("beta {beta} outside [0, 1]"));
    }
    Ok(())
}

/// Weighted discrete-time survival likelihood.
///
/// `L = -c log S_y - (1-c) [log S_{y-1} + log h_y]`,
/// `L_unc = -(1-c) [log S_{y-1} + log h_y]`, total `(1-beta) L + beta L_unc`.
/// `y` is 1-based, `S_0 = 1`, hazards are clamped to `[1e-7, 1 - 1e-7]`.
pub fn loss_survival(hazards: &[f64], y: usize, censored: bool, beta: f64) -> Result<f64> {
    check_survival(hazards.len(), y, beta)?;
    let h: Vec<f64> = hazards
        .iter()
        .map(|v| v.clamp(HAZARD_CLAMP, 1.0 - HAZARD_CLAMP))
        .collect();
    let log_s = |k: usize| h[..k].iter().map(|v| (1.0 - v).ln()).sum::<f64>();
    let c = censored as u8 as f64;
    let uncensored = -(1.0 - c) * (log_s(y - 1) + h[y - 1].ln());
    let full = -c * log_s(y) + uncensored;
    Ok((1.0 - beta) * full + beta * uncensored)
}

/// Survival loss and its gradient with respect to the hazard logits.
pub fn survival_grad(logits: &[f64], y: usize, censored: bool, beta: f64) -> Result<(f64, Vec<f64>)> {
    let hazards: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let loss = loss_survival(&hazards, y, censored, beta)?;
    let c = censored as u8 as f64;
    let grad = hazards
        .iter()
        .enumerate()
        .map(|(j, &h)| {
            let h = h.clamp(HAZARD_CLAMP, 1.0 - HAZARD_CLAMP);
            let k = j + 1;
            let mut g = 0.0;
            if k <= y {
                g += (1.0 - beta) * c * h;
            }
            if k < y {
                g += (1.0 - c) * h;
            }
            if k == y {
                g -= (1.0 - c) * (1.0 - h);
            }
            g
        })
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn uniform_logits_give_log_c() {
        assert!((loss_classification(&[0.0, 0.0], 0).unwrap() - LN2).abs() < 1e-15);
        assert!((loss_classification(&[3.0; 5], 4).unwrap() - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn confident_correct_is_near_zero() {
        assert!(loss_classification(&[800.0, 0.0], 0).unwrap() < 1e-300);
        assert!(loss_classification(&[0.0], 1).is_err());
    }

    #[test]
    fn regression_cases() {
        assert_eq!(loss_regression(2.0, 44.0, 42.0), 0.0);
        assert_eq!(loss_regression(4.0, 44.0, 42.0), 4.0);
        let preds = [0.5, 1.0, -2.0];
        let targets = [1.0, 1.0, 1.0];
        let mean = preds
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| loss_regression(p, t, 0.0))
            .sum::<f64>()
            / 3.0;
        assert!((mean - (0.25 + 0.0 + 9.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn survival_hand_cases() {
        let h = [0.5; 4];
        assert!((loss_survival(&h, 1, true, 0.0).unwrap() - LN2).abs() < 1e-12);
        assert!((loss_survival(&h, 1, false, 0.0).unwrap() - LN2).abs() < 1e-12);
        assert_eq!(loss_survival(&h, 3, true, 1.0).unwrap(), 0.0);
        assert!(loss_survival(&h, 0, true, 0.0).is_err());
        assert!(loss_survival(&h, 5, true, 0.0).is_err());
        assert!(loss_survival(&h, 2, true, 1.5).is_err());
    }

    #[test]
    fn clamped_hazards_stay_finite() {
        let l = loss_survival(&[1.0, 0.0, 0.5], 2, false, 0.0).unwrap();
        assert!(l.is_finite());
    }

    proptest! {
        #[test]
        fn cross_entropy_matches_direct_formula(
            logits in proptest::collection::vec(-20.0f64..20.0, 2..6),
            pick in 0usize..6,
        ) {
            let class = pick % logits.len();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let direct = -(logits[class].exp() / z).ln();
            let got = loss_classification(&logits, class).unwrap();
            prop_assert!((got - direct).abs() < 1e-9 * direct.abs().max(1.0));
        }

        #[test]
        fn uncensored_unweighted_is_neg_log_s_times_h(
            h in proptest::collection::vec(0.01f64..0.99, 2..6),
            pick in 1usize..6,
        ) {
            let y = 1 + (pick - 1) % h.len();
            let s_prev: f64 = h[..y - 1].iter().map(|v| 1.0 - v).product();
            let direct = -(s_prev * h[y - 1]).ln();
            let got = loss_survival(&h, y, false, 0.0).unwrap();
            prop_assert!((got - direct).abs() < 1e-12);
        }

        #[test]
        fn survival_gradient_matches_finite_differences(
            logits in proptest::collection::vec(-3.0f64..3.0, 2..6),
            pick in 1usize..6,
            censored in any::<bool>(),
            beta in 0.0f64..1.0,
        ) {
            let y = 1 + (pick - 1) % logits.len();
            let (_, g) = survival_grad(&logits, y, censored, beta).unwrap();
            for j in 0..logits.len() {
                let mut a = logits.clone();
                let mut b = logits.clone();
                a[j] += 1e-6;
                b[j] -= 1e-6;
                let fa = survival_grad(&a, y, censored, beta).unwrap().0;
                let fb = survival_grad(&b, y, censored, beta).unwrap().0;
                let num = (fa - fb) / 2e-6;
                prop_assert!((num - g[j]).abs() < 1e-6, "j={} {} vs {}", j, num, g[j]);
            }
        }
    }
}
