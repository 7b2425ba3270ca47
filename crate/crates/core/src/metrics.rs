//! Regression and binary-sentiment metrics.
//!
//! Acc-2 and weighted F1 come in two conventions:
//! * [`Acc2Mode::NonNegative`]: every sample counts; classes are
//!   `target < 0` vs `target >= 0`.
//! * [`Acc2Mode::Positive`]: samples with `target == 0` are dropped; classes
//!   are `target < 0` vs `target > 0`.
//!
//! Predictions are binarized as `pred < 0` vs `pred >= 0` in both modes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {pred} predictions, {target} targets")]
    LengthMismatch { pred: usize, target: usize },
    #[error("no samples")]
    Empty,
    #[error("every target is zero; the positive convention has no samples")]
    AllZeroTargets,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Acc2Mode {
    NonNegative,
    Positive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub mae: f64,
    pub corr: f64,
    /// True when either series had zero variance and `corr` was set to 0.
    pub corr_degenerate: bool,
    pub acc2_nonneg: f64,
    pub f1_nonneg: f64,
    pub acc2_pos: f64,
    pub f1_pos: f64,
    /// Samples dropped by the positive convention.
    pub n_excluded_zero: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pearson {
    pub value: f64,
    pub degenerate: bool,
}

/// 2×2 confusion counts; class 0 is negative, class 1 non-negative/positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    /// `counts[true][predicted]`
    pub counts: [[u64; 2]; 2],
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }

    /// Support-weighted F1 over both classes. A class whose F1 denominator
    /// is zero scores 0.
    pub fn weighted_f1(&self) -> f64 {
        // Σ_c support_c · 2TP_c / (2TP_c + FP_c + FN_c), divided by N, as a
        // single integer fraction when it fits in 53 bits.
        let mut num = [0u128; 2];
        let mut den = [1u128; 2];
        for c in 0..2 {
            let other = 1 - c;
            let tp = self.counts[c][c] as u128;
            let fp = self.counts[other][c] as u128;
            let fn_ = self.counts[c][other] as u128;
            let support = tp + fn_;
            let d = 2 * tp + fp + fn_;
            if d > 0 {
                num[c] = support * 2 * tp;
                den[c] = d;
            }
        }
        let n = self.total() as u128;
        let numerator = num[0] * den[1] + num[1] * den[0];
        let denominator = n * den[0] * den[1];
        const EXACT: u128 = 1 << 53;
        if numerator < EXACT && denominator < EXACT {
            numerator as f64 / denominator as f64
        } else {
            (num[0] as f64 / den[0] as f64 + num[1] as f64 / den[1] as f64) / n as f64
        }
    }
}

fn check(pred: &[f64], target: &[f64]) -> Result<(), MetricsError> {
    if pred.len() != target.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), target: target.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64, MetricsError> {
    check(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation; 0 with `degenerate` set when a series is constant.
pub fn pearson(pred: &[f64], target: &[f64]) -> Result<Pearson, MetricsError> {
    check(pred, target)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (dp, dt) = (p - mp, t - mt);
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    if vp == 0.0 || vt == 0.0 {
        return Ok(Pearson { value: 0.0, degenerate: true });
    }
    Ok(Pearson { value: (cov / (vp * vt).sqrt()).clamp(-1.0, 1.0), degenerate: false })
}

pub fn confusion(pred: &[f64], target: &[f64], mode: Acc2Mode) -> Result<Confusion, MetricsError> {
    check(pred, target)?;
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(target) {
        if mode == Acc2Mode::Positive && t == 0.0 {
            continue;
        }
        let truth = usize::from(t >= 0.0);
        let guess = usize::from(p >= 0.0);
        c.counts[truth][guess] += 1;
    }
    if c.total() == 0 {
        return Err(MetricsError::AllZeroTargets);
    }
    Ok(c)
}

/// `(accuracy, weighted F1)` under `mode`.
pub fn acc2_f1(pred: &[f64], target: &[f64], mode: Acc2Mode) -> Result<(f64, f64), MetricsError> {
    let c = confusion(pred, target, mode)?;
    Ok((c.accuracy(), c.weighted_f1()))
}

/// All metrics of `pred` against `target`. When every target is zero the
/// positive-convention scores are reported as 0.
pub fn evaluate(pred: &[f64], target: &[f64]) -> Result<MetricsBundle, MetricsError> {
    let r = pearson(pred, target)?;
    let (acc2_nonneg, f1_nonneg) = acc2_f1(pred, target, Acc2Mode::NonNegative)?;
    let (acc2_pos, f1_pos) = match acc2_f1(pred, target, Acc2Mode::Positive) {
        Ok(v) => v,
        Err(MetricsError::AllZeroTargets) => (0.0, 0.0),
        Err(e) => return Err(e),
    };
    Ok(MetricsBundle {
        mae: mae(pred, target)?,
        corr: r.value,
        corr_degenerate: r.degenerate,
        acc2_nonneg,
        f1_nonneg,
        acc2_pos,
        f1_pos,
        n_excluded_zero: target.iter().filter(|&&t| t == 0.0).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted_predictions() {
        let t = [-1.0, 0.5, 2.0, -0.3];
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        assert!((pearson(&t, &t).unwrap().value - 1.0).abs() < 1e-15);
        let z = [-1.0, 2.0, -3.0, 2.0];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &z).unwrap().value + 1.0).abs() < 1e-15);
        for mode in [Acc2Mode::NonNegative, Acc2Mode::Positive] {
            assert_eq!(acc2_f1(&t, &t, mode).unwrap(), (1.0, 1.0));
        }
    }

    #[test]
    fn hand_computed_regression_metrics() {
        let (p, t) = ([1.0, 2.0, 3.0], [2.0, 2.0, 5.0]);
        assert_eq!(mae(&p, &t).unwrap(), 1.0);
        // means 2 and 3; cov = (-1)(-1) + 0 + (1)(2) = 3; var_p = 2; var_t = 1 + 1 + 4 = 6
        let expect = 3.0 / (2.0f64 * 6.0).sqrt();
        assert!((pearson(&p, &t).unwrap().value - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let r = pearson(&[0.4; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r, Pearson { value: 0.0, degenerate: true });
    }

    #[test]
    fn zero_target_conventions() {
        let t = [-1.0, 0.0, 2.0];
        let p = [-0.5, -0.1, 1.0];
        let (acc, _) = acc2_f1(&p, &t, Acc2Mode::NonNegative).unwrap();
        assert_eq!(acc, 2.0 / 3.0);
        let (acc, f1) = acc2_f1(&p, &t, Acc2Mode::Positive).unwrap();
        assert_eq!((acc, f1), (1.0, 1.0));
        assert_eq!(acc2_f1(&[1.0, 2.0], &[0.0, 0.0], Acc2Mode::Positive), Err(MetricsError::AllZeroTargets));
    }

    #[test]
    fn zero_prediction_counts_as_nonnegative() {
        let c = confusion(&[0.0], &[1.0], Acc2Mode::Positive).unwrap();
        assert_eq!(c.counts, [[0, 0], [0, 1]]);
    }

    #[test]
    fn weighted_f1_small_case() {
        // truth: N N P P P, pred: N P P P N
        let t = [-1.0, -1.0, 1.0, 1.0, 1.0];
        let p = [-1.0, 1.0, 1.0, 1.0, -1.0];
        // class N: tp 1, fp 1, fn 1 -> f1 = 2/4; support 2
        // class P: tp 2, fp 1, fn 1 -> f1 = 4/6; support 3
        let expect = (2.0 * 0.5 + 3.0 * (4.0 / 6.0)) / 5.0;
        let (_, f1) = acc2_f1(&p, &t, Acc2Mode::NonNegative).unwrap();
        assert!((f1 - expect).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(pearson(&[], &[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn bundle_counts_zero_targets() {
        let b = evaluate(&[0.1, -0.2, 0.3, 0.0], &[0.0, -1.0, 1.0, 0.0]).unwrap();
        assert_eq!(b.n_excluded_zero, 2);
        assert_eq!(b.acc2_pos, 1.0);
    }
}
