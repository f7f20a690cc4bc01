use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, Dyn, OMatrix, OVector, U4};

use super::EvalError;
use crate::corpus::ComparativeLevel;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<(), EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.len() < 2 {
        return Err(EvalError::TooFewItems(pred.len()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

/// Pearson correlation; `None` when either side has zero variance.
fn pearson_raw(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn srcc(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_pair(pred, truth)?;
    pearson_raw(&average_ranks(pred), &average_ranks(truth)).ok_or(EvalError::DegenerateRanking)
}

/// Pearson linear correlation, optionally after a monotone 4-parameter
/// logistic mapping of `pred` onto `truth`.
pub fn plcc(pred: &[f64], truth: &[f64], logistic_map: bool) -> Result<f64, EvalError> {
    check_pair(pred, truth)?;
    let raw = pearson_raw(pred, truth).ok_or(EvalError::ZeroVariance)?;
    if !logistic_map {
        return Ok(raw);
    }
    match fit_logistic(pred, truth) {
        Some(fit) => {
            let mapped: Vec<f64> = pred.iter().map(|&x| fit.eval(x)).collect();
            Ok(pearson_raw(&mapped, truth).unwrap_or(raw))
        }
        None => {
            log::warn!("logistic fit did not converge; reporting raw PLCC");
            Ok(raw)
        }
    }
}

/// `f(x) = (b1 - b2) / (1 + exp(-(x - b3) / |b4|)) + b2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logistic4 {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
}

impl Logistic4 {
    pub fn eval(&self, x: f64) -> f64 {
        (self.b1 - self.b2) / (1.0 + (-(x - self.b3) / self.b4.abs()).exp()) + self.b2
    }
}

struct LogisticFit<'a> {
    x: &'a [f64],
    y: &'a [f64],
    p: OVector<f64, U4>,
}

impl LogisticFit<'_> {
    fn curve(&self) -> Logistic4 {
        Logistic4 { b1: self.p[0], b2: self.p[1], b3: self.p[2], b4: self.p[3] }
    }
}

impl LeastSquaresProblem<f64, Dyn, U4> for LogisticFit<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U4>;
    type ParameterStorage = Owned<f64, U4>;

    fn set_params(&mut self, p: &OVector<f64, U4>) {
        self.p.copy_from(p);
    }

    fn params(&self) -> OVector<f64, U4> {
        self.p
    }

    fn residuals(&self) -> Option<OVector<f64, Dyn>> {
        let f = self.curve();
        Some(OVector::<f64, Dyn>::from_iterator(self.x.len(), self.x.iter().zip(self.y).map(|(&x, &y)| f.eval(x) - y)))
    }

    fn jacobian(&self) -> Option<OMatrix<f64, Dyn, U4>> {
        let Logistic4 { b1, b2, b3, b4 } = self.curve();
        let s4 = b4.abs();
        if s4 == 0.0 {
            return None;
        }
        let mut j = OMatrix::<f64, Dyn, U4>::zeros(self.x.len());
        for (row, &x) in self.x.iter().enumerate() {
            let s = 1.0 / (1.0 + (-(x - b3) / s4).exp());
            let ds = s * (1.0 - s);
            j[(row, 0)] = s;
            j[(row, 1)] = 1.0 - s;
            j[(row, 2)] = -(b1 - b2) * ds / s4;
            j[(row, 3)] = -(b1 - b2) * ds * (x - b3) / (s4 * s4) * b4.signum();
        }
        Some(j)
    }
}

/// Least-squares logistic fit `pred → truth`; `None` on failure.
pub fn fit_logistic(pred: &[f64], truth: &[f64]) -> Option<Logistic4> {
    let n = pred.len() as f64;
    let mean = pred.iter().sum::<f64>() / n;
    let sd = (pred.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let tmax = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tmin = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let init = OVector::<f64, U4>::new(tmax, tmin, mean, sd.max(1e-12));
    let problem = LogisticFit { x: pred, y: truth, p: init };
    let (fitted, report) = LevenbergMarquardt::new().with_patience(1000).minimize(problem);
    let curve = fitted.curve();
    let finite = [curve.b1, curve.b2, curve.b3, curve.b4].iter().all(|v| v.is_finite()) && curve.b4 != 0.0;
    (report.termination.was_successful() && finite).then_some(curve)
}

/// Fraction of positions where the two level lists agree.
pub fn level_accuracy(pred: &[ComparativeLevel], truth: &[ComparativeLevel]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.is_empty() {
        return Err(EvalError::TooFewItems(0));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// Median; mean of the middle pair for even lengths. `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ComparativeLevel::*;

    #[test]
    fn srcc_examples() {
        let t = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((srcc(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = t.iter().rev().copied().collect();
        assert!((srcc(&rev, &t).unwrap() + 1.0).abs() < 1e-15);
        // d² = (0,1,1,0,0): 1 - 6·2/(5·24) = 0.9
        assert!((srcc(&t, &[1.0, 3.0, 2.0, 4.0, 5.0]).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(srcc(&[1.0, 1.0], &[1.0, 2.0]), Err(EvalError::DegenerateRanking)));
        assert!(matches!(srcc(&[1.0], &[1.0]), Err(EvalError::TooFewItems(1))));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn plcc_examples() {
        let t = [0.3, 1.1, 2.0, 2.2, 4.5, 3.9];
        let affine: Vec<f64> = t.iter().map(|x| 3.0 * x - 7.0).collect();
        assert!((plcc(&affine, &t, false).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((plcc(&neg, &t, false).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(plcc(&[1.0, 1.0], &[1.0, 2.0], false), Err(EvalError::ZeroVariance)));
    }

    #[test]
    fn logistic_mapping_on_linear_data_is_neutral() {
        let truth: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 2.0 + i as f64 * 0.1).collect();
        let pred: Vec<f64> = truth.iter().map(|t| 0.5 * t + 1.0).collect();
        let raw = plcc(&pred, &truth, false).unwrap();
        let mapped = plcc(&pred, &truth, true).unwrap();
        assert!((raw - mapped).abs() < 1e-6, "raw {raw} mapped {mapped}");
    }

    #[test]
    fn logistic_mapping_straightens_a_sigmoid() {
        let pred: Vec<f64> = (0..50).map(|i| -3.0 + i as f64 * 0.12).collect();
        let truth: Vec<f64> = pred.iter().map(|x| 1.0 + 4.0 / (1.0 + (-2.0 * x).exp())).collect();
        let raw = plcc(&pred, &truth, false).unwrap();
        let mapped = plcc(&pred, &truth, true).unwrap();
        assert!(mapped > raw && mapped > 0.999_999, "raw {raw} mapped {mapped}");
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(level_accuracy(&[Worse, Better], &[Worse, Better]).unwrap(), 1.0);
        assert_eq!(level_accuracy(&[Worse, Better], &[Better, Worse]).unwrap(), 0.0);
        assert_eq!(
            level_accuracy(&[Worse, Better, Similar, Inferior], &[Worse, Better, Similar, Superior]).unwrap(),
            0.75
        );
        assert!(level_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn srcc_monotone_invariance(v in prop::collection::vec(-5.0..5.0f64, 3..30), t in prop::collection::vec(-5.0..5.0f64, 30)) {
            let t = &t[..v.len()];
            if let Ok(r) = srcc(&v, t) {
                let warped: Vec<f64> = v.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
                prop_assert!((srcc(&warped, t).unwrap() - r).abs() < 1e-12);
            }
        }

        #[test]
        fn plcc_affine_invariance(v in prop::collection::vec(-5.0..5.0f64, 3..30), t in prop::collection::vec(-5.0..5.0f64, 30), a in 0.1..10.0f64, b in -10.0..10.0f64) {
            let t = &t[..v.len()];
            if let Ok(r) = plcc(&v, t, false) {
                let moved: Vec<f64> = v.iter().map(|x| a * x + b).collect();
                prop_assert!((plcc(&moved, t, false).unwrap() - r).abs() < 1e-9);
            }
        }

        #[test]
        fn accuracy_symmetric(a in prop::collection::vec(0usize..5, 1..20), b in prop::collection::vec(0usize..5, 20)) {
            let la: Vec<_> = a.iter().map(|&i| ComparativeLevel::ALL[i]).collect();
            let lb: Vec<_> = b[..a.len()].iter().map(|&i| ComparativeLevel::ALL[i]).collect();
            prop_assert_eq!(level_accuracy(&la, &lb).unwrap(), level_accuracy(&lb, &la).unwrap());
        }
    }
}
