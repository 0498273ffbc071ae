//! Split-conformal calibration: CP, CQR, their error-reweighted variants,
//! and uncalibrated quantile regression as a baseline.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower bound on the CQR-ERC denominator.
pub const DEFAULT_ETA: f64 = 1e-3;

/// Multipliers of the mean validation spread tried when choosing the CP-ERC
/// offset.
pub const EPSILON_GRID: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cp,
    CpErc,
    Cqr,
    CqrErc,
    /// Raw quantile heads, no calibration.
    Qr,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Cp,
        Method::CpErc,
        Method::Cqr,
        Method::CqrErc,
        Method::Qr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Cp => "cp",
            Method::CpErc => "cp-erc",
            Method::Cqr => "cqr",
            Method::CqrErc => "cqr-erc",
            Method::Qr => "qr",
        }
    }

    pub fn is_calibrated(&self) -> bool {
        *self != Method::Qr
    }

    /// Whether the method reads the quantile heads (otherwise the mean head).
    pub fn uses_quantiles(&self) -> bool {
        matches!(self, Method::Cqr | Method::CqrErc | Method::Qr)
    }

    pub fn uses_spread(&self) -> bool {
        *self == Method::CpErc
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cp" => Ok(Method::Cp),
            "cp-erc" => Ok(Method::CpErc),
            "cqr" => Ok(Method::Cqr),
            "cqr-erc" => Ok(Method::CqrErc),
            "qr" => Ok(Method::Qr),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Closed interval; `upper` may be `+∞` and `lower` `−∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Model outputs on a set of edges. Which fields must be present depends on
/// the method.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub mean: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// MC-dropout standard deviation.
    pub spread: Option<Vec<f64>>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> PredictionSet {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        PredictionSet {
            mean: pick(&self.mean),
            lower: self.lower.as_ref().map(pick),
            upper: self.upper.as_ref().map(pick),
            spread: self.spread.as_ref().map(pick),
        }
    }

    fn check(&self, method: Method) -> Result<()> {
        let n = self.mean.len();
        let need = |name: &str, v: &Option<Vec<f64>>| match v {
            Some(v) if v.len() == n => Ok(()),
            Some(v) => Err(Error::ShapeMismatch {
                op: "prediction set",
                left: (n, 1),
                right: (v.len(), 1),
            }),
            None => Err(Error::InvalidArgument(format!(
                "{method} needs {name} predictions"
            ))),
        };
        if method.uses_quantiles() {
            need("lower quantile", &self.lower)?;
            need("upper quantile", &self.upper)?;
        }
        if method.uses_spread() {
            need("MC-dropout spread", &self.spread)?;
        }
        Ok(())
    }
}

/// `k = ⌈(n + 1)(1 − α)⌉`.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    // Guard against (n+1)(1-α) landing a hair above an integer.
    let raw = (n as f64 + 1.0) * (1.0 - alpha);
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// The `k`-th smallest score, or `+∞` when `k > n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN conformity score".into()));
    }
    let k = quantile_rank(scores.len(), alpha);
    if k == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted[k - 1])
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside (0, 1)"
        )))
    }
}

/// Calibrated threshold plus bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub qhat: f64,
    pub rank: usize,
    pub n_calib: usize,
}

/// A conformal method with its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub method: Method,
    pub alpha: f64,
    /// Offset added to the MC spread (CP-ERC).
    pub epsilon: f64,
    /// Floor of the quantile-gap denominator (CQR-ERC).
    pub eta: f64,
}

impl Calibrator {
    pub fn new(method: Method, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Calibrator {
            method,
            alpha,
            epsilon: 0.0,
            eta: DEFAULT_ETA,
        })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {epsilon} must be finite and ≥ 0"
            )));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    fn erc_scale(&self, preds: &PredictionSet, i: usize) -> f64 {
        match self.method {
            Method::CpErc => preds.spread.as_ref().unwrap()[i] + self.epsilon,
            Method::CqrErc => {
                let (lo, hi) = (
                    preds.lower.as_ref().unwrap()[i],
                    preds.upper.as_ref().unwrap()[i],
                );
                (hi - lo).abs().max(self.eta)
            }
            _ => 1.0,
        }
    }

    /// Nonconformity score of each `(prediction, y)` pair.
    pub fn scores(&self, preds: &PredictionSet, y: &[f64]) -> Result<Vec<f64>> {
        preds.check(self.method)?;
        if y.len() != preds.len() {
            return Err(Error::ShapeMismatch {
                op: "scores",
                left: (preds.len(), 1),
                right: (y.len(), 1),
            });
        }
        if self.method == Method::CpErc
            && preds
                .spread
                .as_ref()
                .unwrap()
                .iter()
                .any(|&s| s + self.epsilon <= 0.0)
        {
            return Err(Error::InvalidArgument(
                "CP-ERC needs spread + epsilon > 0".into(),
            ));
        }
        Ok(y.iter()
            .enumerate()
            .map(|(i, &w)| {
                let raw = match self.method {
                    Method::Cp | Method::CpErc => (preds.mean[i] - w).abs(),
                    Method::Cqr | Method::CqrErc | Method::Qr => {
                        let (lo, hi) = (
                            preds.lower.as_ref().unwrap()[i],
                            preds.upper.as_ref().unwrap()[i],
                        );
                        (lo - w).max(w - hi)
                    }
                };
                raw / self.erc_scale(preds, i)
            })
            .collect())
    }

    /// Threshold from calibration predictions and labels. Quantile
    /// regression is uncalibrated and gets `q̂ = 0`.
    pub fn calibrate(&self, preds: &PredictionSet, y: &[f64]) -> Result<Calibration> {
        let scores = self.scores(preds, y)?;
        if !self.method.is_calibrated() {
            return Ok(Calibration {
                qhat: 0.0,
                rank: 0,
                n_calib: scores.len(),
            });
        }
        if scores.is_empty() {
            return Err(Error::InvalidSplit("empty calibration set".into()));
        }
        Ok(Calibration {
            qhat: conformal_quantile(&scores, self.alpha)?,
            rank: quantile_rank(scores.len(), self.alpha),
            n_calib: scores.len(),
        })
    }

    /// Prediction intervals for every row of `preds`.
    pub fn intervals(&self, qhat: f64, preds: &PredictionSet) -> Result<Vec<Interval>> {
        preds.check(self.method)?;
        Ok((0..preds.len())
            .map(|i| {
                let d = if self.method.is_calibrated() {
                    qhat * self.erc_scale(preds, i)
                } else {
                    0.0
                };
                match self.method {
                    Method::Cp | Method::CpErc => Interval {
                        lower: preds.mean[i] - d,
                        upper: preds.mean[i] + d,
                    },
                    _ => Interval {
                        lower: preds.lower.as_ref().unwrap()[i] - d,
                        upper: preds.upper.as_ref().unwrap()[i] + d,
                    },
                }
            })
            .collect())
    }
}

/// Picks the CP-ERC offset `ε = m · mean(spread)` over [`EPSILON_GRID`] that
/// gives the smallest mean width when calibrating on the validation set
/// itself. Ties go to the smaller multiplier.
pub fn select_epsilon(val: &PredictionSet, val_y: &[f64], alpha: f64) -> Result<f64> {
    val.check(Method::CpErc)?;
    if val.is_empty() {
        return Err(Error::InvalidSplit(
            "empty validation set for epsilon selection".into(),
        ));
    }
    let spread = val.spread.as_ref().unwrap();
    let mean_spread = spread.iter().sum::<f64>() / spread.len() as f64;
    let base = if mean_spread > 0.0 { mean_spread } else { 1.0 };
    let mut best = (f64::INFINITY, EPSILON_GRID[0] * base);
    for m in EPSILON_GRID {
        let eps = m * base;
        let cal = Calibrator::new(Method::CpErc, alpha)?.with_epsilon(eps)?;
        let q = cal.calibrate(val, val_y)?.qhat;
        let width = if q.is_finite() {
            2.0 * q * spread.iter().map(|s| s + eps).sum::<f64>() / spread.len() as f64
        } else {
            f64::INFINITY
        };
        if width < best.0 {
            best = (width, eps);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(mean: Vec<f64>) -> PredictionSet {
        PredictionSet {
            mean,
            ..Default::default()
        }
    }

    fn quantiles(lo: Vec<f64>, hi: Vec<f64>) -> PredictionSet {
        PredictionSet {
            mean: lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            lower: Some(lo),
            upper: Some(hi),
            spread: None,
        }
    }

    #[test]
    fn quantile_rank_pencil_values() {
        assert_eq!(quantile_rank(9, 0.1), 9);
        assert_eq!(quantile_rank(19, 0.05), 19);
        assert_eq!(quantile_rank(100, 0.05), 96);
        assert_eq!(quantile_rank(5, 0.05), 6);
    }

    #[test]
    fn cp_quantile_on_one_to_nine() {
        let scores: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(conformal_quantile(&scores, 0.1).unwrap(), 9.0);
        assert_eq!(conformal_quantile(&scores, 0.5).unwrap(), 5.0);
        assert_eq!(
            conformal_quantile(&scores[..5], 0.05).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn cp_interval_pencil() {
        let cal = Calibrator::new(Method::Cp, 0.1).unwrap();
        let c = cal
            .calibrate(
                &point(vec![0.0; 9]),
                &(1..=9).map(f64::from).collect::<Vec<_>>(),
            )
            .unwrap();
        assert_eq!(c.qhat, 9.0);
        let iv = cal.intervals(c.qhat, &point(vec![2.0])).unwrap();
        assert_eq!(
            iv[0],
            Interval {
                lower: -7.0,
                upper: 11.0
            }
        );
    }

    #[test]
    fn cqr_scores_and_intervals() {
        let cal = Calibrator::new(Method::Cqr, 0.5).unwrap();
        let p = quantiles(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]);
        let s = cal.scores(&p, &[0.5, 3.0, -2.0]).unwrap();
        assert_eq!(s, vec![-0.5, 2.0, 2.0]);
        let iv = cal
            .intervals(0.25, &quantiles(vec![1.0], vec![2.0]))
            .unwrap();
        assert_eq!(
            iv[0],
            Interval {
                lower: 0.75,
                upper: 2.25
            }
        );
    }

    #[test]
    fn erc_scores_pencil() {
        let cp = Calibrator::new(Method::CpErc, 0.1)
            .unwrap()
            .with_epsilon(0.5)
            .unwrap();
        let p = PredictionSet {
            mean: vec![1.0],
            spread: Some(vec![1.5]),
            ..Default::default()
        };
        assert_eq!(cp.scores(&p, &[5.0]).unwrap(), vec![2.0]);
        assert_eq!(
            cp.intervals(2.0, &p).unwrap()[0],
            Interval {
                lower: -3.0,
                upper: 5.0
            }
        );
        let cqr = Calibrator::new(Method::CqrErc, 0.1).unwrap();
        let q = quantiles(vec![1.0, 2.0], vec![3.0, 2.0]);
        let s = cqr.scores(&q, &[4.0, 2.5]).unwrap();
        assert_eq!(s[0], 0.5);
        assert!((s[1] - 0.5 / DEFAULT_ETA).abs() < 1e-9);
    }

    #[test]
    fn qr_is_uncalibrated() {
        let cal = Calibrator::new(Method::Qr, 0.1).unwrap();
        let p = quantiles(vec![0.0], vec![1.0]);
        let c = cal.calibrate(&p, &[7.0]).unwrap();
        assert_eq!(c.qhat, 0.0);
        assert_eq!(
            cal.intervals(123.0, &p).unwrap()[0],
            Interval {
                lower: 0.0,
                upper: 1.0
            }
        );
    }

    #[test]
    fn missing_heads_are_rejected() {
        let cal = Calibrator::new(Method::Cqr, 0.1).unwrap();
        assert!(cal.calibrate(&point(vec![0.0]), &[0.0]).is_err());
        let cal = Calibrator::new(Method::CpErc, 0.1).unwrap();
        assert!(cal.calibrate(&point(vec![0.0]), &[0.0]).is_err());
        assert!(Calibrator::new(Method::Cp, 0.0).is_err());
        assert!(Calibrator::new(Method::Cp, 1.0).is_err());
    }

    #[test]
    fn exchangeable_coverage_is_near_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cal = Calibrator::new(Method::Cp, 0.1).unwrap();
        let (n, trials) = (50, 4000);
        let mut hits = 0usize;
        for _ in 0..trials {
            let y: Vec<f64> = (0..n + 1).map(|_| rng.random::<f64>()).collect();
            let q = cal.calibrate(&point(vec![0.0; n]), &y[..n]).unwrap().qhat;
            hits += cal.intervals(q, &point(vec![0.0])).unwrap()[0].contains(y[n]) as usize;
        }
        let expect = quantile_rank(n, 0.1) as f64 / (n + 1) as f64;
        let cov = hits as f64 / trials as f64;
        assert!((cov - expect).abs() < 0.02, "{cov} vs {expect}");
    }

    #[test]
    fn epsilon_comes_from_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let spread: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let y: Vec<f64> = spread
            .iter()
            .map(|s| s * rng.random_range(-1.0..1.0))
            .collect();
        let p = PredictionSet {
            mean: vec![0.0; n],
            spread: Some(spread.clone()),
            ..Default::default()
        };
        let eps = select_epsilon(&p, &y, 0.1).unwrap();
        let mean_s = spread.iter().sum::<f64>() / n as f64;
        assert!(EPSILON_GRID
            .iter()
            .any(|m| (m * mean_s - eps).abs() < 1e-12));
    }

    fn method_strategy() -> impl Strategy<Value = Method> {
        prop_oneof![
            Just(Method::Cp),
            Just(Method::CpErc),
            Just(Method::Cqr),
            Just(Method::CqrErc)
        ]
    }

    proptest! {
        #[test]
        fn membership_matches_score_threshold(
            method in method_strategy(),
            seed in any::<u64>(),
            alpha in 0.02f64..0.5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 30;
            let mut gen = |n: usize| {
                let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let lo: Vec<f64> = mean.iter().map(|m| m - rng.random_range(0.0..1.0)).collect();
                let hi: Vec<f64> = mean.iter().map(|m| m + rng.random_range(0.0..1.0)).collect();
                let spread: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
                (PredictionSet { mean, lower: Some(lo), upper: Some(hi), spread: Some(spread) }, y)
            };
            let (calib, cy) = gen(n);
            let (test, ty) = gen(n);
            let cal = Calibrator::new(method, alpha).unwrap().with_epsilon(0.1).unwrap();
            let q = cal.calibrate(&calib, &cy).unwrap().qhat;
            let scores = cal.scores(&test, &ty).unwrap();
            let ivs = cal.intervals(q, &test).unwrap();
            for ((iv, s), y) in ivs.iter().zip(&scores).zip(&ty) {
                prop_assert_eq!(iv.contains(*y), *s <= q);
            }
        }

        #[test]
        fn intervals_nest_in_alpha(seed in any::<u64>(), a1 in 0.01f64..0.5, a2 in 0.01f64..0.5) {
            let (lo_a, hi_a) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
            prop_assert!(conformal_quantile(&scores, lo_a).unwrap() >= conformal_quantile(&scores, hi_a).unwrap());
        }
    }
}
