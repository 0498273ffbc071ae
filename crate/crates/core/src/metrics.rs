//! Interval quality: marginal coverage, mean width and worst-slice coverage.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::Interval;
use crate::rng::{rng_from, stream};
use crate::tensor::{dot, Tensor};
use crate::{Error, Result};

/// Fraction of `y` inside the matching interval.
pub fn coverage(intervals: &[Interval], y: &[f64]) -> Result<f64> {
    if intervals.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "coverage",
            left: (intervals.len(), 1),
            right: (y.len(), 1),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("coverage of an empty set".into()));
    }
    Ok(intervals
        .iter()
        .zip(y)
        .filter(|(iv, &w)| iv.contains(w))
        .count() as f64
        / y.len() as f64)
}

/// Mean interval width; `+∞` if any interval is unbounded.
pub fn inefficiency(intervals: &[Interval]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::InvalidArgument(
            "inefficiency of an empty set".into(),
        ));
    }
    Ok(intervals.iter().map(Interval::width).sum::<f64>() / intervals.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WscConfig {
    pub num_directions: usize,
    /// Minimum slab mass on the tuning half, one search per value.
    pub deltas: Vec<f64>,
    /// Share of points used to pick the slab; the rest evaluate it.
    pub tuning_fraction: f64,
    /// Projection quantile levels that slab endpoints are drawn from.
    pub quantile_levels: Vec<f64>,
    pub seed: u64,
}

impl Default for WscConfig {
    fn default() -> Self {
        WscConfig {
            num_directions: 1000,
            deltas: vec![0.1, 0.2, 0.25],
            tuning_fraction: 0.25,
            quantile_levels: (1..=19).map(|i| i as f64 * 0.05).collect(),
            seed: 0,
        }
    }
}

/// The slab `{x : a ≤ v·x ≤ b}` found on the tuning points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub direction: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub tuning_coverage: f64,
}

impl SlabSpec {
    pub fn contains(&self, x: &[f64]) -> bool {
        let p = dot(x, &self.direction);
        self.a <= p && p <= self.b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WscResult {
    /// `min(slab coverage, marginal coverage)` on the evaluation points.
    pub wsc: f64,
    pub eval_coverage: f64,
    pub slab: SlabSpec,
    pub slab_size: usize,
    pub num_eval: usize,
}

struct Candidate {
    cov: f64,
    a: f64,
    b: f64,
}

fn best_slab(proj: &[f64], covered: &[bool], levels: &[f64], delta: f64) -> Option<Candidate> {
    let n = proj.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| proj[i].total_cmp(&proj[j]));
    let sorted: Vec<f64> = order.iter().map(|&i| proj[i]).collect();
    let mut hits = vec![0usize; n + 1];
    for (r, &i) in order.iter().enumerate() {
        hits[r + 1] = hits[r] + covered[i] as usize;
    }
    let cuts: Vec<f64> = levels
        .iter()
        .map(|&q| sorted[((q * (n - 1) as f64).round() as usize).min(n - 1)])
        .collect();
    let min_mass = (delta * n as f64).ceil().max(1.0) as usize;
    let mut best: Option<Candidate> = None;
    for (ia, &a) in cuts.iter().enumerate() {
        let lo = sorted.partition_point(|&p| p < a);
        for &b in &cuts[ia + 1..] {
            if b <= a {
                continue;
            }
            let hi = sorted.partition_point(|&p| p <= b);
            let mass = hi - lo;
            if mass < min_mass {
                continue;
            }
            let cov = (hits[hi] - hits[lo]) as f64 / mass as f64;
            if best.as_ref().is_none_or(|c| cov < c.cov) {
                best = Some(Candidate { cov, a, b });
            }
        }
    }
    best
}

/// Worst-slice coverage over random directions in feature space.
///
/// Points are split into a tuning and an evaluation part. On the tuning part
/// every direction and every pair of projection quantiles `a < b` defines a
/// slab; the slab with the lowest coverage among those holding at least a
/// `δ` share of points is kept. Its coverage is then measured on the
/// evaluation part and capped by the evaluation marginal coverage (the whole
/// space is itself a slab), so the result never exceeds it.
pub fn worst_slice_coverage(
    features: &Tensor,
    covered: &[bool],
    config: &WscConfig,
) -> Result<WscResult> {
    let n = features.rows();
    if covered.len() != n {
        return Err(Error::ShapeMismatch {
            op: "worst_slice_coverage",
            left: features.shape(),
            right: (covered.len(), 1),
        });
    }
    if config.num_directions == 0 || config.deltas.is_empty() || config.quantile_levels.len() < 2 {
        return Err(Error::Config(
            "WSC needs directions, deltas and at least two quantile levels".into(),
        ));
    }
    if !(config.tuning_fraction > 0.0 && config.tuning_fraction < 1.0) {
        return Err(Error::Config(format!(
            "tuning fraction {} outside (0, 1)",
            config.tuning_fraction
        )));
    }
    let n_tune = (config.tuning_fraction * n as f64).round() as usize;
    if n < 20 || n_tune < 2 || n - n_tune < 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} points are too few for worst-slice coverage"
        )));
    }
    let mut rng = rng_from(config.seed, &[stream::WSC]);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let (tune, eval) = perm.split_at(n_tune);
    let d = features.cols();
    let directions: Vec<Vec<f64>> = (0..config.num_directions)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dot(&v, &v).sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();
    let eval_cov = eval.iter().filter(|&&i| covered[i]).count() as f64 / eval.len() as f64;

    let slab = search_slab(
        features,
        covered,
        tune,
        &directions,
        &config.quantile_levels,
        &config.deltas,
    )
    .ok_or_else(|| Error::InvalidArgument("no slab satisfies the minimum mass".into()))?;
    let inside: Vec<usize> = eval
        .iter()
        .copied()
        .filter(|&i| slab.contains(features.row(i)))
        .collect();
    let slab_cov = if inside.is_empty() {
        eval_cov
    } else {
        inside.iter().filter(|&&i| covered[i]).count() as f64 / inside.len() as f64
    };
    Ok(WscResult {
        wsc: slab_cov.min(eval_cov),
        eval_coverage: eval_cov,
        slab,
        slab_size: inside.len(),
        num_eval: eval.len(),
    })
}

/// Lowest-coverage slab on the points `rows` over all directions, endpoint
/// pairs and mass thresholds. Ties keep the earliest delta, then the earliest
/// direction.
pub(crate) fn search_slab(
    features: &Tensor,
    covered: &[bool],
    rows: &[usize],
    directions: &[Vec<f64>],
    levels: &[f64],
    deltas: &[f64],
) -> Option<SlabSpec> {
    let row_cov: Vec<bool> = rows.iter().map(|&i| covered[i]).collect();
    let mut best: Option<SlabSpec> = None;
    for &delta in deltas {
        let per_direction: Vec<Option<Candidate>> = directions
            .par_iter()
            .map(|v| {
                let proj: Vec<f64> = rows.iter().map(|&i| dot(features.row(i), v)).collect();
                best_slab(&proj, &row_cov, levels, delta)
            })
            .collect();
        // Sequential reduction keeps the tie-break independent of scheduling.
        for (k, c) in per_direction.into_iter().enumerate() {
            let Some(c) = c else { continue };
            if best.as_ref().is_none_or(|b| c.cov < b.tuning_coverage) {
                best = Some(SlabSpec {
                    direction: directions[k].clone(),
                    a: c.a,
                    b: c.b,
                    delta,
                    tuning_coverage: c.cov,
                });
            }
        }
    }
    best
}

/// Coverage, width and worst-slice coverage of one method on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_test: usize,
    pub coverage: f64,
    pub inefficiency: f64,
    pub wsc: Option<f64>,
    pub wsc_eval_coverage: Option<f64>,
}

impl EvaluationReport {
    pub fn evaluate(
        intervals: &[Interval],
        y: &[f64],
        features: Option<(&Tensor, &WscConfig)>,
    ) -> Result<Self> {
        let cov = coverage(intervals, y)?;
        let ineff = inefficiency(intervals)?;
        let (wsc, wsc_eval) = match features {
            Some((x, cfg)) => {
                let covered: Vec<bool> = intervals
                    .iter()
                    .zip(y)
                    .map(|(iv, &w)| iv.contains(w))
                    .collect();
                let r = worst_slice_coverage(x, &covered, cfg)?;
                (Some(r.wsc), Some(r.eval_coverage))
            }
            None => (None, None),
        };
        Ok(EvaluationReport {
            n_test: y.len(),
            coverage: cov,
            inefficiency: ineff,
            wsc,
            wsc_eval_coverage: wsc_eval,
        })
    }
}
