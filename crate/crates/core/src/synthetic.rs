//! Synthetic road networks with spatially structured, heteroscedastic loads.
//! Used by tests and demos when the real TNTP files are not at hand.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::rng::rng_from;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNetworkOptions {
    pub rows: usize,
    pub cols: usize,
    /// Node position noise, in grid cells.
    pub jitter: f64,
    /// Probability of removing a street (both directions).
    pub drop_prob: f64,
    /// Log-scale noise at the quiet edge of the map; it grows linearly to
    /// three times this value across the map.
    pub noise: f64,
}

impl RoadNetworkOptions {
    pub fn small() -> Self {
        RoadNetworkOptions {
            rows: 6,
            cols: 6,
            ..Self::default()
        }
    }
}

impl Default for RoadNetworkOptions {
    fn default() -> Self {
        RoadNetworkOptions {
            rows: 12,
            cols: 12,
            jitter: 0.2,
            drop_prob: 0.1,
            noise: 0.15,
        }
    }
}

/// Jittered grid with two-way streets. Loads peak near the centre, differ
/// by direction, and are noisier on the east side. Node features are the
/// standardized coordinates.
pub fn road_network(options: &RoadNetworkOptions, seed: u64) -> Result<Graph> {
    let (r, c) = (options.rows, options.cols);
    if r < 2 || c < 2 {
        return Err(Error::InvalidArgument(
            "road network needs at least a 2 × 2 grid".into(),
        ));
    }
    if !(0.0..1.0).contains(&options.drop_prob) || options.noise < 0.0 {
        return Err(Error::InvalidArgument(
            "drop probability must be in [0, 1), noise ≥ 0".into(),
        ));
    }
    let mut rng = rng_from(seed, &[0x5e_ed]);
    let n = r * c;
    let mut pos = Vec::with_capacity(n);
    for i in 0..r {
        for j in 0..c {
            pos.push((
                j as f64 + options.jitter * rng.random_range(-1.0..1.0),
                i as f64 + options.jitter * rng.random_range(-1.0..1.0),
            ));
        }
    }
    let mut streets = Vec::new();
    for i in 0..r {
        for j in 0..c {
            let u = i * c + j;
            if j + 1 < c {
                streets.push((u, u + 1));
            }
            if i + 1 < r {
                streets.push((u, u + c));
            }
        }
    }
    // Vertical streets and the first row form a spanning tree, so only the
    // remaining horizontal streets may be dropped.
    streets.retain(|&(u, v)| {
        let keep_always = (u < c && v < c) || v == u + c;
        keep_always || rng.random::<f64>() >= options.drop_prob
    });
    let centre = ((c - 1) as f64 / 2.0, (r - 1) as f64 / 2.0);
    let scale = (centre.0.powi(2) + centre.1.powi(2)).sqrt().max(1.0);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut edges = Vec::with_capacity(2 * streets.len());
    let mut weights = Vec::with_capacity(2 * streets.len());
    for &(u, v) in &streets {
        for (a, b) in [(u, v), (v, u)] {
            let mx = 0.5 * (pos[a].0 + pos[b].0);
            let my = 0.5 * (pos[a].1 + pos[b].1);
            let d = ((mx - centre.0).powi(2) + (my - centre.1).powi(2)).sqrt() / scale;
            // Inbound traffic (towards the centre) is heavier.
            let da = ((pos[a].0 - centre.0).powi(2) + (pos[a].1 - centre.1).powi(2)).sqrt();
            let db = ((pos[b].0 - centre.0).powi(2) + (pos[b].1 - centre.1).powi(2)).sqrt();
            let inbound = if db < da { 1.3 } else { 0.8 };
            let base = 2000.0 * (-2.0 * d * d).exp() * inbound + 200.0;
            let east = mx / (c - 1) as f64;
            let sigma = options.noise * (1.0 + 2.0 * east);
            let noise: f64 = std_normal.sample(&mut rng);
            edges.push((a, b));
            weights.push(base * (sigma * noise).exp());
        }
    }
    let mean = |k: usize| {
        pos.iter()
            .map(|p| if k == 0 { p.0 } else { p.1 })
            .sum::<f64>()
            / n as f64
    };
    let (mx, my) = (mean(0), mean(1));
    let sd = |k: usize, m: f64| {
        (pos.iter()
            .map(|p| (if k == 0 { p.0 } else { p.1 } - m).powi(2))
            .sum::<f64>()
            / (n - 1) as f64)
            .sqrt()
    };
    let (sx, sy) = (sd(0, mx), sd(1, my));
    let features = Tensor::from_rows(
        &pos.iter()
            .map(|&(x, y)| vec![(x - mx) / sx, (y - my) / sy])
            .collect::<Vec<_>>(),
    )?;
    Graph::new(n, edges, weights, features)
}
