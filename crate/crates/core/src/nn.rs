//! Losses, dropout, initialization and the Adam optimizer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Pinball (quantile) loss `max(q(y−ŷ), (q−1)(y−ŷ))`, without argument checks.
#[inline]
pub fn pinball(y: f64, y_hat: f64, q: f64) -> f64 {
    let r = y - y_hat;
    (q * r).max((q - 1.0) * r)
}

/// Derivative of [`pinball`] with respect to `y_hat`. At `y == y_hat` the
/// right-hand branch is used.
#[inline]
pub fn pinball_grad(y: f64, y_hat: f64, q: f64) -> f64 {
    if y > y_hat {
        -q
    } else {
        1.0 - q
    }
}

/// Pinball loss with the level checked to lie in `(0, 1)`.
pub fn pinball_loss(y: f64, y_hat: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile level {alpha} outside (0, 1)"
        )));
    }
    Ok(pinball(y, y_hat, alpha))
}

/// `‖mask ⊙ pred − target‖_F`. `target` is expected to be zero outside the
/// mask already.
pub fn masked_frobenius_loss(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<f64> {
    Ok(pred.hadamard(mask)?.sub(target)?.frobenius_norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropoutState {
    Off,
    Train,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutMode {
    pub state: DropoutState,
    pub rate: f64,
}

impl DropoutMode {
    pub const OFF: DropoutMode = DropoutMode {
        state: DropoutState::Off,
        rate: 0.0,
    };

    pub fn train(rate: f64) -> Self {
        DropoutMode {
            state: DropoutState::Train,
            rate,
        }
    }

    pub fn monte_carlo(rate: f64) -> Self {
        DropoutMode {
            state: DropoutState::MonteCarlo,
            rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.rate
            )));
        }
        Ok(())
    }

    /// Whether applying this mode can change its input.
    pub fn is_active(&self) -> bool {
        self.state != DropoutState::Off && self.rate > 0.0
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1/(1−rate)`. `None` when the mode is inactive.
pub fn dropout_mask<R: Rng>(
    rows: usize,
    cols: usize,
    mode: DropoutMode,
    rng: &mut R,
) -> Option<Tensor> {
    if !mode.is_active() {
        return None;
    }
    let keep = 1.0 - mode.rate;
    let scale = 1.0 / keep;
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut() {
        if rng.random::<f64>() < keep {
            *v = scale;
        }
    }
    Some(t)
}

pub fn dropout_apply(x: &Tensor, mode: DropoutMode, seed: u64) -> Result<Tensor> {
    mode.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dropout_mask(x.rows(), x.cols(), mode, &mut rng) {
        Some(mask) => x.hadamard(&mask),
        None => Ok(x.clone()),
    }
}

/// Glorot/Xavier uniform initialization for a `fan_in × fan_out` matrix.
pub fn glorot_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(fan_in, fan_out);
    for v in t.data_mut() {
        *v = rng.random_range(-limit..=limit);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            for (((w, m), v), &g) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g)
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
