use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t_k = k * dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                value: dt,
                constraint: "must be positive and finite",
            });
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "n_steps",
                value: 0.0,
                constraint: "must be at least 1",
            });
        }
        Ok(Self { dt, n_steps })
    }

    /// Grid covering `[0, horizon]` with step `dt`; the horizon is rounded to
    /// the nearest whole number of steps.
    pub fn with_horizon(dt: f64, horizon: f64) -> Result<Self> {
        let steps = (horizon / dt).round();
        if !(steps >= 1.0) {
            return Err(Error::InvalidParameter {
                name: "t_max",
                value: horizon,
                constraint: "must cover at least one step",
            });
        }
        Self::new(dt, steps as usize)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.t(self.n_steps)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.t(k))
    }

    /// Node closest to `t`, clamped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        let k = (t / self.dt).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_steps)
        }
    }

    /// Grid made of every `stride`-th node. `stride` must divide `n_steps`.
    pub fn coarsen(&self, stride: usize) -> Result<Self> {
        if stride == 0 || self.n_steps % stride != 0 {
            return Err(Error::InvalidParameter {
                name: "record_every",
                value: stride as f64,
                constraint: "must be positive and divide the number of steps",
            });
        }
        Self::new(self.dt * stride as f64, self.n_steps / stride)
    }

    /// Same horizon, `factor` times as many steps.
    pub fn refine(&self, factor: usize) -> Self {
        Self {
            dt: self.dt / factor as f64,
            n_steps: self.n_steps * factor,
        }
    }
}
