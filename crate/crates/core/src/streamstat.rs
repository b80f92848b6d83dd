//! Streaming statistics and the discrete filters used by the rate heuristic.

use alloc::collections::VecDeque;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Error, Result};

/// Standard normal quantile for p = 0.95, truncated to the five decimals the
/// estimator is defined with.
pub const Z95: f64 = 1.64485;

/// Single-pass mean and variance (Welford), mergeable with Chan's update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OnlineMoments {
    pub n: u64,
    pub mean: f64,
    /// Low-order part of the running mean; the mean is `mean + mean_lo`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub mean_lo: f64,
    /// Sum of squared deviations from the mean.
    pub m2: f64,
}

impl OnlineMoments {
    pub const fn new() -> Self {
        Self {
            n: 0,
            mean: 0.0,
            mean_lo: 0.0,
            m2: 0.0,
        }
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Self::new();
        m.extend(xs.iter().copied());
        m
    }

    #[inline]
    pub fn update(&mut self, x: f64) {
        self.n += 1;
        let delta = (x - self.mean) - self.mean_lo;
        self.add_to_mean(delta / self.n as f64);
        self.m2 += delta * ((x - self.mean) - self.mean_lo);
    }

    // Compensated so the rounding of a large mean does not leak into m2.
    #[inline]
    fn add_to_mean(&mut self, step: f64) {
        let s = self.mean + step;
        let bp = s - self.mean;
        let err = (self.mean - (s - bp)) + (step - bp);
        let lo = self.mean_lo + err;
        self.mean = s + lo;
        self.mean_lo = lo - (self.mean - s);
    }

    pub fn extend<I: IntoIterator<Item = f64>>(&mut self, xs: I) {
        for x in xs {
            self.update(x);
        }
    }

    /// Combines the moments of two disjoint streams.
    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let nf = n as f64;
        let delta = (other.mean - self.mean) + (other.mean_lo - self.mean_lo);
        let mut out = *self;
        out.n = n;
        out.add_to_mean(delta * other.n as f64 / nf);
        out.m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / nf;
        out
    }

    /// Sample variance, `m2 / (n - 1)`. `None` below two observations.
    pub fn variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2 / (self.n - 1) as f64)
    }

    pub fn population_variance(&self) -> Option<f64> {
        (self.n >= 1).then(|| self.m2 / self.n as f64)
    }

    pub fn std_dev(&self) -> Option<f64> {
        self.variance().map(libm::sqrt)
    }

    pub fn clear(&mut self) {
        *self = Self::new();
    }
}

/// Functional form of [`OnlineMoments::update`].
pub fn update_moments(mut m: OnlineMoments, x: f64) -> OnlineMoments {
    m.update(x);
    m
}

/// Gaussian 95th quantile estimated from sample moments:
/// `mean + 1.64485 * stddev`.
pub fn quantile95(moments: &OnlineMoments) -> Result<f64> {
    let sd = moments.std_dev().ok_or(Error::InsufficientData {
        needed: 2,
        got: moments.n,
    })?;
    Ok(moments.mean + Z95 * sd)
}

/// Discrete, symmetric convolution kernel indexed `-radius..=radius`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterKernel {
    radius: usize,
    weights: Vec<f64>,
    normalized: bool,
}

impl FilterKernel {
    /// Builds a kernel from explicit weights; `weights.len()` must be odd.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.len() % 2 == 0 {
            return Err(Error::InvalidArgument("kernel length must be odd"));
        }
        Ok(Self {
            radius: weights.len() / 2,
            weights,
            normalized: false,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Weight at offset `x` from the centre.
    pub fn weight(&self, x: isize) -> Option<f64> {
        let idx = x + self.radius as isize;
        if idx < 0 {
            return None;
        }
        self.weights.get(idx as usize).copied()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Response at the centre of `taps`, which must hold exactly
    /// `2 * radius + 1` values.
    #[inline]
    pub fn dot(&self, taps: &[f64]) -> f64 {
        debug_assert_eq!(taps.len(), self.weights.len());
        taps.iter().zip(&self.weights).map(|(s, w)| s * w).sum()
    }
}

fn sample_kernel(radius: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r).map(|x| f(x as f64)).collect()
}

/// Unit-variance Gaussian sampled at integer offsets,
/// `exp(-x^2 / 2) / sqrt(2 pi)`, optionally rescaled to sum to one.
pub fn gaussian_kernel(radius: usize, normalize: bool) -> Result<FilterKernel> {
    if radius < 1 {
        return Err(Error::InvalidArgument("gaussian radius must be >= 1"));
    }
    let norm = libm::sqrt(2.0 * PI);
    let mut weights = sample_kernel(radius, |x| libm::exp(-x * x / 2.0) / norm);
    if normalize {
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
    }
    Ok(FilterKernel {
        radius,
        weights,
        normalized: normalize,
    })
}

/// Laplacian of a Gaussian with standard deviation `sigma`, sampled at integer
/// offsets. Not normalized: the discrete weights do not sum to zero.
pub fn log_kernel(sigma: f64, radius: usize) -> Result<FilterKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument("LoG sigma must be > 0"));
    }
    if radius < 1 {
        return Err(Error::InvalidArgument("LoG radius must be >= 1"));
    }
    let root = libm::sqrt(2.0 * PI);
    let s2 = sigma * sigma;
    let s3 = s2 * sigma;
    let s5 = s3 * s2;
    let weights = sample_kernel(radius, |x| {
        let g = libm::exp(-x * x / (2.0 * s2));
        x * x * g / (root * s5) - g / (root * s3)
    });
    Ok(FilterKernel {
        radius,
        weights,
        normalized: false,
    })
}

/// Valid-region (unpadded) convolution. `out` is cleared and receives
/// `input.len() - 2 * radius` values, or nothing if the input is too short.
pub fn convolve_valid_into(input: &[f64], kernel: &FilterKernel, out: &mut Vec<f64>) {
    out.clear();
    let width = kernel.weights.len();
    if input.len() < width {
        return;
    }
    out.extend(input.windows(width).map(|taps| kernel.dot(taps)));
}

pub fn convolve_valid(input: &[f64], kernel: &FilterKernel) -> Vec<f64> {
    let mut out = Vec::new();
    convolve_valid_into(input, kernel, &mut out);
    out
}

/// Sliding FIFO window `S` of transaction counts and its filtered image `S'`.
///
/// The window slides one-in-one-out: once `capacity` values are held, every
/// push evicts the oldest.
#[derive(Debug, Clone)]
pub struct SampleWindow {
    capacity: usize,
    samples: VecDeque<f64>,
    filtered: Vec<f64>,
}

impl SampleWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("window size must be >= 1"));
        }
        Ok(Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
            filtered: Vec::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    /// Appends `x`, returning the evicted value if the window was full.
    pub fn push(&mut self, x: f64) -> Option<f64> {
        let evicted = if self.is_full() {
            self.samples.pop_front()
        } else {
            None
        };
        self.samples.push_back(x);
        evicted
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.samples.iter().copied()
    }

    /// Recomputes `S'` with `kernel` and returns it. Empty when
    /// `len() <= 2 * radius`.
    pub fn filter(&mut self, kernel: &FilterKernel) -> &[f64] {
        let contiguous = self.samples.make_contiguous();
        convolve_valid_into(contiguous, kernel, &mut self.filtered);
        &self.filtered
    }

    /// Last result of [`SampleWindow::filter`].
    pub fn filtered(&self) -> &[f64] {
        &self.filtered
    }

    pub fn clear(&mut self) {
        self.samples.clear();
        self.filtered.clear();
    }
}
