//! Shared estimation helpers: running moments, L_q norms with standard
//! errors, and multinomial bootstrap resampling.

use crate::rng::Stream;
use rand_distr::{Binomial, Distribution};

/// Welford accumulator with compensated summation semantics.
#[derive(Debug, Clone, Default)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn se_mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    /// Merge two accumulators (parallel reduction).
    pub fn merge(mut self, other: &RunningMoments) -> RunningMoments {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other.clone();
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 =
            self.m2 + other.m2 + delta * delta * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
        self.mean = mean;
        self.m2 = m2;
        self
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    let mut acc = RunningMoments::new();
    for &x in xs {
        acc.push(x);
    }
    acc.mean()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let mut acc = RunningMoments::new();
    for &x in xs {
        acc.push(x);
    }
    (acc.mean(), acc.se_mean())
}

/// `(E |X|^q)^{1/q}` over the sample.
pub fn lq_norm(xs: &[f64], q: u32) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().map(|x| x.abs().powi(q as i32)).sum::<f64>() / xs.len() as f64;
    m.powf(1.0 / q as f64)
}

/// L_q norm with a delta-method standard error.
///
/// With m the sample mean of |X|^q, the norm is m^{1/q} and
/// se = m^{1/q-1}/q * se(m).
pub fn lq_norm_with_se(xs: &[f64], q: u32) -> (f64, f64) {
    let mut acc = RunningMoments::new();
    for &x in xs {
        acc.push(x.abs().powi(q as i32));
    }
    let m = acc.mean();
    if m <= 0.0 {
        return (0.0, 0.0);
    }
    let norm = m.powf(1.0 / q as f64);
    let se = m.powf(1.0 / q as f64 - 1.0) / q as f64 * acc.se_mean();
    (norm, se)
}

/// Bootstrap standard error of `f` applied to resamples of `xs`.
pub fn bootstrap_se(xs: &[f64], resamples: usize, stream: &mut Stream, f: impl Fn(&[f64]) -> f64) -> f64 {
    let n = xs.len();
    if n < 2 || resamples < 2 {
        return 0.0;
    }
    let mut buf = vec![0.0; n];
    let mut acc = RunningMoments::new();
    for _ in 0..resamples {
        for slot in buf.iter_mut() {
            *slot = xs[stream.index(n)];
        }
        acc.push(f(&buf));
    }
    acc.sd()
}

/// Multinomial resample of a count vector with fixed total, via the
/// conditional-binomial chain. Deterministic given the stream.
pub fn multinomial_resample(counts: &[u64], stream: &mut Stream) -> Vec<u64> {
    let total: u64 = counts.iter().sum();
    let mut out = vec![0u64; counts.len()];
    let mut remaining = total;
    let mut mass_left: f64 = total as f64;
    for (i, &c) in counts.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if mass_left <= 0.0 {
            out[i] = 0;
            continue;
        }
        let p = (c as f64 / mass_left).clamp(0.0, 1.0);
        let draw = if p >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, p).map(|b| b.sample(stream)).unwrap_or(0)
        };
        out[i] = draw;
        remaining -= draw;
        mass_left -= c as f64;
    }
    // Leftover mass from rounding goes to the last cell.
    if remaining > 0 {
        if let Some(last) = out.last_mut() {
            *last += remaining;
        }
    }
    out
}
