//! Exact brute-force ground truth at tiny scale: full graph enumeration,
//! exact pmfs, exact size-bias targets, and the chi-square GOF used to test
//! sampled couplings against them.

use crate::dist::Pmf;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::sizebias::size_bias_pmf;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Where an exact law came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumSource {
    pub model: &'static str,
    pub n: usize,
    pub lambda: f64,
    pub d: i64,
}

/// An exactly enumerated law with its moments.
#[derive(Debug, Clone)]
pub struct ExactLaw {
    pub pmf: Pmf,
    pub mean: f64,
    pub variance: f64,
    pub source: EnumSource,
}

/// Exact law of W_d for the Erdos-Renyi model by exhaustive enumeration of
/// all 2^C(n,2) edge subsets.
///
/// Enumeration follows a Gray code, so consecutive graphs differ by one edge
/// and the degree bookkeeping updates in O(1) per graph. The range is
/// partitioned by high-order bits across threads and the per-thread count
/// matrices merged by summation, so the result does not depend on threading.
pub fn er_exact_pmf(n: usize, lambda: f64, d: i64) -> Result<ExactLaw> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n = {n} must be >= 2")));
    }
    if n > 7 {
        return Err(Error::ResourceLimit(format!(
            "exact enumeration capped at n = 7 (2^21 graphs); got n = {n}"
        )));
    }
    let p = lambda / n as f64;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p = lambda/n = {p} outside [0, 1]")));
    }
    let edges = n * (n - 1) / 2;
    let total: u64 = 1 << edges;

    // Pair list: edge bit b joins pair_of[b].
    let mut pair_of = Vec::with_capacity(edges);
    for i in 0..n {
        for j in (i + 1)..n {
            pair_of.push((i, j));
        }
    }

    // counts[w][m]: number of graphs with W_d = w and m edges.
    let chunk_count = 32u64.min(total);
    let chunk_len = total / chunk_count;
    let counts = (0..chunk_count)
        .into_par_iter()
        .map(|c| {
            let start = c * chunk_len;
            let end = if c + 1 == chunk_count { total } else { start + chunk_len };
            enumerate_range(n, d, &pair_of, start, end, edges)
        })
        .reduce(
            || vec![vec![0u64; edges + 1]; n + 1],
            |mut a, b| {
                for (ra, rb) in a.iter_mut().zip(&b) {
                    for (x, y) in ra.iter_mut().zip(rb) {
                        *x += y;
                    }
                }
                a
            },
        );

    let mut weights = vec![0.0f64; n + 1];
    for (w, row) in counts.iter().enumerate() {
        let mut acc = 0.0;
        for (m, &c) in row.iter().enumerate() {
            if c > 0 {
                acc += c as f64 * p.powi(m as i32) * (1.0 - p).powi((edges - m) as i32);
            }
        }
        weights[w] = acc;
    }
    let mass: f64 = weights.iter().sum();
    if (mass - 1.0).abs() > 1e-12 {
        return Err(Error::InternalInvariant(format!(
            "enumeration weight total {mass} != 1"
        )));
    }
    let pmf = Pmf::from_unnormalized(0, weights)?;
    Ok(ExactLaw {
        mean: pmf.mean(),
        variance: pmf.variance(),
        pmf,
        source: EnumSource { model: "er", n, lambda, d },
    })
}

fn enumerate_range(
    n: usize,
    d: i64,
    pair_of: &[(usize, usize)],
    start: u64,
    end: u64,
    edges: usize,
) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; edges + 1]; n + 1];
    let mut deg = [0i64; 8];
    let mut m = 0usize;
    // State for Gray(start).
    let gray = start ^ (start >> 1);
    for (b, &(i, j)) in pair_of.iter().enumerate() {
        if gray >> b & 1 == 1 {
            deg[i] += 1;
            deg[j] += 1;
            m += 1;
        }
    }
    let mut count_d = (0..n).filter(|&i| deg[i] == d).count() as i64;
    counts[(n as i64 - count_d) as usize][m] += 1;
    for t in (start + 1)..end {
        let b = t.trailing_zeros() as usize;
        let (i, j) = pair_of[b];
        let flip_on = (t ^ (t >> 1)) >> b & 1 == 1;
        for v in [i, j] {
            count_d -= (deg[v] == d) as i64;
            deg[v] += if flip_on { 1 } else { -1 };
            count_d += (deg[v] == d) as i64;
        }
        if flip_on {
            m += 1;
        } else {
            m -= 1;
        }
        counts[(n as i64 - count_d) as usize][m] += 1;
    }
    counts
}

/// The exact size-biased law of W_d: the distributional target every coupled
/// W^s sample stream is tested against.
pub fn er_exact_size_bias_pmf(n: usize, lambda: f64, d: i64) -> Result<Pmf> {
    let law = er_exact_pmf(n, lambda, d)?;
    size_bias_pmf(&law.pmf)
}

/// Pearson chi-square GOF of integer samples against a finite target pmf.
///
/// Cells are pooled by ascending k until each pooled cell has expected count
/// at least five; a trailing short pool is merged backwards. Returns the
/// statistic and the chi-square tail p-value.
pub fn chi_square_gof(samples: &[i64], target: &Pmf) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("no samples".into()));
    }
    let offset = target.offset();
    let mut counts = vec![0u64; target.len()];
    for &s in samples {
        if s < offset || s > target.max_support() {
            // Impossible under the target: certain rejection.
            return Ok((f64::INFINITY, 0.0));
        }
        counts[(s - offset) as usize] += 1;
    }
    chi_square_gof_from_counts(offset, &counts, target)
}

/// GOF from a pre-tallied count vector (`counts[i]` observations of
/// `offset + i`).
pub fn chi_square_gof_from_counts(offset: i64, counts: &[u64], target: &Pmf) -> Result<(f64, f64)> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::DegenerateInput("no samples".into()));
    }
    let lo = offset.min(target.offset());
    let hi = (offset + counts.len() as i64 - 1).max(target.max_support());
    let get_count = |k: i64| -> u64 {
        if k < offset {
            0
        } else {
            counts.get((k - offset) as usize).copied().unwrap_or(0)
        }
    };
    for k in lo..=hi {
        if get_count(k) > 0 && target.p(k) == 0.0 {
            return Ok((f64::INFINITY, 0.0));
        }
    }

    // Ascending-k greedy pooling to expected count 5.
    let tot = total as f64;
    let mut pools: Vec<(f64, u64)> = Vec::new();
    let mut exp_acc = 0.0;
    let mut obs_acc = 0u64;
    for k in lo..=hi {
        exp_acc += tot * target.p(k);
        obs_acc += get_count(k);
        if exp_acc >= 5.0 {
            pools.push((exp_acc, obs_acc));
            exp_acc = 0.0;
            obs_acc = 0;
        }
    }
    if exp_acc > 0.0 || obs_acc > 0 {
        if let Some(last) = pools.last_mut() {
            last.0 += exp_acc;
            last.1 += obs_acc;
        } else {
            pools.push((exp_acc, obs_acc));
        }
    }
    debug_assert!(pools.iter().all(|&(e, _)| e >= 5.0 || pools.len() == 1));
    if pools.len() < 2 {
        return Err(Error::DegenerateInput(
            "all probability mass pools into one cell".into(),
        ));
    }
    let stat: f64 = pools
        .iter()
        .map(|&(e, o)| {
            let diff = o as f64 - e;
            diff * diff / e
        })
        .sum();
    let df = (pools.len() - 1) as f64;
    let chi = ChiSquared::new(df)
        .map_err(|e| Error::InternalInvariant(format!("chi-square df {df}: {e}")))?;
    Ok((stat, chi.sf(stat)))
}

/// Multinomial(total, target) counts drawn via the conditional-binomial
/// chain; used to exercise the GOF machinery cheaply.
pub fn sample_multinomial_counts(total: u64, target: &Pmf, stream: &mut Stream) -> Vec<u64> {
    use rand_distr::{Binomial, Distribution};
    let mut out = vec![0u64; target.len()];
    let mut remaining = total;
    let mut mass_left = 1.0f64;
    for (i, &w) in target.weights().iter().enumerate() {
        if remaining == 0 || mass_left <= 0.0 {
            break;
        }
        let p = (w / mass_left).clamp(0.0, 1.0);
        let draw = if p >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, p).map(|b| b.sample(stream)).unwrap_or(0)
        };
        out[i] = draw;
        remaining -= draw;
        mass_left -= w;
    }
    if remaining > 0 {
        *out.last_mut().unwrap() += remaining;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::loc_distance;
    use crate::rng::{derive_stream, tags};

    #[test]
    fn two_vertex_single_edge() {
        let law = er_exact_pmf(2, 1.0, 0).unwrap();
        assert!((law.pmf.p(0) - 0.5).abs() < 1e-15);
        assert!(law.pmf.p(1).abs() < 1e-15);
        assert!((law.pmf.p(2) - 0.5).abs() < 1e-15);
        assert!((law.mean - 1.0).abs() < 1e-12);
        assert!((law.variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complete_graph_is_point_mass() {
        let law = er_exact_pmf(3, 3.0, 2).unwrap();
        assert!(loc_distance(&law.pmf, &Pmf::delta(0)) < 1e-15);
    }

    #[test]
    fn moments_recompute_from_pmf() {
        let law = er_exact_pmf(5, 1.5, 1).unwrap();
        assert!((law.mean - law.pmf.mean()).abs() < 1e-12);
        assert!((law.variance - law.pmf.variance()).abs() < 1e-12);
    }

    #[test]
    fn size_bias_of_two_vertex_law() {
        let sb = er_exact_size_bias_pmf(2, 1.0, 0).unwrap();
        assert!(loc_distance(&sb, &Pmf::delta(2)) < 1e-15);
        let total: f64 = sb.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn size_bias_mean_identity() {
        let law = er_exact_pmf(4, 2.0, 1).unwrap();
        let sb = er_exact_size_bias_pmf(4, 2.0, 1).unwrap();
        let ew2: f64 = law.pmf.iter().map(|(k, w)| (k * k) as f64 * w).sum();
        assert!((sb.mean() - ew2 / law.mean).abs() < 1e-12);
    }

    #[test]
    fn enumeration_bounds() {
        assert!(matches!(er_exact_pmf(8, 1.0, 0), Err(Error::ResourceLimit(_))));
        assert!(matches!(er_exact_pmf(1, 1.0, 0), Err(Error::InvalidArgument(_))));
        assert!(er_exact_pmf(7, 1.0, 0).is_ok());
    }

    #[test]
    fn gof_calibration_and_power() {
        let target = Pmf::binomial(8, 0.4).unwrap();
        let mut rejects = 0;
        for trial in 0..200u64 {
            let mut s = derive_stream(1000, trial, tags::TEST);
            let counts = sample_multinomial_counts(1_000_000, &target, &mut s);
            let (_, p) = chi_square_gof_from_counts(target.offset(), &counts, &target).unwrap();
            rejects += (p < 0.01) as u32;
        }
        // Be(0.01) over 200 trials: mean 2, P(> 9) ~ 6e-5.
        assert!(rejects <= 9, "rejected {rejects}/200 at the 1% level");

        // Power: a shifted target is rejected outright.
        let mut s = derive_stream(1001, 0, tags::TEST);
        let counts = sample_multinomial_counts(1_000_000, &target, &mut s);
        let shifted = target.shift(1);
        let (_, p) = chi_square_gof_from_counts(target.offset(), &counts, &shifted).unwrap();
        assert!(p < 1e-6, "p = {p}");
    }

    #[test]
    fn gof_pooling_and_degenerate() {
        let target = Pmf::binomial(30, 0.5).unwrap();
        let samples: Vec<i64> = (0..40).map(|i| 13 + (i % 5)).collect();
        // Works despite tiny tails: pooling keeps expected counts >= 5.
        let (stat, _) = chi_square_gof(&samples, &target).unwrap();
        assert!(stat.is_finite());

        let point = Pmf::delta(3);
        let at_point: Vec<i64> = vec![3; 50];
        assert!(matches!(
            chi_square_gof(&at_point, &point),
            Err(Error::DegenerateInput(_))
        ));

        // A sample outside the support is a certain rejection.
        let (stat, p) = chi_square_gof(&[64], &target).unwrap();
        assert!(stat.is_infinite() && p == 0.0);
    }
}
