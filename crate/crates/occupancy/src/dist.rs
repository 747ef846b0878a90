//! Integer-supported distributions, the translated Poisson family,
//! probability metrics, and smoothness functionals.

use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;
use std::io::{BufRead, Write};

/// Absolute tolerance for probability-mass comparisons.
pub const PROB_TOL: f64 = 1e-12;

/// Cap on the support length of constructed pmfs.
pub const MAX_SUPPORT: usize = 1 << 24;

/// A finitely supported probability mass function on the integers.
///
/// `offset` is the smallest support point; `weights[k]` is the probability of
/// `offset + k`. Invariants: weights sum to 1 within `1e-12`, all weights are
/// non-negative, and the first and last weights are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    offset: i64,
    weights: Vec<f64>,
}

impl Pmf {
    /// Build from already-normalized weights. Leading/trailing zeros are
    /// trimmed; the invariants are checked.
    pub fn new(offset: i64, weights: Vec<f64>) -> Result<Pmf> {
        let (offset, weights) = trim(offset, weights)?;
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidArgument(format!(
                "pmf weights sum to {sum}, expected 1 within {PROB_TOL}"
            )));
        }
        Ok(Pmf { offset, weights })
    }

    /// Build from non-negative weights with any positive total; normalizes.
    pub fn from_unnormalized(offset: i64, weights: Vec<f64>) -> Result<Pmf> {
        let (offset, mut weights) = trim(offset, weights)?;
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::DegenerateInput(format!("total mass {sum}")));
        }
        for w in weights.iter_mut() {
            *w /= sum;
        }
        Ok(Pmf { offset, weights })
    }

    /// Point mass at `k`.
    pub fn delta(k: i64) -> Pmf {
        Pmf { offset: k, weights: vec![1.0] }
    }

    /// Empirical pmf from a count vector (`counts[k]` observations of
    /// `offset + k`).
    pub fn from_counts(offset: i64, counts: &[u64]) -> Result<Pmf> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::DegenerateInput("empty count vector".into()));
        }
        let w = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Pmf::from_unnormalized(offset, w)
    }

    /// Binomial(n, p), computed in log space.
    pub fn binomial(n: u64, p: f64) -> Result<Pmf> {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(Error::InvalidArgument(format!("binomial p = {p}")));
        }
        if p == 0.0 {
            return Ok(Pmf::delta(0));
        }
        if p == 1.0 {
            return Ok(Pmf::delta(n as i64));
        }
        if n as usize >= MAX_SUPPORT {
            return Err(Error::ResourceLimit(format!("binomial support {n}")));
        }
        let (lp, lq) = (p.ln(), (-p).ln_1p());
        let lcn = ln_gamma(n as f64 + 1.0);
        let weights: Vec<f64> = (0..=n)
            .map(|k| {
                let kf = k as f64;
                (lcn - ln_gamma(kf + 1.0) - ln_gamma((n - k) as f64 + 1.0)
                    + kf * lp
                    + (n - k) as f64 * lq)
                    .exp()
            })
            .collect();
        Pmf::from_unnormalized(0, weights)
    }

    /// Poisson(lambda) truncated where each tail holds mass below `eps`,
    /// then renormalized. Log-space weights, so no factorial overflow.
    pub fn poisson(lambda: f64, eps: f64) -> Result<Pmf> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("poisson lambda = {lambda}")));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("poisson eps = {eps}")));
        }
        let mode = lambda.floor() as i64;
        let lp_at = |k: i64| -> f64 { k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0) };
        // Expand until both endpoint weights are far below the tail target,
        // then trim back to the exact tail criterion.
        let spread = (10.0 * lambda.sqrt()).ceil() as i64 + 10;
        let mut lo = (mode - spread).max(0);
        let mut hi = mode + spread;
        let floor = eps.ln() + (eps.min(1e-3)).ln();
        while lo > 0 && lp_at(lo) > floor {
            lo = (lo - spread).max(0);
        }
        while lp_at(hi) > floor {
            hi += spread;
            if (hi - lo) as usize > MAX_SUPPORT {
                return Err(Error::ResourceLimit(format!(
                    "poisson support for lambda = {lambda} exceeds {MAX_SUPPORT}"
                )));
            }
        }
        if (hi - lo) as usize + 1 > MAX_SUPPORT {
            return Err(Error::ResourceLimit(format!(
                "poisson support for lambda = {lambda} exceeds {MAX_SUPPORT}"
            )));
        }
        let mut weights: Vec<f64> = (lo..=hi).map(lp_at).map(f64::exp).collect();
        // Trim each tail to cumulative mass < eps.
        let mut cum = 0.0;
        let mut cut_lo = 0;
        for (i, &w) in weights.iter().enumerate() {
            if cum + w >= eps {
                cut_lo = i;
                break;
            }
            cum += w;
        }
        cum = 0.0;
        let mut cut_hi = weights.len() - 1;
        for (i, &w) in weights.iter().enumerate().rev() {
            if cum + w >= eps {
                cut_hi = i;
                break;
            }
            cum += w;
        }
        let offset = lo + cut_lo as i64;
        weights.truncate(cut_hi + 1);
        weights.drain(..cut_lo);
        Pmf::from_unnormalized(offset, weights)
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Largest support point.
    pub fn max_support(&self) -> i64 {
        self.offset + self.weights.len() as i64 - 1
    }

    /// Probability of `k` (zero off the stored support).
    #[inline]
    pub fn p(&self, k: i64) -> f64 {
        if k < self.offset {
            return 0.0;
        }
        let i = (k - self.offset) as usize;
        self.weights.get(i).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, &w)| (self.offset + i as i64) as f64 * w)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let d = (self.offset + i as i64) as f64 - mu;
                d * d * w
            })
            .sum()
    }

    /// The pmf of `X + t`.
    pub fn shift(&self, t: i64) -> Pmf {
        Pmf { offset: self.offset + t, weights: self.weights.clone() }
    }

    /// Iterate `(k, p(k))` over the support.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.weights.iter().enumerate().map(|(i, &w)| (self.offset + i as i64, w))
    }

    /// Serialize as CSV lines `k,probability` with a one-line header.
    /// Reals carry 17 significant digits so the round trip is bit-faithful.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,probability")?;
        for (k, p) in self.iter() {
            writeln!(w, "{k},{}", format_g17(p))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Pmf> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty pmf csv".into()))??;
        if header.trim() != "k,probability" {
            return Err(Error::Parse(format!("bad pmf header: {header}")));
        }
        let mut offset = None;
        let mut next_k = 0i64;
        let mut weights = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (ks, ps) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad pmf row: {line}")))?;
            let k: i64 = ks.trim().parse().map_err(|e| Error::Parse(format!("{e}: {ks}")))?;
            let p: f64 = ps.trim().parse().map_err(|e| Error::Parse(format!("{e}: {ps}")))?;
            match offset {
                None => {
                    offset = Some(k);
                    next_k = k;
                }
                Some(_) if k != next_k => {
                    return Err(Error::Parse(format!(
                        "non-contiguous pmf support at k = {k}, expected {next_k}"
                    )));
                }
                _ => {}
            }
            next_k += 1;
            weights.push(p);
        }
        Pmf::new(offset.ok_or_else(|| Error::Parse("pmf csv has no rows".into()))?, weights)
    }
}

fn trim(offset: i64, mut weights: Vec<f64>) -> Result<(i64, Vec<f64>)> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("pmf weights must be finite and >= 0".into()));
    }
    let lead = weights.iter().take_while(|&&w| w == 0.0).count();
    weights.drain(..lead);
    while weights.last() == Some(&0.0) {
        weights.pop();
    }
    if weights.is_empty() {
        return Err(Error::DegenerateInput("pmf has no positive weight".into()));
    }
    Ok((offset + lead as i64, weights))
}

/// 17-significant-digit rendering; round-trips through `str::parse::<f64>`.
pub fn format_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parameters of the translated Poisson family TP(mu, sigma2):
/// `Z - s ~ Po(sigma2 + gamma)` with `s = floor(mu - sigma2)` and
/// `gamma = mu - sigma2 - s`, so the mean is exactly `mu` and the variance
/// lies in `[sigma2, sigma2 + 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpParams {
    pub mu: f64,
    pub sigma2: f64,
    pub s: i64,
    pub gamma: f64,
    pub lambda: f64,
}

pub fn tp_params(mu: f64, sigma2: f64) -> Result<TpParams> {
    if !mu.is_finite() || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!("tp_params({mu}, {sigma2})")));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma2 = {sigma2} must be > 0")));
    }
    let s = (mu - sigma2).floor();
    let gamma = mu - sigma2 - s;
    Ok(TpParams { mu, sigma2, s: s as i64, gamma, lambda: sigma2 + gamma })
}

/// The pmf of `s + Po(sigma2 + gamma)`, truncated at tail mass `support_eps`.
pub fn tp_pmf(params: TpParams, support_eps: f64) -> Result<Pmf> {
    if !(support_eps > 0.0 && support_eps <= 1e-6) {
        return Err(Error::InvalidArgument(format!(
            "support_eps = {support_eps} outside (0, 1e-6]"
        )));
    }
    Ok(Pmf::poisson(params.lambda, support_eps)?.shift(params.s))
}

/// Total variation distance: half the absolute mass difference over the
/// union support. Always in `[0, 1]`.
pub fn tv_distance(p: &Pmf, q: &Pmf) -> f64 {
    let lo = p.offset().min(q.offset());
    let hi = p.max_support().max(q.max_support());
    let mut acc = 0.0;
    for k in lo..=hi {
        acc += (p.p(k) - q.p(k)).abs();
    }
    (acc / 2.0).min(1.0)
}

/// Local distance: the largest pointwise probability difference.
pub fn loc_distance(p: &Pmf, q: &Pmf) -> f64 {
    let lo = p.offset().min(q.offset());
    let hi = p.max_support().max(q.max_support());
    let mut m: f64 = 0.0;
    for k in lo..=hi {
        m = m.max((p.p(k) - q.p(k)).abs());
    }
    m
}

/// The smoothness functional S_l: the absolute sum of the l-th backward
/// differences of the pmf extended by zeros. The sign pattern attains the
/// supremum over test functions bounded by one, so for finite support this
/// equals the functional exactly.
pub fn smoothness(p: &Pmf, l: u32) -> f64 {
    assert!(l >= 1, "smoothness order must be >= 1");
    let mut v: Vec<f64> = p.weights().to_vec();
    for _ in 0..l {
        let mut next = Vec::with_capacity(v.len() + 1);
        next.push(v[0]);
        for i in 1..v.len() {
            next.push(v[i] - v[i - 1]);
        }
        next.push(-v[v.len() - 1]);
        v = next;
    }
    v.iter().map(|x| x.abs()).sum()
}

/// Supremum over the integers of the gap between the TP(mu, sigma2) pmf and
/// the normal density with the same mu, sigma2.
pub fn tp_vs_normal_gap(params: TpParams) -> Result<f64> {
    if !(params.sigma2 >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tp_vs_normal_gap requires sigma2 >= 1, got {}",
            params.sigma2
        )));
    }
    let pmf = tp_pmf(params, 1e-12)?;
    let sigma = params.sigma2.sqrt();
    let lo = pmf.offset().min((params.mu - 12.0 * sigma).floor() as i64);
    let hi = pmf.max_support().max((params.mu + 12.0 * sigma).ceil() as i64);
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut gap: f64 = 0.0;
    for k in lo..=hi {
        let z = (k as f64 - params.mu) / sigma;
        let dens = norm * (-0.5 * z * z).exp();
        gap = gap.max((pmf.p(k) - dens).abs());
    }
    Ok(gap)
}

/// True iff `p(s-1) p(s+1) <= p(s)^2 + 1e-15` everywhere and the support is
/// a contiguous interval.
pub fn is_log_concave(p: &Pmf) -> bool {
    let w = p.weights();
    if w.iter().any(|&x| x <= 0.0) {
        // Trimmed ends are positive, so an interior zero breaks contiguity.
        return false;
    }
    for s in 1..w.len().saturating_sub(1) {
        if w[s - 1] * w[s + 1] > w[s] * w[s] + 1e-15 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tp_params_examples() {
        let p = tp_params(10.0, 4.0).unwrap();
        assert_eq!((p.s, p.gamma, p.lambda), (6, 0.0, 4.0));
        let p = tp_params(10.5, 4.0).unwrap();
        assert_eq!(p.s, 6);
        assert!(close(p.gamma, 0.5, 1e-12) && close(p.lambda, 4.5, 1e-12));
        let p = tp_params(0.0, 2.3).unwrap();
        assert_eq!(p.s, -3);
        assert!(close(p.gamma, 0.7, 1e-12) && close(p.lambda, 3.0, 1e-12));
        assert!(tp_params(f64::NAN, 1.0).is_err());
        assert!(tp_params(0.0, 0.0).is_err());
    }

    #[test]
    fn tp_pmf_poisson_at_zero() {
        let params = tp_params(0.0, 1.0).unwrap();
        let pmf = tp_pmf(params, 1e-9).unwrap();
        assert!(close(pmf.p(-1), (-1.0f64).exp(), 1e-9));
    }

    #[test]
    fn tp_pmf_mean_and_variance() {
        for (mu, s2) in [(0.0, 1.0), (10.5, 4.0), (-3.25, 7.7), (100.0, 55.5)] {
            let params = tp_params(mu, s2).unwrap();
            let eps = 1e-9;
            let pmf = tp_pmf(params, eps).unwrap();
            assert!(
                (pmf.mean() - mu).abs() <= 10.0 * eps * (params.s.abs() as f64 + params.lambda),
                "mean {} vs {}",
                pmf.mean(),
                mu
            );
            let v = pmf.variance();
            assert!(v >= s2 - 1e-6 && v <= s2 + 1.0, "variance {v} vs [{s2}, {}]", s2 + 1.0);
        }
    }

    #[test]
    fn tp_pmf_rejects_bad_eps() {
        let params = tp_params(0.0, 1.0).unwrap();
        assert!(tp_pmf(params, 0.0).is_err());
        assert!(tp_pmf(params, 1e-3).is_err());
    }

    #[test]
    fn tv_examples() {
        let p = Pmf::new(0, vec![0.5, 0.5]).unwrap();
        assert_eq!(tv_distance(&p, &p), 0.0);
        let d0 = Pmf::delta(0);
        let d1 = Pmf::delta(1);
        assert!(close(tv_distance(&d0, &d1), 1.0, 1e-15));
        assert!(close(tv_distance(&p, &d0), 0.5, 1e-15));
    }

    #[test]
    fn loc_examples() {
        let p = Pmf::new(0, vec![0.5, 0.5]).unwrap();
        let q = Pmf::new(0, vec![0.25, 0.75]).unwrap();
        assert_eq!(loc_distance(&p, &p), 0.0);
        assert!(close(loc_distance(&Pmf::delta(0), &Pmf::delta(1)), 1.0, 1e-15));
        assert!(close(loc_distance(&p, &q), 0.25, 1e-15));
    }

    #[test]
    fn smoothness_point_mass() {
        let d = Pmf::delta(3);
        assert!(close(smoothness(&d, 1), 2.0, 1e-15));
        assert!(close(smoothness(&d, 2), 4.0, 1e-15));
    }

    #[test]
    fn smoothness_bernoulli_half_second_order() {
        let p = Pmf::binomial(1, 0.5).unwrap();
        assert!(close(smoothness(&p, 2), 2.0, 1e-12));
    }

    #[test]
    fn smoothness_is_twice_tv_to_shift() {
        for pmf in [
            Pmf::binomial(7, 0.3).unwrap(),
            Pmf::poisson(4.4, 1e-10).unwrap(),
            Pmf::new(2, vec![0.25, 0.5, 0.25]).unwrap(),
        ] {
            let s1 = smoothness(&pmf, 1);
            let tv = tv_distance(&pmf, &pmf.shift(1));
            assert!(close(s1, 2.0 * tv, 1e-12), "{s1} vs {}", 2.0 * tv);
        }
    }

    #[test]
    fn gap_examples() {
        let g4 = tp_vs_normal_gap(tp_params(0.0, 4.0).unwrap()).unwrap();
        assert!(g4.is_finite() && g4 < 1.0 && g4 > 0.0);
        // mu-shift invariance by one integer.
        let a = tp_vs_normal_gap(tp_params(3.25, 9.0).unwrap()).unwrap();
        let b = tp_vs_normal_gap(tp_params(4.25, 9.0).unwrap()).unwrap();
        assert!(close(a, b, 1e-12));
        assert!(tp_vs_normal_gap(tp_params(0.0, 0.5).unwrap()).is_err());
    }

    #[test]
    fn log_concave_examples() {
        assert!(is_log_concave(&Pmf::binomial(10, 0.3).unwrap()));
        let gap = Pmf::new(0, vec![0.5, 0.0, 0.5]).unwrap();
        assert!(!is_log_concave(&gap));
        assert!(is_log_concave(&Pmf::delta(5)));
        assert!(is_log_concave(&Pmf::poisson(3.0, 1e-10).unwrap()));
    }

    #[test]
    fn pmf_invariants_on_construction() {
        let p = Pmf::new(0, vec![0.0, 0.25, 0.75, 0.0]).unwrap();
        assert_eq!(p.offset(), 1);
        assert_eq!(p.len(), 2);
        assert!(Pmf::new(0, vec![0.5, 0.4]).is_err());
        assert!(Pmf::new(0, vec![-0.1, 1.1]).is_err());
        assert!(Pmf::from_unnormalized(0, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn csv_round_trip_bit_faithful() {
        let p = Pmf::poisson(17.77, 1e-10).unwrap().shift(-6);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = Pmf::read_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(p.offset(), q.offset());
        assert_eq!(p.len(), q.len());
        for (a, b) in p.weights().iter().zip(q.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn binomial_mean_variance() {
        let p = Pmf::binomial(40, 0.3).unwrap();
        assert!(close(p.mean(), 12.0, 1e-9));
        assert!(close(p.variance(), 8.4, 1e-9));
    }
}
