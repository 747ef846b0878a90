//! Sparse Erdos-Renyi occupancy: graph sampling, the statistic W_d, its
//! closed-form moments, the bounded size-bias coupling, and the local
//! T-statistics controlling the conditional second moment of the coupling.

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::sizebias::{sample_increment, CouplingRecord, IncrementLaw};
use statrs::function::gamma::ln_gamma;
use std::io::{BufRead, Write};

/// Hard cap on the bitset adjacency representation.
pub const MAX_VERTICES: usize = 4096;

/// An Erdos-Renyi realization: adjacency bitset rows plus the degree vector.
#[derive(Debug, Clone)]
pub struct ErSample {
    n: usize,
    lambda: f64,
    words: usize,
    adj: Vec<u64>,
    degrees: Vec<u32>,
}

impl ErSample {
    /// The empty graph on n vertices with edge probability lambda / n.
    pub fn empty(n: usize, lambda: f64) -> Result<ErSample> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("n = {n} must be >= 2")));
        }
        if n > MAX_VERTICES {
            return Err(Error::ResourceLimit(format!(
                "bitset adjacency capped at {MAX_VERTICES} vertices"
            )));
        }
        if !(lambda > 0.0) || lambda > n as f64 {
            return Err(Error::InvalidArgument(format!(
                "lambda = {lambda} outside (0, n]"
            )));
        }
        let words = n.div_ceil(64);
        Ok(ErSample {
            n,
            lambda,
            words,
            adj: vec![0; words * n],
            degrees: vec![0; n],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p(&self) -> f64 {
        self.lambda / self.n as f64
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn degree(&self, i: usize) -> u32 {
        self.degrees[i]
    }

    pub fn edge_count(&self) -> u64 {
        self.degrees.iter().map(|&d| d as u64).sum::<u64>() / 2
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    /// Set or clear the edge i-j, keeping the degree vector consistent.
    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        assert_ne!(i, j, "no self-loops");
        if self.has_edge(i, j) == present {
            return;
        }
        for (a, b) in [(i, j), (j, i)] {
            self.adj[a * self.words + b / 64] ^= 1u64 << (b % 64);
        }
        let delta = if present { 1 } else { u32::MAX };
        self.degrees[i] = self.degrees[i].wrapping_add(delta);
        self.degrees[j] = self.degrees[j].wrapping_add(delta);
    }

    /// Sorted edge list (i < j).
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.edge_count() as usize);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.has_edge(i, j) {
                    out.push((i as u32, j as u32));
                }
            }
        }
        out
    }

    /// k-th neighbor of i (0-based, ascending).
    fn kth_neighbor(&self, i: usize, mut k: usize) -> usize {
        let row = &self.adj[i * self.words..(i + 1) * self.words];
        for (w, &word) in row.iter().enumerate() {
            let c = word.count_ones() as usize;
            if k < c {
                let mut word = word;
                for _ in 0..k {
                    word &= word - 1;
                }
                return w * 64 + word.trailing_zeros() as usize;
            }
            k -= c;
        }
        unreachable!("neighbor rank out of range")
    }

    /// k-th non-neighbor of i, excluding i itself (0-based, ascending).
    fn kth_non_neighbor(&self, i: usize, mut k: usize) -> usize {
        let row = &self.adj[i * self.words..(i + 1) * self.words];
        for (w, &word) in row.iter().enumerate() {
            let hi = (self.n - w * 64).min(64);
            let mut comp = !word;
            if hi < 64 {
                comp &= (1u64 << hi) - 1;
            }
            if i / 64 == w {
                comp &= !(1u64 << (i % 64));
            }
            let c = comp.count_ones() as usize;
            if k < c {
                for _ in 0..k {
                    comp &= comp - 1;
                }
                return w * 64 + comp.trailing_zeros() as usize;
            }
            k -= c;
        }
        unreachable!("non-neighbor rank out of range")
    }

    /// Dump format: header `n=<n>`, then one `i j` line per edge.
    pub fn write_edges<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n={}", self.n)?;
        for (i, j) in self.edges() {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }
}

/// Parse and validate a graph dump; returns (n, edges).
pub fn read_edges<R: BufRead>(r: R) -> Result<(usize, Vec<(u32, u32)>)> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty graph dump".into()))??;
    let n: usize = header
        .trim()
        .strip_prefix("n=")
        .ok_or_else(|| Error::Parse(format!("bad graph header: {header}")))?
        .parse()
        .map_err(|e| Error::Parse(format!("bad graph header: {e}")))?;
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let i: u32 = it
            .next()
            .ok_or_else(|| Error::Parse(format!("bad edge line: {line}")))?
            .parse()
            .map_err(|e| Error::Parse(format!("{e}: {line}")))?;
        let j: u32 = it
            .next()
            .ok_or_else(|| Error::Parse(format!("bad edge line: {line}")))?
            .parse()
            .map_err(|e| Error::Parse(format!("{e}: {line}")))?;
        if i == j {
            return Err(Error::Parse(format!("self-loop {i} {j}")));
        }
        if i as usize >= n || j as usize >= n {
            return Err(Error::Parse(format!("vertex out of range: {line}")));
        }
        let key = (i.min(j), i.max(j));
        if !seen.insert(key) {
            return Err(Error::Parse(format!("duplicate edge {i} {j}")));
        }
        edges.push(key);
    }
    Ok((n, edges))
}

/// Sample G(n, lambda/n): each unordered pair present independently.
///
/// The present edges are generated directly with geometric index skips, so
/// the cost is proportional to the number of edges rather than to n^2.
pub fn sample_graph(n: usize, lambda: f64, stream: &mut Stream) -> Result<ErSample> {
    let mut g = ErSample::empty(n, lambda)?;
    fill_graph(&mut g, stream);
    Ok(g)
}

/// Refill an existing sample in place (clears previous edges).
pub fn resample_graph(g: &mut ErSample, stream: &mut Stream) {
    g.adj.fill(0);
    g.degrees.fill(0);
    fill_graph(g, stream);
}

fn fill_graph(g: &mut ErSample, stream: &mut Stream) {
    let n = g.n as u64;
    let total = n * (n - 1) / 2;
    let p = g.p();
    if p >= 1.0 {
        for i in 0..g.n {
            for j in (i + 1)..g.n {
                g.set_edge(i, j, true);
            }
        }
        return;
    }
    let lq = (-p).ln_1p();
    let mut t: u64 = 0;
    loop {
        let u = stream.uniform();
        let gap = ((-u).ln_1p() / lq).floor();
        if !gap.is_finite() || gap >= (total - t) as f64 {
            break;
        }
        t += gap as u64;
        let (i, j) = pair_from_index(g.n, t);
        g.set_edge(i, j, true);
        t += 1;
        if t >= total {
            break;
        }
    }
}

/// Decode a linear index over the pairs (i, j), i < j, in row-major order.
#[inline]
fn pair_from_index(n: usize, t: u64) -> (usize, usize) {
    let nf = n as f64;
    let tf = t as f64;
    // Row start S_i = i(n-1) - i(i-1)/2; invert the quadratic, then fix up.
    let disc = (2.0 * nf - 1.0) * (2.0 * nf - 1.0) - 8.0 * tf;
    let mut i = ((2.0 * nf - 1.0 - disc.max(0.0).sqrt()) / 2.0).floor() as u64;
    let start = |i: u64| i * (n as u64 - 1) - i * i.saturating_sub(1) / 2;
    while i > 0 && start(i) > t {
        i -= 1;
    }
    while start(i + 1) <= t {
        i += 1;
    }
    let j = i + 1 + (t - start(i));
    (i as usize, j as usize)
}

/// W_d: the number of vertices of degree different from d.
pub fn w_d(sample: &ErSample, d: i64) -> i64 {
    sample.degrees.iter().filter(|&&m| m as i64 != d).count() as i64
}

/// Closed-form moments of W_d. `sigma2` is `None` in the degenerate case
/// p = 1 where the variance display divides by p(1-p); the mean is still
/// returned.
#[derive(Debug, Clone, Copy)]
pub struct ErMoments {
    pub mu: f64,
    pub sigma2: Option<f64>,
    pub b_d: f64,
}

pub fn er_moments(n: usize, lambda: f64, d: i64) -> Result<ErMoments> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n = {n} must be >= 2")));
    }
    if !(lambda > 0.0) || lambda > n as f64 {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} outside (0, n]")));
    }
    if d < 0 || d > n as i64 - 1 {
        return Err(Error::InvalidArgument(format!("d = {d} outside [0, n-1]")));
    }
    let p = lambda / n as f64;
    let m = n as f64 - 1.0;
    if p >= 1.0 {
        let b_d = if d == n as i64 - 1 { 1.0 } else { 0.0 };
        return Ok(ErMoments { mu: n as f64 * (1.0 - b_d), sigma2: None, b_d });
    }
    let df = d as f64;
    let ln_b = ln_gamma(m + 1.0) - ln_gamma(df + 1.0) - ln_gamma(m - df + 1.0)
        + df * p.ln()
        + (m - df) * (-p).ln_1p();
    let b_d = ln_b.exp();
    let mu = n as f64 * (1.0 - b_d);
    let sigma2 = n as f64 * b_d * b_d * ((df - m * p).powi(2) / (m * p * (1.0 - p)) - 1.0)
        + n as f64 * b_d;
    Ok(ErMoments { mu, sigma2: Some(sigma2), b_d })
}

/// Mean of W_d (n (1 - b_d)).
pub fn er_mu(n: usize, lambda: f64, d: i64) -> Result<f64> {
    Ok(er_moments(n, lambda, d)?.mu)
}

fn check_law(sample: &ErSample, d: i64, law: &IncrementLaw) -> Result<()> {
    if law.d() != d {
        return Err(Error::PreconditionViolation(format!(
            "law built for d = {}, step asked for d = {d}",
            law.d()
        )));
    }
    if law.base().offset() < 0 || law.base().max_support() > sample.n as i64 - 1 {
        return Err(Error::PreconditionViolation(
            "law base support exceeds the degree range 0..n-1".into(),
        ));
    }
    Ok(())
}

/// One bounded size-bias step: the sample is modified in place into the
/// size-biased configuration and the step record is returned.
///
/// The absolute increment |D| never exceeds 2; this is asserted on every
/// step, not just in tests.
pub fn size_bias_step(
    sample: &mut ErSample,
    d: i64,
    law: &IncrementLaw,
    stream: &mut Stream,
) -> Result<CouplingRecord> {
    check_law(sample, d, law)?;
    let n = sample.n;
    let w = w_d(sample, d);
    let g = er_mu(n, sample.lambda, d)?;
    let i = stream.index(n);
    let m = sample.degree(i) as i64;
    let x = sample_increment(law, m, stream)?;
    let (j_moved, w_s) = match x {
        0 => (None, w),
        1 => {
            let free = n as i64 - 1 - m;
            if free <= 0 {
                return Err(Error::InternalInvariant(
                    "X = +1 drawn with no available non-neighbor; pi must vanish at m = n-1"
                        .into(),
                ));
            }
            let j = sample.kth_non_neighbor(i, stream.index(free as usize));
            let w_s = w + edge_flip_w_delta(sample, d, i, j);
            sample.set_edge(i, j, true);
            (Some(j), w_s)
        }
        -1 => {
            if m <= 0 {
                return Err(Error::InternalInvariant(
                    "X = -1 drawn with no neighbor; gamma must vanish at m = 0".into(),
                ));
            }
            let j = sample.kth_neighbor(i, stream.index(m as usize));
            let w_s = w + edge_flip_w_delta(sample, d, i, j);
            sample.set_edge(i, j, false);
            (Some(j), w_s)
        }
        _ => unreachable!(),
    };
    let d_incr = w_s - w;
    if d_incr.abs() > 2 {
        return Err(Error::InternalInvariant(format!(
            "|D| = {} exceeds the coupling bound 2",
            d_incr.abs()
        )));
    }
    let rec = CouplingRecord { i_chosen: i, x, j_moved, w, w_s, d_incr, g };
    rec.validate()?;
    Ok(rec)
}

/// Change of W_d when the edge i-j is toggled: only the indicators of i and
/// j move.
fn edge_flip_w_delta(sample: &ErSample, d: i64, i: usize, j: usize) -> i64 {
    let step: i64 = if sample.has_edge(i, j) { -1 } else { 1 };
    let mut delta = 0;
    for v in [i, j] {
        let old = sample.degree(v) as i64;
        let new = old + step;
        delta += (new != d) as i64 - (old != d) as i64;
    }
    delta
}

/// Per-vertex neighbor degree counts used by the conditional statistics:
/// hat[i][t] counts neighbors of i with degree d - 1 + t, t in {0, 1, 2}.
struct LocalCounts {
    w_d: i64,
    w_dm1: i64,
    hat: Vec<[u32; 3]>,
}

fn local_counts(sample: &ErSample, d: i64) -> LocalCounts {
    let n = sample.n;
    let mut hat = vec![[0u32; 3]; n];
    for i in 0..n {
        let row = &sample.adj[i * sample.words..(i + 1) * sample.words];
        for (w, &word) in row.iter().enumerate() {
            let mut word = word;
            while word != 0 {
                let j = w * 64 + word.trailing_zeros() as usize;
                word &= word - 1;
                let mj = sample.degrees[j] as i64;
                if (d - 1..=d + 1).contains(&mj) {
                    hat[i][(mj - d + 1) as usize] += 1;
                }
            }
        }
    }
    LocalCounts { w_d: w_d(sample, d), w_dm1: w_d(sample, d - 1), hat }
}

/// E[G D | G_n]: the exact conditional expectation of the coupling product
/// given the graph, as a sum of per-vertex terms. Summands with zero
/// numerator are zero.
pub fn conditional_gd(sample: &ErSample, d: i64, law: &IncrementLaw) -> Result<f64> {
    check_law(sample, d, law)?;
    let n = sample.n;
    let b_d = er_moments(n, sample.lambda, d)?.b_d;
    let lc = local_counts(sample, d);
    let q = law.q();
    let nf = n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let m = sample.degree(i) as i64;
        let [hat_dm1, hat_d, hat_dp1] = lc.hat[i].map(f64::from);
        let mut term = (m == d) as i64 as f64;
        if m > 0 {
            let gamma = law.gamma(m);
            if gamma > 0.0 {
                term += (1.0 - q) * gamma / m as f64 * (hat_d - hat_dp1);
            }
        }
        if m < n as i64 - 1 {
            let pi = law.pi(m);
            if pi > 0.0 {
                let bracket = -(nf - lc.w_dm1 as f64) + hat_dm1 + ((m == d - 1) as i64 as f64)
                    + (nf - lc.w_d as f64)
                    - hat_d
                    - ((m == d) as i64 as f64);
                term += q * pi / (n as f64 - m as f64 - 1.0) * bracket;
            }
        }
        acc += term;
    }
    Ok((1.0 - b_d) * acc)
}

/// The six centering statistics T_1'..T_6' of the conditional-variance
/// decomposition, plus U, evaluated on one realization.
#[derive(Debug, Clone, Copy)]
pub struct ErTStats {
    pub t: [f64; 6],
    pub u: f64,
}

pub fn t_statistics(sample: &ErSample, d: i64, law: &IncrementLaw) -> Result<ErTStats> {
    check_law(sample, d, law)?;
    let n = sample.n;
    let nf = n as f64;
    let lc = local_counts(sample, d);
    let q = law.q();
    let half = nf / 2.0;
    let mut u = 0.0;
    let mut t3 = 0.0;
    let mut t4 = 0.0;
    let mut t5 = 0.0;
    for i in 0..n {
        let m = sample.degree(i) as i64;
        let mf = m as f64;
        let [hat_dm1, hat_d, hat_dp1] = lc.hat[i].map(f64::from);
        if mf < half && m < n as i64 - 1 {
            let pi = law.pi(m);
            if pi > 0.0 {
                let denom = nf - mf - 1.0;
                u += nf * pi / denom;
                let local =
                    hat_dm1 - hat_d + ((m == d - 1) as i64 as f64) - ((m == d) as i64 as f64);
                t3 += q * local * pi / denom;
            }
        }
        if mf >= half && m < n as i64 - 1 {
            let pi = law.pi(m);
            if pi > 0.0 {
                let denom = nf - mf - 1.0;
                let bracket = lc.w_dm1 as f64 + hat_dm1 + ((m == d - 1) as i64 as f64)
                    - lc.w_d as f64
                    - hat_d
                    - ((m == d) as i64 as f64);
                t4 += q * pi * bracket / denom;
            }
        }
        if m > 0 {
            let gamma = law.gamma(m);
            if gamma > 0.0 {
                t5 += (1.0 - q) * (hat_dp1 - hat_d) * gamma / mf;
            }
        }
    }
    let t1 = q / nf * u * lc.w_dm1 as f64;
    let t2 = q / nf * u * lc.w_d as f64;
    let t6 = lc.w_d as f64;
    Ok(ErTStats { t: [t1, t2, t3, t4, t5, t6], u })
}

/// Recombine the T' statistics into the conditional expectation: the exact
/// identity `conditional_gd = (1 - b_d)(n - T6' + T1' - T2' + T3' + T4' - T5')`.
pub fn recombine_t_stats(n: usize, b_d: f64, t: &[f64; 6]) -> f64 {
    (1.0 - b_d) * (n as f64 - t[5] + t[0] - t[1] + t[2] + t[3] - t[4])
}

/// Per-replication W_d sampler that avoids building adjacency: only the
/// degree vector is tracked, with touched-entry resets, so a replication
/// costs O(edges) after the first.
pub struct DegreeSampler {
    n: usize,
    ln_q: f64,
    total: u64,
    deg: Vec<u32>,
    touched: Vec<u32>,
}

impl DegreeSampler {
    pub fn new(n: usize, lambda: f64) -> Result<DegreeSampler> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("n = {n} must be >= 2")));
        }
        if !(lambda > 0.0) || lambda >= n as f64 {
            return Err(Error::InvalidArgument(format!("lambda = {lambda} outside (0, n)")));
        }
        let p = lambda / n as f64;
        Ok(DegreeSampler {
            n,
            ln_q: (-p).ln_1p(),
            total: (n as u64) * (n as u64 - 1) / 2,
            deg: vec![0; n],
            touched: Vec::with_capacity((lambda as usize + 4) * n / 2),
        })
    }

    /// Draw one graph and return W_d.
    pub fn sample_w(&mut self, d: i64, stream: &mut Stream) -> i64 {
        const SENTINEL: u32 = u32::MAX;
        self.touched.clear();
        let mut t: u64 = 0;
        loop {
            let u = stream.uniform();
            let gap = ((-u).ln_1p() / self.ln_q).floor();
            if !gap.is_finite() || gap >= (self.total - t) as f64 {
                break;
            }
            t += gap as u64;
            let (i, j) = pair_from_index(self.n, t);
            self.deg[i] += 1;
            self.deg[j] += 1;
            self.touched.push(i as u32);
            self.touched.push(j as u32);
            t += 1;
            if t >= self.total {
                break;
            }
        }
        let mut count_d = 0i64;
        let mut distinct = 0i64;
        for idx in 0..self.touched.len() {
            let v = self.touched[idx] as usize;
            if self.deg[v] != SENTINEL {
                distinct += 1;
                count_d += (self.deg[v] as i64 == d) as i64;
                self.deg[v] = SENTINEL;
            }
        }
        for idx in 0..self.touched.len() {
            self.deg[self.touched[idx] as usize] = 0;
        }
        if d == 0 {
            count_d += self.n as i64 - distinct;
        }
        self.n as i64 - count_d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{loc_distance, Pmf};
    use crate::rng::{derive_stream, tags};
    use crate::sizebias::build_increment_law;

    fn law_for(n: usize, lambda: f64, d: i64) -> IncrementLaw {
        build_increment_law(Pmf::binomial(n as u64 - 1, lambda / n as f64).unwrap(), d).unwrap()
    }

    #[test]
    fn complete_graph_at_lambda_equal_n() {
        let mut s = derive_stream(1, 0, tags::TEST);
        let g = sample_graph(3, 3.0, &mut s).unwrap();
        assert_eq!(g.degrees(), &[2, 2, 2]);
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn near_zero_lambda_gives_empty_graph() {
        let mut s = derive_stream(2, 0, tags::TEST);
        let g = sample_graph(5, 1e-9, &mut s).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.degrees(), &[0; 5]);
    }

    #[test]
    fn lambda_above_n_rejected() {
        let mut s = derive_stream(3, 0, tags::TEST);
        assert!(matches!(
            sample_graph(5, 5.1, &mut s),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mean_edge_count_matches_binomial() {
        let mut acc = crate::stats::RunningMoments::new();
        for rep in 0..100_000u64 {
            let mut s = derive_stream(4, rep, tags::TEST);
            let g = sample_graph(50, 2.0, &mut s).unwrap();
            acc.push(g.edge_count() as f64);
        }
        let expect = 1225.0 * (2.0 / 50.0);
        assert!(
            (acc.mean() - expect).abs() < 4.0 * acc.se_mean(),
            "mean {} expect {expect} se {}",
            acc.mean(),
            acc.se_mean()
        );
    }

    #[test]
    fn degree_sampler_agrees_with_oracle() {
        // Distributional check of the fast path against exact enumeration.
        let (n, lambda, d) = (5usize, 1.5f64, 1i64);
        let mut sampler = DegreeSampler::new(n, lambda).unwrap();
        let exact = crate::oracle::er_exact_pmf(n, lambda, d).unwrap();
        let reps = 200_000u64;
        let mut counts = vec![0u64; n + 1];
        for rep in 0..reps {
            let mut s = derive_stream(5, rep, tags::TEST);
            counts[sampler.sample_w(d, &mut s) as usize] += 1;
        }
        let (_, p) = crate::oracle::chi_square_gof_from_counts(0, &counts, &exact.pmf).unwrap();
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn w_d_examples() {
        let empty = ErSample::empty(4, 1.0).unwrap();
        assert_eq!(w_d(&empty, 0), 0);
        assert_eq!(w_d(&empty, 1), 4);
        let mut s = derive_stream(6, 0, tags::TEST);
        let complete = sample_graph(4, 4.0, &mut s).unwrap();
        assert_eq!(w_d(&complete, 3), 0);
    }

    #[test]
    fn moments_single_edge() {
        let m = er_moments(2, 1.0, 0).unwrap();
        assert!((m.mu - 1.0).abs() < 1e-12);
        assert!((m.sigma2.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moments_n4_lambda2_d0() {
        let m = er_moments(4, 2.0, 0).unwrap();
        assert!((m.mu - 3.5).abs() < 1e-12, "mu = {}", m.mu);
    }

    #[test]
    fn moments_degenerate_p_one() {
        let m = er_moments(3, 3.0, 2).unwrap();
        assert!(m.sigma2.is_none());
        assert!((m.mu - 0.0).abs() < 1e-12);
        let m = er_moments(3, 3.0, 0).unwrap();
        assert!((m.mu - 3.0).abs() < 1e-12);
    }

    #[test]
    fn step_on_empty_graph_d0_always_up_two() {
        let law = law_for(4, 2.0, 0);
        let mut s = derive_stream(7, 0, tags::TEST);
        for _ in 0..200 {
            let mut g = ErSample::empty(4, 2.0).unwrap();
            let rec = size_bias_step(&mut g, 0, &law, &mut s).unwrap();
            assert_eq!(rec.x, 1);
            assert_eq!(rec.w, 0);
            assert_eq!(rec.w_s, 2);
            assert_eq!(rec.d_incr, 2);
            assert_eq!(g.edge_count(), 1);
        }
    }

    #[test]
    fn step_bound_holds_on_grid() {
        // |D| <= 2 is asserted inside the step; run a slice of the grid.
        let mut s = derive_stream(8, 0, tags::TEST);
        for &n in &[4usize, 16, 64] {
            for &lambda in &[0.5, 1.0, 2.0] {
                for &d in &[0i64, 1, 3] {
                    let law = law_for(n, lambda, d);
                    let mut g = sample_graph(n, lambda, &mut s).unwrap();
                    for _ in 0..500 {
                        resample_graph(&mut g, &mut s);
                        size_bias_step(&mut g, d, &law, &mut s).unwrap();
                    }
                }
            }
        }
    }

    #[test]
    fn conditional_gd_empty_graph_example() {
        // Empty graph, n = 3, lambda = 1, d = 0: (1 - 4/9) * 6 = 10/3.
        let g = ErSample::empty(3, 1.0).unwrap();
        let law = law_for(3, 1.0, 0);
        let v = conditional_gd(&g, 0, &law).unwrap();
        assert!((v - 10.0 / 3.0).abs() < 1e-12, "v = {v}");
    }

    #[test]
    fn conditional_gd_complete_graph_zero() {
        // At lambda = n the degree law is the point mass at d = n-1, so the
        // increment law itself is degenerate; the factor (1 - b_d) = 0 kills
        // the conditional expectation for any admissible law with this d.
        let mut s = derive_stream(9, 0, tags::TEST);
        let g = sample_graph(3, 3.0, &mut s).unwrap();
        let law = build_increment_law(Pmf::binomial(2, 0.9).unwrap(), 2).unwrap();
        let v = conditional_gd(&g, 2, &law).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn conditional_gd_mean_matches_sigma2() {
        let (n, lambda, d) = (16usize, 2.0f64, 1i64);
        let law = law_for(n, lambda, d);
        let sigma2 = er_moments(n, lambda, d).unwrap().sigma2.unwrap();
        let mut acc = crate::stats::RunningMoments::new();
        for rep in 0..200_000u64 {
            let mut s = derive_stream(10, rep, tags::TEST);
            let g = sample_graph(n, lambda, &mut s).unwrap();
            acc.push(conditional_gd(&g, d, &law).unwrap());
        }
        assert!(
            (acc.mean() - sigma2).abs() < 4.0 * acc.se_mean(),
            "mean {} sigma2 {sigma2} se {}",
            acc.mean(),
            acc.se_mean()
        );
    }

    #[test]
    fn t_statistics_empty_graph_example() {
        let g = ErSample::empty(3, 1.0).unwrap();
        let law = law_for(3, 1.0, 0);
        let ts = t_statistics(&g, 0, &law).unwrap();
        assert_eq!(ts.t[5], 0.0);
        assert!((ts.u - 4.5).abs() < 1e-12, "u = {}", ts.u);
    }

    #[test]
    fn t4_zero_when_degrees_small() {
        let law = law_for(32, 1.0, 1);
        for rep in 0..50u64 {
            let mut st = derive_stream(11, rep, tags::TEST);
            let g = sample_graph(32, 1.0, &mut st).unwrap();
            if g.degrees().iter().all(|&m| (m as f64) < 16.0) {
                let ts = t_statistics(&g, 1, &law).unwrap();
                assert_eq!(ts.t[3], 0.0);
            }
        }
    }

    #[test]
    fn t3_t5_per_vertex_terms_bounded() {
        // Each per-vertex term of T3' and T5' is bounded by 1.
        for rep in 0..50u64 {
            let mut s = derive_stream(12, rep, tags::TEST);
            let n = 24;
            let lambda = 2.0;
            let d = 1i64;
            let g = sample_graph(n, lambda, &mut s).unwrap();
            let law = law_for(n, lambda, d);
            let lc_half = n as f64 / 2.0;
            for i in 0..n {
                let m = g.degree(i) as i64;
                let mut hd = 0.0;
                let mut hdm1 = 0.0;
                let mut hdp1 = 0.0;
                for j in 0..n {
                    if i != j && g.has_edge(i, j) {
                        let mj = g.degree(j) as i64;
                        hd += (mj == d) as i64 as f64;
                        hdm1 += (mj == d - 1) as i64 as f64;
                        hdp1 += (mj == d + 1) as i64 as f64;
                    }
                }
                if (m as f64) < lc_half && m < n as i64 - 1 {
                    let term = (hdm1 - hd + ((m == d - 1) as i64 as f64)
                        - ((m == d) as i64 as f64))
                        * law.pi(m)
                        / (n as f64 - m as f64 - 1.0);
                    assert!(term.abs() <= 1.0 + 1e-12);
                }
                if m > 0 {
                    let term = (hdp1 - hd) * law.gamma(m) / m as f64;
                    assert!(term.abs() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn recombination_identity() {
        // conditional_gd == (1-b_d)(n - T6 + T1 - T2 + T3 + T4 - T5) exactly.
        for rep in 0..200u64 {
            let mut s = derive_stream(13, rep, tags::TEST);
            let (n, lambda) = (20usize, 1.5f64);
            let d = (rep % 4) as i64;
            let g = sample_graph(n, lambda, &mut s).unwrap();
            let law = law_for(n, lambda, d);
            let direct = conditional_gd(&g, d, &law).unwrap();
            let ts = t_statistics(&g, d, &law).unwrap();
            let b_d = er_moments(n, lambda, d).unwrap().b_d;
            let recombined = recombine_t_stats(n, b_d, &ts.t);
            assert!(
                (direct - recombined).abs() < 1e-9 * (1.0 + direct.abs()),
                "direct {direct} recombined {recombined}"
            );
        }
    }

    #[test]
    fn exact_size_bias_law_of_coupling() {
        // Integrate the coupling exactly over graphs and coupling randomness
        // (n <= 5) and compare with the size-biased exact law.
        for (n, lambda, d) in [(4usize, 2.0f64, 0i64), (4, 2.0, 1), (5, 1.5, 1), (3, 1.0, 0)] {
            let p = lambda / n as f64;
            let law = law_for(n, lambda, d);
            let edges = n * (n - 1) / 2;
            let mut pair_of = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    pair_of.push((i, j));
                }
            }
            let mut acc = vec![0.0f64; n + 2];
            for mask in 0u32..(1 << edges) {
                let mut deg = vec![0i64; n];
                let mut m_edges = 0;
                for (b, &(i, j)) in pair_of.iter().enumerate() {
                    if mask >> b & 1 == 1 {
                        deg[i] += 1;
                        deg[j] += 1;
                        m_edges += 1;
                    }
                }
                let prob = p.powi(m_edges) * (1.0 - p).powi((edges - m_edges as usize) as i32);
                let w = deg.iter().filter(|&&x| x != d).count() as i64;
                for i in 0..n {
                    let m = deg[i];
                    let p_up = law.q() * law.pi(m);
                    let p_dn = (1.0 - law.q()) * law.gamma(m);
                    acc[w as usize] += prob / n as f64 * (1.0 - p_up - p_dn);
                    let delta_for = |other: i64, up: bool| -> i64 {
                        let step = if up { 1 } else { -1 };
                        [m, other]
                            .iter()
                            .map(|&old| ((old + step != d) as i64) - ((old != d) as i64))
                            .sum()
                    };
                    if p_up > 0.0 {
                        let free: Vec<usize> = (0..n)
                            .filter(|&j| j != i && mask >> edge_bit(&pair_of, i, j) & 1 == 0)
                            .collect();
                        for &j in &free {
                            let w_s = w + delta_for(deg[j], true);
                            acc[w_s as usize] += prob / n as f64 * p_up / free.len() as f64;
                        }
                    }
                    if p_dn > 0.0 {
                        let nbr: Vec<usize> = (0..n)
                            .filter(|&j| j != i && mask >> edge_bit(&pair_of, i, j) & 1 == 1)
                            .collect();
                        for &j in &nbr {
                            let w_s = w + delta_for(deg[j], false);
                            acc[w_s as usize] += prob / n as f64 * p_dn / nbr.len() as f64;
                        }
                    }
                }
            }
            let coupled = Pmf::from_unnormalized(0, acc).unwrap();
            let target = crate::oracle::er_exact_size_bias_pmf(n, lambda, d).unwrap();
            let gap = loc_distance(&coupled, &target);
            assert!(gap < 1e-10, "(n={n}, lambda={lambda}, d={d}): gap = {gap:e}");
        }
    }

    fn edge_bit(pair_of: &[(usize, usize)], i: usize, j: usize) -> usize {
        let (a, b) = (i.min(j), i.max(j));
        pair_of.iter().position(|&e| e == (a, b)).unwrap()
    }

    #[test]
    fn dump_round_trip() {
        let mut s = derive_stream(14, 0, tags::TEST);
        let g = sample_graph(9, 2.0, &mut s).unwrap();
        let mut buf = Vec::new();
        g.write_edges(&mut buf).unwrap();
        let (n, edges) = read_edges(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(n, 9);
        assert_eq!(edges, g.edges());
    }
}
