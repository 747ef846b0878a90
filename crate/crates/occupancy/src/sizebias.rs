//! The bounded size-bias increment mechanism and pmf-level size-bias
//! transforms.
//!
//! For a log-concave occupancy law `M` and excluded count `d`, the increment
//! `X = Z Z+ - (1-Z) Z-` with `Z ~ Be(q)`, `Z+ ~ Be(pi_M)`, `Z- ~ Be(gamma_M)`
//! moves at most one occupant and satisfies `L(M + X) = L(M | M != d)`.

use crate::dist::{is_log_concave, Pmf, PROB_TOL};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// One realized size-bias step, shared by the graph and germ-grain models.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRecord {
    /// The uniformly chosen location index I.
    pub i_chosen: usize,
    /// The occupant increment X in {-1, 0, 1}.
    pub x: i8,
    /// The moved occupant J, when X != 0.
    pub j_moved: Option<usize>,
    /// W_d before the step.
    pub w: i64,
    /// W_d after the step (the size-biased value).
    pub w_s: i64,
    /// D = W^s - W.
    pub d_incr: i64,
    /// G = mu_d, the constant Stein-coupling factor.
    pub g: f64,
}

impl CouplingRecord {
    pub fn validate(&self) -> Result<()> {
        if self.x == 0 && self.w_s != self.w {
            return Err(Error::InternalInvariant(format!(
                "x = 0 but w changed: {} -> {}",
                self.w, self.w_s
            )));
        }
        if self.d_incr != self.w_s - self.w {
            return Err(Error::InternalInvariant("d_incr != w_s - w".into()));
        }
        Ok(())
    }
}

/// The increment law of Lemma 2.2: q, and per-occupancy acceptance
/// probabilities pi_x (upward) and gamma_x (downward).
///
/// Conventions for the 0/0 cases: when `P(M >= d+1) = 0` all pi are zero and
/// q = 0; when `P(M <= d-1) = 0` all gamma are zero. The corresponding branch
/// is then never selected.
#[derive(Debug, Clone)]
pub struct IncrementLaw {
    base: Pmf,
    d: i64,
    q: f64,
    pi: Vec<f64>,
    gamma: Vec<f64>,
}

impl IncrementLaw {
    pub fn base(&self) -> &Pmf {
        &self.base
    }

    pub fn d(&self) -> i64 {
        self.d
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// pi_x; zero off the stored support and for x < d.
    #[inline]
    pub fn pi(&self, x: i64) -> f64 {
        if x < self.base.offset() {
            return 0.0;
        }
        self.pi.get((x - self.base.offset()) as usize).copied().unwrap_or(0.0)
    }

    /// gamma_x; zero off the stored support and for x > d.
    #[inline]
    pub fn gamma(&self, x: i64) -> f64 {
        if x < self.base.offset() {
            return 0.0;
        }
        self.gamma.get((x - self.base.offset()) as usize).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, m: i64) -> bool {
        m >= self.base.offset() && m <= self.base.max_support()
    }
}

/// Build the increment law for a log-concave base pmf and excluded count d.
pub fn build_increment_law(base: Pmf, d: i64) -> Result<IncrementLaw> {
    if !is_log_concave(&base) {
        return Err(Error::PreconditionViolation(
            "increment law requires a log-concave base pmf".into(),
        ));
    }
    let w = base.weights();
    let n = w.len();
    let p_d = base.p(d);
    // Tail masses by cumulative sums; upper + lower = P(M != d) without
    // subtractive cancellation.
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + w[i];
    }
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + w[i];
    }
    let tail_at = |x: i64| -> f64 {
        // P(M >= x)
        if x <= base.offset() {
            1.0
        } else if x > base.max_support() {
            0.0
        } else {
            suffix[(x - base.offset()) as usize]
        }
    };
    let head_at = |x: i64| -> f64 {
        // P(M <= x)
        if x < base.offset() {
            0.0
        } else if x >= base.max_support() {
            1.0
        } else {
            prefix[(x - base.offset()) as usize + 1]
        }
    };
    let upper = tail_at(d + 1);
    let lower = head_at(d - 1);
    let not_d = upper + lower;
    if not_d <= 0.0 {
        return Err(Error::DegenerateInput(format!("P(M != {d}) = 0")));
    }
    let q = if upper == 0.0 { 0.0 } else { upper / not_d };

    // Ratios in log space: the raw products underflow for extreme tails
    // (denormal weights) even though the ratios themselves are in [0, 1].
    let log_ratio = |num_tail: f64, den_tail: f64, w_x: f64| -> f64 {
        if num_tail == 0.0 || p_d == 0.0 {
            0.0
        } else {
            (num_tail.ln() + p_d.ln() - den_tail.ln() - w_x.ln()).exp()
        }
    };
    let mut pi = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let x = base.offset() + i as i64;
        if upper > 0.0 && x >= d {
            pi[i] = log_ratio(tail_at(x + 1), upper, w[i]);
        }
        if lower > 0.0 && x <= d {
            gamma[i] = log_ratio(head_at(x - 1), lower, w[i]);
        }
        if !pi[i].is_finite() || !gamma[i].is_finite() {
            return Err(Error::InternalInvariant(format!(
                "non-finite pi/gamma at x = {x}"
            )));
        }
        worst = worst.max(pi[i] - 1.0).max(gamma[i] - 1.0).max(-pi[i]).max(-gamma[i]);
    }
    // Lemma 2.2 puts pi, gamma in [0, 1]; anything beyond rounding noise is
    // an implementation bug, not a data problem.
    if worst > PROB_TOL {
        return Err(Error::InternalInvariant(format!(
            "pi/gamma outside [0,1] by {worst:e} for log-concave base"
        )));
    }
    for v in pi.iter_mut().chain(gamma.iter_mut()) {
        *v = v.clamp(0.0, 1.0);
    }
    let law = IncrementLaw { base, d, q, pi, gamma };
    verify_coupled_law(&law)?;
    Ok(law)
}

/// Draw X in {-1, 0, 1} for current occupancy m.
///
/// Three Bernoulli draws are always consumed, so the stream shape does not
/// depend on the outcome.
pub fn sample_increment(law: &IncrementLaw, m: i64, stream: &mut Stream) -> Result<i8> {
    if !law.contains(m) {
        return Err(Error::InvalidArgument(format!("m = {m} outside base support")));
    }
    let z = stream.bernoulli(law.q());
    let z_plus = stream.bernoulli(law.pi(m));
    let z_minus = stream.bernoulli(law.gamma(m));
    Ok(if z {
        z_plus as i8
    } else {
        -(z_minus as i8)
    })
}

/// The exact pmf of M + X, computed analytically from the law.
pub fn coupled_law(law: &IncrementLaw) -> Pmf {
    coupled_law_raw(law).expect("coupled law was validated at construction")
}

fn coupled_law_raw(law: &IncrementLaw) -> Result<Pmf> {
    let base = &law.base;
    let q = law.q();
    let lo = base.offset() - 1;
    let hi = base.max_support() + 1;
    let mut weights = Vec::with_capacity((hi - lo + 1) as usize);
    for j in lo..=hi {
        let stay = base.p(j) * (1.0 - q * law.pi(j) - (1.0 - q) * law.gamma(j));
        let up = base.p(j - 1) * q * law.pi(j - 1);
        let down = base.p(j + 1) * (1.0 - q) * law.gamma(j + 1);
        weights.push(stay + up + down);
    }
    Pmf::from_unnormalized(lo, weights)
}

/// The conditional law L(M | M != d).
pub fn conditional_not_equal(base: &Pmf, d: i64) -> Result<Pmf> {
    let mut w = base.weights().to_vec();
    if d >= base.offset() && d <= base.max_support() {
        w[(d - base.offset()) as usize] = 0.0;
    }
    Pmf::from_unnormalized(base.offset(), w)
}

fn verify_coupled_law(law: &IncrementLaw) -> Result<()> {
    let coupled = coupled_law_raw(law)?;
    let conditional = conditional_not_equal(&law.base, law.d)?;
    let gap = crate::dist::loc_distance(&coupled, &conditional);
    if gap > PROB_TOL {
        return Err(Error::InternalInvariant(format!(
            "coupled law deviates from conditional law by {gap:e}"
        )));
    }
    Ok(())
}

/// The size-biased pmf p^s(k) = k p(k) / mu.
pub fn size_bias_pmf(p: &Pmf) -> Result<Pmf> {
    if p.offset() < 0 {
        return Err(Error::PreconditionViolation(
            "size bias requires support in the non-negative integers".into(),
        ));
    }
    let mu = p.mean();
    if !(mu > 0.0) {
        return Err(Error::DegenerateInput(format!("mean {mu} must be positive")));
    }
    let weights: Vec<f64> =
        p.iter().map(|(k, w)| k as f64 * w / mu).collect();
    Pmf::from_unnormalized(p.offset(), weights)
}
