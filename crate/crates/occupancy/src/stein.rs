//! Estimators and evaluators for the coupling-bound ingredients: the
//! total-variation and local bounds from (mu, sigma, c1, c2), Monte Carlo
//! L_q norms of the conditional centering statistic T, the conditional
//! second-difference smoothness term Upsilon under frozen coupling contexts,
//! and the auxiliary moment and tail inequalities.

use crate::dist::Pmf;
use crate::er;
use crate::error::{Error, Result};
use crate::gg;
use crate::rng::{derive_stream, tags, Stream};
use crate::sizebias::{build_increment_law, IncrementLaw};
use crate::stats::{lq_norm, lq_norm_with_se, RunningMoments};
use rayon::prelude::*;
use std::io::Write;

/// Where a bound ingredient came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Estimated,
    Hardwired,
    Formula,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Estimated => "estimated",
            Provenance::Hardwired => "hardwired",
            Provenance::Formula => "formula",
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngredientEstimate {
    pub name: &'static str,
    pub value: f64,
    pub se: f64,
    pub provenance: Provenance,
}

/// Inputs to the coupling bound: c1 dominates max(Upsilon + 1, ||R||_2,
/// sigma^-1 ||T||_2); c2 dominates sigma^-1 ||T||_q at q = ceil(log sigma).
/// The feasibility flag records whether c1 + e c2 < sigma / 2.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub mu: f64,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub feasible: bool,
    pub ingredients: Vec<IngredientEstimate>,
}

impl BoundInputs {
    pub fn new(
        mu: f64,
        sigma: f64,
        c1: f64,
        c2: f64,
        ingredients: Vec<IngredientEstimate>,
    ) -> Result<BoundInputs> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma = {sigma} must be > 0")));
        }
        if c1 < 0.0 || c2 < 0.0 {
            return Err(Error::InvalidArgument("c1, c2 must be non-negative".into()));
        }
        let feasible = c1 + std::f64::consts::E * c2 < sigma / 2.0;
        Ok(BoundInputs { mu, sigma, c1, c2, feasible, ingredients })
    }

    /// Serialize the ingredient table: `ingredient, estimate, SE, provenance`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ingredient,estimate,se,provenance")?;
        for ing in &self.ingredients {
            writeln!(
                w,
                "{},{},{},{}",
                ing.name,
                crate::dist::format_g17(ing.value),
                crate::dist::format_g17(ing.se),
                ing.provenance.as_str()
            )?;
        }
        Ok(())
    }
}

/// The two bound displays: tv = 5 c1 / sigma always; loc = 4 (4 c1 + e c2)
/// / sigma^2, present only when c1 + e c2 < sigma / 2.
pub fn brr_bounds(inputs: &BoundInputs) -> (f64, Option<f64>) {
    let tv = 5.0 * inputs.c1 / inputs.sigma;
    let loc = if inputs.feasible {
        Some(
            4.0 * (4.0 * inputs.c1 + std::f64::consts::E * inputs.c2)
                / (inputs.sigma * inputs.sigma),
        )
    } else {
        None
    };
    (tv, loc)
}

/// A model family for the estimator pipelines.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Er { n: usize, lambda: f64, d: i64 },
    Gg { n: usize, r: f64, d: i64, quad: gg::QuadSpec },
}

impl ModelSpec {
    pub fn d(&self) -> i64 {
        match *self {
            ModelSpec::Er { d, .. } | ModelSpec::Gg { d, .. } => d,
        }
    }

    pub fn law(&self) -> Result<IncrementLaw> {
        match *self {
            ModelSpec::Er { n, lambda, d } => {
                build_increment_law(Pmf::binomial(n as u64 - 1, lambda / n as f64)?, d)
            }
            ModelSpec::Gg { n, r, d, .. } => {
                let p = std::f64::consts::PI * r * r / n as f64;
                build_increment_law(Pmf::binomial(n as u64 - 1, p)?, d)
            }
        }
    }

    pub fn mu(&self) -> Result<f64> {
        match *self {
            ModelSpec::Er { n, lambda, d } => er::er_mu(n, lambda, d),
            ModelSpec::Gg { n, r, d, .. } => gg::gg_mu(n, r, d),
        }
    }

    /// sigma estimate with its standard error: exact for the graph model,
    /// Monte Carlo (with the documented reference tag) for the germ-grain
    /// model, where no closed form is available.
    pub fn sigma(&self, reps: u64, master_seed: u64) -> Result<(f64, f64)> {
        match *self {
            ModelSpec::Er { n, lambda, d } => {
                let sigma2 = er::er_moments(n, lambda, d)?.sigma2.ok_or_else(|| {
                    Error::DegenerateInput("variance display degenerate at p = 1".into())
                })?;
                Ok((sigma2.sqrt(), 0.0))
            }
            ModelSpec::Gg { n, r, d, .. } => {
                let acc = (0..reps)
                    .into_par_iter()
                    .fold(RunningMoments::new, |mut acc, rep| {
                        let mut s =
                            derive_stream(master_seed, rep, tags::EGD_REFERENCE ^ 0x5347);
                        let cfg = gg::sample_config(n, r, &mut s).expect("validated");
                        acc.push(cfg.w_count(d) as f64);
                        acc
                    })
                    .reduce(RunningMoments::new, |a, b| a.merge(&b));
                let sigma2 = acc.variance();
                // Large-sample SE of a sample variance, then the delta
                // method for the square root.
                let se_var = sigma2 * (2.0 / reps as f64).sqrt();
                Ok((sigma2.sqrt(), se_var / (2.0 * sigma2.sqrt())))
            }
        }
    }

    /// One realization of the conditional coupling product E[GD | config].
    pub fn conditional_egd(&self, law: &IncrementLaw, stream: &mut Stream) -> Result<f64> {
        match *self {
            ModelSpec::Er { n, lambda, d } => {
                let g = er::sample_graph(n, lambda, stream)?;
                er::conditional_gd(&g, d, law)
            }
            ModelSpec::Gg { n, r, d, ref quad } => {
                let cfg = gg::sample_config(n, r, stream)?;
                Ok(gg::t_stats_fast(&cfg, d, law, quad)?.assembly)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TNormEstimate {
    pub q: u32,
    /// sigma^-1 ||T||_q.
    pub value: f64,
    pub se: f64,
    /// Set when q exceeds reps^(1/3): the norm is heavy-tail unreliable.
    pub unreliable: bool,
}

/// Monte Carlo L_q norms of T = |E[GD | config] - E[GD]| divided by sigma.
///
/// E[GD] comes from a separate pass under the fixed `EGD_REFERENCE` tag with
/// four times the replication count, then is frozen for the main pass. All
/// requested q share the main pass replications.
pub fn estimate_t_norms(
    model: &ModelSpec,
    q_list: &[u32],
    reps: u64,
    master_seed: u64,
) -> Result<Vec<TNormEstimate>> {
    if reps < 1_000 {
        return Err(Error::PreconditionViolation(format!(
            "estimate_t_norms needs at least 1e3 replications, got {reps}"
        )));
    }
    let law = model.law()?;
    let egd_ref = reference_egd(model, &law, 4 * reps, master_seed)?;
    let (sigma, _) = model.sigma(reps.max(10_000), master_seed)?;
    let ts: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut s = derive_stream(master_seed, rep, tags::SAMPLE);
            let cgd = model.conditional_egd(&law, &mut s).expect("sampling validated");
            (cgd - egd_ref).abs()
        })
        .collect();
    let cap = (reps as f64).powf(1.0 / 3.0);
    let mut out = Vec::with_capacity(q_list.len());
    for &q in q_list {
        if q == 0 {
            return Err(Error::InvalidArgument("q must be >= 1".into()));
        }
        let (norm, _) = lq_norm_with_se(&ts, q);
        let mut boot = derive_stream(master_seed, q as u64, tags::BOOTSTRAP);
        let se = crate::stats::bootstrap_se(&ts, 200, &mut boot, |xs| lq_norm(xs, q));
        // T identically zero dominates a degenerate sigma: the norm is 0.
        let scale = |x: f64| if x == 0.0 { 0.0 } else { x / sigma };
        out.push(TNormEstimate {
            q,
            value: scale(norm),
            se: scale(se),
            unreliable: q as f64 > cap,
        });
    }
    Ok(out)
}

/// Assemble the full bound-input pipeline for a model: sigma, the smoothness
/// term Upsilon, the hardwired remainder ||R||_2 = 0 (the couplings are
/// exact), and the two T-norms, at q = 2 and q = ceil(log sigma) (the same
/// replication set serves both).
pub fn estimate_bound_inputs(
    model: &ModelSpec,
    t_reps: u64,
    outer: u64,
    inner: u64,
    master_seed: u64,
) -> Result<BoundInputs> {
    let (sigma, sigma_se) = model.sigma(t_reps.max(10_000), master_seed)?;
    let q_log = (sigma.ln().ceil() as u32).max(1);
    let norms = estimate_t_norms(model, &[2, q_log], t_reps, master_seed)?;
    let ups = estimate_upsilon(model, outer, inner, master_seed)?;
    let mu = model.mu()?;
    let t2 = norms[0];
    let tq = norms[1];
    let c1 = (ups.upsilon + 1.0).max(0.0).max(t2.value);
    let c2 = tq.value;
    let ingredients = vec![
        IngredientEstimate {
            name: "mu",
            value: mu,
            se: 0.0,
            provenance: Provenance::Formula,
        },
        IngredientEstimate {
            name: "sigma",
            value: sigma,
            se: sigma_se,
            provenance: if sigma_se == 0.0 { Provenance::Formula } else { Provenance::Estimated },
        },
        IngredientEstimate {
            name: "upsilon_plus_one",
            value: ups.upsilon + 1.0,
            se: ups.se,
            provenance: Provenance::Estimated,
        },
        IngredientEstimate {
            name: "upsilon_inner_bias_bound",
            value: ups.bias_bound,
            se: 0.0,
            provenance: Provenance::Formula,
        },
        IngredientEstimate {
            name: "r_norm2",
            value: 0.0,
            se: 0.0,
            provenance: Provenance::Hardwired,
        },
        IngredientEstimate {
            name: "t_norm2_over_sigma",
            value: t2.value,
            se: t2.se,
            provenance: Provenance::Estimated,
        },
        IngredientEstimate {
            name: "t_normq_over_sigma",
            value: tq.value,
            se: tq.se,
            provenance: Provenance::Estimated,
        },
        IngredientEstimate {
            name: "c1",
            value: c1,
            se: 0.0,
            provenance: Provenance::Formula,
        },
        IngredientEstimate {
            name: "c2",
            value: c2,
            se: 0.0,
            provenance: Provenance::Formula,
        },
    ];
    BoundInputs::new(mu, sigma, c1, c2, ingredients)
}

/// The fixed-seed reference pass for E[GD].
pub fn reference_egd(
    model: &ModelSpec,
    law: &IncrementLaw,
    reps: u64,
    master_seed: u64,
) -> Result<f64> {
    let acc = (0..reps)
        .into_par_iter()
        .fold(RunningMoments::new, |mut acc, rep| {
            let mut s = derive_stream(master_seed, rep, tags::EGD_REFERENCE);
            acc.push(model.conditional_egd(law, &mut s).expect("sampling validated"));
            acc
        })
        .reduce(RunningMoments::new, |a, b| a.merge(&b));
    Ok(acc.mean())
}

#[derive(Debug, Clone, Copy)]
pub struct UpsilonEstimate {
    pub upsilon: f64,
    /// Leave-one-out jackknife standard error over the outer replications.
    pub se: f64,
    /// Reported plug-in bias bound for the inner empirical-pmf smoothness:
    /// 4 * (mean occupied cells) / sqrt(inner). On the S_2 scale.
    pub bias_bound: f64,
    pub outer: u64,
    pub inner: u64,
    /// Mean occupied support cells of the conditional empirical pmfs.
    pub mean_cells: f64,
}

/// Estimate Upsilon = E[ |G D (D-1)| S_2(L(W | F_2)) ].
///
/// The outer loop draws a configuration and one coupling step, freezes the
/// step context, and the inner loop resamples the unfrozen randomness to
/// build the conditional empirical pmf of W_d whose second-difference sum is
/// the plug-in S_2. Outer draws with D(D-1) = 0 contribute zero without an
/// inner pass.
pub fn estimate_upsilon(
    model: &ModelSpec,
    outer: u64,
    inner: u64,
    master_seed: u64,
) -> Result<UpsilonEstimate> {
    if outer < 200 {
        return Err(Error::PreconditionViolation(format!(
            "estimate_upsilon needs outer >= 200, got {outer}"
        )));
    }
    if inner < 10_000 {
        return Err(Error::PreconditionViolation(format!(
            "estimate_upsilon needs inner >= 1e4, got {inner}"
        )));
    }
    let law = model.law()?;
    let results: Vec<(f64, f64)> = (0..outer)
        .into_par_iter()
        .map(|o| one_upsilon_draw(model, &law, o, inner, master_seed))
        .collect::<Result<Vec<_>>>()?;

    let contributions: Vec<f64> = results.iter().map(|&(c, _)| c).collect();
    // Leave-one-out jackknife of the mean.
    let total: f64 = contributions.iter().sum();
    let mean = total / outer as f64;
    let mut jk = 0.0;
    for &c in &contributions {
        let loo = (total - c) / (outer as f64 - 1.0);
        jk += (loo - mean) * (loo - mean);
    }
    let se = ((outer as f64 - 1.0) / outer as f64 * jk).sqrt();

    let cells: Vec<f64> =
        results.iter().filter(|&&(_, cells)| cells > 0.0).map(|&(_, c)| c).collect();
    let mean_cells =
        if cells.is_empty() { 0.0 } else { cells.iter().sum::<f64>() / cells.len() as f64 };
    Ok(UpsilonEstimate {
        upsilon: mean,
        se,
        bias_bound: 4.0 * mean_cells / (inner as f64).sqrt(),
        outer,
        inner,
        mean_cells,
    })
}

/// One outer draw: returns (contribution, occupied cells or 0 when skipped).
fn one_upsilon_draw(
    model: &ModelSpec,
    law: &IncrementLaw,
    o: u64,
    inner: u64,
    master_seed: u64,
) -> Result<(f64, f64)> {
    let mut s = derive_stream(master_seed, o, tags::SAMPLE);
    match *model {
        ModelSpec::Er { n, lambda, d } => {
            let g0 = er::sample_graph(n, lambda, &mut s)?;
            let mut g = g0.clone();
            let mut cs = derive_stream(master_seed, o, tags::COUPLE);
            let rec = er::size_bias_step(&mut g, d, law, &mut cs)?;
            let factor = (rec.g * rec.d_incr as f64 * (rec.d_incr - 1) as f64).abs();
            if factor == 0.0 {
                return Ok((0.0, 0.0));
            }
            let mut frozen = ErFrozen::new(&g0, &rec, d);
            let mut is = derive_stream(master_seed, o, tags::CONDITIONAL);
            let mut counts = vec![0u64; n + 1];
            for _ in 0..inner {
                let w = frozen.resample_w(&mut is);
                counts[w as usize] += 1;
            }
            let pmf = Pmf::from_counts(0, &counts)?;
            let cells = counts.iter().filter(|&&c| c > 0).count() as f64;
            Ok((factor * crate::dist::smoothness(&pmf, 2), cells))
        }
        ModelSpec::Gg { n, r, d, .. } => {
            let cfg0 = gg::sample_config(n, r, &mut s)?;
            let mut cfg = cfg0.clone();
            let mut cs = derive_stream(master_seed, o, tags::COUPLE);
            let rec = gg::size_bias_step_gg(&mut cfg, d, law, &mut cs)?;
            let factor = (rec.g * rec.d_incr as f64 * (rec.d_incr - 1) as f64).abs();
            if factor == 0.0 {
                return Ok((0.0, 0.0));
            }
            let mut frozen = GgFrozen::new(&cfg0, &cfg, &rec);
            let mut is = derive_stream(master_seed, o, tags::CONDITIONAL);
            let mut counts = vec![0u64; n + 1];
            for _ in 0..inner {
                let w = frozen.resample_w(d, &mut is)?;
                counts[w as usize] += 1;
            }
            let pmf = Pmf::from_counts(0, &counts)?;
            let cells = counts.iter().filter(|&&c| c > 0).count() as f64;
            Ok((factor * crate::dist::smoothness(&pmf, 2), cells))
        }
    }
}

/// Frozen context for the graph model: all edges incident to
/// A_I = {I} u N(I) u {J} keep their realized states; edges inside the
/// complement are resampled i.i.d. Only the complement degree offsets are
/// needed, so one conditional draw costs O(edges of the complement).
struct ErFrozen {
    m: usize,
    p: f64,
    ln_q: f64,
    total_pairs: u64,
    d: i64,
    /// Frozen contribution of the A_I vertices to W_d.
    count_frozen: i64,
    /// W_d contribution of the complement at zero resampled degree.
    count_base: i64,
    /// Frozen cross-degree of each complement vertex.
    offsets: Vec<u32>,
    deg: Vec<u32>,
    touched: Vec<u32>,
}

impl ErFrozen {
    fn new(g0: &er::ErSample, rec: &crate::sizebias::CouplingRecord, d: i64) -> ErFrozen {
        let n = g0.n();
        let i = rec.i_chosen;
        let mut in_a = vec![false; n];
        in_a[i] = true;
        for v in 0..n {
            if v != i && g0.has_edge(i, v) {
                in_a[v] = true;
            }
        }
        if let Some(j) = rec.j_moved {
            in_a[j] = true;
        }
        let mut count_frozen = 0i64;
        let mut offsets_full = vec![0u32; n];
        for v in 0..n {
            if in_a[v] {
                count_frozen += (g0.degree(v) as i64 != d) as i64;
                for u in 0..n {
                    if u != v && !in_a[u] && g0.has_edge(v, u) {
                        offsets_full[u] += 1;
                    }
                }
            }
        }
        let offsets: Vec<u32> =
            (0..n).filter(|&v| !in_a[v]).map(|v| offsets_full[v]).collect();
        let count_base = offsets.iter().filter(|&&o| o as i64 != d).count() as i64;
        let m = offsets.len();
        let p = g0.p();
        ErFrozen {
            m,
            p,
            ln_q: (-p).ln_1p(),
            total_pairs: (m as u64) * (m as u64).saturating_sub(1) / 2,
            d,
            count_frozen,
            count_base,
            offsets,
            deg: vec![0; m],
            touched: Vec::new(),
        }
    }

    fn resample_w(&mut self, stream: &mut Stream) -> i64 {
        const SENTINEL: u32 = u32::MAX;
        self.touched.clear();
        if self.m >= 2 && self.p > 0.0 {
            let mut t: u64 = 0;
            loop {
                let u = stream.uniform();
                let gap = ((-u).ln_1p() / self.ln_q).floor();
                if !gap.is_finite() || gap >= (self.total_pairs - t) as f64 {
                    break;
                }
                t += gap as u64;
                let (a, b) = pair_from_index_m(self.m, t);
                self.deg[a] += 1;
                self.deg[b] += 1;
                self.touched.push(a as u32);
                self.touched.push(b as u32);
                t += 1;
                if t >= self.total_pairs {
                    break;
                }
            }
        }
        let mut w = self.count_frozen + self.count_base;
        for idx in 0..self.touched.len() {
            let v = self.touched[idx] as usize;
            if self.deg[v] != SENTINEL {
                let o = self.offsets[v] as i64;
                let tot = o + self.deg[v] as i64;
                w += ((tot != self.d) as i64) - ((o != self.d) as i64);
                self.deg[v] = SENTINEL;
            }
        }
        for idx in 0..self.touched.len() {
            self.deg[self.touched[idx] as usize] = 0;
        }
        w
    }
}

fn pair_from_index_m(m: usize, t: u64) -> (usize, usize) {
    let mf = m as f64;
    let tf = t as f64;
    let disc = (2.0 * mf - 1.0) * (2.0 * mf - 1.0) - 8.0 * tf;
    let mut i = ((2.0 * mf - 1.0 - disc.max(0.0).sqrt()) / 2.0).floor() as u64;
    let start = |i: u64| i * (m as u64 - 1) - i * i.saturating_sub(1) / 2;
    while i > 0 && start(i) > t {
        i -= 1;
    }
    while start(i + 1) <= t {
        i += 1;
    }
    let j = i + 1 + (t - start(i));
    (i as usize, j as usize)
}

/// Frozen context for the germ-grain model: germs inside
/// B(V_I, 2r) u B(V_J, r) u B(V_J^s, r) keep their positions; the rest are
/// resampled uniformly outside that region.
struct GgFrozen {
    n: usize,
    r: f64,
    side: f64,
    centers: [[f64; 2]; 3],
    radii: [f64; 3],
    frozen: Vec<bool>,
    base_points: Vec<[f64; 2]>,
    work_points: Vec<[f64; 2]>,
}

impl GgFrozen {
    fn new(
        cfg0: &gg::GermConfig,
        cfg_after: &gg::GermConfig,
        rec: &crate::sizebias::CouplingRecord,
    ) -> GgFrozen {
        let n = cfg0.n();
        let r = cfg0.r();
        let side = cfg0.side();
        let i = rec.i_chosen;
        // Convention: J = I when X = 0.
        let j = rec.j_moved.unwrap_or(i);
        let v_i = cfg0.points()[i];
        let v_j = cfg0.points()[j];
        let v_js = cfg_after.points()[j];
        let centers = [v_i, v_j, v_js];
        let radii = [2.0 * r, r, r];
        let mut frozen = vec![false; n];
        for v in 0..n {
            let p = cfg0.points()[v];
            for (c, rad) in centers.iter().zip(radii) {
                if gg::torus_distance(p, *c, side) <= rad {
                    frozen[v] = true;
                    break;
                }
            }
        }
        GgFrozen {
            n,
            r,
            side,
            centers,
            radii,
            frozen,
            base_points: cfg0.points().to_vec(),
            work_points: vec![[0.0; 2]; n],
        }
    }

    #[inline]
    fn in_region(&self, p: [f64; 2]) -> bool {
        for (c, rad) in self.centers.iter().zip(self.radii) {
            if gg::torus_distance(p, *c, self.side) <= rad {
                return true;
            }
        }
        false
    }

    fn resample_w(&mut self, d: i64, stream: &mut Stream) -> Result<i64> {
        const CAP: usize = 10_000;
        for v in 0..self.n {
            if self.frozen[v] {
                self.work_points[v] = self.base_points[v];
            } else {
                let mut placed = false;
                for _ in 0..CAP {
                    let cand = [stream.uniform() * self.side, stream.uniform() * self.side];
                    if !self.in_region(cand) {
                        self.work_points[v] = cand;
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(Error::ResourceLimit(
                        "conditional resampling outside the frozen region failed".into(),
                    ));
                }
            }
        }
        let cfg = gg::from_points(self.work_points.clone(), self.r, 0)?;
        Ok(cfg.w_count(d))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct YutingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Check ||Y - mu||_r <= sqrt(2 (r-1) ||G||_r ||Y' - Y||_r) on coupled
/// samples. The precondition E|Y' - mu|^r <= E|Y - mu|^r is verified on the
/// sample first; `holds` allows 5 joint standard errors of slack.
pub fn yuting_check(triples: &[(f64, f64, f64)], mu: f64, r: u32) -> Result<YutingCheck> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("r = {r} must be >= 2")));
    }
    if triples.len() < 100 {
        return Err(Error::DegenerateInput("too few coupled samples".into()));
    }
    let y_c: Vec<f64> = triples.iter().map(|&(y, _, _)| y - mu).collect();
    let yp_c: Vec<f64> = triples.iter().map(|&(_, yp, _)| yp - mu).collect();
    let (m_y, se_y) = moment_with_se(&y_c, r);
    let (m_yp, se_yp) = moment_with_se(&yp_c, r);
    if m_yp > m_y + 5.0 * (se_y.powi(2) + se_yp.powi(2)).sqrt() {
        return Err(Error::PreconditionViolation(format!(
            "E|Y'-mu|^r = {m_yp} exceeds E|Y-mu|^r = {m_y} on the sample"
        )));
    }
    let (lhs, se_lhs) = lq_norm_with_se(&y_c, r);
    let gs: Vec<f64> = triples.iter().map(|&(_, _, g)| g).collect();
    let ds: Vec<f64> = triples.iter().map(|&(y, yp, _)| yp - y).collect();
    let (g_norm, se_g) = lq_norm_with_se(&gs, r);
    let (d_norm, se_d) = lq_norm_with_se(&ds, r);
    let rhs = (2.0 * (r as f64 - 1.0) * g_norm * d_norm).sqrt();
    // Relative errors add under the square-root product.
    let se_rhs = if g_norm > 0.0 && d_norm > 0.0 {
        0.5 * rhs * ((se_g / g_norm).powi(2) + (se_d / d_norm).powi(2)).sqrt()
    } else {
        0.0
    };
    let joint = (se_lhs.powi(2) + se_rhs.powi(2)).sqrt();
    Ok(YutingCheck { lhs, rhs, holds: lhs <= rhs + 5.0 * joint })
}

fn moment_with_se(xs: &[f64], r: u32) -> (f64, f64) {
    let mut acc = RunningMoments::new();
    for &x in xs {
        acc.push(x.abs().powi(r as i32));
    }
    (acc.mean(), acc.se_mean())
}

/// The binomial moment bound A(x, l) = pi e^(e-2) * (l / log(e-1) if l > x
/// else x): an upper bound for ||Bi(n, p)||_l with x = n p.
pub fn binmom_bound(x: f64, l: u32) -> f64 {
    let c = std::f64::consts::PI * (std::f64::consts::E - 2.0).exp();
    if (l as f64) > x {
        c * l as f64 / (std::f64::consts::E - 1.0).ln()
    } else {
        c * x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BranchCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Verify || sum_{i in E} Y_i ||_l <= y ||E||_l on Monte Carlo samples of
/// the random index-set size and the random sums, within 5 joint SE.
pub fn branch_bound_check(
    e_counts: &[u64],
    y_norm_bound: f64,
    l: u32,
    sum_samples: &[f64],
) -> Result<BranchCheck> {
    if e_counts.is_empty() || sum_samples.is_empty() {
        return Err(Error::DegenerateInput("empty sample".into()));
    }
    let (lhs, se_lhs) = lq_norm_with_se(sum_samples, l);
    let ef: Vec<f64> = e_counts.iter().map(|&e| e as f64).collect();
    let (e_norm, se_e) = lq_norm_with_se(&ef, l);
    let rhs = y_norm_bound * e_norm;
    let joint = (se_lhs.powi(2) + (y_norm_bound * se_e).powi(2)).sqrt();
    Ok(BranchCheck { lhs, rhs, holds: lhs <= rhs + 5.0 * joint })
}

/// The simplified Chernoff tail bound e^(-delta mu / 3) for
/// P[S > (1 + delta) mu], valid for delta >= 1.
pub fn chernoff_tail(mu: f64, delta: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu = {mu} must be > 0")));
    }
    if !(delta >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "the tail display requires delta >= 1, got {delta}"
        )));
    }
    Ok((-delta * mu / 3.0).exp())
}
