//! Experiment harness: flat key=value configs, deterministic parallel rate
//! sweeps, weighted log-log fits, and CSV emission with a provenance header.
//!
//! Determinism contract: given (config, master_seed), every output byte is
//! the same regardless of the thread count. Replication streams are derived
//! counter-style from (row seed, replication index) and all cross-thread
//! merges are integer accumulators.

use crate::dist::{format_g17, loc_distance, tp_params, tp_pmf, tv_distance, Pmf};
use crate::er;
use crate::error::{Error, Result};
use crate::gg;
use crate::rng::{derive_stream, fnv1a, mix64, tags};
use crate::stats::multinomial_resample;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::io::Write;
use std::path::PathBuf;

pub use crate::rng::Stream;

/// Which occupancy model a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    Er { lambda: f64 },
    Gg { r: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: Model,
    pub d: i64,
    pub n_list: Vec<usize>,
    pub reps: u64,
    pub master_seed: u64,
    pub out: Option<PathBuf>,
    /// None = use the ambient rayon pool.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(Error::PreconditionViolation("n_list is empty".into()));
        }
        if !self.n_list.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::PreconditionViolation(
                "n_list must be strictly increasing".into(),
            ));
        }
        if self.reps < 1_000 {
            return Err(Error::PreconditionViolation(format!(
                "reps = {} must be >= 1e3",
                self.reps
            )));
        }
        if self.d < 0 {
            return Err(Error::PreconditionViolation(format!("d = {} must be >= 0", self.d)));
        }
        Ok(())
    }

    /// Parse the flat key=value format. Blank lines and `#` comments are
    /// ignored. `lambda` selects the graph model, `r` the germ-grain model.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut lambda = None;
        let mut r = None;
        let mut model_name = None;
        let mut d = None;
        let mut n_list = None;
        let mut reps = None;
        let mut master_seed = 0u64;
        let mut out = None;
        let mut threads = None;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got: {line}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "model" => model_name = Some(value.to_string()),
                "lambda" => lambda = Some(parse_num::<f64>(key, value)?),
                "r" => r = Some(parse_num::<f64>(key, value)?),
                "d" => d = Some(parse_num::<i64>(key, value)?),
                "reps" => reps = Some(parse_num::<u64>(key, value)?),
                "master_seed" | "seed" => master_seed = parse_num::<u64>(key, value)?,
                "out" => out = Some(PathBuf::from(value)),
                "threads" => {
                    threads = if value == "auto" {
                        None
                    } else {
                        Some(parse_num::<usize>(key, value)?)
                    }
                }
                "n_list" => {
                    let list: Result<Vec<usize>> = value
                        .split(',')
                        .map(|tok| parse_num::<usize>("n_list entry", tok.trim()))
                        .collect();
                    n_list = Some(list?);
                }
                other => return Err(Error::Parse(format!("unknown config key: {other}"))),
            }
        }
        let model = match model_name.as_deref() {
            Some("er") => Model::Er {
                lambda: lambda.ok_or_else(|| Error::Parse("model=er needs lambda".into()))?,
            },
            Some("gg") => {
                Model::Gg { r: r.ok_or_else(|| Error::Parse("model=gg needs r".into()))? }
            }
            Some(other) => return Err(Error::Parse(format!("unknown model: {other}"))),
            None => return Err(Error::Parse("missing model key".into())),
        };
        let cfg = ExperimentConfig {
            model,
            d: d.ok_or_else(|| Error::Parse("missing d".into()))?,
            n_list: n_list.ok_or_else(|| Error::Parse("missing n_list".into()))?,
            reps: reps.ok_or_else(|| Error::Parse("missing reps".into()))?,
            master_seed,
            out,
            threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical semantic form; excludes threads and output path so reruns
    /// at different parallelism hash identically.
    pub fn canonical(&self) -> String {
        let model = match self.model {
            Model::Er { lambda } => format!("model=er\nlambda={}", format_g17(lambda)),
            Model::Gg { r } => format!("model=gg\nr={}", format_g17(r)),
        };
        let ns: Vec<String> = self.n_list.iter().map(|n| n.to_string()).collect();
        format!(
            "{model}\nd={}\nn_list={}\nreps={}\nmaster_seed={}\n",
            self.d,
            ns.join(","),
            self.reps,
            self.master_seed
        )
    }

    pub fn content_hash(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Parse(format!("{key}: {e}")))
}

#[derive(Debug, Clone, Copy)]
pub struct RateRow {
    pub n: usize,
    pub sigma_hat: f64,
    pub se_sigma: f64,
    pub dtv_hat: f64,
    pub se_dtv: f64,
    pub dloc_hat: f64,
    pub se_dloc: f64,
    /// Set when the local-distance estimate sits at or below its sampling
    /// noise floor for this replication count.
    pub loc_unreliable: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct RateSeries {
    pub rows: Vec<RateRow>,
    pub fit_tv: Option<Fit>,
    pub fit_loc: Option<Fit>,
}

impl RateSeries {
    /// Emit the provenance header, the fixed column set, and the slope fits
    /// as trailing comment lines. LF endings, 17-significant-digit reals.
    pub fn write_csv<W: Write>(&self, mut w: W, config: &ExperimentConfig) -> Result<()> {
        writeln!(
            w,
            "# config_hash={:016x},seed={},version={}",
            config.content_hash(),
            config.master_seed,
            env!("CARGO_PKG_VERSION")
        )?;
        writeln!(w, "n,sigma_hat,se_sigma,dtv_hat,se_dtv,dloc_hat,se_dloc")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                row.n,
                format_g17(row.sigma_hat),
                format_g17(row.se_sigma),
                format_g17(row.dtv_hat),
                format_g17(row.se_dtv),
                format_g17(row.dloc_hat),
                format_g17(row.se_dloc)
            )?;
        }
        for row in &self.rows {
            if row.loc_unreliable {
                writeln!(w, "# warning: dloc at n={} is at its noise floor for reps", row.n)?;
            }
        }
        for (name, fit) in [("fit_tv", &self.fit_tv), ("fit_loc", &self.fit_loc)] {
            if let Some(f) = fit {
                writeln!(
                    w,
                    "# {name}: slope={} intercept={} ci_lo={} ci_hi={}",
                    format_g17(f.slope),
                    format_g17(f.intercept),
                    format_g17(f.ci.0),
                    format_g17(f.ci.1)
                )?;
            }
        }
        Ok(())
    }
}

/// Weighted least squares of log y on log x with weights (y/se)^2 and a
/// t-distribution confidence interval for the slope.
pub fn fit_loglog(rows: &[(f64, f64, f64)]) -> Result<Fit> {
    if rows.len() < 3 {
        return Err(Error::PreconditionViolation(format!(
            "log-log fit needs >= 3 rows, got {}",
            rows.len()
        )));
    }
    for &(x, y, se) in rows {
        if !(y > 0.0) {
            return Err(Error::InvalidArgument(format!("y = {y} must be positive")));
        }
        if !(x > 0.0) {
            return Err(Error::InvalidArgument(format!("x = {x} must be positive")));
        }
        if !(se > 0.0) || !se.is_finite() {
            return Err(Error::InvalidArgument(format!("se = {se} must be positive")));
        }
    }
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            if rows[i].0 == rows[j].0 {
                return Err(Error::InvalidArgument(format!("duplicate x = {}", rows[i].0)));
            }
        }
    }
    let m = rows.len();
    let pts: Vec<(f64, f64, f64)> =
        rows.iter().map(|&(x, y, se)| (x.ln(), y.ln(), (y / se) * (y / se))).collect();
    let wsum: f64 = pts.iter().map(|p| p.2).sum();
    let ux: f64 = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / wsum;
    let uy: f64 = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / wsum;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - ux) * (p.0 - ux)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - ux) * (p.1 - uy)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument("degenerate x spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = uy - slope * ux;
    let df = (m - 2) as f64;
    let s2: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            p.2 * r * r
        })
        .sum::<f64>()
        / df;
    let se_slope = (s2 / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InternalInvariant(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    Ok(Fit { slope, intercept, ci: (slope - t * se_slope, slope + t * se_slope) })
}

/// Run the sweep: per n, the empirical pmf of W_d over `reps` replications,
/// the closed-form mean, sigma (closed form for the graph model, Monte Carlo
/// for the germ-grain model), distances to the matched translated Poisson
/// law, bootstrap standard errors, and the two slope fits.
pub fn run_rate_experiment(config: &ExperimentConfig) -> Result<RateSeries> {
    config.validate()?;
    match config.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InternalInvariant(format!("thread pool: {e}")))?;
            pool.install(|| run_rate_inner(config))
        }
        None => run_rate_inner(config),
    }
}

fn row_seed(master_seed: u64, row: usize) -> u64 {
    mix64(master_seed ^ mix64(0x524f_5700 + row as u64))
}

fn run_rate_inner(config: &ExperimentConfig) -> Result<RateSeries> {
    let mut rows = Vec::with_capacity(config.n_list.len());
    for (row_idx, &n) in config.n_list.iter().enumerate() {
        rows.push(run_one_row(config, row_idx, n)?);
    }
    let fit_rows_tv: Vec<(f64, f64, f64)> =
        rows.iter().map(|r| (r.sigma_hat, r.dtv_hat, r.se_dtv)).collect();
    let fit_rows_loc: Vec<(f64, f64, f64)> =
        rows.iter().map(|r| (r.sigma_hat, r.dloc_hat, r.se_dloc)).collect();
    let fit_ok = |rows: &[(f64, f64, f64)]| {
        rows.len() >= 3 && rows.iter().all(|&(x, y, se)| x > 0.0 && y > 0.0 && se > 0.0)
    };
    let fit_tv = if fit_ok(&fit_rows_tv) { fit_loglog(&fit_rows_tv).ok() } else { None };
    let fit_loc = if fit_ok(&fit_rows_loc) { fit_loglog(&fit_rows_loc).ok() } else { None };
    Ok(RateSeries { rows, fit_tv, fit_loc })
}

fn run_one_row(config: &ExperimentConfig, row_idx: usize, n: usize) -> Result<RateRow> {
    let d = config.d;
    let reps = config.reps;
    let seed = row_seed(config.master_seed, row_idx);

    // Integer count accumulation: scheduling-independent by commutativity.
    let counts = match config.model {
        Model::Er { lambda } => {
            if lambda >= n as f64 {
                return Err(Error::PreconditionViolation(format!(
                    "lambda = {lambda} >= n = {n}"
                )));
            }
            const CHUNK: u64 = 4096;
            let chunks = reps.div_ceil(CHUNK);
            (0..chunks)
                .into_par_iter()
                .fold(
                    || (vec![0u64; n + 1], er::DegreeSampler::new(n, lambda).expect("validated")),
                    |(mut counts, mut sampler), chunk| {
                        let lo = chunk * CHUNK;
                        let hi = (lo + CHUNK).min(reps);
                        for rep in lo..hi {
                            let mut s = derive_stream(seed, rep, tags::SAMPLE);
                            counts[sampler.sample_w(d, &mut s) as usize] += 1;
                        }
                        (counts, sampler)
                    },
                )
                .map(|(counts, _)| counts)
                .reduce(
                    || vec![0u64; n + 1],
                    |mut a, b| {
                        for (x, y) in a.iter_mut().zip(&b) {
                            *x += y;
                        }
                        a
                    },
                )
        }
        Model::Gg { r } => (0..reps)
            .into_par_iter()
            .fold(
                || vec![0u64; n + 1],
                |mut counts, rep| {
                    let mut s = derive_stream(seed, rep, tags::SAMPLE);
                    let cfg = gg::sample_config(n, r, &mut s).expect("validated geometry");
                    counts[cfg.w_count(d) as usize] += 1;
                    counts
                },
            )
            .reduce(
                || vec![0u64; n + 1],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += y;
                    }
                    a
                },
            ),
    };

    let mu = match config.model {
        Model::Er { lambda } => er::er_mu(n, lambda, d)?,
        Model::Gg { r } => gg::gg_mu(n, r, d)?,
    };
    let sigma_closed = match config.model {
        Model::Er { lambda } => {
            Some(er::er_moments(n, lambda, d)?.sigma2.ok_or_else(|| {
                Error::DegenerateInput("variance display degenerate at p = 1".into())
            })?)
        }
        Model::Gg { .. } => None,
    };
    let stat_of = |counts: &[u64]| -> (f64, f64, f64) {
        // (sigma_mc, dtv, dloc) of a count vector against TP(mu, sigma^2).
        let total: u64 = counts.iter().sum();
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for (w, &c) in counts.iter().enumerate() {
            sum += (w as f64) * c as f64;
            sumsq += (w as f64) * (w as f64) * c as f64;
        }
        let mean = sum / total as f64;
        let var = (sumsq / total as f64 - mean * mean) * total as f64 / (total as f64 - 1.0);
        let sigma2 = sigma_closed.unwrap_or(var);
        let emp = Pmf::from_counts(0, counts).expect("non-empty counts");
        let target =
            tp_pmf(tp_params(mu, sigma2).expect("sigma2 > 0"), 1e-10).expect("tp support");
        (var.sqrt(), tv_distance(&emp, &target), loc_distance(&emp, &target))
    };

    let (sigma_mc, dtv_hat, dloc_hat) = stat_of(&counts);
    let sigma_hat = sigma_closed.map(f64::sqrt).unwrap_or(sigma_mc);

    // Bootstrap (200 multinomial resamples of the count vector).
    let mut acc_sigma = crate::stats::RunningMoments::new();
    let mut acc_tv = crate::stats::RunningMoments::new();
    let mut acc_loc = crate::stats::RunningMoments::new();
    for b in 0..200u64 {
        let mut bs = derive_stream(seed, b, tags::BOOTSTRAP);
        let resampled = multinomial_resample(&counts, &mut bs);
        let (s_b, tv_b, loc_b) = stat_of(&resampled);
        acc_sigma.push(s_b);
        acc_tv.push(tv_b);
        acc_loc.push(loc_b);
    }

    // Noise floor for the local distance: the biggest cell of the target
    // carries probability ~p_max, so its empirical fluctuation is about
    // sqrt(p_max / reps).
    let target =
        tp_pmf(tp_params(mu, sigma_hat * sigma_hat).expect("sigma > 0"), 1e-10)?;
    let p_max = target.weights().iter().cloned().fold(0.0f64, f64::max);
    let loc_unreliable = dloc_hat < 4.0 * (p_max / reps as f64).sqrt();

    Ok(RateRow {
        n,
        sigma_hat,
        se_sigma: acc_sigma.sd(),
        dtv_hat,
        se_dtv: acc_tv.sd(),
        dloc_hat,
        se_dloc: acc_loc.sd(),
        loc_unreliable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn er_config(n_list: Vec<usize>, reps: u64) -> ExperimentConfig {
        ExperimentConfig {
            model: Model::Er { lambda: 1.0 },
            d: 1,
            n_list,
            reps,
            master_seed: 31,
            out: None,
            threads: None,
        }
    }

    #[test]
    fn parse_round_trip() {
        let text = "\
# sweep
model=er
lambda=1.0
d=1
n_list=250,500,1000
reps=1000
master_seed=42
threads=auto
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.model, Model::Er { lambda: 1.0 });
        assert_eq!(cfg.n_list, vec![250, 500, 1000]);
        assert_eq!(cfg.master_seed, 42);
        assert!(cfg.threads.is_none());
        // Hash is insensitive to threads.
        let mut cfg2 = cfg.clone();
        cfg2.threads = Some(8);
        assert_eq!(cfg.content_hash(), cfg2.content_hash());
    }

    #[test]
    fn parse_rejects_bad_configs() {
        assert!(ExperimentConfig::parse("model=er\nlambda=1\nd=1\nn_list=10,5\nreps=1000").is_err());
        assert!(ExperimentConfig::parse("model=er\nlambda=1\nd=1\nn_list=5,10\nreps=10").is_err());
        assert!(ExperimentConfig::parse("model=zz\nd=1\nn_list=5,10\nreps=1000").is_err());
        assert!(ExperimentConfig::parse("model=gg\nd=1\nn_list=5,10\nreps=1000").is_err());
    }

    #[test]
    fn fit_exact_power_laws() {
        let rows: Vec<(f64, f64, f64)> =
            [2.0, 4.0, 8.0, 16.0].iter().map(|&x: &f64| (x, x * x, 1.0)).collect();
        let fit = fit_loglog(&rows).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-10);
        assert!(fit.ci.1 - fit.ci.0 < 1e-8, "ci = {:?}", fit.ci);

        let rows: Vec<(f64, f64, f64)> =
            [2.0, 4.0, 8.0, 16.0].iter().map(|&x: &f64| (x, 3.0 / x, 1.0)).collect();
        let fit = fit_loglog(&rows).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-10);
        assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn fit_rejects_bad_rows() {
        assert!(fit_loglog(&[(1.0, 1.0, 1.0), (2.0, 2.0, 1.0)]).is_err());
        assert!(fit_loglog(&[(1.0, 1.0, 1.0), (2.0, 0.0, 1.0), (3.0, 1.0, 1.0)]).is_err());
        assert!(fit_loglog(&[(1.0, 1.0, 1.0), (1.0, 2.0, 1.0), (3.0, 1.0, 1.0)]).is_err());
        assert!(fit_loglog(&[(1.0, 1.0, 0.0), (2.0, 2.0, 1.0), (3.0, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn fit_ci_covers_true_slope() {
        // Perturbed power law with known relative noise: the 95% CI covers
        // the true slope in at least 90% of 200 synthetic trials.
        let mut covered = 0;
        let true_slope = -1.4;
        for trial in 0..200u64 {
            let mut s = derive_stream(9, trial, tags::TEST);
            let rows: Vec<(f64, f64, f64)> = [10.0, 20.0, 40.0, 80.0, 160.0f64]
                .iter()
                .map(|&x| {
                    let noise: f64 = 0.05 * (2.0 * s.uniform() - 1.0) * 1.7;
                    let y = 2.5 * x.powf(true_slope) * (1.0 + noise);
                    (x, y, y * 0.05)
                })
                .collect();
            let fit = fit_loglog(&rows).unwrap();
            if fit.ci.0 <= true_slope && true_slope <= fit.ci.1 {
                covered += 1;
            }
        }
        assert!(covered >= 180, "covered {covered}/200");
    }

    #[test]
    fn single_row_series_has_no_fit() {
        let cfg = er_config(vec![64], 2_000);
        let series = run_rate_experiment(&cfg).unwrap();
        assert_eq!(series.rows.len(), 1);
        assert!(series.fit_tv.is_none() && series.fit_loc.is_none());
        let row = &series.rows[0];
        assert!(row.sigma_hat > 0.0 && row.se_sigma > 0.0);
        assert!(row.se_dtv > 0.0 && row.se_dloc > 0.0);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let mut cfg = er_config(vec![32, 64, 128], 4_000);
        cfg.threads = Some(1);
        let a = run_rate_experiment(&cfg).unwrap();
        cfg.threads = Some(8);
        let b = run_rate_experiment(&cfg).unwrap();
        let mut buf_a = Vec::new();
        a.write_csv(&mut buf_a, &cfg).unwrap();
        let mut buf_b = Vec::new();
        b.write_csv(&mut buf_b, &cfg).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn gg_row_runs() {
        let cfg = ExperimentConfig {
            model: Model::Gg { r: 1.0 },
            d: 1,
            n_list: vec![64],
            reps: 2_000,
            master_seed: 5,
            out: None,
            threads: None,
        };
        let series = run_rate_experiment(&cfg).unwrap();
        let row = &series.rows[0];
        // sigma is Monte Carlo here; strict order sqrt(n) scale.
        assert!(row.sigma_hat > 1.0 && row.sigma_hat < 10.0);
    }
}
