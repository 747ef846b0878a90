//! Command line front end: simulate occupancy statistics, run rate sweeps,
//! verify dumps and core properties, evaluate the coupling bound pipeline,
//! and print exact small-scale oracle tables.

use clap::{Args, Parser, Subcommand};
use occupancy::dist::{format_g17, loc_distance, tp_params, tp_pmf, tv_distance, Pmf};
use occupancy::harness::{ExperimentConfig, Model};
use occupancy::rng::{derive_stream, tags};
use occupancy::stein::ModelSpec;
use occupancy::{er, gg, harness, oracle, sizebias, stein, Error};
use std::fs;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "occupancy", version, about = "Occupancy-statistic simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed for every derived stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model: "er" or "gg".
    #[arg(long)]
    model: String,
    /// Edge intensity for the graph model (p = lambda / n).
    #[arg(long)]
    lambda: Option<f64>,
    /// Grain radius for the germ-grain model.
    #[arg(long)]
    r: Option<f64>,
    /// Number of locations.
    #[arg(long)]
    n: usize,
    /// Excluded occupancy d.
    #[arg(long)]
    d: i64,
}

impl ModelArgs {
    fn spec(&self) -> occupancy::Result<ModelSpec> {
        match self.model.as_str() {
            "er" => Ok(ModelSpec::Er {
                n: self.n,
                lambda: self
                    .lambda
                    .ok_or_else(|| Error::InvalidArgument("model=er needs --lambda".into()))?,
                d: self.d,
            }),
            "gg" => Ok(ModelSpec::Gg {
                n: self.n,
                r: self.r.ok_or_else(|| Error::InvalidArgument("model=gg needs --r".into()))?,
                d: self.d,
                quad: gg::QuadSpec::default(),
            }),
            other => Err(Error::InvalidArgument(format!("unknown model {other}"))),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample W_d and dump raw samples, its empirical pmf, or one
    /// configuration in the dump formats.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Number of replications.
        #[arg(long, default_value_t = 10_000)]
        reps: u64,
        /// Emit the empirical pmf as CSV instead of raw samples.
        #[arg(long)]
        pmf: bool,
        /// Emit one sampled configuration in its dump format and exit.
        #[arg(long)]
        dump_configuration: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a rate sweep from a key=value config file.
    Rates {
        /// Config file path.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's thread count.
        #[arg(long)]
        threads: Option<usize>,
        /// Override the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a dumped graph or germ configuration, or run the built-in
    /// property suite.
    Verify {
        /// Graph dump (header n=<n>, lines "i j").
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Germ configuration dump (header n=<n>,r=<r>, lines "i,x,y").
        #[arg(long)]
        germs: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate c1 and c2 and evaluate the coupling bounds.
    Bound {
        #[command(flatten)]
        model: ModelArgs,
        /// Replications for the T-norm estimates.
        #[arg(long, default_value_t = 2_000)]
        t_reps: u64,
        /// Outer replications for the smoothness term.
        #[arg(long, default_value_t = 200)]
        outer: u64,
        /// Inner conditional replications per outer draw.
        #[arg(long, default_value_t = 20_000)]
        inner: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Exact small-n table: the enumerated law of W_d and its moments.
    Oracle {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        d: i64,
        /// Also print the size-biased law.
        #[arg(long)]
        size_bias: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_)
                | Error::PreconditionViolation(_)
                | Error::DegenerateInput(_) => ExitCode::from(2),
                Error::ResourceLimit(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn writer_for(out: &Option<PathBuf>) -> occupancy::Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn install_pool<T>(
    threads: Option<usize>,
    f: impl FnOnce() -> occupancy::Result<T> + Send,
) -> occupancy::Result<T>
where
    T: Send,
{
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InternalInvariant(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn run(cli: Cli) -> occupancy::Result<()> {
    match cli.command {
        Command::Simulate { model, reps, pmf, dump_configuration, common } => {
            let spec = model.spec()?;
            let mut w = writer_for(&common.out)?;
            if dump_configuration {
                let mut s = derive_stream(common.seed, 0, tags::SAMPLE);
                match spec {
                    ModelSpec::Er { n, lambda, .. } => {
                        er::sample_graph(n, lambda, &mut s)?.write_edges(&mut w)?
                    }
                    ModelSpec::Gg { n, r, .. } => {
                        gg::sample_config(n, r, &mut s)?.write_csv(&mut w)?
                    }
                }
                return Ok(());
            }
            let d = spec.d();
            let counts = install_pool(common.threads, || {
                use rayon::prelude::*;
                let n = model.n;
                Ok((0..reps)
                    .into_par_iter()
                    .fold(
                        || vec![0u64; n + 1],
                        |mut counts, rep| {
                            let mut s = derive_stream(common.seed, rep, tags::SAMPLE);
                            let w = match &spec {
                                ModelSpec::Er { n, lambda, .. } => {
                                    er::w_d(&er::sample_graph(*n, *lambda, &mut s).unwrap(), d)
                                }
                                ModelSpec::Gg { n, r, .. } => {
                                    gg::sample_config(*n, *r, &mut s).unwrap().w_count(d)
                                }
                            };
                            counts[w as usize] += 1;
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
                    ))
            })?;
            if pmf {
                Pmf::from_counts(0, &counts)?.write_csv(&mut w)?;
            } else {
                for (value, &c) in counts.iter().enumerate() {
                    for _ in 0..c {
                        writeln!(w, "{value}")?;
                    }
                }
            }
            Ok(())
        }
        Command::Rates { config, seed, threads, out } => {
            let text = fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = Some(t);
            }
            if let Some(o) = out {
                cfg.out = Some(o);
            }
            let series = harness::run_rate_experiment(&cfg)?;
            let mut w = writer_for(&cfg.out)?;
            series.write_csv(&mut w, &cfg)
        }
        Command::Verify { graph, germs, common } => {
            if graph.is_none() && germs.is_none() {
                // Buffer the report so the checks can run inside the pool.
                let mut buf: Vec<u8> = Vec::new();
                let res = install_pool(common.threads, || quick_verify(common.seed, &mut buf));
                let mut w = writer_for(&common.out)?;
                w.write_all(&buf)?;
                return res;
            }
            let mut w = writer_for(&common.out)?;
            if let Some(path) = graph {
                let (n, edges) = er::read_edges(BufReader::new(fs::File::open(&path)?))?;
                writeln!(w, "PASS graph dump: n={n}, {} edges, consistent", edges.len())?;
                return Ok(());
            }
            if let Some(path) = germs {
                let cfg = gg::GermConfig::read_csv(BufReader::new(fs::File::open(&path)?))?;
                if cfg.m_counts() != cfg.recount_brute() {
                    return Err(Error::InternalInvariant(
                        "cell-list counts disagree with brute force".into(),
                    ));
                }
                writeln!(
                    w,
                    "PASS germ dump: n={}, r={}, neighbor counts consistent",
                    cfg.n(),
                    cfg.r()
                )?;
            }
            Ok(())
        }
        Command::Bound { model, t_reps, outer, inner, common } => {
            let spec = model.spec()?;
            let inputs = install_pool(common.threads, || {
                stein::estimate_bound_inputs(&spec, t_reps, outer, inner, common.seed)
            })?;
            let mut w = writer_for(&common.out)?;
            inputs.write_csv(&mut w)?;
            let (tv, loc) = stein::brr_bounds(&inputs);
            writeln!(w, "# tv_bound={}", format_g17(tv))?;
            match loc {
                Some(l) => writeln!(w, "# loc_bound={}", format_g17(l))?,
                None => writeln!(
                    w,
                    "# loc_bound=absent (c1 + e c2 = {} >= sigma/2 = {})",
                    format_g17(inputs.c1 + std::f64::consts::E * inputs.c2),
                    format_g17(inputs.sigma / 2.0)
                )?,
            }
            Ok(())
        }
        Command::Oracle { n, lambda, d, size_bias, common } => {
            let law = oracle::er_exact_pmf(n, lambda, d)?;
            let mut w = writer_for(&common.out)?;
            writeln!(
                w,
                "# model=er,n={n},lambda={},d={d},mean={},variance={}",
                format_g17(lambda),
                format_g17(law.mean),
                format_g17(law.variance)
            )?;
            law.pmf.write_csv(&mut w)?;
            if size_bias {
                writeln!(w, "# size-biased law")?;
                oracle::er_exact_size_bias_pmf(n, lambda, d)?.write_csv(&mut w)?;
            }
            Ok(())
        }
    }
}

/// A fast representative slice of the property suites (the full suites run
/// under `cargo test`). Prints one line per check.
fn quick_verify(seed: u64, w: &mut dyn Write) -> occupancy::Result<()> {
    let mut failures = 0;
    let mut check = |w: &mut dyn Write, name: &str, ok: bool| -> occupancy::Result<()> {
        writeln!(w, "{} {}", if ok { "PASS" } else { "FAIL" }, name)?;
        if !ok {
            failures += 1;
        }
        Ok(())
    };

    // Translated Poisson mean/variance window.
    let params = tp_params(12.25, 7.5)?;
    let pmf = tp_pmf(params, 1e-10)?;
    check(
        w,
        "translated Poisson mean and variance window",
        (pmf.mean() - 12.25).abs() < 1e-6 && pmf.variance() >= 7.5 - 1e-9 && pmf.variance() <= 8.5,
    )?;

    // Smoothness and tv identity.
    let b = Pmf::binomial(12, 0.4)?;
    check(
        w,
        "S1 = 2 tv(p, shift p)",
        (occupancy::dist::smoothness(&b, 1) - 2.0 * tv_distance(&b, &b.shift(1))).abs() < 1e-12,
    )?;

    // Increment-law exactness on a binomial base.
    let law = sizebias::build_increment_law(Pmf::binomial(30, 0.2)?, 2)?;
    let coupled = sizebias::coupled_law(&law);
    let conditional = sizebias::conditional_not_equal(law.base(), 2)?;
    check(w, "coupled law equals conditional law", loc_distance(&coupled, &conditional) < 1e-12)?;

    // Closed-form graph moments against exhaustive enumeration.
    let mut ok = true;
    for n in 2..=5usize {
        for d in 0..(n as i64).min(3) {
            let exact = oracle::er_exact_pmf(n, 1.0, d)?;
            let m = er::er_moments(n, 1.0, d)?;
            ok &= (m.mu - exact.mean).abs() < 1e-10;
            if let Some(s2) = m.sigma2 {
                ok &= (s2 - exact.variance).abs() < 1e-10;
            }
        }
    }
    check(w, "graph moments match exhaustive oracle", ok)?;

    // Coupling increment bound on a small grid.
    let mut s = derive_stream(seed, 0, tags::TEST);
    let mut ok = true;
    for &(n, lambda, d) in &[(8usize, 1.0f64, 0i64), (16, 2.0, 1)] {
        let law = sizebias::build_increment_law(
            Pmf::binomial(n as u64 - 1, lambda / n as f64)?,
            d,
        )?;
        let mut g = er::sample_graph(n, lambda, &mut s)?;
        for _ in 0..2_000 {
            er::resample_graph(&mut g, &mut s);
            let rec = er::size_bias_step(&mut g, d, &law, &mut s)?;
            ok &= rec.d_incr.abs() <= 2;
        }
    }
    check(w, "graph coupling |D| <= 2", ok)?;

    // Cell list equals brute force.
    let mut ok = true;
    for rep in 0..50u64 {
        let mut st = derive_stream(seed, rep, tags::TEST);
        let cfg = gg::sample_config(40, 0.6 + st.uniform(), &mut st)?;
        ok &= cfg.m_counts() == cfg.recount_brute();
    }
    check(w, "cell-list neighbor counts equal brute force", ok)?;

    // Germ coupling structural bound.
    let mut ok = true;
    let law = sizebias::build_increment_law(
        Pmf::binomial(47, std::f64::consts::PI / 48.0)?,
        1,
    )?;
    for rep in 0..500u64 {
        let mut st = derive_stream(seed, rep, tags::COUPLE);
        let mut cfg = gg::sample_config(48, 1.0, &mut st)?;
        let rec = gg::size_bias_step_gg(&mut cfg, 1, &law, &mut st)?;
        ok &= rec.d_incr.abs() <= gg::structural_d_bound(1);
    }
    check(w, "germ coupling |D| within structural bound", ok)?;

    // Determinism of a small sweep across thread counts.
    let mut cfg = ExperimentConfig {
        model: Model::Er { lambda: 1.0 },
        d: 1,
        n_list: vec![16, 32, 64],
        reps: 2_000,
        master_seed: seed,
        out: None,
        threads: Some(1),
    };
    let a = harness::run_rate_experiment(&cfg)?;
    cfg.threads = Some(8);
    let b = harness::run_rate_experiment(&cfg)?;
    let (mut buf_a, mut buf_b) = (Vec::new(), Vec::new());
    a.write_csv(&mut buf_a, &cfg)?;
    b.write_csv(&mut buf_b, &cfg)?;
    check(w, "rate sweep byte-identical across thread counts", buf_a == buf_b)?;

    if failures > 0 {
        return Err(Error::InternalInvariant(format!("{failures} verify checks failed")));
    }
    Ok(())
}
