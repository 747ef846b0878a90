//! Scratch probe for calibrating acceptance expectations. Not part of the
//! shipped surface.

use occupancy::dist::{smoothness, tp_params, tp_vs_normal_gap, Pmf};
use occupancy::oracle::er_exact_pmf;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "gap" => gap(),
        "s2" => s2(),
        "bi" => bi_half(),
        "rates" => rates(),
        "upsilon" => upsilon(),
        "gof" => gof(),
        _ => eprintln!("probe: gap | s2 | bi | rates | upsilon | gof"),
    }
}

fn gap() {
    for mu in [0.0, 0.5] {
        let base = tp_vs_normal_gap(tp_params(mu, 1.0).unwrap()).unwrap();
        println!("mu={mu} s2=1: gap={base:.6e} gap*s2={:.6}", base);
        for s2 in [4.0, 16.0, 64.0] {
            let g = tp_vs_normal_gap(tp_params(mu, s2).unwrap()).unwrap();
            println!(
                "mu={mu} s2={s2}: gap={g:.6e} gap*s2={:.6} ratio_to_base={:.4}",
                g * s2,
                g * s2 / base
            );
        }
    }
}

fn s2() {
    let t = Instant::now();
    let mut rows = Vec::new();
    for n in 4..=7usize {
        let law = er_exact_pmf(n, 1.0, 0).unwrap();
        let s2 = smoothness(&law.pmf, 2);
        println!("n={n}: S2={s2:.6} S2*n={:.6}", s2 * n as f64);
        rows.push((n as f64, s2, s2 * 0.01));
    }
    let fit = occupancy::harness::fit_loglog(&rows).unwrap();
    println!("slope={:.4} ci=({:.4},{:.4})  [{:?}]", fit.slope, fit.ci.0, fit.ci.1, t.elapsed());
}

fn bi_half() {
    let mut m = 4u64;
    let mut max = 0.0f64;
    while m <= 4096 {
        let s2 = smoothness(&Pmf::binomial(m, 0.5).unwrap(), 2);
        println!("m={m}: S2*m={:.6}", s2 * m as f64);
        max = max.max(s2 * m as f64);
        m *= 2;
    }
    println!("max = {max:.6}");
}

fn rates() {
    use occupancy::harness::*;
    for d in [0i64, 1] {
        let t = Instant::now();
        let cfg = ExperimentConfig {
            model: Model::Er { lambda: 1.0 },
            d,
            n_list: vec![250, 500, 1000, 2000],
            reps: 1_000_000,
            master_seed: 2024,
            out: None,
            threads: None,
        };
        let series = run_rate_experiment(&cfg).unwrap();
        for row in &series.rows {
            println!(
                "er d={d} n={}: sigma={:.3} dtv={:.5} (se {:.5}) dloc={:.6} (se {:.6}) unrel={}",
                row.n, row.sigma_hat, row.dtv_hat, row.se_dtv, row.dloc_hat, row.se_dloc,
                row.loc_unreliable
            );
        }
        if let Some(f) = &series.fit_tv {
            println!("er d={d} fit_tv slope={:.3} ci=({:.3},{:.3})", f.slope, f.ci.0, f.ci.1);
        }
        // Normalized loc fit.
        let alpha = 2.5;
        let rows: Vec<(f64, f64, f64)> = series
            .rows
            .iter()
            .map(|r| {
                let norm = r.sigma_hat.ln().powf(alpha);
                (r.sigma_hat, r.dloc_hat / norm, r.se_dloc / norm)
            })
            .collect();
        let fit = fit_loglog(&rows).unwrap();
        println!(
            "er d={d} fit_loc_norm slope={:.3} ci=({:.3},{:.3})  [{:?}]",
            fit.slope, fit.ci.0, fit.ci.1, t.elapsed()
        );
    }
    for d in [0i64, 1] {
        let t = Instant::now();
        let cfg = ExperimentConfig {
            model: Model::Gg { r: 1.0 },
            d,
            n_list: vec![128, 256, 512],
            reps: 100_000,
            master_seed: 2024,
            out: None,
            threads: None,
        };
        let series = run_rate_experiment(&cfg).unwrap();
        for row in &series.rows {
            println!(
                "gg d={d} n={}: sigma={:.3} dtv={:.5} (se {:.5}) dloc={:.6} (se {:.6}) unrel={}",
                row.n, row.sigma_hat, row.dtv_hat, row.se_dtv, row.dloc_hat, row.se_dloc,
                row.loc_unreliable
            );
        }
        if let Some(f) = &series.fit_tv {
            println!("gg d={d} fit_tv slope={:.3} ci=({:.3},{:.3})", f.slope, f.ci.0, f.ci.1);
        }
        let alpha = 1.5;
        let rows: Vec<(f64, f64, f64)> = series
            .rows
            .iter()
            .map(|r| {
                let norm = r.sigma_hat.ln().powf(alpha);
                (r.sigma_hat, r.dloc_hat / norm, r.se_dloc / norm)
            })
            .collect();
        let fit = fit_loglog(&rows).unwrap();
        println!(
            "gg d={d} fit_loc_norm slope={:.3} ci=({:.3},{:.3})  [{:?}]",
            fit.slope, fit.ci.0, fit.ci.1, t.elapsed()
        );
    }
}

fn upsilon() {
    use occupancy::stein::*;
    for (label, model, inner) in [
        ("er n=64", ModelSpec::Er { n: 64, lambda: 1.0, d: 1 }, 2_000_000u64),
        ("er n=256", ModelSpec::Er { n: 256, lambda: 1.0, d: 1 }, 2_000_000),
    ] {
        let t = Instant::now();
        let est = estimate_upsilon(&model, 200, inner, 777).unwrap();
        println!(
            "{label}: upsilon={:.4} se={:.4} bias_bound={:.4} cells={:.1} rel_bias={:.3} [{:?}]",
            est.upsilon,
            est.se,
            est.bias_bound,
            est.mean_cells,
            est.bias_bound / est.upsilon,
            t.elapsed()
        );
    }
    for (label, model, inner) in [
        (
            "gg n=64",
            ModelSpec::Gg { n: 64, r: 1.0, d: 1, quad: occupancy::gg::QuadSpec::default() },
            400_000u64,
        ),
        (
            "gg n=256",
            ModelSpec::Gg { n: 256, r: 1.0, d: 1, quad: occupancy::gg::QuadSpec::default() },
            400_000,
        ),
    ] {
        let t = Instant::now();
        let est = estimate_upsilon(&model, 200, inner, 777).unwrap();
        println!(
            "{label}: upsilon={:.4} se={:.4} bias_bound={:.4} cells={:.1} rel_bias={:.3} [{:?}]",
            est.upsilon,
            est.se,
            est.bias_bound,
            est.mean_cells,
            est.bias_bound / est.upsilon,
            t.elapsed()
        );
    }
}

fn gof() {
    use occupancy::rng::{derive_stream, tags};
    for d in [0i64, 1] {
        let (n, lambda) = (4usize, 2.0);
        let target = occupancy::oracle::er_exact_size_bias_pmf(n, lambda, d).unwrap();
        let law = occupancy::sizebias::build_increment_law(
            Pmf::binomial(n as u64 - 1, lambda / n as f64).unwrap(),
            d,
        )
        .unwrap();
        for seed in [1u64, 2, 3] {
            let t = Instant::now();
            let mut counts = vec![0u64; n + 1];
            let mut g = occupancy::er::ErSample::empty(n, lambda).unwrap();
            for rep in 0..1_000_000u64 {
                let mut s = derive_stream(seed, rep, tags::COUPLE);
                occupancy::er::resample_graph(&mut g, &mut s);
                let rec = occupancy::er::size_bias_step(&mut g, d, &law, &mut s).unwrap();
                counts[rec.w_s as usize] += 1;
            }
            let (stat, p) =
                occupancy::oracle::chi_square_gof_from_counts(0, &counts, &target).unwrap();
            println!("d={d} seed={seed}: chi2={stat:.3} p={p:.4} [{:?}]", t.elapsed());
        }
    }
}
