//! Acceptance runner: one PASS/FAIL line per criterion.

mod common;

use std::panic;
use std::process::ExitCode;
use std::time::Instant;

use common::{ctx, family, koopman_pairing, loglog_slope, norm_cfg, spline_pairing, P};
use cusp_response::cli::{execute, Command, ExperimentConfig};
use cusp_response::corpus::{Corpus, ProfileKind};
use cusp_response::function_space::{
    l1_distance_to_step, lp_norm, lp_norm_combination, sobolev_norm, sobolev_norm_from_parts,
};
use cusp_response::map_family::{audit_assumptions, MapModel};
use cusp_response::response::{kernel_q, kernel_q_family, response_sweep, ResponseCoefficients, SweepConfig};
use cusp_response::spectral::{invariant_density, resolvent_bound_proxy, ulam_spectrum};
use cusp_response::transfer_operator::{apply_d_eps, operator_gap_norm, second_order_constants};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

const N: usize = 4096;

fn audit() -> Check {
    let start = Instant::now();
    let mut worst_margin = f64::INFINITY;
    for eps in [0.0, 0.05, 0.09] {
        let fam = family(eps);
        let a = audit_assumptions(&fam.shared(), P, 2000).map_err(e)?;
        ensure(a.verdicts.all(), || {
            format!("eps={eps}: verdicts {:?}", a.verdicts.as_array())
        })?;
        let bound = 117.0 / 80.0 * (1.0 - eps) - 1e-6;
        ensure(a.theta_hat >= bound, || {
            format!("eps={eps}: inf|T'| = {} < {bound}", a.theta_hat)
        })?;
        worst_margin = worst_margin.min(a.theta_hat - bound);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("runtime {secs:.1}s"))?;
    Ok(format!(
        "all verdicts pass, min inf|T'| margin {worst_margin:.3e}, {secs:.2}s"
    ))
}

fn operator_identities() -> Check {
    let start = Instant::now();
    let mut worst_dual: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for eps in [0.0, 0.05] {
        let c = ctx(eps, N);
        let fam = family(eps);
        let mut corpus = Corpus::new(c.mesh().clone(), 2024);
        let fs = corpus.mixed(50).map_err(e)?;
        let gs = corpus.mixed(50).map_err(e)?;
        for (f, g) in fs.iter().zip(&gs) {
            let pf = c.apply(f).map_err(e)?;
            let lhs = spline_pairing(&pf, g);
            let rhs = koopman_pairing(&fam, f, g);
            worst_dual = worst_dual.max((lhs - rhs).abs());
            worst_mass = worst_mass.max((pf.integral() - f.integral()).abs());
            for x in [fam.peak() + 1e-9, 0.5 * (1.0 + fam.peak()), 1.0] {
                if x <= 1.0 && x > fam.peak() {
                    ensure(pf.value(x) == 0.0, || format!("Pf({x}) = {}", pf.value(x)))?;
                }
            }
        }
        for f in corpus.of_kind(ProfileKind::NonNegative, 20).map_err(e)? {
            let m = c.apply(&f).map_err(e)?.min_value();
            ensure(m > -1e-10, || format!("eps={eps}: min P f = {m}"))?;
        }
    }
    ensure(worst_dual < 1e-8, || format!("duality gap {worst_dual:.3e}"))?;
    ensure(worst_mass < 1e-9, || format!("mass defect {worst_mass:.3e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("runtime {secs:.1}s"))?;
    Ok(format!("duality {worst_dual:.2e}, mass {worst_mass:.2e}, {secs:.2}s"))
}

fn lasota_yorke() -> Check {
    let cfg = norm_cfg();
    let mut worst = [0.0f64; 4];
    for eps in [0.0, 0.05, 0.09] {
        let a = audit_assumptions(&family(eps).shared(), P, 2000).map_err(e)?;
        let (lam, m) = (a.lambda_hat, a.m_hat);
        let limit = 80.0 / 117.0;
        ensure(lam <= limit, || format!("eps={eps}: lambda {lam} > {limit}"))?;
        let c = ctx(eps, 1024);
        let m2 = second_order_constants(&c, lam).map_err(e)?.m2;
        // the corpus splines are C2 interpolants
        let fs = Corpus::new(c.mesh().clone(), 77).mixed(50).map_err(e)?;
        for f in &fs {
            let pf = c.apply(f).map_err(e)?;
            let dpf = c.apply_derivative(f).map_err(e)?;
            let d2pf = c.apply_second(f).map_err(e)?;
            let df = f.derivative_function().map_err(e)?;
            let f2p = lp_norm(f, &cfg, 2.0 * P).map_err(e)?;
            let w1 = sobolev_norm(f, &cfg, 1).map_err(e)?;

            let lhs = lp_norm(&dpf, &cfg, P).map_err(e)?;
            let rhs = lam * lp_norm(&df, &cfg, P).map_err(e)? + m * f2p;
            worst[0] = worst[0].max(lhs / rhs);

            let lhs = sobolev_norm_from_parts(&[&pf, &dpf, &d2pf], &cfg).map_err(e)?;
            let rhs = lam * lam * sobolev_norm(f, &cfg, 2).map_err(e)? + m2 * w1;
            worst[1] = worst[1].max(lhs / rhs);

            worst[2] = worst[2].max(lp_norm(&pf, &cfg, 2.0 * P).map_err(e)? / (2.0 * f2p));

            let mut g = f.clone();
            for n in 1..=6 {
                g = c.apply(&g).map_err(e)?;
                let lhs = sobolev_norm(&g, &cfg, 1).map_err(e)?;
                let rhs = lam.powi(n) * w1 + m * 2f64.powi(n) * f2p;
                worst[3] = worst[3].max(lhs / rhs);
            }
        }
    }
    let names = ["first-order", "second-order", "L^2p bound", "iterated"];
    for (name, r) in names.iter().zip(worst) {
        ensure(r <= 1.0, || format!("{name} inequality violated: lhs/rhs = {r:.4}"))?;
    }
    Ok(format!(
        "max lhs/rhs: first {:.3}, second {:.3}, L^2p {:.3}, iterated {:.3}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn density() -> Check {
    let mut notes = Vec::new();
    for eps in [0.0, 0.05] {
        let reference_ctx = ctx(eps, N);
        let h = invariant_density(&reference_ctx, 1e-10, 2000).map_err(e)?;
        let resid = lp_norm_combination(
            &[(1.0, &reference_ctx.apply(&h.h).map_err(e)?), (-1.0, &h.h)],
            &norm_cfg(),
            P,
        )
        .map_err(e)?;
        ensure(resid < 1e-7, || format!("eps={eps}: residual {resid:.3e}"))?;
        let mut dists = Vec::new();
        for n in [512, 1024, 2048, 4096] {
            let op = ctx(eps, n).ulam_matrix().map_err(e)?;
            let masses = op.fixed_vector(1e-13, 20_000).map_err(e)?;
            let heights = op.densities(&masses);
            dists.push(l1_distance_to_step(&h.h, op.mesh(), &heights, &norm_cfg()).map_err(e)?);
        }
        ensure(dists[3] < 0.01, || format!("eps={eps}: L1 to Ulam {:.3e}", dists[3]))?;
        ensure(dists.windows(2).all(|w| w[1] < w[0]), || {
            format!("eps={eps}: not monotone {dists:?}")
        })?;
        notes.push(format!(
            "eps={eps}: residual {resid:.1e}, L1 {:.1e}->{:.1e}",
            dists[0], dists[3]
        ));
    }
    Ok(notes.join("; "))
}

fn factorization() -> Check {
    let cfg = norm_cfg();
    let c0 = ctx(0.0, N);
    let mut worst: f64 = 0.0;
    for eps in [0.01, 0.05, 0.09] {
        let ce = ctx(eps, N);
        for f in Corpus::new(c0.mesh().clone(), 5).mixed(8).map_err(e)? {
            let direct = ce.apply(&f).map_err(e)?;
            let factored = apply_d_eps(&c0.apply(&f).map_err(e)?, eps).map_err(e)?;
            worst = worst.max(lp_norm_combination(&[(1.0, &direct), (-1.0, &factored)], &cfg, P).map_err(e)?);
        }
    }
    ensure(worst < 1e-8, || format!("factorization gap {worst:.3e}"))?;
    let c0 = ctx(0.0, 1024);
    let epss = [0.08, 0.04, 0.02, 0.01];
    let mut gaps = Vec::new();
    for eps in epss {
        gaps.push(operator_gap_norm(&c0, &ctx(eps, 1024), 50, 9).map_err(e)?);
    }
    ensure(gaps.windows(2).all(|w| w[1] < w[0]), || {
        format!("gap not decaying {gaps:?}")
    })?;
    let slope = loglog_slope(&epss, &gaps);
    let need = (1.0 - 1.0 / P).min(1.0 / (2.0 * P)) - 0.1;
    ensure(slope >= need, || format!("slope {slope:.3} < {need:.3}"))?;
    Ok(format!(
        "factorization {worst:.1e}, gap slope {slope:.3} (need {need:.3})"
    ))
}

fn kernel() -> Check {
    let mut gaps = Vec::new();
    let mut detail = String::new();
    for n in [1024, 2048, N] {
        let c = ctx(0.0, n);
        let h0 = invariant_density(&c, 1e-11, 2000).map_err(e)?;
        let qt = kernel_q(&c, &h0, &ResponseCoefficients::new(c.model().clone())).map_err(e)?;
        let qf = kernel_q_family(&h0).map_err(e)?;
        gaps.push(lp_norm_combination(&[(1.0, &qt), (-1.0, &qf)], &norm_cfg(), P).map_err(e)?);
        if n == N {
            for (name, q) in [("theorem", &qt), ("family", &qf)] {
                let i = q.integral();
                ensure(i.abs() < 1e-7, || format!("{name}: integral {i:.3e}"))?;
                let end = q.value(1.0);
                ensure(end.abs() < 1e-6, || format!("{name}: q(1) = {end:.3e}"))?;
            }
            detail = format!("integral {:.1e}, q(1) {:.1e}", qt.integral(), qt.value(1.0));
        }
    }
    ensure(gaps[2] < 1e-3, || format!("route gap {:.3e}", gaps[2]))?;
    ensure(gaps.windows(2).all(|w| w[1] < w[0]), || {
        format!("route gap not shrinking {gaps:?}")
    })?;
    Ok(format!(
        "route gap {:.1e} -> {:.1e} -> {:.1e}, {detail}",
        gaps[0], gaps[1], gaps[2]
    ))
}

fn sweep_config() -> SweepConfig {
    SweepConfig {
        k: 4,
        p: P,
        eps_list: vec![0.04, 0.02, 0.01, 0.005],
        panels: N,
        grading: 2.0,
        quad_order: 8,
        tol_density: 1e-11,
        tol_neumann: 1e-10,
        max_iter: 2000,
        parallel: true,
    }
}

fn linear_response() -> Check {
    let start = Instant::now();
    let rep = response_sweep(&sweep_config()).map_err(e)?;
    let secs = start.elapsed().as_secs_f64();
    let errs: Vec<f64> = rep.sweep.iter().map(|s| s.fd_error_lp).collect();
    ensure(rep.errors_decreasing(), || format!("errors not decreasing {errs:?}"))?;
    let rate = rep.fitted_rate.unwrap_or(f64::NAN);
    ensure(rate > 0.5, || format!("rate {rate:.3}"))?;
    ensure(secs < 300.0, || format!("runtime {secs:.1}s"))?;
    Ok(format!(
        "e(eps) = {}, rate {rate:.3}, {secs:.1}s",
        errs.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")
    ))
}

fn spectral_gap() -> Check {
    let mut moduli = Vec::new();
    let mut proxies = Vec::new();
    for eps in [0.0, 0.005, 0.01, 0.02, 0.04] {
        let c = ctx(eps, 2048);
        let rep = ulam_spectrum(&c.ulam_matrix().map_err(e)?, 6).map_err(e)?;
        ensure(rep.second_modulus < 1.0 - 1e-3, || {
            format!("eps={eps}: |lambda2| = {}", rep.second_modulus)
        })?;
        moduli.push(rep.second_modulus);
        proxies.push(resolvent_bound_proxy(&c, 24, 0, 1e-9).map_err(e)?);
    }
    let (lo, hi) = proxies
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    ensure(hi < 3.0 * lo, || format!("proxy varies {proxies:?}"))?;
    let max_mod = moduli.iter().copied().fold(0.0, f64::max);
    Ok(format!("max |lambda2| {max_mod:.4}, proxy range [{lo:.3}, {hi:.3}]"))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let base = ExperimentConfig {
        eps_list: vec![0.04, 0.02, 0.01],
        mesh_panels: 512,
        tol_density: 1e-9,
        corpus_size: 20,
        parallel: false,
        ..ExperimentConfig::default()
    };
    let run = |name: &str, parallel: bool| -> Result<Vec<(String, String)>, String> {
        let cfg = ExperimentConfig {
            output_dir: dir.path().join(name),
            parallel,
            ..base.clone()
        };
        let mut out = Vec::new();
        for cmd in [Command::Density, Command::Spectrum, Command::Response] {
            for f in execute(cmd, &cfg, false).map_err(e)?.files {
                let text = std::fs::read_to_string(&f).map_err(e)?;
                out.push((f.file_name().unwrap().to_string_lossy().into_owned(), text));
            }
        }
        Ok(out)
    };
    let a = run("seq_a", false)?;
    let b = run("seq_b", false)?;
    let par = run("par", true)?;
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        ensure(x == y, || format!("{name} differs between sequential runs"))?;
    }
    let mut worst: f64 = 0.0;
    for ((name, x), (_, y)) in a.iter().zip(&par) {
        for (lx, ly) in x.lines().zip(y.lines()) {
            for (fx, fy) in lx.split(',').zip(ly.split(',')) {
                match (fx.parse::<f64>(), fy.parse::<f64>()) {
                    (Ok(u), Ok(v)) if u.is_finite() => {
                        let rel = (u - v).abs() / u.abs().max(1e-300);
                        if u != v {
                            worst = worst.max(rel);
                        }
                    }
                    _ => ensure(fx == fy, || format!("{name}: `{fx}` vs `{fy}`"))?,
                }
            }
        }
        ensure(x.lines().count() == y.lines().count(), || {
            format!("{name}: row counts differ")
        })?;
    }
    ensure(worst <= 1e-12, || format!("parallel relative difference {worst:.3e}"))?;
    Ok(format!(
        "{} CSVs byte-identical, parallel max rel diff {worst:.1e}",
        a.len()
    ))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 9] = [
        ("assumption audit", audit),
        ("operator identities", operator_identities),
        ("Lasota-Yorke suite", lasota_yorke),
        ("invariant density", density),
        ("factorization and operator gap", factorization),
        ("kernel consistency", kernel),
        ("linear response", linear_response),
        ("spectral gap proxy", spectral_gap),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("PASS {} {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
