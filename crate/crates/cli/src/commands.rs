use std::fs;
use std::path::Path;

use lineint::driver::{
    convergence_study, integrate_adaptive, integrate_fixed, per_period_error, reference_solution, stability_scan,
    symmetry_defect, AdaptiveSettings, ErrorEstimate, IntegrationRun,
};
use lineint::methods::{check_symplectic, newton_cotes_weights, numerical_rank, Method};
use lineint::solvers::{blended_params, MAX_BLENDED_DEGREE};
use lineint::systems::kepler_exact;
use nalgebra::Complex;

use crate::config::{Config, EstimateChoice, IntegrationConfig, Problem, Series};
use crate::output::{float, CsvFile};
use crate::Failure;

fn prepare_out(out: &Path, cfg: &Config) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))
}

struct Outcome {
    run: IntegrationRun,
    /// Fixed stepsize, or `None` for adaptive runs.
    h: Option<f64>,
    sample_every: usize,
}

pub fn run(config: &Path, out: &Path, quiet: bool) -> Result<(), Failure> {
    let mut cfg = Config::load(config)?;
    let problem = cfg.problem()?.build()?;
    let method = cfg.method()?.build()?;
    let invariants = cfg.invariants(&problem)?;
    let settings = cfg.solver.settings()?;
    cfg.resolve(&problem)?;
    prepare_out(out, &cfg)?;

    let outcome = match cfg.integration.clone().expect("resolved") {
        IntegrationConfig::Fixed {
            h, n_steps, sample_every, ..
        } => {
            let h = h.expect("resolved");
            let run = integrate_fixed(&method, &*problem.field, &invariants, &problem.y0, h, n_steps.expect("resolved"), 1, &settings)
                .map_err(Failure::classify)?;
            Outcome {
                run,
                h: Some(h),
                sample_every,
            }
        }
        IntegrationConfig::Adaptive {
            tol,
            t_end,
            h_init,
            h_min,
            h_max,
            safety,
            growth_cap,
            max_rejections,
            checkpoint_interval,
            error_estimate,
            ..
        } => {
            let adaptive = AdaptiveSettings {
                tol,
                safety,
                h_init,
                h_min,
                h_max,
                growth_cap,
                max_rejections,
                checkpoint_interval,
                error_estimate: match error_estimate {
                    EstimateChoice::Difference => ErrorEstimate::Difference,
                    EstimateChoice::Richardson => ErrorEstimate::Richardson,
                },
            };
            let run = integrate_adaptive(
                &method,
                &*problem.field,
                &invariants,
                &problem.y0,
                t_end.expect("resolved"),
                &adaptive,
                &settings,
            )
            .map_err(Failure::classify)?;
            Outcome {
                run,
                h: None,
                sample_every: 1,
            }
        }
    };

    for series in &cfg.outputs {
        write_series(*series, &outcome, &problem, out)?;
    }
    let run = &outcome.run;
    if !quiet {
        let max = run.max_invariant_errors();
        let errs: Vec<String> = problem
            .invariants
            .names()
            .iter()
            .zip(max.iter())
            .map(|(n, e)| format!("max|d{n}| = {e:.3e}"))
            .collect();
        println!(
            "{}: {} steps to t = {}, {} rejections, {} solver iterations; {}",
            method.label(),
            run.step_sizes.len(),
            run.times.last().unwrap(),
            run.rejections,
            run.solver_iterations,
            errs.join(", ")
        );
    }
    match &run.failure {
        None => Ok(()),
        Some(e) => {
            let n = run.step_sizes.len() + 1;
            let t = run.times.last().unwrap();
            Err(Failure::Numerical(match outcome.h {
                Some(h) => format!("step {n} (t = {t}, h = {h}) failed: {e}"),
                None => format!("step {n} (t = {t}) failed: {e}"),
            }))
        }
    }
}

fn write_series(series: Series, outcome: &Outcome, problem: &Problem, out: &Path) -> Result<(), Failure> {
    let run = &outcome.run;
    let path = out.join(series.file_name());
    let last = run.times.len() - 1;
    let sampled = (0..run.times.len()).filter(|&i| i % outcome.sample_every == 0 || i == last);
    match series {
        Series::Invariants => {
            let mut header = vec!["t".to_string()];
            header.extend(problem.invariants.names().iter().map(|n| format!("d{n}")));
            let mut csv = CsvFile::create(&path, &header)?;
            for i in sampled {
                let mut row = vec![float(run.times[i])];
                row.extend(run.invariant_errors[i].iter().map(|&e| float(e)));
                csv.row(&row)?;
            }
            csv.finish()
        }
        Series::Trajectory => {
            let mut header = vec!["t".to_string()];
            header.extend(problem.components.iter().cloned());
            let mut csv = CsvFile::create(&path, &header)?;
            for i in sampled {
                let mut row = vec![float(run.times[i])];
                row.extend(run.states[i].iter().map(|&e| float(e)));
                csv.row(&row)?;
            }
            csv.finish()
        }
        Series::StepSizes => {
            let mut csv = CsvFile::create(&path, &["step".into(), "t".into(), "h".into()])?;
            for (i, &h) in run.step_sizes.iter().enumerate() {
                let t = match outcome.h {
                    Some(h) => (i + 1) as f64 * h,
                    None => run.times[i + 1],
                };
                csv.row(&[(i + 1).to_string(), float(t), float(h)])?;
            }
            csv.finish()
        }
        Series::PerPeriodError => {
            let period = problem.period.expect("checked when resolving");
            let mut csv = CsvFile::create(&path, &["period".into(), "t".into(), "error".into()])?;
            // A run stopped before one period simply has no rows.
            let rows = per_period_error(run, &problem.y0, period).unwrap_or_default();
            for (n, e) in rows {
                csv.row(&[n.to_string(), float(n as f64 * period), float(e)])?;
            }
            csv.finish()
        }
    }
}

pub fn convergence(config: &Path, out: &Path, quiet: bool) -> Result<(), Failure> {
    let mut cfg = Config::load(config)?;
    let problem = cfg.problem()?.build()?;
    let method = cfg.method()?.build()?;
    let invariants = cfg.invariants(&problem)?;
    let settings = cfg.solver.settings()?;
    let conv = cfg
        .convergence
        .as_mut()
        .ok_or_else(|| Failure::Config("missing [convergence] table".into()))?;
    if !(conv.t_end > 0.0) || !(conv.h0 > 0.0) {
        return Err(Failure::Config("convergence needs t_end > 0 and h0 > 0".into()));
    }
    let hs: Vec<f64> = (0..=conv.halvings).map(|i| conv.h0 * 0.5f64.powi(i as i32)).collect();
    let reference = match problem.kepler_eccentricity {
        Some(eps) => kepler_exact(eps, conv.t_end),
        None => {
            let h_min = hs.last().unwrap();
            let steps = *conv
                .reference_steps
                .get_or_insert_with(|| (100.0 * conv.t_end / h_min).ceil() as usize);
            reference_solution(&*problem.field, &problem.y0, conv.t_end, steps).map_err(Failure::classify)?
        }
    };
    let t_end = conv.t_end;
    prepare_out(out, &cfg)?;
    let study = convergence_study(&method, &*problem.field, &invariants, &problem.y0, t_end, &hs, &reference, &settings)
        .map_err(Failure::classify)?;

    let mut csv = CsvFile::create(&out.join("convergence.csv"), &["h".into(), "error".into(), "slope".into()])?;
    for (i, (&h, &e)) in study.step_sizes.iter().zip(&study.errors).enumerate() {
        let slope = if i == 0 {
            String::new()
        } else {
            let (h0, e0) = (study.step_sizes[i - 1], study.errors[i - 1]);
            float((e0 / e).ln() / (h0 / h).ln())
        };
        csv.row(&[float(h), float(e), slope])?;
    }
    csv.finish()?;
    if !quiet {
        println!(
            "{}: fitted order {:.3} over {} points{}",
            method.label(),
            study.slope,
            study.fitted,
            if study.truncated { " (smallest steps hit the roundoff floor)" } else { "" }
        );
    }
    Ok(())
}

fn linspace(range: [f64; 2], n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![range[0]],
        _ => (0..n).map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn stability(config: &Path, out: &Path, quiet: bool) -> Result<(), Failure> {
    let cfg = Config::load(config)?;
    let method = cfg.method()?.build()?;
    let stab = cfg
        .stability
        .as_ref()
        .ok_or_else(|| Failure::Config("missing [stability] table".into()))?;
    let grid: Vec<Complex<f64>> = linspace(stab.re, stab.n_re)
        .into_iter()
        .flat_map(|re| linspace(stab.im, stab.n_im).into_iter().map(move |im| Complex::new(re, im)))
        .collect();
    prepare_out(out, &cfg)?;
    let moduli = stability_scan(&method, &grid).map_err(Failure::classify)?;
    let mut csv = CsvFile::create(&out.join("stability.csv"), &["re".into(), "im".into(), "abs_r".into()])?;
    for (q, r) in grid.iter().zip(&moduli) {
        csv.row(&[float(q.re), float(q.im), float(r.unwrap_or(f64::INFINITY))])?;
    }
    csv.finish()?;
    if !quiet {
        let worst = moduli.iter().map(|r| r.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
        println!("{}: {} grid points, max |R| = {worst:.6}", method.label(), grid.len());
    }
    Ok(())
}

pub fn symmetry(config: &Path, out: &Path, quiet: bool) -> Result<(), Failure> {
    let cfg = Config::load(config)?;
    let problem = cfg.problem()?.build()?;
    let method = cfg.method()?.build()?;
    let invariants = cfg.invariants(&problem)?;
    let settings = cfg.solver.settings()?;
    let sym = cfg
        .symmetry
        .as_ref()
        .ok_or_else(|| Failure::Config("missing [symmetry] table".into()))?;
    prepare_out(out, &cfg)?;
    let mut csv = CsvFile::create(&out.join("symmetry.csv"), &["h".into(), "defect".into()])?;
    let mut worst: f64 = 0.0;
    for &h in &sym.h {
        let d = symmetry_defect(&method, &*problem.field, &invariants, &problem.y0, h, &settings)
            .map_err(Failure::classify)?;
        worst = worst.max(d);
        csv.row(&[float(h), float(d)])?;
    }
    csv.finish()?;
    if !quiet {
        println!("{}: max symmetry defect {worst:.3e}", method.label());
    }
    Ok(())
}

/// Parses `gauss s`, `hbvm k s` or `trapezoidal nu`.
fn parse_method_spec(words: &[String]) -> Result<Method, Failure> {
    let words: Vec<&str> = words.iter().flat_map(|w| w.split_whitespace()).collect();
    let nums: Result<Vec<usize>, _> = words.iter().skip(1).map(|w| w.parse::<usize>()).collect();
    let nums = nums.map_err(|e| Failure::Config(format!("bad method spec {words:?}: {e}")))?;
    let method = match (words.first().copied(), nums.as_slice()) {
        (Some("gauss"), [s]) => Method::gauss(*s),
        (Some("hbvm"), [k, s]) => Method::hbvm(*k, *s),
        (Some("trapezoidal"), [nu]) => Method::trapezoidal(*nu),
        _ => {
            return Err(Failure::Config(format!(
                "bad method spec {words:?}; expected `gauss s`, `hbvm k s` or `trapezoidal nu`"
            )))
        }
    };
    method.map_err(Failure::config)
}

pub fn tableau(spec: &[String]) -> Result<(), Failure> {
    let method = parse_method_spec(spec)?;
    let t = method.tableau().map_err(Failure::config)?;
    let row = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x:>24.16e}")).collect::<Vec<_>>().join("");
    println!("{} (order {})", method.label(), method.order());
    println!("c ={}", row(&mut t.c.iter().copied()));
    println!("A =");
    for i in 0..t.stages() {
        println!("   {}", row(&mut t.a.row(i).iter().copied()));
    }
    println!("b ={}", row(&mut t.b.iter().copied()));
    if let Method::RungeKutta(_) = method {
        let exact = newton_cotes_weights(t.stages()).map_err(Failure::config)?;
        let exact: Vec<String> = exact.iter().map(|w| w.to_string()).collect();
        println!("b (exact) = {}", exact.join(", "));
    }
    println!("rank(A) = {}", numerical_rank(&t.a));
    println!("symplecticity residual = {:.3e}", check_symplectic(&t));
    Ok(())
}

pub fn blended_table(s_max: usize) -> Result<(), Failure> {
    if s_max == 0 || s_max > MAX_BLENDED_DEGREE {
        return Err(Failure::Config(format!("s_max must lie in 1..={MAX_BLENDED_DEGREE}, got {s_max}")));
    }
    println!("{:>3} {:>8} {:>8} {:>8}", "s", "zeta", "rho*", "rho~");
    for s in 1..=s_max {
        let p = blended_params(s).map_err(Failure::config)?;
        println!("{s:>3} {:>8.4} {:>8.4} {:>8.4}", p.zeta, p.rho_star, p.rho_tilde);
    }
    Ok(())
}
