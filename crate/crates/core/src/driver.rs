//! Multi-step integration with invariant monitoring, plus the harnesses used
//! to measure order, symmetry, stability and long-time error growth.

use std::thread;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::methods::{ButcherTableau, Method, StepResult};
use crate::solvers::SolverSettings;
use crate::systems::{InvariantSet, Reversed, State, VectorField};

/// A sampled trajectory and its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationRun {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// `L(yₙ) − L(y₀)` at each sample, all invariant components.
    pub invariant_errors: Vec<State>,
    /// Every accepted stepsize, in order.
    pub step_sizes: Vec<f64>,
    pub rejections: usize,
    /// Total nonlinear iterations over accepted and rejected trial steps.
    pub solver_iterations: usize,
    /// Set when the run stopped early; the samples up to that point are kept.
    pub failure: Option<Error>,
}

impl IntegrationRun {
    fn start(y0: &State, invariants: &InvariantSet) -> Result<(Self, State)> {
        let l0 = invariants.values(y0)?;
        let run = Self {
            times: vec![0.0],
            states: vec![y0.clone()],
            invariant_errors: vec![State::zeros(l0.len())],
            step_sizes: Vec::new(),
            rejections: 0,
            solver_iterations: 0,
            failure: None,
        };
        Ok((run, l0))
    }

    fn record(&mut self, t: f64, y: &State, invariants: &InvariantSet, l0: &State) -> Result<()> {
        self.invariant_errors.push(invariants.values(y)? - l0);
        self.times.push(t);
        self.states.push(y.clone());
        Ok(())
    }

    /// Converts a stopped run into its failure.
    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("a run always holds y0")
    }

    /// Componentwise `max_n |L(yₙ) − L(y₀)|`.
    pub fn max_invariant_errors(&self) -> State {
        let nu = self.invariant_errors[0].len();
        State::from_fn(nu, |i, _| self.invariant_errors.iter().map(|e| e[i].abs()).fold(0.0, f64::max))
    }
}

fn step_failure(step: &StepResult, t: f64, h: f64) -> Option<Error> {
    (!step.converged).then_some(Error::NonConvergence {
        t,
        h,
        residual: step.solver_residual,
    })
}

/// `n_steps` steps of size `h`, sampling every `sample_every` steps and at the end.
#[allow(clippy::too_many_arguments)]
pub fn integrate_fixed(
    method: &Method,
    problem: &dyn VectorField,
    invariants: &InvariantSet,
    y0: &State,
    h: f64,
    n_steps: usize,
    sample_every: usize,
    settings: &SolverSettings,
) -> Result<IntegrationRun> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("stepsize must be positive, got {h}")));
    }
    if sample_every == 0 {
        return Err(Error::Config("sample_every must be at least 1".into()));
    }
    settings.validate()?;
    let (mut run, l0) = IntegrationRun::start(y0, invariants)?;
    let mut y = y0.clone();
    for n in 1..=n_steps {
        let t0 = (n - 1) as f64 * h;
        let step = match method.step(problem, invariants, &y, h, settings) {
            Ok(s) => s,
            Err(e) => {
                run.failure = Some(e);
                return Ok(run);
            }
        };
        run.solver_iterations += step.iterations;
        if let Some(e) = step_failure(&step, t0, h) {
            run.failure = Some(e);
            return Ok(run);
        }
        y = step.y1;
        run.step_sizes.push(h);
        if n % sample_every == 0 || n == n_steps {
            if let Err(e) = run.record(n as f64 * h, &y, invariants, &l0) {
                run.failure = Some(e);
                return Ok(run);
            }
        }
    }
    Ok(run)
}

/// How the step-doubling difference becomes the local-error estimate `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorEstimate {
    /// `e = ‖y_{h/2,h/2} − y_h‖∞`, which bounds the error of the single step.
    Difference,
    /// `e = ‖y_{h/2,h/2} − y_h‖∞ / (2ᵖ − 1)`, the Richardson estimate for the
    /// kept composite.
    #[default]
    Richardson,
}

impl ErrorEstimate {
    fn scale(self, order: usize) -> f64 {
        match self {
            Self::Difference => 1.0,
            Self::Richardson => 1.0 / (2f64.powi(order as i32) - 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSettings {
    /// Local-error tolerance for the max-norm step-doubling estimate.
    pub tol: f64,
    pub safety: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Largest allowed `h_new / h_old`.
    pub growth_cap: f64,
    /// Consecutive rejections tolerated before the run fails.
    pub max_rejections: usize,
    /// When set, steps are shortened to land on every multiple of this interval.
    pub checkpoint_interval: Option<f64>,
    pub error_estimate: ErrorEstimate,
}

impl AdaptiveSettings {
    pub fn new(tol: f64, h_init: f64) -> Self {
        Self {
            tol,
            safety: 0.85,
            h_init,
            h_min: 1e-12,
            h_max: f64::INFINITY,
            growth_cap: 5.0,
            max_rejections: 20,
            checkpoint_interval: None,
            error_estimate: ErrorEstimate::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.safety > 0.0
            && self.safety < 1.0
            && self.h_min > 0.0
            && self.h_min <= self.h_init
            && self.h_init <= self.h_max
            && self.growth_cap >= 1.0
            && self.max_rejections >= 1
            && self.checkpoint_interval.is_none_or(|c| c > 0.0 && c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid adaptive settings: {self:?}")))
        }
    }
}

/// `h_new = safety · h (tol/‖e‖)^{1/(p+1)}`, limited by the growth cap and the
/// `[h_min, h_max]` clamps. A zero error estimate grows by the cap.
pub fn controller(h_old: f64, err: f64, order: usize, settings: &AdaptiveSettings) -> f64 {
    let ratio = if err > 0.0 {
        settings.safety * (settings.tol / err).powf(1.0 / (order as f64 + 1.0))
    } else {
        settings.growth_cap
    };
    (h_old * ratio.min(settings.growth_cap)).min(settings.h_max).max(settings.h_min)
}

/// Adaptive integration to `t_end` by step doubling: one step of size `h`
/// against two of size `h/2`; the pair is kept on acceptance. Every accepted
/// step is sampled.
pub fn integrate_adaptive(
    method: &Method,
    problem: &dyn VectorField,
    invariants: &InvariantSet,
    y0: &State,
    t_end: f64,
    adaptive: &AdaptiveSettings,
    settings: &SolverSettings,
) -> Result<IntegrationRun> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::Config(format!("t_end must be positive, got {t_end}")));
    }
    adaptive.validate()?;
    settings.validate()?;
    let (mut run, l0) = IntegrationRun::start(y0, invariants)?;
    let order = method.order();
    let mut y = y0.clone();
    let mut t = 0.0;
    let mut h = adaptive.h_init;
    let mut consecutive = 0;
    let mut next_checkpoint = adaptive.checkpoint_interval.map(|c| (1usize, c));

    while t < t_end {
        let mut target = t_end;
        if let Some((_, tc)) = next_checkpoint {
            target = target.min(tc);
        }
        let shortened = t + h >= target;
        let h_try = if shortened { target - t } else { h };

        let attempt = (|| -> Result<(State, f64, usize, bool)> {
            let big = method.step(problem, invariants, &y, h_try, settings)?;
            let half1 = method.step(problem, invariants, &y, 0.5 * h_try, settings)?;
            let half2 = method.step(problem, invariants, &half1.y1, 0.5 * h_try, settings)?;
            let converged = big.converged && half1.converged && half2.converged;
            let err = adaptive.error_estimate.scale(order) * (&half2.y1 - &big.y1).amax();
            Ok((half2.y1, err, big.iterations + half1.iterations + half2.iterations, converged))
        })();

        let (accepted, h_next) = match attempt {
            Ok((y_new, err, iters, true)) if err.is_finite() => {
                run.solver_iterations += iters;
                let h_new = controller(h_try, err, order, adaptive);
                if err <= adaptive.tol {
                    y = y_new;
                    (true, if shortened { h.max(h_new).min(adaptive.h_max) } else { h_new })
                } else {
                    (false, h_new)
                }
            }
            Ok((_, _, iters, _)) => {
                run.solver_iterations += iters;
                (false, 0.5 * h_try)
            }
            Err(e @ (Error::Domain(_) | Error::Divergence { .. } | Error::Singular(_))) => {
                if h_try <= adaptive.h_min {
                    run.failure = Some(e);
                    return Ok(run);
                }
                (false, 0.5 * h_try)
            }
            Err(e) => {
                run.failure = Some(e);
                return Ok(run);
            }
        };

        if accepted {
            consecutive = 0;
            t = if shortened { target } else { t + h_try };
            if let Some((n, tc)) = next_checkpoint {
                if shortened && target == tc {
                    let c = adaptive.checkpoint_interval.unwrap();
                    next_checkpoint = Some((n + 1, (n + 1) as f64 * c));
                }
            }
            run.step_sizes.push(h_try);
            if let Err(e) = run.record(t, &y, invariants, &l0) {
                run.failure = Some(e);
                return Ok(run);
            }
            h = h_next;
        } else {
            run.rejections += 1;
            consecutive += 1;
            if h_next < adaptive.h_min || h_try <= adaptive.h_min {
                run.failure = Some(Error::StepSizeUnderflow {
                    t,
                    h: h_next,
                    h_min: adaptive.h_min,
                });
                return Ok(run);
            }
            if consecutive > adaptive.max_rejections {
                run.failure = Some(Error::NonConvergence {
                    t,
                    h: h_try,
                    residual: f64::NAN,
                });
                return Ok(run);
            }
            h = h_next.min(h_try);
        }
    }
    Ok(run)
}

/// `‖step(−f, step(f, y₀, h), h) − y₀‖∞`, both steps solved to at most `1e−14`.
pub fn symmetry_defect(
    method: &Method,
    problem: &dyn VectorField,
    invariants: &InvariantSet,
    y0: &State,
    h: f64,
    settings: &SolverSettings,
) -> Result<f64> {
    let tight = SolverSettings {
        tol: settings.tol.min(1e-14),
        ..*settings
    };
    let forward = method.step(problem, invariants, y0, h, &tight)?;
    let reversed = Reversed(problem);
    let back = method.step(&reversed, invariants, &forward.y1, h, &tight)?;
    if !forward.converged || !back.converged {
        return Err(Error::NonConvergence {
            t: 0.0,
            h,
            residual: forward.solver_residual.max(back.solver_residual),
        });
    }
    Ok((back.y1 - y0).amax())
}

/// `R(q) = 1 + q bᵀ(I − qA)⁻¹𝟙`, or `None` where `I − qA` is singular.
pub fn stability_function(tableau: &ButcherTableau, q: Complex<f64>) -> Option<Complex<f64>> {
    let k = tableau.stages();
    let m = DMatrix::<Complex<f64>>::identity(k, k) - tableau.a.map(|x| Complex::from(x) * q);
    let ones = DVector::from_element(k, Complex::from(1.0));
    let x = m.lu().solve(&ones)?;
    if x.iter().any(|z| !z.is_finite()) {
        return None;
    }
    let bx: Complex<f64> = tableau.b.iter().zip(x.iter()).map(|(&b, &z)| z * b).sum();
    Some(Complex::from(1.0) + q * bx)
}

/// `|R(q)|` over a grid; `None` flags points where the stage system is singular.
pub fn stability_scan(method: &Method, grid: &[Complex<f64>]) -> Result<Vec<Option<f64>>> {
    let tableau = method.tableau()?;
    Ok(grid.iter().map(|&q| stability_function(&tableau, q).map(|r| r.norm())).collect())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Measurement("need at least two paired samples".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Measurement("log-log fit needs positive finite samples".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    Ok(linear_fit(&lx, &ly)?.slope)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Sum of squared residuals.
    pub ssr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Measurement("need at least two paired samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Measurement("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let sst: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        ssr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    /// `y ≈ c₀ + c₁x + c₂x²`.
    pub coefficients: [f64; 3],
    pub ssr: f64,
}

pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Result<QuadraticFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Measurement("need at least three paired samples".into()));
    }
    let v = DMatrix::from_fn(x.len(), 3, |i, j| x[i].powi(j as i32));
    let rhs = DVector::from_column_slice(y);
    let c = v
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Measurement(e.to_string()))?;
    let ssr = (v * &c - rhs).norm_squared();
    Ok(QuadraticFit {
        coefficients: [c[0], c[1], c[2]],
        ssr,
    })
}

/// `SSR(linear) / SSR(quadratic)`: large values mean the growth is not linear.
pub fn quadratic_improvement(x: &[f64], y: &[f64]) -> Result<f64> {
    let lin = linear_fit(x, y)?.ssr;
    let quad = quadratic_fit(x, y)?.ssr;
    Ok(if quad > 0.0 { lin / quad } else if lin > 0.0 { f64::INFINITY } else { 1.0 })
}

/// Share of the quadratic term in a quadratic fit at the last abscissa,
/// `|c₂|x² / (|c₁x| + |c₂|x²)`: near 0 for linear growth, near 1 for quadratic.
pub fn quadratic_share(x: &[f64], y: &[f64]) -> Result<f64> {
    let [_, c1, c2] = quadratic_fit(x, y)?.coefficients;
    let xn = x.iter().copied().fold(0.0, |a: f64, b| a.max(b.abs()));
    let (lin, quad) = ((c1 * xn).abs(), c2.abs() * xn * xn);
    Ok(if lin + quad > 0.0 { quad / (lin + quad) } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub step_sizes: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    /// Number of leading (largest-h) points that entered the fit.
    pub fitted: usize,
    /// True when trailing points were dropped at the roundoff floor.
    pub truncated: bool,
}

/// Errors below this multiple of `1 + ‖reference‖∞` are treated as roundoff.
pub const ERROR_FLOOR: f64 = 1e-12;

/// Global error at `t_end` against `reference` for each `h` (rounded so an
/// integer number of steps reaches `t_end`), and the log-log slope. The runs
/// execute concurrently; results keep the order of `h_list`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    method: &Method,
    problem: &dyn VectorField,
    invariants: &InvariantSet,
    y0: &State,
    t_end: f64,
    h_list: &[f64],
    reference: &State,
    settings: &SolverSettings,
) -> Result<ConvergenceStudy> {
    if h_list.len() < 2 || h_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("h_list must be strictly decreasing with at least two entries".into()));
    }
    let plan: Vec<(usize, f64)> = h_list
        .iter()
        .map(|&h| {
            let n = (t_end / h).round().max(1.0) as usize;
            (n, t_end / n as f64)
        })
        .collect();
    let outcomes: Vec<Result<State>> = thread::scope(|scope| {
        let handles: Vec<_> = plan
            .iter()
            .map(|&(n, h)| {
                scope.spawn(move || {
                    integrate_fixed(method, problem, invariants, y0, h, n, n, settings)?
                        .into_result()
                        .map(|r| r.final_state().clone())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("integration thread panicked")).collect()
    });
    let step_sizes: Vec<f64> = plan.iter().map(|p| p.1).collect();
    let mut errors = Vec::with_capacity(outcomes.len());
    for y in outcomes {
        errors.push((y? - reference).amax());
    }
    let floor = ERROR_FLOOR * (1.0 + reference.amax());
    let fitted = errors.iter().take_while(|&&e| e > floor).count();
    if fitted < 2 {
        return Err(Error::Measurement(format!(
            "fewer than two errors above the roundoff floor {floor:e}: {errors:?}"
        )));
    }
    let slope = loglog_slope(&step_sizes[..fitted], &errors[..fitted])?;
    Ok(ConvergenceStudy {
        step_sizes,
        errors,
        slope,
        fitted,
        truncated: fitted < h_list.len(),
    })
}

/// `‖y(nT) − y_ref‖₂` at every sampled multiple of `period`; for a periodic
/// orbit `y_ref` is the initial point. Sample times within `1e−9` relative of
/// `nT` count as hits.
pub fn per_period_error(run: &IntegrationRun, y_ref: &State, period: f64) -> Result<Vec<(usize, f64)>> {
    if !(period > 0.0) {
        return Err(Error::Config(format!("period must be positive, got {period}")));
    }
    let t_last = *run.times.last().unwrap();
    if t_last < period * (1.0 - 1e-9) {
        return Err(Error::Measurement(format!("run ends at {t_last}, before one period")));
    }
    let mut out = Vec::new();
    for (t, y) in run.times.iter().zip(&run.states) {
        let n = (t / period).round();
        if (t - n * period).abs() <= 1e-9 * period.max(*t) {
            let n = n as usize;
            if out.last().is_none_or(|&(m, _)| m < n) {
                out.push((n, (y - y_ref).norm()));
            }
        }
    }
    Ok(out)
}

/// End state of a Gauss(8) run with `n_steps` equal steps; the reference
/// integrator used for order studies.
pub fn reference_solution(problem: &dyn VectorField, y0: &State, t_end: f64, n_steps: usize) -> Result<State> {
    let method = Method::gauss(8)?;
    let settings = SolverSettings {
        tol: 1e-15,
        ..SolverSettings::default()
    };
    let h = t_end / n_steps as f64;
    let run = integrate_fixed(&method, problem, &InvariantSet::empty(y0.len()), y0, h, n_steps, n_steps, &settings)?;
    Ok(run.into_result()?.final_state().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::hbvm_tableau;
    use crate::systems::{kepler, kepler_exact, ProblemDefinition};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn zero_problem(m: usize) -> ProblemDefinition {
        ProblemDefinition::new(m, "zero", move |_| Ok(State::zeros(m))).with_jacobian(move |_| Ok(DMatrix::zeros(m, m)))
    }

    #[test]
    fn empty_run() {
        let k = kepler(0.6).unwrap();
        let run = integrate_fixed(&Method::gauss(2).unwrap(), &k.system, &k.invariants, &k.y0, 0.1, 0, 1, &SolverSettings::default()).unwrap();
        assert_eq!(run.states, vec![k.y0.clone()]);
        assert_eq!(run.invariant_errors, vec![State::zeros(3)]);
        assert!(run.failure.is_none());
    }

    #[test]
    fn sampling_and_times() {
        let k = kepler(0.6).unwrap();
        let run = integrate_fixed(&Method::gauss(1).unwrap(), &k.system, &k.invariants, &k.y0, 0.01, 25, 10, &SolverSettings::default()).unwrap();
        assert_eq!(run.times.len(), 4);
        assert!((run.times[3] - 0.25).abs() < 1e-15);
        assert!(run.times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(run.step_sizes.len(), 25);
        assert_eq!(run.invariant_errors[0], State::zeros(3));
    }

    #[test]
    fn monitoring_does_not_perturb() {
        let k = kepler(0.6).unwrap();
        let m = Method::hbvm(4, 2).unwrap();
        let s = SolverSettings::default();
        let a = integrate_fixed(&m, &k.system, &k.invariants, &k.y0, 0.05, 40, 1, &s).unwrap();
        let b = integrate_fixed(&m, &k.system, &InvariantSet::empty(4), &k.y0, 0.05, 40, 1, &s).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn failures_keep_partial_run() {
        let blowup = ProblemDefinition::new(1, "blowup", |y| {
            if y[0] > 2.0 {
                Err(Error::Domain("beyond 2".into()))
            } else {
                Ok(State::from_vec(vec![y[0] * y[0]]))
            }
        })
        .with_jacobian(|y| Ok(DMatrix::from_element(1, 1, 2.0 * y[0])));
        let y0 = State::from_vec(vec![1.0]);
        let run = integrate_fixed(&Method::gauss(1).unwrap(), &blowup, &InvariantSet::empty(1), &y0, 0.05, 100, 1, &SolverSettings::default()).unwrap();
        assert!(run.failure.is_some());
        assert!(run.states.len() > 1);
        assert!(run.clone().into_result().is_err());
    }

    #[test]
    fn richardson_estimate_divides_by_two_to_the_p_minus_one() {
        assert_eq!(ErrorEstimate::Difference.scale(4), 1.0);
        assert_eq!(ErrorEstimate::Richardson.scale(4), 1.0 / 15.0);
        assert_eq!(ErrorEstimate::Richardson.scale(2), 1.0 / 3.0);
    }

    #[test]
    fn controller_formula() {
        let s = AdaptiveSettings::new(1e-8, 0.1);
        assert!((controller(0.1, 1e-8, 4, &s) - 0.085).abs() < 1e-15);
        assert_eq!(controller(0.1, 0.0, 4, &s), 0.5);
        assert!((controller(0.1, 1e-8 * 32.0, 4, &s) - 0.1 * 0.85 * 0.5).abs() < 1e-15);
        let capped = AdaptiveSettings { h_max: 0.2, ..s.clone() };
        assert_eq!(controller(0.1, 1e-20, 4, &capped), 0.2);
        let bad = AdaptiveSettings { safety: 1.0, ..s };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adaptive_hits_end_and_checkpoints() {
        let k = kepler(0.6).unwrap();
        let mut a = AdaptiveSettings::new(1e-9, 0.05);
        a.checkpoint_interval = Some(PI / 2.0);
        let run = integrate_adaptive(&Method::gauss(2).unwrap(), &k.system, &k.invariants, &k.y0, 2.0 * PI, &a, &SolverSettings::default()).unwrap();
        assert!(run.failure.is_none(), "{:?}", run.failure);
        assert_eq!(*run.times.last().unwrap(), 2.0 * PI);
        for n in 1..=4 {
            let tc = n as f64 * PI / 2.0;
            assert!(run.times.iter().any(|&t| (t - tc).abs() < 1e-12), "missing checkpoint {tc}");
        }
        let err = (run.final_state() - kepler_exact(0.6, 2.0 * PI)).amax();
        assert!(err < 1e-5, "{err}");
        // Replayable.
        let again = integrate_adaptive(&Method::gauss(2).unwrap(), &k.system, &k.invariants, &k.y0, 2.0 * PI, &a, &SolverSettings::default()).unwrap();
        assert_eq!(run, again);
    }

    #[test]
    fn adaptive_underflow_is_reported() {
        let k = kepler(0.6).unwrap();
        let mut a = AdaptiveSettings::new(1e-30, 0.1);
        a.h_min = 1e-3;
        let run = integrate_adaptive(&Method::gauss(1).unwrap(), &k.system, &k.invariants, &k.y0, 1.0, &a, &SolverSettings::default()).unwrap();
        assert!(matches!(run.failure, Some(Error::StepSizeUnderflow { .. })));
    }

    #[test]
    fn symmetry_of_zero_field() {
        let z = zero_problem(2);
        let y0 = State::from_vec(vec![1.0, 2.0]);
        let d = symmetry_defect(&Method::gauss(2).unwrap(), &z, &InvariantSet::empty(2), &y0, 0.1, &SolverSettings::default()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn symmetry_on_kepler() {
        let k = kepler(0.6).unwrap();
        let s = SolverSettings::default();
        let d = symmetry_defect(&Method::gauss(2).unwrap(), &k.system, &k.invariants, &k.y0, 1e-2, &s).unwrap();
        assert!(d <= 1e-11, "{d}");
        let d = symmetry_defect(&Method::lim(4, 4, 2).unwrap(), &k.system, &k.invariants, &k.y0, 1e-2, &s).unwrap();
        assert!(d <= 1e-10, "{d}");
        // A non-symmetric method for contrast: the explicit-endpoint trapezoidal
        // family is symmetric too, so use forward Euler's tableau.
        let euler = ButcherTableau {
            a: DMatrix::zeros(1, 1),
            b: DVector::from_element(1, 1.0),
            c: DVector::zeros(1),
            order: 1,
            rank_hint: 0,
        };
        let d = symmetry_defect(&Method::RungeKutta(euler), &k.system, &k.invariants, &k.y0, 1e-2, &s).unwrap();
        assert!(d > 1e-6);
    }

    #[test]
    fn stability_examples() {
        let m = Method::hbvm(4, 2).unwrap();
        let r = stability_scan(&m, &[Complex::from(0.0)]).unwrap();
        assert!((r[0].unwrap() - 1.0).abs() < 1e-15);
        let grid: Vec<_> = (0..50).map(|i| Complex::new(-1.0, -20.0 + 0.8 * i as f64)).collect();
        assert!(stability_scan(&m, &grid).unwrap().iter().all(|r| r.unwrap() < 1.0));
        let axis: Vec<_> = (1..50).map(|i| Complex::new(0.0, 0.37 * i as f64)).collect();
        assert!(stability_scan(&m, &axis).unwrap().iter().all(|r| (r.unwrap() - 1.0).abs() < 1e-12));
        // Midpoint rule: R(q) = (1 + q/2)/(1 − q/2), singular at q = 2.
        let mid = hbvm_tableau(1, 1).unwrap();
        assert!(stability_function(&mid, Complex::from(2.0)).is_none());
        let r = stability_function(&mid, Complex::from(-1.0)).unwrap();
        assert!((r.re - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stability_matches_xs_form() {
        // R(q) = 1 + q e₁ᵀ(I − qXₛ)⁻¹e₁ independently of k.
        for (k, s) in [(2, 2), (5, 2), (6, 3)] {
            let t = hbvm_tableau(k, s).unwrap();
            let x = crate::legendre::x_matrix(s).map(Complex::from);
            for q in [Complex::new(-0.7, 1.3), Complex::new(-4.0, -0.2)] {
                let m = DMatrix::<Complex<f64>>::identity(s, s) - &x * q;
                let mut e1 = DVector::zeros(s);
                e1[0] = Complex::from(1.0);
                let sol = m.lu().solve(&e1).unwrap();
                let expected = Complex::from(1.0) + q * sol[0];
                assert!((stability_function(&t, q).unwrap() - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fits() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        let q: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!(quadratic_improvement(&x, &q).unwrap() > 1e6);
        assert!((quadratic_share(&x, &q).unwrap() - 1.0).abs() < 1e-10);
        assert!(quadratic_share(&x, &y).unwrap() < 1e-10);
        assert!((loglog_slope(&x, &q).unwrap() - 2.0).abs() < 1e-14);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn per_period_samples() {
        let k = kepler(0.6).unwrap();
        let h = PI / 50.0;
        let run = integrate_fixed(&Method::gauss(2).unwrap(), &k.system, &k.invariants, &k.y0, h, 300, 100, &SolverSettings::default()).unwrap();
        let e = per_period_error(&run, &k.y0, 2.0 * PI).unwrap();
        assert_eq!(e.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(e[0].1, 0.0);
        assert!(e[3].1 > e[1].1);
        let short = integrate_fixed(&Method::gauss(2).unwrap(), &k.system, &k.invariants, &k.y0, h, 10, 1, &SolverSettings::default()).unwrap();
        assert!(per_period_error(&short, &k.y0, 2.0 * PI).is_err());
    }

    #[test]
    fn midpoint_order_two() {
        let k = kepler(0.6).unwrap();
        let hs: Vec<f64> = (0..4).map(|i| 0.05 * 0.5f64.powi(i)).collect();
        let reference = kepler_exact(0.6, 1.0);
        let study = convergence_study(&Method::gauss(1).unwrap(), &k.system, &k.invariants, &k.y0, 1.0, &hs, &reference, &SolverSettings::default()).unwrap();
        assert!((study.slope - 2.0).abs() <= 0.2, "{study:?}");
        assert!(!study.truncated);
    }

    #[test]
    fn reference_solution_matches_exact_kepler() {
        let k = kepler(0.6).unwrap();
        let y = reference_solution(&k.system, &k.y0, 1.0, 100).unwrap();
        assert!((y - kepler_exact(0.6, 1.0)).amax() < 1e-13);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn unit_modulus_on_imaginary_axis(x in -50.0f64..50.0, k in 1usize..=6, s in 1usize..=3) {
            prop_assume!(k >= s);
            let t = hbvm_tableau(k, s).unwrap();
            let r = stability_function(&t, Complex::new(0.0, x)).unwrap();
            prop_assert!((r.norm() - 1.0).abs() < 1e-11);
        }

        #[test]
        fn stable_in_left_half_plane(re in -10.0f64..-1e-3, im in -10.0f64..10.0, k in 1usize..=6, s in 1usize..=3) {
            prop_assume!(k >= s);
            let t = hbvm_tableau(k, s).unwrap();
            prop_assert!(stability_function(&t, Complex::new(re, im)).unwrap().norm() < 1.0);
        }
    }
}
