//! TOML run configuration. The grammar is documented in `book/src/cli.md`.
//!
//! Every table rejects unknown keys. After [`Config::resolve`] all derived
//! values (stepsize, step count, checkpoint interval) are written back into
//! the struct, so the echoed file replays the same run bit for bit.

use std::path::Path;

use lineint::methods::Method;
use lineint::solvers::{JacobianPolicy, SolverKind, SolverSettings};
use lineint::systems::{kepler, lotka_volterra, poly_hamiltonian, InvariantSet, State, VectorField};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationConfig>,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<Series>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetry: Option<SymmetryConfig>,
}

fn default_outputs() -> Vec<Series> {
    vec![Series::Invariants]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    Invariants,
    PerPeriodError,
    Trajectory,
    StepSizes,
}

impl Series {
    pub fn file_name(self) -> &'static str {
        match self {
            Self::Invariants => "invariants.csv",
            Self::PerPeriodError => "per_period_error.csv",
            Self::Trajectory => "trajectory.csv",
            Self::StepSizes => "step_sizes.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Kepler {
        eccentricity: f64,
    },
    LotkaVolterra {
        #[serde(default = "lv_a")]
        a: f64,
        #[serde(default = "lv_b")]
        b: f64,
        #[serde(default = "lv_c")]
        c: f64,
        #[serde(default = "lv_nu")]
        nu: f64,
        #[serde(default = "lv_mu")]
        mu: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        y0: Option<Vec<f64>>,
        /// Needed for per-period output away from the reference parameters.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        period: Option<f64>,
    },
    PolyHamiltonian {
        #[serde(default = "poly_alpha")]
        alpha: f64,
        #[serde(default = "poly_beta")]
        beta: f64,
        #[serde(default = "poly_n")]
        n: u32,
        #[serde(default = "poly_y0")]
        y0: [f64; 2],
    },
}

fn lv_a() -> f64 {
    -2.0
}
fn lv_b() -> f64 {
    -1.0
}
fn lv_c() -> f64 {
    -0.5
}
fn lv_nu() -> f64 {
    1.0
}
fn lv_mu() -> f64 {
    2.0
}
fn poly_alpha() -> f64 {
    1.0
}
fn poly_beta() -> f64 {
    10.0
}
fn poly_n() -> u32 {
    4
}
fn poly_y0() -> [f64; 2] {
    [1.0, -1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Gauss {
        s: usize,
    },
    Hbvm {
        k: usize,
        s: usize,
    },
    Lim {
        r: usize,
        k: usize,
        s: usize,
        /// One flag per invariant; all enforced when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        enforce: Option<Vec<bool>>,
    },
    Trapezoidal {
        nu: usize,
    },
}

impl MethodConfig {
    pub fn build(&self) -> Result<Method, Failure> {
        let method = match *self {
            Self::Gauss { s } => Method::gauss(s),
            Self::Hbvm { k, s } => Method::hbvm(k, s),
            Self::Lim { r, k, s, .. } => Method::lim(r, k, s),
            Self::Trapezoidal { nu } => Method::trapezoidal(nu),
        };
        method.map_err(Failure::config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    FixedPoint,
    SimplifiedNewton,
    BlendedNonlinear,
    BlendedOuterInner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianChoice {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverChoice,
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub jacobian: JacobianChoice,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverSettings::default();
        Self {
            kind: match d.kind {
                SolverKind::FixedPoint => SolverChoice::FixedPoint,
                SolverKind::SimplifiedNewton => SolverChoice::SimplifiedNewton,
                SolverKind::BlendedNonlinear => SolverChoice::BlendedNonlinear,
                SolverKind::BlendedOuterInner => SolverChoice::BlendedOuterInner,
            },
            tol: d.tol,
            max_outer: d.max_outer,
            max_inner: d.max_inner,
            jacobian: match d.jacobian_policy {
                JacobianPolicy::Analytic => JacobianChoice::Analytic,
                JacobianPolicy::FiniteDifference => JacobianChoice::FiniteDifference,
            },
        }
    }
}

impl SolverConfig {
    pub fn settings(&self) -> Result<SolverSettings, Failure> {
        let settings = SolverSettings {
            kind: match self.kind {
                SolverChoice::FixedPoint => SolverKind::FixedPoint,
                SolverChoice::SimplifiedNewton => SolverKind::SimplifiedNewton,
                SolverChoice::BlendedNonlinear => SolverKind::BlendedNonlinear,
                SolverChoice::BlendedOuterInner => SolverKind::BlendedOuterInner,
            },
            tol: self.tol,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            jacobian_policy: match self.jacobian {
                JacobianChoice::Analytic => JacobianPolicy::Analytic,
                JacobianChoice::FiniteDifference => JacobianPolicy::FiniteDifference,
            },
        };
        settings.validate().map_err(Failure::config)?;
        Ok(settings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateChoice {
    Difference,
    Richardson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegrationConfig {
    /// Give `h` or `steps_per_period`, and `n_steps` or `periods`.
    Fixed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps_per_period: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_steps: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        periods: Option<usize>,
        #[serde(default = "one")]
        sample_every: usize,
    },
    /// Give `t_end` or `periods`.
    Adaptive {
        tol: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_end: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        periods: Option<usize>,
        #[serde(default = "h_init")]
        h_init: f64,
        #[serde(default = "h_min")]
        h_min: f64,
        #[serde(default = "h_max")]
        h_max: f64,
        #[serde(default = "safety")]
        safety: f64,
        #[serde(default = "growth_cap")]
        growth_cap: f64,
        #[serde(default = "max_rejections")]
        max_rejections: usize,
        /// Defaults to the period when per-period output is requested.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint_interval: Option<f64>,
        #[serde(default = "estimate")]
        error_estimate: EstimateChoice,
    },
}

fn one() -> usize {
    1
}
fn h_init() -> f64 {
    1e-3
}
fn h_min() -> f64 {
    1e-12
}
fn h_max() -> f64 {
    f64::INFINITY
}
fn safety() -> f64 {
    0.85
}
fn growth_cap() -> f64 {
    5.0
}
fn max_rejections() -> usize {
    20
}
fn estimate() -> EstimateChoice {
    EstimateChoice::Richardson
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub t_end: f64,
    /// Largest stepsize; each further point halves it.
    pub h0: f64,
    #[serde(default = "halvings")]
    pub halvings: usize,
    /// Steps of the Gauss(8) reference run. Unused for Kepler, whose
    /// reference is the closed-form orbit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_steps: Option<usize>,
}

fn halvings() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    /// Inclusive range of `Re q`.
    pub re: [f64; 2],
    /// Inclusive range of `Im q`.
    pub im: [f64; 2],
    #[serde(default = "grid_points")]
    pub n_re: usize,
    #[serde(default = "grid_points")]
    pub n_im: usize,
}

fn grid_points() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryConfig {
    pub h: Vec<f64>,
}

/// A benchmark with its type erased.
pub struct Problem {
    pub field: Box<dyn VectorField>,
    pub invariants: InvariantSet,
    pub y0: State,
    pub period: Option<f64>,
    pub components: Vec<String>,
    /// Kepler eccentricity, when the closed-form orbit is available.
    pub kepler_eccentricity: Option<f64>,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<Problem, Failure> {
        let problem = match self {
            Self::Kepler { eccentricity } => {
                let b = kepler(*eccentricity).map_err(Failure::config)?;
                Problem {
                    field: Box::new(b.system),
                    invariants: b.invariants,
                    y0: b.y0,
                    period: b.period,
                    components: names(&["q1", "q2", "p1", "p2"]),
                    kepler_eccentricity: Some(*eccentricity),
                }
            }
            Self::LotkaVolterra {
                a,
                b,
                c,
                nu,
                mu,
                y0,
                period,
            } => {
                let bench = lotka_volterra(*a, *b, *c, *nu, *mu).map_err(Failure::config)?;
                let y0 = match y0 {
                    Some(v) if v.len() == 3 => State::from_column_slice(v),
                    Some(v) => return Err(Failure::Config(format!("lotka_volterra y0 needs 3 entries, got {}", v.len()))),
                    None => bench.y0,
                };
                if y0.iter().any(|&x| !(x > 0.0)) {
                    return Err(Failure::Config("lotka_volterra y0 must be positive".into()));
                }
                Problem {
                    field: Box::new(bench.system),
                    invariants: bench.invariants,
                    y0,
                    period: period.or(bench.period),
                    components: names(&["y1", "y2", "y3"]),
                    kepler_eccentricity: None,
                }
            }
            Self::PolyHamiltonian { alpha, beta, n, y0 } => {
                let bench = poly_hamiltonian(*alpha, *beta, *n).map_err(Failure::config)?;
                Problem {
                    field: Box::new(bench.system),
                    invariants: bench.invariants,
                    y0: State::from_column_slice(y0),
                    period: None,
                    components: names(&["q", "p"]),
                    kepler_eccentricity: None,
                }
            }
        };
        Ok(problem)
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn problem(&self) -> Result<&ProblemConfig, Failure> {
        self.problem.as_ref().ok_or_else(|| Failure::Config("missing [problem] table".into()))
    }

    pub fn method(&self) -> Result<&MethodConfig, Failure> {
        self.method.as_ref().ok_or_else(|| Failure::Config("missing [method] table".into()))
    }

    /// The invariant set with the LIM mask applied.
    pub fn invariants(&self, problem: &Problem) -> Result<InvariantSet, Failure> {
        match self.method()? {
            MethodConfig::Lim { enforce: Some(mask), .. } => {
                problem.invariants.clone().with_mask(mask.clone()).map_err(Failure::config)
            }
            _ => Ok(problem.invariants.clone()),
        }
    }

    /// Fills in derived integration values so the echoed config is explicit.
    pub fn resolve(&mut self, problem: &Problem) -> Result<(), Failure> {
        let wants_periods = self.outputs.contains(&Series::PerPeriodError);
        let period = problem.period;
        let need_period = |what: &str| {
            period.ok_or_else(|| Failure::Config(format!("{what} needs a known period for this problem")))
        };
        if wants_periods {
            need_period("per_period_error output")?;
        }
        match self.integration.as_mut() {
            None => return Err(Failure::Config("missing [integration] table".into())),
            Some(IntegrationConfig::Fixed {
                h,
                steps_per_period,
                n_steps,
                periods,
                sample_every,
            }) => {
                let step = match (*h, *steps_per_period) {
                    (Some(h), None) => h,
                    (None, Some(n)) if n > 0 => need_period("steps_per_period")? / n as f64,
                    _ => return Err(Failure::Config("fixed mode needs exactly one of h, steps_per_period (> 0)".into())),
                };
                if !(step > 0.0) || !step.is_finite() {
                    return Err(Failure::Config(format!("stepsize must be positive, got {step}")));
                }
                let count = match (*n_steps, *periods) {
                    (Some(n), None) => n,
                    (None, Some(p)) => (p as f64 * need_period("periods")? / step).round() as usize,
                    _ => return Err(Failure::Config("fixed mode needs exactly one of n_steps, periods".into())),
                };
                if *sample_every == 0 {
                    return Err(Failure::Config("sample_every must be at least 1".into()));
                }
                *h = Some(step);
                *n_steps = Some(count);
                *steps_per_period = None;
                *periods = None;
            }
            Some(IntegrationConfig::Adaptive {
                t_end,
                periods,
                checkpoint_interval,
                ..
            }) => {
                let end = match (*t_end, *periods) {
                    (Some(t), None) => t,
                    (None, Some(p)) => p as f64 * need_period("periods")?,
                    _ => return Err(Failure::Config("adaptive mode needs exactly one of t_end, periods".into())),
                };
                *t_end = Some(end);
                *periods = None;
                if checkpoint_interval.is_none() && wants_periods {
                    *checkpoint_interval = period;
                }
            }
        }
        Ok(())
    }
}
