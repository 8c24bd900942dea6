//! Problem definitions: general first-order systems, canonical Hamiltonian
//! systems, Poisson systems, invariant sets, and the three benchmarks.
//!
//! State ordering for canonical systems is `(q₁, …, q_m, p₁, …, p_m)`; in
//! particular the Kepler state is `(q₁, q₂, p₁, p₂)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type State = DVector<f64>;

type ScalarFn = dyn Fn(&State) -> Result<f64> + Send + Sync;
type VectorFn = dyn Fn(&State) -> Result<State> + Send + Sync;
type MatrixFn = dyn Fn(&State) -> Result<DMatrix<f64>> + Send + Sync;

/// An autonomous vector field `y' = f(y)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, y: &State) -> Result<State>;

    /// Analytic Jacobian `∂f/∂y`, when one is available.
    fn jacobian(&self, _y: &State) -> Option<Result<DMatrix<f64>>> {
        None
    }

    fn label(&self) -> &str {
        "problem"
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, y: &State) -> Result<State> {
        (**self).eval(y)
    }
    fn jacobian(&self, y: &State) -> Option<Result<DMatrix<f64>>> {
        (**self).jacobian(y)
    }
    fn label(&self) -> &str {
        (**self).label()
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

/// A general first-order system given by closures.
#[derive(Clone)]
pub struct ProblemDefinition {
    dim: usize,
    description: String,
    field: Arc<VectorFn>,
    jacobian: Option<Arc<MatrixFn>>,
}

impl ProblemDefinition {
    pub fn new<F>(dim: usize, description: impl Into<String>, field: F) -> Self
    where
        F: Fn(&State) -> Result<State> + Send + Sync + 'static,
    {
        Self {
            dim,
            description: description.into(),
            field: Arc::new(field),
            jacobian: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&State) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    /// `y' = A y`.
    pub fn linear(a: DMatrix<f64>) -> Self {
        let dim = a.nrows();
        let a2 = a.clone();
        Self::new(dim, "linear", move |y| Ok(&a * y)).with_jacobian(move |_| Ok(a2.clone()))
    }
}

impl fmt::Debug for ProblemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDefinition")
            .field("dim", &self.dim)
            .field("description", &self.description)
            .field("jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl VectorField for ProblemDefinition {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, y: &State) -> Result<State> {
        check_dim(self.dim, y.len())?;
        let out = (self.field)(y)?;
        check_dim(self.dim, out.len())?;
        Ok(out)
    }

    fn jacobian(&self, y: &State) -> Option<Result<DMatrix<f64>>> {
        self.jacobian.as_ref().map(|j| j(y))
    }

    fn label(&self) -> &str {
        &self.description
    }
}

/// `y' = J∇H(y)` with the canonical `J = [0 I; −I 0]`.
#[derive(Clone)]
pub struct HamiltonianSystem {
    half_dim: usize,
    description: String,
    hamiltonian: Arc<ScalarFn>,
    gradient: Arc<VectorFn>,
    hessian: Option<Arc<MatrixFn>>,
}

impl HamiltonianSystem {
    pub fn new<H, G>(half_dim: usize, description: impl Into<String>, hamiltonian: H, gradient: G) -> Self
    where
        H: Fn(&State) -> Result<f64> + Send + Sync + 'static,
        G: Fn(&State) -> Result<State> + Send + Sync + 'static,
    {
        Self {
            half_dim,
            description: description.into(),
            hamiltonian: Arc::new(hamiltonian),
            gradient: Arc::new(gradient),
            hessian: None,
        }
    }

    pub fn with_hessian<M>(mut self, hessian: M) -> Self
    where
        M: Fn(&State) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    pub fn half_dim(&self) -> usize {
        self.half_dim
    }

    pub fn hamiltonian(&self, y: &State) -> Result<f64> {
        check_dim(2 * self.half_dim, y.len())?;
        (self.hamiltonian)(y)
    }

    pub fn gradient(&self, y: &State) -> Result<State> {
        check_dim(2 * self.half_dim, y.len())?;
        (self.gradient)(y)
    }

    /// Applies `J` to a vector: first half `← v_p`, second half `← −v_q`.
    pub fn apply_j(&self, v: &State) -> State {
        let m = self.half_dim;
        let mut out = State::zeros(2 * m);
        for i in 0..m {
            out[i] = v[m + i];
            out[m + i] = -v[i];
        }
        out
    }
}

impl fmt::Debug for HamiltonianSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSystem")
            .field("half_dim", &self.half_dim)
            .field("description", &self.description)
            .finish()
    }
}

impl VectorField for HamiltonianSystem {
    fn dim(&self) -> usize {
        2 * self.half_dim
    }

    fn eval(&self, y: &State) -> Result<State> {
        let g = self.gradient(y)?;
        check_dim(self.dim(), g.len())?;
        Ok(self.apply_j(&g))
    }

    fn jacobian(&self, y: &State) -> Option<Result<DMatrix<f64>>> {
        let hess = self.hessian.as_ref()?;
        Some(hess(y).map(|h| {
            let m = self.half_dim;
            let mut jac = DMatrix::zeros(2 * m, 2 * m);
            for c in 0..2 * m {
                for i in 0..m {
                    jac[(i, c)] = h[(m + i, c)];
                    jac[(m + i, c)] = -h[(i, c)];
                }
            }
            jac
        }))
    }

    fn label(&self) -> &str {
        &self.description
    }
}

/// `y' = B(y)∇H(y)` with a skew-symmetric structure matrix `B`.
#[derive(Clone)]
pub struct PoissonSystem {
    dim: usize,
    description: String,
    structure: Arc<MatrixFn>,
    hamiltonian: Arc<ScalarFn>,
    gradient: Arc<VectorFn>,
    jacobian: Option<Arc<MatrixFn>>,
}

impl PoissonSystem {
    pub fn new<B, H, G>(dim: usize, description: impl Into<String>, structure: B, hamiltonian: H, gradient: G) -> Self
    where
        B: Fn(&State) -> Result<DMatrix<f64>> + Send + Sync + 'static,
        H: Fn(&State) -> Result<f64> + Send + Sync + 'static,
        G: Fn(&State) -> Result<State> + Send + Sync + 'static,
    {
        Self {
            dim,
            description: description.into(),
            structure: Arc::new(structure),
            hamiltonian: Arc::new(hamiltonian),
            gradient: Arc::new(gradient),
            jacobian: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&State) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn structure(&self, y: &State) -> Result<DMatrix<f64>> {
        check_dim(self.dim, y.len())?;
        (self.structure)(y)
    }

    pub fn hamiltonian(&self, y: &State) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        (self.hamiltonian)(y)
    }

    pub fn gradient(&self, y: &State) -> Result<State> {
        check_dim(self.dim, y.len())?;
        (self.gradient)(y)
    }
}

impl fmt::Debug for PoissonSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonSystem")
            .field("dim", &self.dim)
            .field("description", &self.description)
            .finish()
    }
}

impl VectorField for PoissonSystem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, y: &State) -> Result<State> {
        let b = self.structure(y)?;
        let g = self.gradient(y)?;
        Ok(b * g)
    }

    fn jacobian(&self, y: &State) -> Option<Result<DMatrix<f64>>> {
        self.jacobian.as_ref().map(|j| j(y))
    }

    fn label(&self) -> &str {
        &self.description
    }
}

/// The field `z' = −f(z)`, used to integrate backwards in time.
pub struct Reversed<F>(pub F);

impl<F: VectorField> VectorField for Reversed<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, y: &State) -> Result<State> {
        self.0.eval(y).map(|v| -v)
    }
    fn jacobian(&self, y: &State) -> Option<Result<DMatrix<f64>>> {
        self.0.jacobian(y).map(|r| r.map(|j| -j))
    }
    fn label(&self) -> &str {
        self.0.label()
    }
}

/// A vector of first integrals `L: ℝᵐ → ℝ^ν` with its gradient, plus a mask
/// selecting the components a line-integral step enforces.
#[derive(Clone)]
pub struct InvariantSet {
    dim: usize,
    names: Vec<String>,
    values: Arc<VectorFn>,
    gradient: Arc<MatrixFn>,
    enforce_mask: Vec<bool>,
}

impl InvariantSet {
    /// `gradient` returns the `m × ν` matrix whose columns are `∇Lᵢ`.
    pub fn new<V, G>(dim: usize, names: Vec<String>, values: V, gradient: G) -> Self
    where
        V: Fn(&State) -> Result<State> + Send + Sync + 'static,
        G: Fn(&State) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        let nu = names.len();
        Self {
            dim,
            names,
            values: Arc::new(values),
            gradient: Arc::new(gradient),
            enforce_mask: vec![true; nu],
        }
    }

    /// An invariant set with no components.
    pub fn empty(dim: usize) -> Self {
        Self::new(dim, Vec::new(), |_| Ok(State::zeros(0)), move |y| Ok(DMatrix::zeros(y.len(), 0)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nu(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn enforce_mask(&self) -> &[bool] {
        &self.enforce_mask
    }

    pub fn enforced_count(&self) -> usize {
        self.enforce_mask.iter().filter(|&&b| b).count()
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        check_dim(self.nu(), mask.len())?;
        self.enforce_mask = mask;
        Ok(self)
    }

    pub fn values(&self, y: &State) -> Result<State> {
        check_dim(self.dim, y.len())?;
        let v = (self.values)(y)?;
        check_dim(self.nu(), v.len())?;
        Ok(v)
    }

    pub fn gradient(&self, y: &State) -> Result<DMatrix<f64>> {
        check_dim(self.dim, y.len())?;
        let g = (self.gradient)(y)?;
        check_dim(self.dim, g.nrows())?;
        check_dim(self.nu(), g.ncols())?;
        Ok(g)
    }

    /// Columns of the gradient selected by the enforcement mask.
    pub fn enforced_gradient(&self, y: &State) -> Result<DMatrix<f64>> {
        let g = self.gradient(y)?;
        let cols: Vec<usize> = (0..self.nu()).filter(|&i| self.enforce_mask[i]).collect();
        Ok(g.select_columns(&cols))
    }
}

impl fmt::Debug for InvariantSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InvariantSet")
            .field("dim", &self.dim)
            .field("names", &self.names)
            .field("enforce_mask", &self.enforce_mask)
            .finish()
    }
}

/// `∇L(y)ᵀ f(y)`: zero for exact invariants.
pub fn check_invariant_orthogonality<F: VectorField + ?Sized>(
    problem: &F,
    invariants: &InvariantSet,
    y: &State,
) -> Result<State> {
    check_dim(problem.dim(), invariants.dim())?;
    let f = problem.eval(y)?;
    Ok(invariants.gradient(y)?.transpose() * f)
}

/// A benchmark problem together with its invariants and initial condition.
#[derive(Debug, Clone)]
pub struct Benchmark<S> {
    pub system: S,
    pub invariants: InvariantSet,
    pub y0: State,
    /// Period of the solution through `y0`, when known.
    pub period: Option<f64>,
}

const KEPLER_MIN_RADIUS: f64 = 1e-12;

fn kepler_radius(y: &State) -> Result<f64> {
    let r = y[0].hypot(y[1]);
    if r < KEPLER_MIN_RADIUS {
        Err(Error::Domain(format!("Kepler field evaluated at |q| = {r:e} (collision)")))
    } else {
        Ok(r)
    }
}

/// The planar Kepler problem `H = ½‖p‖² − 1/‖q‖`, started at pericenter of an
/// orbit with eccentricity `eps`. Invariants, in order: the Hamiltonian, the
/// angular momentum `q₁p₂ − q₂p₁`, and the Laplace–Runge–Lenz component
/// `q₂p₁² − q₁p₁p₂ − q₂/‖q‖`.
pub fn kepler(eps: f64) -> Result<Benchmark<HamiltonianSystem>> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("Kepler eccentricity must lie in [0, 1), got {eps}")));
    }
    let system = HamiltonianSystem::new(
        2,
        format!("kepler(eps={eps})"),
        |y| {
            let r = kepler_radius(y)?;
            Ok(0.5 * (y[2] * y[2] + y[3] * y[3]) - 1.0 / r)
        },
        |y| {
            let r = kepler_radius(y)?;
            let r3 = r * r * r;
            Ok(State::from_vec(vec![y[0] / r3, y[1] / r3, y[2], y[3]]))
        },
    )
    .with_hessian(|y| {
        let r = kepler_radius(y)?;
        let r3 = r * r * r;
        let r5 = r3 * r * r;
        let mut h = DMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                let delta = if i == j { 1.0 / r3 } else { 0.0 };
                h[(i, j)] = delta - 3.0 * y[i] * y[j] / r5;
            }
        }
        h[(2, 2)] = 1.0;
        h[(3, 3)] = 1.0;
        Ok(h)
    });

    let invariants = InvariantSet::new(
        4,
        vec!["H".into(), "L".into(), "F".into()],
        |y| {
            let r = kepler_radius(y)?;
            let (q1, q2, p1, p2) = (y[0], y[1], y[2], y[3]);
            Ok(State::from_vec(vec![
                0.5 * (p1 * p1 + p2 * p2) - 1.0 / r,
                q1 * p2 - q2 * p1,
                q2 * p1 * p1 - q1 * p1 * p2 - q2 / r,
            ]))
        },
        |y| {
            let r = kepler_radius(y)?;
            let r3 = r * r * r;
            let (q1, q2, p1, p2) = (y[0], y[1], y[2], y[3]);
            #[rustfmt::skip]
            let g = DMatrix::from_row_slice(4, 3, &[
                q1 / r3, p2,  -p1 * p2 + q1 * q2 / r3,
                q2 / r3, -p1, p1 * p1 - 1.0 / r + q2 * q2 / r3,
                p1,      -q2, 2.0 * q2 * p1 - q1 * p2,
                p2,      q1,  -q1 * p1,
            ]);
            Ok(g)
        },
    );

    let y0 = State::from_vec(vec![1.0 - eps, 0.0, 0.0, ((1.0 + eps) / (1.0 - eps)).sqrt()]);
    Ok(Benchmark {
        system,
        invariants,
        y0,
        period: Some(2.0 * PI),
    })
}

/// Exact Kepler solution through the pericenter initial point of [`kepler`],
/// from Kepler's equation `E − ε sin E = t`.
pub fn kepler_exact(eps: f64, t: f64) -> State {
    let mean = t.rem_euclid(2.0 * PI);
    let mut e_anom = if eps > 0.8 { PI } else { mean };
    for _ in 0..100 {
        let step = (e_anom - eps * e_anom.sin() - mean) / (1.0 - eps * e_anom.cos());
        e_anom -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    let (se, ce) = e_anom.sin_cos();
    let w = (1.0 - eps * eps).sqrt();
    let denom = 1.0 - eps * ce;
    State::from_vec(vec![ce - eps, w * se, -se / denom, w * ce / denom])
}

/// Period of the Lotka–Volterra orbit through `(1, 1.9, 0.5)` for the
/// parameters `(a, b, c, ν, μ) = (−2, −1, −0.5, 1, 2)`.
pub const LOTKA_VOLTERRA_PERIOD: f64 = 2.878130103817;

fn positive_state(y: &State) -> Result<()> {
    if y.iter().all(|&v| v > 0.0) {
        Ok(())
    } else {
        Err(Error::Domain(format!("Lotka-Volterra state must be positive, got {:?}", y.as_slice())))
    }
}

/// The three-dimensional Lotka–Volterra Poisson system with Hamiltonian
/// `ab y₁ + y₂ − a y₃ + ν log y₂ − μ log y₃` and Casimir
/// `ab log y₁ − b log y₂ + log y₃`. Requires `abc = −1`.
///
/// The initial point is `(1, 1.9, 0.5)`; the period is known only for the
/// reference parameter set.
pub fn lotka_volterra(a: f64, b: f64, c: f64, nu_p: f64, mu_p: f64) -> Result<Benchmark<PoissonSystem>> {
    if (a * b * c + 1.0).abs() > 1e-12 {
        return Err(Error::Parameter(format!("Lotka-Volterra requires abc = -1, got {}", a * b * c)));
    }
    let grad_h = move |y: &State| -> Result<State> {
        positive_state(y)?;
        Ok(State::from_vec(vec![a * b, 1.0 + nu_p / y[1], -a - mu_p / y[2]]))
    };
    let structure = move |y: &State| -> Result<DMatrix<f64>> {
        positive_state(y)?;
        let (y1, y2, y3) = (y[0], y[1], y[2]);
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(3, 3, &[
            0.0,               c * y1 * y2,  b * c * y1 * y3,
            -c * y1 * y2,      0.0,          -y2 * y3,
            -b * c * y1 * y3,  y2 * y3,      0.0,
        ]);
        Ok(m)
    };
    let system = PoissonSystem::new(
        3,
        format!("lotka_volterra(a={a}, b={b}, c={c}, nu={nu_p}, mu={mu_p})"),
        structure,
        move |y| {
            positive_state(y)?;
            Ok(a * b * y[0] + y[1] - a * y[2] + nu_p * y[1].ln() - mu_p * y[2].ln())
        },
        grad_h,
    )
    .with_jacobian(move |y| {
        positive_state(y)?;
        let (y1, y2, y3) = (y[0], y[1], y[2]);
        let g1 = a * b;
        let g2 = 1.0 + nu_p / y2;
        let g3 = -a - mu_p / y3;
        #[rustfmt::skip]
        let j = DMatrix::from_row_slice(3, 3, &[
            c * y2 * g2 + b * c * y3 * g3,  c * y1,                    -a * b * c * y1,
            -c * y2 * g1,                   -c * y1 * g1 - y3 * g3,    a * y2,
            -b * c * y3 * g1,               y3,                        -b * c * y1 * g1 + y2 * g2,
        ]);
        Ok(j)
    });

    let invariants = InvariantSet::new(
        3,
        vec!["H".into(), "C".into()],
        move |y| {
            positive_state(y)?;
            Ok(State::from_vec(vec![
                a * b * y[0] + y[1] - a * y[2] + nu_p * y[1].ln() - mu_p * y[2].ln(),
                a * b * y[0].ln() - b * y[1].ln() + y[2].ln(),
            ]))
        },
        move |y| {
            positive_state(y)?;
            #[rustfmt::skip]
            let g = DMatrix::from_row_slice(3, 2, &[
                a * b,              a * b / y[0],
                1.0 + nu_p / y[1],  -b / y[1],
                -a - mu_p / y[2],   1.0 / y[2],
            ]);
            Ok(g)
        },
    );

    let reference = [-2.0, -1.0, -0.5, 1.0, 2.0];
    let is_reference = [a, b, c, nu_p, mu_p]
        .iter()
        .zip(reference)
        .all(|(x, r)| (x - r).abs() < 1e-15);
    Ok(Benchmark {
        system,
        invariants,
        y0: State::from_vec(vec![1.0, 1.9, 0.5]),
        period: is_reference.then_some(LOTKA_VOLTERRA_PERIOD),
    })
}

/// `H(q, p) = p² + (βq)² + α(q+p)^{2n}`, a polynomial Hamiltonian of degree `2n`.
#[derive(Debug, Clone)]
pub struct PolynomialBenchmark {
    pub system: HamiltonianSystem,
    pub invariants: InvariantSet,
    /// Polynomial degree `2n` of the Hamiltonian.
    pub degree: usize,
}

impl PolynomialBenchmark {
    /// The starting points `(i, −i)`, `i = 1, …, 8`, of the level-curve experiment.
    pub fn initial_points() -> Vec<State> {
        (1..=8).map(|i| State::from_vec(vec![i as f64, -(i as f64)])).collect()
    }
}

pub fn poly_hamiltonian(alpha: f64, beta: f64, n: u32) -> Result<PolynomialBenchmark> {
    if n == 0 {
        return Err(Error::Parameter("polynomial Hamiltonian needs n >= 1".into()));
    }
    let two_n = 2 * n as i32;
    let ham = move |y: &State| -> Result<f64> {
        let (q, p) = (y[0], y[1]);
        Ok(p * p + (beta * q).powi(2) + alpha * (q + p).powi(two_n))
    };
    let grad = move |y: &State| -> Result<State> {
        let (q, p) = (y[0], y[1]);
        let t = two_n as f64 * alpha * (q + p).powi(two_n - 1);
        Ok(State::from_vec(vec![2.0 * beta * beta * q + t, 2.0 * p + t]))
    };
    let system = HamiltonianSystem::new(1, format!("poly(alpha={alpha}, beta={beta}, n={n})"), ham, grad)
        .with_hessian(move |y| {
            let w = (two_n * (two_n - 1)) as f64 * alpha * (y[0] + y[1]).powi(two_n - 2);
            Ok(DMatrix::from_row_slice(2, 2, &[2.0 * beta * beta + w, w, w, 2.0 + w]))
        });
    let invariants = InvariantSet::new(
        2,
        vec!["H".into()],
        move |y| Ok(State::from_vec(vec![ham(y)?])),
        move |y| Ok(DMatrix::from_column_slice(2, 1, grad(y)?.as_slice())),
    );
    Ok(PolynomialBenchmark {
        system,
        invariants,
        degree: 2 * n as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn kepler_initial_values() {
        let b = kepler(0.6).unwrap();
        assert_abs_diff_eq!(b.y0[0], 0.4, epsilon = 1e-15);
        assert_eq!(b.y0[1], 0.0);
        assert_eq!(b.y0[2], 0.0);
        assert_abs_diff_eq!(b.y0[3], 2.0, epsilon = 1e-15);
        let l = b.invariants.values(&b.y0).unwrap();
        assert_abs_diff_eq!(l[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], 0.8, epsilon = 1e-15);
        assert_eq!(l[2], 0.0);
        assert_eq!(b.period, Some(2.0 * PI));
    }

    #[test]
    fn kepler_rejects_unbound_orbits() {
        assert!(matches!(kepler(1.0), Err(Error::Domain(_))));
        assert!(matches!(kepler(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn kepler_collision_is_a_domain_error() {
        let b = kepler(0.5).unwrap();
        let y = State::from_vec(vec![1e-13, 0.0, 1.0, 0.0]);
        assert!(matches!(b.system.eval(&y), Err(Error::Domain(_))));
    }

    #[test]
    fn kepler_exact_starts_at_pericenter() {
        for eps in [0.0, 0.3, 0.6, 0.99] {
            let b = kepler(eps).unwrap();
            let y = kepler_exact(eps, 0.0);
            assert!((y - &b.y0).amax() < 1e-13);
            let y = kepler_exact(eps, 2.0 * PI);
            assert!((y - &b.y0).amax() < 1e-10);
        }
    }

    #[test]
    fn orthogonality_at_initial_points() {
        let k = kepler(0.6).unwrap();
        let r = check_invariant_orthogonality(&k.system, &k.invariants, &k.y0).unwrap();
        assert!(r.amax() <= 1e-13);

        let lv = lotka_volterra(-2.0, -1.0, -0.5, 1.0, 2.0).unwrap();
        let r = check_invariant_orthogonality(&lv.system, &lv.invariants, &lv.y0).unwrap();
        assert!(r.amax() <= 1e-13);

        let zero = ProblemDefinition::new(4, "zero", |_| Ok(State::zeros(4)));
        let r = check_invariant_orthogonality(&zero, &k.invariants, &k.y0).unwrap();
        assert_eq!(r.amax(), 0.0);
    }

    #[test]
    fn orthogonality_dimension_mismatch() {
        let k = kepler(0.6).unwrap();
        let lv = lotka_volterra(-2.0, -1.0, -0.5, 1.0, 2.0).unwrap();
        let r = check_invariant_orthogonality(&lv.system, &k.invariants, &lv.y0);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn lotka_volterra_parameters() {
        let lv = lotka_volterra(-2.0, -1.0, -0.5, 1.0, 2.0).unwrap();
        assert_eq!(lv.period, Some(LOTKA_VOLTERRA_PERIOD));
        assert!(matches!(lotka_volterra(1.0, 1.0, 1.0, 1.0, 2.0), Err(Error::Parameter(_))));
        let other = lotka_volterra(-1.0, -1.0, -1.0, 1.0, 2.0).unwrap();
        assert_eq!(other.period, None);

        let b = lv.system.structure(&lv.y0).unwrap();
        assert_eq!(&b + b.transpose(), DMatrix::zeros(3, 3));
        let casimir = lv.invariants.gradient(&lv.y0).unwrap().column(1).into_owned();
        assert!((casimir.transpose() * b).amax() <= 1e-13);
    }

    #[test]
    fn lotka_volterra_rejects_nonpositive_states() {
        let lv = lotka_volterra(-2.0, -1.0, -0.5, 1.0, 2.0).unwrap();
        let y = State::from_vec(vec![1.0, -0.1, 0.5]);
        assert!(matches!(lv.system.eval(&y), Err(Error::Domain(_))));
    }

    #[test]
    fn polynomial_hamiltonian_values() {
        let p = poly_hamiltonian(1.0, 10.0, 4).unwrap();
        assert_eq!(p.degree, 8);
        let y = State::from_vec(vec![1.0, -1.0]);
        assert_abs_diff_eq!(p.system.hamiltonian(&y).unwrap(), 101.0, epsilon = 1e-12);
        let g = p.system.gradient(&State::zeros(2)).unwrap();
        assert_eq!(g, State::zeros(2));
        assert!(poly_hamiltonian(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn generic_problem_checks_dimension() {
        let bad = ProblemDefinition::new(2, "bad", |_| Ok(State::zeros(3)));
        assert!(matches!(bad.eval(&State::zeros(2)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn masks_select_gradient_columns() {
        let k = kepler(0.6).unwrap();
        let inv = k.invariants.clone().with_mask(vec![true, false, true]).unwrap();
        assert_eq!(inv.enforced_count(), 2);
        let g = inv.enforced_gradient(&k.y0).unwrap();
        let full = k.invariants.gradient(&k.y0).unwrap();
        assert_eq!(g.column(1), full.column(2));
        assert!(k.invariants.clone().with_mask(vec![true]).is_err());
    }

    fn fd_gradient(f: impl Fn(&State) -> f64, y: &State) -> State {
        let mut g = State::zeros(y.len());
        for i in 0..y.len() {
            let step = 1e-6 * (1.0 + y[i].abs());
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += step;
            ym[i] -= step;
            g[i] = (f(&yp) - f(&ym)) / (2.0 * step);
        }
        g
    }

    fn fd_jacobian(f: &dyn VectorField, y: &State) -> DMatrix<f64> {
        let m = y.len();
        let mut jac = DMatrix::zeros(m, m);
        for i in 0..m {
            let step = 1e-6 * (1.0 + y[i].abs());
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += step;
            ym[i] -= step;
            let col = (f.eval(&yp).unwrap() - f.eval(&ym).unwrap()) / (2.0 * step);
            jac.set_column(i, &col);
        }
        jac
    }

    fn assert_close(a: &State, b: &State) {
        let scale = 1.0 + b.amax();
        assert!((a - b).amax() <= 1e-6 * scale, "{a} vs {b}");
    }

    fn check_gradients(field: &dyn VectorField, inv: &InvariantSet, y: &State) {
        let g = inv.gradient(y).unwrap();
        for i in 0..inv.nu() {
            let fd = fd_gradient(|z| inv.values(z).unwrap()[i], y);
            assert_close(&g.column(i).into_owned(), &fd);
        }
        let jac = field.jacobian(y).unwrap().unwrap();
        let fd = fd_jacobian(field, y);
        let scale = 1.0 + fd.amax();
        assert!((jac - fd).amax() <= 1e-6 * scale);
        let r = check_invariant_orthogonality(field, inv, y).unwrap();
        let f = field.eval(y).unwrap();
        assert!(r.amax() <= 1e-11 * (1.0 + g.amax() * g.amax() + f.amax() * f.amax()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn kepler_gradients(r in 0.3f64..2.0, th in 0.0f64..6.0, p1 in -2.0f64..2.0, p2 in -2.0f64..2.0) {
            let b = kepler(0.6).unwrap();
            let y = State::from_vec(vec![r * th.cos(), r * th.sin(), p1, p2]);
            check_gradients(&b.system, &b.invariants, &y);
            let fd = fd_gradient(|z| b.system.hamiltonian(z).unwrap(), &y);
            assert_close(&b.system.gradient(&y).unwrap(), &fd);
        }

        #[test]
        fn lotka_volterra_gradients(y1 in 0.2f64..3.0, y2 in 0.2f64..3.0, y3 in 0.2f64..3.0) {
            let b = lotka_volterra(-2.0, -1.0, -0.5, 1.0, 2.0).unwrap();
            let y = State::from_vec(vec![y1, y2, y3]);
            check_gradients(&b.system, &b.invariants, &y);
            let s = b.system.structure(&y).unwrap();
            prop_assert!((&s + s.transpose()).amax() <= 1e-13);
        }

        #[test]
        fn polynomial_gradients(q in -2.0f64..2.0, p in -2.0f64..2.0) {
            let b = poly_hamiltonian(1.0, 10.0, 4).unwrap();
            let y = State::from_vec(vec![q, p]);
            check_gradients(&b.system, &b.invariants, &y);
            let g = b.system.gradient(&y).unwrap();
            let f = b.system.eval(&y).unwrap();
            prop_assert!(g.dot(&f).abs() <= 1e-12 * (1.0 + g.norm_squared()));
        }
    }
}
