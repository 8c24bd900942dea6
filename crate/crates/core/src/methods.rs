//! Butcher tableaux and one-step maps for HBVM(k,s), the trapezoidal family,
//! and LIM(r,k,s).

use nalgebra::{Complex, DMatrix, DVector, LU};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::driver::loglog_slope;
use crate::error::{Error, Result};
use crate::legendre::{build_matrices, gauss_rule, legendre_values, QuadratureRule, SpectralMatrices};
use crate::solvers::{self, fixed_point_solve, SolverKind, SolverSettings, StageSystem, StopRule};
use crate::systems::{InvariantSet, State, VectorField};

/// `c | A / bᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub order: usize,
    /// Expected rank of `A`.
    pub rank_hint: usize,
}

impl ButcherTableau {
    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// `A = ℐₛ𝒫ₛᵀΩ` on the `k`-point Gauss rule; order `2s`.
pub fn hbvm_tableau(k: usize, s: usize) -> Result<ButcherTableau> {
    let m = build_matrices(k, s)?;
    Ok(ButcherTableau {
        a: m.i_s() * m.projection(),
        b: DVector::from_column_slice(m.rule().weights()),
        c: DVector::from_column_slice(m.rule().nodes()),
        order: 2 * s,
        rank_hint: s,
    })
}

/// Closed Newton–Cotes weights on `nu` equidistant nodes of `[0, 1]`, exact.
pub fn newton_cotes_weights(nu: usize) -> Result<Vec<BigRational>> {
    if nu < 2 {
        return Err(Error::Config(format!("trapezoidal family needs nu >= 2, got {nu}")));
    }
    let node = |i: usize| BigRational::new(BigInt::from(i), BigInt::from(nu - 1));
    // Moment system Σᵢ bᵢ cᵢʲ = 1/(j+1), j < nu, as an augmented matrix.
    let mut rows: Vec<Vec<BigRational>> = (0..nu)
        .map(|j| {
            let mut row: Vec<BigRational> = (0..nu).map(|i| num_traits::pow(node(i), j)).collect();
            row.push(BigRational::new(BigInt::one(), BigInt::from(j + 1)));
            row
        })
        .collect();
    for col in 0..nu {
        let pivot = (col..nu)
            .find(|&r| !rows[r][col].is_zero())
            .expect("Vandermonde matrix on distinct nodes is nonsingular");
        rows.swap(col, pivot);
        let p = rows[col][col].clone();
        for x in rows[col].iter_mut() {
            *x = &*x / &p;
        }
        for r in 0..nu {
            if r != col && !rows[r][col].is_zero() {
                let factor = rows[r][col].clone();
                let pivot_row = rows[col].clone();
                for (x, p) in rows[r].iter_mut().zip(&pivot_row).skip(col) {
                    *x -= &factor * p;
                }
            }
        }
    }
    Ok(rows.into_iter().map(|mut r| r.pop().unwrap()).collect())
}

/// The `nu`-stage rank-one tableau `A = c bᵀ` with equidistant abscissae.
pub fn trapezoidal_tableau(nu: usize) -> Result<ButcherTableau> {
    let b = newton_cotes_weights(nu)?;
    let b = DVector::from_iterator(nu, b.iter().map(|w| w.to_f64().unwrap()));
    let c = DVector::from_iterator(nu, (0..nu).map(|i| i as f64 / (nu - 1) as f64));
    Ok(ButcherTableau {
        a: &c * b.transpose(),
        b,
        c,
        order: 2,
        rank_hint: 1,
    })
}

/// `‖BA + AᵀB − bbᵀ‖_F` with `B = diag(b)`; zero for symplectic tableaux.
pub fn check_symplectic(t: &ButcherTableau) -> f64 {
    let bm = DMatrix::from_diagonal(&t.b);
    (&bm * &t.a + t.a.transpose() * &bm - &t.b * t.b.transpose()).norm()
}

/// Number of singular values above `1e−10·σ_max`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&x| x > 1e-10 * max).count()
}

/// Eigenvalues of `a` whose modulus exceeds `1e−10·ρ(a)`.
pub fn nonzero_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let eig = a.complex_eigenvalues();
    let max = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    eig.iter().copied().filter(|z| z.norm() > 1e-10 * max).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HbvmConfig {
    matrices: SpectralMatrices,
}

impl HbvmConfig {
    pub fn new(k: usize, s: usize) -> Result<Self> {
        Ok(Self {
            matrices: build_matrices(k, s)?,
        })
    }

    /// The `s`-stage Gauss method, HBVM(s,s).
    pub fn gauss(s: usize) -> Result<Self> {
        Self::new(s, s)
    }

    pub fn k(&self) -> usize {
        self.matrices.k()
    }

    pub fn s(&self) -> usize {
        self.matrices.s()
    }

    pub fn order(&self) -> usize {
        2 * self.s()
    }

    pub fn matrices(&self) -> &SpectralMatrices {
        &self.matrices
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimConfig {
    r: usize,
    base: HbvmConfig,
    phi_rule: Option<QuadratureRule>,
    /// `r × s`: `P_j(τ_ℓ)`.
    phi_legendre: DMatrix<f64>,
}

impl LimConfig {
    /// `r = 0` (no invariant correction) or `r ≥ s`; `k ≥ s ≥ 1`.
    pub fn new(r: usize, k: usize, s: usize) -> Result<Self> {
        let base = HbvmConfig::new(k, s)?;
        if r != 0 && r < s {
            return Err(Error::Config(format!("LIM needs r = 0 or r >= s, got r = {r}, s = {s}")));
        }
        let phi_rule = if r > 0 { Some(gauss_rule(r)?) } else { None };
        let mut phi_legendre = DMatrix::zeros(r, s);
        if let Some(rule) = &phi_rule {
            for (l, &tau) in rule.nodes().iter().enumerate() {
                let vals = legendre_values(s - 1, tau);
                for j in 0..s {
                    phi_legendre[(l, j)] = vals[j];
                }
            }
        }
        Ok(Self {
            r,
            base,
            phi_rule,
            phi_legendre,
        })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn k(&self) -> usize {
        self.base.k()
    }

    pub fn s(&self) -> usize {
        self.base.s()
    }

    pub fn order(&self) -> usize {
        self.base.order()
    }

    pub fn gamma_rule(&self) -> &QuadratureRule {
        self.base.matrices.rule()
    }

    pub fn phi_rule(&self) -> Option<&QuadratureRule> {
        self.phi_rule.as_ref()
    }

    /// The underlying HBVM(k,s), which LIM(0,k,s) coincides with.
    pub fn hbvm(&self) -> &HbvmConfig {
        &self.base
    }
}

/// Result of one step. `phi_hat` and `alpha` are empty for methods without an
/// invariant correction; `gamma_hat` is empty for plain Runge–Kutta steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub y1: State,
    pub gamma_hat: Vec<State>,
    pub phi_hat: Vec<DMatrix<f64>>,
    pub alpha: DVector<f64>,
    pub stages: Vec<State>,
    pub iterations: usize,
    pub converged: bool,
    pub solver_residual: f64,
}

impl StepResult {
    fn trivial(y0: &State, s: usize, k: usize) -> Self {
        Self {
            y1: y0.clone(),
            gamma_hat: vec![State::zeros(y0.len()); s],
            phi_hat: Vec::new(),
            alpha: DVector::zeros(0),
            stages: vec![y0.clone(); k],
            iterations: 0,
            converged: true,
            solver_residual: 0.0,
        }
    }
}

fn check_state(problem: &dyn VectorField, y0: &State, h: f64) -> Result<()> {
    if y0.len() != problem.dim() {
        return Err(Error::Dimension {
            expected: problem.dim(),
            got: y0.len(),
        });
    }
    if !h.is_finite() {
        return Err(Error::Config(format!("stepsize must be finite, got {h}")));
    }
    Ok(())
}

fn columns(m: &DMatrix<f64>) -> Vec<State> {
    m.column_iter().map(|c| c.into_owned()).collect()
}

/// One HBVM(k,s) step through the coefficient system for `γ̂`.
pub fn hbvm_step(
    cfg: &HbvmConfig,
    problem: &dyn VectorField,
    y0: &State,
    h: f64,
    settings: &SolverSettings,
) -> Result<StepResult> {
    check_state(problem, y0, h)?;
    if h == 0.0 {
        return Ok(StepResult::trivial(y0, cfg.s(), cfg.k()));
    }
    let sys = StageSystem::new(problem, &cfg.matrices, y0, h)?;
    let rep = solvers::solve(&sys, DMatrix::zeros(y0.len(), cfg.s()), settings)?;
    let mut y1 = y0.clone();
    y1.axpy(h, &rep.gamma.column(0), 1.0);
    Ok(StepResult {
        y1,
        stages: columns(&sys.stages(&rep.gamma)),
        gamma_hat: columns(&rep.gamma),
        phi_hat: Vec::new(),
        alpha: DVector::zeros(0),
        iterations: rep.iterations,
        converged: rep.converged,
        solver_residual: rep.residual,
    })
}

/// `[φ̂₀ᵀφ̂₀] α̂ = Σⱼ φ̂ⱼᵀγ̂ⱼ`.
///
/// The system is solved with the columns of `φ̂₀` scaled to unit length, so
/// the degeneracy test measures the angles between invariant gradients and
/// not their relative magnitudes. The correction `φ̂₀α̂` does not depend on
/// that scaling.
pub fn solve_alpha(phi_hat: &[DMatrix<f64>], gamma_hat: &[State]) -> Result<DVector<f64>> {
    if phi_hat.is_empty() || phi_hat.len() != gamma_hat.len() {
        return Err(Error::Dimension {
            expected: gamma_hat.len(),
            got: phi_hat.len(),
        });
    }
    let nu = phi_hat[0].ncols();
    let norms: Vec<f64> = phi_hat[0].column_iter().map(|c| c.norm()).collect();
    if norms.iter().any(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::ConstraintDegeneracy(format!("an enforced invariant has a vanishing gradient: column norms {norms:?}")));
    }
    let scale = DVector::from_iterator(nu, norms.iter().map(|n| n.recip()));
    let scaled = DMatrix::from_fn(phi_hat[0].nrows(), nu, |i, j| phi_hat[0][(i, j)] * scale[j]);
    let gram = scaled.transpose() * &scaled;
    let eig = gram.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo < 1e-12 * hi {
        return Err(Error::ConstraintDegeneracy(format!(
            "invariant gradients are nearly dependent: normalised Gram eigenvalues in [{lo:e}, {hi:e}]"
        )));
    }
    let mut rhs = DVector::zeros(nu);
    for (phi, g) in phi_hat.iter().zip(gamma_hat) {
        rhs += phi.transpose() * g;
    }
    let rhs = rhs.component_mul(&scale);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::ConstraintDegeneracy("Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs).component_mul(&scale))
}

/// `φ̂ⱼ = Σ_ℓ β_ℓ P_j(τ_ℓ) ∇L(u(τ_ℓ h))` on the enforced invariant columns.
fn phi_coefficients(cfg: &LimConfig, invariants: &InvariantSet, sys: &StageSystem<'_>, gamma: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let rule = cfg.phi_rule.as_ref().expect("r > 0");
    let m = gamma.nrows();
    let nu = invariants.enforced_count();
    let mut phi = vec![DMatrix::zeros(m, nu); cfg.s()];
    for (l, (&tau, &beta)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
        let grad = invariants.enforced_gradient(&sys.polynomial(gamma, tau))?;
        for (j, p) in phi.iter_mut().enumerate() {
            *p += &grad * (beta * cfg.phi_legendre[(l, j)]);
        }
    }
    Ok(phi)
}

/// One LIM(r,k,s) step. The coefficient system is solved for `γ̂` with the
/// correction `d = φ̂₀α̂` frozen; `φ̂` and `α̂` are then refreshed from the
/// current polynomial, and the sweep repeats until `d` settles.
pub fn lim_step(
    cfg: &LimConfig,
    problem: &dyn VectorField,
    invariants: &InvariantSet,
    y0: &State,
    h: f64,
    settings: &SolverSettings,
) -> Result<StepResult> {
    if cfg.r == 0 || invariants.enforced_count() == 0 {
        return hbvm_step(&cfg.base, problem, y0, h, settings);
    }
    check_state(problem, y0, h)?;
    if invariants.dim() != y0.len() {
        return Err(Error::Dimension {
            expected: y0.len(),
            got: invariants.dim(),
        });
    }
    let (m, s, nu) = (y0.len(), cfg.s(), invariants.enforced_count());
    if h == 0.0 {
        let mut res = StepResult::trivial(y0, s, cfg.k());
        res.phi_hat = vec![DMatrix::zeros(m, nu); s];
        res.alpha = DVector::zeros(nu);
        return Ok(res);
    }
    settings.validate()?;

    let mut gamma = DMatrix::zeros(m, s);
    let mut d = State::zeros(m);
    let mut iterations = 0;
    let mut stop = StopRule::new(settings.tol);
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut phi = Vec::new();
    let mut alpha = DVector::zeros(nu);
    for _ in 0..settings.max_outer {
        let sys = StageSystem::new(problem, &cfg.base.matrices, y0, h)?.with_shift(&d);
        let rep = solvers::solve(&sys, gamma, settings)?;
        iterations += rep.iterations;
        residual = rep.residual;
        gamma = rep.gamma;
        phi = phi_coefficients(cfg, invariants, &sys, &gamma)?;
        alpha = solve_alpha(&phi, &columns(&gamma))?;
        let d_new = &phi[0] * &alpha;
        let change = DMatrix::from_column_slice(m, 1, (&d_new - &d).as_slice());
        d = d_new;
        if !rep.converged {
            break;
        }
        if stop.check(&change, &gamma, iterations)? {
            converged = true;
            break;
        }
    }

    let sys = StageSystem::new(problem, &cfg.base.matrices, y0, h)?.with_shift(&d);
    let mut y1 = y0.clone();
    y1.axpy(h, &gamma.column(0), 1.0);
    y1.axpy(-h, &d, 1.0);
    Ok(StepResult {
        y1,
        stages: columns(&sys.stages(&gamma)),
        gamma_hat: columns(&gamma),
        phi_hat: phi,
        alpha,
        iterations,
        converged,
        solver_residual: residual,
    })
}

/// One Runge–Kutta step with a general tableau, solving for the stage
/// derivatives `Kᵢ = f(y₀ + hΣⱼ aᵢⱼKⱼ)`. Fixed-point iteration when
/// `settings.kind` asks for it, simplified Newton on `I − hA⊗J₀` otherwise.
pub fn rk_step(
    tableau: &ButcherTableau,
    problem: &dyn VectorField,
    y0: &State,
    h: f64,
    settings: &SolverSettings,
) -> Result<StepResult> {
    check_state(problem, y0, h)?;
    let (m, k) = (y0.len(), tableau.stages());
    if h == 0.0 {
        let mut res = StepResult::trivial(y0, 0, k);
        res.gamma_hat.clear();
        return Ok(res);
    }
    settings.validate()?;
    let a_t = tableau.a.transpose();
    let stages_of = |kmat: &DMatrix<f64>| {
        let mut y = kmat * &a_t * h;
        for mut col in y.column_iter_mut() {
            col += y0;
        }
        y
    };
    let map = |kmat: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let y = stages_of(kmat);
        let mut out = DMatrix::zeros(m, k);
        for (i, col) in y.column_iter().enumerate() {
            out.set_column(i, &problem.eval(&col.into_owned())?);
        }
        Ok(out)
    };

    let rep = if settings.kind == SolverKind::FixedPoint {
        fixed_point_solve(map, DMatrix::zeros(m, k), settings)?
    } else {
        let j0 = match settings.jacobian_policy {
            solvers::JacobianPolicy::Analytic => problem.jacobian(y0).unwrap_or_else(|| {
                Err(Error::Config(format!("{} has no analytic Jacobian", problem.label())))
            })?,
            solvers::JacobianPolicy::FiniteDifference => solvers::finite_difference_jacobian(problem, y0)?,
        };
        let lu = LU::new(solvers::newton_matrix(&tableau.a, &j0, h));
        if !lu.is_invertible() {
            return Err(Error::Singular(format!("I - hA⊗J0 at h = {h}")));
        }
        let mut kmat = DMatrix::zeros(m, k);
        let mut stop = StopRule::new(settings.tol);
        let mut report = None;
        for it in 1..=settings.max_outer {
            let f = &kmat - map(&kmat)?;
            let rhs = DMatrix::from_column_slice(m * k, 1, (-&f).as_slice());
            let delta = lu.solve(&rhs).ok_or_else(|| Error::Singular(format!("I - hA⊗J0 at h = {h}")))?;
            let delta = DMatrix::from_column_slice(m, k, delta.as_slice());
            kmat += &delta;
            if stop.check(&delta, &kmat, it)? {
                report = Some((it, true, f.amax()));
                break;
            }
        }
        let (iterations, converged, residual) = report.unwrap_or((settings.max_outer, false, f64::NAN));
        let residual = if converged { (&kmat - map(&kmat)?).amax() } else { residual };
        solvers::SolveReport {
            gamma: kmat,
            iterations,
            converged,
            residual,
        }
    };

    let y1 = y0 + &rep.gamma * &tableau.b * h;
    Ok(StepResult {
        y1,
        stages: columns(&stages_of(&rep.gamma)),
        gamma_hat: Vec::new(),
        phi_hat: Vec::new(),
        alpha: DVector::zeros(0),
        iterations: rep.iterations,
        converged: rep.converged,
        solver_residual: rep.residual,
    })
}

/// A one-step method usable by the driver.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Hbvm(HbvmConfig),
    Lim(LimConfig),
    RungeKutta(ButcherTableau),
}

impl Method {
    pub fn gauss(s: usize) -> Result<Self> {
        Ok(Self::Hbvm(HbvmConfig::gauss(s)?))
    }

    pub fn hbvm(k: usize, s: usize) -> Result<Self> {
        Ok(Self::Hbvm(HbvmConfig::new(k, s)?))
    }

    pub fn lim(r: usize, k: usize, s: usize) -> Result<Self> {
        Ok(Self::Lim(LimConfig::new(r, k, s)?))
    }

    pub fn trapezoidal(nu: usize) -> Result<Self> {
        Ok(Self::RungeKutta(trapezoidal_tableau(nu)?))
    }

    pub fn order(&self) -> usize {
        match self {
            Self::Hbvm(c) => c.order(),
            Self::Lim(c) => c.order(),
            Self::RungeKutta(t) => t.order,
        }
    }

    /// The Butcher tableau of the underlying collocation-like method
    /// (LIM methods report their HBVM(k,s) part).
    pub fn tableau(&self) -> Result<ButcherTableau> {
        match self {
            Self::Hbvm(c) => hbvm_tableau(c.k(), c.s()),
            Self::Lim(c) => hbvm_tableau(c.k(), c.s()),
            Self::RungeKutta(t) => Ok(t.clone()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Hbvm(c) if c.k() == c.s() => format!("Gauss({})", c.s()),
            Self::Hbvm(c) => format!("HBVM({},{})", c.k(), c.s()),
            Self::Lim(c) => format!("LIM({},{},{})", c.r(), c.k(), c.s()),
            Self::RungeKutta(t) => format!("trapezoidal({})", t.stages()),
        }
    }

    /// One step; `invariants` is only consulted by LIM methods.
    pub fn step(
        &self,
        problem: &dyn VectorField,
        invariants: &InvariantSet,
        y0: &State,
        h: f64,
        settings: &SolverSettings,
    ) -> Result<StepResult> {
        match self {
            Self::Hbvm(c) => hbvm_step(c, problem, y0, h, settings),
            Self::Lim(c) => lim_step(c, problem, invariants, y0, h, settings),
            Self::RungeKutta(t) => rk_step(t, problem, y0, h, settings),
        }
    }
}

/// Empirical order of `‖α̂‖` over a decreasing list of stepsizes. Points with
/// `‖α̂‖ < 1e−15` are dropped as saturated.
pub fn alpha_scaling_probe(
    cfg: &LimConfig,
    problem: &dyn VectorField,
    invariants: &InvariantSet,
    y0: &State,
    h_list: &[f64],
    settings: &SolverSettings,
) -> Result<f64> {
    if cfg.r == 0 || invariants.enforced_count() == 0 {
        return Err(Error::Config("alpha scaling needs r > 0 and at least one enforced invariant".into()));
    }
    let mut hs = Vec::new();
    let mut norms = Vec::new();
    for &h in h_list {
        let step = lim_step(cfg, problem, invariants, y0, h, settings)?;
        let n = step.alpha.norm();
        if n >= 1e-15 {
            hs.push(h);
            norms.push(n);
        }
    }
    if hs.len() < 2 {
        return Err(Error::Measurement("alpha saturated below 1e-15 for the given stepsizes".into()));
    }
    loglog_slope(&hs, &norms)
}
