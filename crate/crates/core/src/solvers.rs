//! Nonlinear solvers for the coefficient system
//!
//! ```text
//! F(γ̂) = γ̂ − 𝒫ₛᵀΩ⊗I f(e⊗y₀ + hℐₛ⊗I γ̂) = 0.
//! ```
//!
//! The unknowns are held as an `m × s` matrix whose column `j` is `γ̂_j`, so
//! the column-major vectorisation matches the block ordering of the Kronecker
//! products `Xₛ⊗J₀`.

use nalgebra::{Complex, ComplexField, DMatrix, LU};

use crate::error::{Error, Result};
use crate::legendre::{legendre_integral, x_matrix, SpectralMatrices};
use crate::systems::{State, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    FixedPoint,
    SimplifiedNewton,
    /// Blended iteration, one inner sweep per outer iteration.
    BlendedNonlinear,
    /// Blended iteration with an inner loop of up to `max_inner` sweeps.
    BlendedOuterInner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianPolicy {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub kind: SolverKind,
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub jacobian_policy: JacobianPolicy,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            kind: SolverKind::SimplifiedNewton,
            tol: 1e-13,
            max_outer: 100,
            max_inner: 5,
            jacobian_policy: JacobianPolicy::Analytic,
        }
    }
}

impl SolverSettings {
    pub fn with_kind(kind: SolverKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("solver tol must be positive, got {}", self.tol)));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Config("solver iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of a nonlinear solve. A non-converged report carries the last iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub gamma: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the last measured residual.
    pub residual: f64,
}

/// Increments at this relative size that stop shrinking are taken as converged.
const STALL_LEVEL: f64 = 1e3 * f64::EPSILON;

pub(crate) struct StopRule {
    tol: f64,
    previous: f64,
}

impl StopRule {
    pub(crate) fn new(tol: f64) -> Self {
        Self {
            tol,
            previous: f64::INFINITY,
        }
    }

    pub(crate) fn check(&mut self, delta: &DMatrix<f64>, gamma: &DMatrix<f64>, iterations: usize) -> Result<bool> {
        let d = delta.amax();
        if !d.is_finite() || gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iterations });
        }
        let scale = 1.0 + gamma.amax();
        let done = d <= self.tol * scale || (d <= STALL_LEVEL * scale && d >= self.previous);
        self.previous = d;
        Ok(done)
    }
}

/// The coefficient system of one step: problem, matrices, `y₀`, `h`, and an
/// optional frozen shift `d` entering the step polynomial as
/// `u(ch) = y₀ + h Σⱼ Iⱼ(c) γ̂ⱼ − c h d`.
pub struct StageSystem<'a> {
    problem: &'a dyn VectorField,
    matrices: &'a SpectralMatrices,
    y0: &'a State,
    h: f64,
    shift: Option<&'a State>,
    integrals_t: DMatrix<f64>,
    projection_t: DMatrix<f64>,
}

impl<'a> StageSystem<'a> {
    pub fn new(problem: &'a dyn VectorField, matrices: &'a SpectralMatrices, y0: &'a State, h: f64) -> Result<Self> {
        if y0.len() != problem.dim() {
            return Err(Error::Dimension {
                expected: problem.dim(),
                got: y0.len(),
            });
        }
        Ok(Self {
            problem,
            matrices,
            y0,
            h,
            shift: None,
            integrals_t: matrices.i_s().transpose(),
            projection_t: matrices.projection().transpose(),
        })
    }

    pub fn with_shift(mut self, shift: &'a State) -> Self {
        self.shift = Some(shift);
        self
    }

    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    pub fn s(&self) -> usize {
        self.matrices.s()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn matrices(&self) -> &SpectralMatrices {
        self.matrices
    }

    pub fn problem(&self) -> &dyn VectorField {
        self.problem
    }

    /// `u(ch)` at an arbitrary `c ∈ [0, 1]`.
    pub fn polynomial(&self, gamma: &DMatrix<f64>, c: f64) -> State {
        let mut u = self.y0.clone();
        for j in 0..self.s() {
            u.axpy(self.h * legendre_integral(j, c), &gamma.column(j), 1.0);
        }
        if let Some(d) = self.shift {
            u.axpy(-c * self.h, d, 1.0);
        }
        u
    }

    /// Stage values `Yᵢ = u(cᵢh)` as the columns of an `m × k` matrix.
    pub fn stages(&self, gamma: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.matrices.k();
        let mut y = gamma * &self.integrals_t * self.h;
        for (i, mut col) in y.column_iter_mut().enumerate() {
            col += self.y0;
            if let Some(d) = self.shift {
                col.axpy(-self.matrices.rule().nodes()[i] * self.h, d, 1.0);
            }
        }
        debug_assert_eq!(y.ncols(), k);
        y
    }

    /// `𝒫ₛᵀΩ⊗I f(Y)`, the fixed-point map.
    pub fn fixed_point_map(&self, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let stages = self.stages(gamma);
        let mut fvals = DMatrix::zeros(self.dim(), stages.ncols());
        for (i, y) in stages.column_iter().enumerate() {
            let f = self.problem.eval(&y.into_owned())?;
            fvals.set_column(i, &f);
        }
        Ok(fvals * &self.projection_t)
    }

    /// `F(γ̂) = γ̂ − 𝒫ₛᵀΩ⊗I f(Y)`.
    pub fn residual(&self, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(gamma - self.fixed_point_map(gamma)?)
    }

    /// `J₀ = f'(y₀)` per the policy.
    pub fn jacobian(&self, policy: JacobianPolicy) -> Result<DMatrix<f64>> {
        match policy {
            JacobianPolicy::Analytic => self.problem.jacobian(self.y0).unwrap_or_else(|| {
                Err(Error::Config(format!(
                    "{} has no analytic Jacobian; use the finite-difference policy",
                    self.problem.label()
                )))
            }),
            JacobianPolicy::FiniteDifference => finite_difference_jacobian(self.problem, self.y0),
        }
    }
}

/// Forward-difference Jacobian with step `√ε (1 + |yᵢ|)`.
pub fn finite_difference_jacobian(problem: &dyn VectorField, y: &State) -> Result<DMatrix<f64>> {
    let m = y.len();
    let f0 = problem.eval(y)?;
    let mut jac = DMatrix::zeros(m, m);
    let root_eps = f64::EPSILON.sqrt();
    for i in 0..m {
        let step = root_eps * (1.0 + y[i].abs());
        let mut yp = y.clone();
        yp[i] += step;
        let col = (problem.eval(&yp)? - &f0) / step;
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// Plain fixed-point iteration `γ̂ ← map(γ̂)`.
pub fn fixed_point_solve<M>(mut map: M, initial: DMatrix<f64>, settings: &SolverSettings) -> Result<SolveReport>
where
    M: FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    settings.validate()?;
    let mut gamma = initial;
    let mut stop = StopRule::new(settings.tol);
    let mut residual = f64::INFINITY;
    for it in 1..=settings.max_outer {
        let next = map(&gamma)?;
        let delta = &next - &gamma;
        residual = delta.amax();
        gamma = next;
        if stop.check(&delta, &gamma, it)? {
            return Ok(SolveReport {
                gamma,
                iterations: it,
                converged: true,
                residual,
            });
        }
    }
    Ok(SolveReport {
        gamma,
        iterations: settings.max_outer,
        converged: false,
        residual,
    })
}

/// The `sm × sm` simplified-Newton matrix `I − hXₛ⊗J₀`.
pub fn newton_matrix(x_s: &DMatrix<f64>, j0: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let n = x_s.nrows() * j0.nrows();
    DMatrix::identity(n, n) - x_s.kronecker(j0) * h
}

/// Simplified Newton: `[I − hXₛ⊗J₀] Δ = −F(γ̂)`, factored once per call.
pub fn simplified_newton_solve(
    system: &StageSystem<'_>,
    initial: DMatrix<f64>,
    settings: &SolverSettings,
) -> Result<SolveReport> {
    settings.validate()?;
    let (m, s) = (system.dim(), system.s());
    let j0 = system.jacobian(settings.jacobian_policy)?;
    let lu = LU::new(newton_matrix(&system.matrices().x_s(), &j0, system.h()));
    if !lu.is_invertible() {
        return Err(Error::Singular(format!("I - hX_s⊗J0 at h = {}", system.h())));
    }
    let mut gamma = initial;
    let mut stop = StopRule::new(settings.tol);
    for it in 1..=settings.max_outer {
        let f = system.residual(&gamma)?;
        let rhs = DMatrix::from_column_slice(m * s, 1, (-f).as_slice());
        let delta = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular(format!("I - hX_s⊗J0 at h = {}", system.h())))?;
        let delta = DMatrix::from_column_slice(m, s, delta.as_slice());
        gamma += &delta;
        if stop.check(&delta, &gamma, it)? {
            let residual = system.residual(&gamma)?.amax();
            return Ok(SolveReport {
                gamma,
                iterations: it,
                converged: true,
                residual,
            });
        }
    }
    let residual = system.residual(&gamma)?.amax();
    Ok(SolveReport {
        gamma,
        iterations: settings.max_outer,
        converged: false,
        residual,
    })
}

/// Applies `θ = I_s ⊗ (I − hζJ₀)⁻¹` column by column.
struct Theta {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Theta {
    fn new(j0: &DMatrix<f64>, h: f64, zeta: f64) -> Result<Self> {
        let m = j0.nrows();
        let lu = LU::new(DMatrix::identity(m, m) - j0 * (h * zeta));
        if !lu.is_invertible() {
            return Err(Error::Singular(format!("I - h·zeta·J0 at h = {h}")));
        }
        Ok(Self { lu })
    }

    fn apply(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu
            .solve(v)
            .ok_or_else(|| Error::Singular("I - h·zeta·J0".into()))
    }
}

/// Blended iteration; `settings.kind` picks the one-sweep or outer-inner form.
pub fn blended_solve(system: &StageSystem<'_>, initial: DMatrix<f64>, settings: &SolverSettings) -> Result<SolveReport> {
    settings.validate()?;
    let s = system.s();
    let h = system.h();
    let params = blended_params(s)?;
    let zeta = params.zeta;
    let j0 = system.jacobian(settings.jacobian_policy)?;
    let theta = Theta::new(&j0, h, zeta)?;
    let x_s = system.matrices().x_s();
    let x_inv = x_s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("X_s".into()))?;
    // (ζXₛ⁻¹ ⊗ I) v  ≡  ζ · V · Xₛ⁻ᵀ in matrix form.
    let scaled_inv_t = x_inv.transpose() * zeta;
    let x_t = x_s.transpose();
    let inner = match settings.kind {
        SolverKind::BlendedOuterInner => settings.max_inner,
        _ => 1,
    };

    let mut gamma = initial;
    let mut stop = StopRule::new(settings.tol);
    for it in 1..=settings.max_outer {
        let eta = system.residual(&gamma)?;
        let u0 = &eta * &scaled_inv_t;
        // First sweep from Δ = 0: Δ = θ[θ(u − η) − u].
        let mut delta = theta.apply(&(theta.apply(&(&u0 - &eta))? - &u0))?;
        for _ in 1..inner {
            let z = &j0 * &delta;
            let d_eta = &delta + &eta;
            let u = &d_eta * &scaled_inv_t - &z * (h * zeta);
            let w = &d_eta - &z * &x_t * h;
            let correction = theta.apply(&(&u + theta.apply(&(&w - &u))?))?;
            let small = correction.amax() <= settings.tol * (1.0 + delta.amax());
            delta -= correction;
            if small {
                break;
            }
        }
        gamma += &delta;
        if stop.check(&delta, &gamma, it)? {
            let residual = system.residual(&gamma)?.amax();
            return Ok(SolveReport {
                gamma,
                iterations: it,
                converged: true,
                residual,
            });
        }
    }
    let residual = system.residual(&gamma)?.amax();
    Ok(SolveReport {
        gamma,
        iterations: settings.max_outer,
        converged: false,
        residual,
    })
}

/// Dispatches on `settings.kind`.
pub fn solve(system: &StageSystem<'_>, initial: DMatrix<f64>, settings: &SolverSettings) -> Result<SolveReport> {
    match settings.kind {
        SolverKind::FixedPoint => fixed_point_solve(|g| system.fixed_point_map(g), initial, settings),
        SolverKind::SimplifiedNewton => simplified_newton_solve(system, initial, settings),
        SolverKind::BlendedNonlinear | SolverKind::BlendedOuterInner => blended_solve(system, initial, settings),
    }
}

/// Parameters of the blended iteration for degree `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendedParams {
    pub s: usize,
    /// `ζ = min |μ|`, `μ ∈ σ(Xₛ)`.
    pub zeta: f64,
    /// Maximum amplification factor on the imaginary axis, `1 − cos φ₁`.
    pub rho_star: f64,
    /// Nonstiff amplification factor `|μ₁ − |μ₁||² / |μ₁|`.
    pub rho_tilde: f64,
}

pub const MAX_BLENDED_DEGREE: usize = 16;

/// Eigenvalues of `Xₛ`, each conjugate pair listed once with `Im μ ≥ 0`,
/// sorted by modulus.
pub fn x_eigenvalues(s: usize) -> Vec<Complex<f64>> {
    let mut eig: Vec<Complex<f64>> = x_matrix(s)
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im >= -1e-14)
        .map(|z| Complex::new(z.re, z.im.abs()))
        .collect();
    eig.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    eig
}

pub fn blended_params(s: usize) -> Result<BlendedParams> {
    if s == 0 || s > MAX_BLENDED_DEGREE {
        return Err(Error::Config(format!("blended parameters need 1 <= s <= {MAX_BLENDED_DEGREE}, got {s}")));
    }
    let mu1 = x_eigenvalues(s)[0];
    let zeta = mu1.norm();
    Ok(BlendedParams {
        s,
        zeta,
        rho_star: 1.0 - mu1.arg().cos(),
        rho_tilde: (mu1 - Complex::from(zeta)).norm_sqr() / zeta,
    })
}

/// Spectral radius of the blended iteration operator `Z(q)` for `y' = λy`,
/// `q = hλ`: `max_μ |q(μ−ζ)² / (μ(1−qζ)²)|`.
pub fn blended_spectral_radius(s: usize, q: Complex<f64>) -> Result<f64> {
    let zeta = blended_params(s)?.zeta;
    let one = Complex::from(1.0);
    let z = Complex::from(zeta);
    let denom = (one - q * z).powi(2);
    Ok(x_eigenvalues(s)
        .into_iter()
        .map(|mu| (q * (mu - z).powi(2) / (mu * denom)).norm())
        .fold(0.0, f64::max))
}

/// `ρ(q)` over a grid of `q` in the closed left half-plane.
pub fn convergence_region_scan(s: usize, grid: &[Complex<f64>]) -> Result<Vec<f64>> {
    if let Some(q) = grid.iter().find(|q| !(q.re <= 0.0) || !q.im.is_finite()) {
        return Err(Error::Config(format!("scan points must satisfy Re q <= 0, got {q}")));
    }
    grid.iter().map(|&q| blended_spectral_radius(s, q)).collect()
}
