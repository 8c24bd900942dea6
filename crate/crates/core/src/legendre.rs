//! Shifted orthonormal Legendre polynomials on `[0, 1]`, Gauss-Legendre
//! quadrature, and the matrices `𝒫ₛ`, `ℐₛ`, `Ω`, `X̂ₛ`, `Xₛ` that define every
//! method in this crate.
//!
//! The polynomials are normalized so that `∫₀¹ Pᵢ Pⱼ = δᵢⱼ`:
//!
//! ```
//! use lineint::legendre::{legendre_eval, legendre_integral};
//!
//! assert_eq!(legendre_eval(0, 0.3), 1.0);
//! assert!((legendre_eval(2, 1.0) - 5f64.sqrt()).abs() < 1e-14);
//! assert!((legendre_integral(1, 0.5) + 3f64.sqrt() / 4.0).abs() < 1e-15);
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest supported number of Gauss nodes.
pub const MAX_NODES: usize = 32;

/// Value of the shifted orthonormal Legendre polynomial `P_j` at `c`.
///
/// Evaluated with the three-term recurrence; valid for any real `c`.
pub fn legendre_eval(j: usize, c: f64) -> f64 {
    legendre_values(j, c)[j]
}

/// `[P_0(c), …, P_n(c)]`.
pub fn legendre_values(n: usize, c: f64) -> Vec<f64> {
    let mut values = Vec::with_capacity(n + 1);
    values.push(1.0);
    if n == 0 {
        return values;
    }
    let x = 2.0 * c - 1.0;
    values.push(3f64.sqrt() * x);
    for i in 1..n {
        let (a, b) = recurrence_coefficients(i);
        let next = a * x * values[i] - b * values[i - 1];
        values.push(next);
    }
    values
}

/// Coefficients of `P_{i+1} = a (2x−1) P_i − b P_{i−1}`.
fn recurrence_coefficients(i: usize) -> (f64, f64) {
    let fi = i as f64;
    let a = (2.0 * fi + 1.0) / (fi + 1.0) * ((2.0 * fi + 3.0) / (2.0 * fi + 1.0)).sqrt();
    let b = fi / (fi + 1.0) * ((2.0 * fi + 3.0) / (2.0 * fi - 1.0)).sqrt();
    (a, b)
}

/// `P_n(c)` and `P_n'(c)` together, by differentiating the recurrence.
fn legendre_with_derivative(n: usize, c: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let x = 2.0 * c - 1.0;
    let s3 = 3f64.sqrt();
    let (mut p_prev, mut p) = (1.0, s3 * x);
    let (mut d_prev, mut d) = (0.0, 2.0 * s3);
    for i in 1..n {
        let (a, b) = recurrence_coefficients(i);
        let p_next = a * x * p - b * p_prev;
        let d_next = a * (2.0 * p + x * d) - b * d_prev;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

/// `ξᵢ = 1 / (2√(4i²−1))`, for `i ≥ 1`.
pub fn xi(i: usize) -> f64 {
    let fi = i as f64;
    1.0 / (2.0 * (4.0 * fi * fi - 1.0).sqrt())
}

/// `∫₀ᶜ P_j(x) dx`, through the relations between the integrals and the
/// polynomials of neighbouring degree.
pub fn legendre_integral(j: usize, c: f64) -> f64 {
    let p = legendre_values(j + 1, c);
    if j == 0 {
        xi(1) * p[1] + 0.5 * p[0]
    } else {
        xi(j + 1) * p[j + 1] - xi(j) * p[j - 1]
    }
}

/// Gauss-Legendre quadrature on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    k: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Abscissae, strictly increasing, symmetric about `1/2`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Classical order `2k`: exact on polynomials of degree `≤ 2k − 1`.
    pub fn order(&self) -> usize {
        2 * self.k
    }

    /// `Σ bᵢ g(cᵢ)`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&c, &b)| b * g(c))
            .sum()
    }
}

/// The `k`-point Gauss-Legendre rule on `[0, 1]`, for `1 ≤ k ≤ 32`.
///
/// Nodes are the roots of `P_k`, located by Newton's method from the
/// classical cosine approximations and mirrored so that `cᵢ = 1 − c_{k−i+1}`
/// holds exactly. Weights come from the Christoffel formula
/// `bᵢ = 1 / Σ_{j<k} P_j(cᵢ)²`, which equals the integral of the `i`-th
/// Lagrange cardinal polynomial.
pub fn gauss_rule(k: usize) -> Result<QuadratureRule> {
    if k == 0 || k > MAX_NODES {
        return Err(Error::Config(format!(
            "Gauss rule with {k} nodes outside supported range 1..={MAX_NODES}"
        )));
    }
    let half = k / 2;
    let mut lower = Vec::with_capacity(half);
    for i in 1..=half {
        let guess =
            std::f64::consts::PI * (i as f64 - 0.25) / (k as f64 + 0.5);
        let mut c = 0.5 * (1.0 - guess.cos());
        let mut converged = false;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(k, c);
            let step = p / d;
            c -= step;
            if step.abs() <= 1e-17 {
                converged = true;
                break;
            }
        }
        if !converged {
            // Newton stalls at the roundoff level; one more polish suffices.
            let (p, d) = legendre_with_derivative(k, c);
            c -= p / d;
        }
        lower.push(c);
    }
    let mut nodes = lower.clone();
    if k % 2 == 1 {
        nodes.push(0.5);
    }
    nodes.extend(lower.iter().rev().map(|&c| 1.0 - c));

    let christoffel = |c: f64| {
        let sum: f64 = legendre_values(k - 1, c).iter().map(|p| p * p).sum();
        1.0 / sum
    };
    let lower_weights: Vec<f64> = lower.iter().map(|&c| christoffel(c)).collect();
    let mut weights = lower_weights.clone();
    if k % 2 == 1 {
        weights.push(christoffel(0.5));
    }
    weights.extend(lower_weights.iter().rev());

    Ok(QuadratureRule { k, nodes, weights })
}

/// The method-defining matrices for a `(k, s)` pair, `k ≥ s ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMatrices {
    rule: QuadratureRule,
    s: usize,
    /// `k × (s+1)`: `P_j(cᵢ)` for `j = 0..=s`. `𝒫ₛ` is the leading `s` columns.
    p_ext: DMatrix<f64>,
    i_s: DMatrix<f64>,
    xhat_s: DMatrix<f64>,
}

impl SpectralMatrices {
    pub fn k(&self) -> usize {
        self.rule.k
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// `𝒫ₛ ∈ ℝ^{k×s}`, `(𝒫ₛ)ᵢⱼ = P_j(cᵢ)`.
    pub fn p_s(&self) -> DMatrix<f64> {
        self.p_ext.columns(0, self.s).into_owned()
    }

    /// `𝒫ₛ₊₁ ∈ ℝ^{k×(s+1)}`.
    pub fn p_s1(&self) -> &DMatrix<f64> {
        &self.p_ext
    }

    /// `ℐₛ ∈ ℝ^{k×s}`, `(ℐₛ)ᵢⱼ = ∫₀^{cᵢ} P_j`.
    pub fn i_s(&self) -> &DMatrix<f64> {
        &self.i_s
    }

    /// `Ω = diag(b)`.
    pub fn omega(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(self.rule.weights()))
    }

    /// `X̂ₛ ∈ ℝ^{(s+1)×s}`.
    pub fn xhat_s(&self) -> &DMatrix<f64> {
        &self.xhat_s
    }

    /// `Xₛ`, the leading `s × s` block of `X̂ₛ`.
    pub fn x_s(&self) -> DMatrix<f64> {
        self.xhat_s.rows(0, self.s).into_owned()
    }

    /// `𝒫ₛᵀΩ ∈ ℝ^{s×k}`: maps stage values of `f` to the coefficients `γ̂`.
    pub fn projection(&self) -> DMatrix<f64> {
        let mut m = self.p_s().transpose();
        for (mut col, &b) in m.column_iter_mut().zip(self.rule.weights()) {
            col *= b;
        }
        m
    }
}

/// The tridiagonal `X̂ₛ` built from the `ξᵢ` coefficients.
pub fn xhat_matrix(s: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(s + 1, s);
    x[(0, 0)] = 0.5;
    for j in 0..s {
        x[(j + 1, j)] = xi(j + 1);
        if j >= 1 {
            x[(j - 1, j)] = -xi(j);
        }
    }
    x
}

/// `Xₛ`, the `s × s` tridiagonal matrix whose spectrum is that of the
/// `s`-stage Gauss method.
pub fn x_matrix(s: usize) -> DMatrix<f64> {
    xhat_matrix(s).rows(0, s).into_owned()
}

/// Builds `𝒫ₛ`, `ℐₛ`, `Ω`, `X̂ₛ` on the `k`-point Gauss rule.
pub fn build_matrices(k: usize, s: usize) -> Result<SpectralMatrices> {
    if s == 0 || k < s {
        return Err(Error::Config(format!(
            "need k >= s >= 1, got k = {k}, s = {s}"
        )));
    }
    let rule = gauss_rule(k)?;
    let mut p_ext = DMatrix::zeros(k, s + 1);
    let mut i_s = DMatrix::zeros(k, s);
    for (i, &c) in rule.nodes().iter().enumerate() {
        let vals = legendre_values(s, c);
        for j in 0..=s {
            p_ext[(i, j)] = vals[j];
        }
        for j in 0..s {
            i_s[(i, j)] = legendre_integral(j, c);
        }
    }
    Ok(SpectralMatrices {
        rule,
        s,
        p_ext,
        i_s,
        xhat_s: xhat_matrix(s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn eval_examples() {
        assert_eq!(legendre_eval(0, 0.3), 1.0);
        assert_abs_diff_eq!(legendre_eval(1, 0.5), 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(legendre_eval(2, 1.0), 5f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn value_at_one_is_sqrt_2j_plus_1() {
        for j in 0..=20 {
            let expected = (2.0 * j as f64 + 1.0).sqrt();
            assert_abs_diff_eq!(legendre_eval(j, 1.0), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn integral_examples() {
        assert_abs_diff_eq!(legendre_integral(0, 1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(legendre_integral(3, 1.0), 0.0, epsilon = 1e-15);
        // Antiderivative of √3(2x−1) is √3(x² − x).
        assert_abs_diff_eq!(legendre_integral(1, 0.5), -3f64.sqrt() / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn small_rules() {
        let r1 = gauss_rule(1).unwrap();
        assert_eq!(r1.nodes(), &[0.5]);
        assert_abs_diff_eq!(r1.weights()[0], 1.0, epsilon = 1e-15);

        let r2 = gauss_rule(2).unwrap();
        let d = 3f64.sqrt() / 6.0;
        assert_abs_diff_eq!(r2.nodes()[0], 0.5 - d, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.nodes()[1], 0.5 + d, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.weights()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.weights()[1], 0.5, epsilon = 1e-15);
        assert_eq!(r2.order(), 4);
    }

    #[test]
    fn rule_range_is_checked() {
        assert!(matches!(gauss_rule(0), Err(Error::Config(_))));
        assert!(matches!(gauss_rule(33), Err(Error::Config(_))));
    }

    #[test]
    fn rule_invariants_every_k() {
        for k in 1..=MAX_NODES {
            let rule = gauss_rule(k).unwrap();
            let (c, b) = (rule.nodes(), rule.weights());
            for i in 0..k {
                assert!(legendre_eval(k, c[i]).abs() <= 1e-12, "k={k} residual");
                assert!(c[i] > 0.0 && c[i] < 1.0);
                assert!(b[i] > 0.0);
                if i > 0 {
                    assert!(c[i] > c[i - 1]);
                }
                assert_abs_diff_eq!(c[i], 1.0 - c[k - 1 - i], epsilon = 1e-13);
                assert_abs_diff_eq!(b[i], b[k - 1 - i], epsilon = 1e-13);
            }
            assert_abs_diff_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
            // Exact on monomials of degree ≤ 2k − 1: ∫₀¹ xⁿ = 1/(n+1).
            for n in 0..2 * k {
                let q = rule.integrate(|x| x.powi(n as i32));
                assert_abs_diff_eq!(q, 1.0 / (n as f64 + 1.0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn five_point_nodes_are_symmetric() {
        let r = gauss_rule(5).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(r.nodes()[i], 1.0 - r.nodes()[4 - i], epsilon = 1e-13);
        }
    }

    #[test]
    fn orthonormality() {
        let rule = gauss_rule(16).unwrap();
        for i in 0..=10 {
            for j in 0..=10 {
                let v = rule.integrate(|x| legendre_eval(i, x) * legendre_eval(j, x));
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn moment_annihilation() {
        let rule = gauss_rule(16).unwrap();
        for j in 1..=8 {
            for k in 0..j {
                let v = rule.integrate(|t| legendre_eval(j, t) * t.powi(k as i32));
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
            }
        }
    }

    fn slope(d_h: f64, d_half: f64) -> f64 {
        (d_h / d_half).log2()
    }

    #[test]
    fn quadrature_error_scaling() {
        let k = 3;
        let q = 2 * k;
        let rule = gauss_rule(k).unwrap();
        let fine = gauss_rule(16).unwrap();
        let defect = |j: usize, h: f64| {
            let exact = fine.integrate(|t| legendre_eval(j, t) * (t * h).exp());
            let approx = rule.integrate(|t| legendre_eval(j, t) * (t * h).exp());
            (exact - approx).abs()
        };
        for j in 0..=2 {
            let p = slope(defect(j, 0.5), defect(j, 0.25));
            assert!(p >= (q - j) as f64 - 0.5, "j={j}: slope {p}");
        }
    }

    #[test]
    fn filtered_integral_scaling() {
        let fine = gauss_rule(16).unwrap();
        let value = |j: usize, h: f64| fine.integrate(|t| legendre_eval(j, t) * (t * h).exp()).abs();
        for j in 0..=5 {
            let p = slope(value(j, 0.5), value(j, 0.25));
            assert!(p >= j as f64 - 0.5, "j={j}: slope {p}");
        }
    }

    #[test]
    fn matrices_trivial_size() {
        let m = build_matrices(1, 1).unwrap();
        assert_abs_diff_eq!(m.p_s()[(0, 0)], 1.0);
        assert_abs_diff_eq!(m.i_s()[(0, 0)], 0.5, epsilon = 1e-16);
        assert_abs_diff_eq!(m.x_s()[(0, 0)], 0.5);
    }

    #[test]
    fn matrices_reject_k_below_s() {
        assert!(matches!(build_matrices(1, 2), Err(Error::Config(_))));
        assert!(matches!(build_matrices(3, 0), Err(Error::Config(_))));
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    #[test]
    fn matrix_identities() {
        for k in 1..=8 {
            for s in 1..=k {
                let m = build_matrices(k, s).unwrap();
                let orto = m.p_s().transpose() * m.omega() * m.p_s1();
                let mut expected = DMatrix::zeros(s, s + 1);
                for i in 0..s {
                    expected[(i, i)] = 1.0;
                }
                assert!(max_abs(&(orto - expected)) <= 1e-13, "k={k} s={s}");
                let xs = m.p_s1() * m.xhat_s();
                assert!(max_abs(&(m.i_s() - xs)) <= 1e-13, "k={k} s={s}");
            }
        }
    }

    #[test]
    fn square_case_inverse() {
        let m = build_matrices(2, 2).unwrap();
        let inv = m.p_s().try_inverse().unwrap();
        assert!(max_abs(&(inv - m.projection())) <= 1e-12);
        assert!(max_abs(&(m.i_s() - m.p_s() * m.x_s())) <= 1e-13);
    }

    #[test]
    fn xi_entries() {
        let x = xhat_matrix(3);
        assert_eq!(x[(0, 0)], 0.5);
        assert_eq!(x[(1, 0)], 1.0 / (2.0 * 3f64.sqrt()));
        assert_eq!(x[(0, 1)], -x[(1, 0)]);
        assert_eq!(x[(3, 2)], 1.0 / (2.0 * 35f64.sqrt()));
        assert_eq!(x[(1, 1)], 0.0);
    }

    proptest! {
        #[test]
        fn reflection_symmetry(j in 0usize..20, c in 0.0f64..1.0) {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let lhs = legendre_eval(j, c);
            let rhs = sign * legendre_eval(j, 1.0 - c);
            prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
        }

        #[test]
        fn integral_matches_quadrature_on_subinterval(j in 0usize..12, c in 0.0f64..1.0) {
            // 8 Gauss points mapped to [0, c] integrate P_j exactly for j ≤ 15.
            let rule = gauss_rule(8).unwrap();
            let q = c * rule.integrate(|t| legendre_eval(j, c * t));
            prop_assert!((legendre_integral(j, c) - q).abs() <= 1e-12);
        }
    }
}
