//! Oracles shared by the integration tests. Nothing here calls into the
//! library's quadrature or integrators.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Prints one verdict line and fails the test on `FAIL`. The line goes to the
/// stdout handle directly so it shows without `--nocapture`.
pub fn verdict(id: &str, title: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let line = format!("{id} {}: {title} [{detail}]\n", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{id} failed: {title} [{detail}]");
}

/// Closed-form Gauss–Legendre nodes on `[0, 1]` for `s ≤ 3`.
pub fn gauss_nodes_closed_form(s: usize) -> Vec<f64> {
    match s {
        1 => vec![0.5],
        2 => {
            let d = 3f64.sqrt() / 6.0;
            vec![0.5 - d, 0.5 + d]
        }
        3 => {
            let d = 15f64.sqrt() / 10.0;
            vec![0.5 - d, 0.5, 0.5 + d]
        }
        _ => panic!("closed form only for s <= 3"),
    }
}

/// Collocation tableau on nodes `c`: `Σⱼ aᵢⱼ cⱼ^{q−1} = cᵢ^q/q`, `Σⱼ bⱼ cⱼ^{q−1} = 1/q`.
pub fn collocation_tableau(c: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let k = c.len();
    let v = DMatrix::from_fn(k, k, |q, j| c[j].powi(q as i32));
    let lu = v.lu();
    let mut a = DMatrix::zeros(k, k);
    for (i, &ci) in c.iter().enumerate() {
        let rhs = DVector::from_fn(k, |q, _| ci.powi(q as i32 + 1) / (q + 1) as f64);
        a.set_row(i, &lu.solve(&rhs).unwrap().transpose());
    }
    let b = lu.solve(&DVector::from_fn(k, |q, _| 1.0 / (q + 1) as f64)).unwrap();
    (a, b)
}

/// Shifted orthonormal Legendre polynomial by the explicit sum
/// `√(2j+1) Σᵢ (−1)^{j+i} C(j,i) C(j+i,i) xⁱ`.
pub fn legendre_explicit(j: usize, x: f64) -> f64 {
    let binom = |n: usize, k: usize| -> f64 { (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
    let mut sum = 0.0;
    for i in 0..=j {
        let sign = (-1f64).powi((j + i) as i32);
        sum += sign * binom(j, i) * binom(j + i, i) * x.powi(i as i32);
    }
    (2.0 * j as f64 + 1.0).sqrt() * sum
}

/// `∫₀ᶜ P_j` from the explicit coefficients.
pub fn legendre_explicit_integral(j: usize, c: f64) -> f64 {
    let binom = |n: usize, k: usize| -> f64 { (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
    let mut sum = 0.0;
    for i in 0..=j {
        let sign = (-1f64).powi((j + i) as i32);
        sum += sign * binom(j, i) * binom(j + i, i) * c.powi(i as i32 + 1) / (i + 1) as f64;
    }
    (2.0 * j as f64 + 1.0).sqrt() * sum
}

/// Adaptive Dormand–Prince 5(4) integration of `y' = f(y)` to `t_end`.
pub fn dopri5(f: impl Fn(&[f64]) -> Vec<f64>, y0: &[f64], t_end: f64, tol: f64) -> Vec<f64> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let m = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut h = 1e-3f64.min(t_end);
    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        for (i, row) in A.iter().enumerate() {
            let yi: Vec<f64> = (0..m)
                .map(|r| y[r] + h * (0..i).map(|j| row[j] * k[j][r]).sum::<f64>())
                .collect();
            k.push(f(&yi));
        }
        let y5: Vec<f64> = (0..m).map(|r| y[r] + h * (0..7).map(|j| B5[j] * k[j][r]).sum::<f64>()).collect();
        let err = (0..m)
            .map(|r| {
                let e = h * (0..7).map(|j| (B5[j] - B4[j]) * k[j][r]).sum::<f64>();
                e.abs() / (tol + tol * y[r].abs().max(y5[r].abs()))
            })
            .fold(0.0, f64::max);
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    y
}

/// Kepler right-hand side in the order `(q₁, q₂, p₁, p₂)`.
pub fn kepler_rhs(y: &[f64]) -> Vec<f64> {
    let r3 = (y[0] * y[0] + y[1] * y[1]).powf(1.5);
    vec![y[2], y[3], -y[0] / r3, -y[1] / r3]
}

/// Lotka–Volterra right-hand side for `(a, b, c, ν, μ) = (−2, −1, −0.5, 1, 2)`, written out.
pub fn lotka_volterra_rhs(y: &[f64]) -> Vec<f64> {
    let (a, b, c, nu, mu) = (-2.0, -1.0, -0.5, 1.0, 2.0);
    let (y1, y2, y3) = (y[0], y[1], y[2]);
    let g = [a * b, 1.0 + nu / y2, -a - mu / y3];
    vec![
        c * y1 * y2 * g[1] + b * c * y1 * y3 * g[2],
        -c * y1 * y2 * g[0] - y2 * y3 * g[2],
        -b * c * y1 * y3 * g[0] + y2 * y3 * g[1],
    ]
}
