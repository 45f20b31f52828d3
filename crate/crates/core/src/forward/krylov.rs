//! Stabilized bi-conjugate gradients for complex non-Hermitian systems given
//! only a mat-vec: classic BiCGSTAB and the BiCGSTAB(ℓ) variant of Sleijpen and
//! Fokkema, whose degree-ℓ minimal-residual step copes with the near-imaginary
//! eigenvalues that stall the classic method on high-contrast scenes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrylovSettings {
    /// Stop when `‖b − A x‖ / ‖b‖` falls below this.
    pub tolerance: f64,
    /// Mat-vec budget.
    pub max_iterations: usize,
    /// Degree of the minimal-residual polynomial; 1 is classic BiCGSTAB.
    pub ell: usize,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 20_000,
            ell: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovReport {
    /// Mat-vecs spent.
    pub iterations: usize,
    /// True relative residual, recomputed from `x` at exit.
    pub residual: f64,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn residual(apply: MatVec, b: &[Complex64], x: &[Complex64], r: &mut [Complex64]) {
    apply(x, r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
}

/// Solves `A x = b` starting from the contents of `x`.
pub fn bicgstab(
    apply: impl Fn(&[Complex64], &mut [Complex64]),
    b: &[Complex64],
    x: &mut [Complex64],
    settings: &KrylovSettings,
) -> Result<KrylovReport> {
    let count = std::cell::Cell::new(0usize);
    let counted = |v: &[Complex64], out: &mut [Complex64]| {
        count.set(count.get() + 1);
        apply(v, out)
    };
    let out = if settings.ell <= 1 {
        classic(&counted, b, x, settings, &count)
    } else {
        bicgstab_l(&counted, b, x, settings, &count)
    };
    out.map(|residual| KrylovReport { iterations: count.get(), residual })
}

type MatVec<'a> = &'a dyn Fn(&[Complex64], &mut [Complex64]);

fn classic(
    apply: MatVec,
    b: &[Complex64],
    x: &mut [Complex64],
    settings: &KrylovSettings,
    count: &std::cell::Cell<usize>,
) -> Result<f64> {
    let n = b.len();
    assert_eq!(x.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(Complex64::default());
        return Ok(0.0);
    }
    let tol = settings.tolerance;
    let zero = Complex64::default();
    let mut r = vec![zero; n];
    residual(apply, b, x, &mut r);
    let mut res = norm(&r) / bnorm;
    if res <= tol {
        return Ok(res);
    }
    let mut r_hat = r.clone();
    let mut p = vec![zero; n];
    let mut v = vec![zero; n];
    let mut s = vec![zero; n];
    let mut t = vec![zero; n];
    let (mut rho_prev, mut alpha, mut omega) = (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));

    while count.get() < settings.max_iterations {
        let mut rho = dot(&r_hat, &r);
        if rho.norm() <= 1e-30 * norm(&r_hat) * norm(&r) {
            // shadow residual went orthogonal; restart from the current residual
            r_hat.copy_from_slice(&r);
            rho = dot(&r_hat, &r);
            p.fill(zero);
            v.fill(zero);
            rho_prev = Complex64::new(1.0, 0.0);
            alpha = Complex64::new(1.0, 0.0);
            omega = Complex64::new(1.0, 0.0);
        }
        let beta = (rho / rho_prev) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        apply(&p, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= tol {
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
            residual(apply, b, x, &mut r);
            res = norm(&r) / bnorm;
            if res <= tol {
                return Ok(res);
            }
            r_hat.copy_from_slice(&r);
            rho_prev = dot(&r_hat, &r);
            p.fill(zero);
            v.fill(zero);
            omega = Complex64::new(1.0, 0.0);
            alpha = Complex64::new(1.0, 0.0);
            continue;
        }
        apply(&s, &mut t);
        let tt = dot(&t, &t);
        omega = if tt.norm() > 0.0 { dot(&t, &s) / tt } else { zero };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / bnorm;
        if !res.is_finite() {
            break;
        }
        if res <= tol {
            // recursive residual can drift from the true one
            residual(apply, b, x, &mut r);
            res = norm(&r) / bnorm;
            if res <= tol {
                return Ok(res);
            }
            r_hat.copy_from_slice(&r);
            rho_prev = dot(&r_hat, &r);
            p.fill(zero);
            v.fill(zero);
            omega = Complex64::new(1.0, 0.0);
            alpha = Complex64::new(1.0, 0.0);
            continue;
        }
        if omega == zero {
            break;
        }
        rho_prev = rho;
    }
    residual(apply, b, x, &mut r);
    Err(Error::NotConverged {
        iterations: count.get(),
        residual: norm(&r) / bnorm,
    })
}

fn axpy(y: &mut [Complex64], a: Complex64, x: &[Complex64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn bicgstab_l(
    apply: MatVec,
    b: &[Complex64],
    x: &mut [Complex64],
    settings: &KrylovSettings,
    count: &std::cell::Cell<usize>,
) -> Result<f64> {
    let n = b.len();
    assert_eq!(x.len(), n);
    let ell = settings.ell;
    let tol = settings.tolerance;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(Complex64::default());
        return Ok(0.0);
    }
    let zero = Complex64::default();
    let one = Complex64::new(1.0, 0.0);
    let mut r = vec![vec![zero; n]; ell + 1];
    let mut u = vec![vec![zero; n]; ell + 1];
    residual(apply, b, x, &mut r[0]);
    let mut res = norm(&r[0]) / bnorm;
    if res <= tol {
        return Ok(res);
    }
    let mut r_hat = r[0].clone();
    let (mut rho0, mut alpha, mut omega) = (one, zero, one);
    let mut tau = vec![vec![zero; ell + 1]; ell + 1];
    let mut sigma = vec![0.0; ell + 1];
    let (mut g, mut g1, mut g2) = (vec![zero; ell + 1], vec![zero; ell + 1], vec![zero; ell + 1]);
    let mut tmp = vec![zero; n];

    let restart = |r: &mut Vec<Vec<Complex64>>, u: &mut Vec<Vec<Complex64>>, r_hat: &mut Vec<Complex64>, x: &[Complex64]| {
        residual(apply, b, x, &mut r[0]);
        r_hat.copy_from_slice(&r[0]);
        u.iter_mut().for_each(|v| v.fill(zero));
    };

    while count.get() < settings.max_iterations {
        rho0 = -omega * rho0;
        let mut breakdown = false;
        // BiCG part
        for j in 0..ell {
            let rho1 = dot(&r_hat, &r[j]);
            if rho0.norm() == 0.0 || rho1.norm() <= 1e-30 * norm(&r_hat) * norm(&r[j]) {
                breakdown = true;
                break;
            }
            let beta = alpha * (rho1 / rho0);
            rho0 = rho1;
            for i in 0..=j {
                for k in 0..n {
                    u[i][k] = r[i][k] - beta * u[i][k];
                }
            }
            apply(&u[j], &mut tmp);
            u[j + 1].copy_from_slice(&tmp);
            let gamma = dot(&r_hat, &u[j + 1]);
            if gamma.norm() == 0.0 {
                breakdown = true;
                break;
            }
            alpha = rho0 / gamma;
            for i in 0..=j {
                let (ri, ui) = (&mut r[i], &u[i + 1]);
                axpy(ri, -alpha, ui);
            }
            apply(&r[j], &mut tmp);
            r[j + 1].copy_from_slice(&tmp);
            axpy(x, alpha, &u[0]);
        }
        if breakdown {
            restart(&mut r, &mut u, &mut r_hat, x);
            rho0 = one;
            alpha = zero;
            omega = one;
            continue;
        }
        // minimal-residual part, modified Gram–Schmidt on r[1..=ell]
        for j in 1..=ell {
            for i in 1..j {
                tau[i][j] = dot(&r[i], &r[j]) / sigma[i];
                let t = tau[i][j];
                let (head, tail) = r.split_at_mut(j);
                axpy(&mut tail[0], -t, &head[i]);
            }
            sigma[j] = dot(&r[j], &r[j]).re;
            g1[j] = if sigma[j] > 0.0 { dot(&r[j], &r[0]) / sigma[j] } else { zero };
        }
        g[ell] = g1[ell];
        omega = g[ell];
        for j in (1..ell).rev() {
            let mut acc = g1[j];
            for i in j + 1..=ell {
                acc -= tau[j][i] * g[i];
            }
            g[j] = acc;
        }
        for j in 1..ell {
            let mut acc = g[j + 1];
            for i in j + 1..ell {
                acc += tau[j][i] * g[i + 1];
            }
            g2[j] = acc;
        }
        axpy(x, g[1], &r[0].clone());
        {
            let (head, tail) = r.split_at_mut(1);
            axpy(&mut head[0], -g1[ell], &tail[ell - 1]);
        }
        {
            let (head, tail) = u.split_at_mut(1);
            axpy(&mut head[0], -g[ell], &tail[ell - 1]);
        }
        for j in 1..ell {
            {
                let (head, tail) = u.split_at_mut(1);
                axpy(&mut head[0], -g[j], &tail[j - 1]);
            }
            axpy(x, g2[j], &r[j]);
            let (head, tail) = r.split_at_mut(1);
            axpy(&mut head[0], -g1[j], &tail[j - 1]);
        }
        res = norm(&r[0]) / bnorm;
        if !res.is_finite() {
            break;
        }
        if res <= tol {
            // recursive residual can drift from the true one
            residual(apply, b, x, &mut r[0]);
            res = norm(&r[0]) / bnorm;
            if res <= tol {
                return Ok(res);
            }
            r_hat.copy_from_slice(&r[0]);
            u.iter_mut().for_each(|v| v.fill(zero));
            rho0 = one;
            alpha = zero;
            omega = one;
        }
        if omega == zero {
            restart(&mut r, &mut u, &mut r_hat, x);
            rho0 = one;
            alpha = zero;
            omega = one;
        }
    }
    residual(apply, b, x, &mut r[0]);
    Err(Error::NotConverged {
        iterations: count.get(),
        residual: norm(&r[0]) / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn dense(m: &[Complex64], n: usize) -> impl Fn(&[Complex64], &mut [Complex64]) + '_ {
        move |x, y| {
            for i in 0..n {
                y[i] = (0..n).map(|j| m[i * n + j] * x[j]).sum();
            }
        }
    }

    fn random_system(n: usize, seed: u64, shift: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut c = || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut m: Vec<Complex64> = (0..n * n).map(|_| c() / (n as f64).sqrt()).collect();
        for i in 0..n {
            m[i * n + i] += shift;
        }
        let b = (0..n).map(|_| c()).collect();
        (m, b)
    }

    #[test]
    fn solves_random_system() {
        let n = 60;
        let (m, b) = random_system(n, 11, 3.0);
        for ell in [1, 2, 4, 8] {
            let mut x = vec![Complex64::default(); n];
            let settings = KrylovSettings { ell, ..Default::default() };
            let rep = bicgstab(dense(&m, n), &b, &mut x, &settings).unwrap();
            assert!(rep.residual <= 1e-8);
            let mut ax = vec![Complex64::default(); n];
            dense(&m, n)(&x, &mut ax);
            let err: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(err <= 1e-8 * norm(&b), "ell = {ell}");
        }
    }

    #[test]
    fn handles_imaginary_spectrum() {
        // eigenvalues spread along the imaginary axis, where the degree-1 step stalls
        let n = 80;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut m = vec![Complex64::default(); n * n];
        for i in 0..n {
            m[i * n + i] = Complex64::new(0.05, 4.0 * (i as f64 / n as f64 - 0.5));
        }
        for v in m.iter_mut() {
            *v += Complex64::new(rng.random_range(-1.0..1.0), 0.0) * 0.02;
        }
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0, i as f64 * 0.01)).collect();
        let mut x = vec![Complex64::default(); n];
        let rep = bicgstab(dense(&m, n), &b, &mut x, &KrylovSettings::default()).unwrap();
        assert!(rep.residual <= 1e-8);
    }

    #[test]
    fn zero_rhs() {
        let (m, _) = random_system(5, 1, 2.0);
        let mut x = vec![Complex64::new(1.0, 1.0); 5];
        let rep = bicgstab(dense(&m, 5), &[Complex64::default(); 5], &mut x, &KrylovSettings::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(x.iter().all(|v| *v == Complex64::default()));
    }

    #[test]
    fn reports_non_convergence() {
        let n = 40;
        let (m, b) = random_system(n, 5, 0.0);
        let mut x = vec![Complex64::default(); n];
        for ell in [1, 4] {
            let settings = KrylovSettings { tolerance: 1e-14, max_iterations: 3, ell };
            let err = bicgstab(dense(&m, n), &b, &mut x, &settings).unwrap_err();
            assert!(matches!(err, Error::NotConverged { .. }));
        }
    }
}
