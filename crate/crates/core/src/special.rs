//! Integer-order Bessel and Hankel functions.
//!
//! Real arguments below [`ASYMPTOTIC_MIN_ARG`] use Miller's backward
//! recurrence for `J_n` and Neumann series built from those values for `Y_0`,
//! `Y_1`; larger arguments use the Hankel asymptotic expansion. Higher-order
//! `Y_n` come from forward recurrence, which is stable for `Y`.

use std::f64::consts::PI;

use num_complex::Complex64;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const ASYMPTOTIC_MIN_ARG: f64 = 25.0;
const RESCALE: f64 = 1e250;

/// Starting order for Miller's recurrence that leaves `J_0..=J_nmax` accurate
/// to rounding.
fn miller_start(nmax: usize, x: f64) -> usize {
    let m = (nmax as f64).max(x);
    let n = (m + 30.0 + 12.0 * m.cbrt()).ceil() as usize;
    n + (n & 1)
}

/// Unnormalized backward recurrence from `top`; returns `J_0..=J_top` up to a
/// common factor.
fn backward_real(x: f64, top: usize) -> Vec<f64> {
    let mut j = vec![0.0; top + 2];
    j[top] = 1e-30;
    for k in (1..=top).rev() {
        j[k - 1] = (2.0 * k as f64 / x) * j[k] - j[k + 1];
        if j[k - 1].abs() > RESCALE {
            j[k - 1..].iter_mut().for_each(|v| *v /= RESCALE);
        }
    }
    j.truncate(top + 1);
    j
}

/// `J_0..=J_top` normalized with `J_0 + 2 Σ J_2k = 1`.
fn miller_real(x: f64, top: usize) -> Vec<f64> {
    let mut j = backward_real(x, top);
    let sum = j[0] + 2.0 * j.iter().skip(2).step_by(2).sum::<f64>();
    j.iter_mut().for_each(|v| *v /= sum);
    j
}

/// `[J0, J1, Y0, Y1]` for `0 < x < ASYMPTOTIC_MIN_ARG`.
fn low_order_series(x: f64) -> [f64; 4] {
    let j = miller_real(x, miller_start(1, x));
    let log_term = (0.5 * x).ln() + EULER_GAMMA;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut sign = -1.0;
    let mut k = 1;
    while 2 * k + 1 < j.len() {
        let kf = k as f64;
        s0 += sign * j[2 * k] / kf;
        s1 += sign * (j[2 * k - 1] - j[2 * k + 1]) / kf;
        sign = -sign;
        k += 1;
    }
    let y0 = 2.0 / PI * log_term * j[0] - 4.0 / PI * s0;
    let y1 = -2.0 / (PI * x) * j[0] + 2.0 / PI * log_term * j[1] + 2.0 / PI * s1;
    [j[0], j[1], y0, y1]
}

/// Hankel asymptotic expansion `(J_ν, Y_ν)` for large `x`.
fn asymptotic(order: u32, x: f64) -> (f64, f64) {
    let mu = 4.0 * (order as f64).powi(2);
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0_f64;
    let mut k = 1;
    loop {
        let odd = (2 * k - 1) as f64;
        let next = term * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() >= term.abs() || next.abs() < 1e-17 {
            break;
        }
        term = next;
        // term_k enters Q for odd k, P for even k, with sign (-1)^floor(k/2)
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 1 {
            q += sign * term;
        } else {
            p += sign * term;
        }
        k += 1;
    }
    let chi = x - (0.5 * order as f64 + 0.25) * PI;
    let (s, c) = chi.sin_cos();
    let amp = (2.0 / (PI * x)).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// `[J0, J1, Y0, Y1]` at `x > 0`.
pub fn low_order(x: f64) -> [f64; 4] {
    debug_assert!(x > 0.0);
    if x < ASYMPTOTIC_MIN_ARG {
        low_order_series(x)
    } else {
        let (j0, y0) = asymptotic(0, x);
        let (j1, y1) = asymptotic(1, x);
        [j0, j1, y0, y1]
    }
}

/// `H_0^(2)(x) = J_0(x) − j·Y_0(x)`.
pub fn hankel2_0(x: f64) -> Complex64 {
    let [j0, _, y0, _] = low_order(x);
    Complex64::new(j0, -y0)
}

/// `H_1^(2)(x) = J_1(x) − j·Y_1(x)`.
pub fn hankel2_1(x: f64) -> Complex64 {
    let [_, j1, _, y1] = low_order(x);
    Complex64::new(j1, -y1)
}

/// `J_0(x) ..= J_nmax(x)` for `x ≥ 0`.
pub fn bessel_j_seq(nmax: usize, x: f64) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; nmax + 1];
        out[0] = 1.0;
        return out;
    }
    let mut j = miller_real(x, miller_start(nmax, x));
    j.truncate(nmax + 1);
    j
}

/// `Y_0(x) ..= Y_nmax(x)` for `x > 0`.
pub fn bessel_y_seq(nmax: usize, x: f64) -> Vec<f64> {
    let [_, _, y0, y1] = low_order(x);
    let mut y = Vec::with_capacity(nmax + 1);
    y.push(y0);
    if nmax >= 1 {
        y.push(y1);
    }
    for k in 1..nmax {
        let next = (2.0 * k as f64 / x) * y[k] - y[k - 1];
        y.push(next);
    }
    y
}

/// `H_0^(2)(x) ..= H_nmax^(2)(x)` for `x > 0`.
pub fn hankel2_seq(nmax: usize, x: f64) -> Vec<Complex64> {
    bessel_j_seq(nmax, x)
        .into_iter()
        .zip(bessel_y_seq(nmax, x))
        .map(|(j, y)| Complex64::new(j, -y))
        .collect()
}

pub fn bessel_j(n: usize, x: f64) -> f64 {
    bessel_j_seq(n, x)[n]
}

pub fn bessel_y(n: usize, x: f64) -> f64 {
    bessel_y_seq(n, x)[n]
}

pub fn hankel2(n: usize, x: f64) -> Complex64 {
    Complex64::new(bessel_j(n, x), -bessel_y(n, x))
}

/// `J_0(z) ..= J_nmax(z)` for complex `z`, by backward recurrence normalized
/// with the generating-function identity `e^{∓jz} = J_0 + 2 Σ (∓j)^k J_k`
/// (sign chosen so the reference value does not underflow).
pub fn bessel_j_seq_complex(nmax: usize, z: Complex64) -> Vec<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    if z.norm() == 0.0 {
        let mut out = vec![zero; nmax + 1];
        out[0] = Complex64::new(1.0, 0.0);
        return out;
    }
    let top = miller_start(nmax, z.norm() + z.im.abs());
    let mut j = vec![zero; top + 2];
    j[top] = Complex64::new(1e-30, 0.0);
    for k in (1..=top).rev() {
        j[k - 1] = (2.0 * k as f64 / z) * j[k] - j[k + 1];
        if j[k - 1].norm() > RESCALE {
            j[k - 1..].iter_mut().for_each(|v| *v /= RESCALE);
        }
    }
    let unit = if z.im >= 0.0 {
        Complex64::new(0.0, -1.0)
    } else {
        Complex64::new(0.0, 1.0)
    };
    let mut sum = j[0];
    let mut w = Complex64::new(1.0, 0.0);
    for v in &j[1..=top] {
        w *= unit;
        sum += 2.0 * w * v;
    }
    let target = (unit * z).exp();
    // divide by the modulus first: Complex division squares the divisor
    let m = sum.norm();
    let scale = (target / m) / (sum / m);
    j.truncate(nmax + 1);
    j.iter_mut().for_each(|v| *v *= scale);
    j
}

/// Derivatives from a value sequence: `C_n' = C_{n−1} − (n/z) C_n`, `C_0' = −C_1`.
/// The returned vector is one shorter than the input.
pub fn derivative_seq<T>(values: &[T], z: T) -> Vec<T>
where
    T: Copy
        + std::ops::Sub<Output = T>
        + std::ops::Mul<Output = T>
        + std::ops::Div<Output = T>
        + std::ops::Neg<Output = T>
        + From<f64>,
{
    let mut out = Vec::with_capacity(values.len().saturating_sub(1));
    if values.len() < 2 {
        return out;
    }
    out.push(-values[1]);
    for n in 1..values.len() - 1 {
        out.push(values[n - 1] - T::from(n as f64) / z * values[n]);
    }
    out
}
