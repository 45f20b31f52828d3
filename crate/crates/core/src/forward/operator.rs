//! Discretized volume-integral operator `(K x)_m = Σ_n K(r_m − r_n) x_n`.
//!
//! Each square cell is replaced by the disk of equal area (radius
//! `a = sqrt(Δa/π)`) and `k0² g` is integrated over that disk in closed form:
//!
//! * off-diagonal: `K(ρ) = (−jπ k a / 2) · J1(k a) · H0^(2)(k ρ)`
//! * self term:    `K(0) = (−jπ k a / 2) · H1^(2)(k a) − 1`
//!
//! On a uniform grid `K` is block-Toeplitz, so it is applied as a circular
//! convolution on a grid zero-padded to twice the size in each direction.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::geometry::DoIGrid;
use crate::special::{hankel2_0, low_order};

/// Disk-integrated kernel for one cell size and wavenumber.
#[derive(Debug, Clone, Copy)]
pub struct CellKernel {
    k: f64,
    off_factor: Complex64,
    self_term: Complex64,
}

impl CellKernel {
    pub fn new(k: f64, cell_area: f64) -> Self {
        let a = (cell_area / PI).sqrt();
        let [_, j1, _, y1] = low_order(k * a);
        let pre = Complex64::new(0.0, -0.5 * PI * k * a);
        Self {
            k,
            off_factor: pre * j1,
            self_term: pre * Complex64::new(j1, -y1) - 1.0,
        }
    }

    /// `rho == 0` selects the self term.
    pub fn at(&self, rho: f64) -> Complex64 {
        if rho == 0.0 {
            self.self_term
        } else {
            self.off_factor * hankel2_0(self.k * rho)
        }
    }
}

pub struct GreenOperator {
    nx: usize,
    ny: usize,
    px: usize,
    py: usize,
    kernel: CellKernel,
    dx: f64,
    dy: f64,
    /// Kernel by absolute offset, `ny` rows of `nx`.
    table: Vec<Complex64>,
    /// Spectrum of the padded kernel, stored transposed (`px` rows of `py`).
    spectrum_t: Vec<Complex64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GreenOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreenOperator")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .finish_non_exhaustive()
    }
}

fn transpose(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

fn run_rows(fft: &dyn Fft<f64>, data: &mut [Complex64], len: usize, scratch: &mut Vec<Complex64>) {
    scratch.resize(fft.get_inplace_scratch_len(), Complex64::default());
    for row in data.chunks_exact_mut(len) {
        fft.process_with_scratch(row, scratch);
    }
}

impl GreenOperator {
    pub fn new(grid: &DoIGrid, k: f64) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let (px, py) = (2 * nx, 2 * ny);
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(px);
        let row_inv = planner.plan_fft_inverse(px);
        let col_fwd = planner.plan_fft_forward(py);
        let col_inv = planner.plan_fft_inverse(py);
        let kernel = CellKernel::new(k, grid.cell_area());
        let (dx, dy) = (grid.cell_width(), grid.cell_height());

        let mut table = vec![Complex64::default(); nx * ny];
        for r in 0..ny {
            for c in 0..nx {
                table[r * nx + c] = kernel.at((r as f64 * dy).hypot(c as f64 * dx));
            }
        }
        let wrap = |i: usize, n: usize, p: usize| -> Option<usize> {
            if i < n {
                Some(i)
            } else if i > p - n {
                Some(p - i)
            } else {
                None
            }
        };
        let mut padded = vec![Complex64::default(); px * py];
        for r in 0..py {
            let Some(ar) = wrap(r, ny, py) else { continue };
            for c in 0..px {
                if let Some(ac) = wrap(c, nx, px) {
                    padded[r * px + c] = table[ar * nx + ac];
                }
            }
        }
        let mut scratch = Vec::new();
        run_rows(row_fwd.as_ref(), &mut padded, px, &mut scratch);
        let mut spectrum_t = vec![Complex64::default(); px * py];
        transpose(&padded, py, px, &mut spectrum_t);
        run_rows(col_fwd.as_ref(), &mut spectrum_t, py, &mut scratch);

        Self {
            nx,
            ny,
            px,
            py,
            kernel,
            dx,
            dy,
            table,
            spectrum_t,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kernel(&self) -> &CellKernel {
        &self.kernel
    }

    /// Kernel between cells offset by `(drow, dcol)`.
    pub fn entry(&self, drow: isize, dcol: isize) -> Complex64 {
        self.kernel
            .at((drow as f64 * self.dy).hypot(dcol as f64 * self.dx))
    }

    /// Same as [`entry`](Self::entry) but read from the precomputed table.
    pub fn entry_cached(&self, drow: isize, dcol: isize) -> Complex64 {
        self.table[drow.unsigned_abs() * self.nx + dcol.unsigned_abs()]
    }

    /// `out = K x` by FFT convolution.
    pub fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let (nx, ny, px, py) = (self.nx, self.ny, self.px, self.py);
        assert_eq!(x.len(), nx * ny);
        assert_eq!(out.len(), nx * ny);
        let mut scratch = Vec::new();
        let mut a = vec![Complex64::default(); ny * px];
        for r in 0..ny {
            a[r * px..r * px + nx].copy_from_slice(&x[r * nx..(r + 1) * nx]);
        }
        // rows ny..py are zero, so only the first ny rows need a row transform
        run_rows(self.row_fwd.as_ref(), &mut a, px, &mut scratch);
        let mut b = vec![Complex64::default(); px * py];
        for r in 0..ny {
            for c in 0..px {
                b[c * py + r] = a[r * px + c];
            }
        }
        run_rows(self.col_fwd.as_ref(), &mut b, py, &mut scratch);
        b.iter_mut()
            .zip(&self.spectrum_t)
            .for_each(|(v, s)| *v *= s);
        run_rows(self.col_inv.as_ref(), &mut b, py, &mut scratch);
        for r in 0..ny {
            for c in 0..px {
                a[r * px + c] = b[c * py + r];
            }
        }
        run_rows(self.row_inv.as_ref(), &mut a, px, &mut scratch);
        let scale = 1.0 / (px * py) as f64;
        for r in 0..ny {
            for c in 0..nx {
                out[r * nx + c] = a[r * px + c] * scale;
            }
        }
    }

    /// Lippmann–Schwinger system `out = x − K(χ ⊙ x)`.
    pub fn apply_system(&self, contrast: &[Complex64], x: &[Complex64], out: &mut [Complex64]) {
        let weighted: Vec<Complex64> = contrast.iter().zip(x).map(|(c, v)| c * v).collect();
        self.apply(&weighted, out);
        out.iter_mut().zip(x).for_each(|(o, v)| *o = v - *o);
    }

    /// Dense `N×N` kernel matrix, row-major. Only sensible for small grids.
    pub fn dense(&self) -> Vec<Complex64> {
        let n = self.len();
        let mut m = vec![Complex64::default(); n * n];
        for i in 0..n {
            let (ri, ci) = ((i / self.nx) as isize, (i % self.nx) as isize);
            for j in 0..n {
                let (rj, cj) = ((j / self.nx) as isize, (j % self.nx) as isize);
                m[i * n + j] = self.entry(ri - rj, ci - cj);
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::PhysicsConfig;
    use rand::{Rng, SeedableRng};

    fn random_vec(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    fn dense_apply(m: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|i| (0..n).map(|j| m[i * n + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn fft_matches_dense_on_small_grids() {
        let k = PhysicsConfig::default().wavenumber();
        for (nx, ny) in [(16, 16), (5, 9), (1, 4)] {
            let grid = DoIGrid::new(0.05 * nx as f64, 0.05 * ny as f64, nx, ny).unwrap();
            let op = GreenOperator::new(&grid, k);
            let x = random_vec(nx * ny, 7);
            let mut y = vec![Complex64::default(); nx * ny];
            op.apply(&x, &mut y);
            let expect = dense_apply(&op.dense(), &x);
            assert!(rel_err(&y, &expect) < 1e-12, "{nx}x{ny}");
            if nx > 1 && ny > 3 {
                assert_eq!(op.entry_cached(-3, 1), op.entry(-3, 1));
            }
        }
    }

    #[test]
    fn self_term_matches_disk_quadrature() {
        // k²·∫_disk g dA by radial quadrature of the log-singular integrand
        let k = 50.0;
        let area: f64 = 0.01 * 0.01;
        let a = (area / PI).sqrt();
        let kern = CellKernel::new(k, area);
        let n = 200_000;
        let h = a / n as f64;
        let mut s = Complex64::default();
        for i in 0..n {
            let rho = (i as f64 + 0.5) * h;
            s += crate::greens::green_at(rho, k) * rho;
        }
        let quad = k * k * 2.0 * PI * s * h;
        assert!((kern.at(0.0) - quad).norm() < 1e-6 * quad.norm().max(1e-3));
    }

    #[test]
    fn system_operator_is_identity_without_contrast() {
        let grid = DoIGrid::square(0.4, 8).unwrap();
        let op = GreenOperator::new(&grid, 50.0);
        let x = random_vec(64, 3);
        let mut y = vec![Complex64::default(); 64];
        op.apply_system(&vec![Complex64::default(); 64], &x, &mut y);
        assert_eq!(x, y);
    }
}
