//! H1 (gradient) penalty: forward differences between horizontally and
//! vertically adjacent cells, applied to each channel separately. Cells on the
//! DoI border have no neighbour outside it, so constant images cost nothing.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub alpha: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA }
    }
}

impl RegularizerConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "regularization weight must be positive, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    /// Unregularized least squares; only solvable when `𝒢` has full column rank.
    pub fn least_squares() -> Self {
        Self { alpha: 0.0 }
    }
}

/// `img[r, c+1] − img[r, c]`, `ny·(nx−1)` values.
pub fn diff_x(img: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    assert_eq!(img.len(), nx * ny);
    let mut out = Vec::with_capacity(ny * nx.saturating_sub(1));
    for r in 0..ny {
        for c in 0..nx.saturating_sub(1) {
            out.push(img[r * nx + c + 1] - img[r * nx + c]);
        }
    }
    out
}

/// `img[r+1, c] − img[r, c]`, `(ny−1)·nx` values.
pub fn diff_y(img: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    assert_eq!(img.len(), nx * ny);
    let mut out = Vec::with_capacity(ny.saturating_sub(1) * nx);
    for r in 0..ny.saturating_sub(1) {
        for c in 0..nx {
            out.push(img[(r + 1) * nx + c] - img[r * nx + c]);
        }
    }
    out
}

/// `‖Qχ‖²` for a stacked `[re; im]` vector.
pub fn penalty(chi: &[f64], nx: usize, ny: usize) -> f64 {
    let n = nx * ny;
    assert_eq!(chi.len(), 2 * n);
    chi.chunks_exact(n)
        .map(|ch| {
            diff_x(ch, nx, ny).iter().map(|d| d * d).sum::<f64>()
                + diff_y(ch, nx, ny).iter().map(|d| d * d).sum::<f64>()
        })
        .sum()
}

/// Adds `α·(D_Xᵀ D_X + D_Yᵀ D_Y)` to both diagonal `N×N` blocks of `a`.
pub(crate) fn add_penalty(a: &mut Mat<f64>, nx: usize, ny: usize, alpha: f64) {
    let n = nx * ny;
    let mut pair = |i: usize, j: usize| {
        for off in [0, n] {
            a[(off + i, off + i)] += alpha;
            a[(off + j, off + j)] += alpha;
            a[(off + i, off + j)] -= alpha;
            a[(off + j, off + i)] -= alpha;
        }
    };
    for r in 0..ny {
        for c in 0..nx {
            let i = r * nx + c;
            if c + 1 < nx {
                pair(i, i + 1);
            }
            if r + 1 < ny {
                pair(i, i + nx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_free() {
        let img = vec![3.25; 12];
        assert!(diff_x(&img, 4, 3).iter().all(|d| *d == 0.0));
        assert!(diff_y(&img, 4, 3).iter().all(|d| *d == 0.0));
        assert_eq!(diff_x(&img, 4, 3).len(), 9);
        assert_eq!(diff_y(&img, 4, 3).len(), 8);
    }

    #[test]
    fn penalty_matrix_matches_differences() {
        let (nx, ny) = (4, 3);
        let n = nx * ny;
        let mut a = Mat::<f64>::zeros(2 * n, 2 * n);
        add_penalty(&mut a, nx, ny, 1.0);
        let x: Vec<f64> = (0..2 * n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mut quad = 0.0;
        for i in 0..2 * n {
            for j in 0..2 * n {
                quad += x[i] * a[(i, j)] * x[j];
            }
        }
        assert!((quad - penalty(&x, nx, ny)).abs() < 1e-12 * quad);
        // channels are not coupled
        for i in 0..n {
            for j in n..2 * n {
                assert_eq!(a[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn alpha_must_be_positive() {
        assert!(RegularizerConfig::new(0.0).is_err());
        assert!(RegularizerConfig::new(-1.0).is_err());
        assert!(RegularizerConfig::new(f64::NAN).is_err());
        assert_eq!(RegularizerConfig::default().alpha, 10.0);
    }
}
