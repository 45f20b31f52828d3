//! Closed-form H1-Tikhonov inversion and the precomputed inverse `Π`.
//!
//! The minimizer of `½‖𝒢χ − P‖² + (α/2)‖Qχ‖²` solves
//! `(𝒢ᵀ𝒢 + α QᵀQ) χ = 𝒢ᵀ P`, so `χ = Π P` with `Π = (𝒢ᵀ𝒢 + α QᵀQ)⁻¹ 𝒢ᵀ`.

use std::path::Path;

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use super::regularizer::{add_penalty, penalty};
use super::{ContrastPair, RegularizerConfig, XraModelMatrix};
use crate::error::{Error, Result};
use crate::forward::{MeasurementKind, MeasurementSet};
use crate::io::{read_f64_le, read_json, sha256_hex, write_atomic, write_json, f64_le_bytes};

/// Eigenvalue-based condition estimates are skipped above this size.
const CONDITION_ESTIMATE_LIMIT: usize = 2048;

/// `𝒢ᵀ𝒢 + α·(D_Xᵀ D_X + D_Yᵀ D_Y)` on both channels.
pub fn normal_matrix(model: &XraModelMatrix, reg: &RegularizerConfig) -> Mat<f64> {
    let mut a = model.matrix.transpose() * &model.matrix;
    add_penalty(&mut a, model.grid.nx, model.grid.ny, reg.alpha);
    a
}

fn factor(a: &Mat<f64>) -> Result<Llt<f64>> {
    a.llt(Side::Lower).map_err(|e| {
        let condition = if a.nrows() <= CONDITION_ESTIMATE_LIMIT {
            a.self_adjoint_eigenvalues(Side::Lower)
                .ok()
                .and_then(|ev| {
                    let max = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    let min = ev.iter().fold(f64::INFINITY, |m, v| m.min(*v));
                    (min > 0.0).then(|| max / min)
                })
                .unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        Error::Factorization {
            reason: format!("regularized normal matrix is not positive definite: {e:?}"),
            condition,
        }
    })
}

fn check_measurement(p: &MeasurementSet, layout_hash: &str, links: usize) -> Result<()> {
    if p.kind != MeasurementKind::BackgroundDifferenced {
        return Err(Error::KindMismatch(format!(
            "inversion needs a background-differenced measurement, got {:?}",
            p.kind
        )));
    }
    if p.layout_hash != layout_hash {
        return Err(Error::LayoutMismatch {
            expected: layout_hash.to_string(),
            found: p.layout_hash.clone(),
        });
    }
    if p.values.len() != links {
        return Err(Error::DimensionMismatch {
            expected: links,
            found: p.values.len(),
        });
    }
    Ok(())
}

fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn tikhonov_solve(
    model: &XraModelMatrix,
    reg: &RegularizerConfig,
    p: &MeasurementSet,
) -> Result<ContrastPair> {
    check_measurement(p, &model.layout_hash, model.links())?;
    let a = normal_matrix(model, reg);
    let llt = factor(&a)?;
    let b = column(&model.apply_transpose(&p.values));
    let mut x = llt.solve(&b);
    // one step of iterative refinement
    let r = &b - &a * &x;
    x += llt.solve(&r);
    let x: Vec<f64> = x.col(0).iter().copied().collect();
    Ok(ContrastPair::from_stacked(&x, model.grid.nx, model.grid.ny, &model.model_hash, reg.alpha))
}

/// `Π`, `2N × L`, with the provenance needed to reject stale use.
#[derive(Debug, Clone)]
pub struct PrecomputedInverse {
    pub pi: Mat<f64>,
    pub nx: usize,
    pub ny: usize,
    pub alpha: f64,
    pub model_hash: String,
    pub layout_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PiHeader {
    rows: usize,
    cols: usize,
    nx: usize,
    ny: usize,
    alpha: f64,
    model_hash: String,
    layout_hash: String,
    data_file: String,
    layout: String,
    data_sha256: String,
}

pub fn precompute_pi(model: &XraModelMatrix, reg: &RegularizerConfig) -> Result<PrecomputedInverse> {
    let llt = factor(&normal_matrix(model, reg))?;
    let pi = llt.solve(model.matrix.transpose().to_owned());
    Ok(PrecomputedInverse {
        pi,
        nx: model.grid.nx,
        ny: model.grid.ny,
        alpha: reg.alpha,
        model_hash: model.model_hash.clone(),
        layout_hash: model.layout_hash.clone(),
    })
}

impl PrecomputedInverse {
    /// `Π p`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.pi.ncols());
        let mut out = vec![0.0; self.pi.nrows()];
        for (j, pj) in p.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.pi.col(j).iter()) {
                *o += v * pj;
            }
        }
        out
    }

    /// Writes `<stem>.f64` (row-major `2N × L`) and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let (rows, cols) = (self.pi.nrows(), self.pi.ncols());
        let mut flat = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            flat.extend((0..cols).map(|j| self.pi[(i, j)]));
        }
        let bytes = f64_le_bytes(&flat);
        let data_file = format!("{stem}.f64");
        write_atomic(&dir.join(&data_file), &bytes)?;
        write_json(
            &dir.join(format!("{stem}.json")),
            &PiHeader {
                rows,
                cols,
                nx: self.nx,
                ny: self.ny,
                alpha: self.alpha,
                model_hash: self.model_hash.clone(),
                layout_hash: self.layout_hash.clone(),
                data_file,
                layout: "row-major f64le".into(),
                data_sha256: sha256_hex(&bytes),
            },
        )
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let header_path = dir.join(format!("{stem}.json"));
        let h: PiHeader = read_json(&header_path)?;
        let data_path = dir.join(&h.data_file);
        let flat = read_f64_le(&data_path)?;
        let bad = |reason: String| Error::Format {
            path: data_path.clone(),
            reason,
        };
        if flat.len() != h.rows * h.cols || h.rows != 2 * h.nx * h.ny {
            return Err(bad(format!("expected {}×{} values, found {}", h.rows, h.cols, flat.len())));
        }
        if sha256_hex(&f64_le_bytes(&flat)) != h.data_sha256 {
            return Err(bad("checksum mismatch".into()));
        }
        Ok(Self {
            pi: Mat::from_fn(h.rows, h.cols, |i, j| flat[i * h.cols + j]),
            nx: h.nx,
            ny: h.ny,
            alpha: h.alpha,
            model_hash: h.model_hash,
            layout_hash: h.layout_hash,
        })
    }

    /// Errors unless this `Π` was built for `model` with weight `alpha`.
    pub fn check_provenance(&self, model_hash: &str, alpha: f64) -> Result<()> {
        if self.model_hash != model_hash || self.alpha != alpha {
            return Err(Error::StaleInverse {
                expected: format!("{model_hash} (α = {alpha})"),
                found: format!("{} (α = {})", self.model_hash, self.alpha),
            });
        }
        Ok(())
    }
}

/// `χ = Π P`.
pub fn reconstruct(p: &MeasurementSet, pi: &PrecomputedInverse) -> Result<ContrastPair> {
    if p.layout_hash != pi.layout_hash {
        return Err(Error::StaleInverse {
            expected: p.layout_hash.clone(),
            found: pi.layout_hash.clone(),
        });
    }
    check_measurement(p, &pi.layout_hash, pi.pi.ncols())?;
    let x = pi.apply(&p.values);
    Ok(ContrastPair::from_stacked(&x, pi.nx, pi.ny, &pi.model_hash, pi.alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    /// `‖𝒢χ − P‖`
    pub residual: f64,
    /// `‖Qχ‖`
    pub penalty: f64,
}

/// `count` weights spaced evenly in log between `lo` and `hi`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

/// L-curve data: residual and penalty norms of the solution for each weight.
pub fn alpha_sweep(model: &XraModelMatrix, p: &MeasurementSet, alphas: &[f64]) -> Result<Vec<SweepPoint>> {
    check_measurement(p, &model.layout_hash, model.links())?;
    let gram = model.matrix.transpose() * &model.matrix;
    let rhs = column(&model.apply_transpose(&p.values));
    let (nx, ny) = (model.grid.nx, model.grid.ny);
    alphas
        .iter()
        .map(|&alpha| {
            let reg = RegularizerConfig::new(alpha)?;
            let mut a = gram.clone();
            add_penalty(&mut a, nx, ny, reg.alpha);
            let x = factor(&a)?.solve(&rhs);
            let x: Vec<f64> = x.col(0).iter().copied().collect();
            let r = model.apply(&x);
            let residual = r.iter().zip(&p.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            Ok(SweepPoint {
                alpha,
                residual,
                penalty: penalty(&x, nx, ny).sqrt(),
            })
        })
        .collect()
}
