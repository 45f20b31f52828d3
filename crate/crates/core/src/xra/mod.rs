//! Phaseless extended-Rytov model and its regularized inversion.
//!
//! Link `l = (m_t, m_r)` sees a power change
//! `ΔP_l = Re(Σ_n G_{l,n} χ_n)` with
//! `G_{l,n} = C0·k0²·Δa·g(r_mr, r_n)·E_i(r_n)/E_i(r_mr)`, `E_i = g(·, r_mt)`.
//! Splitting `χ` into real and imaginary parts gives the real system
//! `ΔP = [Re G, −Im G]·[Re χ; Im χ]`.

mod regularizer;
mod tikhonov;

use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

pub use regularizer::{diff_x, diff_y, penalty, RegularizerConfig, DEFAULT_ALPHA};
pub use tikhonov::{
    alpha_sweep, log_spaced, normal_matrix, precompute_pi, reconstruct, tikhonov_solve,
    PrecomputedInverse, SweepPoint,
};

use crate::error::{Error, Result};
use crate::geometry::{DoIGrid, SensorLayout};
use crate::greens::{green_at, COINCIDENT_TOL};
use crate::io::{read_f32_le, read_json, write_f32_le, write_json, Hasher};
use crate::physics::{PhysicsConfig, C0};

/// `𝒢 = [Re G, −Im G]`, `L × 2N`.
#[derive(Debug, Clone)]
pub struct XraModelMatrix {
    pub matrix: Mat<f64>,
    pub grid: DoIGrid,
    pub layout_hash: String,
    pub model_hash: String,
}

impl XraModelMatrix {
    pub fn links(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn unknowns(&self) -> usize {
        self.matrix.ncols()
    }

    /// `𝒢 x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.unknowns());
        let mut out = vec![0.0; self.links()];
        for (j, xj) in x.iter().enumerate() {
            if *xj == 0.0 {
                continue;
            }
            let col = self.matrix.col(j);
            for (o, g) in out.iter_mut().zip(col.iter()) {
                *o += g * xj;
            }
        }
        out
    }

    /// `𝒢ᵀ y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.links());
        (0..self.unknowns())
            .map(|j| self.matrix.col(j).iter().zip(y).map(|(g, v)| g * v).sum())
            .collect()
    }
}

pub fn assemble_xra(layout: &SensorLayout, grid: &DoIGrid, cfg: &PhysicsConfig) -> Result<XraModelMatrix> {
    let k = cfg.wavenumber();
    let centers = grid.centers();
    let n = centers.len();
    // g(node, cell) for every node
    let mut g_node = Vec::with_capacity(layout.node_count() * n);
    for p in &layout.nodes {
        for c in &centers {
            let d = p.dist(c);
            if d < COINCIDENT_TOL {
                return Err(Error::Singularity(format!(
                    "node ({}, {}) coincides with a cell center",
                    p.x, p.y
                )));
            }
            g_node.push(green_at(d, k));
        }
    }
    let scale = C0 * k * k * grid.cell_area();
    let mut matrix = Mat::<f64>::zeros(layout.link_count(), 2 * n);
    for (l, link) in layout.links.iter().enumerate() {
        let (tx, rx) = (layout.nodes[link.tx], layout.nodes[link.rx]);
        let direct = green_at(tx.dist(&rx), k);
        let g_tx = &g_node[link.tx * n..(link.tx + 1) * n];
        let g_rx = &g_node[link.rx * n..(link.rx + 1) * n];
        for j in 0..n {
            let entry = scale * g_rx[j] * g_tx[j] / direct;
            matrix[(l, j)] = entry.re;
            matrix[(l, n + j)] = -entry.im;
        }
    }
    let model_hash = Hasher::new()
        .str("xra-phaseless-v1")
        .str(&layout.hash())
        .str(&grid.hash())
        .f64(cfg.frequency_hz)
        .finish();
    Ok(XraModelMatrix {
        matrix,
        grid: grid.clone(),
        layout_hash: layout.hash(),
        model_hash,
    })
}

/// Reconstructed `Re χ` and `Im χ` images on the inverse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastPair {
    pub nx: usize,
    pub ny: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub model_hash: String,
    pub alpha: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ContrastHeader {
    nx: usize,
    ny: usize,
    channels: Vec<String>,
    files: Vec<String>,
    format: String,
    model_hash: String,
    alpha: f64,
}

pub const CHI_RE_FILE: &str = "chi_re.f32";
pub const CHI_IM_FILE: &str = "chi_im.f32";
pub const CONTRAST_HEADER_FILE: &str = "contrast.json";

impl ContrastPair {
    /// Splits a stacked `[re; im]` solution.
    pub fn from_stacked(x: &[f64], nx: usize, ny: usize, model_hash: &str, alpha: f64) -> Self {
        let n = nx * ny;
        assert_eq!(x.len(), 2 * n);
        Self {
            nx,
            ny,
            re: x[..n].to_vec(),
            im: x[n..].to_vec(),
            model_hash: model_hash.to_string(),
            alpha,
        }
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.re.iter().chain(&self.im).copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    /// Writes both channels as f32 little-endian row-major plus a JSON header.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_f32_le(&dir.join(CHI_RE_FILE), &self.re)?;
        write_f32_le(&dir.join(CHI_IM_FILE), &self.im)?;
        write_json(
            &dir.join(CONTRAST_HEADER_FILE),
            &ContrastHeader {
                nx: self.nx,
                ny: self.ny,
                channels: vec!["re".into(), "im".into()],
                files: vec![CHI_RE_FILE.into(), CHI_IM_FILE.into()],
                format: "f32le-rowmajor".into(),
                model_hash: self.model_hash.clone(),
                alpha: self.alpha,
            },
        )
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(CONTRAST_HEADER_FILE);
        let h: ContrastHeader = read_json(&path)?;
        let re = read_f32_le(&dir.join(CHI_RE_FILE))?;
        let im = read_f32_le(&dir.join(CHI_IM_FILE))?;
        for ch in [&re, &im] {
            if ch.len() != h.nx * h.ny {
                return Err(Error::Format {
                    path: path.clone(),
                    reason: format!("channel has {} values, expected {}×{}", ch.len(), h.nx, h.ny),
                });
            }
        }
        Ok(Self {
            nx: h.nx,
            ny: h.ny,
            re,
            im,
            model_hash: h.model_hash,
            alpha: h.alpha,
        })
    }
}
