//! Per-link received power in dB and its on-disk form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PermittivityMap, ScatteringProblem, SolverSettings};
use crate::error::{Error, Result};
use crate::geometry::SensorLayout;
use crate::io::{read_f64_le, read_json, write_atomic, write_f64_le, write_json};
use crate::physics::PhysicsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementKind {
    AbsolutePower,
    BackgroundDifferenced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub values: Vec<f64>,
    pub kind: MeasurementKind,
    pub layout_hash: String,
    /// Acquisition label, e.g. `t0` for the empty room and `t0+dt` with the object.
    pub label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    layout_hash: String,
    kind: MeasurementKind,
    units: String,
    label: String,
    count: usize,
    data_file: String,
}

impl MeasurementSet {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `<stem>.json` and the `<stem>.f64` sidecar into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let data_file = format!("{stem}.f64");
        write_f64_le(&dir.join(&data_file), &self.values)?;
        let manifest = Manifest {
            layout_hash: self.layout_hash.clone(),
            kind: self.kind,
            units: "dB".into(),
            label: self.label.clone(),
            count: self.values.len(),
            data_file,
        };
        let path = dir.join(format!("{stem}.json"));
        write_json(&path, &manifest)?;
        Ok(path)
    }

    pub fn read(manifest_path: &Path) -> Result<Self> {
        let m: Manifest = read_json(manifest_path)?;
        let format_err = |reason: String| Error::Format {
            path: manifest_path.to_path_buf(),
            reason,
        };
        if m.units != "dB" {
            return Err(format_err(format!("unsupported units {:?}", m.units)));
        }
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let values = read_f64_le(&dir.join(&m.data_file))?;
        if values.len() != m.count {
            return Err(format_err(format!("expected {} values, found {}", m.count, values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(format_err("non-finite value".into()));
        }
        Ok(Self {
            values,
            kind: m.kind,
            layout_hash: m.layout_hash,
            label: m.label,
        })
    }

    pub fn write_csv(&self, path: &Path, layout: &SensorLayout) -> Result<()> {
        self.check_layout(layout)?;
        let mut out = String::from("link_index,tx,rx,value_db\n");
        for (i, (l, v)) in layout.links.iter().zip(&self.values).enumerate() {
            writeln!(out, "{i},{},{},{v:?}", l.tx, l.rx).expect("write to String");
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn check_layout(&self, layout: &SensorLayout) -> Result<()> {
        let expected = layout.hash();
        if self.layout_hash != expected {
            return Err(Error::LayoutMismatch {
                expected,
                found: self.layout_hash.clone(),
            });
        }
        if self.values.len() != layout.link_count() {
            return Err(Error::DimensionMismatch {
                expected: layout.link_count(),
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

/// `P = 20·log10|E_total|` on every link, one solve per transmitter.
pub fn synthesize_power(
    scene: &PermittivityMap,
    layout: &SensorLayout,
    cfg: &PhysicsConfig,
) -> Result<MeasurementSet> {
    synthesize_power_with(scene, layout, cfg, SolverSettings::default())
}

pub fn synthesize_power_with(
    scene: &PermittivityMap,
    layout: &SensorLayout,
    cfg: &PhysicsConfig,
    settings: SolverSettings,
) -> Result<MeasurementSet> {
    synthesize_power_stats(scene, layout, cfg, settings).map(|(m, _)| m)
}

/// Solver effort behind one synthesized measurement set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisStats {
    /// Largest true relative residual over all transmitters.
    pub max_residual: f64,
    /// Krylov mat-vecs summed over transmitters; 0 on the direct path.
    pub iterations: usize,
    pub direct: bool,
}

pub fn synthesize_power_stats(
    scene: &PermittivityMap,
    layout: &SensorLayout,
    cfg: &PhysicsConfig,
    settings: SolverSettings,
) -> Result<(MeasurementSet, SynthesisStats)> {
    let problem = ScatteringProblem::new(scene, &layout.nodes, cfg, settings)?;
    let transmitters = layout.transmitters();
    let fields = transmitters
        .par_iter()
        .map(|&t| {
            let rx: Vec<usize> = layout.links.iter().filter(|l| l.tx == t).map(|l| l.rx).collect();
            problem
                .solve_for(layout.nodes[t], &rx)
                .map(|f| (t, f.report, rx.into_iter().zip(f.receivers.values).collect::<Vec<_>>()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut field = std::collections::HashMap::new();
    let mut stats = SynthesisStats {
        max_residual: 0.0,
        iterations: 0,
        direct: problem.uses_direct(),
    };
    for (t, report, per_rx) in fields {
        stats.max_residual = stats.max_residual.max(report.residual);
        stats.iterations += report.iterations;
        for (r, e) in per_rx {
            field.insert((t, r), e);
        }
    }
    let values = layout
        .links
        .iter()
        .map(|l| 20.0 * field[&(l.tx, l.rx)].norm().log10())
        .collect::<Vec<_>>();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singularity("received field vanished on a link".into()));
    }
    let m = MeasurementSet {
        values,
        kind: MeasurementKind::AbsolutePower,
        layout_hash: layout.hash(),
        label: "t0".into(),
    };
    Ok((m, stats))
}

/// `ΔP = P_after − P_before` in dB.
pub fn background_subtract(after: &MeasurementSet, before: &MeasurementSet) -> Result<MeasurementSet> {
    for m in [after, before] {
        if m.kind != MeasurementKind::AbsolutePower {
            return Err(Error::KindMismatch(format!(
                "background subtraction needs absolute power, got {:?} ({})",
                m.kind, m.label
            )));
        }
    }
    if after.layout_hash != before.layout_hash {
        return Err(Error::LayoutMismatch {
            expected: before.layout_hash.clone(),
            found: after.layout_hash.clone(),
        });
    }
    if after.len() != before.len() {
        return Err(Error::DimensionMismatch {
            expected: before.len(),
            found: after.len(),
        });
    }
    Ok(MeasurementSet {
        values: after.values.iter().zip(&before.values).map(|(a, b)| a - b).collect(),
        kind: MeasurementKind::BackgroundDifferenced,
        layout_hash: after.layout_hash.clone(),
        label: format!("{} - {}", after.label, before.label),
    })
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma_db`.
pub fn add_noise(m: &MeasurementSet, sigma_db: f64, seed: u64) -> Result<MeasurementSet> {
    if !(sigma_db >= 0.0 && sigma_db.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise σ must be ≥ 0, got {sigma_db}")));
    }
    if sigma_db == 0.0 {
        return Ok(m.clone());
    }
    let normal = Normal::new(0.0, sigma_db).expect("σ validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = m.clone();
    out.values.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;
    use crate::geometry::{make_layout, DoIGrid};
    use crate::greens::green_at;

    fn set(values: Vec<f64>, kind: MeasurementKind) -> MeasurementSet {
        MeasurementSet {
            values,
            kind,
            layout_hash: "h".into(),
            label: "t0".into(),
        }
    }

    #[test]
    fn empty_scene_gives_incident_power() {
        let cfg = PhysicsConfig::default();
        let grid = DoIGrid::square(1.5, 20).unwrap();
        let layout = make_layout(40, 3.0, &grid).unwrap();
        let p = synthesize_power(&PermittivityMap::free_space(grid), &layout, &cfg).unwrap();
        assert_eq!(p.len(), 780);
        for (l, v) in layout.links.iter().zip(&p.values) {
            let e = green_at(layout.nodes[l.tx].dist(&layout.nodes[l.rx]), cfg.wavenumber());
            assert_eq!(*v, 20.0 * e.norm().log10());
        }
    }

    #[test]
    fn subtraction_rules() {
        let a = set(vec![1.0, -2.0, 3.5], MeasurementKind::AbsolutePower);
        let b = set(vec![0.5, 0.5, 0.5], MeasurementKind::AbsolutePower);
        let zero = background_subtract(&a, &a).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        assert_eq!(zero.kind, MeasurementKind::BackgroundDifferenced);
        let ab = background_subtract(&a, &b).unwrap();
        let ba = background_subtract(&b, &a).unwrap();
        for (x, y) in ab.values.iter().zip(&ba.values) {
            assert_eq!(*x, -*y);
        }
        assert!(matches!(background_subtract(&ab, &a), Err(Error::KindMismatch(_))));
        let mut other = b.clone();
        other.layout_hash = "g".into();
        assert!(matches!(background_subtract(&a, &other), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn noise_is_seeded_and_has_right_variance() {
        let base = set(vec![0.0; 100_000], MeasurementKind::BackgroundDifferenced);
        assert_eq!(add_noise(&base, 0.0, 1).unwrap(), base);
        let a = add_noise(&base, 2.0, 9).unwrap();
        assert_eq!(a, add_noise(&base, 2.0, 9).unwrap());
        assert_ne!(a, add_noise(&base, 2.0, 10).unwrap());
        let n = a.len() as f64;
        let mean = a.values.iter().sum::<f64>() / n;
        let var = a.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 4.0).abs() < 0.05 * 4.0, "variance {var}");
        assert!(add_noise(&base, -1.0, 0).is_err());
    }

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let grid = DoIGrid::square(1.5, 10).unwrap();
        let layout = make_layout(5, 3.0, &grid).unwrap();
        let m = MeasurementSet {
            values: (0..10).map(|i| i as f64 * 0.1 - 0.3).collect(),
            kind: MeasurementKind::BackgroundDifferenced,
            layout_hash: layout.hash(),
            label: "t0+dt - t0".into(),
        };
        let path = m.write(dir.path(), "delta").unwrap();
        assert_eq!(MeasurementSet::read(&path).unwrap(), m);
        let raw = std::fs::read(dir.path().join("delta.f64")).unwrap();
        assert_eq!(raw.len(), 80);
        assert_eq!(f64::from_le_bytes(raw[8..16].try_into().unwrap()), m.values[1]);

        let csv = dir.path().join("delta.csv");
        m.write_csv(&csv, &layout).unwrap();
        let text = std::fs::read_to_string(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "link_index,tx,rx,value_db");
        assert_eq!(lines.len(), 11);
        assert!(lines[5].starts_with("4,1,2,"));
    }

    #[test]
    fn lossy_scene_attenuates_through_link() {
        let cfg = PhysicsConfig::default();
        let grid = DoIGrid::square(1.5, 60).unwrap();
        let layout = make_layout(8, 3.0, &grid).unwrap();
        let eps = grid
            .centers()
            .iter()
            .map(|c| if c.x.abs() < 0.2 && c.y.abs() < 0.2 { Complex64::new(3.0, 2.0) } else { Complex64::new(1.0, 0.0) })
            .collect();
        let scene = PermittivityMap::new(grid.clone(), eps, "lossy block").unwrap();
        let before = synthesize_power(&PermittivityMap::free_space(grid), &layout, &cfg).unwrap();
        let after = synthesize_power(&scene, &layout, &cfg).unwrap().with_label("t0+dt");
        let dp = background_subtract(&after, &before).unwrap();
        // nodes 0 and 4 sit at opposite corners; that link crosses the block
        let idx = layout.links.iter().position(|l| l.tx == 0 && l.rx == 4).unwrap();
        assert!(dp.values[idx] < -1.0, "ΔP = {}", dp.values[idx]);
        assert_eq!(dp.label, "t0+dt - t0");
    }
}
