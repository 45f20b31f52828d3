//! On-disk training corpus.
//!
//! ```text
//! corpus/
//!   manifest.json
//!   sample_00000/ chi_re.f32 chi_im.f32 gt_eps.f32 meas.f64 scene.json
//!   ...
//! ```
//! Each sample directory is built under a temporary name and renamed when
//! complete, so an interrupted run leaves only whole samples behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rasterize, sample_seed, Placement, SceneSampler, SceneSpec};
use crate::error::{Error, Result};
use crate::forward::{
    add_noise, background_subtract, synthesize_power_stats, synthesize_power_with, MeasurementSet, PermittivityMap, SolverSettings,
};
use crate::io::{write_f32_le, write_f64_le, write_json, read_json, Hasher};
use crate::physics::{SetupConfig, C0};
use crate::xra::{
    assemble_xra, precompute_pi, reconstruct, PrecomputedInverse, RegularizerConfig, CHI_IM_FILE, CHI_RE_FILE,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GT_FILE: &str = "gt_eps.f32";
pub const MEAS_FILE: &str = "meas.f64";
pub const SCENE_FILE: &str = "scene.json";
pub const CORPUS_FORMAT: &str = "f32le-rowmajor";
/// Per-sample prediction file expected by evaluation.
pub const PRED_FILE: &str = "pred_eps.f32";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub setup: SetupConfig,
    pub alpha: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub shapes_per_scene: usize,
    pub placement: Placement,
    /// Train, validation and test fractions.
    pub split_fractions: [f64; 3],
    /// Gaussian noise on the differenced powers; 0 disables it.
    pub noise_db: f64,
    pub solver: SolverSettings,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            setup: SetupConfig::default(),
            alpha: RegularizerConfig::default().alpha,
            seed: 0,
            n_samples: 5000,
            shapes_per_scene: 2,
            placement: Placement::TopHalf,
            split_fractions: [0.8, 0.1, 0.1],
            noise_db: 0.0,
            solver: SolverSettings::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        RegularizerConfig::new(self.alpha)?;
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("corpus needs at least one sample".into()));
        }
        if !(1..=3).contains(&self.shapes_per_scene) {
            return Err(Error::InvalidConfig("shapes_per_scene must be 1, 2 or 3".into()));
        }
        let f = self.split_fractions;
        if f.iter().any(|v| !(*v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split fractions must be non-negative and sum to 1, got {f:?}")));
        }
        if !(self.noise_db >= 0.0 && self.noise_db.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be non-negative, got {}", self.noise_db)));
        }
        Ok(())
    }

    /// Covers geometry, physics, regularization, sampling and solver settings.
    pub fn hash(&self) -> String {
        let solver = serde_json::to_string(&self.solver).expect("solver settings serialize");
        Hasher::new()
            .str("corpus-v1")
            .str(&self.setup.hash())
            .f64(self.alpha)
            .u64(self.seed)
            .u64(self.n_samples as u64)
            .u64(self.shapes_per_scene as u64)
            .str(&format!("{:?}", self.placement))
            .f64_slice(&self.split_fractions)
            .f64(self.noise_db)
            .str(&solver)
            .finish()
    }

    pub fn sampler(&self) -> SceneSampler {
        SceneSampler {
            doi_size: self.setup.doi_size_m,
            wavelength: self.setup.physics().wavelength(),
            placement: self.placement,
        }
    }

    /// Shuffled ids cut into train/val/test by the configured fractions.
    pub fn splits(&self) -> Splits {
        let n = self.n_samples;
        let n_train = ((n as f64 * self.split_fractions[0]).round() as usize).min(n);
        let n_val = ((n as f64 * self.split_fractions[1]).round() as usize).min(n - n_train);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(self.seed, usize::MAX)));
        let cut = |range: std::ops::Range<usize>| {
            let mut v = ids[range].to_vec();
            v.sort_unstable();
            v
        };
        Splits {
            train: cut(0..n_train),
            val: cut(n_train..n_train + n_val),
            test: cut(n_train + n_val..n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn of(&self, index: usize) -> Option<Split> {
        if self.train.binary_search(&index).is_ok() {
            Some(Split::Train)
        } else if self.val.binary_search(&index).is_ok() {
            Some(Split::Val)
        } else if self.test.binary_search(&index).is_ok() {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusStatus {
    Partial,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsInfo {
    pub frequency_hz: f64,
    pub wavelength_m: f64,
    pub c0_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub nx: usize,
    pub ny: usize,
    pub links: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileNames {
    pub chi_re: String,
    pub chi_im: String,
    pub label: String,
    pub measurement: String,
    pub scene: String,
    pub sample_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub status: CorpusStatus,
    pub hash: String,
    pub physics: PhysicsInfo,
    pub geometry: SetupConfig,
    pub alpha: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub shapes_per_scene: usize,
    pub placement: Placement,
    pub noise_db: f64,
    pub solver: SolverSettings,
    pub splits: Splits,
    pub format: String,
    pub overlap_rule: String,
    pub inverse_grid: GridInfo,
    pub files: FileNames,
    pub layout_hash: String,
    pub model_hash: String,
}

impl CorpusManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST_FILE))
    }

    pub fn sample_dir(&self, corpus: &Path, index: usize) -> PathBuf {
        corpus.join(sample_dir_name(index))
    }

}

/// Contents of `scene.json` in each sample directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub split: Split,
    pub corpus_hash: String,
    pub scene: SceneSpec,
    /// Largest true relative residual over all transmitters (0 for free space).
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub generated: usize,
    pub skipped: usize,
    pub manifest: CorpusManifest,
}

pub fn sample_dir_name(index: usize) -> String {
    format!("sample_{index:05}")
}

struct Pipeline<'a> {
    cfg: &'a CorpusConfig,
    hash: String,
    splits: &'a Splits,
    forward: crate::geometry::DoIGrid,
    inverse: crate::geometry::DoIGrid,
    layout: crate::geometry::SensorLayout,
    baseline: MeasurementSet,
    pi: PrecomputedInverse,
}

impl Pipeline<'_> {
    fn run(&self, index: usize, dir: &Path) -> Result<()> {
        let seed = sample_seed(self.cfg.seed, index);
        let scene = self.cfg.sampler().sample(seed, self.cfg.shapes_per_scene)?;
        let map: PermittivityMap = scene.permittivity(&self.forward)?;
        let physics = self.cfg.setup.physics();
        let (after, stats) = synthesize_power_stats(&map, &self.layout, &physics, self.cfg.solver)?;
        let mut delta = background_subtract(&after, &self.baseline)?;
        if self.cfg.noise_db > 0.0 {
            delta = add_noise(&delta, self.cfg.noise_db, seed)?;
        }
        let pair = reconstruct(&delta, &self.pi)?;
        if !pair.is_finite() {
            return Err(Error::NonFinite("contrast images".into()));
        }
        let label = rasterize(&scene, &self.inverse);
        check_label(&scene, &self.inverse, &label)?;

        let tmp = dir.join(format!(".{}.tmp", sample_dir_name(index)));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        write_f32_le(&tmp.join(CHI_RE_FILE), &pair.re)?;
        write_f32_le(&tmp.join(CHI_IM_FILE), &pair.im)?;
        write_f32_le(&tmp.join(GT_FILE), &label)?;
        write_f64_le(&tmp.join(MEAS_FILE), &delta.values)?;
        let split = self.splits.of(index).expect("every index is in a split");
        write_json(
            &tmp.join(SCENE_FILE),
            &SampleRecord {
                index,
                split,
                corpus_hash: self.hash.clone(),
                scene,
                max_residual: stats.max_residual,
            },
        )?;
        fs::rename(&tmp, dir.join(sample_dir_name(index)))?;
        Ok(())
    }
}

fn check_label(scene: &SceneSpec, grid: &crate::geometry::DoIGrid, label: &[f64]) -> Result<()> {
    for (c, v) in grid.centers().iter().zip(label) {
        let inside = scene.shapes.iter().any(|s| s.contains(c));
        if (!inside && *v != 1.0) || !v.is_finite() || *v < 1.0 {
            return Err(Error::NonFinite(format!("label cell at ({:.3}, {:.3}) = {v}", c.x, c.y)));
        }
    }
    Ok(())
}

/// Generates (or resumes) a corpus in `dir`.
///
/// `progress(done, total)` is called after each sample finishes, from worker
/// threads. Samples already present are skipped. On failure the manifest is
/// left marked partial and the first failing sample is reported.
pub fn generate_corpus(
    cfg: &CorpusConfig,
    dir: &Path,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<CorpusSummary> {
    cfg.validate()?;
    let hash = cfg.hash();
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let existing = CorpusManifest::read(dir)?;
        if existing.hash != hash {
            return Err(Error::Format {
                path: manifest_path,
                reason: "directory holds a corpus generated with a different configuration".into(),
            });
        }
    }

    let forward = cfg.setup.forward_grid()?;
    let inverse = cfg.setup.inverse_grid()?;
    let layout = cfg.setup.layout()?;
    let physics = cfg.setup.physics();
    let model = assemble_xra(&layout, &inverse, &physics)?;
    let splits = cfg.splits();
    let mut manifest = CorpusManifest {
        version: VERSION,
        status: CorpusStatus::Partial,
        hash: hash.clone(),
        physics: PhysicsInfo {
            frequency_hz: physics.frequency_hz,
            wavelength_m: physics.wavelength(),
            c0_db: C0,
        },
        geometry: cfg.setup.clone(),
        alpha: cfg.alpha,
        seed: cfg.seed,
        n_samples: cfg.n_samples,
        shapes_per_scene: cfg.shapes_per_scene,
        placement: cfg.placement,
        noise_db: cfg.noise_db,
        solver: cfg.solver,
        splits: splits.clone(),
        format: CORPUS_FORMAT.into(),
        overlap_rule: "later-wins".into(),
        inverse_grid: GridInfo {
            nx: inverse.nx,
            ny: inverse.ny,
            links: layout.link_count(),
        },
        files: FileNames {
            chi_re: CHI_RE_FILE.into(),
            chi_im: CHI_IM_FILE.into(),
            label: GT_FILE.into(),
            measurement: MEAS_FILE.into(),
            scene: SCENE_FILE.into(),
            sample_dir: "sample_%05d".into(),
        },
        layout_hash: layout.hash(),
        model_hash: model.model_hash.clone(),
    };
    write_json(&manifest_path, &manifest)?;

    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if path.is_dir() && name.starts_with(".sample_") && name.ends_with(".tmp") {
            fs::remove_dir_all(&path)?;
        }
    }
    let pending: Vec<usize> = (0..cfg.n_samples)
        .filter(|&i| !dir.join(sample_dir_name(i)).join(SCENE_FILE).exists())
        .collect();
    let skipped = cfg.n_samples - pending.len();

    if !pending.is_empty() {
        let baseline =
            synthesize_power_with(&PermittivityMap::free_space(forward.clone()), &layout, &physics, cfg.solver)?;
        let pipeline = Pipeline {
            cfg,
            hash: hash.clone(),
            splits: &splits,
            forward,
            inverse,
            layout,
            baseline,
            pi: precompute_pi(&model, &RegularizerConfig::new(cfg.alpha)?)?,
        };
        let done = AtomicUsize::new(skipped);
        let mut failures: Vec<(usize, Error)> = pending
            .par_iter()
            .filter_map(|&i| {
                let out = pipeline.run(i, dir).err().map(|e| (i, e));
                progress(done.fetch_add(1, Ordering::SeqCst) + 1, cfg.n_samples);
                out
            })
            .collect();
        if !failures.is_empty() {
            failures.sort_by_key(|(i, _)| *i);
            let (index, source) = failures.swap_remove(0);
            return Err(Error::Sample {
                index,
                source: Box::new(source),
            });
        }
    }

    manifest.status = CorpusStatus::Complete;
    write_json(&manifest_path, &manifest)?;
    Ok(CorpusSummary {
        generated: cfg.n_samples - skipped,
        skipped,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_sizes() {
        let cfg = CorpusConfig::default();
        let s = cfg.splits();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (4000, 500, 500));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..5000).collect::<Vec<_>>());
        assert_eq!(s.of(s.val[3]), Some(Split::Val));
        assert_eq!(s.of(5000), None);
    }

    #[test]
    fn small_split_sizes() {
        let cfg = CorpusConfig { n_samples: 10, ..Default::default() };
        let s = cfg.splits();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let cfg = CorpusConfig { n_samples: 1, ..Default::default() };
        assert_eq!(cfg.splits().train, vec![0]);
    }

    #[test]
    fn hash_tracks_config() {
        let a = CorpusConfig::default();
        let b = CorpusConfig { alpha: 5.0, ..a.clone() };
        let c = CorpusConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_config() {
        let bad = [
            CorpusConfig { n_samples: 0, ..Default::default() },
            CorpusConfig { alpha: 0.0, ..Default::default() },
            CorpusConfig { split_fractions: [0.5, 0.5, 0.5], ..Default::default() },
            CorpusConfig { shapes_per_scene: 4, ..Default::default() },
            CorpusConfig { noise_db: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn label_check_catches_stray_values() {
        let grid = crate::geometry::DoIGrid::square(1.5, 10).unwrap();
        let scene = SceneSpec::empty();
        let mut label = vec![1.0; 100];
        check_label(&scene, &grid, &label).unwrap();
        label[5] = 2.0;
        assert!(check_label(&scene, &grid, &label).is_err());
    }
}
