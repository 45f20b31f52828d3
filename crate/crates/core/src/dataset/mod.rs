//! Random scenes, ground-truth rasterization, training corpora and metrics.

mod corpus;
mod metrics;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use corpus::{
    generate_corpus, sample_dir_name, CorpusConfig, CorpusManifest, CorpusStatus, CorpusSummary, SampleRecord,
    Split, Splits, CORPUS_FORMAT, GT_FILE, MANIFEST_FILE, MEAS_FILE, PRED_FILE, SCENE_FILE,
};
pub use metrics::{
    centroid, evaluate, iou, psnr, support_above, weighted_centroid, MetricsReport, PSNR_CAP_DB,
};

use crate::error::{Error, Result};
use crate::forward::PermittivityMap;
use crate::geometry::{DoIGrid, Point};
use crate::io::Hasher;

pub const MAX_ATTEMPTS: usize = 1000;

/// Diameters / side lengths in units of the free-space wavelength.
pub const SIZE_FACTORS: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Circle,
    Square,
}

/// An axis-aligned square or a circle; `size` is the side or the diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub center: Point,
    pub size: f64,
    pub eps_r: f64,
}

impl Shape {
    pub fn contains(&self, p: &Point) -> bool {
        let h = 0.5 * self.size;
        match self.kind {
            ShapeKind::Circle => p.dist(&self.center) < h,
            ShapeKind::Square => (p.x - self.center.x).abs() < h && (p.y - self.center.y).abs() < h,
        }
    }

    /// Inside the DoI centered at the origin, boundary included.
    pub fn fits(&self, doi_x: f64, doi_y: f64) -> bool {
        let h = 0.5 * self.size;
        self.center.x.abs() + h <= 0.5 * doi_x && self.center.y.abs() + h <= 0.5 * doi_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shapes: Vec<Shape>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn empty() -> Self {
        Self { shapes: vec![], seed: 0 }
    }

    pub fn validate(&self, grid: &DoIGrid) -> Result<()> {
        for (i, s) in self.shapes.iter().enumerate() {
            if !(s.size > 0.0 && s.size.is_finite() && s.center.x.is_finite() && s.center.y.is_finite()) {
                return Err(Error::InvalidConfig(format!("shape {i}: bad size or center")));
            }
            if !(s.eps_r >= 1.0 && s.eps_r.is_finite()) {
                return Err(Error::InvalidConfig(format!("shape {i}: eps_r must be >= 1, got {}", s.eps_r)));
            }
            if !s.fits(grid.size_x, grid.size_y) {
                return Err(Error::InvalidConfig(format!("shape {i} extends outside the DoI")));
            }
        }
        Ok(())
    }

    /// Lossless permittivity map on `grid`.
    pub fn permittivity(&self, grid: &DoIGrid) -> Result<PermittivityMap> {
        self.validate(grid)?;
        let eps = rasterize(self, grid).into_iter().map(|e| Complex64::new(e, 0.0)).collect();
        PermittivityMap::new(grid.clone(), eps, format!("{} shapes, seed {}", self.shapes.len(), self.seed))
    }
}

/// Cell value is the `eps_r` of the last shape containing the cell center, else 1.
pub fn rasterize(scene: &SceneSpec, grid: &DoIGrid) -> Vec<f64> {
    grid.centers()
        .iter()
        .map(|c| {
            scene
                .shapes
                .iter()
                .rev()
                .find(|s| s.contains(c))
                .map_or(1.0, |s| s.eps_r)
        })
        .collect()
}

/// Where shape centers may fall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// `c_x ∈ (−0.6, 0.6)`, `c_y ∈ (0.15, 0.6)` m.
    TopHalf,
    /// `c_x, c_y ∈ (−0.6, 0.6)` m.
    FullDoi,
}

impl Placement {
    fn ranges(self) -> ((f64, f64), (f64, f64)) {
        match self {
            Placement::TopHalf => ((-0.6, 0.6), (0.15, 0.6)),
            Placement::FullDoi => ((-0.6, 0.6), (-0.6, 0.6)),
        }
    }
}

/// `{1.0, 1.2, …, 5.0} ∪ {50.0, 50.2, …, 77.0}`.
pub fn permittivity_values() -> Vec<f64> {
    (10..=50)
        .step_by(2)
        .chain((500..=770).step_by(2))
        .map(|t| t as f64 / 10.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSampler {
    pub doi_size: f64,
    pub wavelength: f64,
    pub placement: Placement,
}

impl SceneSampler {
    pub fn sizes(&self) -> Vec<f64> {
        SIZE_FACTORS.iter().map(|f| f * self.wavelength).collect()
    }

    /// Draws `count` shapes; any shape that leaves the DoI is redrawn.
    pub fn sample(&self, seed: u64, count: usize) -> Result<SceneSpec> {
        if !(1..=3).contains(&count) {
            return Err(Error::InvalidConfig(format!("shape count must be 1, 2 or 3, got {count}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ((x0, x1), (y0, y1)) = self.placement.ranges();
        let sizes = self.sizes();
        let eps = permittivity_values();
        let mut shapes = Vec::with_capacity(count);
        let mut attempts = 0;
        while shapes.len() < count {
            if attempts == MAX_ATTEMPTS {
                return Err(Error::SamplingExhausted { attempts });
            }
            attempts += 1;
            let kind = if rng.random_bool(0.5) { ShapeKind::Circle } else { ShapeKind::Square };
            let center = Point::new(rng.random_range(x0..x1), rng.random_range(y0..y1));
            let shape = Shape {
                kind,
                center,
                size: sizes[rng.random_range(0..sizes.len())],
                eps_r: eps[rng.random_range(0..eps.len())],
            };
            if shape.fits(self.doi_size, self.doi_size) {
                shapes.push(shape);
            }
        }
        Ok(SceneSpec { shapes, seed })
    }
}

/// Per-sample seed, independent of worker scheduling.
pub fn sample_seed(corpus_seed: u64, index: usize) -> u64 {
    let digest = Hasher::new().str("sample-seed").u64(corpus_seed).u64(index as u64).finish();
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sampler(placement: Placement) -> SceneSampler {
        SceneSampler { doi_size: 1.5, wavelength: 0.125, placement }
    }

    #[test]
    fn permittivity_grid() {
        let v = permittivity_values();
        assert_eq!(v.len(), 21 + 136);
        assert_eq!((v[0], v[20], v[21], v[156]), (1.0, 5.0, 50.0, 77.0));
        assert!(v.iter().all(|e| (e * 5.0 - (e * 5.0).round()).abs() < 1e-12));
    }

    #[test]
    fn sizes_and_placement() {
        let s = sampler(Placement::TopHalf);
        let allowed = [0.0625, 0.125, 0.1875, 0.25, 0.3125];
        for seed in 0..500 {
            let scene = s.sample(seed, 2).unwrap();
            assert_eq!(scene.shapes.len(), 2);
            for sh in &scene.shapes {
                assert!(allowed.iter().any(|a| (a - sh.size).abs() < 1e-15));
                assert!(sh.center.x > -0.6 && sh.center.x < 0.6);
                assert!(sh.center.y > 0.15 && sh.center.y < 0.6);
                assert!(sh.fits(1.5, 1.5));
            }
        }
        assert_eq!(s.sample(7, 3).unwrap(), s.sample(7, 3).unwrap());
        assert_ne!(s.sample(7, 3).unwrap(), s.sample(8, 3).unwrap());
        assert!(s.sample(1, 0).is_err() && s.sample(1, 4).is_err());
    }

    #[test]
    fn full_doi_reaches_lower_half() {
        let s = sampler(Placement::FullDoi);
        let low = (0..200).flat_map(|seed| s.sample(seed, 1).unwrap().shapes).filter(|sh| sh.center.y < 0.0).count();
        assert!(low > 50);
    }

    #[test]
    fn impossible_placement_is_reported() {
        // every size overflows a 0.05 m DoI
        let s = SceneSampler { doi_size: 0.05, ..sampler(Placement::TopHalf) };
        assert!(matches!(s.sample(1, 1), Err(Error::SamplingExhausted { attempts: 1000 })));
    }

    #[test]
    fn kind_is_a_fair_coin() {
        let s = sampler(Placement::FullDoi);
        let circles = (0..10_000).filter(|&seed| s.sample(seed, 1).unwrap().shapes[0].kind == ShapeKind::Circle).count();
        let frac = circles as f64 / 1e4;
        assert!(frac > 0.48 && frac < 0.52, "{frac}");
    }

    #[test]
    fn permittivity_histogram_is_uniform() {
        let s = sampler(Placement::FullDoi);
        let values = permittivity_values();
        let mut counts = vec![0usize; values.len()];
        for seed in 0..10_000 {
            let e = s.sample(seed, 1).unwrap().shapes[0].eps_r;
            counts[values.iter().position(|v| *v == e).unwrap()] += 1;
        }
        let expected = 1e4 / values.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of χ² with 156 degrees of freedom
        assert!(chi2 < 201.4, "χ² = {chi2}");
    }

    #[test]
    fn empty_scene_is_all_ones() {
        let grid = DoIGrid::square(1.5, 50).unwrap();
        assert!(rasterize(&SceneSpec::empty(), &grid).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn grid_aligned_square_tiles_exactly() {
        let grid = DoIGrid::square(1.5, 50).unwrap();
        // 0.3 m side centered on a grid line: 10×10 cells
        let scene = SceneSpec {
            shapes: vec![Shape { kind: ShapeKind::Square, center: Point::new(0.0, 0.3), size: 0.3, eps_r: 3.0 }],
            seed: 0,
        };
        assert_eq!(rasterize(&scene, &grid).iter().filter(|v| **v == 3.0).count(), 100);
    }

    #[test]
    fn later_shapes_win() {
        let grid = DoIGrid::square(1.5, 50).unwrap();
        let a = Shape { kind: ShapeKind::Square, center: Point::new(0.0, 0.0), size: 0.3, eps_r: 3.0 };
        let b = Shape { kind: ShapeKind::Circle, center: Point::new(0.0, 0.0), size: 0.12, eps_r: 60.0 };
        let img = rasterize(&SceneSpec { shapes: vec![a, b], seed: 0 }, &grid);
        let c = grid.index(25, 25);
        assert_eq!(img[c], 60.0);
        let img = rasterize(&SceneSpec { shapes: vec![b, a], seed: 0 }, &grid);
        assert_eq!(img[c], 3.0);
    }

    #[test]
    fn validation() {
        let grid = DoIGrid::square(1.5, 50).unwrap();
        let mut scene = SceneSpec {
            shapes: vec![Shape { kind: ShapeKind::Circle, center: Point::new(0.7, 0.0), size: 0.125, eps_r: 2.0 }],
            seed: 0,
        };
        assert!(scene.validate(&grid).is_err());
        scene.shapes[0].center.x = 0.0;
        scene.validate(&grid).unwrap();
        scene.shapes[0].eps_r = 0.5;
        assert!(scene.permittivity(&grid).is_err());
    }

    #[test]
    fn sample_seeds_differ() {
        assert_eq!(sample_seed(3, 9), sample_seed(3, 9));
        assert_ne!(sample_seed(3, 9), sample_seed(3, 10));
        assert_ne!(sample_seed(3, 9), sample_seed(4, 9));
    }

    proptest! {
        #[test]
        fn circle_area_within_eight_percent(cx in -0.55f64..0.55, cy in -0.55f64..0.55) {
            let grid = DoIGrid::square(1.5, 50).unwrap();
            let d = 2.5 * 0.125;
            let scene = SceneSpec {
                shapes: vec![Shape { kind: ShapeKind::Circle, center: Point::new(cx, cy), size: d, eps_r: 2.0 }],
                seed: 0,
            };
            let covered = rasterize(&scene, &grid).iter().filter(|v| **v == 2.0).count() as f64;
            let expected = std::f64::consts::PI * (0.5 * d).powi(2) / grid.cell_area();
            prop_assert!((covered / expected - 1.0).abs() <= 0.08);
        }

        #[test]
        fn sampled_scenes_stay_inside(seed in any::<u64>(), count in 1usize..=3) {
            let scene = sampler(Placement::FullDoi).sample(seed, count).unwrap();
            prop_assert!(scene.validate(&DoIGrid::square(1.5, 50).unwrap()).is_ok());
        }
    }
}
