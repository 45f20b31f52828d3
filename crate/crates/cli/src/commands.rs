use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::Instant;

use anyhow::{Context, Result};
use rytov_core::dataset::{
    evaluate, generate_corpus, sample_dir_name, CorpusConfig, CorpusManifest, SceneSpec, Split, GT_FILE, PRED_FILE,
};
use rytov_core::forward::{
    add_noise, background_subtract, synthesize_power_stats, MeasurementKind, MeasurementSet, PermittivityMap,
    SolverSettings,
};
use rytov_core::io::{read_f32_le, write_f32_le, write_json, Hasher};
use rytov_core::physics::SetupConfig;
use rytov_core::xra::{
    alpha_sweep, assemble_xra, log_spaced, precompute_pi, reconstruct, ContrastPair, PrecomputedInverse,
    RegularizerConfig, XraModelMatrix, CHI_RE_FILE,
};
use serde::Serialize;

use crate::preview::write_png;
use crate::{CliError, Cli, Command};

/// Marker written into every output directory this tool replaces.
const RUN_FILE: &str = "run.json";
const PI_STEM: &str = "pi";

struct Ctx {
    setup: SetupConfig,
    reg: RegularizerConfig,
    seed: u64,
    noise_db: f64,
    out: Option<PathBuf>,
}

impl Ctx {
    fn from_cli(cli: &Cli) -> Result<Self> {
        let mut setup = match &cli.config {
            Some(p) => {
                if !p.is_file() {
                    return Err(CliError::Usage(format!("config file not found: {}", p.display())).into());
                }
                SetupConfig::load(p)?
            }
            None => SetupConfig::default(),
        };
        if let Some(n) = cli.grid_forward {
            setup.forward_grid = n;
        }
        if let Some(n) = cli.grid_inverse {
            setup.inverse_grid = n;
        }
        setup.validate()?;
        let reg = match cli.alpha {
            Some(a) => RegularizerConfig::new(a)?,
            None => RegularizerConfig::default(),
        };
        if !(cli.noise_db >= 0.0 && cli.noise_db.is_finite()) {
            return Err(CliError::Usage(format!("--noise-db must be non-negative, got {}", cli.noise_db)).into());
        }
        Ok(Self {
            setup,
            reg,
            seed: cli.seed,
            noise_db: cli.noise_db,
            out: cli.out.clone(),
        })
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required for this command".into()).into())
    }
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", p.display())).into())
    }
}

/// Builds the output in a sibling directory, then swaps it into place.
///
/// An existing non-empty directory is only replaced if an earlier run of this
/// tool created it.
fn staged(out: &Path, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if out.exists() {
        let ours = out.join(RUN_FILE).is_file();
        let empty = out.is_dir() && fs::read_dir(out)?.next().is_none();
        if !(ours || empty) {
            return Err(CliError::Usage(format!(
                "refusing to replace {}: not an output directory of this tool",
                out.display()
            ))
            .into());
        }
    }
    let name = out
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("bad output path {}", out.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(".{name}.partial"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    build(&tmp)?;
    if out.exists() {
        fs::remove_dir_all(out)?;
    }
    fs::rename(&tmp, out)?;
    Ok(())
}

fn load_scene(path: &Path) -> Result<SceneSpec> {
    require_file(path, "scene file")?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| rytov_core::Error::InvalidConfig(format!("{}: {e}", path.display())).into())
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::from_cli(&cli)?;
    match cli.command {
        Command::Simulate { scene, before } => simulate(&ctx, &scene, before.as_deref()),
        Command::Reconstruct {
            measurement,
            pi_cache,
            free_space_baseline,
            predictor,
        } => cmd_reconstruct(&ctx, &measurement, pi_cache.as_deref(), free_space_baseline, predictor.as_deref()),
        Command::Dataset { n, shapes, placement } => dataset(&ctx, n, shapes, placement.into()),
        Command::Eval { pred, corpus, split } => eval(&ctx, &pred, &corpus, split.into()),
        Command::Baseline { corpus, split } => baseline(&ctx, &corpus, split.map(Into::into)),
        Command::AlphaSweep {
            measurement,
            lo,
            hi,
            count,
        } => sweep(&ctx, &measurement, lo, hi, count),
    }
}

#[derive(Serialize)]
struct SimulateRun<'a> {
    command: &'static str,
    setup: &'a SetupConfig,
    setup_hash: String,
    scene: &'a SceneSpec,
    before: Option<&'a SceneSpec>,
    seed: u64,
    noise_db: f64,
    absolute: &'static str,
    differenced: &'static str,
    max_residual: f64,
}

fn simulate(ctx: &Ctx, scene_path: &Path, before_path: Option<&Path>) -> Result<()> {
    let out = ctx.out()?;
    let scene = load_scene(scene_path)?;
    let before = before_path.map(load_scene).transpose()?;
    let grid = ctx.setup.forward_grid()?;
    let layout = ctx.setup.layout()?;
    let physics = ctx.setup.physics();
    let settings = SolverSettings::default();

    let t = Instant::now();
    let (after, s_after) = synthesize_power_stats(&scene.permittivity(&grid)?, &layout, &physics, settings)?;
    let after = after.with_label("t0+dt");
    let reference = match &before {
        Some(b) => b.permittivity(&grid)?,
        None => PermittivityMap::free_space(grid.clone()),
    };
    let (base, s_before) = synthesize_power_stats(&reference, &layout, &physics, settings)?;
    let mut delta = background_subtract(&after, &base)?;
    if ctx.noise_db > 0.0 {
        delta = add_noise(&delta, ctx.noise_db, ctx.seed)?;
    }
    eprintln!(
        "simulate: {} links, {} forward cells, {:.2} s",
        layout.link_count(),
        grid.len(),
        t.elapsed().as_secs_f64()
    );

    staged(out, |dir| {
        after.write(dir, "absolute")?;
        delta.write(dir, "differenced")?;
        delta.write_csv(&dir.join("differenced.csv"), &layout)?;
        write_json(
            &dir.join(RUN_FILE),
            &SimulateRun {
                command: "simulate",
                setup: &ctx.setup,
                setup_hash: ctx.setup.hash(),
                scene: &scene,
                before: before.as_ref(),
                seed: ctx.seed,
                noise_db: ctx.noise_db,
                absolute: "absolute.json",
                differenced: "differenced.json",
                max_residual: s_after.max_residual.max(s_before.max_residual),
            },
        )?;
        Ok(())
    })
}

fn load_measurement(path: &Path) -> Result<MeasurementSet> {
    require_file(path, "measurement manifest")?;
    Ok(MeasurementSet::read(path)?)
}

fn model_for(ctx: &Ctx, m: &MeasurementSet) -> Result<XraModelMatrix> {
    let layout = ctx.setup.layout()?;
    m.check_layout(&layout)?;
    Ok(assemble_xra(&layout, &ctx.setup.inverse_grid()?, &ctx.setup.physics())?)
}

/// Loads `Π` from `cache` when present, else builds it (and stores it there).
fn inverse_for(model: &XraModelMatrix, reg: &RegularizerConfig, cache: Option<&Path>) -> Result<PrecomputedInverse> {
    if let Some(dir) = cache {
        if dir.join(format!("{PI_STEM}.json")).is_file() {
            let pi = PrecomputedInverse::read(dir, PI_STEM)?;
            pi.check_provenance(&model.model_hash, reg.alpha)?;
            return Ok(pi);
        }
    }
    let pi = precompute_pi(model, reg)?;
    if let Some(dir) = cache {
        fs::create_dir_all(dir)?;
        pi.write(dir, PI_STEM)?;
    }
    Ok(pi)
}

#[derive(Serialize)]
struct ReconstructRun {
    command: &'static str,
    measurement_label: String,
    layout_hash: String,
    model_hash: String,
    alpha: f64,
    nx: usize,
    ny: usize,
    previews: Vec<crate::preview::PreviewInfo>,
    eps_image: Option<String>,
}

fn cmd_reconstruct(
    ctx: &Ctx,
    path: &Path,
    cache: Option<&Path>,
    free_space_baseline: bool,
    predictor: Option<&Path>,
) -> Result<()> {
    let out = ctx.out()?;
    let mut m = load_measurement(path)?;
    let model = model_for(ctx, &m)?;
    if m.kind == MeasurementKind::AbsolutePower {
        if !free_space_baseline {
            return Err(rytov_core::Error::KindMismatch(
                "absolute powers given; pass --free-space-baseline or a differenced measurement".into(),
            )
            .into());
        }
        let layout = ctx.setup.layout()?;
        let empty = PermittivityMap::free_space(ctx.setup.forward_grid()?);
        let (free, _) = synthesize_power_stats(&empty, &layout, &ctx.setup.physics(), SolverSettings::default())?;
        m = background_subtract(&m, &free.with_label("free space"))?;
    }

    let t = Instant::now();
    let pi = inverse_for(&model, &ctx.reg, cache)?;
    let t_pi = t.elapsed();
    let t = Instant::now();
    let pair = reconstruct(&m, &pi)?;
    let t_rec = t.elapsed();
    eprintln!(
        "reconstruct: {:.1} ms per measurement once the inverse is ready (inverse: {:.2} s)",
        t_rec.as_secs_f64() * 1e3,
        t_pi.as_secs_f64()
    );

    staged(out, |dir| {
        pair.write(dir)?;
        let previews = vec![
            write_png(&dir.join("chi_re.png"), &pair.re, pair.nx, pair.ny)?,
            write_png(&dir.join("chi_im.png"), &pair.im, pair.nx, pair.ny)?,
        ];
        let eps_image = match predictor {
            Some(program) => {
                let eps = run_predictor(program, dir, &pair)?;
                write_f32_le(&dir.join("eps_r.f32"), &eps)?;
                write_png(&dir.join("eps_r.png"), &eps, pair.nx, pair.ny)?;
                Some("eps_r.f32".to_string())
            }
            None => None,
        };
        write_json(
            &dir.join(RUN_FILE),
            &ReconstructRun {
                command: "reconstruct",
                measurement_label: m.label.clone(),
                layout_hash: m.layout_hash.clone(),
                model_hash: pi.model_hash.clone(),
                alpha: pi.alpha,
                nx: pair.nx,
                ny: pair.ny,
                previews,
                eps_image,
            },
        )?;
        Ok(())
    })
}

#[derive(Serialize)]
struct PredictorInputs {
    nx: usize,
    ny: usize,
    format: &'static str,
    ids: Vec<usize>,
}

/// Hands the contrast pair to an external predictor through sample directories.
fn run_predictor(program: &Path, dir: &Path, pair: &ContrastPair) -> Result<Vec<f64>> {
    let input = dir.join("predictor_input");
    let output = dir.join("predictor_output");
    let sample = input.join(sample_dir_name(0));
    fs::create_dir_all(&sample)?;
    pair.write(&sample)?;
    write_json(
        &input.join("inputs.json"),
        &PredictorInputs {
            nx: pair.nx,
            ny: pair.ny,
            format: "f32le-rowmajor",
            ids: vec![0],
        },
    )?;
    let status = Process::new(program)
        .arg("--corpus")
        .arg(&input)
        .arg("--out")
        .arg(&output)
        .status()
        .with_context(|| format!("launching predictor {}", program.display()))?;
    if !status.success() {
        anyhow::bail!("predictor exited with {status}");
    }
    let pred = output.join(sample_dir_name(0)).join(PRED_FILE);
    let eps = read_f32_le(&pred).with_context(|| format!("reading {}", pred.display()))?;
    if eps.len() != pair.nx * pair.ny {
        return Err(CliError::Mismatch(format!(
            "predictor wrote {} values, expected {}",
            eps.len(),
            pair.nx * pair.ny
        ))
        .into());
    }
    Ok(eps)
}

fn dataset(ctx: &Ctx, n: usize, shapes: usize, placement: rytov_core::dataset::Placement) -> Result<()> {
    let out = ctx.out()?;
    let cfg = CorpusConfig {
        setup: ctx.setup.clone(),
        alpha: ctx.reg.alpha,
        seed: ctx.seed,
        n_samples: n,
        shapes_per_scene: shapes,
        placement,
        noise_db: ctx.noise_db,
        ..CorpusConfig::default()
    };
    let t = Instant::now();
    let summary = generate_corpus(&cfg, out, &|done, total| {
        if done % 10 == 0 || done == total {
            eprintln!("dataset: {done}/{total} samples ({:.1} s)", t.elapsed().as_secs_f64());
        }
    })?;
    eprintln!(
        "dataset: {} generated, {} already present, splits {}/{}/{}",
        summary.generated,
        summary.skipped,
        summary.manifest.splits.train.len(),
        summary.manifest.splits.val.len(),
        summary.manifest.splits.test.len()
    );
    Ok(())
}

fn read_manifest(corpus: &Path) -> Result<CorpusManifest> {
    require_file(&corpus.join(rytov_core::dataset::MANIFEST_FILE), "corpus manifest")?;
    Ok(CorpusManifest::read(corpus)?)
}

#[derive(Serialize)]
struct Stats {
    count: usize,
    median: Option<f64>,
    mean: Option<f64>,
    min: Option<f64>,
    max: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn stats(values: &[f64]) -> Stats {
    let n = values.len();
    Stats {
        count: n,
        median: median(values),
        mean: (n > 0).then(|| values.iter().sum::<f64>() / n as f64),
        min: values.iter().copied().reduce(f64::min),
        max: values.iter().copied().reduce(f64::max),
    }
}

#[derive(Serialize)]
struct EvalSummary {
    command: &'static str,
    corpus_hash: String,
    split: Split,
    psnr_db: Stats,
    iou: Stats,
    centroid_error_cells: Stats,
}

fn eval(ctx: &Ctx, pred_dir: &Path, corpus: &Path, split: Split) -> Result<()> {
    let out = ctx.out()?;
    let manifest = read_manifest(corpus)?;
    let ids = manifest.splits.ids(split).to_vec();
    let missing: Vec<String> = ids
        .iter()
        .filter(|&&i| !pred_dir.join(sample_dir_name(i)).join(PRED_FILE).is_file())
        .map(|&i| sample_dir_name(i))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Mismatch(format!("missing predictions: {}", missing.join(", "))).into());
    }
    let nx = manifest.inverse_grid.nx;
    let mut csv = String::from("id,psnr_db,centroid_error_cells,iou\n");
    let (mut psnrs, mut ious, mut cents) = (vec![], vec![], vec![]);
    for &i in &ids {
        let pred = read_f32_le(&pred_dir.join(sample_dir_name(i)).join(PRED_FILE))?;
        let truth = read_f32_le(&manifest.sample_dir(corpus, i).join(GT_FILE))?;
        let r = evaluate(&pred, &truth, nx)?;
        let cent = r.centroid_error.map_or(String::new(), |c| format!("{c}"));
        writeln!(csv, "{i},{},{cent},{}", r.psnr, r.iou).unwrap();
        psnrs.push(r.psnr);
        ious.push(r.iou);
        cents.extend(r.centroid_error);
    }
    let summary = EvalSummary {
        command: "eval",
        corpus_hash: manifest.hash.clone(),
        split,
        psnr_db: stats(&psnrs),
        iou: stats(&ious),
        centroid_error_cells: stats(&cents),
    };
    eprintln!(
        "eval: {} samples, median PSNR {:.2} dB, median IoU {:.3}",
        ids.len(),
        summary.psnr_db.median.unwrap_or(f64::NAN),
        summary.iou.median.unwrap_or(f64::NAN)
    );
    staged(out, |dir| {
        fs::write(dir.join("metrics.csv"), &csv)?;
        write_json(&dir.join("summary.json"), &summary)?;
        write_json(&dir.join(RUN_FILE), &serde_json::json!({ "command": "eval", "summary": "summary.json" }))?;
        Ok(())
    })
}

fn baseline(ctx: &Ctx, corpus: &Path, split: Option<Split>) -> Result<()> {
    let out = ctx.out()?;
    let manifest = read_manifest(corpus)?;
    let ids: Vec<usize> = match split {
        Some(s) => manifest.splits.ids(s).to_vec(),
        None => (0..manifest.n_samples).collect(),
    };
    staged(out, |dir| {
        for &i in &ids {
            let re = read_f32_le(&manifest.sample_dir(corpus, i).join(CHI_RE_FILE))?;
            let pred: Vec<f64> = re.iter().map(|v| (v + 1.0).max(1.0)).collect();
            let sample = dir.join(sample_dir_name(i));
            fs::create_dir_all(&sample)?;
            write_f32_le(&sample.join(PRED_FILE), &pred)?;
        }
        write_json(
            &dir.join(RUN_FILE),
            &serde_json::json!({ "command": "baseline", "corpus_hash": manifest.hash, "predictor": "max(Re chi + 1, 1)" }),
        )?;
        Ok(())
    })?;
    eprintln!("baseline: wrote {} predictions", ids.len());
    Ok(())
}

fn sweep(ctx: &Ctx, path: &Path, lo: f64, hi: f64, count: usize) -> Result<()> {
    let out = ctx.out()?;
    if !(lo > 0.0 && hi >= lo && count > 0) {
        return Err(CliError::Usage("need 0 < lo <= hi and count > 0".into()).into());
    }
    let m = load_measurement(path)?;
    let model = model_for(ctx, &m)?;
    let points = alpha_sweep(&model, &m, &log_spaced(lo, hi, count))?;
    let mut csv = String::from("alpha,residual_norm,penalty_norm\n");
    for p in &points {
        writeln!(csv, "{},{},{}", p.alpha, p.residual, p.penalty).unwrap();
        eprintln!("alpha {:>10.4e}  residual {:>10.4e}  penalty {:>10.4e}", p.alpha, p.residual, p.penalty);
    }
    let digest = Hasher::new().str(&model.model_hash).f64_slice(&m.values).finish();
    staged(out, |dir| {
        fs::write(dir.join("alpha_sweep.csv"), &csv)?;
        write_json(&dir.join(RUN_FILE), &serde_json::json!({ "command": "alpha-sweep", "input_digest": digest, "points": points }))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn staged_refuses_foreign_directories() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("o");
        fs::create_dir_all(&out).unwrap();
        fs::write(out.join("notes.txt"), "keep").unwrap();
        assert!(staged(&out, |_| Ok(())).is_err());
        assert!(out.join("notes.txt").exists());

        let ours = root.path().join("p");
        staged(&ours, |d| Ok(fs::write(d.join(RUN_FILE), "{}")?)).unwrap();
        staged(&ours, |d| Ok(fs::write(d.join(RUN_FILE), "{\"second\":1}")?)).unwrap();
        assert!(fs::read_to_string(ours.join(RUN_FILE)).unwrap().contains("second"));
        assert!(!root.path().join(".p.partial").exists());
    }
}
