use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use toonrig::anim::{self, ExpressionMapping};
use toonrig::assembly::{
    assemble, sha256_hex, verify_package, AssembleOptions, HairSlot, LandmarkProvider, ModelPackage,
};
use toonrig::raster::render;
use toonrig::regressor::{init_for_dataset, train, MlpModel};
use toonrig::rig::validate_params;
use toonrig::synthgen::{build_dataset, sample_params, Dataset};
use toonrig::template::{default_atlas, default_rig, render_fixture};
use toonrig::{BinaryMask, Image, ParamVector, PixelLandmarks, Rig};

use crate::config::{pick, PipelineConfig};
use crate::{Cli, CliError, Command, HairSlotArg, ProviderArg, RigCommand};

/// Frames rendered per batch by `animate`, bounding peak memory.
const FRAME_BATCH: usize = 32;

const DEFAULT_SIZE: u32 = 1024;

pub fn dispatch(cli: &Cli, cfg: &PipelineConfig) -> Result<(), CliError> {
    match &cli.command {
        Command::Rig(RigCommand::Init(a)) => {
            let out = pick(a.out.clone(), &cfg.out, "out")?;
            rig_init(cli.size.or(cfg.size).unwrap_or(DEFAULT_SIZE), &out)
        }
        Command::Fixture(a) => {
            let rig = load_rig(&pick(a.rig.clone(), &cfg.rig, "rig")?, cli, cfg)?;
            let atlas = match a.atlas.clone().or_else(|| cfg.atlas.clone()) {
                Some(p) => Image::load_png(&p)?,
                None => default_atlas(&rig),
            };
            let params = match &a.params {
                Some(p) => read_params(p, &rig)?,
                None => match cli.seed.or(cfg.seed) {
                    Some(seed) => sample_params(&rig, 1, seed)?.remove(0),
                    None => ParamVector::zeros(&rig),
                },
            };
            fixture(
                &rig,
                &atlas,
                &params,
                &pick(a.out.clone(), &cfg.out, "out")?,
            )
        }
        Command::Synth(a) => {
            let seed = require_seed(cli, cfg, "synth")?;
            let rig = load_rig(&pick(a.rig.clone(), &cfg.rig, "rig")?, cli, cfg)?;
            let n = pick(a.samples, &cfg.samples, "samples")?;
            if n == 0 {
                return Err(CliError::usage("samples: must be at least 1"));
            }
            synth(&rig, n, seed, &pick(a.out.clone(), &cfg.out, "out")?)
        }
        Command::Train(a) => {
            let seed = require_seed(cli, cfg, "train")?;
            let mut tc = cfg.train.clone();
            tc.seed = seed;
            if let Some(e) = a.epochs {
                tc.epochs = e;
            }
            if let Some(b) = a.batch_size {
                tc.batch_size = b;
            }
            if let Some(lr) = a.learning_rate {
                tc.learning_rate = lr;
            }
            tc.validate()?;
            let data = pick(a.dataset.clone(), &cfg.dataset, "dataset")?;
            let out = pick(a.out.clone(), &cfg.out, "out")?;
            run_train(&data, cfg.hidden, &tc, &out)
        }
        Command::Fit(a) => fit(cli, cfg, a),
        Command::Animate(a) => {
            let out = pick(a.out.clone(), &cfg.out, "out")?;
            animate(&a.package, &a.timeline, a.mapping.as_deref(), &out)
        }
        Command::Render(a) => {
            let pkg = ModelPackage::load(&a.package)?;
            let params = match &a.params {
                Some(p) => read_params(p, &pkg.rig)?,
                None => pkg.params.clone(),
            };
            let img = render(&pkg.rig, &pkg.atlas, &params, None)?;
            let out = pick(a.out.clone(), &cfg.out, "out")?;
            img.save_png(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Verify(a) => verify(&a.package),
    }
}

fn require_seed(cli: &Cli, cfg: &PipelineConfig, cmd: &str) -> Result<u64, CliError> {
    cli.seed
        .or(cfg.seed)
        .ok_or_else(|| CliError::usage(format!("`{cmd}` requires --seed")))
}

fn load_rig(path: &Path, cli: &Cli, cfg: &PipelineConfig) -> Result<Rig, CliError> {
    let rig = Rig::load(path)?;
    if let Some(s) = cli.size.or(cfg.size) {
        if s != rig.canvas_size {
            return Err(CliError::usage(format!(
                "size: --size {s} disagrees with the rig canvas {}",
                rig.canvas_size
            )));
        }
    }
    Ok(rig)
}

fn read_params(path: &Path, rig: &Rig) -> Result<ParamVector, CliError> {
    let text = std::fs::read(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_slice(&text).map_err(|e| toonrig::Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
    let params = ParamVector::from_json(&value)?;
    validate_params(&params, rig).map_err(|v| {
        CliError::usage(format!(
            "{}: {}",
            path.display(),
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        ))
    })?;
    Ok(params)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| {
        CliError::Core(toonrig::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Core(toonrig::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| {
        CliError::Core(toonrig::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    Ok(sha256_hex(&bytes))
}

fn rig_init(size: u32, out: &Path) -> Result<(), CliError> {
    crate::config::check_size(size)?;
    create_dir(out)?;
    let rig = default_rig(size);
    rig.save(&out.join("rig.json"))?;
    default_atlas(&rig).save_png(&out.join("atlas.png"))?;
    println!("wrote template rig ({size}x{size}) to {}", out.display());
    Ok(())
}

fn fixture(rig: &Rig, atlas: &Image, params: &ParamVector, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    let (portrait, landmarks) = render_fixture(rig, atlas, params)?;
    portrait.save_png(&out.join("portrait.png"))?;
    landmarks.save(&out.join("landmarks.json"))?;
    write_json(&out.join("params.json"), &params.to_json(rig))?;
    println!("wrote fixture to {}", out.display());
    Ok(())
}

fn synth(rig: &Rig, n: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let t = Instant::now();
    let data = build_dataset(rig, n, seed)?;
    data.save(out)?;
    let meta = data.meta();
    println!(
        "wrote {} samples ({} dropped) to {} in {:.1}s",
        meta.sample_count,
        meta.dropped,
        out.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run_train(
    data: &Path,
    hidden: [usize; 3],
    cfg: &toonrig::regressor::TrainConfig,
    out: &Path,
) -> Result<(), CliError> {
    let t = Instant::now();
    let dataset = Dataset::load(data)?;
    let init = init_for_dataset(&dataset, hidden, cfg.seed)?;
    let outcome = train(&init, &dataset, cfg)?;
    outcome.model.save(out)?;
    let history = out.with_extension("history.json");
    write_json(&history, &outcome.history)?;
    let best = outcome.best();
    println!(
        "trained {} epochs, best epoch {} (train {:.4e}, validation {:.4e}) in {:.1}s; wrote {}",
        outcome.history.len(),
        best.epoch,
        best.train,
        best.validation,
        t.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn fit(cli: &Cli, cfg: &PipelineConfig, a: &crate::FitArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let rig_path = pick(a.rig.clone(), &cfg.rig, "rig")?;
    let model_path = pick(a.model.clone(), &cfg.model, "model")?;
    let out = pick(a.out.clone(), &cfg.out, "out")?;

    let rig = load_rig(&rig_path, cli, cfg)?;
    let model = MlpModel::load(&model_path)?;
    let portrait = Image::load_png(&a.portrait)?;
    let landmarks = PixelLandmarks::load(&a.landmarks)?;

    let mut inputs: BTreeMap<String, String> = BTreeMap::new();
    inputs.insert("portrait".into(), file_hash(&a.portrait)?);
    inputs.insert("landmarks".into(), file_hash(&a.landmarks)?);
    inputs.insert("rig".into(), file_hash(&rig_path)?);

    let provider = match (a.provider, &a.base_landmarks) {
        (ProviderArg::Warped, None) => LandmarkProvider::Warped,
        (ProviderArg::Markers, None) => LandmarkProvider::MarkerPath,
        (ProviderArg::External, Some(p)) => {
            inputs.insert("base_landmarks".into(), file_hash(p)?);
            LandmarkProvider::External(PixelLandmarks::load(p)?)
        }
        (ProviderArg::External, None) => {
            return Err(CliError::usage(
                "--provider external needs --base-landmarks",
            ))
        }
        (_, Some(_)) => {
            return Err(CliError::usage(
                "--base-landmarks is only used with --provider external",
            ))
        }
    };

    let hair = match (&a.hair, &a.hair_mask) {
        (Some(h), Some(m)) => {
            inputs.insert("hair".into(), file_hash(h)?);
            inputs.insert("hair_mask".into(), file_hash(m)?);
            let slot = match a.hair_slot {
                HairSlotArg::Front => HairSlot::Front,
                HairSlotArg::Behind => HairSlot::BehindFace,
            };
            Some((Image::load_png(h)?, BinaryMask::load_png(m)?, slot))
        }
        _ => None,
    };

    let mut repaint = cfg.repaint;
    if let Some(d) = a.dilation {
        repaint.dilation = d;
    }
    if let Some(t) = a.alpha_threshold {
        repaint.alpha_threshold = t;
    }
    if repaint.dilation > crate::config::MAX_DILATION {
        return Err(CliError::usage(format!(
            "dilation: must be at most {}",
            crate::config::MAX_DILATION
        )));
    }
    let opts = AssembleOptions {
        provider,
        repaint,
        hair,
        input_hashes: inputs,
        model_sha256: Some(file_hash(&model_path)?),
    };
    let load_time = start.elapsed();

    let done = assemble(&rig, &portrait, &landmarks, &model, &opts)?;
    for w in &done.warnings {
        log::warn!("{w}");
    }
    let t = Instant::now();
    let mut package = done.package;
    package.save(&out)?;
    let save_time = t.elapsed();

    let mut stages: Vec<(&str, Duration)> = vec![("load", load_time)];
    stages.extend(done.times.iter().copied());
    stages.push(("save", save_time));
    let total = start.elapsed();
    println!("{:<16}{:>10}", "stage", "ms");
    for (name, d) in &stages {
        println!("{name:<16}{:>10.1}", d.as_secs_f64() * 1e3);
    }
    println!("{:<16}{:>10.1}", "total", total.as_secs_f64() * 1e3);
    println!("wrote package to {}", out.display());
    Ok(())
}

fn animate(
    package: &Path,
    timeline: &Path,
    mapping: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let pkg = ModelPackage::load(package)?;
    let frames = anim::load_timeline(timeline)?;
    let mapping = match mapping {
        Some(p) => {
            let (m, warnings) = anim::load_mapping(p, &pkg.rig)?;
            for w in warnings {
                log::warn!("{w}");
            }
            m
        }
        None => {
            let m = ExpressionMapping::default_mapping();
            m.validate(&pkg.rig)?;
            m
        }
    };
    create_dir(out)?;
    let mut written = 0;
    for chunk in frames.chunks(FRAME_BATCH) {
        for img in anim::render_timeline(&pkg, chunk, &mapping)? {
            let path: PathBuf = out.join(anim::frame_file_name(written));
            img.save_png(&path)?;
            written += 1;
        }
    }
    println!("wrote {written} frames to {}", out.display());
    Ok(())
}

fn verify(dir: &Path) -> Result<(), CliError> {
    let report = verify_package(dir)?;
    for c in &report.checks {
        println!(
            "{:<4} {:<14} {}",
            if c.ok { "ok" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    match report.first_failure() {
        None => Ok(()),
        Some(c) => Err(CliError::usage(format!(
            "package check `{}` failed: {}",
            c.name, c.detail
        ))),
    }
}
