//! Command-line surface: argument parsing and the subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sdfseg_core::eval::{f1_iou, uncertainty_maps, MetricReport};
use sdfseg_core::nn::ScoreModel;
use sdfseg_core::rng::{self, domain};
use sdfseg_core::sampler::{ensemble_sample, SampleEnsemble};
use sdfseg_core::sde::perturb;
use sdfseg_core::sdf::{boundary_distance_sq, decode_mask, encode_sdf};
use sdfseg_core::train::{self, generate_synthetic, target_field, TargetMode, TrainExample, TrainObserver, TrainState};
use sdfseg_core::Field;

use crate::config::RunConfig;
use crate::dataset;
use crate::error::{CliError, Result};
use crate::formats;

#[derive(Debug, Parser)]
#[command(name = "sdfseg", version, about = "Score-based segmentation over truncated signed distance fields")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (output file for `encode`/`decode`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override any config key, e.g. `--set width=16`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Encode a mask PGM as a truncated SDF raster.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Threshold an SDF raster into a mask PGM.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Forward-corrupt one sample at several times in both target modes.
    Corrupt {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        index: Option<usize>,
        /// Comma-separated times in [0, 1].
        #[arg(long)]
        t: Option<String>,
    },
    /// Train a score model on a dataset directory.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        mode: Option<String>,
        /// Continue from `<out>/model.scm`.
        #[arg(long)]
        resume: bool,
    },
    /// Draw sample ensembles for the images of a dataset directory.
    Sample {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ensemble: Option<usize>,
        /// Only the first N images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score predicted masks against ground truth.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: String| cfg.set(k, &v);
    for kv in &cli.global.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        set(k.trim(), v.to_string())?;
    }
    if let Some(s) = cli.global.seed {
        set("seed", s.to_string())?;
    }
    let path = |p: &PathBuf| p.display().to_string();
    match &cli.command {
        Command::Gen { n, grid } => {
            if let Some(n) = n {
                set("n", n.to_string())?;
            }
            if let Some(g) = grid {
                set("grid", g.to_string())?;
            }
        }
        Command::Encode { delta, .. } => {
            if let Some(d) = delta {
                set("delta", d.to_string())?;
            }
        }
        Command::Decode { tau, .. } => {
            if let Some(t) = tau {
                set("threshold_tau", t.to_string())?;
            }
        }
        Command::Corrupt { data, index, t } => {
            if let Some(d) = data {
                set("data", path(d))?;
            }
            if let Some(i) = index {
                set("sample_index", i.to_string())?;
            }
            if let Some(t) = t {
                set("t_list", t.clone())?;
            }
        }
        Command::Train { data, steps, mode, .. } => {
            if let Some(d) = data {
                set("data", path(d))?;
            }
            if let Some(s) = steps {
                set("total_steps", s.to_string())?;
            }
            if let Some(m) = mode {
                set("target_mode", m.clone())?;
            }
        }
        Command::Sample {
            model,
            data,
            ensemble,
            limit,
        } => {
            if let Some(m) = model {
                set("model", path(m))?;
            }
            if let Some(d) = data {
                set("data", path(d))?;
            }
            if let Some(r) = ensemble {
                set("ensemble", r.to_string())?;
            }
            if let Some(l) = limit {
                set("max_images", l.to_string())?;
            }
        }
        Command::Eval { pred, gt } => {
            if let Some(p) = pred {
                set("pred", path(p))?;
            }
            if let Some(g) = gt {
                set("gt", path(g))?;
            }
        }
    }
    cfg.validate()?;
    let out = cli.global.out.clone();
    let force = cli.global.force;
    let need_out = || out.clone().ok_or_else(|| CliError::Usage("--out is required".into()));
    match cli.command {
        Command::Gen { .. } => cmd_gen(&cfg, &need_out()?, force),
        Command::Encode { input, .. } => cmd_encode(&cfg, &input, &need_out()?, force),
        Command::Decode { input, .. } => cmd_decode(&cfg, &input, &need_out()?, force),
        Command::Corrupt { .. } => cmd_corrupt(&cfg, &need_out()?, force),
        Command::Train { resume, .. } => cmd_train(&cfg, &need_out()?, force, resume),
        Command::Sample { .. } => cmd_sample(&cfg, &need_out()?, force),
        Command::Eval { .. } => cmd_eval(&cfg, &need_out()?, force),
    }
}

fn check_file_target(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    Ok(())
}

/// Creates an output directory; an existing non-empty one needs `force`.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !force {
        let mut it = fs::read_dir(dir).map_err(CliError::io(dir))?;
        if it.next().is_some() {
            return Err(CliError::Usage(format!(
                "{} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Appends one JSON object per line to `<dir>/manifest.jsonl`.
fn append_manifest(dir: &Path, value: &serde_json::Value) -> Result<()> {
    let path = dir.join("manifest.jsonl");
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(CliError::io(&path))?;
    writeln!(f, "{value}").map_err(CliError::io(&path))
}

fn run_header(command: &str, cfg: &RunConfig) -> serde_json::Value {
    json!({
        "command": command,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "config": cfg.canonical(),
    })
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let sdf_cfg = cfg.sdf_config();
    let samples = generate_synthetic(cfg.n, cfg.grid, &cfg.shape_params(), &sdf_cfg, cfg.seed)?;
    dataset::prepare_dir(out, force)?;
    dataset::write(out, &samples, cfg.grid, cfg.seed, sdf_cfg.delta, &cfg.hash())
}

pub fn cmd_encode(cfg: &RunConfig, input: &Path, out: &Path, force: bool) -> Result<()> {
    let mask = formats::read_mask(input)?;
    let sdf_cfg = match cfg.delta {
        Some(_) => cfg.sdf_config(),
        None => sdfseg_core::sdf::SdfConfig::for_grid(mask.width(), mask.height()),
    };
    check_file_target(out, force)?;
    formats::write_sdf(out, &encode_sdf(&mask, &sdf_cfg))
}

pub fn cmd_decode(cfg: &RunConfig, input: &Path, out: &Path, force: bool) -> Result<()> {
    let (field, _) = formats::read_raster(input)?;
    check_file_target(out, force)?;
    formats::write_mask(out, &decode_mask(&field, cfg.threshold_tau))
}

/// Thresholded corruption of one sample at every `t` of the config, in both
/// target modes. Both modes share the noise draw at each `t`.
pub fn cmd_corrupt(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let data = cfg.require_path("data")?;
    let item = dataset::read_item(&data, cfg.sample_index)?;
    let sched = cfg.schedule()?;
    prepare_out(out, force)?;
    let near = boundary_distance_sq(&item.mask)
        .map(|d| d.into_iter().map(|d| d <= 4).collect::<Vec<_>>())
        .unwrap_or_else(|| vec![false; item.mask.labels().len()]);
    let mut csv = String::from("t,mode,sigma,foreground_fraction,flipped_fraction,flipped_near,flipped_far\n");
    for (k, &t) in cfg.t_list.iter().enumerate() {
        let sigma = sched.sigma_at(t)?;
        let mut z = vec![0.0; item.mask.labels().len()];
        rng::fill_standard_normal(&mut rng::stream(cfg.seed, domain::CORRUPT, k as u64), &mut z);
        for mode in [TargetMode::Sdf, TargetMode::Binary] {
            let m0 = target_field(&item.mask, &item.sdf, mode);
            let mt = perturb(&m0, sigma, &z)?;
            let mask = decode_mask(&mt, cfg.threshold_tau);
            let stem = format!("t{k:02}.{}", mode.as_str());
            formats::write_raster(&out.join(format!("{stem}.sdf.bin")), &mt, item.sdf.delta())?;
            formats::write_mask(&out.join(format!("{stem}.mask.pgm")), &mask)?;
            let (mut flips, mut fn_, mut ff, mut nn, mut nf) = (0usize, 0usize, 0usize, 0usize, 0usize);
            for ((&a, &b), &is_near) in mask.labels().iter().zip(item.mask.labels()).zip(&near) {
                let flipped = a != b;
                flips += usize::from(flipped);
                if is_near {
                    nn += 1;
                    fn_ += usize::from(flipped);
                } else {
                    nf += 1;
                    ff += usize::from(flipped);
                }
            }
            let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            csv.push_str(&format!(
                "{t:?},{},{sigma:?},{:?},{:?},{:?},{:?}\n",
                mode.as_str(),
                mask.foreground_fraction(),
                frac(flips, mask.labels().len()),
                frac(fn_, nn),
                frac(ff, nf),
            ));
        }
    }
    formats::write_bytes(&out.join("corrupt.csv"), csv.as_bytes())?;
    append_manifest(out, &run_header("corrupt", cfg))
}

struct CliObserver<'a> {
    out: &'a Path,
    losses: String,
    error: Option<CliError>,
}

impl CliObserver<'_> {
    fn flush(&mut self) -> Result<()> {
        let path = self.out.join("loss.csv");
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(CliError::io(&path))?;
        f.write_all(self.losses.as_bytes()).map_err(CliError::io(&path))?;
        self.losses.clear();
        Ok(())
    }
}

impl TrainObserver for CliObserver<'_> {
    fn on_step(&mut self, step: usize, loss: f64) -> sdfseg_core::Result<()> {
        self.losses.push_str(&format!("{step},{loss:?}\n"));
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> sdfseg_core::Result<()> {
        let res = formats::write_checkpoint(&self.out.join("model.scm"), &state.model, Some(&state.adam))
            .and_then(|()| self.flush());
        res.map_err(|e| {
            let msg = e.to_string();
            self.error = Some(e);
            sdfseg_core::Error::Callback(msg)
        })
    }
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, force: bool, resume: bool) -> Result<()> {
    let data = cfg.require_path("data")?;
    let (_, items) = dataset::read(&data, 0)?;
    let examples: Vec<TrainExample> = items.iter().map(TrainExample::from).collect();
    let tcfg = cfg.train_config();
    let ckpt_path = out.join("model.scm");
    let loss_path = out.join("loss.csv");
    let mut state = if resume {
        let ck = formats::read_checkpoint(&ckpt_path)?;
        if ck.model.architecture() != &cfg.architecture() {
            return Err(CliError::Config("checkpoint architecture differs from the config".into()));
        }
        let adam = ck
            .adam
            .ok_or_else(|| CliError::format(&ckpt_path, "checkpoint has no optimizer state"))?;
        let step = adam.step as usize;
        // keep the loss lines of completed steps only
        let text = fs::read_to_string(&loss_path).map_err(CliError::io(&loss_path))?;
        let kept: String = text
            .lines()
            .enumerate()
            .filter(|(i, _)| *i <= step)
            .map(|(_, l)| format!("{l}\n"))
            .collect();
        formats::write_bytes(&loss_path, kept.as_bytes())?;
        TrainState {
            model: ck.model,
            adam,
            step,
        }
    } else {
        prepare_out(out, force)?;
        formats::write_bytes(&loss_path, b"step,loss\n")?;
        TrainState::new(ScoreModel::init(cfg.architecture(), cfg.seed)?)
    };
    let start = Instant::now();
    let first_step = state.step;
    let mut obs = CliObserver {
        out,
        losses: String::new(),
        error: None,
    };
    let trace = match train::train(&examples, &tcfg, &mut state, &mut obs) {
        Ok(t) => t,
        Err(e) => {
            // losses up to the failure are still useful
            let _ = obs.flush();
            return Err(obs.error.take().unwrap_or_else(|| e.into()));
        }
    };
    let mut header = run_header("train", cfg);
    header["first_step"] = json!(first_step);
    header["steps"] = json!(state.step);
    header["final_loss"] = json!(trace.last());
    header["elapsed_s"] = json!(start.elapsed().as_secs_f64());
    append_manifest(out, &header)
}

/// Rounds every value to `f32` precision, matching what the raster files hold.
fn to_f32_precision(f: Field) -> Field {
    let (w, h) = f.dims();
    Field::new(w, h, f.into_values().into_iter().map(|v| f64::from(v as f32)).collect())
        .expect("same dimensions")
}

pub fn cmd_sample(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let model_path = cfg.require_path("model")?;
    let data = cfg.require_path("data")?;
    let ck = formats::read_checkpoint(&model_path)?;
    let (manifest, items) = dataset::read(&data, cfg.max_images)?;
    let sched = cfg.schedule()?;
    let scfg = cfg.sampler_config();
    let model = ck.model.to_inference();
    prepare_out(out, force)?;
    let mut header = run_header("sample", cfg);
    header["model"] = json!(model_path.display().to_string());
    header["images"] = json!(items.len());
    append_manifest(out, &header)?;
    for item in &items {
        let start = Instant::now();
        let seed = rng::derive_seed(cfg.seed, domain::ENSEMBLE, item.index as u64);
        let ens = ensemble_sample(&model, &item.image, &sched, &scfg, seed)?;
        let stats = ens.stats;
        let samples: Vec<Field> = ens.samples.into_iter().map(to_f32_precision).collect();
        let ens = SampleEnsemble::from_samples(samples, scfg.threshold_tau)?;
        let delta = manifest.delta;
        for (j, s) in ens.samples.iter().enumerate() {
            formats::write_raster(&dataset::file(out, item.index, &format!("r{j:03}.sdf.bin")), s, delta)?;
        }
        formats::write_raster(&dataset::file(out, item.index, "mean.sdf.bin"), &ens.mean, delta)?;
        formats::write_raster(&dataset::file(out, item.index, "std.sdf.bin"), &ens.std, delta)?;
        formats::write_mask(&dataset::file(out, item.index, "mask.pgm"), &ens.mmse_mask)?;
        formats::write_mask(
            &dataset::file(out, item.index, "single.mask.pgm"),
            &decode_mask(&ens.samples[0], scfg.threshold_tau),
        )?;
        append_manifest(
            out,
            &json!({
                "id": dataset::stem(item.index),
                "seed": seed,
                "samples": ens.len(),
                "zero_score_events": stats.zero_score_events,
                "elapsed_s": start.elapsed().as_secs_f64(),
            }),
        )?;
    }
    Ok(())
}

/// Reads the per-image samples written by `sample`, if present.
fn read_ensemble(dir: &Path, index: usize, tau: f64) -> Result<Option<SampleEnsemble>> {
    let mut samples = Vec::new();
    loop {
        let p = dataset::file(dir, index, &format!("r{:03}.sdf.bin", samples.len()));
        if !p.exists() {
            break;
        }
        samples.push(formats::read_raster(&p)?.0);
    }
    if samples.is_empty() {
        return Ok(None);
    }
    Ok(Some(SampleEnsemble::from_samples(samples, tau)?))
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let pred = cfg.require_path("pred")?;
    let gt = cfg.require_path("gt")?;
    // `sample_%05d.single.mask.pgm` does not match: the id must be 5 digits
    let ids = dataset::indices_with(&pred, "mask.pgm")?;
    if ids.is_empty() {
        return Err(CliError::Data(format!("no predicted masks in {}", pred.display())));
    }
    prepare_out(out, force)?;
    let mut csv = String::from("image_id,f1,iou\n");
    let mut entries = Vec::new();
    let mut single = Vec::new();
    let mut per_image = Vec::new();
    for &i in &ids {
        let item = dataset::read_item(&gt, i)?;
        let p = formats::read_mask(&dataset::file(&pred, i, "mask.pgm"))?;
        let e = f1_iou(&p, &item.mask)?;
        csv.push_str(&format!("{},{:?},{:?}\n", dataset::stem(i), e.f1, e.iou));
        entries.push(e);
        let single_path = dataset::file(&pred, i, "single.mask.pgm");
        if single_path.exists() {
            single.push(f1_iou(&formats::read_mask(&single_path)?, &item.mask)?);
        }
        if let Some(ens) = read_ensemble(&pred, i, cfg.threshold_tau)? {
            let u = uncertainty_maps(&ens, &item.mask, &item.sdf, cfg.band)?;
            formats::write_raster(&dataset::file(out, i, "std.sdf.bin"), &u.std, item.sdf.delta())?;
            formats::write_raster(&dataset::file(out, i, "error.sdf.bin"), &u.error, item.sdf.delta())?;
            formats::write_mask(&dataset::file(out, i, "xor.mask.pgm"), &u.xor)?;
            per_image.push(json!({
                "id": dataset::stem(i),
                "band_pixels": u.band_pixels,
                "band_mean_std": u.band_mean_std,
                "far_mean_std": u.far_mean_std,
                "std_error_rank_correlation": u.std_error_rank_correlation,
            }));
        }
    }
    let report = MetricReport::from_entries(entries);
    csv.push_str(&format!("mean,{:?},{:?}\n", report.mean_f1, report.mean_iou));
    formats::write_bytes(&out.join("metrics.csv"), csv.as_bytes())?;

    let mut doc = json!({
        "images": ids.len(),
        "averaging": "per-image",
        "mean_f1": report.mean_f1,
        "mean_iou": report.mean_iou,
    });
    if single.len() == ids.len() {
        let s = MetricReport::from_entries(single);
        doc["single_sample"] = json!({ "mean_f1": s.mean_f1, "mean_iou": s.mean_iou });
    }
    if !per_image.is_empty() {
        let n = per_image.len() as f64;
        let band_wins = per_image
            .iter()
            .filter(|v| v["band_mean_std"].as_f64() > v["far_mean_std"].as_f64())
            .count();
        let corr = per_image
            .iter()
            .map(|v| v["std_error_rank_correlation"].as_f64().unwrap_or(0.0))
            .sum::<f64>()
            / n;
        doc["uncertainty"] = json!({
            "band": cfg.band,
            "band_exceeds_far_fraction": band_wins as f64 / n,
            "mean_rank_correlation": corr,
            "per_image": per_image,
        });
    }
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    formats::write_bytes(&out.join("report.json"), text.as_bytes())?;
    append_manifest(out, &run_header("eval", cfg))
}
