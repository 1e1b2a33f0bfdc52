//! The `iidm` command line. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::distill::Distilled;
use crate::error::{Error, Result};
use crate::raster::{read_raster, read_scene, write_raster};

use super::*;

const MODULES_HELP: &str = "\
Modules are switched in the [modules] section of the config file. Switched off:
  mask           no mask input channel, loss over every pixel, output not zeroed,
                 metrics over every pixel
  vgg, kd_vgg    conditional features are the normalized bands (the two are
                 mutually exclusive)
  attention_mlp  fusion is channel concatenation followed by a 1x1 conv

Layout under --out: scene_0 .. scene_{n-1} (the last is held out), distill.ckpt,
model.ckpt, loss.csv, pred.ras, metrics.csv, baseline.csv, ablation.csv.

Exit codes: 0 success, 1 usage error, 2 runtime error.
Environment: IIDM_THREADS caps the number of ablation rows run at once.";

#[derive(Debug, Parser)]
#[command(name = "iidm", version, about = "Forest carbon-density estimation with a distilled-feature diffusion model", after_help = MODULES_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; unknown keys are errors.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Artifact directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Scene side in pixels; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    size: Option<usize>,
    /// Diffusion training steps; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic scenes.
    Gen,
    /// Distill the teacher into the slim coder.
    Distill,
    /// Train the diffusion model on every scene but the last.
    Train,
    /// Estimate a density map with the trained model.
    Estimate {
        /// Scene directory; defaults to the held-out scene.
        #[arg(long, value_name = "DIR")]
        scene: Option<PathBuf>,
    },
    /// Score a predicted raster against the truth.
    Eval {
        #[arg(long, value_name = "PATH")]
        pred: PathBuf,
        #[arg(long, value_name = "PATH")]
        truth: PathBuf,
        /// Forest mask; without it every pixel counts.
        #[arg(long, value_name = "PATH")]
        mask: Option<PathBuf>,
    },
    /// Run the twelve-row module ablation.
    Ablate,
    /// Fit and score the OLS baseline.
    Baseline,
}

fn config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(n) = c.size {
        cfg.scene.size = n;
    }
    if let Some(n) = c.steps {
        cfg.train.steps = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn need(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput { path: path.to_path_buf(), msg: format!("{what} not found") })
    }
}

fn load_distilled(out: &Path) -> Result<Distilled> {
    let p = out.join("distill.ckpt");
    need(&p, "distillation checkpoint; run `distill` first")?;
    Distilled::from_checkpoint(&Checkpoint::read(&p)?)
}

fn write_distill_outputs(out: &Path, d: &Distilled) -> Result<()> {
    d.to_checkpoint().write(out.join("distill.ckpt"))?;
    let mut s = String::from("stage,step,loss\n");
    for (i, l) in d.teacher_curve.iter().enumerate() {
        s += &format!("teacher,{},{l}\n", i + 1);
    }
    for (n, c) in d.pair_curves.iter().enumerate() {
        for (i, l) in c.iter().enumerate() {
            s += &format!("pair{},{},{l}\n", n + 1, i + 1);
        }
    }
    fs::write(out.join("distill_loss.csv"), s)?;
    Ok(())
}

fn execute(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    let out = cfg.out.as_path();
    let n = cfg.scene.n_scenes;
    match cmd {
        Command::Gen => {
            fs::create_dir_all(out)?;
            write_scenes(out, &generate_scenes(cfg)?)?;
            fs::write(out.join("config.toml"), cfg.to_toml())?;
            println!("wrote {n} scenes to {}", out.display());
        }
        Command::Distill => {
            let scenes = read_scenes(out, n)?;
            let (train, _) = split(&scenes)?;
            let d = run_distill(cfg, train)?;
            write_distill_outputs(out, &d)?;
            println!("channels {:?}, compression {:.2}x", d.channels, d.compression()?);
        }
        Command::Train => {
            let scenes = read_scenes(out, n)?;
            let (train, _) = split(&scenes)?;
            let d = if cfg.modules.needs_distillation() { Some(load_distilled(out)?) } else { None };
            let (model, curve) = train_model(cfg, train, d.as_ref())?;
            model.to_checkpoint().write(out.join("model.ckpt"))?;
            write_loss_csv(&out.join("loss.csv"), &curve)?;
            println!("trained {} steps, final loss {}", curve.len(), curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::Estimate { scene } => {
            let ck = out.join("model.ckpt");
            need(&ck, "model checkpoint; run `train` first")?;
            let model = Model::from_checkpoint(&Checkpoint::read(&ck)?)?;
            let dir = scene.clone().unwrap_or_else(|| scene_dir(out, n - 1));
            need(&dir, "scene directory")?;
            let s = read_scene(&dir)?;
            write_raster(&model.estimate(&s.imagery, &s.mask, estimate_seed(cfg))?, out.join("pred.ras"))?;
            println!("wrote {}", out.join("pred.ras").display());
        }
        Command::Eval { pred, truth, mask } => {
            need(pred, "prediction raster")?;
            need(truth, "truth raster")?;
            let mask = match mask {
                Some(m) => {
                    need(m, "mask raster")?;
                    Some(read_raster(m)?)
                }
                None => None,
            };
            let r = evaluate_run(&read_raster(pred)?, &read_raster(truth)?, mask.as_ref())?;
            fs::create_dir_all(out)?;
            write_metrics_csv(&out.join("metrics.csv"), &[("eval", &r)])?;
            println!("{}\n{}", crate::metrics::MetricReport::CSV_HEADER, r.csv_row("eval"));
        }
        Command::Baseline => {
            let scenes = read_scenes(out, n)?;
            let (train, test) = split(&scenes)?;
            let b = ols_baseline(train, test)?;
            write_metrics_csv(&out.join("baseline.csv"), &[("ols", &b.report)])?;
            let mut coef = format!("term,value\nintercept,{}\n", b.fit.intercept);
            for (i, c) in b.fit.coef.iter().enumerate() {
                coef += &format!("band{i},{c}\n");
            }
            fs::write(out.join("ols_coef.csv"), coef)?;
            write_raster(&b.pred, out.join("ols_pred.ras"))?;
            println!("{}\n{}", crate::metrics::MetricReport::CSV_HEADER, b.report.csv_row("ols"));
        }
        Command::Ablate => {
            let scenes = read_scenes(out, n)?;
            let (train, _) = split(&scenes)?;
            let d = if out.join("distill.ckpt").exists() {
                load_distilled(out)?
            } else {
                let d = run_distill(cfg, train)?;
                write_distill_outputs(out, &d)?;
                d
            };
            let table = run_ablation(cfg, &scenes, Some(&d), thread_cap(), Some(&out.join("ablation")));
            fs::write(out.join("ablation.csv"), table.to_csv())?;
            for r in &table.rows {
                if let Err(e) = &r.result {
                    eprintln!("row {} failed: {e}", r.no);
                }
            }
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match config(&cli.common).and_then(|cfg| execute(&cli.command, &cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
