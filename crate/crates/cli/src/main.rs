use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use texcoord::data::checkpoint::load_checkpoint;
use texcoord::data::dataset::Split;
use texcoord::data::png::{read_png, write_png};
use texcoord::data::synth::generate_views;
use texcoord::data::uvm::{read_uvm, write_uvm};
use texcoord::gradsuite::run_suite;
use texcoord::pipeline::{evaluate, train_stage1, train_stage2, PairSource, Pipeline, PipelineConfig, INPAINTER_CKPT};

#[derive(Parser)]
#[command(name = "texcoord", version, about = "Coordinate-based texture inpainting and pose resynthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON pipeline configuration; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `stage1.steps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Option<PipelineConfig>> {
        if self.config.is_none() && self.overrides.is_empty() {
            return Ok(None);
        }
        let base = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => PipelineConfig::default(),
        };
        let cfg = base.with_overrides(self.overrides.iter().map(String::as_str))?;
        cfg.validate()?;
        Ok(Some(cfg))
    }

    fn load_or_default(&self) -> Result<PipelineConfig> {
        Ok(self.load()?.unwrap_or_default())
    }
}

#[derive(Args)]
struct Checkpoints {
    #[arg(long)]
    inpainter: PathBuf,
    #[arg(long)]
    refiner: PathBuf,
}

impl Checkpoints {
    fn pipeline(&self, cfg: &ConfigArgs) -> Result<Pipeline> {
        Ok(Pipeline::load(&self.inpainter, &self.refiner, cfg.load()?)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes a dataset of synthetic posed views (`<id>_<pose>.png/.uvm`).
    GenSynthetic {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        subjects: usize,
        #[arg(long, default_value_t = 4)]
        poses: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Stage 1: trains the inpainter.
    TrainInpainter {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: trains the refiner and discriminator against a frozen inpainter.
    TrainRefiner {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        /// Stage-1 checkpoint; defaults to `<out>/inpainter.ckpt`.
        #[arg(long)]
        inpainter: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Renders the source subject in the target pose.
    Infer {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ckpt: Checkpoints,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        source_uv: PathBuf,
        #[arg(long)]
        target_uv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for C, D, T, W and E images.
        #[arg(long)]
        dump_intermediates: Option<PathBuf>,
    },
    /// Dresses the person in the garment of the cloth view.
    Transfer {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ckpt: Checkpoints,
        #[arg(long)]
        person: PathBuf,
        #[arg(long)]
        person_uv: PathBuf,
        #[arg(long)]
        cloth: PathBuf,
        #[arg(long)]
        cloth_uv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores held-out pairs; writes a per-pair CSV and prints the means.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ckpt: Checkpoints,
        /// Dataset directory; overrides the configured one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_json(v: serde_json::Value) {
    println!("{v}");
}

fn training_config(cfg: &ConfigArgs, seed: u64) -> Result<PipelineConfig> {
    let mut c = cfg.load_or_default()?;
    c.seed = seed;
    Ok(c)
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if !p.is_file() {
        bail!("{what} {} not found", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic {
            cfg,
            out,
            subjects,
            poses,
            seed,
        } => {
            let c = cfg.load_or_default()?;
            if poses < 2 {
                bail!("need at least 2 poses per subject");
            }
            let scene = &c.scene;
            let rotations: Vec<f64> = (0..poses)
                .map(|k| scene.max_rotation_deg * k as f64 / (poses - 1) as f64)
                .collect();
            std::fs::create_dir_all(&out)?;
            for s in 0..subjects {
                let (_, views) = generate_views(seed.wrapping_add(s as u64), scene, &rotations)?;
                for (k, (img, uv)) in views.iter().enumerate() {
                    let stem = format!("subject{s:04}_pose{k:02}");
                    write_png(out.join(format!("{stem}.png")), img)?;
                    write_uvm(out.join(format!("{stem}.uvm")), uv)?;
                }
            }
            print_json(json!({ "subjects": subjects, "poses": poses, "out": out }));
        }
        Command::TrainInpainter { cfg, seed, out } => {
            let c = training_config(&cfg, seed)?;
            let o = train_stage1(&c, Some(&out))?;
            print_json(json!({
                "checkpoint": out.join(INPAINTER_CKPT),
                "steps": o.log.rows.len(),
                "final_loss": o.log.totals().last(),
            }));
        }
        Command::TrainRefiner {
            cfg,
            seed,
            inpainter,
            out,
        } => {
            let c = training_config(&cfg, seed)?;
            let f = inpainter.unwrap_or_else(|| out.join(INPAINTER_CKPT));
            require_file(&f, "stage-1 checkpoint")?;
            let f_params = load_checkpoint(&f)?;
            let o = train_stage2(&c, &f_params, Some(&out))?;
            print_json(json!({
                "checkpoint": out.join(texcoord::pipeline::REFINER_CKPT),
                "steps": o.log.rows.len(),
                "final_loss": o.log.totals().last(),
            }));
        }
        Command::Infer {
            cfg,
            ckpt,
            source,
            source_uv,
            target_uv,
            out,
            dump_intermediates,
        } => {
            let p = ckpt.pipeline(&cfg)?;
            let r = p.infer(&read_png(&source)?, &read_uvm(&source_uv)?, &read_uvm(&target_uv)?)?;
            write_png(&out, &r.output)?;
            if let Some(dir) = &dump_intermediates {
                r.intermediates.write_pngs(dir, p.config.image_extent())?;
            }
            print_json(json!({ "output": out }));
        }
        Command::Transfer {
            cfg,
            ckpt,
            person,
            person_uv,
            cloth,
            cloth_uv,
            out,
        } => {
            let p = ckpt.pipeline(&cfg)?;
            let r = p.transfer_garment(
                &read_png(&person)?,
                &read_uvm(&person_uv)?,
                &read_png(&cloth)?,
                &read_uvm(&cloth_uv)?,
            )?;
            write_png(&out, &r.output)?;
            print_json(json!({ "output": out }));
        }
        Command::Eval {
            cfg,
            ckpt,
            dataset,
            csv,
        } => {
            let mut p = ckpt.pipeline(&cfg)?;
            if dataset.is_some() {
                p.config.dataset = dataset;
            }
            let pairs = PairSource::for_split(&p.config, Split::Test)?;
            let report = evaluate(&p, &pairs)?;
            if let Some(path) = &csv {
                report.write_csv(path)?;
            }
            print_json(json!({
                "pairs": report.rows.len(),
                "ssim": report.mean_ssim(),
                "l1": report.mean_l1(),
                "texture_l1": report.mean_texture_l1(),
            }));
        }
        Command::Gradcheck { seed } => {
            let results = run_suite(seed)?;
            let mut failed = 0;
            for r in &results {
                if !r.passes() {
                    failed += 1;
                }
                print_json(json!({
                    "op": r.op,
                    "shape": r.shape,
                    "relative": r.relative,
                    "elementwise": r.elementwise,
                    "pass": r.passes(),
                }));
            }
            if failed > 0 {
                bail!("{failed} of {} gradient checks failed", results.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", json!({ "error": msg }));
            ExitCode::FAILURE
        }
    }
}
