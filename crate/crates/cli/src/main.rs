use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sdam_core::ablation::{self, Sweep};
use sdam_core::backend::http::BackendServer;
use sdam_core::evaluation::{self, MetricsReport};
use sdam_core::frame_store::{self, Annotations};
use sdam_core::pipeline::run_pipeline;
use sdam_core::{
    sampler, Backends, MaskSequence, ObjectId, PipelineConfig, PipelineError, SyntheticScene,
};

#[derive(Parser)]
#[command(
    name = "sdam",
    version,
    about = "Keyframe-driven video object segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the keyframe candidates for a frame directory as JSON.
    Sample {
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment the object a query refers to across a whole sequence.
    Run(RunArgs),
    /// Compare predicted and ground-truth mask directories.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Object ids to score; every ground-truth object by default.
        #[arg(long, value_delimiter = ',')]
        objects: Vec<ObjectId>,
        #[arg(long, default_value_t = 5)]
        window: usize,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-frame J&F with its moving average, as CSV.
    Stability {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',')]
        objects: Vec<ObjectId>,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic scene to `frames/`, `masks/` and `annotations.json`.
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep settings over the built-in synthetic corpus.
    Ablate {
        /// Sweeps to run; all of them by default.
        #[arg(long, value_enum, value_delimiter = ',')]
        sweep: Vec<SweepArg>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve the stub backends for a rendered scene over HTTP.
    Serve {
        /// Directory written by `sdam synth`.
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8000")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    A,
    Strategy,
    NKeyframes,
}

impl From<SweepArg> for Sweep {
    fn from(s: SweepArg) -> Self {
        match s {
            SweepArg::A => Sweep::Fusion,
            SweepArg::Strategy => Sweep::Strategy,
            SweepArg::NKeyframes => Sweep::Keyframes,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fusion weight on the grounder confidence.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    k_percentile: Option<f64>,
    /// Gaussian width, or `auto`.
    #[arg(long)]
    sigma: Option<String>,
    /// Anchor interval, or `auto`.
    #[arg(long)]
    anchors: Option<String>,
    #[arg(long)]
    n_keyframes: Option<usize>,
    /// Override any config field by dotted name, e.g. `fusion.a=0.75`.
    /// Applied in order, after the flags above.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let flags = [
            ("fusion.a", self.a.map(|v| v.to_string())),
            (
                "sampler.k_percentile",
                self.k_percentile.map(|v| v.to_string()),
            ),
            ("sampler.sigma", self.sigma.clone()),
            ("sampler.anchor_interval", self.anchors.clone()),
            ("n_keyframes", self.n_keyframes.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for o in &self.overrides {
            let (key, value) = o
                .split_once('=')
                .with_context(|| format!("override {o:?} is not KEY=VALUE"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Use the in-process stub backends for every role.
    #[arg(long)]
    stub: bool,
    /// Annotations for the stub grounder; `annotations.json` beside the
    /// frame directory by default.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Ground-truth masks; when given, `report.json` is written too.
    #[arg(long)]
    gt: Option<PathBuf>,
}

/// Locate the stub inputs next to a `frames/` directory laid out by `synth`.
fn stub_backends(frames: &Path, annotations: Option<&Path>) -> Result<Backends> {
    let root = frames.parent().unwrap_or(Path::new("."));
    let ann_path = annotations
        .map(Path::to_path_buf)
        .unwrap_or_else(|| root.join("annotations.json"));
    let ann = if ann_path.exists() {
        Annotations::load(&ann_path).with_context(|| format!("reading {}", ann_path.display()))?
    } else if annotations.is_some() {
        bail!("annotations file {} does not exist", ann_path.display());
    } else {
        Annotations::default()
    };
    let truth_dir = root.join("masks");
    let truth = if truth_dir.is_dir() && truth_dir != frames {
        Some(frame_store::read_masks(&truth_dir)?)
    } else {
        None
    };
    Ok(Backends::stubs_for(ann, truth))
}

fn run(args: &RunArgs) -> Result<()> {
    let mut cfg = args.config.build()?;
    if args.stub {
        cfg.backends = Default::default();
    }
    cfg.output_dir = Some(args.out.clone());
    let seq = frame_store::load_sequence(&args.frames)
        .with_context(|| format!("loading frames from {}", args.frames.display()))?;
    let stubs = stub_backends(&args.frames, args.annotations.as_deref())?;
    let backends = Backends::from_config(&cfg.backends, &stubs).map_err(PipelineError::from)?;
    let out = run_pipeline(&seq, &args.query, &cfg, &backends)?;
    out.write_to(&args.out)?;
    eprintln!(
        "key frame {} ({} frames) -> {}",
        out.manifest.decision.key_t,
        seq.len(),
        args.out.display()
    );
    if let Some(gt_dir) = &args.gt {
        let gt = frame_store::read_masks(gt_dir)?;
        // Score the objects the grounder picked out, not the whole scene.
        let ids: BTreeSet<ObjectId> = out
            .manifest
            .grounding
            .frames
            .iter()
            .flat_map(|f| f.present_objects().map(|o| o.id))
            .collect();
        let ids: Vec<ObjectId> = ids.into_iter().collect();
        let report =
            evaluation::evaluate_objects(&out.masks, &gt.retain_ids(&ids), &ids, cfg.ma_window)?;
        std::fs::write(args.out.join("report.json"), report.to_json())?;
        eprintln!(
            "J {:.4}  F {:.4}  J&F {:.4}",
            report.mean_j, report.mean_f, report.jf
        );
    }
    Ok(())
}

fn compare(pred: &Path, gt: &Path, objects: &[ObjectId], window: usize) -> Result<MetricsReport> {
    let pred: MaskSequence =
        frame_store::read_masks(pred).with_context(|| format!("reading {}", pred.display()))?;
    let gt: MaskSequence =
        frame_store::read_masks(gt).with_context(|| format!("reading {}", gt.display()))?;
    let report = if objects.is_empty() {
        evaluation::evaluate(&pred, &gt, window)?
    } else {
        evaluation::evaluate_objects(&pred, &gt, objects, window)?
    };
    Ok(report)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample {
            frames,
            config,
            out,
        } => {
            let cfg = config.build()?;
            let seq = frame_store::load_sequence(&frames)?;
            let candidates = sampler::sample(&seq, &cfg.sampler)?;
            let json = serde_json::to_string_pretty(&candidates)? + "\n";
            emit(&json, out.as_deref())
        }
        Command::Run(args) => run(&args),
        Command::Eval {
            pred,
            gt,
            objects,
            window,
            out,
        } => {
            let report = compare(&pred, &gt, &objects, window)?;
            print!("{}", report.to_table());
            if let Some(p) = out {
                std::fs::write(&p, report.to_json())?;
            }
            Ok(())
        }
        Command::Stability {
            pred,
            gt,
            objects,
            window,
            out,
        } => {
            let report = compare(&pred, &gt, &objects, window)?;
            emit(&report.to_csv(), out.as_deref())
        }
        Command::Synth { scene, out, seed } => {
            let text = std::fs::read_to_string(&scene)
                .with_context(|| format!("reading {}", scene.display()))?;
            let render = SyntheticScene::from_json(&text)?.render(seed)?;
            render.write_to(&out)?;
            eprintln!("{} frames -> {}", render.frames.len(), out.display());
            Ok(())
        }
        Command::Ablate {
            sweep,
            config,
            json,
        } => {
            let cfg = config.build()?;
            let sweeps: Vec<Sweep> = if sweep.is_empty() {
                Sweep::ALL.to_vec()
            } else {
                sweep.into_iter().map(Sweep::from).collect()
            };
            let report = ablation::ablate(&ablation::corpus(), &cfg, &sweeps)?;
            print!("{}", report.to_table());
            if let Some(p) = json {
                std::fs::write(&p, report.to_json())?;
            }
            Ok(())
        }
        Command::Serve {
            scene_dir,
            addr,
            workers,
        } => {
            let backends = stub_backends(&scene_dir.join("frames"), None)?;
            let server = BackendServer::start(backends, &addr, workers)?;
            eprintln!("serving stub backends on {}", server.url());
            loop {
                std::thread::park();
            }
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<PipelineError>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Skip causes that the message above already spells out.
            let mut msg = err.to_string();
            for cause in err.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&err))
        }
    }
}
