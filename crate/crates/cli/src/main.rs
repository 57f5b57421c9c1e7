mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Parser)]
#[command(
    name = "wirepipe",
    version,
    about = "Wire segmentation and removal for high-resolution images"
)]
struct Cli {
    /// Worker threads for window and tile processing (0 = all cores).
    #[arg(long, global = true, env = "WIREPIPE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PipelineArgs {
    /// JSON file with pipeline settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Global image size and fine window size.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Predict a wire mask for one image.
    Segment {
        #[arg(long)]
        image: PathBuf,
        /// Checkpoint path, or `oracle:<mask.png>` to replay a known mask.
        #[arg(long)]
        model: String,
        #[arg(long)]
        out_mask: PathBuf,
        /// Optional wire-probability map (PFM).
        #[arg(long)]
        out_prob: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Segment wires and inpaint them away.
    Remove {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_mask: Option<PathBuf>,
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        #[arg(long)]
        onion_d: Option<usize>,
        /// Wire-free reference; PSNR against it is reported.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Render synthetic wire scenes with masks and clean plates.
    GenSynth {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        min_wires: usize,
        #[arg(long, default_value_t = 3)]
        max_wires: usize,
        #[arg(long, default_value_t = 2.0)]
        min_thickness: f32,
        #[arg(long, default_value_t = 5.0)]
        max_thickness: f32,
    },
    /// Train the reference segmenter on a scene manifest.
    TrainTiny {
        /// `manifest.jsonl` written by gen-synth.
        #[arg(long)]
        data: PathBuf,
        /// SGD steps [default: 2000].
        #[arg(long)]
        iters: Option<usize>,
        /// Learning rate [default: 0.01].
        #[arg(long)]
        lr: Option<f64>,
        /// SGD momentum [default: 0.9].
        #[arg(long)]
        momentum: Option<f64>,
        /// Samples per step [default: 4].
        #[arg(long)]
        batch: Option<usize>,
        /// Side of the global image and local crop [default: 512].
        #[arg(long)]
        patch: Option<usize>,
        /// Fixes initialisation and batch order [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        augment: bool,
        /// Decay the learning rate with a power-0.9 poly schedule.
        #[arg(long)]
        poly: bool,
        /// Rescale larger gradients to this L2 norm; 0 disables [default: 10].
        #[arg(long)]
        max_grad_norm: Option<f64>,
        /// JSON file with training settings; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted masks against ground truth (matched by file name).
    EvalSeg {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        /// `.csv` or `.json`.
        #[arg(long)]
        report: PathBuf,
    },
    /// PSNR of inpainted images against clean references.
    EvalInpaint {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        /// Masks for masked-region PSNR.
        #[arg(long)]
        mask_dir: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Time segmentation over images at several gating thresholds.
    Profile {
        /// Image files or directories of PNGs.
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        model: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.02,0.05,0.1")]
        alphas: Vec<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Segment {
            image,
            model,
            out_mask,
            out_prob,
            pipeline,
        } => commands::segment(&image, &model, &out_mask, out_prob.as_deref(), &pipeline),
        Command::Remove {
            image,
            model,
            out,
            out_mask,
            tile,
            overlap,
            onion_d,
            clean,
            pipeline,
        } => commands::remove(commands::RemoveArgs {
            image,
            model,
            out,
            out_mask,
            tile,
            overlap,
            onion_d,
            clean,
            pipeline,
        }),
        Command::GenSynth {
            count,
            size,
            out_dir,
            seed,
            min_wires,
            max_wires,
            min_thickness,
            max_thickness,
        } => commands::gen_synth(commands::GenSynthArgs {
            count,
            size,
            out_dir,
            seed,
            wires: (min_wires, max_wires),
            thickness: (min_thickness, max_thickness),
        }),
        Command::TrainTiny {
            data,
            iters,
            lr,
            momentum,
            batch,
            patch,
            seed,
            augment,
            poly,
            max_grad_norm,
            config,
            out,
        } => commands::train_tiny(commands::TrainArgs {
            data,
            iters,
            lr,
            momentum,
            batch,
            patch,
            seed,
            augment,
            poly,
            max_grad_norm,
            config,
            out,
        }),
        Command::EvalSeg {
            pred_dir,
            gt_dir,
            report,
        } => commands::eval_seg(&pred_dir, &gt_dir, &report),
        Command::EvalInpaint {
            pred_dir,
            gt_dir,
            mask_dir,
            report,
        } => commands::eval_inpaint(&pred_dir, &gt_dir, mask_dir.as_deref(), &report),
        Command::Profile {
            images,
            model,
            alphas,
            report,
            pipeline,
        } => commands::profile(&images, &model, &alphas, report.as_deref(), &pipeline),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
