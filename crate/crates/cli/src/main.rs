use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use inkdepth::data::io::{load_depth, load_image, save_depth, save_image, save_mask};
use inkdepth::data::{DepthMap, ImageTensor, OrderingAnnotation};
use inkdepth::eval::{evaluate, AlignmentMode};
use inkdepth::gradients::gradient_suite;
use inkdepth::train::corpus::{write_scene_corpus, FixtureOptions};
use inkdepth::train::{prepare, train, Predictor, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "inkdepth", about = "Relative depth estimation for comic panels", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute and cache pseudo ground truth, text masks and the segmenter.
    Prepare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the depth network on prepared data.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict depth for one image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Depth output, `.pfm` or 16-bit `.png`.
        #[arg(long)]
        out: PathBuf,
        /// Translate the image into the real-photo domain first.
        #[arg(long)]
        translate: bool,
        /// Flatten depth under detected text to the background.
        #[arg(long)]
        strip_text: bool,
        /// Also write a colour visualization (warm = near, cool = far).
        #[arg(long)]
        out_png: Option<PathBuf>,
    },
    /// Score a depth prediction against ordering annotations.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        #[arg(long, default_value = "median", value_parser = ["median", "median_scale", "none"])]
        align: String,
        /// Write the metrics as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Predict a text mask with a checkpoint's segmenter.
    SegmentText {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus of layered scenes.
    GenFixtures {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Side length in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Check an annotation file.
    ValidateAnnotations {
        #[arg(long)]
        ann: PathBuf,
    },
    /// Run finite-difference gradient checks over every block and loss.
    Gradcheck,
    /// Print the version.
    Version,
}

/// ANSI colouring, off for non-terminals and when `NO_COLOR` is set.
#[derive(Clone, Copy)]
struct Paint(bool);

impl Paint {
    fn detect(is_terminal: bool) -> Self {
        let no_color = std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty());
        Self(is_terminal && !no_color)
    }

    fn wrap(self, code: &str, s: &str) -> String {
        if self.0 {
            format!("\x1b[{code}m{s}\x1b[0m")
        } else {
            s.to_string()
        }
    }

    fn red(self, s: &str) -> String {
        self.wrap("31", s)
    }

    fn green(self, s: &str) -> String {
        self.wrap("32", s)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let paint = Paint::detect(std::io::stderr().is_terminal());
            eprintln!("{} {e:#}", paint.red("error:"));
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare { config } => {
            let config = TrainConfig::load(&config)?;
            let s = prepare(&config)?;
            println!("real images:      {}", s.real_images);
            println!("comics images:    {}", s.comics_images);
            println!("estimator calls:  {}", s.estimator_calls);
            println!("cache hits:       {}", s.cache_hits);
            println!("masks written:    {}", s.masks_written);
            println!("mask cache hits:  {}", s.mask_cache_hits);
            println!("segmenter:        {}", if s.segmenter_trained { "trained" } else { "cached" });
            for f in &s.failures {
                println!("excluded: {f}");
            }
        }
        Command::Train { config, resume } => {
            let config = TrainConfig::load(&config)?;
            let dir = config.paths.checkpoints.clone();
            let ckpt = train(config, resume.as_deref())?;
            println!(
                "trained {} epochs ({} steps); checkpoints in {}",
                ckpt.epoch,
                ckpt.step,
                dir.display()
            );
        }
        Command::Predict {
            ckpt,
            image,
            out,
            translate,
            strip_text,
            out_png,
        } => {
            let predictor = Predictor::load(&ckpt)?;
            let img = load_image(&image)?;
            let depth = predictor.predict(&img, translate, strip_text)?;
            save_depth(&depth, &out)?;
            if let Some(p) = out_png {
                save_image(&colorize(&depth)?, &p)?;
            }
        }
        Command::Evaluate { pred, ann, align, json } => {
            let mode: AlignmentMode = align.parse()?;
            let depth = load_depth(&pred)?.map;
            let ann = OrderingAnnotation::load(&ann)?;
            let report = evaluate(&depth, &ann, mode)?;
            print!("{report}");
            if let Some(p) = json {
                write_text(&p, &(report.to_json() + "\n"))?;
            }
        }
        Command::SegmentText { ckpt, image, out } => {
            let predictor = Predictor::load(&ckpt)?;
            let mask = predictor.segment_text(&load_image(&image)?)?;
            save_mask(&mask, &out)?;
            println!("text covers {:.2}% of the image", 100.0 * mask.ratio());
        }
        Command::GenFixtures { seed, count, out, size } => {
            let stems = write_scene_corpus(
                &out,
                &FixtureOptions {
                    seed,
                    count,
                    size,
                    ..FixtureOptions::default()
                },
            )?;
            println!("wrote {} scenes to {}", stems.len(), out.display());
        }
        Command::ValidateAnnotations { ann } => {
            let a = OrderingAnnotation::load(&ann)?;
            println!("{}: {} entries ok", ann.display(), a.len());
        }
        Command::Gradcheck => {
            let paint = Paint::detect(std::io::stdout().is_terminal());
            let checks = gradient_suite()?;
            let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
            for c in &checks {
                let status = if c.passed() { paint.green("ok") } else { paint.red("FAIL") };
                println!(
                    "{:<width$}  {:.3e}  (tol {:.0e})  {status}",
                    c.name, c.max_rel_error, c.tolerance
                );
            }
            let failed = checks.iter().filter(|c| !c.passed()).count();
            if failed > 0 {
                bail!("{failed} gradient check(s) failed");
            }
        }
        Command::Version => println!("inkdepth {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Colour stops from near to far.
const RAMP: [[f64; 3]; 5] = [
    [0.70, 0.02, 0.05],
    [0.98, 0.45, 0.10],
    [0.98, 0.90, 0.35],
    [0.35, 0.75, 0.90],
    [0.10, 0.20, 0.65],
];

fn ramp(t: f64) -> [f64; 3] {
    let s = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (s.floor() as usize).min(RAMP.len() - 2);
    let f = s - i as f64;
    std::array::from_fn(|c| RAMP[i][c] * (1.0 - f) + RAMP[i + 1][c] * f)
}

/// Warm colours for near pixels, cool for far, over the map's own range.
fn colorize(depth: &DepthMap) -> Result<ImageTensor> {
    let (lo, hi) = (depth.min(), depth.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let hw = depth.height() * depth.width();
    let mut data = vec![0.0; 3 * hw];
    for (i, &d) in depth.data().iter().enumerate() {
        let rgb = ramp((d - lo) / span);
        for c in 0..3 {
            data[c * hw + i] = rgb[c];
        }
    }
    Ok(ImageTensor::new(depth.height(), depth.width(), data)?)
}
