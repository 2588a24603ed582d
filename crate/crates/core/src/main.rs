use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use paramgrade::fixtures;
use paramgrade::imaging::{save_image, write_frames};
use paramgrade::lut::{bake_lut, write_cube, DEFAULT_LUT_SIZE};
use paramgrade::pipeline::server::{serve, AppState};
use paramgrade::pipeline::{load_config, load_model, retouch, ParamOverrides, RetouchOptions};
use paramgrade::training::pretrain;
use paramgrade::GradingParams;

#[derive(Parser)]
#[command(name = "paramgrade", version, about = "Parametric colour style transfer for video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grade a frame directory towards a style image.
    Retouch(RetouchArgs),
    /// Run the HTTP preview service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pre-train a predictor on an image corpus.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `corpus_dir` from the config.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Bake a params.json into a .cube file.
    Bake {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LUT_SIZE)]
        size: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "paramgrade")]
        title: String,
    },
    /// Write the procedural sample clip, style image and content/style pairs.
    Sample {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 6)]
        frames: usize,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 120)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        pairs: usize,
    },
}

#[derive(Args)]
struct RetouchArgs {
    /// Frame directory (frame_%06d.png) or a single image.
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// Pretrained checkpoint; a fresh model is used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    no_finetune: bool,
    #[arg(long, default_value_t = DEFAULT_LUT_SIZE)]
    lut_size: usize,
    #[arg(long, allow_hyphen_values = true)]
    brightness: Option<f32>,
    #[arg(long, allow_hyphen_values = true)]
    contrast: Option<f32>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f32>,
    #[arg(long, allow_hyphen_values = true)]
    hue: Option<f32>,
    #[arg(long, allow_hyphen_values = true)]
    saturation: Option<f32>,
    #[arg(long, allow_hyphen_values = true)]
    sharpness: Option<f32>,
    #[arg(long, allow_hyphen_values = true)]
    temperature: Option<f32>,
}

impl RetouchArgs {
    fn overrides(&self) -> paramgrade::Result<ParamOverrides> {
        let mut o = ParamOverrides::default();
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("gamma", self.gamma),
            ("hue", self.hue),
            ("saturation", self.saturation),
            ("sharpness", self.sharpness),
            ("temperature", self.temperature),
        ] {
            if let Some(v) = v {
                o.set(name, v)?;
            }
        }
        Ok(o)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Retouch(args) => {
            let opts = RetouchOptions {
                content: args.content.clone(),
                style: args.style.clone(),
                checkpoint: args.checkpoint.clone(),
                config: args.config.clone(),
                output: args.output.clone(),
                finetune: !args.no_finetune,
                lut_size: args.lut_size,
                overrides: args.overrides()?,
            };
            let report = retouch(&opts)?;
            println!("{}", report.effective.to_json());
        }
        Command::Serve {
            port,
            host,
            checkpoint,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let model = load_model(checkpoint.as_deref(), &cfg).context("loading checkpoint")?;
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host/port")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(addr, Arc::new(AppState::new(model, cfg))))?;
        }
        Command::Pretrain {
            config,
            corpus,
            output,
            iters,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(c) = corpus {
                cfg.corpus_dir = c;
            }
            if let Some(o) = output {
                cfg.output_dir = Some(o);
            }
            if let Some(n) = iters {
                cfg.iters_pretrain = n;
            }
            let out = pretrain(&cfg)?;
            if let Some(last) = out.losses.last() {
                println!("final loss {:.6} after {} iterations", last.loss.total, out.losses.len());
            }
        }
        Command::Bake {
            params,
            size,
            output,
            title,
        } => {
            let text = std::fs::read_to_string(&params).with_context(|| format!("reading {}", params.display()))?;
            let p = GradingParams::from_json(&text).with_context(|| format!("parsing {}", params.display()))?;
            write_cube(&bake_lut(&p, size)?, &output, &title)?;
        }
        Command::Sample {
            output,
            frames,
            width,
            height,
            pairs,
        } => {
            write_frames(&fixtures::sample_clip(frames, width, height), output.join("frames"))?;
            save_image(&fixtures::style_image(0, width, height), output.join("style.png"))?;
            for k in 0..pairs {
                save_image(&fixtures::content_image(k, width, height), output.join(format!("pairs/content_{k}.png")))?;
                save_image(&fixtures::style_image(k, width, height), output.join(format!("pairs/style_{k}.png")))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
