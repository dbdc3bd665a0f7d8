use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rja_cli::commands::{
    bench_table, cmd_bench, cmd_decode, cmd_encode, cmd_eval, cmd_inspect, cmd_synth, BenchArgs,
    CorpusSpec, DecodeArgs, EncodeArgs, EncodeMode, EvalArgs, InspectArgs, PresetKind, SynthArgs,
};
use rja_cli::config::apply_fit_config;
use rja_cli::error::CliError;
use rja_core::fitter::FitConfig;
use rja_core::image::ImageFormat;

/// Store linear raw images inside standard baseline JPEG files: an
/// invertible, per-image-fitted pre-processing pipeline whose coefficients
/// ride in the JPEG comment segment.
#[derive(Parser)]
#[command(name = "rja", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Identity,
    #[value(name = "gamma2.2", alias = "gamma22")]
    Gamma22,
    Srgb,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Png16,
    Pfm,
}

impl From<FormatArg> for ImageFormat {
    fn from(f: FormatArg) -> ImageFormat {
        match f {
            FormatArg::Png16 => ImageFormat::Png16,
            FormatArg::Pfm => ImageFormat::Pfm,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit (or select) adapter parameters and store a raw image as JPEG.
    Encode {
        /// Input raw image (16-bit RGB PNG or PFM).
        input: PathBuf,
        /// Output JPEG path.
        output: PathBuf,
        /// JPEG quality (1-100).
        #[arg(long, default_value_t = 75)]
        quality: u8,
        /// Fit parameters per image (the default mode).
        #[arg(long, conflicts_with = "preset")]
        fit: bool,
        /// Use a fixed preset instead of fitting.
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        /// Fit without the DCT scale component.
        #[arg(long)]
        no_dct: bool,
        /// Fit iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Fit thumbnail side (power of two).
        #[arg(long)]
        thumbnail: Option<usize>,
        /// Base step size of the fit.
        #[arg(long)]
        step_size: Option<f64>,
        /// Fit seed.
        #[arg(long)]
        seed: Option<u64>,
        /// key=value fit settings file (flags override it).
        #[arg(long)]
        fit_config: Option<PathBuf>,
        /// Force the input format instead of guessing from the extension.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Sensor black level (counts); requires --white-level.
        #[arg(long)]
        black_level: Option<f64>,
        /// Sensor white level (counts); requires --black-level.
        #[arg(long)]
        white_level: Option<f64>,
    },
    /// Reconstruct the raw image from a stored JPEG.
    Decode {
        input: PathBuf,
        output: PathBuf,
        /// Output format (default: guessed from the extension).
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Compare a stored JPEG against the original raw and print metrics.
    Eval {
        original: PathBuf,
        jpeg: PathBuf,
        /// Append one CSV row (file,psnr,ssim,ms_ssim,bpp,wbpp,cr,unique_triples,file_bytes).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// List marker segments and summarize any adapter payload.
    Inspect { input: PathBuf },
    /// Generate synthetic raw images.
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        /// Write this many seeded images into a directory.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Per-sample noise sigma.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Per-method mean metrics over a corpus at several qualities.
    Bench {
        /// Directory of PNG/PFM originals.
        #[arg(long, conflicts_with = "synth")]
        corpus: Option<PathBuf>,
        /// Generate a synthetic corpus of this many images instead.
        #[arg(long)]
        synth: Option<usize>,
        /// Side length of synthetic corpus images.
        #[arg(long, default_value_t = 512)]
        size: usize,
        /// Seed of the first synthetic image.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![25u8, 50, 75, 95])]
        qualities: Vec<u8>,
        /// Fit iterations per image.
        #[arg(long)]
        iterations: Option<usize>,
        /// Write per-image rows (method,quality,image,...) as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn run() -> Result<(), CliError> {
    match Cli::parse().cmd {
        Cmd::Encode {
            input,
            output,
            quality,
            fit,
            preset,
            no_dct,
            iterations,
            thumbnail,
            step_size,
            seed,
            fit_config,
            format,
            black_level,
            white_level,
        } => {
            let mut cfg = FitConfig::new(quality);
            if let Some(path) = &fit_config {
                let text = std::fs::read_to_string(path)?;
                apply_fit_config(&text, &mut cfg)?;
            }
            cfg.quality = quality;
            if let Some(v) = iterations {
                cfg.iterations = v;
            }
            if let Some(v) = thumbnail {
                cfg.thumbnail = v;
            }
            if let Some(v) = step_size {
                cfg.step_size = v;
            }
            if let Some(v) = seed {
                cfg.rng_seed = v;
            }
            if no_dct {
                cfg.use_dct = false;
            }
            let mode = match (fit, preset) {
                (_, None) => EncodeMode::Fit,
                (false, Some(p)) => EncodeMode::Preset(match p {
                    PresetArg::Identity => PresetKind::Identity,
                    PresetArg::Gamma22 => PresetKind::Gamma22,
                    PresetArg::Srgb => PresetKind::Srgb,
                }),
                (true, Some(_)) => unreachable!("clap enforces the conflict"),
            };
            let summary = cmd_encode(&EncodeArgs {
                input,
                output: output.clone(),
                quality,
                mode,
                fit: cfg,
                format: format.map(Into::into),
                black_level,
                white_level,
            })?;
            println!(
                "wrote {}: {} bytes (adapter payload {} bytes)",
                output.display(),
                summary.file_bytes,
                summary.payload_bytes
            );
            if let Some(trace) = &summary.trace {
                println!(
                    "fit loss {:.5} -> {:.5} (best at iteration {} of {})",
                    trace.initial_loss(),
                    trace.best_loss,
                    trace.best_iteration,
                    trace.losses.len() - 1
                );
            }
            Ok(())
        }
        Cmd::Decode {
            input,
            output,
            format,
        } => {
            let summary = cmd_decode(&DecodeArgs {
                input,
                output: output.clone(),
                format: format.map(Into::into),
            })?;
            if !summary.had_adapter {
                eprintln!("warning: no adapter payload found; plain JPEG decode");
            }
            println!(
                "wrote {} (jpeg decode {:.3}s, adapter inversion {:.3}s)",
                output.display(),
                summary.jpeg_seconds,
                summary.adapter_seconds
            );
            Ok(())
        }
        Cmd::Eval {
            original,
            jpeg,
            csv,
            format,
        } => {
            let report = cmd_eval(&EvalArgs {
                original,
                jpeg,
                format: format.map(Into::into),
                csv,
            })?;
            println!("psnr_db        {:.4}", report.psnr);
            println!("ssim           {:.6}", report.ssim);
            match report.ms_ssim {
                Some(v) => println!("ms_ssim        {v:.6}"),
                None => println!("ms_ssim        - (image below 176px)"),
            }
            println!("bpp            {:.4}", report.bpp);
            println!("wbpp           {:.4}", report.wbpp);
            println!("cr             {:.2}", report.cr);
            println!("unique_triples {}", report.unique_triples);
            println!("file_bytes     {}", report.file_bytes);
            Ok(())
        }
        Cmd::Inspect { input } => {
            let report = cmd_inspect(&InspectArgs { input })?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for line in &report.lines {
                println!("{line}");
            }
            Ok(())
        }
        Cmd::Synth {
            output,
            seed,
            width,
            height,
            count,
            noise,
        } => {
            let written = cmd_synth(&SynthArgs {
                seed,
                width,
                height,
                count,
                noise,
                output,
            })?;
            for p in &written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Cmd::Bench {
            corpus,
            synth,
            size,
            seed,
            qualities,
            iterations,
            csv,
        } => {
            let spec = match (corpus, synth) {
                (Some(dir), None) => CorpusSpec::Dir(dir),
                (None, n) => CorpusSpec::Synth {
                    count: n.unwrap_or(4),
                    size,
                    seed,
                },
                (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
            };
            let mut fit = FitConfig::new(qualities.first().copied().unwrap_or(75));
            if let Some(v) = iterations {
                fit.iterations = v;
            }
            let rows = cmd_bench(&BenchArgs {
                corpus: spec,
                qualities,
                fit,
                csv,
            })?;
            print!("{}", bench_table(&rows));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
