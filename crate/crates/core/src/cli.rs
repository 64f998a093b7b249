//! Command-line interface. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::analysis::{channel_distribution, plot_histograms, range_overlap, save_histogram_csv, ChannelHistogram};
use crate::colorlab::manifest::augment_dir;
use crate::colorlab::{Channel, RicaMode, RicaRanges};
use crate::error::{Error, IoContext, Result};
use crate::featuregan::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::harness::{run_pipeline, run_step1, run_step2, run_step3, Checkpoint, Datasets, PipelineConfig, RunDir};
use crate::nn::Module;
use crate::segtoy::{evaluate_miou, gen_toy_dataset_sized, Domain, GenPosition, Segmenter, ToyDataset};
use crate::tensor::gradcheck::{registry, DEFAULT_TOLERANCE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dgaug", version, about = "Color and feature augmentation for domain-generalized segmentation")]
pub struct Cli {
    /// Worker threads for parallel stages; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply RICA to every image of a directory and write a parameter manifest.
    Augment {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = clap::value_parser!(RicaMode))]
        mode: Option<RicaMode>,
        /// JSON file with sampling ranges; defaults to the standard ranges.
        #[arg(long, value_name = "FILE")]
        ranges: Option<PathBuf>,
    },
    /// Histogram one CIELAB channel of one or more image directories.
    Analyze {
        #[arg(long, value_delimiter = ',', required = true, value_name = "D1,D2,...")]
        dirs: Vec<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(Channel))]
        channel: Channel,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        #[arg(long, value_name = "PNG")]
        plot: Option<PathBuf>,
    },
    /// Generate a procedural segmentation dataset.
    GenToy {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = clap::value_parser!(Domain))]
        domain: Domain,
        #[arg(long, default_value_t = crate::segtoy::DEFAULT_CLASSES)]
        classes: usize,
        #[arg(long, default_value_t = crate::segtoy::DEFAULT_SIZE)]
        size: usize,
    },
    /// Step 1: train the segmenter that provides the feature extractor.
    TrainExtractor(StageArgs),
    /// Step 2: train the FeatureGAN against the frozen extractor.
    TrainFeaturegan(StageArgs),
    /// Step 3: train the final segmenter with the frozen generator plugged in.
    TrainFinal(StageArgs),
    /// Run all steps and the final evaluation.
    RunPipeline {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Evaluate a segmenter checkpoint on a dataset directory.
    Eval {
        #[arg(long, value_name = "CKPT")]
        model: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Finite-difference check of the registered differentiable operations.
    Gradcheck {
        #[arg(long, value_name = "NAME")]
        op: Option<String>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Report generator and discriminator parameter counts.
    Params {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
struct StageArgs {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Run directory shared by all steps.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Generator position(s); defaults to those in the config.
    #[arg(long, value_parser = clap::value_parser!(GenPosition))]
    position: Option<GenPosition>,
}

/// Network shapes for `params`; omitted parts use the full-scale networks.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ParamsFile {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
}

impl Default for ParamsFile {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::full(),
            discriminator: DiscriminatorConfig::full(),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))
            .and_then(|pool| pool.install(|| execute(cli.command, n))),
        None => execute(cli.command, rayon::current_num_threads()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn execute(command: Command, workers: usize) -> Result<i32> {
    match command {
        Command::Augment {
            input,
            out,
            seed,
            mode,
            ranges,
        } => {
            let mut r = match ranges {
                Some(p) => serde_json::from_str::<RicaRanges>(&fs::read_to_string(&p).at(&p)?)?,
                None => RicaRanges::default(),
            };
            if let Some(m) = mode {
                r = r.with_mode(m);
            }
            let rows = augment_dir(&input, &out, seed, &r, workers)?;
            println!("augmented {} images into {}", rows.len(), out.display());
        }
        Command::Analyze {
            dirs,
            channel,
            n,
            seed,
            out,
            plot,
        } => analyze(&dirs, channel, n, seed, &out, plot.as_deref())?,
        Command::GenToy {
            out,
            n,
            seed,
            domain,
            classes,
            size,
        } => {
            gen_toy_dataset_sized(n, seed, domain, classes, size)?.save(&out)?;
            println!("wrote {n} {} images to {}", domain.name(), out.display());
        }
        Command::TrainExtractor(a) => {
            let (cfg, run, data) = stage_setup(&a)?;
            run_step1(&cfg, &run, &data)?;
            println!("step1 checkpoint in {}", run.step1().display());
        }
        Command::TrainFeaturegan(a) => {
            let (cfg, run, data) = stage_setup(&a)?;
            for pos in stage_positions(&cfg, a.position)? {
                run_step2(&cfg, &run, &data, pos)?;
                println!("step2 checkpoint in {}", run.step2(pos).display());
            }
        }
        Command::TrainFinal(a) => {
            let (cfg, run, data) = stage_setup(&a)?;
            for pos in stage_positions(&cfg, a.position)? {
                run_step3(&cfg, &run, &data, pos)?;
                println!("step3 checkpoint in {}", run.step3(pos).display());
            }
        }
        Command::RunPipeline { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let report = run_pipeline(&cfg, &out)?;
            report.write_csv(std::io::stdout().lock())?;
        }
        Command::Eval { model, data, out } => {
            let seg = Segmenter::from_checkpoint(&Checkpoint::load(&model)?)?;
            let report = evaluate_miou(&seg, &ToyDataset::load(&data)?)?;
            let f = fs::File::create(&out).at(&out)?;
            report.write_csv(f)?;
            println!("miou {:.6}", report.miou);
        }
        Command::Gradcheck { op, seed } => return gradcheck(op.as_deref(), seed),
        Command::Params { config } => {
            let p: ParamsFile = serde_json::from_str(&fs::read_to_string(&config).at(&config)?)?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
            let g = Generator::new(p.generator, &mut rng)?.count_params();
            let d = Discriminator::new(p.discriminator, &mut rng)?.count_params();
            println!("generator {g} ({:.3}M)", g as f64 / 1e6);
            println!("discriminator {d} ({:.3}M)", d as f64 / 1e6);
        }
    }
    Ok(EXIT_OK)
}

fn stage_setup(a: &StageArgs) -> Result<(PipelineConfig, RunDir, Datasets)> {
    let cfg = PipelineConfig::load(&a.config)?;
    let data = Datasets::load(&cfg.data)?;
    Ok((cfg, RunDir(a.out.clone()), data))
}

fn stage_positions(cfg: &PipelineConfig, pos: Option<GenPosition>) -> Result<Vec<GenPosition>> {
    if !cfg.mode.uses_gbfa() {
        return Err(Error::Config(format!("mode {} has no feature generator", cfg.mode.name())));
    }
    Ok(match pos {
        Some(p) => vec![p],
        None => cfg.positions.clone(),
    })
}

fn analyze(dirs: &[PathBuf], channel: Channel, n: usize, seed: u64, out: &Path, plot: Option<&Path>) -> Result<()> {
    let hists = dirs
        .iter()
        .map(|d| channel_distribution(d, channel, n, seed))
        .collect::<Result<Vec<ChannelHistogram>>>()?;
    if let [h] = hists.as_slice() {
        save_histogram_csv(out, h)?;
    } else {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(fs::File::create(out).at(out)?);
        for (d, h) in dirs.iter().zip(&hists) {
            writeln!(f, "# dataset={}", d.display()).at(out)?;
            h.write_csv(&mut f)?;
        }
    }
    for (d, h) in dirs.iter().zip(&hists).skip(1) {
        println!(
            "overlap({}, {}) = {:.4}",
            dirs[0].display(),
            d.display(),
            range_overlap(&hists[0], h)?
        );
    }
    if let Some(p) = plot {
        plot_histograms(p, &hists.iter().take(4).collect::<Vec<_>>())?;
    }
    Ok(())
}

fn gradcheck(op: Option<&str>, seed: u64) -> Result<i32> {
    let cases: Vec<_> = registry().into_iter().filter(|c| op.map_or(true, |o| o == c.name)).collect();
    if cases.is_empty() {
        return Err(Error::Config(format!("no registered op named '{}'", op.unwrap_or(""))));
    }
    let mut failed = 0;
    for case in cases {
        let errs = case.run(seed)?;
        let worst = errs.iter().copied().fold(0.0f64, f64::max);
        let ok = worst < DEFAULT_TOLERANCE;
        failed += usize::from(!ok);
        println!("{:<28} {} max rel err {worst:.2e} over {} shapes", case.name, if ok { "ok  " } else { "FAIL" }, errs.len());
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_RUNTIME })
}
