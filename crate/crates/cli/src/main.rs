//! `larvacount`: split, tile, count, tune, evaluate and report from the
//! command line. Every command except `validate` writes into a fresh run
//! directory under the run root.

mod commands;
mod config;
mod failure;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use larvacount::counting::CountConfig;
use larvacount::detect::BackendSpec;
use larvacount::evalstat::metrics::R2Mode;
use larvacount::tiling::TileSpec;
use larvacount::tune::TuneOptions;
use log::LevelFilter;

use config::{parse_named_path, parse_param, RunConfig, SplitParams};
use failure::{Failure, EXIT_CONFIG};
use run::{default_run_id, init_logging, RunDir};

#[derive(Parser, Debug)]
#[command(
    name = "larvacount",
    version,
    about = "Tiled detection counting: tune, count and compare detectors"
)]
struct Cli {
    /// JSON run config; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Directory holding run directories.
    #[arg(long, global = true, env = "LARVACOUNT_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,
    /// Run directory name; defaults to a UTC timestamp plus the seed.
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Worker threads for tiles, images and grid cells; defaults to all cores.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(flatten)]
    inputs: InputArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct InputArgs {
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    image_root: Option<PathBuf>,
    /// Existing split file.
    #[arg(long, global = true)]
    splits: Option<PathBuf>,
    /// Split to read: train, val or test.
    #[arg(long, global = true)]
    subset: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Backend name (oracle, planted, store, adapter).
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Backend parameter as key=value; values parse as JSON when possible.
    #[arg(long = "backend-param", global = true, value_parser = parse_param)]
    backend_params: Vec<(String, serde_json::Value)>,
    /// Whole backend spec as JSON, e.g. '{"kind": "oracle", "recall": 0.9}'.
    #[arg(long, global = true)]
    backend_json: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a manifest, and optionally split files and detection stores.
    Validate {
        #[arg(long)]
        store: Vec<PathBuf>,
    },
    /// Draw a seeded train/val/test split.
    Split {
        /// Train, val and test fractions, e.g. 0.7,0.15,0.15.
        #[arg(long, value_parser = parse_ratios)]
        ratios: Option<[f64; 3]>,
    },
    /// Compute tile grids and retained annotations, optionally writing tile images.
    Tile {
        #[arg(long, conflicts_with = "side")]
        scale: Option<f64>,
        #[arg(long)]
        side: Option<u32>,
        #[arg(long)]
        dump: bool,
    },
    /// Count objects per image.
    Count {
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        conf: Option<f64>,
        #[arg(long)]
        dedup_iou: Option<f64>,
    },
    /// Search confidence threshold and tiling scale on the training images.
    Tune {
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        refine_factor: Option<f64>,
        #[arg(long, conflicts_with = "no_downscale")]
        downscale: Option<f64>,
        #[arg(long)]
        no_downscale: bool,
        #[arg(long)]
        no_augment: bool,
    },
    /// Compare models from their count files.
    Eval {
        /// name=path to a counts.csv; repeat per model.
        #[arg(long, value_parser = parse_named_path)]
        counts: Vec<(String, PathBuf)>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_parser = parse_r2)]
        r2: Option<R2Mode>,
    },
    /// Write a synthetic dataset (manifest plus optional PNGs) for trying the pipeline.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        images: usize,
        /// Image size as WIDTHxHEIGHT.
        #[arg(long, default_value = "1600x1600", value_parser = parse_size)]
        size: [u32; 2],
        /// Keep boxes clear of tile edges at these scales.
        #[arg(long, value_delimiter = ',', default_value = "0.4")]
        interior_scales: Vec<f64>,
        #[arg(long)]
        render: bool,
    },
    /// Render the comparison table from a metrics file.
    Report {
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// tune.json files whose chosen settings are listed.
        #[arg(long)]
        tune_result: Vec<PathBuf>,
    },
}

fn parse_size(s: &str) -> Result<[u32; 2], String> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got '{s}'"))?;
    let w = w.parse().map_err(|e| format!("width: {e}"))?;
    let h = h.parse().map_err(|e| format!("height: {e}"))?;
    Ok([w, h])
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected three ratios, got {}", v.len()))
}

fn parse_r2(s: &str) -> Result<R2Mode, String> {
    match s {
        "identity" => Ok(R2Mode::Identity),
        "fitted" => Ok(R2Mode::Fitted),
        _ => Err(format!("expected identity or fitted, got '{s}'")),
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Split { .. } => "split",
            Command::Tile { .. } => "tile",
            Command::Count { .. } => "count",
            Command::Tune { .. } => "tune",
            Command::Eval { .. } => "eval",
            Command::Report { .. } => "report",
            Command::Synth { .. } => "synth",
        }
    }
}

fn apply_inputs(a: &InputArgs, cfg: &mut RunConfig) -> Result<(), Failure> {
    let cwd = std::env::current_dir().unwrap_or_default();
    let abs = |p: &PathBuf| if p.is_relative() { cwd.join(p) } else { p.clone() };
    if let Some(p) = &a.manifest {
        cfg.manifest = Some(abs(p));
    }
    if let Some(p) = &a.image_root {
        cfg.image_root = Some(abs(p));
    }
    if let Some(p) = &a.splits {
        cfg.splits = Some(abs(p));
    }
    if let Some(s) = &a.subset {
        cfg.subset = Some(s.clone());
    }
    if let Some(m) = &a.model {
        cfg.model = Some(m.clone());
    }
    if let Some(json) = &a.backend_json {
        let spec: BackendSpec =
            serde_json::from_str(json).map_err(|e| Failure::config(format!("--backend-json: {e}")))?;
        cfg.backend = Some(spec);
    }
    if let Some(kind) = &a.backend {
        if cfg.backend.as_ref().is_none_or(|b| &b.kind != kind) {
            cfg.backend = Some(BackendSpec::new(kind.clone(), serde_json::Value::Null));
        }
    }
    if !a.backend_params.is_empty() {
        let spec = cfg
            .backend
            .as_mut()
            .ok_or_else(|| Failure::config("--backend-param without a backend"))?;
        for (k, v) in &a.backend_params {
            let v = match (spec.kind.as_str(), k.as_str(), v) {
                ("store", "path", serde_json::Value::String(s)) => {
                    abs(&PathBuf::from(s)).to_string_lossy().into_owned().into()
                }
                _ => v.clone(),
            };
            spec.params.insert(k.clone(), v);
        }
    }
    Ok(())
}

fn apply_command(cmd: &Command, cfg: &mut RunConfig) -> Result<(), Failure> {
    let cwd = std::env::current_dir().unwrap_or_default();
    match cmd {
        Command::Validate { .. } | Command::Synth { .. } => {}
        Command::Split { ratios } => {
            if let Some(r) = ratios {
                let seed = cfg.split.as_ref().and_then(|s| s.seed);
                cfg.split = Some(SplitParams { ratios: *r, seed });
            }
        }
        Command::Tile { scale, side, dump } => {
            if let Some(s) = scale {
                cfg.tiling = Some(TileSpec::Scaled { scale: *s });
            }
            if let Some(s) = side {
                cfg.tiling = Some(TileSpec::Fixed { side: *s });
            }
            cfg.dump_tiles |= *dump;
        }
        Command::Count { scale, conf, dedup_iou } => {
            if scale.is_some() || conf.is_some() || dedup_iou.is_some() {
                let base = cfg.count;
                let scale = scale.or(base.map(|c| c.scale));
                let conf = conf.or(base.map(|c| c.confidence));
                match (scale, conf) {
                    (Some(scale), Some(confidence)) => {
                        cfg.count = Some(CountConfig {
                            scale,
                            confidence,
                            dedup_iou: dedup_iou.or(base.and_then(|c| c.dedup_iou)),
                        })
                    }
                    _ => return Err(Failure::config("count needs both --scale and --conf")),
                }
            }
        }
        Command::Tune {
            rounds,
            refine_factor,
            downscale,
            no_downscale,
            no_augment,
        } => {
            let seed = cfg.seed;
            let opts = cfg.tune.get_or_insert_with(|| {
                let mut o = TuneOptions::default();
                o.preprocess.seed = seed;
                o
            });
            if let Some(r) = rounds {
                opts.rounds = *r;
            }
            if let Some(f) = refine_factor {
                opts.refine_factor = *f;
            }
            if let Some(d) = downscale {
                opts.preprocess.downscale = Some(*d);
            }
            if *no_downscale {
                opts.preprocess.downscale = None;
            }
            if *no_augment {
                opts.preprocess.augmentations.clear();
            }
        }
        Command::Eval { counts, alpha, r2 } => {
            for (name, path) in counts {
                let p = if path.is_relative() {
                    cwd.join(path)
                } else {
                    path.clone()
                };
                cfg.eval.counts.insert(name.clone(), p);
            }
            if let Some(a) = alpha {
                cfg.eval.alpha = *a;
            }
            if let Some(r) = r2 {
                cfg.eval.r2 = *r;
            }
        }
        Command::Report { metrics, tune_result } => {
            if let Some(m) = metrics {
                cfg.metrics = Some(if m.is_relative() { cwd.join(m) } else { m.clone() });
            }
            for p in tune_result {
                cfg.tune_results
                    .push(if p.is_relative() { cwd.join(p) } else { p.clone() });
            }
        }
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<String, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    apply_inputs(&cli.inputs, &mut cfg)?;
    apply_command(&cli.command, &mut cfg)?;

    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    }

    if let Command::Validate { store } = &cli.command {
        return commands::validate(&cfg, store);
    }
    if let Command::Synth {
        out,
        images,
        size,
        interior_scales,
        render,
    } = &cli.command
    {
        let synth = larvacount::synthetic::SyntheticConfig {
            images: *images,
            sizes: vec![*size],
            interior_scales: interior_scales.clone(),
            seed: cfg.seed,
            ..Default::default()
        };
        return commands::synth(&synth, out, *render);
    }

    let name = cli.command.name();
    let id = cli
        .run_id
        .clone()
        .unwrap_or_else(|| default_run_id(&cli.run_root, cfg.seed));
    let mut run = RunDir::create(&cli.run_root, &id, name)?;
    let outcome = match &cli.command {
        Command::Split { .. } => commands::split(&cfg, &mut run),
        Command::Tile { .. } => commands::tile(&cfg, &mut run),
        Command::Count { .. } => commands::count(&cfg, &mut run),
        Command::Tune { .. } => commands::tune_cmd(&cfg, &mut run),
        Command::Eval { .. } => commands::eval(&cfg, &mut run),
        Command::Report { .. } => commands::report(&cfg, &mut run),
        Command::Validate { .. } | Command::Synth { .. } => unreachable!("handled above"),
    };
    let dir = run.dir.clone();
    let status = outcome
        .as_ref()
        .map(|_| ())
        .map_err(|f| Failure::new(f.code, anyhow::anyhow!("{f}")));
    if let Err(f) = &status {
        log::error!(target: run::FILE_ONLY, "{f}");
    }
    run.finish(&cfg, &status)?;
    outcome.map(|msg| format!("{msg}\nrun directory: {}", dir.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Warn,
        (false, 1) => LevelFilter::Info,
        (false, _) => LevelFilter::Debug,
    };
    init_logging(level);
    match execute(&cli) {
        Ok(msg) => {
            if !cli.quiet {
                println!("{msg}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
