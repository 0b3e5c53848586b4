use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dcsr::correction::{correct_dataset, select_t, select_t1_t2};
use dcsr::datagen::build_advection_suite;
use dcsr::grid::io::{export_csv, load_dataset, save_dataset};
use dcsr::grid::restrict;
use dcsr::metrics::Metric;
use dcsr::noise::NoiseSchedule;
use dcsr::pipeline::{
    evaluate_dirs, run_dcsr, save_suite, superresolve, ExperimentConfig,
};
use dcsr::score::{load_checkpoint, save_checkpoint, train_cond, train_uncond};
use dcsr::sde::OdeTolerances;
use dcsr::seeds;
use dcsr::{Error, Result};

#[derive(Parser)]
#[command(name = "dcsr", about = "Diffusion-based correction and super-resolution for coarse simulation data", version)]
struct Cli {
    /// Worker threads for sample-parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark datasets and write them to a directory.
    Datagen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a score model (the unconditional corrector or one conditional
    /// super-resolution stage) and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// "uncond" or "cond".
        #[arg(long, default_value = "uncond")]
        kind: String,
        /// Super-resolution stage index for --kind cond (0 = coarsest step).
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search the correction times against the held-out reference.
    Search {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// "ipd" searches (t1, t2) independently; "bpd" ties t2 = t1.
        #[arg(long, default_value = "ipd")]
        mode: String,
        /// Output directory for the result JSON and grid CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Correct the biased coarse data at fixed times.
    Correct {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        t1: f64,
        #[arg(long)]
        t2: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one conditional super-resolution stage over a saved dataset.
    Superres {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// Directory holding the low-resolution dataset.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline end to end.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a prediction dataset against a reference.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Comma-separated metric names.
        #[arg(long, default_value = "tvd,rmse")]
        metrics: String,
        /// Optional CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Rebuild the benchmark from the config and return the coarse biased set and
/// the resolution-laddered high-fidelity splits.
struct Prepared {
    lf_coarse: dcsr::grid::Dataset,
    hf_train_levels: Vec<dcsr::grid::Dataset>,
    hf_test_levels: Vec<dcsr::grid::Dataset>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let resolutions = &cfg.data.resolutions;
    let fine = *resolutions.last().unwrap();
    let coarse = resolutions[0];
    let suite = build_advection_suite(
        &cfg.problem,
        fine,
        cfg.data.n_train,
        cfg.data.n_test,
        seeds::derive_seed(cfg.seed, &[0x64617461]),
    )?;
    let lf_fine = suite
        .lf_test
        .iter()
        .find(|(name, _)| *name == cfg.bias)
        .map(|(_, d)| d.clone())
        .ok_or_else(|| Error::Config(format!("unknown bias '{}'", cfg.bias)))?;
    let ladder = |d: &dcsr::grid::Dataset| -> Result<Vec<_>> {
        resolutions
            .iter()
            .map(|&r| {
                if r == fine {
                    Ok(d.clone())
                } else {
                    d.try_map(|f| restrict(f, fine / r))
                }
            })
            .collect()
    };
    Ok(Prepared {
        lf_coarse: lf_fine.try_map(|f| restrict(f, fine / coarse))?,
        hf_train_levels: ladder(&suite.hf_train)?,
        hf_test_levels: ladder(&suite.hf_test)?,
    })
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }

    match cli.command {
        Command::Datagen { cfg, out } => {
            let cfg = cfg.load()?;
            cfg.validate()?;
            let suite = build_advection_suite(
                &cfg.problem,
                *cfg.data.resolutions.last().unwrap(),
                cfg.data.n_train,
                cfg.data.n_test,
                seeds::derive_seed(cfg.seed, &[0x64617461]),
            )?;
            let written = save_suite(&suite, &out)?;
            for dir in written {
                println!("wrote {}", dir.display());
            }
        }
        Command::Train {
            cfg,
            kind,
            level,
            out,
        } => {
            let cfg = cfg.load()?;
            let prepared = prepare(&cfg)?;
            let model = match kind.as_str() {
                "uncond" => {
                    let mut tc = cfg.train.clone();
                    tc.seed = seeds::derive_seed(cfg.seed, &[0x756e63]);
                    let (m, log) = train_uncond(
                        &prepared.hf_train_levels[0],
                        &tc,
                        &cfg.arch,
                        NoiseSchedule::default(),
                    )?;
                    println!("final loss {:.6}", log.losses.last().unwrap());
                    m
                }
                "cond" => {
                    if level + 1 >= prepared.hf_train_levels.len() {
                        return Err(Error::LevelExceedsSchedule);
                    }
                    let mut tc = cfg.sr_train.clone().unwrap_or_else(|| cfg.train.clone());
                    tc.seed = seeds::derive_seed(cfg.seed, &[0x7372, level as u64]);
                    let (m, log) = train_cond(
                        &prepared.hf_train_levels[level],
                        &prepared.hf_train_levels[level + 1],
                        &tc,
                        cfg.sr_arch.as_ref().unwrap_or(&cfg.arch),
                        NoiseSchedule::new(cfg.sampling.sigma_max_base)?,
                    )?;
                    println!("final loss {:.6}", log.losses.last().unwrap());
                    m
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown kind '{other}', expected 'uncond' or 'cond'"
                    )))
                }
            };
            save_checkpoint(&model, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Search {
            cfg,
            model,
            mode,
            out,
        } => {
            let cfg = cfg.load()?;
            let prepared = prepare(&cfg)?;
            let model = load_checkpoint(&model)?;
            let search_cfg = cfg
                .search
                .to_config(seeds::derive_seed(cfg.seed, &[0x736561]))?;
            let result = match mode.as_str() {
                "ipd" => select_t1_t2(
                    &prepared.lf_coarse,
                    &prepared.hf_test_levels[0],
                    &model,
                    &search_cfg,
                )?,
                "bpd" => select_t(
                    &prepared.lf_coarse,
                    &prepared.hf_test_levels[0],
                    &model,
                    &search_cfg,
                )?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown mode '{other}', expected 'ipd' or 'bpd'"
                    )))
                }
            };
            std::fs::create_dir_all(&out)?;
            let json_path = out.join("search.json");
            std::fs::write(&json_path, serde_json::to_string_pretty(&result)?)?;
            let csv_path = out.join("search_grid.csv");
            result.write_csv(std::fs::File::create(&csv_path)?)?;
            println!(
                "t1* = {}, t2* = {}, metric = {}",
                result.t1_star, result.t2_star, result.metric_min
            );
        }
        Command::Correct {
            cfg,
            model,
            t1,
            t2,
            out,
        } => {
            let cfg = cfg.load()?;
            let prepared = prepare(&cfg)?;
            let model = load_checkpoint(&model)?;
            let (corrected, failed) = correct_dataset(
                &prepared.lf_coarse,
                &model,
                t1,
                t2,
                seeds::derive_seed(cfg.seed, &[0x636f72]),
                &OdeTolerances::default(),
            )?;
            save_dataset(&corrected, &out)?;
            export_csv(&corrected, &out.join("fields.csv"))?;
            if !failed.is_empty() {
                eprintln!("warning: {} samples failed and were passed through", failed.len());
            }
            println!("wrote {}", out.display());
        }
        Command::Superres {
            cfg,
            model,
            data,
            out,
        } => {
            let cfg = cfg.load()?;
            let model = load_checkpoint(&model)?;
            let low = load_dataset(&data)?;
            let up = superresolve(
                &model,
                &low,
                cfg.sampling.em_steps,
                seeds::derive_seed(cfg.seed, &[0x63617363]),
            )?;
            save_dataset(&up, &out)?;
            export_csv(&up, &out.join("fields.csv"))?;
            println!("wrote {}", out.display());
        }
        Command::Pipeline { cfg, out } => {
            let cfg = cfg.load()?;
            let report = run_dcsr(&cfg, &out)?;
            for (method, values) in &report.results {
                for (metric, value) in values {
                    println!("{method} {metric} {value:.6}");
                }
            }
            println!("report: {}", out.join("report.json").display());
        }
        Command::Evaluate {
            pred,
            reference,
            metrics,
            out,
        } => {
            let parsed: Vec<Metric> = metrics
                .split(',')
                .map(|m| m.trim().parse())
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate_dirs(&pred, &reference, &parsed)?;
            for (metric, value) in &report.values {
                println!("{metric} {value:.6}");
            }
            if let Some(path) = out {
                report.write_csv(&path)?;
            }
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Stage { source, .. } => exit_code(source),
        Error::OdeStepLimit
        | Error::OdeDiverged
        | Error::ScoreUndefinedAtZero
        | Error::TrainingDiverged { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
