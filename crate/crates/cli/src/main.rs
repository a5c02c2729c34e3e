#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod stanza;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use blockwm::dataset::{validate_split, Dataset, GenerateConfig};
use blockwm::env::{DynamicsMode, Vocabulary};
use blockwm::metrics::{write_depth_curve, MetricReport};
use blockwm::planner::{latent_depth_curve, oracle_episode, rollout_downstream_eval, OracleModel};
use blockwm::splits::{make_split, realizable_compounds, Side};
use blockwm::training::{
    evaluate, load_autoencoder_store, load_world_model, save_autoencoder, save_world_model, train_autoencoder,
    train_world_model, TrainConfig,
};
use blockwm::transition::Variant;
use clap::{Parser, Subcommand, ValueEnum};

use stanza::Stanza;

#[derive(Parser)]
#[command(name = "blockwm", version, about = "Block-pushing world-model lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Train,
    Eval,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one side of a seeded compositional split.
    GenData {
        #[arg(long)]
        mode: DynamicsMode,
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long, default_value_t = 5)]
        grid: usize,
        #[arg(long, default_value_t = 300)]
        trajectories: usize,
        #[arg(long, default_value_t = 32)]
        length: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, value_enum, default_value = "train")]
        side: SideArg,
        #[arg(long, default_value_t = 0.2)]
        eval_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that two datasets realize disjoint compounds over the same atoms.
    ValidateSplit {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
    },
    /// Warm-start the slot autoencoder, one checkpoint per seed.
    TrainAe {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/ae")]
        out: PathBuf,
    },
    /// Train a transition variant end to end, one checkpoint per seed.
    TrainWm {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        /// Directory of `ae_seed<N>.ckpt` files; trained in place when absent.
        #[arg(long)]
        ae: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `runs/<variant>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score world-model checkpoints; writes a metric CSV.
    Eval {
        /// A run directory from `train-wm` or a single checkpoint.
        #[arg(long, default_value = "runs/cosmos")]
        run: PathBuf,
        /// Defaults to the run's configured eval data.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        max_transitions: Option<usize>,
        /// Defaults to `<run>/metrics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy-planning depth curve of a checkpoint or of the environment.
    Plan {
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 8)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect metric and depth CSVs into the two figure inputs.
    ExportFiguresData {
        /// Files or directories to scan for `metrics*.csv` and `depth*.csv`.
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status for a failed check, as opposed to an error.
struct Invalid;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Invalid)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<blockwm::error::Error>()
                .is_some_and(|e| matches!(e, blockwm::error::Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    let cfg = match path {
        Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .map_err(|e| blockwm::error::Error::Config(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    Ok(cfg)
}

/// Applies flag overrides and checks the result before anything is written.
fn resolve(mut cfg: TrainConfig, train: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<TrainConfig> {
    if train.is_some() {
        cfg.train_data = train;
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    if cfg.train_data.is_none() {
        return Err(blockwm::error::Error::Config("no training data: pass --train or set train_data".into()).into());
    }
    Ok(cfg)
}

fn read_dataset(p: &Path) -> anyhow::Result<Dataset> {
    Dataset::read(p).with_context(|| format!("reading dataset {}", p.display()))
}

fn run(cmd: Command) -> anyhow::Result<Result<(), Invalid>> {
    match cmd {
        Command::GenData {
            mode,
            objects,
            grid,
            trajectories,
            length,
            image_size,
            side,
            eval_fraction,
            seed,
            out,
        } => {
            let vocab = Vocabulary {
                grid: (grid, grid),
                ..Vocabulary::default()
            };
            let side = match side {
                SideArg::Train => Side::Train,
                SideArg::Eval => Side::Eval,
            };
            let cfg = GenerateConfig {
                vocab,
                mode,
                k: objects,
                image_size,
                n_trajectories: trajectories,
                length,
                seed,
            };
            let plan = make_split(&realizable_compounds(&cfg.vocab, objects, mode)?, eval_fraction, seed)?;
            let ds = Dataset::generate(&plan, side, &cfg)?;
            ds.write(&out)?;
            println!(
                "{} {} trajectories ({} compounds) -> {}",
                mode.name(),
                ds.trajectories.len(),
                ds.manifest.compounds.len(),
                out.display()
            );
            Stanza::new("gen-data", serde_json::to_value(&cfg)?, vec![seed]).write(&out)?;
        }
        Command::ValidateSplit { train, eval } => {
            let (tr, ev) = (read_dataset(&train)?, read_dataset(&eval)?);
            let report = validate_split(&tr, &ev)?;
            print!("{}", report.summary(&tr.manifest.vocab));
            if !report.passed {
                return Ok(Err(Invalid));
            }
        }
        Command::TrainAe { config, train, seed, out } => {
            let cfg = resolve(load_config(config.as_deref())?, train, seed)?;
            let data_path = cfg.train_data.clone().expect("resolved");
            let ds = read_dataset(&data_path)?;
            fs::create_dir_all(&out)?;
            for &s in &cfg.seeds {
                let run = train_autoencoder(&ds, &cfg, s)?;
                save_autoencoder(&out.join(format!("ae_seed{s}.ckpt")), &run, &[s])?;
                run.log.write_csv(&out.join(format!("ae_log_seed{s}.csv")))?;
                let last = run.log.rows.last().map_or(f64::NAN, |r| r.ae_mse);
                println!("seed {s}: {} epochs, last AE-MSE {last:.4e}", run.log.rows.len());
            }
            let mut st = Stanza::new("train-ae", serde_json::to_value(&cfg)?, cfg.seeds.clone());
            st.input(&data_path)?;
            st.write(&out)?;
        }
        Command::TrainWm {
            variant,
            config,
            train,
            ae,
            seed,
            out,
        } => {
            let mut cfg = resolve(load_config(config.as_deref())?, train, seed)?;
            cfg.variant = variant;
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(variant.name()));
            let data_path = cfg.train_data.clone().expect("resolved");
            let ds = read_dataset(&data_path)?;
            if let Some(dir) = &ae {
                for s in &cfg.seeds {
                    let p = dir.join(format!("ae_seed{s}.ckpt"));
                    if !p.is_file() {
                        bail!(blockwm::error::Error::Config(format!("missing {}", p.display())));
                    }
                }
            }
            fs::create_dir_all(&out)?;
            let mut st = Stanza::new("train-wm", serde_json::to_value(&cfg)?, cfg.seeds.clone());
            st.input(&data_path)?;
            for &s in &cfg.seeds {
                let ae_store = match &ae {
                    Some(dir) => {
                        let p = dir.join(format!("ae_seed{s}.ckpt"));
                        st.input(&p)?;
                        load_autoencoder_store(&p)?
                    }
                    None => {
                        let run = train_autoencoder(&ds, &cfg, s)?;
                        save_autoencoder(&out.join(format!("ae_seed{s}.ckpt")), &run, &[s])?;
                        run.log.write_csv(&out.join(format!("ae_log_seed{s}.csv")))?;
                        run.store
                    }
                };
                let run = train_world_model(&ds, &ae_store, &cfg, s)?;
                save_world_model(&out.join(format!("wm_{}_seed{s}.ckpt", variant.name())), &run, &[s])?;
                run.log.write_csv(&out.join(format!("wm_log_seed{s}.csv")))?;
                let last = run.log.rows.last();
                println!(
                    "{} seed {s}: {} epochs, last loss {:.4e}",
                    variant.name(),
                    run.log.rows.len(),
                    last.map_or(f64::NAN, |r| r.loss)
                );
            }
            st.write(&out)?;
        }
        Command::Eval {
            run,
            data,
            max_transitions,
            out,
        } => {
            let (dir, checkpoints) = if run.is_dir() {
                let mut v: Vec<PathBuf> = fs::read_dir(&run)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("wm_") && n.ends_with(".ckpt"))
                    })
                    .collect();
                v.sort();
                (run.clone(), v)
            } else {
                (run.parent().map(Path::to_path_buf).unwrap_or_default(), vec![run.clone()])
            };
            if checkpoints.is_empty() {
                bail!(blockwm::error::Error::Config(format!("no world-model checkpoints in {}", run.display())));
            }
            let data = match data {
                Some(d) => d,
                None => Stanza::read(&dir)
                    .ok()
                    .and_then(|s| s.config.get("eval_data").and_then(|v| v.as_str()).map(PathBuf::from))
                    .ok_or_else(|| blockwm::error::Error::Config("no eval data: pass --data".into()))?,
            };
            let ds = read_dataset(&data)?;
            let out = out.unwrap_or_else(|| dir.join("metrics.csv"));
            let mut metrics = MetricReport::default();
            let mut st = Stanza::new("eval", serde_json::json!({ "max_transitions": max_transitions }), Vec::new());
            st.input(&data)?;
            for p in &checkpoints {
                let (store, model, seeds) = load_world_model(p)?;
                let seed = seeds.first().copied().unwrap_or(0);
                let e = evaluate(&model, &store, &ds, max_transitions)?;
                println!(
                    "{} seed {seed}: mse {:.4e} ae_mse {:.4e} mrr {:.3} eq_mrr {:.3}",
                    model.variant().name(),
                    e.mse,
                    e.ae_mse,
                    e.mrr,
                    e.eq_mrr
                );
                metrics.rows.extend(e.report(model.variant().name(), seed, ds.hash())?.rows);
                st.input(p)?;
                st.seeds.push(seed);
            }
            metrics.write_csv(&out)?;
            st.write(out.parent().unwrap_or(Path::new(".")))?;
        }
        Command::Plan {
            checkpoint,
            oracle,
            data,
            episodes,
            depth,
            out,
        } => {
            let ds = read_dataset(&data)?;
            let n = episodes.min(ds.trajectories.len());
            let mut st = Stanza::new("plan", serde_json::json!({ "episodes": n, "depth": depth, "oracle": oracle }), Vec::new());
            st.input(&data)?;
            let (curve, name, seed) = if oracle {
                let eps = ds.trajectories[..n]
                    .iter()
                    .map(|t| oracle_episode(t, depth))
                    .collect::<blockwm::error::Result<Vec<_>>>()?;
                let m = OracleModel { mode: ds.manifest.mode };
                (rollout_downstream_eval(&m, &eps, depth)?, "oracle".to_string(), 0)
            } else {
                let p = checkpoint.expect("clap enforces one of the two");
                st.input(&p)?;
                let (store, model, seeds) = load_world_model(&p)?;
                let c = latent_depth_curve(&model, &store, &ds, n, depth)?;
                (c, model.variant().name().to_string(), seeds.first().copied().unwrap_or(0))
            };
            st.seeds.push(seed);
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_depth_curve(&out, &curve.mean_l1, &name, seed)?;
            for (d, v) in curve.mean_l1.iter().enumerate() {
                println!("depth {d}: {v:.3}");
            }
            st.write(out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")))?;
        }
        Command::ExportFiguresData { inputs, out } => {
            let files = stanza::collect_csvs(&inputs)?;
            let (metrics, depth) = stanza::merge(&files)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("metrics.csv"), metrics)?;
            fs::write(out.join("depth_curves.csv"), depth)?;
            println!("{} files -> {}", files.len(), out.display());
            let mut st = Stanza::new("export-figures-data", serde_json::json!({}), Vec::new());
            for f in &files {
                st.input(f)?;
            }
            st.write(&out)?;
        }
    }
    Ok(Ok(()))
}
