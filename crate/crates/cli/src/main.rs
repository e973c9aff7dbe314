mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cordgt_core::event_store::{
    load_cache, read_jodie_csv, save_cache, CsvOptions, EventStore, InteractionHistory,
};
use cordgt_core::harness::{
    ablation_csv, collect_contributions, evaluate, node_classify, planted, run_ablation,
    standard_variants, train, MetricRecord, NodeClassConfig, Plan, TrainConfig,
};
use cordgt_core::model::{bucket_heatmap, heatmap_csv, CorDgt};
use cordgt_core::proximity::HopIndex;
use cordgt_core::sampler::sample_contextual;
use cordgt_core::{encoding::proximity_to, CoreError};
use cordgt_numerics::{NumericsError, ParamStore};
use serde_json::json;

use config::{ConfigError, DataSource, RunConfig, Settings};

const CHECKPOINT_FORMAT: &str = "cordgt-checkpoint";

#[derive(Parser)]
#[command(
    name = "cordgt",
    version,
    about = "Temporal link prediction on event logs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a single key; repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory (same as `--set out=...`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, ConfigError> {
        let mut v = self
            .sets
            .iter()
            .map(|s| config::parse_assignment(s))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(o) = &self.out {
            v.push(("out".into(), o.display().to_string()));
        }
        Ok(v)
    }

    fn resolve(&self, base: Option<&Settings>) -> Result<Settings, ConfigError> {
        config::resolve(base, self.config.as_deref(), &self.overrides()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, metrics and the resolved config.
    Train(Common),
    /// Score the validation or test split with a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["val", "test"])]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train the full model and each ablation variant; writes ablation.csv.
    Ablate {
        /// Comma-separated variants; `full` is the unablated model.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a planted-intensity event log as CSV.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Show a node's sampled context with distances toward a target pair.
    Inspect {
        #[arg(long)]
        node: u32,
        /// Prediction time on the dataset's own time axis.
        #[arg(long)]
        time: f64,
        /// Second node of the target pair (defaults to the node itself).
        #[arg(long)]
        target: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Export per-token score contributions and the TD heatmap of a
    /// linear-head checkpoint.
    Decompose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        /// Number of test links to decompose.
        #[arg(long, default_value_t = 400)]
        links: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn load_store(data: &DataSource) -> Result<EventStore> {
    match data {
        DataSource::Planted { spec, seed } => Ok(planted(spec, *seed)?.store()?),
        DataSource::Csv {
            path,
            bipartite,
            cache,
        } => {
            if let Some(c) = cache.as_ref().filter(|c| c.exists()) {
                return load_cache(File::open(c)?)
                    .with_context(|| format!("reading cache {}", c.display()));
            }
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let (raw, n) = read_jodie_csv(
                std::io::BufReader::new(file),
                CsvOptions {
                    bipartite: *bipartite,
                },
            )
            .with_context(|| format!("reading {}", path.display()))?;
            let store = EventStore::ingest(raw, n, None)?;
            if let Some(c) = cache {
                save_cache(&store, BufWriter::new(File::create(c)?))?;
            }
            Ok(store)
        }
    }
}

fn with_store_dims(cfg: &TrainConfig, store: &EventStore) -> TrainConfig {
    let mut cfg = cfg.clone();
    cfg.model.node_dim = store.node_dim();
    cfg.model.edge_dim = store.edge_dim();
    cfg
}

fn checkpoint_metadata(settings: &Settings) -> String {
    json!({
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "settings": settings,
    })
    .to_string()
}

fn load_checkpoint(path: &Path) -> Result<(ParamStore, Settings)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (params, meta) = ParamStore::load(std::io::BufReader::new(file))
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let meta: serde_json::Value = serde_json::from_str(&meta)
        .map_err(|e| NumericsError::Corrupt(format!("metadata: {e}")))?;
    if meta["format"] != CHECKPOINT_FORMAT {
        return Err(NumericsError::Corrupt("not a model checkpoint".into()).into());
    }
    let settings: Settings = serde_json::from_value(meta["settings"].clone())
        .map_err(|e| NumericsError::Corrupt(format!("settings: {e}")))?;
    Ok((params, settings))
}

/// Settings for a checkpoint-based command. Keys that fix parameter shapes
/// must agree with the checkpoint.
fn checkpoint_settings(common: &Common, saved: &Settings) -> Result<Settings> {
    let s = common.resolve(Some(saved))?;
    for k in config::SHAPE_KEYS {
        if s.get(k) != saved.get(k) {
            return Err(ConfigError(format!(
                "`{k}` is {:?} but the checkpoint was trained with {:?}",
                s[k], saved[k]
            ))
            .into());
        }
    }
    Ok(s)
}

fn restore(cfg: &TrainConfig, store: &EventStore, params: &ParamStore) -> Result<CorDgt> {
    let cfg = with_store_dims(cfg, store);
    CorDgt::with_params(cfg.model, params).map_err(|e| {
        anyhow::Error::new(ConfigError(format!(
            "checkpoint does not fit the configured model: {e}"
        )))
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(common: &Common) -> Result<()> {
    let settings = common.resolve(None)?;
    let run = RunConfig::from_settings(&settings)?;
    let store = load_store(&run.data)?;
    fs::create_dir_all(&run.out)?;
    write(&run.out.join("config.resolved"), &config::render(&settings))?;
    let metrics_path = run.out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    let mut io_err = None;
    let outcome = train(&store, &run.train, &mut |r: &MetricRecord| {
        if r.split == "val" {
            println!(
                "epoch {:>3}  val AP {:.4}  AUC {:.4}  ({} ms)",
                r.epoch, r.ap, r.auc, r.wall_ms
            );
        }
        if let Err(e) = writeln!(metrics, "{}", r.to_json()).and_then(|_| metrics.flush()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing metrics");
    }
    let cfg = with_store_dims(&run.train, &store);
    let test = evaluate(&outcome.model, &store, &outcome.plan.test, &cfg, cfg.seed)?;
    let rec = MetricRecord {
        epoch: outcome.best_epoch,
        split: "test".into(),
        ap: test.ap,
        auc: test.auc,
        loss: test.loss,
        wall_ms: 0,
    };
    writeln!(metrics, "{}", rec.to_json())?;
    metrics.flush()?;
    let ckpt = run.out.join("checkpoint.bin");
    outcome.model.params().save(
        BufWriter::new(File::create(&ckpt)?),
        &checkpoint_metadata(&settings),
    )?;
    println!(
        "best epoch {}  val AP {:.4}  test AP {:.4}  AUC {:.4}",
        outcome.best_epoch, outcome.best_val_ap, test.ap, test.auc
    );
    if run.node_class {
        let r = node_classify(
            &outcome.model,
            &store,
            &outcome.plan,
            &cfg,
            &NodeClassConfig::default(),
        )?;
        println!(
            "node classification AUC {:.4} ({} train / {} test)",
            r.auc, r.train_count, r.test_count
        );
    }
    println!("wrote {}", run.out.display());
    Ok(())
}

fn cmd_evaluate(checkpoint: &Path, split: &str, common: &Common) -> Result<()> {
    let (params, saved) = load_checkpoint(checkpoint)?;
    let settings = checkpoint_settings(common, &saved)?;
    let run = RunConfig::from_settings(&settings)?;
    let store = load_store(&run.data)?;
    let model = restore(&run.train, &store, &params)?;
    let plan = Plan::new(&store, &run.train.split)?;
    let set = if split == "val" {
        &plan.val
    } else {
        &plan.test
    };
    let cfg = with_store_dims(&run.train, &store);
    let r = evaluate(&model, &store, set, &cfg, cfg.seed)?;
    let out = json!({
        "split": split,
        "mode": settings["mode"],
        "ap": r.ap,
        "auc": r.auc,
        "loss": r.loss,
        "count": r.count,
    })
    .to_string();
    println!("{out}");
    fs::create_dir_all(&run.out)?;
    write(
        &run.out.join(format!("eval_{split}.json")),
        &format!("{out}\n"),
    )
}

fn cmd_ablate(variants: &[String], common: &Common) -> Result<()> {
    let settings = common.resolve(None)?;
    let run = RunConfig::from_settings(&settings)?;
    let store = load_store(&run.data)?;
    let names: Vec<&str> = if variants.is_empty() {
        standard_variants()
    } else {
        variants.iter().map(String::as_str).collect()
    };
    fs::create_dir_all(&run.out)?;
    let rows = run_ablation(&store, &run.train, &names, &mut |r| {
        println!(
            "{:<16} best epoch {:>3}  val AP {:.4}  test AP {:.4}  AUC {:.4}",
            r.variant, r.best_epoch, r.val_ap, r.test_ap, r.test_auc
        );
    })?;
    let path = run.out.join("ablation.csv");
    write(&path, &ablation_csv(&rows))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_synth(output: &Path, common: &Common) -> Result<()> {
    let settings = common.resolve(None)?;
    let run = RunConfig::from_settings(&settings)?;
    let DataSource::Planted { spec, seed } = run.data else {
        bail!(ConfigError("synth ignores `dataset`; unset it".into()));
    };
    let data = planted(&spec, seed)?;
    let mut w = BufWriter::new(File::create(output)?);
    writeln!(w, "src,dst,ts,state_label")?;
    for e in &data.events {
        writeln!(w, "{},{},{},{}", e.src, e.dst, e.ts, e.label)?;
    }
    w.flush()?;
    println!(
        "wrote {} events over {} nodes to {}",
        data.events.len(),
        spec.nodes,
        output.display()
    );
    Ok(())
}

fn cmd_inspect(node: u32, time: f64, target: Option<u32>, common: &Common) -> Result<()> {
    let settings = common.resolve(None)?;
    let run = RunConfig::from_settings(&settings)?;
    let store = load_store(&run.data)?;
    for n in std::iter::once(node).chain(target) {
        if n as usize >= store.num_nodes() {
            return Err(CoreError::UnknownNode(u64::from(n)).into());
        }
    }
    let t = time - store.time_offset();
    if t < 0.0 {
        bail!(ConfigError(format!("time {time} precedes the first event")));
    }
    println!(
        "{} nodes ({} active), {} events, duration {}",
        store.num_nodes(),
        store.active_nodes(),
        store.num_events(),
        store.duration()
    );
    println!(
        "average interaction intensity {:.4e}",
        store.average_intensity()
    );

    let cfg = &run.train;
    let td = cfg.td_params()?;
    let mut history = InteractionHistory::new();
    let cut = store.events().partition_point(|e| e.ts < t);
    history.commit(&store.events()[..cut])?;
    let v = target.unwrap_or(node);
    let ctx_u = sample_contextual(&store, node, t, &cfg.fanouts, cfg.strategy(), cfg.seed)?;
    let ctx_v = sample_contextual(&store, v, t, &cfg.fanouts, cfg.strategy(), cfg.seed ^ 1)?;
    let (hu, hv) = (
        HopIndex::new(&ctx_u, td.sd_inf),
        HopIndex::new(&ctx_v, td.sd_inf),
    );
    println!(
        "context of node {node} at {time}, target pair ({node}, {v}), fanouts {:?}",
        cfg.fanouts
    );
    println!(
        "{:>5} {:>4} {:>6} {:>8} {:>14} {:>10} {:>4} {:>10} {:>4}",
        "token", "hop", "parent", "node", "time", "td_u", "sd_u", "td_v", "sd_v"
    );
    for hop in 0..=cfg.fanouts.len() as u32 {
        let rows: Vec<_> = ctx_u
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, tok)| tok.hop == hop && !tok.is_pad)
            .collect();
        if hop > 0 {
            println!("hop {hop}:{}", if rows.is_empty() { " (none)" } else { "" });
        }
        for (i, tok) in rows {
            let pu = proximity_to(tok, &hu, &history, t, &td)?;
            let pv = proximity_to(tok, &hv, &history, t, &td)?;
            println!(
                "{:>5} {:>4} {:>6} {:>8} {:>14} {:>10.4} {:>4} {:>10.4} {:>4}",
                i,
                tok.hop,
                tok.parent,
                tok.node,
                tok.ts + store.time_offset(),
                pu.td,
                pu.sd,
                pv.td,
                pv.sd
            );
        }
    }
    let pads = ctx_u.tokens.iter().filter(|t| t.is_pad).count();
    println!("{pads} padding slots");
    Ok(())
}

fn cmd_decompose(checkpoint: &Path, bins: usize, links: usize, common: &Common) -> Result<()> {
    if bins == 0 {
        bail!(ConfigError("--bins must be at least 1".into()));
    }
    let (params, saved) = load_checkpoint(checkpoint)?;
    let settings = checkpoint_settings(common, &saved)?;
    let run = RunConfig::from_settings(&settings)?;
    let store = load_store(&run.data)?;
    let model = restore(&run.train, &store, &params)?;
    let plan = Plan::new(&store, &run.train.split)?;
    let cfg = with_store_dims(&run.train, &store);
    let contribs = collect_contributions(&model, &store, &plan.test, &cfg, links)?;
    fs::create_dir_all(&run.out)?;
    let mut rows = String::from("td_u,td_v,sd_u,sd_v,contribution\n");
    for c in &contribs {
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            c.td_u, c.td_v, c.sd_u, c.sd_v, c.contribution
        ));
    }
    write(&run.out.join("contributions.csv"), &rows)?;
    let cells = bucket_heatmap(&contribs, bins);
    write(&run.out.join("heatmap.csv"), &heatmap_csv(&cells))?;
    let at = |u: usize, v: usize| cells[u * bins + v].mean;
    println!(
        "{} token contributions; mean in lowest TD bucket {:.4}, highest {:.4}",
        contribs.len(),
        at(0, 0),
        at(bins - 1, bins - 1)
    );
    println!("wrote {}", run.out.display());
    Ok(())
}

/// 2 configuration, 3 data, 4 numeric abort.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::InvalidConfig(_)
                | CoreError::ConflictingFlags(_)
                | CoreError::HeadAbsent => 2,
                CoreError::Divergence { .. } => 4,
                _ => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Command::Train(c) => cmd_train(c),
        Command::Evaluate {
            checkpoint,
            split,
            common,
        } => cmd_evaluate(checkpoint, split, common),
        Command::Ablate { variants, common } => cmd_ablate(variants, common),
        Command::Synth { output, common } => cmd_synth(output, common),
        Command::Inspect {
            node,
            time,
            target,
            common,
        } => cmd_inspect(*node, *time, *target, common),
        Command::Decompose {
            checkpoint,
            bins,
            links,
            common,
        } => cmd_decompose(checkpoint, *bins, *links, common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
