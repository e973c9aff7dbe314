//! Flat `key = value` run configuration.
//!
//! Layers, lowest first: built-in defaults, a config file, `CORDGT_<KEY>`
//! environment variables, then `--set key=value` flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use cordgt_core::harness::{CommitOrder, PlantedSpec, SplitMode, SplitSpec, TrainConfig};
use cordgt_core::model::{AblationFlags, ScoreHead};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

pub type Settings = BTreeMap<String, String>;

/// Every recognised key with its default.
pub fn defaults() -> Settings {
    let t = TrainConfig::default();
    let m = &t.model;
    let p = PlantedSpec::default();
    let pairs: [(&str, String); 40] = [
        ("dataset", String::new()),
        ("bipartite", "false".into()),
        ("cache", String::new()),
        ("synth_nodes", p.nodes.to_string()),
        ("synth_partners", p.partners_per_node.to_string()),
        ("synth_high_pairs", p.high_pairs.to_string()),
        ("synth_ratio", p.ratio.to_string()),
        ("synth_background", p.background_rate.to_string()),
        ("synth_events", p.target_events.to_string()),
        ("synth_seed", "7".into()),
        ("layers", m.layers.to_string()),
        ("heads", m.heads.to_string()),
        ("hidden", m.hidden.to_string()),
        ("head_dim", m.head_dim.to_string()),
        ("ffn_mult", m.ffn_mult.to_string()),
        ("enc_half_dim", m.enc.half_dim.to_string()),
        ("enc_epsilon", m.enc.epsilon.to_string()),
        ("enc_td_width", m.enc.td_width.to_string()),
        ("enc_sd_width", m.enc.sd_width.to_string()),
        ("enc_hidden", m.enc.hidden.to_string()),
        ("joint", m.joint.to_string()),
        ("head", "mlp".into()),
        ("init_seed", m.init_seed.to_string()),
        ("flags", String::new()),
        ("alpha", t.alpha.to_string()),
        ("beta", t.beta.to_string()),
        ("fanouts", join(&t.fanouts)),
        ("batch_size", t.batch_size.to_string()),
        ("epochs", t.epochs.to_string()),
        ("patience", t.patience.to_string()),
        ("lr", t.lr.to_string()),
        ("seed", t.seed.to_string()),
        ("commit_order", "forward_then_commit".into()),
        ("mode", "transductive".into()),
        ("train_frac", t.split.train_frac.to_string()),
        ("val_frac", t.split.val_frac.to_string()),
        ("mask_frac", t.split.mask_frac.to_string()),
        ("split_seed", t.split.seed.to_string()),
        ("out", "runs/latest".into()),
        ("node_class", "false".into()),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Keys that fix the shape of a model's parameters.
pub const SHAPE_KEYS: [&str; 12] = [
    "layers",
    "heads",
    "hidden",
    "head_dim",
    "ffn_mult",
    "enc_half_dim",
    "enc_td_width",
    "enc_sd_width",
    "enc_hidden",
    "head",
    "flags",
    "joint",
];

fn check_key(s: &Settings, key: &str, origin: &str) -> Result<(), ConfigError> {
    if s.contains_key(key) {
        Ok(())
    } else {
        Err(bad(format!("unknown key `{key}` in {origin}")))
    }
}

pub fn parse_text(text: &str, origin: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("{origin}:{}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_assignment(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| bad(format!("`{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Merges the layers. `base` (for instance a checkpoint's saved settings)
/// sits between the defaults and the file.
pub fn resolve(
    base: Option<&Settings>,
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<Settings, ConfigError> {
    let mut s = defaults();
    if let Some(b) = base {
        for (k, v) in b {
            check_key(&s, k, "saved settings")?;
            s.insert(k.clone(), v.clone());
        }
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        let origin = path.display().to_string();
        for (k, v) in parse_text(&text, &origin)? {
            check_key(&s, &k, &origin)?;
            s.insert(k, v);
        }
    }
    let keys: Vec<String> = s.keys().cloned().collect();
    for k in keys {
        if let Ok(v) = std::env::var(format!("CORDGT_{}", k.to_uppercase())) {
            s.insert(k, v);
        }
    }
    for (k, v) in overrides {
        check_key(&s, k, "command line")?;
        s.insert(k.clone(), v.clone());
    }
    Ok(s)
}

pub fn render(s: &Settings) -> String {
    s.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        bipartite: bool,
        cache: Option<PathBuf>,
    },
    Planted {
        spec: PlantedSpec,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: DataSource,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub node_class: bool,
}

struct Reader<'a>(&'a Settings);

impl Reader<'_> {
    fn raw(&self, k: &str) -> &str {
        self.0.get(k).map(String::as_str).unwrap_or_default()
    }

    fn get<T: std::str::FromStr>(&self, k: &str) -> Result<T, ConfigError> {
        let v = self.raw(k);
        v.parse()
            .map_err(|_| bad(format!("`{k}`: cannot parse `{v}`")))
    }
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, ConfigError> {
        let r = Reader(s);
        let dataset = r.raw("dataset");
        let data = if dataset.is_empty() {
            DataSource::Planted {
                spec: PlantedSpec {
                    nodes: r.get("synth_nodes")?,
                    partners_per_node: r.get("synth_partners")?,
                    high_pairs: r.get("synth_high_pairs")?,
                    ratio: r.get("synth_ratio")?,
                    background_rate: r.get("synth_background")?,
                    target_events: r.get("synth_events")?,
                },
                seed: r.get("synth_seed")?,
            }
        } else {
            let path = PathBuf::from(dataset);
            if !path.exists() {
                return Err(bad(format!("dataset {} does not exist", path.display())));
            }
            let cache = r.raw("cache");
            DataSource::Csv {
                path,
                bipartite: r.get("bipartite")?,
                cache: (!cache.is_empty()).then(|| PathBuf::from(cache)),
            }
        };

        let mut t = TrainConfig::default();
        let m = &mut t.model;
        m.layers = r.get("layers")?;
        m.heads = r.get("heads")?;
        m.hidden = r.get("hidden")?;
        m.head_dim = r.get("head_dim")?;
        m.ffn_mult = r.get("ffn_mult")?;
        m.enc.half_dim = r.get("enc_half_dim")?;
        m.enc.epsilon = r.get("enc_epsilon")?;
        m.enc.td_width = r.get("enc_td_width")?;
        m.enc.sd_width = r.get("enc_sd_width")?;
        m.enc.hidden = r.get("enc_hidden")?;
        m.joint = r.get("joint")?;
        m.head = match r.raw("head") {
            "mlp" => ScoreHead::Mlp,
            "linear" => ScoreHead::Linear,
            other => {
                return Err(bad(format!(
                    "`head`: expected mlp or linear, got `{other}`"
                )))
            }
        };
        m.init_seed = r.get("init_seed")?;
        let mut flags = AblationFlags::default();
        for f in r
            .raw("flags")
            .split(',')
            .map(str::trim)
            .filter(|f| !f.is_empty())
        {
            flags.set(f, true).map_err(|e| bad(e.to_string()))?;
        }
        m.flags = flags;
        t.alpha = r.get("alpha")?;
        t.beta = r.get("beta")?;
        t.fanouts = r
            .raw("fanouts")
            .split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| bad(format!("`fanouts`: cannot parse `{x}`")))
            })
            .collect::<Result<_, _>>()?;
        t.batch_size = r.get("batch_size")?;
        t.epochs = r.get("epochs")?;
        t.patience = r.get("patience")?;
        t.lr = r.get("lr")?;
        t.seed = r.get("seed")?;
        t.commit_order = match r.raw("commit_order") {
            "forward_then_commit" => CommitOrder::ForwardThenCommit,
            "commit_before_forward" => CommitOrder::CommitBeforeForward,
            other => return Err(bad(format!("`commit_order`: unknown value `{other}`"))),
        };
        t.split = SplitSpec {
            train_frac: r.get("train_frac")?,
            val_frac: r.get("val_frac")?,
            mode: match r.raw("mode") {
                "transductive" => SplitMode::Transductive,
                "inductive" => SplitMode::Inductive,
                other => return Err(bad(format!("`mode`: unknown value `{other}`"))),
            },
            mask_frac: r.get("mask_frac")?,
            seed: r.get("split_seed")?,
        };
        t.validate().map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            data,
            train: t,
            out: PathBuf::from(r.raw("out")),
            node_class: r.get("node_class")?,
        })
    }
}
