//! Trains and evaluates model variants that each switch one component off.

use serde::Serialize;

use super::train::{evaluate, train, TrainConfig};
use crate::error::Result;
use crate::event_store::EventStore;
use crate::model::AblationFlags;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub best_epoch: usize,
    pub val_ap: f64,
    pub test_ap: f64,
    pub test_auc: f64,
}

/// `"full"` trains the configuration as given; any other name adds that
/// ablation flag. All variants share seeds and splits.
pub fn variant_config(base: &TrainConfig, variant: &str) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    if variant != "full" {
        cfg.model.flags.set(variant, true)?;
    }
    cfg.model.flags.validate()?;
    Ok(cfg)
}

pub fn run_ablation(
    store: &EventStore,
    base: &TrainConfig,
    variants: &[&str],
    on_row: &mut dyn FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    // reject bad names before spending any training time
    let cfgs = variants
        .iter()
        .map(|v| variant_config(base, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(variants.len());
    for (name, cfg) in variants.iter().zip(cfgs) {
        let out = train(store, &cfg, &mut |_| {})?;
        let test = evaluate(&out.model, store, &out.plan.test, &cfg, cfg.seed)?;
        let row = AblationRow {
            variant: name.to_string(),
            best_epoch: out.best_epoch,
            val_ap: out.best_val_ap,
            test_ap: test.ap,
            test_auc: test.auc,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// All single-flag variants preceded by the full model.
pub fn standard_variants() -> Vec<&'static str> {
    std::iter::once("full")
        .chain(AblationFlags::NAMES)
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,best_epoch,val_ap,test_ap,test_auc\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            r.variant, r.best_epoch, r.val_ap, r.test_ap, r.test_auc
        ));
    }
    s
}
