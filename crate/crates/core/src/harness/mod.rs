//! Splits, negative sampling, training, evaluation, node classification,
//! ablations and synthetic data.

mod ablation;
mod node_class;
mod split;
mod synth;
mod train;

pub use ablation::{ablation_csv, run_ablation, standard_variants, variant_config, AblationRow};
pub use node_class::{embed_events, node_classify, NodeClassConfig, NodeClassReport};
pub use split::{
    choose_masked_nodes, chronological_split, inductive_filter, split_times, FilteredSplits,
    SplitMode, SplitSpec, Splits,
};
pub use synth::{
    planted, poisson_arrivals, synth_generate, PairIntensity, PlantedData, PlantedSpec,
    SyntheticSpec,
};
pub use train::{
    batches, collect_contributions, evaluate, leak_probe, link_inputs, mix_seed, negative_sample,
    train, CommitOrder, EvalResult, EvalSet, LeakReport, MetricRecord, Plan, TrainConfig,
    TrainOutcome,
};
