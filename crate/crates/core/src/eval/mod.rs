//! Copying-task faithfulness scoring and decomposition error analysis.

pub mod copy_task;
pub mod faithfulness;
pub mod metrics;
pub mod sweep;

pub use copy_task::{extract_copy_block, gen_copy_batch, gold_mask, CopyInstance, GoldMask, ReservedIds};
pub use faithfulness::{evaluate_copy, score_block, select_best_layer, BlockScores, FaithfulnessReport, Metric, SampleScores, PROTOCOL};
pub use metrics::{auc, average_precision, recall_at_k};
pub use sweep::{approx_error_sweep, LayerBucket, SweepTable};
