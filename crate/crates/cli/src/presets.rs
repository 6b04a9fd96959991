//! Built-in desk-scale experiment configurations.
//!
//! Each preset is plain config text, so `preset <name>` output can be saved,
//! edited and fed back to `run`.

pub const NAMES: &[&str] = &["recall_vs_slots", "drift_recall", "train_compare", "retention_bound_grid", "throughput"];

const RECALL_VS_SLOTS: &str = r#"experiment = "recall_sweep"
output_dir = "results/recall_vs_slots"
seeds = [0, 1, 2, 3, 4]

[workload]
features = 100000
zipf_exponent = 1.05
events = 1000000

[eval]
top_k = 1000
memory_slots = [1536, 2048, 3072, 4096, 6144, 8192]
slot_choices = [4, 8, 16, 32]
"#;

const DRIFT_RECALL: &str = r#"experiment = "drift_recall"
output_dir = "results/drift_recall"
seeds = [0, 1, 2]

[workload]
features = 100000
zipf_exponent = 2.0
drift_window = 2000000
drift_fraction = 0.1

[sketch]
slots_per_bucket = 8
decay_coefficient = 0.5
decay_interval = 500000

[eval]
top_k = 100
memory_slots = [400]
windows = 20
"#;

const TRAIN_COMPARE: &str = r#"experiment = "train_compare"
output_dir = "results/train_compare"
seeds = [0, 1, 2, 3, 4]

[workload]
features = 100000
zipf_exponent = 1.1
weight_std = 2.0
noise_std = 0.5

[sketch]
hot_threshold = 100.0
medium_threshold = 1.0
decay_coefficient = 0.98

[store]
dim = 16
compression_ratio = 100.0
hot_percentage = 0.3
levels = 1

[trainer]
learning_rate = 2.0
batch_size = 64
steps = 10000
maintenance_interval = 100
importance = "frequency"
modes = ["tiered", "hash"]
trace_deviation = true
"#;

const RETENTION_BOUND_GRID: &str = r#"experiment = "theory_grid"
output_dir = "results/retention_bound_grid"
seeds = [0]

[eval]
gamma = [0.1, 0.3, 0.5, 0.7, 0.9]
z = [1.05, 1.1, 1.2, 1.5, 2.0]
buckets = [10, 100, 1000, 10000]
slot_choices = [2, 4, 8, 16, 32]
trials = 1000
eta_points = 2048
"#;

const THROUGHPUT: &str = r#"experiment = "throughput"
output_dir = "results/throughput"
seeds = [0]

[workload]
features = 1000000
zipf_exponent = 1.1
events = 2000000

[eval]
buckets = [4096]
slot_choices = [4, 8, 16, 32]
bench_repeats = 5
"#;

pub fn preset(name: &str) -> Option<&'static str> {
    Some(match name {
        "recall_vs_slots" => RECALL_VS_SLOTS,
        "drift_recall" => DRIFT_RECALL,
        "train_compare" => TRAIN_COMPARE,
        "retention_bound_grid" => RETENTION_BOUND_GRID,
        "throughput" => THROUGHPUT,
        _ => return None,
    })
}
