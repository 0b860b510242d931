//! On-disk formats: tensor records, run configs, checkpoints, previews and tables.

mod bundle;
mod checkpoint;
mod config;
mod container;
mod emit;

pub use bundle::{load_dataset, save_dataset};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use config::{
    network_text, parse_network, CoilSection, EvaluationSection, NoiseSection, PhantomKind,
    PhantomSection, RunConfig,
};
pub use container::{read_tensor, write_tensor, StoredTensor, TensorData, MAGIC, VERSION};
pub use emit::{metric_report_csv, pgm_bytes, t_test_csv, train_log_csv, write_pgm, write_text};
