//! The BFS-retrieval network: architecture per the published design,
//! CPU-scale training, checkpointing, and long-fiber window-stitched
//! inference.

pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use infer::{infer_long, infer_long_with_stride};
pub use model::{build_model, Model};
pub use train::{history_csv, train, validation_mse, EpochStats, LrSchedule, TrainHyper};
