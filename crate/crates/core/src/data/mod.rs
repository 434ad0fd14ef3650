//! Synthetic scenes, file formats and dataset handling.

pub mod checkpoint;
pub mod dataset;
pub mod png;
pub mod prefetch;
pub mod synth;
pub mod uvm;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{dataset_index, split_of, PairRecord, Split};
pub use png::{read_png, write_png};
pub use prefetch::Prefetcher;
pub use synth::{generate_pair, ScenePair, SceneConfig};
pub use uvm::{read_uvm, write_uvm};
