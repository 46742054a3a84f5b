//! File formats and on-disk layouts.

mod checkpoint;
mod dataset;
mod image;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION,
};
pub use dataset::{frame_file, list_samples, read_sample, read_stack, sample_dir, write_sample, EXPOSURES_FILE, GT_FILE};
pub use image::{decode_pfm, decode_ppm, encode_pfm, encode_ppm, read_pfm, read_ppm, write_pfm, write_ppm};
