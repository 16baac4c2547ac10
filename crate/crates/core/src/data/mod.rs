//! Recording I/O, preprocessing, synthetic data and dataset assembly.

mod dataset;
mod preprocess;
mod recording;
mod synth;

pub use dataset::{
    assemble_dataset, load_dataset_dir, prepare_bags, prepare_recording, recording_file_name,
    write_dataset, Bag, Dataset, PreparedBag, BURSTS_FILE, MANIFEST_FILE,
};
pub use preprocess::{grid, grid_length, grid_windows, preprocess};
pub use recording::{
    load_recording, load_recording_as, parse_file_name, write_recording, Recording, CHANNELS,
    DEFAULT_FS,
};
pub use synth::{subject_name, synth_generate, BurstAnnotation, ClassMode, SynthRecording, SynthSpec};
