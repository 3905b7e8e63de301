//! Keypoint and feature ingestion, clip sampling, synthetic data and batching.

mod batch;
mod clips;
mod manifest;
mod pose;
mod synth;
pub mod topology;

pub use batch::{load_batch, load_sample, Batch, LoadOptions, LoadedSample, MAX_CLIPS, MAX_WORDS};
pub use clips::{plan_clips, ClipPlan};
pub use manifest::{Manifest, SampleEntry, MANIFEST_FILE, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
pub use pose::{filter_frames, PoseSequence, CLIP_LEN, DEFAULT_MIN_CONF};
pub use synth::{generate_sample, synth_dataset, GeneratedSample, Prototypes, SyntheticSpec, RGB_DIM};
pub use topology::{Group, GroupGraph, NUM_KEYPOINTS};
