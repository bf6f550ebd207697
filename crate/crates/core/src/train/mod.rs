//! Adam, the crop and split pipeline, and the training loop.

mod adam;
mod data;
mod fit;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use data::{
    crop_at, parse_manifest, random_corner, random_crop, split_dataset, DatasetEntry, DatasetIndex,
    ManifestRow, Split, MANIFEST_HEADER,
};
pub use fit::{
    fit, fit_pairs, format_loss_log, train_step, write_loss_log, EpochLog, TrainConfig,
    LOSS_LOG_HEADER,
};
