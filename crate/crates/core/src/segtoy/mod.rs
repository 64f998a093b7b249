//! Toy segmentation testbed: procedural dataset with a color-domain shift,
//! a small segmenter with an optional plugged feature generator, training,
//! and mIoU evaluation.

mod dataset;
mod eval;
mod model;
mod train;

pub use dataset::{
    gen_toy_dataset, gen_toy_dataset_sized, ColorShift, DatasetManifest, Domain, DomainDescriptor, ToyDataset,
    DEFAULT_CLASSES, DEFAULT_SIZE,
};
pub use model::{GenPosition, Segmenter, SegmenterConfig};
pub use eval::{evaluate_miou, miou_from_maps, predict, Confusion, MiouReport};
pub use train::{train_segmenter, write_seg_log, SegLogRow, SegTrainConfig, SegTrainLog};
