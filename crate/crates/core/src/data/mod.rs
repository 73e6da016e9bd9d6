//! Dataset discovery, loading, splitting and augmentation.

mod augment;
mod discover;
mod sample;
mod split;

pub use augment::{augment, AugmentationPolicy};
pub use discover::{discover_pairs, Discovery, Pair, Reject};
pub use sample::{load_mask, load_sample, Label, Sample};
pub(crate) use sample::{image_tensor, open_gray};
pub use split::{split, split_indices, train_count, SplitSpec};
