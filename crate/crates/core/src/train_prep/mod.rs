//! Training-side preparation: learning-rate schedule, document packing with
//! cross-document attention masks, and RoPE length-extension settings.

mod lr;
pub(crate) mod packing;
mod rope;

pub use lr::{lr_at, LrScheduleSpec};
pub use packing::{
    cross_doc_mask, pack_documents, read_packed, write_packed, CrossDocMask, DenseMask,
    PackedSequence, Span, MAX_DENSE_MASK_LEN, PACKED_MAGIC, PACKED_VERSION,
};
pub use rope::{rope_config, rope_rotate, rotation_angles, RopeConfig, RopeStage};
