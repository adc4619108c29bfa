//! Tensor files, dataset manifests, batch streams and checkpoint containers.

mod checkpoint;
mod manifest;
mod stream;
mod tensor_file;

pub use checkpoint::{Container, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use manifest::{
    mldc_export, presence_and_dominant, subset_fraction, subset_size, DatasetManifest, Exclusion, Role, Sample,
    SampleEntry, Split,
};
pub use stream::{BatchStream, MixState, MixedAuxSource, StreamState, TaggedBatch};
pub use tensor_file::{
    decode_tensor, encode_tensor, read_tensor, write_tensor, LabelTensor, StoredTensor, TENSOR_MAGIC, TENSOR_VERSION,
};
