pub mod manifest;
pub mod modelpack;
pub mod tensor;

pub use manifest::{load_manifest, write_manifest, GalleryRecord, SampleRecord};
pub use modelpack::{decode_model_pack, encode_model_pack, load_model, save_model};
pub use tensor::{read_tensor, write_tensor, Tensor};
