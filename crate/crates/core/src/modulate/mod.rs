//! Conditioning mathematics and the toy conditioned denoiser.

pub mod checkpoint;
pub mod edm;
pub mod gradcheck;
pub mod layers;
pub mod lora;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint};
pub use edm::{add_noise, dsm_loss, edm_precondition, EdmSchedule, Preconditioning};
pub use layers::{group_norm, modulate};
pub use lora::{lora_fuse, LoraAdapter};
pub use model::{condition_input, decode_latent, encode_clip, Modulation, ToyConfig, ToyDenoiser};
pub use tensor::Tensor;
pub use train::{train_toy, TrainConfig, TrainOutcome, Weighting};
