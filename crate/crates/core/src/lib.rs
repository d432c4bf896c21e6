//! Mel-spectrogram augmentation for contrastive music embeddings, and tools
//! to measure how augmentation changes the local structure of the learned
//! embedding space.
//!
//! ```text
//! PCM -> melfront -> augment (TS -> PS -> EQ | RRC) -> encoder (NT-Xent)
//!     -> embedspace (track averages, exact kNN) -> locality / probe
//! ```

pub mod analysis;
pub mod audio;
pub mod augment;
pub mod corpus;
pub mod embedspace;
pub mod encoder;
pub mod error;
pub mod locality;
pub mod melfront;
pub mod probe;
pub mod rng;
pub mod spline;
pub mod tensor;

pub use error::{Error, Result};
pub use melfront::{MelConfig, MelSpectrogram};
