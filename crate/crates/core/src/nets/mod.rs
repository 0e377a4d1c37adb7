//! Generator, discriminators and classifiers built from gated convolutions.
//!
//! All networks read feature batches shaped `(B, Q, N)`. Domain conditioning
//! is a `(B, K)` one-hot matrix appended to every convolution input.

mod classifier;
mod discriminator;
mod generator;
mod layers;

pub use classifier::{aggregate, Classifier, ClassifierOutput};
pub use discriminator::{MultiTaskDiscriminator, MultiTaskOutput, PatchDiscriminator, PatchOutput};
pub use generator::Generator;
pub use layers::one_hot;
