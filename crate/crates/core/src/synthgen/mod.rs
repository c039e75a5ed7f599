//! Toy generator tails and procedural reals for desk-scale experiments.
//!
//! A fake is made from a real image by box-downsampling it into a latent and
//! decoding it back with seeded up-sampling + convolution stages, so each
//! real/fake pair shares content and differs only in how the pixels were
//! produced.

mod corpus;
mod decoder;
mod real;

pub use corpus::{
    build_corpus, build_source, read_manifests, regenerate, CorpusConfig, Manifest, RealSource,
    SourceConfig, MANIFEST_FILE,
};
pub use decoder::{generate_fake, make_decoder, Decoder, DecoderSpec, UpsampleKind};
pub use real::{procedural_real, MIN_REAL_SIZE};
